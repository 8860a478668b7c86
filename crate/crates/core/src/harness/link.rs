//! One direction of a simulated GPRS path: latency, jitter, loss, outage
//! windows and scripted bursts of send failures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start_ms: Millis,
    /// Exclusive.
    pub end_ms: Millis,
}

impl Window {
    pub fn contains(&self, t: Millis) -> bool {
        (self.start_ms..self.end_ms).contains(&t)
    }
}

/// The first `count` sends at or after `at_ms` fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailBurst {
    pub at_ms: Millis,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub latency_ms: Millis,
    /// Uniform extra delay in `0..=jitter_ms`.
    pub jitter_ms: Millis,
    pub drop_prob: f64,
    pub outages: Vec<Window>,
    pub fail_bursts: Vec<FailBurst>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            latency_ms: 150,
            jitter_ms: 0,
            drop_prob: 0.0,
            outages: Vec::new(),
            fail_bursts: Vec::new(),
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(format!("drop_prob must be within [0, 1], got {}", self.drop_prob));
        }
        if let Some(w) = self.outages.iter().find(|w| w.end_ms <= w.start_ms) {
            return Err(format!("outage window {}..{} is empty", w.start_ms, w.end_ms));
        }
        Ok(())
    }

    /// No loss, outage or failure is ever injected.
    pub fn is_clean(&self) -> bool {
        self.drop_prob == 0.0 && self.outages.is_empty() && self.fail_bursts.is_empty()
    }
}

/// Counters for one direction.
///
/// `sent = delivered + dropped + in_flight` holds at all times; `refused`
/// counts attempts the sender saw fail, which never enter the link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub refused: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl LinkStats {
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.dropped + self.in_flight
    }

    pub fn merge(&mut self, o: &LinkStats) {
        self.refused += o.refused;
        self.sent += o.sent;
        self.delivered += o.delivered;
        self.dropped += o.dropped;
        self.in_flight += o.in_flight;
    }
}

/// Progress of one scripted burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BurstProgress {
    pub at_ms: Millis,
    pub count: u32,
    pub consumed: u32,
    /// Time of the last failure the burst caused.
    pub ended_at: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Outage,
    Burst,
    Loss,
}

#[derive(Debug, Clone)]
pub struct Link {
    cfg: LinkConfig,
    bursts: Vec<BurstProgress>,
    stats: LinkStats,
}

impl Link {
    pub fn new(cfg: LinkConfig) -> Self {
        let mut bursts: Vec<BurstProgress> = cfg
            .fail_bursts
            .iter()
            .map(|b| BurstProgress {
                at_ms: b.at_ms,
                count: b.count,
                consumed: 0,
                ended_at: None,
            })
            .collect();
        bursts.sort_by_key(|b| b.at_ms);
        Self {
            cfg,
            bursts,
            stats: LinkStats::default(),
        }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn bursts(&self) -> &[BurstProgress] {
        &self.bursts
    }

    pub fn in_outage(&self, t: Millis) -> bool {
        self.cfg.outages.iter().any(|w| w.contains(t))
    }

    /// Decides the fate of a frame leaving at `t`. Burst budget is only
    /// consumed by frames that would otherwise pass an outage.
    pub fn judge<R: Rng>(&mut self, t: Millis, rng: &mut R) -> Verdict {
        if self.in_outage(t) {
            return Verdict::Outage;
        }
        if let Some(b) = self.bursts.iter_mut().find(|b| b.at_ms <= t && b.consumed < b.count) {
            b.consumed += 1;
            b.ended_at = Some(t);
            return Verdict::Burst;
        }
        if self.cfg.drop_prob > 0.0 && rng.random::<f64>() < self.cfg.drop_prob {
            return Verdict::Loss;
        }
        Verdict::Pass
    }

    /// Arrival time of a frame that left at `departs`.
    pub fn arrival<R: Rng>(&self, departs: Millis, rng: &mut R) -> Millis {
        let jitter = if self.cfg.jitter_ms > 0 {
            rng.random_range(0..=self.cfg.jitter_ms)
        } else {
            0
        };
        departs + self.cfg.latency_ms + jitter
    }

    pub fn record_refused(&mut self) {
        self.stats.refused += 1;
    }

    pub fn record_sent(&mut self) {
        self.stats.sent += 1;
        self.stats.in_flight += 1;
    }

    /// A frame left the link: delivered, or discarded on arrival.
    pub fn record_arrival(&mut self, delivered: bool) {
        self.stats.in_flight -= 1;
        if delivered {
            self.stats.delivered += 1;
        } else {
            self.stats.dropped += 1;
        }
    }

    /// A frame lost silently on the way.
    pub fn record_lost(&mut self) {
        self.stats.sent += 1;
        self.stats.dropped += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bursts_fail_the_next_count_sends() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Link::new(LinkConfig {
            fail_bursts: vec![FailBurst { at_ms: 100, count: 2 }],
            ..Default::default()
        });
        assert_eq!(l.judge(99, &mut rng), Verdict::Pass);
        assert_eq!(l.judge(100, &mut rng), Verdict::Burst);
        assert_eq!(l.judge(500, &mut rng), Verdict::Burst);
        assert_eq!(l.judge(501, &mut rng), Verdict::Pass);
        assert_eq!(l.bursts()[0].ended_at, Some(500));
    }

    #[test]
    fn outage_window_is_half_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Link::new(LinkConfig {
            outages: vec![Window { start_ms: 10, end_ms: 20 }],
            ..Default::default()
        });
        assert_eq!(l.judge(10, &mut rng), Verdict::Outage);
        assert_eq!(l.judge(19, &mut rng), Verdict::Outage);
        assert_eq!(l.judge(20, &mut rng), Verdict::Pass);
    }

    #[test]
    fn loss_rate_is_roughly_drop_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut l = Link::new(LinkConfig { drop_prob: 0.25, ..Default::default() });
        let lost = (0..10_000).filter(|&t| l.judge(t, &mut rng) == Verdict::Loss).count();
        assert!((2300..2700).contains(&lost), "{lost}");
    }

    #[test]
    fn conservation() {
        let mut l = Link::new(LinkConfig::default());
        l.record_sent();
        l.record_sent();
        l.record_lost();
        assert!(l.stats().conserved());
        l.record_arrival(true);
        l.record_arrival(false);
        assert!(l.stats().conserved());
        assert_eq!(l.stats().in_flight, 0);
    }

    #[test]
    fn jitter_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Link::new(LinkConfig { jitter_ms: 20, ..Default::default() });
        for _ in 0..100 {
            let a = l.arrival(1000, &mut rng);
            assert!((1150..=1170).contains(&a));
        }
    }

    #[test]
    fn validation() {
        assert!(LinkConfig { drop_prob: 1.5, ..Default::default() }.validate().is_err());
        let w = vec![Window { start_ms: 5, end_ms: 5 }];
        assert!(LinkConfig { outages: w, ..Default::default() }.validate().is_err());
    }
}
