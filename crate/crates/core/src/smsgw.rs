//! Simulated SMS channel: store-and-forward with a fixed delivery latency,
//! per-address mailboxes and scripted user agents.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::protocol::SmsText;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmsConfig {
    pub latency_ms: Millis,
}

impl Default for SmsConfig {
    fn default() -> Self {
        Self { latency_ms: 3000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SmsMessage {
    pub id: u64,
    pub from: String,
    pub to: String,
    pub text: SmsText,
    pub sent_at: Millis,
    pub delivered_at: Millis,
}

/// A user that sends scripted texts to one terminal.
#[derive(Debug, Clone)]
pub struct UserAgent {
    pub phone: String,
    pub te_phone: String,
    script: VecDeque<(Millis, String)>,
}

impl UserAgent {
    /// `script` entries are `(send_at, text)`; they are sorted by time.
    pub fn new(phone: impl Into<String>, te_phone: impl Into<String>, mut script: Vec<(Millis, String)>) -> Self {
        script.sort_by_key(|(t, _)| *t);
        Self {
            phone: phone.into(),
            te_phone: te_phone.into(),
            script: script.into(),
        }
    }

    fn next_at(&self) -> Option<Millis> {
        self.script.front().map(|(t, _)| *t)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SmsStats {
    pub submitted: u64,
    pub delivered: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SmsGateway {
    cfg: SmsConfig,
    in_flight: BTreeMap<(Millis, u64), SmsMessage>,
    mailboxes: BTreeMap<String, Vec<SmsMessage>>,
    agents: Vec<UserAgent>,
    next_id: u64,
    stats: SmsStats,
}

impl SmsGateway {
    pub fn new(cfg: SmsConfig) -> Self {
        Self {
            cfg,
            next_id: 1,
            ..Default::default()
        }
    }

    pub fn add_agent(&mut self, agent: UserAgent) {
        self.agents.push(agent);
    }

    pub fn stats(&self) -> SmsStats {
        self.stats
    }

    pub fn submit(&mut self, from: &str, to: &str, text: SmsText, now: Millis) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let delivered_at = now + self.cfg.latency_ms;
        self.in_flight.insert(
            (delivered_at, id),
            SmsMessage {
                id,
                from: from.to_string(),
                to: to.to_string(),
                text,
                sent_at: now,
                delivered_at,
            },
        );
        self.stats.submitted += 1;
        id
    }

    /// Submits every scripted text due by `now`. Texts outside the SMS
    /// alphabet or length limit are counted and skipped.
    pub fn drive_agents(&mut self, now: Millis) -> Vec<u64> {
        let mut due = Vec::new();
        for a in &mut self.agents {
            while a.next_at().is_some_and(|t| t <= now) {
                let (t, text) = a.script.pop_front().expect("peeked");
                due.push((t, a.phone.clone(), a.te_phone.clone(), text));
            }
        }
        due.sort_by_key(|(t, ..)| *t);
        let mut ids = Vec::new();
        for (t, from, to, text) in due {
            match SmsText::new(text) {
                Ok(text) => ids.push(self.submit(&from, &to, text, t)),
                Err(_) => self.stats.rejected += 1,
            }
        }
        ids
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        let agent = self.agents.iter().filter_map(UserAgent::next_at).min();
        let flight = self.in_flight.keys().next().map(|(t, _)| *t);
        agent.into_iter().chain(flight).min()
    }

    /// Moves every message due by `now` into its recipient's mailbox and
    /// returns them in delivery order.
    pub fn deliver_due(&mut self, now: Millis) -> Vec<SmsMessage> {
        let mut out = Vec::new();
        while let Some(entry) = self.in_flight.first_entry() {
            if entry.key().0 > now {
                break;
            }
            let msg = entry.remove();
            self.mailboxes.entry(msg.to.clone()).or_default().push(msg.clone());
            self.stats.delivered += 1;
            out.push(msg);
        }
        out
    }

    pub fn mailbox(&self, addr: &str) -> &[SmsMessage] {
        self.mailboxes.get(addr).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn mailboxes(&self) -> &BTreeMap<String, Vec<SmsMessage>> {
        &self.mailboxes
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(s: &str) -> SmsText {
        SmsText::new(s).unwrap()
    }

    #[test]
    fn delivers_after_latency() {
        let mut gw = SmsGateway::new(SmsConfig { latency_ms: 1000 });
        gw.submit("te1", "user1", text("OK ARMED"), 50);
        assert_eq!(gw.next_deadline(), Some(1050));
        assert!(gw.deliver_due(1049).is_empty());
        let d = gw.deliver_due(1050);
        assert_eq!(d.len(), 1);
        assert_eq!(gw.mailbox("user1")[0].text.as_str(), "OK ARMED");
        assert!(gw.mailbox("nobody").is_empty());
    }

    #[test]
    fn delivery_order_is_by_time_then_submission() {
        let mut gw = SmsGateway::new(SmsConfig { latency_ms: 10 });
        gw.submit("a", "x", text("2"), 5);
        gw.submit("a", "x", text("1"), 0);
        gw.submit("a", "x", text("3"), 5);
        let order: Vec<String> = gw.deliver_due(100).into_iter().map(|m| m.text.into()).collect();
        assert_eq!(order, ["1", "2", "3"]);
    }

    #[test]
    fn agents_send_on_schedule() {
        let mut gw = SmsGateway::new(SmsConfig::default());
        gw.add_agent(UserAgent::new(
            "user1",
            "te1",
            vec![(500, "STATUS".into()), (100, "DISARM".into()), (900, "ÄRM".into())],
        ));
        assert_eq!(gw.next_deadline(), Some(100));
        assert_eq!(gw.drive_agents(100).len(), 1);
        assert_eq!(gw.drive_agents(1000).len(), 1);
        assert_eq!(gw.stats().rejected, 1);
        let d = gw.deliver_due(10_000);
        assert_eq!(d[0].text.as_str(), "DISARM");
        assert_eq!(d[1].from, "user1");
    }
}
