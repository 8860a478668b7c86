//! Run report: JSON for machines, a table for people. See `docs/report.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::link::LinkStats;
use super::scenario::Assertion;
use super::world::World;
use crate::hmi::{HmiStats, TeState};
use crate::modem::ModemState;
use crate::protocol::{render_sms, AlarmType, SmsEvent, TeId};
use crate::terminal::Phase;
use crate::Millis;

pub const REPORT_SCHEMA: &str = "cpas-report/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub kind: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmRow {
    pub te: u32,
    pub seq: u16,
    pub zone: u8,
    pub kind: AlarmType,
    pub ts: u32,
    pub raised_at: Millis,
    pub operator_at: Option<Millis>,
    pub latency_ms: Option<Millis>,
    pub operator_events: u32,
    pub sms_alerts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    /// Alarms that never reached the operator.
    pub missing: u64,
    pub p50_ms: Option<Millis>,
    pub p95_ms: Option<Millis>,
    pub max_ms: Option<Millis>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerTe {
    pub total: u64,
    pub max: u64,
    /// Non-zero entries only.
    pub per_te: BTreeMap<u32, u64>,
}

impl PerTe {
    fn from_iter(values: impl IntoIterator<Item = (u32, u64)>) -> Self {
        let mut s = PerTe::default();
        for (te, v) in values {
            s.total += v;
            s.max = s.max.max(v);
            if v > 0 {
                s.per_te.insert(te, v);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transitions {
    pub hmi_online: u64,
    pub hmi_offline: u64,
    pub false_offline: u64,
    pub te_phase_changes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatSummary {
    pub sent: u64,
    pub acked: u64,
    pub min_per_te: u64,
    pub max_per_te: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Links {
    pub uplink: LinkStats,
    pub downlink: LinkStats,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsSummary {
    pub submitted: u64,
    pub delivered: u64,
    pub rejected: u64,
    pub in_flight: u64,
    /// Messages delivered per address.
    pub mailboxes: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModemSummary {
    pub boots: u64,
    pub idle_disconnects: u64,
    pub link_failures: u64,
    pub timing_violations: u64,
    pub tcp_opens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub scenario: String,
    pub seed: u64,
    pub duration_ms: Millis,
    pub te_count: u32,
    pub passed: bool,
    pub assertions: Vec<AssertionResult>,
    pub latency: LatencySummary,
    pub alarms: Vec<AlarmRow>,
    pub reconnects: PerTe,
    /// Time each terminal spent out of Online after first reaching it.
    pub downtime_ms: PerTe,
    pub transitions: Transitions,
    pub heartbeats: HeartbeatSummary,
    pub links: Links,
    pub sms: SmsSummary,
    pub modem: ModemSummary,
    pub hmi: HmiStats,
    pub sessions_open: u64,
}

/// Nearest-rank percentile: the smallest value with at least `q` of the
/// sample at or below it.
pub fn percentile(sorted: &[Millis], q: f64) -> Option<Millis> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn downtime(phases: &[(Millis, Phase)], end: Millis) -> u64 {
    let Some(first) = phases.iter().position(|(_, p)| *p == Phase::Online) else {
        return 0;
    };
    let mut total = 0;
    for (i, (t, p)) in phases.iter().enumerate().skip(first) {
        let until = phases.get(i + 1).map_or(end, |(n, _)| *n).min(end);
        if *p != Phase::Online {
            total += until.saturating_sub(*t);
        }
    }
    total
}

fn result(a: &Assertion, passed: bool, detail: String) -> AssertionResult {
    AssertionResult {
        kind: a.name().to_string(),
        passed,
        detail,
    }
}

fn first_failures<T: std::fmt::Display>(items: &[T]) -> String {
    let shown: Vec<String> = items.iter().take(5).map(|i| i.to_string()).collect();
    let more = if items.len() > 5 {
        format!(" and {} more", items.len() - 5)
    } else {
        String::new()
    };
    format!("{}{more}", shown.join(", "))
}

pub(crate) fn build(w: &World) -> Report {
    let end = w.end();
    let sc = &w.sc;

    let mut alarms = Vec::new();
    for a in &w.alarms {
        let slot = &w.tes[a.te as usize - 1];
        let cfg = slot.term.config();
        let alert = render_sms(&SmsEvent::Alert {
            zone: a.zone,
            kind: a.kind,
            ts: a.ts,
        });
        let sms_alerts = w
            .sms
            .mailbox(&cfg.user_phone)
            .iter()
            .filter(|m| m.from == cfg.phone && m.text == alert)
            .count() as u32;
        alarms.push(AlarmRow {
            te: a.te,
            seq: a.seq,
            zone: a.zone,
            kind: a.kind,
            ts: a.ts,
            raised_at: a.raised_at,
            operator_at: a.operator_at,
            latency_ms: a.operator_at.map(|t| t - a.raised_at),
            operator_events: a.operator_events,
            sms_alerts,
        });
    }
    let mut lat: Vec<Millis> = alarms.iter().filter_map(|a| a.latency_ms).collect();
    lat.sort_unstable();
    let latency = LatencySummary {
        count: lat.len() as u64,
        missing: (alarms.len() - lat.len()) as u64,
        p50_ms: percentile(&lat, 0.50),
        p95_ms: percentile(&lat, 0.95),
        max_ms: lat.last().copied(),
    };

    let offline_window = sc.hmi.offline_after_s * 1000;
    let false_offline: Vec<(u32, Millis)> = w
        .offline_events
        .iter()
        .copied()
        .filter(|&(te, t)| {
            let slot = &w.tes[te as usize - 1];
            let from = t.saturating_sub(offline_window);
            slot.phase_at(from) == Phase::Online
                && !slot.phase_log.iter().any(|(at, p)| *at > from && *at <= t && *p != Phase::Online)
        })
        .collect();

    let mut links = Links::default();
    let mut modem = ModemSummary::default();
    let mut hb = HeartbeatSummary {
        min_per_te: u64::MAX,
        ..Default::default()
    };
    for s in &w.tes {
        links.uplink.merge(&s.up.stats());
        links.downlink.merge(&s.down.stats());
        let m = s.term.modem().stats();
        modem.boots += m.boots;
        modem.idle_disconnects += m.idle_disconnects;
        modem.link_failures += m.link_failures;
        modem.timing_violations += m.timing_violations;
        modem.tcp_opens += m.tcp_opens;
        let st = s.term.stats();
        hb.sent += st.heartbeats_sent;
        hb.acked += st.heartbeats_acked;
        hb.min_per_te = hb.min_per_te.min(st.heartbeats_sent);
        hb.max_per_te = hb.max_per_te.max(st.heartbeats_sent);
    }
    if w.tes.is_empty() {
        hb.min_per_te = 0;
    }

    let reconnects = PerTe::from_iter(w.tes.iter().map(|s| (s.term.te_id().0, s.term.stats().reconnects)));
    let downtime_ms = PerTe::from_iter(w.tes.iter().map(|s| (s.term.te_id().0, downtime(&s.phase_log, end))));

    let sms_stats = w.sms.stats();
    let sms = SmsSummary {
        submitted: sms_stats.submitted,
        delivered: sms_stats.delivered,
        rejected: sms_stats.rejected,
        in_flight: w.sms.in_flight() as u64,
        mailboxes: w
            .sms
            .mailboxes()
            .iter()
            .map(|(k, v)| (k.clone(), v.len() as u64))
            .collect(),
    };

    let transitions = Transitions {
        hmi_online: w.online_events,
        hmi_offline: w.offline_events.len() as u64,
        false_offline: false_offline.len() as u64,
        te_phase_changes: w.tes.iter().map(|s| s.phase_log.len() as u64).sum(),
    };

    let mut results = Vec::new();
    for a in &sc.assertions {
        let r = match a {
            Assertion::AlarmLatencyP95MaxMs { value } => match latency.p95_ms {
                _ if alarms.is_empty() => result(a, false, "no alarms were raised".into()),
                _ if latency.missing > 0 => {
                    result(a, false, format!("{} alarms never reached the operator", latency.missing))
                }
                Some(p95) => result(a, p95 <= *value, format!("p95 {p95} ms, limit {value} ms")),
                None => result(a, false, "no latencies".into()),
            },
            Assertion::NoFalseOffline => {
                let items: Vec<String> = false_offline.iter().map(|(te, t)| format!("te {te} at {t} ms")).collect();
                if items.is_empty() {
                    result(a, true, format!("{} offline transitions, none false", w.offline_events.len()))
                } else {
                    result(a, false, format!("false offline: {}", first_failures(&items)))
                }
            }
            Assertion::AllHeartbeatsAcked { grace_ms } => {
                let cutoff = end.saturating_sub(*grace_ms);
                let bad: Vec<String> = w
                    .tes
                    .iter()
                    .filter_map(|s| {
                        let n = s.term.outstanding_heartbeats().values().filter(|&&t| t <= cutoff).count();
                        (n > 0).then(|| format!("te {} ({n} unacked)", s.term.te_id()))
                    })
                    .collect();
                if bad.is_empty() {
                    result(a, true, format!("{} heartbeats sent, {} acked", hb.sent, hb.acked))
                } else {
                    result(a, false, first_failures(&bad))
                }
            }
            Assertion::ReconnectsPerTe { te, expected } => {
                let bad: Vec<String> = te
                    .resolve(sc.te_count)
                    .into_iter()
                    .filter_map(|t| {
                        let n = w.tes[t as usize - 1].term.stats().reconnects;
                        (n != *expected).then(|| format!("te {t}: {n}"))
                    })
                    .collect();
                if bad.is_empty() {
                    result(a, true, format!("every selected terminal reconnected {expected} times"))
                } else {
                    result(a, false, format!("expected {expected}, got {}", first_failures(&bad)))
                }
            }
            Assertion::OnlineWithinMsAfterBurst { value } => {
                let mut bad = Vec::new();
                let mut bursts = 0;
                let mut worst = 0;
                for s in &w.tes {
                    for b in s.up.bursts() {
                        bursts += 1;
                        let te = s.term.te_id();
                        let Some(e) = b.ended_at.filter(|_| b.consumed == b.count) else {
                            bad.push(format!("te {te}: burst at {} ms not exhausted", b.at_ms));
                            continue;
                        };
                        let back = if s.phase_at(e) == Phase::Online {
                            Some(e)
                        } else {
                            s.phase_log.iter().find(|(t, p)| *t >= e && *p == Phase::Online).map(|(t, _)| *t)
                        };
                        match back {
                            Some(t) if t - e <= *value => worst = worst.max(t - e),
                            Some(t) => bad.push(format!("te {te}: online {} ms after burst", t - e)),
                            None => bad.push(format!("te {te}: never online after burst at {} ms", b.at_ms)),
                        }
                    }
                }
                if bursts == 0 {
                    result(a, false, "scenario has no failure bursts".into())
                } else if bad.is_empty() {
                    result(a, true, format!("{bursts} bursts, worst recovery {worst} ms"))
                } else {
                    result(a, false, first_failures(&bad))
                }
            }
            Assertion::HeartbeatsPerTe { min, max } => {
                let bad: Vec<String> = w
                    .tes
                    .iter()
                    .filter_map(|s| {
                        let n = s.term.stats().heartbeats_sent;
                        (n < *min || n > *max).then(|| format!("te {}: {n}", s.term.te_id()))
                    })
                    .collect();
                let detail = format!("range {}..={} per terminal", hb.min_per_te, hb.max_per_te);
                if bad.is_empty() {
                    result(a, true, detail)
                } else {
                    result(a, false, format!("{detail}; outside [{min}, {max}]: {}", first_failures(&bad)))
                }
            }
            Assertion::NoIdleDisconnect => result(
                a,
                modem.idle_disconnects == 0,
                format!("{} idle disconnects", modem.idle_disconnects),
            ),
            Assertion::DoubleProtection => {
                let bad: Vec<String> = alarms
                    .iter()
                    .filter(|r| r.operator_events != 1 || r.sms_alerts != 1)
                    .map(|r| {
                        format!(
                            "te {} seq {}: {} operator events, {} sms alerts",
                            r.te, r.seq, r.operator_events, r.sms_alerts
                        )
                    })
                    .collect();
                if alarms.is_empty() {
                    result(a, false, "no alarms were raised".into())
                } else if bad.is_empty() {
                    result(a, true, format!("{} alarms, each reported once per channel", alarms.len()))
                } else {
                    result(a, false, first_failures(&bad))
                }
            }
            Assertion::NoSessionLeaks => {
                let mut bad: Vec<String> = w
                    .hmi
                    .duplicate_sessions()
                    .into_iter()
                    .map(|t| format!("te {t} has several sessions"))
                    .collect();
                for c in w.hmi.open_connections() {
                    if let crate::hmi::ConnId::Sim { te, epoch } = c {
                        let s = &w.tes[te.0 as usize - 1];
                        let live = s.conn_epoch == Some(epoch) && s.term.modem().state() == ModemState::TcpOpen;
                        if !live {
                            bad.push(format!("te {te} epoch {epoch} session has no connection"));
                        }
                    }
                }
                if bad.is_empty() {
                    result(a, true, format!("{} sessions open", w.hmi.session_count()))
                } else {
                    result(a, false, first_failures(&bad))
                }
            }
            Assertion::AllOnlineAtEnd => {
                let bad: Vec<String> = (1..=sc.te_count)
                    .filter(|&t| w.hmi.te_state(TeId(t)) != Some(TeState::Online))
                    .map(|t| format!("te {t}"))
                    .collect();
                if bad.is_empty() {
                    result(a, true, format!("{} terminals online", sc.te_count))
                } else {
                    result(a, false, format!("not online: {}", first_failures(&bad)))
                }
            }
        };
        results.push(r);
    }

    Report {
        schema: REPORT_SCHEMA.to_string(),
        scenario: sc.name.clone(),
        seed: w.seed,
        duration_ms: end,
        te_count: sc.te_count,
        passed: results.iter().all(|r| r.passed),
        assertions: results,
        latency,
        alarms,
        reconnects,
        downtime_ms,
        transitions,
        heartbeats: hb,
        links,
        sms,
        modem,
        hmi: w.hmi.stats(),
        sessions_open: w.hmi.session_count() as u64,
    }
}

fn opt_ms(v: Option<Millis>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v} ms"))
}

/// Human-readable summary.
pub fn render_table(r: &Report) -> String {
    let mut s = String::new();
    let name = if r.scenario.is_empty() { "(unnamed)" } else { &r.scenario };
    let _ = writeln!(s, "scenario {name}  seed {}  {} terminals  {} ms", r.seed, r.te_count, r.duration_ms);
    let _ = writeln!(s);
    let rows = [
        ("alarms", r.alarms.len().to_string()),
        ("latency p50", opt_ms(r.latency.p50_ms)),
        ("latency p95", opt_ms(r.latency.p95_ms)),
        ("latency max", opt_ms(r.latency.max_ms)),
        ("alarms not delivered", r.latency.missing.to_string()),
        ("reconnects", r.reconnects.total.to_string()),
        ("reconnects max/terminal", r.reconnects.max.to_string()),
        ("downtime total", format!("{} ms", r.downtime_ms.total)),
        ("downtime max/terminal", format!("{} ms", r.downtime_ms.max)),
        ("offline transitions", r.transitions.hmi_offline.to_string()),
        ("heartbeats sent/acked", format!("{}/{}", r.heartbeats.sent, r.heartbeats.acked)),
        ("uplink sent/refused/dropped", format!("{}/{}/{}", r.links.uplink.sent, r.links.uplink.refused, r.links.uplink.dropped)),
        ("sms delivered", r.sms.delivered.to_string()),
        ("sessions open", r.sessions_open.to_string()),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        let _ = writeln!(s, "  {k:<width$}  {v:>12}");
    }
    if !r.assertions.is_empty() {
        let _ = writeln!(s);
        for a in &r.assertions {
            let mark = if a.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "  {mark}  {:<30} {}", a.kind, a.detail);
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{}", if r.passed { "result: PASS" } else { "result: FAIL" });
    s
}
