//! Scenario files: fleet size, configuration, scripted stimuli, faults and
//! the assertions a run is judged by. See `docs/scenario.md`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::link::LinkConfig;
use crate::hmi::HmiConfig;
use crate::modem::ModemConfig;
use crate::protocol::{AlarmType, ControlCmd, TeId};
use crate::smsgw::SmsConfig;
use crate::terminal::TeConfig;
use crate::Millis;

pub const SCENARIO_SCHEMA: &str = "cpas-scenario/1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{line}:{column}: at `{path}`: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("at `{path}`: {msg}")]
    Invalid { path: String, msg: String },
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllKeyword {
    All,
}

/// One terminal id, a list of ids, or `"all"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TeSel {
    One(u32),
    Many(Vec<u32>),
    All(AllKeyword),
}

impl TeSel {
    pub fn matches(&self, te: u32) -> bool {
        match self {
            TeSel::One(t) => *t == te,
            TeSel::Many(ts) => ts.contains(&te),
            TeSel::All(_) => true,
        }
    }

    pub fn resolve(&self, te_count: u32) -> Vec<u32> {
        (1..=te_count).filter(|&t| self.matches(t)).collect()
    }

    fn ids(&self) -> Vec<u32> {
        match self {
            TeSel::One(t) => vec![*t],
            TeSel::Many(ts) => ts.clone(),
            TeSel::All(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkPair {
    pub uplink: LinkConfig,
    pub downlink: LinkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub te: TeSel,
    #[serde(default)]
    pub uplink: Option<LinkConfig>,
    #[serde(default)]
    pub downlink: Option<LinkConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeOverride {
    pub te: TeSel,
    #[serde(flatten)]
    pub fields: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorScript {
    pub at_ms: Millis,
    pub te: u32,
    pub zone: u8,
    pub kind: AlarmType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSmsScript {
    pub at_ms: Millis,
    pub te: u32,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorAction {
    Control { te: u32, cmd: ControlCmd },
    Query { te: u32 },
    /// Acknowledge every unacknowledged alarm event.
    AckAlarms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorScript {
    pub at_ms: Millis,
    #[serde(flatten)]
    pub action: OperatorAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Power loss.
    Kill,
    PowerOn,
    /// The network drops the terminal's open socket.
    LinkFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScript {
    pub at_ms: Millis,
    pub te: u32,
    pub fault: FaultKind,
}

fn default_grace() -> Millis {
    5_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// 95th percentile of sensor-to-operator latency, nearest rank.
    AlarmLatencyP95MaxMs { value: Millis },
    /// No Offline transition for a terminal that stayed Online on its own side
    /// for the whole offline window.
    NoFalseOffline,
    /// Every heartbeat the link accepted at least `grace_ms` before the end
    /// was acknowledged.
    AllHeartbeatsAcked {
        #[serde(default = "default_grace")]
        grace_ms: Millis,
    },
    ReconnectsPerTe { te: TeSel, expected: u64 },
    /// Each burst's terminal is Online again within `value` ms of the burst's last failure.
    OnlineWithinMsAfterBurst { value: Millis },
    /// Heartbeats originated per terminal over the run.
    HeartbeatsPerTe { min: u64, max: u64 },
    NoIdleDisconnect,
    /// Each raised alarm reached the operator once and the user once.
    DoubleProtection,
    /// At most one session per terminal, and every open session belongs to a live connection.
    NoSessionLeaks,
    /// Every terminal is Online at the HMI when the run ends.
    AllOnlineAtEnd,
}

impl Assertion {
    pub fn name(&self) -> &'static str {
        match self {
            Assertion::AlarmLatencyP95MaxMs { .. } => "alarm_latency_p95_max_ms",
            Assertion::NoFalseOffline => "no_false_offline",
            Assertion::AllHeartbeatsAcked { .. } => "all_heartbeats_acked",
            Assertion::ReconnectsPerTe { .. } => "reconnects_per_te",
            Assertion::OnlineWithinMsAfterBurst { .. } => "online_within_ms_after_burst",
            Assertion::HeartbeatsPerTe { .. } => "heartbeats_per_te",
            Assertion::NoIdleDisconnect => "no_idle_disconnect",
            Assertion::DoubleProtection => "double_protection",
            Assertion::NoSessionLeaks => "no_session_leaks",
            Assertion::AllOnlineAtEnd => "all_online_at_end",
        }
    }
}

fn default_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: Millis,
    pub te_count: u32,
    /// Terminal `k` powers up at `(k - 1) * boot_stagger_ms`.
    #[serde(default)]
    pub boot_stagger_ms: Millis,
    #[serde(default)]
    pub te_defaults: Map<String, Value>,
    #[serde(default)]
    pub te_overrides: Vec<TeOverride>,
    #[serde(default)]
    pub modem: ModemConfig,
    #[serde(default)]
    pub hmi: HmiConfig,
    #[serde(default)]
    pub sms: SmsConfig,
    #[serde(default)]
    pub link: LinkPair,
    #[serde(default)]
    pub link_overrides: Vec<LinkOverride>,
    #[serde(default)]
    pub sensors: Vec<SensorScript>,
    #[serde(default)]
    pub user_sms: Vec<UserSmsScript>,
    #[serde(default)]
    pub operator: Vec<OperatorScript>,
    #[serde(default)]
    pub faults: Vec<FaultScript>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

impl Scenario {
    /// Parses and validates. Errors name the JSON path, and for syntax or
    /// type errors the line and column.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                msg: inner.to_string(),
            }
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Effective configuration of terminal `te` (1-based).
    pub fn te_config(&self, te: u32) -> Result<TeConfig, ScenarioError> {
        let base = TeConfig::for_te(TeId(te));
        let mut merged = match serde_json::to_value(&base).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        };
        let mut origin = "te_defaults".to_string();
        merge(&mut merged, &self.te_defaults);
        for (i, o) in self.te_overrides.iter().enumerate() {
            if o.te.matches(te) {
                merge(&mut merged, &o.fields);
                origin = format!("te_overrides[{i}]");
            }
        }
        merged.insert("te_id".into(), Value::from(te));
        let cfg: TeConfig = serde_path_to_error::deserialize(Value::Object(merged))
            .map_err(|e| invalid(format!("{origin}.{}", e.path()), e.into_inner().to_string()))?;
        cfg.validate(&self.modem)
            .map_err(|m| invalid(format!("{origin} (terminal {te})"), m))?;
        Ok(cfg)
    }

    pub fn link_pair(&self, te: u32) -> LinkPair {
        let mut pair = self.link.clone();
        for o in self.link_overrides.iter().filter(|o| o.te.matches(te)) {
            if let Some(u) = &o.uplink {
                pair.uplink = u.clone();
            }
            if let Some(d) = &o.downlink {
                pair.downlink = d.clone();
            }
        }
        pair
    }

    /// Terminals that are never subject to an injected fault or impairment.
    pub fn clean_tes(&self) -> BTreeSet<u32> {
        let faulted: BTreeSet<u32> = self.faults.iter().map(|f| f.te).collect();
        (1..=self.te_count)
            .filter(|t| !faulted.contains(t))
            .filter(|&t| {
                let p = self.link_pair(t);
                p.uplink.is_clean() && p.downlink.is_clean()
            })
            .collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(invalid("schema", format!("expected `{SCENARIO_SCHEMA}`, got `{}`", self.schema)));
        }
        if self.te_count == 0 {
            return Err(invalid("te_count", "must be at least 1"));
        }
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms", "must be positive"));
        }
        self.modem.validate().map_err(|m| invalid("modem", m))?;
        self.hmi.validate().map_err(|m| invalid("hmi", m))?;
        for key in ["te_id"] {
            if self.te_defaults.contains_key(key) {
                return Err(invalid(format!("te_defaults.{key}"), "is assigned per terminal"));
            }
        }
        let te_ok = |path: String, te: u32| {
            if (1..=self.te_count).contains(&te) {
                Ok(())
            } else {
                Err(invalid(path, format!("terminal {te} outside 1..={}", self.te_count)))
            }
        };
        let time_ok = |path: String, at: Millis| {
            if at <= self.duration_ms {
                Ok(())
            } else {
                Err(invalid(path, format!("time {at} ms is after the end of the run")))
            }
        };
        for (i, o) in self.te_overrides.iter().enumerate() {
            for t in o.te.ids() {
                te_ok(format!("te_overrides[{i}].te"), t)?;
            }
            if o.fields.contains_key("te_id") {
                return Err(invalid(format!("te_overrides[{i}].te_id"), "is assigned per terminal"));
            }
        }
        self.link.uplink.validate().map_err(|m| invalid("link.uplink", m))?;
        self.link.downlink.validate().map_err(|m| invalid("link.downlink", m))?;
        for (i, o) in self.link_overrides.iter().enumerate() {
            for t in o.te.ids() {
                te_ok(format!("link_overrides[{i}].te"), t)?;
            }
            for (dir, l) in [("uplink", &o.uplink), ("downlink", &o.downlink)] {
                if let Some(l) = l {
                    l.validate().map_err(|m| invalid(format!("link_overrides[{i}].{dir}"), m))?;
                }
            }
        }
        for (i, s) in self.sensors.iter().enumerate() {
            te_ok(format!("sensors[{i}].te"), s.te)?;
            time_ok(format!("sensors[{i}].at_ms"), s.at_ms)?;
        }
        for (i, s) in self.user_sms.iter().enumerate() {
            te_ok(format!("user_sms[{i}].te"), s.te)?;
            time_ok(format!("user_sms[{i}].at_ms"), s.at_ms)?;
        }
        for (i, o) in self.operator.iter().enumerate() {
            time_ok(format!("operator[{i}].at_ms"), o.at_ms)?;
            match o.action {
                OperatorAction::Control { te, .. } | OperatorAction::Query { te } => {
                    te_ok(format!("operator[{i}].te"), te)?
                }
                OperatorAction::AckAlarms => {}
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            te_ok(format!("faults[{i}].te"), f.te)?;
            time_ok(format!("faults[{i}].at_ms"), f.at_ms)?;
        }
        for (i, a) in self.assertions.iter().enumerate() {
            if let Assertion::ReconnectsPerTe { te, .. } = a {
                for t in te.ids() {
                    te_ok(format!("assertions[{i}].te"), t)?;
                }
            }
            if let Assertion::HeartbeatsPerTe { min, max } = a {
                if min > max {
                    return Err(invalid(format!("assertions[{i}]"), "min exceeds max"));
                }
            }
        }
        // every terminal's configuration must resolve
        for te in 1..=self.te_count {
            self.te_config(te)?;
        }
        Ok(())
    }
}

fn merge(dst: &mut Map<String, Value>, src: &Map<String, Value>) {
    for (k, v) in src {
        match (dst.get_mut(k), v) {
            (Some(Value::Object(d)), Value::Object(s)) => merge(d, s),
            _ => {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"duration_ms": 1000, "te_count": 2}"#;

    #[test]
    fn minimal_defaults() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(sc.schema, SCENARIO_SCHEMA);
        assert_eq!(sc.link.uplink.latency_ms, 150);
        let c = sc.te_config(2).unwrap();
        assert_eq!(c.te_id, TeId(2));
        assert_eq!(c.user_phone, "user2");
        assert_eq!(c.heartbeat_period_s, 60);
    }

    #[test]
    fn overrides_merge_nested() {
        let sc = Scenario::from_json(
            r#"{"duration_ms": 1000, "te_count": 3,
                "te_defaults": {"heartbeat_period_s": 30},
                "te_overrides": [{"te": [2, 3], "channels": {"sms": false}}]}"#,
        )
        .unwrap();
        let c1 = sc.te_config(1).unwrap();
        let c2 = sc.te_config(2).unwrap();
        assert_eq!(c1.heartbeat_period_s, 30);
        assert!(c1.channels.sms);
        assert!(!c2.channels.sms);
        assert!(c2.channels.gprs);
    }

    #[test]
    fn syntax_errors_carry_line_and_path() {
        let err = Scenario::from_json("{\n\"duration_ms\": 1000,\n\"te_count\": \"many\"\n}").unwrap_err();
        match err {
            ScenarioError::Parse { path, line, .. } => {
                assert_eq!(path, "te_count");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = Scenario::from_json(r#"{"duration_ms": 1, "te_count": 1, "modem": {"idle": 3}}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { ref path, .. } if path == "modem.idle"), "{err}");
    }

    #[test]
    fn bad_te_field_is_located() {
        let err = Scenario::from_json(
            r#"{"duration_ms": 1, "te_count": 2, "te_overrides": [{"te": 1, "retry_threshold": "x"}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("te_overrides[0].retry_threshold"), "{err}");
    }

    #[test]
    fn semantic_checks() {
        for bad in [
            r#"{"duration_ms": 1000, "te_count": 2, "sensors": [{"at_ms": 1, "te": 3, "zone": 1, "kind": "IR"}]}"#,
            r#"{"duration_ms": 1000, "te_count": 2, "faults": [{"at_ms": 5000, "te": 1, "fault": "kill"}]}"#,
            r#"{"duration_ms": 1000, "te_count": 2, "te_defaults": {"heartbeat_period_s": 300}}"#,
            r#"{"duration_ms": 1000, "te_count": 0}"#,
            r#"{"schema": "other/2", "duration_ms": 1000, "te_count": 1}"#,
            r#"{"duration_ms": 1000, "te_count": 1, "link": {"uplink": {"drop_prob": 2.0}}}"#,
        ] {
            assert!(matches!(Scenario::from_json(bad), Err(ScenarioError::Invalid { .. })), "{bad}");
        }
    }

    #[test]
    fn assertions_and_operator_parse() {
        let sc = Scenario::from_json(
            r#"{"duration_ms": 1000, "te_count": 2,
                "operator": [{"at_ms": 5, "action": "control", "te": 1, "cmd": "disarm"},
                             {"at_ms": 6, "action": "ack_alarms"}],
                "assertions": [{"kind": "reconnects_per_te", "te": "all", "expected": 0},
                               {"kind": "all_heartbeats_acked"},
                               {"kind": "alarm_latency_p95_max_ms", "value": 2000}]}"#,
        )
        .unwrap();
        assert_eq!(sc.operator[0].action, OperatorAction::Control { te: 1, cmd: ControlCmd::Disarm });
        assert_eq!(sc.assertions[1], Assertion::AllHeartbeatsAcked { grace_ms: 5000 });
        assert_eq!(sc.assertions[0].name(), "reconnects_per_te");
        let round = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(round, sc);
    }

    #[test]
    fn clean_terminals() {
        let sc = Scenario::from_json(
            r#"{"duration_ms": 1000, "te_count": 3,
                "link_overrides": [{"te": 2, "uplink": {"fail_bursts": [{"at_ms": 1, "count": 4}]}}],
                "faults": [{"at_ms": 5, "te": 3, "fault": "kill"}]}"#,
        )
        .unwrap();
        assert_eq!(sc.clean_tes(), BTreeSet::from([1]));
        assert_eq!(sc.link_pair(2).uplink.fail_bursts.len(), 1);
        assert!(sc.link_pair(2).downlink.fail_bursts.is_empty());
    }
}
