//! GPRS module emulation: power/ignition timing, the AT dialog that brings up
//! a TCP socket, serialization onto the link, and abnormal idle disconnect.
//!
//! Power-on discipline: the ignition line may be pulled low no sooner than
//! 10 ms after power-up and must stay low for more than 100 ms before it is
//! released (HiZ). Anything else leaves the module off.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Millis;

pub const MIN_IGNITION_DELAY_MS: Millis = 10;
/// The low pulse must be strictly longer than this.
pub const MIN_IGNITION_HOLD_MS: Millis = 100;

pub const GPRS_MIN_BPS: u32 = 20_000;
pub const GPRS_MAX_BPS: u32 = 171_200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModemState {
    Off,
    Booting,
    SimReady,
    NetRegistered,
    GprsAttached,
    TcpOpen,
    TcpClosedAbnormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemConfig {
    pub idle_timeout_s: u64,
    pub boot_duration_ms: Millis,
    pub watchdog_toggle_period_s: u64,
    pub bandwidth_bps: u32,
}

impl Default for ModemConfig {
    fn default() -> Self {
        Self {
            idle_timeout_s: 300,
            boot_duration_ms: 2000,
            watchdog_toggle_period_s: 600,
            bandwidth_bps: 25_000,
        }
    }
}

impl ModemConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.idle_timeout_s <= 60 {
            return Err(format!(
                "idle_timeout_s must exceed the 60 s keepalive, got {}",
                self.idle_timeout_s
            ));
        }
        if !(GPRS_MIN_BPS..=GPRS_MAX_BPS).contains(&self.bandwidth_bps) {
            return Err(format!(
                "bandwidth_bps must lie in [{GPRS_MIN_BPS}, {GPRS_MAX_BPS}], got {}",
                self.bandwidth_bps
            ));
        }
        Ok(())
    }

    pub fn idle_timeout_ms(&self) -> Millis {
        self.idle_timeout_s * 1000
    }
}

/// Time on the wire for `len` octets at `bps`, rounded up to whole ms.
pub fn serialization_delay_ms(len: usize, bps: u32) -> Millis {
    let bits = len as u64 * 8 * 1000;
    bits.div_ceil(bps.max(1) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PinEvent {
    PowerOn,
    PowerOff,
    IgnitionLow,
    /// Ignition released to high impedance.
    IgnitionHigh,
}

/// Timestamps of the current power-on attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IgnitionTrace {
    pub power_on_at: Option<Millis>,
    pub ign_low_at: Option<Millis>,
    pub ign_high_at: Option<Millis>,
}

impl IgnitionTrace {
    /// Whether a completed trace satisfies both timing constraints.
    pub fn is_valid(&self) -> bool {
        match (self.power_on_at, self.ign_low_at, self.ign_high_at) {
            (Some(p), Some(l), Some(h)) => {
                l >= p && l - p >= MIN_IGNITION_DELAY_MS && h >= l && h - l > MIN_IGNITION_HOLD_MS
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModemError {
    #[error("ignition timing violated: {0}")]
    TimingViolation(String),
    #[error("modem is not powered")]
    NotPowered,
    #[error("no open TCP connection")]
    NotConnected,
    #[error("pin event at {at} ms precedes previous event at {last} ms")]
    NonMonotonic { at: Millis, last: Millis },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtCommand {
    /// `AT`
    Attention,
    /// `AT+CREG?`
    QueryRegistration,
    /// `AT+CGATT=1`
    AttachGprs,
    /// `AT+CIPSTART=<host>,<port>`
    TcpStart { host: String, port: u16 },
    /// `AT+CIPCLOSE`
    TcpClose,
}

impl AtCommand {
    pub fn parse(line: &str) -> Option<AtCommand> {
        let line = line.trim_end_matches(['\r', '\n']);
        match line {
            "AT" => Some(AtCommand::Attention),
            "AT+CREG?" => Some(AtCommand::QueryRegistration),
            "AT+CGATT=1" => Some(AtCommand::AttachGprs),
            "AT+CIPCLOSE" => Some(AtCommand::TcpClose),
            _ => {
                let args = line.strip_prefix("AT+CIPSTART=")?;
                let (host, port) = args.rsplit_once(',')?;
                let host = host.trim_matches('"');
                if host.is_empty() {
                    return None;
                }
                Some(AtCommand::TcpStart {
                    host: host.to_string(),
                    port: port.parse().ok()?,
                })
            }
        }
    }
}

impl fmt::Display for AtCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtCommand::Attention => f.write_str("AT"),
            AtCommand::QueryRegistration => f.write_str("AT+CREG?"),
            AtCommand::AttachGprs => f.write_str("AT+CGATT=1"),
            AtCommand::TcpStart { host, port } => write!(f, "AT+CIPSTART={host},{port}"),
            AtCommand::TcpClose => f.write_str("AT+CIPCLOSE"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtResponse {
    Ok,
    Error,
    Registration { registered: bool },
    ConnectOk,
    CloseOk,
}

impl fmt::Display for AtResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtResponse::Ok => f.write_str("OK"),
            AtResponse::Error => f.write_str("ERROR"),
            AtResponse::Registration { registered } => {
                write!(f, "+CREG: 0,{}", if *registered { 1 } else { 0 })
            }
            AtResponse::ConnectOk => f.write_str("CONNECT OK"),
            AtResponse::CloseOk => f.write_str("CLOSE OK"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendResult {
    /// Link took the data; it leaves the modem at `departs_at`.
    Accepted { departs_at: Millis, serialization_ms: Millis },
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModemEvent {
    BootCompleted,
    IdleDisconnected,
    LinkFailed,
}

/// Per-modem counters, for reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ModemStats {
    pub boots: u64,
    pub idle_disconnects: u64,
    pub link_failures: u64,
    pub timing_violations: u64,
    pub tcp_opens: u64,
}

#[derive(Debug, Clone)]
pub struct Modem {
    config: ModemConfig,
    state: ModemState,
    powered: bool,
    trace: IgnitionTrace,
    ignition_low: bool,
    last_pin_at: Option<Millis>,
    boot_started_at: Millis,
    last_tx_at: Millis,
    tx_busy_until: Millis,
    connection_epoch: u32,
    pending_events: Vec<ModemEvent>,
    stats: ModemStats,
}

impl Modem {
    pub fn new(config: ModemConfig) -> Self {
        Self {
            config,
            state: ModemState::Off,
            powered: false,
            trace: IgnitionTrace::default(),
            ignition_low: false,
            last_pin_at: None,
            boot_started_at: 0,
            last_tx_at: 0,
            tx_busy_until: 0,
            connection_epoch: 0,
            pending_events: Vec::new(),
            stats: ModemStats::default(),
        }
    }

    pub fn config(&self) -> &ModemConfig {
        &self.config
    }

    pub fn state(&self) -> ModemState {
        self.state
    }

    pub fn is_powered(&self) -> bool {
        self.powered
    }

    pub fn ignition_trace(&self) -> IgnitionTrace {
        self.trace
    }

    pub fn stats(&self) -> ModemStats {
        self.stats
    }

    /// Increments on every successful `AT+CIPSTART`; identifies the socket.
    pub fn connection_epoch(&self) -> u32 {
        self.connection_epoch
    }

    /// Earliest time `tick` has something to report, if any.
    pub fn next_deadline(&self) -> Option<Millis> {
        match self.state {
            ModemState::Booting => Some(self.boot_started_at + self.config.boot_duration_ms),
            ModemState::TcpOpen => Some(self.last_tx_at + self.config.idle_timeout_ms()),
            _ => None,
        }
    }

    fn violation(&mut self, reason: String) -> Result<ModemState, ModemError> {
        self.stats.timing_violations += 1;
        Err(ModemError::TimingViolation(reason))
    }

    pub fn apply_pin_event(&mut self, event: PinEvent, at: Millis) -> Result<ModemState, ModemError> {
        if let Some(last) = self.last_pin_at {
            if at < last {
                return Err(ModemError::NonMonotonic { at, last });
            }
        }
        self.last_pin_at = Some(at);

        match event {
            PinEvent::PowerOff => {
                self.powered = false;
                self.ignition_low = false;
                self.state = ModemState::Off;
                self.trace = IgnitionTrace::default();
                self.pending_events.clear();
                Ok(self.state)
            }
            PinEvent::PowerOn => {
                if !self.powered {
                    self.powered = true;
                    self.trace = IgnitionTrace {
                        power_on_at: Some(at),
                        ..Default::default()
                    };
                }
                Ok(self.state)
            }
            PinEvent::IgnitionLow => {
                if !self.powered {
                    return Err(ModemError::NotPowered);
                }
                if self.ignition_low {
                    // already held low; not a new edge
                    return Ok(self.state);
                }
                if self.state == ModemState::Off {
                    let since_power = at - self.trace.power_on_at.unwrap_or(at);
                    if since_power < MIN_IGNITION_DELAY_MS {
                        return self.violation(format!(
                            "ignition pulled low {since_power} ms after power-up, needs {MIN_IGNITION_DELAY_MS} ms"
                        ));
                    }
                }
                self.ignition_low = true;
                self.trace.ign_low_at = Some(at);
                self.trace.ign_high_at = None;
                Ok(self.state)
            }
            PinEvent::IgnitionHigh => {
                if !self.powered {
                    return Err(ModemError::NotPowered);
                }
                if !self.ignition_low {
                    // already released; no edge
                    return Ok(self.state);
                }
                self.ignition_low = false;
                self.trace.ign_high_at = Some(at);
                let low_at = self.trace.ign_low_at.unwrap_or(at);
                let held = at - low_at;
                let restartable = matches!(self.state, ModemState::Off | ModemState::TcpClosedAbnormal);
                if !restartable {
                    // toggling a healthy module has no effect
                    return Ok(self.state);
                }
                if held <= MIN_IGNITION_HOLD_MS {
                    return self.violation(format!(
                        "ignition held low {held} ms, needs more than {MIN_IGNITION_HOLD_MS} ms"
                    ));
                }
                self.state = ModemState::Booting;
                self.boot_started_at = at;
                self.stats.boots += 1;
                Ok(self.state)
            }
        }
    }

    /// Runs one AT command. Out-of-order commands answer `ERROR` and leave
    /// the state alone.
    pub fn submit_at(&mut self, cmd: &AtCommand, now: Millis) -> Result<AtResponse, ModemError> {
        use ModemState::*;
        if !self.powered || self.state == Off {
            return Err(ModemError::NotPowered);
        }
        let resp = match (cmd, self.state) {
            (_, Booting) => AtResponse::Error,
            (AtCommand::Attention, _) => AtResponse::Ok,
            (AtCommand::QueryRegistration, SimReady) => {
                self.state = NetRegistered;
                AtResponse::Registration { registered: true }
            }
            (AtCommand::QueryRegistration, _) => AtResponse::Registration { registered: true },
            (AtCommand::AttachGprs, NetRegistered) => {
                self.state = GprsAttached;
                AtResponse::Ok
            }
            (AtCommand::TcpStart { .. }, GprsAttached) => {
                self.state = TcpOpen;
                self.connection_epoch += 1;
                self.stats.tcp_opens += 1;
                // the idle clock starts with the socket
                self.last_tx_at = now;
                self.tx_busy_until = self.tx_busy_until.max(now);
                AtResponse::ConnectOk
            }
            (AtCommand::TcpClose, TcpOpen) => {
                self.state = GprsAttached;
                AtResponse::CloseOk
            }
            _ => AtResponse::Error,
        };
        Ok(resp)
    }

    /// Serializes `data` onto the link. `link` is offered the departure time
    /// and decides acceptance. Accepted sends reset the idle timer; a send
    /// queued behind an earlier one departs after it.
    pub fn tcp_send(
        &mut self,
        data: &[u8],
        now: Millis,
        link: impl FnOnce(Millis) -> bool,
    ) -> Result<SendResult, ModemError> {
        if self.state != ModemState::TcpOpen {
            return Err(ModemError::NotConnected);
        }
        let serialization_ms = serialization_delay_ms(data.len(), self.config.bandwidth_bps);
        let departs_at = self.tx_busy_until.max(now) + serialization_ms;
        if !link(departs_at) {
            return Ok(SendResult::Failed);
        }
        self.tx_busy_until = departs_at;
        self.last_tx_at = now;
        Ok(SendResult::Accepted {
            departs_at,
            serialization_ms,
        })
    }

    /// Drops an open socket as if the network tore it down.
    pub fn inject_link_failure(&mut self) {
        if self.state == ModemState::TcpOpen {
            self.state = ModemState::TcpClosedAbnormal;
            self.stats.link_failures += 1;
            self.pending_events.push(ModemEvent::LinkFailed);
        }
    }

    pub fn tick(&mut self, now: Millis) -> Vec<ModemEvent> {
        let mut events = std::mem::take(&mut self.pending_events);
        match self.state {
            ModemState::Booting if now >= self.boot_started_at + self.config.boot_duration_ms => {
                self.state = ModemState::SimReady;
                events.push(ModemEvent::BootCompleted);
            }
            ModemState::TcpOpen if now >= self.last_tx_at + self.config.idle_timeout_ms() => {
                self.state = ModemState::TcpClosedAbnormal;
                self.stats.idle_disconnects += 1;
                events.push(ModemEvent::IdleDisconnected);
            }
            _ => {}
        }
        events
    }
}
