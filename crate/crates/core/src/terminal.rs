//! Alarm terminal (TE) state machine.
//!
//! The terminal owns its GPRS modem. It powers the module up with the
//! ignition discipline, runs the AT dialog, registers with the HMI,
//! heartbeats once a period, raises alarms from sensor events and notifies
//! the user over SMS in parallel. Consecutive GPRS send failures are counted
//! in `n`; when `n` exceeds the retry threshold the terminal drops the socket
//! and reconnects straight away.
//!
//! The state machine never performs I/O. Callers feed it timer ticks, decoded
//! frames, sensor events, SMS texts and send outcomes, and carry out the
//! [`Action`]s it returns. Every [`Action::SendFrame`] must be answered with
//! exactly one [`Terminal::on_send_result`], in emission order.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::modem::{AtCommand, AtResponse, Modem, ModemConfig, ModemEvent, ModemState, PinEvent};
use crate::protocol::{
    parse_command, render_sms, AlarmType, ControlCmd, Frame, Message, SmsEvent, SmsText,
    StatusByte, TeId, UserCommand, CONTROL_OK, CONTROL_UNKNOWN,
};
use crate::Millis;

/// Ignition low pulse used by the terminal, comfortably above the 100 ms minimum.
pub const IGNITION_PULSE_MS: Millis = 110;
/// Wait between power-up and pulling ignition low.
pub const IGNITION_DELAY_MS: Millis = 10;
/// Grace period between acknowledging a reboot command and power-cycling.
pub const REBOOT_GRACE_MS: Millis = 500;

/// Which channels an alarm is reported on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertChannels {
    pub gprs: bool,
    pub sms: bool,
}

impl Default for AlertChannels {
    fn default() -> Self {
        Self { gprs: true, sms: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeConfig {
    pub te_id: TeId,
    pub heartbeat_period_s: u64,
    /// The `n` bound: more consecutive failures than this force a reconnect.
    pub retry_threshold: u32,
    pub retry_delay_s: u64,
    /// How long to wait for REGISTER_ACK or ALARM_ACK before retransmitting.
    pub ack_timeout_s: u64,
    pub user_phone: String,
    /// The terminal's own SMS address.
    pub phone: String,
    pub hmi_host: String,
    pub hmi_port: u16,
    pub fire_sensors_always_alarm: bool,
    pub initially_armed: bool,
    pub battery_level: u8,
    pub fw_version: u8,
    pub zone_count: u8,
    pub channels: AlertChannels,
    /// Unix seconds corresponding to t = 0, for alarm timestamps.
    pub clock_epoch_s: u32,
}

impl Default for TeConfig {
    fn default() -> Self {
        Self {
            te_id: TeId(1),
            heartbeat_period_s: 60,
            retry_threshold: 3,
            retry_delay_s: 2,
            ack_timeout_s: 5,
            user_phone: "user1".into(),
            phone: "te1".into(),
            hmi_host: "hmi".into(),
            hmi_port: 7001,
            fire_sensors_always_alarm: true,
            initially_armed: true,
            battery_level: 15,
            fw_version: 1,
            zone_count: 8,
            channels: AlertChannels::default(),
            clock_epoch_s: 0,
        }
    }
}

impl TeConfig {
    /// Default configuration with the conventional addresses for `te_id`.
    pub fn for_te(te_id: TeId) -> Self {
        Self {
            te_id,
            user_phone: format!("user{}", te_id.0),
            phone: format!("te{}", te_id.0),
            ..Default::default()
        }
    }

    pub fn validate(&self, modem: &ModemConfig) -> Result<(), String> {
        if self.heartbeat_period_s == 0 || self.heartbeat_period_s >= modem.idle_timeout_s {
            return Err(format!(
                "heartbeat_period_s ({}) must be positive and below the modem idle timeout ({} s)",
                self.heartbeat_period_s, modem.idle_timeout_s
            ));
        }
        if self.retry_threshold < 1 {
            return Err("retry_threshold must be at least 1".into());
        }
        if self.battery_level > 15 {
            return Err(format!("battery_level must be 0..=15, got {}", self.battery_level));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Unpowered.
    Off,
    Boot,
    Connecting,
    Registering,
    Online,
    Reconnecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub zone: u8,
    pub kind: AlarmType,
    pub at: Millis,
}

/// A frame for the harness to put on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutFrame {
    pub message: Message,
    pub seq: u16,
    /// Same frame sent again (same seq).
    pub retransmission: bool,
}

/// An alarm the terminal decided to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RaisedAlarm {
    pub seq: u16,
    pub zone: u8,
    pub kind: AlarmType,
    pub ts: u32,
    pub at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    SendFrame(OutFrame),
    SendSms { to: String, text: SmsText },
    /// Record of an alarm decision; emitted before its frame and SMS.
    AlarmRaised(RaisedAlarm),
    Disconnect,
    Reconnect,
    /// The modem reported an abnormal close; a watchdog restart follows.
    ConnectionLost(ModemEvent),
    /// A TCP socket opened; `epoch` identifies it.
    Connected { epoch: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TeStats {
    pub frames_sent: u64,
    pub send_failures: u64,
    pub heartbeats_sent: u64,
    pub heartbeats_acked: u64,
    pub alarms_raised: u64,
    pub alarms_acked: u64,
    pub alarm_retransmissions: u64,
    pub reconnects: u64,
    pub connection_losses: u64,
    pub registrations: u64,
    pub sms_sent: u64,
    pub sms_handled: u64,
}

#[derive(Debug, Clone, Copy)]
struct PendingAlarm {
    alarm: RaisedAlarm,
    last_sent_at: Option<Millis>,
}

impl PendingAlarm {
    fn frame(&self, retransmission: bool) -> OutFrame {
        OutFrame {
            message: Message::Alarm {
                zone: self.alarm.zone,
                alarm_type: self.alarm.kind,
                ts: self.alarm.ts,
            },
            seq: self.alarm.seq,
            retransmission,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BootPlan {
    power_at: Option<Millis>,
    low_at: Millis,
    low_applied: bool,
    high_at: Millis,
}

#[derive(Debug, Clone)]
pub struct Terminal {
    cfg: TeConfig,
    modem: Modem,
    phase: Phase,
    armed: bool,
    siren: bool,
    failures: u32,
    next_seq: u16,
    powered_at: Millis,
    last_heartbeat_at: Millis,
    boot: Option<BootPlan>,
    toggle_release_at: Option<Millis>,
    next_watchdog_at: Option<Millis>,
    retry: Option<(OutFrame, Millis)>,
    register_deadline: Option<Millis>,
    reboot_at: Option<Millis>,
    pending: Option<PendingAlarm>,
    backlog: VecDeque<PendingAlarm>,
    awaiting_result: VecDeque<OutFrame>,
    outstanding_heartbeats: BTreeMap<u16, Millis>,
    stats: TeStats,
}

impl Terminal {
    pub fn new(cfg: TeConfig, modem: ModemConfig) -> Self {
        let armed = cfg.initially_armed;
        Self {
            cfg,
            modem: Modem::new(modem),
            phase: Phase::Off,
            armed,
            siren: false,
            failures: 0,
            next_seq: 1,
            powered_at: 0,
            last_heartbeat_at: 0,
            boot: None,
            toggle_release_at: None,
            next_watchdog_at: None,
            retry: None,
            register_deadline: None,
            reboot_at: None,
            pending: None,
            backlog: VecDeque::new(),
            awaiting_result: VecDeque::new(),
            outstanding_heartbeats: BTreeMap::new(),
            stats: TeStats::default(),
        }
    }

    pub fn config(&self) -> &TeConfig {
        &self.cfg
    }

    pub fn te_id(&self) -> TeId {
        self.cfg.te_id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn siren(&self) -> bool {
        self.siren
    }

    /// Consecutive send failures, the `n` of the reconnect rule.
    pub fn failures(&self) -> u32 {
        self.failures
    }

    pub fn stats(&self) -> TeStats {
        self.stats
    }

    pub fn modem(&self) -> &Modem {
        &self.modem
    }

    pub fn modem_mut(&mut self) -> &mut Modem {
        &mut self.modem
    }

    /// Seq of the alarm awaiting ALARM_ACK, if any.
    pub fn pending_alarm(&self) -> Option<u16> {
        self.pending.map(|p| p.alarm.seq)
    }

    /// Heartbeats accepted by the link but not acknowledged, with send times.
    pub fn outstanding_heartbeats(&self) -> &BTreeMap<u16, Millis> {
        &self.outstanding_heartbeats
    }

    pub fn status(&self) -> StatusByte {
        StatusByte::new(
            self.armed,
            self.siren || self.pending.is_some(),
            self.cfg.battery_level,
        )
    }

    fn alloc_seq(&mut self) -> u16 {
        let s = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        s
    }

    fn originate(&mut self, message: Message) -> OutFrame {
        OutFrame {
            message,
            seq: self.alloc_seq(),
            retransmission: false,
        }
    }

    fn send(&mut self, frame: OutFrame, out: &mut Vec<Action>) {
        self.awaiting_result.push_back(frame);
        out.push(Action::SendFrame(frame));
    }

    /// Earliest time at which [`Terminal::on_timer`] has work to do.
    pub fn next_deadline(&self) -> Option<Millis> {
        if self.phase == Phase::Off {
            return None;
        }
        let heartbeat = (self.phase == Phase::Online)
            .then(|| self.last_heartbeat_at + self.cfg.heartbeat_period_s * 1000);
        let alarm_timeout = match (self.phase, self.pending) {
            (Phase::Online, Some(PendingAlarm { last_sent_at: Some(t), .. })) => {
                Some(t + self.cfg.ack_timeout_s * 1000)
            }
            _ => None,
        };
        let boot = self.boot.map(|b| match b.power_at {
            Some(p) => p,
            None if !b.low_applied => b.low_at,
            None => b.high_at,
        });
        [
            heartbeat,
            alarm_timeout,
            boot,
            self.toggle_release_at,
            self.next_watchdog_at,
            self.retry.map(|(_, t)| t),
            self.register_deadline,
            self.reboot_at,
            self.modem.next_deadline(),
        ]
        .into_iter()
        .flatten()
        .min()
    }

    /// Applies power and starts the ignition sequence.
    pub fn power_on(&mut self, now: Millis) -> Vec<Action> {
        self.phase = Phase::Boot;
        self.powered_at = now;
        self.boot = Some(BootPlan {
            power_at: Some(now),
            low_at: now + IGNITION_DELAY_MS,
            low_applied: false,
            high_at: now + IGNITION_DELAY_MS + IGNITION_PULSE_MS,
        });
        let period = self.modem.config().watchdog_toggle_period_s * 1000;
        self.next_watchdog_at = (period > 0).then_some(now + period);
        self.on_timer(now)
    }

    /// Cuts power. The terminal stays off until [`Terminal::power_on`].
    pub fn power_off(&mut self, now: Millis) {
        let _ = self.modem.apply_pin_event(PinEvent::PowerOff, now);
        self.phase = Phase::Off;
        self.boot = None;
        self.toggle_release_at = None;
        self.next_watchdog_at = None;
        self.retry = None;
        self.register_deadline = None;
        self.reboot_at = None;
        self.failures = 0;
    }

    fn start_watchdog_toggle(&mut self, now: Millis) {
        if self.toggle_release_at.is_none()
            && self.modem.apply_pin_event(PinEvent::IgnitionLow, now).is_ok()
        {
            self.toggle_release_at = Some(now + IGNITION_PULSE_MS);
        }
    }

    fn run_dialog(&mut self, now: Millis, out: &mut Vec<Action>) {
        let start = AtCommand::TcpStart {
            host: self.cfg.hmi_host.clone(),
            port: self.cfg.hmi_port,
        };
        let dialog = [
            AtCommand::Attention,
            AtCommand::QueryRegistration,
            AtCommand::AttachGprs,
            start,
        ];
        // an attached module only needs the socket reopened
        let skip = if self.modem.state() == ModemState::GprsAttached { 3 } else { 0 };
        for cmd in dialog.iter().skip(skip) {
            if self.modem.state() == ModemState::TcpOpen {
                break;
            }
            if !matches!(self.modem.submit_at(cmd, now), Ok(r) if r != AtResponse::Error) {
                break;
            }
        }
        if self.modem.state() == ModemState::TcpOpen {
            out.push(Action::Connected {
                epoch: self.modem.connection_epoch(),
            });
            self.begin_registration(out);
        } else {
            self.phase = Phase::Reconnecting;
            self.start_watchdog_toggle(now);
        }
    }

    fn begin_registration(&mut self, out: &mut Vec<Action>) {
        self.phase = Phase::Registering;
        self.stats.registrations += 1;
        self.register_deadline = None;
        let frame = self.originate(Message::Register {
            fw_version: self.cfg.fw_version,
            zone_count: self.cfg.zone_count,
        });
        self.send(frame, out);
    }

    /// Advances timers: ignition steps, modem boot and idle supervision,
    /// retries, acknowledgement timeouts, heartbeats and the watchdog.
    pub fn on_timer(&mut self, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if self.phase == Phase::Off {
            return out;
        }

        if let Some(mut plan) = self.boot {
            if let Some(p) = plan.power_at.filter(|&p| p <= now) {
                let _ = self.modem.apply_pin_event(PinEvent::PowerOn, p);
                plan.power_at = None;
            }
            if plan.power_at.is_none() && plan.low_at <= now && !plan.low_applied {
                let _ = self.modem.apply_pin_event(PinEvent::IgnitionLow, plan.low_at);
                plan.low_applied = true;
            }
            if plan.power_at.is_none() && plan.high_at <= now {
                let _ = self.modem.apply_pin_event(PinEvent::IgnitionHigh, plan.high_at);
                self.boot = None;
            } else {
                self.boot = Some(plan);
            }
        }

        if let Some(t) = self.toggle_release_at.filter(|&t| t <= now) {
            self.toggle_release_at = None;
            let _ = self.modem.apply_pin_event(PinEvent::IgnitionHigh, t);
        }

        for ev in self.modem.tick(now) {
            match ev {
                ModemEvent::BootCompleted => {
                    if self.phase == Phase::Boot {
                        self.phase = Phase::Connecting;
                    }
                    self.run_dialog(now, &mut out);
                }
                ModemEvent::IdleDisconnected | ModemEvent::LinkFailed => {
                    self.stats.connection_losses += 1;
                    self.phase = Phase::Reconnecting;
                    self.retry = None;
                    self.register_deadline = None;
                    if let Some(p) = self.pending.as_mut() {
                        p.last_sent_at = None;
                    }
                    out.push(Action::ConnectionLost(ev));
                    self.start_watchdog_toggle(now);
                }
            }
        }

        if let Some(t) = self.reboot_at.filter(|&t| t <= now) {
            self.reboot_at = None;
            let _ = self.modem.apply_pin_event(PinEvent::PowerOff, t);
            if let Some(p) = self.pending.as_mut() {
                p.last_sent_at = None;
            }
            self.retry = None;
            self.register_deadline = None;
            out.extend(self.power_on(now));
            return out;
        }

        if let Some((frame, due)) = self.retry {
            if due <= now {
                self.retry = None;
                let connected = matches!(self.phase, Phase::Registering | Phase::Online);
                let is_register = matches!(frame.message, Message::Register { .. });
                if connected && (is_register || self.phase == Phase::Online) {
                    self.send(OutFrame { retransmission: true, ..frame }, &mut out);
                }
            }
        }

        if self.register_deadline.is_some_and(|t| t <= now) {
            self.register_deadline = None;
            if self.phase == Phase::Registering {
                let frame = self.originate(Message::Register {
                    fw_version: self.cfg.fw_version,
                    zone_count: self.cfg.zone_count,
                });
                self.send(frame, &mut out);
            }
        }

        if self.phase == Phase::Online {
            if let Some(p) = self.pending {
                if let Some(t) = p.last_sent_at {
                    if now >= t + self.cfg.ack_timeout_s * 1000 {
                        self.stats.alarm_retransmissions += 1;
                        if let Some(pp) = self.pending.as_mut() {
                            pp.last_sent_at = Some(now);
                        }
                        self.send(p.frame(true), &mut out);
                    }
                }
            }

            if now >= self.last_heartbeat_at + self.cfg.heartbeat_period_s * 1000 {
                self.last_heartbeat_at = now;
                let frame = self.originate(Message::Heartbeat {
                    status: self.status(),
                });
                self.stats.heartbeats_sent += 1;
                self.send(frame, &mut out);
            }
        }

        if let Some(t) = self.next_watchdog_at.filter(|&t| t <= now) {
            let period = self.modem.config().watchdog_toggle_period_s * 1000;
            self.next_watchdog_at = Some(t + period);
            if self.boot.is_none() {
                self.start_watchdog_toggle(now);
            }
        }

        out
    }

    /// Outcome of the oldest unanswered [`Action::SendFrame`].
    pub fn on_send_result(&mut self, ok: bool, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(frame) = self.awaiting_result.pop_front() else {
            return out;
        };

        if ok {
            self.failures = 0;
            self.stats.frames_sent += 1;
            if matches!(self.retry, Some((f, _)) if f.seq == frame.seq) {
                self.retry = None;
            }
            match frame.message {
                Message::Heartbeat { .. } => {
                    self.outstanding_heartbeats.insert(frame.seq, now);
                }
                Message::Alarm { .. } => {
                    if let Some(p) = self.pending.as_mut().filter(|p| p.alarm.seq == frame.seq) {
                        p.last_sent_at = Some(now);
                    }
                }
                Message::Register { .. } => {
                    self.register_deadline = Some(now + self.cfg.ack_timeout_s * 1000);
                }
                _ => {}
            }
            return out;
        }

        self.failures += 1;
        self.stats.send_failures += 1;
        if self.failures > self.cfg.retry_threshold {
            self.failures = 0;
            self.reconnect(now, &mut out);
            return out;
        }

        let due = now + self.cfg.retry_delay_s * 1000;
        let keep_existing = matches!(
            self.retry,
            Some((f, _)) if matches!(f.message, Message::Alarm { .. })
                && !matches!(frame.message, Message::Alarm { .. })
        );
        if !keep_existing {
            self.retry = Some((frame, due));
        }
        out
    }

    /// Drop the socket and reopen it at once; the unacked alarm is kept and
    /// resent after re-registration.
    fn reconnect(&mut self, now: Millis, out: &mut Vec<Action>) {
        self.stats.reconnects += 1;
        out.push(Action::Disconnect);
        out.push(Action::Reconnect);
        self.retry = None;
        self.register_deadline = None;
        if let Some(p) = self.pending.as_mut() {
            p.last_sent_at = None;
        }
        if self.modem.state() == ModemState::TcpOpen {
            let _ = self.modem.submit_at(&AtCommand::TcpClose, now);
        }
        if self.modem.state() == ModemState::GprsAttached {
            self.run_dialog(now, out);
        } else {
            self.phase = Phase::Reconnecting;
            self.start_watchdog_toggle(now);
        }
    }

    fn reply(&mut self, message: Message, seq: u16, out: &mut Vec<Action>) {
        self.send(
            OutFrame {
                message,
                seq,
                retransmission: false,
            },
            out,
        );
    }

    pub fn on_frame(&mut self, frame: &Frame, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if frame.te_id != self.cfg.te_id || self.phase == Phase::Off {
            return out;
        }
        match frame.message {
            Message::RegisterAck => {
                if self.phase == Phase::Registering {
                    self.phase = Phase::Online;
                    self.register_deadline = None;
                    self.last_heartbeat_at = now;
                    if let Some(p) = self.pending.as_mut() {
                        p.last_sent_at = None;
                    }
                    if let Some(p) = self.pending {
                        if self.retry.is_none() {
                            self.send(p.frame(true), &mut out);
                        }
                    }
                }
            }
            Message::HeartbeatAck => {
                if self.outstanding_heartbeats.remove(&frame.seq).is_some() {
                    self.stats.heartbeats_acked += 1;
                }
            }
            Message::AlarmAck => {
                if self.pending.is_some_and(|p| p.alarm.seq == frame.seq) {
                    self.pending = None;
                    self.stats.alarms_acked += 1;
                    if matches!(self.retry, Some((f, _)) if f.seq == frame.seq) {
                        self.retry = None;
                    }
                    self.promote_backlog(&mut out);
                }
            }
            Message::Control { cmd } => {
                let result = match cmd {
                    ControlCmd::Arm => {
                        self.armed = true;
                        CONTROL_OK
                    }
                    ControlCmd::Disarm => {
                        self.armed = false;
                        CONTROL_OK
                    }
                    ControlCmd::SirenOn => {
                        self.siren = true;
                        CONTROL_OK
                    }
                    ControlCmd::SirenOff => {
                        self.siren = false;
                        CONTROL_OK
                    }
                    ControlCmd::Reboot => {
                        self.reboot_at = Some(now + REBOOT_GRACE_MS);
                        CONTROL_OK
                    }
                    ControlCmd::Unknown(_) => CONTROL_UNKNOWN,
                };
                self.reply(Message::ControlAck { result }, frame.seq, &mut out);
            }
            Message::StatusQuery => {
                let uptime_s = (now.saturating_sub(self.powered_at) / 1000) as u32;
                let status = self.status();
                self.reply(Message::StatusReport { status, uptime_s }, frame.seq, &mut out);
            }
            Message::Register { .. }
            | Message::Heartbeat { .. }
            | Message::Alarm { .. }
            | Message::ControlAck { .. }
            | Message::StatusReport { .. } => {}
        }
        out
    }

    fn promote_backlog(&mut self, out: &mut Vec<Action>) {
        if self.pending.is_some() {
            return;
        }
        if let Some(next) = self.backlog.pop_front() {
            self.pending = Some(next);
            if self.phase == Phase::Online {
                self.send(next.frame(false), out);
            }
        }
    }

    /// Raises an alarm when armed, or for fire-class sensors when those
    /// always alarm. The ALARM frame goes out at once if the terminal is
    /// online and no earlier alarm awaits acknowledgement; the SMS alert is
    /// always sent immediately.
    pub fn on_sensor(&mut self, ev: SensorEvent, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if self.phase == Phase::Off {
            return out;
        }
        let alarms = self.armed || (ev.kind.is_fire() && self.cfg.fire_sensors_always_alarm);
        if !alarms {
            return out;
        }
        let ts = self.cfg.clock_epoch_s.wrapping_add((now / 1000) as u32);
        let alarm = RaisedAlarm {
            seq: self.alloc_seq(),
            zone: ev.zone,
            kind: ev.kind,
            ts,
            at: now,
        };
        self.stats.alarms_raised += 1;
        out.push(Action::AlarmRaised(alarm));

        if self.cfg.channels.gprs {
            let entry = PendingAlarm {
                alarm,
                last_sent_at: None,
            };
            if self.pending.is_none() {
                self.pending = Some(entry);
                if self.phase == Phase::Online {
                    self.send(entry.frame(false), &mut out);
                }
            } else {
                self.backlog.push_back(entry);
            }
        }
        if self.cfg.channels.sms {
            let text = render_sms(&SmsEvent::Alert {
                zone: alarm.zone,
                kind: alarm.kind,
                ts,
            });
            self.stats.sms_sent += 1;
            out.push(Action::SendSms {
                to: self.cfg.user_phone.clone(),
                text,
            });
        }
        out
    }

    /// Handles an SMS from `from`. Only the configured user is obeyed;
    /// anything unparseable is dropped silently.
    pub fn handle_sms(&mut self, text: &str, from: &str, _now: Millis) -> Option<SmsText> {
        if from != self.cfg.user_phone || self.phase == Phase::Off {
            return None;
        }
        let cmd = parse_command(text).ok()?;
        self.stats.sms_handled += 1;
        let reply = match cmd {
            UserCommand::Arm => {
                self.armed = true;
                SmsEvent::ArmedOk
            }
            UserCommand::Disarm => {
                self.armed = false;
                SmsEvent::DisarmedOk
            }
            UserCommand::Status => SmsEvent::Status {
                armed: self.armed,
                battery: self.cfg.battery_level,
            },
        };
        self.stats.sms_sent += 1;
        Some(render_sms(&reply))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(te: &Terminal, message: Message, seq: u16) -> Frame {
        Frame {
            te_id: te.te_id(),
            seq,
            message,
        }
    }

    fn sent(actions: &[Action]) -> Vec<OutFrame> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::SendFrame(f) => Some(*f),
                _ => None,
            })
            .collect()
    }

    /// Drives a fresh terminal to Online at time `now`, acknowledging every
    /// send as successful.
    fn online() -> (Terminal, Millis) {
        let mut te = Terminal::new(TeConfig::for_te(TeId(7)), ModemConfig::default());
        let mut now = 0;
        let mut acts = te.power_on(now);
        loop {
            for f in sent(&acts) {
                te.on_send_result(true, now);
                if matches!(f.message, Message::Register { .. }) {
                    let ack = frame(&te, Message::RegisterAck, f.seq);
                    te.on_frame(&ack, now);
                }
            }
            if te.phase() == Phase::Online {
                return (te, now);
            }
            now = te.next_deadline().expect("deadline while booting");
            acts = te.on_timer(now);
        }
    }

    #[test]
    fn boots_connects_and_registers() {
        let (te, now) = online();
        // 10 ms delay + 110 ms pulse + 2000 ms boot
        assert_eq!(now, 2120);
        assert_eq!(te.modem().state(), ModemState::TcpOpen);
        assert!(te.modem().ignition_trace().is_valid());
        assert_eq!(te.failures(), 0);
    }

    #[test]
    fn armed_ir_alarm_sends_frame_then_sms() {
        let (mut te, now) = online();
        let t = now + 1000;
        let acts = te.on_sensor(SensorEvent { zone: 1, kind: AlarmType::Ir, at: t }, t);
        let ts = (t / 1000) as u32;
        assert_eq!(acts.len(), 3);
        assert!(matches!(acts[0], Action::AlarmRaised(_)));
        match acts[1] {
            Action::SendFrame(f) => assert_eq!(
                f.message,
                Message::Alarm { zone: 1, alarm_type: AlarmType::Ir, ts }
            ),
            ref other => panic!("expected frame, got {other:?}"),
        }
        match &acts[2] {
            Action::SendSms { to, text } => {
                assert_eq!(to, "user7");
                assert_eq!(text.as_str(), format!("ALARM ZONE 1 TYPE IR AT {ts}"));
            }
            other => panic!("expected sms, got {other:?}"),
        }
    }

    #[test]
    fn disarmed_ir_is_suppressed_but_smoke_alarms() {
        let (mut te, now) = online();
        te.armed = false;
        assert!(te.on_sensor(SensorEvent { zone: 1, kind: AlarmType::Ir, at: now }, now).is_empty());
        let acts = te.on_sensor(SensorEvent { zone: 2, kind: AlarmType::Smoke, at: now }, now);
        assert_eq!(sent(&acts).len(), 1);
        assert!(acts.iter().any(|a| matches!(a, Action::SendSms { .. })));
    }

    #[test]
    fn fourth_failure_reconnects() {
        let (mut te, now) = online();
        te.failures = 3;
        te.awaiting_result.push_back(OutFrame {
            message: Message::HeartbeatAck,
            seq: 99,
            retransmission: false,
        });
        let acts = te.on_send_result(false, now);
        assert_eq!(acts[0], Action::Disconnect);
        assert_eq!(acts[1], Action::Reconnect);
        assert_eq!(te.failures(), 0);
        assert_eq!(te.phase(), Phase::Registering);
        assert!(sent(&acts).iter().any(|f| matches!(f.message, Message::Register { .. })));
        assert_eq!(te.stats().reconnects, 1);
    }

    #[test]
    fn failure_schedules_retry_after_delay() {
        let (mut te, now) = online();
        let t = now + 60_000;
        let acts = te.on_timer(t);
        let hb = sent(&acts)[0];
        te.failures = 1;
        assert!(te.on_send_result(false, t).is_empty());
        assert_eq!(te.failures(), 2);
        assert_eq!(te.next_deadline(), Some(t + 2000));
        let acts = te.on_timer(t + 2000);
        let again = sent(&acts);
        assert_eq!(again.len(), 1);
        assert_eq!(again[0].seq, hb.seq);
        assert!(again[0].retransmission);
    }

    #[test]
    fn success_resets_counter() {
        let (mut te, now) = online();
        let t = now + 60_000;
        te.on_timer(t);
        te.failures = 2;
        te.on_send_result(true, t);
        assert_eq!(te.failures(), 0);
    }

    #[test]
    fn heartbeat_boundary() {
        let (mut te, now) = online();
        assert!(sent(&te.on_timer(now + 59_999)).is_empty());
        let acts = te.on_timer(now + 60_000);
        let f = sent(&acts);
        assert_eq!(f.len(), 1);
        assert!(matches!(f[0].message, Message::Heartbeat { .. }));
    }

    #[test]
    fn no_heartbeat_while_reconnecting() {
        let (mut te, now) = online();
        te.phase = Phase::Reconnecting;
        assert!(sent(&te.on_timer(now + 120_000)).is_empty());
    }

    #[test]
    fn control_commands() {
        let (mut te, now) = online();
        assert!(te.armed());
        let acts = te.on_frame(&frame(&te, Message::Control { cmd: ControlCmd::Disarm }, 40), now);
        assert!(!te.armed());
        let f = sent(&acts);
        assert_eq!(f[0].message, Message::ControlAck { result: CONTROL_OK });
        assert_eq!(f[0].seq, 40);

        te.on_frame(&frame(&te, Message::Control { cmd: ControlCmd::SirenOn }, 41), now);
        assert!(te.siren());
        let acts = te.on_frame(
            &frame(&te, Message::Control { cmd: ControlCmd::Unknown(0x77) }, 42),
            now,
        );
        assert_eq!(sent(&acts)[0].message, Message::ControlAck { result: CONTROL_UNKNOWN });
    }

    #[test]
    fn status_query_reports_status() {
        let (mut te, now) = online();
        let acts = te.on_frame(&frame(&te, Message::StatusQuery, 9), now + 5000);
        let f = sent(&acts);
        assert_eq!(
            f[0].message,
            Message::StatusReport {
                status: StatusByte::new(true, false, 15),
                uptime_s: 7
            }
        );
        assert_eq!(f[0].seq, 9);
    }

    #[test]
    fn alarm_ack_without_pending_is_noop() {
        let (mut te, now) = online();
        assert!(te.on_frame(&frame(&te, Message::AlarmAck, 3), now).is_empty());
    }

    #[test]
    fn reboot_acks_then_power_cycles() {
        let (mut te, now) = online();
        let acts = te.on_frame(&frame(&te, Message::Control { cmd: ControlCmd::Reboot }, 5), now);
        assert_eq!(sent(&acts)[0].message, Message::ControlAck { result: CONTROL_OK });
        te.on_send_result(true, now);
        te.on_timer(now + REBOOT_GRACE_MS);
        assert_eq!(te.phase(), Phase::Boot);
        assert_eq!(te.modem().state(), ModemState::Off);
    }

    #[test]
    fn sms_control() {
        let (mut te, now) = online();
        te.armed = false;
        assert_eq!(te.handle_sms("ARM", "user7", now).unwrap().as_str(), "OK ARMED");
        assert!(te.armed());
        assert_eq!(te.handle_sms("STATUS", "stranger", now), None);
        assert_eq!(te.handle_sms("DISARM", "user7", now).unwrap().as_str(), "OK DISARMED");
        assert_eq!(te.handle_sms("DISARM", "user7", now).unwrap().as_str(), "OK DISARMED");
        assert_eq!(
            te.handle_sms("STATUS", "user7", now).unwrap().as_str(),
            "STATUS DISARMED BAT 15"
        );
        assert_eq!(te.handle_sms("MAKE COFFEE", "user7", now), None);
    }

    #[test]
    fn unacked_alarm_survives_reconnect() {
        let (mut te, now) = online();
        let acts = te.on_sensor(SensorEvent { zone: 4, kind: AlarmType::Ir, at: now }, now);
        let alarm = sent(&acts)[0];
        te.on_send_result(true, now);
        // four consecutive heartbeat failures
        let mut t = now;
        for _ in 0..4 {
            t += 60_000;
            let acts = te.on_timer(t);
            for _ in sent(&acts) {
                te.on_send_result(false, t);
            }
        }
        assert_eq!(te.stats().reconnects, 1);
        assert_eq!(te.pending_alarm(), Some(alarm.seq));
        te.on_send_result(true, t); // REGISTER
        let acts = te.on_frame(&frame(&te, Message::RegisterAck, 0), t);
        let resent = sent(&acts);
        assert_eq!(resent.len(), 1);
        assert_eq!(resent[0].seq, alarm.seq);
        te.on_send_result(true, t);
        te.on_frame(&frame(&te, Message::AlarmAck, alarm.seq), t);
        assert_eq!(te.pending_alarm(), None);
    }

    #[test]
    fn alarm_retransmitted_after_ack_timeout() {
        let (mut te, now) = online();
        let acts = te.on_sensor(SensorEvent { zone: 4, kind: AlarmType::Smoke, at: now }, now);
        let alarm = sent(&acts)[0];
        te.on_send_result(true, now);
        let acts = te.on_timer(now + 5000);
        let again = sent(&acts);
        assert_eq!(again[0].seq, alarm.seq);
        assert!(again[0].retransmission);
    }

    #[test]
    fn second_alarm_waits_for_first_ack() {
        let (mut te, now) = online();
        let a = te.on_sensor(SensorEvent { zone: 1, kind: AlarmType::Ir, at: now }, now);
        te.on_send_result(true, now);
        let b = te.on_sensor(SensorEvent { zone: 2, kind: AlarmType::Ir, at: now }, now);
        assert!(sent(&b).is_empty());
        assert!(b.iter().any(|x| matches!(x, Action::SendSms { .. })));
        let first = sent(&a)[0].seq;
        let acts = te.on_frame(&frame(&te, Message::AlarmAck, first), now + 300);
        let f = sent(&acts);
        assert_eq!(f.len(), 1);
        assert!(matches!(f[0].message, Message::Alarm { zone: 2, .. }));
    }

    #[test]
    fn idle_disconnect_triggers_watchdog_restart() {
        let (mut te, now) = online();
        te.modem_mut().inject_link_failure();
        let acts = te.on_timer(now + 1);
        assert!(acts.contains(&Action::ConnectionLost(ModemEvent::LinkFailed)));
        assert_eq!(te.phase(), Phase::Reconnecting);
        let mut t = now + 1;
        let mut reg = None;
        for _ in 0..10 {
            t = te.next_deadline().unwrap();
            if let Some(f) = sent(&te.on_timer(t)).into_iter().find(|f| matches!(f.message, Message::Register { .. })) {
                reg = Some(f);
                break;
            }
        }
        assert!(reg.is_some());
        // 110 ms pulse + 2000 ms boot
        assert_eq!(t, now + 1 + IGNITION_PULSE_MS + 2000);
    }

    #[test]
    fn config_validation() {
        let m = ModemConfig::default();
        assert!(TeConfig::default().validate(&m).is_ok());
        let bad = TeConfig { heartbeat_period_s: 300, ..Default::default() };
        assert!(bad.validate(&m).is_err());
        let bad = TeConfig { retry_threshold: 0, ..Default::default() };
        assert!(bad.validate(&m).is_err());
    }
}
