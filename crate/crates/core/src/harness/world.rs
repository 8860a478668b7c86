//! Discrete-event world: every terminal with its modem and links, the HMI,
//! and the SMS gateway, driven by one virtual clock.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::clock::VirtualClock;
use super::link::{Link, Verdict};
use super::report::{self, Report};
use super::scenario::{FaultKind, OperatorAction, Scenario, ScenarioError};
use super::trace::{RecordKind, TraceWriter};
use crate::hmi::{api, ConnId, EventKind, Hmi, Outbound};
use crate::modem::{ModemState, SendResult};
use crate::protocol::{decode_frame, encode_frame, AlarmType, Frame, TeId};
use crate::smsgw::{SmsGateway, UserAgent};
use crate::terminal::{Action, Phase, SensorEvent, Terminal};
use crate::Millis;

#[derive(Debug)]
enum Ev {
    PowerUp(u32),
    TeWake(u32),
    Uplink { te: u32, epoch: u32, bytes: Vec<u8> },
    Downlink { te: u32, epoch: u32, bytes: Vec<u8> },
    Pump,
    Sweep,
    Sms,
    Sensor(usize),
    Operator(usize),
    Fault(usize),
}

pub(crate) struct TeSlot {
    pub term: Terminal,
    pub up: Link,
    pub down: Link,
    wake: Option<Millis>,
    /// Epoch of the socket the HMI side currently considers open.
    pub conn_epoch: Option<u32>,
    pub phase_log: Vec<(Millis, Phase)>,
    pub reconnect_times: Vec<Millis>,
}

impl TeSlot {
    /// Phase in effect at `t`.
    pub fn phase_at(&self, t: Millis) -> Phase {
        self.phase_log
            .iter()
            .take_while(|(at, _)| *at <= t)
            .last()
            .map_or(Phase::Off, |(_, p)| *p)
    }
}

/// One alarm decision and what became of it.
#[derive(Debug, Clone)]
pub(crate) struct AlarmRecord {
    pub te: u32,
    pub seq: u16,
    pub zone: u8,
    pub kind: AlarmType,
    pub ts: u32,
    pub raised_at: Millis,
    pub operator_at: Option<Millis>,
    pub operator_events: u32,
}

pub struct World {
    pub(crate) sc: Scenario,
    pub(crate) seed: u64,
    clock: VirtualClock<Ev>,
    rng: ChaCha8Rng,
    pub(crate) tes: Vec<TeSlot>,
    pub(crate) hmi: Hmi,
    pub(crate) sms: SmsGateway,
    trace: TraceWriter,
    phone_to_te: BTreeMap<String, u32>,
    pump_at: Option<Millis>,
    sms_wake: Option<Millis>,
    pub(crate) alarms: Vec<AlarmRecord>,
    alarm_index: BTreeMap<(u32, u16), usize>,
    hmi_events_seen: u64,
    /// HMI Offline transitions: terminal and time.
    pub(crate) offline_events: Vec<(u32, Millis)>,
    pub(crate) online_events: u64,
    external_out: Vec<Outbound>,
    end: Millis,
}

/// What a finished run produced.
pub struct RunOutcome {
    pub report: Report,
    pub trace: Vec<u8>,
}

impl World {
    /// Builds the world for `sc`. `seed` replaces the scenario's seed.
    pub fn new(sc: Scenario, seed: Option<u64>) -> Result<Self, ScenarioError> {
        let mut sc = sc;
        if let Some(s) = seed {
            sc.seed = s;
        }
        let seed = sc.seed;
        let trace = TraceWriter::new(seed, &sc.to_json());
        let mut hmi = Hmi::new(sc.hmi.clone());
        let mut sms = SmsGateway::new(sc.sms.clone());
        let mut clock = VirtualClock::new();
        let mut tes = Vec::with_capacity(sc.te_count as usize);
        let mut phone_to_te = BTreeMap::new();

        for te in 1..=sc.te_count {
            let cfg = sc.te_config(te)?;
            let links = sc.link_pair(te);
            hmi.provision(TeId(te));
            phone_to_te.insert(cfg.phone.clone(), te);
            let script: Vec<(Millis, String)> = sc
                .user_sms
                .iter()
                .filter(|s| s.te == te)
                .map(|s| (s.at_ms, s.text.clone()))
                .collect();
            if !script.is_empty() {
                sms.add_agent(UserAgent::new(cfg.user_phone.clone(), cfg.phone.clone(), script));
            }
            tes.push(TeSlot {
                term: Terminal::new(cfg, sc.modem),
                up: Link::new(links.uplink),
                down: Link::new(links.downlink),
                wake: None,
                conn_epoch: None,
                phase_log: Vec::new(),
                reconnect_times: Vec::new(),
            });
            clock.schedule((te as Millis - 1) * sc.boot_stagger_ms, Ev::PowerUp(te));
        }
        for (i, s) in sc.sensors.iter().enumerate() {
            clock.schedule(s.at_ms, Ev::Sensor(i));
        }
        for (i, o) in sc.operator.iter().enumerate() {
            clock.schedule(o.at_ms, Ev::Operator(i));
        }
        for (i, f) in sc.faults.iter().enumerate() {
            clock.schedule(f.at_ms, Ev::Fault(i));
        }
        clock.schedule(sc.hmi.sweep_period_s * 1000, Ev::Sweep);

        let end = sc.duration_ms;
        let mut w = Self {
            sc,
            seed,
            clock,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tes,
            hmi,
            sms,
            trace,
            phone_to_te,
            pump_at: None,
            sms_wake: None,
            alarms: Vec::new(),
            alarm_index: BTreeMap::new(),
            hmi_events_seen: 0,
            offline_events: Vec::new(),
            online_events: 0,
            external_out: Vec::new(),
            end,
        };
        w.schedule_sms();
        Ok(w)
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn end(&self) -> Millis {
        self.end
    }

    pub fn hmi(&self) -> &Hmi {
        &self.hmi
    }

    pub fn terminal(&self, te: u32) -> Option<&Terminal> {
        self.tes.get(te.checked_sub(1)? as usize).map(|s| &s.term)
    }

    /// Runs every event due by `limit` and leaves the clock at `limit`.
    pub fn step_until(&mut self, limit: Millis) {
        while let Some((now, ev)) = self.clock.pop_until(limit) {
            self.handle(now, ev);
        }
        self.clock.advance_to(limit);
    }

    /// Runs to the scenario's end and evaluates it.
    pub fn run(mut self) -> RunOutcome {
        self.step_until(self.end);
        self.finish()
    }

    pub fn finish(self) -> RunOutcome {
        let report = report::build(&self);
        RunOutcome {
            report,
            trace: self.trace.finish(),
        }
    }

    fn slot(&mut self, te: u32) -> &mut TeSlot {
        &mut self.tes[te as usize - 1]
    }

    fn handle(&mut self, now: Millis, ev: Ev) {
        match ev {
            Ev::PowerUp(te) => {
                let acts = self.slot(te).term.power_on(now);
                self.apply(te, acts, now);
            }
            Ev::TeWake(te) => {
                if self.slot(te).wake != Some(now) {
                    return;
                }
                self.slot(te).wake = None;
                let acts = self.slot(te).term.on_timer(now);
                self.apply(te, acts, now);
            }
            Ev::Uplink { te, epoch, bytes } => self.on_uplink(te, epoch, bytes, now),
            Ev::Downlink { te, epoch, bytes } => self.on_downlink(te, epoch, bytes, now),
            Ev::Pump => {
                self.pump_at = None;
                let r = self.hmi.pump(now);
                self.after_hmi(now);
                if r.backlog > 0 {
                    self.schedule_pump(now + 1);
                }
            }
            Ev::Sweep => {
                self.hmi.sweep(now);
                self.after_hmi(now);
                self.clock.schedule(now + self.sc.hmi.sweep_period_s * 1000, Ev::Sweep);
            }
            Ev::Sms => {
                if self.sms_wake != Some(now) {
                    return;
                }
                self.sms_wake = None;
                self.on_sms(now);
            }
            Ev::Sensor(i) => {
                let s = self.sc.sensors[i];
                self.inject_sensor(s.te, s.zone, s.kind, now);
            }
            Ev::Operator(i) => {
                let o = self.sc.operator[i];
                match o.action {
                    OperatorAction::Control { te, cmd } => {
                        let _ = self.hmi.send_control(TeId(te), cmd, now);
                    }
                    OperatorAction::Query { te } => {
                        let _ = self.hmi.query_status(TeId(te), now);
                    }
                    OperatorAction::AckAlarms => {
                        let ids: Vec<u64> = self
                            .hmi
                            .alarm_events()
                            .filter(|(_, a)| !a.acked)
                            .map(|(e, _)| e.id)
                            .collect();
                        for id in ids {
                            let _ = self.hmi.ack_alarm(id, now);
                        }
                    }
                }
                self.after_hmi(now);
            }
            Ev::Fault(i) => {
                let f = self.sc.faults[i];
                self.inject_fault(f.te, f.fault, now);
            }
        }
    }

    pub fn inject_sensor(&mut self, te: u32, zone: u8, kind: AlarmType, now: Millis) {
        if te == 0 || te as usize > self.tes.len() {
            return;
        }
        let acts = self.slot(te).term.on_sensor(SensorEvent { zone, kind, at: now }, now);
        self.apply(te, acts, now);
    }

    pub fn inject_fault(&mut self, te: u32, fault: FaultKind, now: Millis) {
        if te == 0 || te as usize > self.tes.len() {
            return;
        }
        let name: &[u8] = match fault {
            FaultKind::Kill => b"kill",
            FaultKind::PowerOn => b"power_on",
            FaultKind::LinkFailure => b"link_failure",
        };
        self.trace.record(now, RecordKind::Fault, te, name);
        let acts = match fault {
            FaultKind::Kill => {
                self.slot(te).term.power_off(now);
                Vec::new()
            }
            FaultKind::PowerOn => {
                if self.slot(te).term.phase() == Phase::Off {
                    self.slot(te).term.power_on(now)
                } else {
                    Vec::new()
                }
            }
            FaultKind::LinkFailure => {
                self.slot(te).term.modem_mut().inject_link_failure();
                self.slot(te).term.on_timer(now)
            }
        };
        self.apply(te, acts, now);
    }

    /// Sends `text` from the terminal's user as if typed on their phone.
    pub fn inject_user_sms(&mut self, te: u32, text: &str, now: Millis) -> bool {
        let Some(slot) = self.tes.get(te.wrapping_sub(1) as usize) else {
            return false;
        };
        let cfg = slot.term.config();
        let (from, to) = (cfg.user_phone.clone(), cfg.phone.clone());
        match crate::protocol::SmsText::new(text) {
            Ok(t) => {
                self.submit_sms(&from, &to, t, te, now);
                true
            }
            Err(_) => false,
        }
    }

    /// Routes an operator API call and carries out its effects.
    pub fn api(&mut self, method: &str, target: &str, body: &[u8]) -> api::ApiResponse {
        let now = self.now();
        let r = api::handle(&mut self.hmi, method, target, body, now);
        self.after_hmi(now);
        r
    }

    /// A frame from a real TCP terminal.
    pub fn external_frame(&mut self, conn: u64, frame: Frame) {
        let now = self.now();
        self.hmi.submit(ConnId::Tcp(conn), frame, now);
        self.schedule_pump(now);
    }

    pub fn external_closed(&mut self, conn: u64) {
        self.hmi.close(ConnId::Tcp(conn));
    }

    /// Frames the HMI addressed to real TCP connections.
    pub fn take_external_outbound(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.external_out)
    }

    pub fn subscribe(&mut self) -> std::sync::mpsc::Receiver<crate::hmi::HmiEvent> {
        self.hmi.subscribe()
    }

    fn schedule_pump(&mut self, at: Millis) {
        if self.pump_at.is_none_or(|p| p > at) {
            self.pump_at = Some(at);
            self.clock.schedule(at, Ev::Pump);
        }
    }

    fn schedule_sms(&mut self) {
        if let Some(d) = self.sms.next_deadline() {
            if self.sms_wake.is_none_or(|w| d < w) {
                self.sms_wake = Some(d);
                self.clock.schedule(d, Ev::Sms);
            }
        }
    }

    fn reschedule_te(&mut self, te: u32, now: Millis) {
        let slot = &mut self.tes[te as usize - 1];
        let Some(mut d) = slot.term.next_deadline() else {
            return;
        };
        if d <= now && slot.wake.is_none() {
            // deadline already serviced at `now`
            d = now + 1;
        }
        if slot.wake.is_none_or(|w| d < w) {
            slot.wake = Some(d);
            self.clock.schedule(d, Ev::TeWake(te));
        }
    }

    fn log_phase(&mut self, te: u32, now: Millis) {
        let slot = &mut self.tes[te as usize - 1];
        let p = slot.term.phase();
        if slot.phase_log.last().map(|(_, q)| *q) != Some(p) {
            slot.phase_log.push((now, p));
            let name = format!("{p:?}");
            self.trace.record(now, RecordKind::Phase, te, name.as_bytes());
        }
    }

    fn apply(&mut self, te: u32, actions: Vec<Action>, now: Millis) {
        let mut work: VecDeque<Action> = actions.into();
        while let Some(a) = work.pop_front() {
            match a {
                Action::SendFrame(f) => {
                    let ok = self.send_uplink(te, f.message, f.seq, now);
                    let more = self.slot(te).term.on_send_result(ok, now);
                    work.extend(more);
                }
                Action::SendSms { to, text } => {
                    let from = self.slot(te).term.config().phone.clone();
                    self.submit_sms(&from, &to, text, te, now);
                }
                Action::AlarmRaised(a) => {
                    let mut p = Vec::with_capacity(8);
                    p.extend_from_slice(&a.seq.to_be_bytes());
                    p.push(a.zone);
                    p.push(a.kind.code());
                    p.extend_from_slice(&a.ts.to_be_bytes());
                    self.trace.record(now, RecordKind::AlarmRaised, te, &p);
                    self.alarm_index.insert((te, a.seq), self.alarms.len());
                    self.alarms.push(AlarmRecord {
                        te,
                        seq: a.seq,
                        zone: a.zone,
                        kind: a.kind,
                        ts: a.ts,
                        raised_at: a.at,
                        operator_at: None,
                        operator_events: 0,
                    });
                }
                Action::Disconnect | Action::ConnectionLost(_) => {
                    if let Some(e) = self.slot(te).conn_epoch.take() {
                        self.hmi.close(ConnId::Sim { te: TeId(te), epoch: e });
                    }
                }
                Action::Reconnect => {
                    self.slot(te).reconnect_times.push(now);
                    self.trace.record(now, RecordKind::Reconnect, te, &[]);
                }
                Action::Connected { epoch } => {
                    self.slot(te).conn_epoch = Some(epoch);
                    self.hmi.open(ConnId::Sim { te: TeId(te), epoch }, now);
                }
            }
            self.log_phase(te, now);
        }
        self.log_phase(te, now);
        self.reschedule_te(te, now);
    }

    /// Offers a frame to the modem and uplink. Returns whether the send succeeded.
    fn send_uplink(&mut self, te: u32, msg: crate::protocol::Message, seq: u16, now: Millis) -> bool {
        let bytes = encode_frame(&msg, TeId(te), seq).expect("terminal frames fit the payload limit");
        let slot = &mut self.tes[te as usize - 1];
        let rng = &mut self.rng;
        let up = &mut slot.up;
        let res = slot
            .term
            .modem_mut()
            .tcp_send(&bytes, now, |departs| up.judge(departs, rng) == Verdict::Pass);
        match res {
            Ok(SendResult::Accepted { departs_at, .. }) => {
                slot.up.record_sent();
                let arrival = slot.up.arrival(departs_at, &mut self.rng);
                let epoch = slot.term.modem().connection_epoch();
                self.trace.record(now, RecordKind::UplinkSent, te, &bytes);
                self.clock.schedule(arrival, Ev::Uplink { te, epoch, bytes });
                true
            }
            Ok(SendResult::Failed) | Err(_) => {
                slot.up.record_refused();
                self.trace.record(now, RecordKind::SendRefused, te, &bytes);
                false
            }
        }
    }

    fn on_uplink(&mut self, te: u32, epoch: u32, bytes: Vec<u8>, now: Millis) {
        let slot = &mut self.tes[te as usize - 1];
        let live = slot.conn_epoch == Some(epoch);
        slot.up.record_arrival(live);
        if !live {
            self.trace.record(now, RecordKind::Dropped, te, &bytes);
            return;
        }
        self.trace.record(now, RecordKind::UplinkDelivered, te, &bytes);
        match decode_frame(&bytes) {
            Ok(d) => {
                self.hmi.submit(ConnId::Sim { te: TeId(te), epoch }, d.frame, now);
                self.schedule_pump(now);
            }
            Err(_) => unreachable!("uplink carries whole encoded frames"),
        }
    }

    fn on_downlink(&mut self, te: u32, epoch: u32, bytes: Vec<u8>, now: Millis) {
        let slot = &mut self.tes[te as usize - 1];
        let live = slot.conn_epoch == Some(epoch)
            && slot.term.modem().state() == ModemState::TcpOpen
            && slot.term.modem().connection_epoch() == epoch;
        slot.down.record_arrival(live);
        if !live {
            self.trace.record(now, RecordKind::Dropped, te, &bytes);
            return;
        }
        self.trace.record(now, RecordKind::DownlinkDelivered, te, &bytes);
        let frame = decode_frame(&bytes).expect("downlink carries whole encoded frames").frame;
        let acts = self.slot(te).term.on_frame(&frame, now);
        self.apply(te, acts, now);
    }

    /// Routes HMI output and records new HMI events.
    fn after_hmi(&mut self, now: Millis) {
        for out in self.hmi.take_outbound() {
            match out.conn {
                ConnId::Sim { te, epoch } => self.send_downlink(te.0, epoch, out.frame, now),
                ConnId::Tcp(_) => self.external_out.push(out),
            }
        }
        let fresh: Vec<_> = self.hmi.events_since(self.hmi_events_seen).to_vec();
        self.hmi_events_seen += fresh.len() as u64;
        for ev in fresh {
            let te = ev.te_id.0;
            let json = serde_json::to_vec(&ev).expect("events serialize");
            self.trace.record(now, RecordKind::HmiEvent, te, &json);
            match ev.kind {
                EventKind::Alarm(a) => {
                    if let Some(&i) = self.alarm_index.get(&(te, a.seq)) {
                        let rec = &mut self.alarms[i];
                        rec.operator_events += 1;
                        rec.operator_at.get_or_insert(ev.at);
                    }
                }
                EventKind::Offline => self.offline_events.push((te, ev.at)),
                EventKind::Online => self.online_events += 1,
                _ => {}
            }
        }
    }

    fn send_downlink(&mut self, te: u32, epoch: u32, frame: Frame, now: Millis) {
        let Some(slot) = self.tes.get_mut(te.wrapping_sub(1) as usize) else {
            return;
        };
        let bytes = encode_frame(&frame.message, frame.te_id, frame.seq).expect("hmi frames fit");
        if slot.down.judge(now, &mut self.rng) != Verdict::Pass {
            slot.down.record_lost();
            self.trace.record(now, RecordKind::Dropped, te, &bytes);
            return;
        }
        slot.down.record_sent();
        let arrival = slot.down.arrival(now, &mut self.rng);
        self.trace.record(now, RecordKind::DownlinkSent, te, &bytes);
        self.clock.schedule(arrival, Ev::Downlink { te, epoch, bytes });
    }

    fn submit_sms(&mut self, from: &str, to: &str, text: crate::protocol::SmsText, te: u32, now: Millis) {
        let mut p = Vec::new();
        p.extend_from_slice(from.as_bytes());
        p.push(0);
        p.extend_from_slice(to.as_bytes());
        p.push(0);
        p.extend_from_slice(text.as_str().as_bytes());
        self.trace.record(now, RecordKind::SmsSubmitted, te, &p);
        self.sms.submit(from, to, text, now);
        self.schedule_sms();
    }

    fn on_sms(&mut self, now: Millis) {
        for id in self.sms.drive_agents(now) {
            self.trace.record(now, RecordKind::SmsSubmitted, 0, &id.to_be_bytes());
        }
        for msg in self.sms.deliver_due(now) {
            let te = self.phone_to_te.get(&msg.to).copied();
            self.trace
                .record(now, RecordKind::SmsDelivered, te.unwrap_or(0), msg.text.as_str().as_bytes());
            if let Some(te) = te {
                let reply = self.slot(te).term.handle_sms(msg.text.as_str(), &msg.from, now);
                if let Some(reply) = reply {
                    let from = self.slot(te).term.config().phone.clone();
                    self.submit_sms(&from, &msg.from, reply, te, now);
                }
                self.reschedule_te(te, now);
            }
        }
        self.schedule_sms();
    }
}
