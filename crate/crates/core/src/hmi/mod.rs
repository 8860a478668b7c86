//! Multi-session HMI server.
//!
//! Each TE connection is a session with its own inbox. Sessions with pending
//! frames sit in a weighted time-slice queue; one [`Hmi::pump`] call runs a
//! single round of that queue, spending one tick per processed frame.
//! The server keeps a registry of terminals, an append-only event log for
//! operators, and operator requests (control, status query) correlated with
//! the terminal's reply by sequence number.

pub mod api;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::protocol::{AlarmType, ControlCmd, Frame, Message, StatusByte, TeId};
use crate::scheduler::{TaskId, DEFAULT_ROUND_BUDGET};
use crate::{Millis, TaskQueue64};

/// Identifies one transport connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnId {
    /// Simulated socket: the terminal and its modem's connection epoch.
    Sim { te: TeId, epoch: u32 },
    /// Real TCP connection, numbered by the listener.
    Tcp(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmiConfig {
    /// A terminal not heard from for strictly longer than this goes Offline.
    pub offline_after_s: u64,
    pub sweep_period_s: u64,
    /// Frames processed per scheduler round.
    pub round_budget: u64,
    /// Recent alarm seqs remembered per terminal for duplicate suppression.
    pub dedup_window: usize,
    pub request_timeout_s: u64,
}

impl Default for HmiConfig {
    fn default() -> Self {
        Self {
            offline_after_s: 180,
            sweep_period_s: 5,
            round_budget: DEFAULT_ROUND_BUDGET,
            dedup_window: 64,
            request_timeout_s: 10,
        }
    }
}

impl HmiConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sweep_period_s == 0 {
            return Err("sweep_period_s must be positive".into());
        }
        if self.round_budget == 0 {
            return Err("round_budget must be positive".into());
        }
        if self.offline_after_s == 0 {
            return Err("offline_after_s must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeState {
    /// Provisioned but never registered.
    Unknown,
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlarmEvent {
    pub seq: u16,
    pub zone: u8,
    pub kind: AlarmType,
    /// Terminal timestamp, unix seconds.
    pub ts: u32,
    pub acked: bool,
    pub acked_at: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Alarm(AlarmEvent),
    AlarmAcked { event_id: u64 },
    Online,
    Offline,
    ControlResult { request_id: u64, cmd: ControlCmd, result: u8 },
    StatusReport { request_id: Option<u64>, status: StatusByte, uptime_s: u32 },
    RequestTimedOut { request_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HmiEvent {
    pub id: u64,
    pub at: Millis,
    pub te_id: TeId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Control(ControlCmd),
    StatusQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RequestState {
    /// Terminal not connected; delivered when it next registers.
    QueuedOffline,
    Sent,
    Completed { result: u8 },
    Reported { status: StatusByte, uptime_s: u32 },
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Request {
    pub id: u64,
    pub te_id: TeId,
    pub kind: RequestKind,
    pub seq: Option<u16>,
    pub issued_at: Millis,
    pub sent_at: Option<Millis>,
    #[serde(flatten)]
    pub state: RequestState,
}

/// Operator-facing summary of one terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TeView {
    pub te_id: TeId,
    pub state: TeState,
    pub last_seen: Option<Millis>,
    pub fw_version: Option<u8>,
    pub zone_count: Option<u8>,
    pub status: Option<StatusByte>,
    pub uptime_s: Option<u32>,
    pub connected: bool,
    pub queued_requests: usize,
}

/// A frame the server wants delivered to a terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outbound {
    pub conn: ConnId,
    pub frame: Frame,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HmiStats {
    pub frames_in: u64,
    pub frames_processed: u64,
    pub frames_dropped: u64,
    pub duplicate_alarms: u64,
    pub rounds: u64,
    pub sessions_opened: u64,
    pub sessions_closed: u64,
    pub sessions_superseded: u64,
    pub heartbeats_acked: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HmiError {
    #[error("unknown terminal {0}")]
    UnknownTe(TeId),
    #[error("no event {0}")]
    NoSuchEvent(u64),
    #[error("event {0} is not an alarm")]
    NotAnAlarm(u64),
    #[error("no request {0}")]
    NoSuchRequest(u64),
}

#[derive(Debug)]
struct Session {
    conn: ConnId,
    te_id: Option<TeId>,
    opened_at: Millis,
    inbox: VecDeque<Frame>,
}

#[derive(Debug)]
struct TeRecord {
    state: TeState,
    session: Option<u64>,
    last_seen: Option<Millis>,
    fw_version: Option<u8>,
    zone_count: Option<u8>,
    status: Option<StatusByte>,
    uptime_s: Option<u32>,
    next_seq: u16,
    recent_alarms: VecDeque<u16>,
    queued: VecDeque<u64>,
}

impl TeRecord {
    fn new() -> Self {
        Self {
            state: TeState::Unknown,
            session: None,
            last_seen: None,
            fw_version: None,
            zone_count: None,
            status: None,
            uptime_s: None,
            next_seq: 1,
            recent_alarms: VecDeque::new(),
            queued: VecDeque::new(),
        }
    }
}

/// Result of one [`Hmi::pump`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PumpResult {
    pub processed: u64,
    /// Frames still waiting in some inbox.
    pub backlog: u64,
}

pub struct Hmi {
    cfg: HmiConfig,
    sessions: BTreeMap<u64, Session>,
    by_conn: BTreeMap<ConnId, u64>,
    next_session: u64,
    queue: TaskQueue64,
    tes: BTreeMap<TeId, TeRecord>,
    events: Vec<HmiEvent>,
    requests: BTreeMap<u64, Request>,
    pending_by_seq: BTreeMap<(TeId, u16), u64>,
    next_request: u64,
    outbox: Vec<Outbound>,
    subscribers: Vec<mpsc::Sender<HmiEvent>>,
    stats: HmiStats,
    /// Whether frames from unprovisioned terminals may register.
    open_registration: bool,
}

impl Hmi {
    pub fn new(cfg: HmiConfig) -> Self {
        let queue = TaskQueue64::new(cfg.round_budget);
        Self {
            cfg,
            sessions: BTreeMap::new(),
            by_conn: BTreeMap::new(),
            next_session: 1,
            queue,
            tes: BTreeMap::new(),
            events: Vec::new(),
            requests: BTreeMap::new(),
            pending_by_seq: BTreeMap::new(),
            next_request: 1,
            outbox: Vec::new(),
            subscribers: Vec::new(),
            stats: HmiStats::default(),
            open_registration: true,
        }
    }

    pub fn config(&self) -> &HmiConfig {
        &self.cfg
    }

    pub fn stats(&self) -> HmiStats {
        self.stats
    }

    /// Restricts registration to provisioned terminals.
    pub fn set_open_registration(&mut self, open: bool) {
        self.open_registration = open;
    }

    /// Makes a terminal known before it first registers.
    pub fn provision(&mut self, te_id: TeId) {
        self.tes.entry(te_id).or_insert_with(TeRecord::new);
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Open sessions bound to `te_id`.
    pub fn sessions_for(&self, te_id: TeId) -> usize {
        self.sessions.values().filter(|s| s.te_id == Some(te_id)).count()
    }

    /// Connections with an open session, in order.
    pub fn open_connections(&self) -> Vec<ConnId> {
        self.by_conn.keys().copied().collect()
    }

    pub fn te_state(&self, te_id: TeId) -> Option<TeState> {
        self.tes.get(&te_id).map(|r| r.state)
    }

    pub fn open(&mut self, conn: ConnId, now: Millis) -> u64 {
        if let Some(&id) = self.by_conn.get(&conn) {
            return id;
        }
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(
            id,
            Session {
                conn,
                te_id: None,
                opened_at: now,
                inbox: VecDeque::new(),
            },
        );
        self.by_conn.insert(conn, id);
        self.stats.sessions_opened += 1;
        id
    }

    /// Drops a connection's session and any frames it had queued.
    pub fn close(&mut self, conn: ConnId) {
        if let Some(id) = self.by_conn.get(&conn).copied() {
            self.close_session(id);
        }
    }

    fn close_session(&mut self, id: u64) {
        let Some(s) = self.sessions.remove(&id) else {
            return;
        };
        self.by_conn.remove(&s.conn);
        self.queue.remove(id as TaskId);
        self.stats.frames_dropped += s.inbox.len() as u64;
        self.stats.sessions_closed += 1;
        if let Some(r) = s.te_id.and_then(|t| self.tes.get_mut(&t)) {
            if r.session == Some(id) {
                r.session = None;
            }
        }
    }

    /// Opening time of the session on `conn`.
    pub fn session_opened_at(&self, conn: ConnId) -> Option<Millis> {
        self.by_conn.get(&conn).map(|id| self.sessions[id].opened_at)
    }

    /// Queues a decoded frame on the connection's session, opening it if needed.
    pub fn submit(&mut self, conn: ConnId, frame: Frame, now: Millis) {
        let id = self.open(conn, now);
        self.stats.frames_in += 1;
        self.sessions.get_mut(&id).expect("open session").inbox.push_back(frame);
        if !self.queue.add_work(id as TaskId, 1) {
            self.queue.push(id as TaskId, 1);
        }
    }

    /// Frames waiting across all sessions.
    pub fn backlog(&self) -> u64 {
        self.queue.total_work()
    }

    /// Runs one scheduler round: slices are granted head first until the
    /// round budget is spent or no session has work.
    pub fn pump(&mut self, now: Millis) -> PumpResult {
        let budget = self.queue.round_budget();
        let mut processed = 0u64;
        while processed < budget {
            let Ok(slice) = self.queue.next_slice() else {
                break;
            };
            let sid = slice.task_id;
            let mut used = 0;
            while used < slice.ticks {
                let Some(frame) = self.sessions.get_mut(&sid).and_then(|s| s.inbox.pop_front()) else {
                    break;
                };
                used += 1;
                self.process(sid, frame, now);
                if !self.sessions.contains_key(&sid) {
                    break;
                }
            }
            processed += used;
            // a session closed mid-slice has already left the queue
            if self.queue.contains(sid) {
                let _ = self.queue.run_slice(used);
            }
        }
        if processed > 0 {
            self.stats.rounds += 1;
        }
        PumpResult {
            processed,
            backlog: self.queue.total_work(),
        }
    }

    fn reply(&mut self, sid: u64, te_id: TeId, seq: u16, message: Message) {
        if let Some(s) = self.sessions.get(&sid) {
            self.outbox.push(Outbound {
                conn: s.conn,
                frame: Frame { te_id, seq, message },
            });
        }
    }

    fn publish(&mut self, at: Millis, te_id: TeId, kind: EventKind) -> u64 {
        let id = self.events.len() as u64 + 1;
        let ev = HmiEvent { id, at, te_id, kind };
        self.events.push(ev);
        self.subscribers.retain(|tx| tx.send(ev).is_ok());
        id
    }

    fn set_state(&mut self, te_id: TeId, state: TeState, now: Millis) {
        let Some(r) = self.tes.get_mut(&te_id) else {
            return;
        };
        if r.state == state {
            return;
        }
        r.state = state;
        let kind = match state {
            TeState::Online => EventKind::Online,
            _ => EventKind::Offline,
        };
        self.publish(now, te_id, kind);
    }

    fn process(&mut self, sid: u64, frame: Frame, now: Millis) {
        self.stats.frames_processed += 1;
        let te_id = frame.te_id;
        let bound = self.sessions.get(&sid).and_then(|s| s.te_id);

        if let Message::Register { fw_version, zone_count } = frame.message {
            if bound.is_some_and(|t| t != te_id) {
                self.stats.frames_dropped += 1;
                return;
            }
            if !self.open_registration && !self.tes.contains_key(&te_id) {
                self.stats.frames_dropped += 1;
                return;
            }
            let old = {
                let r = self.tes.entry(te_id).or_insert_with(TeRecord::new);
                let old = r.session.filter(|&o| o != sid);
                r.session = Some(sid);
                r.last_seen = Some(now);
                r.fw_version = Some(fw_version);
                r.zone_count = Some(zone_count);
                old
            };
            if let Some(old) = old {
                self.stats.sessions_superseded += 1;
                self.close_session(old);
            }
            if let Some(s) = self.sessions.get_mut(&sid) {
                s.te_id = Some(te_id);
            }
            self.set_state(te_id, TeState::Online, now);
            self.reply(sid, te_id, frame.seq, Message::RegisterAck);
            self.flush_queued(te_id, now);
            return;
        }

        if bound != Some(te_id) {
            self.stats.frames_dropped += 1;
            return;
        }
        if let Some(r) = self.tes.get_mut(&te_id) {
            r.last_seen = Some(now);
        }

        match frame.message {
            Message::Heartbeat { status } => {
                if let Some(r) = self.tes.get_mut(&te_id) {
                    r.status = Some(status);
                }
                self.set_state(te_id, TeState::Online, now);
                self.stats.heartbeats_acked += 1;
                self.reply(sid, te_id, frame.seq, Message::HeartbeatAck);
            }
            Message::Alarm { zone, alarm_type, ts } => {
                self.reply(sid, te_id, frame.seq, Message::AlarmAck);
                let window = self.cfg.dedup_window.max(1);
                let r = self.tes.get_mut(&te_id).expect("bound terminal is registered");
                if r.recent_alarms.contains(&frame.seq) {
                    self.stats.duplicate_alarms += 1;
                    return;
                }
                r.recent_alarms.push_back(frame.seq);
                while r.recent_alarms.len() > window {
                    r.recent_alarms.pop_front();
                }
                self.publish(
                    now,
                    te_id,
                    EventKind::Alarm(AlarmEvent {
                        seq: frame.seq,
                        zone,
                        kind: alarm_type,
                        ts,
                        acked: false,
                        acked_at: None,
                    }),
                );
            }
            Message::ControlAck { result } => {
                if let Some(rid) = self.pending_by_seq.remove(&(te_id, frame.seq)) {
                    let req = self.requests.get_mut(&rid).expect("indexed request");
                    if let RequestKind::Control(cmd) = req.kind {
                        req.state = RequestState::Completed { result };
                        self.publish(now, te_id, EventKind::ControlResult { request_id: rid, cmd, result });
                    }
                }
            }
            Message::StatusReport { status, uptime_s } => {
                if let Some(r) = self.tes.get_mut(&te_id) {
                    r.status = Some(status);
                    r.uptime_s = Some(uptime_s);
                }
                let rid = self.pending_by_seq.remove(&(te_id, frame.seq));
                if let Some(req) = rid.and_then(|id| self.requests.get_mut(&id)) {
                    req.state = RequestState::Reported { status, uptime_s };
                }
                self.publish(now, te_id, EventKind::StatusReport { request_id: rid, status, uptime_s });
            }
            _ => {
                self.stats.frames_dropped += 1;
            }
        }
    }

    /// Marks silent terminals Offline and closes their sessions, then
    /// expires unanswered requests. Returns terminals that went Offline.
    pub fn sweep(&mut self, now: Millis) -> Vec<TeId> {
        let limit = self.cfg.offline_after_s * 1000;
        let stale: Vec<TeId> = self
            .tes
            .iter()
            .filter(|(_, r)| {
                r.state == TeState::Online && r.last_seen.is_some_and(|t| now - t.min(now) > limit)
            })
            .map(|(&t, _)| t)
            .collect();
        for &te in &stale {
            if let Some(sid) = self.tes.get(&te).and_then(|r| r.session) {
                self.close_session(sid);
            }
            self.set_state(te, TeState::Offline, now);
        }
        self.expire_requests(now);
        stale
    }

    pub fn expire_requests(&mut self, now: Millis) {
        let timeout = self.cfg.request_timeout_s * 1000;
        let expired: Vec<u64> = self
            .requests
            .values()
            .filter(|r| r.state == RequestState::Sent && r.sent_at.is_some_and(|t| now >= t + timeout))
            .map(|r| r.id)
            .collect();
        for id in expired {
            let req = self.requests.get_mut(&id).expect("listed request");
            req.state = RequestState::TimedOut;
            let (te, seq) = (req.te_id, req.seq);
            if let Some(seq) = seq {
                self.pending_by_seq.remove(&(te, seq));
            }
            self.publish(now, te, EventKind::RequestTimedOut { request_id: id });
        }
    }

    fn connected_session(&self, te_id: TeId) -> Option<u64> {
        self.tes.get(&te_id).and_then(|r| r.session)
    }

    fn dispatch(&mut self, rid: u64, sid: u64, now: Millis) {
        let req = self.requests.get_mut(&rid).expect("dispatching known request");
        let te_id = req.te_id;
        let rec = self.tes.get_mut(&te_id).expect("request for known terminal");
        let seq = rec.next_seq;
        rec.next_seq = rec.next_seq.wrapping_add(1).max(1);
        let message = match req.kind {
            RequestKind::Control(cmd) => Message::Control { cmd },
            RequestKind::StatusQuery => Message::StatusQuery,
        };
        req.seq = Some(seq);
        req.sent_at = Some(now);
        req.state = RequestState::Sent;
        self.pending_by_seq.insert((te_id, seq), rid);
        self.reply(sid, te_id, seq, message);
    }

    fn flush_queued(&mut self, te_id: TeId, now: Millis) {
        let Some(sid) = self.connected_session(te_id) else {
            return;
        };
        let queued: Vec<u64> = self
            .tes
            .get_mut(&te_id)
            .map(|r| r.queued.drain(..).collect())
            .unwrap_or_default();
        for rid in queued {
            self.dispatch(rid, sid, now);
        }
    }

    fn new_request(&mut self, te_id: TeId, kind: RequestKind, now: Millis) -> Result<u64, HmiError> {
        if !self.tes.contains_key(&te_id) {
            return Err(HmiError::UnknownTe(te_id));
        }
        let id = self.next_request;
        self.next_request += 1;
        self.requests.insert(
            id,
            Request {
                id,
                te_id,
                kind,
                seq: None,
                issued_at: now,
                sent_at: None,
                state: RequestState::QueuedOffline,
            },
        );
        match self.connected_session(te_id) {
            Some(sid) if self.tes[&te_id].state == TeState::Online => self.dispatch(id, sid, now),
            _ => self.tes.get_mut(&te_id).expect("checked").queued.push_back(id),
        }
        Ok(id)
    }

    /// Sends CONTROL now, or queues it until the terminal reconnects.
    pub fn send_control(&mut self, te_id: TeId, cmd: ControlCmd, now: Millis) -> Result<u64, HmiError> {
        self.new_request(te_id, RequestKind::Control(cmd), now)
    }

    pub fn query_status(&mut self, te_id: TeId, now: Millis) -> Result<u64, HmiError> {
        self.new_request(te_id, RequestKind::StatusQuery, now)
    }

    pub fn request(&self, id: u64) -> Result<&Request, HmiError> {
        self.requests.get(&id).ok_or(HmiError::NoSuchRequest(id))
    }

    pub fn te_view(&self, te_id: TeId) -> Option<TeView> {
        self.tes.get(&te_id).map(|r| TeView {
            te_id,
            state: r.state,
            last_seen: r.last_seen,
            fw_version: r.fw_version,
            zone_count: r.zone_count,
            status: r.status,
            uptime_s: r.uptime_s,
            connected: r.session.is_some(),
            queued_requests: r.queued.len(),
        })
    }

    pub fn list_tes(&self) -> Vec<TeView> {
        self.tes.keys().filter_map(|&t| self.te_view(t)).collect()
    }

    pub fn ack_alarm(&mut self, event_id: u64, now: Millis) -> Result<(), HmiError> {
        let idx = event_id
            .checked_sub(1)
            .map(|i| i as usize)
            .filter(|&i| i < self.events.len())
            .ok_or(HmiError::NoSuchEvent(event_id))?;
        let ev = &mut self.events[idx];
        let EventKind::Alarm(alarm) = &mut ev.kind else {
            return Err(HmiError::NotAnAlarm(event_id));
        };
        if alarm.acked {
            return Ok(());
        }
        alarm.acked = true;
        alarm.acked_at = Some(now);
        let te = ev.te_id;
        self.publish(now, te, EventKind::AlarmAcked { event_id });
        Ok(())
    }

    /// Events with id greater than `since`, oldest first.
    pub fn events_since(&self, since: u64) -> &[HmiEvent] {
        let start = (since as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn events(&self) -> &[HmiEvent] {
        &self.events
    }

    pub fn alarm_events(&self) -> impl Iterator<Item = (&HmiEvent, &AlarmEvent)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Alarm(a) => Some((e, a)),
            _ => None,
        })
    }

    /// Live feed of events published from now on.
    pub fn subscribe(&mut self) -> mpsc::Receiver<HmiEvent> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.push(tx);
        rx
    }

    /// Drains frames queued for terminals.
    pub fn take_outbound(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.outbox)
    }

    /// Terminals registered on more than one session; always empty unless
    /// the supersede rule is broken.
    pub fn duplicate_sessions(&self) -> BTreeSet<TeId> {
        let mut seen = BTreeSet::new();
        let mut dup = BTreeSet::new();
        for t in self.sessions.values().filter_map(|s| s.te_id) {
            if !seen.insert(t) {
                dup.insert(t);
            }
        }
        dup
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TE: TeId = TeId(3);

    fn conn(epoch: u32) -> ConnId {
        ConnId::Sim { te: TE, epoch }
    }

    fn f(seq: u16, message: Message) -> Frame {
        Frame { te_id: TE, seq, message }
    }

    fn register(hmi: &mut Hmi, c: ConnId, now: Millis) {
        hmi.submit(c, f(1, Message::Register { fw_version: 1, zone_count: 8 }), now);
        hmi.pump(now);
    }

    #[test]
    fn register_then_heartbeat() {
        let mut hmi = Hmi::new(HmiConfig::default());
        register(&mut hmi, conn(1), 0);
        let out = hmi.take_outbound();
        assert_eq!(out, vec![Outbound { conn: conn(1), frame: f(1, Message::RegisterAck) }]);
        assert_eq!(hmi.te_state(TE), Some(TeState::Online));

        hmi.submit(conn(1), f(2, Message::Heartbeat { status: StatusByte::new(true, false, 9) }), 10);
        hmi.pump(10);
        assert_eq!(hmi.take_outbound()[0].frame, f(2, Message::HeartbeatAck));
        assert_eq!(hmi.te_view(TE).unwrap().status, Some(StatusByte::new(true, false, 9)));
    }

    #[test]
    fn frames_before_register_are_dropped() {
        let mut hmi = Hmi::new(HmiConfig::default());
        hmi.submit(conn(1), f(2, Message::Heartbeat { status: StatusByte::default() }), 0);
        hmi.pump(0);
        assert!(hmi.take_outbound().is_empty());
        assert_eq!(hmi.stats().frames_dropped, 1);
    }

    #[test]
    fn duplicate_alarm_acked_but_reported_once() {
        let mut hmi = Hmi::new(HmiConfig::default());
        register(&mut hmi, conn(1), 0);
        let alarm = Message::Alarm { zone: 2, alarm_type: AlarmType::Ir, ts: 77 };
        hmi.submit(conn(1), f(5, alarm), 1);
        hmi.submit(conn(1), f(5, alarm), 2);
        hmi.pump(2);
        let acks: Vec<_> = hmi.take_outbound().into_iter().filter(|o| o.frame.message == Message::AlarmAck).collect();
        assert_eq!(acks.len(), 2);
        assert_eq!(hmi.alarm_events().count(), 1);
        assert_eq!(hmi.stats().duplicate_alarms, 1);
    }

    #[test]
    fn reregistration_supersedes_old_session() {
        let mut hmi = Hmi::new(HmiConfig::default());
        register(&mut hmi, conn(1), 0);
        register(&mut hmi, conn(2), 10);
        assert_eq!(hmi.session_count(), 1);
        assert_eq!(hmi.sessions_for(TE), 1);
        assert_eq!(hmi.open_connections(), vec![conn(2)]);
        assert!(hmi.duplicate_sessions().is_empty());
    }

    #[test]
    fn offline_after_strictly_more_than_threshold() {
        let mut hmi = Hmi::new(HmiConfig::default());
        register(&mut hmi, conn(1), 0);
        assert!(hmi.sweep(180_000).is_empty());
        assert_eq!(hmi.sweep(180_001), vec![TE]);
        assert_eq!(hmi.te_state(TE), Some(TeState::Offline));
        assert_eq!(hmi.session_count(), 0);
    }

    #[test]
    fn control_round_trip() {
        let mut hmi = Hmi::new(HmiConfig::default());
        register(&mut hmi, conn(1), 0);
        hmi.take_outbound();
        let rid = hmi.send_control(TE, ControlCmd::Disarm, 5).unwrap();
        let out = hmi.take_outbound();
        let seq = out[0].frame.seq;
        assert_eq!(out[0].frame.message, Message::Control { cmd: ControlCmd::Disarm });
        hmi.submit(conn(1), f(seq, Message::ControlAck { result: 0 }), 50);
        hmi.pump(50);
        assert_eq!(hmi.request(rid).unwrap().state, RequestState::Completed { result: 0 });
    }

    #[test]
    fn control_to_offline_is_queued_and_flushed_on_register() {
        let mut hmi = Hmi::new(HmiConfig::default());
        hmi.provision(TE);
        let rid = hmi.send_control(TE, ControlCmd::Arm, 0).unwrap();
        assert_eq!(hmi.request(rid).unwrap().state, RequestState::QueuedOffline);
        assert!(hmi.take_outbound().is_empty());
        register(&mut hmi, conn(1), 100);
        let out = hmi.take_outbound();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].frame.message, Message::Control { cmd: ControlCmd::Arm });
        assert_eq!(hmi.request(rid).unwrap().state, RequestState::Sent);
    }

    #[test]
    fn request_times_out() {
        let mut hmi = Hmi::new(HmiConfig::default());
        register(&mut hmi, conn(1), 0);
        let rid = hmi.query_status(TE, 0).unwrap();
        hmi.expire_requests(9_999);
        assert_eq!(hmi.request(rid).unwrap().state, RequestState::Sent);
        hmi.expire_requests(10_000);
        assert_eq!(hmi.request(rid).unwrap().state, RequestState::TimedOut);
    }

    #[test]
    fn unknown_terminal() {
        let mut hmi = Hmi::new(HmiConfig::default());
        assert_eq!(hmi.send_control(TeId(9), ControlCmd::Arm, 0), Err(HmiError::UnknownTe(TeId(9))));
    }

    #[test]
    fn ack_alarm_event() {
        let mut hmi = Hmi::new(HmiConfig::default());
        register(&mut hmi, conn(1), 0);
        hmi.submit(conn(1), f(5, Message::Alarm { zone: 1, alarm_type: AlarmType::Smoke, ts: 1 }), 1);
        hmi.pump(1);
        let id = hmi.alarm_events().next().unwrap().0.id;
        hmi.ack_alarm(id, 7).unwrap();
        assert!(hmi.alarm_events().next().unwrap().1.acked);
        assert_eq!(hmi.ack_alarm(1, 8), Err(HmiError::NotAnAlarm(1)));
        assert_eq!(hmi.ack_alarm(99, 8), Err(HmiError::NoSuchEvent(99)));
        assert_eq!(hmi.events_since(id).last().unwrap().kind, EventKind::AlarmAcked { event_id: id });
    }

    #[test]
    fn subscribers_receive_events() {
        let mut hmi = Hmi::new(HmiConfig::default());
        let rx = hmi.subscribe();
        register(&mut hmi, conn(1), 0);
        assert_eq!(rx.try_recv().unwrap().kind, EventKind::Online);
    }

    #[test]
    fn pump_respects_round_budget() {
        let mut hmi = Hmi::new(HmiConfig { round_budget: 10, ..Default::default() });
        for t in 1..=3u32 {
            let c = ConnId::Sim { te: TeId(t), epoch: 1 };
            hmi.submit(c, Frame { te_id: TeId(t), seq: 1, message: Message::Register { fw_version: 1, zone_count: 1 } }, 0);
            for s in 2..20 {
                hmi.submit(c, Frame { te_id: TeId(t), seq: s, message: Message::Heartbeat { status: StatusByte::default() } }, 0);
            }
        }
        assert_eq!(hmi.backlog(), 57);
        let r = hmi.pump(0);
        assert!(r.processed >= 10 && r.processed < 10 + 10);
        assert_eq!(r.backlog, 57 - r.processed);
        while hmi.pump(0).processed > 0 {}
        assert_eq!(hmi.backlog(), 0);
        assert_eq!(hmi.stats().heartbeats_acked, 54);
    }
}
