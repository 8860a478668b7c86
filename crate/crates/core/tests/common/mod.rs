//! Oracles and fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::VecDeque;

use cpas_core::modem::PinEvent;
use cpas_core::protocol::*;
use cpas_core::scheduler::SliceRecord;
use cpas_core::{Millis, TeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/frames/{name}.hex", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    hex::decode(text.trim()).expect("fixture is hex")
}

pub fn golden() -> Vec<(&'static str, Frame)> {
    let f = |te: u32, seq: u16, message: Message| Frame { te_id: TeId(te), seq, message };
    vec![
        ("register", f(7, 1, Message::Register { fw_version: 3, zone_count: 8 })),
        ("register_ack", f(7, 1, Message::RegisterAck)),
        ("heartbeat", f(45, 0x1234, Message::Heartbeat { status: StatusByte::new(true, false, 15) })),
        ("heartbeat_ack", f(45, 0x1234, Message::HeartbeatAck)),
        (
            "alarm",
            f(
                0x0102_0304,
                65535,
                Message::Alarm { zone: 2, alarm_type: AlarmType::Smoke, ts: 1_700_000_000 },
            ),
        ),
        ("alarm_ack", f(0x0102_0304, 65535, Message::AlarmAck)),
        ("control", f(2000, 9, Message::Control { cmd: ControlCmd::Reboot })),
        ("control_ack", f(2000, 9, Message::ControlAck { result: CONTROL_UNKNOWN })),
        ("status_query", f(1, 0, Message::StatusQuery)),
        (
            "status_report",
            f(1, 0, Message::StatusReport { status: StatusByte::new(true, true, 9), uptime_s: 86_400 }),
        ),
    ]
}

pub fn encode(f: &Frame) -> Vec<u8> {
    encode_frame(&f.message, f.te_id, f.seq).unwrap()
}

/// Bit-at-a-time CRC-16/CCITT-FALSE, independent of the table-driven codec.
pub fn crc_bitwise(data: &[u8]) -> u16 {
    let mut crc = 0xFFFFu16;
    for &b in data {
        crc ^= u16::from(b) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

/// Positions where a sync pair, version and length describe a span whose
/// trailing CRC checks out.
pub fn crc_valid_candidates(buf: &[u8]) -> usize {
    (0..buf.len())
        .filter(|&i| {
            let r = &buf[i..];
            if r.len() < 14 || r[..3] != [0xAA, 0x55, 0x01] {
                return false;
            }
            let n = usize::from(u16::from_be_bytes([r[10], r[11]]));
            n <= 1024
                && r.len() >= 14 + n
                && crc_bitwise(&r[2..12 + n]) == u16::from_be_bytes([r[12 + n], r[13 + n]])
        })
        .count()
}

/// Noise that looks like the start of frames: sync pairs, damaged and
/// truncated copies of real frames, random octets.
pub fn garbage(rng: &mut ChaCha8Rng, templates: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for _ in 0..rng.random_range(0..6) {
        match rng.random_range(0..4) {
            0 => {
                let n = rng.random_range(0..40);
                out.extend((0..n).map(|_| rng.random::<u8>()));
            }
            1 => {
                out.extend_from_slice(&SYNC);
                out.push(VERSION);
                let n = rng.random_range(0..12);
                out.extend((0..n).map(|_| rng.random::<u8>()));
            }
            2 => {
                let mut f = templates[rng.random_range(0..templates.len())].clone();
                let bit = rng.random_range(0..f.len() * 8);
                f[bit / 8] ^= 1 << (bit % 8);
                out.extend(f);
            }
            _ => {
                let f = &templates[rng.random_range(0..templates.len())];
                out.extend_from_slice(&f[..rng.random_range(1..f.len())]);
            }
        }
    }
    out
}

pub fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    let kind = AlarmType::ALL[rng.random_range(0..3)];
    let status = StatusByte::new(rng.random(), rng.random(), rng.random_range(0..16));
    let message = match rng.random_range(0..10) {
        0 => Message::Register { fw_version: rng.random(), zone_count: rng.random() },
        1 => Message::RegisterAck,
        2 => Message::Heartbeat { status },
        3 => Message::HeartbeatAck,
        4 => Message::Alarm { zone: rng.random(), alarm_type: kind, ts: rng.random() },
        5 => Message::AlarmAck,
        6 => Message::Control { cmd: ControlCmd::from_code(rng.random()) },
        7 => Message::ControlAck { result: rng.random() },
        8 => Message::StatusQuery,
        _ => Message::StatusReport { status, uptime_s: rng.random() },
    };
    Frame { te_id: TeId(rng.random()), seq: rng.random(), message }
}

/// Tick-at-a-time interpreter in integer arithmetic. With m tasks queued the
/// head's slice is max(1, round(2R/(m+1))), and round-half-up of a/b is
/// floor((2a+b)/(2b)).
pub fn oracle(works: &[u64], r: u64) -> (Vec<u64>, Vec<u64>, Vec<SliceRecord>) {
    let mut q: VecDeque<(u64, u64)> = works.iter().enumerate().map(|(i, &w)| (i as u64 + 1, w)).collect();
    let mut finish = vec![0; works.len()];
    let mut order = Vec::new();
    let mut slices = Vec::new();
    let mut t = 0;
    while let Some((id, mut rem)) = q.pop_front() {
        let m = q.len() as u64 + 1;
        let slice = ((4 * r + m + 1) / (2 * (m + 1))).max(1);
        let start = t;
        let mut used = 0;
        while used < slice && rem > 0 {
            rem -= 1;
            used += 1;
            t += 1;
        }
        slices.push(SliceRecord { task_id: id, start_tick: start, slice, used });
        if rem == 0 {
            finish[id as usize - 1] = t;
            order.push(id);
        } else {
            q.push_back((id, rem));
        }
    }
    (order, finish, slices)
}

/// Every list of 1..=5 positive works whose total is at most `total`.
pub fn compositions(total: u64) -> Vec<Vec<u64>> {
    fn go(prefix: &mut Vec<u64>, left: u64, out: &mut Vec<Vec<u64>>) {
        if !prefix.is_empty() {
            out.push(prefix.clone());
        }
        if prefix.len() == 5 {
            return;
        }
        for w in 1..=left {
            prefix.push(w);
            go(prefix, left - w, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), total, &mut out);
    out
}

/// Reference model of the power-on discipline: a low edge counts only once
/// the module has been powered for 10 ms, and releasing it boots the module
/// only if it was held for more than 100 ms.
#[derive(Default)]
pub struct PinModel {
    pub powered_at: Option<Millis>,
    pub low_at: Option<Millis>,
    pub booted: bool,
    pub boots: u64,
}

impl PinModel {
    pub fn apply(&mut self, ev: PinEvent, t: Millis) {
        match ev {
            PinEvent::PowerOff => *self = PinModel { boots: self.boots, ..Default::default() },
            PinEvent::PowerOn => {
                self.powered_at.get_or_insert(t);
            }
            PinEvent::IgnitionLow => {
                let Some(p) = self.powered_at else { return };
                if self.low_at.is_none() && (self.booted || t - p >= 10) {
                    self.low_at = Some(t);
                }
            }
            PinEvent::IgnitionHigh => {
                if self.powered_at.is_none() {
                    return;
                }
                if let Some(l) = self.low_at.take() {
                    if !self.booted && t - l > 100 {
                        self.booted = true;
                        self.boots += 1;
                    }
                }
            }
        }
    }
}


pub fn scenario_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

pub fn scenario_value(name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(scenario_path(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn scenario(v: &serde_json::Value) -> cpas_core::harness::Scenario {
    cpas_core::harness::Scenario::from_json(&v.to_string()).unwrap()
}

pub struct FuzzResult {
    pub buffers: usize,
    pub false_accepts: usize,
    pub missed: usize,
}

/// Buries a random valid frame in noise, feeds the buffer to a decoder in
/// random chunks and counts decoded frames other than the buried one.
pub fn fuzz_decode(buffers: usize, seed: u64) -> FuzzResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<Vec<u8>> = golden().iter().map(|(_, f)| encode(f)).collect();
    let mut false_accepts = 0;
    let mut missed = 0;
    for _ in 0..buffers {
        let frame = random_frame(&mut rng);
        let buf = loop {
            let mut buf = garbage(&mut rng, &templates);
            buf.extend(encode(&frame));
            buf.extend(garbage(&mut rng, &templates));
            // noise that happens to contain a well-formed frame is not noise
            if crc_valid_candidates(&buf) == 1 {
                break buf;
            }
        };

        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        let mut rest = &buf[..];
        while !rest.is_empty() {
            let n = rng.random_range(1..=rest.len().min(32));
            dec.extend(&rest[..n]);
            rest = &rest[n..];
            got.extend(dec.frames());
        }
        false_accepts += got.iter().filter(|f| **f != frame).count();
        missed += usize::from(!got.contains(&frame));
    }
    FuzzResult { buffers, false_accepts, missed }
}

/// What the trace says happened to one terminal's uplink.
#[derive(Debug, Default, Clone)]
pub struct UplinkHistory {
    /// (length, time of the last failure) of every run of consecutive refused sends.
    pub failure_runs: Vec<(u32, Millis)>,
    pub reconnects: Vec<Millis>,
    pub online_at: Vec<Millis>,
}

/// Rebuilds per-terminal failure runs, reconnects and Online entries from
/// raw trace records.
pub fn uplink_histories(trace: &[u8]) -> std::collections::BTreeMap<u32, UplinkHistory> {
    use cpas_core::harness::trace::RecordKind;
    let parsed = cpas_core::harness::parse_trace(trace).unwrap();
    let mut out: std::collections::BTreeMap<u32, UplinkHistory> = Default::default();
    let mut open: std::collections::BTreeMap<u32, (u32, Millis)> = Default::default();
    for r in &parsed.records {
        let h = out.entry(r.te).or_default();
        match r.kind {
            RecordKind::SendRefused => {
                let e = open.entry(r.te).or_insert((0, r.at));
                e.0 += 1;
                e.1 = r.at;
            }
            RecordKind::UplinkSent => {
                if let Some(run) = open.remove(&r.te) {
                    h.failure_runs.push(run);
                }
            }
            RecordKind::Reconnect => h.reconnects.push(r.at),
            RecordKind::Phase if r.payload == b"Online" => h.online_at.push(r.at),
            _ => {}
        }
    }
    for (te, run) in open {
        out.entry(te).or_default().failure_runs.push(run);
    }
    out
}
