//! Binary trace of a run.
//!
//! ```text
//! magic   "CPASTRC\x01"
//! seed    u64
//! len     u32, then the scenario as JSON
//! record* time u64 | kind u8 | te u32 | len u32 | payload
//! footer  "END!" | record count u64 | SHA-256 of every preceding octet
//! ```
//!
//! Integers are big-endian. Two runs of the same scenario and seed produce
//! identical files.

use sha2::{Digest, Sha256};

use crate::Millis;

pub const TRACE_MAGIC: &[u8; 8] = b"CPASTRC\x01";
const FOOTER_TAG: &[u8; 4] = b"END!";
const FOOTER_LEN: usize = 4 + 8 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum RecordKind {
    /// Frame octets accepted by the uplink.
    UplinkSent = 1,
    /// Frame octets reaching the HMI.
    UplinkDelivered = 2,
    DownlinkSent = 3,
    DownlinkDelivered = 4,
    /// A send the link refused.
    SendRefused = 5,
    /// Frame or payload discarded in transit or on arrival.
    Dropped = 6,
    /// `from NUL to NUL text`.
    SmsSubmitted = 7,
    SmsDelivered = 8,
    /// Terminal phase change; payload is the phase name.
    Phase = 9,
    /// HMI event as JSON.
    HmiEvent = 10,
    /// `seq u16 | zone u8 | type u8 | ts u32`.
    AlarmRaised = 11,
    /// Fault name.
    Fault = 12,
    Reconnect = 13,
}

impl RecordKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        use RecordKind::*;
        [
            UplinkSent,
            UplinkDelivered,
            DownlinkSent,
            DownlinkDelivered,
            SendRefused,
            Dropped,
            SmsSubmitted,
            SmsDelivered,
            Phase,
            HmiEvent,
            AlarmRaised,
            Fault,
            Reconnect,
        ]
        .into_iter()
        .find(|k| *k as u8 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub at: Millis,
    pub kind: RecordKind,
    pub te: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("not a trace file (bad magic)")]
    BadMagic,
    #[error("trace truncated at offset {0}")]
    Truncated(usize),
    #[error("unknown record kind {kind} at offset {offset}")]
    UnknownKind { kind: u8, offset: usize },
    #[error("trace footer missing or malformed")]
    BadFooter,
    #[error("footer claims {claimed} records, found {found}")]
    CountMismatch { claimed: u64, found: u64 },
    #[error("trace digest does not match its contents")]
    DigestMismatch,
    #[error("embedded scenario is not UTF-8")]
    BadScenario,
}

/// Accumulates a trace in memory.
#[derive(Debug, Clone)]
pub struct TraceWriter {
    buf: Vec<u8>,
    count: u64,
}

impl TraceWriter {
    pub fn new(seed: u64, scenario_json: &str) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(TRACE_MAGIC);
        buf.extend_from_slice(&seed.to_be_bytes());
        buf.extend_from_slice(&(scenario_json.len() as u32).to_be_bytes());
        buf.extend_from_slice(scenario_json.as_bytes());
        Self { buf, count: 0 }
    }

    pub fn record(&mut self, at: Millis, kind: RecordKind, te: u32, payload: &[u8]) {
        self.buf.extend_from_slice(&at.to_be_bytes());
        self.buf.push(kind as u8);
        self.buf.extend_from_slice(&te.to_be_bytes());
        self.buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(payload);
        self.count += 1;
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(FOOTER_TAG);
        self.buf.extend_from_slice(&self.count.to_be_bytes());
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTrace {
    pub seed: u64,
    pub scenario_json: String,
    pub records: Vec<TraceRecord>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(TraceError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TraceError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 octets")))
    }

    fn u32(&mut self) -> Result<u32, TraceError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 octets")))
    }
}

pub fn parse_trace(bytes: &[u8]) -> Result<ParsedTrace, TraceError> {
    if bytes.len() < TRACE_MAGIC.len() || &bytes[..8] != TRACE_MAGIC {
        return Err(TraceError::BadMagic);
    }
    if bytes.len() < 8 + 8 + 4 + FOOTER_LEN {
        return Err(TraceError::Truncated(bytes.len()));
    }
    let body_end = bytes.len() - FOOTER_LEN;
    let footer = &bytes[body_end..];
    if &footer[..4] != FOOTER_TAG {
        return Err(TraceError::BadFooter);
    }
    let claimed = u64::from_be_bytes(footer[4..12].try_into().expect("8 octets"));
    if Sha256::digest(&bytes[..body_end]).as_slice() != &footer[12..] {
        return Err(TraceError::DigestMismatch);
    }

    let mut c = Cursor { buf: &bytes[..body_end], pos: 8 };
    let seed = c.u64()?;
    let len = c.u32()? as usize;
    let scenario_json = std::str::from_utf8(c.take(len)?)
        .map_err(|_| TraceError::BadScenario)?
        .to_string();
    let mut records = Vec::new();
    while c.pos < body_end {
        let at = c.u64()?;
        let offset = c.pos;
        let raw = c.take(1)?[0];
        let kind = RecordKind::from_u8(raw).ok_or(TraceError::UnknownKind { kind: raw, offset })?;
        let te = c.u32()?;
        let len = c.u32()? as usize;
        let payload = c.take(len)?.to_vec();
        records.push(TraceRecord { at, kind, te, payload });
    }
    if records.len() as u64 != claimed {
        return Err(TraceError::CountMismatch {
            claimed,
            found: records.len() as u64,
        });
    }
    Ok(ParsedTrace {
        seed,
        scenario_json,
        records,
    })
}
