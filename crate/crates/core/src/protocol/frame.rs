//! Binary frame codec.
//!
//! ```text
//! +------+------+-----+------+-------+-----+---------+---------+--------+
//! | 0xAA | 0x55 | ver | type | te_id | seq | pay_len | payload | crc16  |
//! |  1   |  1   |  1  |  1   |  4 BE | 2BE |  2 BE   |  n      |  2 BE  |
//! +------+------+-----+------+-------+-----+---------+---------+--------+
//! ```
//!
//! The CRC covers `ver..payload`. The decoder is streaming: it skips noise up
//! to the next sync pair and never consumes past a candidate frame that is
//! still incomplete.

use super::crc::Crc16;
use super::{FrameError, Message, TeId};

pub const SYNC: [u8; 2] = [0xAA, 0x55];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 12;
pub const CRC_LEN: usize = 2;
pub const MAX_PAYLOAD: usize = 1024;

/// A decoded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub te_id: TeId,
    pub seq: u16,
    pub message: Message,
}

/// A frame decoded out of a buffer, plus how many octets the caller may drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub frame: Frame,
    pub consumed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    /// No complete frame yet; `discard` leading octets are noise and may be dropped.
    #[error("incomplete frame, {discard} leading octets discardable")]
    NeedMore { discard: usize },
    #[error("crc mismatch: computed {computed:#06x}, received {received:#06x}")]
    BadCrc {
        consumed: usize,
        computed: u16,
        received: u16,
    },
    #[error("unknown message type {msg_type:#04x}")]
    UnknownType { msg_type: u8, consumed: usize },
    #[error("malformed payload: {source}")]
    BadPayload {
        consumed: usize,
        #[source]
        source: FrameError,
    },
}

impl DecodeError {
    /// Octets the caller should drop before decoding again.
    pub fn consumed(&self) -> usize {
        match *self {
            DecodeError::NeedMore { discard } => discard,
            DecodeError::BadCrc { consumed, .. }
            | DecodeError::UnknownType { consumed, .. }
            | DecodeError::BadPayload { consumed, .. } => consumed,
        }
    }
}

/// Encodes a message into a complete frame.
pub fn encode_frame(msg: &Message, te_id: TeId, seq: u16) -> Result<Vec<u8>, FrameError> {
    let mut payload = Vec::with_capacity(8);
    msg.write_payload(&mut payload);
    encode_raw(msg.msg_type(), te_id, seq, &payload)
}

/// Encodes an arbitrary type/payload pair. Used by [`encode_frame`] and by
/// tests that need frames the message set cannot express.
pub fn encode_raw(msg_type: u8, te_id: TeId, seq: u16, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(&SYNC);
    out.push(VERSION);
    out.push(msg_type);
    out.extend_from_slice(&te_id.0.to_be_bytes());
    out.extend_from_slice(&seq.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(payload);
    let mut crc = Crc16::new();
    crc.update(&out[2..]);
    out.extend_from_slice(&crc.finish().to_be_bytes());
    Ok(out)
}

fn find_sync(buf: &[u8], from: usize) -> Option<usize> {
    if buf.len() < 2 || from >= buf.len() - 1 {
        return None;
    }
    buf[from..]
        .windows(2)
        .position(|w| w == SYNC)
        .map(|p| p + from)
}

/// Decodes the first complete, CRC-valid frame in `buf`.
///
/// Candidates that are still incomplete are remembered but do not stop the
/// scan, so a valid frame that follows noise resembling a long header is
/// still found.
pub fn decode_frame(buf: &[u8]) -> Result<Decoded, DecodeError> {
    let mut first_incomplete: Option<usize> = None;
    let mut from = 0;

    while let Some(p) = find_sync(buf, from) {
        from = p + 1;
        let rest = &buf[p..];

        if rest.len() > 2 && rest[2] != VERSION {
            continue;
        }
        if rest.len() < HEADER_LEN {
            first_incomplete.get_or_insert(p);
            // any later candidate is shorter still
            break;
        }
        let payload_len = u16::from_be_bytes([rest[10], rest[11]]) as usize;
        if payload_len > MAX_PAYLOAD {
            continue;
        }
        let total = HEADER_LEN + payload_len + CRC_LEN;
        if rest.len() < total {
            first_incomplete.get_or_insert(p);
            continue;
        }

        let mut crc = Crc16::new();
        crc.update(&rest[2..HEADER_LEN + payload_len]);
        let computed = crc.finish();
        let received = u16::from_be_bytes([rest[total - 2], rest[total - 1]]);
        if computed != received {
            if first_incomplete.is_none() {
                return Err(DecodeError::BadCrc {
                    consumed: p + SYNC.len(),
                    computed,
                    received,
                });
            }
            continue;
        }

        let consumed = p + total;
        let msg_type = rest[3];
        if !Message::is_known_type(msg_type) {
            return Err(DecodeError::UnknownType { msg_type, consumed });
        }
        let payload = &rest[HEADER_LEN..HEADER_LEN + payload_len];
        let message = Message::parse(msg_type, payload)
            .map_err(|source| DecodeError::BadPayload { consumed, source })?;
        let te_id = TeId(u32::from_be_bytes([rest[4], rest[5], rest[6], rest[7]]));
        let seq = u16::from_be_bytes([rest[8], rest[9]]);
        return Ok(Decoded {
            frame: Frame { te_id, seq, message },
            consumed,
        });
    }

    let discard = match first_incomplete {
        Some(p) => p,
        // keep a trailing 0xAA: it may be the first half of a sync pair
        None if buf.last() == Some(&SYNC[0]) => buf.len() - 1,
        None => buf.len(),
    };
    Err(DecodeError::NeedMore { discard })
}

/// Byte-stream reassembler over [`decode_frame`].
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    rejected: u64,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, data: &[u8]) {
        self.buf.extend_from_slice(data);
    }

    /// Octets buffered but not yet decoded.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Frames discarded for CRC, type or payload errors.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Next decoded frame or decode error; `None` when more input is needed.
    pub fn next_frame(&mut self) -> Option<Result<Frame, DecodeError>> {
        match decode_frame(&self.buf) {
            Ok(d) => {
                self.buf.drain(..d.consumed);
                Some(Ok(d.frame))
            }
            Err(DecodeError::NeedMore { discard }) => {
                self.buf.drain(..discard);
                None
            }
            Err(e) => {
                self.buf.drain(..e.consumed());
                self.rejected += 1;
                Some(Err(e))
            }
        }
    }

    /// Drains every frame currently decodable, dropping errors.
    pub fn frames(&mut self) -> Vec<Frame> {
        let mut out = Vec::new();
        while let Some(r) = self.next_frame() {
            if let Ok(f) = r {
                out.push(f);
            }
        }
        out
    }
}
