//! CPAS wire protocol between terminal and HMI, and the SMS grammar between
//! terminal and user. Layout details are in `docs/protocol.md`.

mod crc;
mod frame;
mod message;
mod sms;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use crc::{crc16, Crc16};
pub use frame::{
    decode_frame, encode_frame, encode_raw, Decoded, DecodeError, Frame, FrameDecoder, CRC_LEN,
    HEADER_LEN, MAX_PAYLOAD, SYNC, VERSION,
};
pub use message::{AlarmType, ControlCmd, Message, StatusByte, CONTROL_OK, CONTROL_UNKNOWN};
pub use sms::{parse_command, parse_sms, render_sms, SmsError, SmsEvent, SmsText, UserCommand, SMS_MAX_LEN};

/// Terminal identifier, carried as a 4-octet big-endian field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TeId(pub u32);

impl fmt::Display for TeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("payload of {0} octets exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("message type {msg_type:#04x} expects {expected} payload octets, got {actual}")]
    PayloadLength {
        msg_type: u8,
        expected: usize,
        actual: usize,
    },
    #[error("status byte {0:#04x} has reserved bits set")]
    ReservedStatusBits(u8),
    #[error("unknown alarm type {0:#04x}")]
    BadAlarmType(u8),
}
