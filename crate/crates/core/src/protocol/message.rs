use std::fmt;

use serde::{Deserialize, Serialize};

use super::FrameError;

/// Sensor class that raised an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlarmType {
    Ir = 0x01,
    Smoke = 0x02,
    Temperature = 0x03,
}

impl AlarmType {
    pub const ALL: [AlarmType; 3] = [AlarmType::Ir, AlarmType::Smoke, AlarmType::Temperature];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(AlarmType::Ir),
            0x02 => Some(AlarmType::Smoke),
            0x03 => Some(AlarmType::Temperature),
            _ => None,
        }
    }

    /// Fire-class sensors report regardless of arm state by default.
    pub fn is_fire(self) -> bool {
        matches!(self, AlarmType::Smoke | AlarmType::Temperature)
    }

    /// Keyword used in SMS alerts.
    pub fn sms_keyword(self) -> &'static str {
        match self {
            AlarmType::Ir => "IR",
            AlarmType::Smoke => "SMOKE",
            AlarmType::Temperature => "TEMP",
        }
    }

    pub fn from_sms_keyword(s: &str) -> Option<Self> {
        match s {
            "IR" => Some(AlarmType::Ir),
            "SMOKE" => Some(AlarmType::Smoke),
            "TEMP" => Some(AlarmType::Temperature),
            _ => None,
        }
    }
}

impl fmt::Display for AlarmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sms_keyword())
    }
}

/// Terminal status octet: bit0 armed, bit1 alarm active, bits 4..7 battery level.
/// Bits 2 and 3 are reserved and must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StatusByte(u8);

impl StatusByte {
    const ARMED: u8 = 0x01;
    const ALARM: u8 = 0x02;
    const RESERVED: u8 = 0x0C;

    pub fn new(armed: bool, alarm_active: bool, battery: u8) -> Self {
        let mut b = (battery.min(15)) << 4;
        if armed {
            b |= Self::ARMED;
        }
        if alarm_active {
            b |= Self::ALARM;
        }
        StatusByte(b)
    }

    pub fn from_bits(bits: u8) -> Result<Self, FrameError> {
        if bits & Self::RESERVED != 0 {
            return Err(FrameError::ReservedStatusBits(bits));
        }
        Ok(StatusByte(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn armed(self) -> bool {
        self.0 & Self::ARMED != 0
    }

    pub fn alarm_active(self) -> bool {
        self.0 & Self::ALARM != 0
    }

    pub fn battery(self) -> u8 {
        self.0 >> 4
    }
}

impl Serialize for StatusByte {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("StatusByte", 3)?;
        st.serialize_field("armed", &self.armed())?;
        st.serialize_field("alarm_active", &self.alarm_active())?;
        st.serialize_field("battery", &self.battery())?;
        st.end()
    }
}

/// Operator command carried by CONTROL. Unrecognised codes survive decoding so
/// the terminal can reject them with a CONTROL_ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlCmd {
    Arm,
    Disarm,
    SirenOn,
    SirenOff,
    Reboot,
    Unknown(u8),
}

impl ControlCmd {
    pub fn code(self) -> u8 {
        match self {
            ControlCmd::Arm => 0x01,
            ControlCmd::Disarm => 0x02,
            ControlCmd::SirenOn => 0x03,
            ControlCmd::SirenOff => 0x04,
            ControlCmd::Reboot => 0x05,
            ControlCmd::Unknown(c) => c,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            0x01 => ControlCmd::Arm,
            0x02 => ControlCmd::Disarm,
            0x03 => ControlCmd::SirenOn,
            0x04 => ControlCmd::SirenOff,
            0x05 => ControlCmd::Reboot,
            c => ControlCmd::Unknown(c),
        }
    }

    /// Operator API spelling: `arm|disarm|siren_on|siren_off|reboot`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "arm" => Some(ControlCmd::Arm),
            "disarm" => Some(ControlCmd::Disarm),
            "siren_on" => Some(ControlCmd::SirenOn),
            "siren_off" => Some(ControlCmd::SirenOff),
            "reboot" => Some(ControlCmd::Reboot),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        match self {
            ControlCmd::Arm => "arm".into(),
            ControlCmd::Disarm => "disarm".into(),
            ControlCmd::SirenOn => "siren_on".into(),
            ControlCmd::SirenOff => "siren_off".into(),
            ControlCmd::Reboot => "reboot".into(),
            ControlCmd::Unknown(c) => format!("unknown_{c:#04x}"),
        }
    }
}

impl Serialize for ControlCmd {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ControlCmd {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ControlCmd::from_name(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown control command `{s}`")))
    }
}

/// Result octet of CONTROL_ACK for an accepted command.
pub const CONTROL_OK: u8 = 0x00;
/// Result octet of CONTROL_ACK for an unrecognised command.
pub const CONTROL_UNKNOWN: u8 = 0xFF;

/// Application message carried in a frame. The `msg_type` octet follows
/// declaration order, 0x01..=0x0A.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Message {
    Register { fw_version: u8, zone_count: u8 },
    RegisterAck,
    Heartbeat { status: StatusByte },
    HeartbeatAck,
    Alarm { zone: u8, alarm_type: AlarmType, ts: u32 },
    AlarmAck,
    Control { cmd: ControlCmd },
    ControlAck { result: u8 },
    StatusQuery,
    StatusReport { status: StatusByte, uptime_s: u32 },
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Register { .. } => 0x01,
            Message::RegisterAck => 0x02,
            Message::Heartbeat { .. } => 0x03,
            Message::HeartbeatAck => 0x04,
            Message::Alarm { .. } => 0x05,
            Message::AlarmAck => 0x06,
            Message::Control { .. } => 0x07,
            Message::ControlAck { .. } => 0x08,
            Message::StatusQuery => 0x09,
            Message::StatusReport { .. } => 0x0A,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Register { .. } => "REGISTER",
            Message::RegisterAck => "REGISTER_ACK",
            Message::Heartbeat { .. } => "HEARTBEAT",
            Message::HeartbeatAck => "HEARTBEAT_ACK",
            Message::Alarm { .. } => "ALARM",
            Message::AlarmAck => "ALARM_ACK",
            Message::Control { .. } => "CONTROL",
            Message::ControlAck { .. } => "CONTROL_ACK",
            Message::StatusQuery => "STATUS_QUERY",
            Message::StatusReport { .. } => "STATUS_REPORT",
        }
    }

    pub(crate) fn write_payload(&self, out: &mut Vec<u8>) {
        match *self {
            Message::Register {
                fw_version,
                zone_count,
            } => out.extend_from_slice(&[fw_version, zone_count]),
            Message::Heartbeat { status } => out.push(status.bits()),
            Message::Alarm {
                zone,
                alarm_type,
                ts,
            } => {
                out.push(zone);
                out.push(alarm_type.code());
                out.extend_from_slice(&ts.to_be_bytes());
            }
            Message::Control { cmd } => out.push(cmd.code()),
            Message::ControlAck { result } => out.push(result),
            Message::StatusReport { status, uptime_s } => {
                out.push(status.bits());
                out.extend_from_slice(&uptime_s.to_be_bytes());
            }
            Message::RegisterAck
            | Message::HeartbeatAck
            | Message::AlarmAck
            | Message::StatusQuery => {}
        }
    }

    /// Whether `msg_type` names a defined message.
    pub fn is_known_type(msg_type: u8) -> bool {
        (0x01..=0x0A).contains(&msg_type)
    }

    pub(crate) fn parse(msg_type: u8, p: &[u8]) -> Result<Message, FrameError> {
        let want = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(FrameError::PayloadLength {
                    msg_type,
                    expected: n,
                    actual: p.len(),
                })
            }
        };
        let msg = match msg_type {
            0x01 => {
                want(2)?;
                Message::Register {
                    fw_version: p[0],
                    zone_count: p[1],
                }
            }
            0x02 => {
                want(0)?;
                Message::RegisterAck
            }
            0x03 => {
                want(1)?;
                Message::Heartbeat {
                    status: StatusByte::from_bits(p[0])?,
                }
            }
            0x04 => {
                want(0)?;
                Message::HeartbeatAck
            }
            0x05 => {
                want(6)?;
                Message::Alarm {
                    zone: p[0],
                    alarm_type: AlarmType::from_code(p[1]).ok_or(FrameError::BadAlarmType(p[1]))?,
                    ts: u32::from_be_bytes([p[2], p[3], p[4], p[5]]),
                }
            }
            0x06 => {
                want(0)?;
                Message::AlarmAck
            }
            0x07 => {
                want(1)?;
                Message::Control {
                    cmd: ControlCmd::from_code(p[0]),
                }
            }
            0x08 => {
                want(1)?;
                Message::ControlAck { result: p[0] }
            }
            0x09 => {
                want(0)?;
                Message::StatusQuery
            }
            0x0A => {
                want(5)?;
                Message::StatusReport {
                    status: StatusByte::from_bits(p[0])?,
                    uptime_s: u32::from_be_bytes([p[1], p[2], p[3], p[4]]),
                }
            }
            other => return Err(FrameError::UnknownType(other)),
        };
        Ok(msg)
    }
}
