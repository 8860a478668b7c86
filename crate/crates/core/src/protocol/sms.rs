//! SMS text grammar between a terminal and its user.
//!
//! ```text
//! command := "ARM" | "DISARM" | "STATUS"
//! reply   := "OK ARMED" | "OK DISARMED" | "STATUS " ("ARMED"|"DISARMED") " BAT " 0..15
//! alert   := "ALARM ZONE " zone " TYPE " ("IR"|"SMOKE"|"TEMP") " AT " unix-seconds
//! ```
//!
//! Keywords are case-sensitive, tokens are separated by exactly one space and
//! numbers are plain decimal without sign or leading zeros.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::AlarmType;

pub const SMS_MAX_LEN: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmsError {
    #[error("sms text is {0} characters, limit is {SMS_MAX_LEN}")]
    TooLong(usize),
    #[error("sms text contains non-ASCII characters")]
    NotAscii,
    #[error("unrecognized sms text `{0}`")]
    Unrecognized(String),
}

/// ASCII text of at most [`SMS_MAX_LEN`] characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SmsText(String);

impl SmsText {
    pub fn new(text: impl Into<String>) -> Result<Self, SmsError> {
        let text = text.into();
        if !text.is_ascii() {
            return Err(SmsError::NotAscii);
        }
        if text.len() > SMS_MAX_LEN {
            return Err(SmsError::TooLong(text.len()));
        }
        Ok(SmsText(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SmsText {
    type Error = SmsError;
    fn try_from(s: String) -> Result<Self, SmsError> {
        SmsText::new(s)
    }
}

impl From<SmsText> for String {
    fn from(t: SmsText) -> String {
        t.0
    }
}

impl fmt::Display for SmsText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UserCommand {
    Arm,
    Disarm,
    Status,
}

/// Anything that can travel over the SMS channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmsEvent {
    Command(UserCommand),
    ArmedOk,
    DisarmedOk,
    Status { armed: bool, battery: u8 },
    Alert { zone: u8, kind: AlarmType, ts: u32 },
}

pub fn render_sms(event: &SmsEvent) -> SmsText {
    let s = match *event {
        SmsEvent::Command(UserCommand::Arm) => "ARM".to_string(),
        SmsEvent::Command(UserCommand::Disarm) => "DISARM".to_string(),
        SmsEvent::Command(UserCommand::Status) => "STATUS".to_string(),
        SmsEvent::ArmedOk => "OK ARMED".to_string(),
        SmsEvent::DisarmedOk => "OK DISARMED".to_string(),
        SmsEvent::Status { armed, battery } => format!(
            "STATUS {} BAT {}",
            if armed { "ARMED" } else { "DISARMED" },
            battery.min(15)
        ),
        SmsEvent::Alert { zone, kind, ts } => {
            format!("ALARM ZONE {zone} TYPE {} AT {ts}", kind.sms_keyword())
        }
    };
    // every rendering is short ASCII
    SmsText(s)
}

fn number<T: std::str::FromStr>(tok: &str) -> Option<T> {
    let canonical = !tok.is_empty()
        && tok.bytes().all(|b| b.is_ascii_digit())
        && (tok == "0" || !tok.starts_with('0'));
    if canonical {
        tok.parse().ok()
    } else {
        None
    }
}

/// Parses any text of the grammar.
pub fn parse_sms(text: &str) -> Result<SmsEvent, SmsError> {
    let text = SmsText::new(text)?;
    let unrecognized = || SmsError::Unrecognized(text.0.clone());
    let toks: Vec<&str> = text.0.split(' ').collect();
    let ev = match toks.as_slice() {
        ["ARM"] => SmsEvent::Command(UserCommand::Arm),
        ["DISARM"] => SmsEvent::Command(UserCommand::Disarm),
        ["STATUS"] => SmsEvent::Command(UserCommand::Status),
        ["OK", "ARMED"] => SmsEvent::ArmedOk,
        ["OK", "DISARMED"] => SmsEvent::DisarmedOk,
        ["STATUS", state, "BAT", bat] => {
            let armed = match *state {
                "ARMED" => true,
                "DISARMED" => false,
                _ => return Err(unrecognized()),
            };
            let battery: u8 = number(bat).filter(|b| *b <= 15).ok_or_else(unrecognized)?;
            SmsEvent::Status { armed, battery }
        }
        ["ALARM", "ZONE", zone, "TYPE", kind, "AT", ts] => SmsEvent::Alert {
            zone: number(zone).ok_or_else(unrecognized)?,
            kind: AlarmType::from_sms_keyword(kind).ok_or_else(unrecognized)?,
            ts: number(ts).ok_or_else(unrecognized)?,
        },
        _ => return Err(unrecognized()),
    };
    Ok(ev)
}

/// Parses text a user may send to a terminal.
pub fn parse_command(text: &str) -> Result<UserCommand, SmsError> {
    match parse_sms(text)? {
        SmsEvent::Command(c) => Ok(c),
        _ => Err(SmsError::Unrecognized(text.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn commands() {
        assert_eq!(parse_command("ARM"), Ok(UserCommand::Arm));
        assert_eq!(parse_command("DISARM"), Ok(UserCommand::Disarm));
        assert_eq!(parse_command("STATUS"), Ok(UserCommand::Status));
        assert!(parse_command("MAKE COFFEE").is_err());
        assert!(parse_command("arm").is_err());
        assert!(parse_command("ARM ").is_err());
        assert!(parse_command("OK ARMED").is_err());
    }

    #[test]
    fn alert_text() {
        let ev = SmsEvent::Alert {
            zone: 3,
            kind: AlarmType::Smoke,
            ts: 500,
        };
        assert_eq!(render_sms(&ev).as_str(), "ALARM ZONE 3 TYPE SMOKE AT 500");
        assert_eq!(parse_sms("ALARM ZONE 3 TYPE SMOKE AT 500"), Ok(ev));
    }

    #[test]
    fn rejects_noncanonical_numbers() {
        assert!(parse_sms("ALARM ZONE 03 TYPE IR AT 5").is_err());
        assert!(parse_sms("ALARM ZONE 256 TYPE IR AT 5").is_err());
        assert!(parse_sms("STATUS ARMED BAT 16").is_err());
        assert!(parse_sms("STATUS ARMED BAT +1").is_err());
    }

    #[test]
    fn length_and_charset_limits() {
        assert_eq!(SmsText::new("x".repeat(200)), Err(SmsError::TooLong(200)));
        assert!(SmsText::new("x".repeat(160)).is_ok());
        assert_eq!(SmsText::new("ARMÉ"), Err(SmsError::NotAscii));
    }

    fn any_event() -> impl Strategy<Value = SmsEvent> {
        prop_oneof![
            Just(SmsEvent::Command(UserCommand::Arm)),
            Just(SmsEvent::Command(UserCommand::Disarm)),
            Just(SmsEvent::Command(UserCommand::Status)),
            Just(SmsEvent::ArmedOk),
            Just(SmsEvent::DisarmedOk),
            (any::<bool>(), 0u8..=15).prop_map(|(armed, battery)| SmsEvent::Status { armed, battery }),
            (any::<u8>(), 0usize..3, any::<u32>()).prop_map(|(zone, k, ts)| SmsEvent::Alert {
                zone,
                kind: AlarmType::ALL[k],
                ts
            }),
        ]
    }

    proptest! {
        #[test]
        fn parse_inverts_render(ev in any_event()) {
            let text = render_sms(&ev);
            prop_assert!(text.as_str().len() <= SMS_MAX_LEN);
            prop_assert_eq!(parse_sms(text.as_str()), Ok(ev));
        }
    }
}
