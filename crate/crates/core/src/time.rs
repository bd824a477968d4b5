//! Service clock helpers. Every time inside the crate is an integer number of
//! seconds since the start of the service day.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Seconds since service start (or a duration in seconds).
pub type Seconds = i64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid clock time `{0}` (expected hh:mm:ss)")]
pub struct ClockParseError(pub String);

/// Parses `hh:mm:ss`. Hours may exceed 23, as in GTFS after-midnight trips.
pub fn parse_clock(text: &str) -> Result<Seconds, ClockParseError> {
    let err = || ClockParseError(text.to_string());
    let mut parts = text.trim().split(':');
    let mut next = || -> Result<i64, ClockParseError> {
        parts
            .next()
            .ok_or_else(err)?
            .parse::<u32>()
            .map(i64::from)
            .map_err(|_| err())
    };
    let (h, m, s) = (next()?, next()?, next()?);
    if parts.next().is_some() || m >= 60 || s >= 60 {
        return Err(err());
    }
    Ok(h * 3600 + m * 60 + s)
}

/// Formats seconds as `hh:mm:ss`; negative values get a leading `-`.
pub fn format_clock(t: Seconds) -> String {
    let sign = if t < 0 { "-" } else { "" };
    let t = t.abs();
    format!("{sign}{:02}:{:02}:{:02}", t / 3600, (t / 60) % 60, t % 60)
}

/// A clock time that (de)serializes as `hh:mm:ss`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClockTime(pub Seconds);

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_clock(self.0))
    }
}

impl Serialize for ClockTime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_clock(self.0))
    }
}

impl<'de> Deserialize<'de> for ClockTime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_clock(&text).map(ClockTime).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_formats() {
        assert_eq!(parse_clock("09:00:00"), Ok(32_400));
        assert_eq!(parse_clock("25:01:02"), Ok(90_062));
        assert!(parse_clock("9:60:00").is_err());
        assert!(parse_clock("09:00").is_err());
        assert!(parse_clock("09:00:00:00").is_err());
        assert_eq!(format_clock(32_400 + 61), "09:01:01");
        assert_eq!(format_clock(-90), "-00:01:30");
    }
}
