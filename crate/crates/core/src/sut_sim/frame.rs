//! CAN-like frames and their line-oriented wire form (`7df#02010d`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MAX_ID: u16 = 0x7FF;
pub const MAX_DATA: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame id {0:#x} exceeds 11 bits")]
    IdOutOfRange(u32),
    #[error("frame carries {0} data bytes, at most 8 allowed")]
    TooLong(usize),
    #[error("malformed wire frame `{0}`: {1}")]
    Wire(String, &'static str),
}

/// An 11-bit identifier with up to eight data bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Frame {
    id: u16,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(id: u16, data: impl Into<Vec<u8>>) -> Result<Self, FrameError> {
        let data = data.into();
        if id > MAX_ID {
            return Err(FrameError::IdOutOfRange(id as u32));
        }
        if data.len() > MAX_DATA {
            return Err(FrameError::TooLong(data.len()));
        }
        Ok(Self { id, data })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Lowercase `<id>#<hex>` as used on the data socket.
    pub fn to_wire(&self) -> String {
        format!("{:03x}#{}", self.id, hex_lower(&self.data))
    }

    pub fn parse_wire(line: &str) -> Result<Self, FrameError> {
        let line = line.trim();
        let bad = |why| FrameError::Wire(line.to_string(), why);
        let (id, data) = line.split_once('#').ok_or_else(|| bad("missing `#`"))?;
        if id.is_empty() || id.len() > 3 {
            return Err(bad("id must be 1-3 hex digits"));
        }
        let id = u16::from_str_radix(id, 16).map_err(|_| bad("id is not hex"))?;
        let data = parse_hex(data).ok_or_else(|| bad("data must be hex pairs"))?;
        Frame::new(id, data)
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_wire())
    }
}

impl FromStr for Frame {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Frame::parse_wire(s)
    }
}

impl Serialize for Frame {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_wire())
    }
}

impl<'de> Deserialize<'de> for Frame {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Frame::parse_wire(&s).map_err(serde::de::Error::custom)
    }
}

pub fn hex_lower(bytes: &[u8]) -> String {
    use fmt::Write;
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Parses an even-length hex string (either case). `None` on odd length or bad digits.
pub fn parse_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}
