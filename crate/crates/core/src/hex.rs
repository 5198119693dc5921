//! Byte-valued newtypes that serialize as lowercase hex strings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::sut_sim::{hex_lower, parse_hex};

fn parse_prefixed(s: &str) -> Option<u64> {
    let s = s.trim();
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(digits, 16).ok()
}

macro_rules! hex_scalar {
    ($(#[$m:meta])* $name:ident, $inner:ty, $width:literal) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!("0x{:0", $width, "x}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_prefixed(s)
                    .and_then(|v| <$inner>::try_from(v).ok())
                    .map($name)
                    .ok_or_else(|| format!("`{s}` is not a valid {}", stringify!($name)))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_scalar!(
    /// A diagnostic service byte, written `0x2e`.
    ServiceId, u8, 2
);
hex_scalar!(
    /// An 11-bit request identifier, written `0x7df`.
    CanId, u16, 3
);

/// Raw bytes written as a bare lowercase hex string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HexBytes(pub Vec<u8>);

impl fmt::Display for HexBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex_lower(&self.0))
    }
}

impl Serialize for HexBytes {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HexBytes {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_hex(&s)
            .map(HexBytes)
            .ok_or_else(|| serde::de::Error::custom(format!("`{s}` is not even-length hex")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_round_trip_through_json() {
        let s = serde_json::to_string(&ServiceId(0x2e)).unwrap();
        assert_eq!(s, "\"0x2e\"");
        assert_eq!(serde_json::from_str::<ServiceId>(&s).unwrap(), ServiceId(0x2e));
        assert_eq!(CanId(0x7df).to_string(), "0x7df");
        assert_eq!("7E0".parse::<CanId>().unwrap(), CanId(0x7e0));
        assert!("0x100".parse::<ServiceId>().is_err());
        assert!("".parse::<ServiceId>().is_err());
    }

    #[test]
    fn hex_bytes_are_lowercase() {
        let s = serde_json::to_string(&HexBytes(vec![0x02, 0x01, 0x0D])).unwrap();
        assert_eq!(s, "\"02010d\"");
        assert!(serde_json::from_str::<HexBytes>("\"abc\"").is_err());
    }
}
