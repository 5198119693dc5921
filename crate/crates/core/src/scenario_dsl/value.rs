use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::sut_sim::{hex_lower, parse_hex};

/// Argument value. In JSON files a number is an integer, a string starting
/// with `0x` is hex bytes, a string starting with `$` is a placeholder and any
/// other string is a string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Str(String),
    Int(u64),
    Hex(Vec<u8>),
    Placeholder(String),
}

impl Value {
    pub fn str(s: &str) -> Self {
        Value::Str(s.to_string())
    }

    pub fn hex(bytes: &[u8]) -> Self {
        Value::Hex(bytes.to_vec())
    }

    pub fn placeholder(name: &str) -> Self {
        Value::Placeholder(name.to_string())
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, Value::Placeholder(_))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<u64> {
        match self {
            Value::Int(n) => Some(*n),
            Value::Hex(b) if !b.is_empty() && b.len() <= 8 => {
                Some(b.iter().fold(0u64, |acc, x| (acc << 8) | u64::from(*x)))
            }
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Hex(b) => Some(b),
            _ => None,
        }
    }

    /// The JSON-file spelling described on the type.
    pub fn to_json_string(&self) -> Option<String> {
        match self {
            Value::Str(s) => Some(s.clone()),
            Value::Int(_) => None,
            Value::Hex(b) => Some(format!("0x{}", hex_lower(b))),
            Value::Placeholder(p) => Some(format!("${p}")),
        }
    }

    pub fn from_json_string(s: &str) -> Result<Self, String> {
        if let Some(h) = s.strip_prefix("0x") {
            return parse_hex(h)
                .filter(|b| !b.is_empty())
                .map(Value::Hex)
                .ok_or_else(|| format!("`{s}` is not a whole number of hex bytes"));
        }
        if let Some(p) = s.strip_prefix('$') {
            if !super::parser::is_ident(p) {
                return Err(format!("`{s}` is not a placeholder name"));
            }
            return Ok(Value::Placeholder(p.to_string()));
        }
        Ok(Value::Str(s.to_string()))
    }
}

impl fmt::Display for Value {
    /// DSL literal syntax.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Value::Int(n) => write!(f, "{n}"),
            Value::Hex(b) => write!(f, "0x{}", hex_lower(b)),
            Value::Placeholder(p) => write!(f, "${p}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Int(n) => s.serialize_u64(*n),
            other => s.serialize_str(&other.to_json_string().expect("non-integer")),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Value::Int(n)),
            Raw::Str(s) => Value::from_json_string(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_spelling() {
        let vals = vec![
            Value::Int(7),
            Value::hex(&[0x07, 0xDF]),
            Value::placeholder("REQ_ID"),
            Value::str("can0"),
        ];
        let text = serde_json::to_string(&vals).unwrap();
        assert_eq!(text, r#"[7,"0x07df","$REQ_ID","can0"]"#);
        assert_eq!(serde_json::from_str::<Vec<Value>>(&text).unwrap(), vals);
        assert!(serde_json::from_str::<Value>("\"0x\"").is_err());
        assert!(serde_json::from_str::<Value>("\"0xabc\"").is_err());
        assert!(serde_json::from_str::<Value>("\"$9x\"").is_err());
    }

    #[test]
    fn dsl_spelling_escapes_strings() {
        assert_eq!(Value::str("a\"b\\c\n").to_string(), r#""a\"b\\c\n""#);
        assert_eq!(Value::hex(&[0xAB]).to_string(), "0xab");
        assert_eq!(Value::hex(&[0x07, 0xDF]).as_int(), Some(0x7DF));
    }
}
