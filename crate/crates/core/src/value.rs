//! Leaf datatypes and the concrete values that fill schema slots.

use std::borrow::Cow;
use std::fmt;
use std::hash::{Hash, Hasher};

use base64::Engine;
use serde::{Serialize, Serializer};

/// The five leaf datatypes a schema slot can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Integer,
    Float,
    Boolean,
    String,
    Byte,
}

impl DataType {
    pub const ALL: [DataType; 5] = [
        DataType::Integer,
        DataType::Float,
        DataType::Boolean,
        DataType::String,
        DataType::Byte,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DataType::Integer => "integer",
            DataType::Float => "float",
            DataType::Boolean => "boolean",
            DataType::String => "string",
            DataType::Byte => "byte",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Text payload stored as generalized UTF-8.
///
/// Byte-level mutations can leave a string in a state no `String` can hold:
/// invalid sequences, or UTF-16 surrogate code points encoded as three-byte
/// `ED A0..BF 80..BF` sequences. Surrogates survive into JSON as `\uXXXX`
/// escapes; any other invalid byte run decodes to U+FFFD.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawText(Vec<u8>);

enum Piece<'a> {
    Text(Cow<'a, str>),
    Surrogate(u16),
}

impl RawText {
    pub fn new(s: &str) -> Self {
        RawText(s.as_bytes().to_vec())
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        RawText(bytes)
    }

    /// Encodes UTF-16 code units, keeping unpaired surrogates as-is.
    pub fn from_utf16(units: &[u16]) -> Self {
        let mut out = Vec::with_capacity(units.len() * 3);
        for item in char::decode_utf16(units.iter().copied()) {
            match item {
                Ok(c) => {
                    let mut buf = [0u8; 4];
                    out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                }
                Err(e) => {
                    let unit = e.unpaired_surrogate();
                    out.push(0xE0 | (unit >> 12) as u8);
                    out.push(0x80 | ((unit >> 6) & 0x3F) as u8);
                    out.push(0x80 | (unit & 0x3F) as u8);
                }
            }
        }
        RawText(out)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn pieces(&self) -> Vec<Piece<'_>> {
        let bytes = &self.0;
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == 0xED
                && i + 2 < bytes.len()
                && (0xA0..=0xBF).contains(&bytes[i + 1])
                && (0x80..=0xBF).contains(&bytes[i + 2])
            {
                if start < i {
                    pieces.push(Piece::Text(String::from_utf8_lossy(&bytes[start..i])));
                }
                let unit =
                    0xD000 | (u16::from(bytes[i + 1] & 0x3F) << 6) | u16::from(bytes[i + 2] & 0x3F);
                pieces.push(Piece::Surrogate(unit));
                i += 3;
                start = i;
            } else {
                i += 1;
            }
        }
        if start < bytes.len() {
            pieces.push(Piece::Text(String::from_utf8_lossy(&bytes[start..])));
        }
        pieces
    }

    /// Lossy conversion; surrogates and invalid runs become U+FFFD.
    pub fn to_string_lossy(&self) -> String {
        let mut out = String::with_capacity(self.0.len());
        for piece in self.pieces() {
            match piece {
                Piece::Text(t) => out.push_str(&t),
                Piece::Surrogate(_) => out.push(char::REPLACEMENT_CHARACTER),
            }
        }
        out
    }

    /// Quoted JSON string literal. Unpaired surrogates are written as
    /// `\uXXXX` escapes, which is how they reach a JSON parser on the wire.
    pub fn to_json_literal(&self) -> String {
        let mut out = String::with_capacity(self.0.len() + 2);
        out.push('"');
        for piece in self.pieces() {
            match piece {
                Piece::Text(t) => escape_json_into(&t, &mut out),
                Piece::Surrogate(unit) => out.push_str(&format!("\\u{unit:04x}")),
            }
        }
        out.push('"');
        out
    }
}

fn escape_json_into(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
}

impl fmt::Display for RawText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for piece in self.pieces() {
            match piece {
                Piece::Text(t) => f.write_str(&t)?,
                Piece::Surrogate(unit) => write!(f, "\\u{{{unit:x}}}")?,
            }
        }
        Ok(())
    }
}

impl fmt::Debug for RawText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.to_string())
    }
}

impl From<&str> for RawText {
    fn from(s: &str) -> Self {
        RawText::new(s)
    }
}

/// A concrete leaf value. Floats compare and hash by bit pattern so that
/// NaN payloads are reproducible.
#[derive(Clone, Debug)]
pub enum FieldValue {
    Integer(i64),
    Float(f64),
    Boolean(bool),
    String(RawText),
    Byte(Vec<u8>),
}

impl FieldValue {
    pub fn string(s: &str) -> Self {
        FieldValue::String(RawText::new(s))
    }

    pub fn datatype(&self) -> DataType {
        match self {
            FieldValue::Integer(_) => DataType::Integer,
            FieldValue::Float(_) => DataType::Float,
            FieldValue::Boolean(_) => DataType::Boolean,
            FieldValue::String(_) => DataType::String,
            FieldValue::Byte(_) => DataType::Byte,
        }
    }

    /// Canonical byte encoding used by byte-level mutators: little-endian
    /// two's complement for integers, IEEE-754 bits for floats.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            FieldValue::Integer(v) => v.to_le_bytes().to_vec(),
            FieldValue::Float(v) => v.to_bits().to_le_bytes().to_vec(),
            FieldValue::Boolean(b) => vec![u8::from(*b)],
            FieldValue::String(t) => t.as_bytes().to_vec(),
            FieldValue::Byte(b) => b.clone(),
        }
    }

    /// Inverse of [`canonical_bytes`](Self::canonical_bytes) for the given
    /// datatype. Fixed-width types require exactly eight bytes.
    pub fn from_canonical_bytes(datatype: DataType, bytes: Vec<u8>) -> Option<Self> {
        match datatype {
            DataType::Integer => {
                let arr: [u8; 8] = bytes.try_into().ok()?;
                Some(FieldValue::Integer(i64::from_le_bytes(arr)))
            }
            DataType::Float => {
                let arr: [u8; 8] = bytes.try_into().ok()?;
                Some(FieldValue::Float(f64::from_bits(u64::from_le_bytes(arr))))
            }
            DataType::Boolean => bytes.first().map(|b| FieldValue::Boolean(b & 1 == 1)),
            DataType::String => Some(FieldValue::String(RawText::from_bytes(bytes))),
            DataType::Byte => Some(FieldValue::Byte(bytes)),
        }
    }

    /// Bytes placed in a URL path or query component before percent-encoding.
    pub fn plain_bytes(&self) -> Vec<u8> {
        match self {
            FieldValue::Integer(v) => v.to_string().into_bytes(),
            FieldValue::Float(v) => format_float(*v).into_bytes(),
            FieldValue::Boolean(b) => b.to_string().into_bytes(),
            FieldValue::String(t) => t.as_bytes().to_vec(),
            FieldValue::Byte(b) => b.clone(),
        }
    }

    /// JSON token for this value. Non-finite floats are written as the bare
    /// `NaN` / `Infinity` tokens many serializers emit; byte sequences are
    /// base64 strings.
    pub fn to_json_token(&self) -> String {
        match self {
            FieldValue::Integer(v) => v.to_string(),
            FieldValue::Float(v) => format_float(*v),
            FieldValue::Boolean(b) => b.to_string(),
            FieldValue::String(t) => t.to_json_literal(),
            FieldValue::Byte(b) => {
                format!(
                    "\"{}\"",
                    base64::engine::general_purpose::STANDARD.encode(b)
                )
            }
        }
    }

    /// Converts a harvested or user-supplied value into `target`, when a
    /// sensible conversion exists.
    pub fn convert_to(&self, target: DataType) -> Option<FieldValue> {
        if self.datatype() == target {
            return Some(self.clone());
        }
        match (self, target) {
            (FieldValue::Integer(v), DataType::Float) => Some(FieldValue::Float(*v as f64)),
            (FieldValue::Integer(v), DataType::String) => Some(FieldValue::string(&v.to_string())),
            (FieldValue::Integer(v), DataType::Byte) => {
                Some(FieldValue::Byte(v.to_string().into_bytes()))
            }
            (FieldValue::String(t), DataType::Integer) => t
                .to_string_lossy()
                .trim()
                .parse()
                .ok()
                .map(FieldValue::Integer),
            (FieldValue::String(t), DataType::Float) => t
                .to_string_lossy()
                .trim()
                .parse()
                .ok()
                .map(FieldValue::Float),
            (FieldValue::String(t), DataType::Byte) => {
                Some(FieldValue::Byte(t.as_bytes().to_vec()))
            }
            (FieldValue::Byte(b), DataType::String) => {
                Some(FieldValue::String(RawText::from_bytes(b.clone())))
            }
            _ => None,
        }
    }

    /// Builds a value of `datatype` from a JSON literal, e.g. an `enum`
    /// member or a scenario override.
    pub fn from_json(datatype: DataType, value: &serde_json::Value) -> Option<FieldValue> {
        use serde_json::Value;
        match (datatype, value) {
            (DataType::Integer, Value::Number(n)) => n.as_i64().map(FieldValue::Integer),
            (DataType::Float, Value::Number(n)) => n.as_f64().map(FieldValue::Float),
            (DataType::Boolean, Value::Bool(b)) => Some(FieldValue::Boolean(*b)),
            (DataType::String, Value::String(s)) => Some(FieldValue::string(s)),
            (DataType::String, Value::Number(n)) => Some(FieldValue::string(&n.to_string())),
            (DataType::String, Value::Bool(b)) => Some(FieldValue::string(&b.to_string())),
            (DataType::Byte, Value::String(s)) => Some(FieldValue::Byte(s.as_bytes().to_vec())),
            _ => None,
        }
    }
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "Infinity" } else { "-Infinity" }.to_string()
    } else {
        serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
    }
}

impl PartialEq for FieldValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (FieldValue::Integer(a), FieldValue::Integer(b)) => a == b,
            (FieldValue::Float(a), FieldValue::Float(b)) => a.to_bits() == b.to_bits(),
            (FieldValue::Boolean(a), FieldValue::Boolean(b)) => a == b,
            (FieldValue::String(a), FieldValue::String(b)) => a == b,
            (FieldValue::Byte(a), FieldValue::Byte(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for FieldValue {}

impl Hash for FieldValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.datatype().hash(state);
        match self {
            FieldValue::Integer(v) => v.hash(state),
            FieldValue::Float(v) => v.to_bits().hash(state),
            FieldValue::Boolean(v) => v.hash(state),
            FieldValue::String(v) => v.hash(state),
            FieldValue::Byte(v) => v.hash(state),
        }
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Integer(v) => write!(f, "{v}"),
            FieldValue::Float(v) => f.write_str(&format_float(*v)),
            FieldValue::Boolean(v) => write!(f, "{v}"),
            FieldValue::String(v) => write!(f, "{v}"),
            FieldValue::Byte(v) => {
                f.write_str(&base64::engine::general_purpose::STANDARD.encode(v))
            }
        }
    }
}

impl Serialize for FieldValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            FieldValue::Integer(v) => serializer.serialize_i64(*v),
            FieldValue::Float(v) if v.is_finite() => serializer.serialize_f64(*v),
            FieldValue::Boolean(v) => serializer.serialize_bool(*v),
            other => serializer.collect_str(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_surrogates_escape_in_json() {
        let high = RawText::from_utf16(&[0x61, 0xD800]);
        assert_eq!(high.to_json_literal(), "\"a\\ud800\"");
        let low = RawText::from_utf16(&[0xDC00, 0x62]);
        assert_eq!(low.to_json_literal(), "\"\\udc00b\"");
        // a proper pair is an ordinary character
        let pair = RawText::from_utf16(&[0xD83D, 0xDE00]);
        assert_eq!(pair.to_json_literal(), "\"\u{1F600}\"");
    }

    #[test]
    fn invalid_utf8_decodes_lossy() {
        let t = RawText::from_bytes(vec![b'a', 0xFF, b'b']);
        assert_eq!(t.to_string_lossy(), "a\u{FFFD}b");
        assert_eq!(t.to_json_literal(), "\"a\u{FFFD}b\"");
    }

    #[test]
    fn control_characters_are_escaped() {
        let t = RawText::new("a\u{000B}\"\\\n");
        assert_eq!(t.to_json_literal(), "\"a\\u000b\\\"\\\\\\n\"");
    }

    #[test]
    fn canonical_bytes_round_trip() {
        for v in [
            FieldValue::Integer(-7),
            FieldValue::Float(f64::NAN),
            FieldValue::string("x"),
            FieldValue::Byte(vec![1, 2]),
        ] {
            let back = FieldValue::from_canonical_bytes(v.datatype(), v.canonical_bytes()).unwrap();
            assert_eq!(back, v);
        }
    }

    #[test]
    fn non_finite_floats_use_bare_tokens() {
        assert_eq!(FieldValue::Float(f64::NAN).to_json_token(), "NaN");
        assert_eq!(
            FieldValue::Float(f64::NEG_INFINITY).to_json_token(),
            "-Infinity"
        );
        assert_eq!(FieldValue::Float(1e308).to_json_token(), "1e+308");
    }
}
