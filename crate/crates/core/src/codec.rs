//! Canonical binary encoding for message payloads and result values.
//!
//! Every value that crosses a process boundary is a one-byte kind tag
//! followed by a little-endian body, so any rank can decode what any other
//! rank sends regardless of host platform. The byte layout is normative and
//! documented in `PROTOCOL.md`.

use std::fmt;

use thiserror::Error;

use crate::bytesio::{Reader, ShortInput, WriteLe};

/// Errors raised while encoding or decoding payloads.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    /// The payload carries a kind tag this codec does not define.
    #[error("unsupported kind tag {0:#04x}")]
    UnsupportedKind(u8),
    /// The payload's declared kind differs from the kind the caller expects.
    #[error("kind mismatch: payload is {found}, expected {expected}")]
    KindMismatch { expected: Kind, found: Kind },
    /// The payload ended before its declared contents did.
    #[error("malformed payload: needed {need} more bytes, found {have}")]
    Truncated { need: usize, have: usize },
    /// The payload had bytes left over after a complete value was decoded.
    #[error("malformed payload: {0} trailing bytes")]
    TrailingBytes(usize),
    /// A boolean body held a byte other than 0 or 1.
    #[error("malformed payload: invalid boolean byte {0:#04x}")]
    InvalidBool(u8),
    /// A string body was not valid UTF-8.
    #[error("malformed payload: string is not valid UTF-8")]
    InvalidUtf8,
    /// The payload was empty, so it carries no kind tag at all.
    #[error("malformed payload: empty")]
    Empty,
}

impl From<ShortInput> for CodecError {
    fn from(s: ShortInput) -> Self {
        CodecError::Truncated {
            need: s.need,
            have: s.have,
        }
    }
}

/// One-byte tags identifying the encoded shape of a payload.
///
/// Scalar kinds occupy `0x00..=0x06`; the matching array kind is the scalar
/// tag with bit `0x10` set. Arrays are homogeneous and hold scalar elements
/// only; applications encode richer structures as `Bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Unit = 0x00,
    I32 = 0x01,
    I64 = 0x02,
    F64 = 0x03,
    Bool = 0x04,
    Str = 0x05,
    Bytes = 0x06,
    ArrayI32 = 0x11,
    ArrayI64 = 0x12,
    ArrayF64 = 0x13,
    ArrayBool = 0x14,
    ArrayStr = 0x15,
    ArrayBytes = 0x16,
}

impl Kind {
    /// The wire tag for this kind.
    pub fn tag(self) -> u8 {
        self as u8
    }

    /// Look a kind up by wire tag.
    pub fn from_tag(tag: u8) -> Result<Kind, CodecError> {
        Ok(match tag {
            0x00 => Kind::Unit,
            0x01 => Kind::I32,
            0x02 => Kind::I64,
            0x03 => Kind::F64,
            0x04 => Kind::Bool,
            0x05 => Kind::Str,
            0x06 => Kind::Bytes,
            0x11 => Kind::ArrayI32,
            0x12 => Kind::ArrayI64,
            0x13 => Kind::ArrayF64,
            0x14 => Kind::ArrayBool,
            0x15 => Kind::ArrayStr,
            0x16 => Kind::ArrayBytes,
            other => return Err(CodecError::UnsupportedKind(other)),
        })
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Kind::Unit => "unit",
            Kind::I32 => "i32",
            Kind::I64 => "i64",
            Kind::F64 => "f64",
            Kind::Bool => "bool",
            Kind::Str => "string",
            Kind::Bytes => "bytes",
            Kind::ArrayI32 => "array<i32>",
            Kind::ArrayI64 => "array<i64>",
            Kind::ArrayF64 => "array<f64>",
            Kind::ArrayBool => "array<bool>",
            Kind::ArrayStr => "array<string>",
            Kind::ArrayBytes => "array<bytes>",
        };
        f.write_str(name)
    }
}

/// A typed value of the codec's closed kind set.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Unit,
    I32(i32),
    I64(i64),
    F64(f64),
    Bool(bool),
    Str(String),
    Bytes(Vec<u8>),
    ArrayI32(Vec<i32>),
    ArrayI64(Vec<i64>),
    ArrayF64(Vec<f64>),
    ArrayBool(Vec<bool>),
    ArrayStr(Vec<String>),
    ArrayBytes(Vec<Vec<u8>>),
}

impl Value {
    pub fn kind(&self) -> Kind {
        match self {
            Value::Unit => Kind::Unit,
            Value::I32(_) => Kind::I32,
            Value::I64(_) => Kind::I64,
            Value::F64(_) => Kind::F64,
            Value::Bool(_) => Kind::Bool,
            Value::Str(_) => Kind::Str,
            Value::Bytes(_) => Kind::Bytes,
            Value::ArrayI32(_) => Kind::ArrayI32,
            Value::ArrayI64(_) => Kind::ArrayI64,
            Value::ArrayF64(_) => Kind::ArrayF64,
            Value::ArrayBool(_) => Kind::ArrayBool,
            Value::ArrayStr(_) => Kind::ArrayStr,
            Value::ArrayBytes(_) => Kind::ArrayBytes,
        }
    }

    pub fn as_i32(&self) -> Option<i32> {
        match self {
            Value::I32(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::I64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::F64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn seq<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
            write!(f, "[")?;
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
            write!(f, "]")
        }
        match self {
            Value::Unit => write!(f, "()"),
            Value::I32(v) => write!(f, "{v}"),
            Value::I64(v) => write!(f, "{v}"),
            Value::F64(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Bytes(b) => write!(f, "bytes[{}]", b.len()),
            Value::ArrayI32(v) => seq(f, v),
            Value::ArrayI64(v) => seq(f, v),
            Value::ArrayF64(v) => seq(f, v),
            Value::ArrayBool(v) => seq(f, v),
            Value::ArrayStr(v) => {
                write!(f, "[")?;
                for (i, s) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{s:?}")?;
                }
                write!(f, "]")
            }
            Value::ArrayBytes(v) => write!(f, "bytes[{}][..]", v.len()),
        }
    }
}

macro_rules! value_conversions {
    ($($variant:ident: $ty:ty),* $(,)?) => {
        $(
            impl From<$ty> for Value {
                fn from(v: $ty) -> Value {
                    Value::$variant(v)
                }
            }

            impl TryFrom<Value> for $ty {
                type Error = CodecError;

                fn try_from(v: Value) -> Result<$ty, CodecError> {
                    match v {
                        Value::$variant(x) => Ok(x),
                        other => Err(CodecError::KindMismatch {
                            expected: Kind::$variant,
                            found: other.kind(),
                        }),
                    }
                }
            }
        )*
    };
}

value_conversions! {
    I32: i32,
    I64: i64,
    F64: f64,
    Bool: bool,
    Str: String,
    Bytes: Vec<u8>,
    ArrayI32: Vec<i32>,
    ArrayI64: Vec<i64>,
    ArrayF64: Vec<f64>,
    ArrayBool: Vec<bool>,
}

/// An encoded value: one kind tag byte followed by the value body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadBytes(Vec<u8>);

impl PayloadBytes {
    /// Wrap raw bytes received off the wire. No validation happens here;
    /// `decode` rejects malformed contents.
    pub fn from_vec(bytes: Vec<u8>) -> Self {
        PayloadBytes(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The declared kind in the leading tag byte.
    pub fn kind(&self) -> Result<Kind, CodecError> {
        let tag = *self.0.first().ok_or(CodecError::Empty)?;
        Kind::from_tag(tag)
    }
}

/// Encode a value into its canonical byte form.
///
/// Encoding is deterministic: equal values always produce identical bytes.
pub fn encode(value: &Value) -> PayloadBytes {
    let mut out = Vec::new();
    out.put_u8(value.kind().tag());
    match value {
        Value::Unit => {}
        Value::I32(v) => out.put_i32(*v),
        Value::I64(v) => out.put_i64(*v),
        Value::F64(v) => out.put_f64(*v),
        Value::Bool(v) => out.put_u8(*v as u8),
        Value::Str(s) => out.put_len_prefixed(s.as_bytes()),
        Value::Bytes(b) => out.put_len_prefixed(b),
        Value::ArrayI32(v) => {
            out.put_u32(v.len() as u32);
            for x in v {
                out.put_i32(*x);
            }
        }
        Value::ArrayI64(v) => {
            out.put_u32(v.len() as u32);
            for x in v {
                out.put_i64(*x);
            }
        }
        Value::ArrayF64(v) => {
            out.put_u32(v.len() as u32);
            for x in v {
                out.put_f64(*x);
            }
        }
        Value::ArrayBool(v) => {
            out.put_u32(v.len() as u32);
            for x in v {
                out.put_u8(*x as u8);
            }
        }
        Value::ArrayStr(v) => {
            out.put_u32(v.len() as u32);
            for s in v {
                out.put_len_prefixed(s.as_bytes());
            }
        }
        Value::ArrayBytes(v) => {
            out.put_u32(v.len() as u32);
            for b in v {
                out.put_len_prefixed(b);
            }
        }
    }
    PayloadBytes(out)
}

/// Decode a payload, requiring its declared kind to equal `expected`.
pub fn decode(payload: &PayloadBytes, expected: Kind) -> Result<Value, CodecError> {
    let found = payload.kind()?;
    if found != expected {
        return Err(CodecError::KindMismatch { expected, found });
    }
    decode_value(payload)
}

/// Decode a payload using its own declared kind.
pub fn decode_value(payload: &PayloadBytes) -> Result<Value, CodecError> {
    let kind = payload.kind()?;
    let mut r = Reader::new(&payload.as_bytes()[1..]);
    let value = decode_body(&mut r, kind)?;
    if !r.is_empty() {
        return Err(CodecError::TrailingBytes(r.remaining()));
    }
    Ok(value)
}

fn decode_body(r: &mut Reader<'_>, kind: Kind) -> Result<Value, CodecError> {
    fn read_bool(r: &mut Reader<'_>) -> Result<bool, CodecError> {
        match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(CodecError::InvalidBool(other)),
        }
    }
    fn read_str(r: &mut Reader<'_>) -> Result<String, CodecError> {
        let bytes = r.len_prefixed()?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }

    Ok(match kind {
        Kind::Unit => Value::Unit,
        Kind::I32 => Value::I32(r.i32()?),
        Kind::I64 => Value::I64(r.i64()?),
        Kind::F64 => Value::F64(r.f64()?),
        Kind::Bool => Value::Bool(read_bool(r)?),
        Kind::Str => Value::Str(read_str(r)?),
        Kind::Bytes => Value::Bytes(r.len_prefixed()?.to_vec()),
        Kind::ArrayI32 => {
            let n = r.u32()? as usize;
            let mut v = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                v.push(r.i32()?);
            }
            Value::ArrayI32(v)
        }
        Kind::ArrayI64 => {
            let n = r.u32()? as usize;
            let mut v = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                v.push(r.i64()?);
            }
            Value::ArrayI64(v)
        }
        Kind::ArrayF64 => {
            let n = r.u32()? as usize;
            let mut v = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                v.push(r.f64()?);
            }
            Value::ArrayF64(v)
        }
        Kind::ArrayBool => {
            let n = r.u32()? as usize;
            let mut v = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                v.push(read_bool(r)?);
            }
            Value::ArrayBool(v)
        }
        Kind::ArrayStr => {
            let n = r.u32()? as usize;
            let mut v = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                v.push(read_str(r)?);
            }
            Value::ArrayStr(v)
        }
        Kind::ArrayBytes => {
            let n = r.u32()? as usize;
            let mut v = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                v.push(r.len_prefixed()?.to_vec());
            }
            Value::ArrayBytes(v)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_i32_is_tag_plus_four_zero_bytes() {
        let p = encode(&Value::I32(0));
        assert_eq!(p.as_bytes(), &[0x01, 0, 0, 0, 0]);
    }

    #[test]
    fn i32_is_little_endian() {
        let p = encode(&Value::I32(42));
        assert_eq!(p.as_bytes(), &[0x01, 0x2A, 0x00, 0x00, 0x00]);
    }

    #[test]
    fn i32_array_layout_and_round_trip() {
        let v = Value::ArrayI32(vec![14, 32, 50]);
        let p = encode(&v);
        assert_eq!(
            p.as_bytes(),
            &[
                0x11, // array<i32> tag
                0x03, 0x00, 0x00, 0x00, // count
                0x0E, 0x00, 0x00, 0x00, // 14
                0x20, 0x00, 0x00, 0x00, // 32
                0x32, 0x00, 0x00, 0x00, // 50
            ]
        );
        assert_eq!(decode(&p, Kind::ArrayI32).unwrap(), v);
    }

    #[test]
    fn bool_and_string_round_trip() {
        assert_eq!(
            decode(&encode(&Value::Bool(true)), Kind::Bool).unwrap(),
            Value::Bool(true)
        );
        assert_eq!(
            decode(&encode(&Value::Str("ring".into())), Kind::Str).unwrap(),
            Value::Str("ring".into())
        );
    }

    #[test]
    fn declared_kind_mismatch_is_detected() {
        let p = encode(&Value::I32(7));
        assert_eq!(
            decode(&p, Kind::I64),
            Err(CodecError::KindMismatch {
                expected: Kind::I64,
                found: Kind::I32,
            })
        );
    }

    #[test]
    fn truncated_input_is_detected() {
        let p = encode(&Value::I64(1234567));
        let cut = PayloadBytes::from_vec(p.as_bytes()[..p.len() - 1].to_vec());
        assert!(matches!(
            decode(&cut, Kind::I64),
            Err(CodecError::Truncated { .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_detected() {
        let mut bytes = encode(&Value::Bool(false)).into_vec();
        bytes.push(0xFF);
        assert_eq!(
            decode_value(&PayloadBytes::from_vec(bytes)),
            Err(CodecError::TrailingBytes(1))
        );
    }

    #[test]
    fn unknown_tag_and_empty_payload_are_rejected() {
        let p = PayloadBytes::from_vec(vec![0x7F]);
        assert_eq!(decode_value(&p), Err(CodecError::UnsupportedKind(0x7F)));
        let empty = PayloadBytes::from_vec(vec![]);
        assert_eq!(decode_value(&empty), Err(CodecError::Empty));
    }

    #[test]
    fn invalid_bool_byte_is_rejected() {
        let p = PayloadBytes::from_vec(vec![Kind::Bool.tag(), 2]);
        assert_eq!(decode_value(&p), Err(CodecError::InvalidBool(2)));
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let p = PayloadBytes::from_vec(vec![Kind::Str.tag(), 1, 0, 0, 0, 0xFF]);
        assert_eq!(decode_value(&p), Err(CodecError::InvalidUtf8));
    }

    #[test]
    fn unit_round_trips_as_bare_tag() {
        let p = encode(&Value::Unit);
        assert_eq!(p.as_bytes(), &[0x00]);
        assert_eq!(decode(&p, Kind::Unit).unwrap(), Value::Unit);
    }

    #[test]
    fn encoding_is_deterministic() {
        let v = Value::ArrayStr(vec!["a".into(), "bb".into(), "".into()]);
        assert_eq!(encode(&v), encode(&v));
    }

    mod props {
        use proptest::prelude::*;

        use super::super::*;

        pub fn value_strategy() -> impl Strategy<Value = Value> {
            prop_oneof![
                Just(Value::Unit),
                any::<i32>().prop_map(Value::I32),
                any::<i64>().prop_map(Value::I64),
                any::<f64>().prop_map(Value::F64),
                any::<bool>().prop_map(Value::Bool),
                ".{0,24}".prop_map(Value::Str),
                proptest::collection::vec(any::<u8>(), 0..64).prop_map(Value::Bytes),
                proptest::collection::vec(any::<i32>(), 0..32).prop_map(Value::ArrayI32),
                proptest::collection::vec(any::<i64>(), 0..32).prop_map(Value::ArrayI64),
                proptest::collection::vec(any::<f64>(), 0..32).prop_map(Value::ArrayF64),
                proptest::collection::vec(any::<bool>(), 0..32).prop_map(Value::ArrayBool),
                proptest::collection::vec(".{0,12}", 0..8).prop_map(Value::ArrayStr),
                proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..16), 0..8)
                    .prop_map(Value::ArrayBytes),
            ]
        }

        fn contains_nan(v: &Value) -> bool {
            match v {
                Value::F64(x) => x.is_nan(),
                Value::ArrayF64(xs) => xs.iter().any(|x| x.is_nan()),
                _ => false,
            }
        }

        proptest! {
            #[test]
            fn round_trip_identity(v in value_strategy()) {
                let p = encode(&v);
                let back = decode(&p, v.kind()).unwrap();
                // Byte-level identity holds even for NaN payloads.
                let reencoded = encode(&back);
                prop_assert_eq!(reencoded.as_bytes(), p.as_bytes());
                if !contains_nan(&v) {
                    prop_assert_eq!(back, v);
                }
            }

            #[test]
            fn truncation_never_decodes(v in value_strategy()) {
                let p = encode(&v);
                if p.len() > 1 {
                    let cut = PayloadBytes::from_vec(p.as_bytes()[..p.len() - 1].to_vec());
                    prop_assert!(decode_value(&cut).is_err());
                }
            }
        }
    }
}
