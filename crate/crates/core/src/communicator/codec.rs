//! Self-describing tag–length–value codec for [`Payload`] values.
//!
//! Every encoded value is
//!
//! ```text
//! +--------+----------------+-------------------+
//! | tag u8 | length u32 LE  | `length` bytes    |
//! +--------+----------------+-------------------+
//! ```
//!
//! | tag  | kind   | body                                                     |
//! |------|--------|----------------------------------------------------------|
//! | 0x00 | Null   | empty                                                    |
//! | 0x01 | Bool   | 1 byte, 0 or 1                                           |
//! | 0x02 | Int    | i64 little-endian                                        |
//! | 0x03 | Real   | f64 little-endian (IEEE-754 bits, NaN payloads kept)     |
//! | 0x04 | Text   | UTF-8 bytes                                              |
//! | 0x05 | Bytes  | raw bytes                                                |
//! | 0x06 | Vector | `k` f64 little-endian, `length = 8k`                      |
//! | 0x07 | Matrix | rows u32 LE, cols u32 LE, then `rows*cols` f64 row-major  |
//! | 0x08 | List   | concatenated encoded items                               |
//! | 0x09 | Map    | repeated (key length u32 LE, UTF-8 key, encoded value)   |
//!
//! Map keys are emitted in ascending byte order, so equal maps encode to
//! equal bytes. Trailing bytes after the outermost value are a decode error.
//!
//! The envelope header prepended by the transport is
//! `sender u32 LE | round u64 LE | sent_at f64 LE | encoded payload`.

use std::collections::BTreeMap;

const TAG_NULL: u8 = 0x00;
const TAG_BOOL: u8 = 0x01;
const TAG_INT: u8 = 0x02;
const TAG_REAL: u8 = 0x03;
const TAG_TEXT: u8 = 0x04;
const TAG_BYTES: u8 = 0x05;
const TAG_VECTOR: u8 = 0x06;
const TAG_MATRIX: u8 = 0x07;
const TAG_LIST: u8 = 0x08;
const TAG_MAP: u8 = 0x09;

const HEADER: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodecError {
    #[error("unsupported value: {0}")]
    Unsupported(String),
    #[error("malformed bytes at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

/// Structured message body exchanged between agents.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Null,
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    Bytes(Vec<u8>),
    Vector(Vec<f64>),
    Matrix {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    List(Vec<Payload>),
    Map(BTreeMap<String, Payload>),
}

impl Payload {
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Payload::Matrix { rows, cols, data }
    }

    /// Map from `(key, value)` pairs.
    pub fn map<K: Into<String>, I: IntoIterator<Item = (K, Payload)>>(items: I) -> Self {
        Payload::Map(items.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, key: &str) -> Option<&Payload> {
        match self {
            Payload::Map(m) => m.get(key),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Payload::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Payload::Real(x) => Some(*x),
            Payload::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Payload::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Payload::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Payload]> {
        match self {
            Payload::List(l) => Some(l),
            _ => None,
        }
    }

    /// `(rows, cols, row-major data)`.
    pub fn as_matrix(&self) -> Option<(usize, usize, &[f64])> {
        match self {
            Payload::Matrix { rows, cols, data } => Some((*rows, *cols, data)),
            _ => None,
        }
    }
}

impl From<f64> for Payload {
    fn from(x: f64) -> Self {
        Payload::Real(x)
    }
}

impl From<i64> for Payload {
    fn from(x: i64) -> Self {
        Payload::Int(x)
    }
}

impl From<bool> for Payload {
    fn from(x: bool) -> Self {
        Payload::Bool(x)
    }
}

impl From<&str> for Payload {
    fn from(x: &str) -> Self {
        Payload::Text(x.to_owned())
    }
}

impl From<String> for Payload {
    fn from(x: String) -> Self {
        Payload::Text(x)
    }
}

impl From<Vec<f64>> for Payload {
    fn from(x: Vec<f64>) -> Self {
        Payload::Vector(x)
    }
}

impl From<&[f64]> for Payload {
    fn from(x: &[f64]) -> Self {
        Payload::Vector(x.to_vec())
    }
}

fn len_u32(len: usize, what: &str) -> Result<u32, CodecError> {
    u32::try_from(len).map_err(|_| CodecError::Unsupported(format!("{what} longer than u32::MAX")))
}

fn put_header(out: &mut Vec<u8>, tag: u8, len: usize) -> Result<(), CodecError> {
    out.push(tag);
    out.extend_from_slice(&len_u32(len, "value")?.to_le_bytes());
    Ok(())
}

pub fn encode(v: &Payload) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    encode_into(v, &mut out)?;
    Ok(out)
}

fn encode_into(v: &Payload, out: &mut Vec<u8>) -> Result<(), CodecError> {
    match v {
        Payload::Null => put_header(out, TAG_NULL, 0)?,
        Payload::Bool(b) => {
            put_header(out, TAG_BOOL, 1)?;
            out.push(*b as u8);
        }
        Payload::Int(i) => {
            put_header(out, TAG_INT, 8)?;
            out.extend_from_slice(&i.to_le_bytes());
        }
        Payload::Real(x) => {
            put_header(out, TAG_REAL, 8)?;
            out.extend_from_slice(&x.to_le_bytes());
        }
        Payload::Text(s) => {
            put_header(out, TAG_TEXT, s.len())?;
            out.extend_from_slice(s.as_bytes());
        }
        Payload::Bytes(b) => {
            put_header(out, TAG_BYTES, b.len())?;
            out.extend_from_slice(b);
        }
        Payload::Vector(xs) => {
            put_header(out, TAG_VECTOR, xs.len() * 8)?;
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::Matrix { rows, cols, data } => {
            if rows.checked_mul(*cols) != Some(data.len()) {
                return Err(CodecError::Unsupported(format!(
                    "matrix {rows}x{cols} with {} entries",
                    data.len()
                )));
            }
            put_header(out, TAG_MATRIX, 8 + data.len() * 8)?;
            out.extend_from_slice(&len_u32(*rows, "matrix rows")?.to_le_bytes());
            out.extend_from_slice(&len_u32(*cols, "matrix cols")?.to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::List(items) => {
            let start = out.len();
            put_header(out, TAG_LIST, 0)?;
            for item in items {
                encode_into(item, out)?;
            }
            patch_len(out, start)?;
        }
        Payload::Map(m) => {
            let start = out.len();
            put_header(out, TAG_MAP, 0)?;
            for (k, val) in m {
                out.extend_from_slice(&len_u32(k.len(), "map key")?.to_le_bytes());
                out.extend_from_slice(k.as_bytes());
                encode_into(val, out)?;
            }
            patch_len(out, start)?;
        }
    }
    Ok(())
}

fn patch_len(out: &mut [u8], start: usize) -> Result<(), CodecError> {
    let body = out.len() - start - HEADER;
    out[start + 1..start + HEADER].copy_from_slice(&len_u32(body, "container")?.to_le_bytes());
    Ok(())
}

pub fn decode(b: &[u8]) -> Result<Payload, CodecError> {
    let mut r = Reader { buf: b, pos: 0 };
    let v = r.value()?;
    if r.pos != b.len() {
        return Err(r.err(format!("{} trailing bytes", b.len() - r.pos)));
    }
    Ok(v)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> CodecError {
        CodecError::Malformed {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < k {
            return Err(self.err(format!(
                "need {k} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, k: usize) -> Result<Vec<f64>, CodecError> {
        Ok(self
            .take(k * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn utf8(&mut self, k: usize) -> Result<String, CodecError> {
        let at = self.pos;
        let bytes = self.take(k)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::Malformed {
            offset: at,
            reason: "invalid UTF-8".into(),
        })
    }

    fn value(&mut self) -> Result<Payload, CodecError> {
        let tag = self.take(1)?[0];
        let len = self.u32()? as usize;
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| self.err(format!("declared length {len} exceeds input")))?;
        let fixed = |want: usize, r: &Self| {
            if len == want {
                Ok(())
            } else {
                Err(r.err(format!("tag {tag:#04x} needs length {want}, got {len}")))
            }
        };
        let v = match tag {
            TAG_NULL => {
                fixed(0, self)?;
                Payload::Null
            }
            TAG_BOOL => {
                fixed(1, self)?;
                match self.take(1)?[0] {
                    0 => Payload::Bool(false),
                    1 => Payload::Bool(true),
                    b => return Err(self.err(format!("bool byte {b}"))),
                }
            }
            TAG_INT => {
                fixed(8, self)?;
                Payload::Int(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
            TAG_REAL => {
                fixed(8, self)?;
                Payload::Real(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
            TAG_TEXT => Payload::Text(self.utf8(len)?),
            TAG_BYTES => Payload::Bytes(self.take(len)?.to_vec()),
            TAG_VECTOR => {
                if len % 8 != 0 {
                    return Err(self.err(format!("vector length {len} not a multiple of 8")));
                }
                Payload::Vector(self.f64s(len / 8)?)
            }
            TAG_MATRIX => {
                if len < 8 {
                    return Err(self.err("matrix body shorter than its shape"));
                }
                let rows = self.u32()? as usize;
                let cols = self.u32()? as usize;
                if (rows as u64) * (cols as u64) * 8 != (len - 8) as u64 {
                    return Err(self.err(format!("matrix {rows}x{cols} does not fit {len} bytes")));
                }
                Payload::Matrix {
                    rows,
                    cols,
                    data: self.f64s(rows * cols)?,
                }
            }
            TAG_LIST => {
                let mut items = Vec::new();
                while self.pos < end {
                    items.push(self.value()?);
                }
                Payload::List(items)
            }
            TAG_MAP => {
                let mut m = BTreeMap::new();
                while self.pos < end {
                    let klen = self.u32()? as usize;
                    let key = self.utf8(klen)?;
                    let val = self.value()?;
                    if m.insert(key.clone(), val).is_some() {
                        return Err(self.err(format!("duplicate map key {key:?}")));
                    }
                }
                Payload::Map(m)
            }
            other => return Err(self.err(format!("unknown tag {other:#04x}"))),
        };
        if self.pos != end {
            return Err(self.err("value overruns its declared length"));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vector_round_trip() {
        let v = Payload::Vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(decode(&encode(&v).unwrap()).unwrap(), v);
    }

    #[test]
    fn map_round_trip() {
        let v = Payload::map([
            ("pos", Payload::Vector(vec![0.0, 0.0])),
            ("leader", Payload::Bool(true)),
        ]);
        assert_eq!(decode(&encode(&v).unwrap()).unwrap(), v);
    }

    #[test]
    fn empty_and_garbage_rejected() {
        assert!(matches!(decode(&[]), Err(CodecError::Malformed { .. })));
        assert!(matches!(decode(&[0xff, 0, 0, 0, 0]), Err(CodecError::Malformed { .. })));
        // declared length beyond input
        assert!(decode(&[TAG_TEXT, 10, 0, 0, 0, b'a']).is_err());
        // trailing byte
        let mut b = encode(&Payload::Null).unwrap();
        b.push(0);
        assert!(decode(&b).is_err());
    }

    #[test]
    fn inconsistent_matrix_is_unsupported() {
        let bad = Payload::matrix(2, 2, vec![1.0]);
        assert!(matches!(encode(&bad), Err(CodecError::Unsupported(_))));
    }

    #[test]
    fn real_layout_is_little_endian() {
        let b = encode(&Payload::Real(1.0)).unwrap();
        assert_eq!(b, [0x03, 8, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
        let m = encode(&Payload::matrix(1, 1, vec![0.0])).unwrap();
        assert_eq!(&m[..13], &[0x07, 16, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
    }

    fn leaf() -> impl Strategy<Value = Payload> {
        prop_oneof![
            Just(Payload::Null),
            any::<bool>().prop_map(Payload::Bool),
            any::<i64>().prop_map(Payload::Int),
            any::<u64>().prop_map(|b| Payload::Real(f64::from_bits(b))),
            ".{0,12}".prop_map(Payload::Text),
            prop::collection::vec(any::<u8>(), 0..16).prop_map(Payload::Bytes),
            prop::collection::vec(any::<u64>().prop_map(f64::from_bits), 0..8)
                .prop_map(Payload::Vector),
            (0usize..4, 0usize..4).prop_flat_map(|(r, c)| {
                prop::collection::vec(-1e6f64..1e6, r * c)
                    .prop_map(move |d| Payload::matrix(r, c, d))
            }),
        ]
    }

    fn payload() -> impl Strategy<Value = Payload> {
        leaf().prop_recursive(3, 32, 6, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..6).prop_map(Payload::List),
                prop::collection::btree_map(".{0,6}", inner, 0..6).prop_map(Payload::Map),
            ]
        })
    }

    proptest! {
        // NaN != NaN, so compare through the bytes: encode∘decode∘encode == encode
        // and decode∘encode is identity on the byte level.
        #[test]
        fn bytes_round_trip(v in payload()) {
            let b = encode(&v).unwrap();
            let back = decode(&b).unwrap();
            prop_assert_eq!(encode(&back).unwrap(), b);
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode(&bytes);
        }
    }
}
