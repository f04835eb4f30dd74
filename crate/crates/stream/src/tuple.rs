use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// A single field value carried by a tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Str(String),
    Int(i64),
    Decimal(f64),
    Bytes(Vec<u8>),
    List(Vec<String>),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_decimal(&self) -> Option<f64> {
        match self {
            Value::Decimal(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    /// Type-tagged, length-prefixed bytes used for stable hashing.
    pub(crate) fn hash_into(&self, h: &mut impl std::hash::Hasher) {
        fn chunk(h: &mut impl std::hash::Hasher, tag: u8, bytes: &[u8]) {
            h.write(&[tag]);
            h.write(&(bytes.len() as u64).to_le_bytes());
            h.write(bytes);
        }
        match self {
            Value::Str(s) => chunk(h, 0, s.as_bytes()),
            Value::Int(v) => chunk(h, 1, &v.to_le_bytes()),
            Value::Decimal(v) => chunk(h, 2, &v.to_bits().to_le_bytes()),
            Value::Bytes(b) => chunk(h, 3, b),
            Value::List(items) => {
                h.write(&[4]);
                h.write(&(items.len() as u64).to_le_bytes());
                for s in items {
                    chunk(h, 0, s.as_bytes());
                }
            }
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Decimal(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}

impl From<Vec<String>> for Value {
    fn from(v: Vec<String>) -> Self {
        Value::List(v)
    }
}

/// An immutable unit of stream data. Each delivery to a task carries its own
/// `id`; `roots` names the spout trees the tuple belongs to.
#[derive(Clone)]
pub struct Tuple {
    pub id: u64,
    pub source: Arc<str>,
    pub stream: Arc<str>,
    fields: Arc<[String]>,
    values: Arc<[Value]>,
    pub anchor_ids: Vec<u64>,
    pub(crate) roots: Vec<u64>,
    pub spawn_time: u64,
}

impl Tuple {
    pub(crate) fn new(
        source: Arc<str>,
        stream: Arc<str>,
        fields: Arc<[String]>,
        values: Arc<[Value]>,
        anchor_ids: Vec<u64>,
        roots: Vec<u64>,
        spawn_time: u64,
    ) -> Self {
        Self {
            id: 0,
            source,
            stream,
            fields,
            values,
            anchor_ids,
            roots,
            spawn_time,
        }
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn roots(&self) -> &[u64] {
        &self.roots
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.fields.iter().position(|f| f == field).map(|i| &self.values[i])
    }

    pub fn get_str(&self, field: &str) -> Option<&str> {
        self.get(field).and_then(Value::as_str)
    }
}

impl fmt::Debug for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tuple")
            .field("id", &format_args!("{:#018x}", self.id))
            .field("source", &self.source)
            .field("stream", &self.stream)
            .field("fields", &self.fields)
            .finish_non_exhaustive()
    }
}

/// Bijective 64-bit mixer; applied to a counter it yields distinct,
/// well-spread tuple ids.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
