use std::hash::Hasher;

use fnv::FnvHasher;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tuple::Tuple;
use crate::StreamError;

/// How a subscription spreads tuples over the subscriber's tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Shuffle,
    Fields(Vec<String>),
    Global,
}

/// 64-bit FNV-1a over the type-tagged encodings of the named fields.
pub fn fields_hash(tuple: &Tuple, names: &[String]) -> Result<u64, StreamError> {
    let mut h = FnvHasher::default();
    for name in names {
        let v = tuple.get(name).ok_or_else(|| StreamError::MissingField(name.clone()))?;
        v.hash_into(&mut h);
    }
    Ok(h.finish())
}

/// Picks the destination task for `tuple` among `task_count` tasks.
pub fn route<R: Rng + ?Sized>(
    tuple: &Tuple,
    grouping: &Grouping,
    task_count: usize,
    rng: &mut R,
) -> Result<usize, StreamError> {
    assert!(task_count >= 1, "task_count must be positive");
    match grouping {
        Grouping::Global => Ok(0),
        Grouping::Shuffle => Ok(rng.random_range(0..task_count)),
        Grouping::Fields(names) => Ok((fields_hash(tuple, names)? % task_count as u64) as usize),
    }
}
