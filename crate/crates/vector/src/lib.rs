//! Embedded vector store for unit-length embeddings.
//!
//! Distances are squared Euclidean, which on unit vectors is `2 − 2·cos` and
//! so ranks exactly like cosine distance. Flat search is exact and always
//! current; the IVF index clusters the stored vectors with k-means and scans
//! only the lists of the `n_probe` nearest centroids.

mod collection;
mod file;
mod ivf;

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;

pub use collection::{sq_distance, Collection, EmbeddingEntry, SearchHit, DEFAULT_REFRESH_EVERY, NORM_TOLERANCE};
pub use file::MAGIC;
pub use ivf::{default_n_lists, default_n_probe, BuildStats, IvfIndex, KMEANS_ITERATIONS};

#[derive(Debug, thiserror::Error)]
pub enum VectorError {
    #[error("collection {0:?} already exists")]
    DuplicateCollection(String),
    #[error("unknown collection {0:?}")]
    UnknownCollection(String),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("vector norm {0} is not 1")]
    NotNormalized(f64),
    #[error("entry id {0} already present")]
    DuplicateEntry(u64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least {needed} entries to build {needed} lists, have {have}")]
    TooFewEntries { needed: usize, have: usize },
    #[error("n_probe {n_probe} outside 1..={n_lists}")]
    ProbeRange { n_probe: usize, n_lists: usize },
    #[error("no ANN index has been built")]
    NotBuilt,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad collection file: {0}")]
    Format(String),
}

pub type SharedCollection = Arc<RwLock<Collection>>;

/// Named collections. Searches take a read lock on one collection; writes
/// take its write lock.
#[derive(Debug, Default)]
pub struct VectorDb {
    collections: RwLock<BTreeMap<String, SharedCollection>>,
}

impl VectorDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_collection(&self, name: &str, dimension: usize) -> Result<SharedCollection, VectorError> {
        let mut map = self.collections.write();
        if map.contains_key(name) {
            return Err(VectorError::DuplicateCollection(name.to_string()));
        }
        let c = Arc::new(RwLock::new(Collection::new(name, dimension)?));
        map.insert(name.to_string(), c.clone());
        Ok(c)
    }

    /// Adds an existing collection (e.g. one loaded from disk).
    pub fn attach(&self, collection: Collection) -> Result<SharedCollection, VectorError> {
        let mut map = self.collections.write();
        let name = collection.name().to_string();
        if map.contains_key(&name) {
            return Err(VectorError::DuplicateCollection(name));
        }
        let c = Arc::new(RwLock::new(collection));
        map.insert(name, c.clone());
        Ok(c)
    }

    pub fn get(&self, name: &str) -> Result<SharedCollection, VectorError> {
        self.collections
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| VectorError::UnknownCollection(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.collections.read().keys().cloned().collect()
    }
}
