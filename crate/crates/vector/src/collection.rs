use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ivf::{BuildStats, IvfIndex};
use crate::VectorError;

/// Largest accepted deviation of an inserted vector's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;
/// Inserts after which the ANN index is rebuilt automatically.
pub const DEFAULT_REFRESH_EVERY: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub entry_id: u64,
    pub doc_id: String,
    /// Which detected region of the doc's images this came from.
    pub region: u32,
    pub vector: Vec<f32>,
    /// Only used by evaluation.
    pub class_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub entry_id: u64,
    pub doc_id: String,
    pub region: u32,
    pub distance: f64,
}

/// Squared Euclidean distance, accumulated left to right in f64.
pub fn sq_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone)]
pub(crate) struct Meta {
    pub entry_id: u64,
    pub doc_id: Arc<str>,
    pub region: u32,
    pub class_label: Option<Arc<str>>,
}

/// Vectors stored row-major in one buffer, with per-row metadata.
#[derive(Debug, Clone)]
pub struct Collection {
    name: String,
    dim: usize,
    pub(crate) data: Vec<f32>,
    pub(crate) meta: Vec<Meta>,
    rows: HashMap<u64, usize>,
    ann: Option<IvfIndex>,
    /// Rows inserted since the ANN build; always scanned by ANN search.
    staged: Vec<u64>,
    ann_seed: u64,
    refresh_every: usize,
    next_id: u64,
}

impl Collection {
    pub fn new(name: &str, dimension: usize) -> Result<Self, VectorError> {
        if dimension == 0 {
            return Err(VectorError::ZeroDimension);
        }
        Ok(Self {
            name: name.to_string(),
            dim: dimension,
            data: Vec::new(),
            meta: Vec::new(),
            rows: HashMap::new(),
            ann: None,
            staged: Vec::new(),
            ann_seed: 0,
            refresh_every: DEFAULT_REFRESH_EVERY,
            next_id: 1,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Smallest id not yet used by this collection.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn set_refresh_every(&mut self, n: usize) {
        self.refresh_every = n.max(1);
    }

    pub(crate) fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn check_query(&self, q: &[f32], k: usize) -> Result<(), VectorError> {
        if q.len() != self.dim {
            return Err(VectorError::Dimension { expected: self.dim, got: q.len() });
        }
        if k == 0 {
            return Err(VectorError::ZeroK);
        }
        Ok(())
    }

    pub fn insert(&mut self, entry: EmbeddingEntry) -> Result<(), VectorError> {
        if entry.vector.len() != self.dim {
            return Err(VectorError::Dimension { expected: self.dim, got: entry.vector.len() });
        }
        let norm = entry.vector.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(VectorError::NotNormalized(norm));
        }
        if self.rows.contains_key(&entry.entry_id) {
            return Err(VectorError::DuplicateEntry(entry.entry_id));
        }
        self.rows.insert(entry.entry_id, self.meta.len());
        self.data.extend_from_slice(&entry.vector);
        self.meta.push(Meta {
            entry_id: entry.entry_id,
            doc_id: entry.doc_id.into(),
            region: entry.region,
            class_label: entry.class_label.map(Into::into),
        });
        self.next_id = self.next_id.max(entry.entry_id + 1);
        if let Some(ann) = &self.ann {
            self.staged.push(entry.entry_id);
            if self.staged.len() >= self.refresh_every && self.len() >= ann.n_lists() {
                let n = ann.n_lists();
                self.build_ann(n, self.ann_seed)?;
            }
        }
        Ok(())
    }

    /// Removes every entry of `doc_id` from the flat store and the ANN lists.
    pub fn delete_by_doc(&mut self, doc_id: &str) -> usize {
        let before = self.meta.len();
        let mut removed = Vec::new();
        let mut keep_data = Vec::with_capacity(self.data.len());
        let mut keep_meta = Vec::with_capacity(before);
        for (i, m) in self.meta.iter().enumerate() {
            if &*m.doc_id == doc_id {
                removed.push(m.entry_id);
            } else {
                keep_data.extend_from_slice(self.row(i));
                keep_meta.push(m.clone());
            }
        }
        if removed.is_empty() {
            return 0;
        }
        self.data = keep_data;
        self.meta = keep_meta;
        self.rows = self.meta.iter().enumerate().map(|(i, m)| (m.entry_id, i)).collect();
        if let Some(ann) = &mut self.ann {
            ann.remove(&removed);
        }
        self.staged.retain(|id| !removed.contains(id));
        before - self.meta.len()
    }

    pub fn get(&self, entry_id: u64) -> Option<EmbeddingEntry> {
        self.rows.get(&entry_id).map(|&i| self.entry_at(i))
    }

    fn entry_at(&self, i: usize) -> EmbeddingEntry {
        let m = &self.meta[i];
        EmbeddingEntry {
            entry_id: m.entry_id,
            doc_id: m.doc_id.to_string(),
            region: m.region,
            vector: self.row(i).to_vec(),
            class_label: m.class_label.as_deref().map(str::to_string),
        }
    }

    /// Entries of one doc in entry-id order.
    pub fn entries_for_doc(&self, doc_id: &str) -> Vec<EmbeddingEntry> {
        let mut out: Vec<_> = (0..self.meta.len())
            .filter(|&i| &*self.meta[i].doc_id == doc_id)
            .map(|i| self.entry_at(i))
            .collect();
        out.sort_by_key(|e| e.entry_id);
        out
    }

    pub fn entries(&self) -> impl Iterator<Item = EmbeddingEntry> + '_ {
        (0..self.meta.len()).map(|i| self.entry_at(i))
    }

    /// Distinct doc ids that have at least one entry.
    pub fn doc_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.meta.iter().map(|m| m.doc_id.to_string()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    fn hit(&self, i: usize, distance: f64) -> SearchHit {
        let m = &self.meta[i];
        SearchHit {
            entry_id: m.entry_id,
            doc_id: m.doc_id.to_string(),
            region: m.region,
            distance,
        }
    }

    /// The `k` smallest of `(distance, row)` sorted by distance then entry id.
    fn top_k(&self, mut scored: Vec<(f64, usize)>, k: usize) -> Vec<SearchHit> {
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then_with(|| self.meta[a.1].entry_id.cmp(&self.meta[b.1].entry_id))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        scored.into_iter().map(|(d, i)| self.hit(i, d)).collect()
    }

    /// Exact k nearest entries.
    pub fn search_flat(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, VectorError> {
        self.search_flat_where(query, k, |_| true)
    }

    /// Exact k nearest among entries whose doc id passes `keep`.
    pub fn search_flat_where(
        &self,
        query: &[f32],
        k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Vec<SearchHit>, VectorError> {
        self.check_query(query, k)?;
        let scored = (0..self.meta.len())
            .filter(|&i| keep(&self.meta[i].doc_id))
            .map(|i| (sq_distance(query, self.row(i)), i))
            .collect();
        Ok(self.top_k(scored, k))
    }

    /// Runs k-means over the stored vectors and replaces the ANN index.
    pub fn build_ann(&mut self, n_lists: usize, seed: u64) -> Result<BuildStats, VectorError> {
        let (ivf, stats) = IvfIndex::build(self, n_lists, seed)?;
        self.ann = Some(ivf);
        self.ann_seed = seed;
        self.staged.clear();
        Ok(stats)
    }

    pub fn ann(&self) -> Option<&IvfIndex> {
        self.ann.as_ref()
    }

    /// Entries added since the last build.
    pub fn staged(&self) -> usize {
        self.staged.len()
    }

    /// Exact search over the lists of the `n_probe` nearest centroids plus
    /// any entries inserted since the build.
    pub fn search_ann(&self, query: &[f32], k: usize, n_probe: usize) -> Result<Vec<SearchHit>, VectorError> {
        self.check_query(query, k)?;
        let ann = self.ann.as_ref().ok_or(VectorError::NotBuilt)?;
        let ids = ann.candidates(query, n_probe)?;
        let scored = ids
            .chain(self.staged.iter().copied())
            .filter_map(|id| self.rows.get(&id).copied())
            .map(|i| (sq_distance(query, self.row(i)), i))
            .collect();
        Ok(self.top_k(scored, k))
    }
}
