use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collection::{sq_distance, Collection};
use crate::VectorError;

pub const KMEANS_ITERATIONS: usize = 20;

/// `⌈√n⌉`, at least 1.
pub fn default_n_lists(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

pub fn default_n_probe(n_lists: usize) -> usize {
    (n_lists / 8).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub n_lists: usize,
    /// Sum of squared distances to the assigned centroid, measured after
    /// every assignment step (initial one included).
    pub objective: Vec<f64>,
    pub list_sizes: Vec<usize>,
}

/// Inverted-file index: entry ids bucketed by nearest centroid.
#[derive(Debug, Clone)]
pub struct IvfIndex {
    dim: usize,
    centroids: Vec<f32>,
    lists: Vec<Vec<u64>>,
}

/// Index of the nearest centroid (lowest index on ties) and its distance.
fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_distance(v, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

impl IvfIndex {
    pub(crate) fn build(coll: &Collection, n_lists: usize, seed: u64) -> Result<(Self, BuildStats), VectorError> {
        let n = coll.len();
        if n_lists == 0 || n < n_lists {
            return Err(VectorError::TooFewEntries { needed: n_lists.max(1), have: n });
        }
        let dim = coll.dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init: Vec<usize> = sample(&mut rng, n, n_lists).into_vec();
        init.sort_unstable();
        let mut centroids: Vec<f32> = init.iter().flat_map(|&i| coll.row(i).iter().copied()).collect();

        let mut assign = vec![0usize; n];
        let mut objective = Vec::with_capacity(KMEANS_ITERATIONS + 1);
        let assign_all = |centroids: &[f32], assign: &mut [usize]| -> f64 {
            let mut total = 0.0;
            for (i, a) in assign.iter_mut().enumerate() {
                let (c, d) = nearest(centroids, dim, coll.row(i));
                *a = c;
                total += d;
            }
            total
        };
        objective.push(assign_all(&centroids, &mut assign));
        for _ in 0..KMEANS_ITERATIONS {
            let mut sums = vec![0.0f64; n_lists * dim];
            let mut counts = vec![0usize; n_lists];
            for (i, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(coll.row(i)) {
                    *s += *v as f64;
                }
            }
            for c in 0..n_lists {
                // An empty list keeps its old centroid.
                if counts[c] > 0 {
                    for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                        *dst = (*s / counts[c] as f64) as f32;
                    }
                }
            }
            objective.push(assign_all(&centroids, &mut assign));
        }

        let mut lists = vec![Vec::new(); n_lists];
        for (i, &c) in assign.iter().enumerate() {
            lists[c].push(coll.meta[i].entry_id);
        }
        let stats = BuildStats {
            n_lists,
            objective,
            list_sizes: lists.iter().map(Vec::len).collect(),
        };
        log::debug!("built {n_lists} lists over {n} entries");
        Ok((Self { dim, centroids, lists }, stats))
    }

    pub fn n_lists(&self) -> usize {
        self.lists.len()
    }

    pub fn lists(&self) -> &[Vec<u64>] {
        &self.lists
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Centroid indexes ordered by distance to `query`, ties by index.
    pub fn probe_order(&self, query: &[f32]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = (0..self.n_lists()).map(|c| (sq_distance(query, self.centroid(c)), c)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, c)| c).collect()
    }

    pub(crate) fn candidates(&self, query: &[f32], n_probe: usize) -> Result<impl Iterator<Item = u64> + '_, VectorError> {
        if n_probe == 0 || n_probe > self.n_lists() {
            return Err(VectorError::ProbeRange { n_probe, n_lists: self.n_lists() });
        }
        let order = self.probe_order(query);
        Ok(order.into_iter().take(n_probe).flat_map(move |c| self.lists[c].iter().copied()))
    }

    pub(crate) fn remove(&mut self, ids: &[u64]) {
        for list in &mut self.lists {
            list.retain(|id| !ids.contains(id));
        }
    }
}
