//! Offline retrieval benchmark.
//!
//! A labelled corpus is split per class into queries and a gallery. The
//! gallery is embedded into a fresh flat vector collection, each query is
//! embedded and searched, and precision@k counts retrieved items sharing the
//! query's label. Any [`Embedder`] runs through the same path.

mod split;
mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use snapforge_gan::corpus::{item_path, load_manifest};
use snapforge_gan::preprocess::decode;
use snapforge_gan::{Embedder, Embedding};
use snapforge_vector::{Collection, EmbeddingEntry};

pub use split::split;
pub use table::{report_json, report_table};

/// Failure share above which a benchmark run is abandoned.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("query fraction {0} outside (0, 1)")]
    Fraction(f64),
    #[error("class {0:?} has fewer than 2 items")]
    SmallClass(String),
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("no k values requested")]
    NoK,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{failed} of {total} images failed to embed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("corpus: {0}")]
    Corpus(#[from] snapforge_gan::GanError),
    #[error("vector index: {0}")]
    Vector(#[from] snapforge_vector::VectorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub item_id: String,
    pub image: PathBuf,
    pub class_label: String,
}

/// Items of a generated corpus directory (see `snapforge gen-corpus`).
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<LabeledItem>, EvalError> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    Ok(manifest
        .items
        .iter()
        .map(|it| LabeledItem {
            item_id: it.file.clone(),
            image: item_path(dir, it),
            class_label: it.class_name.clone(),
        })
        .collect())
}

/// Fraction of the first `min(k, len)` retrieved labels equal to `query`.
/// An empty list scores 0.
pub fn precision_at_k<L: PartialEq>(retrieved: &[L], query: &L, k: usize) -> f64 {
    assert!(k >= 1, "precision_at_k needs k >= 1");
    let n = k.min(retrieved.len());
    if n == 0 {
        log::warn!("precision over an empty result list");
        return 0.0;
    }
    retrieved[..n].iter().filter(|l| *l == query).count() as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub embedder: String,
    pub model_size_bytes: u64,
    /// Mean precision@k keyed by k.
    pub precision: BTreeMap<usize, f64>,
    pub mean_inference_secs: f64,
    pub median_inference_secs: f64,
    pub query_count: usize,
    pub gallery_count: usize,
    pub failures: usize,
}

/// Embedded items with their labels, plus per-image timings.
struct Embedded {
    items: Vec<(Embedding, String)>,
    seconds: Vec<f64>,
    failures: usize,
}

fn embed_all(embedder: &dyn Embedder, items: &[LabeledItem], workers: usize) -> Embedded {
    let workers = workers.clamp(1, items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    let results: Vec<Vec<Option<(Embedding, String, f64)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|item| {
                            let img: RgbImage = match std::fs::read(&item.image).map_err(|e| e.to_string()).and_then(|b| decode(&b).map_err(|e| e.to_string())) {
                                Ok(img) => img,
                                Err(e) => {
                                    log::warn!("{}: {e}", item.image.display());
                                    return None;
                                }
                            };
                            // Decode is excluded; preprocess + forward + normalize are timed.
                            let t0 = Instant::now();
                            let e = embedder.embed_image(&img);
                            let secs = t0.elapsed().as_secs_f64();
                            match e {
                                Ok(e) => Some((e, item.class_label.clone(), secs)),
                                Err(err) => {
                                    log::warn!("{}: {err}", item.item_id);
                                    None
                                }
                            }
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
    });
    let mut out = Embedded { items: Vec::new(), seconds: Vec::new(), failures: 0 };
    for r in results.into_iter().flatten() {
        match r {
            Some((e, label, secs)) => {
                out.items.push((e, label));
                out.seconds.push(secs);
            }
            None => out.failures += 1,
        }
    }
    out
}

/// Mean precision@k for each k, ranking each query against the gallery with
/// exact search in a fresh vector collection.
pub fn precision_from_embeddings(
    queries: &[(Vec<f32>, String)],
    gallery: &[(Vec<f32>, String)],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, EvalError> {
    if ks.is_empty() {
        return Err(EvalError::NoK);
    }
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let Some((first, _)) = gallery.first() else {
        return Err(EvalError::EmptyGallery);
    };
    let mut coll = Collection::new("eval", first.len())?;
    for (i, (v, label)) in gallery.iter().enumerate() {
        coll.insert(EmbeddingEntry {
            entry_id: i as u64,
            doc_id: i.to_string(),
            region: 0,
            vector: v.clone(),
            class_label: Some(label.clone()),
        })?;
    }
    let kmax = *ks.iter().max().expect("non-empty");
    let mut sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    for (q, label) in queries {
        let hits = coll.search_flat(q, kmax)?;
        let labels: Vec<&str> = hits.iter().map(|h| gallery[h.entry_id as usize].1.as_str()).collect();
        for (&k, s) in sums.iter_mut() {
            *s += precision_at_k(&labels, &label.as_str(), k);
        }
    }
    let n = queries.len().max(1) as f64;
    Ok(sums.into_iter().map(|(k, s)| (k, s / n)).collect())
}

pub struct BenchmarkOptions {
    pub ks: Vec<usize>,
    /// Parallel embedding workers.
    pub workers: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Embeds gallery and queries with `embedder` and measures precision@k.
pub fn run_benchmark(
    embedder: &dyn Embedder,
    queries: &[LabeledItem],
    gallery: &[LabeledItem],
    opts: &BenchmarkOptions,
) -> Result<EvalReport, EvalError> {
    if gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    let g = embed_all(embedder, gallery, opts.workers);
    let q = embed_all(embedder, queries, opts.workers);
    let failures = g.failures + q.failures;
    let total = gallery.len() + queries.len();
    if failures as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(EvalError::TooManyFailures { failed: failures, total });
    }
    let to_pairs = |e: Embedded| e.items.into_iter().map(|(e, l)| (e.vector, l)).collect::<Vec<_>>();
    let mut seconds: Vec<f64> = g.seconds.iter().chain(&q.seconds).copied().collect();
    let mean = seconds.iter().sum::<f64>() / seconds.len().max(1) as f64;
    let med = median(&mut seconds);
    let (query_count, gallery_count) = (q.items.len(), g.items.len());
    let precision = precision_from_embeddings(&to_pairs(q), &to_pairs(g), &opts.ks)?;
    Ok(EvalReport {
        embedder: embedder.name().to_string(),
        model_size_bytes: embedder.model_size_bytes(),
        precision,
        mean_inference_secs: mean,
        median_inference_secs: med,
        query_count,
        gallery_count,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_examples() {
        let r = ["a", "b", "a", "c", "a", "a", "b", "a", "d", "e"];
        assert_eq!(precision_at_k(&r, &"a", 10), 0.5);
        assert_eq!(precision_at_k(&["x"; 4], &"x", 4), 1.0);
        assert_eq!(precision_at_k(&["y"; 4], &"x", 4), 0.0);
        assert_eq!(precision_at_k(&["x", "y"], &"x", 10), 0.5);
        assert_eq!(precision_at_k::<&str>(&[], &"x", 3), 0.0);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut []), 0.0);
    }

    #[test]
    fn precision_needs_ks_and_gallery() {
        let g = vec![(vec![1.0f32, 0.0], "a".to_string())];
        assert!(matches!(precision_from_embeddings(&g, &g, &[]), Err(EvalError::NoK)));
        assert!(matches!(precision_from_embeddings(&g, &g, &[0]), Err(EvalError::ZeroK)));
        assert!(matches!(precision_from_embeddings(&g, &[], &[1]), Err(EvalError::EmptyGallery)));
    }
}
