//! Flat and IVF search against an exhaustive-scan oracle.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use snapforge_vector::{default_n_lists, default_n_probe, Collection, EmbeddingEntry, VectorError};

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn collection(n: usize, dim: usize, seed: u64) -> (Collection, Vec<Vec<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Collection::new("c", dim).unwrap();
    let mut vs = Vec::new();
    for i in 0..n {
        let v = random_unit(&mut rng, dim);
        c.insert(EmbeddingEntry {
            entry_id: i as u64 + 1,
            doc_id: format!("doc{}", i / 3),
            region: (i % 3) as u32,
            vector: v.clone(),
            class_label: None,
        })
        .unwrap();
        vs.push(v);
    }
    (c, vs)
}

/// Exhaustive scan written independently of the library: f64 per-coordinate
/// accumulation, full sort by (distance, id).
fn oracle(vs: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = vs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut d = 0.0f64;
            for j in 0..q.len() {
                let x = q[j] as f64 - v[j] as f64;
                d += x * x;
            }
            (i as u64 + 1, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn ids(hits: &[snapforge_vector::SearchHit]) -> Vec<u64> {
    hits.iter().map(|h| h.entry_id).collect()
}

#[test]
fn flat_equals_oracle_exactly() {
    let (c, vs) = collection(1000, 64, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let q = random_unit(&mut rng, 64);
        let got: Vec<(u64, f64)> = c.search_flat(&q, 10).unwrap().iter().map(|h| (h.entry_id, h.distance)).collect();
        assert_eq!(got, oracle(&vs, &q, 10));
    }
}

/// Recall@10 of IVF against flat for each probe count.
fn recall_curve(c: &Collection, queries: &[Vec<f32>], probes: &[usize]) -> Vec<f64> {
    probes
        .iter()
        .map(|&probe| {
            let mut found = 0;
            for q in queries {
                let exact = ids(&c.search_flat(q, 10).unwrap());
                let approx = c.search_ann(q, 10, probe).unwrap();
                found += approx.iter().filter(|h| exact.contains(&h.entry_id)).count();
                if probe == c.ann().unwrap().n_lists() {
                    assert_eq!(approx, c.search_flat(q, 10).unwrap());
                }
            }
            found as f64 / (10.0 * queries.len() as f64)
        })
        .collect()
}

const PROBES: [usize; 6] = [1, 2, 4, 8, 16, 64];

#[test]
fn ivf_on_isotropic_vectors_is_monotone_and_exact_at_full_probe() {
    let (mut c, _) = collection(10_000, 128, 3);
    let stats = c.build_ann(64, 7).unwrap();
    assert_eq!(stats.list_sizes.iter().sum::<usize>(), 10_000);
    for w in stats.objective.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "k-means objective rose: {w:?}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let queries: Vec<Vec<f32>> = (0..200).map(|_| random_unit(&mut rng, 128)).collect();
    let curve = recall_curve(&c, &queries, &PROBES);
    println!("isotropic recall@10 by n_probe {PROBES:?}: {curve:?}");
    assert!(curve.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(curve[5], 1.0);
}

#[test]
fn ivf_on_clustered_vectors_recalls_most_neighbours() {
    let dim = 128;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let centers: Vec<Vec<f32>> = (0..64).map(|_| random_unit(&mut rng, dim)).collect();
    let near = |rng: &mut ChaCha8Rng| {
        let c = &centers[rng.random_range(0..centers.len())];
        let noise = random_unit(rng, dim);
        let v: Vec<f64> = c.iter().zip(&noise).map(|(a, b)| *a as f64 + 0.6 * *b as f64).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect::<Vec<f32>>()
    };
    let mut c = Collection::new("c", dim).unwrap();
    for i in 0..10_000u64 {
        let v = near(&mut rng);
        c.insert(EmbeddingEntry { entry_id: i + 1, doc_id: format!("d{i}"), region: 0, vector: v, class_label: None }).unwrap();
    }
    c.build_ann(64, 7).unwrap();
    let queries: Vec<Vec<f32>> = (0..200).map(|_| near(&mut rng)).collect();
    let curve = recall_curve(&c, &queries, &PROBES);
    println!("clustered recall@10 by n_probe {PROBES:?}: {curve:?}");
    assert!(curve[3] >= 0.90, "recall {}", curve[3]);
}

#[test]
fn single_list_is_flat_and_builds_are_seeded() {
    let (mut c, _) = collection(300, 16, 5);
    c.build_ann(1, 0).unwrap();
    let q = random_unit(&mut ChaCha8Rng::seed_from_u64(6), 16);
    assert_eq!(c.search_ann(&q, 300, 1).unwrap(), c.search_flat(&q, 300).unwrap());

    c.build_ann(12, 99).unwrap();
    let a = c.ann().unwrap().lists().to_vec();
    c.build_ann(12, 99).unwrap();
    assert_eq!(a, c.ann().unwrap().lists());
    assert!(matches!(c.search_ann(&q, 5, 0), Err(VectorError::ProbeRange { .. })));
    assert!(matches!(c.search_ann(&q, 5, 13), Err(VectorError::ProbeRange { .. })));
    assert!(matches!(c.build_ann(301, 0), Err(VectorError::TooFewEntries { .. })));
}

#[test]
fn small_candidate_pool_returns_everything_sorted() {
    let (mut c, _) = collection(40, 8, 8);
    c.build_ann(8, 1).unwrap();
    let q = random_unit(&mut ChaCha8Rng::seed_from_u64(9), 8);
    let hits = c.search_ann(&q, 1000, 1).unwrap();
    let pool = c.ann().unwrap().lists()[c.ann().unwrap().probe_order(&q)[0]].len();
    assert_eq!(hits.len(), pool);
    assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
}

#[test]
fn inserts_after_build_are_searchable() {
    let (mut c, _) = collection(100, 8, 10);
    c.build_ann(10, 0).unwrap();
    let v = random_unit(&mut ChaCha8Rng::seed_from_u64(11), 8);
    c.insert(EmbeddingEntry { entry_id: 5000, doc_id: "new".into(), region: 0, vector: v.clone(), class_label: None }).unwrap();
    assert_eq!(c.staged(), 1);
    assert_eq!(c.search_ann(&v, 1, 1).unwrap()[0].doc_id, "new");
    c.set_refresh_every(2);
    let w = random_unit(&mut ChaCha8Rng::seed_from_u64(12), 8);
    c.insert(EmbeddingEntry { entry_id: 5001, doc_id: "new2".into(), region: 0, vector: w, class_label: None }).unwrap();
    assert_eq!(c.staged(), 0, "reached the refresh threshold");
    assert_eq!(c.ann().unwrap().lists().iter().map(Vec::len).sum::<usize>(), 102);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (mut c, _) = collection(50, 12, 13);
    c.insert(EmbeddingEntry {
        entry_id: 999,
        doc_id: "labelled".into(),
        region: 2,
        vector: random_unit(&mut ChaCha8Rng::seed_from_u64(1), 12),
        class_label: Some("dress".into()),
    })
    .unwrap();
    let path = dir.path().join("items.svec");
    c.save(&path).unwrap();
    let back = Collection::load(&path).unwrap();
    assert_eq!(back.name(), "items");
    assert_eq!(back.entries().collect::<Vec<_>>(), c.entries().collect::<Vec<_>>());
    let q = random_unit(&mut ChaCha8Rng::seed_from_u64(14), 12);
    assert_eq!(back.search_flat(&q, 20).unwrap(), c.search_flat(&q, 20).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"SNAPVEC1");
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(Collection::load(&path).is_err());
}

#[test]
fn defaults() {
    assert_eq!(default_n_lists(10_000), 100);
    assert_eq!(default_n_lists(2), 2);
    assert_eq!(default_n_probe(100), 12);
    assert_eq!(default_n_probe(4), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// ANN hits are a subset of the full flat ranking with identical
    /// distances, all within [0, 4].
    #[test]
    fn ann_hits_are_flat_hits(seed in 0u64..1000, n in 20usize..120, lists in 1usize..10, probe_frac in 0.0f64..1.0) {
        let (mut c, _) = collection(n, 6, seed);
        c.build_ann(lists, seed).unwrap();
        let probe = 1 + ((lists - 1) as f64 * probe_frac) as usize;
        let q = random_unit(&mut ChaCha8Rng::seed_from_u64(seed + 1), 6);
        let flat = c.search_flat(&q, n).unwrap();
        for h in c.search_ann(&q, 10, probe).unwrap() {
            prop_assert!((0.0..=4.0).contains(&h.distance));
            prop_assert!(flat.iter().any(|f| f == &h));
        }
    }
}
