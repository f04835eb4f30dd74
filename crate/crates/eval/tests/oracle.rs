//! Harness precision against an all-pairs brute-force recomputation, plus the
//! random-label and identical-twin sanity checks.

use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use snapforge_eval::{precision_from_embeddings, run_benchmark, split, BenchmarkOptions, LabeledItem};
use snapforge_gan::{DcganConfig, DcganEmbedder, DcganParams, PixelEmbedder};

type Labeled = (Vec<f32>, String);

fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Every query against every gallery item: full sort by (distance, gallery
/// position), then label counting. No vector index involved.
fn brute_force(queries: &[Labeled], gallery: &[Labeled], k: usize) -> f64 {
    let mut total = 0.0;
    for (q, ql) in queries {
        let mut d: Vec<(f64, usize)> = gallery
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (q.iter().zip(g).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>(), i))
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let top = k.min(d.len());
        let rel = d[..top].iter().filter(|(_, i)| &gallery[*i].1 == ql).count();
        total += rel as f64 / top as f64;
    }
    total / queries.len() as f64
}

fn random_corpus(seed: u64) -> (Vec<Labeled>, Vec<Labeled>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(50..=2000);
    let classes = rng.random_range(2..12);
    let dim = rng.random_range(4..48);
    let centers: Vec<Vec<f32>> = (0..classes).map(|_| unit(&mut rng, dim)).collect();
    let items: Vec<Labeled> = (0..n)
        .map(|_| {
            let c = rng.random_range(0..classes);
            let noise = unit(&mut rng, dim);
            let v: Vec<f64> = centers[c].iter().zip(&noise).map(|(a, b)| *a as f64 + 1.2 * *b as f64).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (v.iter().map(|x| (x / norm) as f32).collect(), format!("class{c}"))
        })
        .collect();
    let nq = n / 5;
    (items[..nq].to_vec(), items[nq..].to_vec())
}

#[test]
fn harness_matches_all_pairs_brute_force() {
    for seed in 0..5 {
        let (q, g) = random_corpus(seed);
        let ks = [1, 5, 10, 50];
        let got = precision_from_embeddings(&q, &g, &ks).unwrap();
        for k in ks {
            let want = brute_force(&q, &g, k);
            assert!((got[&k] - want).abs() < 1e-12, "seed {seed} k {k}: {} vs {want}", got[&k]);
        }
    }
}

#[test]
fn random_labels_give_chance_precision() {
    let classes = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let gallery: Vec<Labeled> = (0..4000).map(|_| (unit(&mut rng, 16), format!("c{}", rng.random_range(0..classes)))).collect();
    let queries: Vec<Labeled> = (0..500).map(|_| (unit(&mut rng, 16), format!("c{}", rng.random_range(0..classes)))).collect();
    let k = 10;
    let p = precision_from_embeddings(&queries, &gallery, &[k]).unwrap()[&k];
    // 5000 Bernoulli(1/8) relevance draws; neighbouring queries share few
    // results, so treat them as independent.
    let c = 1.0 / classes as f64;
    let sigma = (c * (1.0 - c) / (queries.len() * k) as f64).sqrt();
    assert!((p - c).abs() <= 3.0 * sigma, "precision {p} vs {c} ± {}", 3.0 * sigma);
}

fn write_images(dir: &std::path::Path, seed: u64, n: usize) -> Vec<LabeledItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let colour = [rng.random(), rng.random(), rng.random()];
            let img = RgbImage::from_fn(20, 20, |x, y| if (x + y + i as u32) % 3 == 0 { Rgb(colour) } else { Rgb([200, 200, 200]) });
            let path = dir.join(format!("{seed}-{i}.png"));
            img.save(&path).unwrap();
            LabeledItem { item_id: format!("{seed}-{i}"), image: path, class_label: format!("item{i}") }
        })
        .collect()
}

#[test]
fn identical_twins_score_perfect_precision_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let originals = write_images(dir.path(), 1, 12);
    // Each query is a byte-identical copy of one gallery item.
    let twins: Vec<LabeledItem> = originals
        .iter()
        .map(|it| {
            let copy = dir.path().join(format!("twin-{}.png", it.item_id));
            std::fs::copy(&it.image, &copy).unwrap();
            LabeledItem { item_id: format!("twin-{}", it.item_id), image: copy, class_label: it.class_label.clone() }
        })
        .collect();
    let cfg = DcganConfig { nz: 8, ngf: 4, ndf: 4, channels: 3, image_size: 16, blocks: 2 };
    let dcgan = DcganEmbedder::new(Arc::new(DcganParams::init_params(cfg, 4).unwrap()), 1234);
    let opts = BenchmarkOptions { ks: vec![1, 5], workers: 2 };
    for embedder in [&dcgan as &dyn snapforge_gan::Embedder, &PixelEmbedder::new(3 * 64 * 64)] {
        let r = run_benchmark(embedder, &twins, &originals, &opts).unwrap();
        assert_eq!(r.precision[&1], 1.0, "{}", r.embedder);
        assert_eq!((r.query_count, r.gallery_count, r.failures), (12, 12, 0));
        assert!(r.median_inference_secs > 0.0);
    }
    assert_eq!(run_benchmark(&dcgan, &twins, &originals, &opts).unwrap().model_size_bytes, 1234);
}

#[test]
fn broken_images_abort_above_one_percent() {
    let dir = tempfile::tempdir().unwrap();
    let mut gallery = write_images(dir.path(), 2, 20);
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"not an image").unwrap();
    gallery.push(LabeledItem { item_id: "bad".into(), image: bad, class_label: "item0".into() });
    let (q, g) = split(&gallery.iter().cloned().chain(gallery.iter().cloned()).collect::<Vec<_>>(), 0.5, 0).unwrap();
    let err = run_benchmark(&PixelEmbedder::new(64), &q, &g, &BenchmarkOptions { ks: vec![1], workers: 1 }).unwrap_err();
    assert!(matches!(err, snapforge_eval::EvalError::TooManyFailures { .. }), "{err}");
}
