//! End-to-end acceptance run. Prints one verdict line per criterion and
//! exits non-zero when any criterion fails outside a documented limitation.
//!
//! Positional arguments filter criteria by substring, e.g.
//! `cargo test -p snapforge-acceptance --test acceptance -- vector`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use snapforge_acceptance::{exit_code, Verdict};

type Check = fn() -> Verdict;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 8] = [
        ("value-function-oracle", value_function_oracle),
        ("gradient-check", gradient_check),
        ("precision-oracle", precision_oracle),
        ("vector-index", vector_index),
        ("stream-failure-injection", stream_failure_injection),
        ("message-log-replay", message_log_replay),
        ("retrieval-benchmark", retrieval_benchmark),
        ("end-to-end", end_to_end),
    ];
    let mut verdicts = Vec::new();
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = check();
        println!("{v}");
        verdicts.push(v);
    }
    let blocking = verdicts.iter().filter(|v| v.blocks()).count();
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed} passed, {} known limitation(s), {blocking} blocking failure(s)",
        verdicts.len() - passed - blocking
    );
    std::process::exit(exit_code(&verdicts));
}

fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut d = 0.0;
    for i in 0..a.len() {
        let x = a[i] as f64 - b[i] as f64;
        d += x * x;
    }
    d
}

// ---------------------------------------------------------------------------
// adversarial value function

fn value_function_oracle() -> Verdict {
    use snapforge_gan::gan_value;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(1..=256);
        let m = rng.random_range(1..=256);
        let real: Vec<f64> = (0..n).map(|_| rng.random_range(1e-4..1.0 - 1e-4)).collect();
        let fake: Vec<f64> = (0..m).map(|_| rng.random_range(1e-4..1.0 - 1e-4)).collect();
        let mut a = 0.0;
        for p in &real {
            a += p.ln();
        }
        let mut b = 0.0;
        for p in &fake {
            b += (1.0 - p).ln();
        }
        let want = a / n as f64 + b / m as f64;
        worst = worst.max((gan_value(&real, &fake).v_value - want).abs());
    }
    let eq = gan_value(&[0.5; 64], &[0.5; 64]).v_value;
    let eq_err = (eq + 2.0 * 2f64.ln()).abs();
    Verdict::new(
        "value-function-oracle",
        worst < 1e-12 && eq_err < 1e-9,
        format!("max |harness - loop| {worst:.1e} (tol 1e-12); equilibrium error {eq_err:.1e} (tol 1e-9)"),
    )
    .within(t0.elapsed(), Duration::from_secs(1))
}

// ---------------------------------------------------------------------------
// gradients

fn gradient_check() -> Verdict {
    use snapforge_gan::model::sample_latent;
    use snapforge_gan::{Dcgan, DcganConfig, Tensor};
    const H: f64 = 1e-5;
    // both values below this are round-off; compare them absolutely
    const FLOOR: f64 = 1e-8;

    let t0 = Instant::now();
    let cfg = DcganConfig { nz: 6, ngf: 4, ndf: 4, channels: 3, image_size: 8, blocks: 2 };
    let mut model = Dcgan::<f64>::init_params(cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // keep pre-activations away from the ReLU kinks relative to h
    for p in model.params_mut() {
        for v in p.value.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let real = Tensor::from_vec(&[4, 3, 8, 8], (0..4 * 3 * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let z = sample_latent::<f64, _>(4, cfg.nz, &mut rng);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);

    let mut worst: f64 = 0.0;
    let mut count = 0;

    let fake = model.generate_train(&z);
    model.zero_grad();
    model.discriminator_loss(&real, &fake, true).unwrap();
    let analytic: Vec<Vec<f64>> = model.discriminator_params().iter().map(|p| p.grad.to_vec()).collect();
    for (t, grads) in analytic.iter().enumerate() {
        for idx in sample(&mut rng, grads.len(), 40.min(grads.len())) {
            let orig = model.discriminator_params()[t].value[idx];
            model.discriminator_params()[t].value[idx] = orig + H;
            let up = model.discriminator_loss(&real, &fake, false).unwrap().loss;
            model.discriminator_params()[t].value[idx] = orig - H;
            let down = model.discriminator_loss(&real, &fake, false).unwrap().loss;
            model.discriminator_params()[t].value[idx] = orig;
            worst = worst.max(rel(grads[idx], (up - down) / (2.0 * H)));
            count += 1;
        }
    }

    model.zero_grad();
    model.generator_loss(&z, true).unwrap();
    let analytic: Vec<Vec<f64>> = model.generator_params().iter().map(|p| p.grad.to_vec()).collect();
    for (t, grads) in analytic.iter().enumerate() {
        for idx in sample(&mut rng, grads.len(), 40.min(grads.len())) {
            let orig = model.generator_params()[t].value[idx];
            model.generator_params()[t].value[idx] = orig + H;
            let up = model.generator_loss(&z, false).unwrap().loss;
            model.generator_params()[t].value[idx] = orig - H;
            let down = model.generator_loss(&z, false).unwrap().loss;
            model.generator_params()[t].value[idx] = orig;
            worst = worst.max(rel(grads[idx], (up - down) / (2.0 * H)));
            count += 1;
        }
    }
    Verdict::new(
        "gradient-check",
        count >= 200 && worst < 1e-4,
        format!("{count} parameters (min 200), worst relative error {worst:.2e} (tol 1e-4)"),
    )
    .within(t0.elapsed(), Duration::from_secs(120))
}

// ---------------------------------------------------------------------------
// precision metric

type Labeled = (Vec<f32>, String);

fn precision_oracle() -> Verdict {
    let t0 = Instant::now();
    let ks = [1, 5, 10];
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(200..=2000);
        let classes = rng.random_range(2..=10);
        let dim = rng.random_range(8..=32);
        let centers: Vec<Vec<f32>> = (0..classes).map(|_| unit(&mut rng, dim)).collect();
        let items: Vec<Labeled> = (0..n)
            .map(|_| {
                let c = rng.random_range(0..classes);
                let noise = unit(&mut rng, dim);
                let v: Vec<f64> = centers[c].iter().zip(&noise).map(|(a, b)| (a + b) as f64).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (v.iter().map(|x| (x / norm) as f32).collect(), format!("c{c}"))
            })
            .collect();
        let (queries, gallery) = items.split_at(n / 5);
        sizes.push(n);
        let got = snapforge_eval::precision_from_embeddings(queries, gallery, &ks).unwrap();
        for k in ks {
            // all pairs, full sort by (distance, gallery position)
            let mut total = 0.0;
            for (q, label) in queries {
                let mut d: Vec<(f64, usize)> = gallery.iter().enumerate().map(|(i, (g, _))| (sq_dist(q, g), i)).collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let hits = d[..k].iter().filter(|(_, i)| &gallery[*i].1 == label).count();
                total += hits as f64 / k as f64;
            }
            worst = worst.max((got[&k] - total / queries.len() as f64).abs());
        }
    }
    Verdict::new(
        "precision-oracle",
        worst <= 1e-12,
        format!("corpora of {sizes:?} items, k in {ks:?}: max deviation {worst:.1e} (tol 1e-12)"),
    )
    .within(t0.elapsed(), Duration::from_secs(60))
}

// ---------------------------------------------------------------------------
// vector index

fn vector_index() -> Verdict {
    use snapforge_vector::{Collection, EmbeddingEntry};
    let t0 = Instant::now();
    let build = |n: usize, dim: usize, rng: &mut ChaCha8Rng| {
        let mut c = Collection::new("acceptance", dim).unwrap();
        let mut vs = Vec::new();
        for i in 0..n {
            let v = unit(rng, dim);
            c.insert(EmbeddingEntry {
                entry_id: i as u64 + 1,
                doc_id: format!("doc{i}"),
                region: 0,
                vector: v.clone(),
                class_label: None,
            })
            .unwrap();
            vs.push(v);
        }
        (c, vs)
    };
    let exhaustive = |vs: &[Vec<f32>], q: &[f32], k: usize| {
        let mut all: Vec<(u64, f64)> = vs.iter().enumerate().map(|(i, v)| (i as u64 + 1, sq_dist(q, v))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    };

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (small, vs) = build(1000, 128, &mut rng);
    let flat_exact = (0..100).all(|_| {
        let q = unit(&mut rng, 128);
        let got: Vec<(u64, f64)> = small.search_flat(&q, 10).unwrap().iter().map(|h| (h.entry_id, h.distance)).collect();
        got == exhaustive(&vs, &q, 10)
    });

    let (mut big, _) = build(10_000, 128, &mut rng);
    big.build_ann(64, 7).unwrap();
    let queries: Vec<Vec<f32>> = (0..200).map(|_| unit(&mut rng, 128)).collect();
    let mut found = 0;
    let mut full_probe_exact = true;
    for q in &queries {
        let flat = big.search_flat(q, 10).unwrap();
        let approx = big.search_ann(q, 10, 8).unwrap();
        found += approx.iter().filter(|h| flat.iter().any(|f| f.entry_id == h.entry_id)).count();
        full_probe_exact &= big.search_ann(q, 10, 64).unwrap() == flat;
    }
    let recall = found as f64 / (10 * queries.len()) as f64;
    let recall_ok = recall >= 0.90;

    let mut v = Verdict::new(
        "vector-index",
        flat_exact && full_probe_exact && recall_ok,
        format!(
            "flat exact on 1000x100: {flat_exact}; n_probe = n_lists exact: {full_probe_exact}; \
             IVF recall@10 {recall:.3} (min 0.90) on isotropic unit vectors, dim 128, N 10000, 64 lists, probe 8"
        ),
    );
    // Uniform vectors on the 128-d sphere have no neighbourhood structure
    // for a partition to exploit; see the README.
    v.known_limitation = flat_exact && full_probe_exact && !recall_ok;
    v.within(t0.elapsed(), Duration::from_secs(300))
}

// ---------------------------------------------------------------------------
// stream engine

mod stream {
    use super::*;
    use snapforge_stream::{Bolt, BoltCollector, ExecResult, Spout, SpoutCollector, Tuple, Value};

    pub type Outcomes = Arc<Mutex<HashMap<u64, Vec<bool>>>>;

    pub struct Roots {
        pub next: u64,
        pub total: u64,
        pub outcomes: Outcomes,
    }

    impl Spout for Roots {
        fn next_tuple(&mut self, out: &mut SpoutCollector<'_>) {
            let end = (self.next + 64).min(self.total);
            while self.next < end {
                let n = self.next;
                out.emit("default", vec![Value::Int(n as i64), Value::from(format!("k{}", n % 16))], n).unwrap();
                self.next += 1;
            }
        }

        fn on_ack(&mut self, id: u64) {
            self.outcomes.lock().unwrap().entry(id).or_default().push(true);
        }

        fn on_fail(&mut self, id: u64) {
            self.outcomes.lock().unwrap().entry(id).or_default().push(false);
        }
    }

    /// Misbehaves on `rate` of its inputs by failing, erroring, panicking or
    /// silently dropping the tuple.
    pub struct Flaky {
        pub rng: ChaCha8Rng,
        pub rate: f64,
        pub fanout: usize,
        pub dropped: Arc<AtomicU64>,
    }

    impl Bolt for Flaky {
        fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult {
            if self.rng.random_bool(self.rate) {
                match self.rng.random_range(0..4) {
                    0 => out.fail(input),
                    1 => return Err("injected".into()),
                    2 => panic!("injected"),
                    _ => {
                        self.dropped.fetch_add(1, Ordering::SeqCst);
                    }
                }
                return Ok(());
            }
            for i in 0..self.fanout {
                out.emit("default", vec![Value::Int(i as i64), input.get("key").cloned().unwrap()], &[input])?;
            }
            out.ack(input);
            Ok(())
        }

        fn auto_ack(&self) -> bool {
            false
        }
    }
}

fn stream_failure_injection() -> Verdict {
    use snapforge_stream::{Cluster, Grouping, ManualClock, RunConfig, TopologySpec};
    use stream::{Flaky, Roots};
    const ROOTS: u64 = 10_000;
    const RATE: f64 = 0.10;

    let t0 = Instant::now();
    let outcomes: stream::Outcomes = Arc::default();
    let clock = Arc::new(ManualClock::new(0));
    let cluster = Cluster::with_clock(1, clock.clone());
    let mut t = TopologySpec::new("flaky");
    let o = outcomes.clone();
    t.spout("roots", 1, move |_| Box::new(Roots { next: 0, total: ROOTS, outcomes: o.clone() }))
        .output("default", &["n", "key"]);
    let (da, db) = (Arc::new(AtomicU64::new(0)), Arc::new(AtomicU64::new(0)));
    let d = da.clone();
    t.bolt("a", 2, move |i| {
        Box::new(Flaky { rng: ChaCha8Rng::seed_from_u64(i as u64), rate: RATE, fanout: 2, dropped: d.clone() })
    })
    .shuffle("roots")
    .output("default", &["i", "key"]);
    let d = db.clone();
    t.bolt("b", 2, move |i| {
        Box::new(Flaky { rng: ChaCha8Rng::seed_from_u64(50 + i as u64), rate: RATE, fanout: 0, dropped: d.clone() })
    })
    .subscribe("a", "default", Grouping::Fields(vec!["key".into()]))
    .output("default", &["i", "key"]);

    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let h = cluster.submit(t, &RunConfig { rng_seed: 9, ..RunConfig::default() }).unwrap();
    let wait = Duration::from_secs(60);
    let started = h.wait_for(wait, |m| m.roots.started == ROOTS);
    let settled = h.wait_for(wait, |m| {
        let (a, b) = (&m.components["a"], &m.components["b"]);
        a.acked + a.failed + da.load(Ordering::SeqCst) == ROOTS
            && b.acked + b.failed + db.load(Ordering::SeqCst) == a.emitted
            && m.acker_backlog == 0
    });
    // dropped tuples only resolve through the timeout
    clock.advance(RunConfig::default().tuple_timeout_secs * 1000 + 1_000);
    let drained = h.wait_for(wait, |m| m.components["roots"].acked + m.components["roots"].failed == ROOTS);
    let m = h.metrics();
    let _ = h.set_state(snapforge_stream::TopologyState::Killed);
    h.join();
    std::panic::set_hook(hook);

    let seen = outcomes.lock().unwrap();
    let exactly_once = seen.len() as u64 == ROOTS && seen.values().all(|v| v.len() == 1);
    let failed = seen.values().filter(|v| v == &&vec![false]).count() as u64;
    let roots = m.roots;
    let conserved = roots.pending == 0
        && roots.started == ROOTS
        && roots.started == roots.acked + roots.failed
        && roots.failed == failed
        && m.components["roots"].acked == roots.acked
        && m.components["roots"].failed == roots.failed;
    Verdict::new(
        "stream-failure-injection",
        started && settled && drained && exactly_once && conserved,
        format!(
            "{} roots with callbacks, exactly once: {exactly_once}; acked {} failed {} pending {}; conservation: {conserved}",
            seen.len(),
            roots.acked,
            roots.failed,
            roots.pending
        ),
    )
    .within(t0.elapsed(), Duration::from_secs(60))
}

// ---------------------------------------------------------------------------
// message log

fn message_log_replay() -> Verdict {
    use snapforge_mlog::{stable_hash, MessageLog, Record};
    const PARTITIONS: u32 = 4;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let records: Vec<(Option<String>, Vec<u8>)> = (0..10_000u32)
        .map(|i| {
            let key = rng.random_bool(0.7).then(|| format!("doc-{}", rng.random_range(0..500)));
            (key, i.to_le_bytes().to_vec())
        })
        .collect();

    let produce = |log: &MessageLog| -> Vec<u32> {
        log.create_topic("t", PARTITIONS).unwrap();
        records.iter().map(|(k, p)| log.produce("t", k.as_deref().map(str::as_bytes), p).unwrap().0).collect()
    };
    let log = MessageLog::new();
    let placed = produce(&log);
    let again = produce(&MessageLog::new());
    let keyed_ok = records
        .iter()
        .zip(&placed)
        .all(|((k, _), p)| k.as_ref().is_none_or(|k| *p as u64 == stable_hash(k.as_bytes()) % PARTITIONS as u64));
    let deterministic = placed == again;

    let replay = |group: &str, batch: usize| {
        let mut seqs: BTreeMap<u32, Vec<(u64, Vec<u8>)>> = BTreeMap::new();
        loop {
            let got: Vec<Record> = log.poll(group, "t", batch).unwrap();
            if got.is_empty() {
                return seqs;
            }
            log.commit_records(group, &got).unwrap();
            for r in got {
                seqs.entry(r.partition).or_default().push((r.offset, r.payload));
            }
        }
    };
    let a = replay("alpha", 97);
    let b = replay("beta", 1000);
    let total: usize = a.values().map(Vec::len).sum();
    let identical = a == b && total == records.len();
    let dense = a.values().all(|s| s.iter().enumerate().all(|(i, (o, _))| *o == i as u64));
    Verdict::new(
        "message-log-replay",
        identical && dense && keyed_ok && deterministic,
        format!(
            "{total} records over {PARTITIONS} partitions; groups identical: {identical}; offsets dense: {dense}; \
             keyed placement by hash: {keyed_ok}; placement repeatable: {deterministic}"
        ),
    )
    .within(t0.elapsed(), Duration::from_secs(30))
}

// ---------------------------------------------------------------------------
// scaled retrieval benchmark

const TRAIN_SEED: u64 = 1;
const BENCH_EPOCHS: usize = 3;

fn retrieval_benchmark() -> Verdict {
    use snapforge_gan::corpus::CorpusConfig;
    use snapforge_gan::{Embedder, EmbedderOptions, EmbedderRegistry, TrainConfig};
    use snapforge_service::commands;

    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let model = dir.path().join("model.bin");
    let manifest = commands::gen_corpus(&CorpusConfig::default(), &corpus).unwrap();
    let train = TrainConfig::default();
    let summary = commands::train_embedder(&corpus, BENCH_EPOCHS, TRAIN_SEED, train, &model, |e, r| {
        eprintln!("  epoch {}: d_loss {:.3} g_loss {:.3} D(x) {:.3} D(G(z)) {:.3}", e + 1, r.d_loss, r.g_loss, r.d_real_mean, r.d_fake_mean);
    })
    .unwrap();
    let registry = EmbedderRegistry::default();
    let embedders: Vec<Arc<dyn Embedder>> = vec![
        registry.create("dcgan", &EmbedderOptions { model_path: Some(model), ..EmbedderOptions::default() }).unwrap(),
        registry.create("pixels", &EmbedderOptions::default()).unwrap(),
    ];
    let (reports, _) = commands::evaluate(&embedders, &corpus, 0.2, TRAIN_SEED, &[1, 5, 10], 1).unwrap();
    let (gan, pixels) = (&reports[0], &reports[1]);
    let p = gan.precision[&10];
    let base = pixels.precision[&10];
    let median_ms = gan.median_inference_secs * 1e3;
    Verdict::new(
        "retrieval-benchmark",
        p >= 3.0 * 0.125 && p > base && median_ms <= 100.0,
        format!(
            "{} images, lr {} batch {} seed {TRAIN_SEED}, {BENCH_EPOCHS} epochs in {:.0} s: precision@10 {p:.3} \
             (min 0.375, pixels {base:.3}); median embed {median_ms:.1} ms (max 100)",
            manifest.items.len(),
            train.learning_rate,
            train.batch_size,
            summary.seconds,
        ),
    )
    .within(t0.elapsed(), Duration::from_secs(2 * 3600))
}

// ---------------------------------------------------------------------------
// crawl to similar-item API

fn fixture_corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

fn quick_model(dir: &Path) -> PathBuf {
    use snapforge_gan::corpus::CorpusConfig;
    use snapforge_service::commands;
    let corpus = dir.join("corpus");
    let model = dir.join("quick.bin");
    let cfg = CorpusConfig { per_class: 40, ..CorpusConfig::default() };
    commands::gen_corpus(&cfg, &corpus).unwrap();
    commands::train_embedder(&corpus, 5, TRAIN_SEED, snapforge_gan::TrainConfig::default(), &model, |_, _| {}).unwrap();
    model
}

fn end_to_end() -> Verdict {
    use axum::body::Body;
    use axum::http::Request;
    use snapforge_crawler::fixture::{fixture_request, load_site_manifest, FixtureConfig};
    use snapforge_crawler::{doc_id, FixtureTransport};
    use snapforge_gan::{DcganEmbedder, WholeImageDetector};
    use snapforge_service::{commands, router, AppState, Node, NodeOptions};
    use tower::ServiceExt;

    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let model = quick_model(dir.path());
    let trained = t0.elapsed();

    let mut opts = NodeOptions::new(
        Arc::new(DcganEmbedder::load(&model).unwrap()),
        Arc::new(WholeImageDetector),
        Arc::new(FixtureTransport::new(fixture_corpus()).unwrap()),
    );
    opts.record_fetches = true;
    opts.index_dir = Some(dir.path().join("index"));
    let node = Arc::new(Node::start(opts).unwrap());
    let req = fixture_request(&FixtureConfig::default());
    let delay = req.politeness_delay_ms;
    let summary = commands::crawl(&node, req, Duration::from_secs(480)).unwrap();

    let rows = load_site_manifest(fixture_corpus().join("bazaar")).unwrap();
    let images: usize = rows.iter().map(|r| r.image_urls.len()).sum();
    let unembedded = rows.iter().filter(|r| node.collection.read().entries_for_doc(&doc_id(&r.url)).is_empty()).count();

    let app = router(AppState::new(node.clone()));
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).build().unwrap();
    let similar = |from: &str| -> serde_json::Value {
        rt.block_on(async {
            let req = Request::get(format!("/items/{from}/similar?k=5")).body(Body::empty()).unwrap();
            let resp = app.clone().oneshot(req).await.unwrap();
            let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
            serde_json::from_slice(&bytes).unwrap()
        })
    };
    let copy = rows.iter().find(|r| r.duplicate_of.is_some()).unwrap();
    let (a, b) = (doc_id(&copy.url), doc_id(copy.duplicate_of.as_ref().unwrap()));
    let mut dup_ok = true;
    let mut dup_dist: f64 = 0.0;
    for (from, to) in [(&a, &b), (&b, &a)] {
        let body = similar(from);
        let top = &body["items"][0];
        let d = top["distance"].as_f64().unwrap_or(f64::INFINITY);
        dup_dist = dup_dist.max(d);
        dup_ok &= top["doc_id"] == to.as_str() && d <= 1e-5;
    }

    let mut min_gap = u64::MAX;
    for starts in node.recorder.as_ref().unwrap().starts_by_host().values() {
        for w in starts.windows(2) {
            min_gap = min_gap.min(w[1] - w[0]);
        }
    }
    node.shutdown();

    let pass = summary.indexed_docs == 50
        && summary.image_records as usize == images
        && unembedded == 0
        && dup_ok
        && min_gap >= delay;
    Verdict::new(
        "end-to-end",
        pass,
        format!(
            "quick model trained in {:.0} s; docs {} (want 50); topic records {} (want {images}); docs without \
             embedding {unembedded}; duplicate at rank 1 both ways: {dup_ok}, distance {dup_dist:.1e} (max 1e-5); \
             min same-host gap {min_gap} ms (delay {delay})",
            trained.as_secs_f64(),
            summary.indexed_docs,
            summary.image_records,
        ),
    )
    .within(t0.elapsed(), Duration::from_secs(600))
}
