//! Batch commands behind the `snapforge` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snapforge_crawler::fixture::load_site_manifest;
use snapforge_crawler::{doc_id, CrawlRequest, FixtureTransport, RequestStatus, Transport};
use snapforge_eval::{report_json, run_benchmark, split, BenchmarkOptions, EvalReport};
use snapforge_gan::corpus::{generate_corpus, item_path, load_manifest, CorpusConfig, CorpusManifest, MANIFEST_FILE};
use snapforge_gan::embed::embed_regions;
use snapforge_gan::preprocess::decode;
use snapforge_gan::{save_params, Dcgan, DcganConfig, Embedder, GanLossReport, RegionDetector, TrainConfig, Trainer};
use snapforge_vector::{default_n_lists, Collection, EmbeddingEntry};

use crate::node::Node;
use crate::ServiceError;

/// Collections at least this large get an IVF index when built offline.
pub const ANN_MIN_ENTRIES: usize = 4_096;

pub fn gen_corpus(cfg: &CorpusConfig, out: &Path) -> Result<CorpusManifest, ServiceError> {
    Ok(generate_corpus(cfg, out)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub images: usize,
    pub epochs: usize,
    pub steps: usize,
    pub seconds: f64,
    pub last: Option<GanLossReport>,
    pub model_bytes: u64,
}

/// Trains a DCGAN from scratch on every image of a generated corpus and
/// writes it to `out`. `on_epoch` sees `(epoch, last report)`.
pub fn train_embedder(
    corpus: &Path,
    epochs: usize,
    seed: u64,
    train: TrainConfig,
    out: &Path,
    mut on_epoch: impl FnMut(usize, &GanLossReport),
) -> Result<TrainSummary, ServiceError> {
    let manifest = load_manifest(corpus)?;
    let images = manifest
        .items
        .iter()
        .map(|it| Ok(snapforge_gan::preprocess(&std::fs::read(item_path(corpus, it))?)?))
        .collect::<Result<Vec<_>, ServiceError>>()?;
    if images.len() < 2 {
        return Err(ServiceError::Config(format!("{} holds fewer than 2 images", corpus.display())));
    }
    let t0 = Instant::now();
    let mut trainer = Trainer::new(Dcgan::init_params(DcganConfig::default(), seed)?, train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = 0;
    let mut last = None;
    for epoch in 0..epochs {
        let reports = trainer.fit(&images, 1, &mut rng, |_, _, _| {})?;
        steps += reports.len();
        if let Some(r) = reports.last() {
            on_epoch(epoch, r);
            last = Some(*r);
        }
    }
    save_params(&trainer.model, out)?;
    Ok(TrainSummary {
        images: images.len(),
        epochs,
        steps,
        seconds: t0.elapsed().as_secs_f64(),
        last,
        model_bytes: std::fs::metadata(out)?.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexSummary {
    pub entries: usize,
    pub docs: usize,
    pub failures: usize,
    pub ann_lists: Option<usize>,
}

/// Embeds a corpus into a fresh collection file. A directory with a
/// `labels.json` is a generated corpus: every image is one doc carrying its
/// class label. Otherwise each subdirectory with a `manifest.json` is a
/// fixture site whose product images are embedded under the product's doc id.
pub fn index_corpus(
    embedder: &dyn Embedder,
    detector: &dyn RegionDetector,
    corpus: &Path,
    out: &Path,
    seed: u64,
) -> Result<IndexSummary, ServiceError> {
    let name = out.file_stem().map_or_else(|| "items".into(), |s| s.to_string_lossy().into_owned());
    let mut col = Collection::new(&name, embedder.dimension())?;
    let mut failures = 0;
    let mut docs = 0;
    // false when the bytes do not decode
    let add = |col: &mut Collection, doc: &str, key: &str, bytes: &[u8], label: Option<&str>| -> Result<bool, ServiceError> {
        let img = match decode(bytes) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("{key}: {e}");
                return Ok(false);
            }
        };
        let region0 = col.entries_for_doc(doc).len() as u32;
        for (i, r) in embed_regions(embedder, detector, key, &img)?.into_iter().enumerate() {
            let entry_id = col.next_id();
            col.insert(EmbeddingEntry {
                entry_id,
                doc_id: doc.to_string(),
                region: region0 + i as u32,
                vector: r.embedding.vector,
                class_label: label.map(str::to_string),
            })?;
        }
        Ok(true)
    };

    if corpus.join(MANIFEST_FILE).exists() {
        let manifest = load_manifest(corpus)?;
        for it in &manifest.items {
            let bytes = std::fs::read(item_path(corpus, it))?;
            if !add(&mut col, &it.file, &it.file, &bytes, Some(&it.class_name))? {
                failures += 1;
            }
            docs += 1;
        }
    } else {
        let transport = FixtureTransport::new(corpus)?;
        let mut sites: Vec<PathBuf> = std::fs::read_dir(corpus)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").exists())
            .collect();
        sites.sort();
        for site in sites {
            for row in load_site_manifest(&site)? {
                let id = doc_id(&row.url);
                for url in &row.image_urls {
                    match transport.get(url) {
                        Ok(r) if r.is_success() => {
                            if !add(&mut col, &id, url, &r.body, None)? {
                                failures += 1;
                            }
                        }
                        Ok(r) => {
                            log::warn!("{url}: status {}", r.status);
                            failures += 1;
                        }
                        Err(e) => {
                            log::warn!("{url}: {e}");
                            failures += 1;
                        }
                    }
                }
                docs += 1;
            }
        }
    }
    let ann_lists = if col.len() >= ANN_MIN_ENTRIES {
        let lists = default_n_lists(col.len());
        col.build_ann(lists, seed)?;
        Some(lists)
    } else {
        None
    };
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    col.save(out)?;
    Ok(IndexSummary {
        entries: col.len(),
        docs,
        failures,
        ann_lists,
    })
}

/// Query/gallery benchmark of `embedders` on one split of a generated
/// corpus. Returns the reports and their JSON rendering.
pub fn evaluate(
    embedders: &[Arc<dyn Embedder>],
    corpus: &Path,
    query_fraction: f64,
    seed: u64,
    ks: &[usize],
    workers: usize,
) -> Result<(Vec<EvalReport>, String), ServiceError> {
    let items = snapforge_eval::load_corpus(corpus)?;
    let (queries, gallery) = split(&items, query_fraction, seed)?;
    let opts = BenchmarkOptions {
        ks: ks.to_vec(),
        workers: workers.max(1),
    };
    let reports = embedders
        .iter()
        .map(|e| {
            log::info!("evaluating {} on {} queries / {} gallery items", e.name(), queries.len(), gallery.len());
            run_benchmark(e.as_ref(), &queries, &gallery, &opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let json = report_json(&reports);
    Ok((reports, json))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrawlSummary {
    pub status: RequestStatus,
    pub indexed_docs: usize,
    pub image_records: u64,
    pub embeddings: usize,
}

/// Registers `req`, waits for the crawl to finish and for the analytics
/// topology to work off everything it published, then persists.
pub fn crawl(node: &Node, req: CrawlRequest, timeout: Duration) -> Result<CrawlSummary, ServiceError> {
    let deadline = Instant::now() + timeout;
    let id = node.scheduler.register(req)?;
    let state = node.scheduler.wait(&id, timeout)?;
    if state.is_active() {
        return Err(ServiceError::Timeout(format!("crawl {id} still {state:?}")));
    }
    node.wait_analytics_idle(deadline.saturating_duration_since(Instant::now()))?;
    node.persist()?;
    Ok(CrawlSummary {
        status: node
            .scheduler
            .status(&id)
            .ok_or_else(|| ServiceError::Crawl(snapforge_crawler::CrawlError::UnknownRequest(id.clone())))?,
        indexed_docs: node.text.len(),
        image_records: node.log.end_offsets(&node.topic)?.iter().sum(),
        embeddings: node.collection.read().len(),
    })
}
