//! Image-analytics topology: consumes published image URLs from the message
//! log, fetches and embeds each image per detected region, and inserts the
//! embeddings into a vector collection.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use snapforge_gan::embed::embed_regions;
use snapforge_gan::preprocess::decode;
use snapforge_gan::{Embedder, RegionDetector};
use snapforge_mlog::MessageLog;
use snapforge_stream::{
    Bolt, BoltCollector, Clock, ExecResult, Grouping, Spout, SpoutCollector, TaskContext, TopologySpec, Tuple, Value,
};
use snapforge_vector::{EmbeddingEntry, SharedCollection};

use crate::politeness::HostClocks;
use crate::transport::Transport;
use crate::ANALYTICS_GROUP;

/// Message-log payload of one published image URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub doc_id: String,
    pub image_url: String,
    pub site_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticsConfig {
    pub topic: String,
    pub group: String,
    pub politeness_delay_ms: u64,
    /// Deliveries of one record before it is given up on.
    pub max_attempts: u32,
    pub fetch_retries: u32,
    pub embed_tasks: usize,
    pub max_in_flight: usize,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            topic: snapforge_mlog::DEFAULT_TOPIC.to_string(),
            group: ANALYTICS_GROUP.to_string(),
            politeness_delay_ms: 0,
            max_attempts: 3,
            fetch_retries: 2,
            embed_tasks: 1,
            max_in_flight: 64,
        }
    }
}

#[derive(Debug, Default)]
pub struct AnalyticsStats {
    pub records_consumed: AtomicU64,
    pub images_fetched: AtomicU64,
    pub embeddings_inserted: AtomicU64,
    pub duplicates_skipped: AtomicU64,
    pub failures: AtomicU64,
    pub records_dropped: AtomicU64,
    pub in_flight: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticsStatsSnapshot {
    pub records_consumed: u64,
    pub images_fetched: u64,
    pub embeddings_inserted: u64,
    pub duplicates_skipped: u64,
    pub failures: u64,
    pub records_dropped: u64,
    pub in_flight: u64,
}

impl AnalyticsStats {
    pub fn snapshot(&self) -> AnalyticsStatsSnapshot {
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        AnalyticsStatsSnapshot {
            records_consumed: l(&self.records_consumed),
            images_fetched: l(&self.images_fetched),
            embeddings_inserted: l(&self.embeddings_inserted),
            duplicates_skipped: l(&self.duplicates_skipped),
            failures: l(&self.failures),
            records_dropped: l(&self.records_dropped),
            in_flight: l(&self.in_flight),
        }
    }
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::Relaxed);
}

pub struct AnalyticsContext {
    pub config: AnalyticsConfig,
    pub log: Arc<MessageLog>,
    pub transport: Arc<dyn Transport>,
    pub hosts: Arc<HostClocks>,
    pub embedder: Arc<dyn Embedder>,
    pub detector: Arc<dyn RegionDetector>,
    pub collection: SharedCollection,
    pub stats: AnalyticsStats,
    /// `(doc_id, image_url)` pairs already embedded by this process.
    embedded: Mutex<HashSet<(String, String)>>,
}

impl AnalyticsContext {
    pub fn new(
        config: AnalyticsConfig,
        log: Arc<MessageLog>,
        transport: Arc<dyn Transport>,
        hosts: Arc<HostClocks>,
        embedder: Arc<dyn Embedder>,
        detector: Arc<dyn RegionDetector>,
        collection: SharedCollection,
    ) -> Self {
        Self {
            config,
            log,
            transport,
            hosts,
            embedder,
            detector,
            collection,
            stats: AnalyticsStats::default(),
            embedded: Mutex::new(HashSet::new()),
        }
    }

    /// Nothing left to consume and nothing in flight.
    pub fn is_idle(&self) -> bool {
        self.stats.in_flight.load(Ordering::SeqCst) == 0
            && self.log.lag(&self.config.group, &self.config.topic).map_or(true, |l| l == 0)
    }

    fn already_embedded(&self, doc_id: &str, image_url: &str) -> bool {
        self.embedded.lock().contains(&(doc_id.to_string(), image_url.to_string()))
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

fn str_field<'a>(t: &'a Tuple, name: &str) -> Result<&'a str, BoxError> {
    t.get_str(name).ok_or_else(|| format!("tuple lacks string field {name}").into())
}

struct Outstanding {
    partition: u32,
    offset: u64,
    payload: ImagePayload,
    attempts: u32,
}

/// Reads the topic from each partition's committed offset and commits the
/// longest fully settled prefix, so a crash redelivers rather than loses.
struct ImageUrlSpout {
    ctx: Arc<AnalyticsContext>,
    positions: Vec<u64>,
    /// Per partition: offset to settled flag, for records read and not yet
    /// committed.
    unsettled: Vec<BTreeMap<u64, bool>>,
    outstanding: HashMap<u64, Outstanding>,
    retry: VecDeque<u64>,
    next_partition: usize,
}

impl ImageUrlSpout {
    fn msg_id(partition: u32, offset: u64) -> u64 {
        ((partition as u64) << 48) | offset
    }

    fn settle(&mut self, partition: u32, offset: u64) {
        let p = partition as usize;
        if let Some(flag) = self.unsettled[p].get_mut(&offset) {
            *flag = true;
        }
        let mut commit_to = None;
        while let Some((&off, &done)) = self.unsettled[p].first_key_value() {
            if !done {
                break;
            }
            self.unsettled[p].remove(&off);
            commit_to = Some(off + 1);
        }
        if let Some(next) = commit_to {
            if let Err(e) = self.ctx.log.commit(&self.ctx.config.group, &self.ctx.config.topic, partition, next) {
                log::error!("analytics commit failed: {e}");
            }
        }
    }

    fn emit(&mut self, id: u64, out: &mut SpoutCollector<'_>) {
        let Some(o) = self.outstanding.get(&id) else { return };
        let host = url::Url::parse(&o.payload.image_url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
            .unwrap_or_default();
        let values = vec![
            Value::from(o.payload.doc_id.as_str()),
            Value::from(o.payload.image_url.as_str()),
            Value::from(o.payload.site_name.as_str()),
            Value::from(host),
        ];
        if let Err(e) = out.emit("images", values, id) {
            log::error!("image spout: {e}");
            self.retry.push_back(id);
        }
    }
}

impl Spout for ImageUrlSpout {
    fn open(&mut self, _ctx: &TaskContext) {
        let cfg = &self.ctx.config;
        let n = self.ctx.log.partition_count(&cfg.topic).unwrap_or(0);
        self.positions = (0..n).map(|p| self.ctx.log.committed(&cfg.group, &cfg.topic, p)).collect();
        self.unsettled = vec![BTreeMap::new(); n as usize];
    }

    fn next_tuple(&mut self, out: &mut SpoutCollector<'_>) {
        if let Some(id) = self.retry.pop_front() {
            self.emit(id, out);
            return;
        }
        let room = self.ctx.config.max_in_flight.saturating_sub(self.outstanding.len());
        let n = self.positions.len();
        if room == 0 || n == 0 {
            return;
        }
        for step in 0..n {
            let p = (self.next_partition + step) % n;
            let records = match self.ctx.log.fetch(&self.ctx.config.topic, p as u32, self.positions[p], room) {
                Ok(r) => r,
                Err(e) => {
                    log::error!("image spout fetch: {e}");
                    continue;
                }
            };
            if records.is_empty() {
                continue;
            }
            self.next_partition = (p + 1) % n;
            for r in records {
                self.positions[p] = r.offset + 1;
                self.unsettled[p].insert(r.offset, false);
                bump(&self.ctx.stats.records_consumed);
                match serde_json::from_slice::<ImagePayload>(&r.payload) {
                    Ok(payload) => {
                        let id = Self::msg_id(p as u32, r.offset);
                        self.outstanding.insert(
                            id,
                            Outstanding {
                                partition: p as u32,
                                offset: r.offset,
                                payload,
                                attempts: 1,
                            },
                        );
                        self.ctx.stats.in_flight.fetch_add(1, Ordering::SeqCst);
                        self.emit(id, out);
                    }
                    Err(e) => {
                        log::error!("image-urls {p}@{}: bad payload: {e}", r.offset);
                        bump(&self.ctx.stats.records_dropped);
                        self.settle(p as u32, r.offset);
                    }
                }
            }
            return;
        }
    }

    fn on_ack(&mut self, msg_id: u64) {
        if let Some(o) = self.outstanding.remove(&msg_id) {
            self.settle(o.partition, o.offset);
            self.ctx.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }

    fn on_fail(&mut self, msg_id: u64) {
        let max = self.ctx.config.max_attempts;
        let Some(o) = self.outstanding.get_mut(&msg_id) else { return };
        bump(&self.ctx.stats.failures);
        if o.attempts < max {
            o.attempts += 1;
            self.retry.push_back(msg_id);
            return;
        }
        log::error!(
            "giving up on {} for {} after {} attempts",
            o.payload.image_url,
            o.payload.doc_id,
            o.attempts
        );
        bump(&self.ctx.stats.records_dropped);
        if let Some(o) = self.outstanding.remove(&msg_id) {
            self.settle(o.partition, o.offset);
            self.ctx.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

struct ImageFetcher {
    ctx: Arc<AnalyticsContext>,
    clock: Option<Arc<dyn Clock>>,
}

impl Bolt for ImageFetcher {
    fn prepare(&mut self, ctx: &TaskContext) {
        self.clock = Some(ctx.clock.clone());
    }

    fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult {
        let doc_id = str_field(input, "doc_id")?;
        let url = str_field(input, "image_url")?;
        if self.ctx.already_embedded(doc_id, url) {
            bump(&self.ctx.stats.duplicates_skipped);
            return Ok(());
        }
        let host = str_field(input, "host")?;
        let clock = self.clock.clone().expect("prepared");
        let mut attempt = 0;
        let bytes = loop {
            let res = self.ctx.hosts.run(host, self.ctx.config.politeness_delay_ms, clock.as_ref(), || {
                self.ctx.transport.get(url)
            });
            let why = match res {
                Ok(r) if r.is_success() => break r.body,
                Ok(r) if !r.is_retryable() => return Err(format!("{url}: status {}", r.status).into()),
                Ok(r) => format!("status {}", r.status),
                Err(e) => e.to_string(),
            };
            attempt += 1;
            if attempt > self.ctx.config.fetch_retries {
                return Err(format!("{url}: {why}").into());
            }
        };
        bump(&self.ctx.stats.images_fetched);
        out.emit(
            "image-bytes",
            vec![Value::from(doc_id), Value::from(url), Value::Bytes(bytes)],
            &[input],
        )?;
        Ok(())
    }
}

/// Decodes, detects regions and embeds; emits one tuple per region.
struct EmbedBolt {
    ctx: Arc<AnalyticsContext>,
}

impl Bolt for EmbedBolt {
    fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult {
        let doc_id = str_field(input, "doc_id")?;
        let url = str_field(input, "image_url")?;
        let bytes = input.get("bytes").and_then(Value::as_bytes).ok_or("tuple lacks bytes")?;
        let image = decode(bytes).map_err(|e| format!("{url}: {e}"))?;
        let regions = embed_regions(self.ctx.embedder.as_ref(), self.ctx.detector.as_ref(), url, &image)?;
        let mut packed = Vec::with_capacity(regions.len());
        for r in regions {
            let raw: Vec<u8> = r.embedding.vector.iter().flat_map(|v| v.to_le_bytes()).collect();
            packed.push((r.region.class_label, raw));
        }
        let count = packed.len() as i64;
        for (i, (label, raw)) in packed.into_iter().enumerate() {
            out.emit(
                "embeddings",
                vec![
                    Value::from(doc_id),
                    Value::from(url),
                    Value::Int(i as i64),
                    Value::Int(count),
                    Value::from(label),
                    Value::Bytes(raw),
                ],
                &[input],
            )?;
        }
        Ok(())
    }
}

/// Single writer into the collection. All regions of one image arrive
/// before the image counts as embedded.
struct VectorInsert {
    ctx: Arc<AnalyticsContext>,
    partial: HashMap<(String, String), usize>,
}

impl Bolt for VectorInsert {
    fn execute(&mut self, input: &Tuple, _out: &mut BoltCollector<'_>) -> ExecResult {
        let doc_id = str_field(input, "doc_id")?.to_string();
        let url = str_field(input, "image_url")?.to_string();
        let count = input.get("region_count").and_then(Value::as_int).unwrap_or(1) as usize;
        let key = (doc_id.clone(), url.clone());
        if self.ctx.embedded.lock().contains(&key) {
            bump(&self.ctx.stats.duplicates_skipped);
            return Ok(());
        }
        let raw = input.get("vector").and_then(Value::as_bytes).ok_or("tuple lacks vector")?;
        let vector: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        {
            let mut coll = self.ctx.collection.write();
            let region = coll.entries_for_doc(&doc_id).len() as u32;
            let entry_id = coll.next_id();
            coll.insert(EmbeddingEntry {
                entry_id,
                doc_id: doc_id.clone(),
                region,
                vector,
                class_label: None,
            })?;
        }
        bump(&self.ctx.stats.embeddings_inserted);
        let seen = self.partial.entry(key.clone()).or_insert(0);
        *seen += 1;
        if *seen >= count {
            self.partial.remove(&key);
            self.ctx.embedded.lock().insert(key);
        }
        Ok(())
    }
}

pub const ANALYTICS_TOPOLOGY: &str = "image-analytics";

pub fn analytics_topology(ctx: Arc<AnalyticsContext>) -> TopologySpec {
    let mut spec = TopologySpec::new(ANALYTICS_TOPOLOGY);
    let c = ctx.clone();
    spec.spout("image-url-spout", 1, move |_| {
        Box::new(ImageUrlSpout {
            ctx: c.clone(),
            positions: Vec::new(),
            unsettled: Vec::new(),
            outstanding: HashMap::new(),
            retry: VecDeque::new(),
            next_partition: 0,
        })
    })
    .output("images", &["doc_id", "image_url", "site_name", "host"]);
    let c = ctx.clone();
    spec.bolt("image-fetcher", 1, move |_| {
        Box::new(ImageFetcher {
            ctx: c.clone(),
            clock: None,
        })
    })
    .output("image-bytes", &["doc_id", "image_url", "bytes"])
    .subscribe("image-url-spout", "images", Grouping::Fields(vec!["host".into()]));
    let c = ctx.clone();
    spec.bolt("embedder", ctx.config.embed_tasks.max(1), move |_| Box::new(EmbedBolt { ctx: c.clone() }))
        .output(
            "embeddings",
            &["doc_id", "image_url", "region", "region_count", "class_label", "vector"],
        )
        .subscribe("image-fetcher", "image-bytes", Grouping::Shuffle);
    let c = ctx;
    spec.bolt("vector-insert", 1, move |_| {
        Box::new(VectorInsert {
            ctx: c.clone(),
            partial: HashMap::new(),
        })
    })
    .subscribe("embedder", "embeddings", Grouping::Global);
    spec
}
