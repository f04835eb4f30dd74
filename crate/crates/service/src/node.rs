//! One process worth of pipeline: stream cluster, message log, text and
//! vector indices, the crawl scheduler and the image analytics topology.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use snapforge_crawler::{
    analytics_topology, AnalyticsConfig, AnalyticsContext, CrawlScheduler, HostClocks, RecordingTransport,
    SchedulerConfig, Transport,
};
use snapforge_gan::{Embedder, RegionDetector};
use snapforge_mlog::MessageLog;
use snapforge_stream::{Cluster, RunConfig, TopologyHandle, TopologyState};
use snapforge_text::TextIndex;
use snapforge_vector::{Collection, SharedCollection, VectorDb};

use crate::ServiceError;

pub const TEXT_DIR: &str = "text";
pub const LOG_DIR: &str = "log";
pub const STATE_DIR: &str = "state";
pub const DEFAULT_COLLECTION: &str = "items.svec";

pub struct NodeOptions {
    /// Root of persisted state. `None` keeps everything in memory.
    pub index_dir: Option<PathBuf>,
    /// Collection file. Relative paths resolve against `index_dir`.
    pub collection: PathBuf,
    pub embedder: Arc<dyn Embedder>,
    pub detector: Arc<dyn RegionDetector>,
    pub transport: Arc<dyn Transport>,
    /// Wrap the transport to timestamp every request.
    pub record_fetches: bool,
    pub run: RunConfig,
    pub join_timeout_ms: u64,
    pub analytics: AnalyticsConfig,
    /// Start the image analytics topology.
    pub run_analytics: bool,
}

impl NodeOptions {
    pub fn new(
        embedder: Arc<dyn Embedder>,
        detector: Arc<dyn RegionDetector>,
        transport: Arc<dyn Transport>,
    ) -> Self {
        Self {
            index_dir: None,
            collection: PathBuf::from(DEFAULT_COLLECTION),
            embedder,
            detector,
            transport,
            record_fetches: false,
            run: RunConfig {
                worker_slots: 4,
                ..RunConfig::default()
            },
            join_timeout_ms: snapforge_crawler::topology::DEFAULT_JOIN_TIMEOUT_MS,
            analytics: AnalyticsConfig::default(),
            run_analytics: true,
        }
    }
}

pub struct Node {
    pub cluster: Arc<Cluster>,
    pub text: Arc<TextIndex>,
    pub log: Arc<MessageLog>,
    pub collection: SharedCollection,
    pub scheduler: Arc<CrawlScheduler>,
    pub hosts: Arc<HostClocks>,
    pub transport: Arc<dyn Transport>,
    pub recorder: Option<Arc<RecordingTransport>>,
    pub embedder: Arc<dyn Embedder>,
    pub detector: Arc<dyn RegionDetector>,
    pub analytics: Option<(Arc<AnalyticsContext>, TopologyHandle)>,
    pub topic: String,
    index_dir: Option<PathBuf>,
    collection_path: Option<PathBuf>,
}

fn resolve(index_dir: Option<&Path>, p: &Path) -> Option<PathBuf> {
    match index_dir {
        _ if p.is_absolute() => Some(p.to_path_buf()),
        Some(d) => Some(d.join(p)),
        None => None,
    }
}

impl Node {
    pub fn start(opts: NodeOptions) -> Result<Node, ServiceError> {
        let index_dir = opts.index_dir.clone();
        if let Some(d) = &index_dir {
            std::fs::create_dir_all(d)?;
        }
        let text = Arc::new(match &index_dir {
            Some(d) => TextIndex::open(d.join(TEXT_DIR))?,
            None => TextIndex::in_memory(),
        });
        let log = Arc::new(match &index_dir {
            Some(d) if d.join(LOG_DIR).is_dir() => MessageLog::load(d.join(LOG_DIR))?,
            _ => MessageLog::new(),
        });
        let topic = opts.analytics.topic.clone();
        if log.partition_count(&topic).is_err() {
            log.create_topic(&topic, snapforge_mlog::DEFAULT_PARTITIONS)?;
        }

        let collection_path = resolve(index_dir.as_deref(), &opts.collection);
        let dim = opts.embedder.dimension();
        let collection = match &collection_path {
            Some(p) if p.exists() => Collection::load(p)?,
            _ => Collection::new(&collection_name(&opts.collection), dim)?,
        };
        if collection.dimension() != dim {
            return Err(ServiceError::Config(format!(
                "collection has dimension {} but embedder {:?} produces {dim}",
                collection.dimension(),
                opts.embedder.name()
            )));
        }
        let collection = VectorDb::new().attach(collection)?;

        let cluster = Arc::new(Cluster::new(opts.run.worker_slots.max(2)));
        let recorder = opts
            .record_fetches
            .then(|| Arc::new(RecordingTransport::new(opts.transport.clone(), cluster.clock())));
        let transport: Arc<dyn Transport> = match &recorder {
            Some(r) => r.clone(),
            None => opts.transport.clone(),
        };
        let hosts = Arc::new(HostClocks::new());
        let scheduler = Arc::new(CrawlScheduler::new(
            cluster.clone(),
            transport.clone(),
            hosts.clone(),
            text.clone(),
            log.clone(),
            SchedulerConfig {
                state_dir: index_dir.as_ref().map(|d| d.join(STATE_DIR)),
                join_timeout_ms: opts.join_timeout_ms,
                run: opts.run.clone(),
                topic: topic.clone(),
                ..SchedulerConfig::default()
            },
        ));

        let analytics = if opts.run_analytics {
            let ctx = Arc::new(AnalyticsContext::new(
                opts.analytics.clone(),
                log.clone(),
                transport.clone(),
                hosts.clone(),
                opts.embedder.clone(),
                opts.detector.clone(),
                collection.clone(),
            ));
            let handle = cluster.submit(analytics_topology(ctx.clone()), &opts.run)?;
            Some((ctx, handle))
        } else {
            None
        };

        Ok(Node {
            cluster,
            text,
            log,
            collection,
            scheduler,
            hosts,
            transport,
            recorder,
            embedder: opts.embedder,
            detector: opts.detector,
            analytics,
            topic,
            index_dir,
            collection_path,
        })
    }

    /// Waits until the analytics topology has consumed and settled every
    /// record in the topic.
    pub fn wait_analytics_idle(&self, timeout: Duration) -> Result<(), ServiceError> {
        let Some((ctx, _)) = &self.analytics else {
            return Ok(());
        };
        let deadline = Instant::now() + timeout;
        // idle must hold twice in a row so a record fetched between the two
        // checks is not missed
        let mut streak = 0;
        while streak < 2 {
            if Instant::now() >= deadline {
                return Err(ServiceError::Timeout(format!("analytics still busy: {:?}", ctx.stats.snapshot())));
            }
            streak = if ctx.is_idle() { streak + 1 } else { 0 };
            std::thread::sleep(Duration::from_millis(25));
        }
        Ok(())
    }

    /// Writes the message log and the collection under the index dir. The
    /// text index persists itself on every commit.
    pub fn persist(&self) -> Result<(), ServiceError> {
        if let Some(d) = &self.index_dir {
            self.log.save(d.join(LOG_DIR))?;
        }
        if let Some(p) = &self.collection_path {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            self.collection.read().save(p)?;
        }
        Ok(())
    }

    /// Kills every topology and waits for their threads.
    pub fn shutdown(&self) {
        for h in self.cluster.topologies() {
            let _ = h.set_state(TopologyState::Killed);
        }
        for h in self.cluster.topologies() {
            h.join();
        }
    }
}

fn collection_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "items".to_string(), |s| s.to_string_lossy().into_owned())
}
