//! Topology scheduler: registers crawl requests, seeds their frontiers and
//! runs one crawler topology per active site.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use snapforge_mlog::MessageLog;
use snapforge_stream::{Cluster, RunConfig, TopologyHandle, TopologyState};
use snapforge_text::TextIndex;

use crate::extract::StrategyRegistry;
use crate::frontier::{Frontier, FrontierCounts};
use crate::politeness::HostClocks;
use crate::request::CrawlRequest;
use crate::topology::{crawler_topology, CrawlContext, CrawlStats, CrawlStatsSnapshot, DEFAULT_JOIN_TIMEOUT_MS};
use crate::transport::Transport;
use crate::url::{discover_product_urls, url_partition};
use crate::{CrawlError, DEFAULT_MAX_RETRIES};

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    /// Where frontiers are saved (`<dir>/frontiers/<request_id>.json`).
    pub state_dir: Option<PathBuf>,
    pub max_retries: u32,
    pub join_timeout_ms: u64,
    pub run: RunConfig,
    pub topic: String,
    /// How often the completion watcher looks at a crawl.
    pub poll_ms: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            state_dir: None,
            max_retries: DEFAULT_MAX_RETRIES,
            join_timeout_ms: DEFAULT_JOIN_TIMEOUT_MS,
            run: RunConfig::default(),
            topic: snapforge_mlog::DEFAULT_TOPIC.to_string(),
            poll_ms: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    /// Waiting for a worker slot.
    Queued,
    Running,
    Paused,
    /// Frontier drained and the topology retired.
    Completed,
    Cancelled,
}

impl RequestState {
    pub fn is_active(self) -> bool {
        matches!(self, RequestState::Queued | RequestState::Running | RequestState::Paused)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestStatus {
    pub request_id: String,
    pub site_name: String,
    pub topology: String,
    pub state: RequestState,
    pub frontier: FrontierCounts,
    pub stats: CrawlStatsSnapshot,
}

struct RequestRun {
    ctx: Arc<CrawlContext>,
    handle: TopologyHandle,
    /// Terminal state once reached; live state comes from the topology.
    finished: Mutex<Option<RequestState>>,
}

impl RequestRun {
    fn state(&self) -> RequestState {
        if let Some(s) = *self.finished.lock() {
            return s;
        }
        match self.handle.state() {
            TopologyState::Queued => RequestState::Queued,
            TopologyState::Active => RequestState::Running,
            TopologyState::Deactivated => RequestState::Paused,
            TopologyState::Killed => RequestState::Cancelled,
        }
    }

    fn status(&self) -> RequestStatus {
        RequestStatus {
            request_id: self.ctx.request_id.clone(),
            site_name: self.ctx.site_name().to_string(),
            topology: self.handle.name().to_string(),
            state: self.state(),
            frontier: self.ctx.frontier.counts(),
            stats: self.ctx.stats.snapshot(),
        }
    }
}

#[derive(Default)]
struct Registry {
    runs: BTreeMap<String, Arc<RequestRun>>,
    /// Sites with a registration in progress or an active run.
    busy_sites: HashSet<String>,
}

/// Registers crawl requests and owns their crawler topologies. Safe to call
/// from many threads.
pub struct CrawlScheduler {
    cluster: Arc<Cluster>,
    transport: Arc<dyn Transport>,
    hosts: Arc<HostClocks>,
    text: Arc<TextIndex>,
    log: Arc<MessageLog>,
    strategies: StrategyRegistry,
    config: SchedulerConfig,
    registry: Arc<Mutex<Registry>>,
    next_id: AtomicU64,
}

impl CrawlScheduler {
    pub fn new(
        cluster: Arc<Cluster>,
        transport: Arc<dyn Transport>,
        hosts: Arc<HostClocks>,
        text: Arc<TextIndex>,
        log: Arc<MessageLog>,
        config: SchedulerConfig,
    ) -> Self {
        if log.partition_count(&config.topic).is_err() {
            // a concurrent creator winning the race is fine
            let _ = log.create_topic(&config.topic, snapforge_mlog::DEFAULT_PARTITIONS);
        }
        Self {
            cluster,
            transport,
            hosts,
            text,
            log,
            strategies: StrategyRegistry::default(),
            config,
            registry: Arc::new(Mutex::new(Registry::default())),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn strategies_mut(&mut self) -> &mut StrategyRegistry {
        &mut self.strategies
    }

    /// Validates `req`, expands its seeds into a frontier and queues a
    /// crawler topology for it. Returns the request id.
    pub fn register(&self, req: CrawlRequest) -> Result<String, CrawlError> {
        let valid = req.validate(&self.strategies)?;
        let site = req.site_name.clone();
        {
            let mut reg = self.registry.lock();
            if !reg.busy_sites.insert(site.clone()) {
                return Err(CrawlError::DuplicateSite(site));
            }
        }
        let res = self.start(valid);
        if res.is_err() {
            self.registry.lock().busy_sites.remove(&site);
        }
        res
    }

    fn start(&self, valid: crate::request::ValidRequest) -> Result<String, CrawlError> {
        let req = &valid.request;
        let request_id = match &req.request_id {
            Some(id) if !id.is_empty() => id.clone(),
            _ => format!("req-{}-{}", req.site_name, self.next_id.fetch_add(1, Ordering::Relaxed)),
        };
        if self.registry.lock().runs.contains_key(&request_id) {
            return Err(CrawlError::InvalidRequest(format!("request id {request_id:?} already used")));
        }
        let frontier = Arc::new(Frontier::new(&request_id, req.max_pages, self.config.max_retries));
        let clock = self.cluster.clock();
        for seed in &req.seed_urls {
            let (host, canonical) = url_partition(seed)?;
            let base = url::Url::parse(&canonical).expect("canonical url parses");
            if valid.filter.matches(&base) && !req.url_include_patterns.is_empty() {
                frontier.add(&canonical);
            }
            let res = self
                .hosts
                .run(&host, req.politeness_delay_ms, clock.as_ref(), || self.transport.get(&canonical));
            match res {
                Ok(r) if r.is_success() => {
                    let found = discover_product_urls(&r.body, &valid.filter, &base);
                    log::info!("seed {canonical}: {} product urls", found.len());
                    for u in found {
                        frontier.add(&u);
                    }
                }
                Ok(r) => log::warn!("seed {canonical}: status {}", r.status),
                Err(e) => log::warn!("seed {canonical}: {e}"),
            }
        }
        self.save_frontier(&frontier);

        let mut valid = valid;
        valid.request.request_id = Some(request_id.clone());
        let ctx = Arc::new(CrawlContext {
            request_id: request_id.clone(),
            request: valid,
            frontier,
            transport: self.transport.clone(),
            hosts: self.hosts.clone(),
            text: self.text.clone(),
            log: self.log.clone(),
            topic: self.config.topic.clone(),
            join_timeout_ms: self.config.join_timeout_ms,
            stats: CrawlStats::default(),
            drained: Default::default(),
        });
        let handle = self.cluster.submit(crawler_topology(ctx.clone()), &self.config.run)?;
        let run = Arc::new(RequestRun {
            ctx,
            handle,
            finished: Mutex::new(None),
        });
        self.registry.lock().runs.insert(request_id.clone(), run.clone());
        self.watch(run);
        Ok(request_id)
    }

    fn save_frontier(&self, frontier: &Frontier) {
        let Some(dir) = &self.config.state_dir else { return };
        let dir = dir.join("frontiers");
        let res = std::fs::create_dir_all(&dir)
            .map_err(CrawlError::from)
            .and_then(|_| frontier.save(dir.join(format!("{}.json", frontier.request_id()))));
        if let Err(e) = res {
            log::error!("saving frontier {}: {e}", frontier.request_id());
        }
    }

    /// Retires a crawl once its frontier drains (unless it re-crawls) or
    /// its topology is killed from outside.
    fn watch(&self, run: Arc<RequestRun>) {
        let registry = self.registry.clone();
        let poll = Duration::from_millis(self.config.poll_ms.max(1));
        let state_dir = self.config.state_dir.clone();
        std::thread::Builder::new()
            .name(format!("watch-{}", run.ctx.request_id))
            .spawn(move || {
                let recrawls = run.ctx.request.request.recrawl_interval_ms.is_some();
                loop {
                    std::thread::sleep(poll);
                    if run.finished.lock().is_some() || run.handle.state() == TopologyState::Killed {
                        break;
                    }
                    if !recrawls && run.ctx.drained.load(Ordering::SeqCst) {
                        let mut fin = run.finished.lock();
                        if fin.is_none() {
                            *fin = Some(RequestState::Completed);
                        }
                        drop(fin);
                        let _ = run.handle.set_state(TopologyState::Killed);
                        log::info!("crawl {} completed: {:?}", run.ctx.request_id, run.ctx.frontier.counts());
                        break;
                    }
                }
                run.handle.join();
                if let Some(dir) = state_dir {
                    let dir = dir.join("frontiers");
                    if let Err(e) = run.ctx.frontier.save(dir.join(format!("{}.json", run.ctx.request_id))) {
                        log::error!("saving frontier {}: {e}", run.ctx.request_id);
                    }
                }
                registry.lock().busy_sites.remove(run.ctx.site_name());
            })
            .expect("spawn watcher");
    }

    pub fn status(&self, request_id: &str) -> Option<RequestStatus> {
        self.registry.lock().runs.get(request_id).map(|r| r.status())
    }

    pub fn list(&self) -> Vec<RequestStatus> {
        self.registry.lock().runs.values().map(|r| r.status()).collect()
    }

    /// Kills an active crawl.
    pub fn cancel(&self, request_id: &str) -> Result<(), CrawlError> {
        let run = self
            .registry
            .lock()
            .runs
            .get(request_id)
            .cloned()
            .ok_or_else(|| CrawlError::UnknownRequest(request_id.to_string()))?;
        {
            let mut fin = run.finished.lock();
            if fin.is_some() {
                return Ok(());
            }
            *fin = Some(RequestState::Cancelled);
        }
        run.handle.set_state(TopologyState::Killed)?;
        Ok(())
    }

    /// Blocks until the request reaches a terminal state or `timeout`
    /// passes. Returns the state at that point.
    pub fn wait(&self, request_id: &str, timeout: Duration) -> Result<RequestState, CrawlError> {
        let deadline = Instant::now() + timeout;
        loop {
            let st = self
                .status(request_id)
                .ok_or_else(|| CrawlError::UnknownRequest(request_id.to_string()))?
                .state;
            let site_free = || {
                let reg = self.registry.lock();
                let site = reg.runs.get(request_id).map(|r| r.ctx.site_name().to_string());
                site.is_none_or(|s| !reg.busy_sites.contains(&s))
            };
            if (!st.is_active() && site_free()) || Instant::now() >= deadline {
                return Ok(st);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Frontier of a registered request.
    pub fn frontier(&self, request_id: &str) -> Option<Arc<Frontier>> {
        self.registry.lock().runs.get(request_id).map(|r| r.ctx.frontier.clone())
    }

    /// Shared crawl state of a registered request.
    pub fn context(&self, request_id: &str) -> Option<Arc<CrawlContext>> {
        self.registry.lock().runs.get(request_id).map(|r| r.ctx.clone())
    }

    /// Sum of pending frontier entries over active crawls.
    pub fn pending(&self) -> usize {
        self.registry
            .lock()
            .runs
            .values()
            .filter(|r| r.state().is_active())
            .map(|r| r.ctx.frontier.counts().pending)
            .sum()
    }

    pub fn cluster(&self) -> &Arc<Cluster> {
        &self.cluster
    }
}
