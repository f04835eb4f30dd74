//! The in-process cluster: worker slots, topology lifecycle and task threads.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acker::{AckMsg, Acker, XorTracker};
use crate::clock::{Clock, SystemClock};
use crate::metrics::{ComponentMetrics, RunMetrics, TopologyMetrics};
use crate::task::{BoltTask, IdGen, Outlet, SpoutTask, StreamOut, Target, TaskContext};
use crate::topology::{validate_topology, StreamDecl, TopologySpec};
use crate::tuple::{splitmix64, Tuple};
use crate::StreamError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyState {
    Queued,
    Active,
    Deactivated,
    Killed,
}

impl TopologyState {
    /// Transitions a caller may request. `Queued -> Active` happens only
    /// when the scheduler frees a slot.
    pub fn can_request(self, to: TopologyState) -> bool {
        use TopologyState::*;
        matches!(
            (self, to),
            (Active, Deactivated) | (Deactivated, Active) | (Active | Deactivated | Queued, Killed)
        )
    }

    fn occupies_slot(self) -> bool {
        matches!(self, TopologyState::Active | TopologyState::Deactivated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub worker_slots: usize,
    pub tuple_timeout_secs: u64,
    pub queue_capacity: usize,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            worker_slots: 1,
            tuple_timeout_secs: 30,
            queue_capacity: 1024,
            rng_seed: 0,
        }
    }
}

struct Run {
    run_id: u64,
    name: String,
    config: RunConfig,
    clock: Arc<dyn Clock>,
    gate: Arc<RwLock<TopologyState>>,
    killed: Arc<AtomicBool>,
    spec: Mutex<Option<TopologySpec>>,
    acker: Mutex<Option<Sender<AckMsg>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    metrics: Mutex<Option<Arc<RunMetrics>>>,
    cluster: Weak<ClusterShared>,
}

/// Shared handle to one submitted topology run.
#[derive(Clone)]
pub struct TopologyHandle {
    run: Arc<Run>,
}

impl std::fmt::Debug for TopologyHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TopologyHandle")
            .field("run_id", &self.run.run_id)
            .field("name", &self.run.name)
            .field("state", &self.state())
            .finish()
    }
}

impl TopologyHandle {
    pub fn run_id(&self) -> u64 {
        self.run.run_id
    }

    pub fn name(&self) -> &str {
        &self.run.name
    }

    pub fn state(&self) -> TopologyState {
        *self.run.gate.read_recursive()
    }

    pub fn set_state(&self, target: TopologyState) -> Result<(), StreamError> {
        let mut state = self.run.gate.write();
        let from = *state;
        if from == target {
            return Ok(());
        }
        if !from.can_request(target) {
            return Err(StreamError::IllegalTransition { from, to: target });
        }
        *state = target;
        if target == TopologyState::Killed {
            self.run.killed.store(true, Ordering::SeqCst);
            if let Some(acker) = self.run.acker.lock().take() {
                let _ = acker.send(AckMsg::Kill);
            }
            drop(state);
            log::info!("topology {} killed", self.run.name);
            if let Some(cluster) = self.run.cluster.upgrade() {
                cluster.schedule();
            }
        }
        Ok(())
    }

    pub fn metrics(&self) -> TopologyMetrics {
        let mut m = self.run.metrics.lock().as_ref().map(|m| m.snapshot()).unwrap_or_default();
        m.acker_backlog = self.run.acker.lock().as_ref().map_or(0, |a| a.len() as u64);
        m
    }

    /// Polls `pred` on the metrics every few milliseconds until it holds or
    /// `timeout` passes.
    pub fn wait_for(&self, timeout: Duration, pred: impl Fn(&TopologyMetrics) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if pred(&self.metrics()) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    /// Waits for every task thread to exit. Only meaningful after a kill.
    pub fn join(&self) {
        let threads = std::mem::take(&mut *self.run.threads.lock());
        for t in threads {
            let _ = t.join();
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.run.config
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.run.clock.clone()
    }
}

struct ClusterShared {
    slots: usize,
    clock: Arc<dyn Clock>,
    runs: Mutex<Vec<TopologyHandle>>,
    next_run: AtomicU64,
}

impl ClusterShared {
    /// Starts queued runs, oldest first, while slots are free.
    fn schedule(&self) {
        let runs = self.runs.lock();
        let mut busy = runs.iter().filter(|h| h.state().occupies_slot()).count();
        for h in runs.iter() {
            if busy >= self.slots {
                break;
            }
            if h.state() == TopologyState::Queued {
                start(&h.run);
                busy += 1;
            }
        }
    }
}

/// Runs topologies on `worker_slots` slots, one slot per topology.
pub struct Cluster {
    shared: Arc<ClusterShared>,
}

impl Cluster {
    pub fn new(worker_slots: usize) -> Self {
        Self::with_clock(worker_slots, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(worker_slots: usize, clock: Arc<dyn Clock>) -> Self {
        Self {
            shared: Arc::new(ClusterShared {
                slots: worker_slots,
                clock,
                runs: Mutex::new(Vec::new()),
                next_run: AtomicU64::new(1),
            }),
        }
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.shared.clock.clone()
    }

    /// Validates and queues `spec`; it starts at once if a slot is free.
    pub fn submit(&self, spec: TopologySpec, config: &RunConfig) -> Result<TopologyHandle, StreamError> {
        let validation = validate_topology(&spec);
        if !validation.is_ok() {
            return Err(StreamError::Invalid(validation));
        }
        let handle = {
            let mut runs = self.shared.runs.lock();
            if runs.iter().any(|h| h.name() == spec.name && h.state() != TopologyState::Killed) {
                return Err(StreamError::DuplicateName(spec.name.clone()));
            }
            let handle = TopologyHandle {
                run: Arc::new(Run {
                    run_id: self.shared.next_run.fetch_add(1, Ordering::Relaxed),
                    name: spec.name.clone(),
                    config: config.clone(),
                    clock: self.shared.clock.clone(),
                    gate: Arc::new(RwLock::new(TopologyState::Queued)),
                    killed: Arc::new(AtomicBool::new(false)),
                    spec: Mutex::new(Some(spec)),
                    acker: Mutex::new(None),
                    threads: Mutex::new(Vec::new()),
                    metrics: Mutex::new(None),
                    cluster: Arc::downgrade(&self.shared),
                }),
            };
            runs.push(handle.clone());
            handle
        };
        self.shared.schedule();
        Ok(handle)
    }

    pub fn topologies(&self) -> Vec<TopologyHandle> {
        self.shared.runs.lock().clone()
    }

    pub fn find(&self, name: &str) -> Option<TopologyHandle> {
        self.shared
            .runs
            .lock()
            .iter()
            .rev()
            .find(|h| h.name() == name)
            .cloned()
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        let runs = self.shared.runs.lock().clone();
        for h in &runs {
            let _ = h.set_state(TopologyState::Killed);
        }
        for h in &runs {
            h.join();
        }
    }
}

/// Instantiates every task of a queued run and marks it active.
fn start(run: &Arc<Run>) {
    let Some(spec) = run.spec.lock().take() else {
        return;
    };
    let cfg = &run.config;
    let capacity = cfg.queue_capacity.max(1);

    let mut inboxes: HashMap<&str, Vec<(Sender<Tuple>, Receiver<Tuple>)>> = HashMap::new();
    for b in &spec.bolts {
        inboxes.insert(&b.id, (0..b.parallelism).map(|_| bounded(capacity)).collect());
    }
    let mut targets: HashMap<(&str, &str), Vec<Target>> = HashMap::new();
    for b in &spec.bolts {
        for sub in &b.subscriptions {
            targets.entry((&sub.source, &sub.stream)).or_default().push(Target {
                grouping: sub.grouping.clone(),
                queues: inboxes[b.id.as_str()].iter().map(|(s, _)| s.clone()).collect(),
            });
        }
    }

    let mut component_metrics = BTreeMap::new();
    for id in spec.spouts.iter().map(|s| &s.id).chain(spec.bolts.iter().map(|b| &b.id)) {
        component_metrics.insert(id.clone(), Arc::new(ComponentMetrics::default()));
    }
    let metrics = Arc::new(RunMetrics::new(component_metrics.clone()));
    *run.metrics.lock() = Some(metrics.clone());

    let (ack_tx, ack_rx) = unbounded();
    let ids = Arc::new(IdGen::default());
    let mut task_seq = 0u64;
    let mut outlet = |component: &str, outputs: &[StreamDecl]| {
        task_seq += 1;
        Outlet {
            component: component.into(),
            streams: outputs
                .iter()
                .map(|d| {
                    let out = StreamOut {
                        id: d.id.as_str().into(),
                        fields: d.fields.clone().into(),
                        targets: targets.get(&(component, d.id.as_str())).cloned().unwrap_or_default(),
                    };
                    (d.id.clone(), out)
                })
                .collect(),
            acker: ack_tx.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ splitmix64(task_seq)),
            ids: ids.clone(),
            clock: run.clock.clone(),
            metrics: component_metrics[component].clone(),
        }
    };
    let context = |component: &str, task_index: usize, task_count: usize| TaskContext {
        topology: run.name.clone(),
        component: component.to_string(),
        task_index,
        task_count,
        clock: run.clock.clone(),
    };

    let mut threads = Vec::new();
    let mut spout_signals = Vec::new();
    for s in &spec.spouts {
        for i in 0..s.parallelism {
            let (sig_tx, sig_rx) = unbounded();
            let task = SpoutTask {
                spout: (s.factory)(i),
                ctx: context(&s.id, i, s.parallelism),
                outlet: outlet(&s.id, &s.outputs),
                signals: sig_rx,
                global_index: spout_signals.len(),
                gate: run.gate.clone(),
            };
            spout_signals.push(sig_tx);
            threads.push(spawn(&run.name, &s.id, i, move || task.run()));
        }
    }
    for b in &spec.bolts {
        let receivers: Vec<Receiver<Tuple>> =
            inboxes[b.id.as_str()].iter().map(|(_, r)| r.clone()).collect();
        for (i, inbox) in receivers.into_iter().enumerate() {
            let task = BoltTask {
                bolt: (b.factory)(i),
                ctx: context(&b.id, i, b.parallelism),
                outlet: outlet(&b.id, &b.outputs),
                inbox,
                tick_ms: b.tick_ms,
                killed: run.killed.clone(),
            };
            threads.push(spawn(&run.name, &b.id, i, move || task.run()));
        }
    }
    drop(outlet);
    drop(inboxes);

    let acker = Acker {
        tracker: XorTracker::default(),
        rx: ack_rx,
        spouts: spout_signals,
        clock: run.clock.clone(),
        timeout_ms: cfg.tuple_timeout_secs.saturating_mul(1000),
        metrics,
    };
    threads.push(spawn(&run.name, "__acker", 0, move || acker.run()));

    *run.acker.lock() = Some(ack_tx);
    *run.threads.lock() = threads;
    *run.gate.write() = TopologyState::Active;
    log::info!("topology {} active (run {})", run.name, run.run_id);
}

fn spawn(topology: &str, component: &str, index: usize, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name(format!("{topology}/{component}#{index}"))
        .spawn(f)
        .expect("spawn task thread")
}
