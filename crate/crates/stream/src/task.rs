//! Spout and bolt traits, their collectors, and the per-task event loops.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::RwLock;
use rand_chacha::ChaCha8Rng;

use crate::acker::{AckMsg, SpoutSignal};
use crate::clock::Clock;
use crate::grouping::{route, Grouping};
use crate::metrics::ComponentMetrics;
use crate::runtime::TopologyState;
pub use crate::tuple::{Tuple, Value};
use crate::tuple::splitmix64;
use crate::StreamError;

pub type ExecResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

#[derive(Clone)]
pub struct TaskContext {
    pub topology: String,
    pub component: String,
    pub task_index: usize,
    pub task_count: usize,
    pub clock: Arc<dyn Clock>,
}

pub trait Spout: Send {
    fn open(&mut self, _ctx: &TaskContext) {}

    /// Emits zero or more root tuples. Called repeatedly while the topology
    /// is active and no downstream queue is full.
    fn next_tuple(&mut self, out: &mut SpoutCollector<'_>);

    /// Every tuple tree rooted at `msg_id` was fully processed.
    fn on_ack(&mut self, _msg_id: u64) {}

    /// The tree rooted at `msg_id` failed or timed out.
    fn on_fail(&mut self, _msg_id: u64) {}
}

pub trait Bolt: Send {
    fn prepare(&mut self, _ctx: &TaskContext) {}

    /// Processes one input. An `Err` (or a panic) fails the input.
    fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult;

    /// Periodic hook, enabled per bolt with `tick_every`.
    fn tick(&mut self, _now_ms: u64, _out: &mut BoltCollector<'_>) {}

    /// When true the runtime acks each input after a successful `execute`
    /// that neither acked nor failed it.
    fn auto_ack(&self) -> bool {
        true
    }
}

/// Source of run-unique tuple ids.
#[derive(Debug, Default)]
pub(crate) struct IdGen {
    counter: AtomicU64,
}

impl IdGen {
    pub fn next(&self) -> u64 {
        loop {
            let id = splitmix64(self.counter.fetch_add(1, Ordering::Relaxed));
            if id != 0 {
                return id;
            }
        }
    }
}

#[derive(Clone)]
pub(crate) struct Target {
    pub grouping: Grouping,
    pub queues: Vec<Sender<Tuple>>,
}

pub(crate) struct StreamOut {
    pub id: Arc<str>,
    pub fields: Arc<[String]>,
    pub targets: Vec<Target>,
}

/// Everything a task needs to emit.
pub(crate) struct Outlet {
    pub component: Arc<str>,
    pub streams: HashMap<String, StreamOut>,
    pub acker: Sender<AckMsg>,
    pub rng: ChaCha8Rng,
    pub ids: Arc<IdGen>,
    pub clock: Arc<dyn Clock>,
    pub metrics: Arc<ComponentMetrics>,
}

impl Outlet {
    /// Builds the tuple and picks a destination (with a fresh id) per target.
    fn prepare(
        &mut self,
        stream: &str,
        values: Vec<Value>,
        anchor_ids: Vec<u64>,
        roots: Vec<u64>,
    ) -> Result<Vec<(Sender<Tuple>, Tuple)>, StreamError> {
        let out = self
            .streams
            .get(stream)
            .ok_or_else(|| StreamError::UndeclaredStream(stream.to_string()))?;
        if values.len() != out.fields.len() {
            return Err(StreamError::Arity {
                expected: out.fields.len(),
                got: values.len(),
            });
        }
        let proto = Tuple::new(
            self.component.clone(),
            out.id.clone(),
            out.fields.clone(),
            values.into(),
            anchor_ids,
            roots,
            self.clock.now_ms(),
        );
        let mut deliveries = Vec::with_capacity(out.targets.len());
        for target in &out.targets {
            let task = route(&proto, &target.grouping, target.queues.len(), &mut self.rng)?;
            let mut t = proto.clone();
            t.id = self.ids.next();
            deliveries.push((target.queues[task].clone(), t));
        }
        Ok(deliveries)
    }

    fn deliver(deliveries: Vec<(Sender<Tuple>, Tuple)>) {
        for (q, t) in deliveries {
            // A closed queue means the topology is being killed.
            let _ = q.send(t);
        }
    }

    /// True when any direct downstream queue is full.
    fn saturated(&self) -> bool {
        self.streams
            .values()
            .flat_map(|s| &s.targets)
            .flat_map(|t| &t.queues)
            .any(|q| q.is_full())
    }
}

pub struct SpoutCollector<'a> {
    outlet: &'a mut Outlet,
    task: usize,
    emitted: usize,
}

impl SpoutCollector<'_> {
    /// Emits a new root tuple tracked under `msg_id`. Returns the root key.
    pub fn emit(&mut self, stream: &str, values: Vec<Value>, msg_id: u64) -> Result<u64, StreamError> {
        let root = self.outlet.ids.next();
        let deliveries = self.outlet.prepare(stream, values, Vec::new(), vec![root])?;
        let ids = deliveries.iter().map(|(_, t)| t.id).collect();
        let _ = self.outlet.acker.send(AckMsg::Init {
            root,
            task: self.task,
            msg_id,
            ids,
        });
        Outlet::deliver(deliveries);
        self.outlet.metrics.emitted();
        self.emitted += 1;
        Ok(root)
    }

    pub fn now_ms(&self) -> u64 {
        self.outlet.clock.now_ms()
    }
}

pub struct BoltCollector<'a> {
    outlet: &'a mut Outlet,
    /// Inputs delivered to this task and not yet acked or failed.
    pending: &'a mut HashMap<u64, Vec<u64>>,
    error: Option<StreamError>,
}

impl BoltCollector<'_> {
    /// Emits a tuple anchored to `anchors`, which must be inputs of this
    /// task that are still pending. With no anchors the tuple is untracked.
    pub fn emit(&mut self, stream: &str, values: Vec<Value>, anchors: &[&Tuple]) -> Result<(), StreamError> {
        let res = self.try_emit(stream, values, anchors);
        if let Err(e) = &res {
            self.error.get_or_insert_with(|| e.clone());
        }
        res
    }

    fn try_emit(&mut self, stream: &str, values: Vec<Value>, anchors: &[&Tuple]) -> Result<(), StreamError> {
        let mut roots = Vec::new();
        for a in anchors {
            let r = self.pending.get(&a.id).ok_or(StreamError::StaleAnchor(a.id))?;
            roots.extend_from_slice(r);
        }
        roots.sort_unstable();
        roots.dedup();
        let anchor_ids = anchors.iter().map(|a| a.id).collect();
        let deliveries = match self.outlet.prepare(stream, values, anchor_ids, roots.clone()) {
            Ok(d) => d,
            Err(e) => {
                if !roots.is_empty() && matches!(e, StreamError::MissingField(_)) {
                    let _ = self.outlet.acker.send(AckMsg::Fail { roots });
                }
                return Err(e);
            }
        };
        if !roots.is_empty() {
            let ids = deliveries.iter().map(|(_, t)| t.id).collect();
            let _ = self.outlet.acker.send(AckMsg::Toggle { roots, ids });
        }
        Outlet::deliver(deliveries);
        self.outlet.metrics.emitted();
        Ok(())
    }

    /// Acks `t`. Repeated acks, and acks after a fail, are ignored.
    pub fn ack(&mut self, t: &Tuple) {
        if let Some(roots) = self.pending.remove(&t.id) {
            if !roots.is_empty() {
                let _ = self.outlet.acker.send(AckMsg::Toggle { roots, ids: vec![t.id] });
            }
            self.outlet.metrics.acked();
        }
    }

    /// Fails the whole tree `t` belongs to. Idempotent like [`ack`](Self::ack).
    pub fn fail(&mut self, t: &Tuple) {
        if let Some(roots) = self.pending.remove(&t.id) {
            if !roots.is_empty() {
                let _ = self.outlet.acker.send(AckMsg::Fail { roots });
            }
            self.outlet.metrics.failed();
        }
    }

    pub fn is_pending(&self, t: &Tuple) -> bool {
        self.pending.contains_key(&t.id)
    }

    pub fn now_ms(&self) -> u64 {
        self.outlet.clock.now_ms()
    }
}

pub(crate) struct SpoutTask {
    pub spout: Box<dyn Spout>,
    pub ctx: TaskContext,
    pub outlet: Outlet,
    pub signals: Receiver<SpoutSignal>,
    pub global_index: usize,
    pub gate: Arc<RwLock<TopologyState>>,
}

impl SpoutTask {
    pub fn run(mut self) {
        self.spout.open(&self.ctx);
        loop {
            while let Ok(sig) = self.signals.try_recv() {
                if !self.handle(sig) {
                    return;
                }
            }
            let emitted = {
                // Holding the gate keeps a concurrent kill from slipping
                // between the state check and the acker registration.
                let state = self.gate.read();
                if *state == TopologyState::Active && !self.outlet.saturated() {
                    let mut out = SpoutCollector {
                        outlet: &mut self.outlet,
                        task: self.global_index,
                        emitted: 0,
                    };
                    let res = catch_unwind(AssertUnwindSafe(|| self.spout.next_tuple(&mut out)));
                    if res.is_err() {
                        log::error!("{}: spout panicked in next_tuple", self.ctx.component);
                    }
                    out.emitted
                } else {
                    0
                }
            };
            if emitted == 0 {
                match self.signals.recv_timeout(Duration::from_millis(2)) {
                    Ok(sig) => {
                        if !self.handle(sig) {
                            return;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            }
        }
    }

    fn handle(&mut self, sig: SpoutSignal) -> bool {
        match sig {
            SpoutSignal::Acked(m) => {
                self.outlet.metrics.acked();
                self.spout.on_ack(m);
            }
            SpoutSignal::Failed(m) => {
                self.outlet.metrics.failed();
                self.spout.on_fail(m);
            }
            SpoutSignal::Shutdown => return false,
        }
        true
    }
}

pub(crate) struct BoltTask {
    pub bolt: Box<dyn Bolt>,
    pub ctx: TaskContext,
    pub outlet: Outlet,
    pub inbox: Receiver<Tuple>,
    pub tick_ms: Option<u64>,
    /// Bolts never take the gate lock: a kill waiting for it must not stall
    /// the bolts that drain a spout's blocked send.
    pub killed: Arc<AtomicBool>,
}

impl BoltTask {
    pub fn run(mut self) {
        self.bolt.prepare(&self.ctx);
        let mut pending: HashMap<u64, Vec<u64>> = HashMap::new();
        let mut next_tick = self.tick_ms.map(|t| self.ctx.clock.now_ms() + t);
        let auto_ack = self.bolt.auto_ack();
        loop {
            if self.killed.load(Ordering::SeqCst) {
                return;
            }
            match self.inbox.recv_timeout(Duration::from_millis(5)) {
                Ok(input) => {
                    pending.insert(input.id, input.roots.clone());
                    let mut out = BoltCollector {
                        outlet: &mut self.outlet,
                        pending: &mut pending,
                        error: None,
                    };
                    let bolt = &mut self.bolt;
                    let res = catch_unwind(AssertUnwindSafe(|| bolt.execute(&input, &mut out)));
                    let failed = match res {
                        Ok(Ok(())) => out.error.take().map(|e| e.to_string()),
                        Ok(Err(e)) => Some(e.to_string()),
                        Err(_) => Some("panic in execute".to_string()),
                    };
                    match failed {
                        Some(why) => {
                            log::debug!("{}: input failed: {why}", self.ctx.component);
                            out.fail(&input);
                        }
                        None if auto_ack => out.ack(&input),
                        None => {}
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
            if let (Some(period), Some(due)) = (self.tick_ms, next_tick) {
                let now = self.ctx.clock.now_ms();
                if now >= due {
                    let mut out = BoltCollector {
                        outlet: &mut self.outlet,
                        pending: &mut pending,
                        error: None,
                    };
                    self.bolt.tick(now, &mut out);
                    next_tick = Some(now + period);
                }
            }
        }
    }
}
