//! Tuple-tree tracking. Each spout root owns a tree of delivered tuple ids;
//! emitting a child toggles its id in, acking toggles it out, and the root
//! completes when the tree is empty.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};

use crate::clock::Clock;
use crate::metrics::RunMetrics;

pub trait AckTracker {
    /// Registers `root` with its initial tree. Returns true if the tree is
    /// already empty (root complete).
    fn start(&mut self, root: u64, ids: &[u64]) -> bool;

    /// Toggles `ids` in `root`'s tree. Returns true when this empties the
    /// tree, which also forgets the root. Unknown roots are ignored.
    fn toggle(&mut self, root: u64, ids: &[u64]) -> bool;

    /// Forgets `root`; true if it was pending.
    fn remove(&mut self, root: u64) -> bool;

    fn contains(&self, root: u64) -> bool;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Constant memory per root: the XOR of all ids currently in the tree.
/// Each id is toggled exactly twice (emit, ack), so the XOR reaches zero when
/// the tree empties; a premature zero needs a 64-bit collision.
#[derive(Debug, Default)]
pub struct XorTracker {
    roots: HashMap<u64, u64>,
}

impl AckTracker for XorTracker {
    fn start(&mut self, root: u64, ids: &[u64]) -> bool {
        let x = ids.iter().fold(0, |a, b| a ^ b);
        if x == 0 {
            return true;
        }
        self.roots.insert(root, x);
        false
    }

    fn toggle(&mut self, root: u64, ids: &[u64]) -> bool {
        let Some(x) = self.roots.get_mut(&root) else {
            return false;
        };
        *x = ids.iter().fold(*x, |a, b| a ^ b);
        if *x == 0 {
            self.roots.remove(&root);
            return true;
        }
        false
    }

    fn remove(&mut self, root: u64) -> bool {
        self.roots.remove(&root).is_some()
    }

    fn contains(&self, root: u64) -> bool {
        self.roots.contains_key(&root)
    }

    fn len(&self) -> usize {
        self.roots.len()
    }
}

/// Keeps every pending id explicitly. Reference implementation for tests.
#[derive(Debug, Default)]
pub struct SetTracker {
    roots: HashMap<u64, HashSet<u64>>,
}

impl AckTracker for SetTracker {
    fn start(&mut self, root: u64, ids: &[u64]) -> bool {
        let mut set = HashSet::new();
        for id in ids {
            if !set.insert(*id) {
                set.remove(id);
            }
        }
        if set.is_empty() {
            return true;
        }
        self.roots.insert(root, set);
        false
    }

    fn toggle(&mut self, root: u64, ids: &[u64]) -> bool {
        let Some(set) = self.roots.get_mut(&root) else {
            return false;
        };
        for id in ids {
            if !set.insert(*id) {
                set.remove(id);
            }
        }
        if set.is_empty() {
            self.roots.remove(&root);
            return true;
        }
        false
    }

    fn remove(&mut self, root: u64) -> bool {
        self.roots.remove(&root).is_some()
    }

    fn contains(&self, root: u64) -> bool {
        self.roots.contains_key(&root)
    }

    fn len(&self) -> usize {
        self.roots.len()
    }
}

pub(crate) enum AckMsg {
    Init {
        root: u64,
        task: usize,
        msg_id: u64,
        ids: Vec<u64>,
    },
    Toggle {
        roots: Vec<u64>,
        ids: Vec<u64>,
    },
    Fail {
        roots: Vec<u64>,
    },
    Kill,
}

#[derive(Debug)]
pub(crate) enum SpoutSignal {
    Acked(u64),
    Failed(u64),
    Shutdown,
}

struct RootInfo {
    task: usize,
    msg_id: u64,
}

pub(crate) struct Acker<T: AckTracker> {
    pub tracker: T,
    pub rx: Receiver<AckMsg>,
    pub spouts: Vec<Sender<SpoutSignal>>,
    pub clock: Arc<dyn Clock>,
    pub timeout_ms: u64,
    pub metrics: Arc<RunMetrics>,
}

impl<T: AckTracker> Acker<T> {
    pub fn run(mut self) {
        let mut info: HashMap<u64, RootInfo> = HashMap::new();
        // Roots in arrival order; start times are non-decreasing.
        let mut by_age: VecDeque<(u64, u64)> = VecDeque::new();
        let mut killed = false;
        loop {
            match self.rx.recv_timeout(Duration::from_millis(5)) {
                Ok(msg) => self.handle(msg, &mut info, &mut by_age, &mut killed),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            let now = self.clock.now_ms();
            while let Some(&(started, root)) = by_age.front() {
                if started.saturating_add(self.timeout_ms) > now {
                    break;
                }
                by_age.pop_front();
                if self.tracker.remove(root) {
                    log::debug!("root {root:#x} timed out");
                    self.finish(info.remove(&root), false);
                }
            }
        }
    }

    fn handle(
        &mut self,
        msg: AckMsg,
        info: &mut HashMap<u64, RootInfo>,
        by_age: &mut VecDeque<(u64, u64)>,
        killed: &mut bool,
    ) {
        match msg {
            AckMsg::Init { root, task, msg_id, ids } => {
                let started = self.clock.now_ms();
                self.metrics.root_started();
                let meta = RootInfo { task, msg_id };
                if *killed {
                    self.finish(Some(meta), false);
                } else if self.tracker.start(root, &ids) {
                    self.finish(Some(meta), true);
                } else {
                    info.insert(root, meta);
                    by_age.push_back((started, root));
                }
            }
            AckMsg::Toggle { roots, ids } => {
                for root in roots {
                    if self.tracker.toggle(root, &ids) {
                        self.finish(info.remove(&root), true);
                    }
                }
            }
            AckMsg::Fail { roots } => {
                for root in roots {
                    if self.tracker.remove(root) {
                        self.finish(info.remove(&root), false);
                    }
                }
            }
            AckMsg::Kill => {
                *killed = true;
                let mut pending: Vec<u64> = info.keys().copied().collect();
                pending.sort_unstable();
                for root in pending {
                    self.tracker.remove(root);
                    self.finish(info.remove(&root), false);
                }
                by_age.clear();
                for s in &self.spouts {
                    let _ = s.send(SpoutSignal::Shutdown);
                }
            }
        }
    }

    fn finish(&self, meta: Option<RootInfo>, acked: bool) {
        let Some(meta) = meta else { return };
        self.metrics.root_finished(acked);
        let signal = if acked {
            SpoutSignal::Acked(meta.msg_id)
        } else {
            SpoutSignal::Failed(meta.msg_id)
        };
        let _ = self.spouts[meta.task].send(signal);
    }
}
