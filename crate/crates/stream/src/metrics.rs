use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// Live counters of one component, summed over its tasks.
#[derive(Debug, Default)]
pub struct ComponentMetrics {
    emitted: AtomicU64,
    acked: AtomicU64,
    failed: AtomicU64,
}

impl ComponentMetrics {
    pub(crate) fn emitted(&self) {
        self.emitted.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn acked(&self) {
        self.acked.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn failed(&self) {
        self.failed.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> ComponentCounts {
        ComponentCounts {
            emitted: self.emitted.load(Ordering::Relaxed),
            acked: self.acked.load(Ordering::Relaxed),
            failed: self.failed.load(Ordering::Relaxed),
        }
    }
}

/// For spouts `emitted` counts roots and `acked`/`failed` count callbacks; for
/// bolts they count emitted tuples and acked/failed inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCounts {
    pub emitted: u64,
    pub acked: u64,
    pub failed: u64,
}

/// Root-tuple accounting kept by the acker. All four numbers change under
/// one lock, so `started = acked + failed + pending` holds in every snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCounts {
    pub started: u64,
    pub acked: u64,
    pub failed: u64,
    pub pending: u64,
}

#[derive(Debug, Default)]
pub struct RunMetrics {
    pub(crate) components: BTreeMap<String, std::sync::Arc<ComponentMetrics>>,
    roots: Mutex<RootCounts>,
}

impl RunMetrics {
    pub(crate) fn new(components: BTreeMap<String, std::sync::Arc<ComponentMetrics>>) -> Self {
        Self {
            components,
            roots: Mutex::default(),
        }
    }

    pub(crate) fn root_started(&self) {
        let mut r = self.roots.lock();
        r.started += 1;
        r.pending += 1;
    }

    pub(crate) fn root_finished(&self, acked: bool) {
        let mut r = self.roots.lock();
        r.pending -= 1;
        if acked {
            r.acked += 1;
        } else {
            r.failed += 1;
        }
    }

    pub fn snapshot(&self) -> TopologyMetrics {
        TopologyMetrics {
            components: self.components.iter().map(|(k, v)| (k.clone(), v.snapshot())).collect(),
            roots: *self.roots.lock(),
            acker_backlog: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyMetrics {
    pub components: BTreeMap<String, ComponentCounts>,
    pub roots: RootCounts,
    /// Ack/fail messages not yet processed by the acker.
    pub acker_backlog: u64,
}
