//! In-process stream processing: topologies of spouts and bolts connected by
//! bounded queues, with per-root tuple-tree acking for at-least-once
//! delivery.
//!
//! Every task runs on its own thread. A dedicated acker thread tracks each
//! spout root as the XOR of its pending tuple ids and calls back the
//! originating spout exactly once with `on_ack` or `on_fail`.

pub mod acker;
pub mod clock;
pub mod grouping;
pub mod metrics;
pub mod runtime;
pub mod task;
pub mod topology;
pub mod tuple;

pub use clock::{Clock, ManualClock, SystemClock};
pub use grouping::{route, Grouping};
pub use metrics::{ComponentCounts, RootCounts, TopologyMetrics};
pub use runtime::{Cluster, RunConfig, TopologyHandle, TopologyState};
pub use task::{Bolt, BoltCollector, ExecResult, Spout, SpoutCollector, TaskContext};
pub use topology::{validate_topology, TopologySpec, ValidationResult, Violation, DEFAULT_STREAM};
pub use tuple::{Tuple, Value};

#[derive(Debug, Clone, thiserror::Error)]
pub enum StreamError {
    #[error("invalid topology: {0}")]
    Invalid(ValidationResult),
    #[error("a topology named {0:?} is already queued or running")]
    DuplicateName(String),
    #[error("illegal state transition {from:?} -> {to:?}")]
    IllegalTransition { from: TopologyState, to: TopologyState },
    #[error("stream {0:?} is not declared by this component")]
    UndeclaredStream(String),
    #[error("expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("grouping field {0:?} missing from tuple")]
    MissingField(String),
    #[error("anchor {0:#x} is not pending in this task")]
    StaleAnchor(u64),
}
