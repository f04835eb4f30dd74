#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use snapforge_stream::{Spout, SpoutCollector, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Acked,
    Failed,
}

pub type Outcomes = Arc<Mutex<HashMap<u64, Vec<Outcome>>>>;

/// Emits `total` roots (msg ids `0..total`) on "default" with fields
/// `["n", "key"]`, at most `burst` per call, and records every callback.
pub struct CountingSpout {
    pub next: u64,
    pub total: u64,
    pub burst: u64,
    pub keys: u64,
    pub outcomes: Outcomes,
}

impl CountingSpout {
    pub fn new(total: u64, outcomes: Outcomes) -> Self {
        Self {
            next: 0,
            total,
            burst: 64,
            keys: 16,
            outcomes,
        }
    }
}

impl Spout for CountingSpout {
    fn next_tuple(&mut self, out: &mut SpoutCollector<'_>) {
        let end = (self.next + self.burst).min(self.total);
        while self.next < end {
            let n = self.next;
            let key = format!("k{}", n % self.keys);
            out.emit("default", vec![Value::Int(n as i64), Value::from(key)], n).unwrap();
            self.next += 1;
        }
    }

    fn on_ack(&mut self, msg_id: u64) {
        self.outcomes.lock().entry(msg_id).or_default().push(Outcome::Acked);
    }

    fn on_fail(&mut self, msg_id: u64) {
        self.outcomes.lock().entry(msg_id).or_default().push(Outcome::Failed);
    }
}

pub fn outcomes() -> Outcomes {
    Arc::new(Mutex::new(HashMap::new()))
}

pub fn count(o: &Outcomes, which: Outcome) -> usize {
    o.lock().values().filter(|v| v.as_slice() == [which]).count()
}
