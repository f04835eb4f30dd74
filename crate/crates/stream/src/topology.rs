//! Topology description and static validation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::grouping::Grouping;
use crate::task::{Bolt, Spout};

pub type SpoutFactory = Arc<dyn Fn(usize) -> Box<dyn Spout> + Send + Sync>;
pub type BoltFactory = Arc<dyn Fn(usize) -> Box<dyn Bolt> + Send + Sync>;

pub const DEFAULT_STREAM: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamDecl {
    pub id: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub source: String,
    pub stream: String,
    pub grouping: Grouping,
}

#[derive(Clone)]
pub struct SpoutSpec {
    pub id: String,
    pub parallelism: usize,
    pub outputs: Vec<StreamDecl>,
    pub factory: SpoutFactory,
}

#[derive(Clone)]
pub struct BoltSpec {
    pub id: String,
    pub parallelism: usize,
    pub outputs: Vec<StreamDecl>,
    pub subscriptions: Vec<Subscription>,
    /// How often the bolt's `tick` hook runs; `None` disables it.
    pub tick_ms: Option<u64>,
    pub factory: BoltFactory,
}

#[derive(Clone)]
pub struct TopologySpec {
    pub name: String,
    pub spouts: Vec<SpoutSpec>,
    pub bolts: Vec<BoltSpec>,
}

impl fmt::Debug for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TopologySpec")
            .field("name", &self.name)
            .field("spouts", &self.spouts.iter().map(|s| &s.id).collect::<Vec<_>>())
            .field("bolts", &self.bolts.iter().map(|b| &b.id).collect::<Vec<_>>())
            .finish()
    }
}

impl TopologySpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            spouts: Vec::new(),
            bolts: Vec::new(),
        }
    }

    pub fn spout<F>(&mut self, id: &str, parallelism: usize, factory: F) -> &mut SpoutSpec
    where
        F: Fn(usize) -> Box<dyn Spout> + Send + Sync + 'static,
    {
        self.spouts.push(SpoutSpec {
            id: id.to_string(),
            parallelism,
            outputs: Vec::new(),
            factory: Arc::new(factory),
        });
        self.spouts.last_mut().unwrap()
    }

    pub fn bolt<F>(&mut self, id: &str, parallelism: usize, factory: F) -> &mut BoltSpec
    where
        F: Fn(usize) -> Box<dyn Bolt> + Send + Sync + 'static,
    {
        self.bolts.push(BoltSpec {
            id: id.to_string(),
            parallelism,
            outputs: Vec::new(),
            subscriptions: Vec::new(),
            tick_ms: None,
            factory: Arc::new(factory),
        });
        self.bolts.last_mut().unwrap()
    }

    /// Output streams declared by component `id`.
    pub fn outputs_of(&self, id: &str) -> Option<&[StreamDecl]> {
        self.spouts
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.outputs.as_slice())
            .or_else(|| self.bolts.iter().find(|b| b.id == id).map(|b| b.outputs.as_slice()))
    }
}

fn decl(id: &str, fields: &[&str]) -> StreamDecl {
    StreamDecl {
        id: id.to_string(),
        fields: fields.iter().map(|f| f.to_string()).collect(),
    }
}

impl SpoutSpec {
    pub fn output(&mut self, stream: &str, fields: &[&str]) -> &mut Self {
        self.outputs.push(decl(stream, fields));
        self
    }
}

impl BoltSpec {
    pub fn output(&mut self, stream: &str, fields: &[&str]) -> &mut Self {
        self.outputs.push(decl(stream, fields));
        self
    }

    pub fn subscribe(&mut self, source: &str, stream: &str, grouping: Grouping) -> &mut Self {
        self.subscriptions.push(Subscription {
            source: source.to_string(),
            stream: stream.to_string(),
            grouping,
        });
        self
    }

    pub fn shuffle(&mut self, source: &str) -> &mut Self {
        self.subscribe(source, DEFAULT_STREAM, Grouping::Shuffle)
    }

    pub fn tick_every(&mut self, ms: u64) -> &mut Self {
        self.tick_ms = Some(ms);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateComponent(String),
    ZeroParallelism(String),
    UnknownComponent { bolt: String, source: String },
    UnknownStream { bolt: String, source: String, stream: String },
    UnknownField { bolt: String, source: String, stream: String, field: String },
    /// Component ids along one cycle, first id repeated at the end.
    Cycle(Vec<String>),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateComponent(id) => write!(f, "component {id:?} declared twice"),
            Violation::ZeroParallelism(id) => write!(f, "component {id:?} has parallelism 0"),
            Violation::UnknownComponent { bolt, source } => {
                write!(f, "{bolt:?} subscribes to undeclared component {source:?}")
            }
            Violation::UnknownStream { bolt, source, stream } => {
                write!(f, "{bolt:?} subscribes to undeclared stream {source}/{stream}")
            }
            Violation::UnknownField { bolt, source, stream, field } => {
                write!(f, "{bolt:?} groups {source}/{stream} on missing field {field:?}")
            }
            Violation::Cycle(path) => write!(f, "cycle {}", path.join(" -> ")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate_topology(spec: &TopologySpec) -> ValidationResult {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    let mut outputs: HashMap<&str, &[StreamDecl]> = HashMap::new();
    let ids = spec
        .spouts
        .iter()
        .map(|s| (&s.id, s.parallelism, &s.outputs))
        .chain(spec.bolts.iter().map(|b| (&b.id, b.parallelism, &b.outputs)));
    for (id, parallelism, outs) in ids {
        if !seen.insert(id.as_str()) {
            violations.push(Violation::DuplicateComponent(id.clone()));
        }
        if parallelism == 0 {
            violations.push(Violation::ZeroParallelism(id.clone()));
        }
        outputs.entry(id).or_insert(outs);
    }

    for bolt in &spec.bolts {
        for sub in &bolt.subscriptions {
            let Some(streams) = outputs.get(sub.source.as_str()) else {
                violations.push(Violation::UnknownComponent {
                    bolt: bolt.id.clone(),
                    source: sub.source.clone(),
                });
                continue;
            };
            let Some(stream) = streams.iter().find(|s| s.id == sub.stream) else {
                violations.push(Violation::UnknownStream {
                    bolt: bolt.id.clone(),
                    source: sub.source.clone(),
                    stream: sub.stream.clone(),
                });
                continue;
            };
            if let Grouping::Fields(names) = &sub.grouping {
                for name in names.iter().filter(|n| !stream.fields.contains(n)) {
                    violations.push(Violation::UnknownField {
                        bolt: bolt.id.clone(),
                        source: sub.source.clone(),
                        stream: sub.stream.clone(),
                        field: name.clone(),
                    });
                }
            }
        }
    }

    if let Some(cycle) = find_cycle(spec) {
        violations.push(Violation::Cycle(cycle));
    }
    ValidationResult { violations }
}

/// Depth-first search over source→subscriber edges.
fn find_cycle(spec: &TopologySpec) -> Option<Vec<String>> {
    let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for b in &spec.bolts {
        for sub in &b.subscriptions {
            edges.entry(sub.source.as_str()).or_default().push(b.id.as_str());
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: HashMap<&str, Mark> = HashMap::new();
    let starts: Vec<&str> = edges.keys().copied().collect();
    for start in starts {
        if marks.contains_key(start) {
            continue;
        }
        let mut path = vec![start];
        let mut stack = vec![(start, 0usize)];
        marks.insert(start, Mark::Open);
        while let Some((node, i)) = stack.last_mut() {
            let next = edges.get(*node).and_then(|v| v.get(*i)).copied();
            *i += 1;
            match next {
                Some(n) => match marks.get(n) {
                    Some(Mark::Open) => {
                        let from = path.iter().position(|p| *p == n).unwrap();
                        let mut cycle: Vec<String> = path[from..].iter().map(|s| s.to_string()).collect();
                        cycle.push(n.to_string());
                        return Some(cycle);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(n, Mark::Open);
                        path.push(n);
                        stack.push((n, 0));
                    }
                },
                None => {
                    marks.insert(node, Mark::Done);
                    path.pop();
                    stack.pop();
                }
            }
        }
    }
    None
}
