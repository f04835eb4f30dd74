//! An embedded partitioned commit log.
//!
//! Topics hold a fixed number of append-only partitions. Keyed records go to
//! `fnv1a64(key) % partitions`, keyless ones round-robin. Consumer groups
//! track a committed next-offset per partition; [`MessageLog::poll`] never
//! advances it, so anything polled but not committed is delivered again.

mod snapshot;

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use fnv::FnvHasher;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use snapshot::{read_partition_file, write_partition_file};

pub const DEFAULT_TOPIC: &str = "image-urls";
pub const DEFAULT_PARTITIONS: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("topic {0:?} already exists")]
    DuplicateTopic(String),
    #[error("a topic needs at least one partition")]
    NoPartitions,
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("topic {topic:?} has no partition {partition}")]
    UnknownPartition { topic: String, partition: u32 },
    #[error("offset {offset} is past the end ({end}) of {topic}/{partition}")]
    OffsetOutOfRange { topic: String, partition: u32, offset: u64, end: u64 },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub key: Option<Vec<u8>>,
    pub payload: Vec<u8>,
    /// Milliseconds since the Unix epoch.
    pub append_time: u64,
}

/// 64-bit FNV-1a of the key bytes. Fixed forever so partition choice is
/// stable across runs and versions.
pub fn stable_hash(key: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(key);
    h.finish()
}

#[derive(Debug, Default)]
struct Partition {
    records: RwLock<Vec<Arc<Record>>>,
}

impl Partition {
    fn end(&self) -> u64 {
        self.records.read().len() as u64
    }
}

#[derive(Debug)]
struct Topic {
    name: String,
    partitions: Vec<Partition>,
    next_rr: AtomicU64,
}

/// Committed next-offset per (topic, partition), per group.
type GroupOffsets = HashMap<String, BTreeMap<(String, u32), u64>>;

#[derive(Debug, Default)]
pub struct MessageLog {
    topics: RwLock<BTreeMap<String, Arc<Topic>>>,
    groups: Mutex<GroupOffsets>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_topic(&self, name: &str, partitions: u32) -> Result<(), LogError> {
        if partitions < 1 {
            return Err(LogError::NoPartitions);
        }
        let mut topics = self.topics.write();
        if topics.contains_key(name) {
            return Err(LogError::DuplicateTopic(name.to_string()));
        }
        topics.insert(
            name.to_string(),
            Arc::new(Topic {
                name: name.to_string(),
                partitions: (0..partitions).map(|_| Partition::default()).collect(),
                next_rr: AtomicU64::new(0),
            }),
        );
        Ok(())
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.topics.read().keys().cloned().collect()
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>, LogError> {
        self.topics
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| LogError::UnknownTopic(name.to_string()))
    }

    pub fn partition_count(&self, topic: &str) -> Result<u32, LogError> {
        Ok(self.topic(topic)?.partitions.len() as u32)
    }

    /// Appends a record and returns where it landed.
    pub fn produce(&self, topic: &str, key: Option<&[u8]>, payload: &[u8]) -> Result<(u32, u64), LogError> {
        let t = self.topic(topic)?;
        let n = t.partitions.len() as u64;
        let partition = match key {
            Some(k) => stable_hash(k) % n,
            None => t.next_rr.fetch_add(1, Ordering::Relaxed) % n,
        } as u32;
        let mut records = t.partitions[partition as usize].records.write();
        let offset = records.len() as u64;
        records.push(Arc::new(Record {
            topic: t.name.clone(),
            partition,
            offset,
            key: key.map(<[u8]>::to_vec),
            payload: payload.to_vec(),
            append_time: now_ms(),
        }));
        Ok((partition, offset))
    }

    /// One past the last offset of every partition.
    pub fn end_offsets(&self, topic: &str) -> Result<Vec<u64>, LogError> {
        Ok(self.topic(topic)?.partitions.iter().map(Partition::end).collect())
    }

    pub fn committed(&self, group: &str, topic: &str, partition: u32) -> u64 {
        self.groups
            .lock()
            .get(group)
            .and_then(|g| g.get(&(topic.to_string(), partition)))
            .copied()
            .unwrap_or(0)
    }

    /// Up to `max_records` records at or after the group's committed
    /// offsets, taken round-robin across partitions; each partition's
    /// records come in offset order. Does not move committed offsets.
    pub fn poll(&self, group: &str, topic: &str, max_records: usize) -> Result<Vec<Record>, LogError> {
        let t = self.topic(topic)?;
        let starts: Vec<u64> = (0..t.partitions.len() as u32)
            .map(|p| self.committed(group, topic, p))
            .collect();
        let views: Vec<_> = t.partitions.iter().map(|p| p.records.read()).collect();
        let mut cursors = starts;
        let mut out = Vec::new();
        loop {
            let mut progressed = false;
            for (p, records) in views.iter().enumerate() {
                if out.len() >= max_records {
                    return Ok(out);
                }
                if let Some(r) = records.get(cursors[p] as usize) {
                    out.push(Record::clone(r));
                    cursors[p] += 1;
                    progressed = true;
                }
            }
            if !progressed {
                return Ok(out);
            }
        }
    }

    /// Up to `max_records` records of one partition starting at `offset`,
    /// for consumers that track their own read position.
    pub fn fetch(&self, topic: &str, partition: u32, offset: u64, max_records: usize) -> Result<Vec<Record>, LogError> {
        let t = self.topic(topic)?;
        let p = t.partitions.get(partition as usize).ok_or_else(|| LogError::UnknownPartition {
            topic: topic.to_string(),
            partition,
        })?;
        let records = p.records.read();
        let start = (offset as usize).min(records.len());
        Ok(records[start..].iter().take(max_records).map(|r| Record::clone(r)).collect())
    }

    /// Sets the group's next offset for one partition. Rewinding is allowed.
    pub fn commit(&self, group: &str, topic: &str, partition: u32, next_offset: u64) -> Result<(), LogError> {
        let t = self.topic(topic)?;
        let p = t.partitions.get(partition as usize).ok_or_else(|| LogError::UnknownPartition {
            topic: topic.to_string(),
            partition,
        })?;
        let end = p.end();
        if next_offset > end {
            return Err(LogError::OffsetOutOfRange {
                topic: topic.to_string(),
                partition,
                offset: next_offset,
                end,
            });
        }
        self.groups
            .lock()
            .entry(group.to_string())
            .or_default()
            .insert((topic.to_string(), partition), next_offset);
        Ok(())
    }

    /// Commits past every record in `records` (per partition, the highest
    /// offset seen plus one).
    pub fn commit_records(&self, group: &str, records: &[Record]) -> Result<(), LogError> {
        let mut next: BTreeMap<(&str, u32), u64> = BTreeMap::new();
        for r in records {
            let e = next.entry((&r.topic, r.partition)).or_default();
            *e = (*e).max(r.offset + 1);
        }
        for ((topic, partition), offset) in next {
            if offset > self.committed(group, topic, partition) {
                self.commit(group, topic, partition, offset)?;
            }
        }
        Ok(())
    }

    /// Records still unread by `group` across all partitions.
    pub fn lag(&self, group: &str, topic: &str) -> Result<u64, LogError> {
        let ends = self.end_offsets(topic)?;
        Ok(ends
            .iter()
            .enumerate()
            .map(|(p, end)| end - self.committed(group, topic, p as u32))
            .sum())
    }

    /// Writes every topic to `dir/<topic>/<partition>.log` and group offsets
    /// to `dir/offsets.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), LogError> {
        let dir = dir.as_ref();
        for (name, topic) in self.topics.read().iter() {
            let tdir = dir.join(name);
            std::fs::create_dir_all(&tdir)?;
            for (i, p) in topic.partitions.iter().enumerate() {
                let records = p.records.read();
                write_partition_file(tdir.join(format!("{i}.log")), records.iter().map(|r| &**r))?;
            }
        }
        let groups: BTreeMap<String, Vec<(String, u32, u64)>> = self
            .groups
            .lock()
            .iter()
            .map(|(g, m)| (g.clone(), m.iter().map(|((t, p), o)| (t.clone(), *p, *o)).collect()))
            .collect();
        let json = serde_json::to_vec_pretty(&groups).map_err(|e| LogError::Corrupt(e.to_string()))?;
        std::fs::write(dir.join("offsets.json"), json)?;
        Ok(())
    }

    /// Rebuilds a log saved with [`save`](Self::save). Append times are not
    /// part of the file format; restored records carry the load time.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, LogError> {
        let dir = dir.as_ref();
        let log = MessageLog::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let mut count = 0u32;
            while entry.path().join(format!("{count}.log")).exists() {
                count += 1;
            }
            log.create_topic(&name, count.max(1))?;
            let topic = log.topic(&name)?;
            let loaded = now_ms();
            for p in 0..count {
                let mut records = topic.partitions[p as usize].records.write();
                for (offset, (key, payload)) in read_partition_file(entry.path().join(format!("{p}.log")))?
                    .into_iter()
                    .enumerate()
                {
                    records.push(Arc::new(Record {
                        topic: name.clone(),
                        partition: p,
                        offset: offset as u64,
                        key,
                        payload,
                        append_time: loaded,
                    }));
                }
            }
            // Keep round-robin spreading where it left off.
            let total: u64 = topic.partitions.iter().map(Partition::end).sum();
            topic.next_rr.store(total, Ordering::Relaxed);
        }
        let offsets = dir.join("offsets.json");
        if offsets.exists() {
            let groups: BTreeMap<String, Vec<(String, u32, u64)>> =
                serde_json::from_slice(&std::fs::read(offsets)?).map_err(|e| LogError::Corrupt(e.to_string()))?;
            for (g, entries) in groups {
                for (t, p, o) in entries {
                    log.commit(&g, &t, p, o)?;
                }
            }
        }
        Ok(log)
    }
}
