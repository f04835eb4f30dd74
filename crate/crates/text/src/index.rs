use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::analyze::Analyzer;
use crate::doc::{Field, FilterField, ProductDoc};
use crate::TextError;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;
pub const DEFAULT_WEIGHTS: [(Field, f64); 3] = [(Field::Name, 3.0), (Field::Brand, 2.0), (Field::Description, 1.0)];
pub const JOURNAL_FILE: &str = "journal.jsonl";

/// `ln(1 + (n_docs − df + 0.5) / (df + 0.5))`, the non-negative BM25 idf.
pub fn bm25_idf(n_docs: u64, df: u64) -> f64 {
    (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

/// Saturated term-frequency part of BM25.
pub fn bm25_term(tf: u32, doc_len: u32, avg_len: f64) -> f64 {
    let tf = tf as f64;
    let norm = if avg_len > 0.0 { doc_len as f64 / avg_len } else { 0.0 };
    tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
struct FieldIndex {
    /// term → doc_id → term frequency
    postings: HashMap<String, BTreeMap<String, u32>>,
    lengths: HashMap<String, u32>,
    total_len: u64,
}

impl FieldIndex {
    fn add(&mut self, doc_id: &str, tokens: &[String]) {
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (t, n) in tf {
            self.postings.entry(t.to_string()).or_default().insert(doc_id.to_string(), n);
        }
        self.lengths.insert(doc_id.to_string(), tokens.len() as u32);
        self.total_len += tokens.len() as u64;
    }

    fn remove(&mut self, doc_id: &str, tokens: &[String]) {
        let unique: HashSet<&String> = tokens.iter().collect();
        for t in unique {
            if let Some(list) = self.postings.get_mut(t) {
                list.remove(doc_id);
                if list.is_empty() {
                    self.postings.remove(t);
                }
            }
        }
        if let Some(len) = self.lengths.remove(doc_id) {
            self.total_len -= len as u64;
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Snapshot {
    generation: u64,
    docs: BTreeMap<String, Arc<ProductDoc>>,
    fields: BTreeMap<Field, FieldIndex>,
}

impl Snapshot {
    fn apply(&mut self, op: &Op, analyzer: &Analyzer) {
        match op {
            Op::Upsert { doc } => {
                self.delete(&doc.doc_id, analyzer);
                for f in Field::ALL {
                    self.fields.entry(f).or_default().add(&doc.doc_id, &analyzer.analyze(doc.text(f)));
                }
                self.docs.insert(doc.doc_id.clone(), Arc::new(doc.clone()));
            }
            Op::Delete { doc_id } => {
                self.delete(doc_id, analyzer);
            }
            Op::Commit { .. } => {}
        }
    }

    fn delete(&mut self, doc_id: &str, analyzer: &Analyzer) -> bool {
        let Some(old) = self.docs.remove(doc_id) else {
            return false;
        };
        for f in Field::ALL {
            if let Some(idx) = self.fields.get_mut(&f) {
                idx.remove(doc_id, &analyzer.analyze(old.text(f)));
            }
        }
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Op {
    Upsert { doc: ProductDoc },
    Delete { doc_id: String },
    Commit { generation: u64 },
}

#[derive(Debug, Default)]
struct Writer {
    pending: Vec<Op>,
    journal: Option<BufWriter<File>>,
}

/// Full-text index with one writer and many readers. Readers always see the
/// last committed generation.
#[derive(Debug)]
pub struct TextIndex {
    analyzer: Analyzer,
    visible: RwLock<Arc<Snapshot>>,
    writer: Mutex<Writer>,
    dir: Option<PathBuf>,
}

impl Default for TextIndex {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl TextIndex {
    pub fn in_memory() -> Self {
        Self::with_analyzer(Analyzer::default())
    }

    pub fn with_analyzer(analyzer: Analyzer) -> Self {
        Self {
            analyzer,
            visible: RwLock::new(Arc::new(Snapshot::default())),
            writer: Mutex::new(Writer::default()),
            dir: None,
        }
    }

    /// Opens (or creates) an index directory and replays its journal. Ops
    /// after the last commit marker never became visible and are dropped.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, TextError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(JOURNAL_FILE);
        let analyzer = Analyzer::default();
        let mut snap = Snapshot::default();
        let mut valid_bytes = 0u64;
        if path.exists() {
            let mut group = Vec::new();
            let mut read = 0u64;
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                read += n as u64;
                if !line.ends_with('\n') {
                    // torn final write
                    break;
                }
                let op: Op = serde_json::from_str(&line).map_err(|e| TextError::Journal {
                    line: lineno,
                    message: e.to_string(),
                })?;
                if let Op::Commit { generation } = op {
                    for op in group.drain(..) {
                        snap.apply(&op, &analyzer);
                    }
                    snap.generation = generation;
                    valid_bytes = read;
                } else {
                    group.push(op);
                }
            }
            if !group.is_empty() {
                log::warn!("dropping {} uncommitted journal entries", group.len());
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        file.set_len(valid_bytes)?;
        Ok(Self {
            analyzer,
            visible: RwLock::new(Arc::new(snap)),
            writer: Mutex::new(Writer {
                pending: Vec::new(),
                journal: Some(BufWriter::new(file)),
            }),
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.visible.read().clone()
    }

    /// Buffers a document; it replaces any earlier version of the same
    /// `doc_id` once committed.
    pub fn upsert(&self, doc: ProductDoc) {
        self.writer.lock().pending.push(Op::Upsert { doc });
    }

    pub fn delete(&self, doc_id: &str) {
        self.writer.lock().pending.push(Op::Delete { doc_id: doc_id.to_string() });
    }

    pub fn pending(&self) -> usize {
        self.writer.lock().pending.len()
    }

    /// Makes every buffered write visible at once and returns the new
    /// generation. On a journal error nothing becomes visible and the writes
    /// stay buffered.
    pub fn commit(&self) -> Result<u64, TextError> {
        let mut guard = self.writer.lock();
        let w = &mut *guard;
        let mut next = Snapshot::clone(&self.snapshot());
        next.generation += 1;
        for op in &w.pending {
            next.apply(op, &self.analyzer);
        }
        if let Some(j) = w.journal.as_mut() {
            for op in &w.pending {
                serde_json::to_writer(&mut *j, op).map_err(std::io::Error::from)?;
                j.write_all(b"\n")?;
            }
            serde_json::to_writer(&mut *j, &Op::Commit { generation: next.generation }).map_err(std::io::Error::from)?;
            j.write_all(b"\n")?;
            j.flush()?;
        }
        w.pending.clear();
        let generation = next.generation;
        *self.visible.write() = Arc::new(next);
        Ok(generation)
    }

    pub fn generation(&self) -> u64 {
        self.snapshot().generation
    }

    /// Committed document count.
    pub fn len(&self) -> usize {
        self.snapshot().docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, doc_id: &str) -> Option<Arc<ProductDoc>> {
        self.snapshot().docs.get(doc_id).cloned()
    }

    /// Committed documents in doc_id order.
    pub fn docs(&self) -> Vec<Arc<ProductDoc>> {
        self.snapshot().docs.values().cloned().collect()
    }

    /// Distinct values of a filter field among committed docs.
    pub fn filter_values(&self, field: &str) -> Result<Vec<String>, TextError> {
        let f = FilterField::parse(field).ok_or_else(|| TextError::UnknownFilter(field.to_string()))?;
        let snap = self.snapshot();
        let mut out: Vec<String> = snap
            .docs
            .values()
            .filter_map(|d| match f {
                FilterField::SiteName => Some(d.site_name.clone()),
                FilterField::Brand => d.brand.clone(),
                FilterField::Currency => d.price.as_ref().map(|p| p.currency.clone()),
            })
            .collect();
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Ranked search with the default field weights.
    pub fn search_default(&self, query: &str, filters: &[(&str, &str)], limit: usize) -> Result<Vec<Hit>, TextError> {
        self.search(query, &DEFAULT_WEIGHTS, filters, limit)
    }

    /// Documents matching any query term, by descending BM25 score summed
    /// over `fields` (each scaled by its weight), ties by ascending doc_id.
    /// Repeated query terms count once.
    pub fn search(
        &self,
        query: &str,
        fields: &[(Field, f64)],
        filters: &[(&str, &str)],
        limit: usize,
    ) -> Result<Vec<Hit>, TextError> {
        if limit == 0 {
            return Err(TextError::ZeroLimit);
        }
        let filters: Vec<(FilterField, &str)> = filters
            .iter()
            .map(|(k, v)| FilterField::parse(k).map(|f| (f, *v)).ok_or_else(|| TextError::UnknownFilter(k.to_string())))
            .collect::<Result<_, _>>()?;
        let snap = self.snapshot();
        let n_docs = snap.docs.len() as u64;
        let mut terms = self.analyzer.analyze(query);
        terms.sort();
        terms.dedup();

        let mut scores: HashMap<&str, f64> = HashMap::new();
        for &(field, weight) in fields {
            let Some(idx) = snap.fields.get(&field) else { continue };
            let avg = if n_docs == 0 { 0.0 } else { idx.total_len as f64 / n_docs as f64 };
            for t in &terms {
                let Some(list) = idx.postings.get(t) else { continue };
                let idf = bm25_idf(n_docs, list.len() as u64);
                for (doc_id, &tf) in list {
                    let dl = idx.lengths.get(doc_id).copied().unwrap_or(0);
                    *scores.entry(doc_id).or_default() += weight * idf * bm25_term(tf, dl, avg);
                }
            }
        }
        let mut hits: Vec<Hit> = scores
            .into_iter()
            .filter(|(id, _)| {
                let doc = &snap.docs[*id];
                filters.iter().all(|(f, v)| f.matches(doc, v))
            })
            .map(|(id, score)| Hit { doc_id: id.to_string(), score })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        hits.truncate(limit);
        Ok(hits)
    }
}
