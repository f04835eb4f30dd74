//! Per-request URL frontier.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::CrawlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontierStatus {
    Pending,
    Fetched,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub url: String,
    pub request_id: String,
    pub status: FrontierStatus,
    /// Fetch retries spent on this URL. Never exceeds the request's
    /// `max_retries`.
    pub retry_count: u32,
    /// Whole-tree replays after a downstream failure or timeout.
    #[serde(default)]
    pub replays: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierCounts {
    pub pending: usize,
    pub fetched: usize,
    pub failed: usize,
    /// Pending entries handed out and not yet settled.
    pub in_flight: usize,
    pub total: usize,
}

#[derive(Debug, Default)]
struct Inner {
    entries: Vec<FrontierEntry>,
    by_url: HashMap<String, usize>,
    /// Pending entries not currently handed out.
    ready: VecDeque<usize>,
}

/// Deduplicated URL set of one crawl request. Entries are never removed, so
/// pending + fetched + failed always equals the number discovered.
#[derive(Debug)]
pub struct Frontier {
    request_id: String,
    max_pages: usize,
    max_retries: u32,
    inner: Mutex<Inner>,
}

impl Frontier {
    pub fn new(request_id: &str, max_pages: usize, max_retries: u32) -> Self {
        Self {
            request_id: request_id.to_string(),
            max_pages,
            max_retries,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn request_id(&self) -> &str {
        &self.request_id
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    /// Adds a canonical URL as pending. Returns false for a URL already
    /// present or when the frontier is at `max_pages`.
    pub fn add(&self, url: &str) -> bool {
        let mut g = self.inner.lock();
        if g.by_url.contains_key(url) || g.entries.len() >= self.max_pages {
            return false;
        }
        let idx = g.entries.len();
        g.entries.push(FrontierEntry {
            url: url.to_string(),
            request_id: self.request_id.clone(),
            status: FrontierStatus::Pending,
            retry_count: 0,
            replays: 0,
        });
        g.by_url.insert(url.to_string(), idx);
        g.ready.push_back(idx);
        true
    }

    /// Hands out the next pending URL.
    pub fn take(&self) -> Option<String> {
        let mut g = self.inner.lock();
        let idx = g.ready.pop_front()?;
        Some(g.entries[idx].url.clone())
    }

    fn with_entry<T>(&self, url: &str, f: impl FnOnce(&mut FrontierEntry, &mut VecDeque<usize>, usize) -> T) -> Option<T> {
        let mut g = self.inner.lock();
        let idx = *g.by_url.get(url)?;
        let Inner { entries, ready, .. } = &mut *g;
        Some(f(&mut entries[idx], ready, idx))
    }

    /// A pending entry completed. Settled entries are left alone.
    pub fn mark_fetched(&self, url: &str) {
        self.with_entry(url, |e, _, _| {
            if e.status == FrontierStatus::Pending {
                e.status = FrontierStatus::Fetched;
            }
        });
    }

    pub fn mark_failed(&self, url: &str) {
        self.with_entry(url, |e, _, _| {
            if e.status == FrontierStatus::Pending {
                e.status = FrontierStatus::Failed;
            }
        });
    }

    /// Marks an entry failed whatever its state, e.g. a fetched page that
    /// has since disappeared.
    pub fn retire(&self, url: &str) {
        self.with_entry(url, |e, _, _| e.status = FrontierStatus::Failed);
    }

    /// Counts one fetch retry. Returns false, leaving the count unchanged,
    /// when the budget is already spent.
    pub fn try_retry(&self, url: &str) -> bool {
        let max = self.max_retries;
        self.with_entry(url, |e, _, _| {
            if e.retry_count < max {
                e.retry_count += 1;
                true
            } else {
                false
            }
        })
        .unwrap_or(false)
    }

    /// Puts a handed-out pending entry back for another attempt after its
    /// tuple tree failed. After `max_retries` replays the entry is failed
    /// instead. Returns whether it was requeued.
    pub fn replay(&self, url: &str) -> bool {
        let max = self.max_retries;
        self.with_entry(url, |e, ready, idx| {
            if e.status != FrontierStatus::Pending {
                return false;
            }
            if e.replays >= max {
                e.status = FrontierStatus::Failed;
                return false;
            }
            e.replays += 1;
            ready.push_back(idx);
            true
        })
        .unwrap_or(false)
    }

    pub fn status(&self, url: &str) -> Option<FrontierStatus> {
        self.with_entry(url, |e, _, _| e.status)
    }

    pub fn entry(&self, url: &str) -> Option<FrontierEntry> {
        self.with_entry(url, |e, _, _| e.clone())
    }

    pub fn entries(&self) -> Vec<FrontierEntry> {
        self.inner.lock().entries.clone()
    }

    /// URLs already fetched, for re-crawling.
    pub fn fetched_urls(&self) -> Vec<String> {
        let g = self.inner.lock();
        g.entries
            .iter()
            .filter(|e| e.status == FrontierStatus::Fetched)
            .map(|e| e.url.clone())
            .collect()
    }

    pub fn counts(&self) -> FrontierCounts {
        let g = self.inner.lock();
        let mut c = FrontierCounts {
            total: g.entries.len(),
            ..Default::default()
        };
        for e in &g.entries {
            match e.status {
                FrontierStatus::Pending => c.pending += 1,
                FrontierStatus::Fetched => c.fetched += 1,
                FrontierStatus::Failed => c.failed += 1,
            }
        }
        c.in_flight = c.pending - g.ready.len();
        c
    }

    /// Writes all entries as JSON (temp file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CrawlError> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(&self.entries()).map_err(std::io::Error::other)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Restores a saved frontier. Entries still pending become ready again.
    pub fn load(path: impl AsRef<Path>, max_pages: usize, max_retries: u32) -> Result<Self, CrawlError> {
        let entries: Vec<FrontierEntry> =
            serde_json::from_slice(&std::fs::read(path)?).map_err(std::io::Error::other)?;
        let request_id = entries.first().map(|e| e.request_id.clone()).unwrap_or_default();
        let f = Self::new(&request_id, max_pages.max(entries.len()), max_retries);
        {
            let mut g = f.inner.lock();
            for (i, e) in entries.into_iter().enumerate() {
                g.by_url.insert(e.url.clone(), i);
                if e.status == FrontierStatus::Pending {
                    g.ready.push_back(i);
                }
                g.entries.push(e);
            }
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedupes_and_caps() {
        let f = Frontier::new("r1", 2, 2);
        assert!(f.add("https://a/1"));
        assert!(!f.add("https://a/1"));
        assert!(f.add("https://a/2"));
        assert!(!f.add("https://a/3"));
        assert_eq!(f.counts().total, 2);
    }

    #[test]
    fn lifecycle() {
        let f = Frontier::new("r1", 10, 2);
        f.add("u1");
        f.add("u2");
        f.add("u3");
        assert_eq!(f.take().as_deref(), Some("u1"));
        assert_eq!(f.take().as_deref(), Some("u2"));
        assert_eq!(f.counts().in_flight, 2);
        f.mark_fetched("u1");
        f.mark_failed("u2");
        // settled entries do not move again
        f.mark_fetched("u2");
        assert_eq!(f.status("u2"), Some(FrontierStatus::Failed));
        let c = f.counts();
        assert_eq!((c.pending, c.fetched, c.failed, c.in_flight, c.total), (1, 1, 1, 0, 3));
    }

    #[test]
    fn retry_budget_is_capped() {
        let f = Frontier::new("r1", 10, 2);
        f.add("u");
        assert!(f.try_retry("u"));
        assert!(f.try_retry("u"));
        assert!(!f.try_retry("u"));
        assert_eq!(f.entry("u").unwrap().retry_count, 2);
    }

    #[test]
    fn replays_then_fails() {
        let f = Frontier::new("r1", 10, 1);
        f.add("u");
        assert_eq!(f.take().as_deref(), Some("u"));
        assert!(f.replay("u"));
        assert_eq!(f.take().as_deref(), Some("u"));
        assert!(!f.replay("u"));
        assert_eq!(f.status("u"), Some(FrontierStatus::Failed));
        assert_eq!(f.take(), None);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frontier::new("r1", 10, 2);
        for u in ["a", "b", "c"] {
            f.add(u);
        }
        f.take();
        f.mark_fetched("a");
        let path = dir.path().join("frontier.json");
        f.save(&path).unwrap();
        let g = Frontier::load(&path, 10, 2).unwrap();
        assert_eq!(g.entries(), f.entries());
        assert_eq!(g.request_id(), "r1");
        assert_eq!(g.take().as_deref(), Some("b"));
    }
}
