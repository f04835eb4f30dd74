//! Pluggable page and image transports.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use snapforge_stream::Clock;

use crate::fixture::load_site_manifest;
use crate::CrawlError;

/// Responses larger than this are cut off by the live transport.
pub const MAX_BODY_BYTES: u64 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Response {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// 5xx and 429 are worth retrying; other non-2xx statuses are final.
    pub fn is_retryable(&self) -> bool {
        self.status >= 500 || self.status == 429
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Connect(String),
}

pub trait Transport: Send + Sync {
    fn name(&self) -> &str;

    fn get(&self, url: &str) -> Result<Response, TransportError>;
}

fn content_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("html" | "htm") => "text/html; charset=utf-8",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Serves a fixture corpus: each `corpus/<site>/manifest.json` claims the
/// hosts of its URLs, and a URL path maps to a file under the site
/// directory (`/` to `index.html`, an extensionless path to `<path>.html`).
/// Missing files are 404; unknown hosts are connection errors.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    hosts: HashMap<String, PathBuf>,
}

impl FixtureTransport {
    pub fn new(corpus_dir: impl AsRef<Path>) -> Result<Self, CrawlError> {
        let mut hosts = HashMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(corpus_dir.as_ref())?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let dir = entry.path();
            if !dir.join(crate::fixture::MANIFEST_FILE).is_file() {
                continue;
            }
            for row in load_site_manifest(&dir)? {
                for u in std::iter::once(&row.url).chain(&row.image_urls).chain(&row.links) {
                    if let Ok(parsed) = url::Url::parse(u) {
                        if let Some(h) = parsed.host_str() {
                            hosts.entry(h.to_ascii_lowercase()).or_insert_with(|| dir.clone());
                        }
                    }
                }
            }
        }
        if hosts.is_empty() {
            return Err(CrawlError::Fixture(format!(
                "no site manifests under {}",
                corpus_dir.as_ref().display()
            )));
        }
        Ok(Self { hosts })
    }

    pub fn hosts(&self) -> Vec<&str> {
        let mut h: Vec<&str> = self.hosts.keys().map(String::as_str).collect();
        h.sort_unstable();
        h
    }

    fn resolve(&self, url: &str) -> Result<Option<PathBuf>, TransportError> {
        let parsed = url::Url::parse(url).map_err(|e| TransportError::Connect(e.to_string()))?;
        let host = parsed.host_str().unwrap_or_default().to_ascii_lowercase();
        let dir = self
            .hosts
            .get(&host)
            .ok_or_else(|| TransportError::Connect(format!("unknown host {host}")))?;
        let rel = parsed.path().trim_start_matches('/');
        if rel.split('/').any(|seg| seg == "..") {
            return Ok(None);
        }
        let mut path = if rel.is_empty() { dir.join("index.html") } else { dir.join(rel) };
        if path.extension().is_none() && !path.is_file() {
            path.set_extension("html");
        }
        Ok(path.is_file().then_some(path))
    }
}

impl Transport for FixtureTransport {
    fn name(&self) -> &str {
        "fixture"
    }

    fn get(&self, url: &str) -> Result<Response, TransportError> {
        match self.resolve(url)? {
            Some(path) => {
                let body = std::fs::read(&path).map_err(|e| TransportError::Connect(e.to_string()))?;
                Ok(Response {
                    status: 200,
                    content_type: content_type_for(&path).to_string(),
                    body,
                })
            }
            None => Ok(Response {
                status: 404,
                content_type: "text/plain; charset=utf-8".into(),
                body: b"not found".to_vec(),
            }),
        }
    }
}

/// Real HTTP. Non-2xx statuses are returned, not raised.
pub struct LiveTransport {
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent("snapforge-crawler/0.1")
            .build();
        Self { agent: config.into() }
    }
}

impl Transport for LiveTransport {
    fn name(&self) -> &str {
        "live"
    }

    fn get(&self, url: &str) -> Result<Response, TransportError> {
        let mut resp = self.agent.get(url).call().map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Connect(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_string();
        let mut body = Vec::new();
        resp.body_mut()
            .as_reader()
            .take(MAX_BODY_BYTES)
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(Response {
            status,
            content_type,
            body,
        })
    }
}

/// One request as seen by a [`RecordingTransport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchRecord {
    pub host: String,
    pub url: String,
    pub started_ms: u64,
    pub status: Option<u16>,
}

/// Wraps a transport and timestamps every request when it starts.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    log: Mutex<Vec<FetchRecord>>,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner,
            clock,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<FetchRecord> {
        self.log.lock().clone()
    }

    /// Start times per host, sorted.
    pub fn starts_by_host(&self) -> BTreeMap<String, Vec<u64>> {
        let mut out: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for r in self.log.lock().iter() {
            out.entry(r.host.clone()).or_default().push(r.started_ms);
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }
}

impl Transport for RecordingTransport {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn get(&self, url: &str) -> Result<Response, TransportError> {
        let started_ms = self.clock.now_ms();
        let res = self.inner.get(url);
        let host = url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
            .unwrap_or_default();
        self.log.lock().push(FetchRecord {
            host,
            url: url.to_string(),
            started_ms,
            status: res.as_ref().ok().map(|r| r.status),
        });
        res
    }
}

#[derive(Debug, Clone)]
pub struct TransportOptions {
    pub corpus_dir: Option<PathBuf>,
    pub timeout: Duration,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            corpus_dir: None,
            timeout: Duration::from_secs(10),
        }
    }
}

type TransportFactory = Box<dyn Fn(&TransportOptions) -> Result<Arc<dyn Transport>, CrawlError> + Send + Sync>;

/// Transports selectable by name.
pub struct TransportRegistry {
    factories: BTreeMap<String, TransportFactory>,
}

impl Default for TransportRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("fixture", |opts| {
            let dir = opts
                .corpus_dir
                .as_ref()
                .ok_or_else(|| CrawlError::Fixture("fixture transport needs a corpus directory".into()))?;
            Ok(Arc::new(FixtureTransport::new(dir)?))
        });
        reg.register("live", |opts| Ok(Arc::new(LiveTransport::new(opts.timeout))));
        reg
    }
}

impl TransportRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&TransportOptions) -> Result<Arc<dyn Transport>, CrawlError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, opts: &TransportOptions) -> Result<Arc<dyn Transport>, CrawlError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| CrawlError::UnknownTransport(name.to_string()))?;
        f(opts)
    }
}
