#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use snapforge_crawler::fixture::{fixture_request, FixtureConfig};
use snapforge_crawler::transport::TransportError;
use snapforge_crawler::{
    CrawlRequest, CrawlScheduler, FixtureTransport, HostClocks, RecordingTransport, Response, SchedulerConfig,
    Transport,
};
use snapforge_mlog::MessageLog;
use snapforge_stream::{Cluster, RunConfig};
use snapforge_text::TextIndex;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

/// Serves hand-written pages. Each URL has a status script consumed one
/// request at a time; its last status repeats.
#[derive(Default)]
pub struct MockSite {
    pages: HashMap<String, (Vec<u16>, String)>,
    hits: Mutex<HashMap<String, usize>>,
}

impl MockSite {
    pub fn page(mut self, url: &str, statuses: &[u16], body: impl Into<String>) -> Self {
        self.pages.insert(url.to_string(), (statuses.to_vec(), body.into()));
        self
    }

    pub fn hits(&self, url: &str) -> usize {
        self.hits.lock().get(url).copied().unwrap_or(0)
    }
}

impl Transport for MockSite {
    fn name(&self) -> &str {
        "mock"
    }

    fn get(&self, url: &str) -> Result<Response, TransportError> {
        let n = {
            let mut h = self.hits.lock();
            let c = h.entry(url.to_string()).or_default();
            *c += 1;
            *c - 1
        };
        let Some((script, body)) = self.pages.get(url) else {
            return Ok(Response {
                status: 404,
                content_type: "text/html".into(),
                body: Vec::new(),
            });
        };
        let status = script.get(n).or(script.last()).copied().unwrap_or(200);
        Ok(Response {
            status,
            content_type: "text/html; charset=utf-8".into(),
            body: body.clone().into_bytes(),
        })
    }
}

pub fn product_html(name: &str) -> String {
    format!(
        r#"<html><body><h1 class="product-name">{name}</h1><span class="price">$10.00</span>
<img class="product-image" src="/img/{name}.png"></body></html>"#
    )
}

pub fn listing_html(paths: &[String]) -> String {
    let links: String = paths.iter().map(|p| format!(r#"<a href="{p}">x</a>"#)).collect();
    format!("<html><body>{links}</body></html>")
}

/// A mock site on `host` with one listing and `paths` as product pages.
pub fn mock_request(site: &str, host: &str, delay_ms: u64) -> CrawlRequest {
    let mut req = fixture_request(&FixtureConfig::default());
    req.site_name = site.into();
    req.seed_urls = vec![format!("https://{host}/")];
    req.politeness_delay_ms = delay_ms;
    req
}

pub struct Harness {
    pub cluster: Arc<Cluster>,
    pub recorder: Arc<RecordingTransport>,
    pub hosts: Arc<HostClocks>,
    pub text: Arc<TextIndex>,
    pub log: Arc<MessageLog>,
    pub scheduler: CrawlScheduler,
}

pub fn harness(inner: Arc<dyn Transport>, slots: usize) -> Harness {
    let cluster = Arc::new(Cluster::new(slots));
    let recorder = Arc::new(RecordingTransport::new(inner, cluster.clock()));
    let hosts = Arc::new(HostClocks::new());
    let text = Arc::new(TextIndex::in_memory());
    let log = Arc::new(MessageLog::new());
    let config = SchedulerConfig {
        join_timeout_ms: 2_000,
        run: RunConfig {
            worker_slots: slots,
            tuple_timeout_secs: 30,
            ..RunConfig::default()
        },
        ..SchedulerConfig::default()
    };
    let scheduler = CrawlScheduler::new(
        cluster.clone(),
        recorder.clone(),
        hosts.clone(),
        text.clone(),
        log.clone(),
        config,
    );
    Harness {
        cluster,
        recorder,
        hosts,
        text,
        log,
        scheduler,
    }
}

pub fn fixture_harness(slots: usize) -> Harness {
    harness(Arc::new(FixtureTransport::new(corpus_dir()).unwrap()), slots)
}

pub const WAIT: Duration = Duration::from_secs(120);

/// Smallest gap between consecutive request starts per host.
pub fn min_gaps(h: &Harness) -> HashMap<String, u64> {
    h.recorder
        .starts_by_host()
        .into_iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(host, v)| (host, v.windows(2).map(|w| w[1] - w[0]).min().unwrap()))
        .collect()
}
