//! The crawler topology: frontier and refresh spouts feeding a partitioner,
//! a host-grouped fetcher, six parallel field extractors, an indexing join
//! and the image-URL producer.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use snapforge_mlog::MessageLog;
use snapforge_stream::{
    Bolt, BoltCollector, ExecResult, Grouping, Spout, SpoutCollector, TaskContext, TopologySpec, Tuple, Value,
};
use snapforge_text::{ProductDoc, TextIndex};
use url::Url;

use crate::analytics::ImagePayload;
use crate::extract::{clean_html, CompiledRule, FieldName, FieldValue, Page};
use crate::frontier::Frontier;
use crate::politeness::HostClocks;
use crate::request::ValidRequest;
use crate::transport::{Response, Transport};
use crate::url::{doc_id, url_partition};

pub const FRONTIER_SPOUT: &str = "frontier-spout";
pub const REFRESH_SPOUT: &str = "refresh-spout";
pub const URL_PARTITIONER: &str = "url-partitioner";
pub const FETCHER: &str = "fetcher";
pub const INDEXING: &str = "indexing";
pub const IMAGE_URL_PRODUCER: &str = "image-url-producer";

/// Default wait for all six field values of a page.
pub const DEFAULT_JOIN_TIMEOUT_MS: u64 = 10_000;
/// Root tuples a frontier spout keeps in flight.
pub const MAX_IN_FLIGHT: usize = 32;

/// Component id of a field extractor.
pub fn field_bolt_id(f: FieldName) -> String {
    format!("{}-extractor", f.as_str().replace('_', "-"))
}

/// Live counters of one crawl.
#[derive(Debug, Default)]
pub struct CrawlStats {
    pub pages_fetched: AtomicU64,
    pub page_cache_hits: AtomicU64,
    pub fetch_retries: AtomicU64,
    pub fetch_failures: AtomicU64,
    pub docs_indexed: AtomicU64,
    pub partial_docs: AtomicU64,
    pub docs_removed: AtomicU64,
    pub images_published: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlStatsSnapshot {
    pub pages_fetched: u64,
    pub page_cache_hits: u64,
    pub fetch_retries: u64,
    pub fetch_failures: u64,
    pub docs_indexed: u64,
    pub partial_docs: u64,
    pub docs_removed: u64,
    pub images_published: u64,
}

impl CrawlStats {
    pub fn snapshot(&self) -> CrawlStatsSnapshot {
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        CrawlStatsSnapshot {
            pages_fetched: l(&self.pages_fetched),
            page_cache_hits: l(&self.page_cache_hits),
            fetch_retries: l(&self.fetch_retries),
            fetch_failures: l(&self.fetch_failures),
            docs_indexed: l(&self.docs_indexed),
            partial_docs: l(&self.partial_docs),
            docs_removed: l(&self.docs_removed),
            images_published: l(&self.images_published),
        }
    }
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::Relaxed);
}

/// Everything the components of one crawl share.
pub struct CrawlContext {
    pub request_id: String,
    pub request: ValidRequest,
    pub frontier: Arc<Frontier>,
    pub transport: Arc<dyn Transport>,
    pub hosts: Arc<HostClocks>,
    pub text: Arc<TextIndex>,
    pub log: Arc<MessageLog>,
    pub topic: String,
    pub join_timeout_ms: u64,
    pub stats: CrawlStats,
    /// Set by the frontier spout once nothing is pending or in flight.
    pub drained: AtomicBool,
}

impl CrawlContext {
    pub fn site_name(&self) -> &str {
        &self.request.request.site_name
    }

    pub fn topology_name(&self) -> String {
        format!("crawler-{}", self.site_name())
    }
}

fn err(msg: impl Into<String>) -> Box<dyn std::error::Error + Send + Sync> {
    msg.into().into()
}

fn str_field<'a>(t: &'a Tuple, name: &str) -> Result<&'a str, Box<dyn std::error::Error + Send + Sync>> {
    t.get_str(name).ok_or_else(|| err(format!("tuple lacks string field {name}")))
}

struct FrontierSpout {
    ctx: Arc<CrawlContext>,
    in_flight: HashMap<u64, String>,
    next_msg: u64,
}

impl Spout for FrontierSpout {
    fn next_tuple(&mut self, out: &mut SpoutCollector<'_>) {
        if self.in_flight.len() >= MAX_IN_FLIGHT {
            return;
        }
        match self.ctx.frontier.take() {
            Some(url) => {
                self.next_msg += 1;
                let id = self.next_msg;
                match out.emit("urls", vec![Value::from(url.as_str()), Value::Int(0)], id) {
                    Ok(_) => {
                        self.in_flight.insert(id, url);
                    }
                    Err(e) => {
                        log::error!("frontier spout: {e}");
                        self.ctx.frontier.replay(&url);
                    }
                }
            }
            None => {
                if self.in_flight.is_empty() && self.ctx.frontier.counts().pending == 0 {
                    self.ctx.drained.store(true, Ordering::SeqCst);
                }
            }
        }
    }

    fn on_ack(&mut self, msg_id: u64) {
        if let Some(url) = self.in_flight.remove(&msg_id) {
            self.ctx.frontier.mark_fetched(&url);
        }
    }

    fn on_fail(&mut self, msg_id: u64) {
        if let Some(url) = self.in_flight.remove(&msg_id) {
            if self.ctx.frontier.replay(&url) {
                log::info!("replaying {url}");
            }
        }
    }
}

/// Re-emits every fetched URL once per interval. Idle without an interval.
struct RefreshSpout {
    ctx: Arc<CrawlContext>,
    interval_ms: Option<u64>,
    last_round: Option<u64>,
    queue: VecDeque<String>,
    next_msg: u64,
}

impl Spout for RefreshSpout {
    fn next_tuple(&mut self, out: &mut SpoutCollector<'_>) {
        let Some(interval) = self.interval_ms else { return };
        let now = out.now_ms();
        if self.queue.is_empty() && self.last_round.is_none_or(|t| now >= t + interval) {
            if self.last_round.is_some() {
                self.queue.extend(self.ctx.frontier.fetched_urls());
            }
            self.last_round = Some(now);
        }
        for _ in 0..8 {
            let Some(url) = self.queue.pop_front() else { break };
            self.next_msg += 1;
            if let Err(e) = out.emit("urls", vec![Value::from(url), Value::Int(1)], self.next_msg) {
                log::error!("refresh spout: {e}");
            }
        }
    }
}

struct UrlPartitioner;

impl Bolt for UrlPartitioner {
    fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult {
        let raw = str_field(input, "url")?;
        let (host, canonical) = url_partition(raw)?;
        let refresh = input.get("refresh").and_then(Value::as_int).unwrap_or(0);
        let id = doc_id(&canonical);
        out.emit(
            "partitioned",
            vec![Value::from(host), Value::from(canonical), Value::from(id), Value::Int(refresh)],
            &[input],
        )?;
        Ok(())
    }
}

/// Cleared page kept so a replayed tree does not fetch again.
#[derive(Clone)]
struct CachedPage {
    content_type: String,
    body: String,
}

const PAGE_CACHE_CAP: usize = 4096;

struct Fetcher {
    ctx: Arc<CrawlContext>,
    clock: Option<Arc<dyn snapforge_stream::Clock>>,
    cache: HashMap<String, CachedPage>,
    cache_order: VecDeque<String>,
}

enum FetchOutcome {
    Page(CachedPage),
    /// Final client error, e.g. 404.
    Gone(u16),
    Failed(String),
}

impl Fetcher {
    fn fetch(&self, host: &str, url: &str) -> FetchOutcome {
        let clock = self.clock.clone().expect("prepared");
        let delay = self.ctx.request.request.politeness_delay_ms;
        loop {
            let res = self.ctx.hosts.run(host, delay, clock.as_ref(), || self.ctx.transport.get(url));
            let why = match res {
                Ok(r) if r.is_success() => return FetchOutcome::Page(clear(r)),
                Ok(r) if !r.is_retryable() => return FetchOutcome::Gone(r.status),
                Ok(r) => format!("status {}", r.status),
                Err(e) => e.to_string(),
            };
            if !self.ctx.frontier.try_retry(url) {
                return FetchOutcome::Failed(why);
            }
            bump(&self.ctx.stats.fetch_retries);
            log::debug!("{url}: {why}, retrying");
        }
    }

    fn remember(&mut self, url: &str, page: CachedPage) {
        if self.cache.insert(url.to_string(), page).is_none() {
            self.cache_order.push_back(url.to_string());
            if self.cache_order.len() > PAGE_CACHE_CAP {
                if let Some(old) = self.cache_order.pop_front() {
                    self.cache.remove(&old);
                }
            }
        }
    }
}

fn clear(r: Response) -> CachedPage {
    let text = String::from_utf8_lossy(&r.body).into_owned();
    let body = if r.content_type.contains("html") { clean_html(&text) } else { text };
    CachedPage {
        content_type: r.content_type,
        body,
    }
}

impl Bolt for Fetcher {
    fn prepare(&mut self, ctx: &TaskContext) {
        self.clock = Some(ctx.clock.clone());
    }

    fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult {
        let host = str_field(input, "host")?;
        let url = str_field(input, "url")?;
        let id = str_field(input, "doc_id")?;
        let refresh = input.get("refresh").and_then(Value::as_int) == Some(1);
        let page = match self.cache.get(url) {
            Some(p) if !refresh => {
                bump(&self.ctx.stats.page_cache_hits);
                p.clone()
            }
            _ => match self.fetch(host, url) {
                FetchOutcome::Page(p) => {
                    bump(&self.ctx.stats.pages_fetched);
                    self.remember(url, p.clone());
                    p
                }
                FetchOutcome::Gone(status) if refresh => {
                    // a product page that disappeared: drop it from the index
                    self.ctx.frontier.retire(url);
                    out.emit("gone", vec![Value::from(id)], &[input])?;
                    log::info!("{url}: {status} on refresh, removing");
                    return Ok(());
                }
                FetchOutcome::Gone(status) => {
                    bump(&self.ctx.stats.fetch_failures);
                    self.ctx.frontier.mark_failed(url);
                    return Err(err(format!("{url}: status {status}")));
                }
                FetchOutcome::Failed(why) => {
                    bump(&self.ctx.stats.fetch_failures);
                    self.ctx.frontier.mark_failed(url);
                    return Err(err(format!("{url}: {why}")));
                }
            },
        };
        out.emit(
            "pages",
            vec![
                Value::from(id),
                Value::from(url),
                Value::from(page.content_type),
                Value::from(page.body),
            ],
            &[input],
        )?;
        Ok(())
    }
}

struct FieldBolt {
    field: FieldName,
    rule: Option<CompiledRule>,
}

impl Bolt for FieldBolt {
    fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult {
        let url = str_field(input, "url")?;
        let value = match &self.rule {
            Some(rule) => rule.extract(&Page {
                url: Url::parse(url)?,
                content_type: str_field(input, "content_type")?.to_string(),
                body: str_field(input, "body")?.to_string(),
            }),
            None => FieldValue::Absent,
        };
        out.emit(
            "fields",
            vec![
                Value::from(str_field(input, "doc_id")?),
                Value::from(url),
                Value::from(self.field.as_str()),
                Value::from(serde_json::to_string(&value)?),
            ],
            &[input],
        )?;
        Ok(())
    }
}

struct Join {
    url: String,
    started_ms: u64,
    values: HashMap<FieldName, FieldValue>,
    inputs: Vec<Tuple>,
}

/// Joins the six field values of a page by doc id, then upserts and
/// commits the document. Joins that do not complete within the timeout are
/// indexed as partial documents.
struct Indexer {
    ctx: Arc<CrawlContext>,
    joins: HashMap<String, Join>,
}

impl Indexer {
    fn finish(&mut self, doc_id: &str, out: &mut BoltCollector<'_>) {
        let Some(join) = self.joins.remove(doc_id) else { return };
        let mut missing: Vec<String> = Vec::new();
        let mut text = |f: FieldName| match join.values.get(&f) {
            Some(FieldValue::Text(s)) => Some(s.clone()),
            Some(_) => None,
            None => {
                missing.push(f.as_str().to_string());
                None
            }
        };
        let name = text(FieldName::Name);
        let brand = text(FieldName::Brand);
        let description = text(FieldName::Description);
        let mut urls = |f: FieldName| match join.values.get(&f) {
            Some(FieldValue::Urls(u)) => u.clone(),
            Some(_) => Vec::new(),
            None => {
                missing.push(f.as_str().to_string());
                Vec::new()
            }
        };
        let links = urls(FieldName::Links);
        let image_urls = urls(FieldName::ImageUrls);
        let price = match join.values.get(&FieldName::Price) {
            Some(FieldValue::Price(p)) => Some(p.clone()),
            Some(_) => None,
            None => {
                missing.push(FieldName::Price.as_str().to_string());
                None
            }
        };
        let timed_out = !missing.is_empty();
        for (f, absent) in [
            (FieldName::Name, name.is_none()),
            (FieldName::Price, price.is_none()),
            (FieldName::ImageUrls, image_urls.is_empty()),
        ] {
            if absent && !missing.iter().any(|m| m == f.as_str()) {
                missing.push(f.as_str().to_string());
            }
        }
        missing.sort();
        let doc = ProductDoc {
            doc_id: doc_id.to_string(),
            url: join.url.clone(),
            site_name: self.ctx.site_name().to_string(),
            name: name.unwrap_or_default(),
            price,
            brand,
            description,
            links,
            image_urls,
            crawl_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            missing,
        };
        if timed_out {
            log::warn!("{}: join timed out, indexing partial doc", doc.url);
        }
        if !doc.is_complete() {
            bump(&self.ctx.stats.partial_docs);
            log::warn!("{}: incomplete, missing {:?}", doc.url, doc.missing);
        }
        for l in &doc.links {
            if let Ok(u) = Url::parse(l) {
                if self.ctx.request.filter.matches(&u) {
                    self.ctx.frontier.add(l);
                }
            }
        }
        let payload = vec![
            Value::from(doc.doc_id.as_str()),
            Value::from(doc.site_name.as_str()),
            Value::List(doc.image_urls.clone()),
        ];
        self.ctx.text.upsert(doc);
        if let Err(e) = self.ctx.text.commit() {
            log::error!("index commit failed: {e}");
            for t in &join.inputs {
                out.fail(t);
            }
            return;
        }
        bump(&self.ctx.stats.docs_indexed);
        let anchors: Vec<&Tuple> = join.inputs.iter().filter(|t| out.is_pending(t)).collect();
        if out.emit("docs", payload, &anchors).is_err() {
            for t in &join.inputs {
                out.fail(t);
            }
            return;
        }
        for t in &join.inputs {
            out.ack(t);
        }
    }
}

impl Bolt for Indexer {
    fn auto_ack(&self) -> bool {
        false
    }

    fn execute(&mut self, input: &Tuple, out: &mut BoltCollector<'_>) -> ExecResult {
        let id = str_field(input, "doc_id")?.to_string();
        if &*input.stream == "gone" {
            self.joins.remove(&id);
            self.ctx.text.delete(&id);
            self.ctx.text.commit()?;
            bump(&self.ctx.stats.docs_removed);
            out.ack(input);
            return Ok(());
        }
        let field = FieldName::parse(str_field(input, "field")?).ok_or_else(|| err("unknown field"))?;
        let value: FieldValue = serde_json::from_str(str_field(input, "value")?)?;
        let now = out.now_ms();
        let join = self.joins.entry(id.clone()).or_insert_with(|| Join {
            url: input.get_str("url").unwrap_or_default().to_string(),
            started_ms: now,
            values: HashMap::new(),
            inputs: Vec::new(),
        });
        join.values.insert(field, value);
        join.inputs.push(input.clone());
        if join.values.len() == FieldName::ALL.len() {
            self.finish(&id, out);
        }
        Ok(())
    }

    fn tick(&mut self, now_ms: u64, out: &mut BoltCollector<'_>) {
        let timeout = self.ctx.join_timeout_ms;
        let stale: Vec<String> = self
            .joins
            .iter()
            .filter(|(_, j)| now_ms.saturating_sub(j.started_ms) >= timeout)
            .map(|(k, _)| k.clone())
            .collect();
        for id in stale {
            self.finish(&id, out);
        }
    }
}

struct ImageUrlProducer {
    ctx: Arc<CrawlContext>,
}

impl Bolt for ImageUrlProducer {
    fn execute(&mut self, input: &Tuple, _out: &mut BoltCollector<'_>) -> ExecResult {
        let id = str_field(input, "doc_id")?;
        let site = str_field(input, "site_name")?;
        let urls = input.get("image_urls").and_then(Value::as_list).unwrap_or_default();
        for u in urls {
            let payload = serde_json::to_vec(&ImagePayload {
                doc_id: id.to_string(),
                image_url: u.clone(),
                site_name: site.to_string(),
            })?;
            self.ctx.log.produce(&self.ctx.topic, Some(id.as_bytes()), &payload)?;
            bump(&self.ctx.stats.images_published);
        }
        Ok(())
    }
}

/// Parallelism of the host-grouped fetcher.
pub const FETCHER_TASKS: usize = 2;

/// Builds the crawler topology for one request.
pub fn crawler_topology(ctx: Arc<CrawlContext>) -> TopologySpec {
    let mut spec = TopologySpec::new(ctx.topology_name());
    let c = ctx.clone();
    spec.spout(FRONTIER_SPOUT, 1, move |_| {
        Box::new(FrontierSpout {
            ctx: c.clone(),
            in_flight: HashMap::new(),
            next_msg: 0,
        })
    })
    .output("urls", &["url", "refresh"]);
    let c = ctx.clone();
    spec.spout(REFRESH_SPOUT, 1, move |_| {
        Box::new(RefreshSpout {
            ctx: c.clone(),
            interval_ms: c.request.request.recrawl_interval_ms,
            last_round: None,
            queue: VecDeque::new(),
            next_msg: 0,
        })
    })
    .output("urls", &["url", "refresh"]);

    spec.bolt(URL_PARTITIONER, 1, |_| Box::new(UrlPartitioner))
        .output("partitioned", &["host", "url", "doc_id", "refresh"])
        .subscribe(FRONTIER_SPOUT, "urls", Grouping::Shuffle)
        .subscribe(REFRESH_SPOUT, "urls", Grouping::Shuffle);

    let c = ctx.clone();
    spec.bolt(FETCHER, FETCHER_TASKS, move |_| {
        Box::new(Fetcher {
            ctx: c.clone(),
            clock: None,
            cache: HashMap::new(),
            cache_order: VecDeque::new(),
        })
    })
    .output("pages", &["doc_id", "url", "content_type", "body"])
    .output("gone", &["doc_id"])
    .subscribe(URL_PARTITIONER, "partitioned", Grouping::Fields(vec!["host".into()]));

    for field in FieldName::ALL {
        let rule = ctx.request.rules.iter().find(|r| r.field() == field).cloned();
        spec.bolt(&field_bolt_id(field), 1, move |_| {
            Box::new(FieldBolt {
                field,
                rule: rule.clone(),
            })
        })
        .output("fields", &["doc_id", "url", "field", "value"])
        .subscribe(FETCHER, "pages", Grouping::Shuffle);
    }

    let c = ctx.clone();
    let indexing = spec
        .bolt(INDEXING, 1, move |_| {
            Box::new(Indexer {
                ctx: c.clone(),
                joins: HashMap::new(),
            })
        })
        .output("docs", &["doc_id", "site_name", "image_urls"])
        .subscribe(FETCHER, "gone", Grouping::Global)
        .tick_every(250);
    for field in FieldName::ALL {
        indexing.subscribe(&field_bolt_id(field), "fields", Grouping::Global);
    }

    let c = ctx;
    spec.bolt(IMAGE_URL_PRODUCER, 1, move |_| Box::new(ImageUrlProducer { ctx: c.clone() }))
        .subscribe(INDEXING, "docs", Grouping::Shuffle);
    spec
}
