//! Focused product crawler: a scheduler that registers crawl requests and
//! seeds URL frontiers, the crawler topology that fetches, extracts and
//! indexes product pages, and the image-analytics topology that turns
//! published image URLs into vector-index entries.

pub mod analytics;
pub mod extract;
pub mod fixture;
pub mod frontier;
pub mod politeness;
pub mod price;
pub mod request;
pub mod scheduler;
pub mod topology;
pub mod transport;
pub mod url;

pub use analytics::{analytics_topology, AnalyticsConfig, AnalyticsContext, AnalyticsStats, ImagePayload};
pub use extract::{clean_html, CompiledRule, FieldName, FieldValue, Page, PostProcess, SelectorRule, StrategyRegistry};
pub use frontier::{Frontier, FrontierCounts, FrontierEntry, FrontierStatus};
pub use politeness::HostClocks;
pub use price::parse_price;
pub use request::{CrawlRequest, ValidRequest};
pub use scheduler::{CrawlScheduler, RequestState, RequestStatus, SchedulerConfig};
pub use topology::{crawler_topology, CrawlContext, CrawlStatsSnapshot};
pub use transport::{FixtureTransport, LiveTransport, RecordingTransport, Response, Transport, TransportRegistry};
pub use url::{canonicalize, discover_product_urls, doc_id, url_partition, UrlFilter};

/// Retries of a failing fetch before its frontier entry is marked failed.
pub const DEFAULT_MAX_RETRIES: u32 = 2;

/// Message-log consumer group of the image-analytics topology.
pub const ANALYTICS_GROUP: &str = "image-analytics";

#[derive(Debug, thiserror::Error)]
pub enum CrawlError {
    #[error("invalid url {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("invalid crawl request: {0}")]
    InvalidRequest(String),
    #[error("invalid {strategy} pattern {pattern:?}: {reason}")]
    InvalidRule {
        strategy: String,
        pattern: String,
        reason: String,
    },
    #[error("unknown extraction strategy {0:?}")]
    UnknownStrategy(String),
    #[error("a crawl for site {0:?} is already active")]
    DuplicateSite(String),
    #[error("unknown crawl request {0:?}")]
    UnknownRequest(String),
    #[error("unknown transport {0:?}")]
    UnknownTransport(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Stream(#[from] snapforge_stream::StreamError),
    #[error(transparent)]
    Text(#[from] snapforge_text::TextError),
    #[error(transparent)]
    Log(#[from] snapforge_mlog::LogError),
    #[error(transparent)]
    Vector(#[from] snapforge_vector::VectorError),
}
