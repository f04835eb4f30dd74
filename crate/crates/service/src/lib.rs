//! HTTP service over the crawl pipeline and the text and vector indices,
//! plus the command implementations behind the `snapforge` binary.

pub mod api;
pub mod commands;
pub mod config;
pub mod node;

pub use api::{router, ApiItem, AppState, MAX_UPLOAD_BYTES};
pub use config::Config;
pub use node::{Node, NodeOptions};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("crawl: {0}")]
    Crawl(#[from] snapforge_crawler::CrawlError),
    #[error("model: {0}")]
    Gan(#[from] snapforge_gan::GanError),
    #[error("evaluation: {0}")]
    Eval(#[from] snapforge_eval::EvalError),
    #[error("message log: {0}")]
    Log(#[from] snapforge_mlog::LogError),
    #[error("stream: {0}")]
    Stream(#[from] snapforge_stream::StreamError),
    #[error("text index: {0}")]
    Text(#[from] snapforge_text::TextError),
    #[error("vector index: {0}")]
    Vector(#[from] snapforge_vector::VectorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out: {0}")]
    Timeout(String),
}
