use serde::{Deserialize, Serialize};

use crate::extract::{CompiledRule, FieldName, SelectorRule, StrategyRegistry};
use crate::url::{canonicalize, UrlFilter};
use crate::CrawlError;

pub const DEFAULT_MAX_PAGES: usize = 10_000;

fn default_max_pages() -> usize {
    DEFAULT_MAX_PAGES
}

/// A site's registration: where to start, which links are product pages,
/// and how to pull fields out of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlRequest {
    /// Assigned on registration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub site_name: String,
    pub seed_urls: Vec<String>,
    #[serde(default)]
    pub url_include_patterns: Vec<String>,
    pub extraction_rules: Vec<SelectorRule>,
    #[serde(default)]
    pub politeness_delay_ms: u64,
    #[serde(default = "default_max_pages")]
    pub max_pages: usize,
    /// Re-crawl period of fetched pages. `None` disables the refresh spout
    /// and lets the crawl finish once its frontier drains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recrawl_interval_ms: Option<u64>,
}

/// A request that passed validation, with its patterns compiled.
#[derive(Debug, Clone)]
pub struct ValidRequest {
    pub request: CrawlRequest,
    pub filter: UrlFilter,
    pub rules: Vec<CompiledRule>,
}

impl CrawlRequest {
    pub fn validate(&self, strategies: &StrategyRegistry) -> Result<ValidRequest, CrawlError> {
        let bad = |m: String| Err(CrawlError::InvalidRequest(m));
        if self.site_name.is_empty()
            || !self.site_name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "site_name {:?} must be non-empty ASCII letters, digits, '-' or '_'",
                self.site_name
            ));
        }
        if self.seed_urls.is_empty() {
            return bad("seed_urls must not be empty".into());
        }
        for s in &self.seed_urls {
            canonicalize(s)?;
        }
        if self.max_pages == 0 {
            return bad("max_pages must be positive".into());
        }
        let mut seen = Vec::new();
        for r in &self.extraction_rules {
            if seen.contains(&r.field) {
                return bad(format!("more than one rule for field {}", r.field.as_str()));
            }
            seen.push(r.field);
        }
        if let Some(f) = FieldName::REQUIRED.iter().find(|f| !seen.contains(f)) {
            return bad(format!("required field {} has no extraction rule", f.as_str()));
        }
        let rules = self
            .extraction_rules
            .iter()
            .map(|r| strategies.compile(r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ValidRequest {
            request: self.clone(),
            filter: UrlFilter::new(&self.url_include_patterns)?,
            rules,
        })
    }
}
