//! URL canonicalization, host partitioning and product-link discovery.

use std::collections::HashSet;

use globset::{GlobBuilder, GlobSet, GlobSetBuilder};
use regex::Regex;
use scraper::{Html, Selector};
use snapforge_mlog::stable_hash;
use url::Url;

use crate::CrawlError;

/// Parses an absolute http(s) URL and puts it in canonical form: scheme and
/// host lowercased, default port dropped, fragment removed, query kept.
pub fn canonicalize(raw: &str) -> Result<Url, CrawlError> {
    let invalid = |reason: &str| CrawlError::InvalidUrl {
        url: raw.to_string(),
        reason: reason.to_string(),
    };
    let mut url = Url::parse(raw.trim()).map_err(|e| invalid(&e.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(invalid("scheme must be http or https"));
    }
    if url.host_str().is_none_or(str::is_empty) {
        return Err(invalid("missing host"));
    }
    url.set_fragment(None);
    Ok(url)
}

/// `(host_key, canonical_url)`; the host key routes all URLs of one host to
/// one fetcher task.
pub fn url_partition(raw: &str) -> Result<(String, String), CrawlError> {
    let url = canonicalize(raw)?;
    let host = url.host_str().unwrap_or_default().to_ascii_lowercase();
    Ok((host, url.into()))
}

/// Stable document id of a canonical URL.
pub fn doc_id(canonical_url: &str) -> String {
    format!("{:016x}", stable_hash(canonical_url.as_bytes()))
}

/// Include patterns selecting product pages. A pattern prefixed `re:` is a
/// regex over the whole canonical URL; one starting with `/` is a glob over
/// the path (with `*` not crossing `/`); anything else is a glob over the
/// whole URL. No patterns means everything matches.
#[derive(Debug, Clone)]
pub struct UrlFilter {
    path_globs: GlobSet,
    url_globs: GlobSet,
    regexes: Vec<Regex>,
    empty: bool,
}

impl UrlFilter {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, CrawlError> {
        let mut path_globs = GlobSetBuilder::new();
        let mut url_globs = GlobSetBuilder::new();
        let mut regexes = Vec::new();
        for p in patterns {
            let p = p.as_ref();
            let bad = |strategy: &str, reason: String| CrawlError::InvalidRule {
                strategy: strategy.into(),
                pattern: p.to_string(),
                reason,
            };
            if let Some(re) = p.strip_prefix("re:") {
                regexes.push(Regex::new(re).map_err(|e| bad("regex", e.to_string()))?);
                continue;
            }
            let glob = GlobBuilder::new(p)
                .literal_separator(true)
                .build()
                .map_err(|e| bad("glob", e.to_string()))?;
            if p.starts_with('/') {
                path_globs.add(glob);
            } else {
                url_globs.add(glob);
            }
        }
        let build = |b: GlobSetBuilder| {
            b.build().map_err(|e| CrawlError::InvalidRule {
                strategy: "glob".into(),
                pattern: String::new(),
                reason: e.to_string(),
            })
        };
        Ok(Self {
            path_globs: build(path_globs)?,
            url_globs: build(url_globs)?,
            regexes,
            empty: patterns.is_empty(),
        })
    }

    pub fn matches(&self, url: &Url) -> bool {
        self.empty
            || self.path_globs.is_match(url.path())
            || self.url_globs.is_match(url.as_str())
            || self.regexes.iter().any(|r| r.is_match(url.as_str()))
    }
}

/// Anchor hrefs of `page` resolved against `base`, canonicalized,
/// deduplicated in document order and filtered by `filter`.
pub fn discover_product_urls(page: &[u8], filter: &UrlFilter, base: &Url) -> Vec<String> {
    let Ok(text) = std::str::from_utf8(page) else {
        log::warn!("{base}: page is not valid UTF-8 markup, no links discovered");
        return Vec::new();
    };
    let doc = Html::parse_document(text);
    let anchors = Selector::parse("a[href]").expect("static selector");
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for a in doc.select(&anchors) {
        let Some(href) = a.value().attr("href") else { continue };
        let Ok(joined) = base.join(href.trim()) else { continue };
        let Ok(url) = canonicalize(joined.as_str()) else { continue };
        if filter.matches(&url) && seen.insert(url.as_str().to_string()) {
            out.push(url.into());
        }
    }
    out
}
