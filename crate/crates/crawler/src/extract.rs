//! Field extraction rules and the strategies that evaluate them.

use std::collections::BTreeMap;
use std::sync::Arc;

use regex::Regex;
use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use serde_json_path::JsonPath;
use snapforge_text::Price;
use url::Url;

use crate::price::{format_price, parse_price};
use crate::CrawlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldName {
    Name,
    Price,
    Brand,
    Description,
    Links,
    ImageUrls,
}

impl FieldName {
    pub const ALL: [FieldName; 6] = [
        FieldName::Name,
        FieldName::Price,
        FieldName::Brand,
        FieldName::Description,
        FieldName::Links,
        FieldName::ImageUrls,
    ];

    /// Fields a crawl request must have rules for, and whose absence flags
    /// a document incomplete.
    pub const REQUIRED: [FieldName; 3] = [FieldName::Name, FieldName::Price, FieldName::ImageUrls];

    pub fn as_str(self) -> &'static str {
        match self {
            FieldName::Name => "name",
            FieldName::Price => "price",
            FieldName::Brand => "brand",
            FieldName::Description => "description",
            FieldName::Links => "links",
            FieldName::ImageUrls => "image_urls",
        }
    }

    pub fn parse(s: &str) -> Option<FieldName> {
        FieldName::ALL.into_iter().find(|f| f.as_str() == s)
    }

    pub fn is_list(self) -> bool {
        matches!(self, FieldName::Links | FieldName::ImageUrls)
    }

    pub fn is_required(self) -> bool {
        FieldName::REQUIRED.contains(&self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostProcess {
    /// Collapse runs of whitespace and trim the ends.
    Trim,
    /// Rewrite a displayed price into canonical `"<amount> <CODE>"` form.
    CurrencyParse,
    /// Resolve against the page URL.
    AbsoluteUrl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorRule {
    pub field: FieldName,
    /// Registered strategy name: `css-selector`, `regex` or `json-path`.
    pub strategy: String,
    pub pattern: String,
    #[serde(default)]
    pub post_process: Vec<PostProcess>,
}

/// A fetched page after initial clearing.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub url: Url,
    pub content_type: String,
    pub body: String,
}

/// A compiled pattern. Returns every match in document order.
pub trait Matcher: Send + Sync {
    fn find_all(&self, page: &Page) -> Vec<String>;
}

type StrategyFactory = Box<dyn Fn(&str) -> Result<Arc<dyn Matcher>, String> + Send + Sync>;

/// Extraction strategies selectable by name.
pub struct StrategyRegistry {
    factories: BTreeMap<String, StrategyFactory>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("css-selector", |p| Ok(Arc::new(CssMatcher::new(p)?)));
        reg.register("regex", |p| Ok(Arc::new(RegexMatcher::new(p)?)));
        reg.register("json-path", |p| Ok(Arc::new(JsonPathMatcher::new(p)?)));
        reg
    }
}

impl StrategyRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&str) -> Result<Arc<dyn Matcher>, String> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn compile(&self, rule: &SelectorRule) -> Result<CompiledRule, CrawlError> {
        let f = self
            .factories
            .get(&rule.strategy)
            .ok_or_else(|| CrawlError::UnknownStrategy(rule.strategy.clone()))?;
        let matcher = f(&rule.pattern).map_err(|reason| CrawlError::InvalidRule {
            strategy: rule.strategy.clone(),
            pattern: rule.pattern.clone(),
            reason,
        })?;
        Ok(CompiledRule {
            rule: rule.clone(),
            matcher,
        })
    }
}

/// CSS selector; a trailing `@attr` selects an attribute instead of the
/// element text.
struct CssMatcher {
    selector: Selector,
    attr: Option<String>,
}

impl CssMatcher {
    fn new(pattern: &str) -> Result<Self, String> {
        let (sel, attr) = match pattern.rsplit_once('@') {
            Some((sel, attr))
                if !attr.is_empty() && attr.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') =>
            {
                (sel, Some(attr.to_string()))
            }
            _ => (pattern, None),
        };
        let selector = Selector::parse(sel.trim()).map_err(|e| e.to_string())?;
        Ok(Self { selector, attr })
    }
}

impl Matcher for CssMatcher {
    fn find_all(&self, page: &Page) -> Vec<String> {
        let doc = Html::parse_document(&page.body);
        doc.select(&self.selector)
            .filter_map(|el| match &self.attr {
                Some(a) => el.value().attr(a).map(str::to_string),
                None => Some(el.text().collect()),
            })
            .collect()
    }
}

/// Regex over the cleared body; yields capture group 1 when present.
struct RegexMatcher(Regex);

impl RegexMatcher {
    fn new(pattern: &str) -> Result<Self, String> {
        Regex::new(pattern).map(Self).map_err(|e| e.to_string())
    }
}

impl Matcher for RegexMatcher {
    fn find_all(&self, page: &Page) -> Vec<String> {
        self.0
            .captures_iter(&page.body)
            .filter_map(|c| c.get(1).or_else(|| c.get(0)).map(|m| m.as_str().to_string()))
            .collect()
    }
}

/// JSONPath over a JSON body. Strings are taken as is, other scalars in
/// their JSON form; a body that is not JSON has no matches.
struct JsonPathMatcher(JsonPath);

impl JsonPathMatcher {
    fn new(pattern: &str) -> Result<Self, String> {
        JsonPath::parse(pattern).map(Self).map_err(|e| e.to_string())
    }
}

impl Matcher for JsonPathMatcher {
    fn find_all(&self, page: &Page) -> Vec<String> {
        let Ok(json) = serde_json::from_str::<serde_json::Value>(&page.body) else {
            return Vec::new();
        };
        self.0
            .query(&json)
            .all()
            .into_iter()
            .flat_map(|v| match v {
                serde_json::Value::String(s) => vec![s.clone()],
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                    .collect(),
                serde_json::Value::Null => Vec::new(),
                other => vec![other.to_string()],
            })
            .collect()
    }
}

/// An extracted value, as carried between the field bolts and the indexer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum FieldValue {
    Text(String),
    Price(Price),
    Urls(Vec<String>),
    Absent,
}

#[derive(Clone)]
pub struct CompiledRule {
    pub rule: SelectorRule,
    matcher: Arc<dyn Matcher>,
}

impl std::fmt::Debug for CompiledRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledRule").field("rule", &self.rule).finish()
    }
}

impl CompiledRule {
    pub fn field(&self) -> FieldName {
        self.rule.field
    }

    fn post_process(&self, page: &Page, raw: String) -> Option<String> {
        let mut v = raw;
        for step in &self.rule.post_process {
            v = match step {
                PostProcess::Trim => v.split_whitespace().collect::<Vec<_>>().join(" "),
                PostProcess::CurrencyParse => format_price(&parse_price(&v, None)?),
                PostProcess::AbsoluteUrl => crate::url::canonicalize(page.url.join(v.trim()).ok()?.as_str())
                    .ok()?
                    .into(),
            };
        }
        Some(v)
    }

    /// Scalar fields take the first match that survives post-processing
    /// and is non-empty; list fields keep all of them, deduplicated.
    pub fn extract(&self, page: &Page) -> FieldValue {
        let mut values = self
            .matcher
            .find_all(page)
            .into_iter()
            .filter_map(|raw| self.post_process(page, raw))
            .filter(|v| !v.trim().is_empty());
        let field = self.rule.field;
        if field.is_list() {
            let mut seen = std::collections::HashSet::new();
            let urls: Vec<String> = values.filter(|v| seen.insert(v.clone())).collect();
            return if urls.is_empty() { FieldValue::Absent } else { FieldValue::Urls(urls) };
        }
        if field == FieldName::Price {
            return values
                .find_map(|v| parse_price(&v, None))
                .filter(|p| p.amount >= 0.0 && p.amount.is_finite())
                .map_or(FieldValue::Absent, FieldValue::Price);
        }
        values.next().map_or(FieldValue::Absent, FieldValue::Text)
    }
}

/// "Initial clearing": drops `<script>` and `<style>` elements with their
/// contents.
pub fn clean_html(html: &str) -> String {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?is)<script\b[^>]*>.*?</script\s*>|<style\b[^>]*>.*?</style\s*>|<script\b[^>]*/>")
            .expect("static regex")
    });
    re.replace_all(html, "").into_owned()
}
