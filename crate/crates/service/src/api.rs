//! HTTP endpoints. Every response body is JSON; failures carry
//! `{error_code, message}`.

use std::collections::HashMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use snapforge_crawler::{CrawlError, CrawlRequest, RequestStatus};
use snapforge_text::ProductDoc;
use snapforge_vector::default_n_probe;

use crate::node::Node;

pub const MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;
pub const DEFAULT_LIMIT: usize = 20;
pub const MAX_LIMIT: usize = 100;
pub const DEFAULT_K: usize = 10;

/// A product as the API returns it, from text search and similarity search
/// alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiItem {
    pub doc_id: String,
    pub name: String,
    pub price: Option<f64>,
    pub currency: Option<String>,
    pub brand: Option<String>,
    pub site_name: String,
    pub url: String,
    pub image_urls: Vec<String>,
    /// Text relevance, on search results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Euclidean distance between unit embeddings, on similarity results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl ApiItem {
    pub fn from_doc(d: &ProductDoc) -> Self {
        Self {
            doc_id: d.doc_id.clone(),
            name: d.name.clone(),
            price: d.price.as_ref().map(|p| p.amount),
            currency: d.price.as_ref().map(|p| p.currency.clone()),
            brand: d.brand.clone(),
            site_name: d.site_name.clone(),
            url: d.url.clone(),
            image_urls: d.image_urls.clone(),
            score: None,
            distance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemList {
    pub items: Vec<ApiItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error_code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<CrawlError> for ApiError {
    fn from(e: CrawlError) -> Self {
        match e {
            CrawlError::DuplicateSite(_) => ApiError::new(StatusCode::CONFLICT, "duplicate_site", e.to_string()),
            CrawlError::UnknownRequest(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_request", e.to_string()),
            CrawlError::InvalidRequest(_)
            | CrawlError::InvalidUrl { .. }
            | CrawlError::InvalidRule { .. }
            | CrawlError::UnknownStrategy(_) => ApiError::bad_request("invalid_request", e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    pub node: Arc<Node>,
    pub max_upload_bytes: usize,
}

impl AppState {
    pub fn new(node: Arc<Node>) -> Arc<Self> {
        Arc::new(Self {
            node,
            max_upload_bytes: MAX_UPLOAD_BYTES,
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // leave room for multipart framing around a maximal image
    let body_limit = state.max_upload_bytes + 64 * 1024;
    Router::new()
        .route("/crawl-requests", post(create_crawl_request).get(list_crawl_requests))
        .route("/crawl-requests/{id}", get(get_crawl_request).delete(cancel_crawl_request))
        .route("/search", get(search))
        .route("/search/image", post(search_image))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/similar", get(similar))
        .route("/status", get(status))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

/// Serves `router(state)` on `listener` until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

fn params(p: Params) -> ApiResult<HashMap<String, String>> {
    p.map(|Query(m)| m).map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))
}

/// Parses an optional count parameter constrained to `1..=MAX_LIMIT`.
fn count_param(p: &HashMap<String, String>, name: &str, default: usize) -> ApiResult<usize> {
    let Some(raw) = p.get(name) else { return Ok(default) };
    match raw.trim().parse::<usize>() {
        Ok(n) if (1..=MAX_LIMIT).contains(&n) => Ok(n),
        _ => Err(ApiError::bad_request(
            "invalid_parameter",
            format!("{name} must be an integer in 1..={MAX_LIMIT}, got {raw:?}"),
        )),
    }
}

#[derive(Serialize)]
struct Accepted {
    request_id: String,
    state: snapforge_crawler::RequestState,
}

async fn create_crawl_request(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CrawlRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?;
    let node = s.node.clone();
    let accepted = blocking(move || {
        let id = node.scheduler.register(req)?;
        let state = node
            .scheduler
            .status(&id)
            .map_or(snapforge_crawler::RequestState::Queued, |st| st.state);
        Ok(Accepted { request_id: id, state })
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(accepted)).into_response())
}

async fn list_crawl_requests(State(s): State<Arc<AppState>>) -> Json<Vec<RequestStatus>> {
    Json(s.node.scheduler.list())
}

async fn get_crawl_request(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RequestStatus>> {
    s.node
        .scheduler
        .status(&id)
        .map(Json)
        .ok_or_else(|| CrawlError::UnknownRequest(id).into())
}

async fn cancel_crawl_request(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<RequestStatus>> {
    s.node.scheduler.cancel(&id)?;
    get_crawl_request(State(s), Path(id)).await
}

async fn search(State(s): State<Arc<AppState>>, p: Params) -> ApiResult<Json<ItemList>> {
    let p = params(p)?;
    let q = p.get("q").map(|q| q.trim()).unwrap_or_default();
    if q.is_empty() {
        return Err(ApiError::bad_request("empty_query", "q must not be empty"));
    }
    let limit = count_param(&p, "limit", DEFAULT_LIMIT)?;
    let text = &s.node.text;
    let mut filters = Vec::new();
    if let Some(site) = p.get("site").filter(|v| !v.is_empty()) {
        let known = text.filter_values("site_name").map_err(ApiError::internal)?;
        if !known.contains(site) {
            return Err(ApiError::bad_request("unknown_site", format!("no indexed site named {site:?}")));
        }
        filters.push(("site_name", site.as_str()));
    }
    let hits = text.search_default(q, &filters, limit).map_err(ApiError::internal)?;
    let items = hits
        .into_iter()
        .filter_map(|h| {
            text.get(&h.doc_id).map(|d| ApiItem {
                score: Some(h.score),
                ..ApiItem::from_doc(&d)
            })
        })
        .collect();
    Ok(Json(ItemList { items }))
}

fn unknown_item(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "unknown_item", format!("no item {id:?}"))
}

async fn get_item(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ApiItem>> {
    let d = s.node.text.get(&id).ok_or_else(|| unknown_item(&id))?;
    Ok(Json(ApiItem::from_doc(&d)))
}

/// The `k` docs nearest to any of `queries`, each at its smallest distance,
/// skipping `exclude` and docs no longer in the text index. Distances are
/// squared.
pub fn nearest_docs(node: &Node, queries: &[Vec<f32>], k: usize, exclude: Option<&str>) -> ApiResult<Vec<(String, f64)>> {
    let col = node.collection.read();
    let n = col.len();
    let keep = |d: &str| Some(d) != exclude && node.text.get(d).is_some();
    let mut best: HashMap<String, f64> = HashMap::new();
    if n == 0 {
        return Ok(Vec::new());
    }
    for q in queries {
        // widen until k distinct docs turn up, since one doc owns many entries
        let mut m = (k * 4).min(n);
        loop {
            let hits = match col.ann() {
                Some(ann) => col
                    .search_ann(q, m, default_n_probe(ann.n_lists()))
                    .map_err(ApiError::internal)?
                    .into_iter()
                    .filter(|h| keep(&h.doc_id))
                    .collect(),
                None => col.search_flat_where(q, m, keep).map_err(ApiError::internal)?,
            };
            let mut local: HashMap<String, f64> = HashMap::new();
            for h in hits {
                let e = local.entry(h.doc_id).or_insert(f64::INFINITY);
                *e = e.min(h.distance);
            }
            if local.len() >= k || m >= n {
                for (d, dist) in local {
                    let e = best.entry(d).or_insert(f64::INFINITY);
                    *e = e.min(dist);
                }
                break;
            }
            m = (m * 2).min(n);
        }
    }
    let mut out: Vec<(String, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    Ok(out)
}

fn to_items(node: &Node, ranked: Vec<(String, f64)>) -> Vec<ApiItem> {
    ranked
        .into_iter()
        .filter_map(|(id, sq)| {
            node.text.get(&id).map(|d| ApiItem {
                distance: Some(sq.max(0.0).sqrt()),
                ..ApiItem::from_doc(&d)
            })
        })
        .collect()
}

async fn similar(State(s): State<Arc<AppState>>, Path(id): Path<String>, p: Params) -> ApiResult<Json<ItemList>> {
    let p = params(p)?;
    let k = count_param(&p, "k", DEFAULT_K)?;
    let node = s.node.clone();
    blocking(move || {
        if node.text.get(&id).is_none() {
            return Err(unknown_item(&id));
        }
        let seed = node
            .collection
            .read()
            .entries_for_doc(&id)
            .into_iter()
            .min_by_key(|e| (e.region, e.entry_id))
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::CONFLICT,
                    "not_embedded",
                    format!("item {id:?} has no embedding yet; its images are still being processed"),
                )
            })?;
        let ranked = nearest_docs(&node, &[seed.vector], k, Some(&id))?;
        Ok(Json(ItemList {
            items: to_items(&node, ranked),
        }))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSearchResponse {
    /// Regions detected in the upload; each was searched separately.
    pub regions: usize,
    pub items: Vec<ApiItem>,
}

fn too_large(limit: usize) -> ApiError {
    ApiError::new(
        StatusCode::PAYLOAD_TOO_LARGE,
        "image_too_large",
        format!("image exceeds {limit} bytes"),
    )
}

async fn search_image(
    State(s): State<Arc<AppState>>,
    p: Params,
    mp: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<ImageSearchResponse>> {
    let p = params(p)?;
    let limit = s.max_upload_bytes;
    let mut mp = mp.map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?;
    let mut image: Option<(String, Bytes)> = None;
    let mut k_field: Option<String> = None;
    let multipart_err = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large(limit)
        } else {
            ApiError::bad_request("invalid_multipart", e.body_text())
        }
    };
    while let Some(field) = mp.next_field().await.map_err(multipart_err)? {
        let name = field.name().unwrap_or_default().to_string();
        if name == "k" {
            k_field = Some(field.text().await.map_err(multipart_err)?);
        } else if name == "image" || (image.is_none() && field.file_name().is_some()) {
            let key = field.file_name().unwrap_or("upload").to_string();
            image = Some((key, field.bytes().await.map_err(multipart_err)?));
        }
    }
    let (key, bytes) = image.ok_or_else(|| ApiError::bad_request("missing_image", "no image part in the upload"))?;
    if bytes.len() > limit {
        return Err(too_large(limit));
    }
    let mut p = p;
    if let Some(k) = k_field {
        p.insert("k".into(), k);
    }
    let k = count_param(&p, "k", DEFAULT_K)?;
    let node = s.node.clone();
    blocking(move || {
        let img = snapforge_gan::preprocess::decode(&bytes)
            .map_err(|e| ApiError::bad_request("undecodable_image", e.to_string()))?;
        let regions = snapforge_gan::embed::embed_regions(node.embedder.as_ref(), node.detector.as_ref(), &key, &img)
            .map_err(ApiError::internal)?;
        let queries: Vec<Vec<f32>> = regions.iter().map(|r| r.embedding.vector.clone()).collect();
        let ranked = nearest_docs(&node, &queries, k, None)?;
        Ok(Json(ImageSearchResponse {
            regions: regions.len(),
            items: to_items(&node, ranked),
        }))
    })
    .await
}

async fn status(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let node = &s.node;
    let topologies: Vec<_> = node
        .cluster
        .topologies()
        .iter()
        .map(|h| json!({"name": h.name(), "state": h.state(), "roots": h.metrics().roots}))
        .collect();
    let topics: serde_json::Map<String, serde_json::Value> = node
        .log
        .topic_names()
        .into_iter()
        .map(|t| {
            let ends = node.log.end_offsets(&t).unwrap_or_default();
            (t, json!(ends))
        })
        .collect();
    let analytics = node.analytics.as_ref().map(|(ctx, _)| {
        json!({
            "group": ctx.config.group,
            "lag": node.log.lag(&ctx.config.group, &ctx.config.topic).unwrap_or(0),
            "stats": ctx.stats.snapshot(),
        })
    });
    Json(json!({
        "topologies": topologies,
        "topics": topics,
        "indexed_docs": node.text.len(),
        "embeddings": node.collection.read().len(),
        "pending": node.scheduler.pending(),
        "crawl_requests": node.scheduler.list(),
        "analytics": analytics,
    }))
}
