#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use snapforge_crawler::fixture::{load_site_manifest, ManifestRow};
use snapforge_crawler::{doc_id, FixtureTransport};
use snapforge_gan::{PixelEmbedder, RegionDetector, WholeImageDetector};
use snapforge_service::{commands, router, AppState, Node, NodeOptions};
use snapforge_text::{Price, ProductDoc};
use tower::ServiceExt;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

pub fn manifest() -> Vec<ManifestRow> {
    load_site_manifest(corpus_dir().join("bazaar")).unwrap()
}

pub fn doc_from_row(row: &ManifestRow) -> ProductDoc {
    ProductDoc {
        doc_id: doc_id(&row.url),
        url: row.url.clone(),
        site_name: "bazaar".into(),
        name: row.name.clone(),
        price: Some(Price {
            amount: row.price,
            currency: row.currency.clone(),
        }),
        brand: row.brand.clone(),
        description: row.description.clone(),
        links: row.links.clone(),
        image_urls: row.image_urls.clone(),
        crawl_time: 0,
        missing: Vec::new(),
    }
}

pub fn options(detector: Arc<dyn RegionDetector>) -> NodeOptions {
    let mut o = NodeOptions::new(
        Arc::new(PixelEmbedder::new(8192)),
        detector,
        Arc::new(FixtureTransport::new(corpus_dir()).unwrap()),
    );
    o.run_analytics = false;
    o
}

/// A node whose indices hold the fixture manifest and its pixel
/// embeddings, built without running any topology.
pub fn seeded_node(detector: Arc<dyn RegionDetector>) -> (Arc<Node>, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let col = dir.path().join("items.svec");
    commands::index_corpus(&PixelEmbedder::new(8192), &WholeImageDetector, &corpus_dir(), &col, 1).unwrap();
    let mut o = options(detector);
    o.collection = col;
    let node = Node::start(o).unwrap();
    for row in manifest() {
        node.text.upsert(doc_from_row(&row));
    }
    node.text.commit().unwrap();
    (Arc::new(node), dir)
}

pub async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let json = if bytes.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&bytes)))
    };
    (status, json)
}

pub async fn get(app: &axum::Router, uri: &str) -> (StatusCode, serde_json::Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(app: &axum::Router, uri: &str, body: &serde_json::Value) -> (StatusCode, serde_json::Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

pub const BOUNDARY: &str = "snapforge-test-boundary";

/// `(field name, file name, bytes)` parts as multipart/form-data.
pub fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, file, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match file {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: application/octet-stream\r\n\r\n").as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub async fn post_image(app: &axum::Router, uri: &str, parts: &[(&str, Option<&str>, &[u8])]) -> (StatusCode, serde_json::Value) {
    let req = Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    call(app, req).await
}

pub fn app(node: Arc<Node>) -> axum::Router {
    router(AppState::new(node))
}

pub fn ids(v: &serde_json::Value) -> Vec<String> {
    v["items"].as_array().unwrap().iter().map(|i| i["doc_id"].as_str().unwrap().to_string()).collect()
}
