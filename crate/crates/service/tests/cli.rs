//! The `snapforge` binary end to end on small inputs.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use common::corpus_dir;

fn snapforge() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_snapforge"));
    c.env_remove("SNAPFORGE_CONFIG").env("RUST_LOG", "warn");
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("{e}: {s}"))
}

fn tiny_corpus(dir: &Path) {
    let out = snapforge()
        .args(["gen-corpus", "--classes", "2", "--per-class", "4", "--seed", "3", "--out"])
        .arg(dir)
        .output()
        .unwrap();
    let stdout = ok(out);
    assert!(stdout.starts_with("8 images in 2 classes"), "{stdout}");
}

#[test]
fn corpus_train_index_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    tiny_corpus(&corpus);
    let labels: serde_json::Value = json(&std::fs::read_to_string(corpus.join("labels.json")).unwrap());
    assert_eq!(labels["items"].as_array().unwrap().len(), 8);

    let model = tmp.path().join("model.sgan");
    let summary = json(&ok(snapforge()
        .args(["train-embedder", "--epochs", "1", "--batch-size", "4", "--seed", "5", "--corpus"])
        .arg(&corpus)
        .arg("--out")
        .arg(&model)
        .output()
        .unwrap()));
    assert_eq!((summary["images"].as_u64(), summary["steps"].as_u64()), (Some(8), Some(2)));
    assert_eq!(summary["model_bytes"].as_u64().unwrap(), std::fs::metadata(&model).unwrap().len());

    let index_dir = tmp.path().join("idx");
    let summary = json(&ok(snapforge()
        .args(["index", "--collection", "items.svec", "--model"])
        .arg(&model)
        .arg("--corpus")
        .arg(&corpus)
        .arg("--index-dir")
        .arg(&index_dir)
        .output()
        .unwrap()));
    assert_eq!(summary["entries"], 8);
    let col = snapforge_vector::Collection::load(index_dir.join("items.svec")).unwrap();
    assert_eq!(col.len(), 8);
    assert!(col.entries().all(|e| e.class_label.is_some()));

    let report = tmp.path().join("report.json");
    let table = ok(snapforge()
        .args(["eval", "--split", "0.25", "--k", "1,3", "--baseline", "pixels", "--seed", "2", "--model"])
        .arg(&model)
        .arg("--corpus")
        .arg(&corpus)
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap());
    assert!(table.contains("dcgan") && table.contains("pixels"), "{table}");
    let r = json(&std::fs::read_to_string(&report).unwrap());
    let rows = r.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["query_count"], 2);
        assert_eq!(row["gallery_count"], 6);
        let p = row["precision"].as_object().unwrap();
        assert_eq!(p.keys().collect::<Vec<_>>(), ["1", "3"]);
    }
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    tiny_corpus(&corpus);
    let index_dir = tmp.path().join("from-config");
    let cfg = tmp.path().join("snapforge.toml");
    std::fs::write(
        &cfg,
        format!(
            "index_dir = {:?}\ncollection = \"garments.svec\"\nembedder = \"pixels\"\n",
            index_dir.display().to_string()
        ),
    )
    .unwrap();
    let out = snapforge().env("SNAPFORGE_CONFIG", &cfg).arg("index").arg("--corpus").arg(&corpus).output().unwrap();
    ok(out);
    assert!(index_dir.join("garments.svec").exists());

    std::fs::write(&cfg, "no_such_setting = 1\n").unwrap();
    let out = snapforge().env("SNAPFORGE_CONFIG", &cfg).arg("index").arg("--corpus").arg(&corpus).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_setting"));
}

#[test]
fn crawl_needs_a_source() {
    let tmp = tempfile::tempdir().unwrap();
    let req = tmp.path().join("req.json");
    std::fs::write(&req, serde_json::to_string(&snapforge_crawler::fixture::fixture_request(&Default::default())).unwrap()).unwrap();
    let out = snapforge().arg("crawl").arg("--request").arg(&req).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--corpus"));
    let out = snapforge().arg("crawl").arg("--request").arg(&req).args(["--live", "--corpus", "x"]).output().unwrap();
    assert!(!out.status.success());
}

fn http_get(port: u16, path: &str) -> (u16, serde_json::Value) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let body = &raw[raw.find("\r\n\r\n").unwrap() + 4..];
    (status, json(body))
}

#[test]
fn crawl_then_serve() {
    let tmp = tempfile::tempdir().unwrap();
    let index_dir = tmp.path().join("idx");
    let req = tmp.path().join("req.json");
    let mut r = snapforge_crawler::fixture::fixture_request(&Default::default());
    r.politeness_delay_ms = 10;
    std::fs::write(&req, serde_json::to_string(&r).unwrap()).unwrap();
    let summary = json(&ok(snapforge()
        .args(["crawl", "--embedder", "pixels", "--workers", "2", "--tuple-timeout", "20", "--request"])
        .arg(&req)
        .arg("--corpus")
        .arg(corpus_dir())
        .arg("--index-dir")
        .arg(&index_dir)
        .output()
        .unwrap()));
    assert_eq!(summary["indexed_docs"], 50);
    assert_eq!(summary["image_records"], 120);
    assert_eq!(summary["embeddings"], 120);
    assert_eq!(summary["status"]["state"], "completed");
    assert!(index_dir.join("text").is_dir() && index_dir.join("log").is_dir() && index_dir.join("items.svec").exists());
    assert!(index_dir.join("state/frontiers").read_dir().unwrap().count() == 1);

    let log_dir = tmp.path().join("logs");
    let mut child = snapforge()
        .env("RUST_LOG", "info")
        .args(["serve", "--port", "0", "--embedder", "pixels", "--log-dir"])
        .arg(&log_dir)
        .arg("--corpus")
        .arg(corpus_dir())
        .arg("--index-dir")
        .arg(&index_dir)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // logs go to the file, so poll it for the bound address
    let log_file = log_dir.join("snapforge.log");
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
    let port = loop {
        if let Ok(f) = std::fs::File::open(&log_file) {
            let port = BufReader::new(f)
                .lines()
                .map_while(Result::ok)
                .find_map(|l| l.split("listening on http://").nth(1).map(|a| a.rsplit(':').next().unwrap().trim().parse::<u16>().unwrap()));
            if let Some(p) = port {
                break p;
            }
        }
        if std::time::Instant::now() > deadline || child.try_wait().unwrap().is_some() {
            let _ = child.kill();
            let mut err = String::new();
            child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
            panic!("server did not start: {err}");
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    };
    let (st, status) = http_get(port, "/status");
    let (st2, search) = http_get(port, "/search?q=dress");
    let (st3, missing) = http_get(port, "/items/nope");
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(st, 200);
    assert_eq!(status["indexed_docs"], 50);
    assert_eq!(status["embeddings"], 120);
    assert_eq!(st2, 200);
    assert!(!search["items"].as_array().unwrap().is_empty());
    assert_eq!((st3, missing["error_code"].as_str()), (404, Some("unknown_item")));
}
