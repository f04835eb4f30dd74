use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use snapforge_crawler::{CrawlRequest, TransportRegistry};
use snapforge_crawler::transport::TransportOptions;
use snapforge_gan::corpus::CorpusConfig;
use snapforge_gan::{DetectorOptions, DetectorRegistry, Embedder, EmbedderOptions, EmbedderRegistry, TrainConfig};
use snapforge_service::node::DEFAULT_COLLECTION;
use snapforge_service::{commands, AppState, Config, Node, NodeOptions};
use snapforge_stream::RunConfig;

#[derive(Parser)]
#[command(name = "snapforge", version, about = "Fashion product crawler and visual search")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Worker slots of the stream cluster, and embedding threads for eval.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seconds before an unacknowledged tuple tree is failed.
    #[arg(long, global = true)]
    tuple_timeout: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write logs to <dir>/snapforge.log instead of stderr.
    #[arg(long, global = true)]
    log_dir: Option<PathBuf>,
    /// Root of persisted indices, message log and crawl state.
    #[arg(long, global = true)]
    index_dir: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Pipeline {
    /// Embedder model file (DCGAN).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Embedder name: dcgan (default with --model) or pixels.
    #[arg(long)]
    embedder: Option<String>,
    /// Region detector: whole-image (default) or replay.
    #[arg(long)]
    detector: Option<String>,
    /// Detections file for the replay detector.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Collection file; relative paths resolve under the index dir.
    #[arg(long)]
    collection: Option<PathBuf>,
    /// Fixture corpus to fetch from instead of the network.
    #[arg(long, conflicts_with = "live")]
    corpus: Option<PathBuf>,
    /// Fetch from the network.
    #[arg(long)]
    live: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one crawl request to completion, embedding its images.
    Crawl {
        #[arg(long)]
        request: PathBuf,
        #[command(flatten)]
        pipeline: Pipeline,
        /// Give up after this many seconds.
        #[arg(long, default_value_t = 3600)]
        timeout: u64,
    },
    /// Train the DCGAN embedder on a generated corpus.
    TrainEmbedder {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the synthetic labeled garment corpus.
    GenCorpus {
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 250)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        image_size: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a corpus into a collection file.
    Index {
        #[command(flatten)]
        pipeline: Pipeline,
    },
    /// Precision@k of the embedder (and a baseline) on a query/gallery split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        split: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
        /// Also evaluate this embedder, e.g. pixels.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API with the crawl and analytics pipelines running.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
        #[command(flatten)]
        pipeline: Pipeline,
    },
}

fn init_logging(log_dir: Option<&Path>) -> Result<()> {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("snapforge.log"))?;
        b.target(env_logger::Target::Pipe(Box::new(file)));
    }
    b.init();
    Ok(())
}

/// Flags merged over the config file.
struct Settings {
    cfg: Config,
    workers: usize,
    seed: u64,
    index_dir: Option<PathBuf>,
    run: RunConfig,
}

fn settings(g: &Global) -> Result<Settings> {
    let cfg = Config::from_env()?;
    let workers = g.workers.or(cfg.workers).unwrap_or(4).max(1);
    let seed = g.seed.or(cfg.seed).unwrap_or(1);
    let run = RunConfig {
        worker_slots: workers.max(2),
        tuple_timeout_secs: g.tuple_timeout.or(cfg.tuple_timeout).unwrap_or(30),
        rng_seed: seed,
        ..RunConfig::default()
    };
    Ok(Settings {
        index_dir: g.index_dir.clone().or(cfg.index_dir.clone()),
        cfg,
        workers,
        seed,
        run,
    })
}

fn embedder(p: &Pipeline, cfg: &Config) -> Result<Arc<dyn Embedder>> {
    let model = p.model.clone().or(cfg.model.clone());
    let name = p
        .embedder
        .clone()
        .or(cfg.embedder.clone())
        .unwrap_or_else(|| if model.is_some() { "dcgan" } else { "pixels" }.into());
    let opts = EmbedderOptions {
        model_path: model,
        ..EmbedderOptions::default()
    };
    EmbedderRegistry::default()
        .create(&name, &opts)
        .with_context(|| format!("loading embedder {name:?}"))
}

fn detector(p: &Pipeline, cfg: &Config) -> Result<Arc<dyn snapforge_gan::RegionDetector>> {
    let name = p.detector.clone().or(cfg.detector.clone()).unwrap_or_else(|| "whole-image".into());
    let opts = DetectorOptions {
        detections_file: p.detections.clone().or(cfg.detections.clone()),
    };
    Ok(DetectorRegistry::default().create(&name, &opts)?)
}

fn node_options(p: &Pipeline, s: &Settings) -> Result<NodeOptions> {
    let live = p.live || (p.corpus.is_none() && s.cfg.live == Some(true));
    let corpus = p.corpus.clone().or(s.cfg.corpus.clone());
    let (name, corpus) = match (live, corpus) {
        (true, _) => ("live", None),
        (false, Some(c)) => ("fixture", Some(c)),
        (false, None) => bail!("pass --corpus <dir> or --live"),
    };
    let transport = TransportRegistry::default().create(
        name,
        &TransportOptions {
            corpus_dir: corpus,
            ..TransportOptions::default()
        },
    )?;
    let mut opts = NodeOptions::new(embedder(p, &s.cfg)?, detector(p, &s.cfg)?, transport);
    opts.index_dir = s.index_dir.clone();
    opts.collection = p
        .collection
        .clone()
        .or(s.cfg.collection.clone())
        .unwrap_or_else(|| DEFAULT_COLLECTION.into());
    opts.run = s.run.clone();
    if let Some(d) = s.cfg.image_delay_ms {
        opts.analytics.politeness_delay_ms = d;
    }
    Ok(opts)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let s = settings(&cli.global)?;
    init_logging(cli.global.log_dir.as_deref().or(s.cfg.log_dir.as_deref()))?;

    match cli.command {
        Command::GenCorpus {
            classes,
            per_class,
            image_size,
            out,
        } => {
            let cfg = CorpusConfig {
                classes,
                per_class,
                image_size,
                seed: s.seed,
            };
            let m = commands::gen_corpus(&cfg, &out)?;
            println!("{} images in {} classes under {}", m.items.len(), classes, out.display());
        }
        Command::TrainEmbedder {
            corpus,
            epochs,
            batch_size,
            out,
        } => {
            let train = TrainConfig {
                batch_size,
                ..TrainConfig::default()
            };
            let summary = commands::train_embedder(&corpus, epochs, s.seed, train, &out, |epoch, r| {
                log::info!(
                    "epoch {}: d_loss {:.4} g_loss {:.4} D(x) {:.3} D(G(z)) {:.3}",
                    epoch + 1,
                    r.d_loss,
                    r.g_loss,
                    r.d_real_mean,
                    r.d_fake_mean
                );
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Index { pipeline } => {
            let corpus = pipeline
                .corpus
                .clone()
                .or(s.cfg.corpus.clone())
                .context("index needs --corpus")?;
            let collection = pipeline
                .collection
                .clone()
                .or(s.cfg.collection.clone())
                .unwrap_or_else(|| DEFAULT_COLLECTION.into());
            let out = match &s.index_dir {
                Some(d) if collection.is_relative() => d.join(collection),
                _ => collection,
            };
            let e = embedder(&pipeline, &s.cfg)?;
            let d = detector(&pipeline, &s.cfg)?;
            let summary = commands::index_corpus(e.as_ref(), d.as_ref(), &corpus, &out, s.seed)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval {
            model,
            corpus,
            split,
            k,
            baseline,
            out,
        } => {
            let registry = EmbedderRegistry::default();
            let mut embedders = vec![registry.create(
                "dcgan",
                &EmbedderOptions {
                    model_path: Some(model),
                    ..EmbedderOptions::default()
                },
            )?];
            if let Some(b) = baseline {
                embedders.push(registry.create(&b, &EmbedderOptions::default())?);
            }
            let (reports, json) = commands::evaluate(&embedders, &corpus, split, s.seed, &k, s.workers)?;
            print!("{}", snapforge_eval::report_table(&reports));
            if let Some(out) = out {
                std::fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::Crawl {
            request,
            pipeline,
            timeout,
        } => {
            let req: CrawlRequest = serde_json::from_slice(
                &std::fs::read(&request).with_context(|| format!("reading {}", request.display()))?,
            )
            .with_context(|| format!("parsing {}", request.display()))?;
            let node = Node::start(node_options(&pipeline, &s)?)?;
            let summary = commands::crawl(&node, req, Duration::from_secs(timeout));
            node.shutdown();
            println!("{}", serde_json::to_string_pretty(&summary?)?);
        }
        Command::Serve { port, bind, pipeline } => {
            let node = Arc::new(Node::start(node_options(&pipeline, &s)?)?);
            let addr = format!(
                "{}:{}",
                bind.or(s.cfg.bind.clone()).unwrap_or_else(|| "127.0.0.1".into()),
                port.or(s.cfg.port).unwrap_or(8080)
            );
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                log::info!("listening on http://{}", listener.local_addr()?);
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                    log::info!("shutting down");
                };
                snapforge_service::api::serve(AppState::new(node.clone()), listener, shutdown).await?;
                anyhow::Ok(())
            })?;
            node.persist()?;
            node.shutdown();
        }
    }
    Ok(())
}
