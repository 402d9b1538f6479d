//! `mnistgen`: drives a run from a config file through fetch, analyze, curate,
//! review and export.

mod evaluate;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::Value;

use mnistgen_core::acquisition::{ingest_folder, WebSourceConfig};
use mnistgen_core::curation::modes::Mode;
use mnistgen_core::fixtures::{write_image_folders, FolderSpec};
use mnistgen_core::hierarchy::template;
use mnistgen_core::semantics::{serve_stub, StubProvider};
use mnistgen_core::transforms::{
    compare_pipelines, AnnotatedImage, LookupTagger, Pipeline, StageContext,
};
use mnistgen_core::workflow::{FolderSource, ProviderKind, Run, RunConfig, WebSource, CONFIG_FILE};
use mnistgen_core::{Error, Result};
use mnistgen_review::{router, serve, RunImages, Shared};

const HIERARCHY_FILE: &str = "hierarchy.json";

#[derive(Debug, Parser)]
#[command(
    name = "mnistgen",
    version,
    about = "Build MNIST-style IDX datasets from categorized images"
)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = CONFIG_FILE)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Curation mode: individual, smart or fast.
    #[arg(long, global = true, value_parser = parse::<Mode>)]
    mode: Option<Mode>,
    /// Embedding provider: stub or external.
    #[arg(long, global = true, value_parser = parse::<ProviderKind>)]
    provider: Option<ProviderKind>,
    /// Print one JSON object per line instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceKind {
    Web,
    Folder,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a hierarchy and a starter config next to --config.
    InitConfig {
        /// Starter hierarchy: minimal, tree or food.
        #[arg(long, default_value = "minimal")]
        template: String,
        /// Also write this many synthetic images per subcategory.
        #[arg(long)]
        demo: Option<usize>,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Add images to the pool, from the configured sources or the flags.
    Fetch {
        /// Fetch from this source only.
        #[arg(long, value_enum)]
        source: Option<SourceKind>,
        /// Search keyword; required with --source web.
        #[arg(long)]
        keyword: Option<String>,
        /// Images per keyword for the web source.
        #[arg(long)]
        count: Option<usize>,
        /// Folder for the folder source.
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Embed and categorize every pool image.
    Analyze,
    /// Route analyzed images and fill the review queue.
    Curate {
        /// Let the agent settle items that would wait for a reviewer.
        #[arg(long)]
        unattended: bool,
    },
    /// Serve the review API (and UI, with --static) on localhost.
    Serve {
        /// Port on 127.0.0.1; 0 picks a free one.
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Directory of the built review UI.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Write kept images as IDX files.
    Export,
    /// Score predictions against labels.
    Evaluate {
        /// CSV with a `predicted` column, and `actual` unless --labels is given.
        #[arg(long)]
        predictions: PathBuf,
        /// IDX label file with the actual labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Number of classes; defaults to the largest label plus one.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Report where two pipelines disagree.
    ComparePipelines {
        /// Stage list as a JSON file or inline JSON.
        #[arg(long)]
        left: String,
        /// Stage list as a JSON file or inline JSON.
        #[arg(long)]
        right: String,
        /// Image folder to compare on; defaults to the run's pool.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Compare at most this many images.
        #[arg(long, default_value_t = 100)]
        limit: usize,
    },
    /// Embedding provider on stdin/stdout, for testing the external provider path.
    #[command(hide = true)]
    StubProvider,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_environment() { 2 } else { 1 })
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::InitConfig {
            template,
            demo,
            force,
        } => init_config(cli, template, *demo, *force),
        Command::Fetch {
            source,
            keyword,
            count,
            path,
        } => {
            let run = load(cli, |c| {
                fetch_overrides(c, *source, keyword.as_deref(), *count, path.as_deref())
            })?;
            emit(cli, "fetch", &run.fetch()?)
        }
        Command::Analyze => {
            let run = load(cli, |_| Ok(()))?;
            let provider = run.provider()?;
            emit(cli, "analyze", &run.analyze(provider.as_ref())?)
        }
        Command::Curate { unattended } => {
            let run = load(cli, |c| {
                c.curation.unattended |= unattended;
                Ok(())
            })?;
            emit(cli, "curate", &run.curate()?)
        }
        Command::Serve { port, static_dir } => serve_review(cli, *port, static_dir.clone()),
        Command::Export => {
            let run = load(cli, |_| Ok(()))?;
            emit(cli, "export", &run.export()?)
        }
        Command::Evaluate {
            predictions,
            labels,
            classes,
        } => {
            let report = evaluate::run(predictions, labels.as_deref(), *classes)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(())
        }
        Command::ComparePipelines {
            left,
            right,
            images,
            limit,
        } => compare(cli, left, right, images.as_deref(), *limit),
        Command::StubProvider => {
            let stub = StubProvider::new(cli.seed.unwrap_or(0));
            serve_stub(std::io::stdin().lock(), std::io::stdout().lock(), &stub)
                .map_err(|e| Error::provider(e.to_string(), false))
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

/// Loads the config, applies `edit` and then the global flag overrides.
fn load(cli: &Cli, edit: impl FnOnce(&mut RunConfig) -> Result<()>) -> Result<Run> {
    if !cli.config.exists() {
        return Err(Error::Precondition(format!(
            "no config at {}; run `mnistgen init-config` first",
            cli.config.display()
        )));
    }
    let mut run = Run::load(&cli.config)?;
    let c = &mut run.config;
    edit(c)?;
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    if let Some(out) = &cli.out {
        c.output_dir = absolute(out)?;
    }
    if let Some(mode) = cli.mode {
        c.curation.mode = mode;
    }
    if let Some(kind) = cli.provider {
        c.provider.kind = kind;
    }
    c.validate()?;
    Ok(run)
}

fn fetch_overrides(
    c: &mut RunConfig,
    source: Option<SourceKind>,
    keyword: Option<&str>,
    count: Option<usize>,
    path: Option<&Path>,
) -> Result<()> {
    match source {
        None => {
            if keyword.is_some() || count.is_some() || path.is_some() {
                return Err(Error::Config(
                    "--keyword, --count and --path need --source".into(),
                ));
            }
        }
        Some(SourceKind::Folder) => {
            let path = path.ok_or_else(|| Error::Config("--source folder needs --path".into()))?;
            let keyword = match keyword {
                Some(k) => k.to_string(),
                None => path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            };
            c.source.folders = vec![FolderSource {
                path: absolute(path)?,
                keyword,
            }];
            c.source.web = None;
        }
        Some(SourceKind::Web) => {
            let keyword =
                keyword.ok_or_else(|| Error::Config("--source web needs --keyword".into()))?;
            let mut web = c.source.web.clone().unwrap_or(WebSource {
                api: WebSourceConfig::default(),
                ..WebSource::default()
            });
            web.keywords = vec![keyword.to_string()];
            if let Some(n) = count {
                web.per_keyword = n;
            }
            c.source.folders.clear();
            c.source.web = Some(web);
        }
    }
    Ok(())
}

/// Prints a step summary as text, or as one JSON line with an `event` field.
fn emit<T: Serialize>(cli: &Cli, event: &str, summary: &T) -> Result<()> {
    let mut value = serde_json::to_value(summary).expect("summary serializes");
    let mut out = std::io::stdout().lock();
    let line = if cli.json {
        if let Value::Object(map) = &mut value {
            map.insert("event".into(), Value::String(event.into()));
        }
        value.to_string()
    } else {
        let fields = match &value {
            Value::Object(map) => map
                .iter()
                .filter(|(_, v)| !v.is_array())
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(" "),
            other => other.to_string(),
        };
        format!("{event}: {fields}")
    };
    writeln!(out, "{line}")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("stdout", e))
}

fn init_config(cli: &Cli, name: &str, demo: Option<usize>, force: bool) -> Result<()> {
    let h = template(name)
        .ok_or_else(|| Error::Config(format!("unknown template {name:?} (food, tree, minimal)")))?;
    let dir = cli
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hierarchy_path = dir.join(HIERARCHY_FILE);
    for p in [&hierarchy_path, &cli.config] {
        if p.exists() && !force {
            return Err(Error::Precondition(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    let mut config = RunConfig::starter(HIERARCHY_FILE, &h);
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = cli.mode {
        config.curation.mode = mode;
    }
    if let Some(kind) = cli.provider {
        config.provider.kind = kind;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    std::fs::write(&hierarchy_path, h.to_json()).map_err(|e| Error::io(&hierarchy_path, e))?;
    let mut text = serde_json::to_string_pretty(&config).expect("config serializes");
    text.push('\n');
    std::fs::write(&cli.config, text).map_err(|e| Error::io(&cli.config, e))?;
    for f in &config.source.folders {
        let p = dir.join(&f.path);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let images = match demo {
        Some(n) => {
            let spec = FolderSpec {
                per_subcategory: n,
                clutter_every: 5,
                seed: config.seed,
            };
            write_image_folders(&dir.join("images"), &h, spec)?
        }
        None => 0,
    };
    #[derive(Serialize)]
    struct Init {
        template: String,
        main_categories: usize,
        subcategories: usize,
        hierarchy: PathBuf,
        config: PathBuf,
        demo_images: usize,
    }
    emit(
        cli,
        "init-config",
        &Init {
            template: name.into(),
            main_categories: h.main_count(),
            subcategories: h.label_count(),
            hierarchy: hierarchy_path,
            config: cli.config.clone(),
            demo_images: images,
        },
    )
}

fn serve_review(cli: &Cli, port: u16, static_dir: Option<PathBuf>) -> Result<()> {
    let run = load(cli, |_| Ok(()))?;
    let shared = Shared::new(run.review_state()?, Some(Arc::new(RunImages::new(&run)?)));
    let app = router(Arc::clone(&shared), static_dir);
    let rt =
        tokio::runtime::Runtime::new().map_err(|e| Error::Source(format!("tokio runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| Error::Source(format!("cannot listen on port {port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Source(e.to_string()))?;
        #[derive(Serialize)]
        struct Listening {
            url: String,
            pending: usize,
        }
        let pending = shared.lock().pending();
        emit(
            cli,
            "serve",
            &Listening {
                url: format!("http://{addr}/"),
                pending,
            },
        )?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, app, shutdown)
            .await
            .map_err(|e| Error::Source(format!("server: {e}")))
    })?;
    let state = shared.lock();
    if let Some(agent) = state.agent() {
        run.save_agent(agent)?;
        info!("saved agent after {} decisions", state.records().len());
    }
    Ok(())
}

/// A pipeline from inline JSON or a JSON file.
fn read_pipeline(arg: &str) -> Result<Pipeline> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?
    };
    Ok(serde_json::from_str(&text)?)
}

fn compare(cli: &Cli, left: &str, right: &str, images: Option<&Path>, limit: usize) -> Result<()> {
    let (left, right) = (read_pipeline(left)?, read_pipeline(right)?);
    let (inputs, tagger): (Vec<AnnotatedImage>, LookupTagger) = match images {
        Some(dir) => {
            let records = ingest_folder(dir, "")?;
            (
                records
                    .iter()
                    .take(limit)
                    .map(AnnotatedImage::from_record)
                    .collect(),
                LookupTagger::default(),
            )
        }
        None => {
            let run = load(cli, |_| Ok(()))?;
            let pool = run.pool()?;
            let inputs = pool
                .entries()?
                .iter()
                .take(limit)
                .map(|e| Ok(AnnotatedImage::from_record(&pool.load(e)?)))
                .collect::<Result<_>>()?;
            (inputs, run.tagger().unwrap_or_default())
        }
    };
    if inputs.is_empty() {
        return Err(Error::Precondition("no images to compare on".into()));
    }
    let ctx = StageContext {
        tagger: Some(&tagger),
        matting: None,
    };
    let report = compare_pipelines(&left, &right, &inputs, &ctx)?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string(&report).expect("report serializes")
        );
    } else {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    }
    Ok(())
}
