//! A run over one output directory: configuration, then fetch, analyze, curate and
//! export. Each step reads the previous step's files, so steps can be rerun alone.
//!
//! ```text
//! <out>/pool/            content store + index.jsonl
//! <out>/analysis.jsonl   one AnalysisRow per image
//! <out>/queue.json       pending review entries
//! <out>/decisions.jsonl  append-only decision log
//! <out>/agent.json       agent snapshot
//! <out>/curation.json    CurateSummary of the last curation
//! <out>/dataset/         IDX files and manifest.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{
    self, append_jsonl, read_jsonl, ImageRecord, PoolStore, WebFetcher, WebSourceConfig,
    API_KEY_ENV,
};
use crate::curation::dqn::AgentSnapshot;
use crate::curation::modes::{
    CurationConfig, Curator, DecisionSource, LabelPath, Mode, PoolItem, QueueEntry, Tallies,
};
use crate::curation::Agent;
use crate::error::{Error, Result};
use crate::export::{self, ArtifactOptions, DatasetArtifact, Sample, DEFAULT_SPLIT_RATIO};
use crate::hierarchy::CategoryHierarchy;
use crate::review::{final_membership, read_log, ReviewState};
use crate::semantics::{
    CategorizationResult, Categorizer, Embedding, EmbeddingProvider, ExternalProvider,
    ScoringWeights, StubProvider, VisualAttributes, DEFAULT_PREFILTER,
};
use crate::transforms::{AnnotatedImage, LookupTagger, Pipeline, StageContext};
use crate::DqnAgent;

pub const CONFIG_FILE: &str = "mnistgen.json";
pub const POOL_DIR: &str = "pool";
pub const ANALYSIS_FILE: &str = "analysis.jsonl";
pub const QUEUE_FILE: &str = "queue.json";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const AGENT_FILE: &str = "agent.json";
pub const CURATION_FILE: &str = "curation.json";
pub const DATASET_DIR: &str = "dataset";
/// Command line of the external embedding provider, when not set in the config.
pub const PROVIDER_CMD_ENV: &str = "MNISTGEN_PROVIDER_CMD";
/// Fixed run timestamp in Unix seconds, for reproducible builds.
pub const SOURCE_DATE_EPOCH: &str = "SOURCE_DATE_EPOCH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FolderSource {
    pub path: PathBuf,
    pub keyword: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebSource {
    pub keywords: Vec<String>,
    pub per_keyword: usize,
    pub api: WebSourceConfig,
}

impl Default for WebSource {
    fn default() -> Self {
        Self {
            keywords: Vec::new(),
            per_keyword: 400,
            api: WebSourceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub folders: Vec<FolderSource>,
    pub web: Option<WebSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Stub,
    External,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(ProviderKind::Stub),
            "external" => Ok(ProviderKind::External),
            other => Err(Error::Config(format!(
                "unknown provider {other:?} (stub, external)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Shell command of the external provider; falls back to `MNISTGEN_PROVIDER_CMD`.
    pub command: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            command: None,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hierarchy: PathBuf,
    pub source: SourceConfig,
    pub pipeline: Pipeline,
    pub scoring: ScoringWeights,
    pub prefilter: f64,
    pub curation: CurationConfig,
    pub provider: ProviderConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub split_ratio: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hierarchy: PathBuf::from("hierarchy.json"),
            source: SourceConfig::default(),
            pipeline: Pipeline::default_chain(false),
            scoring: ScoringWeights::default(),
            prefilter: DEFAULT_PREFILTER,
            curation: CurationConfig::default(),
            provider: ProviderConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            split_ratio: DEFAULT_SPLIT_RATIO,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scoring.validate()?;
        self.curation.validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.prefilter) {
            return Err(Error::Config("prefilter must lie in [0, 1]".into()));
        }
        if let Some(web) = &self.source.web {
            if web.per_keyword == 0 {
                return Err(Error::Config("web.per_keyword must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Starter config for a hierarchy: one source folder per main category.
    pub fn starter(hierarchy_file: &str, hierarchy: &CategoryHierarchy) -> Self {
        Self {
            hierarchy: PathBuf::from(hierarchy_file),
            source: SourceConfig {
                folders: hierarchy
                    .categories
                    .iter()
                    .map(|c| FolderSource {
                        path: Path::new("images").join(&c.name),
                        keyword: c.name.clone(),
                    })
                    .collect(),
                web: None,
            },
            ..Self::default()
        }
    }

    /// SHA-256 of the canonical JSON (sorted keys) with `output_dir` cleared, so the
    /// same configuration written to two directories hashes alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let canonical = serde_json::to_value(&c)
            .expect("config serializes")
            .to_string();
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Analysis output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub id: String,
    pub result: CategorizationResult,
    pub embedding: Embedding,
    pub visual: VisualAttributes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchSummary {
    pub fetched: usize,
    pub added: usize,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub analyzed: usize,
    pub skipped: usize,
    pub eligible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateSummary {
    pub mode: Mode,
    pub tallies: Tallies,
    pub decisions: usize,
    pub queued: usize,
    pub queue_entries: usize,
    pub kept: usize,
    pub class_counts: Vec<u64>,
    pub probe_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub count: usize,
    pub train: usize,
    pub test: usize,
    pub width: u32,
    pub height: u32,
    /// Queue entries still waiting for a reviewer; their images are left out.
    pub unresolved: usize,
    pub files: Vec<PathBuf>,
}

/// A loaded configuration with its hierarchy and the directory relative paths
/// resolve against.
pub struct Run {
    pub config: RunConfig,
    pub hierarchy: CategoryHierarchy,
    base: PathBuf,
}

impl Run {
    pub fn load(config_path: impl AsRef<Path>) -> Result<Self> {
        let path = config_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = RunConfig::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, base)
    }

    pub fn new(config: RunConfig, base: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let base = base.into();
        let hierarchy = CategoryHierarchy::from_path(resolve(&base, &config.hierarchy))?;
        for w in hierarchy.lint() {
            warn!("{w}");
        }
        Ok(Self {
            config,
            hierarchy,
            base,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        resolve(&self.base, &self.config.output_dir)
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    pub fn pool(&self) -> Result<PoolStore> {
        PoolStore::open(self.out_file(POOL_DIR))
    }

    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let p = &self.config.provider;
        match p.kind {
            ProviderKind::Stub => Ok(Box::new(StubProvider::new(self.config.seed))),
            ProviderKind::External => {
                let command = match &p.command {
                    Some(c) => c.clone(),
                    None => std::env::var(PROVIDER_CMD_ENV).map_err(|_| {
                        Error::Config(format!(
                            "external provider needs provider.command or {PROVIDER_CMD_ENV}"
                        ))
                    })?,
                };
                Ok(Box::new(ExternalProvider::spawn(
                    &command,
                    Duration::from_secs(p.timeout_secs),
                )?))
            }
        }
    }

    /// `SOURCE_DATE_EPOCH` when set, else the newest `fetched_at` in the pool, else now.
    /// Every record and manifest of a run carries this one timestamp.
    pub fn timestamp(&self) -> Result<DateTime<Utc>> {
        if let Ok(v) = std::env::var(SOURCE_DATE_EPOCH) {
            let secs: i64 = v.trim().parse().map_err(|_| {
                Error::Config(format!("{SOURCE_DATE_EPOCH} is not an integer: {v:?}"))
            })?;
            return DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| Error::Config(format!("{SOURCE_DATE_EPOCH} out of range: {secs}")));
        }
        let newest = self
            .pool()?
            .entries()?
            .into_iter()
            .map(|e| e.fetched_at)
            .max();
        Ok(newest.unwrap_or_else(Utc::now))
    }

    pub fn fetch(&self) -> Result<FetchSummary> {
        let mut records = Vec::new();
        for f in &self.config.source.folders {
            let dir = resolve(&self.base, &f.path);
            let got = acquisition::ingest_folder(&dir, &f.keyword)?;
            info!("{}: {} images", dir.display(), got.len());
            records.extend(got);
        }
        if let Some(web) = &self.config.source.web {
            if !web.keywords.is_empty() {
                let key = std::env::var(API_KEY_ENV).map_err(|_| {
                    Error::Auth(format!("set {API_KEY_ENV} to query the image API"))
                })?;
                let mut api = web.api.clone();
                api.cache_dir = resolve(&self.base, &api.cache_dir);
                let mut fetcher = WebFetcher::new(api)?;
                for k in &web.keywords {
                    records.extend(fetcher.fetch_keyword(k, web.per_keyword, &key)?);
                }
                info!("web source: {} network requests", fetcher.request_count());
            }
        }
        let fetched = records.len();
        let records = acquisition::dedupe(records);
        let pool = self.pool()?;
        let added = pool.add(&records)?;
        Ok(FetchSummary {
            fetched,
            added,
            pool_size: pool.entries()?.len(),
        })
    }

    pub fn analyze(&self, provider: &dyn EmbeddingProvider) -> Result<AnalyzeSummary> {
        let records = self.pool()?.load_all()?;
        if records.is_empty() {
            warn!("the pool is empty; run fetch first");
        }
        let categorizer = Categorizer::new(&self.hierarchy, self.config.scoring, provider)?
            .with_prefilter(self.config.prefilter);
        let results: Vec<Result<_>> = records
            .par_iter()
            .map(|r| categorizer.categorize(r))
            .collect();
        let mut rows = Vec::with_capacity(records.len());
        let mut skipped = 0;
        for (r, res) in records.iter().zip(results) {
            match res {
                Ok((features, result)) => rows.push(AnalysisRow {
                    id: r.id.clone(),
                    result,
                    embedding: features.embedding,
                    visual: features.visual,
                }),
                Err(Error::Image(why)) => {
                    warn!("skipping {}: {why}", r.id);
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        write_jsonl(&self.out_file(ANALYSIS_FILE), &rows)?;
        Ok(AnalyzeSummary {
            analyzed: rows.len(),
            skipped,
            eligible: rows.iter().filter(|r| r.result.eligible).count(),
        })
    }

    pub fn analysis(&self) -> Result<Vec<AnalysisRow>> {
        let path = self.out_file(ANALYSIS_FILE);
        if !path.exists() {
            return Err(Error::Precondition(format!(
                "{} is missing; run analyze first",
                path.display()
            )));
        }
        read_jsonl(&path)
    }

    pub fn tagger(&self) -> Result<LookupTagger> {
        Ok(LookupTagger(
            self.analysis()?
                .into_iter()
                .map(|r| (r.id, r.result))
                .collect(),
        ))
    }

    /// The configured pipeline applied to one pool image.
    pub fn transform(&self, record: &ImageRecord, tagger: &LookupTagger) -> Result<AnnotatedImage> {
        let ctx = StageContext {
            tagger: Some(tagger),
            matting: None,
        };
        self.config
            .pipeline
            .apply(&AnnotatedImage::from_record(record), &ctx)
    }

    pub fn load_agent(&self) -> Result<Option<DqnAgent>> {
        let path = self.out_file(AGENT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let snapshot: AgentSnapshot<f64> = serde_json::from_str(&text)?;
        Ok(Some(Agent::restore(snapshot)?))
    }

    pub fn save_agent(&self, agent: &DqnAgent) -> Result<()> {
        write_json(&self.out_file(AGENT_FILE), &agent.snapshot())
    }

    /// Routes the analyzed pool through the configured mode. Replaces the queue and
    /// the decision log, so it refuses to run over human decisions. The agent
    /// continues from `agent.json` when one exists.
    pub fn curate(&self) -> Result<CurateSummary> {
        let log = self.out_file(DECISIONS_FILE);
        if log.exists()
            && read_log(&log)?
                .iter()
                .any(|r| r.source == DecisionSource::Human)
        {
            return Err(Error::Precondition(format!(
                "{} holds human decisions; export them or remove the file before curating again",
                log.display()
            )));
        }
        let rows = self.analysis()?;
        let pool = self.pool()?;
        let tagger = LookupTagger(
            rows.iter()
                .map(|r| (r.id.clone(), r.result.clone()))
                .collect(),
        );
        let entries: HashMap<String, _> = pool
            .entries()?
            .into_iter()
            .map(|e| (e.id.clone(), e))
            .collect();
        let planes: Vec<Result<(String, AnnotatedImage)>> = rows
            .par_iter()
            .filter_map(|r| entries.get(&r.id))
            .map(|e| Ok((e.id.clone(), self.transform(&pool.load(e)?, &tagger)?)))
            .collect();
        let mut probe_images = HashMap::new();
        let mut sizes = BTreeMap::new();
        for p in planes {
            let (id, img) = p?;
            if img.channels == 1 {
                *sizes.entry(img.pixels.len()).or_insert(0usize) += 1;
                probe_images.insert(id, img.pixels);
            }
        }
        if sizes.len() > 1 {
            warn!("pipeline output sizes differ; the probe classifier is disabled");
            probe_images.clear();
        }

        let mut agent = match self.load_agent()? {
            Some(a) => a,
            None => Agent::new(self.config.curation.agent.clone(), self.config.seed)?,
        };
        let items: Vec<PoolItem> = rows
            .into_iter()
            .map(|r| PoolItem {
                id: r.id,
                result: r.result,
                embedding: r.embedding,
                visual: r.visual,
            })
            .collect();
        let dim = items
            .first()
            .map_or(crate::semantics::EMBEDDING_DIM, |i| i.embedding.dim());
        let now = self.timestamp()?;
        let mut curator = Curator::new(
            &self.hierarchy,
            &self.config.curation,
            &mut agent,
            dim,
            self.config.seed,
            now,
        )?;
        if !probe_images.is_empty() {
            curator = curator.with_probe_images(&probe_images);
        }
        let outcome = curator.run(&items)?;

        if log.exists() {
            std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        append_jsonl(&log, &outcome.decisions)?;
        write_json(&self.out_file(QUEUE_FILE), &outcome.queue)?;
        self.save_agent(&agent)?;
        let summary = CurateSummary {
            mode: self.config.curation.mode,
            tallies: outcome.tallies,
            decisions: outcome.decisions.len(),
            queued: outcome.queue.iter().map(|q| q.members.len()).sum(),
            queue_entries: outcome.queue.len(),
            kept: outcome.distribution.total() as usize,
            class_counts: outcome.distribution.counts.clone(),
            probe_accuracy: outcome.probe_accuracy,
        };
        write_json(&self.out_file(CURATION_FILE), &summary)?;
        Ok(summary)
    }

    pub fn queue(&self) -> Result<Vec<QueueEntry>> {
        read_json(&self.out_file(QUEUE_FILE))
    }

    pub fn curation_summary(&self) -> Result<CurateSummary> {
        read_json(&self.out_file(CURATION_FILE))
    }

    /// Review state over the curated queue, appending to the run's decision log.
    pub fn review_state(&self) -> Result<ReviewState> {
        let summary = self.curation_summary()?;
        let state = ReviewState::open(
            self.hierarchy.clone(),
            self.queue()?,
            self.out_file(DECISIONS_FILE),
            summary.tallies,
        )?
        .with_reward(self.config.curation.reward)
        .with_probe_accuracy(Some(summary.probe_accuracy));
        let agent = match self.load_agent()? {
            Some(a) => a,
            None => Agent::new(self.config.curation.agent.clone(), self.config.seed)?,
        };
        Ok(state.with_agent(agent))
    }

    /// Writes kept images, in pool order, as an IDX dataset under `dataset/`.
    pub fn export(&self) -> Result<ExportSummary> {
        let log = self.out_file(DECISIONS_FILE);
        if !log.exists() {
            return Err(Error::Precondition(format!(
                "{} is missing; run curate first",
                log.display()
            )));
        }
        let membership = final_membership(&read_log(&log)?);
        let queue = self.queue().unwrap_or_default();
        let unresolved = queue
            .iter()
            .filter(|q| {
                q.members
                    .iter()
                    .any(|m| !membership.contains_key(&m.image_id))
            })
            .count();
        if unresolved > 0 {
            warn!("{unresolved} queue entries await review; their images are not exported");
        }
        let kept: HashMap<&str, LabelPath> = membership
            .iter()
            .filter_map(|(id, l)| l.map(|l| (id.as_str(), l)))
            .collect();
        let pool = self.pool()?;
        let tagger = self.tagger()?;
        let chosen: Vec<_> = pool
            .entries()?
            .into_iter()
            .filter(|e| kept.contains_key(e.id.as_str()))
            .collect();
        let planes: Vec<(u32, u32, Sample)> = chosen
            .par_iter()
            .map(|e| {
                let img = self.transform(&pool.load(e)?, &tagger)?;
                if img.channels != 1 {
                    return Err(Error::Pipeline(
                        "export needs a pipeline that ends in grayscale".into(),
                    ));
                }
                let l = kept[e.id.as_str()];
                let label = self.hierarchy.flat_label(l.main, l.sub).ok_or_else(|| {
                    Error::Dataset(format!("{}: label {l:?} is not in the hierarchy", e.id))
                })?;
                let sample = Sample {
                    image_id: e.id.clone(),
                    pixels: img.pixels,
                    main: l.main,
                    label,
                };
                Ok((img.width, img.height, sample))
            })
            .collect::<Result<_>>()?;
        let Some(&(width, height, _)) = planes.first() else {
            return Err(Error::Dataset("no kept images to export".into()));
        };
        if let Some((w, h, _)) = planes.iter().find(|p| (p.0, p.1) != (width, height)) {
            return Err(Error::Dataset(format!(
                "pipeline output sizes differ ({width}x{height} vs {w}x{h}); add a resize stage"
            )));
        }
        let samples: Vec<Sample> = planes.into_iter().map(|p| p.2).collect();
        let opts = ArtifactOptions {
            hierarchy: &self.hierarchy,
            pipeline: &self.config.pipeline,
            split_ratio: self.config.split_ratio,
            seed: self.config.seed,
            config_hash: self.config_hash(),
            created_at: self.timestamp()?,
        };
        let artifact = DatasetArtifact::build(&samples, width, height, &opts)?;
        let files = export::write_idx(&artifact, self.out_file(DATASET_DIR))?;
        Ok(ExportSummary {
            count: samples.len(),
            train: artifact.manifest.train_indices.len(),
            test: artifact.manifest.test_indices.len(),
            width,
            height,
            unresolved,
            files,
        })
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    append_jsonl(path, rows)
}
