//! Raw image acquisition: local folders, a keyword image-search API, content-hash
//! deduplication and the on-disk content store.

mod store;
mod web;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster;

pub(crate) use store::{append_jsonl, read_jsonl};
pub use store::{ContentStore, PoolEntry, PoolStore};
pub use web::{WebFetcher, WebSourceConfig, API_KEY_ENV};

/// Optional file in an ingest folder mapping file names to concept hints.
pub const HINTS_FILE: &str = "concept_hints.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    WebApi,
    LocalFolder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// SHA-256 hex of the decoded RGB stream (see [`content_id`]).
    pub id: String,
    pub source: ImageSource,
    pub keyword: String,
    #[serde(skip)]
    pub pixels: Vec<u8>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_hint: Option<String>,
    pub fetched_at: DateTime<Utc>,
}

impl ImageRecord {
    pub fn new(
        source: ImageSource,
        keyword: impl Into<String>,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        fetched_at: DateTime<Utc>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("zero-sized image".into()));
        }
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::Image(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width as usize * height as usize * 3
            )));
        }
        Ok(Self {
            id: content_id(width, height, &pixels),
            source,
            keyword: keyword.into(),
            pixels,
            width,
            height,
            concept_hint: None,
            fetched_at,
        })
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.concept_hint = Some(hint.into());
        self
    }
}

/// Content hash over the canonical decoded form: big-endian width and height followed
/// by the row-major RGB bytes. Re-encoded copies of the same picture collapse.
pub fn content_id(width: u32, height: u32, rgb: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(width.to_be_bytes());
    hasher.update(height.to_be_bytes());
    hasher.update(rgb);
    hex::encode(hasher.finalize())
}

/// Keeps the first record per id, preserving input order.
pub fn dedupe(records: Vec<ImageRecord>) -> Vec<ImageRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.id.clone()))
        .collect()
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Reads every decodable PNG/JPEG directly inside `dir`, ordered lexicographically by
/// file name. Undecodable files are skipped with a warning. `fetched_at` is the file's
/// modification time so an unchanged directory always yields identical records.
pub fn ingest_folder(dir: impl AsRef<Path>, keyword: &str) -> Result<Vec<ImageRecord>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let hints: BTreeMap<String, String> = match std::fs::read_to_string(dir.join(HINTS_FILE)) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(Error::io(dir.join(HINTS_FILE), e)),
    };

    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (w, h, rgb) = match raster::decode_rgb(&bytes) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping undecodable {}: {e}", path.display());
                continue;
            }
        };
        let mtime = std::fs::metadata(&path)
            .and_then(|m| m.modified())
            .map(DateTime::<Utc>::from)
            .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
        let mut record = ImageRecord::new(ImageSource::LocalFolder, keyword, w, h, rgb, mtime)?;
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        record.concept_hint = hints.get(name).cloned();
        out.push(record);
    }
    if out.is_empty() {
        log::warn!("no decodable images in {}", dir.display());
    }
    Ok(out)
}
