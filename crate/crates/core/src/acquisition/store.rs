use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{ImageRecord, ImageSource};
use crate::error::{Error, Result};
use crate::raster;

/// Content-addressed PNG store laid out as `<root>/<first two hash chars>/<hash>.png`.
#[derive(Debug, Clone)]
pub struct ContentStore {
    root: PathBuf,
}

impl ContentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        let prefix = id.get(..2).unwrap_or("__");
        self.root.join(prefix).join(format!("{id}.png"))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.path_for(id).is_file()
    }

    pub fn put(&self, id: &str, width: u32, height: u32, rgb: &[u8]) -> Result<PathBuf> {
        let path = self.path_for(id);
        if !path.is_file() {
            let dir = path.parent().expect("store paths have a parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let png = raster::encode_png(rgb, width, height, 3);
            // Write-then-rename so readers never see a partial file.
            let tmp = path.with_extension("png.tmp");
            fs::write(&tmp, png).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(path)
    }

    pub fn get(&self, id: &str) -> Result<(u32, u32, Vec<u8>)> {
        let path = self.path_for(id);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        raster::decode_rgb(&bytes)
    }

    pub fn png_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let path = self.path_for(id);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }
}

/// Reads a JSONL file into typed rows; a missing file yields no rows.
pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}

pub(crate) fn append_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Metadata row of the image pool index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub source: ImageSource,
    pub keyword: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_hint: Option<String>,
    pub fetched_at: DateTime<Utc>,
}

/// The working pool of a run: a [`ContentStore`] plus an `index.jsonl` of record
/// metadata in insertion order. Single writer; readers may run concurrently.
#[derive(Debug, Clone)]
pub struct PoolStore {
    images: ContentStore,
    index: PathBuf,
}

impl PoolStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let images = ContentStore::open(&root)?;
        Ok(Self {
            index: root.join("index.jsonl"),
            images,
        })
    }

    pub fn images(&self) -> &ContentStore {
        &self.images
    }

    pub fn entries(&self) -> Result<Vec<PoolEntry>> {
        read_jsonl(&self.index)
    }

    /// Adds records not already present; returns how many were new.
    pub fn add(&self, records: &[ImageRecord]) -> Result<usize> {
        let known: HashSet<String> = self.entries()?.into_iter().map(|e| e.id).collect();
        let mut fresh = Vec::new();
        let mut batch = HashSet::new();
        for r in records {
            if known.contains(&r.id) || !batch.insert(r.id.clone()) {
                continue;
            }
            self.images.put(&r.id, r.width, r.height, &r.pixels)?;
            fresh.push(PoolEntry {
                id: r.id.clone(),
                source: r.source,
                keyword: r.keyword.clone(),
                width: r.width,
                height: r.height,
                concept_hint: r.concept_hint.clone(),
                fetched_at: r.fetched_at,
            });
        }
        append_jsonl(&self.index, &fresh)?;
        Ok(fresh.len())
    }

    pub fn load(&self, entry: &PoolEntry) -> Result<ImageRecord> {
        let (width, height, pixels) = self.images.get(&entry.id)?;
        Ok(ImageRecord {
            id: entry.id.clone(),
            source: entry.source,
            keyword: entry.keyword.clone(),
            pixels,
            width,
            height,
            concept_hint: entry.concept_hint.clone(),
            fetched_at: entry.fetched_at,
        })
    }

    pub fn load_all(&self) -> Result<Vec<ImageRecord>> {
        self.entries()?.iter().map(|e| self.load(e)).collect()
    }
}

/// Row of the URL cache index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CachedUrl {
    pub url: String,
    /// `None` marks a body that did not decode, so it is not fetched again.
    pub id: Option<String>,
    pub fetched_at: DateTime<Utc>,
}

pub(crate) enum CachedImage {
    Hit(CachedUrl, u32, u32, Vec<u8>),
    Undecodable,
    Miss,
}

/// URL-keyed response cache used by the web source: image bodies live in a
/// [`ContentStore`], search pages under `pages/`, and `index.jsonl` maps URL to id.
#[derive(Debug)]
pub(crate) struct UrlCache {
    images: ContentStore,
    index_path: PathBuf,
    pages: PathBuf,
    index: HashMap<String, CachedUrl>,
}

impl UrlCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let images = ContentStore::open(&root)?;
        let pages = root.join("pages");
        fs::create_dir_all(&pages).map_err(|e| Error::io(&pages, e))?;
        let index_path = root.join("index.jsonl");
        let index = read_jsonl::<CachedUrl>(&index_path)?
            .into_iter()
            .map(|row| (row.url.clone(), row))
            .collect();
        Ok(Self {
            images,
            index_path,
            pages,
            index,
        })
    }

    fn page_path(&self, url: &str) -> PathBuf {
        self.pages
            .join(format!("{}.json", super::content_id(0, 0, url.as_bytes())))
    }

    pub fn page(&self, url: &str) -> Option<String> {
        fs::read_to_string(self.page_path(url)).ok()
    }

    pub fn put_page(&self, url: &str, body: &str) -> Result<()> {
        let path = self.page_path(url);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    pub fn image(&self, url: &str) -> CachedImage {
        let Some(row) = self.index.get(url) else {
            return CachedImage::Miss;
        };
        let Some(id) = &row.id else {
            return CachedImage::Undecodable;
        };
        match self.images.get(id) {
            Ok((w, h, px)) => CachedImage::Hit(row.clone(), w, h, px),
            Err(_) => CachedImage::Miss,
        }
    }

    pub fn put_image(&mut self, url: &str, record: &ImageRecord) -> Result<()> {
        self.images
            .put(&record.id, record.width, record.height, &record.pixels)?;
        self.put_row(CachedUrl {
            url: url.to_string(),
            id: Some(record.id.clone()),
            fetched_at: record.fetched_at,
        })
    }

    pub fn put_undecodable(&mut self, url: &str, at: DateTime<Utc>) -> Result<()> {
        self.put_row(CachedUrl {
            url: url.to_string(),
            id: None,
            fetched_at: at,
        })
    }

    fn put_row(&mut self, row: CachedUrl) -> Result<()> {
        append_jsonl(&self.index_path, std::slice::from_ref(&row))?;
        self.index.insert(row.url.clone(), row);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_add_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let pool = PoolStore::open(dir.path()).unwrap();
        let r = ImageRecord::new(
            ImageSource::LocalFolder,
            "k",
            3,
            2,
            (0..18).collect(),
            DateTime::<Utc>::UNIX_EPOCH,
        )
        .unwrap()
        .with_hint("cheese");
        assert_eq!(pool.add(&[r.clone(), r.clone()]).unwrap(), 1);
        assert_eq!(pool.add(std::slice::from_ref(&r)).unwrap(), 0);
        let back = pool.load_all().unwrap();
        assert_eq!(back, vec![r.clone()]);
        assert!(pool
            .images()
            .path_for(&r.id)
            .ends_with(format!("{}/{}.png", &r.id[..2], r.id)));
    }
}
