//! IDX dataset files plus a JSON manifest, and the stratified train/test split.

mod idx;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{CategoryHierarchy, LabelEntry};
use crate::transforms::Pipeline;

pub use idx::{
    read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages, IMAGES_MAGIC,
    LABELS_MAGIC, WIDE_LABELS_MAGIC,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of sample indices by `labels`.
///
/// Each class is shuffled with one seeded generator (classes in ascending order) and
/// `round(ratio · n_c)` samples go to train, clamped so both sides get at least one.
/// A class with a single sample goes to train with a warning. Both lists are sorted.
pub fn split_dataset(labels: &[usize], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class {
        if members.len() < 2 {
            warn!("class {class} has a single sample; it is placed in the training split");
            train.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let k = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub created_at: DateTime<Utc>,
    /// SHA-256 of the canonical run configuration.
    pub config_hash: String,
    pub hierarchy: CategoryHierarchy,
    pub labels: Vec<LabelEntry>,
    pub pipeline: Pipeline,
    pub normalization: Option<Normalization>,
    pub width: u32,
    pub height: u32,
    pub count: usize,
    pub main_counts: Vec<u64>,
    pub sub_counts: Vec<u64>,
    pub split_ratio: f64,
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Source image id per sample.
    pub image_ids: Vec<String>,
}

/// One curated image ready for export.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    /// `height x width` grayscale plane.
    pub pixels: Vec<u8>,
    pub main: usize,
    /// Flattened label.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetArtifact {
    pub width: u32,
    pub height: u32,
    /// `N x height x width`, row-major.
    pub images: Vec<u8>,
    pub main_labels: Vec<u8>,
    /// Flattened labels.
    pub sub_labels: Vec<u16>,
    pub manifest: Manifest,
}

pub struct ArtifactOptions<'a> {
    pub hierarchy: &'a CategoryHierarchy,
    pub pipeline: &'a Pipeline,
    pub split_ratio: f64,
    pub seed: u64,
    pub config_hash: String,
    pub created_at: DateTime<Utc>,
}

impl DatasetArtifact {
    pub fn build(
        samples: &[Sample],
        width: u32,
        height: u32,
        opts: &ArtifactOptions,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dataset("no samples to export".into()));
        }
        let plane = width as usize * height as usize;
        let labels = opts.hierarchy.flatten_labels();
        let mains = opts.hierarchy.main_count();
        if mains > 256 {
            return Err(Error::Dataset(format!(
                "{mains} main classes do not fit in u8 labels"
            )));
        }
        let mut main_counts = vec![0u64; mains];
        let mut sub_counts = vec![0u64; labels.len()];
        let mut images = Vec::with_capacity(samples.len() * plane);
        for s in samples {
            if s.pixels.len() != plane {
                return Err(Error::Dataset(format!(
                    "sample {} has {} pixels, expected {width}x{height}",
                    s.image_id,
                    s.pixels.len()
                )));
            }
            match labels.get(s.label) {
                Some(entry) if entry.main_index == s.main => {}
                _ => {
                    return Err(Error::Dataset(format!(
                        "sample {} has inconsistent labels main={} flat={}",
                        s.image_id, s.main, s.label
                    )))
                }
            }
            main_counts[s.main] += 1;
            sub_counts[s.label] += 1;
            images.extend_from_slice(&s.pixels);
        }
        let mains_per_sample: Vec<usize> = samples.iter().map(|s| s.main).collect();
        let split = split_dataset(&mains_per_sample, opts.split_ratio, opts.seed)?;
        let normalization = opts.pipeline.stages().iter().find_map(|s| match *s {
            crate::transforms::Stage::Normalize { mu, sigma } => Some(Normalization { mu, sigma }),
            _ => None,
        });
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: opts.created_at,
            config_hash: opts.config_hash.clone(),
            hierarchy: opts.hierarchy.clone(),
            labels,
            pipeline: opts.pipeline.clone(),
            normalization,
            width,
            height,
            count: samples.len(),
            main_counts,
            sub_counts,
            split_ratio: opts.split_ratio,
            seed: opts.seed,
            train_indices: split.train,
            test_indices: split.test,
            image_ids: samples.iter().map(|s| s.image_id.clone()).collect(),
        };
        Ok(Self {
            width,
            height,
            images,
            main_labels: samples.iter().map(|s| s.main as u8).collect(),
            sub_labels: samples.iter().map(|s| s.label as u16).collect(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.main_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main_labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let plane = self.width as usize * self.height as usize;
        &self.images[i * plane..(i + 1) * plane]
    }

    fn subset(&self, indices: &[usize]) -> (Vec<u8>, Vec<u8>, Vec<u16>) {
        let mut images =
            Vec::with_capacity(indices.len() * self.width as usize * self.height as usize);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        (
            images,
            indices.iter().map(|&i| self.main_labels[i]).collect(),
            indices.iter().map(|&i| self.sub_labels[i]).collect(),
        )
    }
}

pub fn file_names(split: &str) -> [String; 3] {
    [
        format!("{split}-images.idx3-ubyte"),
        format!("{split}-labels.idx1-ubyte"),
        format!("{split}-sublabels.idx1-ubyte"),
    ]
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes train/test IDX files and `manifest.json` into `dir`.
pub fn write_idx(artifact: &DatasetArtifact, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if artifact.is_empty() {
        return Err(Error::Dataset("refusing to write an empty dataset".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let wide = artifact.manifest.labels.len() > 256;
    let mut written = Vec::new();
    let m = &artifact.manifest;
    for (split, indices) in [("train", &m.train_indices), ("test", &m.test_indices)] {
        let (images, mains, subs) = artifact.subset(indices);
        let [img_name, lab_name, sub_name] = file_names(split);
        let files = [
            (
                img_name,
                write_idx_images(&images, indices.len(), artifact.height, artifact.width),
            ),
            (
                lab_name,
                write_idx_labels(&mains.iter().map(|&v| v as u16).collect::<Vec<_>>(), false)?,
            ),
            (sub_name, write_idx_labels(&subs, wide)?),
        ];
        for (name, bytes) in files {
            let path = dir.join(name);
            write_file(&path, &bytes)?;
            written.push(path);
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&artifact.manifest).expect("manifest serializes");
    json.push(b'\n');
    write_file(&path, &json)?;
    written.push(path);
    Ok(written)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a directory written by [`write_idx`], restoring the original sample order.
pub fn read_idx(dir: impl AsRef<Path>) -> Result<DatasetArtifact> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_slice(&read_file(&manifest_path)?)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let n = manifest.count;
    let plane = manifest.width as usize * manifest.height as usize;
    let mut images = vec![0u8; n * plane];
    let mut mains = vec![0u8; n];
    let mut subs = vec![0u16; n];
    let mut seen = vec![false; n];
    for (split, indices) in [
        ("train", &manifest.train_indices),
        ("test", &manifest.test_indices),
    ] {
        let [img_name, lab_name, sub_name] = file_names(split);
        let imgs = read_idx_images(&read_file(&dir.join(&img_name))?, &img_name)?;
        let labs = read_idx_labels(&read_file(&dir.join(&lab_name))?, &lab_name)?;
        let sl = read_idx_labels(&read_file(&dir.join(&sub_name))?, &sub_name)?;
        if (imgs.rows, imgs.cols) != (manifest.height, manifest.width) {
            return Err(Error::Dataset(format!(
                "{img_name} holds {}x{} images, manifest says {}x{}",
                imgs.cols, imgs.rows, manifest.width, manifest.height
            )));
        }
        for (name, count) in [
            (&img_name, imgs.count),
            (&lab_name, labs.len()),
            (&sub_name, sl.len()),
        ] {
            if count != indices.len() {
                return Err(Error::Dataset(format!(
                    "{name} holds {count} items, manifest lists {} {split} samples",
                    indices.len()
                )));
            }
        }
        for (k, &i) in indices.iter().enumerate() {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Dataset(format!(
                    "manifest {split} index {i} is out of range or repeated"
                )));
            }
            images[i * plane..(i + 1) * plane]
                .copy_from_slice(&imgs.pixels[k * plane..(k + 1) * plane]);
            mains[i] = u8::try_from(labs[k]).map_err(|_| {
                Error::Dataset(format!("{lab_name}: main label {} exceeds u8", labs[k]))
            })?;
            subs[i] = sl[k];
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Dataset(
            "manifest split lists do not cover every sample".into(),
        ));
    }
    Ok(DatasetArtifact {
        width: manifest.width,
        height: manifest.height,
        images,
        main_labels: mains,
        sub_labels: subs,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_split_counts() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let s = split_dataset(&labels, 0.8, 11).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        for c in 0..4 {
            assert_eq!(s.test.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
        assert_eq!(s, split_dataset(&labels, 0.8, 11).unwrap());
    }

    #[test]
    fn tiny_splits() {
        assert_eq!(split_dataset(&[0, 0], 0.5, 1).unwrap().train.len(), 1);
        let s = split_dataset(&[0, 1, 1], 0.8, 1).unwrap();
        assert!(s.train.contains(&0));
        assert_eq!(s.test.len(), 1);
        assert!(split_dataset(&[0], 1.0, 1).is_err());
    }
}
