//! Seeded synthetic image folders for demos and tests.
//!
//! One folder per main category, laid out for [`crate::workflow::FolderSource`]. Each
//! image is a bright shape on a dark background: the main category picks the shape
//! and the subcategory its size. Per-pixel noise gives every file its own content id. The
//! `concept_hints.json` of each folder gives the stub embedder a caption: the
//! subcategory name and traits for most images, unrelated words for every
//! `clutter_every`-th one.
//!
//! [`clustered_pool`] builds analyzed pool items directly, without images, for
//! exercising fast mode.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::HINTS_FILE;
use crate::curation::modes::PoolItem;
use crate::error::{Error, Result};
use crate::hierarchy::CategoryHierarchy;
use crate::raster;
use crate::semantics::{
    CategorizationResult, Embedding, ScoreEntry, SubcategoryScore, VisualAttributes,
};

pub const FIXTURE_SIDE: u32 = 32;
const CLUTTER: &str = "blurry street scene with parked cars";

#[derive(Debug, Clone, Copy)]
pub struct FolderSpec {
    pub per_subcategory: usize,
    /// Every n-th image gets an unrelated caption; 0 disables clutter.
    pub clutter_every: usize,
    pub seed: u64,
}

/// Disk, square, ring or horizontal bar of half-size `r`, by `shape % 4`.
fn shape(rng: &mut ChaCha8Rng, shape: usize, r: f64) -> Vec<u8> {
    let side = FIXTURE_SIDE as usize;
    let c = side as f64 / 2.0;
    let mut px = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
            let d = (dx * dx + dy * dy).sqrt();
            let inside = match shape % 4 {
                0 => d <= r,
                1 => dx.abs() <= r && dy.abs() <= r,
                2 => d <= r + 2.0 && d >= r - 2.0,
                _ => dx.abs() <= r + 3.0 && dy.abs() <= 3.0,
            };
            let base: i32 = if inside { 220 } else { 30 };
            for _ in 0..3 {
                px.push((base + rng.gen_range(-20..=20)).clamp(0, 255) as u8);
            }
        }
    }
    px
}

/// Writes the folders under `root`; returns the number of images written.
pub fn write_image_folders(
    root: &Path,
    hierarchy: &CategoryHierarchy,
    spec: FolderSpec,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut written = 0;
    for (mi, main) in hierarchy.categories.iter().enumerate() {
        let dir = root.join(&main.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut hints = BTreeMap::new();
        for (si, sub) in main.subcategories.iter().enumerate() {
            let size = 5.0 + 3.0 * (si % 3) as f64;
            for k in 0..spec.per_subcategory {
                let name = format!("{si:02}-{k:03}.png");
                let px = shape(&mut rng, mi, size);
                let png = raster::encode_png(&px, FIXTURE_SIDE, FIXTURE_SIDE, 3);
                let path = dir.join(&name);
                std::fs::write(&path, png).map_err(|e| Error::io(&path, e))?;
                let clutter = spec.clutter_every > 0 && (k + 1) % spec.clutter_every == 0;
                let hint = if clutter {
                    CLUTTER.to_string()
                } else {
                    let traits: Vec<&str> =
                        sub.characteristics.iter().map(|c| c.phrase()).collect();
                    format!("{} {}", sub.name, traits.join(" "))
                };
                hints.insert(name, hint);
                written += 1;
            }
        }
        let path = dir.join(HINTS_FILE);
        let text = serde_json::to_string_pretty(&hints).expect("hints serialize");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(written)
}

pub const CLUSTER_DIM: usize = 32;

/// `clusters` groups of `per_cluster` items. Group `c` sits on basis vector `c` with
/// ±0.02 jitter, predicts main category `c % main_count`, and has confidence in
/// [0.6, 0.7], inside the review band.
pub fn clustered_pool(
    hierarchy: &CategoryHierarchy,
    clusters: usize,
    per_cluster: usize,
    seed: u64,
) -> Vec<PoolItem> {
    assert!(clusters <= CLUSTER_DIM, "at most {CLUSTER_DIM} clusters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = hierarchy.flatten_labels();
    let mut out = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        let main = c % hierarchy.main_count();
        for k in 0..per_cluster {
            let mut v: Vec<f64> = (0..CLUSTER_DIM)
                .map(|_| rng.gen_range(-0.02..0.02))
                .collect();
            v[c] += 1.0;
            let confidence = rng.gen_range(0.6..0.7);
            let breakdown = labels
                .iter()
                .enumerate()
                .map(|(label, l)| {
                    let t = if l.main_index == main && l.sub_index == 0 {
                        confidence
                    } else {
                        confidence / 2.0
                    };
                    ScoreEntry {
                        main: l.main_index,
                        sub: l.sub_index,
                        label,
                        score: SubcategoryScore {
                            text_sim: t,
                            char_sim: t,
                            visual_sim: 0.5,
                            total: t,
                        },
                    }
                })
                .collect();
            out.push(PoolItem {
                id: format!("c{c:02}-{k:03}"),
                result: CategorizationResult {
                    best_main: main,
                    best_sub: 0,
                    confidence,
                    eligible: true,
                    breakdown,
                },
                embedding: Embedding::normalized(v).expect("nonzero vector"),
                visual: VisualAttributes {
                    brightness: 0.5,
                    contrast: 0.2,
                    edge_density: 0.1,
                },
            });
        }
    }
    out
}
