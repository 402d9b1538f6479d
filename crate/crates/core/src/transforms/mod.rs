//! Deterministic image stages and their composition into pipelines.
//!
//! Every [`Stage`] is a pure function on [`AnnotatedImage`]. A [`Pipeline`] is an
//! ordered list of stages whose channel/size compatibility is checked when it is
//! built, so applying a valid pipeline only fails on data it was not built for
//! (wrong channel count, crop larger than the image).

mod otsu;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster;
use crate::semantics::CategorizationResult;

pub use otsu::otsu_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrayMode {
    /// `round((R + G + B) / 3)`
    Mean,
    /// `round(0.299 R + 0.587 G + 0.114 B)`
    #[default]
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMode {
    Fixed(u8),
    Otsu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    SemanticTag,
    BackgroundRemoval,
    Resize {
        width: u32,
        height: u32,
    },
    CenterCrop {
        width: u32,
        height: u32,
    },
    Grayscale {
        #[serde(default)]
        mode: GrayMode,
    },
    Binarize {
        mode: BinarizeMode,
    },
    Normalize {
        mu: f64,
        sigma: f64,
    },
    /// Counter-clockwise as displayed, about the image center; zero fill.
    Rotate {
        degrees: f64,
    },
    ContrastStretch,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::SemanticTag => "semantic_tag",
            Stage::BackgroundRemoval => "background_removal",
            Stage::Resize { .. } => "resize",
            Stage::CenterCrop { .. } => "center_crop",
            Stage::Grayscale { .. } => "grayscale",
            Stage::Binarize { .. } => "binarize",
            Stage::Normalize { .. } => "normalize",
            Stage::Rotate { .. } => "rotate",
            Stage::ContrastStretch => "contrast_stretch",
        }
    }

    fn check_params(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Pipeline(msg));
        match *self {
            Stage::Resize { width, height } | Stage::CenterCrop { width, height }
                if width == 0 || height == 0 =>
            {
                bad(format!(
                    "{} needs dimensions >= 1, got {width}x{height}",
                    self.name()
                ))
            }
            Stage::Normalize { mu, sigma }
                if !mu.is_finite() || !(sigma.is_finite() && sigma > 0.0) =>
            {
                bad(format!(
                    "normalize needs finite mu and sigma > 0, got ({mu}, {sigma})"
                ))
            }
            Stage::Rotate { degrees } if !degrees.is_finite() => {
                bad("rotate angle must be finite".into())
            }
            _ => Ok(()),
        }
    }

    /// True for stages that never change pixel data, independent of plug-ins.
    fn is_pixel_identity(&self, ctx: &StageContext) -> bool {
        match *self {
            Stage::SemanticTag => true,
            Stage::BackgroundRemoval => ctx.matting.is_none(),
            Stage::Rotate { degrees } => degrees % 360.0 == 0.0,
            _ => false,
        }
    }
}

/// Channel layout known at a point of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelState {
    Any,
    Rgb,
    Gray,
}

/// Real-valued plane written by [`Stage::Normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPlane {
    pub mu: f64,
    pub sigma: f64,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
    #[serde(default)]
    pub semantic: Option<CategorizationResult>,
    #[serde(default)]
    pub normalized: Option<NormalizedPlane>,
}

impl AnnotatedImage {
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        channels: u8,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if width == 0
            || height == 0
            || pixels.len() != width as usize * height as usize * channels as usize
        {
            return Err(Error::Image(format!(
                "{width}x{height}x{channels} does not match a buffer of {} bytes",
                pixels.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            channels,
            pixels,
            semantic: None,
            normalized: None,
        })
    }

    pub fn from_record(record: &crate::acquisition::ImageRecord) -> Self {
        Self {
            id: record.id.clone(),
            width: record.width,
            height: record.height,
            channels: 3,
            pixels: record.pixels.clone(),
            semantic: None,
            normalized: None,
        }
    }

    fn same_pixels_shape(&self, other: &AnnotatedImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Attaches a categorization to an image (the `SemanticTag` stage).
pub trait SemanticTagger: Send + Sync {
    fn tag(&self, image: &AnnotatedImage) -> Result<Option<CategorizationResult>>;
}

/// Tagger backed by precomputed results keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct LookupTagger(pub HashMap<String, CategorizationResult>);

impl SemanticTagger for LookupTagger {
    fn tag(&self, image: &AnnotatedImage) -> Result<Option<CategorizationResult>> {
        Ok(self.0.get(&image.id).cloned())
    }
}

/// Background matting plug-in; must return a buffer of the same shape.
pub trait Matting: Send + Sync {
    fn remove_background(&self, image: &AnnotatedImage) -> Result<Vec<u8>>;
}

#[derive(Clone, Copy, Default)]
pub struct StageContext<'a> {
    pub tagger: Option<&'a dyn SemanticTagger>,
    pub matting: Option<&'a dyn Matting>,
}

fn require_gray(stage: &Stage, x: &AnnotatedImage) -> Result<()> {
    if x.channels != 1 {
        return Err(Error::Pipeline(format!(
            "{} requires a single-channel image, got {} channels",
            stage.name(),
            x.channels
        )));
    }
    Ok(())
}

pub fn gray_weighted(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn gray_mean(r: u8, g: u8, b: u8) -> u8 {
    ((r as u32 + g as u32 + b as u32 + 1) / 3) as u8
}

fn stretch(pixels: &mut [u8], channels: usize) {
    for c in 0..channels {
        let channel = pixels.iter().skip(c).step_by(channels);
        let (lo, hi) = channel.fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi == lo {
            continue;
        }
        let range = (hi - lo) as u32;
        for v in pixels.iter_mut().skip(c).step_by(channels) {
            *v = (((*v - lo) as u32 * 510 + range) / (2 * range)) as u8;
        }
    }
}

fn rotate(x: &AnnotatedImage, degrees: f64) -> Vec<u8> {
    let (w, h, ch) = (x.width as usize, x.height as usize, x.channels as usize);
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let sample = |xx: isize, yy: isize, k: usize| -> f64 {
        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
            0.0
        } else {
            x.pixels[(yy as usize * w + xx as usize) * ch + k] as f64
        }
    };
    let mut out = Vec::with_capacity(x.pixels.len());
    for oy in 0..h {
        for ox in 0..w {
            let dx = ox as f64 + 0.5 - cx;
            let dy = oy as f64 + 0.5 - cy;
            let sx = c * dx - s * dy + cx - 0.5;
            let sy = s * dx + c * dy + cy - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for k in 0..ch {
                let top = sample(x0, y0, k) * (1.0 - fx) + sample(x0 + 1, y0, k) * fx;
                let bottom = sample(x0, y0 + 1, k) * (1.0 - fx) + sample(x0 + 1, y0 + 1, k) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Applies one stage.
pub fn apply_stage(
    stage: &Stage,
    x: &AnnotatedImage,
    ctx: &StageContext,
) -> Result<AnnotatedImage> {
    stage.check_params()?;
    let mut y = x.clone();
    let (w, h, ch) = (x.width as usize, x.height as usize, x.channels as usize);
    match *stage {
        Stage::SemanticTag => {
            if let Some(tagger) = ctx.tagger {
                if let Some(result) = tagger.tag(x)? {
                    y.semantic = Some(result);
                }
            }
        }
        Stage::BackgroundRemoval => {
            if let Some(matting) = ctx.matting {
                let pixels = matting.remove_background(x)?;
                if pixels.len() != x.pixels.len() {
                    return Err(Error::Pipeline(
                        "background removal changed the buffer size".into(),
                    ));
                }
                y.pixels = pixels;
            }
        }
        Stage::Resize { width, height } => {
            y.pixels =
                raster::resize_bilinear(&x.pixels, w, h, ch, width as usize, height as usize);
            y.width = width;
            y.height = height;
        }
        Stage::CenterCrop { width, height } => {
            if width > x.width || height > x.height {
                return Err(Error::Pipeline(format!(
                    "crop {width}x{height} is larger than the {}x{} image",
                    x.width, x.height
                )));
            }
            let top = ((x.height - height) / 2) as usize;
            let left = ((x.width - width) / 2) as usize;
            let row = width as usize * ch;
            y.pixels = (top..top + height as usize)
                .flat_map(|r| {
                    let start = (r * w + left) * ch;
                    x.pixels[start..start + row].iter().copied()
                })
                .collect();
            y.width = width;
            y.height = height;
        }
        Stage::Grayscale { mode } => {
            if ch == 3 {
                let f = match mode {
                    GrayMode::Mean => gray_mean,
                    GrayMode::Weighted => gray_weighted,
                };
                y.pixels = x
                    .pixels
                    .chunks_exact(3)
                    .map(|p| f(p[0], p[1], p[2]))
                    .collect();
                y.channels = 1;
            }
        }
        Stage::Binarize { mode } => {
            require_gray(stage, x)?;
            let theta = match mode {
                BinarizeMode::Fixed(t) => t,
                BinarizeMode::Otsu => otsu_threshold(&x.pixels),
            };
            y.pixels = x
                .pixels
                .iter()
                .map(|&v| if v > theta { 255 } else { 0 })
                .collect();
        }
        Stage::Normalize { mu, sigma } => {
            require_gray(stage, x)?;
            let values = x
                .pixels
                .iter()
                .map(|&v| ((v as f64 / 255.0 - mu) / sigma) as f32)
                .collect();
            y.normalized = Some(NormalizedPlane { mu, sigma, values });
        }
        Stage::Rotate { degrees } => {
            if degrees % 360.0 != 0.0 {
                y.pixels = rotate(x, degrees);
            }
        }
        Stage::ContrastStretch => stretch(&mut y.pixels, ch),
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Stage>", into = "Vec<Stage>")]
pub struct Pipeline {
    stages: Vec<Stage>,
}

impl TryFrom<Vec<Stage>> for Pipeline {
    type Error = Error;
    fn try_from(stages: Vec<Stage>) -> Result<Self> {
        Pipeline::new(stages)
    }
}

impl From<Pipeline> for Vec<Stage> {
    fn from(p: Pipeline) -> Self {
        p.stages
    }
}

/// Channel state after `stages`, or the first incompatibility found.
fn check_stages(
    stages: &[Stage],
    mut state: ChannelState,
    mut normalized: bool,
) -> Result<(ChannelState, bool)> {
    for (i, stage) in stages.iter().enumerate() {
        stage.check_params()?;
        let fail = |why: &str| {
            Err(Error::Pipeline(format!(
                "stage {i} ({}): {why}",
                stage.name()
            )))
        };
        if normalized && !matches!(stage, Stage::SemanticTag) {
            return fail("no pixel stage may follow normalize");
        }
        match stage {
            Stage::Grayscale { .. } => state = ChannelState::Gray,
            Stage::Binarize { .. } | Stage::Normalize { .. } => {
                if state == ChannelState::Rgb {
                    return fail("requires grayscale input");
                }
                state = ChannelState::Gray;
                normalized |= matches!(stage, Stage::Normalize { .. });
            }
            _ => {}
        }
    }
    Ok((state, normalized))
}

impl Pipeline {
    /// Validates assuming an input of unknown channel count.
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        Self::for_input(stages, ChannelState::Any)
    }

    pub fn for_input(stages: Vec<Stage>, input: ChannelState) -> Result<Self> {
        check_stages(&stages, input, false)?;
        Ok(Self { stages })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// SemanticTag, Resize(64,64), CenterCrop(28,28), Grayscale(weighted), then
    /// Binarize(otsu) or Normalize(0.5, 0.5).
    pub fn default_chain(normalize: bool) -> Self {
        let last = if normalize {
            Stage::Normalize {
                mu: 0.5,
                sigma: 0.5,
            }
        } else {
            Stage::Binarize {
                mode: BinarizeMode::Otsu,
            }
        };
        Self::new(vec![
            Stage::SemanticTag,
            Stage::Resize {
                width: 64,
                height: 64,
            },
            Stage::CenterCrop {
                width: 28,
                height: 28,
            },
            Stage::Grayscale {
                mode: GrayMode::Weighted,
            },
            last,
        ])
        .expect("default chain is valid")
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Channel state produced for an input of the given state.
    pub fn output_state(&self, input: ChannelState) -> Result<ChannelState> {
        Ok(check_stages(&self.stages, input, false)?.0)
    }

    pub fn normalizes(&self) -> bool {
        self.stages
            .iter()
            .any(|s| matches!(s, Stage::Normalize { .. }))
    }

    /// Output `(width, height)` for a given input size, if every stage fits.
    pub fn output_size(&self, mut width: u32, mut height: u32) -> Option<(u32, u32)> {
        for stage in &self.stages {
            match *stage {
                Stage::Resize {
                    width: w,
                    height: h,
                } => (width, height) = (w, h),
                Stage::CenterCrop {
                    width: w,
                    height: h,
                } => {
                    if w > width || h > height {
                        return None;
                    }
                    (width, height) = (w, h);
                }
                _ => {}
            }
        }
        Some((width, height))
    }

    /// `self` followed by `next`; fails when `next` cannot consume `self`'s output.
    pub fn compose(&self, next: &Pipeline) -> Result<Pipeline> {
        let (state, normalized) = check_stages(&self.stages, ChannelState::Any, false)?;
        check_stages(&next.stages, state, normalized)
            .map_err(|e| Error::Pipeline(format!("incompatible at composition seam: {e}")))?;
        let mut stages = self.stages.clone();
        stages.extend(next.stages.iter().cloned());
        Ok(Pipeline { stages })
    }

    /// True when every stage keeps size and channel count, so the pipeline maps
    /// a dataset onto itself (label-preserving augmentation).
    pub fn is_endomorphic(&self) -> bool {
        self.stages.iter().all(|s| {
            matches!(
                s,
                Stage::Rotate { .. } | Stage::ContrastStretch | Stage::BackgroundRemoval
            )
        })
    }

    pub fn apply(&self, x: &AnnotatedImage, ctx: &StageContext) -> Result<AnnotatedImage> {
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = apply_stage(stage, &cur, ctx)?;
        }
        Ok(cur)
    }

    /// Applies the pipeline to each image in parallel; output order follows input.
    pub fn apply_batch(
        &self,
        xs: &[AnnotatedImage],
        ctx: &StageContext,
    ) -> Result<Vec<AnnotatedImage>> {
        xs.par_iter().map(|x| self.apply(x, ctx)).collect()
    }
}

/// Appends every image transformed by each endomorphic augmentation, after the originals.
/// The returned `source` vector gives the index of the original for each output.
pub fn augment(
    images: &[AnnotatedImage],
    augmentations: &[Pipeline],
    ctx: &StageContext,
) -> Result<(Vec<AnnotatedImage>, Vec<usize>)> {
    if let Some(p) = augmentations.iter().find(|p| !p.is_endomorphic()) {
        return Err(Error::Pipeline(format!(
            "augmentation {:?} changes image shape",
            p.stages().iter().map(Stage::name).collect::<Vec<_>>()
        )));
    }
    let mut out = images.to_vec();
    let mut source: Vec<usize> = (0..images.len()).collect();
    for (k, p) in augmentations.iter().enumerate() {
        for (i, img) in p.apply_batch(images, ctx)?.into_iter().enumerate() {
            out.push(AnnotatedImage {
                id: format!("{}#aug{k}", img.id),
                ..img
            });
            source.push(i);
        }
    }
    Ok((out, source))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDelta {
    pub index: usize,
    pub left: Option<String>,
    pub right: Option<String>,
    /// Largest absolute pixel difference across inputs after this aligned step;
    /// `None` when the intermediate shapes differ.
    pub max_delta: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDelta {
    pub id: String,
    pub max_delta: Option<u8>,
    pub mean_delta: Option<f64>,
    pub semantic_equal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub stages: Vec<StageDelta>,
    pub images: Vec<ImageDelta>,
}

impl DivergenceReport {
    /// Largest end-to-end pixel delta; `None` if any output shapes differ.
    pub fn max_delta(&self) -> Option<u8> {
        self.images
            .iter()
            .try_fold(0u8, |m, d| d.max_delta.map(|v| m.max(v)))
    }

    pub fn is_identical(&self) -> bool {
        self.max_delta() == Some(0) && self.images.iter().all(|d| d.semantic_equal)
    }
}

fn pixel_delta(a: &AnnotatedImage, b: &AnnotatedImage) -> Option<(u8, f64)> {
    if !a.same_pixels_shape(b) {
        return None;
    }
    let (max, sum) = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .fold((0u8, 0u64), |(m, s), (&p, &q)| {
            let d = p.abs_diff(q);
            (m.max(d), s + d as u64)
        });
    Some((max, sum as f64 / a.pixels.len() as f64))
}

/// Runs both pipelines side by side. Stages that cannot change pixels are dropped
/// before alignment, so pipelines differing only by identity stages report zero
/// stage deltas.
pub fn compare_pipelines(
    left: &Pipeline,
    right: &Pipeline,
    inputs: &[AnnotatedImage],
    ctx: &StageContext,
) -> Result<DivergenceReport> {
    let trim = |p: &Pipeline| -> Vec<Stage> {
        p.stages
            .iter()
            .filter(|s| !s.is_pixel_identity(ctx))
            .cloned()
            .collect()
    };
    let (ls, rs) = (trim(left), trim(right));
    let steps = ls.len().max(rs.len());
    let mut stages: Vec<StageDelta> = (0..steps)
        .map(|i| StageDelta {
            index: i,
            left: ls.get(i).map(|s| s.name().to_string()),
            right: rs.get(i).map(|s| s.name().to_string()),
            max_delta: Some(0),
        })
        .collect();
    let mut images = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (mut a, mut b) = (x.clone(), x.clone());
        for (i, delta) in stages.iter_mut().enumerate() {
            if let Some(s) = ls.get(i) {
                a = apply_stage(s, &a, ctx)?;
            }
            if let Some(s) = rs.get(i) {
                b = apply_stage(s, &b, ctx)?;
            }
            delta.max_delta = match (delta.max_delta, pixel_delta(&a, &b)) {
                (Some(m), Some((d, _))) => Some(m.max(d)),
                _ => None,
            };
        }
        let fa = left.apply(x, ctx)?;
        let fb = right.apply(x, ctx)?;
        let d = pixel_delta(&fa, &fb);
        images.push(ImageDelta {
            id: x.id.clone(),
            max_delta: d.map(|d| d.0),
            mean_delta: d.map(|d| d.1),
            semantic_equal: fa.semantic == fb.semantic,
        });
    }
    Ok(DivergenceReport { stages, images })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> AnnotatedImage {
        let mut px = vec![];
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&f(x, y));
            }
        }
        AnnotatedImage::new("t", w, h, 3, px).unwrap()
    }

    fn run(stage: Stage, x: &AnnotatedImage) -> AnnotatedImage {
        apply_stage(&stage, x, &StageContext::default()).unwrap()
    }

    #[test]
    fn grayscale_examples() {
        let red = rgb(1, 1, |_, _| [255, 0, 0]);
        assert_eq!(
            run(
                Stage::Grayscale {
                    mode: GrayMode::Weighted
                },
                &red
            )
            .pixels,
            [76]
        );
        assert_eq!(
            run(
                Stage::Grayscale {
                    mode: GrayMode::Mean
                },
                &red
            )
            .pixels,
            [85]
        );
        let px = rgb(1, 1, |_, _| [30, 60, 90]);
        assert_eq!(
            run(
                Stage::Grayscale {
                    mode: GrayMode::Mean
                },
                &px
            )
            .pixels,
            [60]
        );
    }

    #[test]
    fn grayscale_rounding_matches_float_formula() {
        for r in (0..=255u16).step_by(5) {
            for g in (0..=255u16).step_by(7) {
                for b in (0..=255u16).step_by(11) {
                    let (r, g, b) = (r as u8, g as u8, b as u8);
                    let w = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                    assert!((gray_weighted(r, g, b) as f64 - w).abs() <= 0.5 + 1e-9);
                    let m = (r as f64 + g as f64 + b as f64) / 3.0;
                    assert_eq!(gray_mean(r, g, b) as f64, m.round());
                }
            }
        }
    }

    #[test]
    fn center_crop_offsets() {
        let img = rgb(64, 64, |x, y| [x as u8, y as u8, 0]);
        let out = run(
            Stage::CenterCrop {
                width: 28,
                height: 28,
            },
            &img,
        );
        assert_eq!((out.width, out.height), (28, 28));
        assert_eq!(&out.pixels[..3], &[18, 18, 0]);
        let last = out.pixels.len() - 3;
        assert_eq!(&out.pixels[last..], &[45, 45, 0]);
    }

    #[test]
    fn crop_larger_than_image_fails() {
        let img = rgb(10, 10, |_, _| [0, 0, 0]);
        let err = apply_stage(
            &Stage::CenterCrop {
                width: 11,
                height: 5,
            },
            &img,
            &StageContext::default(),
        );
        assert!(matches!(err, Err(Error::Pipeline(_))));
    }

    #[test]
    fn binarize_requires_gray() {
        assert!(Pipeline::new(vec![Stage::Binarize {
            mode: BinarizeMode::Otsu
        }])
        .is_ok());
        let rgb_input = Pipeline::for_input(
            vec![Stage::Binarize {
                mode: BinarizeMode::Fixed(3),
            }],
            ChannelState::Rgb,
        );
        assert!(rgb_input.is_err());
        let img = rgb(2, 2, |_, _| [1, 2, 3]);
        assert!(apply_stage(
            &Stage::Binarize {
                mode: BinarizeMode::Otsu
            },
            &img,
            &StageContext::default()
        )
        .is_err());
    }

    #[test]
    fn nothing_but_tagging_after_normalize() {
        let n = Stage::Normalize {
            mu: 0.5,
            sigma: 0.5,
        };
        let g = Stage::Grayscale {
            mode: GrayMode::Mean,
        };
        assert!(Pipeline::new(vec![g.clone(), n.clone(), Stage::SemanticTag]).is_ok());
        assert!(Pipeline::new(vec![g.clone(), n.clone(), Stage::ContrastStretch]).is_err());
        let p = Pipeline::new(vec![g, n]).unwrap();
        let q = Pipeline::new(vec![Stage::Resize {
            width: 4,
            height: 4,
        }])
        .unwrap();
        assert!(p.compose(&q).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(Pipeline::new(vec![Stage::Resize {
            width: 0,
            height: 3
        }])
        .is_err());
        assert!(Pipeline::new(vec![Stage::Normalize {
            mu: 0.5,
            sigma: 0.0
        }])
        .is_err());
        assert!(Pipeline::new(vec![Stage::Rotate { degrees: f64::NAN }]).is_err());
    }

    #[test]
    fn stage_json_round_trip() {
        let text = r#"[{"kind":"semantic_tag"},{"kind":"resize","width":64,"height":64},
            {"kind":"center_crop","width":28,"height":28},{"kind":"grayscale","mode":"mean"},
            {"kind":"binarize","mode":{"fixed":128}},{"kind":"rotate","degrees":15.0}]"#;
        let p: Pipeline = serde_json::from_str(text).unwrap();
        assert_eq!(p.len(), 6);
        let back: Pipeline = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
        let otsu: Stage = serde_json::from_str(r#"{"kind":"binarize","mode":"otsu"}"#).unwrap();
        assert_eq!(
            otsu,
            Stage::Binarize {
                mode: BinarizeMode::Otsu
            }
        );
        assert!(
            serde_json::from_str::<Stage>(r#"{"kind":"resize","width":1,"height":1,"x":2}"#)
                .is_err()
        );
        assert!(
            serde_json::from_str::<Pipeline>(r#"[{"kind":"resize","width":0,"height":1}]"#)
                .is_err()
        );
        let g: Stage = serde_json::from_str(r#"{"kind":"grayscale"}"#).unwrap();
        assert_eq!(
            g,
            Stage::Grayscale {
                mode: GrayMode::Weighted
            }
        );
    }

    #[test]
    fn rotate_identities_and_half_turn() {
        let img = rgb(6, 4, |x, y| [(x * 40) as u8, (y * 60) as u8, 7]);
        assert_eq!(run(Stage::Rotate { degrees: 0.0 }, &img), img);
        assert_eq!(run(Stage::Rotate { degrees: 360.0 }, &img), img);
        let half = run(Stage::Rotate { degrees: 180.0 }, &img);
        let back = run(Stage::Rotate { degrees: 180.0 }, &half);
        assert_eq!(back.pixels, img.pixels);
        // Pixel (0,0) lands at (5,3).
        assert_eq!(
            &half.pixels[(3 * 6 + 5) * 3..(3 * 6 + 5) * 3 + 3],
            &img.pixels[..3]
        );
    }

    #[test]
    fn rotate_quarter_turn_is_counter_clockwise() {
        let img = AnnotatedImage::new("q", 2, 2, 1, vec![10, 20, 30, 40]).unwrap();
        let out = run(Stage::Rotate { degrees: 90.0 }, &img);
        assert_eq!(out.pixels, [20, 40, 10, 30]);
    }

    #[test]
    fn contrast_stretch_full_range_is_identity() {
        let img = AnnotatedImage::new("c", 256, 1, 1, (0..=255).collect()).unwrap();
        assert_eq!(run(Stage::ContrastStretch, &img), img);
        let narrow = AnnotatedImage::new("n", 3, 1, 1, vec![100, 150, 200]).unwrap();
        assert_eq!(run(Stage::ContrastStretch, &narrow).pixels, [0, 128, 255]);
    }

    #[test]
    fn normalize_plane() {
        let img = AnnotatedImage::new("n", 2, 1, 1, vec![0, 255]).unwrap();
        let out = run(
            Stage::Normalize {
                mu: 0.5,
                sigma: 0.5,
            },
            &img,
        );
        assert_eq!(out.pixels, img.pixels);
        assert_eq!(out.normalized.unwrap().values, [-1.0, 1.0]);
    }

    #[test]
    fn compare_mean_vs_weighted_on_red() {
        let reds: Vec<_> = (0..3).map(|_| rgb(4, 4, |_, _| [255, 0, 0])).collect();
        let p1 = Pipeline::new(vec![Stage::Grayscale {
            mode: GrayMode::Mean,
        }])
        .unwrap();
        let p2 = Pipeline::new(vec![Stage::Grayscale {
            mode: GrayMode::Weighted,
        }])
        .unwrap();
        let r = compare_pipelines(&p1, &p2, &reds, &StageContext::default()).unwrap();
        assert_eq!(r.max_delta(), Some(9));
        assert_eq!(r.stages[0].max_delta, Some(9));
        assert!(r.images.iter().all(|d| d.mean_delta == Some(9.0)));
    }

    #[test]
    fn compare_ignores_identity_background_removal() {
        let xs = vec![rgb(9, 7, |x, y| [(x * y) as u8, 3, 200])];
        let p1 = Pipeline::default_chain(false);
        let mut stages = p1.stages().to_vec();
        stages.insert(1, Stage::BackgroundRemoval);
        let p2 = Pipeline::new(stages).unwrap();
        let r = compare_pipelines(&p1, &p2, &xs, &StageContext::default()).unwrap();
        assert!(r.is_identical());
        assert_eq!(r.stages.len(), 4);
        assert!(r.stages.iter().all(|s| s.max_delta == Some(0)));
    }

    #[test]
    fn semantic_tag_leaves_pixels() {
        let img = rgb(3, 3, |x, _| [x as u8, 0, 0]);
        let result = CategorizationResult {
            best_main: 0,
            best_sub: 0,
            confidence: 0.7,
            eligible: true,
            breakdown: vec![],
        };
        let tagger = LookupTagger(HashMap::from([("t".to_string(), result.clone())]));
        let ctx = StageContext {
            tagger: Some(&tagger),
            matting: None,
        };
        let out = apply_stage(&Stage::SemanticTag, &img, &ctx).unwrap();
        assert_eq!(out.pixels, img.pixels);
        assert_eq!(out.semantic, Some(result));
    }

    #[test]
    fn augment_rejects_shape_changes() {
        let img = AnnotatedImage::new("a", 2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        let bad = Pipeline::new(vec![Stage::Resize {
            width: 3,
            height: 3,
        }])
        .unwrap();
        assert!(augment(std::slice::from_ref(&img), &[bad], &StageContext::default()).is_err());
        let rot = Pipeline::new(vec![Stage::Rotate { degrees: 90.0 }]).unwrap();
        let (out, src) = augment(&[img], &[rot], &StageContext::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(src, [0, 0]);
        assert_eq!(out[1].id, "a#aug0");
    }
}
