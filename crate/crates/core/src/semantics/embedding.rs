use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::ImageRecord;
use crate::error::{Error, Result};
use crate::raster;
use crate::similarity;

pub const EMBEDDING_DIM: usize = 512;

/// Unit-norm semantic embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit L2 norm. Fails on a zero or non-finite vector.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::provider(
                "embedding has zero or non-finite norm",
                false,
            ));
        }
        // Already-unit vectors pass through untouched so re-normalizing is idempotent.
        if (norm - 1.0).abs() > 8.0 * f64::EPSILON {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn mapped_cosine(&self, other: &Embedding) -> f64 {
        similarity::mapped_cosine(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A source of text and image embeddings in a shared space.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding>;

    fn embed_image(&self, image: &ImageRecord) -> Result<Embedding>;

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

/// Deterministic, dependency-free embedder. Text is lowercased and split on
/// non-alphanumeric characters; each token maps to a seeded Gaussian vector and the
/// normalized mean of the token vectors is the embedding. Images embed their concept
/// hint when present, otherwise a coarse pixel-statistics signature.
#[derive(Debug, Clone)]
pub struct StubProvider {
    seed: u64,
}

impl StubProvider {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        (0..EMBEDDING_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Embedding> {
        let mut acc = vec![0.0; EMBEDDING_DIM];
        for t in tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        if !tokens.is_empty() {
            let n = tokens.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Embedding::normalized(acc)
    }

    /// Signature of an image: mean luminance over a 4x4 grid quantized to 16 levels.
    pub fn pixel_signature(width: u32, height: u32, rgb: &[u8]) -> String {
        let (w, h) = (width as usize, height as usize);
        let luma = raster::luminance(rgb);
        let mut cells = [(0.0f64, 0usize); 16];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * 4 / h) * 4 + x * 4 / w;
                cells[cell].0 += luma[y * w + x];
                cells[cell].1 += 1;
            }
        }
        let levels: String = cells
            .iter()
            .map(|&(s, n)| {
                let mean = if n == 0 { 0.0 } else { s / n as f64 };
                let q = ((mean * 16.0).floor() as u32).min(15);
                char::from_digit(q, 16).expect("q < 16")
            })
            .collect();
        format!("px{levels}")
    }
}

impl EmbeddingProvider for StubProvider {
    fn embed_text(&self, text: &str) -> Result<Embedding> {
        let tokens = Self::tokenize(text);
        if tokens.is_empty() {
            return self.embed_tokens(&[String::new()]);
        }
        self.embed_tokens(&tokens)
    }

    fn embed_image(&self, image: &ImageRecord) -> Result<Embedding> {
        match &image.concept_hint {
            Some(hint) => self.embed_text(hint),
            None => self.embed_tokens(&[Self::pixel_signature(
                image.width,
                image.height,
                &image.pixels,
            )]),
        }
    }
}
