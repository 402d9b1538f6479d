//! Per-image semantic features and hierarchical scoring.
//!
//! Every subcategory `s` under main category `c` receives
//! `total = alpha * text_sim + beta * char_sim + gamma * visual_sim`, where the
//! similarities are mapped cosines between the image embedding and the prompt
//! embeddings. The best-scoring `(main, sub)` path is the categorization and its
//! total is the confidence.

mod embedding;
mod external;
mod visual;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::acquisition::ImageRecord;
use crate::error::{Error, Result};
use crate::hierarchy::{self, CategoryHierarchy, MainCategory, Subcategory};

pub use embedding::{Embedding, EmbeddingProvider, StubProvider, EMBEDDING_DIM};
pub use external::{serve_stub, ExternalProvider, WireRequest, WireResponse};
pub use visual::{sobel_magnitude, VisualAttributes, ANALYSIS_SIZE, SOBEL_EDGE_THRESHOLD};

/// Images smaller than this on either side are rejected.
pub const MIN_IMAGE_SIDE: u32 = 8;
/// Images whose best template similarity falls below this are flagged ineligible.
pub const DEFAULT_PREFILTER: f64 = 0.3;
/// VisualSim when a subcategory declares no expected attributes.
pub const NEUTRAL_VISUAL_SIM: f64 = 0.5;

/// Prompt phrase to mapped cosine.
pub type ObjectScores = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub embedding: Embedding,
    pub visual: VisualAttributes,
    pub objects: ObjectScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
        }
    }
}

impl ScoringWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("scoring weights must be non-negative".into()));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("scoring weights must sum to 1".into()));
        }
        Ok(())
    }

    /// Rescales arbitrary non-negative weights to sum to one.
    pub fn normalized(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let s = alpha + beta + gamma;
        if s <= 0.0 {
            return Err(Error::Config("scoring weights sum to zero".into()));
        }
        Self::new(alpha / s, beta / s, gamma / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcategoryScore {
    pub text_sim: f64,
    pub char_sim: f64,
    pub visual_sim: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub main: usize,
    pub sub: usize,
    pub label: usize,
    #[serde(flatten)]
    pub score: SubcategoryScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizationResult {
    pub best_main: usize,
    pub best_sub: usize,
    pub confidence: f64,
    /// False when the best template similarity is under the prefilter threshold.
    pub eligible: bool,
    /// One entry per subcategory in flattened label order.
    pub breakdown: Vec<ScoreEntry>,
}

impl CategorizationResult {
    pub fn best_label(&self) -> usize {
        self.breakdown
            .iter()
            .find(|e| e.main == self.best_main && e.sub == self.best_sub)
            .map(|e| e.label)
            .expect("best path is part of the breakdown")
    }

    /// Entries sorted by total descending, ties by label.
    pub fn ranked(&self) -> Vec<&ScoreEntry> {
        let mut v: Vec<_> = self.breakdown.iter().collect();
        v.sort_by(|a, b| {
            b.score
                .total
                .total_cmp(&a.score.total)
                .then(a.label.cmp(&b.label))
        });
        v
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores one subcategory from an already extracted feature bundle.
pub fn score_subcategory(
    features: &FeatureBundle,
    sub: &Subcategory,
    parent: &MainCategory,
    weights: &ScoringWeights,
) -> SubcategoryScore {
    let lookup = |p: &str| {
        *features
            .objects
            .get(p)
            .unwrap_or_else(|| panic!("object scores lack prompt {p:?}"))
    };
    let text_sim = mean(
        [
            hierarchy::main_template(parent),
            hierarchy::sub_template(sub),
        ]
        .iter()
        .map(|p| lookup(p)),
    );
    let char_sim = mean(sub.characteristics.iter().map(|c| lookup(c.phrase())));
    let visual_sim = sub
        .expected_visual
        .map(|e| features.visual.similarity(&e))
        .unwrap_or(NEUTRAL_VISUAL_SIM);
    let total = weights.alpha * text_sim + weights.beta * char_sim + weights.gamma * visual_sim;
    SubcategoryScore {
        text_sim,
        char_sim,
        visual_sim,
        total,
    }
}

/// Scores every subcategory and picks the best path (ties go to the lowest label).
pub fn categorize_features(
    features: &FeatureBundle,
    hierarchy: &CategoryHierarchy,
    weights: &ScoringWeights,
    prefilter: f64,
) -> CategorizationResult {
    let mut breakdown = Vec::with_capacity(hierarchy.label_count());
    for (mi, main) in hierarchy.categories.iter().enumerate() {
        for (si, sub) in main.subcategories.iter().enumerate() {
            breakdown.push(ScoreEntry {
                main: mi,
                sub: si,
                label: breakdown.len(),
                score: score_subcategory(features, sub, main, weights),
            });
        }
    }
    let mut best = &breakdown[0];
    for e in &breakdown[1..] {
        if e.score.total > best.score.total {
            best = e;
        }
    }
    let max_text = breakdown
        .iter()
        .map(|e| e.score.text_sim)
        .fold(f64::NEG_INFINITY, f64::max);
    CategorizationResult {
        best_main: best.main,
        best_sub: best.sub,
        confidence: best.score.total.clamp(0.0, 1.0),
        eligible: max_text >= prefilter,
        breakdown,
    }
}

/// Prompt embeddings for a hierarchy, computed once per run.
pub struct PromptBank {
    prompts: HashMap<String, Embedding>,
}

impl PromptBank {
    pub fn build(hierarchy: &CategoryHierarchy, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let texts = hierarchy.all_prompts();
        let embeddings = provider.embed_texts(&texts)?;
        Ok(Self {
            prompts: texts.into_iter().zip(embeddings).collect(),
        })
    }

    pub fn get(&self, prompt: &str) -> Option<&Embedding> {
        self.prompts.get(prompt)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn object_scores(&self, embedding: &Embedding) -> ObjectScores {
        self.prompts
            .iter()
            .map(|(p, e)| (p.clone(), embedding.mapped_cosine(e)))
            .collect()
    }
}

/// Extracts the embedding, visual attributes and object scores of one image.
pub fn extract_features(
    image: &ImageRecord,
    bank: &PromptBank,
    provider: &dyn EmbeddingProvider,
) -> Result<FeatureBundle> {
    if image.width < MIN_IMAGE_SIDE || image.height < MIN_IMAGE_SIDE {
        return Err(Error::Image(format!(
            "{}x{} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}",
            image.width, image.height
        )));
    }
    let embedding = provider.embed_image(image)?;
    let visual =
        VisualAttributes::from_rgb(image.width as usize, image.height as usize, &image.pixels);
    let objects = bank.object_scores(&embedding);
    Ok(FeatureBundle {
        embedding,
        visual,
        objects,
    })
}

/// Bundles the hierarchy, weights and prompt bank of a run.
pub struct Categorizer<'a> {
    hierarchy: &'a CategoryHierarchy,
    weights: ScoringWeights,
    prefilter: f64,
    bank: PromptBank,
    provider: &'a dyn EmbeddingProvider,
}

impl<'a> Categorizer<'a> {
    pub fn new(
        hierarchy: &'a CategoryHierarchy,
        weights: ScoringWeights,
        provider: &'a dyn EmbeddingProvider,
    ) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            hierarchy,
            weights,
            prefilter: DEFAULT_PREFILTER,
            bank: PromptBank::build(hierarchy, provider)?,
            provider,
        })
    }

    pub fn with_prefilter(mut self, prefilter: f64) -> Self {
        self.prefilter = prefilter;
        self
    }

    pub fn bank(&self) -> &PromptBank {
        &self.bank
    }

    pub fn features(&self, image: &ImageRecord) -> Result<FeatureBundle> {
        extract_features(image, &self.bank, self.provider)
    }

    pub fn categorize(&self, image: &ImageRecord) -> Result<(FeatureBundle, CategorizationResult)> {
        let features = self.features(image)?;
        let result = categorize_features(&features, self.hierarchy, &self.weights, self.prefilter);
        Ok((features, result))
    }
}

/// One-shot categorization; builds a fresh prompt bank.
pub fn categorize(
    image: &ImageRecord,
    hierarchy: &CategoryHierarchy,
    weights: &ScoringWeights,
    provider: &dyn EmbeddingProvider,
) -> Result<CategorizationResult> {
    Ok(Categorizer::new(hierarchy, *weights, provider)?
        .categorize(image)?
        .1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::ImageSource;
    use crate::hierarchy::{template, Characteristic};
    use chrono::Utc;
    use proptest::prelude::*;

    fn image(hint: Option<&str>) -> ImageRecord {
        let mut px = Vec::with_capacity(16 * 16 * 3);
        for i in 0..16 * 16 {
            px.extend_from_slice(&[(i % 251) as u8, (i * 3 % 256) as u8, 40]);
        }
        let r = ImageRecord::new(ImageSource::LocalFolder, "k", 16, 16, px, Utc::now()).unwrap();
        match hint {
            Some(h) => r.with_hint(h),
            None => r,
        }
    }

    fn uniform_bundle(prompts: &[String], value: f64) -> FeatureBundle {
        FeatureBundle {
            embedding: Embedding::normalized(vec![1.0; 4]).unwrap(),
            visual: VisualAttributes {
                brightness: 0.5,
                contrast: 0.1,
                edge_density: 0.2,
            },
            objects: prompts.iter().map(|p| (p.clone(), value)).collect(),
        }
    }

    #[test]
    fn identical_embeddings_give_unit_similarities() {
        let h = template("tree").unwrap();
        let f = uniform_bundle(&h.all_prompts(), 1.0);
        let s = score_subcategory(
            &f,
            &h.categories[0].subcategories[0],
            &h.categories[0],
            &ScoringWeights::default(),
        );
        assert_eq!((s.text_sim, s.char_sim), (1.0, 1.0));
    }

    #[test]
    fn alpha_only_total_is_text_sim() {
        let p = StubProvider::new(5);
        let h = template("food").unwrap();
        let c = Categorizer::new(&h, ScoringWeights::new(1.0, 0.0, 0.0).unwrap(), &p).unwrap();
        let (_, r) = c.categorize(&image(Some("cheese slices"))).unwrap();
        for e in &r.breakdown {
            assert_eq!(e.score.total, e.score.text_sim);
        }
    }

    #[test]
    fn object_scores_cover_exactly_the_prompts() {
        let p = StubProvider::new(5);
        let h = template("tree").unwrap();
        let c = Categorizer::new(&h, ScoringWeights::default(), &p).unwrap();
        let f = c.features(&image(None)).unwrap();
        let keys: Vec<_> = f.objects.keys().cloned().collect();
        let mut expected = h.all_prompts();
        expected.sort();
        assert_eq!(keys, expected);
        assert!(f.objects.values().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn tiny_images_rejected() {
        let p = StubProvider::new(5);
        let h = template("tree").unwrap();
        let c = Categorizer::new(&h, ScoringWeights::default(), &p).unwrap();
        let img = ImageRecord::new(
            ImageSource::WebApi,
            "k",
            7,
            9,
            vec![0; 7 * 9 * 3],
            Utc::now(),
        )
        .unwrap();
        assert!(matches!(c.features(&img), Err(Error::Image(_))));
    }

    #[test]
    fn single_subcategory_always_wins() {
        let h = CategoryHierarchy::parse(
            r#"{"version":"1","categories":[{"name":"Only","subcategories":[{"name":"One","characteristics":["x"]}]}]}"#,
        )
        .unwrap();
        let r = categorize(
            &image(None),
            &h,
            &ScoringWeights::default(),
            &StubProvider::new(1),
        )
        .unwrap();
        assert_eq!((r.best_main, r.best_sub), (0, 0));
    }

    #[test]
    fn ties_resolve_to_lowest_label() {
        let h = template("tree").unwrap();
        let f = uniform_bundle(&h.all_prompts(), 0.7);
        let r = categorize_features(&f, &h, &ScoringWeights::default(), DEFAULT_PREFILTER);
        assert_eq!((r.best_main, r.best_sub, r.best_label()), (0, 0, 0));
    }

    #[test]
    fn prefilter_flags_low_text_similarity() {
        let h = template("tree").unwrap();
        let low = categorize_features(
            &uniform_bundle(&h.all_prompts(), 0.2),
            &h,
            &ScoringWeights::default(),
            0.3,
        );
        assert!(!low.eligible);
        let ok = categorize_features(
            &uniform_bundle(&h.all_prompts(), 0.3),
            &h,
            &ScoringWeights::default(),
            0.3,
        );
        assert!(ok.eligible);
    }

    #[test]
    fn visual_sim_uses_expectations() {
        let mut h = template("tree").unwrap();
        let expected = VisualAttributes {
            brightness: 0.5,
            contrast: 0.4,
            edge_density: 0.2,
        };
        h.categories[0].subcategories[0].expected_visual = Some(expected);
        let f = uniform_bundle(&h.all_prompts(), 0.6);
        let with = score_subcategory(
            &f,
            &h.categories[0].subcategories[0],
            &h.categories[0],
            &ScoringWeights::default(),
        );
        assert!((with.visual_sim - (1.0 - 0.3 / 3.0)).abs() < 1e-12);
        let without = score_subcategory(
            &f,
            &h.categories[0].subcategories[1],
            &h.categories[0],
            &ScoringWeights::default(),
        );
        assert_eq!(without.visual_sim, NEUTRAL_VISUAL_SIM);
    }

    #[test]
    fn weights_validated() {
        assert!(ScoringWeights::new(0.5, 0.5, 0.5).is_err());
        assert!(ScoringWeights::new(-0.5, 1.0, 0.5).is_err());
        let w = ScoringWeights::normalized(5.0, 3.0, 2.0).unwrap();
        assert!((w.alpha - 0.5).abs() < 1e-12);
    }

    #[test]
    fn breakdown_is_bit_identical_across_runs() {
        let h = template("food").unwrap();
        let a = categorize(
            &image(Some("cheese")),
            &h,
            &ScoringWeights::default(),
            &StubProvider::new(11),
        )
        .unwrap();
        let b = categorize(
            &image(Some("cheese")),
            &h,
            &ScoringWeights::default(),
            &StubProvider::new(11),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn char_sim_monotone(text in 0.0f64..1.0, c1 in 0.0f64..1.0, c2 in 0.0f64..1.0,
                             a in 0.0f64..1.0, b in 0.0f64..1.0, g in 0.0f64..1.0) {
            prop_assume!(a + b + g > 1e-6);
            let w = ScoringWeights::normalized(a, b, g).unwrap();
            let sub = Subcategory { name: "s".into(), description: String::new(),
                characteristics: vec![Characteristic("c".into())], expected_visual: None };
            let main = MainCategory { name: "m".into(), description: String::new(), subcategories: vec![] };
            let mk = |c: f64| {
                let mut f = uniform_bundle(&["A photo of m".into(), "This is a s".into()], text);
                f.objects.insert("c".into(), c);
                score_subcategory(&f, &sub, &main, &w).total
            };
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            prop_assert!(mk(lo) <= mk(hi));
        }

        #[test]
        fn argmax_invariant_under_weight_scaling(scale in 0.01f64..100.0, seed in 0u64..50) {
            let h = template("tree").unwrap();
            let p = StubProvider::new(seed);
            let w = ScoringWeights::default();
            let scaled = ScoringWeights::normalized(w.alpha * scale, w.beta * scale, w.gamma * scale).unwrap();
            let c1 = Categorizer::new(&h, w, &p).unwrap();
            let c2 = Categorizer::new(&h, scaled, &p).unwrap();
            let img = image(Some("needle leaves conical shape"));
            let (_, r1) = c1.categorize(&img).unwrap();
            let (_, r2) = c2.categorize(&img).unwrap();
            prop_assert_eq!((r1.best_main, r1.best_sub), (r2.best_main, r2.best_sub));
        }
    }
}
