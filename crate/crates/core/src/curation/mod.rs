//! Sample selection: reward, confidence routing, clustering, the DQN agent and
//! the three processing modes.

pub mod ablation;
mod cluster;
pub mod dqn;
pub mod modes;
pub mod nn;
pub mod probe;
mod replay;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantics::{Embedding, VisualAttributes};

pub use cluster::{cluster_embeddings, cluster_vectors, DEFAULT_CLUSTER_THRESHOLD};
pub use dqn::{Agent, AgentConfig, Policy};
pub use replay::ReplayBuffer;

/// Dimension of the random projection of the embedding inside [`RLState`].
pub const PROJECTION_DIM: usize = 16;
/// Projection plus brightness, contrast, edge density, confidence, class fraction, redundancy.
pub const STATE_DIM: usize = PROJECTION_DIM + 6;
pub const CONFIDENCE: usize = PROJECTION_DIM + 3;
pub const REDUNDANCY: usize = PROJECTION_DIM + 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationAction {
    Keep,
    Discard,
    Review,
}

impl CurationAction {
    /// Also the argmax tie-break order.
    pub const ALL: [CurationAction; 3] = [
        CurationAction::Keep,
        CurationAction::Discard,
        CurationAction::Review,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RLState(pub Vec<f64>);

impl RLState {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if features.len() != STATE_DIM {
            return Err(Error::Precondition(format!(
                "state must have {STATE_DIM} features, got {}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("state features must be finite".into()));
        }
        Ok(Self(features))
    }

    pub fn build(
        projection: &Projection,
        embedding: &Embedding,
        visual: &VisualAttributes,
        confidence: f64,
        class_fraction: f64,
        redundancy: f64,
    ) -> Result<Self> {
        let mut v = projection.project(embedding.as_slice())?;
        v.extend([
            visual.brightness,
            visual.contrast,
            visual.edge_density,
            confidence,
            class_fraction,
            redundancy,
        ]);
        Self::new(v)
    }

    pub fn confidence(&self) -> f64 {
        self.0[CONFIDENCE]
    }

    pub fn redundancy(&self) -> f64 {
        self.0[REDUNDANCY]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Fixed seeded Gaussian projection from embedding space to [`PROJECTION_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    input_dim: usize,
    rows: Vec<f64>,
}

impl Projection {
    pub fn new(seed: u64, input_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5052_4f4a);
        let scale = 1.0 / (PROJECTION_DIM as f64).sqrt();
        let rows = (0..PROJECTION_DIM * input_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect::<Vec<f64>>();
        Self { input_dim, rows }
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim {
            return Err(Error::Precondition(format!(
                "projection expects {} dimensions, got {}",
                self.input_dim,
                v.len()
            )));
        }
        Ok(self
            .rows
            .chunks_exact(self.input_dim)
            .map(|r| crate::similarity::dot(r, v))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights<S = f64> {
    pub lambda1: S,
    pub lambda2: S,
    pub lambda3: S,
    pub lambda4: S,
}

impl<S: Scalar> Default for RewardWeights<S> {
    fn default() -> Self {
        Self {
            lambda1: S::of(0.4),
            lambda2: S::of(0.3),
            lambda3: S::of(0.2),
            lambda4: S::of(0.1),
        }
    }
}

impl<S: Scalar> RewardWeights<S> {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().any(|l| !l.is_finite() || *l < S::zero()) {
            return Err(Error::Config(
                "reward weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// `[−λ4, λ1 + λ2 + λ3]`
    pub fn bounds(&self) -> (S, S) {
        (-self.lambda4, self.lambda1 + self.lambda2 + self.lambda3)
    }
}

/// Kept-sample counts per main class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: Vec<u64>,
}

impl ClassDistribution {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![0; classes],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn with_added(&self, class: usize) -> Self {
        let mut d = self.clone();
        d.counts[class] += 1;
        d
    }

    /// Share of `class` among kept samples; 0 while nothing is kept.
    pub fn fraction(&self, class: usize) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.counts[class] as f64 / t as f64,
        }
    }
}

/// Shannon entropy normalized by `ln K`. A single-class hierarchy has entropy 0.
pub fn class_entropy<S: Scalar>(d: &ClassDistribution) -> Result<S> {
    let total = d.total();
    if total == 0 {
        return Err(Error::Precondition(
            "entropy of an empty class distribution".into(),
        ));
    }
    if d.classes() < 2 {
        return Ok(S::zero());
    }
    let n = S::of(total as f64);
    let h: S = d
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = S::of(c as f64) / n;
            -p * p.ln()
        })
        .sum();
    Ok((h / S::of_usize(d.classes()).ln())
        .max(S::zero())
        .min(S::one()))
}

/// Largest mapped cosine against `kept`; 0 when `kept` is empty.
pub fn redundancy<'a>(e: &Embedding, kept: impl IntoIterator<Item = &'a Embedding>) -> f64 {
    kept.into_iter()
        .map(|k| e.mapped_cosine(k))
        .fold(0.0, f64::max)
}

fn check_unit<S: Scalar>(name: &str, v: S) -> Result<()> {
    if !(v >= S::zero() && v <= S::one()) {
        return Err(Error::Precondition(format!(
            "{name} must lie in [0, 1], got {v}"
        )));
    }
    Ok(())
}

/// `λ1·conf + λ2·entropy(d) + λ3·model_acc − λ4·red`
pub fn compute_reward<S: Scalar>(
    conf: S,
    d: &ClassDistribution,
    model_acc: S,
    red: S,
    w: &RewardWeights<S>,
) -> Result<S> {
    check_unit("confidence", conf)?;
    check_unit("model accuracy", model_acc)?;
    check_unit("redundancy", red)?;
    w.validate()?;
    let entropy: S = class_entropy(d)?;
    Ok(w.lambda1 * conf + w.lambda2 * entropy + w.lambda3 * model_acc - w.lambda4 * red)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    AutoCategorize,
    HumanReview,
    AutoRemove,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingThresholds {
    pub auto: f64,
    pub remove: f64,
}

impl Default for RoutingThresholds {
    fn default() -> Self {
        Self {
            auto: 0.85,
            remove: 0.4,
        }
    }
}

impl RoutingThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.remove)
            || !(0.0..=1.0).contains(&self.auto)
            || self.remove > self.auto
        {
            return Err(Error::Config(format!(
                "routing thresholds must satisfy 0 <= remove <= auto <= 1, got remove={} auto={}",
                self.remove, self.auto
            )));
        }
        Ok(())
    }

    /// `> auto` is automatic, `[remove, auto]` goes to review, `< remove` is removed.
    pub fn route(&self, conf: f64) -> Route {
        if conf > self.auto {
            Route::AutoCategorize
        } else if conf >= self.remove {
            Route::HumanReview
        } else {
            Route::AutoRemove
        }
    }
}

/// Routing with the default 0.85 / 0.4 bands.
pub fn route_confidence(conf: f64) -> Route {
    RoutingThresholds::default().route(conf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: RLState,
    pub action: CurationAction,
    pub reward: f64,
    pub next_state: RLState,
    pub terminal: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(c: &[u64]) -> ClassDistribution {
        ClassDistribution::from_counts(c.to_vec())
    }

    #[test]
    fn entropy_examples() {
        assert!((class_entropy::<f64>(&dist(&[5, 5, 5, 5])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(class_entropy::<f64>(&dist(&[9, 0, 0])).unwrap(), 0.0);
        let oracle = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln()) / 2f64.ln();
        let h: f64 = class_entropy(&dist(&[3, 1])).unwrap();
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.8113).abs() < 1e-4);
        assert!(class_entropy::<f32>(&dist(&[0, 0])).is_err());
    }

    #[test]
    fn redundancy_examples() {
        let e = Embedding::normalized(vec![1.0, 2.0, 3.0]).unwrap();
        let neg = Embedding::normalized(vec![-1.0, -2.0, -3.0]).unwrap();
        assert!((redundancy(&e, [&e]) - 1.0).abs() < 1e-12);
        assert_eq!(redundancy(&e, []), 0.0);
        assert!(redundancy(&e, [&neg]).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::<f64>::default();
        let uniform = dist(&[2, 2, 2, 2]);
        let single = dist(&[0, 7, 0, 0]);
        assert!((compute_reward(1.0, &uniform, 1.0, 0.0, &w).unwrap() - 0.9).abs() < 1e-12);
        assert!((compute_reward(0.0, &single, 0.0, 1.0, &w).unwrap() + 0.1).abs() < 1e-12);
        assert_eq!(compute_reward(0.0, &single, 0.0, 0.0, &w).unwrap(), 0.0);
        assert!(compute_reward(1.5, &uniform, 1.0, 0.0, &w).is_err());
        assert!(compute_reward(0.5, &uniform, f64::NAN, 0.0, &w).is_err());
    }

    #[test]
    fn routing_boundaries() {
        assert_eq!(route_confidence(0.9), Route::AutoCategorize);
        assert_eq!(route_confidence(0.85), Route::HumanReview);
        assert_eq!(route_confidence(0.4), Route::HumanReview);
        assert_eq!(route_confidence(0.39), Route::AutoRemove);
        assert!(RoutingThresholds {
            auto: 0.3,
            remove: 0.5
        }
        .validate()
        .is_err());
    }

    #[test]
    fn projection_is_seeded() {
        let a = Projection::new(3, 8).project(&[1.0; 8]).unwrap();
        let b = Projection::new(3, 8).project(&[1.0; 8]).unwrap();
        let c = Projection::new(4, 8).project(&[1.0; 8]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), PROJECTION_DIM);
    }

    #[test]
    fn state_layout() {
        let e = Embedding::normalized(vec![1.0; 8]).unwrap();
        let v = VisualAttributes {
            brightness: 0.1,
            contrast: 0.2,
            edge_density: 0.3,
        };
        let s = RLState::build(&Projection::new(0, 8), &e, &v, 0.7, 0.25, 0.9).unwrap();
        assert_eq!(s.0.len(), STATE_DIM);
        assert_eq!(s.confidence(), 0.7);
        assert_eq!(s.redundancy(), 0.9);
        assert!(RLState::new(vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn reward_within_bounds(conf in 0.0f64..=1.0, acc in 0.0f64..=1.0, red in 0.0f64..=1.0,
                                counts in prop::collection::vec(0u64..20, 1..8)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let w = RewardWeights::<f64>::default();
            let r = compute_reward(conf, &dist(&counts), acc, red, &w).unwrap();
            prop_assert!((-0.1 - 1e-12..=0.9 + 1e-12).contains(&r));
        }

        #[test]
        fn routing_partitions_unit_interval(conf in 0.0f64..=1.0) {
            let r = route_confidence(conf);
            let expected = if conf > 0.85 { Route::AutoCategorize }
                else if conf >= 0.4 { Route::HumanReview } else { Route::AutoRemove };
            prop_assert_eq!(r, expected);
        }
    }
}
