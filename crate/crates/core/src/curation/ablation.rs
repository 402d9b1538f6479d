//! Noise-removal comparison between the RL + semantic filter and random filtering.
//!
//! Each seed draws a pool where a fraction of samples is mislabeled noise. Noise
//! gets systematically lower semantic confidence, but the two confidence ranges
//! overlap. A bandit agent is trained on a separate pool from keep/discard feedback;
//! the filter then removes every item the agent prefers to discard plus every item
//! routed to automatic removal. A random filter removes the same number of items.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::dqn::{Agent, AgentConfig, Policy};
use super::{
    route_confidence, CurationAction, RLState, Route, Transition, PROJECTION_DIM, STATE_DIM,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub pool_size: usize,
    pub noise_fraction: f64,
    pub seeds: u64,
    pub training_episodes: usize,
    /// One-sided confidence level of the paired t-test.
    pub confidence: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            pool_size: 200,
            noise_fraction: 0.2,
            seeds: 20,
            training_episodes: 1000,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub noise_total: usize,
    pub removed: usize,
    pub rl_noise_removed: usize,
    pub random_noise_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub per_seed: Vec<SeedResult>,
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub critical_value: f64,
    pub significant: bool,
}

struct Sample {
    state: RLState,
    noise: bool,
}

fn draw(rng: &mut ChaCha8Rng, noise_fraction: f64) -> Sample {
    let noise = rng.gen::<f64>() < noise_fraction;
    let conf = if noise {
        rng.gen_range(0.1..0.65)
    } else {
        rng.gen_range(0.45..1.0)
    };
    let mut v: Vec<f64> = (0..PROJECTION_DIM)
        .map(|_| rng.gen_range(-0.5..0.5))
        .collect();
    v.extend([rng.gen(), rng.gen(), rng.gen(), conf, rng.gen(), rng.gen()]);
    debug_assert_eq!(v.len(), STATE_DIM);
    Sample {
        state: RLState::new(v).expect("finite"),
        noise,
    }
}

fn feedback(s: &Sample, action: CurationAction) -> f64 {
    match (action, s.noise) {
        (CurationAction::Keep, false) | (CurationAction::Discard, true) => 1.0,
        (CurationAction::Review, _) => 0.5,
        _ => 0.0,
    }
}

fn run_seed(config: &AblationConfig, seed: u64) -> Result<SeedResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent: Agent<f64> = Agent::new(AgentConfig::bandit(), seed)?;
    for _ in 0..config.training_episodes {
        let s = draw(&mut rng, config.noise_fraction);
        let a = agent.act(&s.state, Policy::Explore);
        agent.remember(Transition {
            state: s.state.clone(),
            action: a,
            reward: feedback(&s, a),
            next_state: s.state.clone(),
            terminal: true,
        });
        agent.maybe_train();
    }
    let pool: Vec<Sample> = (0..config.pool_size)
        .map(|_| draw(&mut rng, config.noise_fraction))
        .collect();
    let removed: Vec<bool> = pool
        .iter()
        .map(|s| {
            route_confidence(s.state.confidence()) == Route::AutoRemove
                || agent.discard_margin(&s.state) > 0.0
        })
        .collect();
    let n_removed = removed.iter().filter(|&&r| r).count();
    let rl_noise_removed = pool
        .iter()
        .zip(&removed)
        .filter(|(s, &r)| r && s.noise)
        .count();
    let random_noise_removed = sample(&mut rng, pool.len(), n_removed)
        .into_iter()
        .filter(|&i| pool[i].noise)
        .count();
    Ok(SeedResult {
        seed,
        noise_total: pool.iter().filter(|s| s.noise).count(),
        removed: n_removed,
        rl_noise_removed,
        random_noise_removed,
    })
}

/// One-sided paired t-test of `a − b > 0`; returns `(mean, t)`.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = if var == 0.0 {
        if mean > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        mean / (var / n).sqrt()
    };
    (mean, t)
}

pub fn run_ablation(config: &AblationConfig) -> Result<AblationReport> {
    if config.seeds < 2 {
        return Err(Error::Config(
            "the paired test needs at least two seeds".into(),
        ));
    }
    let per_seed: Vec<SeedResult> = (0..config.seeds)
        .map(|s| run_seed(config, s))
        .collect::<Result<_>>()?;
    let rl: Vec<f64> = per_seed.iter().map(|r| r.rl_noise_removed as f64).collect();
    let random: Vec<f64> = per_seed
        .iter()
        .map(|r| r.random_noise_removed as f64)
        .collect();
    let (mean_difference, t_statistic) = paired_t(&rl, &random);
    let dist = StudentsT::new(0.0, 1.0, (config.seeds - 1) as f64)
        .map_err(|e| Error::Config(format!("t distribution: {e}")))?;
    let critical_value = dist.inverse_cdf(config.confidence);
    Ok(AblationReport {
        significant: mean_difference > 0.0 && t_statistic > critical_value,
        per_seed,
        mean_difference,
        t_statistic,
        critical_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_t_matches_hand_computation() {
        let (mean, t) = paired_t(&[3.0, 5.0, 4.0], &[1.0, 2.0, 2.0]);
        // d = (2, 3, 2): mean 7/3, sd = sqrt(1/3), t = mean / (sd / sqrt 3)
        assert!((mean - 7.0 / 3.0).abs() < 1e-12);
        assert!((t - 7.0).abs() < 1e-9);
    }

    #[test]
    fn critical_value_for_19_degrees() {
        let c = StudentsT::new(0.0, 1.0, 19.0).unwrap().inverse_cdf(0.95);
        assert!((c - 1.729).abs() < 1e-3);
    }
}
