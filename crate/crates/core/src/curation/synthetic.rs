//! Seeded synthetic curation environment with an analytic optimal policy.
//!
//! Each episode is one decision. Confidence and redundancy are uniform on `[0, 1]`;
//! the other state features are distractors with a small spread: projection
//! coordinates around 0 and scores around 0.5, each within ±`DISTRACTOR_SPREAD`. The optimal action is
//!
//! * `Discard` when redundancy > 0.8 or confidence < 0.35,
//! * `Keep` when confidence > 0.65,
//! * `Review` otherwise,
//!
//! and the reward is 1 for the optimal action, 0 for anything else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dqn::{Agent, Policy};
use super::{
    CurationAction, RLState, Transition, CONFIDENCE, PROJECTION_DIM, REDUNDANCY, STATE_DIM,
};
use crate::scalar::Scalar;

pub const DISTRACTOR_SPREAD: f64 = 0.05;

pub struct SyntheticEnv {
    rng: ChaCha8Rng,
}

impl SyntheticEnv {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample_state(&mut self) -> RLState {
        let spread = -DISTRACTOR_SPREAD..DISTRACTOR_SPREAD;
        let mut v: Vec<f64> = (0..PROJECTION_DIM)
            .map(|_| self.rng.gen_range(spread.clone()))
            .collect();
        v.extend((PROJECTION_DIM..STATE_DIM).map(|_| 0.5 + self.rng.gen_range(spread.clone())));
        v[CONFIDENCE] = self.rng.gen();
        v[REDUNDANCY] = self.rng.gen();
        RLState::new(v).expect("finite features")
    }

    pub fn optimal_action(state: &RLState) -> CurationAction {
        let (c, r) = (state.confidence(), state.redundancy());
        if r > 0.8 || c < 0.35 {
            CurationAction::Discard
        } else if c > 0.65 {
            CurationAction::Keep
        } else {
            CurationAction::Review
        }
    }

    pub fn reward(state: &RLState, action: CurationAction) -> f64 {
        if action == Self::optimal_action(state) {
            1.0
        } else {
            0.0
        }
    }
}

/// Runs `episodes` single-step episodes with epsilon-greedy actions, training once
/// per episode when the replay buffer holds a full batch.
pub fn train<S: Scalar>(agent: &mut Agent<S>, env: &mut SyntheticEnv, episodes: usize) {
    for _ in 0..episodes {
        let s = env.sample_state();
        let a = agent.act(&s, Policy::Explore);
        let reward = SyntheticEnv::reward(&s, a);
        agent.remember(Transition {
            state: s.clone(),
            action: a,
            reward,
            next_state: s,
            terminal: true,
        });
        agent.maybe_train();
    }
}

/// Fraction of `n` fresh states where the greedy action is optimal.
pub fn optimal_rate<S: Scalar>(agent: &Agent<S>, env: &mut SyntheticEnv, n: usize) -> f64 {
    let hits = (0..n)
        .filter(|_| {
            let s = env.sample_state();
            agent.greedy(&s) == SyntheticEnv::optimal_action(&s)
        })
        .count();
    hits as f64 / n as f64
}
