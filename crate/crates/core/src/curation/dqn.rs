//! Deep Q-network agent over [`RLState`] with experience replay and a target network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Adam, Mlp};
use super::{CurationAction, RLState, ReplayBuffer, Transition, STATE_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    /// 0 turns the agent into a contextual bandit.
    pub gamma: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128, 64],
            learning_rate: 0.001,
            epsilon: 0.1,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync: 100,
            gamma: 0.95,
        }
    }
}

impl AgentConfig {
    pub fn bandit() -> Self {
        Self {
            gamma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent: {m}")));
        if self.hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        for (name, v) in [("epsilon", self.epsilon), ("epsilon_min", self.epsilon_min)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon decay must lie in (0, 1]");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return bad("replay capacity, batch size and target sync must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        Ok(())
    }

    /// `max(epsilon_min, epsilon · decay^t)`
    pub fn epsilon_at(&self, t: u64) -> f64 {
        let decayed = self.epsilon * self.epsilon_decay.powf(t as f64);
        decayed.max(self.epsilon_min.min(self.epsilon))
    }

    pub fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(CurationAction::ALL.len());
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Epsilon-greedy.
    Explore,
    /// Argmax Q.
    Exploit,
}

/// One regression target of the TD loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSample<S> {
    pub state: Vec<S>,
    pub action: usize,
    pub target: S,
}

/// Mean squared TD error over `samples`.
pub fn td_loss<S: Scalar>(net: &Mlp<S>, samples: &[TdSample<S>]) -> S {
    let n = S::of_usize(samples.len());
    samples
        .iter()
        .map(|s| {
            let d = net.forward(&s.state)[s.action] - s.target;
            d * d
        })
        .sum::<S>()
        / n
}

/// [`td_loss`] and its gradient with respect to every parameter of `net`.
pub fn td_loss_grad<S: Scalar>(net: &Mlp<S>, samples: &[TdSample<S>]) -> (S, Mlp<S>) {
    let n = S::of_usize(samples.len());
    let mut grads = net.zeros_like();
    let mut loss = S::zero();
    let mut dout = vec![S::zero(); net.output_dim()];
    for s in samples {
        let trace = net.forward_trace(&s.state);
        let d = trace.output()[s.action] - s.target;
        loss += d * d;
        dout.iter_mut().for_each(|v| *v = S::zero());
        dout[s.action] = S::of(2.0) * d / n;
        net.backward(&trace, &dout, &mut grads);
    }
    (loss / n, grads)
}

fn argmax<S: Scalar>(q: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn to_scalar<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::of(x)).collect()
}

#[derive(Debug, Clone)]
pub struct Agent<S: Scalar> {
    config: AgentConfig,
    online: Mlp<S>,
    target: Mlp<S>,
    optimizer: Adam<S>,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    steps: u64,
    epsilon: f64,
}

/// Serializable agent state, including the replay buffer and RNG position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSnapshot<S> {
    pub config: AgentConfig,
    pub online: Mlp<S>,
    pub target: Mlp<S>,
    pub optimizer: Adam<S>,
    pub replay: Vec<Transition>,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub steps: u64,
    pub epsilon: f64,
}

impl<S: Scalar> Agent<S> {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        Self::with_input(config, STATE_DIM, seed)
    }

    pub fn with_input(config: AgentConfig, input: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Mlp::new(&config.layer_sizes(input), &mut rng);
        Ok(Self {
            target: online.clone(),
            optimizer: Adam::new(S::of(config.learning_rate), online.param_count()),
            replay: ReplayBuffer::new(config.replay_capacity),
            epsilon: config.epsilon,
            config,
            online,
            rng,
            steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &Mlp<S> {
        &self.online
    }

    pub fn target(&self) -> &Mlp<S> {
        &self.target
    }

    /// Replaces both networks; used to install hand-built weights.
    pub fn set_network(&mut self, net: Mlp<S>) {
        self.optimizer = Adam::new(S::of(self.config.learning_rate), net.param_count());
        self.target = net.clone();
        self.online = net;
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn q_values(&self, state: &RLState) -> Vec<S> {
        self.online.forward(&to_scalar(state.as_slice()))
    }

    /// `Q(Discard) − Q(Keep)`
    pub fn discard_margin(&self, state: &RLState) -> f64 {
        let q = self.q_values(state);
        (q[CurationAction::Discard.index()] - q[CurationAction::Keep.index()]).as_f64()
    }

    /// Argmax Q; ties resolve in Keep, Discard, Review order.
    pub fn greedy(&self, state: &RLState) -> CurationAction {
        CurationAction::from_index(argmax(&self.q_values(state)))
    }

    pub fn act(&mut self, state: &RLState, policy: Policy) -> CurationAction {
        match policy {
            Policy::Exploit => self.greedy(state),
            Policy::Explore => {
                if self.rng.gen::<f64>() < self.epsilon {
                    CurationAction::from_index(self.rng.gen_range(0..CurationAction::ALL.len()))
                } else {
                    self.greedy(state)
                }
            }
        }
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// Regression targets `r + γ·max_a' Q_target(s', a')`, or `r` for terminal steps.
    pub fn td_samples(&self, batch: &[Transition]) -> Vec<TdSample<S>> {
        let gamma = S::of(self.config.gamma);
        batch
            .iter()
            .map(|t| {
                let mut y = S::of(t.reward);
                if !t.terminal && gamma > S::zero() {
                    let q = self.target.forward(&to_scalar(t.next_state.as_slice()));
                    y += gamma * q[argmax(&q)];
                }
                TdSample {
                    state: to_scalar(t.state.as_slice()),
                    action: t.action.index(),
                    target: y,
                }
            })
            .collect()
    }

    /// One gradient step on a replay sample of `batch_size` transitions.
    pub fn train_step(&mut self) -> Result<S> {
        let n = self.config.batch_size;
        if self.replay.len() < n {
            return Err(Error::Precondition(format!(
                "replay buffer holds {} transitions, batch needs {n}",
                self.replay.len()
            )));
        }
        let batch: Vec<Transition> = self
            .replay
            .sample(n, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        Ok(self.train_on_batch(&batch))
    }

    /// One gradient step on an explicit batch; advances the step counter, target
    /// sync and epsilon schedule.
    pub fn train_on_batch(&mut self, batch: &[Transition]) -> S {
        let samples = self.td_samples(batch);
        let (loss, grads) = td_loss_grad(&self.online, &samples);
        self.optimizer.step(&mut self.online, &grads);
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.target_sync) {
            self.target = self.online.clone();
        }
        self.epsilon = self.config.epsilon_at(self.steps);
        loss
    }

    /// Trains once if the buffer holds a full batch.
    pub fn maybe_train(&mut self) -> Option<S> {
        (self.replay.len() >= self.config.batch_size)
            .then(|| self.train_step().expect("buffer is full enough"))
    }

    pub fn snapshot(&self) -> AgentSnapshot<S> {
        AgentSnapshot {
            config: self.config.clone(),
            online: self.online.clone(),
            target: self.target.clone(),
            optimizer: self.optimizer.clone(),
            replay: self.replay.iter().cloned().collect(),
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            steps: self.steps,
            epsilon: self.epsilon,
        }
    }

    pub fn restore(s: AgentSnapshot<S>) -> Result<Self> {
        s.config.validate()?;
        let mut rng = ChaCha8Rng::from_seed(s.rng_seed);
        rng.set_stream(s.rng_stream);
        rng.set_word_pos(s.rng_word_pos);
        let mut replay = ReplayBuffer::new(s.config.replay_capacity);
        s.replay.into_iter().for_each(|t| replay.push(t));
        Ok(Self {
            config: s.config,
            online: s.online,
            target: s.target,
            optimizer: s.optimizer,
            replay,
            rng,
            steps: s.steps,
            epsilon: s.epsilon,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: f64) -> RLState {
        RLState::new(vec![v; STATE_DIM]).unwrap()
    }

    fn terminal(reward: f64, action: CurationAction) -> Transition {
        Transition {
            state: state(0.3),
            action,
            reward,
            next_state: state(0.1),
            terminal: true,
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_loss() {
        let mut agent: Agent<f64> = Agent::new(AgentConfig::default(), 5).unwrap();
        let mut net = agent.online().clone();
        net.zero_output_layer();
        agent.set_network(net);
        let batch: Vec<_> = (0..32)
            .map(|_| terminal(0.0, CurationAction::Review))
            .collect();
        assert_eq!(agent.train_on_batch(&batch), 0.0);
    }

    #[test]
    fn epsilon_schedule() {
        let c = AgentConfig::default();
        assert_eq!(c.epsilon_at(0), 0.1);
        assert!((c.epsilon_at(1) - 0.0995).abs() < 1e-15);
        assert_eq!(c.epsilon_at(10_000), 0.01);
        let mut prev = 1.0;
        for t in 0..2000 {
            let e = c.epsilon_at(t);
            assert!(e <= prev && e >= 0.01);
            assert_eq!(e, (0.1 * 0.995f64.powf(t as f64)).max(0.01));
            prev = e;
        }
    }

    #[test]
    fn train_step_requires_full_batch() {
        let mut agent: Agent<f32> = Agent::new(AgentConfig::default(), 1).unwrap();
        for _ in 0..31 {
            agent.remember(terminal(1.0, CurationAction::Keep));
        }
        assert!(agent.train_step().is_err());
        agent.remember(terminal(1.0, CurationAction::Keep));
        assert!(agent.train_step().is_ok());
        assert_eq!(agent.steps(), 1);
    }

    #[test]
    fn target_syncs_every_100_steps() {
        let config = AgentConfig {
            hidden: vec![8],
            ..AgentConfig::default()
        };
        let mut agent: Agent<f64> = Agent::new(config, 2).unwrap();
        let batch: Vec<_> = (0..4)
            .map(|_| terminal(1.0, CurationAction::Keep))
            .collect();
        for step in 1..=100 {
            agent.train_on_batch(&batch);
            assert_eq!(agent.online() == agent.target(), step == 100, "step {step}");
        }
    }

    #[test]
    fn exploit_ties_prefer_keep_then_discard() {
        let mut agent: Agent<f64> = Agent::new(
            AgentConfig {
                hidden: vec![4],
                ..AgentConfig::default()
            },
            3,
        )
        .unwrap();
        let mut net = agent.online().clone();
        net.zero_output_layer();
        agent.set_network(net.clone());
        assert_eq!(agent.greedy(&state(0.5)), CurationAction::Keep);
        net.layers.last_mut().unwrap().bias = vec![0.0, 1.0, 1.0];
        agent.set_network(net);
        assert_eq!(agent.greedy(&state(0.5)), CurationAction::Discard);
    }

    #[test]
    fn snapshot_round_trip_continues_identically() {
        let config = AgentConfig {
            hidden: vec![16, 8],
            batch_size: 4,
            ..AgentConfig::default()
        };
        let mut a: Agent<f64> = Agent::new(config, 9).unwrap();
        for i in 0..10 {
            a.remember(terminal(i as f64 / 10.0, CurationAction::from_index(i % 3)));
        }
        a.train_step().unwrap();
        let json = serde_json::to_string(&a.snapshot()).unwrap();
        let mut b = Agent::<f64>::restore(serde_json::from_str(&json).unwrap()).unwrap();
        for _ in 0..5 {
            assert_eq!(a.train_step().unwrap(), b.train_step().unwrap());
            assert_eq!(
                a.act(&state(0.2), Policy::Explore),
                b.act(&state(0.2), Policy::Explore)
            );
        }
    }

    #[test]
    fn bad_config_rejected() {
        assert!(AgentConfig {
            gamma: 1.5,
            ..AgentConfig::default()
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            batch_size: 0,
            ..AgentConfig::default()
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            epsilon: -0.1,
            ..AgentConfig::default()
        }
        .validate()
        .is_err());
    }
}
