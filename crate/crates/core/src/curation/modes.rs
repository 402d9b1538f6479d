//! Individual, smart-batch and fast-batch orchestration over a categorized pool.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use log::info;
use serde::{Deserialize, Serialize};

use super::dqn::{Agent, AgentConfig};
use super::probe::{train_probe, DEFAULT_PROBE_EVERY, NEUTRAL_ACCURACY};
use super::{
    class_entropy, cluster_embeddings, redundancy, ClassDistribution, CurationAction, Projection,
    RLState, RewardWeights, Route, RoutingThresholds, Transition, DEFAULT_CLUSTER_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::hierarchy::CategoryHierarchy;
use crate::semantics::{CategorizationResult, Embedding, VisualAttributes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Individual,
    #[default]
    Smart,
    Fast,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(Mode::Individual),
            "smart" => Ok(Mode::Smart),
            "fast" => Ok(Mode::Fast),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (individual, smart, fast)"
            ))),
        }
    }
}

pub const DEFAULT_VETO_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub mode: Mode,
    pub thresholds: RoutingThresholds,
    pub reward: RewardWeights,
    pub agent: AgentConfig,
    /// The agent discards an automatic keep when `Q(Discard) − Q(Keep)` exceeds this.
    pub veto_margin: f64,
    pub cluster_threshold: f64,
    pub probe_every: usize,
    /// Let the agent settle items that would otherwise wait for a reviewer.
    pub unattended: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Smart,
            thresholds: RoutingThresholds::default(),
            reward: RewardWeights::default(),
            agent: AgentConfig::default(),
            veto_margin: DEFAULT_VETO_MARGIN,
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
            probe_every: DEFAULT_PROBE_EVERY,
            unattended: false,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.reward.validate()?;
        self.agent.validate()?;
        if !self.veto_margin.is_finite() {
            return Err(Error::Config("veto margin must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.cluster_threshold) {
            return Err(Error::Config("cluster threshold must lie in [0, 1]".into()));
        }
        if self.probe_every == 0 {
            return Err(Error::Config("probe cadence must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Agent,
    Human,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelPath {
    pub main: usize,
    pub sub: usize,
}

/// One line of the append-only decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub image_id: String,
    pub action: CurationAction,
    pub source: DecisionSource,
    pub reward: f64,
    pub timestamp: DateTime<Utc>,
    /// Final label of a kept image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A categorized image as seen by the orchestrators.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub id: String,
    pub result: CategorizationResult,
    pub embedding: Embedding,
    pub visual: VisualAttributes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueMember {
    pub image_id: String,
    pub predicted: LabelPath,
    pub confidence: f64,
    pub state: RLState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub main: usize,
    pub sub: usize,
    pub score: f64,
}

/// A pending human decision: one image, or a whole cluster in fast mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    pub members: Vec<QueueMember>,
    /// Next-best paths of the first member, best first.
    pub alternatives: Vec<Alternative>,
}

impl QueueEntry {
    pub fn representative(&self) -> &QueueMember {
        &self.members[0]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub auto: u64,
    pub review: u64,
    pub remove: u64,
}

impl Tallies {
    pub fn count(&mut self, route: Route) {
        match route {
            Route::AutoCategorize => self.auto += 1,
            Route::HumanReview => self.review += 1,
            Route::AutoRemove => self.remove += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeOutcome {
    pub decisions: Vec<DecisionRecord>,
    pub queue: Vec<QueueEntry>,
    pub tallies: Tallies,
    pub distribution: ClassDistribution,
    pub probe_accuracy: f64,
}

/// Reward with the entropy term is 0 while nothing has been kept.
pub fn reward_for(
    w: &RewardWeights,
    conf: f64,
    d: &ClassDistribution,
    model_acc: f64,
    red: f64,
) -> Result<f64> {
    if d.total() == 0 {
        let empty = ClassDistribution::from_counts(vec![1]);
        return super::compute_reward(conf, &empty, model_acc, red, w);
    }
    super::compute_reward(conf, d, model_acc, red, w)
}

fn alternatives(result: &CategorizationResult) -> Vec<Alternative> {
    result
        .ranked()
        .into_iter()
        .filter(|e| (e.main, e.sub) != (result.best_main, result.best_sub))
        .take(3)
        .map(|e| Alternative {
            main: e.main,
            sub: e.sub,
            score: e.score.total,
        })
        .collect()
}

/// Sequential decision engine shared by the three modes.
pub struct Curator<'a> {
    config: &'a CurationConfig,
    agent: &'a mut Agent<f64>,
    projection: Projection,
    dist: ClassDistribution,
    kept: Vec<Embedding>,
    kept_labels: Vec<(String, usize)>,
    model_acc: f64,
    probe_images: Option<&'a HashMap<String, Vec<u8>>>,
    probe_seed: u64,
    pending: Option<(RLState, CurationAction, f64)>,
    now: DateTime<Utc>,
    outcome: ModeOutcome,
}

impl<'a> Curator<'a> {
    /// `now` stamps every record; `probe_images` maps image ids to transformed planes.
    pub fn new(
        hierarchy: &CategoryHierarchy,
        config: &'a CurationConfig,
        agent: &'a mut Agent<f64>,
        embedding_dim: usize,
        seed: u64,
        now: DateTime<Utc>,
    ) -> Result<Self> {
        config.validate()?;
        let dist = ClassDistribution::new(hierarchy.main_count());
        Ok(Self {
            config,
            agent,
            projection: Projection::new(seed, embedding_dim),
            dist: dist.clone(),
            kept: Vec::new(),
            kept_labels: Vec::new(),
            model_acc: NEUTRAL_ACCURACY,
            probe_images: None,
            probe_seed: seed,
            pending: None,
            now,
            outcome: ModeOutcome {
                decisions: Vec::new(),
                queue: Vec::new(),
                tallies: Tallies::default(),
                distribution: dist,
                probe_accuracy: NEUTRAL_ACCURACY,
            },
        })
    }

    pub fn with_probe_images(mut self, images: &'a HashMap<String, Vec<u8>>) -> Self {
        self.probe_images = Some(images);
        self
    }

    fn state_for(&self, item: &PoolItem) -> Result<RLState> {
        RLState::build(
            &self.projection,
            &item.embedding,
            &item.visual,
            item.result.confidence.clamp(0.0, 1.0),
            self.dist.fraction(item.result.best_main),
            redundancy(&item.embedding, &self.kept),
        )
    }

    /// Records an agent-visible step and chains the previous one to `state`.
    fn observe(&mut self, state: &RLState, action: CurationAction, reward: f64) {
        if let Some((s, a, r)) = self.pending.take() {
            self.agent.remember(Transition {
                state: s,
                action: a,
                reward: r,
                next_state: state.clone(),
                terminal: false,
            });
            self.agent.maybe_train();
        }
        self.pending = Some((state.clone(), action, reward));
    }

    fn apply(
        &mut self,
        item: &PoolItem,
        state: &RLState,
        action: CurationAction,
        source: DecisionSource,
        cluster_id: Option<usize>,
    ) -> Result<()> {
        let main = item.result.best_main;
        let after = if action == CurationAction::Keep {
            self.dist.with_added(main)
        } else {
            self.dist.clone()
        };
        let reward = reward_for(
            &self.config.reward,
            state.confidence(),
            &after,
            self.model_acc,
            state.redundancy(),
        )?;
        self.observe(state, action, reward);
        if action == CurationAction::Review {
            return Ok(());
        }
        if action == CurationAction::Keep {
            self.dist = after;
            self.kept.push(item.embedding.clone());
            self.kept_labels.push((item.id.clone(), main));
            self.maybe_retrain_probe();
        }
        self.outcome.decisions.push(DecisionRecord {
            image_id: item.id.clone(),
            action,
            source,
            reward,
            timestamp: self.now,
            label: (action == CurationAction::Keep).then_some(LabelPath {
                main,
                sub: item.result.best_sub,
            }),
            cluster_id,
            note: None,
        });
        Ok(())
    }

    fn maybe_retrain_probe(&mut self) {
        let Some(images) = self.probe_images else {
            return;
        };
        if !self
            .kept_labels
            .len()
            .is_multiple_of(self.config.probe_every)
        {
            return;
        }
        let (xs, ys): (Vec<&[u8]>, Vec<usize>) = self
            .kept_labels
            .iter()
            .filter_map(|(id, l)| images.get(id).map(|p| (p.as_slice(), *l)))
            .unzip();
        self.model_acc = train_probe(&xs, &ys, self.probe_seed).accuracy;
        info!(
            "probe retrained on {} kept samples: accuracy {:.3}",
            xs.len(),
            self.model_acc
        );
    }

    fn queue_member(item: &PoolItem, state: RLState) -> QueueMember {
        QueueMember {
            image_id: item.id.clone(),
            predicted: LabelPath {
                main: item.result.best_main,
                sub: item.result.best_sub,
            },
            confidence: item.result.confidence,
            state,
        }
    }

    fn route(&self, item: &PoolItem) -> Route {
        if !item.result.eligible {
            return Route::AutoRemove;
        }
        self.config.thresholds.route(item.result.confidence)
    }

    /// Agent-resolved keep/discard: keep unless the discard margin exceeds the veto.
    fn agent_verdict(&self, margin: f64) -> CurationAction {
        if margin > self.config.veto_margin {
            CurationAction::Discard
        } else {
            CurationAction::Keep
        }
    }

    fn smart_item(&mut self, item: &PoolItem) -> Result<()> {
        let route = self.route(item);
        self.outcome.tallies.count(route);
        let state = self.state_for(item)?;
        match route {
            Route::AutoCategorize => {
                let verdict = self.agent_verdict(self.agent.discard_margin(&state));
                let source = match verdict {
                    CurationAction::Keep => DecisionSource::Threshold,
                    _ => DecisionSource::Agent,
                };
                self.apply(item, &state, verdict, source, None)
            }
            Route::AutoRemove => self.apply(
                item,
                &state,
                CurationAction::Discard,
                DecisionSource::Threshold,
                None,
            ),
            Route::HumanReview if self.config.unattended => {
                let verdict = self.agent_verdict(self.agent.discard_margin(&state));
                self.apply(item, &state, verdict, DecisionSource::Agent, None)
            }
            Route::HumanReview => {
                self.outcome.queue.push(QueueEntry {
                    id: item.id.clone(),
                    cluster_id: None,
                    members: vec![Self::queue_member(item, state.clone())],
                    alternatives: alternatives(&item.result),
                });
                self.apply(
                    item,
                    &state,
                    CurationAction::Review,
                    DecisionSource::Agent,
                    None,
                )
            }
        }
    }

    fn individual_item(&mut self, item: &PoolItem) -> Result<()> {
        if self.config.unattended {
            return self.smart_item(item);
        }
        self.outcome.tallies.count(Route::HumanReview);
        let state = self.state_for(item)?;
        self.outcome.queue.push(QueueEntry {
            id: item.id.clone(),
            cluster_id: None,
            members: vec![Self::queue_member(item, state.clone())],
            alternatives: alternatives(&item.result),
        });
        self.apply(
            item,
            &state,
            CurationAction::Review,
            DecisionSource::Agent,
            None,
        )
    }

    fn fast_cluster(&mut self, cluster_id: usize, members: &[&PoolItem]) -> Result<()> {
        let states: Vec<RLState> = members
            .iter()
            .map(|m| self.state_for(m))
            .collect::<Result<_>>()?;
        let mean_conf =
            members.iter().map(|m| m.result.confidence).sum::<f64>() / members.len() as f64;
        let route = self.config.thresholds.route(mean_conf);
        let decision = if self.config.unattended {
            let margin = states
                .iter()
                .map(|s| self.agent.discard_margin(s))
                .sum::<f64>()
                / states.len() as f64;
            Some(match route {
                Route::AutoRemove => (CurationAction::Discard, DecisionSource::Threshold),
                Route::AutoCategorize => match self.agent_verdict(margin) {
                    CurationAction::Keep => (CurationAction::Keep, DecisionSource::Threshold),
                    a => (a, DecisionSource::Agent),
                },
                Route::HumanReview => (self.agent_verdict(margin), DecisionSource::Agent),
            })
        } else {
            None
        };
        for _ in members {
            self.outcome.tallies.count(if decision.is_some() {
                route
            } else {
                Route::HumanReview
            });
        }
        match decision {
            Some((action, source)) => {
                for (m, s) in members.iter().zip(&states) {
                    self.apply(m, s, action, source, Some(cluster_id))?;
                }
            }
            None => {
                self.outcome.queue.push(QueueEntry {
                    id: format!("cluster-{cluster_id}"),
                    cluster_id: Some(cluster_id),
                    members: members
                        .iter()
                        .zip(&states)
                        .map(|(m, s)| Self::queue_member(m, s.clone()))
                        .collect(),
                    alternatives: alternatives(&members[0].result),
                });
                for (m, s) in members.iter().zip(&states) {
                    self.apply(
                        m,
                        s,
                        CurationAction::Review,
                        DecisionSource::Agent,
                        Some(cluster_id),
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn run(mut self, pool: &[PoolItem]) -> Result<ModeOutcome> {
        match self.config.mode {
            Mode::Smart => pool.iter().try_for_each(|item| self.smart_item(item))?,
            Mode::Individual => pool
                .iter()
                .try_for_each(|item| self.individual_item(item))?,
            Mode::Fast => {
                let embeddings: Vec<Embedding> = pool.iter().map(|p| p.embedding.clone()).collect();
                let clusters = cluster_embeddings(&embeddings, self.config.cluster_threshold)?;
                for (cid, members) in clusters.iter().enumerate() {
                    let items: Vec<&PoolItem> = members.iter().map(|&i| &pool[i]).collect();
                    self.fast_cluster(cid, &items)?;
                }
            }
        }
        if let Some((s, a, r)) = self.pending.take() {
            self.agent.remember(Transition {
                state: s.clone(),
                action: a,
                reward: r,
                next_state: s,
                terminal: true,
            });
            self.agent.maybe_train();
        }
        self.outcome.distribution = self.dist;
        self.outcome.probe_accuracy = self.model_acc;
        Ok(self.outcome)
    }
}

/// Entropy of `d`, or `None` while it is empty.
pub fn entropy_or_none(d: &ClassDistribution) -> Option<f64> {
    class_entropy(d).ok()
}
