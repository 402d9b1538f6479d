//! Review queue state: pending entries, human decisions, the append-only decision
//! log and dashboard statistics. The HTTP layer wraps this behind one mutex.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::curation::modes::{
    reward_for, Alternative, DecisionRecord, DecisionSource, LabelPath, QueueEntry, Tallies,
};
use crate::curation::{
    class_entropy, ClassDistribution, CurationAction, RewardWeights, Transition,
};
use crate::error::{Error, Result};
use crate::hierarchy::CategoryHierarchy;
use crate::DqnAgent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Override,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanDecision {
    #[serde(default)]
    pub image_id: Option<String>,
    #[serde(default)]
    pub cluster_id: Option<usize>,
    pub verdict: Verdict,
    /// Override target names; required for `override`.
    #[serde(default)]
    pub main: Option<String>,
    #[serde(default)]
    pub sub: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub queue_id: String,
    pub applied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathView {
    pub main: String,
    pub sub: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeView {
    pub main: String,
    pub sub: String,
    pub score: f64,
}

/// Queue entry as served to the review UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    pub member_ids: Vec<String>,
    pub predicted: PathView,
    pub confidence: f64,
    pub alternatives: Vec<AlternativeView>,
    /// Base64 PNG of the source image.
    pub thumbnail: Option<String>,
    /// Base64 PNG after the pipeline.
    pub transformed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub name: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub version: u64,
    pub per_class: Vec<ClassCount>,
    /// `null` until something is kept.
    pub entropy: Option<f64>,
    pub queue_depth: usize,
    pub tallies: Tallies,
    pub decisions: usize,
    pub epsilon: Option<f64>,
    pub probe_accuracy: Option<f64>,
}

/// Final membership from a decision log: the last human decision for an image wins,
/// otherwise its last automatic decision. `None` means discarded.
pub fn final_membership(records: &[DecisionRecord]) -> BTreeMap<String, Option<LabelPath>> {
    let mut out: BTreeMap<String, (bool, Option<LabelPath>)> = BTreeMap::new();
    for r in records {
        let human = r.source == DecisionSource::Human;
        let value = match r.action {
            CurationAction::Keep => r.label,
            _ => None,
        };
        match out.get(&r.image_id) {
            Some((true, _)) if !human => {}
            _ => {
                out.insert(r.image_id.clone(), (human, value));
            }
        }
    }
    out.into_iter().map(|(k, (_, v))| (k, v)).collect()
}

pub fn read_log(path: &Path) -> Result<Vec<DecisionRecord>> {
    crate::acquisition::read_jsonl(path)
}

pub struct ReviewState {
    hierarchy: CategoryHierarchy,
    queue: Vec<QueueEntry>,
    resolved: Vec<bool>,
    by_id: HashMap<String, usize>,
    records: Vec<DecisionRecord>,
    log_path: Option<PathBuf>,
    dist: ClassDistribution,
    tallies: Tallies,
    reward: RewardWeights,
    agent: Option<DqnAgent>,
    probe_accuracy: Option<f64>,
    version: u64,
}

impl ReviewState {
    /// Rebuilds state from a queue and a replayed decision log. Entries whose
    /// members all carry a human decision count as resolved.
    pub fn new(
        hierarchy: CategoryHierarchy,
        queue: Vec<QueueEntry>,
        records: Vec<DecisionRecord>,
        tallies: Tallies,
    ) -> Self {
        let by_id = queue
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id.clone(), i))
            .collect();
        let human: std::collections::HashSet<&str> = records
            .iter()
            .filter(|r| r.source == DecisionSource::Human)
            .map(|r| r.image_id.as_str())
            .collect();
        let resolved = queue
            .iter()
            .map(|q| {
                q.members
                    .iter()
                    .all(|m| human.contains(m.image_id.as_str()))
            })
            .collect();
        let mut dist = ClassDistribution::new(hierarchy.main_count());
        for label in final_membership(&records).values().flatten() {
            if label.main < dist.classes() {
                dist.counts[label.main] += 1;
            }
        }
        Self {
            hierarchy,
            queue,
            resolved,
            by_id,
            records,
            log_path: None,
            dist,
            tallies,
            reward: RewardWeights::default(),
            agent: None,
            probe_accuracy: None,
            version: 0,
        }
    }

    /// Loads the existing log at `path` and appends future decisions to it.
    pub fn open(
        hierarchy: CategoryHierarchy,
        queue: Vec<QueueEntry>,
        log_path: impl Into<PathBuf>,
        tallies: Tallies,
    ) -> Result<Self> {
        let log_path = log_path.into();
        let records = if log_path.exists() {
            read_log(&log_path)?
        } else {
            Vec::new()
        };
        let mut s = Self::new(hierarchy, queue, records, tallies);
        s.log_path = Some(log_path);
        Ok(s)
    }

    pub fn with_agent(mut self, agent: DqnAgent) -> Self {
        self.agent = Some(agent);
        self
    }

    pub fn with_reward(mut self, reward: RewardWeights) -> Self {
        self.reward = reward;
        self
    }

    pub fn with_probe_accuracy(mut self, acc: Option<f64>) -> Self {
        self.probe_accuracy = acc;
        self
    }

    pub fn hierarchy(&self) -> &CategoryHierarchy {
        &self.hierarchy
    }

    pub fn agent(&self) -> Option<&DqnAgent> {
        self.agent.as_ref()
    }

    pub fn records(&self) -> &[DecisionRecord] {
        &self.records
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Up to `limit` unresolved entries in queue order; `clusters` filters by kind.
    pub fn next_batch(&self, limit: usize, clusters: Option<bool>) -> Vec<&QueueEntry> {
        self.queue
            .iter()
            .zip(&self.resolved)
            .filter(|(q, &done)| !done && clusters.is_none_or(|c| q.cluster_id.is_some() == c))
            .map(|(q, _)| q)
            .take(limit)
            .collect()
    }

    pub fn pending(&self) -> usize {
        self.resolved.iter().filter(|r| !**r).count()
    }

    /// Whether `image_id` belongs to any queue entry.
    pub fn knows_image(&self, image_id: &str) -> bool {
        self.queue
            .iter()
            .any(|q| q.members.iter().any(|m| m.image_id == image_id))
    }

    pub fn path_view(&self, p: LabelPath) -> PathView {
        let main = &self.hierarchy.categories[p.main];
        PathView {
            main: main.name.clone(),
            sub: main.subcategories[p.sub].name.clone(),
        }
    }

    pub fn queue_item(&self, q: &QueueEntry) -> QueueItem {
        let rep = q.representative();
        let alt = |a: &Alternative| {
            let v = self.path_view(LabelPath {
                main: a.main,
                sub: a.sub,
            });
            AlternativeView {
                main: v.main,
                sub: v.sub,
                score: a.score,
            }
        };
        QueueItem {
            image_id: q.id.clone(),
            cluster_id: q.cluster_id,
            member_ids: q.members.iter().map(|m| m.image_id.clone()).collect(),
            predicted: self.path_view(rep.predicted),
            confidence: rep.confidence,
            alternatives: q.alternatives.iter().map(alt).collect(),
            thumbnail: None,
            transformed: None,
        }
    }

    fn locate(&self, d: &HumanDecision) -> Result<usize> {
        let key = match (&d.image_id, d.cluster_id) {
            (_, Some(c)) => format!("cluster-{c}"),
            (Some(id), None) => id.clone(),
            (None, None) => {
                return Err(Error::Precondition(
                    "decision needs image_id or cluster_id".into(),
                ))
            }
        };
        self.by_id.get(&key).copied().ok_or(Error::UnknownId(key))
    }

    fn override_path(&self, d: &HumanDecision) -> Result<Option<LabelPath>> {
        if d.verdict != Verdict::Override {
            return Ok(None);
        }
        let (main, sub) = (
            d.main.clone().unwrap_or_default(),
            d.sub.clone().unwrap_or_default(),
        );
        match self.hierarchy.find_path(&main, &sub) {
            Some((m, s)) => Ok(Some(LabelPath { main: m, sub: s })),
            None => Err(Error::InvalidOverride { main, sub }),
        }
    }

    /// Applies a human decision to one image or a whole cluster.
    pub fn submit(&mut self, d: &HumanDecision) -> Result<Ack> {
        let idx = self.locate(d)?;
        let entry = &self.queue[idx];
        if self.resolved[idx] {
            return Err(Error::Conflict(entry.id.clone()));
        }
        let target = self.override_path(d)?;
        let timestamp = d.timestamp.unwrap_or_else(Utc::now);
        let acc = self
            .probe_accuracy
            .unwrap_or(crate::curation::probe::NEUTRAL_ACCURACY);
        let mut dist = self.dist.clone();
        let mut new_records = Vec::with_capacity(entry.members.len());
        let mut transitions = Vec::with_capacity(entry.members.len());
        for m in &entry.members {
            let (action, label, conf) = match d.verdict {
                Verdict::Discard => (CurationAction::Discard, None, m.confidence.clamp(0.0, 1.0)),
                _ => (
                    CurationAction::Keep,
                    Some(target.unwrap_or(m.predicted)),
                    1.0,
                ),
            };
            if let Some(l) = label {
                dist = dist.with_added(l.main);
            }
            let reward = reward_for(&self.reward, conf, &dist, acc, m.state.redundancy())?;
            new_records.push(DecisionRecord {
                image_id: m.image_id.clone(),
                action,
                source: DecisionSource::Human,
                reward,
                timestamp,
                label,
                cluster_id: entry.cluster_id,
                note: d.note.clone(),
            });
            transitions.push(Transition {
                state: m.state.clone(),
                action,
                reward,
                next_state: m.state.clone(),
                terminal: true,
            });
        }
        if let Some(path) = &self.log_path {
            append_records(path, &new_records)?;
        }
        let ack = Ack {
            queue_id: entry.id.clone(),
            applied: new_records.len(),
        };
        self.resolved[idx] = true;
        self.dist = dist;
        self.records.extend(new_records);
        if let Some(agent) = self.agent.as_mut() {
            for t in transitions {
                agent.remember(t);
                agent.maybe_train();
            }
        }
        self.version += 1;
        Ok(ack)
    }

    pub fn membership(&self) -> BTreeMap<String, Option<LabelPath>> {
        final_membership(&self.records)
    }

    pub fn stats(&self) -> Stats {
        Stats {
            version: self.version,
            per_class: self
                .hierarchy
                .categories
                .iter()
                .zip(&self.dist.counts)
                .map(|(c, &count)| ClassCount {
                    name: c.name.clone(),
                    count,
                })
                .collect(),
            entropy: class_entropy(&self.dist).ok(),
            queue_depth: self.pending(),
            tallies: self.tallies,
            decisions: self.records.len(),
            epsilon: self.agent.as_ref().map(|a| a.epsilon()),
            probe_accuracy: self.probe_accuracy,
        }
    }
}

fn append_records(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&buf)
        .and_then(|_| f.sync_data())
        .map_err(|e| Error::io(path, e))
}
