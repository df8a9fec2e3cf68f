//! Count-based inverse dynamics model: predicts the action that links two
//! consecutive states, trained on the learner's own transitions only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ObservedTransition, Transition};
use crate::soft_rl::argmax;

/// Predicted action and whether `(s, s')` had been observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub action: usize,
    /// `false` when the global modal action was used as a fallback.
    pub confident: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SparseCounts", into = "SparseCounts")]
pub struct InverseDynamicsModel {
    n_actions: usize,
    counts: BTreeMap<(usize, usize), Vec<u64>>,
    action_totals: Vec<u64>,
    total_observed: u64,
}

/// On-disk form: `(s, s', a, count)` triples with a positive count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SparseCounts {
    n_actions: usize,
    counts: Vec<(usize, usize, usize, u64)>,
}

impl From<InverseDynamicsModel> for SparseCounts {
    fn from(m: InverseDynamicsModel) -> Self {
        let counts = m
            .counts
            .iter()
            .flat_map(|(&(s, sn), row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &n)| n > 0)
                    .map(move |(a, &n)| (s, sn, a, n))
            })
            .collect();
        Self {
            n_actions: m.n_actions,
            counts,
        }
    }
}

impl TryFrom<SparseCounts> for InverseDynamicsModel {
    type Error = Error;

    fn try_from(sparse: SparseCounts) -> Result<Self> {
        let mut model = InverseDynamicsModel::new(sparse.n_actions);
        for (s, sn, a, n) in sparse.counts {
            if a >= sparse.n_actions {
                return Err(Error::InvalidBatch(format!("action {a} out of range")));
            }
            model.add(s, sn, a, n);
        }
        Ok(model)
    }
}

impl InverseDynamicsModel {
    pub fn new(n_actions: usize) -> Self {
        Self {
            n_actions,
            counts: BTreeMap::new(),
            action_totals: vec![0; n_actions],
            total_observed: 0,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn total_observed(&self) -> u64 {
        self.total_observed
    }

    pub fn count(&self, s: usize, s_next: usize, a: usize) -> u64 {
        self.counts.get(&(s, s_next)).map_or(0, |row| row[a])
    }

    fn add(&mut self, s: usize, s_next: usize, a: usize, n: u64) {
        let n_actions = self.n_actions;
        self.counts.entry((s, s_next)).or_insert_with(|| vec![0; n_actions])[a] += n;
        self.action_totals[a] += n;
        self.total_observed += n;
    }

    /// Count every record of a batch of learner transitions.
    pub fn update(&mut self, batch: &[Transition]) {
        for t in batch {
            assert!(t.a < self.n_actions, "action {} out of range", t.a);
            self.add(t.s, t.s_next, t.a, 1);
        }
    }

    /// Most frequent action for `(s, s')`, lowest id on ties; unseen pairs fall
    /// back to the globally most frequent action.
    pub fn predict(&self, s: usize, s_next: usize) -> Result<Prediction> {
        if self.total_observed == 0 {
            return Err(Error::UntrainedModel);
        }
        let pick = |row: &[u64]| {
            let as_f: Vec<f64> = row.iter().map(|&n| n as f64).collect();
            argmax(&as_f)
        };
        Ok(match self.counts.get(&(s, s_next)) {
            Some(row) => Prediction {
                action: pick(row),
                confident: true,
            },
            None => Prediction {
                action: pick(&self.action_totals),
                confident: false,
            },
        })
    }

    /// Rebuild full transitions from observations with predicted actions.
    pub fn label(&self, observations: &[ObservedTransition]) -> Result<Vec<Transition>> {
        observations
            .iter()
            .map(|o| {
                Ok(Transition {
                    s: o.s,
                    a: self.predict(o.s, o.s_next)?.action,
                    s_next: o.s_next,
                    absorbing_next: o.absorbing,
                })
            })
            .collect()
    }

    /// Like [`label`](Self::label) but drops observations whose pair was never
    /// seen in learner data.
    pub fn label_confident(&self, observations: &[ObservedTransition]) -> Result<Vec<Transition>> {
        let mut out = Vec::with_capacity(observations.len());
        for o in observations {
            let p = self.predict(o.s, o.s_next)?;
            if p.confident {
                out.push(Transition {
                    s: o.s,
                    a: p.action,
                    s_next: o.s_next,
                    absorbing_next: o.absorbing,
                });
            }
        }
        Ok(out)
    }

    /// Accuracy restricted to transitions whose `(s, s')` pair the model has seen.
    pub fn covered_accuracy(&self, transitions: &[Transition]) -> Option<f64> {
        let covered: Vec<Transition> = transitions
            .iter()
            .filter(|t| self.count_pair(t.s, t.s_next) > 0)
            .copied()
            .collect();
        self.accuracy(&covered)
    }

    fn count_pair(&self, s: usize, s_next: usize) -> u64 {
        self.counts.get(&(s, s_next)).map_or(0, |row| row.iter().sum())
    }

    /// Fraction of `transitions` whose action is predicted exactly; `None` for an
    /// untrained model or an empty input.
    pub fn accuracy(&self, transitions: &[Transition]) -> Option<f64> {
        if transitions.is_empty() || self.total_observed == 0 {
            return None;
        }
        let hits = transitions
            .iter()
            .filter(|t| self.predict(t.s, t.s_next).map(|p| p.action == t.a).unwrap_or(false))
            .count();
        Some(hits as f64 / transitions.len() as f64)
    }
}
