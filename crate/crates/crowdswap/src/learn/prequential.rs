//! Test-then-train plumbing: predictions are registered against a key,
//! held while the label is unknown, and on resolution first scored against
//! the truth and only then used for training. No item ever contributes to
//! the statistics of the prediction made on itself.

use super::{classification_metrics, FeatureVector, Label, LearnError, LearnerConfig, StreamModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Predicted-positive decision threshold: strictly above the untrained
/// prior, so a cold model defaults to the majority-negative class.
const DECISION_THRESHOLD: f64 = 0.5;

/// Cadence of F1 snapshots, in resolved items.
const F1_SNAPSHOT_EVERY: u64 = 100;

/// Identity of one outstanding prediction. `seq` separates the repeated
/// monitoring snapshots of the same (worker, task) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PendingKey {
    pub worker_id: String,
    pub task_id: String,
    pub seq: u64,
}

impl fmt::Display for PendingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.worker_id, self.task_id, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingPrediction {
    pub features: FeatureVector,
    pub predicted: f64,
    pub issued_at: f64,
}

/// Confusion counts and the F1 trajectory of a prequential run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrequentialEvaluator {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub n_resolved: u64,
    /// (resolved items, F1) every 100 resolutions.
    pub f1_history: Vec<(u64, f64)>,
}

impl PrequentialEvaluator {
    pub fn record(&mut self, predicted_delayed: bool, actual: Label) {
        match (predicted_delayed, actual) {
            (true, Label::Delayed) => self.tp += 1,
            (true, Label::NotDelayed) => self.fp += 1,
            (false, Label::Delayed) => self.fn_ += 1,
            (false, Label::NotDelayed) => self.tn += 1,
        }
        self.n_resolved += 1;
        if self.n_resolved % F1_SNAPSHOT_EVERY == 0 {
            self.f1_history.push((self.n_resolved, self.f1()));
        }
    }

    pub fn precision(&self) -> f64 {
        classification_metrics(self.tp, self.fp, self.fn_).0
    }

    pub fn recall(&self) -> f64 {
        classification_metrics(self.tp, self.fp, self.fn_).1
    }

    pub fn f1(&self) -> f64 {
        classification_metrics(self.tp, self.fp, self.fn_).2
    }
}

/// One shared model, or one model per worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorScope {
    #[default]
    Global,
    PerWorker,
}

/// The model store behind the pipeline.
#[derive(Debug, Clone)]
pub enum PredictorBank {
    Global(StreamModel),
    PerWorker {
        config: LearnerConfig,
        seed: u64,
        models: BTreeMap<String, StreamModel>,
    },
}

impl PredictorBank {
    pub fn new(scope: PredictorScope, config: &LearnerConfig, seed: u64) -> Self {
        match scope {
            PredictorScope::Global => PredictorBank::Global(StreamModel::from_config(config, seed)),
            PredictorScope::PerWorker => PredictorBank::PerWorker {
                config: *config,
                seed,
                models: BTreeMap::new(),
            },
        }
    }

    pub fn predict_proba(&self, worker_id: &str, x: &FeatureVector) -> f64 {
        match self {
            PredictorBank::Global(m) => m.predict_proba(x),
            // A worker never trained on predicts at the untrained prior.
            PredictorBank::PerWorker { models, .. } => {
                models.get(worker_id).map_or(0.5, |m| m.predict_proba(x))
            }
        }
    }

    pub fn learn_one(&mut self, worker_id: &str, x: &FeatureVector, y: Label) {
        match self {
            PredictorBank::Global(m) => m.learn_one(x, y),
            PredictorBank::PerWorker { config, seed, models } => {
                // Derive a per-worker bagging seed from the worker id so
                // model construction does not depend on first-touch order.
                let model = models.entry(worker_id.to_string()).or_insert_with(|| {
                    let mut h = 0xcbf29ce484222325u64;
                    for b in worker_id.bytes() {
                        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                    }
                    StreamModel::from_config(config, *seed ^ h)
                });
                model.learn_one(x, y);
            }
        }
    }

    pub fn n_seen(&self) -> u64 {
        match self {
            PredictorBank::Global(m) => m.n_seen(),
            PredictorBank::PerWorker { models, .. } => models.values().map(|m| m.n_seen()).sum(),
        }
    }

    /// Importance pooled across the bank; per-worker models weigh by items
    /// seen.
    pub fn feature_importance(&self) -> Result<[f64; super::N_FEATURES], LearnError> {
        match self {
            PredictorBank::Global(m) => m.feature_importance(),
            PredictorBank::PerWorker { models, .. } => {
                let mut acc = [0.0; super::N_FEATURES];
                let mut any = false;
                for m in models.values() {
                    let imp = m.feature_importance()?;
                    for f in 0..super::N_FEATURES {
                        acc[f] += imp[f] * m.n_seen() as f64;
                    }
                    any = true;
                }
                if !any {
                    return Ok(acc);
                }
                let total: f64 = acc.iter().sum();
                if total > 0.0 {
                    acc.iter_mut().for_each(|w| *w /= total);
                }
                Ok(acc)
            }
        }
    }
}

/// The full prequential pipeline: model(s), outstanding predictions, the
/// evaluator, and the raw decision log for recount audits.
#[derive(Debug, Clone)]
pub struct PrequentialPipeline {
    pub bank: PredictorBank,
    pub eval: PrequentialEvaluator,
    pending: BTreeMap<PendingKey, PendingPrediction>,
    /// Every resolved (predicted delayed?, actual) pair, in order.
    pub decision_log: Vec<(bool, Label)>,
}

impl PrequentialPipeline {
    pub fn new(bank: PredictorBank) -> Self {
        PrequentialPipeline {
            bank,
            eval: PrequentialEvaluator::default(),
            pending: BTreeMap::new(),
            decision_log: Vec::new(),
        }
    }

    /// Predict and register the item for later resolution. Keys are unique
    /// by construction (monotone `seq`); re-registration is a bug.
    pub fn predict_register(&mut self, key: PendingKey, x: FeatureVector, now_s: f64) -> f64 {
        let p = self.bank.predict_proba(&key.worker_id, &x);
        let prev = self.pending.insert(
            key,
            PendingPrediction { features: x, predicted: p, issued_at: now_s },
        );
        debug_assert!(prev.is_none(), "pending key registered twice");
        p
    }

    /// Read-only prediction, e.g. for scoring hypothetical assignees.
    pub fn predict_only(&self, worker_id: &str, x: &FeatureVector) -> f64 {
        self.bank.predict_proba(worker_id, x)
    }

    /// The true label arrived: score the stored prediction, then train on
    /// the item. Errors on unknown or already-resolved keys.
    pub fn resolve(&mut self, key: &PendingKey, actual: Label) -> Result<(), LearnError> {
        let pending = self
            .pending
            .remove(key)
            .ok_or_else(|| LearnError::UnknownKey(key.to_string()))?;
        let predicted_delayed = pending.predicted > DECISION_THRESHOLD;
        self.eval.record(predicted_delayed, actual);
        self.decision_log.push((predicted_delayed, actual));
        self.bank.learn_one(&key.worker_id, &pending.features, actual);
        Ok(())
    }

    /// Discard a registered prediction without scoring or training, e.g.
    /// when a transfer makes its would-be label counterfactual.
    pub fn void(&mut self, key: &PendingKey) -> bool {
        self.pending.remove(key).is_some()
    }

    /// All outstanding keys for one (worker, task) pair, oldest first.
    fn pair_keys(&self, worker_id: &str, task_id: &str) -> Vec<PendingKey> {
        let lo = PendingKey { worker_id: worker_id.into(), task_id: task_id.into(), seq: 0 };
        let hi = PendingKey { worker_id: worker_id.into(), task_id: task_id.into(), seq: u64::MAX };
        self.pending.range(lo..=hi).map(|(k, _)| k.clone()).collect()
    }

    /// Resolve every outstanding prediction for (worker, task) with the same
    /// label, oldest first; returns how many were resolved.
    pub fn resolve_pair(&mut self, worker_id: &str, task_id: &str, actual: Label) -> usize {
        let keys = self.pair_keys(worker_id, task_id);
        for key in &keys {
            self.resolve(key, actual).expect("key just listed as pending");
        }
        keys.len()
    }

    /// Void every outstanding prediction for (worker, task); returns how many
    /// were dropped.
    pub fn void_pair(&mut self, worker_id: &str, task_id: &str) -> usize {
        let keys = self.pair_keys(worker_id, task_id);
        for key in &keys {
            self.void(key);
        }
        keys.len()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }
}
