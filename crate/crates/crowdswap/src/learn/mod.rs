//! Online binary classification of task outcomes over a data stream with
//! delayed labels: feature extraction, three incremental learners, and the
//! prequential (test-then-train) bookkeeping around them.

mod forest;
mod hoeffding;
mod knn;
mod prequential;

pub use forest::{BaggingMode, OnlineForest};
pub use hoeffding::{HoeffdingTree, TreeParams};
pub use knn::WindowKnn;
pub use prequential::{
    PendingKey, PendingPrediction, PredictorBank, PredictorScope, PrequentialEvaluator,
    PrequentialPipeline,
};

use crate::agents::WorkerAgent;
use crate::geoenv::{polyline_length_m, GeoError, Location, TrafficGrid};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_FEATURES: usize = 9;

/// Order is load-bearing: arrays index features by this list.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "speed_now",
    "speed_mean",
    "speed_max",
    "speed_min",
    "remaining_dist_m",
    "remaining_time_s",
    "dist_normal_m",
    "dist_slow_m",
    "dist_jam_m",
];

/// Feature taxonomy: what the worker can do, where the task stands, and
/// what the environment looks like on the remaining route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Capability,
    ParcelState,
    Environment,
}

pub fn feature_category(index: usize) -> FeatureCategory {
    match index {
        0..=3 => FeatureCategory::Capability,
        4 | 5 => FeatureCategory::ParcelState,
        6..=8 => FeatureCategory::Environment,
        _ => panic!("feature index {index} out of range"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub speed_now: f64,
    pub speed_mean: f64,
    pub speed_max: f64,
    pub speed_min: f64,
    pub remaining_dist_m: f64,
    pub remaining_time_s: f64,
    pub dist_normal_m: f64,
    pub dist_slow_m: f64,
    pub dist_jam_m: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; N_FEATURES] {
        [
            self.speed_now,
            self.speed_mean,
            self.speed_max,
            self.speed_min,
            self.remaining_dist_m,
            self.remaining_time_s,
            self.dist_normal_m,
            self.dist_slow_m,
            self.dist_jam_m,
        ]
    }

    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        FeatureVector {
            speed_now: a[0],
            speed_mean: a[1],
            speed_max: a[2],
            speed_min: a[3],
            remaining_dist_m: a[4],
            remaining_time_s: a[5],
            dist_normal_m: a[6],
            dist_slow_m: a[7],
            dist_jam_m: a[8],
        }
    }
}

/// Task outcome class. `Delayed` is the positive class of all metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Delayed,
    NotDelayed,
}

impl Label {
    /// Class index: NotDelayed = 0, Delayed = 1.
    pub fn index(self) -> usize {
        match self {
            Label::NotDelayed => 0,
            Label::Delayed => 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("pending prediction {0} is unknown or already resolved")]
    UnknownKey(String),
    #[error("operation unsupported for this learner")]
    Unsupported,
}

/// Snapshot features of (worker, task) at `now_s`.
///
/// The remaining route is the straight-leg polyline from the worker's
/// position through the task's unvisited locations in order; traffic fields
/// decompose that polyline by current cell states.
pub fn extract_features(
    agent: &WorkerAgent,
    task_remaining: &[Location],
    deadline_s: f64,
    grid: &TrafficGrid,
    now_s: f64,
) -> Result<FeatureVector, GeoError> {
    let mut polyline = Vec::with_capacity(1 + task_remaining.len());
    polyline.push(agent.position);
    polyline.extend_from_slice(task_remaining);
    let profile = grid.route_traffic_profile(&polyline)?;
    Ok(FeatureVector {
        speed_now: agent.speed_now,
        speed_mean: agent.speed_stats.mean(),
        speed_max: agent.speed_stats.max,
        speed_min: agent.speed_stats.min,
        remaining_dist_m: polyline_length_m(&polyline),
        remaining_time_s: deadline_s - now_s,
        dist_normal_m: profile.dist_normal_m,
        dist_slow_m: profile.dist_slow_m,
        dist_jam_m: profile.dist_jam_m,
    })
}

/// ε = sqrt(R² ln(1/δ) / (2n)): with confidence 1-δ, the true mean of a
/// range-R variable is within ε of the observed mean after n observations.
pub fn hoeffding_bound(range: f64, delta: f64, n: u64) -> f64 {
    debug_assert!(n >= 1 && delta > 0.0 && delta < 1.0 && range > 0.0);
    (range * range * (1.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Precision, recall, and F1 for the positive class; 0/0 is 0 by convention.
pub fn classification_metrics(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Learner choice and hyperparameters, as written in scenario configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    HoeffdingTree {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_grace")]
        grace_period: u64,
        #[serde(default = "default_tie")]
        tie_threshold: f64,
    },
    WindowKnn {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_window")]
        window_size: usize,
    },
    OnlineForest {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_grace")]
        grace_period: u64,
        #[serde(default = "default_tie")]
        tie_threshold: f64,
    },
}

fn default_delta() -> f64 {
    1e-7
}
fn default_grace() -> u64 {
    200
}
fn default_tie() -> f64 {
    0.05
}
fn default_k() -> usize {
    10
}
fn default_window() -> usize {
    1000
}
fn default_n_trees() -> usize {
    20
}

impl Default for LearnerConfig {
    /// The headline configuration: a 20-tree online-bagging forest.
    fn default() -> Self {
        LearnerConfig::OnlineForest {
            n_trees: default_n_trees(),
            delta: default_delta(),
            grace_period: default_grace(),
            tie_threshold: default_tie(),
        }
    }
}

impl LearnerConfig {
    pub fn hoeffding() -> Self {
        LearnerConfig::HoeffdingTree {
            delta: default_delta(),
            grace_period: default_grace(),
            tie_threshold: default_tie(),
        }
    }

    pub fn knn() -> Self {
        LearnerConfig::WindowKnn { k: default_k(), window_size: default_window() }
    }
}

/// An online classifier with interleaved predict-then-learn.
#[derive(Debug, Clone)]
pub enum StreamModel {
    HoeffdingTree(HoeffdingTree),
    WindowKnn(WindowKnn),
    OnlineForest(OnlineForest),
}

impl StreamModel {
    /// Build a model; `seed` feeds only the forest's bagging draws.
    pub fn from_config(config: &LearnerConfig, seed: u64) -> StreamModel {
        match *config {
            LearnerConfig::HoeffdingTree { delta, grace_period, tie_threshold } => {
                StreamModel::HoeffdingTree(HoeffdingTree::new(TreeParams {
                    delta,
                    grace_period,
                    tie_threshold,
                }))
            }
            LearnerConfig::WindowKnn { k, window_size } => {
                StreamModel::WindowKnn(WindowKnn::new(k, window_size))
            }
            LearnerConfig::OnlineForest { n_trees, delta, grace_period, tie_threshold } => {
                StreamModel::OnlineForest(OnlineForest::new(
                    n_trees,
                    TreeParams { delta, grace_period, tie_threshold },
                    BaggingMode::Poisson,
                    seed,
                ))
            }
        }
    }

    /// Probability of `Delayed`; 0.5 before any training.
    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        match self {
            StreamModel::HoeffdingTree(m) => m.predict_proba(x),
            StreamModel::WindowKnn(m) => m.predict_proba(x),
            StreamModel::OnlineForest(m) => m.predict_proba(x),
        }
    }

    pub fn learn_one(&mut self, x: &FeatureVector, y: Label) {
        match self {
            StreamModel::HoeffdingTree(m) => m.learn_one(x, y),
            StreamModel::WindowKnn(m) => m.learn_one(x, y),
            StreamModel::OnlineForest(m) => m.learn_one(x, y),
        }
    }

    pub fn n_seen(&self) -> u64 {
        match self {
            StreamModel::HoeffdingTree(m) => m.n_seen(),
            StreamModel::WindowKnn(m) => m.n_seen(),
            StreamModel::OnlineForest(m) => m.n_seen(),
        }
    }

    /// Per-feature impurity-decrease shares; sums to 1 once any split
    /// exists, all zeros before. The window model has no notion of it.
    pub fn feature_importance(&self) -> Result<[f64; N_FEATURES], LearnError> {
        match self {
            StreamModel::HoeffdingTree(m) => Ok(m.feature_importance()),
            StreamModel::WindowKnn(_) => Err(LearnError::Unsupported),
            StreamModel::OnlineForest(m) => Ok(m.feature_importance()),
        }
    }
}

/// Sum per-feature weights into (capability, parcel_state, environment).
pub fn aggregate_importance(weights: &[f64; N_FEATURES]) -> (f64, f64, f64) {
    let mut cap = 0.0;
    let mut parcel = 0.0;
    let mut env = 0.0;
    for (i, w) in weights.iter().enumerate() {
        match feature_category(i) {
            FeatureCategory::Capability => cap += w,
            FeatureCategory::ParcelState => parcel += w,
            FeatureCategory::Environment => env += w,
        }
    }
    (cap, parcel, env)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hoeffding_bound_closed_form() {
        // R=1, delta=1/e, n=2: sqrt(1 * 1 / 4) = 0.5.
        let e = hoeffding_bound(1.0, 1.0 / std::f64::consts::E, 2);
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hoeffding_bound_numeric_oracle() {
        // Frozen from an independent numeric evaluation.
        let e = hoeffding_bound(1.0, 0.05, 200);
        assert!((e - 0.08654091913011426).abs() < 1e-12, "got {e}");
    }

    #[test]
    fn hoeffding_bound_decreases_in_n() {
        let mut prev = f64::INFINITY;
        for n in 1..50 {
            let e = hoeffding_bound(1.0, 0.05, n);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn metrics_zero_convention() {
        assert_eq!(classification_metrics(0, 0, 0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_perfect() {
        let (p, r, f1) = classification_metrics(10, 0, 0);
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn metrics_hand_arithmetic() {
        let (p, r, f1) = classification_metrics(9, 1, 3);
        assert!((p - 0.9).abs() < 1e-12);
        assert!((r - 0.75).abs() < 1e-12);
        assert!((f1 - 0.8181818181818182).abs() < 1e-12);
    }

    #[test]
    fn category_partition_covers_all_features() {
        let mut w = [0.0; N_FEATURES];
        w.iter_mut().for_each(|v| *v = 1.0 / N_FEATURES as f64);
        let (cap, parcel, env) = aggregate_importance(&w);
        assert!((cap + parcel + env - 1.0).abs() < 1e-12);
        assert!((cap - 4.0 / 9.0).abs() < 1e-12);
        assert!((parcel - 2.0 / 9.0).abs() < 1e-12);
        assert!((env - 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn feature_array_round_trip() {
        let x = FeatureVector {
            speed_now: 1.0,
            speed_mean: 2.0,
            speed_max: 3.0,
            speed_min: 0.5,
            remaining_dist_m: 1200.0,
            remaining_time_s: -30.0,
            dist_normal_m: 700.0,
            dist_slow_m: 400.0,
            dist_jam_m: 100.0,
        };
        assert_eq!(FeatureVector::from_array(x.as_array()), x);
    }
}
