//! Online bagging ensemble of Hoeffding trees: each member trains on every
//! item a Poisson(1)-distributed number of times, approximating bootstrap
//! resampling on an infinite stream. Prediction is the mean of member
//! probabilities.

use super::hoeffding::{HoeffdingTree, TreeParams};
use super::{FeatureVector, Label, N_FEATURES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Per-item training weight scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaggingMode {
    /// Poisson(1) draws per member: the online bagging scheme.
    Poisson,
    /// Constant weight 1: every member sees every item exactly once; with a
    /// single member this is definitionally a plain Hoeffding tree.
    Unit,
}

/// RNG stream reserved for bagging draws (see the engine's stream map).
pub const BAGGING_RNG_STREAM: u64 = 5;

#[derive(Debug, Clone)]
pub struct OnlineForest {
    trees: Vec<HoeffdingTree>,
    mode: BaggingMode,
    rng: ChaCha8Rng,
    n_seen: u64,
}

impl OnlineForest {
    pub fn new(n_trees: usize, params: TreeParams, mode: BaggingMode, seed: u64) -> Self {
        assert!(n_trees >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(BAGGING_RNG_STREAM);
        OnlineForest {
            trees: (0..n_trees).map(|_| HoeffdingTree::new(params)).collect(),
            mode,
            rng,
            n_seen: 0,
        }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    /// Mean of member probabilities; 0.5 before any training.
    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn learn_one(&mut self, x: &FeatureVector, y: Label) {
        self.n_seen += 1;
        let poisson = Poisson::new(1.0).unwrap();
        for tree in &mut self.trees {
            let w = match self.mode {
                BaggingMode::Poisson => poisson.sample(&mut self.rng) as u64,
                BaggingMode::Unit => 1,
            };
            for _ in 0..w {
                tree.learn_one(x, y);
            }
        }
    }

    /// Per-feature impurity-decrease shares pooled over all members.
    pub fn feature_importance(&self) -> [f64; N_FEATURES] {
        let mut acc = [0.0; N_FEATURES];
        for tree in &self.trees {
            let g = tree.raw_gains();
            for f in 0..N_FEATURES {
                acc[f] += g[f];
            }
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|w| *w /= total);
        }
        acc
    }

}
