//! Incremental decision tree for numeric features: a leaf splits only when
//! the Hoeffding bound guarantees, with confidence 1-delta, that the best
//! candidate split truly beats the runner-up on information gain.
//!
//! Numeric features are summarized per leaf, per class by Gaussian
//! estimators (Welford) plus observed min/max; candidate thresholds are
//! equidistant points over the observed range.

use super::{FeatureVector, Label, N_FEATURES};

/// Candidate thresholds evaluated per feature at each split attempt.
const N_THRESHOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// Split confidence: 1 - delta.
    pub delta: f64,
    /// Leaf observations between split attempts.
    pub grace_period: u64,
    /// Tie threshold tau: split regardless of the runner-up once the bound
    /// shrinks below it.
    pub tie_threshold: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { delta: 1e-7, grace_period: 200, tie_threshold: 0.05 }
    }
}

/// Welford running mean/variance plus range, for one (leaf, class, feature).
#[derive(Debug, Clone, Copy, Default)]
struct GaussianEstimator {
    n: f64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl GaussianEstimator {
    fn observe(&mut self, v: f64) {
        if self.n == 0.0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0)).max(0.0).sqrt()
        }
    }

    /// Estimated fraction of this class's mass at or below `t`.
    fn cdf(&self, t: f64) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        let sd = self.std();
        if sd < 1e-12 {
            return if self.mean <= t { 1.0 } else { 0.0 };
        }
        normal_cdf((t - self.mean) / sd)
    }
}

/// Standard normal CDF via the Abramowitz-Stegun erf approximation
/// (max absolute error ~1.5e-7, ample for split scoring).
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

#[derive(Debug, Clone)]
struct LeafStats {
    /// Class counts; fractional because fresh children inherit estimated
    /// mass from the split that created them.
    class_n: [f64; 2],
    gauss: [[GaussianEstimator; 2]; N_FEATURES],
    seen_since_eval: u64,
}

impl LeafStats {
    fn new(class_n: [f64; 2]) -> Self {
        LeafStats {
            class_n,
            gauss: [[GaussianEstimator::default(); 2]; N_FEATURES],
            seen_since_eval: 0,
        }
    }

    fn total(&self) -> f64 {
        self.class_n[0] + self.class_n[1]
    }

    fn proba_delayed(&self) -> f64 {
        // Laplace alpha = 1: untrained leaves sit at the uniform prior 0.5.
        (self.class_n[1] + 1.0) / (self.total() + 2.0)
    }
}

fn entropy(counts: [f64; 2]) -> f64 {
    let n = counts[0] + counts[1];
    if n <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for c in counts {
        if c > 0.0 {
            let p = c / n;
            h -= p * p.log2();
        }
    }
    h
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(LeafStats),
    Split {
        feature: usize,
        threshold: f64,
        /// Information gain at split time, weighted by the leaf mass; the
        /// raw material of feature importance.
        gain_weight: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CandidateSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    left_n: [f64; 2],
    right_n: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct HoeffdingTree {
    root: Node,
    params: TreeParams,
    n_seen: u64,
    n_splits: u64,
}

impl HoeffdingTree {
    pub fn new(params: TreeParams) -> Self {
        HoeffdingTree {
            root: Node::Leaf(LeafStats::new([0.0, 0.0])),
            params,
            n_seen: 0,
            n_splits: 0,
        }
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn n_splits(&self) -> u64 {
        self.n_splits
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        let a = x.as_array();
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(stats) => return stats.proba_delayed(),
                Node::Split { feature, threshold, left, right, .. } => {
                    node = if a[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn learn_one(&mut self, x: &FeatureVector, y: Label) {
        self.n_seen += 1;
        let a = x.as_array();
        let params = self.params;

        let mut node = &mut self.root;
        loop {
            match node {
                Node::Leaf(stats) => {
                    let c = y.index();
                    stats.class_n[c] += 1.0;
                    for (f, v) in a.iter().enumerate() {
                        stats.gauss[f][c].observe(*v);
                    }
                    stats.seen_since_eval += 1;
                    if stats.seen_since_eval >= params.grace_period {
                        stats.seen_since_eval = 0;
                        if let Some(split) = choose_split(stats, &params) {
                            let gain_weight = split.gain * stats.total();
                            *node = Node::Split {
                                feature: split.feature,
                                threshold: split.threshold,
                                gain_weight,
                                left: Box::new(Node::Leaf(LeafStats::new(split.left_n))),
                                right: Box::new(Node::Leaf(LeafStats::new(split.right_n))),
                            };
                            self.n_splits += 1;
                        }
                    }
                    return;
                }
                Node::Split { feature, threshold, left, right, .. } => {
                    node = if a[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Impurity-decrease share per feature; zeros before the first split.
    pub fn feature_importance(&self) -> [f64; N_FEATURES] {
        let mut acc = [0.0; N_FEATURES];
        accumulate_gains(&self.root, &mut acc);
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|w| *w /= total);
        }
        acc
    }

    /// Unnormalized per-feature gain mass (for forest-level aggregation).
    pub(crate) fn raw_gains(&self) -> [f64; N_FEATURES] {
        let mut acc = [0.0; N_FEATURES];
        accumulate_gains(&self.root, &mut acc);
        acc
    }
}

fn accumulate_gains(node: &Node, acc: &mut [f64; N_FEATURES]) {
    if let Node::Split { feature, gain_weight, left, right, .. } = node {
        acc[*feature] += gain_weight;
        accumulate_gains(left, acc);
        accumulate_gains(right, acc);
    }
}

/// Evaluate candidate splits; return the winner if the Hoeffding test
/// clears. The null split (gain 0) always competes as runner-up.
fn choose_split(stats: &LeafStats, params: &TreeParams) -> Option<CandidateSplit> {
    let n = stats.total();
    if n < 2.0 || stats.class_n[0] == 0.0 || stats.class_n[1] == 0.0 {
        return None;
    }
    let h_parent = entropy(stats.class_n);
    if h_parent <= 0.0 {
        return None;
    }

    let mut best: Option<CandidateSplit> = None;
    let mut second_gain = 0.0;
    for f in 0..N_FEATURES {
        let lo = stats.gauss[f][0].min.min(stats.gauss[f][1].min);
        let hi = stats.gauss[f][0].max.max(stats.gauss[f][1].max);
        if !(hi > lo) {
            continue;
        }
        let mut best_f: Option<CandidateSplit> = None;
        for i in 1..=N_THRESHOLDS {
            let t = lo + (hi - lo) * i as f64 / (N_THRESHOLDS + 1) as f64;
            let mut left_n = [0.0; 2];
            let mut right_n = [0.0; 2];
            for c in 0..2 {
                let w = stats.class_n[c] * stats.gauss[f][c].cdf(t);
                left_n[c] = w;
                right_n[c] = stats.class_n[c] - w;
            }
            let wl = left_n[0] + left_n[1];
            let wr = right_n[0] + right_n[1];
            if wl < 1e-9 || wr < 1e-9 {
                continue;
            }
            let gain = h_parent - (wl * entropy(left_n) + wr * entropy(right_n)) / n;
            if gain > best_f.map_or(0.0, |b| b.gain) {
                best_f = Some(CandidateSplit { feature: f, threshold: t, gain, left_n, right_n });
            }
        }
        if let Some(cand) = best_f {
            match best {
                Some(b) if cand.gain > b.gain => {
                    second_gain = b.gain;
                    best = Some(cand);
                }
                Some(_) => second_gain = second_gain.max(cand.gain),
                None => best = Some(cand),
            }
        }
    }

    let best = best?;
    if best.gain <= 0.0 {
        return None;
    }
    // Range of binary-class information gain is 1 bit.
    let eps = super::hoeffding_bound(1.0, params.delta, n as u64);
    if best.gain - second_gain > eps || eps < params.tie_threshold {
        Some(best)
    } else {
        None
    }
}
