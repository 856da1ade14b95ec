//! K-nearest-neighbor classification over a sliding window of labeled
//! items, with running z-score normalization so features with wildly
//! different scales weigh equally in the distance.

use super::{FeatureVector, Label, N_FEATURES};
use std::collections::VecDeque;

/// Running mean and variance over every item ever learned (not just the
/// window), so the normalization does not drift with evictions.
#[derive(Debug, Clone, Copy, Default)]
struct RunningMoments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    fn observe(&mut self, v: f64) {
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
}

#[derive(Debug, Clone)]
struct WindowItem {
    x: [f64; N_FEATURES],
    label: Label,
    /// Insertion sequence; the distance tie-breaker.
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct WindowKnn {
    k: usize,
    window_size: usize,
    window: VecDeque<WindowItem>,
    norm: [RunningMoments; N_FEATURES],
    n_seen: u64,
}

impl WindowKnn {
    pub fn new(k: usize, window_size: usize) -> Self {
        assert!(k >= 1 && window_size >= 1);
        WindowKnn {
            k,
            window_size,
            window: VecDeque::with_capacity(window_size + 1),
            norm: [RunningMoments::default(); N_FEATURES],
            n_seen: 0,
        }
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    fn zscore(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut z = [0.0; N_FEATURES];
        for f in 0..N_FEATURES {
            let sd = self.norm[f].std();
            if sd > 1e-12 {
                z[f] = (x[f] - self.norm[f].mean) / sd;
            }
        }
        z
    }

    /// Fraction of `Delayed` among the k nearest window items
    /// (z-scored Euclidean; ties by insertion order). 0.5 when empty.
    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        if self.window.is_empty() {
            return 0.5;
        }
        let q = self.zscore(&x.as_array());
        // (distance², seq) of the current k best, worst kept at index 0.
        let k = self.k.min(self.window.len());
        let mut best: Vec<(f64, u64, Label)> = Vec::with_capacity(k + 1);
        for item in &self.window {
            let z = self.zscore(&item.x);
            let worst = best.first().copied();
            let bound = if best.len() == k { worst.map(|w| (w.0, w.1)) } else { None };
            let mut d2 = 0.0;
            let mut pruned = false;
            for f in 0..N_FEATURES {
                let d = q[f] - z[f];
                d2 += d * d;
                if let Some((wd, _)) = bound {
                    if d2 > wd {
                        pruned = true;
                        break;
                    }
                }
            }
            if pruned {
                continue;
            }
            if let Some((wd, ws)) = bound {
                if (d2, item.seq) >= (wd, ws) {
                    continue;
                }
            }
            best.push((d2, item.seq, item.label));
            best.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
            if best.len() > k {
                best.remove(0);
            }
        }
        let delayed = best.iter().filter(|(_, _, l)| *l == Label::Delayed).count();
        delayed as f64 / best.len() as f64
    }

    /// Append the item, update normalization, evict beyond the window.
    pub fn learn_one(&mut self, x: &FeatureVector, y: Label) {
        let a = x.as_array();
        for f in 0..N_FEATURES {
            self.norm[f].observe(a[f]);
        }
        self.window.push_back(WindowItem { x: a, label: y, seq: self.n_seen });
        self.n_seen += 1;
        while self.window.len() > self.window_size {
            self.window.pop_front();
        }
    }
}
