//! Money: task revenue, worker-specific movement costs, and the realized or
//! expected utility of task sets.
//!
//! Costs are distance-driven. Serving a set of location chains means taking a
//! detour from the worker's own trip, priced per meter by transport mode plus
//! a fixed handling cost per task. The planner interleaves chains optimally
//! and may serve separable subsets as independent detours, so the cost of a
//! union never exceeds the summed costs of its parts and shared legs are
//! never billed twice.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{TransportMode, WorkerAgent};
use crate::geoenv::{distance_m, GeoError, Location, TrafficGrid};
use crate::learn::{extract_features, FeatureVector};

#[derive(Debug, Error, PartialEq)]
pub enum EconError {
    #[error("no outcome recorded for task {0}")]
    MissingOutcome(String),
}

/// Per-task binary outcomes: true = completed in time.
pub type Outcome = BTreeMap<String, bool>;

/// Movement pricing. All fields are EUR and must be nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub walk_eur_per_m: f64,
    pub bike_eur_per_m: f64,
    pub motorbike_eur_per_m: f64,
    /// Charged once per accepted task (handling, packaging, attention).
    pub fixed_eur_per_task: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            walk_eur_per_m: 0.004,
            bike_eur_per_m: 0.002,
            motorbike_eur_per_m: 0.003,
            fixed_eur_per_task: 0.25,
        }
    }
}

impl CostParams {
    pub fn eur_per_m(&self, mode: TransportMode) -> f64 {
        match mode {
            TransportMode::Walk => self.walk_eur_per_m,
            TransportMode::Bike => self.bike_eur_per_m,
            TransportMode::Motorbike => self.motorbike_eur_per_m,
        }
    }

    /// All parameters nonnegative; names the offending field otherwise.
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("walk_eur_per_m", self.walk_eur_per_m),
            ("bike_eur_per_m", self.bike_eur_per_m),
            ("motorbike_eur_per_m", self.motorbike_eur_per_m),
            ("fixed_eur_per_task", self.fixed_eur_per_task),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// A task as seen by cost and utility evaluation: what is still to visit,
/// by when, and the money terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskView {
    pub task_id: String,
    /// Locations still to visit, in chain order. Non-empty for a live task.
    pub remaining: Vec<Location>,
    pub deadline_s: f64,
    pub reward: f64,
    pub penalty: f64,
}

/// Sum of rewards over successful tasks minus penalties over failed ones.
pub fn revenue(tasks: &[TaskView], outcomes: &Outcome) -> Result<f64, EconError> {
    let mut total = 0.0;
    for t in tasks {
        let ok = *outcomes
            .get(&t.task_id)
            .ok_or_else(|| EconError::MissingOutcome(t.task_id.clone()))?;
        total += if ok { t.reward } else { -t.penalty };
    }
    Ok(total)
}

/// Revenue with each binary outcome replaced by its expectation. At e = 1 or
/// e = 0 each term reproduces the realized revenue term exactly.
pub fn expected_revenue(tasks: &[TaskView], e_outcome: &[f64]) -> f64 {
    debug_assert_eq!(tasks.len(), e_outcome.len());
    let mut total = 0.0;
    for (t, &e) in tasks.iter().zip(e_outcome) {
        total += e * t.reward - (1.0 - e) * t.penalty;
    }
    total
}

/// Geometry shared by the planner passes: flattened chain points plus the
/// start anchor and optional rejoin point, with all pairwise distances.
struct DetourGeom {
    offsets: Vec<usize>,
    lens: Vec<usize>,
    start_ix: usize,
    rejoin_ix: Option<usize>,
    d: Vec<f64>,
    n_nodes: usize,
}

impl DetourGeom {
    fn new(start: Location, rejoin: Option<Location>, chains: &[&[Location]]) -> Self {
        let mut pts: Vec<Location> = Vec::new();
        let mut offsets = Vec::with_capacity(chains.len());
        let mut lens = Vec::with_capacity(chains.len());
        for c in chains {
            offsets.push(pts.len());
            lens.push(c.len());
            pts.extend_from_slice(c);
        }
        let start_ix = pts.len();
        pts.push(start);
        let rejoin_ix = rejoin.map(|r| {
            pts.push(r);
            pts.len() - 1
        });
        let n_nodes = pts.len();
        let mut d = vec![0.0; n_nodes * n_nodes];
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                let v = distance_m(pts[i], pts[j]);
                d[i * n_nodes + j] = v;
                d[j * n_nodes + i] = v;
            }
        }
        DetourGeom { offsets, lens, start_ix, rejoin_ix, d, n_nodes }
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        self.d[a * self.n_nodes + b]
    }

    fn baseline(&self) -> f64 {
        match self.rejoin_ix {
            Some(r) => self.dist(self.start_ix, r),
            None => 0.0,
        }
    }
}

/// Single-pass optimum over the chains selected by `mask`: shortest path
/// start -> all selected points (intra-chain order fixed) -> rejoin. Returns
/// total path length; `order` (if given) receives the visit sequence as
/// (chain index, point index) pairs.
fn single_pass_m(g: &DetourGeom, mask: usize, order: Option<&mut Vec<(usize, usize)>>) -> f64 {
    let sel: Vec<usize> = (0..g.lens.len()).filter(|i| mask >> i & 1 == 1).collect();
    let k = sel.len();
    if k == 0 {
        return g.baseline();
    }
    // Mixed-radix progress code over the selected chains.
    let mut stride = vec![0usize; k];
    let mut n_codes = 1usize;
    for (s, &ci) in stride.iter_mut().zip(&sel) {
        *s = n_codes;
        n_codes *= g.lens[ci] + 1;
    }
    // cost[code][last]: last = k means "still at start".
    let width = k + 1;
    let mut cost = vec![f64::INFINITY; n_codes * width];
    let mut parent = vec![usize::MAX; n_codes * width];
    cost[k] = 0.0;
    let node_of = |code: usize, last: usize| -> usize {
        if last == k {
            g.start_ix
        } else {
            let prog = code / stride[last] % (g.lens[sel[last]] + 1);
            g.offsets[sel[last]] + prog - 1
        }
    };
    for code in 0..n_codes {
        for last in 0..width {
            let c = cost[code * width + last];
            if !c.is_finite() {
                continue;
            }
            let from = node_of(code, last);
            for (j, &ci) in sel.iter().enumerate() {
                let prog = code / stride[j] % (g.lens[ci] + 1);
                if prog == g.lens[ci] {
                    continue;
                }
                let next_node = g.offsets[ci] + prog;
                let ncode = code + stride[j];
                let ncost = c + g.dist(from, next_node);
                let slot = ncode * width + j;
                if ncost < cost[slot] {
                    cost[slot] = ncost;
                    parent[slot] = last;
                }
            }
        }
    }
    let full = n_codes - 1;
    let mut best = f64::INFINITY;
    let mut best_last = k;
    for last in 0..k {
        let mut c = cost[full * width + last];
        if let Some(r) = g.rejoin_ix {
            c += g.dist(node_of(full, last), r);
        }
        if c < best {
            best = c;
            best_last = last;
        }
    }
    if let Some(out) = order {
        let mut rev = Vec::new();
        let mut code = full;
        let mut last = best_last;
        while last != k {
            let prog = code / stride[last] % (g.lens[sel[last]] + 1);
            rev.push((sel[last], prog - 1));
            let prev = parent[code * width + last];
            code -= stride[last];
            last = prev;
        }
        rev.reverse();
        *out = rev;
    }
    best
}

/// Extra meters over the direct start -> rejoin leg when serving every chain,
/// allowing separable subsets to be served as independent detours. This is
/// the planner's cost notion: subadditive and weakly monotone in the set.
pub fn detour_m(start: Location, rejoin: Option<Location>, chains: &[&[Location]]) -> f64 {
    let k = chains.len();
    if k == 0 {
        return 0.0;
    }
    debug_assert!(k <= 16, "detour planner is exponential in the chain count");
    debug_assert!(chains.iter().all(|c| !c.is_empty()));
    let g = DetourGeom::new(start, rejoin, chains);
    let base = g.baseline();
    let full = (1usize << k) - 1;
    let mut best = vec![0.0f64; full + 1];
    for mask in 1..=full {
        let mut v = (single_pass_m(&g, mask, None) - base).max(0.0);
        let mut sub = (mask - 1) & mask;
        while sub > 0 {
            let other = mask & !sub;
            if sub < other {
                let split = best[sub] + best[other];
                if split < v {
                    v = split;
                }
            }
            sub = (sub - 1) & mask;
        }
        best[mask] = v;
    }
    best[full]
}

/// Best executable single-pass route over all chains: (extra meters, visit
/// order). Route building uses the order; pricing uses [`detour_m`].
pub fn plan_order(
    start: Location,
    rejoin: Option<Location>,
    chains: &[&[Location]],
) -> (f64, Vec<(usize, usize)>) {
    if chains.is_empty() {
        return (0.0, Vec::new());
    }
    debug_assert!(chains.iter().all(|c| !c.is_empty()));
    let g = DetourGeom::new(start, rejoin, chains);
    let mut order = Vec::new();
    let full = (1usize << chains.len()) - 1;
    let total = single_pass_m(&g, full, Some(&mut order));
    ((total - g.baseline()).max(0.0), order)
}

/// EUR cost of serving `chains`: metered detour plus fixed per-task charges.
pub fn task_set_cost(
    mode: TransportMode,
    start: Location,
    rejoin: Option<Location>,
    chains: &[&[Location]],
    params: &CostParams,
) -> f64 {
    params.eur_per_m(mode) * detour_m(start, rejoin, chains)
        + params.fixed_eur_per_task * chains.len() as f64
}

/// Cost for a worker to serve every remaining chain in `tasks`, anchored at
/// its current position and rejoining its own trip at the next own waypoint.
pub fn worker_cost(agent: &WorkerAgent, tasks: &[TaskView], params: &CostParams) -> f64 {
    let chains: Vec<&[Location]> = tasks.iter().map(|t| t.remaining.as_slice()).collect();
    task_set_cost(agent.mode, agent.position, agent.next_own_loc(), &chains, params)
}

/// Expected success probability per task: 1 minus the predicted delay
/// probability of the worker finishing that task by its deadline.
pub fn expected_outcomes<F>(
    agent: &WorkerAgent,
    tasks: &[TaskView],
    mut predict: F,
    grid: &TrafficGrid,
    now_s: f64,
) -> Result<Vec<f64>, GeoError>
where
    F: FnMut(&FeatureVector) -> f64,
{
    tasks
        .iter()
        .map(|t| {
            let x = extract_features(agent, &t.remaining, t.deadline_s, grid, now_s)?;
            Ok(1.0 - predict(&x))
        })
        .collect()
}

/// Expected utility of holding `tasks`: expected revenue under the current
/// predictor minus the planned movement cost. Replacing each expectation with
/// the realized binary outcome reproduces the realized utility exactly.
pub fn expected_utility<F>(
    agent: &WorkerAgent,
    tasks: &[TaskView],
    predict: F,
    grid: &TrafficGrid,
    now_s: f64,
    params: &CostParams,
) -> Result<f64, GeoError>
where
    F: FnMut(&FeatureVector) -> f64,
{
    let e = expected_outcomes(agent, tasks, predict, grid, now_s)?;
    Ok(expected_revenue(tasks, &e) - worker_cost(agent, tasks, params))
}
