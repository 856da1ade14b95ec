//! Pluggable task-transfer coordination: collaborative same-cell handovers,
//! sealed second-price auction transfers, and the no-transfer, random, and
//! forced baselines.
//!
//! Every strategy only reads worker and task state and returns the transfers
//! it wants; the engine applies them. Tie-breaks are by lexicographic worker
//! id throughout so a run is a pure function of its seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::WorkerAgent;
use crate::econ::{expected_utility, CostParams, TaskView};
use crate::geoenv::{distance_m, TrafficGrid};
use crate::learn::{extract_features, FeatureVector};

/// Probability per task per tick of a blind transfer under [`Strategy::Random`].
pub const DEFAULT_P_TRANSFER: f64 = 0.005;

/// Minimum predicted-success advantage a recipient must have before a forced
/// transfer fires; prevents thrashing between near-equal workers.
pub const FORCED_MARGIN: f64 = 0.05;

/// A task is reconsidered for auction at most once per this many seconds.
pub const AUCTION_COOLDOWN_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Workers keep their initial tasks to the end.
    Not,
    /// Blind transfers to the nearest task-free worker.
    Random,
    /// The platform reassigns to the best predicted worker without consent.
    Forced,
    /// Voluntary same-cell handovers to a better predicted worker.
    Collaborative,
    /// Auction-based task transfers: sellers shed, bidders buy utility gains.
    Att,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Not => "not",
            Strategy::Random => "random",
            Strategy::Forced => "forced",
            Strategy::Collaborative => "collaborative",
            Strategy::Att => "att",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "not" => Ok(Strategy::Not),
            "random" => Ok(Strategy::Random),
            "forced" => Ok(Strategy::Forced),
            "collaborative" => Ok(Strategy::Collaborative),
            "att" => Ok(Strategy::Att),
            other => Err(format!(
                "unknown strategy {other:?}; expected not, random, forced, collaborative, or att"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMechanism {
    Collaborative,
    Auction,
    Random,
    Forced,
}

/// One reassignment of a live task between two distinct workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub task_id: String,
    pub from_worker: String,
    pub to_worker: String,
    pub time_s: f64,
    pub mechanism: TransferMechanism,
    /// EUR the recipient pays the sender; 0 for every non-auction mechanism.
    pub price: f64,
}

/// A sealed-bid auction round, kept for the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Auction {
    pub task_id: String,
    pub seller: String,
    /// None broadcasts to every worker.
    pub neighborhood_radius_m: Option<f64>,
    pub bids: Vec<(String, f64)>,
    pub outcome: Option<(String, f64)>,
}

/// Worker's predicted probability of finishing the task on time, or None if
/// the task geometry falls outside the traffic area.
fn success_prob<F>(
    worker: &WorkerAgent,
    task: &TaskView,
    predict: &mut F,
    grid: &TrafficGrid,
    now_s: f64,
) -> Option<f64>
where
    F: FnMut(&str, &FeatureVector) -> f64,
{
    match extract_features(worker, &task.remaining, task.deadline_s, grid, now_s) {
        Ok(x) => Some(1.0 - predict(&worker.id, &x)),
        Err(e) => {
            log::warn!("skipping {} for task {}: {e}", worker.id, task.task_id);
            None
        }
    }
}

/// Voluntary handovers: each courier looks for a same-cell candidate with a
/// strictly higher predicted on-time probability for its parcel and hands it
/// over to the best one, ties broken by lower worker id. Couriers are
/// processed in the order given; a candidate takes at most one parcel.
pub fn collaborative_step<F>(
    grid: &TrafficGrid,
    couriers: &[(&WorkerAgent, TaskView)],
    candidates: &[&WorkerAgent],
    mut predict: F,
    now_s: f64,
) -> Vec<TransferEvent>
where
    F: FnMut(&str, &FeatureVector) -> f64,
{
    let mut events = Vec::new();
    let mut taken: BTreeSet<&str> = BTreeSet::new();
    for (courier, task) in couriers {
        let Ok(cell) = grid.cell_of(courier.position) else {
            continue;
        };
        let Some(own_q) = success_prob(courier, task, &mut predict, grid, now_s) else {
            continue;
        };
        let mut best: Option<(f64, &str)> = None;
        for cand in candidates {
            if taken.contains(cand.id.as_str()) || cand.id == courier.id {
                continue;
            }
            if grid.cell_of(cand.position) != Ok(cell) {
                continue;
            }
            let Some(q) = success_prob(cand, task, &mut predict, grid, now_s) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bq, bid)) => q > bq || (q == bq && cand.id.as_str() < bid),
            };
            if better {
                best = Some((q, cand.id.as_str()));
            }
        }
        if let Some((q, to)) = best {
            if own_q < q {
                taken.insert(to);
                events.push(TransferEvent {
                    task_id: task.task_id.clone(),
                    from_worker: courier.id.clone(),
                    to_worker: to.to_string(),
                    time_s: now_s,
                    mechanism: TransferMechanism::Collaborative,
                    price: 0.0,
                });
            }
        }
    }
    events
}

/// Conservative seller rule: auction a held task only when dropping it raises
/// the seller's expected utility even at a transfer price of zero.
/// `held` is the worker's full current task set and must contain `task`.
pub fn should_trigger_auction<F>(
    agent: &WorkerAgent,
    task: &TaskView,
    held: &[TaskView],
    mut predict: F,
    grid: &TrafficGrid,
    now_s: f64,
    params: &CostParams,
) -> bool
where
    F: FnMut(&FeatureVector) -> f64,
{
    debug_assert!(held.iter().any(|t| t.task_id == task.task_id));
    let without: Vec<TaskView> = held
        .iter()
        .filter(|t| t.task_id != task.task_id)
        .cloned()
        .collect();
    let eu_with = expected_utility(agent, held, &mut predict, grid, now_s, params);
    let eu_without = expected_utility(agent, &without, &mut predict, grid, now_s, params);
    match (eu_with, eu_without) {
        (Ok(with), Ok(without)) => without > with,
        (with, without) => {
            log::warn!(
                "auction trigger for {} skipped: {:?} / {:?}",
                task.task_id,
                with.err(),
                without.err()
            );
            false
        }
    }
}

/// Truthful valuation of taking on `task`: the bidder's expected-utility gain
/// over its current set `held` (which must not contain `task`). Abstains when
/// the gain is not strictly positive.
pub fn compute_bid<F>(
    agent: &WorkerAgent,
    task: &TaskView,
    held: &[TaskView],
    mut predict: F,
    grid: &TrafficGrid,
    now_s: f64,
    params: &CostParams,
) -> Option<f64>
where
    F: FnMut(&FeatureVector) -> f64,
{
    debug_assert!(held.iter().all(|t| t.task_id != task.task_id));
    let mut with: Vec<TaskView> = held.to_vec();
    with.push(task.clone());
    let eu_with = expected_utility(agent, &with, &mut predict, grid, now_s, params);
    let eu_held = expected_utility(agent, held, &mut predict, grid, now_s, params);
    match (eu_with, eu_held) {
        (Ok(w), Ok(h)) => {
            let b = w - h;
            (b > 0.0).then_some(b)
        }
        (w, h) => {
            log::warn!(
                "bid for {} skipped: {:?} / {:?}",
                task.task_id,
                w.err(),
                h.err()
            );
            None
        }
    }
}

/// Second-price rules: highest bid wins and pays the second-highest amount;
/// a lone bidder pays zero; amount ties break to the lower worker id.
pub fn resolve_auction(bids: &[(String, f64)]) -> Option<(String, f64)> {
    if bids.is_empty() {
        return None;
    }
    debug_assert!(bids.iter().all(|(_, b)| b.is_finite()));
    let mut sorted: Vec<&(String, f64)> = bids.iter().collect();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let price = if sorted.len() == 1 { 0.0 } else { sorted[1].1 };
    Some((sorted[0].0.clone(), price))
}

/// Blind baseline: per task, with probability `p_transfer`, hand the task to
/// the nearest eligible worker. One RNG draw per task whether or not a
/// transfer happens, so the stream position is a function of the task list.
/// A recipient is used at most once per step and must differ from the sender.
pub fn random_step<R: Rng>(
    assignments: &[(String, String)],
    workers: &BTreeMap<String, WorkerAgent>,
    eligible: &BTreeSet<String>,
    p_transfer: f64,
    now_s: f64,
    rng: &mut R,
) -> Vec<TransferEvent> {
    debug_assert!((0.0..=1.0).contains(&p_transfer));
    let mut events = Vec::new();
    let mut free: BTreeSet<&str> = eligible.iter().map(|s| s.as_str()).collect();
    for (task_id, assignee) in assignments {
        let draw = rng.random::<f64>();
        if draw >= p_transfer {
            continue;
        }
        let Some(from) = workers.get(assignee) else {
            continue;
        };
        let mut best: Option<(f64, &str)> = None;
        for &wid in &free {
            if wid == assignee.as_str() {
                continue;
            }
            let Some(w) = workers.get(wid) else { continue };
            let d = distance_m(from.position, w.position);
            let closer = match best {
                None => true,
                Some((bd, bid)) => d < bd || (d == bd && wid < bid),
            };
            if closer {
                best = Some((d, wid));
            }
        }
        if let Some((_, to)) = best {
            free.remove(to);
            events.push(TransferEvent {
                task_id: task_id.clone(),
                from_worker: assignee.clone(),
                to_worker: to.to_string(),
                time_s: now_s,
                mechanism: TransferMechanism::Random,
                price: 0.0,
            });
        }
    }
    events
}

/// A candidate is hopeless for a task when even cruising straight to the
/// first remaining location cannot beat the deadline; such candidates are
/// not scored (and not invited to bid). The bound is optimistic, so it only
/// prunes sure failures.
pub fn reachable(worker: &WorkerAgent, task: &TaskView, now_s: f64) -> bool {
    // The worker stops contributing at the planned trip end, so the horizon
    // is the earlier of the deadline and that end.
    let time_left = task.deadline_s.min(worker.nominal_end_s) - now_s;
    if time_left <= 0.0 {
        return false;
    }
    match task.remaining.first() {
        Some(&first) => {
            distance_m(worker.position, first) <= worker.mode.base_speed_mps() * time_left
        }
        None => false,
    }
}

/// Platform-dictated baseline: per task, score the assignee and every
/// reachable eligible worker by predicted on-time probability and reassign to
/// the best worker if it beats the assignee by at least `margin`. Ties break
/// to the lower worker id. `exclusive_recipients` caps recipients at one task
/// per step (single-parcel regimes).
pub fn forced_step<F>(
    assignments: &[(TaskView, String)],
    workers: &BTreeMap<String, WorkerAgent>,
    eligible: &BTreeSet<String>,
    mut predict: F,
    grid: &TrafficGrid,
    now_s: f64,
    margin: f64,
    exclusive_recipients: bool,
) -> Vec<TransferEvent>
where
    F: FnMut(&str, &FeatureVector) -> f64,
{
    let mut events = Vec::new();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    for (task, assignee) in assignments {
        let Some(holder) = workers.get(assignee) else {
            continue;
        };
        let Some(own_p) = success_prob(holder, task, &mut predict, grid, now_s) else {
            continue;
        };
        let mut best: Option<(f64, &str)> = None;
        for wid in eligible {
            if wid == assignee || (exclusive_recipients && used.contains(wid.as_str())) {
                continue;
            }
            let Some(w) = workers.get(wid) else { continue };
            if !reachable(w, task, now_s) {
                continue;
            }
            let Some(p) = success_prob(w, task, &mut predict, grid, now_s) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bp, bid)) => p > bp || (p == bp && wid.as_str() < bid),
            };
            if better {
                best = Some((p, wid.as_str()));
            }
        }
        if let Some((p, to)) = best {
            if p >= own_p + margin {
                used.insert(to);
                events.push(TransferEvent {
                    task_id: task.task_id.clone(),
                    from_worker: assignee.clone(),
                    to_worker: to.to_string(),
                    time_s: now_s,
                    mechanism: TransferMechanism::Forced,
                    price: 0.0,
                });
            }
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::expected_revenue;
    use crate::geoenv::{make_grid, Area, Location, TrafficState, DEFAULT_TRANSITION};
    use crate::traces::Trace;
    use crate::TransportMode;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> TrafficGrid {
        let area = Area {
            center: Location { lat: 40.41, lon: -3.70 },
            radius_m: 3000.0,
        };
        make_grid(area.bbox(), 500.0, DEFAULT_TRANSITION, TrafficState::Normal, 60.0).unwrap()
    }

    /// Worker standing at an offset from the grid SW corner, with a short own
    /// route heading east.
    fn worker(grid: &TrafficGrid, id: &str, east_m: f64, north_m: f64) -> WorkerAgent {
        let origin = grid.projection().to_loc(0.0, 0.0);
        let pos = origin.offset_m(east_m, north_m);
        let trace = Trace {
            worker_id: id.to_string(),
            mode: TransportMode::Bike,
            start_time: 0.0,
            points: vec![(pos, 0.0), (pos.offset_m(2500.0, 0.0), 500.0)],
        };
        WorkerAgent::from_trace(&trace, &grid.projection())
    }

    fn task_near(grid: &TrafficGrid, id: &str, east_m: f64, north_m: f64) -> TaskView {
        let origin = grid.projection().to_loc(0.0, 0.0);
        TaskView {
            task_id: id.to_string(),
            remaining: vec![origin.offset_m(east_m, north_m)],
            deadline_s: 1800.0,
            reward: 5.0,
            penalty: 5.0,
        }
    }

    #[test]
    fn collaborative_does_nothing_without_cellmates() {
        let grid = test_grid();
        let courier = worker(&grid, "w0", 530.0, 520.0);
        let far = worker(&grid, "w1", 2530.0, 2520.0);
        let task = task_near(&grid, "t0", 1000.0, 500.0);
        let events = collaborative_step(
            &grid,
            &[(&courier, task)],
            &[&far],
            |_, _| 0.0,
            0.0,
        );
        assert!(events.is_empty());
    }

    #[test]
    fn collaborative_hands_over_to_clearly_better_candidate() {
        let grid = test_grid();
        let courier = worker(&grid, "w0", 530.0, 520.0);
        let cand = worker(&grid, "w1", 560.0, 540.0);
        let task = task_near(&grid, "t0", 1000.0, 500.0);
        let probs: BTreeMap<&str, f64> = [("w0", 0.4), ("w1", 0.1)].into();
        let events = collaborative_step(
            &grid,
            &[(&courier, task)],
            &[&cand],
            |id, _| probs[id],
            120.0,
        );
        assert_eq!(events.len(), 1);
        let e = &events[0];
        assert_eq!((e.from_worker.as_str(), e.to_worker.as_str()), ("w0", "w1"));
        assert_eq!(e.mechanism, TransferMechanism::Collaborative);
        assert_eq!(e.price, 0.0);
        assert_eq!(e.time_s, 120.0);
        // The handover strictly lowered the predicted delay probability.
        assert!(probs["w1"] < probs["w0"]);
    }

    #[test]
    fn collaborative_breaks_quality_ties_by_lower_id() {
        let grid = test_grid();
        let courier = worker(&grid, "w0", 530.0, 520.0);
        let c1 = worker(&grid, "w1", 540.0, 530.0);
        let c2 = worker(&grid, "w2", 550.0, 540.0);
        let c3 = worker(&grid, "w3", 560.0, 550.0);
        let task = task_near(&grid, "t0", 1000.0, 500.0);
        let probs: BTreeMap<&str, f64> =
            [("w0", 0.25), ("w1", 0.3), ("w2", 0.2), ("w3", 0.2)].into();
        let events = collaborative_step(
            &grid,
            &[(&courier, task)],
            &[&c1, &c2, &c3],
            |id, _| probs[id],
            0.0,
        );
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].to_worker, "w2");
    }

    #[test]
    fn collaborative_keeps_parcel_when_courier_is_best() {
        let grid = test_grid();
        let courier = worker(&grid, "w0", 530.0, 520.0);
        let cand = worker(&grid, "w1", 560.0, 540.0);
        let task = task_near(&grid, "t0", 1000.0, 500.0);
        let probs: BTreeMap<&str, f64> = [("w0", 0.1), ("w1", 0.1)].into();
        let events = collaborative_step(
            &grid,
            &[(&courier, task)],
            &[&cand],
            |id, _| probs[id],
            0.0,
        );
        assert!(events.is_empty(), "equal quality must not transfer");
    }

    #[test]
    fn collaborative_gives_each_candidate_at_most_one_parcel() {
        let grid = test_grid();
        let c0 = worker(&grid, "w0", 530.0, 520.0);
        let c1 = worker(&grid, "w1", 540.0, 530.0);
        let cand = worker(&grid, "w2", 550.0, 540.0);
        let t0 = task_near(&grid, "t0", 1000.0, 500.0);
        let t1 = task_near(&grid, "t1", 1200.0, 700.0);
        let probs: BTreeMap<&str, f64> = [("w0", 0.5), ("w1", 0.5), ("w2", 0.05)].into();
        let events = collaborative_step(
            &grid,
            &[(&c0, t0), (&c1, t1)],
            &[&cand],
            |id, _| probs[id],
            0.0,
        );
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].from_worker, "w0");
        assert_eq!(events[0].to_worker, "w2");
    }

    #[test]
    fn sure_task_is_kept_and_doomed_task_is_auctioned() {
        let grid = test_grid();
        let agent = worker(&grid, "w0", 530.0, 520.0);
        let task = task_near(&grid, "t0", 1000.0, 500.0);
        let held = vec![task.clone()];
        let params = CostParams::default();
        // Sure success: keeping the reward dominates shedding.
        assert!(!should_trigger_auction(
            &agent, &task, &held, |_| 0.0, &grid, 0.0, &params
        ));
        // Sure failure: shedding avoids the expected penalty.
        assert!(should_trigger_auction(
            &agent, &task, &held, |_| 1.0, &grid, 0.0, &params
        ));
    }

    #[test]
    fn trigger_decision_matches_direct_utility_comparison() {
        let grid = test_grid();
        let params = CostParams::default();
        let mut s = 0xabcd_0001u64;
        let mut xorshift = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for round in 0..200 {
            let agent = worker(
                &grid,
                "w0",
                500.0 + xorshift() * 4000.0,
                500.0 + xorshift() * 4000.0,
            );
            let n_tasks = 1 + (xorshift() * 2.0) as usize;
            let held: Vec<TaskView> = (0..n_tasks)
                .map(|i| {
                    task_near(
                        &grid,
                        &format!("t{i}"),
                        500.0 + xorshift() * 4000.0,
                        500.0 + xorshift() * 4000.0,
                    )
                })
                .collect();
            // Delay probability keyed off the task geometry, stable per task.
            let p = |x: &FeatureVector| (x.remaining_dist_m / 6000.0).clamp(0.05, 0.95);
            let got = should_trigger_auction(&agent, &held[0], &held, p, &grid, 0.0, &params);
            // Independent recomposition of both utilities from parts.
            let eu = |set: &[TaskView]| {
                let e: Vec<f64> = set
                    .iter()
                    .map(|t| {
                        let x = extract_features(&agent, &t.remaining, t.deadline_s, &grid, 0.0)
                            .unwrap();
                        1.0 - (x.remaining_dist_m / 6000.0).clamp(0.05, 0.95)
                    })
                    .collect();
                expected_revenue(set, &e) - crate::econ::worker_cost(&agent, set, &params)
            };
            let want = eu(&held[1..]) > eu(&held);
            assert_eq!(got, want, "round {round}");
        }
    }

    #[test]
    fn bid_is_marginal_utility_gain() {
        let grid = test_grid();
        let agent = worker(&grid, "w0", 530.0, 520.0);
        // Task directly on the worker's own leg: zero metered detour, so the
        // marginal cost is exactly the fixed charge.
        let origin = grid.projection().to_loc(0.0, 0.0);
        let on_route = TaskView {
            task_id: "t0".into(),
            remaining: vec![origin.offset_m(1030.0, 520.0)],
            deadline_s: 1800.0,
            reward: 5.0,
            penalty: 5.0,
        };
        let params = CostParams {
            walk_eur_per_m: 0.0,
            bike_eur_per_m: 0.0,
            motorbike_eur_per_m: 0.0,
            fixed_eur_per_task: 1.0,
        };
        let bid = compute_bid(&agent, &on_route, &[], |_| 0.0, &grid, 0.0, &params);
        assert_eq!(bid, Some(4.0));
    }

    #[test]
    fn unprofitable_bidders_abstain() {
        let grid = test_grid();
        let agent = worker(&grid, "w0", 530.0, 520.0);
        let task = task_near(&grid, "t0", 4000.0, 4000.0);
        let params = CostParams::default();
        // Sure failure: taking the task only adds cost and penalty.
        let bid = compute_bid(&agent, &task, &[], |_| 1.0, &grid, 0.0, &params);
        assert_eq!(bid, None);
    }

    #[test]
    fn bid_matches_two_evaluation_oracle() {
        let grid = test_grid();
        let params = CostParams::default();
        let mut s = 0xabcd_0002u64;
        let mut xorshift = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for round in 0..200 {
            let agent = worker(
                &grid,
                "w0",
                500.0 + xorshift() * 4000.0,
                500.0 + xorshift() * 4000.0,
            );
            let held: Vec<TaskView> = (0..(xorshift() * 2.0) as usize)
                .map(|i| {
                    task_near(
                        &grid,
                        &format!("h{i}"),
                        500.0 + xorshift() * 4000.0,
                        500.0 + xorshift() * 4000.0,
                    )
                })
                .collect();
            let task = task_near(
                &grid,
                "t0",
                500.0 + xorshift() * 4000.0,
                500.0 + xorshift() * 4000.0,
            );
            let p = |x: &FeatureVector| (x.remaining_dist_m / 6000.0).clamp(0.05, 0.95);
            let got = compute_bid(&agent, &task, &held, p, &grid, 0.0, &params);
            let eu = |set: &[TaskView]| {
                let e: Vec<f64> = set
                    .iter()
                    .map(|t| {
                        let x = extract_features(&agent, &t.remaining, t.deadline_s, &grid, 0.0)
                            .unwrap();
                        1.0 - (x.remaining_dist_m / 6000.0).clamp(0.05, 0.95)
                    })
                    .collect();
                expected_revenue(set, &e) - crate::econ::worker_cost(&agent, set, &params)
            };
            let mut with = held.clone();
            with.push(task.clone());
            let gain = eu(&with) - eu(&held);
            match got {
                Some(b) => assert!((b - gain).abs() < 1e-12 && gain > 0.0, "round {round}"),
                None => assert!(gain <= 0.0, "round {round}: gain {gain}"),
            }
        }
    }

    #[test]
    fn auction_clears_at_second_price() {
        let bids = vec![
            ("a".to_string(), 5.0),
            ("b".to_string(), 3.0),
            ("c".to_string(), 2.0),
        ];
        assert_eq!(resolve_auction(&bids), Some(("a".into(), 3.0)));
        assert_eq!(
            resolve_auction(&[("a".to_string(), 4.0)]),
            Some(("a".into(), 0.0))
        );
        assert_eq!(resolve_auction(&[]), None);
        // Amount tie: lower id wins and pays the tied amount.
        let tie = vec![("b".to_string(), 4.0), ("a".to_string(), 4.0)];
        assert_eq!(resolve_auction(&tie), Some(("a".into(), 4.0)));
    }

    #[test]
    fn truthful_bidding_is_dominant() {
        let mut s = 0x712d7b1d_u64;
        let mut xorshift = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut checked = 0u64;
        for _ in 0..2000 {
            let n = 1 + (xorshift() * 4.0) as usize;
            let values: Vec<f64> = (0..n).map(|_| xorshift() * 6.0 - 1.0).collect();
            let truthful: Vec<(String, f64)> = values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(i, &v)| (format!("w{i}"), v))
                .collect();
            let utility = |bids: &[(String, f64)], who: usize| -> f64 {
                match resolve_auction(bids) {
                    Some((winner, price)) if winner == format!("w{who}") => values[who] - price,
                    _ => 0.0,
                }
            };
            for who in 0..n {
                let base = utility(&truthful, who);
                for g in 0..21 {
                    let dev = g as f64 / 20.0 * 6.0;
                    let mut bids: Vec<(String, f64)> = truthful
                        .iter()
                        .filter(|(id, _)| id != &format!("w{who}"))
                        .cloned()
                        .collect();
                    if dev > 0.0 {
                        bids.push((format!("w{who}"), dev));
                    }
                    bids.sort_by(|a, b| a.0.cmp(&b.0));
                    let u = utility(&bids, who);
                    assert!(
                        u <= base + 1e-9,
                        "bidder {who} gains by deviating to {dev}: {u} > {base}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 50_000);
    }

    #[test]
    fn random_step_honors_probability_and_eligibility() {
        let grid = test_grid();
        let mut workers = BTreeMap::new();
        for (id, e, n) in [("w0", 530.0, 520.0), ("w1", 1530.0, 520.0), ("w2", 730.0, 520.0)] {
            workers.insert(id.to_string(), worker(&grid, id, e, n));
        }
        let assignments = vec![("t0".to_string(), "w0".to_string())];
        let eligible: BTreeSet<String> = ["w1".to_string(), "w2".to_string()].into();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // p = 0: never transfers.
        let ev = random_step(&assignments, &workers, &eligible, 0.0, 0.0, &mut rng);
        assert!(ev.is_empty());
        // p = 1: always transfers, to the nearest eligible worker.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ev = random_step(&assignments, &workers, &eligible, 1.0, 5.0, &mut rng);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].to_worker, "w2", "w2 is 200 m away, w1 is 1 km");
        assert_eq!(ev[0].mechanism, TransferMechanism::Random);
        // No eligible worker: no transfer even at p = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ev = random_step(&assignments, &workers, &BTreeSet::new(), 1.0, 0.0, &mut rng);
        assert!(ev.is_empty());
        // Same seed, same outcome.
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let e1 = random_step(&assignments, &workers, &eligible, 0.3, 0.0, &mut r1);
        let e2 = random_step(&assignments, &workers, &eligible, 0.3, 0.0, &mut r2);
        assert_eq!(e1, e2);
    }

    #[test]
    fn forced_step_needs_margin_to_move() {
        let grid = test_grid();
        let mut workers = BTreeMap::new();
        for (id, e, n) in [("w0", 530.0, 520.0), ("w1", 560.0, 540.0)] {
            workers.insert(id.to_string(), worker(&grid, id, e, n));
        }
        let eligible: BTreeSet<String> = ["w1".to_string()].into();
        let task = task_near(&grid, "t0", 1000.0, 500.0);
        let assignments = vec![(task, "w0".to_string())];
        // Equal probabilities: margin not met, no transfer.
        let ev = forced_step(
            &assignments, &workers, &eligible, |_, _| 0.3, &grid, 0.0, FORCED_MARGIN, true,
        );
        assert!(ev.is_empty());
        // Clear improvement: 0.9 success vs 0.4.
        let probs: BTreeMap<&str, f64> = [("w0", 0.6), ("w1", 0.1)].into();
        let ev = forced_step(
            &assignments,
            &workers,
            &eligible,
            |id, _| probs[id],
            &grid,
            0.0,
            FORCED_MARGIN,
            true,
        );
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].to_worker, "w1");
        assert_eq!(ev[0].mechanism, TransferMechanism::Forced);
    }

    #[test]
    fn forced_recipient_matches_argmax_oracle() {
        let grid = test_grid();
        let mut s = 0xf0ced_u64;
        let mut xorshift = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for round in 0..100 {
            let n = 3 + (xorshift() * 4.0) as usize;
            let mut workers = BTreeMap::new();
            let mut ids = Vec::new();
            for i in 0..n {
                let id = format!("w{i}");
                workers.insert(
                    id.clone(),
                    worker(&grid, &id, 500.0 + xorshift() * 3000.0, 500.0 + xorshift() * 3000.0),
                );
                ids.push(id);
            }
            let eligible: BTreeSet<String> = ids[1..].iter().cloned().collect();
            let task = task_near(&grid, "t0", 500.0 + xorshift() * 3000.0, 500.0 + xorshift() * 3000.0);
            let assignments = vec![(task.clone(), ids[0].clone())];
            // Success probability keyed off a stable per-worker hash.
            let score = |id: &str| -> f64 {
                let h = id.bytes().fold(0u64, |a, b| a.wrapping_mul(131).wrapping_add(b as u64));
                (h % 97) as f64 / 96.0
            };
            let ev = forced_step(
                &assignments,
                &workers,
                &eligible,
                |id, _| 1.0 - score(id),
                &grid,
                0.0,
                FORCED_MARGIN,
                false,
            );
            // Oracle: argmax of success over eligible reachable workers,
            // ties by lower id; transfer iff margin beaten.
            let own = score(&ids[0]);
            let mut best: Option<(f64, &str)> = None;
            for id in &ids[1..] {
                if !reachable(&workers[id], &task, 0.0) {
                    continue;
                }
                let p = score(id);
                let better = match best {
                    None => true,
                    Some((bp, bid)) => p > bp || (p == bp && id.as_str() < bid),
                };
                if better {
                    best = Some((p, id));
                }
            }
            match best {
                Some((p, id)) if p >= own + FORCED_MARGIN => {
                    assert_eq!(ev.len(), 1, "round {round}");
                    assert_eq!(ev[0].to_worker, id, "round {round}");
                }
                _ => assert!(ev.is_empty(), "round {round}"),
            }
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::Not,
            Strategy::Random,
            Strategy::Forced,
            Strategy::Collaborative,
            Strategy::Att,
        ] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("teleport".parse::<Strategy>().is_err());
    }
}
