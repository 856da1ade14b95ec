//! The discrete-time engine: one-second ticks over a traffic grid, moving
//! workers, task injection and settlement, incidents, the prediction
//! pipeline, and the coordination strategy, all driven by per-purpose RNG
//! streams off one seed.

use crate::agents::{SpeedModel, Waypoint, WaypointTag, WorkerAgent};
use crate::coord::{self, Strategy, TransferEvent, TransferMechanism};
use crate::econ::{plan_order, CostParams, TaskView};
use crate::geoenv::{make_grid, Area, Location, TrafficGrid, TrafficState, DEFAULT_TRANSITION};
use crate::learn::{
    aggregate_importance, extract_features, Label, LearnerConfig, PendingKey, PredictorBank,
    PredictorScope, PrequentialPipeline, FEATURE_NAMES,
};
use crate::traces::{
    gen_tasks, load_tasks, load_traces, synth_traces, ModeMix, TaskKind, TaskSpec, Trace,
    TraceError,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// RNG stream ids off the scenario seed. Stream 5 is reserved by the forest
/// for its bagging draws.
const STREAM_TRACES: u64 = 0;
const STREAM_TASKS: u64 = 1;
const STREAM_TRAFFIC: u64 = 2;
const STREAM_INCIDENTS: u64 = 3;
const STREAM_STRATEGY: u64 = 4;

/// Incident immobilization duration bounds, seconds.
const INCIDENT_MIN_S: f64 = 120.0;
const INCIDENT_MAX_S: f64 = 600.0;

/// A worker must have at least this fraction of the nominal task deadline
/// left on its planned trip to receive a task.

#[derive(Debug, Error)]
pub enum SimError {
    /// Pre-run rejection; the message names the offending field.
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("trace input: {0}")]
    Trace(#[from] TraceError),
    #[error("task input: {0}")]
    TaskFile(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Crowdshipping,
    Crowdsensing,
}

impl ScenarioKind {
    pub fn task_kind(self) -> TaskKind {
        match self {
            ScenarioKind::Crowdshipping => TaskKind::Parcel,
            ScenarioKind::Crowdsensing => TaskKind::SensingChain,
        }
    }

    /// Crowdshipping couriers carry at most one parcel at a time.
    fn single_task(self) -> bool {
        self == ScenarioKind::Crowdshipping
    }
}

/// Where worker rides come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    Synthetic {
        n_workers: usize,
        mode_mix: ModeMix,
        #[serde(default = "default_trip_min")]
        trip_min_s: f64,
        #[serde(default = "default_trip_max")]
        trip_max_s: f64,
    },
    File {
        path: String,
    },
}

fn default_trip_min() -> f64 {
    1800.0
}

fn default_trip_max() -> f64 {
    5400.0
}

/// Where the task workload comes from; `Generate` uses the scenario's task
/// generation parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    #[default]
    Generate,
    File {
        path: String,
    },
}

/// Everything one run needs. Serializes as a flat key-value tree; unknown
/// keys are rejected so config typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub area: Area,
    pub duration_s: f64,
    pub traces: TraceSource,
    pub task_source: TaskSource,
    pub task_rate_per_h: f64,
    pub n_tasks: usize,
    pub deadline_s: f64,
    pub reward_eur: f64,
    pub penalty_eur: f64,
    /// Per active agent, per simulated minute.
    pub incident_probability: f64,
    pub strategy: Strategy,
    pub learner: LearnerConfig,
    pub predictor_scope: PredictorScope,
    pub p_transfer: f64,
    pub forced_margin: f64,
    /// Auction invitation radius; None broadcasts to the whole area.
    pub neighborhood_radius_m: Option<f64>,
    pub cell_size_m: f64,
    pub traffic_period_s: f64,
    pub monitor_period_s: f64,
    pub speeds: SpeedModel,
    pub costs: CostParams,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::crowdshipping_default(0)
    }
}

impl Scenario {
    /// The urban parcel scenario: 600 parcels over 12 h in a 3.4 km-radius
    /// city center served by 3000 motorbike couriers on 25-50 min trips.
    /// Deadlines sit at 850 s so the longest cross-town routes are tight at
    /// rush-hour effective speeds; a 1% per-minute incident rate adds
    /// unforecastable stalls on top of the jam field.
    pub fn crowdshipping_default(seed: u64) -> Scenario {
        Scenario {
            kind: ScenarioKind::Crowdshipping,
            area: Area {
                center: Location { lat: 40.4168, lon: -3.7038 },
                radius_m: 3400.0,
            },
            duration_s: 43_200.0,
            traces: TraceSource::Synthetic {
                n_workers: 3000,
                mode_mix: ModeMix { walk: 0.0, bike: 0.0, motorbike: 1.0 },
                trip_min_s: 1500.0,
                trip_max_s: 3000.0,
            },
            task_source: TaskSource::Generate,
            task_rate_per_h: 50.0,
            n_tasks: 600,
            deadline_s: 850.0,
            reward_eur: 5.0,
            penalty_eur: 5.0,
            incident_probability: 0.01,
            strategy: Strategy::Not,
            learner: LearnerConfig::default(),
            predictor_scope: PredictorScope::Global,
            p_transfer: coord::DEFAULT_P_TRANSFER,
            forced_margin: coord::FORCED_MARGIN,
            neighborhood_radius_m: None,
            cell_size_m: 500.0,
            traffic_period_s: 120.0,
            monitor_period_s: 60.0,
            speeds: SpeedModel::default(),
            costs: CostParams::default(),
            seed,
        }
    }

    /// The sensing-campaign scenarios: cyclists in a 1.5 km-radius area,
    /// 12 h of three-point chains. 1 and 3 release 600 tasks at 50 per hour,
    /// 2 releases 1200 at 100 per hour; 3 doubles the incident probability.
    pub fn crowdsensing(scenario_no: u8, seed: u64) -> Scenario {
        assert!((1..=3).contains(&scenario_no), "scenarios are numbered 1-3");
        let mut sc = Scenario::crowdshipping_default(seed);
        sc.kind = ScenarioKind::Crowdsensing;
        sc.area.radius_m = 1500.0;
        sc.traces = TraceSource::Synthetic {
            n_workers: 800,
            mode_mix: ModeMix { walk: 0.0, bike: 1.0, motorbike: 0.0 },
            trip_min_s: default_trip_min(),
            trip_max_s: default_trip_max(),
        };
        sc.deadline_s = 1800.0;
        sc.incident_probability = 0.05;
        sc.traffic_period_s = 60.0;
        if scenario_no == 2 {
            sc.task_rate_per_h = 100.0;
            sc.n_tasks = 1200;
        }
        if scenario_no == 3 {
            sc.incident_probability = 0.10;
        }
        sc
    }

    /// Pre-run validation; error messages name the offending field.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad(format!("duration_s must be positive (got {})", self.duration_s));
        }
        if !(self.area.radius_m > 0.0) {
            return bad(format!("area.radius_m must be positive (got {})", self.area.radius_m));
        }
        if self.n_tasks > 0 && !(self.task_rate_per_h > 0.0) {
            return bad(format!(
                "task_rate_per_h must be positive when n_tasks > 0 (got {})",
                self.task_rate_per_h
            ));
        }
        if !(self.deadline_s > 0.0) {
            return bad(format!("deadline_s must be positive (got {})", self.deadline_s));
        }
        if self.reward_eur < 0.0 {
            return bad(format!("reward_eur must be >= 0 (got {})", self.reward_eur));
        }
        if self.penalty_eur < 0.0 {
            return bad(format!("penalty_eur must be >= 0 (got {})", self.penalty_eur));
        }
        if !(0.0..=1.0).contains(&self.incident_probability) {
            return bad(format!(
                "incident_probability must be in [0, 1] (got {})",
                self.incident_probability
            ));
        }
        if !(0.0..=1.0).contains(&self.p_transfer) {
            return bad(format!("p_transfer must be in [0, 1] (got {})", self.p_transfer));
        }
        if self.forced_margin < 0.0 {
            return bad(format!("forced_margin must be >= 0 (got {})", self.forced_margin));
        }
        if let Some(r) = self.neighborhood_radius_m {
            if !(r > 0.0) {
                return bad(format!("neighborhood_radius_m must be positive (got {r})"));
            }
        }
        if !(self.cell_size_m > 0.0) {
            return bad(format!("cell_size_m must be positive (got {})", self.cell_size_m));
        }
        for (name, v) in [
            ("traffic_period_s", self.traffic_period_s),
            ("monitor_period_s", self.monitor_period_s),
        ] {
            if !(v > 0.0) || v.fract() != 0.0 {
                return bad(format!("{name} must be a positive whole number of seconds (got {v})"));
            }
        }
        if let TraceSource::Synthetic { mode_mix, trip_min_s, trip_max_s, .. } = &self.traces {
            if (mode_mix.sum() - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "traces.mode_mix must sum to 1 (got {})",
                    mode_mix.sum()
                ));
            }
            if !(*trip_min_s > 0.0) || trip_max_s < trip_min_s {
                return bad(format!(
                    "traces.trip_min_s/trip_max_s must satisfy 0 < min <= max (got {trip_min_s}/{trip_max_s})"
                ));
            }
        }
        self.costs.validate().map_err(SimError::Config)?;
        match self.learner {
            LearnerConfig::HoeffdingTree { delta, .. }
            | LearnerConfig::OnlineForest { delta, .. } => {
                if !(0.0 < delta && delta < 1.0) {
                    return bad(format!("learner.delta must be in (0, 1) (got {delta})"));
                }
            }
            LearnerConfig::WindowKnn { k, window_size } => {
                if k == 0 || window_size == 0 {
                    return bad("learner.k and learner.window_size must be >= 1".into());
                }
            }
        }
        if let LearnerConfig::OnlineForest { n_trees, .. } = self.learner {
            if n_trees == 0 {
                return bad("learner.n_trees must be >= 1".into());
            }
        }
        Ok(())
    }
}

/// Signed ledger posting categories. Amounts in events are ledger deltas:
/// rewards and received transfer prices are positive, the rest negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementKind {
    Reward,
    Penalty,
    FixedCost,
    MovementCost,
    TransferPrice,
}

/// One line of the run's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TaskReleased { t_s: f64, task_id: String },
    TaskAssigned { t_s: f64, task_id: String, worker_id: String },
    Transfer {
        t_s: f64,
        task_id: String,
        from_worker: String,
        to_worker: String,
        mechanism: TransferMechanism,
        price_eur: f64,
    },
    AuctionHeld {
        t_s: f64,
        task_id: String,
        seller: String,
        n_bids: usize,
        winner: Option<String>,
        price_eur: f64,
    },
    Incident { t_s: f64, worker_id: String, until_s: f64 },
    Settlement {
        t_s: f64,
        task_id: String,
        worker_id: String,
        kind: SettlementKind,
        amount_eur: f64,
    },
    TaskCompleted { t_s: f64, task_id: String, worker_id: String, late: bool },
    TaskExpired { t_s: f64, task_id: String },
    /// A worker reached route end with unfinished tasks still assigned.
    RouteEndFailure { t_s: f64, worker_id: String, task_ids: Vec<String> },
}

impl Event {
    pub fn time_s(&self) -> f64 {
        match self {
            Event::TaskReleased { t_s, .. }
            | Event::TaskAssigned { t_s, .. }
            | Event::Transfer { t_s, .. }
            | Event::AuctionHeld { t_s, .. }
            | Event::Incident { t_s, .. }
            | Event::Settlement { t_s, .. }
            | Event::TaskCompleted { t_s, .. }
            | Event::TaskExpired { t_s, .. }
            | Event::RouteEndFailure { t_s, .. } => *t_s,
        }
    }
}

/// End-of-run money totals. `discrepancy_eur` is the conservation residual
/// Σ ledgers - (rewards - penalties - costs) and must vanish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoneyAudit {
    pub rewards_eur: f64,
    pub penalties_eur: f64,
    pub costs_eur: f64,
    pub sum_ledgers_eur: f64,
    pub discrepancy_eur: f64,
}

/// Importance mass per feature category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryImportance {
    pub capability: f64,
    pub parcel_state: f64,
    pub environment: f64,
}

/// Everything measured over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub kind: ScenarioKind,
    pub strategy: Strategy,
    pub seed: u64,
    pub n_tasks: u64,
    pub n_completed_in_time: u64,
    pub n_completed_late: u64,
    pub n_expired: u64,
    /// Fraction of tasks not completed by their deadline.
    pub delay_rate: f64,
    /// Mean of completion - release over completed tasks, seconds.
    pub mean_completion_s: f64,
    pub n_transfers: u64,
    pub n_reassigned_tasks: u64,
    pub in_time_after_transfer: u64,
    pub delayed_after_transfer: u64,
    pub n_incidents: u64,
    pub n_auctions: u64,
    /// (worker id, final ledger) for every worker that posted anything.
    pub worker_profits: Vec<(String, f64)>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Resolved prediction items.
    pub n_items: u64,
    /// (resolved items, F1) snapshots every 100 resolutions.
    pub f1_history: Vec<(u64, f64)>,
    /// Per-feature importance shares by name; empty when the learner has no
    /// notion of importance.
    pub feature_importance: Vec<(String, f64)>,
    pub importance_by_category: Option<CategoryImportance>,
    pub money: MoneyAudit,
    pub events: Vec<Event>,
}

/// Per-minute incident lottery over active agents, in worker-id order. An
/// incident immobilizes for a uniform 120-600 s; overlapping incidents keep
/// the later end. Returns (worker id, immobilized-until) per incident.
pub fn apply_incidents<R: Rng>(
    workers: &mut BTreeMap<String, WorkerAgent>,
    probability: f64,
    now_s: f64,
    rng: &mut R,
) -> Vec<(String, f64)> {
    debug_assert!((0.0..=1.0).contains(&probability));
    let mut hits = Vec::new();
    for w in workers.values_mut() {
        if !w.active {
            continue;
        }
        if rng.random::<f64>() < probability {
            let duration = rng.random_range(INCIDENT_MIN_S..=INCIDENT_MAX_S);
            let until = now_s + duration;
            w.immobilized_until_s = w.immobilized_until_s.max(until);
            hits.push((w.id.clone(), w.immobilized_until_s));
        }
    }
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskState {
    Queued,
    Assigned,
    DoneInTime,
    DoneLate,
    Expired,
}

impl TaskState {
    fn terminal(self) -> bool {
        matches!(self, TaskState::DoneInTime | TaskState::DoneLate | TaskState::Expired)
    }
}

#[derive(Debug)]
struct TaskRt {
    spec: TaskSpec,
    state: TaskState,
    assignee: Option<String>,
    /// Chain locations already visited.
    progress: usize,
    /// Meters traveled toward this task by the current assignee, unbilled.
    leg_m: f64,
    /// Set at completion or at the deadline, whichever comes first.
    label_resolved: bool,
    labeled_delayed: bool,
    reassigned: bool,
    completed_at: Option<f64>,
}

impl TaskRt {
    fn new(spec: TaskSpec) -> Self {
        TaskRt {
            spec,
            state: TaskState::Queued,
            assignee: None,
            progress: 0,
            leg_m: 0.0,
            label_resolved: false,
            labeled_delayed: false,
            reassigned: false,
            completed_at: None,
        }
    }

    fn remaining(&self) -> &[Location] {
        &self.spec.locations[self.progress..]
    }

    fn view(&self) -> TaskView {
        TaskView {
            task_id: self.spec.task_id.clone(),
            remaining: self.remaining().to_vec(),
            deadline_s: self.spec.deadline,
            reward: self.spec.reward,
            penalty: self.spec.penalty,
        }
    }

    /// Live for coordination: assigned and the deadline not yet decided.
    fn coordinable(&self) -> bool {
        self.state == TaskState::Assigned && !self.label_resolved
    }
}

struct Totals {
    rewards: f64,
    penalties: f64,
    costs: f64,
}

struct Engine<'a> {
    sc: &'a Scenario,
    grid: TrafficGrid,
    workers: BTreeMap<String, WorkerAgent>,
    traces: Vec<Trace>,
    next_trace: usize,
    tasks: BTreeMap<String, TaskRt>,
    /// Task ids in release order; doubles as deadline order (fixed offset).
    release_order: Vec<String>,
    next_release: usize,
    next_deadline: usize,
    queue: BTreeSet<String>,
    /// Released, non-terminal tasks.
    live: usize,
    pipeline: PrequentialPipeline,
    seq: u64,
    rng_traffic: ChaCha8Rng,
    rng_incidents: ChaCha8Rng,
    rng_strategy: ChaCha8Rng,
    events: Vec<Event>,
    totals: Totals,
    participants: BTreeSet<String>,
    n_transfers: u64,
    reassigned: BTreeSet<String>,
    n_incidents: u64,
    n_auctions: u64,
}

/// Execute one scenario to completion. Deterministic given the scenario,
/// including the seed: two calls yield identical results bit for bit.
pub fn run(scenario: &Scenario) -> Result<RunResult, SimError> {
    scenario.validate()?;

    let stream_rng = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(stream);
        rng
    };

    let mut traces = match &scenario.traces {
        TraceSource::Synthetic { n_workers, mode_mix, trip_min_s, trip_max_s } => synth_traces(
            *n_workers,
            scenario.area,
            scenario.duration_s,
            *mode_mix,
            (*trip_min_s, *trip_max_s),
            &mut stream_rng(STREAM_TRACES),
        ),
        TraceSource::File { path } => {
            let load = load_traces(std::path::Path::new(path))?;
            for warning in &load.warnings {
                log::warn!("{path}: {warning}");
            }
            load.traces
        }
    };
    traces.sort_by(|a, b| a.start_time.total_cmp(&b.start_time).then(a.worker_id.cmp(&b.worker_id)));

    let specs = match &scenario.task_source {
        TaskSource::Generate => gen_tasks(
            scenario.kind.task_kind(),
            scenario.task_rate_per_h,
            scenario.n_tasks,
            scenario.area,
            scenario.deadline_s,
            scenario.reward_eur,
            scenario.penalty_eur,
            &mut stream_rng(STREAM_TASKS),
        )
        .map_err(|e| SimError::Config(format!("task generation: {e}")))?,
        TaskSource::File { path } => {
            let mut specs = load_tasks(std::path::Path::new(path))?;
            specs.sort_by(|a, b| {
                a.release_time.total_cmp(&b.release_time).then(a.task_id.cmp(&b.task_id))
            });
            specs
        }
    };

    let grid = make_grid(
        scenario.area.bbox(),
        scenario.cell_size_m,
        DEFAULT_TRANSITION,
        TrafficState::Normal,
        scenario.traffic_period_s,
    )
    .map_err(|e| SimError::Config(format!("traffic grid: {e}")))?;

    let release_order: Vec<String> = specs.iter().map(|s| s.task_id.clone()).collect();
    let mut tasks = BTreeMap::new();
    for spec in specs {
        if tasks.insert(spec.task_id.clone(), TaskRt::new(spec)).is_some() {
            return Err(SimError::Config("task ids must be unique".into()));
        }
    }

    let pipeline = PrequentialPipeline::new(PredictorBank::new(
        scenario.predictor_scope,
        &scenario.learner,
        scenario.seed,
    ));

    let mut engine = Engine {
        sc: scenario,
        grid,
        workers: BTreeMap::new(),
        traces,
        next_trace: 0,
        tasks,
        release_order,
        next_release: 0,
        next_deadline: 0,
        queue: BTreeSet::new(),
        live: 0,
        pipeline,
        seq: 0,
        rng_traffic: stream_rng(STREAM_TRAFFIC),
        rng_incidents: stream_rng(STREAM_INCIDENTS),
        rng_strategy: stream_rng(STREAM_STRATEGY),
        events: Vec::new(),
        totals: Totals { rewards: 0.0, penalties: 0.0, costs: 0.0 },
        participants: BTreeSet::new(),
        n_transfers: 0,
        reassigned: BTreeSet::new(),
        n_incidents: 0,
        n_auctions: 0,
    };
    Ok(engine.run_loop())
}

impl Engine<'_> {
    fn run_loop(&mut self) -> RunResult {
        let last_release = self
            .release_order
            .last()
            .map_or(0.0, |id| self.tasks[id].spec.release_time);
        // Grace: finish in-flight tasks, but never run unboundedly long.
        let hard_cap = self.sc.duration_s.max(last_release) + 2.0 * self.sc.deadline_s;
        let traffic_period = self.sc.traffic_period_s as u64;
        let monitor_period = self.sc.monitor_period_s as u64;

        let mut t: u64 = 0;
        loop {
            let now = t as f64;
            let all_released = self.next_release == self.release_order.len();
            if all_released && self.live == 0 && now >= self.sc.duration_s {
                break;
            }
            if now >= hard_cap {
                self.force_expire(now);
                break;
            }
            if t > 0 && t % traffic_period == 0 {
                self.grid.step_traffic(&mut self.rng_traffic);
            }
            self.inject_workers(now);
            self.release_tasks(now);
            self.assign_queued(now);
            if t % 60 == 0 {
                let hits = apply_incidents(
                    &mut self.workers,
                    self.sc.incident_probability,
                    now,
                    &mut self.rng_incidents,
                );
                self.n_incidents += hits.len() as u64;
                for (worker_id, until_s) in hits {
                    self.events.push(Event::Incident { t_s: now, worker_id, until_s });
                }
            }
            self.advance_agents(now);
            self.sweep_deadlines(now);
            if self.sc.strategy == Strategy::Random {
                self.random_transfers(now);
            }
            if t % monitor_period == 0 {
                match self.sc.strategy {
                    Strategy::Collaborative => self.collaborative_transfers(now),
                    Strategy::Forced => self.forced_transfers(now),
                    Strategy::Att => self.auction_round(now),
                    Strategy::Not | Strategy::Random => {}
                }
                self.register_predictions(now);
            }
            t += 1;
        }
        self.finalize()
    }

    fn inject_workers(&mut self, now: f64) {
        while self.next_trace < self.traces.len() && self.traces[self.next_trace].start_time <= now
        {
            let trace = &self.traces[self.next_trace];
            self.next_trace += 1;
            if self.workers.contains_key(&trace.worker_id) {
                log::warn!("duplicate worker id {} dropped", trace.worker_id);
                continue;
            }
            let agent = WorkerAgent::from_trace(trace, &self.grid.projection());
            self.workers.insert(agent.id.clone(), agent);
        }
    }

    fn release_tasks(&mut self, now: f64) {
        while self.next_release < self.release_order.len() {
            let tid = &self.release_order[self.next_release];
            if self.tasks[tid].spec.release_time > now {
                break;
            }
            self.next_release += 1;
            self.queue.insert(tid.clone());
            self.live += 1;
            self.events.push(Event::TaskReleased { t_s: now, task_id: tid.clone() });
        }
    }

    /// Platform admission rule for holding one more task: active and
    /// parcel-free in the single-parcel regime. Deadline-aware screening is
    /// per task (assignment and bid reachability), not per pool.
    fn eligible(&self, w: &WorkerAgent) -> bool {
        w.active && (!self.sc.kind.single_task() || w.tasks.is_empty())
    }

    fn eligible_ids(&self) -> BTreeSet<String> {
        self.workers
            .values()
            .filter(|w| self.eligible(w))
            .map(|w| w.id.clone())
            .collect()
    }

    /// Assign each queued task to the nearest eligible worker (ties to the
    /// lower id); tasks without one stay queued.
    fn assign_queued(&mut self, now: f64) {
        if self.queue.is_empty() {
            return;
        }
        for tid in self.queue.clone() {
            let first = self.tasks[&tid].remaining()[0];
            let deadline = self.tasks[&tid].spec.deadline;
            let mut best: Option<(f64, &str)> = None;
            for w in self.workers.values() {
                // The trace must outlive the deadline: a courier who leaves
                // mid-job is a guaranteed failure, and the platform knows the
                // planned trip end up front.
                if !self.eligible(w) || w.nominal_end_s < deadline || w.tasks.contains(&tid) {
                    continue;
                }
                let d = crate::geoenv::distance_m(w.position, first);
                let closer = match best {
                    None => true,
                    Some((bd, bid)) => d < bd || (d == bd && w.id.as_str() < bid),
                };
                if closer {
                    best = Some((d, w.id.as_str()));
                }
            }
            if let Some((_, wid)) = best {
                let wid = wid.to_string();
                self.queue.remove(&tid);
                self.attach(&tid, &wid, now);
                self.events.push(Event::TaskAssigned {
                    t_s: now,
                    task_id: tid.clone(),
                    worker_id: wid,
                });
            }
        }
    }

    /// Give a task to a worker: state, fixed cost, route rebuild.
    fn attach(&mut self, tid: &str, wid: &str, now: f64) {
        {
            let rt = self.tasks.get_mut(tid).unwrap();
            rt.state = TaskState::Assigned;
            rt.assignee = Some(wid.to_string());
            debug_assert!(rt.leg_m == 0.0);
        }
        self.workers.get_mut(wid).unwrap().tasks.insert(tid.to_string());
        let fixed = self.sc.costs.fixed_eur_per_task;
        self.post_cost(now, tid, wid, SettlementKind::FixedCost, fixed);
        self.rebuild_route(wid);
    }

    /// Re-plan the worker's task detours: strip all task waypoints, then
    /// prepend the cheapest single-pass interleaving of every held task's
    /// remaining chain, rejoining the worker's own route at its next point.
    fn rebuild_route(&mut self, wid: &str) {
        let held: Vec<(String, Vec<Location>)> = self.workers[wid]
            .tasks
            .iter()
            .map(|tid| (tid.clone(), self.tasks[tid].remaining().to_vec()))
            .collect();
        let w = self.workers.get_mut(wid).unwrap();
        w.route.retain(|wp| wp.tag == WaypointTag::Own);
        let chains: Vec<&[Location]> = held.iter().map(|(_, c)| c.as_slice()).collect();
        let (_, order) = plan_order(w.position, w.next_own_loc(), &chains);
        let proj = *w.projection();
        let via: Vec<Waypoint> = order
            .iter()
            .map(|&(ci, pi)| Waypoint::task(held[ci].1[pi], &proj, &held[ci].0))
            .collect();
        w.detour_route(via);
    }

    fn advance_agents(&mut self, now: f64) {
        let mut completions: Vec<(String, String)> = Vec::new();
        let mut deactivated: Vec<String> = Vec::new();
        let Engine { workers, tasks, grid, sc, .. } = self;
        for w in workers.values_mut() {
            if !w.active {
                continue;
            }
            if now < w.immobilized_until_s {
                w.record_idle();
                continue;
            }
            let out = w.advance(1.0, grid, &sc.speeds);
            for (tid, m) in &out.task_leg_m {
                tasks.get_mut(tid).unwrap().leg_m += m;
            }
            for tag in &out.reached {
                if let WaypointTag::Task(tid) = tag {
                    let rt = tasks.get_mut(tid).unwrap();
                    rt.progress += 1;
                    if rt.progress == rt.spec.locations.len() {
                        completions.push((w.id.clone(), tid.clone()));
                    }
                }
            }
            if !w.active {
                deactivated.push(w.id.clone());
            }
        }
        for (wid, tid) in completions {
            self.settle_completion(&tid, &wid, now);
        }
        for wid in deactivated {
            self.settle_route_end(&wid, now);
        }
    }

    fn settle_completion(&mut self, tid: &str, wid: &str, now: f64) {
        let (late, leg_m, reward) = {
            let rt = self.tasks.get_mut(tid).unwrap();
            rt.completed_at = Some(now);
            rt.state = if rt.label_resolved { TaskState::DoneLate } else { TaskState::DoneInTime };
            (rt.label_resolved, std::mem::take(&mut rt.leg_m), rt.spec.reward)
        };
        self.post_movement(now, tid, wid, leg_m);
        if late {
            // The deadline sweep already charged the penalty and resolved
            // the label; finishing still closes the task.
        } else {
            let rt = self.tasks.get_mut(tid).unwrap();
            rt.label_resolved = true;
            rt.labeled_delayed = false;
            self.post(now, tid, wid, SettlementKind::Reward, reward);
            self.totals.rewards += reward;
            if std::env::var_os("CROWDSWAP_DUMP").is_some() {
                eprintln!("L,{tid},0,{now}");
            }
            self.pipeline.resolve_pair(wid, tid, Label::NotDelayed);
        }
        self.workers.get_mut(wid).unwrap().tasks.remove(tid);
        self.live -= 1;
        self.events.push(Event::TaskCompleted {
            t_s: now,
            task_id: tid.to_string(),
            worker_id: wid.to_string(),
            late,
        });
    }

    /// A worker ran out of route with tasks still assigned: every such task
    /// fails now (penalty if its deadline had not already charged one).
    fn settle_route_end(&mut self, wid: &str, now: f64) {
        let held: Vec<String> = self.workers[wid].tasks.iter().cloned().collect();
        if held.is_empty() {
            return;
        }
        for tid in &held {
            let (leg_m, penalty, was_resolved) = {
                let rt = self.tasks.get_mut(tid).unwrap();
                rt.state = TaskState::Expired;
                rt.assignee = None;
                (std::mem::take(&mut rt.leg_m), rt.spec.penalty, rt.label_resolved)
            };
            self.post_movement(now, tid, wid, leg_m);
            if !was_resolved {
                let rt = self.tasks.get_mut(tid).unwrap();
                rt.label_resolved = true;
                rt.labeled_delayed = true;
                self.post(now, tid, wid, SettlementKind::Penalty, -penalty);
                self.totals.penalties += penalty;
                if std::env::var_os("CROWDSWAP_DUMP").is_some() {
                    eprintln!("L,{tid},1,{now}");
                }
                self.pipeline.resolve_pair(wid, tid, Label::Delayed);
            }
            self.live -= 1;
            self.events.push(Event::TaskExpired { t_s: now, task_id: tid.clone() });
        }
        self.workers.get_mut(wid).unwrap().tasks.clear();
        self.events.push(Event::RouteEndFailure {
            t_s: now,
            worker_id: wid.to_string(),
            task_ids: held,
        });
    }

    /// Tasks whose deadline passes uncompleted become Delayed now: penalty
    /// to the current assignee (execution continues), terminal expiry if
    /// still unassigned.
    fn sweep_deadlines(&mut self, now: f64) {
        while self.next_deadline < self.release_order.len() {
            let tid = self.release_order[self.next_deadline].clone();
            if self.tasks[&tid].spec.deadline > now {
                break;
            }
            self.next_deadline += 1;
            let (resolved, assignee, penalty) = {
                let rt = &self.tasks[&tid];
                (rt.label_resolved, rt.assignee.clone(), rt.spec.penalty)
            };
            if resolved {
                continue;
            }
            {
                let rt = self.tasks.get_mut(&tid).unwrap();
                rt.label_resolved = true;
                rt.labeled_delayed = true;
            }
            match assignee {
                Some(wid) => {
                    self.post(now, &tid, &wid, SettlementKind::Penalty, -penalty);
                    self.totals.penalties += penalty;
                    if std::env::var_os("CROWDSWAP_DUMP").is_some() {
                        eprintln!("L,{tid},1,{now}");
                    }
                    self.pipeline.resolve_pair(&wid, &tid, Label::Delayed);
                }
                None => {
                    let rt = self.tasks.get_mut(&tid).unwrap();
                    rt.state = TaskState::Expired;
                    self.queue.remove(&tid);
                    self.live -= 1;
                    self.events.push(Event::TaskExpired { t_s: now, task_id: tid.clone() });
                }
            }
        }
    }

    /// Coordinable (task id, assignee) pairs in task-id order.
    fn coordinable_pairs(&self) -> Vec<(String, String)> {
        self.tasks
            .iter()
            .filter(|(_, rt)| rt.coordinable())
            .map(|(tid, rt)| (tid.clone(), rt.assignee.clone().unwrap()))
            .collect()
    }

    fn random_transfers(&mut self, now: f64) {
        let assignments = self.coordinable_pairs();
        if assignments.is_empty() {
            return;
        }
        let eligible = self.eligible_ids();
        let events = coord::random_step(
            &assignments,
            &self.workers,
            &eligible,
            self.sc.p_transfer,
            now,
            &mut self.rng_strategy,
        );
        for ev in events {
            self.apply_transfer(&ev);
        }
    }

    fn collaborative_transfers(&mut self, now: f64) {
        let pairs = self.coordinable_pairs();
        if pairs.is_empty() {
            return;
        }
        let eligible = self.eligible_ids();
        let events = {
            let Engine { workers, tasks, pipeline, grid, .. } = &*self;
            let couriers: Vec<(&WorkerAgent, TaskView)> = pairs
                .iter()
                .map(|(tid, wid)| (&workers[wid], tasks[tid].view()))
                .collect();
            let candidates: Vec<&WorkerAgent> = eligible.iter().map(|id| &workers[id]).collect();
            coord::collaborative_step(
                grid,
                &couriers,
                &candidates,
                |wid, x| pipeline.predict_only(wid, x),
                now,
            )
        };
        for ev in events {
            self.apply_transfer(&ev);
        }
    }

    fn forced_transfers(&mut self, now: f64) {
        let pairs = self.coordinable_pairs();
        if pairs.is_empty() {
            return;
        }
        let eligible = self.eligible_ids();
        let events = {
            let Engine { workers, tasks, pipeline, grid, sc, .. } = &*self;
            let assignments: Vec<(TaskView, String)> = pairs
                .iter()
                .map(|(tid, wid)| (tasks[tid].view(), wid.clone()))
                .collect();
            coord::forced_step(
                &assignments,
                workers,
                &eligible,
                |wid, x| pipeline.predict_only(wid, x),
                grid,
                now,
                sc.forced_margin,
                sc.kind.single_task(),
            )
        };
        for ev in events {
            self.apply_transfer(&ev);
        }
    }

    /// Live task views held by a worker, in task-id order.
    fn held_views(&self, wid: &str) -> Vec<TaskView> {
        self.workers[wid]
            .tasks
            .iter()
            .filter(|tid| self.tasks[*tid].coordinable())
            .map(|tid| self.tasks[tid].view())
            .collect()
    }

    /// One ATT round: each assignee auctions any task it would rather drop;
    /// reachable eligible workers bid their truthful marginal utility and the
    /// task clears at the second-highest bid.
    fn auction_round(&mut self, now: f64) {
        for (tid, _) in self.coordinable_pairs() {
            // Re-read: an earlier auction this round may have moved tasks.
            let rt = &self.tasks[&tid];
            if !rt.coordinable() {
                continue;
            }
            let seller = rt.assignee.clone().unwrap();
            let view = rt.view();
            let trigger = {
                let Engine { workers, pipeline, grid, sc, .. } = &*self;
                let held = self.held_views(&seller);
                coord::should_trigger_auction(
                    &workers[&seller],
                    &view,
                    &held,
                    |x| pipeline.predict_only(&seller, x),
                    grid,
                    now,
                    &sc.costs,
                )
            };
            if !trigger {
                continue;
            }
            let eligible = self.eligible_ids();
            let bids: Vec<(String, f64)> = {
                let Engine { workers, pipeline, grid, sc, .. } = &*self;
                let mut bids = Vec::new();
                for wid in &eligible {
                    if *wid == seller {
                        continue;
                    }
                    let w = &workers[wid];
                    if !coord::reachable(w, &view, now) {
                        continue;
                    }
                    if let Some(r) = sc.neighborhood_radius_m {
                        if crate::geoenv::distance_m(w.position, workers[&seller].position) > r {
                            continue;
                        }
                    }
                    let held = self.held_views(wid);
                    if let Some(bid) = coord::compute_bid(
                        w,
                        &view,
                        &held,
                        |x| pipeline.predict_only(wid, x),
                        grid,
                        now,
                        &sc.costs,
                    ) {
                        bids.push((wid.clone(), bid));
                    }
                }
                bids
            };
            self.n_auctions += 1;
            let outcome = coord::resolve_auction(&bids);
            self.events.push(Event::AuctionHeld {
                t_s: now,
                task_id: tid.clone(),
                seller: seller.clone(),
                n_bids: bids.len(),
                winner: outcome.as_ref().map(|(w, _)| w.clone()),
                price_eur: outcome.as_ref().map_or(0.0, |(_, p)| *p),
            });
            if let Some((winner, price)) = outcome {
                let ev = TransferEvent {
                    task_id: tid.clone(),
                    from_worker: seller,
                    to_worker: winner,
                    time_s: now,
                    mechanism: TransferMechanism::Auction,
                    price,
                };
                self.apply_transfer(&ev);
            }
        }
    }

    /// Move a task between workers: bill the sender's traveled meters, void
    /// its outstanding predictions, re-plan both routes, charge the fixed
    /// cost to the recipient, and settle the transfer price if any.
    fn apply_transfer(&mut self, ev: &TransferEvent) {
        let tid = &ev.task_id;
        let now = ev.time_s;
        let leg_m = std::mem::take(&mut self.tasks.get_mut(tid).unwrap().leg_m);
        self.post_movement(now, tid, &ev.from_worker, leg_m);
        self.pipeline.void_pair(&ev.from_worker, tid);
        {
            let sender = self.workers.get_mut(&ev.from_worker).unwrap();
            sender.tasks.remove(tid);
        }
        self.rebuild_route(&ev.from_worker);
        {
            let rt = self.tasks.get_mut(tid).unwrap();
            rt.assignee = Some(ev.to_worker.clone());
            rt.reassigned = true;
        }
        self.reassigned.insert(tid.clone());
        self.n_transfers += 1;
        self.workers.get_mut(&ev.to_worker).unwrap().tasks.insert(tid.clone());
        let fixed = self.sc.costs.fixed_eur_per_task;
        self.post_cost(now, tid, &ev.to_worker, SettlementKind::FixedCost, fixed);
        self.rebuild_route(&ev.to_worker);
        if ev.price != 0.0 {
            self.post(now, tid, &ev.to_worker, SettlementKind::TransferPrice, -ev.price);
            self.post(now, tid, &ev.from_worker, SettlementKind::TransferPrice, ev.price);
        }
        self.events.push(Event::Transfer {
            t_s: now,
            task_id: tid.clone(),
            from_worker: ev.from_worker.clone(),
            to_worker: ev.to_worker.clone(),
            mechanism: ev.mechanism,
            price_eur: ev.price,
        });
    }

    /// Register one monitoring prediction per live assigned task.
    fn register_predictions(&mut self, now: f64) {
        let Engine { workers, tasks, pipeline, grid, seq, .. } = self;
        for (tid, rt) in tasks.iter() {
            if !rt.coordinable() {
                continue;
            }
            let wid = rt.assignee.as_ref().unwrap();
            match extract_features(&workers[wid], rt.remaining(), rt.spec.deadline, grid, now) {
                Ok(x) => {
                    if std::env::var_os("CROWDSWAP_DUMP").is_some() {
                        let a = x.as_array();
                        let cols: Vec<String> = a.iter().map(|v| format!("{v:.3}")).collect();
                        eprintln!("F,{tid},{now},{}", cols.join(","));
                    }
                    let key =
                        PendingKey { worker_id: wid.clone(), task_id: tid.clone(), seq: *seq };
                    *seq += 1;
                    pipeline.predict_register(key, x, now);
                }
                Err(e) => log::warn!("monitor skipped {tid}: {e}"),
            }
        }
    }

    /// Hard-cap cleanup: whatever is still live expires, with the current
    /// assignee billed for traveled meters. Labels resolved earlier (every
    /// deadline precedes the cap).
    fn force_expire(&mut self, now: f64) {
        let live_ids: Vec<String> = self
            .tasks
            .iter()
            .filter(|(_, rt)| !rt.state.terminal() && self.next_release > 0)
            .filter(|(tid, _)| {
                self.release_order[..self.next_release].contains(&tid.to_string())
            })
            .map(|(tid, _)| tid.clone())
            .collect();
        for tid in live_ids {
            let (assignee, leg_m) = {
                let rt = self.tasks.get_mut(&tid).unwrap();
                rt.state = TaskState::Expired;
                (rt.assignee.take(), std::mem::take(&mut rt.leg_m))
            };
            debug_assert!(self.tasks[&tid].label_resolved);
            if let Some(wid) = assignee {
                self.post_movement(now, &tid, &wid, leg_m);
                self.workers.get_mut(&wid).unwrap().tasks.remove(&tid);
            }
            self.queue.remove(&tid);
            self.live -= 1;
            self.events.push(Event::TaskExpired { t_s: now, task_id: tid });
        }
    }

    fn post(&mut self, now: f64, tid: &str, wid: &str, kind: SettlementKind, amount: f64) {
        self.workers.get_mut(wid).unwrap().ledger += amount;
        self.participants.insert(wid.to_string());
        self.events.push(Event::Settlement {
            t_s: now,
            task_id: tid.to_string(),
            worker_id: wid.to_string(),
            kind,
            amount_eur: amount,
        });
    }

    fn post_cost(&mut self, now: f64, tid: &str, wid: &str, kind: SettlementKind, magnitude: f64) {
        self.post(now, tid, wid, kind, -magnitude);
        self.totals.costs += magnitude;
    }

    fn post_movement(&mut self, now: f64, tid: &str, wid: &str, leg_m: f64) {
        if leg_m <= 0.0 {
            return;
        }
        let cost = leg_m * self.sc.costs.eur_per_m(self.workers[wid].mode);
        self.post_cost(now, tid, wid, SettlementKind::MovementCost, cost);
    }

    fn finalize(&mut self) -> RunResult {
        let n_tasks = self.tasks.len() as u64;
        let mut in_time = 0u64;
        let mut late = 0u64;
        let mut expired = 0u64;
        let mut delayed = 0u64;
        let mut completion_sum = 0.0;
        for rt in self.tasks.values() {
            debug_assert!(rt.state.terminal() && rt.label_resolved);
            match rt.state {
                TaskState::DoneInTime => in_time += 1,
                TaskState::DoneLate => late += 1,
                TaskState::Expired => expired += 1,
                _ => {}
            }
            if rt.labeled_delayed {
                delayed += 1;
            }
            if let Some(done) = rt.completed_at {
                completion_sum += done - rt.spec.release_time;
            }
        }
        let n_completed = in_time + late;
        let delay_rate = if n_tasks == 0 { 0.0 } else { delayed as f64 / n_tasks as f64 };
        let mean_completion_s =
            if n_completed == 0 { 0.0 } else { completion_sum / n_completed as f64 };

        let (in_after, delayed_after) = self.reassigned.iter().fold((0u64, 0u64), |(i, d), tid| {
            if self.tasks[tid].labeled_delayed {
                (i, d + 1)
            } else {
                (i + 1, d)
            }
        });

        let worker_profits: Vec<(String, f64)> = self
            .participants
            .iter()
            .map(|wid| (wid.clone(), self.workers[wid].ledger))
            .collect();

        let sum_ledgers: f64 = self.workers.values().map(|w| w.ledger).sum();
        let money = MoneyAudit {
            rewards_eur: self.totals.rewards,
            penalties_eur: self.totals.penalties,
            costs_eur: self.totals.costs,
            sum_ledgers_eur: sum_ledgers,
            discrepancy_eur: sum_ledgers
                - (self.totals.rewards - self.totals.penalties - self.totals.costs),
        };

        let (feature_importance, importance_by_category) =
            match self.pipeline.bank.feature_importance() {
                Ok(weights) => {
                    let named = FEATURE_NAMES
                        .iter()
                        .zip(weights.iter())
                        .map(|(n, w)| (n.to_string(), *w))
                        .collect();
                    let (capability, parcel_state, environment) = aggregate_importance(&weights);
                    (named, Some(CategoryImportance { capability, parcel_state, environment }))
                }
                Err(_) => (Vec::new(), None),
            };

        RunResult {
            kind: self.sc.kind,
            strategy: self.sc.strategy,
            seed: self.sc.seed,
            n_tasks,
            n_completed_in_time: in_time,
            n_completed_late: late,
            n_expired: expired,
            delay_rate,
            mean_completion_s,
            n_transfers: self.n_transfers,
            n_reassigned_tasks: self.reassigned.len() as u64,
            in_time_after_transfer: in_after,
            delayed_after_transfer: delayed_after,
            n_incidents: self.n_incidents,
            n_auctions: self.n_auctions,
            worker_profits,
            precision: self.pipeline.eval.precision(),
            recall: self.pipeline.eval.recall(),
            f1: self.pipeline.eval.f1(),
            n_items: self.pipeline.eval.n_resolved,
            f1_history: self.pipeline.eval.f1_history.clone(),
            feature_importance,
            importance_by_category,
            money,
            events: std::mem::take(&mut self.events),
        }
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

fn stat(values: impl Iterator<Item = f64> + Clone) -> Stat {
    let n = values.clone().count();
    if n == 0 {
        return Stat { mean: 0.0, sd: 0.0 };
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Stat { mean, sd: var.sqrt() }
}

/// Aggregates over a batch of runs of one (scenario, strategy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_runs: usize,
    pub delay_rate: Stat,
    pub mean_completion_s: Stat,
    pub n_transfers: Stat,
    /// Per-run mean profit over that run's participants.
    pub mean_profit_eur: Stat,
    /// Every participant profit from every run, ascending.
    pub pooled_profits_eur: Vec<f64>,
    pub frac_profit_nonpositive: f64,
}

impl Report {
    /// Empirical CDF of the pooled profits at `x`.
    pub fn profit_cdf(&self, x: f64) -> f64 {
        if self.pooled_profits_eur.is_empty() {
            return 0.0;
        }
        let n = self.pooled_profits_eur.partition_point(|&p| p <= x);
        n as f64 / self.pooled_profits_eur.len() as f64
    }
}

/// Fold runs of one cell into a report.
pub fn summarize(runs: &[RunResult]) -> Report {
    assert!(!runs.is_empty(), "summarize needs at least one run");
    let mean_profit = |r: &RunResult| {
        if r.worker_profits.is_empty() {
            0.0
        } else {
            r.worker_profits.iter().map(|(_, p)| p).sum::<f64>() / r.worker_profits.len() as f64
        }
    };
    let mut pooled: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.worker_profits.iter().map(|(_, p)| *p))
        .collect();
    pooled.sort_by(f64::total_cmp);
    let nonpos = pooled.partition_point(|&p| p <= 0.0);
    let frac = if pooled.is_empty() { 0.0 } else { nonpos as f64 / pooled.len() as f64 };
    Report {
        n_runs: runs.len(),
        delay_rate: stat(runs.iter().map(|r| r.delay_rate)),
        mean_completion_s: stat(runs.iter().map(|r| r.mean_completion_s)),
        n_transfers: stat(runs.iter().map(|r| r.n_transfers as f64)),
        mean_profit_eur: stat(runs.iter().map(mean_profit)),
        pooled_profits_eur: pooled,
        frac_profit_nonpositive: frac,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::{save_tasks, save_traces};

    /// A tiny but busy scenario: small area, short horizon, all machinery on.
    fn desk_scenario(strategy: Strategy, seed: u64) -> Scenario {
        let mut sc = Scenario::crowdshipping_default(seed);
        sc.area.radius_m = 1200.0;
        sc.duration_s = 1800.0;
        sc.traces = TraceSource::Synthetic {
            n_workers: 60,
            mode_mix: ModeMix::default(),
            trip_min_s: default_trip_min(),
            trip_max_s: default_trip_max(),
        };
        sc.task_rate_per_h = 80.0;
        sc.n_tasks = 30;
        sc.deadline_s = 600.0;
        sc.strategy = strategy;
        sc.learner = LearnerConfig::hoeffding();
        sc
    }

    #[test]
    fn zero_tasks_runs_clean() {
        let mut sc = desk_scenario(Strategy::Not, 1);
        sc.n_tasks = 0;
        let r = run(&sc).unwrap();
        assert_eq!(r.n_tasks, 0);
        assert_eq!(r.delay_rate, 0.0);
        assert_eq!(r.mean_completion_s, 0.0);
        assert!(r.worker_profits.is_empty());
        assert_eq!(r.money.sum_ledgers_eur, 0.0);
    }

    #[test]
    fn unreachable_task_for_lone_walker_is_delayed() {
        // One pedestrian, one parcel whose pickup is ~9 km out: a walker
        // covers at most 3.6 km in 30 minutes, so the deadline must pass.
        let dir = tempfile::tempdir().unwrap();
        let area = Area { center: Location { lat: 40.0, lon: -3.0 }, radius_m: 10_000.0 };
        let start = area.center;
        let trace = Trace {
            worker_id: "w0".into(),
            mode: crate::TransportMode::Walk,
            start_time: 0.0,
            points: vec![
                (start, 0.0),
                (start.offset_m(20_000.0, 0.0), 10_000.0),
            ],
        };
        let trace_path = dir.path().join("traces.csv");
        save_traces(&trace_path, &[trace]).unwrap();
        let spec = TaskSpec {
            task_id: "t0".into(),
            kind: TaskKind::Parcel,
            locations: vec![start.offset_m(9000.0, 0.0), start.offset_m(9500.0, 0.0)],
            release_time: 0.0,
            deadline: 1800.0,
            reward: 5.0,
            penalty: 5.0,
        };
        let task_path = dir.path().join("tasks.json");
        save_tasks(&task_path, &[spec]).unwrap();

        let mut sc = Scenario::crowdshipping_default(7);
        sc.area = area;
        sc.duration_s = 2000.0;
        sc.deadline_s = 1800.0;
        sc.traces = TraceSource::File { path: trace_path.to_str().unwrap().into() };
        sc.task_source = TaskSource::File { path: task_path.to_str().unwrap().into() };
        sc.incident_probability = 0.0;
        let r = run(&sc).unwrap();
        assert_eq!(r.n_tasks, 1);
        assert_eq!(r.delay_rate, 1.0);
        assert_eq!(r.n_completed_in_time, 0);
    }

    #[test]
    fn no_workers_means_everything_expires_unpaid() {
        let mut sc = desk_scenario(Strategy::Not, 3);
        sc.traces = TraceSource::Synthetic {
            n_workers: 0,
            mode_mix: ModeMix::default(),
            trip_min_s: default_trip_min(),
            trip_max_s: default_trip_max(),
        };
        sc.n_tasks = 5;
        let r = run(&sc).unwrap();
        assert_eq!(r.n_tasks, 5);
        assert_eq!(r.n_expired, 5);
        assert_eq!(r.delay_rate, 1.0);
        assert!(r.worker_profits.is_empty());
        assert_eq!(r.money.penalties_eur, 0.0);
        assert_eq!(r.money.sum_ledgers_eur, 0.0);
    }

    #[test]
    fn same_seed_reproduces_bit_identical_results() {
        let sc = desk_scenario(Strategy::Att, 11);
        let a = serde_json::to_string(&run(&sc).unwrap()).unwrap();
        let b = serde_json::to_string(&run(&sc).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn busy_run_holds_the_books_together() {
        for strategy in [Strategy::Random, Strategy::Forced, Strategy::Att] {
            let mut sc = desk_scenario(strategy, 5);
            sc.p_transfer = 0.01;
            let r = run(&sc).unwrap();
            assert_eq!(r.n_completed_in_time + r.n_completed_late + r.n_expired, r.n_tasks);
            assert_eq!(
                r.in_time_after_transfer + r.delayed_after_transfer,
                r.n_reassigned_tasks
            );
            assert!(r.n_reassigned_tasks <= r.n_transfers);
            assert!(
                r.money.discrepancy_eur.abs() < 1e-9,
                "{strategy}: money leak {}",
                r.money.discrepancy_eur
            );
            // Delay labels and delay accounting agree.
            let delayed = (r.delay_rate * r.n_tasks as f64).round() as u64;
            assert_eq!(delayed, r.n_completed_late + r.n_expired);
        }
    }

    #[test]
    fn transfers_happen_and_are_logged() {
        let mut sc = desk_scenario(Strategy::Random, 9);
        sc.p_transfer = 0.02;
        let r = run(&sc).unwrap();
        assert!(r.n_transfers > 0, "expected churn at p_transfer 0.02");
        let logged = r
            .events
            .iter()
            .filter(|e| matches!(e, Event::Transfer { .. }))
            .count() as u64;
        assert_eq!(logged, r.n_transfers);
        // Event times never decrease.
        for pair in r.events.windows(2) {
            assert!(pair[0].time_s() <= pair[1].time_s());
        }
    }

    #[test]
    fn run_extends_past_duration_until_tasks_resolve() {
        let mut sc = desk_scenario(Strategy::Not, 13);
        // Tasks keep releasing near the end of the horizon.
        sc.duration_s = 900.0;
        sc.task_rate_per_h = 120.0;
        sc.n_tasks = 30;
        let r = run(&sc).unwrap();
        assert_eq!(r.n_completed_in_time + r.n_completed_late + r.n_expired, r.n_tasks);
        let last = r.events.last().unwrap().time_s();
        assert!(last >= 900.0 - 600.0, "a busy tail should settle late, got {last}");
    }

    #[test]
    fn incidents_probability_extremes() {
        let area = Area { center: Location { lat: 40.0, lon: -3.0 }, radius_m: 2000.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traces = synth_traces(50, area, 3600.0, ModeMix::default(), (1800.0, 5400.0), &mut rng);
        let grid = make_grid(area.bbox(), 500.0, DEFAULT_TRANSITION, TrafficState::Normal, 60.0)
            .unwrap();
        let mut workers: BTreeMap<String, WorkerAgent> = traces
            .iter()
            .map(|tr| (tr.worker_id.clone(), WorkerAgent::from_trace(tr, &grid.projection())))
            .collect();

        let mut rng0 = ChaCha8Rng::seed_from_u64(2);
        assert!(apply_incidents(&mut workers, 0.0, 0.0, &mut rng0).is_empty());
        assert!(workers.values().all(|w| w.immobilized_until_s == 0.0));

        let mut rng1 = ChaCha8Rng::seed_from_u64(3);
        for minute in 0..3 {
            let now = minute as f64 * 60.0;
            let hits = apply_incidents(&mut workers, 1.0, now, &mut rng1);
            assert_eq!(hits.len(), 50);
            assert!(workers.values().all(|w| w.immobilized_until_s >= now + INCIDENT_MIN_S));
        }
    }

    #[test]
    fn incident_count_matches_binomial_oracle() {
        // 100 agents over 100 minutes at p = 0.05: 10^4 Bernoulli draws.
        // 3 sigma around np: 500 +- 65.4.
        let area = Area { center: Location { lat: 40.0, lon: -3.0 }, radius_m: 2000.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traces = synth_traces(100, area, 60.0, ModeMix::default(), (1800.0, 5400.0), &mut rng);
        let grid = make_grid(area.bbox(), 500.0, DEFAULT_TRANSITION, TrafficState::Normal, 60.0)
            .unwrap();
        let mut workers: BTreeMap<String, WorkerAgent> = traces
            .iter()
            .map(|tr| (tr.worker_id.clone(), WorkerAgent::from_trace(tr, &grid.projection())))
            .collect();
        let mut rng_inc = ChaCha8Rng::seed_from_u64(5);
        let mut count = 0;
        for minute in 0..100 {
            count += apply_incidents(&mut workers, 0.05, minute as f64 * 60.0, &mut rng_inc).len();
        }
        let expected = 10_000.0 * 0.05;
        let sigma = (10_000.0_f64 * 0.05 * 0.95).sqrt();
        assert!(
            (count as f64 - expected).abs() <= 3.0 * sigma,
            "incident count {count} outside 3 sigma of {expected}"
        );
    }

    #[test]
    fn config_validation_names_the_field() {
        let mut sc = desk_scenario(Strategy::Not, 0);
        sc.reward_eur = -1.0;
        let err = run(&sc).unwrap_err().to_string();
        assert!(err.contains("reward_eur"), "{err}");

        let mut sc = desk_scenario(Strategy::Not, 0);
        sc.incident_probability = 1.5;
        let err = run(&sc).unwrap_err().to_string();
        assert!(err.contains("incident_probability"), "{err}");

        let mut sc = desk_scenario(Strategy::Not, 0);
        sc.monitor_period_s = 0.5;
        let err = run(&sc).unwrap_err().to_string();
        assert!(err.contains("monitor_period_s"), "{err}");
    }

    #[test]
    fn summarize_single_run_is_that_run() {
        let sc = desk_scenario(Strategy::Not, 21);
        let r = run(&sc).unwrap();
        let rep = summarize(std::slice::from_ref(&r));
        assert_eq!(rep.n_runs, 1);
        assert_eq!(rep.delay_rate.mean, r.delay_rate);
        assert_eq!(rep.delay_rate.sd, 0.0);
        assert_eq!(rep.mean_completion_s.mean, r.mean_completion_s);
        assert_eq!(rep.n_transfers.sd, 0.0);
    }

    #[test]
    fn summarize_cdf_matches_brute_force_recount() {
        let runs: Vec<RunResult> = [31u64, 32, 33]
            .iter()
            .map(|&seed| run(&desk_scenario(Strategy::Random, seed)).unwrap())
            .collect();
        let rep = summarize(&runs);
        let all: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.worker_profits.iter().map(|(_, p)| *p))
            .collect();
        assert_eq!(rep.pooled_profits_eur.len(), all.len());
        for x in [-5.0, -0.25, 0.0, 0.1, 2.0, 10.0] {
            let brute = all.iter().filter(|&&p| p <= x).count() as f64 / all.len() as f64;
            assert_eq!(rep.profit_cdf(x), brute, "cdf mismatch at {x}");
        }
        assert_eq!(rep.frac_profit_nonpositive, rep.profit_cdf(0.0));
    }

    #[test]
    fn all_positive_profits_give_zero_nonpositive_fraction() {
        let mut r = run(&desk_scenario(Strategy::Not, 41)).unwrap();
        r.worker_profits = vec![("w0".into(), 1.0), ("w1".into(), 2.5)];
        let rep = summarize(std::slice::from_ref(&r));
        assert_eq!(rep.frac_profit_nonpositive, 0.0);
    }
}
