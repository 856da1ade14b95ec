//! Worker agents: per-mode kinematics under traffic and the bookkeeping of
//! speed history, carried tasks, and money.

use crate::geoenv::{dist_xy, Location, Projection, TrafficGrid, TrafficState};
use crate::traces::Trace;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Walk,
    Bike,
    Motorbike,
}

impl TransportMode {
    /// Cruise speed under normal traffic.
    pub fn base_speed_mps(self) -> f64 {
        match self {
            TransportMode::Walk => 2.0,
            TransportMode::Bike => 5.0,
            TransportMode::Motorbike => 10.0,
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportMode::Walk => "walk",
            TransportMode::Bike => "bike",
            TransportMode::Motorbike => "motorbike",
        })
    }
}

impl FromStr for TransportMode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "walk" => Ok(TransportMode::Walk),
            "bike" => Ok(TransportMode::Bike),
            "motorbike" => Ok(TransportMode::Motorbike),
            _ => Err(()),
        }
    }
}

/// Speeds per mode and traffic state. Pedestrians and cyclists are
/// traffic-independent; motorbikes slow down and stop in jams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedModel {
    pub walk_mps: f64,
    pub bike_mps: f64,
    pub moto_normal_mps: f64,
    pub moto_slow_mps: f64,
}

impl Default for SpeedModel {
    fn default() -> Self {
        SpeedModel {
            walk_mps: 2.0,
            bike_mps: 5.0,
            moto_normal_mps: 10.0,
            moto_slow_mps: 3.0,
        }
    }
}

/// Speed of a mode under a traffic state.
pub fn mode_speed(mode: TransportMode, state: TrafficState, model: &SpeedModel) -> f64 {
    match mode {
        TransportMode::Walk => model.walk_mps,
        TransportMode::Bike => model.bike_mps,
        TransportMode::Motorbike => match state {
            TrafficState::Normal => model.moto_normal_mps,
            TrafficState::Slow => model.moto_slow_mps,
            TrafficState::Jam => 0.0,
        },
    }
}

/// What a route waypoint is for: the worker's own trip, or a detour leg
/// belonging to a task. Meters on task legs are billed to that task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WaypointTag {
    Own,
    Task(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub loc: Location,
    pub xy: (f64, f64),
    pub tag: WaypointTag,
}

impl Waypoint {
    pub fn own(loc: Location, proj: &Projection) -> Self {
        Waypoint { loc, xy: proj.to_xy(loc), tag: WaypointTag::Own }
    }

    pub fn task(loc: Location, proj: &Projection, task_id: &str) -> Self {
        Waypoint {
            loc,
            xy: proj.to_xy(loc),
            tag: WaypointTag::Task(task_id.to_string()),
        }
    }
}

/// Running aggregate of observed speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedStats {
    pub n: u64,
    pub sum: f64,
    pub max: f64,
    pub min: f64,
}

impl SpeedStats {
    fn new(first: f64) -> Self {
        SpeedStats { n: 1, sum: first, max: first, min: first }
    }

    pub fn observe(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.max = self.max.max(v);
        self.min = self.min.min(v);
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// Per-tick movement summary handed back to the engine.
#[derive(Debug, Default)]
pub struct AdvanceOutcome {
    pub moved_m: f64,
    /// Meters traveled this tick on legs billed to a task.
    pub task_leg_m: Vec<(String, f64)>,
    /// Tags of waypoints reached this tick, in route order.
    pub reached: Vec<WaypointTag>,
}

/// A moving crowdworker.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerAgent {
    pub id: String,
    pub mode: TransportMode,
    pub position: Location,
    pub pos_xy: (f64, f64),
    pub route: VecDeque<Waypoint>,
    pub speed_now: f64,
    pub speed_stats: SpeedStats,
    pub tasks: BTreeSet<String>,
    pub ledger: f64,
    pub active: bool,
    /// End of an ongoing incident; the agent does not move before this.
    pub immobilized_until_s: f64,
    /// Nominal end of the worker's planned trip (trace plan); used by the
    /// platform to judge whether the worker has enough trip left for a task.
    pub nominal_end_s: f64,
    proj: Projection,
}

impl WorkerAgent {
    /// Build an active agent at the first trace point, with the rest of the
    /// trace as its own route. The entry speed observation is the mode's
    /// cruise speed (the platform knows the declared capability).
    pub fn from_trace(trace: &Trace, proj: &Projection) -> Self {
        debug_assert!(trace.points.len() >= 2);
        let start = trace.points[0].0;
        let route: VecDeque<Waypoint> = trace.points[1..]
            .iter()
            .map(|(loc, _)| Waypoint::own(*loc, proj))
            .collect();
        let v0 = trace.mode.base_speed_mps();
        WorkerAgent {
            id: trace.worker_id.clone(),
            mode: trace.mode,
            position: start,
            pos_xy: proj.to_xy(start),
            route,
            speed_now: v0,
            speed_stats: SpeedStats::new(v0),
            tasks: BTreeSet::new(),
            ledger: 0.0,
            active: true,
            immobilized_until_s: 0.0,
            nominal_end_s: trace.end_time(),
            proj: *proj,
        }
    }

    /// Record an idle tick (incident): a zero speed observation, no motion.
    pub fn record_idle(&mut self) {
        self.speed_now = 0.0;
        self.speed_stats.observe(0.0);
    }

    /// Move along the route for one tick at the speed of the current cell's
    /// traffic state, consuming waypoints. Deactivates at route end.
    pub fn advance(&mut self, dt_s: f64, grid: &TrafficGrid, model: &SpeedModel) -> AdvanceOutcome {
        debug_assert!(self.active && dt_s > 0.0);
        let state = grid.state_from_xy(self.pos_xy.0, self.pos_xy.1);
        let speed = mode_speed(self.mode, state, model);
        self.speed_now = speed;
        self.speed_stats.observe(speed);

        let mut out = AdvanceOutcome::default();
        let mut budget = speed * dt_s;
        while budget > 0.0 {
            let Some(wp) = self.route.front() else { break };
            let leg = dist_xy(self.pos_xy, wp.xy);
            if leg <= budget {
                budget -= leg;
                out.moved_m += leg;
                if let WaypointTag::Task(tid) = &wp.tag {
                    credit(&mut out.task_leg_m, tid, leg);
                }
                let wp = self.route.pop_front().unwrap();
                self.pos_xy = wp.xy;
                self.position = wp.loc;
                out.reached.push(wp.tag);
            } else {
                let f = budget / leg;
                self.pos_xy.0 += (wp.xy.0 - self.pos_xy.0) * f;
                self.pos_xy.1 += (wp.xy.1 - self.pos_xy.1) * f;
                self.position = self.proj.to_loc(self.pos_xy.0, self.pos_xy.1);
                out.moved_m += budget;
                if let WaypointTag::Task(tid) = &wp.tag {
                    credit(&mut out.task_leg_m, tid, budget);
                }
                budget = 0.0;
            }
        }
        if self.route.is_empty() {
            self.active = false;
        }
        out
    }

    /// Insert a detour: visit `via` in order, then resume the current route.
    /// Empty `via` leaves the route unchanged.
    pub fn detour_route(&mut self, via: Vec<Waypoint>) {
        for wp in via.into_iter().rev() {
            self.route.push_front(wp);
        }
    }

    /// Drop all route legs billed to `task_id` (the task left this worker).
    pub fn remove_task_waypoints(&mut self, task_id: &str) {
        self.route
            .retain(|wp| wp.tag != WaypointTag::Task(task_id.to_string()));
    }

    /// Next waypoint of the worker's own trip, skipping task detour points.
    /// Detours rejoin the trip here; None once the own route is consumed.
    pub fn next_own_loc(&self) -> Option<Location> {
        self.route
            .iter()
            .find(|w| w.tag == WaypointTag::Own)
            .map(|w| w.loc)
    }

    /// Current position followed by all remaining waypoints.
    pub fn remaining_polyline(&self) -> Vec<Location> {
        let mut pts = Vec::with_capacity(1 + self.route.len());
        pts.push(self.position);
        pts.extend(self.route.iter().map(|wp| wp.loc));
        pts
    }

    /// Remaining route length in projected meters.
    pub fn route_length_m(&self) -> f64 {
        let mut total = 0.0;
        let mut prev = self.pos_xy;
        for wp in &self.route {
            total += dist_xy(prev, wp.xy);
            prev = wp.xy;
        }
        total
    }

    pub fn projection(&self) -> &Projection {
        &self.proj
    }
}

fn credit(acc: &mut Vec<(String, f64)>, tid: &str, m: f64) {
    if let Some(e) = acc.iter_mut().find(|(id, _)| id == tid) {
        e.1 += m;
    } else {
        acc.push((tid.to_string(), m));
    }
}
