//! Mobility traces and task workloads: CSV ingest of ride data plus
//! synthesis of compatible traces and tasks when real data is absent.
//!
//! Trace CSV format: header `worker_id,mode,t_s,lat,lon`, one row per GPS
//! point, UTF-8, LF line endings. Rows of one ride are contiguous and
//! ordered by time. Task files are JSON arrays of [`TaskSpec`].

use crate::agents::TransportMode;
use crate::geoenv::{distance_m, Area, Location};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace file has no data rows")]
    EmptyFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum TaskGenError {
    #[error("operating area (radius {radius_m} m) cannot fit a {chain_m} m sensing chain")]
    AreaTooSmall { radius_m: f64, chain_m: f64 },
}

/// One worker's planned trip: entry time and the waypoints of the ride.
///
/// Point timestamps are the nominal plan at the mode's base speed; actual
/// movement is recomputed by the kinematics under traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub worker_id: String,
    pub mode: TransportMode,
    /// Seconds since run start; equals the first point's timestamp.
    pub start_time: f64,
    /// (location, timestamp seconds); timestamps strictly increasing.
    pub points: Vec<(Location, f64)>,
}

impl Trace {
    /// Nominal end of the trip, i.e. the last point's timestamp.
    pub fn end_time(&self) -> f64 {
        self.points.last().map(|p| p.1).unwrap_or(self.start_time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Parcel,
    SensingChain,
}

/// A task: a parcel run (origin, destination) or a sensing chain of ordered
/// locations, with a deadline and symmetric money terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub locations: Vec<Location>,
    pub release_time: f64,
    pub deadline: f64,
    pub reward: f64,
    pub penalty: f64,
}

/// Result of loading a trace file: valid traces plus one warning per
/// dropped ride (non-monotone timestamps).
#[derive(Debug)]
pub struct TraceLoad {
    pub traces: Vec<Trace>,
    pub warnings: Vec<String>,
}

/// Parse a trace CSV. Rides with non-monotone timestamps or fewer than two
/// points are dropped with a warning; malformed rows are hard errors.
/// Traces come back sorted by start time (ties by worker id).
pub fn load_traces(path: &Path) -> Result<TraceLoad, TraceError> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    match lines.next() {
        Some(header) => {
            let header = header?;
            if header.trim() != "worker_id,mode,t_s,lat,lon" {
                return Err(TraceError::Parse {
                    line: 1,
                    msg: format!("unexpected header {header:?}"),
                });
            }
        }
        None => return Err(TraceError::EmptyFile),
    }

    struct Row {
        worker_id: String,
        mode: TransportMode,
        t: f64,
        loc: Location,
    }

    let mut rows: Vec<Row> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(TraceError::Parse {
                line: lineno,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64, TraceError> {
            s.trim().parse::<f64>().map_err(|_| TraceError::Parse {
                line: lineno,
                msg: format!("invalid {what}: {s:?}"),
            })
        };
        let mode = fields[1].trim().parse().map_err(|_| TraceError::Parse {
            line: lineno,
            msg: format!("invalid mode: {:?}", fields[1]),
        })?;
        let lat = parse_f64(fields[3], "lat")?;
        let lon = parse_f64(fields[4], "lon")?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(TraceError::Parse {
                line: lineno,
                msg: format!("coordinate out of range: {lat},{lon}"),
            });
        }
        rows.push(Row {
            worker_id: fields[0].trim().to_string(),
            mode,
            t: parse_f64(fields[2], "t_s")?,
            loc: Location::new(lat, lon),
        });
    }
    if rows.is_empty() {
        return Err(TraceError::EmptyFile);
    }

    let mut traces = Vec::new();
    let mut warnings = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let mut j = i + 1;
        while j < rows.len() && rows[j].worker_id == rows[i].worker_id {
            j += 1;
        }
        let group = &rows[i..j];
        let monotone = group.windows(2).all(|w| w[1].t > w[0].t);
        if group.len() < 2 {
            warnings.push(format!("ride {}: fewer than 2 points, dropped", group[0].worker_id));
        } else if !monotone {
            warnings.push(format!(
                "ride {}: non-monotone timestamps, dropped",
                group[0].worker_id
            ));
        } else {
            traces.push(Trace {
                worker_id: group[0].worker_id.clone(),
                mode: group[0].mode,
                start_time: group[0].t,
                points: group.iter().map(|r| (r.loc, r.t)).collect(),
            });
        }
        i = j;
    }
    traces.sort_by(|a, b| {
        a.start_time
            .total_cmp(&b.start_time)
            .then_with(|| a.worker_id.cmp(&b.worker_id))
    });
    Ok(TraceLoad { traces, warnings })
}

/// Write traces in the CSV format accepted by [`load_traces`].
pub fn save_traces(path: &Path, traces: &[Trace]) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "worker_id,mode,t_s,lat,lon")?;
    for tr in traces {
        for (loc, t) in &tr.points {
            writeln!(w, "{},{},{},{},{}", tr.worker_id, tr.mode, t, loc.lat, loc.lon)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fractions of workers per transport mode; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMix {
    pub walk: f64,
    pub bike: f64,
    pub motorbike: f64,
}

impl Default for ModeMix {
    fn default() -> Self {
        ModeMix { walk: 0.4, bike: 0.3, motorbike: 0.3 }
    }
}

impl ModeMix {
    pub fn sum(&self) -> f64 {
        self.walk + self.bike + self.motorbike
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> TransportMode {
        let u: f64 = rng.random::<f64>() * self.sum();
        if u < self.walk {
            TransportMode::Walk
        } else if u < self.walk + self.bike {
            TransportMode::Bike
        } else {
            TransportMode::Motorbike
        }
    }
}

/// Generate `n_workers` random-waypoint rides inside `area`.
///
/// Entry times form a Poisson process over `[0, duration_s)` (uniform order
/// statistics given the count). Each ride draws a nominal trip duration
/// uniformly from `trip_bounds_s` and strings together uniform waypoints
/// until the plan, at the mode's base speed, covers it. Deterministic given
/// the RNG state.
pub fn synth_traces<R: Rng>(
    n_workers: usize,
    area: Area,
    duration_s: f64,
    mode_mix: ModeMix,
    trip_bounds_s: (f64, f64),
    rng: &mut R,
) -> Vec<Trace> {
    let (trip_min_s, trip_max_s) = trip_bounds_s;
    debug_assert!(
        (mode_mix.sum() - 1.0).abs() < 1e-9,
        "mode mix must sum to 1"
    );
    debug_assert!(trip_min_s > 0.0 && trip_min_s <= trip_max_s);
    let mut starts: Vec<f64> = (0..n_workers)
        .map(|_| rng.random::<f64>() * duration_s)
        .collect();
    starts.sort_by(f64::total_cmp);

    let width = (n_workers.max(1) as f64).log10().floor() as usize + 1;
    let mut traces = Vec::with_capacity(n_workers);
    for (i, &start) in starts.iter().enumerate() {
        let mode = mode_mix.draw(rng);
        let speed = mode.base_speed_mps();
        let target_s = trip_min_s + rng.random::<f64>() * (trip_max_s - trip_min_s);
        let mut points = vec![(area.random_point(rng), start)];
        let mut t = start;
        while t - start < target_s {
            let next = area.random_point(rng);
            let prev = points.last().unwrap().0;
            let leg_s = distance_m(prev, next) / speed;
            if leg_s <= 0.0 {
                continue;
            }
            t += leg_s;
            points.push((next, t));
        }
        traces.push(Trace {
            worker_id: format!("w{i:0width$}"),
            mode,
            start_time: start,
            points,
        });
    }
    traces
}

/// Spacing of consecutive sensing-chain locations, meters.
pub const CHAIN_SPACING_M: f64 = 500.0;
/// Number of locations per sensing chain.
pub const CHAIN_LEN: usize = 3;

/// Generate a task workload.
///
/// Parcels draw origin and destination uniformly in the area. Sensing
/// chains are three collinear points 500 m apart at a uniform anchor and
/// bearing, resampled until the whole chain fits in the area. Release times
/// are a Poisson process at `rate_per_hour`; each deadline is release +
/// `deadline_s`.
pub fn gen_tasks<R: Rng>(
    kind: TaskKind,
    rate_per_hour: f64,
    total: usize,
    area: Area,
    deadline_s: f64,
    reward: f64,
    penalty: f64,
    rng: &mut R,
) -> Result<Vec<TaskSpec>, TaskGenError> {
    let chain_m = (CHAIN_LEN - 1) as f64 * CHAIN_SPACING_M;
    if kind == TaskKind::SensingChain && 2.0 * area.radius_m < chain_m {
        return Err(TaskGenError::AreaTooSmall {
            radius_m: area.radius_m,
            chain_m,
        });
    }
    let rate_per_s = rate_per_hour / 3600.0;
    let width = (total.max(1) as f64).log10().floor() as usize + 1;
    let mut tasks = Vec::with_capacity(total);
    let mut t = 0.0;
    for i in 0..total {
        // Exponential inter-arrival via inverse transform; releases land on
        // whole seconds (the engine's tick granularity), which also keeps
        // deadline - release exact in floating point.
        t += -(1.0 - rng.random::<f64>()).ln() / rate_per_s;
        let release = t.round();
        let locations = match kind {
            TaskKind::Parcel => vec![area.random_point(rng), area.random_point(rng)],
            TaskKind::SensingChain => loop {
                let anchor = area.random_point(rng);
                let bearing: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                let chain: Vec<Location> = (0..CHAIN_LEN)
                    .map(|k| {
                        anchor.offset_m(
                            k as f64 * CHAIN_SPACING_M * bearing.cos(),
                            k as f64 * CHAIN_SPACING_M * bearing.sin(),
                        )
                    })
                    .collect();
                if chain.iter().all(|p| area.contains(*p)) {
                    break chain;
                }
            },
        };
        tasks.push(TaskSpec {
            task_id: format!("t{i:0width$}"),
            kind,
            locations,
            release_time: release,
            deadline: release + deadline_s,
            reward,
            penalty,
        });
    }
    Ok(tasks)
}

/// Write a task workload as a JSON array.
pub fn save_tasks(path: &Path, tasks: &[TaskSpec]) -> Result<(), std::io::Error> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, tasks)?;
    w.flush()
}

/// Read a task workload written by [`save_tasks`].
pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, std::io::Error> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn area() -> Area {
        Area::new(Location::new(40.4169, -3.7035), 1500.0)
    }

    #[test]
    fn load_single_ride() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        std::fs::write(
            &path,
            "worker_id,mode,t_s,lat,lon\nw0,walk,0,40.41,-3.70\nw0,walk,10,40.42,-3.70\n",
        )
        .unwrap();
        let load = load_traces(&path).unwrap();
        assert_eq!(load.traces.len(), 1);
        assert_eq!(load.traces[0].points.len(), 2);
        assert_eq!(load.traces[0].mode, TransportMode::Walk);
        assert_eq!(load.traces[0].start_time, 0.0);
        assert!(load.warnings.is_empty());
    }

    #[test]
    fn non_monotone_ride_dropped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        std::fs::write(
            &path,
            "worker_id,mode,t_s,lat,lon\n\
             w0,walk,0,40.41,-3.70\nw0,walk,10,40.42,-3.70\n\
             w1,bike,5,40.41,-3.70\nw1,bike,5,40.42,-3.70\n",
        )
        .unwrap();
        let load = load_traces(&path).unwrap();
        assert_eq!(load.traces.len(), 1);
        assert_eq!(load.traces[0].worker_id, "w0");
        assert_eq!(load.warnings.len(), 1);
    }

    #[test]
    fn empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        std::fs::write(&path, "worker_id,mode,t_s,lat,lon\n").unwrap();
        assert!(matches!(load_traces(&path), Err(TraceError::EmptyFile)));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        std::fs::write(
            &path,
            "worker_id,mode,t_s,lat,lon\nw0,walk,0,40.41,-3.70\nw0,walk,oops,40.42,-3.70\n",
        )
        .unwrap();
        match load_traces(&path) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_round_trip_is_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let traces = synth_traces(1000, area(), 43_200.0, ModeMix::default(), (1800.0, 5400.0), &mut rng);
        assert_eq!(traces.len(), 1000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        save_traces(&path, &traces).unwrap();
        let load = load_traces(&path).unwrap();
        assert!(load.warnings.is_empty());
        assert_eq!(load.traces.len(), traces.len());
        // Timestamps and coordinates survive the decimal round trip exactly
        // (shortest round-trip float formatting).
        for (a, b) in traces.iter().zip(&load.traces) {
            assert_eq!(a, b);
        }
        // Saving the loaded traces reproduces the file byte for byte.
        let path2 = dir.path().join("traces2.csv");
        save_traces(&path2, &load.traces).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn synth_zero_workers_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(synth_traces(0, area(), 3600.0, ModeMix::default(), (1800.0, 5400.0), &mut rng).is_empty());
    }

    #[test]
    fn synth_all_walk_spacing_matches_walk_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mix = ModeMix { walk: 1.0, bike: 0.0, motorbike: 0.0 };
        let traces = synth_traces(20, area(), 3600.0, mix, (1800.0, 5400.0), &mut rng);
        for tr in &traces {
            assert_eq!(tr.mode, TransportMode::Walk);
            for w in tr.points.windows(2) {
                let d = distance_m(w[0].0, w[1].0);
                let dt = w[1].1 - w[0].1;
                assert!((d / dt - 2.0).abs() < 1e-9, "spacing {} over {}", d, dt);
            }
        }
    }

    #[test]
    fn synth_same_seed_identical() {
        let a = synth_traces(
            50,
            area(),
            3600.0,
            ModeMix::default(),
            (1800.0, 5400.0),
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        let b = synth_traces(
            50,
            area(),
            3600.0,
            ModeMix::default(),
            (1800.0, 5400.0),
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn synth_points_inside_area_and_times_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = area();
        let traces = synth_traces(100, a, 7200.0, ModeMix::default(), (1800.0, 5400.0), &mut rng);
        for tr in &traces {
            assert!(tr.points.len() >= 2);
            assert!(tr.points.iter().all(|(p, _)| a.contains(*p)));
            assert!(tr.points.windows(2).all(|w| w[1].1 > w[0].1));
            let dur = tr.end_time() - tr.start_time;
            assert!((1800.0..=5400.0 + 3000.0).contains(&dur), "duration {dur}");
        }
    }

    #[test]
    fn sensing_chain_spacing_500m() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tasks = gen_tasks(
            TaskKind::SensingChain,
            50.0,
            100,
            area(),
            1800.0,
            5.0,
            5.0,
            &mut rng,
        )
        .unwrap();
        for t in &tasks {
            assert_eq!(t.locations.len(), 3);
            for w in t.locations.windows(2) {
                let d = distance_m(w[0], w[1]);
                assert!((d - 500.0).abs() < 1.0, "spacing {d}");
            }
            assert!(t.locations.iter().all(|p| area().contains(*p)));
        }
    }

    #[test]
    fn task_deadlines_offset_release_and_money_stored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tasks = gen_tasks(
            TaskKind::Parcel,
            50.0,
            200,
            area(),
            1800.0,
            5.0,
            5.0,
            &mut rng,
        )
        .unwrap();
        for t in &tasks {
            assert_eq!(t.deadline - t.release_time, 1800.0);
            assert_eq!(t.reward, 5.0);
            assert_eq!(t.penalty, 5.0);
            assert_eq!(t.locations.len(), 2);
        }
    }

    #[test]
    fn release_rate_within_ten_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tasks = gen_tasks(
            TaskKind::Parcel,
            50.0,
            600,
            area(),
            1800.0,
            5.0,
            5.0,
            &mut rng,
        )
        .unwrap();
        let span_h = tasks.last().unwrap().release_time / 3600.0;
        let rate = 600.0 / span_h;
        assert!((rate - 50.0).abs() / 50.0 < 0.10, "empirical rate {rate}");
    }

    #[test]
    fn chain_rejected_in_tiny_area() {
        let tiny = Area::new(Location::new(40.4169, -3.7035), 400.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = gen_tasks(
            TaskKind::SensingChain,
            50.0,
            10,
            tiny,
            1800.0,
            5.0,
            5.0,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, TaskGenError::AreaTooSmall { .. }));
    }

    #[test]
    fn tasks_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let tasks = gen_tasks(
            TaskKind::SensingChain,
            50.0,
            50,
            area(),
            1800.0,
            5.0,
            5.0,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.json");
        save_tasks(&path, &tasks).unwrap();
        assert_eq!(load_tasks(&path).unwrap(), tasks);
    }
}
