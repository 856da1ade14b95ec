//! Geometry, grid decomposition of the operating area, and the Markov-chain
//! traffic model that modulates agent speeds.
//!
//! The operating area is a disc around a city-center anchor. A rectangular
//! grid of square cells is laid over its bounding box; each cell carries one
//! of three traffic states which evolve by a time-discrete Markov chain. The
//! same grid doubles as the vicinity structure for collaborative transfers:
//! two workers are "in vicinity" when they occupy the same cell.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters, used by the haversine distance.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude (and of longitude at the equator).
pub const M_PER_DEG_LAT: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("transition matrix row {row} sums to {sum}, expected 1")]
    NonStochasticMatrix { row: usize, sum: f64 },
    #[error("bounding box is degenerate (zero width or height)")]
    DegenerateBbox,
    #[error("location ({lat}, {lon}) is outside the operating area")]
    OutOfArea { lat: f64, lon: f64 },
}

/// A WGS-84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

impl Location {
    pub fn new(lat: f64, lon: f64) -> Self {
        debug_assert!((-90.0..=90.0).contains(&lat), "latitude out of range");
        debug_assert!((-180.0..=180.0).contains(&lon), "longitude out of range");
        Self { lat, lon }
    }

    /// Offset by the given meters east and north, using a local
    /// equirectangular approximation (fine at city scale).
    pub fn offset_m(self, east_m: f64, north_m: f64) -> Location {
        let lat = self.lat + north_m / M_PER_DEG_LAT;
        let lon = self.lon + east_m / (M_PER_DEG_LAT * self.lat.to_radians().cos());
        Location { lat, lon }
    }

    pub fn midpoint(self, other: Location) -> Location {
        Location {
            lat: (self.lat + other.lat) / 2.0,
            lon: (self.lon + other.lon) / 2.0,
        }
    }
}

/// Great-circle (haversine) distance in meters.
pub fn distance_m(a: Location, b: Location) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dla = (b.lat - a.lat).to_radians();
    let dlo = (b.lon - a.lon).to_radians();
    let h = (dla / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlo / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

/// Total length of a polyline in meters.
pub fn polyline_length_m(points: &[Location]) -> f64 {
    points.windows(2).map(|w| distance_m(w[0], w[1])).sum()
}

/// Geographic bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn union(self, other: BoundingBox) -> BoundingBox {
        BoundingBox {
            min_lat: self.min_lat.min(other.min_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lat: self.max_lat.max(other.max_lat),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }

    pub fn expand_to(&mut self, p: Location) {
        self.min_lat = self.min_lat.min(p.lat);
        self.min_lon = self.min_lon.min(p.lon);
        self.max_lat = self.max_lat.max(p.lat);
        self.max_lon = self.max_lon.max(p.lon);
    }
}

/// Circular operating area: tasks and synthetic workers live inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub center: Location,
    pub radius_m: f64,
}

impl Area {
    pub fn new(center: Location, radius_m: f64) -> Self {
        Self { center, radius_m }
    }

    pub fn contains(&self, p: Location) -> bool {
        distance_m(self.center, p) <= self.radius_m + 1e-6
    }

    /// A point uniformly distributed over the disc (two RNG draws).
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Location {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let r = self.radius_m * rng.random::<f64>().sqrt();
        self.center.offset_m(r * theta.cos(), r * theta.sin())
    }

    pub fn bbox(&self) -> BoundingBox {
        let sw = self.center.offset_m(-self.radius_m, -self.radius_m);
        let ne = self.center.offset_m(self.radius_m, self.radius_m);
        BoundingBox {
            min_lat: sw.lat,
            min_lon: sw.lon,
            max_lat: ne.lat,
            max_lon: ne.lon,
        }
    }
}

/// Per-cell traffic state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrafficState {
    Normal,
    Slow,
    Jam,
}

impl TrafficState {
    pub const ALL: [TrafficState; 3] = [TrafficState::Normal, TrafficState::Slow, TrafficState::Jam];

    pub fn index(self) -> usize {
        match self {
            TrafficState::Normal => 0,
            TrafficState::Slow => 1,
            TrafficState::Jam => 2,
        }
    }
}

/// Row-stochastic 3x3 transition matrix over (Normal, Slow, Jam).
pub type TransitionMatrix = [[f64; 3]; 3];

/// Default transition matrix: jams are rare but persistent.
pub const DEFAULT_TRANSITION: TransitionMatrix = [
    [0.90, 0.08, 0.02],
    [0.20, 0.70, 0.10],
    [0.05, 0.25, 0.70],
];

/// Index of a grid cell; row 0 is the southern edge, col 0 the western edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

/// Remaining-route length decomposed by the traffic state of the cell each
/// segment midpoint falls in.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RouteProfile {
    pub dist_normal_m: f64,
    pub dist_slow_m: f64,
    pub dist_jam_m: f64,
}

impl RouteProfile {
    pub fn total_m(&self) -> f64 {
        self.dist_normal_m + self.dist_slow_m + self.dist_jam_m
    }
}

/// Equirectangular projection anchored at a reference point: x meters east,
/// y meters north of the origin. Engine-internal fast path; city-scale
/// error versus haversine is below 0.1%.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    origin: Location,
    m_per_deg_lon: f64,
}

impl Projection {
    pub fn new(origin: Location) -> Self {
        Projection {
            origin,
            m_per_deg_lon: M_PER_DEG_LAT * origin.lat.to_radians().cos(),
        }
    }

    pub fn to_xy(&self, loc: Location) -> (f64, f64) {
        (
            (loc.lon - self.origin.lon) * self.m_per_deg_lon,
            (loc.lat - self.origin.lat) * M_PER_DEG_LAT,
        )
    }

    pub fn to_loc(&self, x: f64, y: f64) -> Location {
        Location {
            lat: self.origin.lat + y / M_PER_DEG_LAT,
            lon: self.origin.lon + x / self.m_per_deg_lon,
        }
    }
}

/// Euclidean distance between projected points.
pub fn dist_xy(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Cell-indexed traffic model over a bounding box.
///
/// Cells are square in projected meters (equirectangular at the bbox's mid
/// latitude). Cell intervals are half-open toward the lower index: a point
/// exactly on a shared edge belongs to the cell with the lower index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGrid {
    bbox: BoundingBox,
    cell_size_m: f64,
    rows: usize,
    cols: usize,
    cells: Vec<TrafficState>,
    transition: TransitionMatrix,
    update_period_s: f64,
    m_per_deg_lon: f64,
}

/// Tolerance in meters when deciding whether a point lies inside the bbox.
const EDGE_EPS_M: f64 = 1e-6;

pub fn make_grid(
    bbox: BoundingBox,
    cell_size_m: f64,
    transition: TransitionMatrix,
    initial_state: TrafficState,
    update_period_s: f64,
) -> Result<TrafficGrid, GeoError> {
    for (row, r) in transition.iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || r.iter().any(|&p| p < 0.0) {
            return Err(GeoError::NonStochasticMatrix { row, sum });
        }
    }
    if bbox.max_lat <= bbox.min_lat || bbox.max_lon <= bbox.min_lon || cell_size_m <= 0.0 {
        return Err(GeoError::DegenerateBbox);
    }
    let mid_lat = (bbox.min_lat + bbox.max_lat) / 2.0;
    let m_per_deg_lon = M_PER_DEG_LAT * mid_lat.to_radians().cos();
    let height_m = (bbox.max_lat - bbox.min_lat) * M_PER_DEG_LAT;
    let width_m = (bbox.max_lon - bbox.min_lon) * m_per_deg_lon;
    let rows = (((height_m - EDGE_EPS_M) / cell_size_m).ceil() as usize).max(1);
    let cols = (((width_m - EDGE_EPS_M) / cell_size_m).ceil() as usize).max(1);
    Ok(TrafficGrid {
        bbox,
        cell_size_m,
        rows,
        cols,
        cells: vec![initial_state; rows * cols],
        transition,
        update_period_s,
        m_per_deg_lon,
    })
}

impl TrafficGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn update_period_s(&self) -> f64 {
        self.update_period_s
    }

    /// Index of the cell containing `loc`. Boundary points belong to the
    /// cell with the lower index.
    pub fn cell_of(&self, loc: Location) -> Result<CellIndex, GeoError> {
        let y = (loc.lat - self.bbox.min_lat) * M_PER_DEG_LAT;
        let x = (loc.lon - self.bbox.min_lon) * self.m_per_deg_lon;
        let height = (self.bbox.max_lat - self.bbox.min_lat) * M_PER_DEG_LAT;
        let width = (self.bbox.max_lon - self.bbox.min_lon) * self.m_per_deg_lon;
        if y < -EDGE_EPS_M || y > height + EDGE_EPS_M || x < -EDGE_EPS_M || x > width + EDGE_EPS_M {
            return Err(GeoError::OutOfArea {
                lat: loc.lat,
                lon: loc.lon,
            });
        }
        let row = ((y / self.cell_size_m).ceil() as i64 - 1).clamp(0, self.rows as i64 - 1);
        let col = ((x / self.cell_size_m).ceil() as i64 - 1).clamp(0, self.cols as i64 - 1);
        Ok(CellIndex {
            row: row as usize,
            col: col as usize,
        })
    }

    pub fn state_at(&self, idx: CellIndex) -> TrafficState {
        self.cells[idx.row * self.cols + idx.col]
    }

    /// Traffic state at a location, falling back to Normal when the location
    /// drifted outside the bbox (degenerate states are survived, not fatal).
    pub fn state_at_loc(&self, loc: Location) -> TrafficState {
        match self.cell_of(loc) {
            Ok(idx) => self.state_at(idx),
            Err(_) => TrafficState::Normal,
        }
    }

    pub fn set_state(&mut self, idx: CellIndex, state: TrafficState) {
        self.cells[idx.row * self.cols + idx.col] = state;
    }

    /// Projection anchored at the grid's south-west corner, sharing the
    /// grid's longitude scale so cell columns are exact 500 m strips in x.
    pub fn projection(&self) -> Projection {
        Projection {
            origin: Location {
                lat: self.bbox.min_lat,
                lon: self.bbox.min_lon,
            },
            m_per_deg_lon: self.m_per_deg_lon,
        }
    }

    /// Cell for projected coordinates (floor semantics, clamped to the
    /// grid). Engine fast path; the public contract lives in [`cell_of`].
    ///
    /// [`cell_of`]: TrafficGrid::cell_of
    pub fn cell_from_xy(&self, x: f64, y: f64) -> CellIndex {
        let row = ((y / self.cell_size_m).floor() as i64).clamp(0, self.rows as i64 - 1);
        let col = ((x / self.cell_size_m).floor() as i64).clamp(0, self.cols as i64 - 1);
        CellIndex {
            row: row as usize,
            col: col as usize,
        }
    }

    pub fn state_from_xy(&self, x: f64, y: f64) -> TrafficState {
        self.state_at(self.cell_from_xy(x, y))
    }

    /// Geographic center of a cell.
    pub fn cell_center(&self, idx: CellIndex) -> Location {
        let lat = self.bbox.min_lat + (idx.row as f64 + 0.5) * self.cell_size_m / M_PER_DEG_LAT;
        let lon = self.bbox.min_lon + (idx.col as f64 + 0.5) * self.cell_size_m / self.m_per_deg_lon;
        Location { lat, lon }
    }

    /// Advance every cell by one Markov step. Cells are visited in row-major
    /// order with exactly one uniform draw each, so the update is
    /// reproducible given the RNG state.
    pub fn step_traffic<R: Rng>(&mut self, rng: &mut R) {
        for cell in self.cells.iter_mut() {
            let row = &self.transition[cell.index()];
            let u: f64 = rng.random();
            *cell = if u < row[0] {
                TrafficState::Normal
            } else if u < row[0] + row[1] {
                TrafficState::Slow
            } else {
                TrafficState::Jam
            };
        }
    }

    /// Decompose the length of `polyline` by the current state of the cell
    /// each segment's midpoint falls in.
    pub fn route_traffic_profile(&self, polyline: &[Location]) -> Result<RouteProfile, GeoError> {
        let mut profile = RouteProfile::default();
        for p in polyline {
            self.cell_of(*p)?;
        }
        for w in polyline.windows(2) {
            let len = distance_m(w[0], w[1]);
            let state = self.state_at(self.cell_of(w[0].midpoint(w[1]))?);
            match state {
                TrafficState::Normal => profile.dist_normal_m += len,
                TrafficState::Slow => profile.dist_slow_m += len,
                TrafficState::Jam => profile.dist_jam_m += len,
            }
        }
        Ok(profile)
    }
}
