//! Agent-based simulator for mobile crowdsourcing with embedded online
//! learning and pluggable task-transfer coordination.
//!
//! Workers (pedestrians, cyclists, motorcyclists) move through a city area
//! whose traffic evolves by a Markov chain. Crowdshipping and crowdsensing
//! tasks with deadlines are assigned to them; stream learners score, on
//! every monitoring snapshot, whether the current assignee will miss the
//! deadline. Coordination strategies act on those scores: collaborative
//! transfers hand a parcel to a better-positioned neighbor, and a Vickrey
//! auction lets workers trade sensing tasks for money.
//!
//! The crate is organized bottom-up:
//!
//! * [`geoenv`] - coordinates, the cell grid, and the traffic model
//! * [`traces`] - mobility traces and task descriptions, plus synthesis
//! * [`agents`] - worker state and per-tick movement
//! * [`learn`] - stream learners and prequential evaluation
//! * [`econ`] - task bundle costs, revenues, and expected utility
//! * [`coord`] - transfer and auction strategies
//! * [`sim`] - the tick engine and run-level results
//! * [`report`] - aggregation of runs into tables and SVG charts
//! * [`cli`] - config file handling and the command entry points
//!
//! Every run is reproducible: all randomness flows from one seed through
//! per-subsystem streams, and result serialization is byte-stable.

pub mod agents;
pub mod coord;
pub mod econ;
pub mod geoenv;
pub mod learn;
pub mod sim;
pub mod traces;

pub use agents::{SpeedModel, TransportMode, WorkerAgent};
pub use coord::{Auction, Strategy, TransferEvent, TransferMechanism};
pub use econ::{CostParams, Outcome, TaskView};
pub use geoenv::{Area, BoundingBox, CellIndex, GeoError, Location, TrafficGrid, TrafficState};
pub use learn::{FeatureVector, Label, LearnerConfig, StreamModel};
pub use sim::{run, summarize, Report, RunResult, Scenario, ScenarioKind, SimError};
pub use traces::{ModeMix, TaskKind, TaskSpec, Trace};
