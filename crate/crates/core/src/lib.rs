//! Curve-speed warning for motorcycles.
//!
//! The crate plans a minimum-time, rider-executable trajectory over the
//! upcoming road and grades the maneuver by the most negative planned
//! longitudinal jerk. Supporting pieces ingest road geometry, snap GPS traces
//! onto a road graph, and fuse perception estimates into the initial state.

pub mod fusion;
pub mod geo;
pub mod matching;
pub mod model;
pub mod ocp;
pub mod risk;
pub mod road;
pub mod scenario;

pub use fusion::{FusionInput, InitialState, PerceptionSample};
pub use matching::{GpsTrace, MatchParams, MatchedPath, RoadGraph};
pub use model::{BikeParams, ControlInput, ModelError, StateSpace, StateTime};
pub use ocp::{OcpConfig, OcpError, OcpSolution, SolveStatus, Trajectory};
pub use risk::{RiskLevel, RiskReport, RiskThresholds};
pub use road::{GeoPoint, GeoPolyline, RoadError, RoadProfile, RoadSample};
