//! Initial state for the planner from perception, map matching and speed.
//!
//! The lane-position network sees the lane from a camera mounted `h_c` above
//! the contact line, so a leaning bike shifts the apparent position by
//! `h_c sin(phi)`; that offset is removed before the estimate is used.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::model::{BikeParams, StateSpace, MIN_PROGRESS_RATE};
use crate::ocp::Bounds;
use crate::road::{RoadError, RoadProfile};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("speed {0} m/s too low for the planner")]
    SpeedTooLow(f64),
    #[error("roll estimate {0} rad outside [-pi/2, pi/2]")]
    RollOutOfRange(f64),
    #[error("previous sample is not earlier (dt = {0} s)")]
    NonIncreasingTime(f64),
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error("perception file {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("perception file {path} is empty")]
    Empty { path: String },
}

/// One perception estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionSample {
    #[serde(rename = "t")]
    pub timestamp: f64,
    /// Lane position from the divider [m], as seen by the camera.
    pub n_lnet: f64,
    /// Roll angle [rad].
    pub phi_rnet: f64,
}

/// Everything known about the bike at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionInput {
    pub perception: PerceptionSample,
    /// Speed over ground [m/s].
    pub speed: f64,
    /// Matched arc length on the road profile [m].
    pub s: f64,
    /// Heading of the matched track [rad], when available.
    pub heading: Option<f64>,
}

/// Adjustments applied to, or violations noticed in, the fused state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    /// Lane position raised to 0.
    LaneLow,
    /// Lane position lowered to the lane width.
    LaneHigh,
    /// Speed above the limit; kept as measured.
    OverSpeed,
    /// Roll beyond the planner's roll bound; kept as measured.
    RollBeyondBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub s0: f64,
    pub x0: StateSpace,
    pub clamps: Vec<Clamp>,
}

/// Lane position of the contact point from the camera's estimate.
pub fn roll_correct_lane(n_lnet: f64, phi: f64, h_c: f64) -> f64 {
    n_lnet - h_c * phi.sin()
}

fn lane_position(perc: &PerceptionSample, width: f64, p: &BikeParams, clamps: &mut Vec<Clamp>) -> f64 {
    let n = roll_correct_lane(perc.n_lnet, perc.phi_rnet, p.camera_height);
    if n < 0.0 {
        clamps.push(Clamp::LaneLow);
        0.0
    } else if n > width {
        clamps.push(Clamp::LaneHigh);
        width
    } else {
        n
    }
}

/// Assembles the planner's initial state at `current.s`.
///
/// Rates are finite-differenced against `prev` when given; otherwise the bike
/// is assumed to be in steady cornering on the current curvature.
pub fn build_initial_state(
    current: &FusionInput,
    prev: Option<&FusionInput>,
    profile: &RoadProfile,
    p: &BikeParams,
) -> Result<InitialState, FusionError> {
    if !(current.speed > MIN_PROGRESS_RATE) {
        return Err(FusionError::SpeedTooLow(current.speed));
    }
    let phi = current.perception.phi_rnet;
    if !(phi.abs() <= std::f64::consts::FRAC_PI_2) {
        return Err(FusionError::RollOutOfRange(phi));
    }
    let road = profile.query(current.s)?;
    let mut clamps = Vec::new();
    let n = lane_position(&current.perception, road.width, p, &mut clamps);
    if current.speed > road.u_limit {
        clamps.push(Clamp::OverSpeed);
    }
    if phi.abs() > Bounds::default().phi {
        clamps.push(Clamp::RollBeyondBound);
    }

    let ux = current.speed;
    let mut x0 = StateSpace {
        n,
        phi,
        ux,
        wpsi: road.kappa * ux / (1.0 - n * road.kappa),
        ..Default::default()
    };
    if let Some(prev) = prev {
        let dt = current.perception.timestamp - prev.perception.timestamp;
        if !(dt > 0.0) {
            return Err(FusionError::NonIncreasingTime(dt));
        }
        let prev_road = profile.query(prev.s.clamp(profile.start(), profile.end()))?;
        let prev_n = lane_position(&prev.perception, prev_road.width, p, &mut Vec::new());
        if let (Some(h1), Some(h0)) = (current.heading, prev.heading) {
            x0.wpsi = wrap_angle(h1 - h0) / dt;
        }
        x0.wphi = (phi - prev.perception.phi_rnet) / dt;
        x0.ax = (current.speed - prev.speed) / dt;
        x0.alpha = ((n - prev_n) / (dt * ux)).clamp(-1.0, 1.0).asin();
    }
    for c in &clamps {
        warn!("initial state at s={:.1}: {c:?}", current.s);
    }
    Ok(InitialState {
        s0: current.s,
        x0,
        clamps,
    })
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    (a + PI).rem_euclid(2.0 * PI) - PI
}

pub fn load_perception(path: impl AsRef<Path>) -> Result<Vec<PerceptionSample>, FusionError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| FusionError::Csv {
            path: name.clone(),
            source,
        })?;
    let samples = reader
        .deserialize()
        .collect::<Result<Vec<PerceptionSample>, _>>()
        .map_err(|source| FusionError::Csv {
            path: name.clone(),
            source,
        })?;
    if samples.is_empty() {
        return Err(FusionError::Empty { path: name });
    }
    Ok(samples)
}
