//! Motorcycle dynamics in curvilinear road coordinates.
//!
//! The bike is a free-rolling disc that yaws and rolls but does not slip
//! laterally; longitudinal and lateral motion are decoupled and the inputs
//! are the longitudinal jerk and the yaw jerk. Time-domain dynamics are
//! reparameterized by arc length (`d/ds = (1/s_dot) d/dt`) and discretized
//! with forward Euler for the trajectory optimizer.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::road::RoadSample;

/// Smallest progress rate `s_dot` [m/s] for which the space-domain model is evaluated.
pub const MIN_PROGRESS_RATE: f64 = 0.1;

pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 2;

pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;
pub type StateVector = SVector<f64, STATE_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("singular road geometry: 1 - n*kappa = {0}")]
    SingularGeometry(f64),
    #[error("progress rate {0} m/s below the model's minimum")]
    SingularProgress(f64),
    #[error("invalid bike parameters: {0}")]
    InvalidParams(&'static str),
}

/// Physical parameters of bike and rider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BikeParams {
    /// Gravity [m/s^2].
    pub g: f64,
    /// Center-of-gravity height [m].
    pub h: f64,
    /// Tire cross-section radius [m].
    pub r: f64,
    /// Roll inertia radius [m].
    pub rho_x: f64,
    /// Wheel radius [m].
    pub wheel_radius: f64,
    /// Total mass, bike and rider [kg].
    pub mass: f64,
    /// Wheel inertia [kg m^2].
    pub wheel_inertia: f64,
    /// Rider height above the contact line used by the lane constraint [m].
    pub rider_height: f64,
    /// Camera mount height [m].
    pub camera_height: f64,
    /// Maximum longitudinal acceleration [m/s^2].
    pub ax_max: f64,
    /// Maximum lateral acceleration [m/s^2].
    pub ay_max: f64,
}

impl Default for BikeParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            h: 0.6,
            r: 0.1,
            rho_x: 0.3,
            wheel_radius: 0.3,
            mass: 280.0,
            wheel_inertia: 0.7,
            rider_height: 1.0,
            camera_height: 1.2,
            ax_max: 4.0,
            ay_max: 7.0,
        }
    }
}

impl BikeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.g,
            self.h,
            self.r,
            self.rho_x,
            self.wheel_radius,
            self.mass,
            self.wheel_inertia,
            self.rider_height,
            self.camera_height,
            self.ax_max,
            self.ay_max,
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(ModelError::InvalidParams("all parameters must be positive"));
        }
        if self.ax_max > self.ay_max {
            return Err(ModelError::InvalidParams("ax_max must not exceed ay_max"));
        }
        Ok(())
    }
}

/// Space-domain state: the time-domain state without arc length.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateSpace {
    /// Lateral offset from the lane divider [m].
    pub n: f64,
    /// Heading relative to the road [rad].
    pub alpha: f64,
    /// Roll angle [rad], positive leaning left.
    pub phi: f64,
    /// Longitudinal speed [m/s].
    pub ux: f64,
    /// Yaw rate [rad/s].
    pub wpsi: f64,
    /// Roll rate [rad/s].
    pub wphi: f64,
    /// Longitudinal acceleration command [m/s^2].
    pub ax: f64,
    /// Yaw acceleration [rad/s^2].
    pub apsi: f64,
}

impl StateSpace {
    pub const N: usize = 0;
    pub const ALPHA: usize = 1;
    pub const PHI: usize = 2;
    pub const UX: usize = 3;
    pub const WPSI: usize = 4;
    pub const WPHI: usize = 5;
    pub const AX: usize = 6;
    pub const APSI: usize = 7;

    /// Upright, centered on the straight at speed `ux`.
    pub fn cruising(n: f64, ux: f64) -> Self {
        Self {
            n,
            ux,
            ..Self::default()
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.n, self.alpha, self.phi, self.ux, self.wpsi, self.wphi, self.ax, self.apsi,
        ]
    }

    pub fn from_array(v: [f64; STATE_DIM]) -> Self {
        Self {
            n: v[0],
            alpha: v[1],
            phi: v[2],
            ux: v[3],
            wpsi: v[4],
            wphi: v[5],
            ax: v[6],
            apsi: v[7],
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let mut a = [0.0; STATE_DIM];
        a.copy_from_slice(&v[..STATE_DIM]);
        Self::from_array(a)
    }
}

/// Full time-domain state including arc length.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateTime {
    pub s: f64,
    pub x: StateSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal jerk [m/s^3].
    pub jx: f64,
    /// Yaw jerk [rad/s^3].
    pub jpsi: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { jx: 0.0, jpsi: 0.0 };

    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.jx, self.jpsi]
    }
}

/// Time derivatives of a [`StateTime`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDerivatives {
    pub s: f64,
    pub x: [f64; STATE_DIM],
}

fn geometry_factor(n: f64, road: &RoadSample) -> Result<f64, ModelError> {
    let d = 1.0 - n * road.kappa;
    if d > 0.0 {
        Ok(d)
    } else {
        Err(ModelError::SingularGeometry(d))
    }
}

/// Progress rate along the road, `u cos(alpha) / (1 - n kappa)`.
pub fn progress_rate(x: &StateSpace, road: &RoadSample) -> Result<f64, ModelError> {
    Ok(x.ux * x.alpha.cos() / geometry_factor(x.n, road)?)
}

struct RollTerms {
    numerator: f64,
    denominator: f64,
}

fn roll_terms(x: &StateSpace, p: &BikeParams) -> RollTerms {
    let (sp, cp) = x.phi.sin_cos();
    let (w, u) = (x.wpsi, x.ux);
    let gyro = p.wheel_inertia / p.mass;
    // The squared yaw-rate term keeps the sin*cos product as written in the model.
    let numerator = p.h * (p.g * sp - w * u * cp + w * w * p.h * sp * x.phi.cos())
        + gyro * w * cp * (w * sp - u / p.wheel_radius)
        + p.r * (p.h * (x.wphi * x.wphi + w * w) * sp - w * u);
    let denominator = p.rho_x * p.rho_x + p.h * p.h + p.r * p.h * cp;
    RollTerms {
        numerator,
        denominator,
    }
}

/// Time derivatives of the nine-state model, rates of the eight space states in
/// [`StateSpace`] order.
fn state_rates(x: &StateSpace, u: &ControlInput, road: &RoadSample, p: &BikeParams, s_dot: f64) -> [f64; STATE_DIM] {
    let roll = roll_terms(x, p);
    [
        x.ux * x.alpha.sin(),
        x.wpsi - road.kappa * s_dot,
        x.wphi,
        x.ax + p.g * road.sigma * x.alpha.cos(),
        x.apsi,
        roll.numerator / roll.denominator,
        u.jx,
        u.jpsi,
    ]
}

pub fn time_dynamics(
    x: &StateTime,
    u: &ControlInput,
    road: &RoadSample,
    p: &BikeParams,
) -> Result<TimeDerivatives, ModelError> {
    let s_dot = progress_rate(&x.x, road)?;
    Ok(TimeDerivatives {
        s: s_dot,
        x: state_rates(&x.x, u, road, p, s_dot),
    })
}

fn checked_progress(x: &StateSpace, road: &RoadSample) -> Result<f64, ModelError> {
    let s_dot = progress_rate(x, road)?;
    if s_dot > MIN_PROGRESS_RATE {
        Ok(s_dot)
    } else {
        Err(ModelError::SingularProgress(s_dot))
    }
}

/// Arc-length derivatives `dx/ds`.
pub fn space_dynamics(
    x: &StateSpace,
    u: &ControlInput,
    road: &RoadSample,
    p: &BikeParams,
) -> Result<[f64; STATE_DIM], ModelError> {
    let s_dot = checked_progress(x, road)?;
    let mut f = state_rates(x, u, road, p, s_dot);
    for v in &mut f {
        *v /= s_dot;
    }
    Ok(f)
}

/// One forward-Euler step of length `ds` in arc length.
pub fn euler_step(
    x: &StateSpace,
    u: &ControlInput,
    ds: f64,
    road: &RoadSample,
    p: &BikeParams,
) -> Result<StateSpace, ModelError> {
    let f = space_dynamics(x, u, road, p)?;
    let mut next = x.to_array();
    for (v, d) in next.iter_mut().zip(f) {
        *v += ds * d;
    }
    Ok(StateSpace::from_array(next))
}

/// Analytic Jacobians of [`space_dynamics`] with respect to state and input.
pub fn jacobians(
    x: &StateSpace,
    u: &ControlInput,
    road: &RoadSample,
    p: &BikeParams,
) -> Result<(StateMatrix, InputMatrix), ModelError> {
    let s_dot = checked_progress(x, road)?;
    let rates = state_rates(x, u, road, p, s_dot);
    let kappa = road.kappa;
    let (sa, ca) = x.alpha.sin_cos();
    let (sp, cp) = x.phi.sin_cos();
    let (w, ux) = (x.wpsi, x.ux);

    // q = 1/s_dot = (1 - n kappa) / (u cos alpha)
    let q = 1.0 / s_dot;
    let mut dq = [0.0; STATE_DIM];
    dq[StateSpace::N] = -kappa / (ux * ca);
    dq[StateSpace::ALPHA] = q * sa / ca;
    dq[StateSpace::UX] = -q / ux;

    // dF/dx of the time-domain rates; the alpha row is handled separately since
    // it contains s_dot itself.
    let mut df = StateMatrix::zeros();
    df[(0, StateSpace::ALPHA)] = ux * ca;
    df[(0, StateSpace::UX)] = sa;
    df[(2, StateSpace::WPHI)] = 1.0;
    df[(3, StateSpace::ALPHA)] = -p.g * road.sigma * sa;
    df[(3, StateSpace::AX)] = 1.0;
    df[(4, StateSpace::APSI)] = 1.0;

    let roll = roll_terms(x, p);
    let gyro = p.wheel_inertia / p.mass;
    let den = roll.denominator;
    let d_num_phi = p.h * (p.g * cp + w * ux * sp + w * w * p.h * (cp * cp - sp * sp))
        + gyro * w * (-sp * (w * sp - ux / p.wheel_radius) + cp * w * cp)
        + p.r * p.h * (x.wphi * x.wphi + w * w) * cp;
    let d_den_phi = -p.r * p.h * sp;
    df[(5, StateSpace::PHI)] = (d_num_phi * den - roll.numerator * d_den_phi) / (den * den);
    df[(5, StateSpace::UX)] = (-p.h * w * cp - gyro * w * cp / p.wheel_radius - p.r * w) / den;
    df[(5, StateSpace::WPSI)] = (p.h * (-ux * cp + 2.0 * w * p.h * sp * cp)
        + gyro * cp * (2.0 * w * sp - ux / p.wheel_radius)
        + p.r * (2.0 * p.h * w * sp - ux))
        / den;
    df[(5, StateSpace::WPHI)] = 2.0 * p.r * p.h * x.wphi * sp / den;

    let mut fx = StateMatrix::zeros();
    for i in 0..STATE_DIM {
        if i == 1 {
            continue;
        }
        for j in 0..STATE_DIM {
            fx[(i, j)] = q * df[(i, j)] + rates[i] * dq[j];
        }
    }
    // d(alpha)/ds = q w_psi - kappa
    for j in 0..STATE_DIM {
        fx[(1, j)] = w * dq[j];
    }
    fx[(1, StateSpace::WPSI)] += q;

    let mut fu = InputMatrix::zeros();
    fu[(StateSpace::AX, 0)] = q;
    fu[(StateSpace::APSI, 1)] = q;
    Ok((fx, fu))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> RoadSample {
        RoadSample {
            kappa: 0.0,
            sigma: 0.0,
            width: 3.5,
            u_limit: 30.0,
        }
    }

    #[test]
    fn coasting_equilibrium() {
        let x = StateTime {
            s: 0.0,
            x: StateSpace::cruising(0.0, 20.0),
        };
        let d = time_dynamics(&x, &ControlInput::ZERO, &flat(), &BikeParams::default()).unwrap();
        assert_eq!(d.s, 20.0);
        assert!(d.x.iter().all(|v| *v == 0.0), "{:?}", d.x);
    }

    #[test]
    fn slope_accelerates() {
        let x = StateTime {
            s: 0.0,
            x: StateSpace::cruising(0.0, 20.0),
        };
        let road = RoadSample { sigma: 0.1, ..flat() };
        let d = time_dynamics(&x, &ControlInput::ZERO, &road, &BikeParams::default()).unwrap();
        assert!((d.x[StateSpace::UX] - 0.981).abs() < 1e-12);
    }

    #[test]
    fn capsize_term() {
        let p = BikeParams::default();
        let x = StateTime {
            s: 0.0,
            x: StateSpace {
                phi: 0.1,
                ux: 0.0,
                ..Default::default()
            },
        };
        let d = time_dynamics(&x, &ControlInput::ZERO, &flat(), &p).unwrap();
        // 0.6 * 9.81 * sin(0.1) / (0.09 + 0.36 + 0.06 cos(0.1))
        let expected = 1.152_872_674_634_329_2;
        assert!((d.x[StateSpace::WPHI] - expected).abs() < 1e-9, "{}", d.x[5]);
        assert!(d.x[StateSpace::WPHI] > 0.0);
    }

    #[test]
    fn singular_geometry() {
        let x = StateTime {
            s: 0.0,
            x: StateSpace::cruising(2.0, 10.0),
        };
        let road = RoadSample { kappa: 0.5, ..flat() };
        assert!(matches!(
            time_dynamics(&x, &ControlInput::ZERO, &road, &BikeParams::default()),
            Err(ModelError::SingularGeometry(_))
        ));
    }

    #[test]
    fn space_rates_divide_by_progress() {
        let p = BikeParams::default();
        let x = StateSpace {
            ax: 2.0,
            ..StateSpace::cruising(0.0, 10.0)
        };
        let f = space_dynamics(&x, &ControlInput::ZERO, &flat(), &p).unwrap();
        assert!((f[StateSpace::UX] - 0.2).abs() < 1e-15);
        assert_eq!(f[StateSpace::N], 0.0);

        let x = StateSpace {
            wpsi: 0.3,
            ..StateSpace::cruising(1.0, 10.0)
        };
        let road = RoadSample { kappa: 0.02, ..flat() };
        let f = space_dynamics(&x, &ControlInput::ZERO, &road, &p).unwrap();
        assert!((f[StateSpace::ALPHA] - (0.3 * 0.098 - 0.02)).abs() < 1e-15);
    }

    #[test]
    fn slow_progress_rejected() {
        let x = StateSpace::cruising(0.0, 0.05);
        assert!(matches!(
            space_dynamics(&x, &ControlInput::ZERO, &flat(), &BikeParams::default()),
            Err(ModelError::SingularProgress(_))
        ));
    }

    #[test]
    fn euler_steps() {
        let p = BikeParams::default();
        let x = StateSpace {
            ax: 2.0,
            ..StateSpace::cruising(0.0, 10.0)
        };
        let u = ControlInput { jx: 1.0, jpsi: -2.0 };
        assert_eq!(euler_step(&x, &u, 0.0, &flat(), &p).unwrap(), x);
        let x1 = euler_step(&x, &ControlInput::ZERO, 1.0, &flat(), &p).unwrap();
        assert!((x1.ux - 10.2).abs() < 1e-14);
        let coast = StateSpace::cruising(1.75, 20.0);
        assert_eq!(euler_step(&coast, &ControlInput::ZERO, 1.0, &flat(), &p).unwrap(), coast);
    }

    #[test]
    fn input_jacobian_structure() {
        let p = BikeParams::default();
        let x = StateSpace {
            phi: 0.3,
            wpsi: 0.2,
            ..StateSpace::cruising(1.0, 12.0)
        };
        let road = RoadSample { kappa: 0.01, ..flat() };
        let (_, fu) = jacobians(&x, &ControlInput::ZERO, &road, &p).unwrap();
        let s_dot = progress_rate(&x, &road).unwrap();
        assert_eq!(fu[(StateSpace::AX, 0)], 1.0 / s_dot);
        assert_eq!(fu[(StateSpace::APSI, 1)], 1.0 / s_dot);
        for i in 0..STATE_DIM {
            for j in 0..INPUT_DIM {
                if (i, j) != (StateSpace::AX, 0) && (i, j) != (StateSpace::APSI, 1) {
                    assert_eq!(fu[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(BikeParams::default().validate().is_ok());
        let p = BikeParams {
            ax_max: 8.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = BikeParams {
            mass: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
