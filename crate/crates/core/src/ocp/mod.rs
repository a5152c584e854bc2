//! Minimum-time trajectory planning over the upcoming road.
//!
//! The space-domain model is transcribed by direct multiple shooting on a
//! uniform arc-length grid `s_k = s0 + k d_s`, `k = 0..=N+1`. States
//! `x_1..x_{N+1}` and inputs `u_0..u_N` are decision variables; `x_0` is the
//! measured initial state. The program minimizes travel time plus
//! acceleration and jerk penalties subject to the Euler defects, the g-g
//! ellipse, the roll-dependent lane limits, the speed limit, box bounds and a
//! steady-cornering terminal condition.

pub mod banded;
pub mod ipm;

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{
    euler_step, jacobians, progress_rate, space_dynamics, BikeParams, ControlInput, ModelError, StateSpace, INPUT_DIM,
    MIN_PROGRESS_RATE, STATE_DIM,
};
use crate::road::{RoadError, RoadProfile, RoadSample};
use ipm::{BlockEval, EvalError, InteriorPoint, IpmOptions, IpmStatus, StagedNlp};

#[derive(Debug, thiserror::Error)]
pub enum OcpError {
    #[error("invalid OCP configuration: {0}")]
    InvalidConfig(String),
    #[error("horizon [{start}, {end}] m exceeds the road profile [{map_start}, {map_end}] m")]
    HorizonExceedsMap {
        start: f64,
        end: f64,
        map_start: f64,
        map_end: f64,
    },
    #[error("lane is empty at roll {phi} rad: [{lo}, {hi}]")]
    EmptyLane { phi: f64, lo: f64, hi: f64 },
    #[error("guess has {got} states and {got_inputs} inputs, expected {states} and {inputs}")]
    GuessShape {
        got: usize,
        got_inputs: usize,
        states: usize,
        inputs: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error("trajectory not evaluable: {0}")]
    Eval(#[from] EvalError),
}

/// Simple bounds on states and inputs (the speed limit comes from the road).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub phi: f64,
    pub alpha: f64,
    pub wpsi: f64,
    pub wphi: f64,
    pub apsi: f64,
    pub jx: f64,
    pub jpsi: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            phi: 1.05,
            alpha: 0.5,
            wpsi: 2.0,
            wphi: 3.0,
            apsi: 5.0,
            jx: 10.0,
            jpsi: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    /// Horizon steps `N`; the grid has `N + 2` states.
    pub steps: usize,
    /// Grid spacing [m].
    pub ds: f64,
    /// Arc length of `x_0` on the road profile [m].
    pub s0: f64,
    pub q_t: f64,
    pub q_a: f64,
    pub r_x: f64,
    pub r_psi: f64,
    pub feas_tol: f64,
    pub stat_tol: f64,
    pub max_iter: usize,
    pub include_slope: bool,
    pub include_roll_lane: bool,
    pub bounds: Bounds,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            ds: 1.0,
            s0: 0.0,
            q_t: 1.0,
            q_a: 0.1,
            r_x: 0.05,
            r_psi: 0.05,
            feas_tol: 1e-6,
            stat_tol: 1e-6,
            max_iter: 200,
            include_slope: true,
            include_roll_lane: true,
            bounds: Bounds::default(),
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), OcpError> {
        let bad = |m: &str| Err(OcpError::InvalidConfig(m.to_string()));
        if self.steps < 10 {
            return bad("steps must be at least 10");
        }
        if !(self.ds > 0.0) {
            return bad("ds must be positive");
        }
        if [self.q_t, self.q_a, self.r_x, self.r_psi].iter().any(|w| !(*w >= 0.0)) {
            return bad("cost weights must be nonnegative");
        }
        if !(self.feas_tol > 0.0 && self.stat_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !self.s0.is_finite() {
            return bad("s0 must be finite");
        }
        Ok(())
    }

    /// Arc length of grid point `k`.
    pub fn s_at(&self, k: usize) -> f64 {
        self.s0 + k as f64 * self.ds
    }

    /// Arc length covered by the grid, `(N + 1) d_s`.
    pub fn horizon_length(&self) -> f64 {
        (self.steps + 1) as f64 * self.ds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub time: f64,
    pub accel: f64,
    pub jerk: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.time + self.accel + self.jerk
    }
}

/// State and input trajectory on the OCP grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `N + 2` states, `x_0` first.
    pub states: Vec<StateSpace>,
    /// `N + 1` inputs.
    pub inputs: Vec<ControlInput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub s: Vec<f64>,
    pub states: Vec<StateSpace>,
    pub inputs: Vec<ControlInput>,
    pub objective: f64,
    pub cost_breakdown: CostBreakdown,
    pub kkt_residual: f64,
    pub feasibility_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Left-hand side of the g-g constraint at every state.
    pub gg_ratio: Vec<f64>,
    /// Admissible lateral interval at every state.
    pub lane: Vec<(f64, f64)>,
}

/// Combined acceleration measure; the g-g constraint is `gg_constraint <= 1`.
pub fn gg_constraint(x: &StateSpace, road: &RoadSample, p: &BikeParams) -> f64 {
    let long = (x.ax + p.g * road.sigma * x.alpha.cos()) / p.ax_max;
    let lat = x.ux * x.wpsi / p.ay_max;
    long * long + lat * lat
}

fn gg_gradient(x: &StateSpace, road: &RoadSample, p: &BikeParams) -> [f64; STATE_DIM] {
    let long = x.ax + p.g * road.sigma * x.alpha.cos();
    let ax2 = p.ax_max * p.ax_max;
    let ay2 = p.ay_max * p.ay_max;
    let mut g = [0.0; STATE_DIM];
    g[StateSpace::AX] = 2.0 * long / ax2;
    g[StateSpace::ALPHA] = -2.0 * long * p.g * road.sigma * x.alpha.sin() / ax2;
    g[StateSpace::UX] = 2.0 * x.ux * x.wpsi * x.wpsi / ay2;
    g[StateSpace::WPSI] = 2.0 * x.ux * x.ux * x.wpsi / ay2;
    g
}

/// Lateral interval `(n_lo, n_hi)` left free by a rider leaning at `phi`.
pub fn lane_bounds(phi: f64, road: &RoadSample, p: &BikeParams) -> Result<(f64, f64), OcpError> {
    let shift = phi * p.rider_height;
    let lo = (-shift).max(0.0);
    let hi = road.width.min(road.width - shift);
    if lo >= hi {
        return Err(OcpError::EmptyLane { phi, lo, hi });
    }
    Ok((lo, hi))
}

fn lane_interval(phi: f64, road: &RoadSample, p: &BikeParams, roll: bool) -> (f64, f64) {
    if roll {
        let shift = phi * p.rider_height;
        ((-shift).max(0.0), road.width.min(road.width - shift))
    } else {
        (0.0, road.width)
    }
}

/// Yaw rate that keeps a rider on the lane center in steady cornering.
fn steady_yaw_rate(ux: f64, road: &RoadSample) -> Result<f64, ModelError> {
    let d = 1.0 - 0.5 * road.width * road.kappa;
    if d <= 0.0 {
        return Err(ModelError::SingularGeometry(d));
    }
    Ok(road.kappa * ux / d)
}

pub const TERMINAL_DIM: usize = 6;

/// Residuals of the terminal condition: centered, aligned, upright-rate-free,
/// unaccelerated, and yawing at the steady cornering rate.
pub fn terminal_residual(x: &StateSpace, road: &RoadSample) -> Result<[f64; TERMINAL_DIM], ModelError> {
    Ok([
        x.n - 0.5 * road.width,
        x.alpha,
        x.wphi,
        x.ax,
        x.apsi,
        x.wpsi - steady_yaw_rate(x.ux, road)?,
    ])
}

fn terminal_jacobian(road: &RoadSample) -> Result<DMatrix<f64>, ModelError> {
    let d = 1.0 - 0.5 * road.width * road.kappa;
    if d <= 0.0 {
        return Err(ModelError::SingularGeometry(d));
    }
    let mut j = DMatrix::zeros(TERMINAL_DIM, STATE_DIM);
    j[(0, StateSpace::N)] = 1.0;
    j[(1, StateSpace::ALPHA)] = 1.0;
    j[(2, StateSpace::WPHI)] = 1.0;
    j[(3, StateSpace::AX)] = 1.0;
    j[(4, StateSpace::APSI)] = 1.0;
    j[(5, StateSpace::WPSI)] = 1.0;
    j[(5, StateSpace::UX)] = -road.kappa / d;
    Ok(j)
}

fn stage_time(x: &StateSpace, road: &RoadSample, ds: f64) -> Result<f64, ModelError> {
    let s_dot = progress_rate(x, road)?;
    if s_dot <= MIN_PROGRESS_RATE {
        return Err(ModelError::SingularProgress(s_dot));
    }
    Ok(ds / s_dot)
}

/// The three cost terms of a trajectory sampled on the OCP grid.
pub fn stage_costs(
    traj: &Trajectory,
    profile: &RoadProfile,
    config: &OcpConfig,
    p: &BikeParams,
) -> Result<CostBreakdown, OcpError> {
    let roads = grid_samples(profile, config)?;
    costs_on(traj, &roads, config, p)
}

fn costs_on(traj: &Trajectory, roads: &[RoadSample], config: &OcpConfig, p: &BikeParams) -> Result<CostBreakdown, OcpError> {
    check_shape(traj, config.steps)?;
    let mut c = CostBreakdown::default();
    for (k, x) in traj.states.iter().enumerate() {
        if k <= config.steps {
            c.time += config.q_t * stage_time(x, &roads[k], config.ds)?;
        }
        c.accel += config.q_a * gg_constraint(x, &roads[k], p);
    }
    c.jerk = traj
        .inputs
        .iter()
        .map(|u| config.r_x * u.jx * u.jx + config.r_psi * u.jpsi * u.jpsi)
        .sum();
    Ok(c)
}

fn check_shape(traj: &Trajectory, steps: usize) -> Result<(), OcpError> {
    if traj.states.len() != steps + 2 || traj.inputs.len() != steps + 1 {
        return Err(OcpError::GuessShape {
            got: traj.states.len(),
            got_inputs: traj.inputs.len(),
            states: steps + 2,
            inputs: steps + 1,
        });
    }
    Ok(())
}

/// Road samples at the `N + 2` grid points, slope removed when disabled.
fn grid_samples(profile: &RoadProfile, config: &OcpConfig) -> Result<Vec<RoadSample>, OcpError> {
    config.validate()?;
    let end = config.s_at(config.steps + 1);
    // allow for the rounding in s0 + k ds
    let slack = 1e-9 * end.abs().max(1.0);
    if config.s0 < profile.start() - slack || end > profile.end() + slack {
        return Err(OcpError::HorizonExceedsMap {
            start: config.s0,
            end,
            map_start: profile.start(),
            map_end: profile.end(),
        });
    }
    (0..config.steps + 2)
        .map(|k| {
            let s = config.s_at(k).clamp(profile.start(), profile.end());
            let mut sample = profile.query(s)?;
            if !config.include_slope {
                sample.sigma = 0.0;
            }
            Ok(sample)
        })
        .collect()
}

/// The transcribed nonlinear program.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    config: OcpConfig,
    params: BikeParams,
    x0: StateSpace,
    roads: Vec<RoadSample>,
    /// Offsets added to the first state's rows; see [`NlpProblem::data_relaxation`].
    first_relax: Vec<f64>,
}

/// Slack kept on the first-state rows fixed by the measured state.
const DATA_MARGIN: f64 = 1e-2;

/// Rows of `d(w) >= 0` for one block, with sparse gradients.
struct Rows {
    values: Vec<f64>,
    jac: DMatrix<f64>,
}

impl Rows {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            values: Vec::with_capacity(rows),
            jac: DMatrix::zeros(rows, cols),
        }
    }

    fn push(&mut self, value: f64, grad: &[(usize, f64)]) {
        let r = self.values.len();
        self.values.push(value);
        for &(j, g) in grad {
            self.jac[(r, j)] += g;
        }
    }

    /// `lo <= w[j] <= hi` as two rows.
    fn bound(&mut self, w: &[f64], j: usize, lo: f64, hi: f64) {
        self.push(w[j] - lo, &[(j, 1.0)]);
        self.push(hi - w[j], &[(j, -1.0)]);
    }
}

impl NlpProblem {
    pub fn config(&self) -> &OcpConfig {
        &self.config
    }

    pub fn params(&self) -> &BikeParams {
        &self.params
    }

    pub fn x0(&self) -> &StateSpace {
        &self.x0
    }

    /// Road samples at the grid points.
    pub fn roads(&self) -> &[RoadSample] {
        &self.roads
    }

    pub fn num_variables(&self) -> usize {
        (STATE_DIM + INPUT_DIM) * (self.config.steps + 1)
    }

    pub fn num_equalities(&self) -> usize {
        STATE_DIM * (self.config.steps + 1) + TERMINAL_DIM
    }

    fn lane_rows(&self) -> usize {
        if self.config.include_roll_lane {
            4
        } else {
            2
        }
    }

    fn state_rows(&self) -> usize {
        // g-g, lane, and two-sided phi, alpha, u, w_psi, w_phi, a_psi
        1 + self.lane_rows() + 12
    }

    fn state_ineq(&self, rows: &mut Rows, x: &[f64], road: &RoadSample) {
        let p = &self.params;
        let b = &self.config.bounds;
        let st = StateSpace::from_slice(&x[..STATE_DIM]);
        let gg = gg_gradient(&st, road, p);
        let grad: Vec<(usize, f64)> = gg.iter().enumerate().map(|(j, g)| (j, -g)).collect();
        rows.push(1.0 - gg_constraint(&st, road, p), &grad);

        let (n, phi) = (StateSpace::N, StateSpace::PHI);
        let width = road.width;
        rows.push(x[n], &[(n, 1.0)]);
        rows.push(width - x[n], &[(n, -1.0)]);
        if self.config.include_roll_lane {
            let hr = p.rider_height;
            rows.push(x[n] + hr * x[phi], &[(n, 1.0), (phi, hr)]);
            rows.push(width - hr * x[phi] - x[n], &[(n, -1.0), (phi, -hr)]);
        }
        rows.bound(x, phi, -b.phi, b.phi);
        rows.bound(x, StateSpace::ALPHA, -b.alpha, b.alpha);
        rows.bound(x, StateSpace::UX, MIN_PROGRESS_RATE, road.u_limit);
        rows.bound(x, StateSpace::WPSI, -b.wpsi, b.wpsi);
        rows.bound(x, StateSpace::WPHI, -b.wphi, b.wphi);
        rows.bound(x, StateSpace::APSI, -b.apsi, b.apsi);
    }

    /// Position, heading, roll, speed and rates of `x_1` follow from `x_0`
    /// alone, so their rows are constants. A rider measured at a bound would
    /// leave those rows with no interior; they are shifted to keep a margin.
    fn data_relaxation(&self) -> Result<Vec<f64>, ModelError> {
        let x1 = euler_step(&self.x0, &ControlInput::ZERO, self.config.ds, &self.roads[1], &self.params)?;
        let mut rows = Rows::new(self.state_rows(), STATE_DIM);
        self.state_ineq(&mut rows, &x1.to_array(), &self.roads[1]);
        let fixed = 1..self.state_rows() - 2;
        Ok(rows
            .values
            .iter()
            .enumerate()
            .map(|(r, v)| if fixed.contains(&r) { (DATA_MARGIN - v).max(0.0) } else { 0.0 })
            .collect())
    }

    fn input_ineq(&self, rows: &mut Rows, w: &[f64], offset: usize) {
        let b = &self.config.bounds;
        rows.bound(w, offset, -b.jx, b.jx);
        rows.bound(w, offset + 1, -b.jpsi, b.jpsi);
    }

    fn jerk_cost(&self, u: &[f64]) -> (f64, [f64; 2]) {
        let c = &self.config;
        (
            c.r_x * u[0] * u[0] + c.r_psi * u[1] * u[1],
            [2.0 * c.r_x * u[0], 2.0 * c.r_psi * u[1]],
        )
    }

    /// Time and acceleration cost of one state with its gradient.
    fn state_cost(&self, x: &StateSpace, road: &RoadSample, with_time: bool) -> Result<(f64, [f64; STATE_DIM]), ModelError> {
        let c = &self.config;
        let mut value = c.q_a * gg_constraint(x, road, &self.params);
        let mut grad = gg_gradient(x, road, &self.params);
        for g in &mut grad {
            *g *= c.q_a;
        }
        if with_time {
            let t = c.q_t * stage_time(x, road, c.ds)?;
            let ca = x.alpha.cos();
            value += t;
            grad[StateSpace::N] += -c.q_t * c.ds * road.kappa / (x.ux * ca);
            grad[StateSpace::ALPHA] += t * x.alpha.tan();
            grad[StateSpace::UX] += -t / x.ux;
        }
        Ok((value, grad))
    }

    /// `h = -x - d_s f(x, u)` and its Jacobian with respect to `(x, u)`.
    fn defect(&self, x: &StateSpace, u: &ControlInput, road: &RoadSample) -> Result<(Vec<f64>, DMatrix<f64>), ModelError> {
        let ds = self.config.ds;
        let f = space_dynamics(x, u, road, &self.params)?;
        let (fx, fu) = jacobians(x, u, road, &self.params)?;
        let xa = x.to_array();
        let h = (0..STATE_DIM).map(|i| -xa[i] - ds * f[i]).collect();
        let mut jac = DMatrix::zeros(STATE_DIM, STATE_DIM + INPUT_DIM);
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                jac[(i, j)] = -ds * fx[(i, j)];
            }
            jac[(i, i)] -= 1.0;
            for j in 0..INPUT_DIM {
                jac[(i, STATE_DIM + j)] = -ds * fu[(i, j)];
            }
        }
        Ok((h, jac))
    }

    /// Packs a trajectory into solver blocks.
    fn pack(&self, traj: &Trajectory) -> Vec<Vec<f64>> {
        let n = self.config.steps;
        let mut w = Vec::with_capacity(n + 2);
        w.push(traj.inputs[0].to_array().to_vec());
        for k in 1..=n {
            let mut b = traj.states[k].to_array().to_vec();
            b.extend_from_slice(&traj.inputs[k].to_array());
            w.push(b);
        }
        w.push(traj.states[n + 1].to_array().to_vec());
        w
    }

    fn unpack(&self, w: &[Vec<f64>]) -> Trajectory {
        let n = self.config.steps;
        let mut states = Vec::with_capacity(n + 2);
        let mut inputs = Vec::with_capacity(n + 1);
        states.push(self.x0);
        inputs.push(ControlInput {
            jx: w[0][0],
            jpsi: w[0][1],
        });
        for block in &w[1..=n] {
            states.push(StateSpace::from_slice(&block[..STATE_DIM]));
            inputs.push(ControlInput {
                jx: block[STATE_DIM],
                jpsi: block[STATE_DIM + 1],
            });
        }
        states.push(StateSpace::from_slice(&w[n + 1]));
        Trajectory { states, inputs }
    }
}

fn eval_err(block: usize) -> impl Fn(ModelError) -> EvalError {
    move |e| EvalError {
        block,
        reason: e.to_string(),
    }
}

impl StagedNlp for NlpProblem {
    fn num_blocks(&self) -> usize {
        self.config.steps + 2
    }

    fn block_dim(&self, k: usize) -> usize {
        match k {
            0 => INPUT_DIM,
            k if k <= self.config.steps => STATE_DIM + INPUT_DIM,
            _ => STATE_DIM,
        }
    }

    fn coupling_dim(&self, k: usize) -> usize {
        if k <= self.config.steps {
            STATE_DIM
        } else {
            TERMINAL_DIM
        }
    }

    fn ineq_dim(&self, k: usize) -> usize {
        match k {
            0 => 4,
            k if k <= self.config.steps => self.state_rows() + 4,
            _ => self.state_rows(),
        }
    }

    fn eval(&self, k: usize, w: &[f64]) -> Result<BlockEval, EvalError> {
        let steps = self.config.steps;
        let road = &self.roads[k];
        let err = eval_err(k);
        if k == 0 {
            let u = ControlInput { jx: w[0], jpsi: w[1] };
            let (jerk, jerk_grad) = self.jerk_cost(w);
            let (state_cost, _) = self.state_cost(&self.x0, road, true).map_err(&err)?;
            let (coupling, jac) = self.defect(&self.x0, &u, road).map_err(&err)?;
            let mut rows = Rows::new(4, INPUT_DIM);
            self.input_ineq(&mut rows, w, 0);
            return Ok(BlockEval {
                objective: state_cost + jerk,
                gradient: jerk_grad.to_vec(),
                coupling,
                coupling_jac: jac.columns(STATE_DIM, INPUT_DIM).into_owned(),
                ineq: rows.values,
                ineq_jac: rows.jac,
            });
        }

        let x = StateSpace::from_slice(&w[..STATE_DIM]);
        let interior = k <= steps;
        let (mut objective, state_grad) = self.state_cost(&x, road, interior).map_err(&err)?;
        let mut gradient = state_grad.to_vec();
        let mut rows = Rows::new(self.ineq_dim(k), w.len());
        self.state_ineq(&mut rows, w, road);
        if k == 1 {
            for (v, r) in rows.values.iter_mut().zip(&self.first_relax) {
                *v += r;
            }
        }
        let (coupling, coupling_jac) = if interior {
            let u = ControlInput {
                jx: w[STATE_DIM],
                jpsi: w[STATE_DIM + 1],
            };
            let (jerk, jerk_grad) = self.jerk_cost(&w[STATE_DIM..]);
            objective += jerk;
            gradient.extend_from_slice(&jerk_grad);
            self.input_ineq(&mut rows, w, STATE_DIM);
            self.defect(&x, &u, road).map_err(&err)?
        } else {
            let r = terminal_residual(&x, road).map_err(&err)?;
            (r.to_vec(), terminal_jacobian(road).map_err(&err)?)
        };
        Ok(BlockEval {
            objective,
            gradient,
            coupling,
            coupling_jac,
            ineq: rows.values,
            ineq_jac: rows.jac,
        })
    }
}

/// Transcribes the trajectory problem starting from the measured state `x0`.
pub fn build_problem(
    profile: &RoadProfile,
    x0: StateSpace,
    config: &OcpConfig,
    p: &BikeParams,
) -> Result<NlpProblem, OcpError> {
    p.validate()?;
    let roads = grid_samples(profile, config)?;
    let mut problem = NlpProblem {
        config: *config,
        params: *p,
        x0,
        roads,
        first_relax: Vec::new(),
    };
    problem.first_relax = problem.data_relaxation()?;
    Ok(problem)
}

/// Margin by which the guess is kept inside simple bounds.
const GUESS_MARGIN: f64 = 1e-3;

/// Constant-speed ride at the lane center with steady-state roll.
pub fn initial_guess(profile: &RoadProfile, x0: &StateSpace, config: &OcpConfig, p: &BikeParams) -> Result<Trajectory, OcpError> {
    let roads = grid_samples(profile, config)?;
    Ok(guess_on(&roads, x0, config, p))
}

fn guess_on(roads: &[RoadSample], x0: &StateSpace, config: &OcpConfig, p: &BikeParams) -> Trajectory {
    let speeds: Vec<f64> = roads.iter().map(|r| x0.ux.min(r.u_limit)).collect();
    guess_with_speeds(roads, x0, &speeds, config, p)
}

/// Share of the friction limits the fallback guess plans with.
const GUESS_GRIP: f64 = 0.8;

/// Speeds limited by cornering at a share of the lateral limit, smoothed by a
/// forward-backward pass at a share of the longitudinal limit.
fn cornering_speeds(roads: &[RoadSample], x0: &StateSpace, config: &OcpConfig, p: &BikeParams) -> Vec<f64> {
    let cap = |r: &RoadSample| {
        let corner = (GUESS_GRIP * p.ay_max / r.kappa.abs().max(1e-9)).sqrt();
        r.u_limit.min(corner)
    };
    let reach = 2.0 * GUESS_GRIP * p.ax_max * config.ds;
    let mut v: Vec<f64> = roads.iter().map(cap).collect();
    v[0] = x0.ux;
    for k in 1..v.len() {
        v[k] = v[k].min((v[k - 1] * v[k - 1] + reach).sqrt());
    }
    for k in (1..v.len() - 1).rev() {
        v[k] = v[k].min((v[k + 1] * v[k + 1] + reach).sqrt());
    }
    v
}

fn guess_with_speeds(roads: &[RoadSample], x0: &StateSpace, speeds: &[f64], config: &OcpConfig, p: &BikeParams) -> Trajectory {
    let b = &config.bounds;
    let mut states = Vec::with_capacity(roads.len());
    states.push(*x0);
    for (road, &v) in roads.iter().zip(speeds).skip(1) {
        let ux = v.max(MIN_PROGRESS_RATE + GUESS_MARGIN);
        let n = 0.5 * road.width;
        let phi = (ux * ux * road.kappa / p.g).atan();
        let wpsi = road.kappa * ux / (1.0 - n * road.kappa);
        states.push(StateSpace {
            n,
            alpha: 0.0,
            phi: phi.clamp(-b.phi + GUESS_MARGIN, b.phi - GUESS_MARGIN),
            ux,
            wpsi: wpsi.clamp(-b.wpsi + GUESS_MARGIN, b.wpsi - GUESS_MARGIN),
            wphi: 0.0,
            ax: 0.0,
            apsi: 0.0,
        });
    }
    Trajectory {
        states,
        inputs: vec![ControlInput::ZERO; config.steps + 1],
    }
}

/// Solves the program from `guess`. Infeasibility and iteration exhaustion are
/// reported in [`OcpSolution::status`].
pub fn solve(problem: &NlpProblem, guess: &Trajectory) -> Result<OcpSolution, OcpError> {
    let cfg = &problem.config;
    check_shape(guess, cfg.steps)?;
    let options = IpmOptions {
        feas_tol: cfg.feas_tol,
        stat_tol: cfg.stat_tol,
        max_iter: cfg.max_iter,
        ..IpmOptions::default()
    };
    let res = InteriorPoint::new(problem, options).solve(problem.pack(guess))?;
    let traj = problem.unpack(&res.w);
    let status = match res.status {
        IpmStatus::Converged => SolveStatus::Optimal,
        IpmStatus::MaxIter => SolveStatus::MaxIter,
        IpmStatus::Infeasible => SolveStatus::Infeasible,
    };
    let p = &problem.params;
    let roads = &problem.roads;
    let cost_breakdown = costs_on(&traj, roads, cfg, p)?;
    let gg_ratio = traj
        .states
        .iter()
        .zip(roads)
        .map(|(x, r)| gg_constraint(x, r, p))
        .collect();
    let lane = traj
        .states
        .iter()
        .zip(roads)
        .map(|(x, r)| lane_interval(x.phi, r, p, cfg.include_roll_lane))
        .collect();
    Ok(OcpSolution {
        s: (0..cfg.steps + 2).map(|k| cfg.s_at(k)).collect(),
        states: traj.states,
        inputs: traj.inputs,
        objective: res.objective,
        cost_breakdown,
        kkt_residual: res.stationarity.max(res.complementarity),
        feasibility_residual: res.feasibility,
        status,
        iterations: res.iterations,
        gg_ratio,
        lane,
    })
}

/// Builds the problem, guesses, and solves. A solve that does not converge
/// from the constant-speed guess is retried once from a guess that already
/// slows for the curves; the better of the two is returned.
pub fn plan(profile: &RoadProfile, x0: StateSpace, config: &OcpConfig, p: &BikeParams) -> Result<OcpSolution, OcpError> {
    let problem = build_problem(profile, x0, config, p)?;
    let first = solve(&problem, &guess_on(&problem.roads, &x0, config, p))?;
    if first.status == SolveStatus::Optimal {
        return Ok(first);
    }
    let speeds = cornering_speeds(&problem.roads, &x0, config, p);
    debug!("retrying from a cornering guess after {}", first.status.as_str());
    let second = solve(&problem, &guess_with_speeds(&problem.roads, &x0, &speeds, config, p))?;
    let rank = |s: &OcpSolution| match s.status {
        SolveStatus::Optimal => 0,
        SolveStatus::MaxIter => 1,
        SolveStatus::Infeasible => 2,
    };
    Ok(if rank(&second) <= rank(&first) { second } else { first })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn road(kappa: f64) -> RoadSample {
        RoadSample {
            kappa,
            sigma: 0.0,
            width: 3.5,
            u_limit: 20.0,
        }
    }

    #[test]
    fn gg_limits() {
        let p = BikeParams::default();
        assert_eq!(gg_constraint(&StateSpace::default(), &road(0.0), &p), 0.0);
        let x = StateSpace { ax: 4.0, ..Default::default() };
        assert_eq!(gg_constraint(&x, &road(0.0), &p), 1.0);
        let x = StateSpace {
            ux: 10.0,
            wpsi: 0.7,
            ..Default::default()
        };
        assert!((gg_constraint(&x, &road(0.0), &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gg_gradient_matches_differences() {
        let p = BikeParams::default();
        let r = RoadSample { sigma: 0.07, ..road(0.01) };
        let x = StateSpace {
            n: 1.0,
            alpha: 0.1,
            phi: 0.2,
            ux: 12.0,
            wpsi: 0.3,
            wphi: 0.1,
            ax: -1.5,
            apsi: 0.2,
        };
        let g = gg_gradient(&x, &r, &p);
        for j in 0..STATE_DIM {
            let mut a = x.to_array();
            let mut b = x.to_array();
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (gg_constraint(&StateSpace::from_array(a), &r, &p)
                - gg_constraint(&StateSpace::from_array(b), &r, &p))
                / 2e-6;
            assert!((fd - g[j]).abs() < 1e-7, "j={j}");
        }
    }

    #[test]
    fn lane_interval_values() {
        let p = BikeParams {
            rider_height: 1.8,
            ..Default::default()
        };
        assert_eq!(lane_bounds(0.0, &road(0.0), &p).unwrap(), (0.0, 3.5));
        let (lo, hi) = lane_bounds(0.5, &road(0.0), &p).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 2.6).abs() < 1e-12);
        let (lo, hi) = lane_bounds(-0.5, &road(0.0), &p).unwrap();
        assert!((lo - 0.9).abs() < 1e-12);
        assert_eq!(hi, 3.5);
        assert!(matches!(lane_bounds(2.0, &road(0.0), &p), Err(OcpError::EmptyLane { .. })));
    }

    #[test]
    fn terminal_values() {
        let x = StateSpace::cruising(1.75, 20.0);
        assert!(terminal_residual(&x, &road(0.0)).unwrap().iter().all(|v| *v == 0.0));
        let x = StateSpace {
            n: 1.75,
            ux: 15.0,
            ..Default::default()
        };
        let r = terminal_residual(&x, &road(0.02)).unwrap();
        assert!((-r[5] - 0.3 / 0.965).abs() < 1e-12);
        let x = StateSpace {
            n: 2.25,
            ..Default::default()
        };
        assert!((terminal_residual(&x, &road(0.0)).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn straight_time_cost() {
        let profile = RoadProfile::uniform(200.0, road(0.0)).unwrap();
        let config = OcpConfig {
            steps: 99,
            ..Default::default()
        };
        let x0 = StateSpace::cruising(1.75, 20.0);
        let traj = initial_guess(&profile, &x0, &config, &BikeParams::default()).unwrap();
        let c = stage_costs(&traj, &profile, &config, &BikeParams::default()).unwrap();
        assert!((c.time - 5.0).abs() < 1e-12);
        assert_eq!(c.jerk, 0.0);
        assert_eq!(c.accel, 0.0);
    }

    #[test]
    fn dimensions() {
        let profile = RoadProfile::uniform(100.0, road(0.0)).unwrap();
        let config = OcpConfig {
            steps: 10,
            ..Default::default()
        };
        let pr = build_problem(&profile, StateSpace::cruising(1.75, 15.0), &config, &BikeParams::default()).unwrap();
        assert_eq!(pr.num_variables(), 110);
        assert_eq!(pr.num_equalities(), 94);
        let total: usize = (0..pr.num_blocks()).map(|k| pr.block_dim(k)).sum();
        assert_eq!(total, 110);
        let eq: usize = (0..pr.num_blocks()).map(|k| pr.coupling_dim(k)).sum();
        assert_eq!(eq, 94);
    }

    #[test]
    fn horizon_must_fit() {
        let profile = RoadProfile::uniform(100.0, road(0.0)).unwrap();
        let config = OcpConfig {
            steps: 100,
            ..Default::default()
        };
        let err = build_problem(&profile, StateSpace::cruising(1.75, 15.0), &config, &BikeParams::default());
        assert!(matches!(err, Err(OcpError::HorizonExceedsMap { .. })));
    }

    #[test]
    fn block_derivatives_match_differences() {
        let sample = RoadSample {
            kappa: 0.015,
            sigma: 0.04,
            width: 3.5,
            u_limit: 25.0,
        };
        let profile = RoadProfile::uniform(100.0, sample).unwrap();
        let config = OcpConfig {
            steps: 10,
            ..Default::default()
        };
        let x0 = StateSpace::cruising(1.75, 15.0);
        let pr = build_problem(&profile, x0, &config, &BikeParams::default()).unwrap();
        let w = vec![1.2, 0.4, 0.1, 0.3, 14.0, 0.25, 0.2, -0.5, 0.1, 0.3, -0.2];
        let w = &w[1..];
        let e = pr.eval(3, w).unwrap();
        for j in 0..w.len() {
            let mut a = w.to_vec();
            let mut b = w.to_vec();
            let h = 1e-6;
            a[j] += h;
            b[j] -= h;
            let (ea, eb) = (pr.eval(3, &a).unwrap(), pr.eval(3, &b).unwrap());
            let fd = (ea.objective - eb.objective) / (2.0 * h);
            assert!((fd - e.gradient[j]).abs() < 1e-6, "objective j={j}");
            for r in 0..e.coupling.len() {
                let fd = (ea.coupling[r] - eb.coupling[r]) / (2.0 * h);
                assert!((fd - e.coupling_jac[(r, j)]).abs() < 1e-6, "coupling r={r} j={j}");
            }
            for r in 0..e.ineq.len() {
                let fd = (ea.ineq[r] - eb.ineq[r]) / (2.0 * h);
                assert!((fd - e.ineq_jac[(r, j)]).abs() < 1e-6, "ineq r={r} j={j}");
            }
        }
    }
}
