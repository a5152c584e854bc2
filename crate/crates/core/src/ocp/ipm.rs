//! Primal-dual interior-point solver for stage-structured nonlinear programs.
//!
//! The decision vector is split into blocks `w_0, ..., w_K`. Block `k`
//! contributes an objective term `f_k(w_k)`, inequalities `d_k(w_k) >= 0`,
//! and coupling equalities
//!
//! ```text
//!     c_k = w_{k+1}[..m_k] + h_k(w_k) = 0      (k < K)
//!     c_K = h_K(w_K) = 0
//! ```
//!
//! which is exactly the shape of a multiple-shooting transcription: the
//! Lagrangian Hessian is block diagonal and the KKT system, ordered
//! `(w_0, lambda_0, w_1, lambda_1, ...)`, is banded.
//!
//! Inequalities are handled with slacks and a log barrier. Each Newton step
//! uses a finite-differenced Lagrangian Hessian whose blocks are projected
//! onto the positive semidefinite cone, and an l1 exact-penalty merit line
//! search with one second-order correction.

use log::{debug, trace};
use nalgebra::{DMatrix, SymmetricEigen};

use super::banded::BandMatrix;

/// Failure to evaluate a block at a trial point (outside the model's domain).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("block {block} not evaluable: {reason}")]
pub struct EvalError {
    pub block: usize,
    pub reason: String,
}

/// Everything the solver needs from one block at one point.
#[derive(Debug, Clone)]
pub struct BlockEval {
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// `h_k(w_k)`.
    pub coupling: Vec<f64>,
    /// `m_k x n_k`.
    pub coupling_jac: DMatrix<f64>,
    /// `d_k(w_k)`, feasible when nonnegative.
    pub ineq: Vec<f64>,
    /// `p_k x n_k`.
    pub ineq_jac: DMatrix<f64>,
}

pub trait StagedNlp {
    fn num_blocks(&self) -> usize;
    fn block_dim(&self, k: usize) -> usize;
    /// Rows of `c_k`; for `k < K` these link to the leading entries of `w_{k+1}`.
    fn coupling_dim(&self, k: usize) -> usize;
    fn ineq_dim(&self, k: usize) -> usize;
    fn eval(&self, k: usize, w: &[f64]) -> Result<BlockEval, EvalError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub feas_tol: f64,
    pub stat_tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            stat_tol: 1e-6,
            max_iter: 200,
            mu_init: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IpmStatus {
    Converged,
    MaxIter,
    /// The iterates stalled without reaching feasibility.
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: IpmStatus,
    /// Primal blocks.
    pub w: Vec<Vec<f64>>,
    /// Coupling multipliers per block.
    pub lambda: Vec<Vec<f64>>,
    /// Inequality multipliers per block.
    pub z: Vec<Vec<f64>>,
    pub objective: f64,
    /// Infinity norm of the Lagrangian gradient.
    pub stationarity: f64,
    /// Largest equality or inequality violation.
    pub feasibility: f64,
    /// Largest `s_i z_i`.
    pub complementarity: f64,
    pub iterations: usize,
}

const TAU_MIN: f64 = 0.99;
const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const KAPPA_SIGMA: f64 = 1e10;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const HESS_FLOOR: f64 = 1e-8;
const MIN_REGULARIZATION: f64 = 1e-4;
const MAX_REGULARIZATION: f64 = 1e2;
const FD_STEP: f64 = 1e-5;
const SLACK_PUSH: f64 = 1e-2;
/// Iterations over which feasibility must improve before the problem is declared infeasible.
const STALL_WINDOW: usize = 40;

struct Layout {
    dims: Vec<usize>,
    eq: Vec<usize>,
    ineq: Vec<usize>,
    /// Position of each block's primal entries in the KKT vector.
    w_pos: Vec<usize>,
    /// Position of each block's coupling multipliers in the KKT vector.
    l_pos: Vec<usize>,
    size: usize,
    kl: usize,
    ku: usize,
}

impl Layout {
    fn new<P: StagedNlp + ?Sized>(p: &P) -> Self {
        let blocks = p.num_blocks();
        let dims: Vec<usize> = (0..blocks).map(|k| p.block_dim(k)).collect();
        let eq: Vec<usize> = (0..blocks).map(|k| p.coupling_dim(k)).collect();
        let ineq: Vec<usize> = (0..blocks).map(|k| p.ineq_dim(k)).collect();
        let mut w_pos = Vec::with_capacity(blocks);
        let mut l_pos = Vec::with_capacity(blocks);
        let mut at = 0;
        for k in 0..blocks {
            w_pos.push(at);
            at += dims[k];
            l_pos.push(at);
            at += eq[k];
        }
        // Bandwidth from the two coupling patterns: lambda_k rows touch w_k and
        // the head of w_{k+1}; w rows touch lambda_{k-1} and lambda_k.
        let mut band = 0;
        for k in 0..blocks {
            band = band.max(dims[k].saturating_sub(1));
            if eq[k] > 0 {
                band = band.max(l_pos[k] + eq[k] - w_pos[k]);
                if k + 1 < blocks {
                    let reach = w_pos[k + 1] + eq[k].min(dims[k + 1]);
                    band = band.max(reach - l_pos[k]);
                }
            }
        }
        Self {
            dims,
            eq,
            ineq,
            w_pos,
            l_pos,
            size: at,
            kl: band,
            ku: band,
        }
    }

    fn blocks(&self) -> usize {
        self.dims.len()
    }
}

struct Point {
    w: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
}

struct Evaluated {
    evals: Vec<BlockEval>,
    objective: f64,
    /// Full coupling residuals `c_k`.
    c: Vec<Vec<f64>>,
}

fn evaluate<P: StagedNlp + ?Sized>(p: &P, w: &[Vec<f64>]) -> Result<Evaluated, EvalError> {
    let blocks = w.len();
    let mut evals = Vec::with_capacity(blocks);
    for (k, wk) in w.iter().enumerate() {
        evals.push(p.eval(k, wk)?);
    }
    let objective = evals.iter().map(|e| e.objective).sum();
    let c = (0..blocks)
        .map(|k| {
            let mut ck = evals[k].coupling.clone();
            if k + 1 < blocks {
                for (i, v) in ck.iter_mut().enumerate() {
                    *v += w[k + 1][i];
                }
            }
            ck
        })
        .collect();
    Ok(Evaluated {
        evals,
        objective,
        c,
    })
}

fn lagrangian_block_gradient(e: &BlockEval, lambda: &[f64], z: &[f64]) -> Vec<f64> {
    let mut g = e.gradient.clone();
    for (r, &l) in lambda.iter().enumerate() {
        if l != 0.0 {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= l * e.coupling_jac[(r, j)];
            }
        }
    }
    for (r, &zi) in z.iter().enumerate() {
        if zi != 0.0 {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= zi * e.ineq_jac[(r, j)];
            }
        }
    }
    g
}

fn inf_norm<'a, I: IntoIterator<Item = &'a Vec<f64>>>(vs: I) -> f64 {
    vs.into_iter()
        .flat_map(|v| v.iter())
        .fold(0.0, |m, x| m.max(x.abs()))
}

fn one_norm<'a, I: IntoIterator<Item = &'a Vec<f64>>>(vs: I) -> f64 {
    vs.into_iter().flat_map(|v| v.iter()).map(|x| x.abs()).sum()
}

pub struct InteriorPoint<'a, P: StagedNlp + ?Sized> {
    problem: &'a P,
    options: IpmOptions,
    layout: Layout,
}

struct Step {
    dw: Vec<Vec<f64>>,
    dl: Vec<Vec<f64>>,
    ds: Vec<Vec<f64>>,
    dz: Vec<Vec<f64>>,
}

impl<'a, P: StagedNlp + ?Sized> InteriorPoint<'a, P> {
    pub fn new(problem: &'a P, options: IpmOptions) -> Self {
        let layout = Layout::new(problem);
        Self {
            problem,
            options,
            layout,
        }
    }

    /// Dual residual `grad f - A^T lambda - G^T z` per block.
    fn dual_residual(&self, ev: &Evaluated, lambda: &[Vec<f64>], z: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let blocks = self.layout.blocks();
        (0..blocks)
            .map(|k| {
                let mut g = lagrangian_block_gradient(&ev.evals[k], &lambda[k], &z[k]);
                if k > 0 {
                    for (i, l) in lambda[k - 1].iter().enumerate() {
                        g[i] -= l;
                    }
                }
                g
            })
            .collect()
    }

    fn hessian_block(&self, k: usize, w: &[f64], lambda: &[f64], z: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let n = w.len();
        let mut hess = DMatrix::zeros(n, n);
        let mut probe = w.to_vec();
        for j in 0..n {
            let h = FD_STEP * w[j].abs().max(1.0);
            probe[j] = w[j] + h;
            let gp = lagrangian_block_gradient(&self.problem.eval(k, &probe)?, lambda, z);
            probe[j] = w[j] - h;
            let gm = lagrangian_block_gradient(&self.problem.eval(k, &probe)?, lambda, z);
            probe[j] = w[j];
            for i in 0..n {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        let mut eig = SymmetricEigen::new(sym);
        let mut clipped = false;
        for v in eig.eigenvalues.iter_mut() {
            if *v < HESS_FLOOR {
                *v = HESS_FLOOR;
                clipped = true;
            }
        }
        if !clipped {
            return Ok((&hess + hess.transpose()) * 0.5);
        }
        Ok(eig.recompose())
    }

    pub fn solve(&self, w0: Vec<Vec<f64>>) -> Result<IpmResult, EvalError> {
        let lay = &self.layout;
        let blocks = lay.blocks();
        assert_eq!(w0.len(), blocks, "initial point has wrong block count");
        for k in 0..blocks {
            assert_eq!(w0[k].len(), lay.dims[k], "block {k} has wrong dimension");
        }
        let opts = self.options;
        let mut mu = opts.mu_init;

        let mut ev = evaluate(self.problem, &w0)?;
        let s0: Vec<Vec<f64>> = ev
            .evals
            .iter()
            .map(|e| e.ineq.iter().map(|&d| d.max(SLACK_PUSH * d.abs().max(1.0))).collect())
            .collect();
        let mut pt = Point { w: w0, s: s0 };
        let mut lambda: Vec<Vec<f64>> = lay.eq.iter().map(|&m| vec![0.0; m]).collect();
        let mut z: Vec<Vec<f64>> = pt
            .s
            .iter()
            .map(|sk| sk.iter().map(|&s| (mu / s).min(1.0)).collect())
            .collect();

        let mut nu = 1.0;
        let mut feas_history: Vec<f64> = Vec::new();
        let mut iterations = 0;

        loop {
            let rd = self.dual_residual(&ev, &lambda, &z);
            let rp: Vec<Vec<f64>> = (0..blocks)
                .map(|k| ev.evals[k].ineq.iter().zip(&pt.s[k]).map(|(d, s)| d - s).collect())
                .collect();
            let stationarity = inf_norm(&rd);
            let eq_violation = inf_norm(&ev.c);
            let ineq_violation = ev
                .evals
                .iter()
                .flat_map(|e| e.ineq.iter())
                .fold(0.0f64, |m, d| m.max(-d));
            let feasibility = eq_violation.max(ineq_violation);
            let complementarity = pt
                .s
                .iter()
                .flatten()
                .zip(z.iter().flatten())
                .fold(0.0f64, |m, (s, zi)| m.max(s * zi));

            debug!(
                "ipm it={iterations:3} obj={:.8e} stat={stationarity:.2e} feas={feasibility:.2e} comp={complementarity:.2e} mu={mu:.1e} nu={nu:.1e}",
                ev.objective
            );

            let result = |status, iterations| IpmResult {
                status,
                w: pt.w.clone(),
                lambda: lambda.clone(),
                z: z.clone(),
                objective: ev.objective,
                stationarity,
                feasibility,
                complementarity,
                iterations,
            };

            if stationarity <= opts.stat_tol && feasibility <= opts.feas_tol && complementarity <= opts.stat_tol {
                return Ok(result(IpmStatus::Converged, iterations));
            }
            feas_history.push(feasibility);
            if feas_history.len() > STALL_WINDOW {
                let old = feas_history[feas_history.len() - 1 - STALL_WINDOW];
                if feasibility > 1e-3 && feasibility > 0.9 * old && mu <= 1e-4 {
                    return Ok(result(IpmStatus::Infeasible, iterations));
                }
            }
            if iterations >= opts.max_iter {
                return Ok(result(IpmStatus::MaxIter, iterations));
            }

            // barrier update
            loop {
                let comp_mu = pt
                    .s
                    .iter()
                    .flatten()
                    .zip(z.iter().flatten())
                    .fold(0.0f64, |m, (s, zi)| m.max((s * zi - mu).abs()));
                let barrier_error = stationarity
                    .max(eq_violation)
                    .max(inf_norm(&rp))
                    .max(comp_mu);
                let mu_floor = opts.stat_tol.min(opts.feas_tol) / 10.0;
                if barrier_error <= KAPPA_EPS * mu && mu > mu_floor {
                    mu = mu_floor.max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
                } else {
                    break;
                }
            }
            iterations += 1;

            // Newton system
            let mut hess = Vec::with_capacity(blocks);
            for k in 0..blocks {
                hess.push(self.hessian_block(k, &pt.w[k], &lambda[k], &z[k])?);
            }
            let sigma: Vec<Vec<f64>> = (0..blocks)
                .map(|k| pt.s[k].iter().zip(&z[k]).map(|(s, zi)| zi / s).collect())
                .collect();

            // Regularize the primal block when the line search cannot make progress.
            let mut delta = 0.0;
            let (accepted, step, alpha_max, alpha_dual) = loop {
                let mut kkt = BandMatrix::zeros(lay.size, lay.kl, lay.ku);
                let mut rhs = vec![0.0; lay.size];
                for k in 0..blocks {
                    let e = &ev.evals[k];
                    let (n, m, p) = (lay.dims[k], lay.eq[k], lay.ineq[k]);
                    let wp = lay.w_pos[k];
                    let lp = lay.l_pos[k];
                    // condensed Hessian block
                    let mut block = hess[k].clone();
                    for i in 0..n {
                        block[(i, i)] += delta;
                    }
                    for r in 0..p {
                        let sg = sigma[k][r];
                        for i in 0..n {
                            let gi = e.ineq_jac[(r, i)];
                            if gi == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                block[(i, j)] += sg * gi * e.ineq_jac[(r, j)];
                            }
                        }
                    }
                    for i in 0..n {
                        for j in 0..n {
                            let v = block[(i, j)];
                            if v != 0.0 {
                                kkt.add(wp + i, wp + j, v);
                            }
                        }
                    }
                    for r in 0..m {
                        for j in 0..n {
                            let a = e.coupling_jac[(r, j)];
                            if a != 0.0 {
                                kkt.add(wp + j, lp + r, -a);
                                kkt.add(lp + r, wp + j, a);
                            }
                        }
                        if k + 1 < blocks {
                            let next = lay.w_pos[k + 1];
                            kkt.add(next + r, lp + r, -1.0);
                            kkt.add(lp + r, next + r, 1.0);
                        }
                        rhs[lp + r] = -ev.c[k][r];
                    }
                    // -grad f + A^T lambda + G^T (mu/s - Sigma r_p)
                    let mut g = e.gradient.clone();
                    for (r, &l) in lambda[k].iter().enumerate() {
                        for j in 0..n {
                            g[j] -= l * e.coupling_jac[(r, j)];
                        }
                    }
                    if k > 0 {
                        for (i, l) in lambda[k - 1].iter().enumerate() {
                            g[i] -= l;
                        }
                    }
                    for r in 0..p {
                        let coef = mu / pt.s[k][r] - sigma[k][r] * rp[k][r];
                        for j in 0..n {
                            g[j] -= coef * e.ineq_jac[(r, j)];
                        }
                    }
                    for j in 0..n {
                        rhs[wp + j] = -g[j];
                    }
                }
                if kkt.factor().is_err() {
                    // rank-deficient couplings: regularize the constraint block
                    for k in 0..blocks {
                        for r in 0..lay.eq[k] {
                            let i = lay.l_pos[k] + r;
                            kkt.add(i, i, -1e-8);
                        }
                    }
                    if let Err(e) = kkt.factor() {
                        debug!("ipm: KKT factorization failed: {e}");
                        return Ok(result(IpmStatus::Infeasible, iterations));
                    }
                }
                let step = self.recover_step(&kkt, rhs.clone(), &ev, &pt, &z, &sigma, &rp, mu);

                // merit function parameter
                let grad_dot: f64 = (0..blocks)
                    .map(|k| {
                        let e = &ev.evals[k];
                        let bar: f64 = step.ds[k].iter().zip(&pt.s[k]).map(|(d, s)| mu * d / s).sum();
                        e.gradient.iter().zip(&step.dw[k]).map(|(g, d)| g * d).sum::<f64>() - bar
                    })
                    .sum();
                let curvature: f64 = (0..blocks)
                    .map(|k| {
                        let d = nalgebra::DVector::from_column_slice(&step.dw[k]);
                        let quad = (d.transpose() * &hess[k] * &d)[(0, 0)] + delta * d.norm_squared();
                        quad + step.ds[k]
                            .iter()
                            .zip(&sigma[k])
                            .map(|(d, sg)| sg * d * d)
                            .sum::<f64>()
                    })
                    .sum();
                let theta0 = one_norm(&ev.c) + one_norm(&rp);
                if theta0 > 0.0 {
                    let required = (grad_dot + 0.5 * curvature.max(0.0)) / (0.9 * theta0);
                    if nu < required {
                        nu = required + 1.0;
                    }
                }
                let merit0 = ev.objective - mu * log_sum(&pt.s) + nu * theta0;
                let slope = grad_dot - nu * theta0;

                let tau = TAU_MIN.max(1.0 - mu);
                let alpha_max = max_step(&pt.s, &step.ds, tau);
                let alpha_dual = max_step(&z, &step.dz, tau);

                let mut alpha = alpha_max;
                let mut accepted: Option<(Point, Evaluated, f64)> = None;
                let mut tried_soc = false;
                while alpha >= MIN_STEP {
                    let trial = Point {
                        w: axpy(&pt.w, alpha, &step.dw),
                        s: axpy(&pt.s, alpha, &step.ds),
                    };
                    if let Ok(tev) = evaluate(self.problem, &trial.w) {
                        let trp = residual(&tev, &trial.s);
                        let theta = one_norm(&tev.c) + one_norm(&trp);
                        let merit = tev.objective - mu * log_sum(&trial.s) + nu * theta;
                        if merit.is_finite() && merit <= merit0 + ARMIJO * alpha * slope {
                            accepted = Some((trial, tev, alpha));
                            break;
                        }
                        if !tried_soc && alpha == alpha_max && theta >= theta0 {
                            tried_soc = true;
                            if let Some(hit) = self.second_order_correction(
                                &kkt, &rhs, &ev, &tev, &pt, &step, &z, &sigma, &rp, mu, alpha, tau, nu, merit0, slope,
                            ) {
                                accepted = Some(hit);
                                break;
                            }
                        }
                    }
                    alpha *= 0.5;
                }
                if accepted.is_some() || delta >= MAX_REGULARIZATION {
                    break (accepted, step, alpha_max, alpha_dual);
                }
                delta = if delta == 0.0 { MIN_REGULARIZATION } else { 10.0 * delta };
                debug!("ipm: line search failed, regularizing with {delta:.0e}");
            };

            let Some((trial, tev, alpha)) = accepted else {
                debug!("ipm: line search failed at iteration {iterations}");
                let status = if feasibility > opts.feas_tol {
                    IpmStatus::Infeasible
                } else {
                    IpmStatus::MaxIter
                };
                return Ok(result(status, iterations));
            };
            trace!("ipm: step {alpha:.3e} (max {alpha_max:.3e}, dual {alpha_dual:.3e})");

            for k in 0..blocks {
                for (l, d) in lambda[k].iter_mut().zip(&step.dl[k]) {
                    *l += alpha * d;
                }
                for ((zi, d), s) in z[k].iter_mut().zip(&step.dz[k]).zip(&trial.s[k]) {
                    *zi += alpha_dual * d;
                    let lo = mu / (KAPPA_SIGMA * s);
                    let hi = KAPPA_SIGMA * mu / s;
                    *zi = zi.clamp(lo, hi);
                }
            }
            pt = trial;
            ev = tev;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn recover_step(
        &self,
        kkt: &BandMatrix,
        mut rhs: Vec<f64>,
        ev: &Evaluated,
        pt: &Point,
        z: &[Vec<f64>],
        sigma: &[Vec<f64>],
        rp: &[Vec<f64>],
        mu: f64,
    ) -> Step {
        let lay = &self.layout;
        kkt.solve_in_place(&mut rhs);
        let blocks = lay.blocks();
        let mut step = Step {
            dw: Vec::with_capacity(blocks),
            dl: Vec::with_capacity(blocks),
            ds: Vec::with_capacity(blocks),
            dz: Vec::with_capacity(blocks),
        };
        for k in 0..blocks {
            let dw = rhs[lay.w_pos[k]..lay.w_pos[k] + lay.dims[k]].to_vec();
            let dl = rhs[lay.l_pos[k]..lay.l_pos[k] + lay.eq[k]].to_vec();
            let e = &ev.evals[k];
            let ds: Vec<f64> = (0..lay.ineq[k])
                .map(|r| {
                    let gd: f64 = (0..lay.dims[k]).map(|j| e.ineq_jac[(r, j)] * dw[j]).sum();
                    gd + rp[k][r]
                })
                .collect();
            let dz: Vec<f64> = (0..lay.ineq[k])
                .map(|r| mu / pt.s[k][r] - z[k][r] - sigma[k][r] * ds[r])
                .collect();
            step.dw.push(dw);
            step.dl.push(dl);
            step.ds.push(ds);
            step.dz.push(dz);
        }
        step
    }

    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &self,
        kkt: &BandMatrix,
        rhs: &[f64],
        ev: &Evaluated,
        trial_ev: &Evaluated,
        pt: &Point,
        step: &Step,
        z: &[Vec<f64>],
        sigma: &[Vec<f64>],
        rp: &[Vec<f64>],
        mu: f64,
        alpha: f64,
        tau: f64,
        nu: f64,
        merit0: f64,
        slope: f64,
    ) -> Option<(Point, Evaluated, f64)> {
        let lay = &self.layout;
        let blocks = lay.blocks();
        // Replace the linearized residuals with their values after the full step
        // minus the part the step already accounts for.
        let mut rhs = rhs.to_vec();
        let mut rp_soc = Vec::with_capacity(blocks);
        for k in 0..blocks {
            for r in 0..lay.eq[k] {
                let mut a_dw = 0.0;
                for j in 0..lay.dims[k] {
                    a_dw += ev.evals[k].coupling_jac[(r, j)] * step.dw[k][j];
                }
                if k + 1 < blocks {
                    a_dw += step.dw[k + 1][r];
                }
                rhs[lay.l_pos[k] + r] = -(trial_ev.c[k][r] - alpha * a_dw);
            }
            let row: Vec<f64> = (0..lay.ineq[k])
                .map(|r| {
                    let g_dw: f64 = (0..lay.dims[k])
                        .map(|j| ev.evals[k].ineq_jac[(r, j)] * step.dw[k][j])
                        .sum();
                    let trial_rp = trial_ev.evals[k].ineq[r] - (pt.s[k][r] + alpha * step.ds[k][r]);
                    rp[k][r] + trial_rp - alpha * (g_dw - step.ds[k][r])
                })
                .collect();
            rp_soc.push(row);
        }
        // the w-rows depend on r_p through Sigma
        for k in 0..blocks {
            let e = &ev.evals[k];
            for r in 0..lay.ineq[k] {
                let delta = sigma[k][r] * (rp_soc[k][r] - rp[k][r]);
                if delta != 0.0 {
                    for j in 0..lay.dims[k] {
                        rhs[lay.w_pos[k] + j] -= delta * e.ineq_jac[(r, j)];
                    }
                }
            }
        }
        let soc = self.recover_step(kkt, rhs, ev, pt, z, sigma, &rp_soc, mu);
        let a_soc = max_step(&pt.s, &soc.ds, tau);
        if a_soc < 1.0 {
            return None;
        }
        let trial = Point {
            w: axpy(&pt.w, 1.0, &soc.dw),
            s: axpy(&pt.s, 1.0, &soc.ds),
        };
        let tev = evaluate(self.problem, &trial.w).ok()?;
        let trp = residual(&tev, &trial.s);
        let merit = tev.objective - mu * log_sum(&trial.s) + nu * (one_norm(&tev.c) + one_norm(&trp));
        if merit.is_finite() && merit <= merit0 + ARMIJO * alpha * slope {
            trace!("ipm: second-order correction accepted");
            Some((trial, tev, alpha))
        } else {
            None
        }
    }
}

fn residual(ev: &Evaluated, s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    ev.evals
        .iter()
        .zip(s)
        .map(|(e, sk)| e.ineq.iter().zip(sk).map(|(d, s)| d - s).collect())
        .collect()
}

fn log_sum(s: &[Vec<f64>]) -> f64 {
    s.iter()
        .flatten()
        .map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
        .sum()
}

fn axpy(x: &[Vec<f64>], a: f64, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(d)
        .map(|(xk, dk)| xk.iter().zip(dk).map(|(x, d)| x + a * d).collect())
        .collect()
}

/// Largest step in `(0, 1]` keeping `v + a dv >= (1 - tau) v`.
fn max_step(v: &[Vec<f64>], dv: &[Vec<f64>], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for (x, d) in v.iter().flatten().zip(dv.iter().flatten()) {
        if *d < 0.0 {
            alpha = alpha.min(-tau * x / d);
        }
    }
    alpha
}
