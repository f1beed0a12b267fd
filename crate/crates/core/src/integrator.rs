//! Time integration with dense output at requested sample times.
//!
//! Two methods are shipped: an embedded Dormand-Prince 5(4) pair for
//! non-stiff regimes (no or moderate confinement) and a variable-step
//! BDF1/2 solver with modified Newton iteration on the analytic Jacobian
//! for the strongly confined, stiff regime. Both force steps onto the
//! requested sample times, so recorded states carry no interpolation
//! error, and both are fully deterministic.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Integration method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Embedded explicit Runge-Kutta 5(4); efficient when the confinement
    /// strength keeps the system non-stiff (roughly `k <= 100`).
    AdaptiveExplicit,
    /// Variable-step BDF1/2 with Newton iteration; required for `k ~ 1e9`.
    ImplicitStiff,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step size. The stiff default keeps the
    /// historical `1e-5` cap; error control alone is usually enough, so
    /// experiment configs often raise it.
    pub max_step: f64,
    pub initial_step: f64,
}

impl IntegratorConfig {
    pub fn explicit() -> Self {
        Self {
            method: Method::AdaptiveExplicit,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            max_step: f64::INFINITY,
            initial_step: 1e-4,
        }
    }

    pub fn stiff() -> Self {
        Self {
            method: Method::ImplicitStiff,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            max_step: 1e-5,
            initial_step: 1e-6,
        }
    }

    pub fn with_tols(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok_tol = |t: f64| t > 0.0 && t < 1.0;
        if !ok_tol(self.rel_tol) || !ok_tol(self.abs_tol) {
            return Err(Error::InvalidConfig(format!(
                "tolerances must lie in (0, 1), got rel {} abs {}",
                self.rel_tol, self.abs_tol
            )));
        }
        if !(self.max_step > 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::InvalidConfig(
                "max_step and initial_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Time-sampled solution states plus work counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step_count: u64,
    pub rhs_eval_count: u64,
}

/// An autonomous ODE system `y' = F(y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64]) -> Result<Vec<f64>>;

    /// Analytic Jacobian of the right-hand side; `None` asks the stiff
    /// solver to build one from finite differences.
    fn jacobian(&self, y: &[f64]) -> Result<Option<DMatrix<f64>>> {
        let _ = y;
        Ok(None)
    }
}

impl OdeSystem for crate::dynamics::DynamicsContext {
    fn dim(&self) -> usize {
        self.len()
    }

    fn rhs(&self, y: &[f64]) -> Result<Vec<f64>> {
        DynamicsContext::rhs(self, y)
    }

    fn jacobian(&self, y: &[f64]) -> Result<Option<DMatrix<f64>>> {
        Ok(Some(DynamicsContext::jacobian(self, y)?))
    }
}

use crate::dynamics::DynamicsContext;

/// Integrates from `t = 0` through the last sample time, recording the
/// state at every requested time. Sample times must be strictly
/// increasing and nonnegative; the harness always requests `t = 0` first.
pub fn integrate<S: OdeSystem>(
    system: &S,
    x0: &[f64],
    config: &IntegratorConfig,
    sample_times: &[f64],
) -> Result<Trajectory> {
    config.validate()?;
    if x0.len() != system.dim() {
        return Err(Error::InvalidConfig(format!(
            "state length {} does not match system dimension {}",
            x0.len(),
            system.dim()
        )));
    }
    if sample_times.is_empty() {
        return Err(Error::InvalidConfig("no sample times requested".into()));
    }
    if sample_times[0] < 0.0 || sample_times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig(
            "sample times must be finite and nonnegative".into(),
        ));
    }
    if sample_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "sample times must be strictly increasing".into(),
        ));
    }
    if x0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("initial state must be finite".into()));
    }

    match config.method {
        Method::AdaptiveExplicit => explicit_rk(system, x0, config, sample_times),
        Method::ImplicitStiff => implicit_bdf(system, x0, config, sample_times),
    }
}

fn wrms(err: &[f64], y_old: &[f64], y_new: &[f64], rel: f64, abs: f64) -> f64 {
    let n = err.len().max(1);
    let mut acc = 0.0;
    for i in 0..err.len() {
        let scale = abs + rel * y_old[i].abs().max(y_new[i].abs());
        let q = err[i] / scale;
        acc += q * q;
    }
    (acc / n as f64).sqrt()
}

fn step_floor(t: f64) -> f64 {
    16.0 * f64::EPSILON * t.abs().max(1.0)
}

// ---- explicit Dormand-Prince 5(4) ---------------------------------------

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn explicit_rk<S: OdeSystem>(
    system: &S,
    x0: &[f64],
    config: &IntegratorConfig,
    sample_times: &[f64],
) -> Result<Trajectory> {
    let n = x0.len();
    let mut traj = Trajectory {
        sample_times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        step_count: 0,
        rhs_eval_count: 0,
    };

    let mut t = 0.0f64;
    let mut y = x0.to_vec();
    let mut f0 = system.rhs(&y)?;
    traj.rhs_eval_count += 1;
    let mut h_nat = config.initial_step.min(config.max_step);

    let mut samples = sample_times.iter().copied().peekable();
    if sample_times[0] == 0.0 {
        traj.sample_times.push(0.0);
        traj.states.push(y.clone());
        samples.next();
    }

    let mut k = vec![vec![0.0f64; n]; 7];
    while let Some(&target) = samples.peek() {
        while t < target {
            // sub-ulp gap left by a max_step-clamped landing: snap
            if target - t <= step_floor(t) {
                t = target;
                break;
            }
            let mut accepted = false;
            while !accepted {
                let remaining = target - t;
                let hitting = h_nat >= remaining;
                let h = if hitting { remaining } else { h_nat };
                if h < step_floor(t) {
                    return Err(Error::StepSizeUnderflow {
                        t,
                        h,
                        partial: Box::new(traj),
                    });
                }

                k[0].copy_from_slice(&f0);
                let mut stage = vec![0.0f64; n];
                for s in 1..7 {
                    for i in 0..n {
                        let mut acc = 0.0;
                        for (j, kj) in k.iter().enumerate().take(s) {
                            let a = DP_A[s][j];
                            if a != 0.0 {
                                acc += a * kj[i];
                            }
                        }
                        stage[i] = y[i] + h * acc;
                    }
                    k[s] = system.rhs(&stage)?;
                    traj.rhs_eval_count += 1;
                    let _ = DP_C; // stage times unused: the system is autonomous
                }

                let mut y5 = vec![0.0f64; n];
                let mut err = vec![0.0f64; n];
                for i in 0..n {
                    let mut v5 = 0.0;
                    let mut v4 = 0.0;
                    for s in 0..7 {
                        v5 += DP_B5[s] * k[s][i];
                        v4 += DP_B4[s] * k[s][i];
                    }
                    y5[i] = y[i] + h * v5;
                    err[i] = h * (v5 - v4);
                }
                let est = wrms(&err, &y, &y5, config.rel_tol, config.abs_tol);

                if est <= 1.0 {
                    t = if hitting { target } else { t + h };
                    f0 = k[6].clone(); // FSAL: k7 = f(y5)
                    y = y5;
                    traj.step_count += 1;
                    let fac = if est == 0.0 {
                        5.0
                    } else {
                        (0.9 * est.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    if !hitting {
                        h_nat = (h * fac).min(config.max_step);
                    } else if fac > 1.0 {
                        h_nat = (h_nat * fac.min(2.0)).min(config.max_step);
                    }
                    accepted = true;
                } else {
                    h_nat = h * (0.9 * est.powf(-0.2)).clamp(0.1, 0.9);
                }
            }
        }
        traj.sample_times.push(target);
        traj.states.push(y.clone());
        samples.next();
    }

    Ok(traj)
}

// ---- implicit variable-step BDF1/2 ---------------------------------------

struct NewtonWorkspace {
    jac: Option<DMatrix<f64>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    factored_gh: f64,
}

impl NewtonWorkspace {
    fn new() -> Self {
        Self {
            jac: None,
            lu: None,
            factored_gh: 0.0,
        }
    }

    fn ensure_jacobian<S: OdeSystem>(
        &mut self,
        system: &S,
        y: &[f64],
        rhs_evals: &mut u64,
    ) -> Result<()> {
        if self.jac.is_none() {
            self.refresh_jacobian(system, y, rhs_evals)?;
        }
        Ok(())
    }

    fn refresh_jacobian<S: OdeSystem>(
        &mut self,
        system: &S,
        y: &[f64],
        rhs_evals: &mut u64,
    ) -> Result<()> {
        let jac = match system.jacobian(y)? {
            Some(j) => j,
            None => {
                // finite-difference fallback for systems without an
                // analytic Jacobian
                let n = y.len();
                let base = system.rhs(y)?;
                *rhs_evals += 1;
                let mut j = DMatrix::zeros(n, n);
                let mut probe = y.to_vec();
                for col in 0..n {
                    let h = 1e-8 * y[col].abs().max(1.0);
                    probe[col] = y[col] + h;
                    let up = system.rhs(&probe)?;
                    *rhs_evals += 1;
                    probe[col] = y[col];
                    for r in 0..n {
                        j[(r, col)] = (up[r] - base[r]) / h;
                    }
                }
                j
            }
        };
        self.jac = Some(jac);
        self.lu = None;
        Ok(())
    }

    fn ensure_factorization(&mut self, gh: f64) {
        let stale = match &self.lu {
            None => true,
            Some(_) => (gh - self.factored_gh).abs() > 0.3 * self.factored_gh.abs(),
        };
        if stale {
            let jac = self.jac.as_ref().expect("jacobian present");
            let n = jac.nrows();
            let mut m = -gh * jac;
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            self.lu = Some(m.lu());
            self.factored_gh = gh;
        }
    }
}

enum NewtonOutcome {
    Converged(Vec<f64>),
    Failed,
}

#[allow(clippy::too_many_arguments)]
fn newton_solve<S: OdeSystem>(
    system: &S,
    ws: &mut NewtonWorkspace,
    psi: &[f64],
    gamma_h: f64,
    predictor: &[f64],
    newton_tol: f64,
    rhs_evals: &mut u64,
) -> Result<NewtonOutcome> {
    ws.ensure_jacobian(system, predictor, rhs_evals)?;
    let mut refreshed_this_solve = false;

    loop {
        ws.ensure_factorization(gamma_h);
        let mut y = predictor.to_vec();
        let mut last_norm = f64::INFINITY;
        // converged y, or the iterate to refresh the Jacobian at
        let mut outcome: std::result::Result<Vec<f64>, Vec<f64>> = Err(predictor.to_vec());
        {
            let lu = ws.lu.as_ref().expect("factorization present");
            for iter in 0..10 {
                let f = system.rhs(&y)?;
                *rhs_evals += 1;
                let mut g = DVector::zeros(y.len());
                for i in 0..y.len() {
                    g[i] = y[i] - gamma_h * f[i] - psi[i];
                }
                let delta = match lu.solve(&g) {
                    Some(d) => d,
                    // singular iteration matrix; treat as failure
                    None => break,
                };
                let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                for i in 0..y.len() {
                    y[i] -= delta[i];
                }
                let dnorm = delta.amax();
                if dnorm <= newton_tol * (1.0 + ymax) {
                    outcome = Ok(y.clone());
                    break;
                }
                let slow = iter >= 2 && dnorm > 0.25 * last_norm;
                let diverging = iter >= 1 && dnorm > 2.0 * last_norm;
                if slow || diverging {
                    outcome = Err(y.clone());
                    break;
                }
                last_norm = dnorm;
            }
        }

        match outcome {
            Ok(y) => return Ok(NewtonOutcome::Converged(y)),
            Err(best_iterate) => {
                if refreshed_this_solve {
                    return Ok(NewtonOutcome::Failed);
                }
                // convergence stalled with a stale Jacobian: rebuild it at
                // the most recent iterate and retry once
                ws.refresh_jacobian(system, &best_iterate, rhs_evals)?;
                refreshed_this_solve = true;
            }
        }
    }
}

fn implicit_bdf<S: OdeSystem>(
    system: &S,
    x0: &[f64],
    config: &IntegratorConfig,
    sample_times: &[f64],
) -> Result<Trajectory> {
    let n = x0.len();
    let mut traj = Trajectory {
        sample_times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        step_count: 0,
        rhs_eval_count: 0,
    };

    let mut t = 0.0f64;
    let mut y = x0.to_vec();
    let mut f_cur = system.rhs(&y)?;
    traj.rhs_eval_count += 1;
    // previous accepted point, for BDF2
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None; // (y, f, h)
    let mut h_nat = config.initial_step.min(config.max_step);
    let newton_tol = 1e-2 * config.rel_tol.min(config.abs_tol);
    let mut ws = NewtonWorkspace::new();

    let mut samples = sample_times.iter().copied().peekable();
    if sample_times[0] == 0.0 {
        traj.sample_times.push(0.0);
        traj.states.push(y.clone());
        samples.next();
    }

    while let Some(&target) = samples.peek() {
        while t < target {
            // sub-ulp gap left by a max_step-clamped landing: snap
            if target - t <= step_floor(t) {
                t = target;
                break;
            }
            let mut accepted = false;
            let mut newton_failed_last = false;
            while !accepted {
                let remaining = target - t;
                let hitting = h_nat >= remaining;
                let h = if hitting { remaining } else { h_nat };
                if h < step_floor(t) {
                    return Err(if newton_failed_last {
                        Error::NonConvergence {
                            t,
                            partial: Box::new(traj),
                        }
                    } else {
                        Error::StepSizeUnderflow {
                            t,
                            h,
                            partial: Box::new(traj),
                        }
                    });
                }

                // order 1 until one step of history exists, order 2 after
                let (order, gamma, psi, predictor) = match &prev {
                    None => {
                        let pred: Vec<f64> =
                            (0..n).map(|i| y[i] + h * f_cur[i]).collect();
                        (1usize, 1.0, y.clone(), pred)
                    }
                    Some((y_prev, f_prev, h_last)) => {
                        let w = h / h_last;
                        let gamma = (1.0 + w) / (1.0 + 2.0 * w);
                        // difference form keeps psi = y exactly when the
                        // state has stopped moving
                        let b = w * w / (1.0 + 2.0 * w);
                        let psi: Vec<f64> =
                            (0..n).map(|i| y[i] + b * (y[i] - y_prev[i])).collect();
                        let pred: Vec<f64> = (0..n)
                            .map(|i| {
                                y[i] + h * ((1.0 + 0.5 * w) * f_cur[i] - 0.5 * w * f_prev[i])
                            })
                            .collect();
                        (2usize, gamma, psi, pred)
                    }
                };

                let outcome = newton_solve(
                    system,
                    &mut ws,
                    &psi,
                    gamma * h,
                    &predictor,
                    newton_tol,
                    &mut traj.rhs_eval_count,
                )?;
                let y_new = match outcome {
                    NewtonOutcome::Converged(y_new) => y_new,
                    NewtonOutcome::Failed => {
                        newton_failed_last = true;
                        h_nat = h * 0.5;
                        continue;
                    }
                };
                newton_failed_last = false;

                // conservative constants: the predictor-corrector gap
                // overestimates the local error, which keeps the
                // accumulated global error within a small multiple of the
                // tolerance on dissipative problems
                let err_const = if order == 1 { 1.0 } else { 2.0 };
                let diff: Vec<f64> = (0..n).map(|i| y_new[i] - predictor[i]).collect();
                let est = err_const * wrms(&diff, &y, &y_new, config.rel_tol, config.abs_tol);
                let exp = -1.0 / (order as f64 + 1.0);

                if est <= 1.0 {
                    // derivative at the accepted point from the implicit
                    // relation, saving one evaluation
                    let f_new: Vec<f64> = (0..n)
                        .map(|i| (y_new[i] - psi[i]) / (gamma * h))
                        .collect();
                    prev = Some((std::mem::take(&mut y), f_cur.clone(), h));
                    t = if hitting { target } else { t + h };
                    y = y_new;
                    f_cur = f_new;
                    traj.step_count += 1;
                    let fac = if est == 0.0 {
                        2.0
                    } else {
                        (0.9 * est.powf(exp)).clamp(0.2, 2.0)
                    };
                    if !hitting {
                        h_nat = (h * fac).min(config.max_step);
                    } else if fac > 1.0 {
                        h_nat = (h_nat * fac).min(config.max_step);
                    }
                    accepted = true;
                } else {
                    h_nat = h * (0.9 * est.powf(exp)).clamp(0.1, 0.9);
                }
            }
        }
        traj.sample_times.push(target);
        traj.states.push(y.clone());
        samples.next();
    }

    Ok(traj)
}
