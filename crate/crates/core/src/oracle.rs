//! Independent ground-truth generators backing the test suite and the
//! `kernels-check` / `exact-check` CLI gates.
//!
//! Everything here recomputes quantities from their definitions rather
//! than through the production code paths it is used to check: kernels by
//! adaptive quadrature of the defining integrals, Jacobians by central
//! differences of the right-hand side, and the exact self-similar solution
//! with its own residual test.

use crate::dynamics::DynamicsContext;
use crate::ensemble::{barenblatt, ParticleEnsemble};
use crate::mollifier::Mollifier;
use crate::quadrature::{integrate_interval, QuadratureSpec};
use crate::target::TargetDensity;
use crate::{Interval, Result};
use nalgebra::DMatrix;

/// Energy kernel by direct quadrature of
/// `int zeta(x-z) zeta(y-z) / rho(z) dz`.
pub fn kernel_g_quadrature(
    target: &TargetDensity,
    mollifier: Mollifier,
    x: f64,
    y: f64,
) -> Result<f64> {
    let eps = mollifier.epsilon();
    let spec =
        QuadratureSpec::with_tols(1e-15, 1e-10).with_breakpoints(&target.finite_breakpoints());
    let (v, _) = integrate_interval(
        |z| mollifier.eval(x - z) * mollifier.eval(y - z) / target.density(z),
        x.min(y) - 10.0 * eps,
        x.max(y) + 10.0 * eps,
        &spec,
    )?;
    Ok(v)
}

/// Force kernel by direct quadrature of
/// `int zeta'(x-z) zeta(y-z) / rho(z) dz`.
pub fn kernel_f_quadrature(
    target: &TargetDensity,
    mollifier: Mollifier,
    x: f64,
    y: f64,
) -> Result<f64> {
    let eps = mollifier.epsilon();
    let spec =
        QuadratureSpec::with_tols(1e-15, 1e-10).with_breakpoints(&target.finite_breakpoints());
    let (v, _) = integrate_interval(
        |z| mollifier.grad(x - z) * mollifier.eval(y - z) / target.density(z),
        x.min(y) - 10.0 * eps,
        x.max(y) + 10.0 * eps,
        &spec,
    )?;
    Ok(v)
}

/// Central-difference Jacobian of the dynamics right-hand side.
pub fn fd_jacobian(ctx: &DynamicsContext, positions: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = positions.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = positions.to_vec();
    for j in 0..n {
        probe[j] = positions[j] + h;
        let up = ctx.rhs(&probe)?;
        probe[j] = positions[j] - h;
        let dn = ctx.rhs(&probe)?;
        probe[j] = positions[j];
        for i in 0..n {
            jac[(i, j)] = (up[i] - dn[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// The exact self-similar reference for the constant-weight case: under
/// the uniform weight `1/2` with no potentials, the continuum equation
/// reduces to `d/dt rho = (rho^2)_xx`, solved by the time-shifted
/// profile `psi_(t + tau0)`.
#[derive(Debug, Clone, Copy)]
pub struct ExactSolution {
    pub tau0: f64,
}

impl ExactSolution {
    pub fn new(tau0: f64) -> Self {
        assert!(tau0 > 0.0);
        Self { tau0 }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        barenblatt(self.tau0 + t, x)
    }

    /// Finite-difference residual of `d/dt psi - (psi^2)_xx` at `(x, t)`.
    /// Verifying this vanishes (away from the support edge) is the gate
    /// that the reduction claim holds before the exact solution is used as
    /// a convergence reference.
    pub fn pde_residual(&self, x: f64, t: f64, h: f64) -> f64 {
        let p = |x: f64, t: f64| self.eval(x, t);
        let dt = (p(x, t + h) - p(x, t - h)) / (2.0 * h);
        let sq = |x: f64| p(x, t).powi(2);
        let dxx = (sq(x + h) - 2.0 * sq(x) + sq(x - h)) / (h * h);
        dt - dxx
    }

    /// Largest residual over a grid of smooth interior points (80% of the
    /// support radius) at the given times.
    pub fn max_residual(&self, times: &[f64], points_per_time: usize, h: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for &t in times {
            let r = 0.8 * crate::ensemble::barenblatt_support_radius(self.tau0 + t);
            for i in 0..points_per_time {
                let x = -r + 2.0 * r * i as f64 / (points_per_time - 1) as f64;
                worst = worst.max(self.pde_residual(x, t, h).abs());
            }
        }
        worst
    }
}

/// 1-D Wasserstein-1 distance between an ensemble and a density with unit
/// mass on `support`, via the CDF formula `int |F_ens - F_rho|`.
pub fn w1_ensemble_vs_density<F: Fn(f64) -> f64>(
    ensemble: &ParticleEnsemble,
    rho: F,
    support: Interval,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..ensemble.len()).collect();
    order.sort_by(|&i, &j| ensemble.positions()[i].total_cmp(&ensemble.positions()[j]));

    // integration edges: support ends and particle positions
    let mut edges: Vec<f64> = vec![support.lo, support.hi];
    edges.extend(order.iter().map(|&i| ensemble.positions()[i]));
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let spec = QuadratureSpec::with_tols(1e-11, 1e-9);

    // density CDF cached at the edges
    let mut rho_cdf = vec![0.0f64; edges.len()];
    for i in 1..edges.len() {
        let (seg, _) = integrate_interval(&rho, edges[i - 1], edges[i], &spec)?;
        rho_cdf[i] = rho_cdf[i - 1] + seg;
    }

    let ensemble_cdf = |x: f64| {
        let mut acc = 0.0;
        for &i in &order {
            if ensemble.positions()[i] <= x {
                acc += ensemble.weights()[i];
            } else {
                break;
            }
        }
        acc
    };

    let mut total = 0.0;
    for i in 1..edges.len() {
        let (a, b) = (edges[i - 1], edges[i]);
        if b <= a {
            continue;
        }
        let base = rho_cdf[i - 1];
        let (seg, _) = integrate_interval(
            |x| {
                let fr = base
                    + integrate_interval(&rho, a, x.max(a + 1e-300), &spec)
                        .map(|(v, _)| v)
                        .unwrap_or(0.0);
                (ensemble_cdf(x) - fr).abs()
            },
            a,
            b,
            &spec,
        )?;
        total += seg;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::InitialDensity;
    use approx::assert_relative_eq;

    #[test]
    fn exact_solution_reduces_to_initial_profile() {
        let sol = ExactSolution::new(0.0625);
        for &x in &[0.0, 0.3, -0.7, 1.0] {
            assert_eq!(sol.eval(x, 0.0), barenblatt(0.0625, x));
        }
    }

    #[test]
    fn pde_residual_is_small_at_smooth_points() {
        let sol = ExactSolution::new(0.0625);
        let worst = sol.max_residual(&[0.0, 0.05, 0.1], 50, 1e-4);
        assert!(worst <= 1e-4, "max residual {worst}");
    }

    #[test]
    fn exact_solution_keeps_unit_mass() {
        let sol = ExactSolution::new(0.0625);
        let spec = QuadratureSpec::with_tols(1e-12, 1e-10);
        for &t in &[0.0, 0.05, 0.1] {
            let r = crate::ensemble::barenblatt_support_radius(0.0625 + t);
            let spec = spec.clone().with_breakpoints(&[-r, r]);
            let (mass, _) =
                integrate_interval(|x| sol.eval(x, t), -1.5 * r, 1.5 * r, &spec).unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "t = {t}: {mass}");
        }
    }

    #[test]
    fn w1_two_particles_vs_uniform() {
        // hand CDF computation confirmed by this numeric oracle: the step
        // CDF of particles at -1/2, 1/2 vs the uniform ramp integrates to
        // 1/4 in total
        let e = ParticleEnsemble::new(vec![-0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let d = w1_ensemble_vs_density(&e, |_| 0.5, Interval::default()).unwrap();
        assert_relative_eq!(d, 0.25, max_relative = 1e-6);
    }

    #[test]
    fn w1_matched_lattice_is_small_and_shrinks() {
        let omega = Interval::default();
        let mut last = f64::INFINITY;
        for n in [8, 32] {
            let e = ParticleEnsemble::from_density(&InitialDensity::UniformOnOmega, n, omega)
                .unwrap();
            let d = w1_ensemble_vs_density(&e, |_| 0.5, omega).unwrap();
            // lattice of equal weights vs uniform: W1 = |Omega|/(4n)
            assert_relative_eq!(d, 0.5 / n as f64, max_relative = 1e-4);
            assert!(d < last);
            last = d;
        }
    }
}
