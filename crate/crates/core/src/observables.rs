//! Post-processing of trajectories: kernel density estimates, normalized
//! KL divergence, L1 errors, interval masses, and convergence-order fits.

use crate::ensemble::ParticleEnsemble;
use crate::mollifier::Mollifier;
use crate::quadrature::{integrate_interval, QuadratureSpec};
use crate::target::TargetDensity;
use crate::{Error, Interval, Result};

/// A smooth density reconstructed from one time sample of the particle
/// state: `rho_tilde(x) = sum_i zeta_eps(X_i - x) m_i`.
#[derive(Debug, Clone)]
pub struct KdeSnapshot {
    ensemble: ParticleEnsemble,
    mollifier: Mollifier,
}

impl KdeSnapshot {
    pub fn new(ensemble: ParticleEnsemble, mollifier: Mollifier) -> Self {
        Self {
            ensemble,
            mollifier,
        }
    }

    pub fn ensemble(&self) -> &ParticleEnsemble {
        &self.ensemble
    }

    pub fn mollifier(&self) -> Mollifier {
        self.mollifier
    }

    /// Density estimate at `x`; nonnegative, total mass one.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (xi, mi) in self
            .ensemble
            .positions()
            .iter()
            .zip(self.ensemble.weights())
        {
            if *mi != 0.0 {
                acc += self.mollifier.eval(xi - x) * mi;
            }
        }
        acc
    }

    /// Mass carried on `[a, b]`.
    pub fn mass_in_interval(&self, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
        assert!(a < b);
        let (v, _) = integrate_interval(|x| self.eval(x), a, b, spec)?;
        Ok(v)
    }
}

/// Normalized KL divergence of the estimate against the target on the
/// domain: the estimate is first renormalized by its mass `C` on `omega`
/// (its Gaussian tails extend past the domain), then
/// `int (rho_tilde/C) log(rho_tilde/(C rho_bar))` is integrated with the
/// target's breakpoints supplied to the quadrature. Nonnegative by Jensen.
pub fn kl_divergence(
    snapshot: &KdeSnapshot,
    target: &TargetDensity,
    omega: Interval,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let mass_spec = QuadratureSpec {
        breakpoints: Vec::new(),
        ..spec.clone()
    };
    let (mass, _) = integrate_interval(|x| snapshot.eval(x), omega.lo, omega.hi, &mass_spec)?;
    if mass <= 1e-300 {
        return Err(Error::EmptyOmegaMass { mass });
    }
    let mut kl_spec = spec.clone();
    kl_spec.breakpoints = target
        .finite_breakpoints()
        .into_iter()
        .filter(|b| omega.lo < *b && *b < omega.hi)
        .collect();
    let (v, _) = integrate_interval(
        |x| {
            let r = snapshot.eval(x) / mass;
            if r <= 0.0 {
                // 0 log 0 = 0 convention; the estimate only underflows far
                // from every particle
                0.0
            } else {
                let ratio = (r / target.density(x)).max(1e-300);
                r * ratio.ln()
            }
        },
        omega.lo,
        omega.hi,
        &kl_spec,
    )?;
    Ok(v)
}

/// `int_omega |f - g|` by adaptive quadrature. Pass any known kink
/// locations through `spec.breakpoints`.
pub fn l1_distance<F, G>(f: F, g: G, omega: Interval, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let (v, _) = integrate_interval(|x| (f(x) - g(x)).abs(), omega.lo, omega.hi, spec)?;
    Ok(v)
}

/// Least-squares slope of `log(error)` against `log(n)`, returned as a
/// positive order (the negated slope) together with the fit intercept.
pub fn fit_convergence_order(ns: &[usize], errors: &[f64]) -> Result<(f64, f64)> {
    if ns.len() != errors.len() || ns.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "convergence fit needs matching arrays of length >= 2, got {} and {}",
            ns.len(),
            errors.len()
        )));
    }
    if errors.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidConfig(
            "convergence fit needs strictly positive errors".into(),
        ));
    }
    if ns.iter().all(|&n| n == ns[0]) {
        return Err(Error::DegenerateFit { n: ns.len() });
    }
    let logn: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let loge: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let count = ns.len() as f64;
    let mx = logn.iter().sum::<f64>() / count;
    let my = loge.iter().sum::<f64>() / count;
    let sxx: f64 = logn.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = logn
        .iter()
        .zip(&loge)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok((-slope, intercept))
}

/// Least-squares slope of `log(values)` against plain `time`: the decay
/// rate read off a semilog plot. Values are clamped away from zero before
/// taking logs.
pub fn semilog_slope(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::InvalidConfig(
            "semilog fit needs matching arrays of length >= 2".into(),
        ));
    }
    let logv: Vec<f64> = values.iter().map(|v| v.max(1e-300).ln()).collect();
    let count = times.len() as f64;
    let mx = times.iter().sum::<f64>() / count;
    let my = logv.iter().sum::<f64>() / count;
    let sxx: f64 = times.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit { n: times.len() });
    }
    let sxy: f64 = times
        .iter()
        .zip(&logv)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    Ok(sxy / sxx)
}

/// One row of the diagnostics table attached to a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub kl: f64,
    pub energy: f64,
    pub mass_in_omega: f64,
    pub l1_vs_reference: Option<f64>,
}
