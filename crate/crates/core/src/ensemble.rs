//! The weighted particle ensemble and its construction from an initial
//! density.

use crate::{Error, Interval, Result};
use std::fmt;
use std::sync::Arc;

/// Self-similar profile of the unweighted quadratic-diffusion equation:
///
/// ```text
/// psi_tau(x) = tau^(-1/3)/12 * (3^(4/3) - x^2 / tau^(2/3))_+
/// ```
///
/// Nonnegative, unit mass, compactly supported on `|x| <= 3^(2/3) tau^(1/3)`.
///
/// # Panics
/// Panics unless `tau > 0`.
pub fn barenblatt(tau: f64, x: f64) -> f64 {
    assert!(tau > 0.0, "barenblatt profile needs tau > 0, got {tau}");
    let t13 = tau.cbrt();
    (3f64.powf(4.0 / 3.0) - x * x / (t13 * t13)).max(0.0) / (12.0 * t13)
}

/// Support radius of [`barenblatt`]: `3^(2/3) tau^(1/3)`.
pub fn barenblatt_support_radius(tau: f64) -> f64 {
    3f64.powf(2.0 / 3.0) * tau.cbrt()
}

type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial density used to place particle weights.
#[derive(Clone)]
pub enum InitialDensity {
    /// [`barenblatt`] profile with the given initial time offset.
    Barenblatt { tau: f64 },
    /// Constant `1/|Omega|` on the domain.
    UniformOnOmega,
    /// Arbitrary nonnegative density; callers are responsible for unit
    /// mass on the support (tests verify it by quadrature).
    Custom { name: String, density: DensityFn },
}

impl fmt::Debug for InitialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Barenblatt { tau } => write!(f, "Barenblatt(tau={tau})"),
            Self::UniformOnOmega => write!(f, "UniformOnOmega"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl InitialDensity {
    pub fn eval(&self, x: f64, omega: Interval) -> f64 {
        match self {
            Self::Barenblatt { tau } => barenblatt(*tau, x),
            Self::UniformOnOmega => {
                if omega.contains(x) {
                    1.0 / omega.length()
                } else {
                    0.0
                }
            }
            Self::Custom { density, .. } => density(x),
        }
    }
}

/// The empirical measure: particle positions with fixed nonnegative weights
/// summing to one. Weights never change after construction; dynamics
/// produce new position arrays rather than mutating shared state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Builds an ensemble directly from positions and weights.
    pub fn new(positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if positions.len() != weights.len() || positions.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "ensemble needs matching nonempty positions/weights, got {} and {}",
                positions.len(),
                weights.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("positions must be finite".into()));
        }
        if weights.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidConfig("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "weights must sum to 1, got {total}"
            )));
        }
        Ok(Self { positions, weights })
    }

    /// Midpoint lattice construction: the domain is split into `n`
    /// subintervals of equal length, each particle sits at a midpoint, and
    /// weights are proportional to the initial density there, renormalized
    /// to exact unit mass. Zero-weight particles are retained; they exert
    /// no force and keep the lattice fixed.
    pub fn from_density(rho0: &InitialDensity, n: usize, omega: Interval) -> Result<Self> {
        assert!(n >= 1, "need at least one particle");
        let h = omega.length() / n as f64;
        // midpoints written relative to the domain center so that a
        // symmetric domain yields an exactly mirror-symmetric lattice
        let center = 0.5 * (omega.lo + omega.hi);
        let positions: Vec<f64> = (0..n)
            .map(|i| center + (i as f64 + 0.5 - 0.5 * n as f64) * h)
            .collect();
        let raw: Vec<f64> = positions.iter().map(|&x| rho0.eval(x, omega)).collect();
        if raw.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "initial density produced an invalid weight for {rho0:?}"
            )));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass { n });
        }
        let weights = raw.iter().map(|m| m / total).collect();
        Ok(Self { positions, weights })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The same weights attached to new positions (one time sample of a
    /// trajectory).
    pub fn with_positions(&self, positions: Vec<f64>) -> Self {
        assert_eq!(positions.len(), self.weights.len());
        Self {
            positions,
            weights: self.weights.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_interval, QuadratureSpec};
    use approx::assert_relative_eq;

    #[test]
    fn barenblatt_reference_values() {
        assert_relative_eq!(barenblatt(0.0625, 0.0), 0.9085602964160696, max_relative = 1e-14);
        assert_relative_eq!(
            barenblatt_support_radius(0.0625),
            0.8254818122236567,
            max_relative = 1e-14
        );
        // outside the support
        assert_eq!(barenblatt(0.0625, 1.0), 0.0);
        // 0.75 is still inside the support radius ~0.8255, hence positive
        assert_relative_eq!(barenblatt(0.0625, 0.75), 0.1585602964160697, max_relative = 1e-13);
    }

    #[test]
    fn barenblatt_unit_mass() {
        let spec = QuadratureSpec::with_tols(1e-12, 1e-11);
        for &tau in &[0.01, 0.0625, 0.5, 2.0] {
            let r = barenblatt_support_radius(tau);
            let spec = spec.clone().with_breakpoints(&[-r, r]);
            let (mass, _) =
                integrate_interval(|x| barenblatt(tau, x), -1.5 * r, 1.5 * r, &spec).unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "tau = {tau}: mass = {mass}");
        }
    }

    #[test]
    fn uniform_two_particle_lattice() {
        let e = ParticleEnsemble::from_density(&InitialDensity::UniformOnOmega, 2, Interval::default())
            .unwrap();
        assert_eq!(e.positions(), &[-0.5, 0.5]);
        assert_eq!(e.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn barenblatt_two_particles_symmetric() {
        let e = ParticleEnsemble::from_density(
            &InitialDensity::Barenblatt { tau: 0.0625 },
            2,
            Interval::default(),
        )
        .unwrap();
        assert_eq!(e.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn barenblatt_four_particle_weights() {
        // midpoints -0.75, -0.25, 0.25, 0.75; the outer ones are still
        // inside the support, so their weights are small but nonzero
        let e = ParticleEnsemble::from_density(
            &InitialDensity::Barenblatt { tau: 0.0625 },
            4,
            Interval::default(),
        )
        .unwrap();
        assert_eq!(e.positions(), &[-0.75, -0.25, 0.25, 0.75]);
        let expect = [
            0.08058667912453397,
            0.41941332087546607,
            0.41941332087546607,
            0.08058667912453397,
        ];
        for (m, ex) in e.weights().iter().zip(expect) {
            assert_relative_eq!(*m, ex, max_relative = 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one_exactly() {
        for n in [1, 7, 101, 1280] {
            let e = ParticleEnsemble::from_density(
                &InitialDensity::Barenblatt { tau: 0.0625 },
                n,
                Interval::default(),
            )
            .unwrap();
            let total: f64 = e.weights().iter().sum();
            assert!((total - 1.0).abs() <= 1e-14, "n = {n}: {total}");
        }
    }

    #[test]
    fn symmetric_density_gives_mirror_symmetric_ensemble() {
        let e = ParticleEnsemble::from_density(
            &InitialDensity::Barenblatt { tau: 0.0625 },
            31,
            Interval::default(),
        )
        .unwrap();
        let n = e.len();
        for i in 0..n {
            assert_relative_eq!(e.positions()[i], -e.positions()[n - 1 - i], epsilon = 1e-15);
            assert_eq!(e.weights()[i], e.weights()[n - 1 - i]);
        }
    }

    #[test]
    fn zero_mass_is_an_error() {
        // support of the narrow profile misses every midpoint of a coarse
        // lattice on a wide domain
        let rho = InitialDensity::Custom {
            name: "narrow".into(),
            density: Arc::new(|x: f64| if x.abs() < 0.01 { 1.0 } else { 0.0 }),
        };
        let r = ParticleEnsemble::from_density(&rho, 2, Interval::default());
        assert!(matches!(r, Err(Error::ZeroMass { n: 2 })));
    }

    #[test]
    fn w1_to_initial_density_decreases_with_n() {
        let rho = InitialDensity::Barenblatt { tau: 0.0625 };
        let omega = Interval::default();
        let mut last = f64::INFINITY;
        for n in [10, 40, 160] {
            let e = ParticleEnsemble::from_density(&rho, n, omega).unwrap();
            let d = crate::oracle::w1_ensemble_vs_density(
                &e,
                |x| barenblatt(0.0625, x),
                omega,
            )
            .unwrap();
            assert!(d < last, "n = {n}: W1 = {d} >= {last}");
            last = d;
        }
    }
}
