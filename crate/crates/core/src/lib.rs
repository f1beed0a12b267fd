//! Deterministic blob-method particle simulator for weighted porous medium
//! dynamics on an interval.
//!
//! The simulator evolves `N` weighted particles under the pairwise force
//! kernel induced by a Gaussian mollifier and a prescribed positive weight
//! density, plus a quadratic confining potential that approximates no-flux
//! boundary conditions on the interval. The crate ships:
//!
//! * closed-form interaction kernels for uniform, log-concave
//!   (`2/(pi (1+x^2))`), and piecewise-constant weight densities, with an
//!   adaptive-quadrature fallback for arbitrary positive densities
//!   ([`target`]);
//! * the particle ODE right-hand side, its analytic Jacobian, and the
//!   discrete interaction energy ([`dynamics`]);
//! * adaptive explicit (Dormand-Prince 5(4)) and implicit stiff (variable
//!   step BDF1/2 with Newton) integrators ([`integrator`]);
//! * post-processing: kernel density estimates, normalized KL divergence,
//!   L1 errors, and convergence-order fits ([`observables`]);
//! * independent ground-truth generators used by the test suite and the
//!   `kernels-check` / `exact-check` CLI gates ([`oracle`]);
//! * experiment orchestration with a TOML config schema and CSV output
//!   ([`harness`]).
//!
//! Everything is seedless and deterministic: identical configurations
//! produce byte-identical output files regardless of thread count.
//!
//! See the crate examples for runnable end-to-end experiments (density
//! evolution, confinement strength, KL decay, energy decay, convergence
//! studies) and `src/bin/blobsim.rs` for the thin CLI.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod integrator;
pub mod mollifier;
pub mod observables;
pub mod oracle;
pub mod potentials;
pub mod quadrature;
pub mod target;

pub use dynamics::DynamicsContext;
pub use ensemble::{InitialDensity, ParticleEnsemble};
pub use error::{Error, Result};
pub use harness::{SimConfig, SweepConfig};
pub use integrator::{IntegratorConfig, Method, Trajectory};
pub use mollifier::Mollifier;
pub use observables::KdeSnapshot;
pub use potentials::{ConfiningPotential, ExternalPotential};
pub use quadrature::QuadratureSpec;
pub use target::{KernelTable, TargetDensity};

/// A nonempty open interval `(lo, hi)`, used for the domain `Omega` and for
/// integration ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "interval requires finite lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl Default for Interval {
    /// The default domain `Omega = (-1, 1)`.
    fn default() -> Self {
        Self { lo: -1.0, hi: 1.0 }
    }
}

/// Neumaier compensated summation over a fixed iteration order.
///
/// The force loop and energy double sum use this so that results are
/// reproducible bit for bit independent of thread count: rows are summed
/// in ascending index order and combined sequentially.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
