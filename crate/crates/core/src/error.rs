//! Crate-wide error type.

use crate::integrator::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Adaptive quadrature exhausted its subdivision budget before reaching
    /// the requested tolerance.
    #[error("quadrature failed to converge on [{a}, {b}]: error estimate {err_estimate:.3e} after {subdivisions} subdivisions")]
    QuadratureFailure {
        a: f64,
        b: f64,
        err_estimate: f64,
        subdivisions: usize,
    },

    /// The initial density vanished at every lattice midpoint.
    #[error("initial density is zero at all {n} particle sites")]
    ZeroMass { n: usize },

    /// The kernel density estimate carries no mass on the domain, so the
    /// normalized KL divergence is undefined.
    #[error("kernel density estimate has mass {mass:.3e} on the domain")]
    EmptyOmegaMass { mass: f64 },

    /// The step size controller pushed the step below the representable
    /// floor; the system is stiffer than the method can handle.
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepSizeUnderflow {
        t: f64,
        h: f64,
        partial: Box<Trajectory>,
    },

    /// Newton failed to converge even after repeated step halving.
    #[error("Newton iteration failed to converge at t = {t:.6e}")]
    NonConvergence { t: f64, partial: Box<Trajectory> },

    /// A convergence-order fit needs at least two distinct sizes.
    #[error("degenerate convergence fit: all {n} sizes equal")]
    DegenerateFit { n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The partial trajectory attached to an aborted integration, if any.
    pub fn partial_trajectory(&self) -> Option<&Trajectory> {
        match self {
            Error::StepSizeUnderflow { partial, .. } | Error::NonConvergence { partial, .. } => {
                Some(partial)
            }
            _ => None,
        }
    }
}
