//! Confining and external potentials.

use crate::mollifier::Mollifier;
use crate::quadrature::{integrate_interval, QuadratureSpec};
use crate::target::TAIL_WIDTHS;
use crate::{Interval, Result};
use std::fmt;
use std::sync::Arc;

/// Quadratic penalty outside the domain: `k/2 (x - a)^2` left of `a`,
/// `k/2 (x - b)^2` right of `b`, zero on `[a, b]`. Approximates no-flux
/// boundary conditions as `k` grows; `k = 0` disables confinement.
///
/// Values and gradients here are exact; coping with the stiffness a large
/// `k` induces is the integrator's job.
#[derive(Debug, Clone, Copy)]
pub struct ConfiningPotential {
    strength: f64,
    omega: Interval,
}

impl ConfiningPotential {
    /// # Panics
    /// Panics if `strength` is negative or non-finite.
    pub fn new(strength: f64, omega: Interval) -> Self {
        assert!(
            strength >= 0.0 && strength.is_finite(),
            "confinement strength must be nonnegative and finite, got {strength}"
        );
        Self { strength, omega }
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn omega(&self) -> Interval {
        self.omega
    }

    pub fn value(&self, x: f64) -> f64 {
        let k = self.strength;
        if x < self.omega.lo {
            0.5 * k * (x - self.omega.lo).powi(2)
        } else if x > self.omega.hi {
            0.5 * k * (x - self.omega.hi).powi(2)
        } else {
            0.0
        }
    }

    /// Derivative of [`Self::value`]; continuous across the interval ends.
    pub fn grad(&self, x: f64) -> f64 {
        let k = self.strength;
        if x < self.omega.lo {
            k * (x - self.omega.lo)
        } else if x > self.omega.hi {
            k * (x - self.omega.hi)
        } else {
            0.0
        }
    }

    /// Second derivative (piecewise constant, `k` outside the closure).
    pub fn curvature(&self, x: f64) -> f64 {
        if x < self.omega.lo || x > self.omega.hi {
            self.strength
        } else {
            0.0
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// External drift potential `V`. The dynamics use its mollified gradient
/// `d/dx (zeta_eps * V)`, which is identically zero in the [`Zero`] case
/// and computed by quadrature against the supplied derivative otherwise.
///
/// [`Zero`]: ExternalPotential::Zero
#[derive(Clone, Default)]
pub enum ExternalPotential {
    #[default]
    Zero,
    Custom {
        name: String,
        value: ScalarFn,
        /// Derivative of `V`; must be bounded.
        grad: ScalarFn,
        /// A lower bound on `V''` over the line, used by the stability
        /// rate. Zero is always safe for convex `V`.
        hessian_lower_bound: f64,
    },
}

impl fmt::Debug for ExternalPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl ExternalPotential {
    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    pub fn hessian_lower_bound(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Custom {
                hessian_lower_bound,
                ..
            } => *hessian_lower_bound,
        }
    }

    /// Mollified value `(zeta_eps * V)(x)`, the external term of the
    /// discrete energy.
    pub fn mollified_value(&self, mollifier: Mollifier, x: f64) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Custom { value, .. } => {
                let eps = mollifier.epsilon();
                let spec = QuadratureSpec::with_tols(1e-12, 1e-9);
                let (v, _) = integrate_interval(
                    |z| mollifier.eval(x - z) * value(z),
                    x - TAIL_WIDTHS * eps,
                    x + TAIL_WIDTHS * eps,
                    &spec,
                )?;
                Ok(v)
            }
        }
    }

    /// Mollified gradient `d/dx (zeta_eps * V)(x) = (zeta_eps * V')(x)`.
    /// Exactly zero in the `Zero` case.
    pub fn mollified_grad(&self, mollifier: Mollifier, x: f64) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Custom { grad, .. } => {
                let eps = mollifier.epsilon();
                let spec = QuadratureSpec::with_tols(1e-12, 1e-9);
                let (v, _) = integrate_interval(
                    |z| mollifier.eval(x - z) * grad(z),
                    x - TAIL_WIDTHS * eps,
                    x + TAIL_WIDTHS * eps,
                    &spec,
                )?;
                Ok(v)
            }
        }
    }

    /// Derivative of the mollified gradient, for the Jacobian diagonal:
    /// `(zeta_eps' * V')(x)`.
    pub fn mollified_curvature(&self, mollifier: Mollifier, x: f64) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Custom { grad, .. } => {
                let eps = mollifier.epsilon();
                let spec = QuadratureSpec::with_tols(1e-12, 1e-9);
                let (v, _) = integrate_interval(
                    |z| mollifier.grad(x - z) * grad(z),
                    x - TAIL_WIDTHS * eps,
                    x + TAIL_WIDTHS * eps,
                    &spec,
                )?;
                Ok(v)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn omega() -> Interval {
        Interval::default()
    }

    #[test]
    fn confine_reference_values() {
        let p = ConfiningPotential::new(100.0, omega());
        assert_eq!(p.value(0.5), 0.0);
        assert_eq!(p.value(-1.0), 0.0);
        assert_relative_eq!(p.value(1.1), 0.5, max_relative = 1e-12);
        assert_relative_eq!(p.grad(1.1), 10.0, max_relative = 1e-12);
        assert_relative_eq!(p.grad(-1.2), -20.0, max_relative = 1e-12);
        let huge = ConfiningPotential::new(1e9, omega());
        assert_eq!(huge.grad(0.0), 0.0);
    }

    #[test]
    fn confine_vanishes_exactly_on_closure_and_is_nonnegative() {
        let p = ConfiningPotential::new(1e6, omega());
        for i in 0..=100 {
            let x = -1.0 + 2.0 * i as f64 / 100.0;
            assert_eq!(p.value(x), 0.0);
        }
        for &x in &[-5.0, -1.0001, 1.0001, 3.0] {
            assert!(p.value(x) > 0.0);
        }
    }

    #[test]
    fn confine_grad_matches_finite_difference_away_from_kinks() {
        let p = ConfiningPotential::new(237.5, omega());
        let h = 1e-7;
        for &x in &[-3.0, -1.5, -0.5, 0.0, 0.7, 1.5, 2.5] {
            let fd = (p.value(x + h) - p.value(x - h)) / (2.0 * h);
            let g = p.grad(x);
            let scale = g.abs().max(fd.abs());
            if scale > 1e-9 {
                assert!((g - fd).abs() / scale < 1e-6, "x = {x}");
            } else {
                assert!((g - fd).abs() < 1e-6);
            }
        }
        // continuity across the kinks: the gradient vanishes at the ends
        // and grows linearly (slope k) just outside, so the one-sided
        // limits agree exactly.
        for k in [100.0, 1e9] {
            let p = ConfiningPotential::new(k, omega());
            assert!(p.grad(1.0) == 0.0 && p.grad(-1.0) == 0.0);
            let d = f64::EPSILON;
            assert!((p.grad(1.0 + d) - k * d).abs() <= 1e-9);
            assert!((p.grad(-1.0 - d) + k * d).abs() <= 1e-9);
        }
    }

    #[test]
    fn confinement_monotone_in_strength() {
        let x = 1.3;
        let mut last = -1.0;
        for k in [1.0, 10.0, 100.0, 1000.0] {
            let v = ConfiningPotential::new(k, omega()).value(x);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn zero_external_is_exactly_zero() {
        let v = ExternalPotential::Zero;
        let m = Mollifier::new(0.3);
        for &x in &[-2.0, 0.0, 5.0] {
            assert_eq!(v.mollified_grad(m, x).unwrap(), 0.0);
            assert_eq!(v.mollified_value(m, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn custom_external_even_potential_has_odd_gradient() {
        // smooth clamped quadratic: V = sqrt(1 + x^2) - 1, V' = x/sqrt(1 + x^2)
        let v = ExternalPotential::Custom {
            name: "clamped quadratic".into(),
            value: Arc::new(|x: f64| (1.0 + x * x).sqrt() - 1.0),
            grad: Arc::new(|x: f64| x / (1.0 + x * x).sqrt()),
            hessian_lower_bound: 0.0,
        };
        let m = Mollifier::new(0.4);
        assert!(v.mollified_grad(m, 0.0).unwrap().abs() < 1e-12);

        // quadrature gradient vs finite difference of the mollified value
        let h = 1e-5;
        for &x in &[0.3, -0.9, 1.4] {
            let g = v.mollified_grad(m, x).unwrap();
            let fd = (v.mollified_value(m, x + h).unwrap() - v.mollified_value(m, x - h).unwrap())
                / (2.0 * h);
            assert!((g - fd).abs() <= 1e-5 * g.abs().max(1.0), "x = {x}: {g} vs {fd}");
        }
    }
}
