//! The Gaussian smoothing kernel and its derivatives.

use std::f64::consts::PI;

/// Gaussian mollifier with standard deviation `epsilon`: the only smoothing
/// kernel used by the simulator. Even, strictly positive, unit mass.
///
/// Decay beyond ten bandwidths is below 1e-22 of the peak, which is what
/// the quadrature truncation rule in [`crate::target`] relies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    epsilon: f64,
}

impl Mollifier {
    /// # Panics
    /// Panics unless `epsilon > 0` and finite.
    pub fn new(epsilon: f64) -> Self {
        assert!(
            epsilon > 0.0 && epsilon.is_finite(),
            "mollifier bandwidth must be positive and finite, got {epsilon}"
        );
        Self { epsilon }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Kernel value: the Gaussian density with standard deviation `epsilon`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let e = self.epsilon;
        (-x * x / (2.0 * e * e)).exp() / (2.0 * PI * e * e).sqrt()
    }

    /// Kernel derivative `-x/eps^2 * eval(x)`; odd in `x`.
    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        -x / (self.epsilon * self.epsilon) * self.eval(x)
    }

    /// The self-convolution `(zeta_eps * zeta_eps)(x)`: a Gaussian density
    /// with variance `2 eps^2`. The constant-weight kernel closed forms are
    /// multiples of this.
    #[inline]
    pub fn self_convolution(&self, x: f64) -> f64 {
        let e = self.epsilon;
        (-x * x / (4.0 * e * e)).exp() / (4.0 * PI * e * e).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_interval, QuadratureSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn peak_value_is_inverse_sqrt_two_pi() {
        let m = Mollifier::new(1.0);
        assert_eq!(m.eval(0.0), 0.3989422804014327);
    }

    #[test]
    fn far_tail_is_negligible() {
        let m = Mollifier::new(0.1);
        let v = m.eval(1.0);
        assert!(v > 0.0 && v <= 1.93e-21, "tail value {v}");
    }

    #[test]
    fn grad_reference_value() {
        let m = Mollifier::new(1.0);
        assert_eq!(m.grad(0.0), 0.0);
        assert_relative_eq!(m.grad(1.0), -0.24197072451914337, max_relative = 1e-15);
    }

    #[test]
    fn self_convolution_peak() {
        let m = Mollifier::new(1.0);
        // 1/(2 sqrt(pi))
        assert_relative_eq!(m.self_convolution(0.0), 0.28209479177387814, max_relative = 1e-15);
    }

    #[test]
    fn unit_mass_across_bandwidths() {
        let spec = QuadratureSpec::with_tols(1e-13, 1e-12);
        for &eps in &[0.01, 0.1, 1.0] {
            let m = Mollifier::new(eps);
            let (v, _) =
                integrate_interval(|x| m.eval(x), -12.0 * eps, 12.0 * eps, &spec).unwrap();
            assert!((v - 1.0).abs() < 1e-10, "eps = {eps}, mass = {v}");
        }
    }

    #[test]
    fn grad_matches_finite_difference() {
        for &eps in &[0.01, 0.1, 1.0] {
            let m = Mollifier::new(eps);
            let h = 1e-6 * eps.max(1.0);
            for i in 0..100 {
                let x = -5.0 * eps + 10.0 * eps * (i as f64) / 99.0;
                let fd = (m.eval(x + h) - m.eval(x - h)) / (2.0 * h);
                let g = m.grad(x);
                let scale = g.abs().max(fd.abs()).max(1e-300);
                if scale > 1e-30 {
                    assert!(
                        (g - fd).abs() / scale < 1e-6,
                        "eps = {eps}, x = {x}: grad {g} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn self_convolution_matches_quadrature() {
        let spec = QuadratureSpec::with_tols(1e-14, 1e-12);
        for &eps in &[0.25, 1.0] {
            let m = Mollifier::new(eps);
            for &x in &[0.0f64, 0.3, -0.7, 1.5] {
                let (v, _) = integrate_interval(
                    |z| m.eval(x - z) * m.eval(z),
                    x.min(0.0) - 10.0 * eps,
                    x.max(0.0) + 10.0 * eps,
                    &spec,
                )
                .unwrap();
                assert_relative_eq!(m.self_convolution(x), v, max_relative = 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn eval_even_nonnegative(eps in 0.05f64..2.0, x in -5.0f64..5.0) {
            let m = Mollifier::new(eps);
            prop_assert!(m.eval(x) >= 0.0);
            // strictly positive until the exponential underflow range
            if x.abs() <= 10.0 * eps {
                prop_assert!(m.eval(x) > 0.0);
            }
            prop_assert_eq!(m.eval(x), m.eval(-x));
        }

        #[test]
        fn grad_odd(eps in 0.05f64..2.0, x in -5.0f64..5.0) {
            let m = Mollifier::new(eps);
            prop_assert_eq!(m.grad(x), -m.grad(-x));
        }
    }
}
