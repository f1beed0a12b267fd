//! Adaptive 1-D integration on a Gauss-Kronrod 7/15 pair, plus the error
//! function used throughout the closed-form kernels.
//!
//! Integration over the whole line is always reduced to a finite interval
//! by the caller (Gaussian tails are truncated at ten bandwidths, which
//! contributes relative mass below 1e-22); this module never accepts
//! infinite limits.

use crate::{CompensatedSum, Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Tolerances and subdivision budget for [`integrate_interval`].
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Interior points where the integrand may be non-smooth (piecewise
    /// targets declare their breakpoints here); the interval is pre-split
    /// at each one.
    pub breakpoints: Vec<f64>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_subdivisions: 400,
            breakpoints: Vec::new(),
        }
    }
}

impl QuadratureSpec {
    pub fn with_tols(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_breakpoints(mut self, breakpoints: &[f64]) -> Self {
        self.breakpoints = breakpoints.to_vec();
        self
    }
}

// 15-point Kronrod abscissae (positive half) with the embedded 7-point
// Gauss rule at the odd indices. Standard QUADPACK constants.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss-Kronrod 15/7 evaluation over `[a, b]`: returns the Kronrod
/// value and an error estimate from the Gauss/Kronrod difference.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut resabs = WGK[7] * fc.abs();
    let mut fvals = [(fc, fc); 8];
    fvals[7] = (fc, fc);

    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fvals[j] = (f1, f2);
        let sum = f1 + f2;
        kronrod += WGK[j] * sum;
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }

    let mean = 0.5 * kronrod;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fvals[j].0 - mean).abs() + (fvals[j].1 - mean).abs());
    }
    resasc *= half.abs();
    resabs *= half.abs();

    let value = kronrod * half;
    let mut err = ((kronrod - gauss) * half).abs();
    // QUADPACK error rescaling: sharpen the raw Gauss/Kronrod difference.
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) && floor > err {
        err = floor;
    }
    (value, err)
}

#[derive(Debug)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    seq: usize,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err && self.seq == other.seq
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        // Worst error first; ties broken by insertion order so that the
        // subdivision sequence (and hence the result) is deterministic.
        self.err
            .total_cmp(&other.err)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Adaptive integration of `f` over `[a, b]`.
///
/// Splits at any declared breakpoints, then repeatedly bisects the segment
/// with the largest error estimate until the total estimate satisfies
/// `max(abs_tol, rel_tol * |value|)` or the subdivision budget is spent.
/// Returns the value and the final error estimate.
pub fn integrate_interval<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    assert!(a < b, "integrate_interval requires a < b, got [{a}, {b}]");

    let mut edges: Vec<f64> = vec![a];
    let mut cuts: Vec<f64> = spec
        .breakpoints
        .iter()
        .copied()
        .filter(|p| *p > a && *p < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    edges.extend(cuts);
    edges.push(b);

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    for w in edges.windows(2) {
        let (value, err) = gk15(&f, w[0], w[1]);
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            err,
            seq,
        });
        seq += 1;
    }

    let total = |heap: &BinaryHeap<Segment>| {
        let mut v = CompensatedSum::new();
        let mut e = 0.0;
        let mut segs: Vec<&Segment> = heap.iter().collect();
        segs.sort_by(|p, q| p.a.total_cmp(&q.a));
        for s in &segs {
            v.add(s.value);
            e += s.err;
        }
        (v.value(), e)
    };

    let mut subdivisions = 0usize;
    loop {
        let (value, err) = total(&heap);
        if err <= spec.abs_tol.max(spec.rel_tol * value.abs()) {
            return Ok((value, err));
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::QuadratureFailure {
                a,
                b,
                err_estimate: err,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval no longer representable; keep its estimate and stop
            // subdividing it.
            let err_estimate = err;
            heap.push(worst);
            if heap.iter().all(|s| {
                let m = 0.5 * (s.a + s.b);
                m <= s.a || m >= s.b
            }) {
                return Err(Error::QuadratureFailure {
                    a,
                    b,
                    err_estimate,
                    subdivisions,
                });
            }
            subdivisions += 1;
            continue;
        }
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (value, err) = gk15(&f, lo, hi);
            heap.push(Segment {
                a: lo,
                b: hi,
                value,
                err,
                seq,
            });
            seq += 1;
        }
        subdivisions += 1;
    }
}

/// The standard error function. Accepts infinite arguments (`erf(+-inf) =
/// +-1`), which the piecewise-constant kernel formulas rely on.
pub fn erf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return -1.0;
    }
    libm::erf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn constant_is_exact() {
        let spec = QuadratureSpec::default();
        let (v, _) = integrate_interval(|_| 1.0, -1.0, 1.0, &spec).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn monomial_to_machine_precision() {
        let spec = QuadratureSpec::default();
        let (v, _) = integrate_interval(|x| x * x, 0.0, 1.0, &spec).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_gaussian_has_unit_mass() {
        // integral of the eps = 0.1 Gaussian over (-1, 1) is erf(1/(0.1 sqrt 2)),
        // which is 1 to well below the tolerance.
        let eps = 0.1f64;
        let spec = QuadratureSpec::with_tols(1e-14, 1e-12);
        let (v, _) = integrate_interval(
            |x: f64| (-x * x / (2.0 * eps * eps)).exp() / (eps * (2.0 * std::f64::consts::PI).sqrt()),
            -1.0,
            1.0,
            &spec,
        )
        .unwrap();
        assert_relative_eq!(v, erf(1.0 / (eps * 2.0f64.sqrt())), max_relative = 1e-12);
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn breakpoints_make_step_function_exact() {
        let spec = QuadratureSpec::default().with_breakpoints(&[0.25]);
        let f = |x: f64| if x < 0.25 { 1.0 } else { 3.0 };
        let (v, _) = integrate_interval(f, 0.0, 1.0, &spec).unwrap();
        assert!((v - (0.25 + 3.0 * 0.75)).abs() < 1e-13);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let spec = QuadratureSpec {
            abs_tol: 1e-300,
            rel_tol: 1e-16,
            max_subdivisions: 3,
            breakpoints: Vec::new(),
        };
        let r = integrate_interval(|x: f64| (1e6 * x).sin().abs(), 0.0, 1.0, &spec);
        assert!(matches!(r, Err(Error::QuadratureFailure { .. })));
    }

    #[test]
    fn erf_reference_values() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(1.0) - 0.8427007929497149).abs() < 1e-15);
        assert_eq!(erf(f64::INFINITY), 1.0);
        assert_eq!(erf(f64::NEG_INFINITY), -1.0);
    }

    #[test]
    fn erf_matches_quadrature_of_defining_integral() {
        // erf(x) = 2/sqrt(pi) int_0^x exp(-t^2) dt
        let spec = QuadratureSpec::with_tols(1e-15, 1e-13);
        for &x in &[0.1, 0.5, 1.0, 1.7, 2.5, 4.0] {
            let (v, _) = integrate_interval(|t: f64| (-t * t).exp(), 0.0, x, &spec).unwrap();
            let expect = 2.0 / std::f64::consts::PI.sqrt() * v;
            assert!((erf(x) - expect).abs() <= 1e-12, "x = {x}");
        }
    }

    proptest! {
        #[test]
        fn erf_is_odd(x in -6.0f64..6.0) {
            prop_assert!((erf(-x) + erf(x)).abs() < 1e-15);
        }

        #[test]
        fn additivity_over_split(c in -0.9f64..0.9) {
            let spec = QuadratureSpec::default();
            let f = |x: f64| (3.0 * x).cos() + x * x;
            let (whole, e) = integrate_interval(f, -1.0, 1.0, &spec).unwrap();
            let (left, e1) = integrate_interval(f, -1.0, c, &spec).unwrap();
            let (right, e2) = integrate_interval(f, c, 1.0, &spec).unwrap();
            prop_assert!((left + right - whole).abs() <= (e + e1 + e2).max(1e-12));
        }
    }
}
