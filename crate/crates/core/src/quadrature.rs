//! Adaptive Gauss–Kronrod integration on finite intervals, plus the two domain
//! transforms the pricer relies on: the half-line to unit-interval map
//! `k_r = −log(u)/C_∞` and the triangle to rectangle map `s = t·v`.
//!
//! The 21-point Kronrod rule is open, so the integrand is never evaluated at
//! an endpoint. Integrands may be vector-valued; the error of a sub-interval is
//! the largest component error and the tolerance is checked against the
//! max-norm of the running estimate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances and transform constants for the integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of bisections per adaptive integral.
    pub max_subdivisions: usize,
    /// Decay scale of the half-line substitution in [`halfline_via_u`].
    pub c_infinity: f64,
    /// The pricer substitutes with `decay_fraction · C_∞`, where `C_∞` is
    /// implied by the model parameters. Below one the transformed integrand
    /// vanishes at `u = 0` instead of approaching a constant.
    pub decay_fraction: f64,
    /// Imaginary part of the Fourier contour for call payoffs.
    pub contour_k_i: f64,
    /// How the pricer evaluates `f̂₀`.
    pub f0_scheme: F0Scheme,
}

/// Evaluation of `f̂₀(τ,k) = ∫₀^τ ∫₀^t b(s)e^{A(t,s)} ds dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F0Scheme {
    /// Nested adaptive integral over the triangle, mapped to a rectangle.
    #[default]
    Rectangle,
    /// Order of integration swapped and the inner `t`-integral done in closed
    /// form, leaving one integral over `s` shared with `f̂₁`.
    ClosedFormInner,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-8,
            max_subdivisions: 400,
            c_infinity: 1.0,
            decay_fraction: 0.35,
            contour_k_i: 1.5,
            f0_scheme: F0Scheme::Rectangle,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::InvalidParameter("max_subdivisions must be at least 1".into()));
        }
        if !(self.c_infinity > 0.0 && self.c_infinity.is_finite()) {
            return Err(Error::InvalidParameter(format!("c_infinity must be positive, got {}", self.c_infinity)));
        }
        if !(self.decay_fraction > 0.0 && self.decay_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "decay_fraction must lie in (0, 1], got {}",
                self.decay_fraction
            )));
        }
        Ok(())
    }

    pub fn with_tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_c_infinity(mut self, c_infinity: f64) -> Self {
        self.c_infinity = c_infinity;
        self
    }

    /// Spec for an integral nested inside another: ten times tighter.
    pub fn with_f0_scheme(mut self, scheme: F0Scheme) -> Self {
        self.f0_scheme = scheme;
        self
    }

    pub fn inner(&self) -> Self {
        Self {
            abs_tol: self.abs_tol / 10.0,
            rel_tol: self.rel_tol / 10.0,
            ..*self
        }
    }
}

/// Result of an integration together with its error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

// Kronrod abscissae (non-negative half) and weights; odd indices are the
// 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077982971140451,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
    splittable: bool,
}

/// One 21-point Kronrod evaluation on `[a, b]` for an `n`-component integrand.
fn gk21<F>(f: &mut F, n: usize, a: f64, b: f64, scratch: &mut [Vec<f64>; 21]) -> (Vec<f64>, f64)
where
    F: FnMut(f64, &mut [f64]),
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    for (j, x) in XGK.iter().enumerate() {
        let dx = half * x;
        if j == 10 {
            f(centre, &mut scratch[20]);
        } else {
            f(centre - dx, &mut scratch[j]);
            f(centre + dx, &mut scratch[19 - j]);
        }
    }
    let mut value = vec![0.0; n];
    let mut worst = 0.0f64;
    for c in 0..n {
        let at = |j: usize| -> (f64, f64) {
            if j == 10 {
                (scratch[20][c], 0.0)
            } else {
                (scratch[j][c], scratch[19 - j][c])
            }
        };
        let mut resk = 0.0;
        let mut resg = 0.0;
        let mut resabs = 0.0;
        for j in 0..11 {
            let (lo, hi) = at(j);
            let sum = lo + hi;
            resk += WGK[j] * sum;
            resabs += WGK[j] * (lo.abs() + hi.abs());
            if j % 2 == 1 {
                resg += WG[j / 2] * sum;
            }
        }
        let mean = 0.5 * resk;
        let mut resasc = 0.0;
        for j in 0..11 {
            let (lo, hi) = at(j);
            resasc += if j == 10 {
                WGK[j] * (lo - mean).abs()
            } else {
                WGK[j] * ((lo - mean).abs() + (hi - mean).abs())
            };
        }
        let resk_scaled = resk * half;
        let resabs = resabs * half.abs();
        let resasc = resasc * half.abs();
        let mut err = ((resk - resg) * half).abs();
        if resasc != 0.0 && err != 0.0 {
            err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
        }
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            err = err.max(50.0 * f64::EPSILON * resabs);
        }
        if !resk_scaled.is_finite() {
            err = f64::INFINITY;
        }
        value[c] = resk_scaled;
        worst = worst.max(err);
    }
    (value, worst)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Adaptive integration of an `n`-component integrand over `[a, b]`.
///
/// Never fails: a non-converged result carries the best estimate seen (the
/// partition with the smallest total error estimate) and `converged = false`.
pub fn integrate_vec<F>(n: usize, mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Estimate<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut scratch: [Vec<f64>; 21] = std::array::from_fn(|_| vec![0.0; n]);
    let (value, error) = gk21(&mut f, n, a, b, &mut scratch);
    let mut evaluations = 21;
    let mut segments = vec![Segment { a, b, value, error, splittable: true }];

    let totals = |segments: &[Segment]| -> (Vec<f64>, f64) {
        let mut v = vec![0.0; n];
        let mut e = 0.0;
        for s in segments {
            for (acc, x) in v.iter_mut().zip(&s.value) {
                *acc += x;
            }
            e += s.error;
        }
        (v, e)
    };

    let (mut value, mut error) = totals(&segments);
    let mut best = (value.clone(), error);
    let tolerance = |v: &[f64]| spec.abs_tol.max(spec.rel_tol * max_norm(v));

    for _ in 0..spec.max_subdivisions {
        if error <= tolerance(&value) {
            return Estimate { value, error, evaluations, converged: true };
        }
        let Some(worst) = segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.splittable)
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
        else {
            break;
        };
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            segments.push(Segment { splittable: false, ..seg });
            continue;
        }
        let (lv, le) = gk21(&mut f, n, seg.a, mid, &mut scratch);
        let (rv, re) = gk21(&mut f, n, mid, seg.b, &mut scratch);
        evaluations += 42;
        segments.push(Segment { a: seg.a, b: mid, value: lv, error: le, splittable: true });
        segments.push(Segment { a: mid, b: seg.b, value: rv, error: re, splittable: true });
        (value, error) = totals(&segments);
        if error < best.1 {
            best = (value.clone(), error);
        }
    }
    let converged = error <= tolerance(&value);
    if converged {
        return Estimate { value, error, evaluations, converged };
    }
    Estimate { value: best.0, error: best.1, evaluations, converged: false }
}

fn scalar_result(context: &'static str, est: Estimate<Vec<f64>>) -> Result<Estimate<f64>> {
    let value = est.value[0];
    if !est.converged {
        return Err(Error::NonConvergence { context, estimate: value, error_bound: est.error });
    }
    Ok(Estimate { value, error: est.error, evaluations: est.evaluations, converged: true })
}

/// `∫_a^b f`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate<f64>>
where
    F: FnMut(f64) -> f64,
{
    spec.validate()?;
    let est = integrate_vec(1, |x, out: &mut [f64]| out[0] = f(x), a, b, spec);
    scalar_result("integrate", est)
}

/// `∫_0^1 f`, never evaluating `f` at either endpoint.
pub fn integrate_unit<F>(f: F, spec: &QuadratureSpec) -> Result<Estimate<f64>>
where
    F: FnMut(f64) -> f64,
{
    integrate(f, 0.0, 1.0, spec)
}

/// Complex-valued `∫_a^b f`.
pub fn integrate_complex<F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate<Complex64>>
where
    F: FnMut(f64) -> Complex64,
{
    spec.validate()?;
    let est = integrate_vec(
        2,
        |x, out: &mut [f64]| {
            let v = f(x);
            out[0] = v.re;
            out[1] = v.im;
        },
        a,
        b,
        spec,
    );
    let value = Complex64::new(est.value[0], est.value[1]);
    if !est.converged {
        return Err(Error::NonConvergence {
            context: "integrate_complex",
            estimate: value.norm(),
            error_bound: est.error,
        });
    }
    Ok(Estimate { value, error: est.error, evaluations: est.evaluations, converged: true })
}

/// Maps `u ∈ (0,1)` to `k_r = −log(u)/C_∞` and returns `(k_r, dk_r/du)`.
#[inline]
pub fn u_to_halfline(u: f64, c_infinity: f64) -> (f64, f64) {
    (-u.ln() / c_infinity, 1.0 / (u * c_infinity))
}

/// `∫_0^∞ f(k_r) dk_r` through the substitution `k_r = −log(u)/C_∞`, with
/// `C_∞` taken from `spec`. No cutoff in `k_r` is introduced.
pub fn halfline_via_u<F>(mut f: F, spec: &QuadratureSpec) -> Result<Estimate<f64>>
where
    F: FnMut(f64) -> f64,
{
    spec.validate()?;
    let c = spec.c_infinity;
    let est = integrate_vec(
        1,
        |u, out: &mut [f64]| {
            let (k_r, jac) = u_to_halfline(u, c);
            let fk = f(k_r);
            out[0] = if fk == 0.0 { 0.0 } else { fk * jac };
        },
        0.0,
        1.0,
        spec,
    );
    scalar_result("halfline_via_u", est)
}

/// Rewrites an integrand `f(t, s)` over the triangle `0 ≤ s ≤ t ≤ τ` as an
/// integrand over `(t, v) ∈ (0, τ) × (0, 1)` via `s = t·v`, `ds = t·dv`.
pub fn triangle_to_rect<T, F>(f: F) -> impl Fn(f64, f64) -> T
where
    F: Fn(f64, f64) -> T,
    T: std::ops::Mul<f64, Output = T>,
{
    move |t, v| f(t, t * v) * t
}

/// `∫_0^τ ∫_0^t f(t, s) ds dt` for an `n`-component integrand, evaluated as
/// a nested integral over the rectangle. The inner integral runs at
/// [`QuadratureSpec::inner`] tolerances.
pub fn integrate_triangle_vec<F>(n: usize, mut f: F, tau: f64, spec: &QuadratureSpec) -> Estimate<Vec<f64>>
where
    F: FnMut(f64, f64, &mut [f64]),
{
    let inner_spec = spec.inner();
    let mut inner_failed = false;
    let mut inner_error = 0.0f64;
    let mut inner_evals = 0;
    let mut outer = integrate_vec(
        n,
        |t, out: &mut [f64]| {
            let est = integrate_vec(
                n,
                |v, o: &mut [f64]| {
                    f(t, t * v, o);
                    for x in o.iter_mut() {
                        *x *= t;
                    }
                },
                0.0,
                1.0,
                &inner_spec,
            );
            inner_failed |= !est.converged;
            inner_error = inner_error.max(est.error);
            inner_evals += est.evaluations;
            out.copy_from_slice(&est.value);
        },
        0.0,
        tau,
        spec,
    );
    outer.error += inner_error * tau;
    outer.evaluations += inner_evals;
    outer.converged &= !inner_failed;
    outer
}

/// Scalar convenience wrapper over [`integrate_triangle_vec`].
pub fn integrate_triangle<F>(f: F, tau: f64, spec: &QuadratureSpec) -> Result<Estimate<f64>>
where
    F: Fn(f64, f64) -> f64,
{
    spec.validate()?;
    let est = integrate_triangle_vec(1, |t, s, out: &mut [f64]| out[0] = f(t, s), tau, spec);
    scalar_result("integrate_triangle", est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tight() -> QuadratureSpec {
        QuadratureSpec::default().with_tolerances(1e-13, 1e-12)
    }

    #[test]
    fn rule_is_exact_for_high_degree_polynomials() {
        // Kronrod-21 integrates degree 31 exactly on a single panel.
        let spec = QuadratureSpec { max_subdivisions: 1, ..tight() };
        for deg in [0, 5, 19, 30, 31] {
            let est = integrate_vec(1, |x, o: &mut [f64]| o[0] = x.powi(deg), -1.0, 1.0, &spec);
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((est.value[0] - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn unit_interval_examples() {
        let spec = tight();
        assert_relative_eq!(integrate_unit(|_| 1.0, &spec).unwrap().value, 1.0, epsilon = 1e-14);
        let log = integrate_unit(|u| -u.ln(), &spec).unwrap();
        assert_relative_eq!(log.value, 1.0, epsilon = 1e-11);
        let spec = QuadratureSpec::default();
        let root = integrate_unit(|u| 1.0 / u.sqrt(), &spec).unwrap();
        assert!((root.value - 2.0).abs() <= root.error.max(1e-8));
    }

    #[test]
    fn endpoints_are_never_evaluated() {
        let est = integrate_unit(
            |u| {
                assert!(u > 0.0 && u < 1.0);
                u.ln().powi(2)
            },
            &tight(),
        )
        .unwrap();
        assert_relative_eq!(est.value, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn non_convergence_reports_best_estimate() {
        let spec = QuadratureSpec { max_subdivisions: 2, ..tight() };
        match integrate_unit(|u| (1.0 / u).sin() / u.sqrt(), &spec) {
            Err(Error::NonConvergence { estimate, error_bound, .. }) => {
                assert!(estimate.is_finite());
                assert!(error_bound > 0.0);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn halfline_examples() {
        let c = 2.7;
        let spec = tight().with_c_infinity(c);
        let est = halfline_via_u(|k| (-k * c).exp(), &spec).unwrap();
        assert_relative_eq!(est.value, 1.0 / c, epsilon = 1e-13);
        // exp(−k²): the transformed integrand is no longer constant
        let spec = QuadratureSpec::default().with_c_infinity(1.0);
        let est = halfline_via_u(|k| (-k * k).exp(), &spec).unwrap();
        assert!((est.value - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-8);
    }

    #[test]
    fn triangle_examples() {
        let spec = tight();
        assert_relative_eq!(integrate_triangle(|_, _| 1.0, 2.0, &spec).unwrap().value, 2.0, epsilon = 1e-13);
        assert_relative_eq!(integrate_triangle(|_, s| s, 1.0, &spec).unwrap().value, 1.0 / 6.0, epsilon = 1e-13);
        let g = triangle_to_rect(|_t: f64, s: f64| s * s);
        assert_relative_eq!(g(2.0, 0.5), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn complex_integrand() {
        let est = integrate_complex(|x| Complex64::new(0.0, x).exp(), 0.0, std::f64::consts::PI, &tight()).unwrap();
        assert!((est.value - Complex64::new(0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = QuadratureSpec { abs_tol: 0.0, ..QuadratureSpec::default() };
        assert!(integrate_unit(|u| u, &spec).is_err());
        let spec = QuadratureSpec { c_infinity: -1.0, ..QuadratureSpec::default() };
        assert!(halfline_via_u(|k| (-k).exp(), &spec).is_err());
    }
}
