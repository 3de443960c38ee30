//! European option prices: the Heston price `P_H` and the fast-factor
//! correction `P₁ᵉ`, both as Fourier integrals along `k = k_r + i·k_i`.
//!
//! The `k_r` half-line is mapped onto `(0,1)` with `k_r = −log(u)/C_∞`, the
//! even/odd symmetry of the integrand folds `ℝ` onto `ℝ₊`, and the triangular
//! `(s, t)` domain of `P₁,₀` is integrated as a rectangle. All strikes that
//! share a maturity are integrated together on the same nodes, so the kernel
//! (`Ĝ`, `f̂₀`, `f̂₁`) is computed once per node.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{dot, GroupParams, HestonParams, Kernel, Wavenumber};
use crate::quadrature::{integrate_triangle_vec, integrate_vec, u_to_halfline, Estimate, F0Scheme, QuadratureSpec};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `log` of the smallest positive normal double; beyond this `Ĝ` is zero.
const UNDERFLOW_EXPONENT: f64 = -708.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Call,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    /// Expiry in years from time zero.
    pub expiry: f64,
    pub payoff_kind: PayoffKind,
    pub spot: f64,
    pub valuation_time: f64,
}

impl OptionSpec {
    /// Call struck at `strike`, valued today.
    pub fn call(spot: f64, strike: f64, expiry: f64) -> Self {
        Self { strike, expiry, payoff_kind: PayoffKind::Call, spot, valuation_time: 0.0 }
    }

    pub fn put(spot: f64, strike: f64, expiry: f64) -> Self {
        Self { payoff_kind: PayoffKind::Put, ..Self::call(spot, strike, expiry) }
    }

    pub fn tau(&self) -> f64 {
        self.expiry - self.valuation_time
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::InvalidParameter(format!("strike must be positive, got {}", self.strike)));
        }
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(Error::InvalidParameter(format!("spot must be positive, got {}", self.spot)));
        }
        if !(self.expiry > self.valuation_time && self.tau().is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "expiry {} must be after valuation time {}",
                self.expiry, self.valuation_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceWarning {
    /// First-order corrected price came out negative: the correction is
    /// outside its range of validity.
    NegativeTotal,
}

/// Price split into its Heston and correction parts, with the raw integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBreakdown {
    pub p_heston: f64,
    pub p_correction: f64,
    pub p00: f64,
    pub p10: f64,
    pub p11: f64,
    pub quadrature_error: f64,
    pub warning: Option<PriceWarning>,
}

impl PriceBreakdown {
    pub fn total(&self) -> f64 {
        self.p_heston + self.p_correction
    }
}

/// Call payoff transform `K^{1+ik}/(ik − k²)`, valid for `k_i > 1`.
pub fn payoff_transform_call(k: Wavenumber, strike: f64) -> Result<Complex64> {
    payoff_transform(PayoffKind::Call, k, strike)
}

/// Payoff transform for calls (`k_i > 1`) and puts (`k_i < 0`). Both have
/// the same closed form; only the strip of convergence differs.
pub fn payoff_transform(kind: PayoffKind, k: Wavenumber, strike: f64) -> Result<Complex64> {
    let admissible = match kind {
        PayoffKind::Call => k.k_i > 1.0,
        PayoffKind::Put => k.k_i < 0.0,
    };
    if !admissible {
        return Err(Error::ContourViolation { k_i: k.k_i });
    }
    if !(strike > 0.0) {
        return Err(Error::InvalidParameter(format!("strike must be positive, got {strike}")));
    }
    let k = k.complex();
    Ok(((1.0 + I * k) * strike.ln()).exp() / (I * k - k * k))
}

/// Decay scale `C_∞ = √(1−ρ²)/σ · (z + κθτ)` of the Fourier integrand.
pub fn c_infinity(p: &HestonParams, tau: f64) -> f64 {
    // |ρ| → 1 kills the leading-order decay; keep the substitution usable.
    let root = (1.0 - p.rho * p.rho).max(0.0).sqrt().max(0.05);
    root / p.sigma * (p.z + p.kappa * p.theta * tau)
}

/// Imaginary part of the contour used for a given payoff.
pub fn contour_for(kind: PayoffKind, spec: &QuadratureSpec) -> f64 {
    match kind {
        PayoffKind::Call => spec.contour_k_i,
        // mirror of the call contour about k_i = 1/2, i.e. as far from the
        // pole at k = 0 as the call contour is from k = i
        PayoffKind::Put => 1.0 - spec.contour_k_i,
    }
}

/// Options sharing one maturity, payoff kind and spot.
#[derive(Debug, Clone)]
struct Slice {
    tau: f64,
    kind: PayoffKind,
    spot: f64,
    strikes: Vec<f64>,
}

/// Per-node quantities shared by every strike in a slice.
struct Node {
    k: Complex64,
    /// `−ikq + C + zD`
    log_common: Complex64,
    jac: f64,
}

impl Slice {
    fn q(&self, p: &HestonParams) -> f64 {
        p.r * self.tau + self.spot.ln()
    }

    /// Kernel at `u`, nudged along the contour if it lands on a removable
    /// singularity. `None` when `Ĝ` underflows.
    fn node(&self, u: f64, p: &HestonParams, c_inf: f64, k_i: f64) -> Result<Option<(Kernel, Node)>> {
        let (mut k_r, jac) = u_to_halfline(u, c_inf);
        let mut attempt = 0;
        let kernel = loop {
            match Kernel::new(Wavenumber::new(k_r, k_i), p) {
                Ok(kern) => break kern,
                Err(Error::NearSingular { .. }) if attempt < 3 => {
                    attempt += 1;
                    k_r += 1e-7 * (1.0 + k_r);
                }
                Err(e) => return Err(e),
            }
        };
        let log_g_hat = match kernel.log_g_hat(self.tau) {
            Ok(v) => v,
            Err(Error::NearSingular { .. }) => {
                let shifted = Kernel::new(Wavenumber::new(k_r * (1.0 + 1e-7) + 1e-9, k_i), p)?;
                return self.finish_node(shifted, shifted.log_g_hat(self.tau)?, p, jac);
            }
            Err(e) => return Err(e),
        };
        self.finish_node(kernel, log_g_hat, p, jac)
    }

    fn finish_node(
        &self,
        kernel: Kernel,
        log_g_hat: Complex64,
        p: &HestonParams,
        jac: f64,
    ) -> Result<Option<(Kernel, Node)>> {
        if log_g_hat.re < UNDERFLOW_EXPONENT {
            return Ok(None);
        }
        let k = kernel.k;
        let node = Node { k, log_common: -I * k * self.q(p) + log_g_hat, jac };
        Ok(Some((kernel, node)))
    }

    /// `e^{−ikq}Ĝ(τ,k)ĥ(k)` for one strike.
    #[inline]
    fn base(node: &Node, ln_strike: f64) -> Complex64 {
        let k = node.k;
        (node.log_common + (1.0 + I * k) * ln_strike).exp() / (I * k - k * k)
    }

    fn check_contour(&self, k_i: f64) -> Result<()> {
        let probe = Wavenumber::new(0.0, k_i);
        payoff_transform(self.kind, probe, 1.0).map(|_| ())
    }

    /// Raw folded integrals `P₀,₀` for each strike.
    fn heston_integrals(&self, p: &HestonParams, spec: &QuadratureSpec) -> Result<Estimate<Vec<f64>>> {
        let k_i = contour_for(self.kind, spec);
        self.check_contour(k_i)?;
        let c_inf = c_infinity(p, self.tau) * spec.decay_fraction;
        let ln_strikes: Vec<f64> = self.strikes.iter().map(|k| k.ln()).collect();
        let mut failure: Option<Error> = None;
        let est = integrate_vec(
            ln_strikes.len(),
            |u, out: &mut [f64]| {
                out.fill(0.0);
                if failure.is_some() {
                    return;
                }
                match self.node(u, p, c_inf, k_i) {
                    Ok(Some((_, node))) => {
                        for (o, &lk) in out.iter_mut().zip(&ln_strikes) {
                            *o = 2.0 * Self::base(&node, lk).re * node.jac;
                        }
                    }
                    Ok(None) => {}
                    Err(e) => failure = Some(e),
                }
            },
            0.0,
            1.0,
            spec,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(est)
    }

    /// Raw folded correction integrals for the four unit group-parameter
    /// vectors: per strike, `[P₁,₀ for V₁..V₄, P₁,₁ for V₁..V₄]`.
    fn correction_integrals(&self, p: &HestonParams, spec: &QuadratureSpec) -> Result<Estimate<Vec<f64>>> {
        let k_i = contour_for(self.kind, spec);
        self.check_contour(k_i)?;
        let c_inf = c_infinity(p, self.tau) * spec.decay_fraction;
        let ln_strikes: Vec<f64> = self.strikes.iter().map(|k| k.ln()).collect();
        let mut failure: Option<Error> = None;
        let mut inner_failed = false;
        let est = integrate_vec(
            8 * ln_strikes.len(),
            |u, out: &mut [f64]| {
                out.fill(0.0);
                if failure.is_some() {
                    return;
                }
                let (kernel, node) = match self.node(u, p, c_inf, k_i) {
                    Ok(Some(pair)) => pair,
                    Ok(None) => return,
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                };
                let (f0, f1) = match f_hat_basis(&kernel, self.tau, spec) {
                    Ok(pair) => pair,
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                };
                inner_failed |= !(f0.converged && f1.converged);
                for (chunk, &lk) in out.chunks_exact_mut(8).zip(&ln_strikes) {
                    let base = Self::base(&node, lk) * (2.0 * node.jac);
                    for i in 0..4 {
                        chunk[i] = (base * f0.value[i]).re;
                        chunk[4 + i] = (base * f1.value[i]).re;
                    }
                }
            },
            0.0,
            1.0,
            spec,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(Estimate { converged: est.converged && !inner_failed, ..est })
    }
}

/// `f̂₀(τ,k)` and `f̂₁(τ,k)` for the four unit group-parameter vectors.
///
/// `f̂₁ = ∫₀^τ b(s)e^{A(τ,s)} ds` and
/// `f̂₀ = ∫₀^τ ∫₀^t b(s)e^{A(t,s)} ds dt`, the latter over the rectangle.
/// `spec` is the tolerance of the enclosing price integral; every
/// one-dimensional integral here runs at its inner tolerance.
fn f_hat_basis(
    kernel: &Kernel,
    tau: f64,
    spec: &QuadratureSpec,
) -> Result<(Estimate<[Complex64; 4]>, Estimate<[Complex64; 4]>)> {
    if spec.f0_scheme == F0Scheme::ClosedFormInner {
        return f_hat_basis_reduced(kernel, tau, spec);
    }
    let mut failure: Option<Error> = None;
    let slice = kernel.at_maturity(tau)?;
    let inner = spec.inner();
    let f1 = integrate_vec(
        8,
        |s, out: &mut [f64]| match slice.weighted_basis(s) {
            Ok(w) => unpack(&w, out),
            Err(e) => {
                failure.get_or_insert(e);
                out.fill(0.0);
            }
        },
        0.0,
        tau,
        &inner,
    );
    let mut last_t = f64::NAN;
    let mut slice_t = None;
    let f0 = integrate_triangle_vec(
        8,
        |t, s, out: &mut [f64]| {
            if t != last_t {
                last_t = t;
                slice_t = match kernel.at_maturity(t) {
                    Ok(sl) => Some(sl),
                    Err(e) => {
                        failure.get_or_insert(e);
                        None
                    }
                };
            }
            match slice_t.as_ref().map(|sl| sl.weighted_basis(s)) {
                Some(Ok(w)) => unpack(&w, out),
                Some(Err(e)) => {
                    failure.get_or_insert(e);
                    out.fill(0.0);
                }
                None => out.fill(0.0),
            }
        },
        tau,
        spec,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((pack(f0), pack(f1)))
}

/// Both `f̂`s from one 16-component integral over `s`.
fn f_hat_basis_reduced(
    kernel: &Kernel,
    tau: f64,
    spec: &QuadratureSpec,
) -> Result<(Estimate<[Complex64; 4]>, Estimate<[Complex64; 4]>)> {
    let mut failure: Option<Error> = None;
    let slice = kernel.at_maturity(tau)?;
    let est = integrate_vec(
        16,
        |s, out: &mut [f64]| match slice.weighted_basis_pair(s) {
            Ok((w1, w0)) => {
                unpack(&w0, &mut out[..8]);
                unpack(&w1, &mut out[8..]);
            }
            Err(e) => {
                failure.get_or_insert(e);
                out.fill(0.0);
            }
        },
        0.0,
        tau,
        &spec.inner(),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let half = |range: std::ops::Range<usize>| Estimate {
        value: est.value[range].to_vec(),
        error: est.error,
        evaluations: est.evaluations,
        converged: est.converged,
    };
    Ok((pack(half(0..8)), pack(half(8..16))))
}

#[inline]
fn unpack(w: &[Complex64; 4], out: &mut [f64]) {
    for (i, c) in w.iter().enumerate() {
        out[2 * i] = c.re;
        out[2 * i + 1] = c.im;
    }
}

fn pack(est: Estimate<Vec<f64>>) -> Estimate<[Complex64; 4]> {
    let v = &est.value;
    Estimate {
        value: std::array::from_fn(|i| Complex64::new(v[2 * i], v[2 * i + 1])),
        error: est.error,
        evaluations: est.evaluations,
        converged: est.converged,
    }
}

/// `f̂₁(τ,k)` for group parameters `v`.
pub fn f1_hat(tau: f64, k: Wavenumber, p: &HestonParams, v: &GroupParams, spec: &QuadratureSpec) -> Result<Complex64> {
    let (_, f1) = f_hats(tau, k, p, v, spec)?;
    Ok(f1)
}

/// `f̂₀(τ,k)` for group parameters `v`.
pub fn f0_hat(tau: f64, k: Wavenumber, p: &HestonParams, v: &GroupParams, spec: &QuadratureSpec) -> Result<Complex64> {
    let (f0, _) = f_hats(tau, k, p, v, spec)?;
    Ok(f0)
}

fn f_hats(
    tau: f64,
    k: Wavenumber,
    p: &HestonParams,
    v: &GroupParams,
    spec: &QuadratureSpec,
) -> Result<(Complex64, Complex64)> {
    spec.validate()?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("τ must be non-negative, got {tau}")));
    }
    let zero = Complex64::new(0.0, 0.0);
    if tau == 0.0 || v.is_zero() {
        return Ok((zero, zero));
    }
    let kernel = Kernel::new(k, p)?;
    let (f0, f1) = f_hat_basis(&kernel, tau, spec)?;
    if !f1.converged {
        return Err(Error::NonConvergence { context: "f1_hat", estimate: dot(&f1.value, v).norm(), error_bound: f1.error });
    }
    if !f0.converged {
        return Err(Error::NonConvergence { context: "f0_hat", estimate: dot(&f0.value, v).norm(), error_bound: f0.error });
    }
    Ok((dot(&f0.value, v), dot(&f1.value, v)))
}

/// Heston price `P_H`; the correction fields of the breakdown are zero.
pub fn price_heston(opt: &OptionSpec, p: &HestonParams, spec: &QuadratureSpec) -> Result<PriceBreakdown> {
    price_slice(&[*opt], p, None, spec).pop().expect("one result per option")
}

/// Corrected price `P_H + P₁ᵉ`.
pub fn price_corrected(
    opt: &OptionSpec,
    p: &HestonParams,
    v: &GroupParams,
    spec: &QuadratureSpec,
) -> Result<PriceBreakdown> {
    price_slice(&[*opt], p, Some(v), spec).pop().expect("one result per option")
}

/// Corrected prices for many options sharing spot and valuation time.
///
/// Options with a common maturity and payoff are integrated together; each
/// element carries its own result, and one failing group does not stop the
/// others.
pub fn price_grid(
    opts: &[OptionSpec],
    p: &HestonParams,
    v: &GroupParams,
    spec: &QuadratureSpec,
) -> Vec<Result<PriceBreakdown>> {
    if opts.is_empty() {
        return Vec::new();
    }
    let (spot, valuation) = (opts[0].spot, opts[0].valuation_time);
    let mut results: Vec<Option<Result<PriceBreakdown>>> = vec![None; opts.len()];
    let mut groups: Vec<((u64, PayoffKind), Vec<usize>)> = Vec::new();
    for (i, o) in opts.iter().enumerate() {
        if o.spot != spot || o.valuation_time != valuation {
            results[i] = Some(Err(Error::InvalidParameter(
                "price_grid options must share spot and valuation time".into(),
            )));
            continue;
        }
        if let Err(e) = o.validate() {
            results[i] = Some(Err(e));
            continue;
        }
        let key = (o.tau().to_bits(), o.payoff_kind);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((key, vec![i])),
        }
    }

    let eval = |idx: &Vec<usize>| -> Vec<Result<PriceBreakdown>> {
        let group: Vec<OptionSpec> = idx.iter().map(|&i| opts[i]).collect();
        price_slice(&group, p, Some(v), spec)
    };
    #[cfg(feature = "parallel")]
    let priced: Vec<Vec<Result<PriceBreakdown>>> = {
        use rayon::prelude::*;
        groups.par_iter().map(|(_, idx)| eval(idx)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let priced: Vec<Vec<Result<PriceBreakdown>>> = groups.iter().map(|(_, idx)| eval(idx)).collect();

    for ((_, idx), res) in groups.iter().zip(priced) {
        for (&i, r) in idx.iter().zip(res) {
            results[i] = Some(r);
        }
    }
    results.into_iter().map(|r| r.expect("every option assigned")).collect()
}

/// Prices a group sharing `τ`, payoff kind and spot. `v = None` skips the
/// correction integrals altogether.
fn price_slice(
    opts: &[OptionSpec],
    p: &HestonParams,
    v: Option<&GroupParams>,
    spec: &QuadratureSpec,
) -> Vec<Result<PriceBreakdown>> {
    let fail_all = |e: Error| opts.iter().map(|_| Err(e.clone())).collect();
    if let Err(e) = spec.validate().and_then(|_| p.validate_bounds()) {
        return fail_all(e);
    }
    if let Some(v) = v {
        if !v.is_finite() {
            return fail_all(Error::InvalidParameter("group parameters must be finite".into()));
        }
    }
    for o in opts {
        if let Err(e) = o.validate() {
            return fail_all(e);
        }
    }
    let first = opts[0];
    let slice = Slice {
        tau: first.tau(),
        kind: first.payoff_kind,
        spot: first.spot,
        strikes: opts.iter().map(|o| o.strike).collect(),
    };
    let discount = (-p.r * slice.tau).exp() / (2.0 * PI);

    let heston = match slice.heston_integrals(p, spec) {
        Ok(est) if est.converged => est,
        Ok(est) => {
            return fail_all(Error::NonConvergence {
                context: "p00",
                estimate: discount * est.value[0],
                error_bound: discount * est.error,
            })
        }
        Err(e) => return fail_all(e),
    };

    let correction = match v {
        Some(v) if !v.is_zero() => match slice.correction_integrals(p, spec) {
            Ok(est) if est.converged => Some((v, est)),
            Ok(est) => {
                return fail_all(Error::NonConvergence {
                    context: "p10+p11",
                    estimate: discount * est.value.iter().take(8).sum::<f64>(),
                    error_bound: discount * est.error,
                })
            }
            Err(e) => return fail_all(e),
        },
        _ => None,
    };

    let kappa_theta = p.kappa * p.theta;
    (0..opts.len())
        .map(|j| {
            let p00 = heston.value[j];
            let mut out = PriceBreakdown {
                p_heston: discount * p00,
                p_correction: 0.0,
                p00,
                p10: 0.0,
                p11: 0.0,
                quadrature_error: discount * heston.error,
                warning: None,
            };
            if let Some((v, est)) = &correction {
                let chunk = &est.value[8 * j..8 * j + 8];
                let va = v.as_array();
                out.p10 = (0..4).map(|i| va[i] * chunk[i]).sum();
                out.p11 = (0..4).map(|i| va[i] * chunk[4 + i]).sum();
                out.p_correction = discount * (kappa_theta * out.p10 + p.z * out.p11);
                let weight: f64 = va.iter().map(|x| x.abs()).sum();
                out.quadrature_error += discount * est.error * weight * (kappa_theta + p.z);
            }
            if out.total() < 0.0 {
                out.warning = Some(PriceWarning::NegativeTotal);
            }
            Ok(out)
        })
        .collect()
}

/// Unfolded `∫_ℝ e^{−ikq}Ĝĥ dk_r` as a complex number. Its imaginary part
/// should vanish; exposed as a diagnostic for the folding step.
pub fn p00_full_line(opt: &OptionSpec, p: &HestonParams, spec: &QuadratureSpec) -> Result<Complex64> {
    opt.validate()?;
    spec.validate()?;
    let slice = Slice { tau: opt.tau(), kind: opt.payoff_kind, spot: opt.spot, strikes: vec![opt.strike] };
    let k_i = contour_for(opt.payoff_kind, spec);
    slice.check_contour(k_i)?;
    let c_inf = c_infinity(p, slice.tau) * spec.decay_fraction;
    let lk = opt.strike.ln();
    let q = slice.q(p);
    let mut failure = None;
    let mut integrand = |k_r: f64| -> Complex64 {
        let k = Complex64::new(k_r, k_i);
        let kern = match Kernel::new(k.into(), p) {
            Ok(kern) => kern,
            Err(e) => {
                failure.get_or_insert(e);
                return Complex64::new(0.0, 0.0);
            }
        };
        match kern.log_g_hat(slice.tau) {
            Ok(lg) if lg.re >= UNDERFLOW_EXPONENT => {
                (-I * k * q + lg + (1.0 + I * k) * lk).exp() / (I * k - k * k)
            }
            Ok(_) => Complex64::new(0.0, 0.0),
            Err(e) => {
                failure.get_or_insert(e);
                Complex64::new(0.0, 0.0)
            }
        }
    };
    let est = integrate_vec(
        2,
        |u, out: &mut [f64]| {
            let (k_r, jac) = u_to_halfline(u, c_inf);
            let v = (integrand(k_r) + integrand(-k_r)) * jac;
            out[0] = v.re;
            out[1] = v.im;
        },
        0.0,
        1.0,
        spec,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    if !est.converged {
        return Err(Error::NonConvergence { context: "p00_full_line", estimate: est.value[0], error_bound: est.error });
    }
    Ok(Complex64::new(est.value[0], est.value[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> HestonParams {
        HestonParams::new(1.0, 0.24, 0.39, -0.35 * (-0.5f64).exp(), 0.24, 0.05).unwrap()
    }

    #[test]
    fn payoff_transform_examples() {
        let h = payoff_transform_call(Wavenumber::new(0.0, 2.0), 1.0).unwrap();
        assert_relative_eq!(h.re, 0.5, epsilon = 1e-15);
        assert!(h.im.abs() < 1e-15);
        assert!(matches!(
            payoff_transform_call(Wavenumber::new(0.3, 1.0), 100.0),
            Err(Error::ContourViolation { .. })
        ));
        assert!(payoff_transform(PayoffKind::Put, Wavenumber::new(0.3, 0.5), 100.0).is_err());
        assert!(payoff_transform(PayoffKind::Put, Wavenumber::new(0.3, -0.5), 100.0).is_ok());
    }

    #[test]
    fn heston_price_sits_inside_no_arbitrage_band() {
        let p = table1();
        let spec = QuadratureSpec::default();
        for strike in [60.0, 100.0, 150.0] {
            let opt = OptionSpec::call(100.0, strike, 1.0);
            let price = price_heston(&opt, &p, &spec).unwrap();
            let lower = (100.0 - strike * (-p.r).exp()).max(0.0);
            assert!(price.p_heston > lower && price.p_heston < 100.0, "K = {strike}: {}", price.p_heston);
            assert_eq!(price.p_correction, 0.0);
        }
    }

    #[test]
    fn zero_group_params_reproduce_heston_bit_for_bit() {
        let p = table1();
        let spec = QuadratureSpec::default();
        let opt = OptionSpec::call(100.0, 95.0, 0.5);
        let h = price_heston(&opt, &p, &spec).unwrap();
        let c = price_corrected(&opt, &p, &GroupParams::ZERO, &spec).unwrap();
        assert_eq!(h.p_heston.to_bits(), c.p_heston.to_bits());
        assert_eq!(c.p_correction, 0.0);
        assert_eq!(c.total(), h.p_heston);
    }

    #[test]
    fn f_hats_vanish_at_zero_maturity_and_zero_v() {
        let p = table1();
        let spec = QuadratureSpec::default();
        let k = Wavenumber::new(0.8, 1.5);
        let v = GroupParams::new(-0.02, 0.001, 0.1, -0.004);
        assert_eq!(f1_hat(0.0, k, &p, &v, &spec).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(f0_hat(0.0, k, &p, &v, &spec).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(f1_hat(0.7, k, &p, &GroupParams::ZERO, &spec).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn invalid_options_are_rejected() {
        let p = table1();
        let spec = QuadratureSpec::default();
        let opt = OptionSpec { strike: -1.0, ..OptionSpec::call(100.0, 1.0, 1.0) };
        assert!(price_heston(&opt, &p, &spec).is_err());
        let opt = OptionSpec { valuation_time: 2.0, ..OptionSpec::call(100.0, 100.0, 1.0) };
        assert!(price_heston(&opt, &p, &spec).is_err());
        let bad_contour = QuadratureSpec { contour_k_i: 0.9, ..spec };
        assert!(matches!(
            price_heston(&OptionSpec::call(100.0, 100.0, 1.0), &p, &bad_contour),
            Err(Error::ContourViolation { .. })
        ));
    }

    #[test]
    fn large_group_params_flag_negative_totals() {
        let p = table1();
        let spec = QuadratureSpec::default();
        let opt = OptionSpec::call(100.0, 160.0, 0.25);
        let v = GroupParams::new(0.0, 0.0, -3.0, 0.0);
        let price = price_corrected(&opt, &p, &v, &spec).unwrap();
        if price.total() < 0.0 {
            assert_eq!(price.warning, Some(PriceWarning::NegativeTotal));
        } else {
            assert_eq!(price.warning, None);
        }
    }

    #[test]
    fn grid_preserves_order_and_reports_bad_elements() {
        let p = table1();
        let spec = QuadratureSpec::default();
        let v = GroupParams::new(-0.02, 0.0016, 0.096, -0.0043);
        let opts = vec![
            OptionSpec::call(100.0, 90.0, 0.5),
            OptionSpec::call(100.0, -5.0, 0.5),
            OptionSpec::call(100.0, 110.0, 1.0),
        ];
        let res = price_grid(&opts, &p, &v, &spec);
        assert_eq!(res.len(), 3);
        assert!(res[0].is_ok() && res[1].is_err() && res[2].is_ok());
        assert!(price_grid(&[], &p, &v, &spec).is_empty());
    }
}
