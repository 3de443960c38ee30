//! Group parameters `V₁..V₄` and the effective correlation, derived from the
//! parameters of the full three-factor model.
//!
//! Everything here is an average against the invariant density of the fast
//! factor, `N(m, ν²)`, or a solution of a Poisson equation for its generator
//! `L₀ = ν²∂²_y + (m − y)∂_y`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GroupParams, HestonParams};
use crate::quadrature::{halfline_via_u, integrate, QuadratureSpec};

/// Shape of the volatility multiplier `f(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolFactor {
    /// `f(y) = e^{y − m − ν²}`, normalised so that `⟨f²⟩ = 1`.
    #[default]
    ExpOu,
    /// `f ≡ 1`: the fast factor drops out and the model is plain Heston.
    Unit,
}

/// Parameters of the full model. `heston.rho` holds the raw spot/variance
/// correlation `ρ_xz`, not the effective one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullModelParams {
    pub heston: HestonParams,
    pub epsilon: f64,
    pub m: f64,
    pub nu: f64,
    pub rho_xy: f64,
    pub rho_yz: f64,
    pub y0: f64,
    #[serde(default)]
    pub f_kind: VolFactor,
}

impl FullModelParams {
    pub fn rho_xz(&self) -> f64 {
        self.heston.rho
    }

    pub fn validate(&self) -> Result<()> {
        self.heston.validate_bounds()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.m.is_finite() && self.y0.is_finite()) {
            return Err(Error::InvalidParameter("m and y0 must be finite".into()));
        }
        check_correlations(self.rho_xy, self.rho_xz(), self.rho_yz)
    }

    /// `f(y)`.
    pub fn f(&self, y: f64) -> f64 {
        match self.f_kind {
            VolFactor::ExpOu => (y - self.m - self.nu * self.nu).exp(),
            VolFactor::Unit => 1.0,
        }
    }

    /// Same model with a different time-scale ratio.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..*self }
    }
}

/// Checks that the three pairwise correlations form a positive-definite
/// correlation matrix.
pub fn check_correlations(rho_xy: f64, rho_xz: f64, rho_yz: f64) -> Result<()> {
    for (name, r) in [("rho_xy", rho_xy), ("rho_xz", rho_xz), ("rho_yz", rho_yz)] {
        if !(r * r < 1.0) {
            return Err(Error::NotPositiveDefinite(format!("{name} = {r} must satisfy {name}² < 1")));
        }
    }
    let det_gap = rho_xy * rho_xy + rho_xz * rho_xz + rho_yz * rho_yz - 2.0 * rho_xy * rho_xz * rho_yz;
    if !(det_gap < 1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "ρ_xy² + ρ_xz² + ρ_yz² − 2ρ_xyρ_xzρ_yz = {det_gap} must be below 1"
        )));
    }
    Ok(())
}

fn tight() -> QuadratureSpec {
    QuadratureSpec::default().with_tolerances(1e-13, 1e-12)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `⟨g⟩ = ∫ g(y)Φ(y) dy` for the `N(m, ν²)` density `Φ`.
///
/// The integral starts on `m ± 8ν` and the window is widened while the
/// integrand is still visible at its ends.
pub fn gaussian_average<G>(g: G, m: f64, nu: f64) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
    }
    let h = |x: f64| g(m + nu * x) * std_normal_pdf(x);
    let spec = tight();
    let mut half_width = 8.0;
    loop {
        let est = integrate(h, -half_width, half_width, &spec)?;
        let edge = h(-half_width).abs().max(h(half_width).abs());
        if edge <= 1e-16 * est.value.abs().max(1.0) {
            return Ok(est.value);
        }
        if half_width >= 40.0 {
            return Err(Error::NonConvergence {
                context: "gaussian_average",
                estimate: est.value,
                error_bound: edge,
            });
        }
        half_width += 4.0;
    }
}

/// Derivative `χ′` of the polynomial-growth solution of `L₀χ = source`.
pub struct PoissonDerivative<S> {
    source: S,
    m: f64,
    nu: f64,
}

/// Sets up `χ′(y) = (1/(ν²Φ(y))) ∫_{−∞}^y source(u)Φ(u) du` after checking
/// that `source` is centred.
pub fn poisson_solve_derivative<S>(source: S, m: f64, nu: f64) -> Result<PoissonDerivative<S>>
where
    S: Fn(f64) -> f64,
{
    let mean = gaussian_average(&source, m, nu)?;
    let scale = gaussian_average(|y| source(y).abs(), m, nu)?;
    if mean.abs() > 1e-8 * (1.0 + scale) {
        return Err(Error::NotCentered { mean });
    }
    Ok(PoissonDerivative { source, m, nu })
}

impl<S: Fn(f64) -> f64> PoissonDerivative<S> {
    /// `χ′(y)`. With `x = (y − m)/ν` the integrating factor turns into
    /// `e^{(x² − x′²)/2}`. Below the mean the lower tail is integrated, above
    /// it the upper tail (which equals minus the lower one for a centred
    /// source), so the weight never grows.
    pub fn eval(&self, y: f64) -> Result<f64> {
        let x = (y - self.m) / self.nu;
        let src = |x: f64| (self.source)(self.m + self.nu * x);
        let spec = tight();
        let tail = if x <= 0.0 {
            halfline_via_u(|t| src(x - t) * (x * t - 0.5 * t * t).exp(), &spec)?.value
        } else {
            -halfline_via_u(|t| src(x + t) * (-x * t - 0.5 * t * t).exp(), &spec)?.value
        };
        Ok(tail / self.nu)
    }

    /// `ν²χ″ + (m − y)χ′ − source` with `χ″` from a fourth-order central
    /// difference of `χ′`, divided by `1 + |source| + |(m − y)χ′|` so that it
    /// is comparable across the exponentially growing tails.
    pub fn residual(&self, y: f64) -> Result<f64> {
        let h = 1e-2 * self.nu;
        let e = |k: f64| self.eval(y + k * h);
        let second = (-e(2.0)? + 8.0 * e(1.0)? - 8.0 * e(-1.0)? + e(-2.0)?) / (12.0 * h);
        let first = self.eval(y)?;
        let src = (self.source)(y);
        let drift = (self.m - y) * first;
        Ok((self.nu * self.nu * second + drift - src) / (1.0 + src.abs() + drift.abs()))
    }

    /// `⟨w·χ′⟩`.
    pub fn weighted_average<W: Fn(f64) -> f64>(&self, weight: W) -> Result<f64> {
        let failure = std::cell::RefCell::new(None);
        let avg = gaussian_average(
            |y| match self.eval(y) {
                Ok(v) => weight(y) * v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            },
            self.m,
            self.nu,
        );
        match failure.into_inner() {
            Some(e) => Err(e),
            None => avg,
        }
    }
}

/// Intermediate averages behind the group parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParamsReport {
    pub rho_effective: f64,
    pub group: GroupParams,
    /// `V₁..V₄` before the `√ε` scaling.
    pub unscaled: [f64; 4],
    pub mean_f: f64,
    pub mean_f_squared: f64,
    /// `⟨φ′⟩, ⟨ψ′⟩, ⟨fφ′⟩, ⟨fψ′⟩`.
    pub averages: [f64; 4],
}

/// `(ρ, Vᵉ)` where `ρ = ρ_xz⟨f⟩` and `Vᵉᵢ = √ε·Vᵢ`.
pub fn compute_group_params(fm: &FullModelParams) -> Result<(f64, GroupParams)> {
    let rep = group_params_report(fm)?;
    Ok((rep.rho_effective, rep.group))
}

pub fn group_params_report(fm: &FullModelParams) -> Result<GroupParamsReport> {
    fm.validate()?;
    let (m, nu) = (fm.m, fm.nu);
    let f = |y: f64| fm.f(y);
    let mean_f = gaussian_average(f, m, nu)?;
    let mean_f2 = gaussian_average(|y| f(y) * f(y), m, nu)?;

    let phi = poisson_solve_derivative(|y| 0.5 * (f(y) * f(y) - mean_f2), m, nu)?;
    let psi = poisson_solve_derivative(|y| f(y) - mean_f, m, nu)?;
    let averages = [
        phi.weighted_average(|_| 1.0)?,
        psi.weighted_average(|_| 1.0)?,
        phi.weighted_average(f)?,
        psi.weighted_average(f)?,
    ];

    let sigma = fm.heston.sigma;
    let rho_xz = fm.rho_xz();
    let c = nu * SQRT_2;
    let unscaled = [
        fm.rho_yz * sigma * c * averages[0],
        rho_xz * fm.rho_yz * sigma * sigma * c * averages[1],
        fm.rho_xy * c * averages[2],
        fm.rho_xy * rho_xz * sigma * c * averages[3],
    ];
    let group = GroupParams::from_array(unscaled).scaled(fm.epsilon.sqrt());
    if !group.is_finite() {
        return Err(Error::NonFinite("group parameters".into()));
    }
    Ok(GroupParamsReport {
        rho_effective: (rho_xz * mean_f).clamp(-1.0, 1.0),
        group,
        unscaled,
        mean_f,
        mean_f_squared: mean_f2,
        averages,
    })
}

/// The limiting Heston model: the full model's Heston block with `ρ_xz`
/// replaced by the effective correlation.
pub fn effective_heston(fm: &FullModelParams) -> Result<HestonParams> {
    fm.validate()?;
    let mean_f = gaussian_average(|y| fm.f(y), fm.m, fm.nu)?;
    Ok(HestonParams { rho: (fm.rho_xz() * mean_f).clamp(-1.0, 1.0), ..fm.heston })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model(nu: f64, m: f64) -> FullModelParams {
        FullModelParams {
            heston: HestonParams::new(1.0, 0.24, 0.39, -0.35, 0.24, 0.05).unwrap(),
            epsilon: 1e-2,
            m,
            nu,
            rho_xy: -0.35,
            rho_yz: 0.35,
            y0: m,
            f_kind: VolFactor::ExpOu,
        }
    }

    #[test]
    fn gaussian_average_examples() {
        assert_abs_diff_eq!(gaussian_average(|_| 1.0, 0.3, 1.7).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(gaussian_average(|y| y, 0.3, 1.7).unwrap(), 0.3, epsilon = 1e-13);
        let fm = model(1.0, 0.06);
        assert_abs_diff_eq!(gaussian_average(|y| fm.f(y).powi(2), 0.06, 1.0).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn poisson_examples() {
        let zero = poisson_solve_derivative(|_| 0.0, 0.0, 1.0).unwrap();
        assert_eq!(zero.eval(0.7).unwrap(), 0.0);
        let linear = poisson_solve_derivative(|y| y - 0.2, 0.2, 1.3).unwrap();
        for y in [-3.0, -0.5, 0.2, 1.0, 4.0] {
            assert_abs_diff_eq!(linear.eval(y).unwrap(), -1.0, epsilon = 1e-11);
        }
        assert!(matches!(poisson_solve_derivative(|y| y, 0.2, 1.0), Err(Error::NotCentered { .. })));
    }

    #[test]
    fn closed_form_averages_for_exponential_factor() {
        for nu in [0.5, 1.0, 1.5] {
            let rep = group_params_report(&model(nu, 0.06)).unwrap();
            let e = (-nu * nu / 2.0f64).exp();
            let expected = [
                -1.0,
                -e,
                -0.5 * e * ((2.0 * nu * nu).exp() - 1.0) / (nu * nu),
                -(1.0 - (-nu * nu).exp()) / (nu * nu),
            ];
            for (got, want) in rep.averages.iter().zip(expected) {
                assert_abs_diff_eq!(*got, want, epsilon = 1e-9 * want.abs().max(1.0));
            }
            assert_abs_diff_eq!(rep.mean_f, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_factor_gives_plain_heston() {
        let fm = FullModelParams { f_kind: VolFactor::Unit, ..model(1.0, 0.06) };
        let (rho, v) = compute_group_params(&fm).unwrap();
        assert_abs_diff_eq!(rho, -0.35, epsilon = 1e-13);
        assert!(v.as_array().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn correlations_must_be_positive_definite() {
        assert!(check_correlations(0.0, 0.0, 0.0).is_ok());
        assert!(check_correlations(0.9, 0.9, -0.9).is_err());
        assert!(check_correlations(0.0, 1.0, 0.0).is_err());
        let fm = FullModelParams { rho_xy: 0.99, rho_yz: -0.99, ..model(1.0, 0.0) };
        assert!(matches!(fm.validate(), Err(Error::NotPositiveDefinite(_))));
    }
}
