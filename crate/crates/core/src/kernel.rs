//! Complex building blocks of the Heston characteristic function and of the
//! fast-factor correction kernel.
//!
//! Everything here is written in the rotation-safe form: `C` and `A` take the
//! logarithm of `ζ(τ,k) = (1 − g⁻¹e^{−τd}) / (1 − g⁻¹)` pointwise, so the
//! integrands stay continuous in `k_r` along a horizontal contour. `D` is the
//! algebraically identical `e^{−τd}` rearrangement of the textbook ratio, which
//! cannot overflow for large `τ·|d|`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Relative size below which a denominator is treated as vanishing.
pub const NEAR_SINGULAR_FLOOR: f64 = 1e-12;

/// Observable-market Heston parameters plus the risk-free rate.
///
/// `rho` is the *effective* spot/variance correlation; for the multi-scale
/// model this is `ρ_xz⟨f⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub z: f64,
    pub r: f64,
}

impl HestonParams {
    /// Validated constructor; rejects parameter sets violating `2κθ ≥ σ²`.
    pub fn new(kappa: f64, theta: f64, sigma: f64, rho: f64, z: f64, r: f64) -> Result<Self> {
        let p = Self { kappa, theta, sigma, rho, z, r };
        p.validate()?;
        Ok(p)
    }

    /// Same as [`HestonParams::new`] but skips the Feller check. Calibration
    /// uses this while exploring; the positivity checks still apply.
    pub fn new_allow_feller_violation(
        kappa: f64,
        theta: f64,
        sigma: f64,
        rho: f64,
        z: f64,
        r: f64,
    ) -> Result<Self> {
        let p = Self { kappa, theta, sigma, rho, z, r };
        p.validate_bounds()?;
        Ok(p)
    }

    pub fn validate_bounds(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("sigma", self.sigma),
            ("z", self.z),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.rho * self.rho <= 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if !self.r.is_finite() {
            return Err(Error::InvalidParameter("rate must be finite".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_bounds()?;
        if !self.satisfies_feller() {
            return Err(Error::FellerViolation {
                two_kappa_theta: 2.0 * self.kappa * self.theta,
                sigma_squared: self.sigma * self.sigma,
            });
        }
        Ok(())
    }

    pub fn satisfies_feller(&self) -> bool {
        2.0 * self.kappa * self.theta >= self.sigma * self.sigma
    }

    /// `κ + ρσik`
    #[inline]
    pub fn beta(&self, k: Complex64) -> Complex64 {
        self.kappa + I * k * (self.rho * self.sigma)
    }
}

/// A point `k = k_r + i·k_i` on a horizontal integration contour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavenumber {
    pub k_r: f64,
    pub k_i: f64,
}

impl Wavenumber {
    pub fn new(k_r: f64, k_i: f64) -> Self {
        Self { k_r, k_i }
    }

    #[inline]
    pub fn complex(self) -> Complex64 {
        Complex64::new(self.k_r, self.k_i)
    }

    /// Mirror image `−k̄` on the same contour.
    pub fn mirrored(self) -> Self {
        Self { k_r: -self.k_r, k_i: self.k_i }
    }
}

impl From<Complex64> for Wavenumber {
    fn from(k: Complex64) -> Self {
        Self { k_r: k.re, k_i: k.im }
    }
}

/// Group parameters `V₁ᵉ..V₄ᵉ` of the first-order correction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupParams {
    pub v1e: f64,
    pub v2e: f64,
    pub v3e: f64,
    pub v4e: f64,
}

impl GroupParams {
    pub const ZERO: GroupParams = GroupParams { v1e: 0.0, v2e: 0.0, v3e: 0.0, v4e: 0.0 };

    pub fn new(v1e: f64, v2e: f64, v3e: f64, v4e: f64) -> Self {
        Self { v1e, v2e, v3e, v4e }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self { v1e: v[0], v2e: v[1], v3e: v[2], v4e: v[3] }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.v1e, self.v2e, self.v3e, self.v4e]
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_array(self.as_array().map(|v| v * c))
    }

    /// Unit vector along `V_{index+1}`.
    pub fn unit(index: usize) -> Self {
        let mut v = [0.0; 4];
        v[index] = 1.0;
        Self::from_array(v)
    }
}

/// Principal square root with `Re ≥ 0`, ties broken toward `Im ≥ 0`.
#[inline]
fn principal_sqrt(w: Complex64) -> Complex64 {
    let s = w.sqrt();
    if s.re < 0.0 || (s.re == 0.0 && s.im < 0.0) {
        -s
    } else {
        s
    }
}

/// `d(k) = √(σ²(k² − ik) + (κ + ρσik)²)`, principal branch.
pub fn d(k: Wavenumber, p: &HestonParams) -> Complex64 {
    let k = k.complex();
    let beta = p.beta(k);
    principal_sqrt(p.sigma * p.sigma * (k * k - I * k) + beta * beta)
}

/// `g(k) = (κ + ρσik + d) / (κ + ρσik − d)`.
pub fn g(k: Wavenumber, p: &HestonParams) -> Result<Complex64> {
    let kc = k.complex();
    let beta = p.beta(kc);
    let dk = d(k, p);
    let den = beta - dk;
    if den.norm() <= NEAR_SINGULAR_FLOOR * (beta.norm() + dk.norm()) {
        return Err(Error::NearSingular { term: "g", k: kc });
    }
    Ok((beta + dk) / den)
}

/// Per-wavenumber kernel with the `τ`-independent pieces (`β`, `d`, `1/g`)
/// computed once. All the `τ`-dependent functions hang off this.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    pub k: Complex64,
    pub beta: Complex64,
    pub d: Complex64,
    /// `1/g = (β − d)/(β + d)`
    pub inv_g: Complex64,
    kappa_theta: f64,
    sigma_sq: f64,
    z: f64,
}

impl Kernel {
    pub fn new(k: Wavenumber, p: &HestonParams) -> Result<Self> {
        let kc = k.complex();
        let beta = p.beta(kc);
        let dk = d(k, p);
        let plus = beta + dk;
        if plus.norm() <= NEAR_SINGULAR_FLOOR * (beta.norm() + dk.norm()).max(f64::MIN_POSITIVE) {
            return Err(Error::NearSingular { term: "1/g", k: kc });
        }
        Ok(Self {
            k: kc,
            beta,
            d: dk,
            inv_g: (beta - dk) / plus,
            kappa_theta: p.kappa * p.theta,
            sigma_sq: p.sigma * p.sigma,
            z: p.z,
        })
    }

    /// `ζ(τ,k)` together with `e^{−τd}`.
    #[inline]
    fn zeta_and_decay(&self, tau: f64) -> (Complex64, Complex64) {
        let decay = (-tau * self.d).exp();
        ((1.0 - self.inv_g * decay) / (1.0 - self.inv_g), decay)
    }

    pub fn zeta(&self, tau: f64) -> Complex64 {
        self.zeta_and_decay(tau).0
    }

    /// Principal `log ζ(τ,k)`; fails only if `ζ` sits exactly on the cut.
    pub fn log_zeta(&self, tau: f64) -> Result<Complex64> {
        let zeta = self.zeta(tau);
        self.checked_log(zeta, tau)
    }

    #[inline]
    fn checked_log(&self, zeta: Complex64, tau: f64) -> Result<Complex64> {
        if zeta.im == 0.0 && zeta.re <= 0.0 {
            return Err(Error::BranchCrossing { tau, k: self.k });
        }
        Ok(zeta.ln())
    }

    /// `D(τ,k)`, solution of the Riccati equation with `D(0,k) = 0`.
    pub fn big_d(&self, tau: f64) -> Result<Complex64> {
        if tau == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let decay = (-tau * self.d).exp();
        self.big_d_from_decay(decay)
    }

    #[inline]
    fn big_d_from_decay(&self, decay: Complex64) -> Result<Complex64> {
        let den = 1.0 - self.inv_g * decay;
        if den.norm() <= NEAR_SINGULAR_FLOOR {
            return Err(Error::NearSingular { term: "D", k: self.k });
        }
        Ok((self.beta - self.d) / self.sigma_sq * (1.0 - decay) / den)
    }

    /// `C(τ,k) = κθ/σ²((κ + ρσik − d)τ − 2 log ζ(τ,k))`.
    pub fn big_c(&self, tau: f64) -> Result<Complex64> {
        if tau == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let log_zeta = self.log_zeta(tau)?;
        Ok(self.kappa_theta / self.sigma_sq * ((self.beta - self.d) * tau - 2.0 * log_zeta))
    }

    /// `C(τ,k) + zD(τ,k)`, the exponent of `Ĝ`.
    pub fn log_g_hat(&self, tau: f64) -> Result<Complex64> {
        if tau == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let (zeta, decay) = self.zeta_and_decay(tau);
        let log_zeta = self.checked_log(zeta, tau)?;
        let c = self.kappa_theta / self.sigma_sq * ((self.beta - self.d) * tau - 2.0 * log_zeta);
        Ok(c + self.z * self.big_d_from_decay(decay)?)
    }

    pub fn g_hat(&self, tau: f64) -> Result<Complex64> {
        Ok(self.log_g_hat(tau)?.exp())
    }

    /// Prefactor `(κ + ρσik + d)(1 − g)/(d·g)` of `A`.
    fn a_prefactor(&self) -> Result<Complex64> {
        if self.d.norm() <= NEAR_SINGULAR_FLOOR * self.beta.norm().max(1.0) {
            return Err(Error::NearSingular { term: "A", k: self.k });
        }
        Ok((self.beta + self.d) * (self.inv_g - 1.0) / self.d)
    }

    /// `A(τ,k,s)` in the difference-of-logs form.
    pub fn big_a(&self, tau: f64, s: f64) -> Result<Complex64> {
        if !(0.0 <= s && s <= tau) {
            return Err(Error::InvalidParameter(format!("A requires 0 ≤ s ≤ τ, got s = {s}, τ = {tau}")));
        }
        let pre = self.a_prefactor()?;
        let span = self.d * (tau - s);
        Ok(pre * (span + self.log_zeta(tau)? - self.log_zeta(s)?) + span)
    }

    /// Terms of `b(s,k)` for the unit group-parameter vectors:
    /// `b(s,k) = Σᵢ Vᵢ·basis[i]`.
    pub fn b_basis(&self, s: f64) -> Result<[Complex64; 4]> {
        let dv = self.big_d(s)?;
        Ok(self.b_basis_with_d(dv))
    }

    #[inline]
    fn b_basis_with_d(&self, dv: Complex64) -> [Complex64; 4] {
        let k = self.k;
        let k2 = k * k;
        [
            -(dv * (-k2 + I * k)),
            -(dv * dv * (-I * k)),
            -(I * k2 * k + k2),
            -(dv * (-k2)),
        ]
    }

    /// `b(s,k)` for a given set of group parameters.
    pub fn b_source(&self, s: f64, v: &GroupParams) -> Result<Complex64> {
        let basis = self.b_basis(s)?;
        Ok(dot(&basis, v))
    }

    /// Correction integrand pieces along `s ∈ [0, τ]` for a fixed `τ`.
    pub fn at_maturity(&self, tau: f64) -> Result<KernelSlice<'_>> {
        let den_tau = 1.0 - self.inv_g * (-tau * self.d).exp();
        if den_tau.norm() <= NEAR_SINGULAR_FLOOR {
            return Err(Error::NearSingular { term: "ζ(τ)", k: self.k });
        }
        Ok(KernelSlice {
            kernel: self,
            tau,
            log_zeta_tau: self.log_zeta(tau)?,
            prefactor: self.a_prefactor()?,
            den_tau,
        })
    }
}

/// Kernel evaluated against a fixed outer maturity `τ`, so that `log ζ(τ)` and
/// the `A` prefactor are computed once for a whole inner `s`-integration.
#[derive(Debug, Clone, Copy)]
pub struct KernelSlice<'a> {
    kernel: &'a Kernel,
    tau: f64,
    log_zeta_tau: Complex64,
    prefactor: Complex64,
    /// `1 − e^{−τd}/g`
    den_tau: Complex64,
}

impl KernelSlice<'_> {
    /// `b_i(s,k)·e^{A(τ,k,s)}` for the four unit group-parameter vectors.
    pub fn weighted_basis(&self, s: f64) -> Result<[Complex64; 4]> {
        let kern = self.kernel;
        let (zeta, decay) = kern.zeta_and_decay(s);
        let log_zeta_s = kern.checked_log(zeta, s)?;
        let dv = if s == 0.0 { Complex64::new(0.0, 0.0) } else { kern.big_d_from_decay(decay)? };
        let span = kern.d * (self.tau - s);
        let a = self.prefactor * (span + self.log_zeta_tau - log_zeta_s) + span;
        let w = a.exp();
        Ok(kern.b_basis_with_d(dv).map(|b| b * w))
    }

    /// `∫_s^τ e^{A(u,k,s)} du`. Since `e^{A(u,s)} = e^{−d(u−s)}ζ(s)²/ζ(u)²`
    /// the integral is elementary:
    /// `(1 − e^{−d(τ−s)})(1 − e^{−ds}/g) / (d(1 − e^{−dτ}/g))`.
    pub fn propagator_integral(&self, s: f64) -> Complex64 {
        let kern = self.kernel;
        let span = self.tau - s;
        let dx = kern.d * span;
        // (1 − e^{−dx})/d, with its Taylor series where d·x is tiny
        let growth = if dx.norm() < 1e-6 {
            span * (1.0 - 0.5 * dx + dx * dx / 6.0)
        } else {
            (1.0 - (-dx).exp()) / kern.d
        };
        growth * (1.0 - kern.inv_g * (-s * kern.d).exp()) / self.den_tau
    }

    /// `b_i(s)e^{A(τ,s)}` and `b_i(s)∫_s^τ e^{A(u,s)} du` in one pass: the
    /// integrands of `f̂₁(τ)` and `f̂₀(τ)` over `s`.
    pub fn weighted_basis_pair(&self, s: f64) -> Result<([Complex64; 4], [Complex64; 4])> {
        let kern = self.kernel;
        let (zeta, decay) = kern.zeta_and_decay(s);
        let log_zeta_s = kern.checked_log(zeta, s)?;
        let dv = if s == 0.0 { Complex64::new(0.0, 0.0) } else { kern.big_d_from_decay(decay)? };
        let span = kern.d * (self.tau - s);
        let a = self.prefactor * (span + self.log_zeta_tau - log_zeta_s) + span;
        let w1 = a.exp();
        let w0 = self.propagator_integral(s);
        let basis = kern.b_basis_with_d(dv);
        Ok((basis.map(|b| b * w1), basis.map(|b| b * w0)))
    }
}

#[inline]
pub(crate) fn dot(basis: &[Complex64; 4], v: &GroupParams) -> Complex64 {
    basis[0] * v.v1e + basis[1] * v.v2e + basis[2] * v.v3e + basis[3] * v.v4e
}

/// `D(τ,k)`.
pub fn big_d(tau: f64, k: Wavenumber, p: &HestonParams) -> Result<Complex64> {
    check_tau(tau)?;
    Kernel::new(k, p)?.big_d(tau)
}

/// `C(τ,k)` via the `ζ` representation.
pub fn big_c(tau: f64, k: Wavenumber, p: &HestonParams) -> Result<Complex64> {
    check_tau(tau)?;
    Kernel::new(k, p)?.big_c(tau)
}

/// `Ĝ(τ,k,z) = exp(C + zD)` with `z` taken from `p`.
pub fn g_hat(tau: f64, k: Wavenumber, p: &HestonParams) -> Result<Complex64> {
    check_tau(tau)?;
    if k.k_r == 0.0 && k.k_i == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    Kernel::new(k, p)?.g_hat(tau)
}

/// `A(τ,k,s)` in the difference-of-logs form.
pub fn big_a(tau: f64, k: Wavenumber, s: f64, p: &HestonParams) -> Result<Complex64> {
    check_tau(tau)?;
    Kernel::new(k, p)?.big_a(tau, s)
}

/// Source term `b(τ,k)` of the `f̂₁` equation.
pub fn b_source(tau: f64, k: Wavenumber, p: &HestonParams, v: &GroupParams) -> Result<Complex64> {
    check_tau(tau)?;
    if v.is_zero() {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Kernel::new(k, p)?.b_source(tau, v)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("τ must be finite and non-negative, got {tau}")));
    }
    Ok(())
}
