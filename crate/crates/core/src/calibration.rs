//! Least-squares fits of the Heston parameters `Θ = (κ, ρ, σ, θ, z)` and of
//! the multiscale parameters `Φ = (Θ, V₁ᵉ..V₄ᵉ)` to an implied-vol surface.
//!
//! The optimiser is Levenberg–Marquardt with forward-difference Jacobians.
//! It works on unconstrained coordinates (log for κ, θ, σ, z, atanh for ρ,
//! identity for the group parameters) and projects every trial point onto
//! the box bounds, so all iterates are admissible.

use nalgebra::{DMatrix, DVector};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GroupParams, HestonParams};
use crate::quadrature::{F0Scheme, QuadratureSpec};
use crate::vol_surface::{model_prices_and_vols, SurfaceGrid, VolSurface};

/// Residual assigned to a quote whose model price has no implied vol.
pub const OUT_OF_BAND_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FellerMode {
    /// Steps into `σ² > 2κθ` are rejected.
    Enforce,
    /// `σ² > 2κθ` adds a quadratic penalty during the search.
    #[default]
    Penalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Heston,
    Multiscale,
}

/// Box constraints on the calibrated parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBounds {
    pub kappa: (f64, f64),
    pub rho: (f64, f64),
    pub sigma: (f64, f64),
    pub theta: (f64, f64),
    pub z: (f64, f64),
    /// Symmetric bound on every group parameter.
    pub v_abs_max: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            kappa: (1e-3, 50.0),
            rho: (-0.999, 0.999),
            sigma: (1e-3, 5.0),
            theta: (1e-4, 4.0),
            z: (1e-4, 4.0),
            v_abs_max: 0.5,
        }
    }
}

impl ParamBounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("kappa", self.kappa), ("sigma", self.sigma), ("theta", self.theta), ("z", self.z)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("bounds for {name} must satisfy 0 < lo < hi")));
            }
        }
        if !(self.rho.0 > -1.0 && self.rho.1 < 1.0 && self.rho.0 < self.rho.1) {
            return Err(Error::InvalidParameter("bounds for rho must lie inside (−1, 1)".into()));
        }
        if !(self.v_abs_max >= 0.0 && self.v_abs_max.is_finite()) {
            return Err(Error::InvalidParameter("v_abs_max must be non-negative".into()));
        }
        Ok(())
    }

    /// Bounds in unconstrained coordinates.
    fn transformed(&self) -> Vec<(f64, f64)> {
        let ln = |(lo, hi): (f64, f64)| (lo.ln(), hi.ln());
        let mut b = vec![
            ln(self.kappa),
            (self.rho.0.atanh(), self.rho.1.atanh()),
            ln(self.sigma),
            ln(self.theta),
            ln(self.z),
        ];
        b.extend([(-self.v_abs_max, self.v_abs_max); 4]);
        b
    }

    pub fn contains(&self, p: &HestonParams, v: &GroupParams) -> bool {
        let inside = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
        inside(p.kappa, self.kappa)
            && inside(p.rho, self.rho)
            && inside(p.sigma, self.sigma)
            && inside(p.theta, self.theta)
            && inside(p.z, self.z)
            && v.as_array().iter().all(|x| x.abs() <= self.v_abs_max)
    }
}

/// Optimiser settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop when every free gradient component, divided by the norms of its
    /// Jacobian column and of the residual vector, is below this. Invariant
    /// under a common rescaling of the weights.
    pub gradient_tol: f64,
    /// Stop when a step changes no coordinate by more than this, relative.
    pub step_tol: f64,
    /// Relative finite-difference step in unconstrained coordinates.
    pub fd_step: f64,
    /// Scale of the Feller penalty residual.
    pub feller_penalty: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iterations: 100, gradient_tol: 1e-10, step_tol: 1e-10, fd_step: 1e-6, feller_penalty: 10.0 }
    }
}

/// Market surface plus everything that defines the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibProblem {
    pub market: VolSurface,
    /// One non-negative weight per quote in surface order; uniform if absent.
    pub weights: Option<Vec<f64>>,
    pub bounds: ParamBounds,
    pub feller_mode: FellerMode,
    pub quadrature: QuadratureSpec,
    pub solver: SolverSettings,
}

impl CalibProblem {
    pub fn new(market: VolSurface) -> Self {
        Self {
            market,
            weights: None,
            bounds: ParamBounds::default(),
            feller_mode: FellerMode::default(),
            // thousands of surface evaluations: use the single-integral form of f̂₀
            quadrature: QuadratureSpec::default().with_f0_scheme(F0Scheme::ClosedFormInner),
            solver: SolverSettings::default(),
        }
    }

    pub fn validate(&self, n_free: usize) -> Result<()> {
        self.bounds.validate()?;
        self.quadrature.validate()?;
        let n = self.market.len();
        if n < n_free {
            return Err(Error::InvalidParameter(format!("{n} quotes cannot determine {n_free} parameters")));
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                return Err(Error::InvalidParameter(format!("{} weights for {n} quotes", w.len())));
            }
            if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn reference_rate(&self) -> f64 {
        self.market.slices.first().map_or(0.0, |s| s.rate)
    }
}

/// Unweighted `σ_mkt − σ_model` per quote, surface order, with
/// [`OUT_OF_BAND_PENALTY`] where the model has no implied vol.
pub fn raw_residuals(p: &HestonParams, v: &GroupParams, prob: &CalibProblem) -> Vec<f64> {
    let grid: SurfaceGrid = prob.market.grid();
    let model = model_prices_and_vols(&grid, p, v, &prob.quadrature);
    prob.market
        .slices
        .iter()
        .zip(model)
        .flat_map(|(slice, vols)| {
            slice.points.iter().zip(vols).map(|(pt, res)| match res {
                Ok((_, iv)) => pt.implied_vol - iv,
                Err(_) => OUT_OF_BAND_PENALTY,
            })
        })
        .collect()
}

fn weighted(raw: Vec<f64>, prob: &CalibProblem) -> Vec<f64> {
    raw.into_iter().enumerate().map(|(i, r)| prob.weight(i).sqrt() * r).collect()
}

fn params_from_vec(x: &[f64], r: f64) -> HestonParams {
    HestonParams { kappa: x[0], rho: x[1], sigma: x[2], theta: x[3], z: x[4], r }
}

fn theta_vec(p: &HestonParams) -> [f64; 5] {
    [p.kappa, p.rho, p.sigma, p.theta, p.z]
}

/// Weighted residuals of the Heston model at `Θ = (κ, ρ, σ, θ, z)`.
pub fn objective_heston(theta: &[f64; 5], prob: &CalibProblem) -> Vec<f64> {
    let p = params_from_vec(theta, prob.reference_rate());
    weighted(raw_residuals(&p, &GroupParams::ZERO, prob), prob)
}

/// Weighted residuals of the multiscale model at `Φ = (Θ, V₁ᵉ..V₄ᵉ)`.
pub fn objective_multiscale(phi: &[f64; 9], prob: &CalibProblem) -> Vec<f64> {
    let p = params_from_vec(&phi[..5], prob.reference_rate());
    let v = GroupParams::from_array([phi[5], phi[6], phi[7], phi[8]]);
    weighted(raw_residuals(&p, &v, prob), prob)
}

/// Mean squared residual of one expiry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpiryRss {
    pub expiry: f64,
    pub n_quotes: usize,
    pub mean_squared_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibResult {
    pub model: ModelKind,
    pub params: HestonParams,
    pub group: GroupParams,
    /// `Σ wᵢ(σ_mkt − σ_model)²`, without any Feller penalty.
    pub objective: f64,
    pub per_expiry_rss: Vec<ExpiryRss>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub feller_satisfied: bool,
    pub start_point: Vec<f64>,
}

impl CalibResult {
    /// Fitted parameter vector, `Θ` or `Φ`.
    pub fn vector(&self) -> Vec<f64> {
        let mut x = theta_vec(&self.params).to_vec();
        if self.model == ModelKind::Multiscale {
            x.extend(self.group.as_array());
        }
        x
    }
}

/// Maps between model parameters and unconstrained coordinates.
fn to_unconstrained(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| match i {
            1 => v.atanh(),
            0 | 2 | 3 | 4 => v.ln(),
            _ => v,
        })
        .collect()
}

fn from_unconstrained(u: &[f64]) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(i, &v)| match i {
            1 => v.tanh(),
            0 | 2 | 3 | 4 => v.exp(),
            _ => v,
        })
        .collect()
}

fn project(u: &mut [f64], bounds: &[(f64, f64)]) {
    for (x, &(lo, hi)) in u.iter_mut().zip(bounds) {
        *x = x.clamp(lo, hi);
    }
}

/// Residuals the optimiser sees: weighted quote residuals plus, in
/// penalise mode, one Feller residual. `None` marks an inadmissible point.
struct Problem<'a> {
    prob: &'a CalibProblem,
    n: usize,
}

impl Problem<'_> {
    fn residuals(&self, u: &[f64]) -> Option<Vec<f64>> {
        let x = from_unconstrained(u);
        let p = params_from_vec(&x, self.prob.reference_rate());
        let v = if self.n == 9 { GroupParams::from_array([x[5], x[6], x[7], x[8]]) } else { GroupParams::ZERO };
        let gap = p.sigma * p.sigma - 2.0 * p.kappa * p.theta;
        if self.prob.feller_mode == FellerMode::Enforce && gap > 0.0 {
            return None;
        }
        let mut r = weighted(raw_residuals(&p, &v, self.prob), self.prob);
        if self.prob.feller_mode == FellerMode::Penalize {
            r.push(self.prob.solver.feller_penalty * gap.max(0.0));
        }
        Some(r)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

struct LmOutcome {
    u: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn jacobian(problem: &Problem, u: &[f64], r0: &[f64], bounds: &[(f64, f64)], h_rel: f64) -> DMatrix<f64> {
    let m = r0.len();
    let column = |j: usize| -> Vec<f64> {
        let h = h_rel * u[j].abs().max(1.0);
        let mut up = u.to_vec();
        // step backwards when the forward point would leave the box
        let step = if u[j] + h <= bounds[j].1 { h } else { -h };
        up[j] += step;
        match problem.residuals(&up) {
            Some(r) => r.iter().zip(r0).map(|(a, b)| (a - b) / step).collect(),
            None => vec![0.0; m],
        }
    };
    #[cfg(feature = "parallel")]
    let columns: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..u.len()).into_par_iter().map(column).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<Vec<f64>> = (0..u.len()).map(column).collect();
    DMatrix::from_fn(m, u.len(), |i, j| columns[j][i])
}

fn levenberg_marquardt(problem: &Problem, u0: Vec<f64>, bounds: &[(f64, f64)], s: &SolverSettings) -> Result<LmOutcome> {
    let mut u = u0;
    let mut r = problem
        .residuals(&u)
        .ok_or_else(|| Error::InvalidParameter("start point violates the Feller condition".into()))?;
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::NonFinite("objective at start".into()));
    }
    let mut lambda = 1e-3;
    let n = u.len();
    for iter in 0..s.max_iterations {
        if cost == 0.0 {
            return Ok(LmOutcome { u, iterations: iter, converged: true });
        }
        let j = jacobian(problem, &u, &r, bounds, s.fd_step);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let grad = &jt * DVector::from_column_slice(&r);
        let r_norm = cost.sqrt();
        // gradient components pinned against an active bound do not count
        let free_grad = (0..n)
            .map(|i| {
                let at_lo = u[i] <= bounds[i].0 && grad[i] > 0.0;
                let at_hi = u[i] >= bounds[i].1 && grad[i] < 0.0;
                let col = j.column(i).norm();
                if at_lo || at_hi || col == 0.0 { 0.0 } else { grad[i].abs() / (col * r_norm) }
            })
            .fold(0.0, f64::max);
        if free_grad <= s.gradient_tol {
            return Ok(LmOutcome { u, iterations: iter, converged: true });
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let delta = chol.solve(&(-&grad));
            let mut trial: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            project(&mut trial, bounds);
            let moved = trial.iter().zip(&u).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
            if moved <= s.step_tol {
                return Ok(LmOutcome { u, iterations: iter + 1, converged: true });
            }
            match problem.residuals(&trial) {
                Some(rt) if sum_sq(&rt) < cost => {
                    u = trial;
                    cost = sum_sq(&rt);
                    r = rt;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if !accepted {
            // no descent left at any damping: stationary up to noise
            return Ok(LmOutcome { u, iterations: iter + 1, converged: free_grad <= 1e-4 });
        }
    }
    Ok(LmOutcome { u, iterations: s.max_iterations, converged: false })
}

fn check_start(x: &[f64], prob: &CalibProblem) -> Result<()> {
    let p = params_from_vec(x, prob.reference_rate());
    let v = if x.len() == 9 { GroupParams::from_array([x[5], x[6], x[7], x[8]]) } else { GroupParams::ZERO };
    if !prob.bounds.contains(&p, &v) {
        return Err(Error::InvalidParameter(format!("start point {x:?} is outside the bounds")));
    }
    Ok(())
}

fn finish(model: ModelKind, x: &[f64], prob: &CalibProblem, iterations: usize, converged: bool, start: &[f64]) -> CalibResult {
    let params = params_from_vec(x, prob.reference_rate());
    let group = if model == ModelKind::Multiscale {
        GroupParams::from_array([x[5], x[6], x[7], x[8]])
    } else {
        GroupParams::ZERO
    };
    let residuals = raw_residuals(&params, &group, prob);
    let objective = residuals.iter().enumerate().map(|(i, r)| prob.weight(i) * r * r).sum();
    CalibResult {
        model,
        params,
        group,
        objective,
        per_expiry_rss: per_expiry(&residuals, &prob.market),
        residuals,
        iterations,
        converged,
        feller_satisfied: params.satisfies_feller(),
        start_point: start.to_vec(),
    }
}

fn per_expiry(residuals: &[f64], market: &VolSurface) -> Vec<ExpiryRss> {
    let mut out = Vec::with_capacity(market.slices.len());
    let mut at = 0;
    for s in &market.slices {
        let n = s.points.len();
        let chunk = &residuals[at..at + n];
        at += n;
        let mean = if n == 0 { 0.0 } else { chunk.iter().map(|r| r * r).sum::<f64>() / n as f64 };
        out.push(ExpiryRss { expiry: s.expiry, n_quotes: n, mean_squared_residual: mean });
    }
    out
}

fn run(model: ModelKind, start: &[f64], prob: &CalibProblem) -> Result<CalibResult> {
    let n = start.len();
    prob.validate(n)?;
    check_start(start, prob)?;
    let bounds: Vec<(f64, f64)> = prob.bounds.transformed().into_iter().take(n).collect();
    let problem = Problem { prob, n };
    let mut u0 = to_unconstrained(start);
    project(&mut u0, &bounds);
    let out = levenberg_marquardt(&problem, u0, &bounds, &prob.solver)?;
    let x = from_unconstrained(&out.u);
    Ok(finish(model, &x, prob, out.iterations, out.converged, start))
}

/// Fits `Θ` starting from `start` (its `r` is ignored; rates come from the
/// market surface).
pub fn calibrate_heston(prob: &CalibProblem, start: &HestonParams) -> Result<CalibResult> {
    run(ModelKind::Heston, &theta_vec(start), prob)
}

/// Second stage: fits `Φ` starting from `(Θ*, 0, 0, 0, 0)` where `Θ*` is a
/// converged Heston fit.
pub fn calibrate_multiscale(prob: &CalibProblem, heston: &CalibResult) -> Result<CalibResult> {
    if heston.model != ModelKind::Heston {
        return Err(Error::InvalidParameter("the multiscale fit starts from a Heston fit".into()));
    }
    if !heston.converged {
        return Err(Error::NonConvergence {
            context: "heston stage",
            estimate: heston.objective,
            error_bound: f64::NAN,
        });
    }
    let mut start = theta_vec(&heston.params).to_vec();
    start.extend([0.0; 4]);
    run(ModelKind::Multiscale, &start, prob)
}

/// Heston fits from `n_starts` Latin-hypercube points spread by `spread` in
/// unconstrained coordinates around `start` (plus `start` itself); returns
/// the fit with the lowest objective.
pub fn calibrate_heston_multistart(
    prob: &CalibProblem,
    start: &HestonParams,
    n_starts: usize,
    spread: f64,
    seed: u64,
) -> Result<CalibResult> {
    let bounds = prob.bounds.transformed();
    let centre = to_unconstrained(&theta_vec(start));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = (0..5)
        .map(|_| {
            let mut s: Vec<usize> = (0..n_starts).collect();
            s.shuffle(&mut rng);
            s
        })
        .collect();
    let mut best = calibrate_heston(prob, start)?;
    for k in 0..n_starts {
        let mut u: Vec<f64> = (0..5)
            .map(|d| {
                let cell = strata[d][k] as f64 + rng.random::<f64>();
                centre[d] + spread * (2.0 * cell / n_starts as f64 - 1.0)
            })
            .collect();
        project(&mut u, &bounds[..5]);
        let x = from_unconstrained(&u);
        let p = params_from_vec(&x, start.r);
        if prob.feller_mode == FellerMode::Enforce && !p.satisfies_feller() {
            continue;
        }
        match calibrate_heston(prob, &p) {
            Ok(fit) if fit.objective < best.objective => best = fit,
            Ok(_) => {}
            Err(Error::NonFinite(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

/// One row of the per-expiry comparison of two fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub expiry: f64,
    pub days: f64,
    pub n_quotes: usize,
    pub heston: f64,
    pub multiscale: f64,
    /// `heston / multiscale`; infinite when the multiscale residual is zero.
    pub ratio: f64,
}

/// Marginal residuals `Δ̄²(Tᵢ)` of both fits per expiry with their ratio.
pub fn residual_report(heston: &CalibResult, multiscale: &CalibResult) -> Vec<ResidualRow> {
    heston
        .per_expiry_rss
        .iter()
        .zip(&multiscale.per_expiry_rss)
        .map(|(h, m)| ResidualRow {
            expiry: h.expiry,
            days: (h.expiry * 365.0).round(),
            n_quotes: h.n_quotes,
            heston: h.mean_squared_residual,
            multiscale: m.mean_squared_residual,
            ratio: h.mean_squared_residual / m.mean_squared_residual,
        })
        .collect()
}

/// Table text of a residual report.
pub fn format_residual_report(rows: &[ResidualRow]) -> String {
    let mut s = format!("{:>6} {:>14} {:>14} {:>8}\n", "days", "heston", "multiscale", "ratio");
    for r in rows {
        s.push_str(&format!("{:>6} {:>14.6e} {:>14.6e} {:>8.2}\n", r.days, r.heston, r.multiscale, r.ratio));
    }
    s
}
