//! Monte Carlo simulation of the full model, used as the reference price
//! the first-order formula is checked against.
//!
//! `log X` is stepped with Euler, `Z` with full-truncation Euler and the fast
//! factor `Y` with its exact Ornstein–Uhlenbeck transition over a step, `Z`
//! held at its value at the start of the step. Every path (or antithetic
//! pair) owns a ChaCha stream keyed by `(seed, index)`, so results do not
//! depend on how paths are distributed over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_params::{check_correlations, FullModelParams, VolFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerFullTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub scheme: Scheme,
    /// Largest tolerated fraction of variance steps that had to be floored.
    pub max_truncation_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-4,
            seed: 0,
            antithetic: true,
            scheme: Scheme::EulerFullTruncation,
            max_truncation_fraction: 1e-3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.max_truncation_fraction >= 0.0) {
            return Err(Error::InvalidParameter("max_truncation_fraction must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub price: f64,
    /// `None` when fewer than two independent samples were drawn.
    pub std_error: Option<f64>,
    pub n_paths: usize,
    pub truncation_fraction: f64,
}

/// Maps independent standard normals `(n_x, n_y, n_z)` to increments of
/// `(W^x, W^y, W^z)` with the target correlations (Cholesky factor in the
/// order z, y, x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianCorrelator {
    y_from_z: f64,
    y_own: f64,
    x_from_z: f64,
    x_from_y: f64,
    x_own: f64,
}

impl BrownianCorrelator {
    pub fn new(rho_xy: f64, rho_xz: f64, rho_yz: f64) -> Result<Self> {
        check_correlations(rho_xy, rho_xz, rho_yz)?;
        let y_own = (1.0 - rho_yz * rho_yz).sqrt();
        let x_from_y = (rho_xy - rho_xz * rho_yz) / y_own;
        let rest = 1.0 - rho_xz * rho_xz - x_from_y * x_from_y;
        if !(rest > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("Cholesky pivot {rest} is not positive")));
        }
        Ok(Self { y_from_z: rho_yz, y_own, x_from_z: rho_xz, x_from_y, x_own: rest.sqrt() })
    }

    #[inline]
    pub fn apply(&self, n: [f64; 3]) -> [f64; 3] {
        let [nx, ny, nz] = n;
        let wy = self.y_from_z * nz + self.y_own * ny;
        let wx = self.x_from_z * nz + self.x_from_y * ny + self.x_own * nx;
        [wx, wy, nz]
    }
}

/// Terminal values of the simulated spot. With antithetics on, paths `2j`
/// and `2j+1` are a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSample {
    pub spot: Vec<f64>,
    pub truncation_fraction: f64,
    pub antithetic: bool,
}

struct Stepper {
    n_steps: usize,
    dt: f64,
    sqrt_dt: f64,
    r: f64,
    kappa: f64,
    theta: f64,
    sigma: f64,
    inv_eps: f64,
    m: f64,
    nu: f64,
    f_shift: f64,
    f_kind: VolFactor,
    corr: BrownianCorrelator,
    log_x0: f64,
    y0: f64,
    z0: f64,
}

struct PathEnd {
    log_x: f64,
    truncated: u64,
}

impl Stepper {
    fn new(fm: &FullModelParams, horizon: f64, cfg: &SimConfig) -> Result<Self> {
        fm.validate()?;
        cfg.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        let n_steps = (horizon / cfg.dt).ceil().max(1.0) as usize;
        let dt = horizon / n_steps as f64;
        let h = &fm.heston;
        Ok(Self {
            n_steps,
            dt,
            sqrt_dt: dt.sqrt(),
            r: h.r,
            kappa: h.kappa,
            theta: h.theta,
            sigma: h.sigma,
            inv_eps: 1.0 / fm.epsilon,
            m: fm.m,
            nu: fm.nu,
            f_shift: fm.m + fm.nu * fm.nu,
            f_kind: fm.f_kind,
            corr: BrownianCorrelator::new(fm.rho_xy, fm.rho_xz(), fm.rho_yz)?,
            log_x0: 0.0,
            y0: fm.y0,
            z0: h.z,
        })
    }

    /// Runs one path, or an antithetic pair sharing the normals with
    /// opposite signs.
    fn run<const N: usize>(&self, rng: &mut ChaCha8Rng, path: usize) -> Result<[PathEnd; N]> {
        let mut lx = [self.log_x0; N];
        let mut y = [self.y0; N];
        let mut z = [self.z0; N];
        let mut truncated = [0u64; N];
        for step in 0..self.n_steps {
            let n: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            for j in 0..N {
                let sign = if j == 0 { 1.0 } else { -1.0 };
                let [wx, wy, wz] = self.corr.apply([sign * n[0], sign * n[1], sign * n[2]]);
                let zp = z[j].max(0.0);
                let sqrt_z = zp.sqrt();
                let vol = match self.f_kind {
                    VolFactor::ExpOu => sqrt_z * (y[j] - self.f_shift).exp(),
                    VolFactor::Unit => sqrt_z,
                };
                lx[j] += (self.r - 0.5 * vol * vol) * self.dt + vol * self.sqrt_dt * wx;
                if self.f_kind == VolFactor::ExpOu {
                    let a = (-zp * self.dt * self.inv_eps).exp();
                    y[j] = self.m + (y[j] - self.m) * a + self.nu * (1.0 - a * a).sqrt() * wy;
                }
                z[j] += self.kappa * (self.theta - zp) * self.dt + self.sigma * sqrt_z * self.sqrt_dt * wz;
                if z[j] < 0.0 {
                    truncated[j] += 1;
                }
                if !(lx[j].is_finite() && y[j].is_finite() && z[j].is_finite()) {
                    return Err(Error::StepExplosion { path: path + j, step });
                }
            }
        }
        Ok(std::array::from_fn(|j| PathEnd { log_x: lx[j], truncated: truncated[j] }))
    }
}

/// Number of paths or pairs handed to one worker at a time.
const CHUNK: usize = 512;

fn stream_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulates the terminal spot `X_T` for `cfg.n_paths` paths started at `x0`.
pub fn simulate_paths(fm: &FullModelParams, x0: f64, horizon: f64, cfg: &SimConfig) -> Result<TerminalSample> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::InvalidParameter(format!("initial spot must be positive, got {x0}")));
    }
    let stepper = Stepper::new(fm, horizon, cfg)?;
    let group = if cfg.antithetic { 2 } else { 1 };
    let n_groups = cfg.n_paths.div_ceil(group);

    let run_chunk = |c: usize| -> Result<(Vec<f64>, u64)> {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n_groups);
        let mut spots = Vec::with_capacity((hi - lo) * group);
        let mut truncated = 0u64;
        for g in lo..hi {
            let mut rng = stream_rng(cfg.seed, g);
            let first_path = g * group;
            let ends: Vec<PathEnd> = if cfg.antithetic {
                stepper.run::<2>(&mut rng, first_path)?.into_iter().collect()
            } else {
                stepper.run::<1>(&mut rng, first_path)?.into_iter().collect()
            };
            for (j, end) in ends.into_iter().enumerate() {
                if first_path + j < cfg.n_paths {
                    spots.push(x0 * end.log_x.exp());
                    truncated += end.truncated;
                }
            }
        }
        Ok((spots, truncated))
    };
    let n_chunks = n_groups.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let chunks: Vec<Result<(Vec<f64>, u64)>> = {
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Result<(Vec<f64>, u64)>> = (0..n_chunks).map(run_chunk).collect();

    let mut spot = Vec::with_capacity(cfg.n_paths);
    let mut truncated = 0u64;
    for chunk in chunks {
        let (s, t) = chunk?;
        spot.extend(s);
        truncated += t;
    }
    let truncation_fraction = truncated as f64 / (cfg.n_paths as f64 * stepper.n_steps as f64);
    if truncation_fraction > cfg.max_truncation_fraction {
        return Err(Error::TruncationExceeded { fraction: truncation_fraction, threshold: cfg.max_truncation_fraction });
    }
    Ok(TerminalSample { spot, truncation_fraction, antithetic: cfg.antithetic })
}

/// Sum with `O(log n)` error growth.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Discounted mean of `payoff(X_T)` with its standard error. Antithetic
/// pairs are averaged first so the error reflects the pair variance; an
/// unpaired trailing path counts as its own sample.
pub fn mc_expectation<P>(
    fm: &FullModelParams,
    x0: f64,
    horizon: f64,
    cfg: &SimConfig,
    payoff: P,
) -> Result<McEstimate>
where
    P: Fn(f64) -> f64,
{
    let sample = simulate_paths(fm, x0, horizon, cfg)?;
    let discount = (-fm.heston.r * horizon).exp();
    let values: Vec<f64> = if sample.antithetic {
        sample.spot.chunks(2).map(|c| c.iter().map(|&s| payoff(s)).sum::<f64>() / c.len() as f64).collect()
    } else {
        sample.spot.iter().map(|&s| payoff(s)).collect()
    };
    let n = values.len() as f64;
    let mean = pairwise_sum(&values) / n;
    let std_error = if values.len() >= 2 {
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        Some(discount * (pairwise_sum(&dev) / (n - 1.0) / n).sqrt())
    } else {
        None
    };
    let price = discount * mean;
    if !price.is_finite() {
        return Err(Error::NonFinite("Monte Carlo mean".into()));
    }
    Ok(McEstimate { price, std_error, n_paths: cfg.n_paths, truncation_fraction: sample.truncation_fraction })
}

/// Discounted call price `E[e^{−rT}(X_T − K)⁺]`.
pub fn mc_price_call(fm: &FullModelParams, x0: f64, strike: f64, expiry: f64, cfg: &SimConfig) -> Result<McEstimate> {
    if !(strike > 0.0) {
        return Err(Error::InvalidParameter(format!("strike must be positive, got {strike}")));
    }
    mc_expectation(fm, x0, expiry, cfg, |s| (s - strike).max(0.0))
}

/// Structured summary of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub model: FullModelParams,
    pub spot: f64,
    pub strike: f64,
    pub expiry: f64,
    pub config: SimConfig,
    pub estimate: McEstimate,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::HestonParams;

    fn model() -> FullModelParams {
        FullModelParams {
            heston: HestonParams::new(1.0, 0.24, 0.39, -0.35, 0.24, 0.05).unwrap(),
            epsilon: 1e-2,
            m: 0.06,
            nu: 1.0,
            rho_xy: -0.35,
            rho_yz: 0.35,
            y0: 0.06,
            f_kind: VolFactor::ExpOu,
        }
    }

    #[test]
    fn zero_correlation_is_identity() {
        let c = BrownianCorrelator::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(c.apply([0.3, -1.2, 2.5]), [0.3, -1.2, 2.5]);
        assert!(BrownianCorrelator::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn single_path_has_no_standard_error() {
        let cfg = SimConfig { n_paths: 1, dt: 1e-2, antithetic: false, seed: 9, ..SimConfig::default() };
        let fm = model();
        let est = mc_price_call(&fm, 100.0, 100.0, 1.0, &cfg).unwrap();
        let sample = simulate_paths(&fm, 100.0, 1.0, &cfg).unwrap();
        assert_eq!(est.std_error, None);
        assert_eq!(est.price, (-0.05f64).exp() * (sample.spot[0] - 100.0).max(0.0));
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let cfg = SimConfig { n_paths: 2000, dt: 1e-2, seed: 3, ..SimConfig::default() };
        let a = mc_price_call(&model(), 100.0, 100.0, 1.0, &cfg).unwrap();
        let b = mc_price_call(&model(), 100.0, 100.0, 1.0, &cfg).unwrap();
        assert_eq!(a.price.to_bits(), b.price.to_bits());
        let c = mc_price_call(&model(), 100.0, 100.0, 1.0, &SimConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.price, c.price);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 49_995_000.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let fm = model();
        assert!(simulate_paths(&fm, 100.0, 1.0, &SimConfig { n_paths: 0, ..SimConfig::default() }).is_err());
        assert!(simulate_paths(&fm, 100.0, 1.0, &SimConfig { dt: 0.0, ..SimConfig::default() }).is_err());
        assert!(simulate_paths(&fm, 100.0, -1.0, &SimConfig::default()).is_err());
    }

    #[test]
    fn floored_variance_is_reported() {
        let mut fm = model();
        fm.heston = HestonParams::new_allow_feller_violation(1.0, 0.01, 1.0, -0.35, 0.01, 0.05).unwrap();
        let cfg = SimConfig { n_paths: 200, dt: 1e-2, ..SimConfig::default() };
        assert!(matches!(simulate_paths(&fm, 100.0, 1.0, &cfg), Err(Error::TruncationExceeded { .. })));
        let relaxed = SimConfig { max_truncation_fraction: 1.0, ..cfg };
        assert!(simulate_paths(&fm, 100.0, 1.0, &relaxed).unwrap().truncation_fraction > 0.0);
    }
}
