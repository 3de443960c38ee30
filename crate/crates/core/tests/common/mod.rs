#![allow(dead_code)]

use multiscale_heston::group_params::{FullModelParams, VolFactor};
use multiscale_heston::vol_surface::{model_surface, GridSlice, SurfaceGrid, VolSource, VolSurface};
use multiscale_heston::{GroupParams, HestonParams, QuadratureSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Monte Carlo comparison case. The long-run variance is 0.24: that is the
/// value at which the Heston baseline equals 21.0831.
pub fn table1_full(epsilon: f64) -> FullModelParams {
    FullModelParams {
        heston: HestonParams::new(1.0, 0.24, 0.39, -0.35, 0.24, 0.05).unwrap(),
        epsilon,
        m: 0.06,
        nu: 1.0,
        rho_xy: -0.35,
        rho_yz: 0.35,
        y0: 0.06,
        f_kind: VolFactor::ExpOu,
    }
}

/// Limiting Heston model of [`table1_full`]: `ρ = −0.35·e^{−1/2}`.
pub fn table1_heston() -> HestonParams {
    HestonParams::new(1.0, 0.24, 0.39, -0.35 * (-0.5f64).exp(), 0.24, 0.05).unwrap()
}

/// Heston block of the smile illustration.
pub fn fig1_heston() -> HestonParams {
    HestonParams::new(3.4, 0.024, 0.39, -0.64, 0.04, 0.0).unwrap()
}

/// Maturities in days of the residual table.
pub const TABLE2_DAYS: [f64; 7] = [65.0, 121.0, 212.0, 303.0, 394.0, 583.0, 947.0];

/// Group parameters of calibrated size for an index surface.
pub fn small_v() -> GroupParams {
    GroupParams::new(-0.002, 0.0003, 0.005, -0.0008)
}

/// Seven expiries, fifteen strikes each, log-moneyness spread `±2·sd·√T`.
pub fn table2_grid(spot: f64, rate: f64, q: f64, sd: f64) -> SurfaceGrid {
    SurfaceGrid {
        spot,
        slices: TABLE2_DAYS
            .iter()
            .map(|&d| {
                let t = d / 365.0;
                let strikes = (0..15).map(|j| spot * (2.0 * sd * t.sqrt() * (j as f64 - 7.0) / 7.0).exp()).collect();
                GridSlice { expiry: t, rate, dividend_yield: q, strikes }
            })
            .collect(),
    }
}

/// Model surface relabelled as market data, with optional iid vol noise.
pub fn synthetic_market(grid: &SurfaceGrid, p: &HestonParams, v: &GroupParams, noise: Option<(f64, u64)>) -> VolSurface {
    let (mut surface, failures) = model_surface(grid, p, v, &QuadratureSpec::default()).unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    let mut rng = noise.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    for s in &mut surface.slices {
        for pt in &mut s.points {
            pt.source = VolSource::Market;
            if let (Some((sd, _)), Some(rng)) = (noise, rng.as_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                pt.implied_vol += sd * z;
            }
        }
    }
    surface
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
