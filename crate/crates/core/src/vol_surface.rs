//! Black–Scholes prices, implied volatilities and implied-vol surfaces.
//!
//! Dividends are a continuous yield `q` applied as `spot·e^{−qT}` both here
//! and in model pricing, so model and market vols are on the same footing.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Bound, Error, Result};
use crate::kernel::{GroupParams, HestonParams};
use crate::pricer::{price_grid, OptionSpec};
use crate::quadrature::QuadratureSpec;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn d1(spot: f64, strike: f64, expiry: f64, vol: f64, rate: f64) -> f64 {
    ((spot / strike).ln() + (rate + 0.5 * vol * vol) * expiry) / (vol * expiry.sqrt())
}

/// Black–Scholes call price.
pub fn bs_call(spot: f64, strike: f64, expiry: f64, vol: f64, rate: f64) -> f64 {
    let discounted_strike = strike * (-rate * expiry).exp();
    let total_vol = vol * expiry.sqrt();
    if total_vol <= 0.0 {
        return (spot - discounted_strike).max(0.0);
    }
    let d1 = d1(spot, strike, expiry, vol, rate);
    let d2 = d1 - total_vol;
    spot * norm_cdf(d1) - discounted_strike * norm_cdf(d2)
}

/// `∂(bs_call)/∂vol`.
pub fn bs_vega(spot: f64, strike: f64, expiry: f64, vol: f64, rate: f64) -> f64 {
    spot * norm_pdf(d1(spot, strike, expiry, vol, rate)) * expiry.sqrt()
}

const VOL_LO: f64 = 1e-4;
const VOL_HI: f64 = 5.0;

/// Black–Scholes implied volatility of a call price.
///
/// The root is bracketed (starting from `[1e-4, 5]`, widened if needed) and
/// refined with Newton steps that fall back to bisection whenever they would
/// leave the bracket.
pub fn implied_vol(price: f64, spot: f64, strike: f64, expiry: f64, rate: f64) -> Result<f64> {
    if !(spot > 0.0 && strike > 0.0 && expiry > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidParameter("implied_vol needs positive spot, strike and expiry".into()));
    }
    if !price.is_finite() {
        return Err(Error::NonFinite("option price".into()));
    }
    let lower = (spot - strike * (-rate * expiry).exp()).max(0.0);
    let upper = spot;
    if price <= lower {
        return Err(Error::OutOfBand { bound: Bound::Lower, price, lower, upper });
    }
    if price >= upper {
        return Err(Error::OutOfBand { bound: Bound::Upper, price, lower, upper });
    }

    let f = |v: f64| bs_call(spot, strike, expiry, v, rate) - price;
    let (mut lo, mut hi) = (VOL_LO, VOL_HI);
    while f(lo) > 0.0 && lo > 1e-12 {
        lo /= 10.0;
    }
    while f(hi) < 0.0 && hi < 1e3 {
        hi *= 2.0;
    }
    let (flo, fhi) = (f(lo), f(hi));
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::NonConvergence { context: "implied_vol bracket", estimate: lo, error_bound: hi - lo });
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }

    let tol = 1e-14 * price.max(1.0);
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fv = f(v);
        if fv.abs() <= tol {
            return Ok(v);
        }
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let vega = bs_vega(spot, strike, expiry, v, rate);
        let newton = v - fv / vega;
        v = if vega > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence { context: "implied_vol", estimate: v, error_bound: hi - lo })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolSource {
    Market,
    HestonModel,
    MultiscaleModel,
}

impl VolSource {
    pub fn as_str(self) -> &'static str {
        match self {
            VolSource::Market => "market",
            VolSource::HestonModel => "heston_model",
            VolSource::MultiscaleModel => "multiscale_model",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "market" => Some(VolSource::Market),
            "heston_model" => Some(VolSource::HestonModel),
            "multiscale_model" => Some(VolSource::MultiscaleModel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolPoint {
    pub expiry: f64,
    pub strike: f64,
    pub implied_vol: f64,
    pub source: VolSource,
}

/// All quotes of one expiry, with the rate and dividend yield used for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpirySlice {
    pub expiry: f64,
    pub rate: f64,
    pub dividend_yield: f64,
    pub points: Vec<VolPoint>,
}

impl ExpirySlice {
    pub fn strikes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.strike).collect()
    }

    /// Spot adjusted for the dividend yield up to this expiry.
    pub fn forward_spot(&self, spot: f64) -> f64 {
        spot * (-self.dividend_yield * self.expiry).exp()
    }
}

/// Implied-vol surface. Slices are sorted by expiry and strikes within a
/// slice are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolSurface {
    pub spot: f64,
    pub slices: Vec<ExpirySlice>,
}

impl VolSurface {
    pub fn new(spot: f64) -> Self {
        Self { spot, slices: Vec::new() }
    }

    /// Adds a slice, keeping slices ordered by expiry.
    pub fn push_slice(&mut self, slice: ExpirySlice) -> Result<()> {
        if !(slice.expiry > 0.0) {
            return Err(Error::InvalidParameter(format!("expiry must be positive, got {}", slice.expiry)));
        }
        if self.slices.iter().any(|s| s.expiry == slice.expiry) {
            return Err(Error::InvalidParameter(format!("duplicate expiry {}", slice.expiry)));
        }
        for w in slice.points.windows(2) {
            if !(w[1].strike > w[0].strike) {
                return Err(Error::InvalidParameter(format!(
                    "strikes at expiry {} must be strictly increasing",
                    slice.expiry
                )));
            }
        }
        for p in &slice.points {
            if !(p.strike > 0.0 && p.implied_vol > 0.0 && p.expiry == slice.expiry) {
                return Err(Error::InvalidParameter(format!("invalid vol point {p:?}")));
            }
        }
        let at = self.slices.partition_point(|s| s.expiry < slice.expiry);
        self.slices.insert(at, slice);
        Ok(())
    }

    pub fn points(&self) -> impl Iterator<Item = &VolPoint> {
        self.slices.iter().flat_map(|s| s.points.iter())
    }

    pub fn len(&self) -> usize {
        self.slices.iter().map(|s| s.points.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The quote grid without the vols.
    pub fn grid(&self) -> SurfaceGrid {
        SurfaceGrid {
            spot: self.spot,
            slices: self
                .slices
                .iter()
                .map(|s| GridSlice {
                    expiry: s.expiry,
                    rate: s.rate,
                    dividend_yield: s.dividend_yield,
                    strikes: s.strikes(),
                })
                .collect(),
        }
    }

    /// Call prices implied by the surface, per slice.
    pub fn call_prices(&self) -> Vec<Vec<f64>> {
        self.slices
            .iter()
            .map(|s| {
                let fwd = s.forward_spot(self.spot);
                s.points.iter().map(|p| bs_call(fwd, p.strike, s.expiry, p.implied_vol, s.rate)).collect()
            })
            .collect()
    }
}

/// Expiries and strikes to evaluate a model on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub spot: f64,
    pub slices: Vec<GridSlice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSlice {
    pub expiry: f64,
    pub rate: f64,
    pub dividend_yield: f64,
    pub strikes: Vec<f64>,
}

impl SurfaceGrid {
    /// Same strikes at every expiry, one rate, no dividends.
    pub fn uniform(spot: f64, rate: f64, expiries: &[f64], strikes: &[f64]) -> Self {
        Self {
            spot,
            slices: expiries
                .iter()
                .map(|&expiry| GridSlice { expiry, rate, dividend_yield: 0.0, strikes: strikes.to_vec() })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slices.iter().map(|s| s.strikes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model prices and implied vols on a grid, one result per quote in grid
/// order. Each slice is priced with the slice's rate in place of `p.r`.
pub fn model_prices_and_vols(
    grid: &SurfaceGrid,
    p: &HestonParams,
    v: &GroupParams,
    spec: &QuadratureSpec,
) -> Vec<Vec<Result<(f64, f64)>>> {
    let slice_eval = |s: &GridSlice| -> Vec<Result<(f64, f64)>> {
        let params = HestonParams { r: s.rate, ..*p };
        let fwd = grid.spot * (-s.dividend_yield * s.expiry).exp();
        let opts: Vec<OptionSpec> = s.strikes.iter().map(|&k| OptionSpec::call(fwd, k, s.expiry)).collect();
        price_grid(&opts, &params, v, spec)
            .into_iter()
            .zip(&s.strikes)
            .map(|(res, &k)| {
                let price = res?.total();
                Ok((price, implied_vol(price, fwd, k, s.expiry, s.rate)?))
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.slices.par_iter().map(slice_eval).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        grid.slices.iter().map(slice_eval).collect()
    }
}

/// A quote the model could not produce a vol for.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub expiry: f64,
    pub strike: f64,
    pub error: Error,
}

/// Model implied-vol surface on `grid`. Points that fail (for instance a
/// corrected price outside the no-arbitrage band) are collected separately.
pub fn model_surface(
    grid: &SurfaceGrid,
    p: &HestonParams,
    v: &GroupParams,
    spec: &QuadratureSpec,
) -> Result<(VolSurface, Vec<PointFailure>)> {
    let source = if v.is_zero() { VolSource::HestonModel } else { VolSource::MultiscaleModel };
    let mut surface = VolSurface::new(grid.spot);
    let mut failures = Vec::new();
    for (slice, vols) in grid.slices.iter().zip(model_prices_and_vols(grid, p, v, spec)) {
        let mut points = Vec::with_capacity(vols.len());
        for (&strike, res) in slice.strikes.iter().zip(vols) {
            match res {
                Ok((_, iv)) => points.push(VolPoint { expiry: slice.expiry, strike, implied_vol: iv, source }),
                Err(error) => failures.push(PointFailure { expiry: slice.expiry, strike, error }),
            }
        }
        surface.push_slice(ExpirySlice {
            expiry: slice.expiry,
            rate: slice.rate,
            dividend_yield: slice.dividend_yield,
            points,
        })?;
    }
    Ok((surface, failures))
}

/// Static-arbitrage violation seen in the call prices of a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArbitrageWarning {
    /// Call price rises with strike between `strikes.0` and `strikes.1`.
    NotDecreasing { expiry: f64, strikes: (f64, f64) },
    /// Slope of the call price falls around `strike`.
    NotConvex { expiry: f64, strike: f64 },
}

/// Checks that call prices are decreasing and convex in strike per expiry.
/// `tol` absorbs rounding in the recovered prices.
pub fn arbitrage_warnings(surface: &VolSurface, tol: f64) -> Vec<ArbitrageWarning> {
    let mut out = Vec::new();
    for (slice, prices) in surface.slices.iter().zip(surface.call_prices()) {
        let k = slice.strikes();
        for i in 1..k.len() {
            if prices[i] > prices[i - 1] + tol {
                out.push(ArbitrageWarning::NotDecreasing { expiry: slice.expiry, strikes: (k[i - 1], k[i]) });
            }
        }
        for i in 1..k.len().saturating_sub(1) {
            let left = (prices[i] - prices[i - 1]) / (k[i] - k[i - 1]);
            let right = (prices[i + 1] - prices[i]) / (k[i + 1] - k[i]);
            if right < left - tol {
                out.push(ArbitrageWarning::NotConvex { expiry: slice.expiry, strike: k[i] });
            }
        }
    }
    out
}

#[cfg(feature = "io")]
pub use csv_io::{read_points_csv, write_points_csv};

#[cfg(feature = "io")]
mod csv_io {
    use std::io::{Read, Write};

    use super::{VolPoint, VolSource};
    use crate::error::{Error, Result};

    const HEADER: [&str; 4] = ["expiry_years", "strike", "implied_vol", "source"];

    /// Writes `expiry_years,strike,implied_vol,source` rows. Floats use the
    /// shortest representation that reads back to the same value.
    pub fn write_points_csv<'a, W, I>(points: I, out: W) -> Result<()>
    where
        W: Write,
        I: IntoIterator<Item = &'a VolPoint>,
    {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(HEADER).map_err(io)?;
        for p in points {
            w.write_record([
                p.expiry.to_string(),
                p.strike.to_string(),
                p.implied_vol.to_string(),
                p.source.as_str().to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn read_points_csv<R: Read>(input: R) -> Result<Vec<VolPoint>> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Parse { line: 1, message: format!("expected header {}", HEADER.join(",")) });
        }
        let mut out = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
            let num = |j: usize| -> Result<f64> {
                rec[j].trim().parse::<f64>().map_err(|e| Error::Parse { line, message: format!("{}: {e}", HEADER[j]) })
            };
            let source = VolSource::parse(rec[3].trim())
                .ok_or_else(|| Error::Parse { line, message: format!("unknown source {:?}", &rec[3]) })?;
            out.push(VolPoint { expiry: num(0)?, strike: num(1)?, implied_vol: num(2)?, source });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bs_limits() {
        let r = 0.05;
        assert_abs_diff_eq!(bs_call(100.0, 90.0, 1.0, 1e-12, r), 100.0 - 90.0 * (-r).exp(), epsilon = 1e-10);
        assert_eq!(bs_call(100.0, 120.0, 1.0, 0.0, r), 0.0);
        let k = 100.0 * r.exp();
        let expected = 100.0 * (2.0 * norm_cdf(0.1) - 1.0);
        assert_abs_diff_eq!(bs_call(100.0, k, 1.0, 0.2, r), expected, epsilon = 1e-12);
    }

    #[test]
    fn implied_vol_round_trip_and_bounds() {
        let price = bs_call(100.0, 110.0, 0.7, 0.2, 0.03);
        assert_abs_diff_eq!(implied_vol(price, 100.0, 110.0, 0.7, 0.03).unwrap(), 0.2, epsilon = 1e-12);
        assert!(matches!(
            implied_vol(100.0, 100.0, 110.0, 0.7, 0.03),
            Err(Error::OutOfBand { bound: Bound::Upper, .. })
        ));
        assert!(matches!(
            implied_vol(0.0, 100.0, 110.0, 0.7, 0.03),
            Err(Error::OutOfBand { bound: Bound::Lower, .. })
        ));
    }

    #[test]
    fn surface_rejects_unsorted_strikes() {
        let pt = |k: f64| VolPoint { expiry: 1.0, strike: k, implied_vol: 0.2, source: VolSource::Market };
        let mut s = VolSurface::new(100.0);
        let bad = ExpirySlice { expiry: 1.0, rate: 0.0, dividend_yield: 0.0, points: vec![pt(100.0), pt(90.0)] };
        assert!(s.push_slice(bad).is_err());
        let good = ExpirySlice { expiry: 1.0, rate: 0.0, dividend_yield: 0.0, points: vec![pt(90.0), pt(100.0)] };
        s.push_slice(good.clone()).unwrap();
        assert!(s.push_slice(good).is_err());
    }

    #[test]
    fn flat_surface_has_no_arbitrage() {
        let mut s = VolSurface::new(100.0);
        let points = (0..20)
            .map(|i| VolPoint { expiry: 0.5, strike: 60.0 + 5.0 * i as f64, implied_vol: 0.25, source: VolSource::Market })
            .collect();
        s.push_slice(ExpirySlice { expiry: 0.5, rate: 0.02, dividend_yield: 0.01, points }).unwrap();
        assert!(arbitrage_warnings(&s, 1e-12).is_empty());
    }

    #[test]
    fn steep_smile_triggers_warning() {
        let mut s = VolSurface::new(100.0);
        let vols = [0.2, 0.9, 0.2];
        let points = vols
            .iter()
            .enumerate()
            .map(|(i, &v)| VolPoint { expiry: 1.0, strike: 95.0 + 5.0 * i as f64, implied_vol: v, source: VolSource::Market })
            .collect();
        s.push_slice(ExpirySlice { expiry: 1.0, rate: 0.0, dividend_yield: 0.0, points }).unwrap();
        assert!(!arbitrage_warnings(&s, 1e-12).is_empty());
    }
}
