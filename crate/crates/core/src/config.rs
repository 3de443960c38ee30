//! TOML run configuration. Every section is optional; missing keys take the
//! defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{FellerMode, ParamBounds, SolverSettings};
use crate::error::{Error, Result};
use crate::group_params::{FullModelParams, VolFactor};
use crate::kernel::{GroupParams, HestonParams};
use crate::market_io::ChainFilters;
use crate::mc::SimConfig;
use crate::quadrature::{F0Scheme, QuadratureSpec};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "MSHESTON_CONFIG";

/// Full-model parameters plus the spot. `rho_xz` is the raw spot/variance
/// correlation; the effective Heston correlation is derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub spot: f64,
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho_xz: f64,
    pub z: f64,
    pub r: f64,
    pub epsilon: f64,
    pub m: f64,
    pub nu: f64,
    pub rho_xy: f64,
    pub rho_yz: f64,
    /// Initial fast factor; `m` when absent.
    pub y0: Option<f64>,
    pub f_kind: VolFactor,
}

impl Default for ModelConfig {
    /// The Monte Carlo test case with `θ = 0.24`, the long-run variance at
    /// which the Heston baseline is 21.0831.
    fn default() -> Self {
        Self {
            spot: 100.0,
            kappa: 1.0,
            theta: 0.24,
            sigma: 0.39,
            rho_xz: -0.35,
            z: 0.24,
            r: 0.05,
            epsilon: 1e-4,
            m: 0.06,
            nu: 1.0,
            rho_xy: -0.35,
            rho_yz: 0.35,
            y0: None,
            f_kind: VolFactor::ExpOu,
        }
    }
}

impl ModelConfig {
    pub fn full(&self) -> FullModelParams {
        FullModelParams {
            heston: HestonParams {
                kappa: self.kappa,
                theta: self.theta,
                sigma: self.sigma,
                rho: self.rho_xz,
                z: self.z,
                r: self.r,
            },
            epsilon: self.epsilon,
            m: self.m,
            nu: self.nu,
            rho_xy: self.rho_xy,
            rho_yz: self.rho_yz,
            y0: self.y0.unwrap_or(self.m),
            f_kind: self.f_kind,
        }
    }
}

/// Heston starting point of a calibration (the rate comes from the data).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPoint {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub z: f64,
}

impl Default for StartPoint {
    fn default() -> Self {
        Self { kappa: 2.0, theta: 0.04, sigma: 0.4, rho: -0.6, z: 0.04 }
    }
}

impl StartPoint {
    pub fn heston(&self, r: f64) -> HestonParams {
        HestonParams { kappa: self.kappa, theta: self.theta, sigma: self.sigma, rho: self.rho, z: self.z, r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub start: StartPoint,
    /// Extra Latin-hypercube starts for the Heston stage.
    pub multistart: usize,
    /// Half-width of the multistart box in unconstrained coordinates.
    pub multistart_spread: f64,
    pub multistart_seed: u64,
    pub feller_mode: FellerMode,
    pub bounds: ParamBounds,
    pub solver: SolverSettings,
    pub filters: ChainFilters,
    pub quadrature: QuadratureSpec,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            start: StartPoint::default(),
            multistart: 0,
            multistart_spread: 0.5,
            multistart_seed: 0,
            feller_mode: FellerMode::default(),
            bounds: ParamBounds::default(),
            solver: SolverSettings::default(),
            filters: ChainFilters::default(),
            quadrature: QuadratureSpec::default().with_f0_scheme(F0Scheme::ClosedFormInner),
        }
    }
}

/// Smile grid shared by `surface` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub expiries: Vec<f64>,
    pub strikes: Vec<f64>,
    pub dividend_yield: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            expiries: vec![1.0],
            strikes: (0..=16).map(|i| 60.0 + 5.0 * i as f64).collect(),
            dividend_yield: 0.0,
        }
    }
}

/// Values each group parameter takes in `sweep`, one list per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub v1e: Vec<f64>,
    pub v2e: Vec<f64>,
    pub v3e: Vec<f64>,
    pub v4e: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            v1e: vec![-0.01, -0.005, 0.0, 0.005, 0.01],
            v2e: vec![-0.002, -0.001, 0.0, 0.001, 0.002],
            v3e: vec![-0.05, -0.025, 0.0, 0.025, 0.05],
            v4e: vec![-0.01, -0.005, 0.0, 0.005, 0.01],
        }
    }
}

impl SweepConfig {
    pub fn values(&self, index: usize) -> &[f64] {
        match index {
            0 => &self.v1e,
            1 => &self.v2e,
            2 => &self.v3e,
            _ => &self.v4e,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    /// Explicit group parameters; computed from `model` when absent.
    pub group: Option<GroupParams>,
    pub quadrature: QuadratureSpec,
    pub mc: SimConfig,
    pub calibration: CalibConfig,
    pub grid: GridConfig,
    pub sweep: SweepConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse { line, message: e.message().to_string() }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML form, so equivalent files hash equal.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::default();
        c.group = Some(GroupParams::new(0.1, -0.2, 0.3, 0.0));
        c.calibration.multistart = 4;
        let back = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let err = Config::from_toml("[model]\nkapa = 2.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = Config::from_toml("[model]\nepsilon = 0.01\n[mc]\nseed = 7\n").unwrap();
        assert_eq!(c.model.epsilon, 0.01);
        assert_eq!(c.model.kappa, 1.0);
        assert_eq!(c.mc.seed, 7);
        assert_eq!(c.mc.n_paths, SimConfig::default().n_paths);
        assert_eq!(c.model.full().y0, 0.06);
    }
}
