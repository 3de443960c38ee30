//! Multiscale stochastic volatility: Heston with a fast mean-reverting
//! volatility factor, priced to first order in the fast time scale.

pub mod calibration;
#[cfg(feature = "cli")]
pub mod cli;
#[cfg(feature = "io")]
pub mod config;
pub mod error;
pub mod group_params;
pub mod kernel;
#[cfg(feature = "io")]
pub mod market_io;
pub mod mc;
pub mod pricer;
pub mod quadrature;
pub mod vol_surface;

pub use error::{Error, Result};
pub use group_params::{compute_group_params, effective_heston, FullModelParams, VolFactor};
pub use mc::{mc_price_call, McEstimate, SimConfig};
pub use kernel::{GroupParams, HestonParams, Kernel, Wavenumber};
pub use pricer::{
    price_corrected, price_grid, price_heston, OptionSpec, PayoffKind, PriceBreakdown, PriceWarning,
};
pub use quadrature::QuadratureSpec;
pub use vol_surface::{bs_call, implied_vol, model_surface, SurfaceGrid, VolPoint, VolSource, VolSurface};
pub use calibration::{calibrate_heston, calibrate_multiscale, CalibProblem, CalibResult};
