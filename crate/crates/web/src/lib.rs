//! Browser bindings: a smile explorer, a price breakdown and the group
//! parameters of the full model. Every export takes and returns JSON text so
//! the page needs no generated type glue.

use multiscale_heston::group_params::group_params_report;
use multiscale_heston::vol_surface::model_surface;
use multiscale_heston::{
    effective_heston, price_corrected, FullModelParams, GroupParams, HestonParams, OptionSpec, QuadratureSpec,
    SurfaceGrid,
};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct SmileRequest {
    pub heston: HestonParams,
    pub group: GroupParams,
    pub spot: f64,
    pub expiry: f64,
    pub strikes: Vec<f64>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct SmileResponse {
    pub strikes: Vec<f64>,
    /// `None` where the model has no implied vol.
    pub heston: Vec<Option<f64>>,
    pub multiscale: Vec<Option<f64>>,
}

#[derive(Debug, Deserialize)]
pub struct PriceRequest {
    pub heston: HestonParams,
    pub group: GroupParams,
    pub spot: f64,
    pub strike: f64,
    pub expiry: f64,
    #[serde(default)]
    pub put: bool,
}

fn parse<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T, String> {
    serde_json::from_str(text).map_err(|e| format!("bad request: {e}"))
}

fn vols(grid: &SurfaceGrid, p: &HestonParams, v: &GroupParams) -> Result<Vec<Option<f64>>, String> {
    let (surface, _) = model_surface(grid, p, v, &QuadratureSpec::default()).map_err(|e| e.to_string())?;
    let got: Vec<(f64, f64)> = surface.points().map(|pt| (pt.strike, pt.implied_vol)).collect();
    Ok(grid.slices[0]
        .strikes
        .iter()
        .map(|k| got.iter().find(|(s, _)| s == k).map(|(_, iv)| *iv))
        .collect())
}

pub fn smile_json(request: &str) -> Result<String, String> {
    let req: SmileRequest = parse(request)?;
    req.heston.validate_bounds().map_err(|e| e.to_string())?;
    if req.strikes.is_empty() || req.strikes.len() > 200 {
        return Err("between 1 and 200 strikes".into());
    }
    let grid = SurfaceGrid::uniform(req.spot, req.heston.r, &[req.expiry], &req.strikes);
    let out = SmileResponse {
        strikes: req.strikes.clone(),
        heston: vols(&grid, &req.heston, &GroupParams::ZERO)?,
        multiscale: vols(&grid, &req.heston, &req.group)?,
    };
    Ok(serde_json::to_string(&out).expect("serialisable"))
}

pub fn price_json(request: &str) -> Result<String, String> {
    let req: PriceRequest = parse(request)?;
    let opt = if req.put {
        OptionSpec::put(req.spot, req.strike, req.expiry)
    } else {
        OptionSpec::call(req.spot, req.strike, req.expiry)
    };
    let b = price_corrected(&opt, &req.heston, &req.group, &QuadratureSpec::default()).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({ "breakdown": b, "total": b.total() }).to_string())
}

pub fn group_params_json(request: &str) -> Result<String, String> {
    let fm: FullModelParams = parse(request)?;
    let rep = group_params_report(&fm).map_err(|e| e.to_string())?;
    let heston = effective_heston(&fm).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({ "report": rep, "effective_heston": heston }).to_string())
}

#[wasm_bindgen]
pub fn smile(request: &str) -> Result<String, JsError> {
    smile_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn price(request: &str) -> Result<String, JsError> {
    price_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn group_params(request: &str) -> Result<String, JsError> {
    group_params_json(request).map_err(|e| JsError::new(&e))
}
