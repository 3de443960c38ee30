mod common;

use common::{fig1_heston, small_v, synthetic_market};
use multiscale_heston::calibration::{
    calibrate_heston, calibrate_multiscale, objective_heston, objective_multiscale, residual_report, CalibProblem,
    FellerMode, ModelKind,
};
use multiscale_heston::vol_surface::GridSlice;
use multiscale_heston::{Error, GroupParams, HestonParams, SurfaceGrid, VolSurface};

/// Four expiries by seven strikes, with rates and yields that differ from the
/// model's own `r`.
fn grid() -> SurfaceGrid {
    let spot = 100.0;
    SurfaceGrid {
        spot,
        slices: [0.25, 0.5, 1.0, 1.5]
            .iter()
            .map(|&t: &f64| GridSlice {
                expiry: t,
                rate: 0.03,
                dividend_yield: 0.01,
                strikes: (0..7).map(|j| spot * (0.3 * t.sqrt() * (j as f64 - 3.0) / 3.0).exp()).collect(),
            })
            .collect(),
    }
}

fn truth() -> HestonParams {
    HestonParams { r: 0.03, ..fig1_heston() }
}

fn perturbed(p: &HestonParams) -> HestonParams {
    HestonParams {
        kappa: p.kappa * 1.2,
        theta: p.theta * 0.8,
        sigma: p.sigma * 1.2,
        rho: p.rho * 0.8,
        z: p.z * 1.2,
        r: p.r,
    }
}

fn theta_of(p: &HestonParams) -> [f64; 5] {
    [p.kappa, p.rho, p.sigma, p.theta, p.z]
}

fn market(v: &GroupParams, noise: Option<(f64, u64)>) -> VolSurface {
    synthetic_market(&grid(), &truth(), v, noise)
}

fn ss(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

#[test]
fn objective_vanishes_at_truth_only() {
    let v = small_v();
    let prob = CalibProblem::new(market(&v, None));
    let t = theta_of(&truth());
    let va = v.as_array();
    let phi = [t[0], t[1], t[2], t[3], t[4], va[0], va[1], va[2], va[3]];
    assert!(ss(&objective_multiscale(&phi, &prob)) < 1e-12);
    for i in 0..9 {
        let mut off = phi;
        off[i] *= 1.1;
        assert!(ss(&objective_multiscale(&off, &prob)) > 1e-10, "component {i}");
    }
}

#[test]
fn start_at_truth_stops_quickly() {
    let prob = CalibProblem::new(market(&GroupParams::ZERO, None));
    let fit = calibrate_heston(&prob, &truth()).unwrap();
    assert!(fit.converged);
    assert!(fit.iterations <= 3, "{}", fit.iterations);
    assert!(fit.objective < 1e-12);
}

#[test]
fn recovers_heston_and_reports_its_objective() {
    let prob = CalibProblem::new(market(&GroupParams::ZERO, None));
    let fit = calibrate_heston(&prob, &perturbed(&truth())).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.model, ModelKind::Heston);
    for (a, b) in fit.vector().iter().zip(theta_of(&truth())) {
        assert!((a - b).abs() < 1e-4 * b.abs(), "{a} vs {b}");
    }
    let recomputed = ss(&objective_heston(&theta_of(&fit.params), &prob));
    assert!((fit.objective - recomputed).abs() <= 1e-12 * recomputed.max(1e-30));
    assert_eq!(ss(&fit.residuals), fit.objective);

    // Heston data: the correction stage has nothing to add.
    let ms = calibrate_multiscale(&prob, &fit).unwrap();
    assert!(ms.group.as_array().iter().all(|x| x.abs() < 1e-6), "{:?}", ms.group);
    assert!(ms.objective <= fit.objective * (1.0 + 1e-9) + 1e-24);
}

#[test]
fn noisy_fit_matches_noise_level() {
    let sd = 1e-3;
    let prob = CalibProblem::new(market(&GroupParams::ZERO, Some((sd, 17))));
    let fit = calibrate_heston(&prob, &perturbed(&truth())).unwrap();
    assert!(fit.converged);
    let n = prob.market.len() as f64;
    let expected = (n - 5.0) * sd * sd;
    assert!(fit.objective > 0.5 * expected && fit.objective < 2.0 * expected, "{} vs {expected}", fit.objective);
}

#[test]
fn uniform_weights_do_not_move_the_fit() {
    let base = CalibProblem::new(market(&GroupParams::ZERO, Some((1e-3, 3))));
    let scaled = CalibProblem { weights: Some(vec![4.0; base.market.len()]), ..base.clone() };
    let a = calibrate_heston(&base, &perturbed(&truth())).unwrap();
    let b = calibrate_heston(&scaled, &perturbed(&truth())).unwrap();
    for (x, y) in a.vector().iter().zip(b.vector()) {
        assert!((x - y).abs() < 1e-6 * y.abs(), "{x} vs {y}");
    }
    assert!((b.objective - 4.0 * a.objective).abs() < 1e-6 * b.objective);
}

#[test]
fn calibration_is_deterministic() {
    let prob = CalibProblem::new(market(&GroupParams::ZERO, Some((1e-3, 5))));
    let a = calibrate_heston(&prob, &perturbed(&truth())).unwrap();
    let b = calibrate_heston(&prob, &perturbed(&truth())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn enforced_feller_holds_at_the_optimum() {
    // The truth violates Feller: 2κθ = 0.12 < σ² = 0.25.
    let p = HestonParams::new_allow_feller_violation(2.0, 0.03, 0.5, -0.6, 0.04, 0.03).unwrap();
    let data = synthetic_market(&grid(), &p, &GroupParams::ZERO, None);
    let prob = CalibProblem { feller_mode: FellerMode::Enforce, ..CalibProblem::new(data) };
    let start = HestonParams::new(2.0, 0.04, 0.3, -0.5, 0.04, 0.03).unwrap();
    let fit = calibrate_heston(&prob, &start).unwrap();
    assert!(fit.feller_satisfied);
    assert!(2.0 * fit.params.kappa * fit.params.theta >= fit.params.sigma.powi(2) * (1.0 - 1e-9));
}

#[test]
fn second_stage_needs_a_converged_first_stage() {
    let prob = CalibProblem::new(market(&GroupParams::ZERO, None));
    let mut fit = calibrate_heston(&prob, &truth()).unwrap();
    fit.converged = false;
    assert!(matches!(calibrate_multiscale(&prob, &fit), Err(Error::NonConvergence { .. })));
}

#[test]
fn report_ratios_match_per_expiry_residuals() {
    let prob = CalibProblem::new(market(&small_v(), Some((2e-4, 11))));
    let h = calibrate_heston(&prob, &perturbed(&truth())).unwrap();
    let m = calibrate_multiscale(&prob, &h).unwrap();
    let rows = residual_report(&h, &m);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.n_quotes).sum::<usize>(), prob.market.len());
    for r in &rows {
        assert_eq!(r.ratio, r.heston / r.multiscale);
    }
    assert!(m.objective < h.objective);
}
