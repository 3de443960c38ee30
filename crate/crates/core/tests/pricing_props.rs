mod common;

use common::{fig1_heston, table1_heston};
use multiscale_heston::kernel::Kernel;
use multiscale_heston::pricer::{p00_full_line, payoff_transform_call, price_corrected, price_grid, price_heston};
use multiscale_heston::quadrature::{halfline_via_u, integrate, integrate_triangle, integrate_unit, triangle_to_rect};
use multiscale_heston::{GroupParams, OptionSpec, QuadratureSpec, Wavenumber};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn spec() -> QuadratureSpec {
    QuadratureSpec::default()
}

#[test]
fn payoff_transform_high_precision() {
    let h = payoff_transform_call(Wavenumber::new(1.0, 1.5), 100.0).unwrap();
    let want = Complex64::new(0.049606609469963616656, 0.00085015200580694169597);
    assert!((h - want).norm() < 1e-14 * want.norm(), "{h}");
}

/// Folded call integrand by the trapezoid rule on `[0, 500]` with step 1e-3.
fn brute_force_call(opt: &OptionSpec, p: &multiscale_heston::HestonParams) -> f64 {
    let tau = opt.tau();
    let q = p.r * tau + opt.spot.ln();
    let lk = opt.strike.ln();
    let f = |kr: f64| -> f64 {
        let k = Complex64::new(kr, 1.5);
        let Ok(kern) = Kernel::new(k.into(), p) else { return 0.0 };
        let lg = kern.log_g_hat(tau).unwrap();
        if lg.re < -700.0 {
            return 0.0;
        }
        ((-I * k * q + lg + (1.0 + I * k) * lk).exp() / (I * k - k * k)).re
    };
    let h = 1e-3;
    let n = 500_000;
    let mut sum = 0.5 * (f(0.0) + f(n as f64 * h));
    for i in 1..n {
        sum += f(i as f64 * h);
    }
    (-p.r * tau).exp() / std::f64::consts::PI * sum * h
}

#[test]
fn heston_price_matches_cutoff_trapezoid() {
    let p = table1_heston();
    for (k, t) in [(100.0, 1.0), (80.0, 0.5), (130.0, 2.0)] {
        let opt = OptionSpec::call(100.0, k, t);
        let ours = price_heston(&opt, &p, &spec()).unwrap().p_heston;
        let brute = brute_force_call(&opt, &p);
        assert!((ours - brute).abs() <= 1e-6 * brute, "K {k} T {t}: {ours} vs {brute}");
    }
}

#[test]
fn folded_equals_full_line() {
    for p in [table1_heston(), fig1_heston()] {
        let opt = OptionSpec::call(100.0, 95.0, 0.75);
        let full = p00_full_line(&opt, &p, &spec()).unwrap();
        let folded = price_heston(&opt, &p, &spec()).unwrap();
        assert!(full.im.abs() <= 1e-8 * full.re.abs(), "{full}");
        let price = (-p.r * opt.tau()).exp() / (2.0 * std::f64::consts::PI) * full.re;
        assert!((price - folded.p_heston).abs() < 1e-7, "{price} vs {}", folded.p_heston);
    }
}

#[test]
fn put_call_parity() {
    let p = table1_heston();
    let v = GroupParams::new(-0.0019, 0.00016, 0.0096, -0.00043);
    for (k, t) in [(100.0, 1.0), (70.0, 0.25), (140.0, 3.0)] {
        let c = price_corrected(&OptionSpec::call(100.0, k, t), &p, &v, &spec()).unwrap();
        let put = price_corrected(&OptionSpec::put(100.0, k, t), &p, &v, &spec()).unwrap();
        let fwd = 100.0 - k * (-p.r * t).exp();
        assert!((c.p_heston - put.p_heston - fwd).abs() < 1e-6, "heston K {k}");
        // the correction of a forward is zero
        assert!((c.p_correction - put.p_correction).abs() < 1e-6, "correction K {k}");
    }
}

#[test]
fn deep_in_the_money_short_dated() {
    let p = table1_heston();
    let b = price_heston(&OptionSpec::call(100.0, 1.0, 0.01), &p, &spec()).unwrap();
    let intrinsic = 100.0 - (-p.r * 0.01f64).exp();
    assert!((b.p_heston - intrinsic).abs() < 1e-6, "{} vs {intrinsic}", b.p_heston);
}

#[test]
fn call_prices_decrease_and_are_convex_in_strike() {
    let p = table1_heston();
    let strikes: Vec<f64> = (0..50).map(|i| 50.0 + 2.0 * i as f64).collect();
    let opts: Vec<_> = strikes.iter().map(|&k| OptionSpec::call(100.0, k, 1.0)).collect();
    let prices: Vec<f64> =
        price_grid(&opts, &p, &GroupParams::ZERO, &spec()).into_iter().map(|r| r.unwrap().p_heston).collect();
    for w in prices.windows(2) {
        assert!(w[1] < w[0]);
    }
    for w in prices.windows(3) {
        assert!(w[0] - 2.0 * w[1] + w[2] > -1e-9);
    }
}

#[test]
fn grid_matches_serial_evaluation() {
    let p = table1_heston();
    let v = GroupParams::new(-0.0019, 0.00016, 0.0096, -0.00043);
    let opts: Vec<_> = (0..100).map(|i| OptionSpec::call(100.0, 60.0 + 0.8 * i as f64, 1.0)).collect();
    let grid = price_grid(&opts, &p, &v, &spec());
    for (i, o) in opts.iter().enumerate().step_by(9) {
        let single = price_corrected(o, &p, &v, &spec()).unwrap();
        let g = grid[i].as_ref().unwrap();
        assert!((single.total() - g.total()).abs() < 1e-8, "strike {}", o.strike);
    }
    let mut permuted = opts.clone();
    permuted.reverse();
    let back = price_grid(&permuted, &p, &v, &spec());
    for (a, b) in grid.iter().zip(back.iter().rev()) {
        assert_eq!(a.as_ref().unwrap().total(), b.as_ref().unwrap().total());
    }
    let one = price_grid(&opts[..1], &p, &v, &spec());
    assert_eq!(one[0].as_ref().unwrap().total(), grid[0].as_ref().unwrap().total());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn correction_is_linear_in_group_params(
        a in prop::array::uniform4(-0.05f64..0.05),
        b in prop::array::uniform4(-0.05f64..0.05),
        c in -3.0f64..3.0,
        strike in 70.0f64..130.0,
    ) {
        let p = table1_heston();
        let opt = OptionSpec::call(100.0, strike, 0.8);
        let va = GroupParams::from_array(a);
        let vb = GroupParams::from_array(b);
        let sum = GroupParams::from_array([a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
        let pa = price_corrected(&opt, &p, &va, &spec()).unwrap();
        let pb = price_corrected(&opt, &p, &vb, &spec()).unwrap();
        let ps = price_corrected(&opt, &p, &sum, &spec()).unwrap();
        prop_assert!((ps.p_correction - pa.p_correction - pb.p_correction).abs() < 1e-8);
        let pc = price_corrected(&opt, &p, &va.scaled(c), &spec()).unwrap();
        prop_assert!((pc.p_correction - c * pa.p_correction).abs() < 1e-8);
        prop_assert_eq!(pa.p_heston, pb.p_heston);
    }

    #[test]
    fn zero_group_params_give_heston(strike in 50.0f64..150.0, t in 0.05f64..5.0) {
        let p = table1_heston();
        let opt = OptionSpec::call(100.0, strike, t);
        let h = price_heston(&opt, &p, &spec()).unwrap();
        let c = price_corrected(&opt, &p, &GroupParams::ZERO, &spec()).unwrap();
        prop_assert_eq!(c.p_heston, h.p_heston);
        prop_assert_eq!(c.p_correction, 0.0);
        prop_assert_eq!(c.total(), h.total());
    }

    #[test]
    fn halfline_matches_cutoff(a in 0.3f64..3.0, n in 0u32..3) {
        // ∫₀^∞ kⁿ e^{−a k} dk = n!/a^{n+1}
        let s = spec().with_c_infinity(a);
        let est = halfline_via_u(|k| k.powi(n as i32) * (-a * k).exp(), &s).unwrap();
        let exact = (1..=n).product::<u32>() as f64 / a.powi(n as i32 + 1);
        let cutoff = integrate(|k| k.powi(n as i32) * (-a * k).exp(), 0.0, 500.0, &s).unwrap();
        prop_assert!((est.value - exact).abs() <= 1e-8 * exact.max(1.0));
        prop_assert!((est.value - cutoff.value).abs() <= est.error + cutoff.error + 1e-9);
    }
}

#[test]
fn unit_interval_and_halfline_examples() {
    assert!((integrate_unit(|_| 1.0, &spec()).unwrap().value - 1.0).abs() < 1e-14);
    assert!((integrate_unit(|u| -u.ln(), &spec()).unwrap().value - 1.0).abs() < 1e-8);
    assert!((integrate_unit(|u| u.powf(-0.5), &spec()).unwrap().value - 2.0).abs() < 1e-7);
    let c = 1.7;
    let s = spec().with_c_infinity(c);
    assert!((halfline_via_u(|k| (-k * c).exp(), &s).unwrap().value - 1.0 / c).abs() < 1e-14);
    let g = halfline_via_u(|k| (-k * k).exp(), &spec()).unwrap().value;
    assert!((g - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-8);
}

#[test]
fn error_estimates_bound_true_errors() {
    // p(x)·e^{−a x} on [0, 1] against the closed form of ∫ xⁿ e^{−ax}.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let moment = |n: usize, a: f64| -> f64 {
        // ∫₀¹ xⁿ e^{−ax} dx = e^{−a} Σⱼ aʲ / ((n+1)(n+2)…(n+1+j)), all terms positive
        let (mut term, mut sum) = (1.0 / (n as f64 + 1.0), 0.0);
        for j in 0..200 {
            sum += term;
            term *= a / (n as f64 + 2.0 + j as f64);
        }
        (-a).exp() * sum
    };
    let s = spec().with_tolerances(1e-7, 1e-7);
    for _ in 0..50 {
        let coeffs: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = rng.random_range(0.5..8.0);
        let exact: f64 = coeffs.iter().enumerate().map(|(n, c)| c * moment(n, a)).sum();
        let est = integrate(
            |x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c) * (-a * x).exp(),
            0.0,
            1.0,
            &s,
        )
        .unwrap();
        assert!((est.value - exact).abs() <= est.error + 4.0 * f64::EPSILON * exact.abs(), "{} vs {exact} (bound {})", est.value, est.error);
    }
}

#[test]
fn more_subdivisions_never_increase_error() {
    let f = |x: f64| (30.0 * x).sin() / (x + 1e-3).sqrt();
    let mut last = f64::INFINITY;
    for max in [4usize, 8, 16, 32, 64, 128] {
        let s = QuadratureSpec { max_subdivisions: max, ..spec().with_tolerances(1e-14, 1e-14) };
        let est = multiscale_heston::quadrature::integrate_vec(1, |x, o| o[0] = f(x), 0.0, 1.0, &s);
        assert!(est.error <= last, "{max}: {} > {last}", est.error);
        last = est.error;
    }
}

#[test]
fn triangle_examples_and_oracle() {
    let area = integrate_triangle(|_, _| 1.0, 2.0, &spec()).unwrap().value;
    assert!((area - 2.0).abs() < 1e-12);
    let first = integrate_triangle(|_, s| s, 1.0, &spec()).unwrap().value;
    assert!((first - 1.0 / 6.0).abs() < 1e-12);
    let rect = triangle_to_rect(|t: f64, s: f64| (t * s).cos());
    assert_eq!(rect(0.5, 0.4), (0.5f64 * 0.2).cos() * 0.5);

    // correction integrand Re[b(s)e^{A(t,s)}] on the triangle, against nested
    // integration over s ∈ (0, t) without the rectangle map
    let p = table1_heston();
    let v = GroupParams::new(-0.19, 0.016, 0.96, -0.043);
    let kern = Kernel::new(Wavenumber::new(1.3, 1.5), &p).unwrap();
    let tau = 1.0;
    let f = |t: f64, s: f64| (kern.b_source(s, &v).unwrap() * kern.big_a(t, s).unwrap().exp()).re;
    let ours = integrate_triangle(f, tau, &spec()).unwrap().value;
    let inner = |t: f64| integrate(|s| f(t, s), 0.0, t, &spec().with_tolerances(1e-12, 1e-12)).unwrap().value;
    let direct = integrate(inner, 0.0, tau, &spec().with_tolerances(1e-11, 1e-11)).unwrap().value;
    assert!((ours - direct).abs() < 1e-6, "{ours} vs {direct}");
}
