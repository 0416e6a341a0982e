//! Exotics against independent oracles: the one-factor Monte Carlo for the
//! CSO closed form, adaptive quadrature for the quotation metric, and the
//! mean-reversion fit round-trip.

mod common;

use common::{flat_model, mean_se, simulate_spot_terminal};
use comvol::exotics::{cso_metric_price, fit_mean_reversion, price_cso_closed_form, FitConfig};
use comvol::math::quad::adaptive_simpson;
use comvol::pricing::PricingEngine;
use comvol::spot::MeanReversion;
use comvol::synth::{generate, generate_cso_quotes, generator_model, SynthSpec};

/// One-factor MC price of the spread payoff via the exact affine map from
/// the simulated normalized spot.
fn cso_mc_oracle(
    a: &MeanReversion,
    model: &comvol::spot::CalibratedSpotModel,
    t_e: f64,
    t1: f64,
    t2: f64,
    strike: f64,
    n_paths: usize,
    seed: u64,
) -> (f64, f64) {
    let spots = simulate_spot_terminal(a, &model.local_vol, t_e, n_paths, 1460, seed);
    let f01 = model.curve.price(t1).unwrap();
    let f02 = model.curve.price(t2).unwrap();
    let d1 = (-a.integral(t_e, t1).unwrap()).exp();
    let d2 = (-a.integral(t_e, t2).unwrap()).exp();
    let payoffs: Vec<f64> = spots
        .iter()
        .map(|&s| {
            let fa = f01 * (1.0 - (1.0 - s) * d1);
            let fb = f02 * (1.0 - (1.0 - s) * d2);
            (fa - fb - strike).max(0.0)
        })
        .collect();
    mean_se(&payoffs)
}

#[test]
fn cso_closed_form_matches_one_factor_mc() {
    // backwardated curve: slope A > 0; strikes pick B > 0 and B <= 0
    let model = flat_model(0.5, 0.2, vec![(0.0, 102.0), (3.0, 98.0)]);
    let a = MeanReversion::constant(0.5);
    let engine = PricingEngine::build(model.clone(), 0.5, &[0.4], &[]).unwrap();
    for (i, &strike) in [-1.0_f64, 0.5, 3.0, -8.0].iter().enumerate() {
        let closed = price_cso_closed_form(&engine, 0.4, 0.5, 0.75, strike).unwrap();
        let (mc, se) = cso_mc_oracle(&a, &model, 0.4, 0.5, 0.75, strike, 150_000, 100 + i as u64);
        assert!(
            (closed - mc).abs() <= 3.0 * se + 1e-3,
            "K={strike}: closed={closed} mc={mc} se={se}"
        );
    }
}

#[test]
fn cso_negative_slope_cases_match_mc() {
    // steep contango and weak reversion so that the affine slope A is
    // negative (strong reversion re-discounts the far leg and flips it back)
    let model = flat_model(0.1, 0.2, vec![(0.0, 90.0), (0.5, 97.0), (1.0, 105.0), (3.0, 130.0)]);
    let a = MeanReversion::constant(0.1);
    let engine = PricingEngine::build(model.clone(), 0.5, &[0.4], &[]).unwrap();
    let f01 = model.curve.price(0.5).unwrap();
    let f02 = model.curve.price(1.0).unwrap();
    assert!(f01 < f02);
    // A < 0, B > 0: strike below the (negative) forward intrinsic
    let k_b_pos = f01 - f02 - 2.0;
    let closed = price_cso_closed_form(&engine, 0.4, 0.5, 1.0, k_b_pos).unwrap();
    let (mc, se) = cso_mc_oracle(&a, &model, 0.4, 0.5, 1.0, k_b_pos, 150_000, 7);
    assert!((closed - mc).abs() <= 3.0 * se + 1e-3, "closed={closed} mc={mc} se={se}");
    // A < 0, B <= 0: deep OTM, price exactly zero
    let closed0 = price_cso_closed_form(&engine, 0.4, 0.5, 1.0, 5.0).unwrap();
    assert_eq!(closed0, 0.0);
    let (mc0, se0) = cso_mc_oracle(&a, &model, 0.4, 0.5, 1.0, 5.0, 100_000, 8);
    assert!(mc0 <= 3.0 * se0 + 1e-12);
}

#[test]
fn metric_price_matches_adaptive_quadrature() {
    // independent oracle: integrate the kinked integrand directly
    for &(f01, f02, te, k, s1, s2) in &[
        (100.0_f64, 99.0, 0.25_f64, 0.5, 0.25, 0.22),
        (100.0, 100.0, 0.5, -1.0, 0.3, 0.35),
        (95.0, 105.0, 0.3, -12.0, 0.2, 0.18),
        (100.0, 98.0, 1.0, 0.0, 0.15, 0.4),
    ] {
        let integrand = |x: f64| {
            let leg1 = f01 * (-s1 * s1 * te - s1 * te.sqrt() * x).exp();
            let leg2 = f02 * (-s2 * s2 * te - s2 * te.sqrt() * x).exp();
            (leg1 - leg2 - k).max(0.0) * comvol::math::norm_pdf(x)
        };
        let oracle = adaptive_simpson(integrand, -12.0, 12.0, 1e-11).unwrap();
        let closed = cso_metric_price(f01, f02, te, k, s1, s2).unwrap();
        assert!(
            (closed - oracle).abs() < 1e-8 * oracle.max(1.0),
            "closed={closed} oracle={oracle}"
        );
    }
}

#[test]
fn mean_reversion_fit_recovers_generator() {
    // small backwardated vanilla fixture and CSO quotes generated at a* = 0.5
    let spec = SynthSpec {
        maturities: vec![0.2, 0.35, 0.5],
        z_ladder: vec![-0.8, 0.0, 0.8],
        curve_drift: -0.03,
        ..Default::default()
    };
    let synth = generate(&spec).unwrap();
    let gen_model = generator_model(&synth, Default::default()).unwrap();
    let horizon = synth.market.quotes.max_expiry();
    let expiries: Vec<f64> = synth.market.quotes.quotes.iter().map(|q| q.expiry).collect();
    let engine = PricingEngine::build(gen_model, horizon, &expiries, &[]).unwrap();
    let cso = generate_cso_quotes(&synth, &engine, &[(0, 1), (1, 2)]).unwrap();

    // coarse grid for speed; the acceptance suite runs the full grid
    let cfg = FitConfig {
        a_grid: (0..=8).map(|i| 0.125 * i as f64).collect(),
        refine_tol: 0.02,
        report_grid: vec![0.0, 0.5, 1.0],
        ..Default::default()
    };
    let (fitted, report) = fit_mean_reversion(&cso, &synth.market, &cfg).unwrap();
    let a_hat = fitted.rate(0.0);
    assert!(
        (a_hat - 0.5).abs() <= 0.1,
        "fitted {a_hat}, sse grid {:?}",
        report.grid
    );
    assert!(report.skipped.is_empty(), "skipped: {:?}", report.skipped);
}

#[test]
fn zero_drops_need_no_reversion() {
    // CSO prices computed under a = 0 have (near) zero drop; the fit should
    // come back with a ≈ 0
    let spec = SynthSpec {
        a_star: 0.0,
        maturities: vec![0.2, 0.35, 0.5],
        z_ladder: vec![-0.8, 0.0, 0.8],
        curve_drift: -0.03,
        ..Default::default()
    };
    let synth = generate(&spec).unwrap();
    let gen_model = generator_model(&synth, Default::default()).unwrap();
    let horizon = synth.market.quotes.max_expiry();
    let expiries: Vec<f64> = synth.market.quotes.quotes.iter().map(|q| q.expiry).collect();
    let engine = PricingEngine::build(gen_model, horizon, &expiries, &[]).unwrap();
    let cso = generate_cso_quotes(&synth, &engine, &[(0, 1), (1, 2)]).unwrap();

    let cfg = FitConfig {
        a_grid: (0..=6).map(|i| 0.1 * i as f64).collect(),
        refine_tol: 0.02,
        report_grid: vec![],
        ..Default::default()
    };
    let (fitted, _) = fit_mean_reversion(&cso, &synth.market, &cfg).unwrap();
    assert!(fitted.rate(0.0) <= 0.05, "fitted {}", fitted.rate(0.0));
}
