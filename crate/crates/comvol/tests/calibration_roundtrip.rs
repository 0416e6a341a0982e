//! End-to-end calibration tests on synthetic markets.

mod common;

use comvol::calib::{calibrate, normalize_quotes, CalibrationConfig, CalibrationProblem, UpdateRule};
use comvol::pricing::PricingEngine;
use comvol::spot::MeanReversion;
use comvol::synth::{generate, SmileShape, SynthSpec};

fn small_fixture() -> SynthSpec {
    SynthSpec {
        maturities: vec![0.25, 0.6, 1.0],
        z_ladder: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        ..Default::default()
    }
}

#[test]
fn synthetic_market_recovers_generator_vols() {
    let synth = generate(&small_fixture()).unwrap();
    let cfg = CalibrationConfig::default();
    let (model, report) = calibrate(&synth.market, &synth.a_star, &cfg).unwrap();
    assert!(report.converged, "final {} bp", report.final_max_bp);
    assert!(report.final_max_bp <= 0.1);

    // the calibrated model reprices every market quote
    let expiries: Vec<f64> = synth.market.quotes.quotes.iter().map(|q| q.expiry).collect();
    let horizon = expiries.iter().copied().fold(0.0_f64, f64::max);
    let engine = PricingEngine::build(model, horizon, &expiries, &[]).unwrap();
    for q in &synth.market.quotes.quotes {
        let t_last = synth.market.t_last(&q.contract).unwrap();
        let vol = engine.implied_futures_vol(q.expiry, t_last, q.strike).unwrap();
        assert!(
            (vol - q.vol).abs() < 2.5e-5,
            "{} t={} K={}: model {vol} vs quote {}",
            q.contract,
            q.expiry,
            q.strike,
            q.vol
        );
    }
}

#[test]
fn normalization_identity_without_reversion() {
    // a = 0, future-style: k = K/F0 and σ_norm = σ_mkt
    let spec = SynthSpec { a_star: 0.0, flat_vol_override: Some(0.23), ..small_fixture() };
    let synth = generate(&spec).unwrap();
    let a = MeanReversion::constant(0.0);
    let normalized = normalize_quotes(&synth.market, &a).unwrap();
    for (p, pillar) in normalized.pillars.iter().enumerate() {
        for (j, &sigma) in pillar.sigmas.iter().enumerate() {
            assert!((sigma - 0.23).abs() < 1e-12, "pillar {p} node {j}: {sigma}");
        }
    }
}

#[test]
fn normalized_strike_remap_under_reversion() {
    // one quote at 0.9 moneyness, a = 0.5, one year to T^last:
    // k_eff = 1 − e^{A}(1 − 0.9)
    let spec = SynthSpec {
        a_star: 0.5,
        maturities: vec![1.0],
        z_ladder: vec![0.0],
        flat_vol_override: Some(0.2),
        ..Default::default()
    };
    let mut synth = generate(&spec).unwrap();
    let t_last = synth.market.t_last(&synth.contracts[0]).unwrap();
    let f0 = synth.market.curve.price(t_last).unwrap();
    let q = &mut synth.market.quotes.quotes[0];
    q.strike = 0.9 * f0;
    let t = q.expiry;

    let a = MeanReversion::constant(0.5);
    let normalized = normalize_quotes(&synth.market, &a).unwrap();
    let growth = a.integral(t, t_last).unwrap().exp();
    let expected = 1.0 - growth * 0.1;
    assert!((normalized.pillars[0].strikes[0] - expected).abs() < 1e-12);

    // premium equality: black_call(t, k_eff, σ_norm) = c_bs(t, K/F0, σ_mkt)·e^A
    let sigma_norm = normalized.pillars[0].sigmas[0];
    let lhs = comvol::black::black_call(t, expected, sigma_norm);
    let rhs = comvol::black::black_call(t, 0.9, 0.2) * growth;
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn fixed_point_step_is_identity_at_the_fixed_point() {
    let synth = generate(&small_fixture()).unwrap();
    let cfg = CalibrationConfig::default();
    let (model, report) = calibrate(&synth.market, &synth.a_star, &cfg).unwrap();
    assert!(report.converged);

    // collect converged nodes and push them through one more step
    let problem = CalibrationProblem::new(&synth.market, &synth.a_star, &cfg).unwrap();
    let mut nodes = Vec::new();
    for i in 0..model.local_vol.n_pillars() {
        let (_, etas) = model.local_vol.pillar_nodes(i);
        nodes.extend_from_slice(etas);
    }
    let out = problem.step(&nodes).unwrap();
    for (a, b) in out.image.iter().zip(&nodes) {
        assert!((a - b).abs() < 2e-6, "step moved a converged node by {}", (a - b).abs());
    }
}

#[test]
fn calibration_is_idempotent_from_a_converged_start() {
    let synth = generate(&small_fixture()).unwrap();
    let cfg = CalibrationConfig::default();
    let (model, _) = calibrate(&synth.market, &synth.a_star, &cfg).unwrap();
    let mut nodes = Vec::new();
    for i in 0..model.local_vol.n_pillars() {
        let (_, etas) = model.local_vol.pillar_nodes(i);
        nodes.extend_from_slice(etas);
    }
    let warm = CalibrationConfig { warm_start: Some(nodes.clone()), ..cfg };
    let (model2, report2) = calibrate(&synth.market, &synth.a_star, &warm).unwrap();
    assert_eq!(report2.iterations, 1); // converged on evaluation, no update applied
    let mut nodes2 = Vec::new();
    for i in 0..model2.local_vol.n_pillars() {
        let (_, etas) = model2.local_vol.pillar_nodes(i);
        nodes2.extend_from_slice(etas);
    }
    for (a, b) in nodes.iter().zip(&nodes2) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn single_quote_pillar_degenerates_to_scalar_iteration() {
    let spec = SynthSpec {
        maturities: vec![0.5],
        z_ladder: vec![0.0],
        smile: SmileShape::flat(0.3),
        ..Default::default()
    };
    let synth = generate(&spec).unwrap();
    let (model, report) = calibrate(&synth.market, &synth.a_star, &CalibrationConfig::default()).unwrap();
    assert!(report.converged);
    assert_eq!(model.local_vol.n_pillars(), 1);
    let (ks, etas) = model.local_vol.pillar_nodes(0);
    assert_eq!(ks.len(), 1);
    assert!((etas[0] - 0.3).abs() < 5e-3);
}

#[test]
fn level_skew_structure_on_pure_skew_mismatch() {
    // same ATM, different skew: one step leaves the ATM node unchanged and
    // shifts the wings by 2·Δskew·Δk
    let synth = generate(&small_fixture()).unwrap();
    let cfg = CalibrationConfig { update: UpdateRule::LevelSkew, ..Default::default() };
    let problem = CalibrationProblem::new(&synth.market, &synth.a_star, &cfg).unwrap();

    // converge first, then tilt the converged nodes of one pillar
    let (model, _) = calibrate(&synth.market, &synth.a_star, &cfg).unwrap();
    let mut nodes = Vec::new();
    for i in 0..model.local_vol.n_pillars() {
        let (_, etas) = model.local_vol.pillar_nodes(i);
        nodes.extend_from_slice(etas);
    }
    let base = problem.step(&nodes).unwrap();

    // a pure tilt around the ATM node of pillar 0
    let pillar = &problem.quotes().pillars[0];
    let atm = pillar.atm_index;
    let k_atm = pillar.strikes[atm];
    let mut tilted = nodes.clone();
    for (j, &k) in pillar.strikes.iter().enumerate() {
        tilted[j] += 0.05 * (k - k_atm);
    }
    let out = problem.step(&tilted).unwrap();
    // ATM image keeps the level map only: η_atm · ratio, where the tilt
    // leaves σ_model(ATM) nearly unchanged
    let atm_move = (out.image[atm] - base.image[atm]).abs();
    assert!(atm_move < 7e-3, "ATM node moved by {atm_move}");
    // wing images move against the tilt (skew correction), with the raw
    // 2·Δskew·Δk structure: the induced model-skew error is corrected
    let lo = 0;
    assert_ne!(lo, atm);
    let wing_correction = out.image[lo] - tilted[lo];
    assert!(wing_correction.abs() > 1e-3, "wing correction {wing_correction}");
}

#[test]
fn deep_itm_only_pillar_is_flagged() {
    // a pillar whose strikes sit entirely below the forward: the ATM node
    // lands on a wing and the report flags it
    let spec = SynthSpec {
        maturities: vec![0.4],
        z_ladder: vec![-2.0, -1.5, -1.0],
        flat_vol_override: Some(0.25),
        ..Default::default()
    };
    let synth = generate(&spec).unwrap();
    let cfg = CalibrationConfig { max_iterations: 5, ..Default::default() };
    let (_, report) = calibrate(&synth.market, &synth.a_star, &cfg).unwrap();
    assert_eq!(report.wing_atm_pillars.len(), 1);
}

#[test]
fn fully_clipped_step_stalls_and_damps() {
    // cap the band below the market level: every node clips, the step
    // reports a stall and the damped image stays at the current point
    let spec = SynthSpec {
        maturities: vec![0.3, 0.6],
        z_ladder: vec![-0.5, 0.0, 0.5],
        flat_vol_override: Some(0.3),
        a_star: 0.0,
        ..Default::default()
    };
    let synth = generate(&spec).unwrap();
    let cfg = CalibrationConfig { eta_min: 0.05, eta_max: 0.2, ..Default::default() };
    let problem = CalibrationProblem::new(&synth.market, &synth.a_star, &cfg).unwrap();
    let x = problem.initial_nodes(); // all clamped to 0.2
    assert!(x.iter().all(|&v| v == 0.2));
    let out = problem.step(&x).unwrap();
    assert!(out.stalled);
    assert_eq!(out.clipped, x.len());
    for (img, cur) in out.image.iter().zip(&x) {
        assert!((img - cur).abs() < 1e-12);
    }
}
