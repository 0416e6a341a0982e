//! Property and oracle tests of the Black analytics layer.

mod common;

use comvol::black::{
    black_call, black_greeks, implied_vol, local_vol_from_implied, FnSurface, ImpliedSurface,
};
use comvol::pde::{solve_dupire, GridSpec, PdeGrid};
use comvol::spot::MeanReversion;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn call_price_in_static_band(
        t in 0.01_f64..3.0,
        k in 0.3_f64..2.5,
        sigma in 0.05_f64..1.2,
    ) {
        let c = black_call(t, k, sigma);
        prop_assert!(c >= (1.0 - k).max(0.0) - 1e-14);
        prop_assert!(c <= 1.0);
    }

    #[test]
    fn implied_vol_round_trips(
        t in 0.02_f64..3.0,
        k in 0.5_f64..1.8,
        sigma in 0.03_f64..1.0,
    ) {
        let price = black_call(t, k, sigma);
        prop_assume!(price > (1.0 - k).max(0.0) + 1e-14 && price < 1.0 - 1e-14);
        let iv = implied_vol(price, t, k).unwrap();
        // the solver's contract is price-space accuracy; vol accuracy is
        // vega-limited in the far wings
        prop_assert!((black_call(t, k, iv) - price).abs() <= 1e-12);
        let vega = comvol::black::black_vega(t, k, sigma).max(1e-300);
        prop_assert!((iv - sigma).abs() < 1e-12 / vega + 1e-10, "iv={iv} sigma={sigma}");
    }

    #[test]
    fn greeks_match_bumps(
        t in 0.05_f64..2.5,
        k in 0.6_f64..1.6,
        sigma in 0.08_f64..0.8,
    ) {
        let g = black_greeks(t, k, sigma).unwrap();
        let h = 1e-6;
        let fd_vega = (black_call(t, k, sigma + h) - black_call(t, k, sigma - h)) / (2.0 * h);
        prop_assert!((g.vega - fd_vega).abs() <= 1e-5 * g.vega.abs().max(1e-4));
        // exact algebraic identities (a couple of ulps of rounding)
        prop_assert!((g.theta - sigma / (2.0 * t) * g.vega).abs() <= 1e-18);
        prop_assert!((g.dual_gamma * k * k * sigma * t - g.vega).abs() <= 4.0 * f64::EPSILON * g.vega);
    }
}

#[test]
fn call_is_decreasing_and_convex_in_strike() {
    for &(t, sigma) in &[(0.1, 0.2), (1.0, 0.35), (2.5, 0.12)] {
        let ks: Vec<f64> = (1..200).map(|i| 0.02 * i as f64).collect();
        let cs: Vec<f64> = ks.iter().map(|&k| black_call(t, k, sigma)).collect();
        for i in 1..cs.len() {
            assert!(cs[i] <= cs[i - 1] + 1e-14, "not decreasing at k={}", ks[i]);
        }
        for i in 1..cs.len() - 1 {
            let second = cs[i + 1] - 2.0 * cs[i] + cs[i - 1];
            assert!(second >= -1e-12, "not convex at k={}", ks[i]);
        }
    }
}

/// The local-vol-from-implied map must invert the forward PDE: generate an
/// implied surface from a known flat η under mean reversion, then recover η.
#[test]
fn local_vol_map_recovers_eta_from_pde_surface() {
    let eta_true = 0.25;
    let a_val = 0.5;
    let a = MeanReversion::constant(a_val);
    let spec = GridSpec { n_strike: 800, sinh_concentration: 0.1, min_steps_to_first: 96, ..GridSpec::default() };
    let maturities: Vec<f64> = (1..=12).map(|i| 0.1 * i as f64).collect();
    let grid = PdeGrid::build(&spec, 1.2, &maturities, &[], 0.3).unwrap();
    let surf = solve_dupire(&|_: f64, _: f64| eta_true, &a, &grid).unwrap();

    let view = FnSurface(move |t: f64, k: f64| surf.implied_vol_at(t, k).unwrap());
    for &t in &[0.3, 0.6, 1.0] {
        for &k in &[0.85, 1.0, 1.15] {
            let eta = local_vol_from_implied(&view, |_| a_val, t, k).unwrap();
            assert!(
                (eta - eta_true).abs() < 4e-3,
                "t={t} k={k}: eta={eta} (true {eta_true})"
            );
        }
    }
}

/// With zero mean reversion the map must agree with the classical
/// lognormal-Dupire ratio (flat smile → flat local vol, exactly).
#[test]
fn local_vol_map_classical_limit() {
    let surf = FnSurface(|_t: f64, k: f64| 0.2 + 0.05 * (k - 1.0));
    // drift term off: a ≡ 0; compare against the same formula evaluated
    // with the drift term dropped manually
    let with_zero_a = local_vol_from_implied(&surf, |_| 0.0, 0.5, 1.1).unwrap();
    // An independent evaluation of the classical Dupire ratio in implied
    // form, using the same finite differences.
    let (t, k) = (0.5_f64, 1.1_f64);
    let sigma = surf.vol(t, k);
    let d_t = surf.d_t(t, k);
    let d_k = surf.d_k(t, k);
    let d_kk = surf.d_kk(t, k);
    let srt = sigma * t.sqrt();
    let y = comvol::black::black_y(t, k, sigma);
    let num = sigma * sigma + 2.0 * sigma * t * d_t;
    let den = 1.0
        + 2.0 * k * t.sqrt() * (y + srt) * d_k
        + k * k * sigma * t * d_kk
        + k * k * t * y * (y + srt) * d_k * d_k;
    let classical = (num / den).sqrt();
    assert!((with_zero_a - classical).abs() < 1e-12);
}
