//! Shared test fixtures and independent oracles.
//!
//! The Monte Carlo here simulates the normalized spot directly (Euler) and
//! maps it through the affine spot→futures formula — deliberately a
//! different code path from both the PDE solver and the SLV engine it is
//! used to check.

use comvol::calib::LocalVolSurface;
use comvol::market::FuturesCurve;
use comvol::pde::GridSpec;
use comvol::spot::{CalibratedSpotModel, MeanReversion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Euler simulation of `ds = a(1−s)dt + η(t,s)s dW` to `horizon`, returning
/// the terminal cross-section.
pub fn simulate_spot_terminal(
    a: &MeanReversion,
    eta: &LocalVolSurface,
    horizon: f64,
    n_paths: usize,
    steps_per_year: usize,
    seed: u64,
) -> Vec<f64> {
    let n_steps = ((horizon * steps_per_year as f64).ceil() as usize).max(1);
    let dt = horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let mut s = 1.0_f64;
        for step in 0..n_steps {
            let t = (step as f64 + 0.5) * dt;
            let z: f64 = StandardNormal.sample(&mut rng);
            s += a.rate(t) * (1.0 - s) * dt + eta.eta(t, s.max(0.0)) * s.max(0.0) * sqrt_dt * z;
        }
        out.push(s);
    }
    out
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, (var / n).sqrt())
}

/// Flat-η model on a custom curve.
pub fn flat_model(a: f64, eta: f64, curve_pillars: Vec<(f64, f64)>) -> CalibratedSpotModel {
    let curve = FuturesCurve::new(curve_pillars).unwrap();
    let lv = LocalVolSurface::from_nodes(vec![(1.0, vec![(1.0, eta)])], 1e-4, 5.0).unwrap();
    CalibratedSpotModel::new(curve, MeanReversion::constant(a), lv, GridSpec::default(), None)
}

/// A random nodewise-ordered pair of local-vol surfaces (lower, upper).
pub fn random_ordered_pair(rng: &mut ChaCha8Rng) -> (LocalVolSurface, LocalVolSurface) {
    let pillar_ts = [0.3, 0.8, 1.5];
    let ks = [0.75, 0.9, 1.0, 1.1, 1.3];
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    // half the pairs are pure scalings (ordering exact by homogeneity),
    // half carry a smooth additive bump
    let scaling: bool = rng.random::<f64>() < 0.5;
    let factor = 1.05 + 0.3 * rng.random::<f64>();
    let bump_base = 0.03 + 0.05 * rng.random::<f64>();
    let bump_tilt = 0.02 * (rng.random::<f64>() - 0.5);
    for &t in &pillar_ts {
        let wiggle = 0.04 * rng.random::<f64>();
        let mut nodes_lo = Vec::new();
        let mut nodes_hi = Vec::new();
        for &k in &ks {
            let base = 0.18 + wiggle + 0.06 * (1.0 - k) + 0.05 * (k - 1.0) * (k - 1.0);
            let upper = if scaling { base * factor } else { base + bump_base + bump_tilt * (k - 1.0) };
            nodes_lo.push((k, base));
            nodes_hi.push((k, upper));
        }
        lo.push((t, nodes_lo));
        hi.push((t, nodes_hi));
    }
    (
        LocalVolSurface::from_nodes(lo, 1e-4, 5.0).unwrap(),
        LocalVolSurface::from_nodes(hi, 1e-4, 5.0).unwrap(),
    )
}
