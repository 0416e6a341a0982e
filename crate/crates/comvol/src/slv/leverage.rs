//! Particle estimate of the conditional second moment E[v² | F].
//!
//! The cross-section is compressed into uniform bins and smoothed with a
//! Nadaraya–Watson regression (Epanechnikov kernel, Silverman-rule bandwidth
//! scaled by 1.5). The window widens locally until it sees a minimum number
//! of effective particles, and small clouds fall back to coarse binned
//! means. The estimate feeds the leverage denominator of the simulation, so
//! it must stay strictly positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeverageConfig {
    /// Uniform bin count of the compressed cross-section.
    pub bins: usize,
    /// Bandwidth multiplier on the Silverman rule.
    pub bandwidth_mult: f64,
    /// Minimum effective particle count any evaluation window must contain.
    pub min_effective: usize,
    /// Minimum cloud size for the estimator to run at all.
    pub min_paths: usize,
}

impl Default for LeverageConfig {
    fn default() -> Self {
        Self { bins: 400, bandwidth_mult: 1.5, min_effective: 50, min_paths: 1000 }
    }
}

/// Piecewise-constant lookup of the smoothed conditional expectation on the
/// bin mesh of one pillar's cross-section.
#[derive(Debug, Clone)]
pub struct LeverageTable {
    lo: f64,
    inv_width: f64,
    values: Vec<f64>,
}

impl LeverageTable {
    /// E[v² | F ≈ f], clamped to the mesh range.
    #[inline]
    pub fn eval(&self, f: f64) -> f64 {
        let idx = ((f - self.lo) * self.inv_width) as isize;
        let idx = idx.clamp(0, self.values.len() as isize - 1) as usize;
        self.values[idx]
    }
}

/// Estimate E[v² | F] from the particle cloud.
pub fn estimate(futures: &[f64], v_squared: &[f64], cfg: &LeverageConfig) -> Result<LeverageTable> {
    let n = futures.len();
    if n != v_squared.len() {
        return Err(Error::invalid("leverage", "mismatched cross-section lengths"));
    }
    if n < cfg.min_paths {
        return Err(Error::invalid(
            "leverage",
            format!("cloud of {n} particles is below the configured minimum {}", cfg.min_paths),
        ));
    }

    let (mut lo, mut hi, mut sum, mut sum_sq) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0);
    for &f in futures {
        lo = lo.min(f);
        hi = hi.max(f);
        sum += f;
        sum_sq += f * f;
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::numerical("leverage", "non-finite futures in the cloud"));
    }
    if hi - lo < 1e-14 * hi.abs().max(1.0) {
        // degenerate cloud: conditional = unconditional mean
        let mean = v_squared.iter().sum::<f64>() / n as f64;
        return Ok(LeverageTable { lo: lo - 0.5, inv_width: 1.0, values: vec![mean.max(1e-12)] });
    }

    // binned fallback for small clouds, full mesh otherwise
    let bins = if n < 8 * cfg.bins { (n / 50).clamp(10, cfg.bins) } else { cfg.bins };
    let width = (hi - lo) / bins as f64;
    let mut count = vec![0.0_f64; bins];
    let mut mass = vec![0.0_f64; bins];
    for (&f, &v2) in futures.iter().zip(v_squared) {
        let b = (((f - lo) / width) as usize).min(bins - 1);
        count[b] += 1.0;
        mass[b] += v2;
    }

    let mean = sum / n as f64;
    let std = ((sum_sq / n as f64 - mean * mean).max(0.0)).sqrt();
    let silverman = 1.06 * std * (n as f64).powf(-0.2);
    let base_h = (cfg.bandwidth_mult * silverman).max(width);

    let centers: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let mut values = vec![0.0; bins];
    for b in 0..bins {
        let x = centers[b];
        let mut h = base_h;
        loop {
            let lo_b = (((x - h - lo) / width).floor().max(0.0)) as usize;
            let hi_b = ((((x + h - lo) / width).ceil()) as usize).min(bins - 1);
            let mut eff = 0.0;
            let mut num = 0.0;
            let mut den = 0.0;
            for j in lo_b..=hi_b {
                if count[j] == 0.0 {
                    continue;
                }
                let u = (centers[j] - x) / h;
                if u.abs() >= 1.0 {
                    continue;
                }
                let w = 0.75 * (1.0 - u * u);
                eff += count[j];
                num += w * mass[j];
                den += w * count[j];
            }
            if eff >= cfg.min_effective as f64 || h > (hi - lo) {
                values[b] = if den > 0.0 { (num / den).max(1e-12) } else { 1.0 };
                break;
            }
            h *= 2.0;
        }
    }

    Ok(LeverageTable { lo, inv_width: 1.0 / width, values })
}
