//! The mean-reverting normalized fictitious-spot model.
//!
//! The normalized spot `s` follows `ds = a(t)(1 − s) dt + η(t, s) s dW` with
//! `s₀ = 1`, which reprices the whole futures curve by construction:
//! `F_t(T) = F₀(T) (1 − (1 − s_t) e^{−A(t,T)})` with `A(t,T) = ∫ₜᵀ a`.
//! This module holds the mean-reversion term structure, the affine
//! spot↔futures maps, the effective-strike remap, and the calibrated model
//! object with its JSON schema.

use serde::{Deserialize, Serialize};

use crate::calib::LocalVolSurface;
use crate::error::{Error, Result};
use crate::market::FuturesCurve;
use crate::pde::{CallSurface, GridSpec};

/// Piecewise-constant mean-reversion speed a(t) ≥ 0 with exact integrals.
///
/// `values[i]` applies on `[times[i], times[i+1])`; the last value extends to
/// infinity. `times[0]` must be 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeanReversionDoc", into = "MeanReversionDoc")]
pub struct MeanReversion {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeanReversionDoc {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl From<MeanReversion> for MeanReversionDoc {
    fn from(m: MeanReversion) -> Self {
        Self { breakpoints: m.times, values: m.values }
    }
}

impl TryFrom<MeanReversionDoc> for MeanReversion {
    type Error = Error;

    fn try_from(doc: MeanReversionDoc) -> Result<Self> {
        MeanReversion::piecewise(doc.breakpoints, doc.values)
    }
}

impl MeanReversion {
    /// Constant speed.
    pub fn constant(a: f64) -> Self {
        Self::piecewise(vec![0.0], vec![a]).expect("constant speed must be non-negative")
    }

    pub fn piecewise(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid("mean reversion", "need matching non-empty breakpoints and values"));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid("mean reversion", "first breakpoint must be 0"));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("mean reversion", "breakpoints must be strictly increasing"));
            }
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("mean reversion", "speeds must be finite and non-negative"));
        }
        Ok(Self { times, values })
    }

    /// a(t); constant beyond the last breakpoint, a(t<0) = a(0).
    pub fn rate(&self, t: f64) -> f64 {
        let i = match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            p => p - 1,
        };
        self.values[i]
    }

    /// Exact integral A(t, T) = ∫ₜᵀ a(u) du for t ≤ T.
    pub fn integral(&self, t: f64, horizon: f64) -> Result<f64> {
        if horizon < t {
            return Err(Error::domain(
                "mean reversion",
                format!("negative time interval: t={t}, T={horizon}"),
            ));
        }
        let mut acc = 0.0;
        for (i, &seg_start) in self.times.iter().enumerate() {
            let seg_end = self.times.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let lo = seg_start.max(t);
            let hi = seg_end.min(horizon);
            if hi > lo {
                acc += self.values[i] * (hi - lo);
            }
        }
        Ok(acc)
    }

    pub fn breakpoints(&self) -> (&[f64], &[f64]) {
        (&self.times, &self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max_rate(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// Effective strike of a futures option in normalized-spot space:
/// `k_F(t, T, K) = 1 − e^{A(t,T)} (1 − K/F₀(T))`.
pub fn effective_strike(a: &MeanReversion, t: f64, horizon: f64, strike: f64, f0t: f64) -> Result<f64> {
    if f0t <= 0.0 {
        return Err(Error::domain("effective_strike", format!("futures price must be positive, got {f0t}")));
    }
    let growth = a.integral(t, horizon)?.exp();
    Ok(1.0 - growth * (1.0 - strike / f0t))
}

/// Futures price implied by a normalized-spot level:
/// `F_t(T) = F₀(T) (1 − (1 − s_t) e^{−A(t,T)})`.
pub fn futures_from_spot(a: &MeanReversion, curve: &FuturesCurve, t: f64, horizon: f64, spot: f64) -> Result<f64> {
    let decay = (-a.integral(t, horizon)?).exp();
    Ok(curve.price(horizon)? * (1.0 - (1.0 - spot) * decay))
}

/// Terminal correlation between any two futures prices in the one-factor
/// model. Both prices are affine in the same normalized spot with positive
/// slopes, so the correlation is identically one; the SLV module exists to
/// relax exactly this.
pub fn terminal_correlation_onefactor(_t: f64, _t1: f64, _t2: f64) -> f64 {
    1.0
}

/// Current schema version of the serialized model document.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A fully calibrated one-factor model: futures curve, mean-reversion speed
/// and local-vol surface, plus the PDE grid spec used to reprice it.
/// Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratedSpotModel {
    schema_version: u32,
    pub valuation_date: Option<chrono::NaiveDate>,
    pub day_count: String,
    pub curve: FuturesCurve,
    pub mean_reversion: MeanReversion,
    pub local_vol: LocalVolSurface,
    pub grid: GridSpec,
}

impl CalibratedSpotModel {
    pub fn new(
        curve: FuturesCurve,
        mean_reversion: MeanReversion,
        local_vol: LocalVolSurface,
        grid: GridSpec,
        valuation_date: Option<chrono::NaiveDate>,
    ) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            valuation_date,
            day_count: crate::market::DAY_COUNT.to_string(),
            curve,
            mean_reversion,
            local_vol,
            grid,
        }
    }

    /// Futures strike level at which the remapped volatility vanishes:
    /// `F₀(T) (1 − e^{−A(t,T)})`. Strikes below it have no optionality.
    pub fn absorbing_level(&self, t: f64, horizon: f64) -> Result<f64> {
        let decay = (-self.mean_reversion.integral(t, horizon)?).exp();
        Ok(self.curve.price(horizon)? * (1.0 - decay))
    }

    /// Absolute (price-unit) local volatility of the futures price,
    /// `η_F(t, T, K) = (K − F₀(T)(1 − e^{−A})) · η(t, k_F(t, T, K))`.
    pub fn futures_local_vol(&self, t: f64, horizon: f64, strike: f64) -> Result<f64> {
        let level = self.absorbing_level(t, horizon)?;
        if strike < level - 1e-12 * level.abs().max(1.0) {
            return Err(Error::domain(
                "futures_local_vol",
                format!("strike {strike} below the absorbing level {level:.6} at (t={t}, T={horizon})"),
            ));
        }
        let f0t = self.curve.price(horizon)?;
        let k_eff = effective_strike(&self.mean_reversion, t, horizon, strike, f0t)?;
        Ok((strike - level).max(0.0) * self.local_vol.eta(t, k_eff.max(0.0)))
    }

    /// Moments of the normalized spot. Order 1 is exactly 1 by the drift
    /// construction (this is what makes futures repricing exact); order 2 is
    /// read off the solved call surface via `E[s²] = 2 ∫ c(t, k) dk`.
    pub fn spot_moment(&self, surface: &CallSurface, t: f64, order: u32) -> Result<f64> {
        match order {
            1 => Ok(1.0),
            2 => {
                let slice = surface.slice_at(t)?;
                let ks = surface.strikes();
                let mut acc = 0.0;
                for i in 1..ks.len() {
                    acc += 0.5 * (slice[i] + slice[i - 1]) * (ks[i] - ks[i - 1]);
                }
                Ok(2.0 * acc)
            }
            other => Err(Error::domain("spot_moment", format!("order {other} not supported (use 1 or 2)"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Peek at the version first so mismatches are reported as such
        // rather than as arbitrary missing-field errors.
        #[derive(Deserialize)]
        struct VersionProbe {
            schema_version: u32,
        }
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                expected: MODEL_SCHEMA_VERSION,
                found: probe.schema_version,
            });
        }
        let model: CalibratedSpotModel = serde_json::from_str(text)?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
