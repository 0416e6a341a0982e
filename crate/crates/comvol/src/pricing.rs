//! Vanilla pricing under both margining styles.
//!
//! Future-style options carry no discount factor (the premium is paid at
//! expiry under unremunerated variation margin); equity-style options are
//! the same expectation multiplied by the discount factor to the premium
//! payment date. Both reduce to the normalized call surface through
//!
//! ```text
//! C = F₀(T) e^{−A(t,T)} c(t, k_F(t, T, K))          (future-style)
//! C · P₀(T_p; e)                                     (equity-style)
//! ```
//!
//! Strikes at or below the absorbing level have no optionality left and
//! price as forwards through the exact linear extension of the surface.

use crate::error::{Error, Result};
use crate::market::DiscountCurve;
use crate::pde::{solve_dupire, CallSurface, PdeGrid};
use crate::spot::{effective_strike, CalibratedSpotModel};

/// A calibrated model bundled with its solved call surface; one PDE sweep
/// prices every vanilla the surface covers.
#[derive(Debug, Clone)]
pub struct PricingEngine {
    model: CalibratedSpotModel,
    surface: CallSurface,
}

impl PricingEngine {
    /// Solve the model's PDE out to `horizon`, snapping `exact_times` and
    /// the effective strikes of interest onto grid nodes.
    pub fn build(model: CalibratedSpotModel, horizon: f64, exact_times: &[f64], key_strikes: &[f64]) -> Result<Self> {
        let sigma_max = model_sigma_cap(&model);
        let grid = PdeGrid::build(&model.grid, horizon, exact_times, key_strikes, sigma_max)?;
        let surface = solve_dupire(&model.local_vol, &model.mean_reversion, &grid)?;
        Ok(Self { model, surface })
    }

    pub fn model(&self) -> &CalibratedSpotModel {
        &self.model
    }

    pub fn surface(&self) -> &CallSurface {
        &self.surface
    }

    pub fn horizon(&self) -> f64 {
        *self.surface.times().last().unwrap()
    }

    /// Future-style vanilla: `F₀(T) e^{−A(t,T)} c(t, k_F(t,T,K))`.
    ///
    /// For `K = 0` the strike remap telescopes the e-factor away and the
    /// forward `F₀(T)` comes back exactly.
    pub fn price_vanilla_future_style(&self, t: f64, maturity: f64, strike: f64) -> Result<f64> {
        if strike < 0.0 {
            return Err(Error::domain("price_vanilla", format!("negative strike {strike}")));
        }
        if t > maturity + 1e-12 {
            return Err(Error::domain(
                "price_vanilla",
                format!("option expiry {t} after futures maturity {maturity}"),
            ));
        }
        if t > self.horizon() + 1e-9 {
            return Err(Error::domain(
                "price_vanilla",
                format!("expiry {t} beyond the calibrated horizon {}", self.horizon()),
            ));
        }
        let f0 = self.model.curve.price(maturity)?;
        let decay = (-self.model.mean_reversion.integral(t, maturity)?).exp();
        let k_eff = effective_strike(&self.model.mean_reversion, t, maturity, strike, f0)?;
        Ok(f0 * decay * self.surface.value(t, k_eff)?)
    }

    /// Equity-style vanilla: the future-style price discounted to the
    /// premium payment date `t_pay`.
    pub fn price_vanilla_equity_style(
        &self,
        discount: &DiscountCurve,
        t: f64,
        maturity: f64,
        strike: f64,
        t_pay: f64,
    ) -> Result<f64> {
        if t_pay < t - 1e-12 {
            return Err(Error::domain(
                "price_vanilla",
                format!("premium payment {t_pay} before option expiry {t}"),
            ));
        }
        Ok(discount.factor(t_pay)? * self.price_vanilla_future_style(t, maturity, strike)?)
    }

    /// Black-76 implied vol of the future-style price (the market quotation).
    pub fn implied_futures_vol(&self, t: f64, maturity: f64, strike: f64) -> Result<f64> {
        let f0 = self.model.curve.price(maturity)?;
        let price = self.price_vanilla_future_style(t, maturity, strike)?;
        crate::black::implied_vol(price / f0, t, strike / f0)
    }

    /// E[s_tᵒʳᵈᵉʳ] of the normalized spot (order 1 is exactly 1).
    pub fn spot_moment(&self, t: f64, order: u32) -> Result<f64> {
        self.model.spot_moment(&self.surface, t, order)
    }
}

fn model_sigma_cap(model: &CalibratedSpotModel) -> f64 {
    let mut m = 0.1_f64;
    for i in 0..model.local_vol.n_pillars() {
        let (_, etas) = model.local_vol.pillar_nodes(i);
        for &e in etas {
            m = m.max(e);
        }
    }
    (1.3 * m).min(3.0)
}

/// Present value of a deterministic coupon stream under the collateral
/// accrual curve: `Σ φᵢ P₀(Tᵢ; e)`.
pub fn cashflow_pv(discount: &DiscountCurve, coupons: &[(f64, f64)]) -> Result<f64> {
    let mut pv = 0.0;
    for &(t, amount) in coupons {
        if t < 0.0 {
            return Err(Error::domain("cashflow_pv", format!("coupon date {t} before valuation")));
        }
        pv += amount * discount.factor(t)?;
    }
    Ok(pv)
}
