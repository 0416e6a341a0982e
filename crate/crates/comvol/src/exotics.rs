//! Mid-curve options, calendar-spread options and the mean-reversion fit.
//!
//! Under the one-factor model both legs of a calendar spread are affine in
//! the same normalized spot, so the CSO collapses to a vanilla on s:
//! with `A = F₀(T₁)e^{−A(Tₑ,T₁)} − F₀(T₂)e^{−A(Tₑ,T₂)}` and
//! `B = 1 + (K − F₀(T₁) + F₀(T₂))/A`,
//!
//! ```text
//!   A > 0, B > 0:  A · c(Tₑ, B)
//!   A > 0, B ≤ 0:  A · (1 − B)
//!   A < 0, B > 0:  −A · (c(Tₑ, B) + B − 1)
//!   A ≤ 0, B ≤ 0:  0
//! ```
//!
//! The market quotes CSOs through a one-dimensional integral in which both
//! legs are lognormal and perfectly correlated; inverting it for the far
//! leg's vol at the near expiry gives the "volatility drop" metric that the
//! mean-reversion speed is fitted to.

use serde::{Deserialize, Serialize};

use crate::calib::{calibrate, CalibrationConfig};
use crate::error::{Error, Result};
use crate::market::{DiscountCurve, MarginStyle, MarketData};
use crate::math::{norm_cdf, roots};
use crate::pricing::PricingEngine;
use crate::spot::MeanReversion;

/// Mid-curve option: a vanilla whose expiry precedes the futures T^last.
pub fn price_mco(
    engine: &PricingEngine,
    early_expiry: f64,
    maturity: f64,
    strike: f64,
    style: MarginStyle,
    discount: &DiscountCurve,
    t_pay: f64,
) -> Result<f64> {
    if early_expiry >= maturity {
        return Err(Error::domain(
            "price_mco",
            format!("mid-curve expiry {early_expiry} must precede the futures maturity {maturity}"),
        ));
    }
    match style {
        MarginStyle::FutureStyle => engine.price_vanilla_future_style(early_expiry, maturity, strike),
        MarginStyle::EquityStyle => {
            engine.price_vanilla_equity_style(discount, early_expiry, maturity, strike, t_pay)
        }
    }
}

/// Future-style CSO on `F(T₁) − F(T₂)` with exercise at `Tₑ`, priced in
/// closed form off the solved call surface.
pub fn price_cso_closed_form(
    engine: &PricingEngine,
    t_exercise: f64,
    t1: f64,
    t2: f64,
    strike: f64,
) -> Result<f64> {
    if t_exercise > t1.min(t2) + 1e-12 {
        return Err(Error::domain(
            "price_cso",
            format!("exercise {t_exercise} after the nearest leg maturity {}", t1.min(t2)),
        ));
    }
    let model = engine.model();
    let f01 = model.curve.price(t1)?;
    let f02 = model.curve.price(t2)?;
    let a1 = (-model.mean_reversion.integral(t_exercise, t1)?).exp();
    let a2 = (-model.mean_reversion.integral(t_exercise, t2)?).exp();
    let slope = f01 * a1 - f02 * a2;

    // degenerate spread: both legs move in lockstep, only intrinsic is left
    if slope.abs() < 1e-12 * f01 {
        return Ok((f01 - f02 - strike).max(0.0));
    }
    let b = 1.0 + (strike - f01 + f02) / slope;
    let price = if slope > 0.0 {
        if b > 0.0 {
            slope * engine.surface().value(t_exercise, b)?
        } else {
            slope * (1.0 - b)
        }
    } else if b > 0.0 {
        -slope * (engine.surface().value(t_exercise, b)? + b - 1.0)
    } else {
        0.0
    };
    Ok(price.max(0.0))
}

/// Price of the CSO quotation integral: both legs lognormal with correlation
/// one, leg i carrying `F₀ᵢ exp(−σᵢ²Tₑ − σᵢ√Tₑ x)` against a standard
/// Gaussian weight. The positivity set of the integrand is resolved exactly
/// (the inner function has at most two roots), after which each piece
/// integrates in closed form through Φ.
pub fn cso_metric_price(
    f01: f64,
    f02: f64,
    t_exercise: f64,
    strike: f64,
    sigma_near: f64,
    sigma_far: f64,
) -> Result<f64> {
    if !(f01 > 0.0 && f02 > 0.0 && t_exercise > 0.0) {
        return Err(Error::domain(
            "cso_metric",
            format!("need F01, F02, Te > 0, got {f01}, {f02}, {t_exercise}"),
        ));
    }
    if !(sigma_near >= 0.0 && sigma_far >= 0.0) {
        return Err(Error::domain("cso_metric", "leg vols must be non-negative"));
    }
    let b1 = sigma_near * t_exercise.sqrt();
    let b2 = sigma_far * t_exercise.sqrt();
    let c1 = f01 * (-sigma_near * sigma_near * t_exercise).exp();
    let c2 = f02 * (-sigma_far * sigma_far * t_exercise).exp();

    let g = |x: f64| c1 * (-b1 * x).exp() - c2 * (-b2 * x).exp() - strike;

    // Integration window wide enough that the Gaussian tail beyond it is
    // negligible even after the exp(b·x) tilt of either leg.
    let window = 13.0 + b1.max(b2);

    // The inner function is monotone on each side of its single critical
    // point; collect the sign changes of those monotone pieces.
    let mut knots = vec![-window];
    if b1 != b2 && c1 > 0.0 && c2 > 0.0 {
        let num = (b1 * c1).ln() - (b2 * c2).ln();
        let xc = num / (b1 - b2);
        if xc > -window && xc < window {
            knots.push(xc);
        }
    }
    knots.push(window);

    let mut cuts = Vec::new();
    for w in knots.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (glo, ghi) = (g(lo), g(hi));
        if glo == 0.0 {
            cuts.push(lo);
        }
        if glo * ghi < 0.0 {
            cuts.push(roots::brent(g, lo, hi, 1e-14, 0.0, 200)?);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // walk the pieces, integrating where g > 0
    let mut price = 0.0;
    let mut edges = vec![-window];
    edges.extend(cuts);
    edges.push(window);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo < 1e-14 {
            continue;
        }
        if g(0.5 * (lo + hi)) <= 0.0 {
            continue;
        }
        let leg1 = f01 * (-0.5 * sigma_near * sigma_near * t_exercise).exp()
            * (norm_cdf(hi + b1) - norm_cdf(lo + b1));
        let leg2 = f02 * (-0.5 * sigma_far * sigma_far * t_exercise).exp()
            * (norm_cdf(hi + b2) - norm_cdf(lo + b2));
        price += leg1 - leg2 - strike * (norm_cdf(hi) - norm_cdf(lo));
    }
    Ok(price.max(0.0))
}

/// Invert the quotation integral for the far leg's vol at the near expiry,
/// returning the lesser positive root together with every root found in the
/// scan window.
pub fn cso_quote_metric_with_roots(
    f01: f64,
    f02: f64,
    t_exercise: f64,
    strike: f64,
    sigma_near: f64,
    price: f64,
    sigma_hi: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(price >= 0.0) {
        return Err(Error::domain("cso_quote_metric", format!("price must be non-negative, got {price}")));
    }
    let objective =
        |s: f64| -> Result<f64> { Ok(cso_metric_price(f01, f02, t_exercise, strike, sigma_near, s)? - price) };

    let n_scan = 400;
    let lo = 1e-6;
    let mut prev_s = lo;
    let mut prev_f = objective(lo)?;
    let mut found = Vec::new();
    for i in 1..=n_scan {
        let s = lo + (sigma_hi - lo) * i as f64 / n_scan as f64;
        let f = objective(s)?;
        if prev_f == 0.0 {
            found.push(prev_s);
        } else if prev_f * f < 0.0 {
            let root = roots::brent(
                |x| objective(x).unwrap_or(f64::NAN),
                prev_s,
                s,
                1e-12,
                0.0,
                200,
            )?;
            found.push(root);
        }
        prev_s = s;
        prev_f = f;
    }
    match found.first() {
        Some(&r) => Ok((r, found)),
        None => Err(Error::numerical(
            "cso_quote_metric",
            format!("no positive root: price {price} outside the attainable range on (0, {sigma_hi}]"),
        )),
    }
}

/// The market quotation metric σ²₁: lesser positive root of the quotation
/// integral at the given price. The scan caps at a generous multiple of the
/// near-leg vol.
pub fn cso_quote_metric(
    f01: f64,
    f02: f64,
    t_exercise: f64,
    strike: f64,
    sigma_near: f64,
    price: f64,
) -> Result<f64> {
    let hi = (2.0 * sigma_near + 0.5).max(1.0);
    Ok(cso_quote_metric_with_roots(f01, f02, t_exercise, strike, sigma_near, price, hi)?.0)
}

/// A calendar-spread quote: exercise date, the two legs' T^last, strike,
/// market price and the two vanilla leg vols entering the quotation metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsoQuote {
    pub expiry: f64,
    pub near: String,
    pub far: String,
    pub t1: f64,
    pub t2: f64,
    pub strike: f64,
    pub price: f64,
    /// Near contract's vanilla vol at the CSO expiry (σ¹₁).
    pub sigma_near: f64,
    /// Far contract's vanilla vol at its own expiry (σ²₂).
    pub sigma_far: f64,
}

impl CsoQuote {
    pub fn validate(&self) -> Result<()> {
        if !(self.expiry > 0.0 && self.expiry <= self.t1 + 1e-12 && self.t1 <= self.t2 + 1e-12) {
            return Err(Error::invalid(
                "cso quote",
                format!("need 0 < Te <= T1 <= T2, got {}, {}, {}", self.expiry, self.t1, self.t2),
            ));
        }
        if self.price < 0.0 {
            return Err(Error::invalid("cso quote", format!("negative price {}", self.price)));
        }
        if !(self.sigma_near > 0.0 && self.sigma_far > 0.0) {
            return Err(Error::invalid("cso quote", "leg vols must be positive"));
        }
        Ok(())
    }
}

fn scan_cap(sigma_near: f64, sigma_far: f64) -> f64 {
    (1.5 * sigma_near.max(sigma_far) + 0.25).max(0.5)
}

/// Mean-reversion fit configuration: trial grid plus the vanilla
/// calibration settings used at every trial.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub a_grid: Vec<f64>,
    /// Golden-section window target on a.
    pub refine_tol: f64,
    pub calibration: CalibrationConfig,
    /// Trial values whose drop curves are reported (the figure-style grid).
    pub report_grid: Vec<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            a_grid: (0..=30).map(|i| i as f64 * 0.05).collect(),
            refine_tol: 0.01,
            calibration: CalibrationConfig::default(),
            report_grid: vec![0.0, 0.5, 1.0, 1.5],
        }
    }
}

/// Per-quote drop diagnostics at one trial a.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropCurve {
    pub a: f64,
    /// (expiry, model drop) per quote, quote order preserved.
    pub drops: Vec<f64>,
}

/// Outcome of the mean-reversion fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub fitted_a: f64,
    pub fitted_sse: f64,
    /// (a, sse) over the scan grid, skipped trials omitted.
    pub grid: Vec<(f64, f64)>,
    pub market_drops: Vec<f64>,
    pub quote_expiries: Vec<f64>,
    pub report_curves: Vec<DropCurve>,
    pub fitted_curve: DropCurve,
    pub skipped: Vec<(f64, String)>,
}

/// Fit a scalar mean-reversion speed to CSO volatility drops.
///
/// Every trial a re-calibrates the local vol to the vanilla quotes, prices
/// the CSOs in closed form, converts prices to drops through the quotation
/// metric and accumulates squared errors against the market drops. The grid
/// argmin is refined by golden section.
pub fn fit_mean_reversion(
    cso_quotes: &[CsoQuote],
    market: &MarketData,
    cfg: &FitConfig,
) -> Result<(MeanReversion, FitReport)> {
    if cso_quotes.is_empty() {
        return Err(Error::invalid("fit_mean_reversion", "no CSO quotes supplied"));
    }
    let quotes = resolve_quotes(cso_quotes, market)?;
    let market_drops: Result<Vec<f64>> = quotes.iter().map(market_drop).collect();
    let market_drops = market_drops?;

    let mut skipped = Vec::new();
    let mut grid = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut report_curves = Vec::new();

    for &a in &cfg.a_grid {
        match model_drops(a, &quotes, market, &cfg.calibration) {
            Ok(drops) => {
                let sse = sse(&drops, &market_drops);
                grid.push((a, sse));
                if best.map(|(_, s)| sse < s).unwrap_or(true) {
                    best = Some((a, sse));
                }
                if cfg.report_grid.iter().any(|&r| (r - a).abs() < 1e-12) {
                    report_curves.push(DropCurve { a, drops });
                }
            }
            Err(e) => skipped.push((a, e.to_string())),
        }
    }
    let (grid_best_a, _) = best.ok_or_else(|| Error::numerical("fit_mean_reversion", "every trial a failed"))?;

    // golden-section refinement around the grid argmin
    let step = if cfg.a_grid.len() > 1 { cfg.a_grid[1] - cfg.a_grid[0] } else { 0.05 };
    let lo = (grid_best_a - step).max(cfg.a_grid[0]);
    let hi = (grid_best_a + step).min(*cfg.a_grid.last().unwrap());
    let mut eval = |a: f64| -> Result<f64> {
        Ok(sse(&model_drops(a, &quotes, market, &cfg.calibration)?, &market_drops))
    };
    let fitted_a = golden_min(&mut eval, lo, hi, cfg.refine_tol)?;
    let fitted_drops = model_drops(fitted_a, &quotes, market, &cfg.calibration)?;
    let fitted_sse = sse(&fitted_drops, &market_drops);

    // report any trial values not on the scan grid
    for &a in &cfg.report_grid {
        if !report_curves.iter().any(|c| (c.a - a).abs() < 1e-12) {
            if let Ok(drops) = model_drops(a, &quotes, market, &cfg.calibration) {
                report_curves.push(DropCurve { a, drops });
            }
        }
    }
    report_curves.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());

    let report = FitReport {
        fitted_a,
        fitted_sse,
        grid,
        market_drops,
        quote_expiries: quotes.iter().map(|q| q.quote.expiry).collect(),
        report_curves,
        fitted_curve: DropCurve { a: fitted_a, drops: fitted_drops },
        skipped,
    };
    Ok((MeanReversion::constant(fitted_a), report))
}

struct ResolvedCso {
    quote: CsoQuote,
    f01: f64,
    f02: f64,
}

fn resolve_quotes(cso_quotes: &[CsoQuote], market: &MarketData) -> Result<Vec<ResolvedCso>> {
    cso_quotes
        .iter()
        .map(|q| {
            q.validate()?;
            Ok(ResolvedCso {
                quote: q.clone(),
                f01: market.curve.price(q.t1)?,
                f02: market.curve.price(q.t2)?,
            })
        })
        .collect()
}

fn market_drop(q: &ResolvedCso) -> Result<f64> {
    let s21 = cso_quote_metric_with_roots(
        q.f01,
        q.f02,
        q.quote.expiry,
        q.quote.strike,
        q.quote.sigma_near,
        q.quote.price,
        scan_cap(q.quote.sigma_near, q.quote.sigma_far),
    )?
    .0;
    Ok(q.quote.sigma_far - s21)
}

fn model_drops(
    a: f64,
    quotes: &[ResolvedCso],
    market: &MarketData,
    calib_cfg: &CalibrationConfig,
) -> Result<Vec<f64>> {
    let mr = MeanReversion::constant(a);
    let (model, report) = calibrate(market, &mr, calib_cfg)?;
    if !report.converged {
        return Err(Error::NotConverged {
            max_error_bp: report.final_max_bp,
            iterations: report.iterations,
        });
    }
    let horizon = quotes.iter().fold(0.0_f64, |m, q| m.max(q.quote.expiry));
    let times: Vec<f64> = quotes.iter().map(|q| q.quote.expiry).collect();
    let engine = PricingEngine::build(model, horizon, &times, &[])?;
    quotes
        .iter()
        .map(|q| {
            let price = price_cso_closed_form(&engine, q.quote.expiry, q.quote.t1, q.quote.t2, q.quote.strike)?;
            let s21 = cso_quote_metric_with_roots(
                q.f01,
                q.f02,
                q.quote.expiry,
                q.quote.strike,
                q.quote.sigma_near,
                price,
                scan_cap(q.quote.sigma_near, q.quote.sigma_far),
            )?
            .0;
            Ok(q.quote.sigma_far - s21)
        })
        .collect()
}

fn sse(model: &[f64], market: &[f64]) -> f64 {
    model.iter().zip(market).map(|(m, k)| (m - k) * (m - k)).sum()
}

fn golden_min(eval: &mut dyn FnMut(f64) -> Result<f64>, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    Ok(0.5 * (a + b))
}
