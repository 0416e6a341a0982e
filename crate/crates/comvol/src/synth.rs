//! Synthetic market construction.
//!
//! Builds fully consistent market directories (curves, calendars, quotes)
//! from a known generator model, so that calibration, pricing and fitting
//! round-trips have exact references. Quotes are produced by solving the
//! forward PDE on the generator surface and re-expressing prices as
//! Black-76 futures vols, the exact inverse of the normalization step.

use chrono::NaiveDate;

use crate::black::implied_vol;
use crate::calib::LocalVolSurface;
use crate::error::{Error, Result};
use crate::exotics::{price_cso_closed_form, CsoQuote};
use crate::market::{
    year_fraction, ContractCalendar, DiscountCurve, FuturesCurve, MarketData, MarginStyle, StrikeSpec,
    VolQuote, VolQuoteSet,
};
use crate::pde::{solve_dupire, GridSpec, PdeGrid};
use crate::pricing::PricingEngine;
use crate::spot::{effective_strike, CalibratedSpotModel, MeanReversion};

/// Parametric smile of the generator's local volatility in effective-strike
/// coordinates: `level(t) · (1 + skew·(k−1) + curvature·(k−1)²)`.
#[derive(Debug, Clone)]
pub struct SmileShape {
    pub level: f64,
    pub term_decay: f64,
    pub skew: f64,
    pub curvature: f64,
}

impl SmileShape {
    pub fn flat(level: f64) -> Self {
        Self { level, term_decay: 0.0, skew: 0.0, curvature: 0.0 }
    }

    /// The reference skewed surface used across tests: a market-like mild
    /// downward skew with light curvature and decaying term structure.
    pub fn skewed() -> Self {
        Self { level: 0.25, term_decay: 0.12, skew: -0.30, curvature: 0.15 }
    }

    pub fn eta(&self, t: f64, k: f64) -> f64 {
        let level = self.level * (1.0 - self.term_decay * (t / 2.0).min(1.0));
        let x = k - 1.0;
        (level * (1.0 + self.skew * x + self.curvature * x * x)).clamp(0.05, 2.0)
    }
}

/// Generator configuration.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub a_star: f64,
    /// Option expiries (approximate year fractions; exact values come from
    /// the generated calendar dates).
    pub maturities: Vec<f64>,
    /// Strike ladder in standardized log-moneyness units:
    /// `K = F₀(T^last) exp(z σ_ref √t)`.
    pub z_ladder: Vec<f64>,
    pub sigma_ref: f64,
    pub smile: SmileShape,
    /// When set, quotes carry this implied vol verbatim and no PDE runs.
    pub flat_vol_override: Option<f64>,
    pub grid: GridSpec,
    /// Annualized contango rate of the futures curve.
    pub curve_drift: f64,
    /// Flat continuously-compounded collateral rate.
    pub rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            a_star: 0.5,
            maturities: (1..=10).map(|i| 0.2 * i as f64).collect(),
            z_ladder: vec![-1.28, -0.674, -0.35, 0.0, 0.35, 0.674, 1.28],
            sigma_ref: 0.25,
            smile: SmileShape::skewed(),
            flat_vol_override: None,
            grid: GridSpec::default(),
            curve_drift: 0.015,
            rate: 0.03,
        }
    }
}

/// A generated market plus the generator's own surface nodes (the exact
/// calibration target).
#[derive(Debug, Clone)]
pub struct SynthMarket {
    pub market: MarketData,
    /// Generator local-vol nodes per pillar: (t, [(k_eff, η*)]).
    pub eta_nodes: Vec<(f64, Vec<(f64, f64)>)>,
    /// Contract id per maturity, in maturity order.
    pub contracts: Vec<String>,
    pub a_star: MeanReversion,
}

impl SynthMarket {
    /// The generator surface as a surface object.
    pub fn generator_surface(&self, eta_min: f64, eta_max: f64) -> Result<LocalVolSurface> {
        LocalVolSurface::from_nodes(self.eta_nodes.clone(), eta_min, eta_max)
    }
}

const VALUATION: &str = "2026-01-02";

/// Build the synthetic market.
pub fn generate(spec: &SynthSpec) -> Result<SynthMarket> {
    let valuation: NaiveDate = VALUATION.parse().unwrap();
    let a_star = MeanReversion::constant(spec.a_star);

    // calendars: one contract per maturity; T^last = first notice, one week
    // after the option expiry
    let mut calendars = std::collections::BTreeMap::new();
    let mut contracts = Vec::new();
    let mut expiries = Vec::new();
    let mut t_lasts = Vec::new();
    for (i, &t) in spec.maturities.iter().enumerate() {
        let id = format!("C{:02}", i + 1);
        let expiry_date = valuation + chrono::Duration::days((t * 365.0).round() as i64);
        let first_notice = expiry_date + chrono::Duration::days(7);
        let cal = ContractCalendar {
            id: id.clone(),
            first_trade: valuation - chrono::Duration::days(365),
            last_trade: expiry_date + chrono::Duration::days(30),
            first_notice,
            last_notice: first_notice + chrono::Duration::days(20),
            first_delivery: first_notice + chrono::Duration::days(10),
            last_delivery: first_notice + chrono::Duration::days(40),
            option_expiry: expiry_date,
            option_payment: None,
        };
        cal.validate()?;
        expiries.push(year_fraction(valuation, expiry_date));
        t_lasts.push(year_fraction(valuation, cal.t_last()));
        calendars.insert(id.clone(), cal);
        contracts.push(id);
    }

    // log-linear curve: exact under the curve's own interpolation
    let t_max = t_lasts.iter().copied().fold(0.0_f64, f64::max) + 0.3;
    let n_pillars = (t_max / 0.25).ceil() as usize + 1;
    let curve_pillars: Vec<(f64, f64)> = (0..=n_pillars)
        .map(|i| {
            let t = t_max * i as f64 / n_pillars as f64;
            (t, 100.0 * (spec.curve_drift * t).exp())
        })
        .collect();
    let curve = FuturesCurve::new(curve_pillars)?;
    let discount_pillars: Vec<(f64, f64)> =
        (1..=8).map(|i| (t_max * i as f64 / 8.0, (-spec.rate * t_max * i as f64 / 8.0).exp())).collect();
    let discount = DiscountCurve::new(discount_pillars, true)?;

    // strikes and generator nodes
    let mut eta_nodes = Vec::new();
    let mut strike_grid = Vec::new(); // per maturity: Vec<(K, k_eff)>
    for (i, &t) in expiries.iter().enumerate() {
        let f0 = curve.price(t_lasts[i])?;
        let mut nodes = Vec::new();
        let mut per_mat = Vec::new();
        for &z in &spec.z_ladder {
            let strike = f0 * (z * spec.sigma_ref * t.sqrt()).exp();
            let k_eff = effective_strike(&a_star, t, t_lasts[i], strike, f0)?;
            if k_eff <= 0.0 {
                return Err(Error::invalid(
                    "synth",
                    format!("z={z} at t={t} maps below the absorbing level; shrink the ladder"),
                ));
            }
            nodes.push((k_eff, spec.smile.eta(t, k_eff)));
            per_mat.push((strike, k_eff));
        }
        nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        eta_nodes.push((t, nodes));
        strike_grid.push(per_mat);
    }

    // quotes: either verbatim flat vols or PDE-generated
    let mut quotes = Vec::new();
    if let Some(flat) = spec.flat_vol_override {
        for (i, per_mat) in strike_grid.iter().enumerate() {
            for (qi, &(strike, _)) in per_mat.iter().enumerate() {
                quotes.push(VolQuote {
                    expiry: expiries[i],
                    contract: contracts[i].clone(),
                    strike_spec: StrikeSpec::Absolute(strike),
                    strike,
                    vol: flat,
                    style: if qi % 5 == 4 { MarginStyle::EquityStyle } else { MarginStyle::FutureStyle },
                });
            }
        }
    } else {
        let surface = LocalVolSurface::from_nodes(eta_nodes.clone(), 1e-4, 5.0)?;
        let horizon = expiries.iter().copied().fold(0.0_f64, f64::max);
        let all_keff: Vec<f64> =
            strike_grid.iter().flat_map(|m| m.iter().map(|&(_, k)| k)).collect();
        let grid = PdeGrid::build(&spec.grid, horizon, &expiries, &all_keff, spec.sigma_ref * 1.5)?;
        let solved = solve_dupire(&surface, &a_star, &grid)?;
        for (i, per_mat) in strike_grid.iter().enumerate() {
            let t = expiries[i];
            let f0 = curve.price(t_lasts[i])?;
            let growth = a_star.integral(t, t_lasts[i])?.exp();
            let ti = solved.time_index(t)?;
            for (qi, &(strike, k_eff)) in per_mat.iter().enumerate() {
                let c_norm = solved.value_node(ti, solved.strike_index(k_eff)?);
                // futures premium per Black-76: C/F0 = c_norm / e^{A}
                let vol = implied_vol(c_norm / growth, t, strike / f0)?;
                quotes.push(VolQuote {
                    expiry: t,
                    contract: contracts[i].clone(),
                    strike_spec: StrikeSpec::Absolute(strike),
                    strike,
                    vol,
                    style: if qi % 5 == 4 { MarginStyle::EquityStyle } else { MarginStyle::FutureStyle },
                });
            }
        }
    }

    let market = MarketData {
        valuation_date: valuation,
        curve,
        discount,
        quotes: VolQuoteSet { quotes },
        calendars,
    };
    Ok(SynthMarket { market, eta_nodes, contracts, a_star })
}

/// Price synthetic CSO quotes on contract pairs from a calibrated engine
/// (the "market" of the mean-reversion fit round-trip). Quotes carry the
/// liquid convention: zero strike on the near/far spread.
pub fn generate_cso_quotes(
    synth: &SynthMarket,
    engine: &PricingEngine,
    pairs: &[(usize, usize)],
) -> Result<Vec<CsoQuote>> {
    let market = &synth.market;
    let mut out = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let near = &synth.contracts[i];
        let far = &synth.contracts[j];
        let expiry = market.yf(market.calendar(near)?.option_expiry);
        let t1 = market.t_last(near)?;
        let t2 = market.t_last(far)?;
        let strike = 0.0;
        let price = price_cso_closed_form(engine, expiry, t1, t2, strike)?;
        let f01 = market.curve.price(t1)?;
        let f02 = market.curve.price(t2)?;
        let sigma_near = engine.implied_futures_vol(expiry, t1, f01)?;
        let far_expiry = market.yf(market.calendar(far)?.option_expiry);
        let sigma_far = engine.implied_futures_vol(far_expiry, t2, f02)?;
        out.push(CsoQuote {
            expiry,
            near: near.clone(),
            far: far.clone(),
            t1,
            t2,
            strike,
            price,
            sigma_near,
            sigma_far,
        });
    }
    Ok(out)
}

/// Write the four market CSV files of a `MarketData` into a directory.
pub fn write_market_dir(market: &MarketData, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut futures = String::from("T,price\n");
    for &(t, p) in market.curve.pillars() {
        futures.push_str(&format!("{t},{p}\n"));
    }
    std::fs::write(dir.join("futures.csv"), futures)?;

    let mut discount = String::from("T,df\n");
    for &(t, df) in market.discount.pillars() {
        discount.push_str(&format!("{t},{df}\n"));
    }
    std::fs::write(dir.join("discount.csv"), discount)?;

    let mut cal = format!("# valuation_date={}\n# day_count=ACT/365F\n", market.valuation_date);
    cal.push_str(
        "id,first_trade,last_trade,first_notice,last_notice,first_delivery,last_delivery,option_expiry,option_payment\n",
    );
    for c in market.calendars.values() {
        cal.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.id,
            c.first_trade,
            c.last_trade,
            c.first_notice,
            c.last_notice,
            c.first_delivery,
            c.last_delivery,
            c.option_expiry,
            c.option_payment.map(|d| d.to_string()).unwrap_or_default(),
        ));
    }
    std::fs::write(dir.join("calendars.csv"), cal)?;

    let mut quotes = String::from("expiry,contract,strike_or_delta,strike_type,vol,style\n");
    for q in &market.quotes.quotes {
        let (raw, kind) = match q.strike_spec {
            StrikeSpec::Absolute(k) => (k, "strike"),
            StrikeSpec::Delta(d) => (d, "delta"),
        };
        let style = match q.style {
            MarginStyle::FutureStyle => "future",
            MarginStyle::EquityStyle => "equity",
        };
        quotes.push_str(&format!("{},{},{},{},{},{}\n", q.expiry, q.contract, raw, kind, q.vol, style));
    }
    std::fs::write(dir.join("quotes.csv"), quotes)?;
    Ok(())
}

/// Write a CSO quote file consumable by the `fit-a` command.
pub fn write_cso_quotes(quotes: &[CsoQuote], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("expiry,near,far,strike,price\n");
    for q in quotes {
        out.push_str(&format!("{},{},{},{},{}\n", q.expiry, q.near, q.far, q.strike, q.price));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Build a calibrated model straight from the generator nodes (exact, no
/// iteration) — the reference engine for oracle comparisons.
pub fn generator_model(synth: &SynthMarket, grid: GridSpec) -> Result<CalibratedSpotModel> {
    Ok(CalibratedSpotModel::new(
        synth.market.curve.clone(),
        synth.a_star.clone(),
        synth.generator_surface(1e-4, 5.0)?,
        grid,
        Some(synth.market.valuation_date),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{load_market, LoadOptions};

    #[test]
    fn generated_market_is_loadable_and_consistent() {
        let spec = SynthSpec { maturities: vec![0.2, 0.5], ..Default::default() };
        let synth = generate(&spec).unwrap();
        assert_eq!(synth.market.quotes.quotes.len(), 2 * spec.z_ladder.len());

        let dir = tempfile::tempdir().unwrap();
        write_market_dir(&synth.market, dir.path()).unwrap();
        let loaded = load_market(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.quotes.quotes.len(), synth.market.quotes.quotes.len());
        assert_eq!(loaded.valuation_date, synth.market.valuation_date);
        // round-tripped quotes match to printing precision
        for (a, b) in loaded.quotes.quotes.iter().zip(&synth.market.quotes.quotes) {
            assert_eq!(a.vol, b.vol);
            assert_eq!(a.strike, b.strike);
        }
    }

    #[test]
    fn flat_override_emits_verbatim_vols() {
        let spec = SynthSpec {
            maturities: vec![0.25, 0.75],
            flat_vol_override: Some(0.2),
            a_star: 0.0,
            ..Default::default()
        };
        let synth = generate(&spec).unwrap();
        assert!(synth.market.quotes.quotes.iter().all(|q| q.vol == 0.2));
    }
}
