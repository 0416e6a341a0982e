//! Market data: futures curves, discount curves, option quotes and contract
//! calendars.
//!
//! Everything here is immutable after construction and validated on entry,
//! so loaded objects are safe to share across threads. Year fractions use
//! ACT/365 fixed throughout.

mod load;

pub use load::{load_market, LoadOptions};

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{norm_cdf, norm_inv};

/// Day-count convention tag. Only ACT/365 fixed is supported.
pub const DAY_COUNT: &str = "ACT/365F";

/// ACT/365F year fraction between two dates.
pub fn year_fraction(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / 365.0
}

/// Trading, notification, delivery and option dates of one futures contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractCalendar {
    pub id: String,
    pub first_trade: NaiveDate,
    pub last_trade: NaiveDate,
    pub first_notice: NaiveDate,
    pub last_notice: NaiveDate,
    pub first_delivery: NaiveDate,
    pub last_delivery: NaiveDate,
    pub option_expiry: NaiveDate,
    /// Premium payment date for equity-style options; defaults to option
    /// expiry plus two business days when the file omits it.
    pub option_payment: Option<NaiveDate>,
}

impl ContractCalendar {
    /// Last date on which the futures price is assumed a martingale:
    /// `min(first notification, last trade)`.
    pub fn t_last(&self) -> NaiveDate {
        self.first_notice.min(self.last_trade)
    }

    /// Equity-style premium payment date (expiry + 2 business days fallback).
    pub fn payment_date(&self) -> NaiveDate {
        self.option_payment
            .unwrap_or_else(|| add_business_days(self.option_expiry, 2))
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = format!("calendar {}", self.id);
        if self.first_trade >= self.last_trade {
            return Err(Error::invalid(
                &ctx,
                format!("first trade {} must precede last trade {}", self.first_trade, self.last_trade),
            ));
        }
        if self.first_notice > self.last_notice {
            return Err(Error::invalid(
                &ctx,
                format!("first notice {} after last notice {}", self.first_notice, self.last_notice),
            ));
        }
        if self.first_delivery > self.last_delivery {
            return Err(Error::invalid(
                &ctx,
                format!("first delivery {} after last delivery {}", self.first_delivery, self.last_delivery),
            ));
        }
        let cutoff = self.first_notice.min(self.last_trade);
        if self.option_expiry > cutoff {
            return Err(Error::invalid(
                &ctx,
                format!(
                    "option expiry {} is after min(first notice, last trade) = {}",
                    self.option_expiry, cutoff
                ),
            ));
        }
        if let Some(p) = self.option_payment {
            if p < self.option_expiry {
                return Err(Error::invalid(&ctx, "option payment before option expiry"));
            }
        }
        Ok(())
    }
}

/// Skip Saturdays and Sundays (no holiday calendar).
fn add_business_days(mut date: NaiveDate, n: u32) -> NaiveDate {
    let mut left = n;
    while left > 0 {
        date += chrono::Duration::days(1);
        if !matches!(date.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun) {
            left -= 1;
        }
    }
    date
}

/// Dated futures term structure F₀(T), log-linear between pillars.
///
/// Extrapolation outside the pillar range is an error by design: the model
/// only ever evaluates the curve at covered maturities, and a silent flat
/// extension would mask data problems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuturesCurve {
    pillars: Vec<(f64, f64)>,
}

impl FuturesCurve {
    pub fn new(pillars: Vec<(f64, f64)>) -> Result<Self> {
        if pillars.is_empty() {
            return Err(Error::invalid("futures curve", "needs at least one pillar"));
        }
        for (i, &(t, f)) in pillars.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::invalid("futures curve", format!("pillar {i}: bad maturity {t}")));
            }
            if !f.is_finite() || f <= 0.0 {
                return Err(Error::invalid("futures curve", format!("pillar {i}: price {f} must be positive")));
            }
            if i > 0 && t <= pillars[i - 1].0 {
                return Err(Error::invalid(
                    "futures curve",
                    format!("maturities must be strictly increasing at pillar {i} (t={t})"),
                ));
            }
        }
        Ok(Self { pillars })
    }

    pub fn pillars(&self) -> &[(f64, f64)] {
        &self.pillars
    }

    pub fn first_maturity(&self) -> f64 {
        self.pillars[0].0
    }

    pub fn last_maturity(&self) -> f64 {
        self.pillars[self.pillars.len() - 1].0
    }

    /// F₀(T) by log-linear interpolation; exact at pillars.
    pub fn price(&self, t: f64) -> Result<f64> {
        let n = self.pillars.len();
        let (t0, _) = self.pillars[0];
        let (tn, _) = self.pillars[n - 1];
        if t < t0 - 1e-12 || t > tn + 1e-12 {
            return Err(Error::domain(
                "futures curve",
                format!("maturity {t} outside pillar range [{t0}, {tn}]"),
            ));
        }
        let t = t.clamp(t0, tn);
        if n == 1 {
            return Ok(self.pillars[0].1);
        }
        let i = match self.pillars.partition_point(|&(x, _)| x <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let (ta, fa) = self.pillars[i];
        let (tb, fb) = self.pillars[i + 1];
        if t == ta {
            return Ok(fa);
        }
        if t == tb {
            return Ok(fb);
        }
        let w = (t - ta) / (tb - ta);
        Ok((fa.ln() * (1.0 - w) + fb.ln() * w).exp())
    }
}

/// Discount factors P₀(T; e) for the collateral accrual rate, log-linear in
/// the factor with the P₀(0) = 1 anchor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscountCurve {
    pillars: Vec<(f64, f64)>,
}

impl DiscountCurve {
    pub fn new(pillars: Vec<(f64, f64)>, enforce_monotone: bool) -> Result<Self> {
        if pillars.is_empty() {
            return Err(Error::invalid("discount curve", "needs at least one pillar"));
        }
        let mut prev_t = 0.0;
        let mut prev_df = 1.0;
        for (i, &(t, df)) in pillars.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::invalid("discount curve", format!("pillar {i}: bad maturity {t}")));
            }
            if !(df > 0.0 && df <= 1.0) {
                return Err(Error::invalid(
                    "discount curve",
                    format!("pillar {i}: discount factor {df} must lie in (0, 1]"),
                ));
            }
            if i > 0 && t <= prev_t {
                return Err(Error::invalid(
                    "discount curve",
                    format!("maturities must be strictly increasing at pillar {i}"),
                ));
            }
            if enforce_monotone && df > prev_df + 1e-12 {
                return Err(Error::invalid(
                    "discount curve",
                    format!("pillar {i}: factor {df} increases over {prev_df} (monotonicity enforced)"),
                ));
            }
            prev_t = t;
            prev_df = df;
        }
        Ok(Self { pillars })
    }

    /// Flat unit curve (no discounting).
    pub fn flat_unit(horizon: f64) -> Self {
        Self { pillars: vec![(horizon.max(1e-6), 1.0)] }
    }

    pub fn pillars(&self) -> &[(f64, f64)] {
        &self.pillars
    }

    pub fn factor(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::domain("discount curve", format!("negative maturity {t}")));
        }
        if t == 0.0 {
            return Ok(1.0);
        }
        let n = self.pillars.len();
        let (tn, _) = self.pillars[n - 1];
        if t > tn + 1e-12 {
            return Err(Error::domain(
                "discount curve",
                format!("maturity {t} beyond last pillar {tn}"),
            ));
        }
        let t = t.min(tn);
        // virtual (0, 1) anchor
        let (mut ta, mut fa) = (0.0, 1.0_f64);
        let mut i = 0;
        while i < n && self.pillars[i].0 <= t {
            (ta, fa) = self.pillars[i];
            i += 1;
        }
        if (t - ta).abs() < 1e-15 {
            return Ok(fa);
        }
        let (tb, fb) = self.pillars[i.min(n - 1)];
        let w = (t - ta) / (tb - ta);
        Ok((fa.ln() * (1.0 - w) + fb.ln() * w).exp())
    }
}

/// Margining style of an option quote or trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginStyle {
    /// Premium paid at expiry, daily unremunerated variation margin.
    FutureStyle,
    /// Premium paid upfront under collateral accruing at the discount rate.
    EquityStyle,
}

impl std::str::FromStr for MarginStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "future" | "future-style" | "futures" => Ok(MarginStyle::FutureStyle),
            "equity" | "equity-style" => Ok(MarginStyle::EquityStyle),
            other => Err(Error::parse("margin style", format!("unknown style '{other}'"))),
        }
    }
}

/// How a quote identifies its strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StrikeSpec {
    Absolute(f64),
    /// Premium-excluded Black call delta Φ(d₁) in (0, 1).
    Delta(f64),
}

/// One implied-vol quote on a futures option.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolQuote {
    /// Option expiry as a year fraction from valuation.
    pub expiry: f64,
    pub contract: String,
    pub strike_spec: StrikeSpec,
    /// Absolute strike (delta quotes are resolved at load time).
    pub strike: f64,
    /// Black-76 implied volatility.
    pub vol: f64,
    pub style: MarginStyle,
}

/// Validated set of option quotes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VolQuoteSet {
    pub quotes: Vec<VolQuote>,
}

impl VolQuoteSet {
    /// Latest quoted expiry, the horizon the PDE has to cover.
    pub fn max_expiry(&self) -> f64 {
        self.quotes.iter().fold(0.0, |m, q| m.max(q.expiry))
    }

    pub fn max_vol(&self) -> f64 {
        self.quotes.iter().fold(0.0, |m, q| m.max(q.vol))
    }
}

/// Strike with Black call delta equal to `delta`:
/// `K = F₀ exp(−σ√t Φ⁻¹(Δ) + σ²t/2)`.
pub fn delta_to_strike(delta: f64, t: f64, f0: f64, sigma: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain("delta_to_strike", format!("delta {delta} outside (0, 1)")));
    }
    if !(t > 0.0 && sigma > 0.0 && f0 > 0.0) {
        return Err(Error::domain(
            "delta_to_strike",
            format!("need t, sigma, F0 > 0, got t={t}, sigma={sigma}, F0={f0}"),
        ));
    }
    let srt = sigma * t.sqrt();
    Ok(f0 * (-srt * norm_inv(delta) + 0.5 * srt * srt).exp())
}

/// Black call delta Φ(d₁) of an absolute strike.
pub fn strike_to_delta(strike: f64, t: f64, f0: f64, sigma: f64) -> Result<f64> {
    if !(strike > 0.0 && t > 0.0 && sigma > 0.0 && f0 > 0.0) {
        return Err(Error::domain(
            "strike_to_delta",
            format!("need K, t, sigma, F0 > 0, got K={strike}, t={t}, sigma={sigma}, F0={f0}"),
        ));
    }
    let srt = sigma * t.sqrt();
    Ok(norm_cdf((f0 / strike).ln() / srt + 0.5 * srt))
}

/// Everything a calibration or pricing run needs, immutable once loaded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketData {
    pub valuation_date: NaiveDate,
    pub curve: FuturesCurve,
    pub discount: DiscountCurve,
    pub quotes: VolQuoteSet,
    pub calendars: BTreeMap<String, ContractCalendar>,
}

impl MarketData {
    /// Year fraction of a calendar date from the valuation date.
    pub fn yf(&self, date: NaiveDate) -> f64 {
        year_fraction(self.valuation_date, date)
    }

    pub fn calendar(&self, contract: &str) -> Result<&ContractCalendar> {
        self.calendars
            .get(contract)
            .ok_or_else(|| Error::invalid("market", format!("unknown contract '{contract}'")))
    }

    /// T^last of a contract as a year fraction.
    pub fn t_last(&self, contract: &str) -> Result<f64> {
        Ok(self.yf(self.calendar(contract)?.t_last()))
    }

    /// Premium payment year fraction for equity-style options on a contract.
    pub fn payment_yf(&self, contract: &str) -> Result<f64> {
        Ok(self.yf(self.calendar(contract)?.payment_date()))
    }
}
