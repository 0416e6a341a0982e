//! Normalized Black-76 analytics.
//!
//! All prices are normalized by the forward: a call struck at `k` on a
//! unit-forward lognormal with implied vol σ is worth
//!
//! ```text
//! c(t, k, σ) = Φ(y + σ√t) − k Φ(y),    y = −ln k/(σ√t) − σ√t/2
//! ```
//!
//! Besides pricing this module provides the dual-strike Greeks, a robust
//! implied-vol inversion, the local-volatility-from-implied map used to
//! cross-check calibration (including the mean-reversion drift term), and the
//! short-maturity harmonic-mean asymptotics of the smile.

use crate::error::{Error, Result};
use crate::math::{norm_cdf, norm_inv, norm_pdf, quad};

/// The Black d₂ argument `y = −ln k/(σ√t) − σ√t/2`.
#[inline]
pub fn black_y(t: f64, k: f64, sigma: f64) -> f64 {
    let srt = sigma * t.sqrt();
    -k.ln() / srt - 0.5 * srt
}

/// Normalized Black call price, continuous on the closed parameter domain.
///
/// Boundary limits are taken directly: `k = 0` prices the forward (value 1),
/// and `σ√t = 0` collapses to intrinsic value `(1 − k)⁺`. Negative strikes
/// extend linearly (a call struck below zero is a forward on a positive
/// underlying), which the strike remap of the mean-reverting model relies on.
pub fn black_call(t: f64, k: f64, sigma: f64) -> f64 {
    if k <= 0.0 {
        return 1.0 - k;
    }
    if t <= 0.0 || sigma <= 0.0 {
        return (1.0 - k).max(0.0);
    }
    let y = black_y(t, k, sigma);
    norm_cdf(y + sigma * t.sqrt()) - k * norm_cdf(y)
}

/// Black Vega `∂σ c = √t φ(y + σ√t)`.
pub fn black_vega(t: f64, k: f64, sigma: f64) -> f64 {
    if k <= 0.0 || t <= 0.0 || sigma <= 0.0 {
        return 0.0;
    }
    t.sqrt() * norm_pdf(black_y(t, k, sigma) + sigma * t.sqrt())
}

/// Closed-form Black sensitivities in the (t, k, σ) coordinates.
#[derive(Debug, Clone, Copy)]
pub struct BlackGreeks {
    pub vega: f64,
    pub theta: f64,
    pub dual_delta: f64,
    pub dual_gamma: f64,
    pub dual_vanna: f64,
    pub volga: f64,
}

/// All six closed-form Greeks at an interior point (t > 0, k > 0, σ > 0).
pub fn black_greeks(t: f64, k: f64, sigma: f64) -> Result<BlackGreeks> {
    if !(t > 0.0 && k > 0.0 && sigma > 0.0) {
        return Err(Error::domain(
            "black_greeks",
            format!("need t, k, sigma > 0, got t={t}, k={k}, sigma={sigma}"),
        ));
    }
    let srt = sigma * t.sqrt();
    let y = black_y(t, k, sigma);
    let vega = t.sqrt() * norm_pdf(y + srt);
    Ok(BlackGreeks {
        vega,
        theta: sigma / (2.0 * t) * vega,
        dual_delta: -norm_cdf(y),
        dual_gamma: vega / (k * k * sigma * t),
        dual_vanna: vega * (y + srt) / (k * srt),
        volga: vega * y * (y + srt) / sigma,
    })
}

/// Implied volatility from a normalized call price.
///
/// Safeguarded Newton on σ with the analytic Vega, bracketed bisection as
/// fallback, started from a rational (Bharadia–Christofides–Salkin style)
/// approximation. Converges to 1e-13 absolute in price.
pub fn implied_vol(price: f64, t: f64, k: f64) -> Result<f64> {
    const PRICE_TOL: f64 = 1e-13;
    if !(t > 0.0) {
        return Err(Error::domain("implied_vol", format!("need t > 0, got {t}")));
    }
    let intrinsic = (1.0 - k).max(0.0);
    if !(price > intrinsic && price < 1.0) {
        return Err(Error::domain(
            "implied_vol",
            format!("price {price} outside the no-arbitrage band ({intrinsic}, 1) at k={k}"),
        ));
    }

    // Expand the bracket upward until the price is enclosed.
    let mut lo = 1e-9;
    let mut hi = 1.0;
    let mut n_expand = 0;
    while black_call(t, k, hi) < price {
        hi *= 2.0;
        n_expand += 1;
        if n_expand > 16 {
            return Err(Error::numerical("implied_vol", "bracket expansion failed"));
        }
    }

    let mut sigma = initial_vol_guess(price, t, k).clamp(lo, hi);
    for _ in 0..100 {
        let f = black_call(t, k, sigma) - price;
        if f.abs() <= PRICE_TOL {
            return Ok(sigma);
        }
        if f > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let vega = black_vega(t, k, sigma);
        let newton = sigma - f / vega;
        sigma = if vega > 1e-12 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-16 * sigma.max(1.0) {
            break;
        }
    }
    let f = black_call(t, k, sigma) - price;
    if f.abs() <= 1e-12 {
        Ok(sigma)
    } else {
        Err(Error::numerical(
            "implied_vol",
            format!("no convergence at t={t}, k={k}, price={price} (residual {f:.3e})"),
        ))
    }
}

fn initial_vol_guess(price: f64, t: f64, k: f64) -> f64 {
    if (k - 1.0).abs() < 1e-12 {
        // ATM inversion is exact: c = 2Φ(σ√t/2) − 1.
        return 2.0 * norm_inv(0.5 * (1.0 + price)) / t.sqrt();
    }
    let half_par = 0.5 * (1.0 - k);
    let denom = 1.0 - half_par;
    let guess = (2.0 * std::f64::consts::PI / t).sqrt() * (price - half_par) / denom;
    guess.clamp(1e-4, 10.0)
}

/// The Vega-normalized Φ increment
/// `Λ(t, k, σ) = (Φ(y + σ√t) − Φ(y)) / Vega`.
///
/// Evaluated in a tail-stable integral form when the direct ratio would
/// underflow. Its small-time limit is `σ (k − 1)/(k ln k)` (→ σ at k = 1);
/// it multiplies a term of order `t` in the local-vol ratio, so only the ATM
/// value feeds the short-maturity asymptotics.
pub fn lambda(t: f64, k: f64, sigma: f64) -> f64 {
    let srt = sigma * t.sqrt();
    let y = black_y(t, k, sigma);
    let b = y + srt;
    if y.abs() < 30.0 && b.abs() < 30.0 {
        return (norm_cdf(b) - norm_cdf(y)) / (t.sqrt() * norm_pdf(b));
    }
    // (Φ(b) − Φ(y))/φ(b) = ∫₀^{σ√t} exp(b·u − u²/2) du, stable for any b.
    let integral = quad::adaptive_simpson(|u| (b * u - 0.5 * u * u).exp(), 0.0, srt, 1e-14)
        .unwrap_or(f64::NAN);
    integral / t.sqrt()
}

/// An implied-vol surface σ(t, k) with the partial derivatives needed by the
/// local-volatility map. Sources with analytic derivatives override the
/// central-difference defaults (relative step 1e-4).
pub trait ImpliedSurface {
    fn vol(&self, t: f64, k: f64) -> f64;

    fn d_t(&self, t: f64, k: f64) -> f64 {
        let h = 1e-4 * t;
        (self.vol(t + h, k) - self.vol(t - h, k)) / (2.0 * h)
    }

    fn d_k(&self, t: f64, k: f64) -> f64 {
        let h = 1e-4 * k;
        (self.vol(t, k + h) - self.vol(t, k - h)) / (2.0 * h)
    }

    fn d_kk(&self, t: f64, k: f64) -> f64 {
        let h = 1e-4 * k;
        (self.vol(t, k + h) - 2.0 * self.vol(t, k) + self.vol(t, k - h)) / (h * h)
    }
}

/// Surface adapter over a plain closure (finite-difference derivatives).
pub struct FnSurface<F: Fn(f64, f64) -> f64>(pub F);

impl<F: Fn(f64, f64) -> f64> ImpliedSurface for FnSurface<F> {
    fn vol(&self, t: f64, k: f64) -> f64 {
        (self.0)(t, k)
    }
}

/// Local volatility η(t, k) implied by a smile surface under mean reversion,
/// i.e. the ratio form of the extended forward equation solved for η:
///
/// ```text
/// η² = (σ² + 2σt ∂ₜσ + 2aσt (Λ + (1−k) ∂ₖσ))
///      / (1 + 2k√t (y+σ√t) ∂ₖσ + k²σt ∂ₖₖσ + k²t y (y+σ√t) (∂ₖσ)²)
/// ```
///
/// A non-positive denominator signals butterfly arbitrage in the input
/// surface and is reported as an error rather than clipped.
pub fn local_vol_from_implied<S: ImpliedSurface>(
    surface: &S,
    a_of_t: impl Fn(f64) -> f64,
    t: f64,
    k: f64,
) -> Result<f64> {
    if !(t > 0.0 && k > 0.0) {
        return Err(Error::domain(
            "local_vol_from_implied",
            format!("need t, k > 0, got t={t}, k={k}"),
        ));
    }
    let sigma = surface.vol(t, k);
    if !(sigma > 0.0) {
        return Err(Error::domain(
            "local_vol_from_implied",
            format!("surface vol must be positive, got {sigma} at t={t}, k={k}"),
        ));
    }
    let d_t = surface.d_t(t, k);
    let d_k = surface.d_k(t, k);
    let d_kk = surface.d_kk(t, k);
    let a = a_of_t(t);
    let srt = sigma * t.sqrt();
    let y = black_y(t, k, sigma);
    let lam = lambda(t, k, sigma);

    let num = sigma * sigma
        + 2.0 * sigma * t * d_t
        + 2.0 * a * sigma * t * (lam + (1.0 - k) * d_k);
    let den = 1.0
        + 2.0 * k * t.sqrt() * (y + srt) * d_k
        + k * k * sigma * t * d_kk
        + k * k * t * y * (y + srt) * d_k * d_k;

    if den <= 0.0 {
        return Err(Error::domain(
            "local_vol_from_implied",
            format!("non-positive denominator {den:.3e} at t={t}, k={k} (butterfly arbitrage)"),
        ));
    }
    if num < 0.0 {
        return Err(Error::numerical(
            "local_vol_from_implied",
            format!("negative numerator {num:.3e} at t={t}, k={k} (calendar arbitrage)"),
        ));
    }
    Ok((num / den).sqrt())
}

/// Zero-maturity implied vol from the strike section of the local vol:
/// the harmonic-mean formula
///
/// ```text
/// σ(0, k) = ln k · ( ∫₁ᵏ dx / (x η₀(x)) )⁻¹,    σ(0, 1) = η₀(1).
/// ```
pub fn short_time_implied(eta0: impl Fn(f64) -> f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::domain("short_time_implied", format!("need k > 0, got {k}")));
    }
    let lo = k.min(1.0);
    let hi = k.max(1.0);
    // Positivity of the section on the integration range.
    for i in 0..=16 {
        let x = lo + (hi - lo) * i as f64 / 16.0;
        let e = eta0(x);
        if !(e > 0.0) {
            return Err(Error::domain(
                "short_time_implied",
                format!("local vol section must be positive, got {e} at x={x}"),
            ));
        }
    }
    if (k - 1.0).abs() < 1e-12 {
        return Ok(eta0(1.0));
    }
    let integral = quad::adaptive_simpson(|x| 1.0 / (x * eta0(x)), 1.0, k, 1e-10)?;
    Ok(k.ln() / integral)
}
