//! Extended Dupire forward PDE for normalized call prices.
//!
//! One sweep of
//!
//! ```text
//! ∂ₜ c = ( −a(t) − a(t)(1−k) ∂ₖ + ½ k² η²(t,k) ∂ₖₖ ) c,
//! c(t,0) = 1,  c(t,∞) = 0,  c(0,k) = (1−k)⁺
//! ```
//!
//! prices every plain-vanilla maturity at once. The solver is a θ-scheme
//! (Crank–Nicolson by default) on a sinh-graded strike grid concentrated at
//! k = 1, with Rannacher implicit start-up to damp the payoff kink and local
//! upwinding of the drift term wherever the cell Péclet number exceeds 2.
//! Quoted maturities and effective strikes are snapped onto grid nodes so
//! calibration reads prices without interpolation error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Pchip;
use crate::spot::MeanReversion;

/// A local-volatility function η(t, k) evaluated on the PDE grid.
pub trait LocalVol {
    fn eta(&self, t: f64, k: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64> LocalVol for F {
    fn eta(&self, t: f64, k: f64) -> f64 {
        self(t, k)
    }
}

/// Discretization parameters; the resolved grid is built per solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    /// Target number of strike intervals of the sinh backbone.
    pub n_strike: usize,
    /// Sinh concentration parameter; smaller clusters harder at k = 1.
    pub sinh_concentration: f64,
    /// Width of the strike domain: ln k_max = width · σ_max √T_max.
    pub log_width_stds: f64,
    /// Upper bound on a single time step (years).
    pub dt_max: f64,
    /// Minimum number of steps before the earliest quoted maturity.
    pub min_steps_to_first: usize,
    /// θ-weight of the scheme (½ = Crank–Nicolson).
    pub theta: f64,
    /// Number of initial intervals integrated fully implicitly
    /// (each as two half-steps, the classical Rannacher start-up).
    pub rannacher_steps: usize,
    /// Oscillation detector: largest admissible negative density relative
    /// to the slice maximum.
    pub negative_density_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_strike: 400,
            sinh_concentration: 0.15,
            log_width_stds: 8.0,
            dt_max: 1.0 / 365.0,
            min_steps_to_first: 48,
            theta: 0.5,
            rannacher_steps: 2,
            negative_density_tol: 1e-3,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_strike < 16 {
            return Err(Error::invalid("grid", "need at least 16 strike intervals"));
        }
        if !(self.sinh_concentration > 0.0) {
            return Err(Error::invalid("grid", "sinh concentration must be positive"));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::invalid("grid", "dt_max must be positive"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::invalid("grid", "theta must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Resolved discretization: strike nodes, time nodes and scheme parameters.
#[derive(Debug, Clone)]
pub struct PdeGrid {
    strikes: Vec<f64>,
    times: Vec<f64>,
    theta: f64,
    rannacher_steps: usize,
    negative_density_tol: f64,
}

impl PdeGrid {
    /// Build a grid covering `[0, horizon] × [0, k_max]`.
    ///
    /// `maturities` and `key_strikes` (quoted effective strikes) become grid
    /// nodes exactly; `sigma_max` sizes the strike domain.
    pub fn build(
        spec: &GridSpec,
        horizon: f64,
        maturities: &[f64],
        key_strikes: &[f64],
        sigma_max: f64,
    ) -> Result<Self> {
        spec.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::invalid("grid", format!("horizon must be positive, got {horizon}")));
        }
        for &k in key_strikes {
            if !(k > 0.0) {
                return Err(Error::invalid("grid", format!("key strike {k} must be positive")));
            }
        }
        let max_key = key_strikes.iter().fold(0.0_f64, |m, &k| m.max(k));
        let k_max = (spec.log_width_stds * sigma_max.max(0.05) * horizon.sqrt())
            .exp()
            .max(1.5 * max_key)
            .max(3.0);

        let strikes = sinh_strike_grid(spec.n_strike, spec.sinh_concentration, k_max, key_strikes)?;
        let m = strikes.len();
        if max_key > strikes[m - 2] {
            return Err(Error::invalid(
                "grid",
                format!("largest key strike {max_key} exceeds the next-to-last node {}", strikes[m - 2]),
            ));
        }

        let times = time_grid(spec, horizon, maturities)?;
        Ok(Self {
            strikes,
            times,
            theta: spec.theta,
            rannacher_steps: spec.rannacher_steps,
            negative_density_tol: spec.negative_density_tol,
        })
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Index of a time node, required to match to 1e-10.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        index_of(&self.times, t).ok_or_else(|| Error::domain("grid", format!("{t} is not a time node")))
    }

    /// Index of a strike node, required to match to 1e-10.
    pub fn strike_index(&self, k: f64) -> Result<usize> {
        index_of(&self.strikes, k).ok_or_else(|| Error::domain("grid", format!("{k} is not a strike node")))
    }
}

fn index_of(nodes: &[f64], x: f64) -> Option<usize> {
    let i = nodes.partition_point(|&v| v < x - 1e-10);
    if i < nodes.len() && (nodes[i] - x).abs() <= 1e-10 * x.abs().max(1.0) {
        Some(i)
    } else {
        None
    }
}

/// Sinh-graded nodes on [0, k_max] concentrated at k = 1, with k = 0, k = 1
/// exact and every key strike inserted as an exact node.
fn sinh_strike_grid(n: usize, alpha: f64, k_max: f64, key_strikes: &[f64]) -> Result<Vec<f64>> {
    let u_lo = (-1.0 / alpha).asinh();
    let u_hi = ((k_max - 1.0) / alpha).asinh();
    let span = u_hi - u_lo;
    let n_lo = ((n as f64) * (-u_lo) / span).ceil().max(4.0) as usize;
    let n_hi = ((n as f64) * u_hi / span).ceil().max(4.0) as usize;

    let mut nodes = Vec::with_capacity(n_lo + n_hi + key_strikes.len() + 2);
    for i in 0..=n_lo {
        let u = u_lo * (1.0 - i as f64 / n_lo as f64);
        nodes.push(1.0 + alpha * u.sinh());
    }
    for i in 1..=n_hi {
        let u = u_hi * i as f64 / n_hi as f64;
        nodes.push(1.0 + alpha * u.sinh());
    }
    nodes[0] = 0.0;
    nodes[n_lo] = 1.0;
    let last = nodes.len() - 1;
    nodes[last] = k_max;

    // Snap key strikes onto the backbone: replace the nearest interior node
    // when it is close, insert otherwise. Nodes that must survive verbatim
    // (0, 1, k_max and previously snapped key strikes) are never replaced.
    let mut pinned = vec![0.0, 1.0, k_max];
    for &k in key_strikes {
        if index_of(&nodes, k).is_some() || k >= k_max {
            pinned.push(k);
            continue;
        }
        let j = nodes.partition_point(|&v| v < k);
        let (lo, hi) = (nodes[j - 1], nodes[j]);
        let spacing = hi - lo;
        let (j_near, dist) = if k - lo <= hi - k { (j - 1, k - lo) } else { (j, hi - k) };
        let protected = pinned
            .iter()
            .any(|&p| (nodes[j_near] - p).abs() <= 1e-10 * p.abs().max(1.0));
        if !protected && dist < 0.3 * spacing {
            nodes[j_near] = k;
        } else {
            nodes.insert(j, k);
        }
        pinned.push(k);
    }

    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::numerical("grid", "strike nodes failed to be strictly increasing"));
        }
    }
    Ok(nodes)
}

/// Union of uniform refinements between quote maturities, each step ≤ dt_max,
/// with extra resolution ahead of the first maturity.
fn time_grid(spec: &GridSpec, horizon: f64, maturities: &[f64]) -> Result<Vec<f64>> {
    let mut breaks: Vec<f64> = maturities
        .iter()
        .copied()
        .filter(|&t| t > 1e-12 && t <= horizon + 1e-12)
        .collect();
    breaks.push(horizon);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut times = vec![0.0];
    let mut prev = 0.0;
    for (bi, &b) in breaks.iter().enumerate() {
        let span = b - prev;
        let mut n = (span / spec.dt_max).ceil() as usize;
        if bi == 0 {
            n = n.max(spec.min_steps_to_first);
        }
        n = n.max(1);
        for i in 1..=n {
            times.push(prev + span * i as f64 / n as f64);
        }
        let fixed = times.len() - 1;
        times[fixed] = b; // exact landing on the maturity
        prev = b;
    }
    Ok(times)
}

/// Normalized call prices c(tₙ, kₘ) on the full grid.
#[derive(Debug, Clone)]
pub struct CallSurface {
    strikes: Vec<f64>,
    times: Vec<f64>,
    /// values[n][m] = c(tₙ, kₘ)
    values: Vec<Vec<f64>>,
    negative_density_tol: f64,
}

/// Risk-neutral density slice p(k) = ∂ₖₖ c(t, k) at the interior nodes.
#[derive(Debug, Clone)]
pub struct DensitySlice {
    pub strikes: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensitySlice {
    /// ∫ p dk by the trapezoid rule over the interior nodes.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.strikes, &self.density)
    }

    /// ∫ k p dk (the model forward; 1 when futures are repriced).
    pub fn mean(&self) -> f64 {
        let weighted: Vec<f64> = self.strikes.iter().zip(&self.density).map(|(k, p)| k * p).collect();
        trapezoid(&self.strikes, &weighted)
    }

    pub fn min(&self) -> f64 {
        self.density.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Probability mass inside [lo, hi] (trapezoid on the clipped range).
    pub fn mass_within(&self, lo: f64, hi: f64) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.strikes.len() {
            let (a, b) = (self.strikes[i - 1], self.strikes[i]);
            if b < lo || a > hi {
                continue;
            }
            acc += 0.5 * (self.density[i] + self.density[i - 1]) * (b.min(hi) - a.max(lo));
        }
        acc
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}

impl CallSurface {
    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        index_of(&self.times, t).ok_or_else(|| Error::domain("surface", format!("{t} is not a time node")))
    }

    pub fn strike_index(&self, k: f64) -> Result<usize> {
        index_of(&self.strikes, k).ok_or_else(|| Error::domain("surface", format!("{k} is not a strike node")))
    }

    /// Grid value without interpolation.
    pub fn value_node(&self, time_idx: usize, strike_idx: usize) -> f64 {
        self.values[time_idx][strike_idx]
    }

    /// c(t, k); linear blend in t, monotone cubic in k, martingale extension
    /// `1 − k` for k ≤ 0, zero beyond the far boundary.
    pub fn value(&self, t: f64, k: f64) -> Result<f64> {
        if k <= 0.0 {
            return Ok(1.0 - k);
        }
        let kmax = *self.strikes.last().unwrap();
        if k >= kmax {
            return Ok(0.0);
        }
        let slice = self.slice_at(t)?;
        let spline = Pchip::new(self.strikes.clone(), slice)?;
        Ok(spline.value(k).clamp(0.0, 1.0))
    }

    /// Full strike slice at t (linear in t between stored rows).
    pub fn slice_at(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.times.len();
        let t_last = self.times[n - 1];
        if t < -1e-12 || t > t_last + 1e-9 {
            return Err(Error::domain(
                "surface",
                format!("t={t} outside the solved range [0, {t_last}]"),
            ));
        }
        let t = t.clamp(0.0, t_last);
        if let Some(i) = index_of(&self.times, t) {
            return Ok(self.values[i].clone());
        }
        let i = self.times.partition_point(|&v| v <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.values[i]
            .iter()
            .zip(&self.values[i + 1])
            .map(|(a, b)| a * (1.0 - w) + b * w)
            .collect())
    }

    /// Black implied vol of the stored price at an exact grid node pair.
    pub fn implied_vol_node(&self, time_idx: usize, strike_idx: usize) -> Result<f64> {
        let t = self.times[time_idx];
        let k = self.strikes[strike_idx];
        crate::black::implied_vol(self.values[time_idx][strike_idx], t, k)
    }

    /// Black implied vol at an arbitrary (t, k) via surface interpolation.
    pub fn implied_vol_at(&self, t: f64, k: f64) -> Result<f64> {
        crate::black::implied_vol(self.value(t, k)?, t, k)
    }

    /// Risk-neutral density p(k) = ∂ₖₖ c at the nearest stored time.
    ///
    /// Fails when the most negative density value exceeds the oscillation
    /// tolerance (relative to the slice maximum) — the signature of butterfly
    /// arbitrage in η or of a grid too coarse for it.
    pub fn density_slice(&self, t: f64) -> Result<DensitySlice> {
        let slice = self.slice_at(t)?;
        let m = self.strikes.len();
        let mut ks = Vec::with_capacity(m - 2);
        let mut ps = Vec::with_capacity(m - 2);
        for i in 1..m - 1 {
            let h0 = self.strikes[i] - self.strikes[i - 1];
            let h1 = self.strikes[i + 1] - self.strikes[i];
            let d = 2.0 * ((slice[i + 1] - slice[i]) / h1 - (slice[i] - slice[i - 1]) / h0) / (h0 + h1);
            ks.push(self.strikes[i]);
            ps.push(d);
        }
        let out = DensitySlice { strikes: ks, density: ps };
        let peak = out.density.iter().copied().fold(0.0_f64, f64::max);
        if out.min() < -self.negative_density_tol * peak.max(1e-300) {
            return Err(Error::numerical(
                "density",
                format!("negative density {:.3e} beyond tolerance at t={t}", out.min()),
            ));
        }
        Ok(out)
    }
}

/// Solve the forward equation for all maturities in one sweep.
pub fn solve_dupire<V: LocalVol>(eta: &V, a: &MeanReversion, grid: &PdeGrid) -> Result<CallSurface> {
    let ks = &grid.strikes;
    let m = ks.len();
    let n_interior = m - 2;

    let mut values = Vec::with_capacity(grid.times.len());
    let payoff: Vec<f64> = ks.iter().map(|&k| (1.0 - k).max(0.0)).collect();
    values.push(payoff);

    let mut lower = vec![0.0; n_interior];
    let mut diag = vec![0.0; n_interior];
    let mut upper = vec![0.0; n_interior];
    let mut rhs = vec![0.0; n_interior];
    let mut scratch = vec![0.0; n_interior];
    let mut current = values[0].clone();

    for step in 0..grid.times.len() - 1 {
        let (t0, t1) = (grid.times[step], grid.times[step + 1]);
        let tm = 0.5 * (t0 + t1);
        let stages: Vec<(f64, f64, f64)> = if step < grid.rannacher_steps {
            // two fully implicit half-steps
            vec![(t0, tm, 1.0), (tm, t1, 1.0)]
        } else {
            vec![(t0, t1, grid.theta)]
        };
        for (s0, s1, theta) in stages {
            step_theta(
                eta, a, ks, s0, s1, theta, &mut current, &mut lower, &mut diag, &mut upper, &mut rhs,
                &mut scratch,
            )?;
        }
        values.push(current.clone());
    }

    let surface = CallSurface {
        strikes: grid.strikes.clone(),
        times: grid.times.clone(),
        values,
        negative_density_tol: grid.negative_density_tol,
    };
    check_shape(&surface)?;
    Ok(surface)
}

/// One θ-weighted step of the interior system; boundaries are Dirichlet
/// (c = 1 at k = 0, c = 0 at k_max) and constant in time.
#[allow(clippy::too_many_arguments)]
fn step_theta<V: LocalVol>(
    eta: &V,
    a: &MeanReversion,
    ks: &[f64],
    t0: f64,
    t1: f64,
    theta: f64,
    current: &mut [f64],
    lower: &mut [f64],
    diag: &mut [f64],
    upper: &mut [f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let m = ks.len();
    let dt = t1 - t0;
    let tmid = 0.5 * (t0 + t1);
    let a_mid = a.rate(tmid);

    for i in 1..m - 1 {
        let k = ks[i];
        let h0 = k - ks[i - 1];
        let h1 = ks[i + 1] - k;
        let e = eta.eta(tmid, k);
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::numerical(
                "dupire",
                format!("local vol must be positive and finite, got {e} at (t={tmid}, k={k})"),
            ));
        }
        let dcoef = 0.5 * k * k * e * e;
        let v = -a_mid * (1.0 - k);
        let r = -a_mid;

        // diffusion, central on the non-uniform pair
        let mut lo = 2.0 * dcoef / (h0 * (h0 + h1));
        let mut di = -2.0 * dcoef / (h0 * h1) + r;
        let mut up = 2.0 * dcoef / (h1 * (h0 + h1));

        // drift: central unless the cell Péclet number exceeds 2
        let peclet = v.abs() * h0.max(h1) / dcoef.max(1e-300);
        if peclet <= 2.0 {
            lo += -v * h1 / (h0 * (h0 + h1));
            di += v * (h1 - h0) / (h0 * h1);
            up += v * h0 / (h1 * (h0 + h1));
        } else if v > 0.0 {
            di += -v / h1;
            up += v / h1;
        } else {
            lo += -v / h0;
            di += v / h0;
        }

        let j = i - 1;
        lower[j] = lo;
        diag[j] = di;
        upper[j] = up;

        // explicit part: (I + (1−θ)Δt L) c, boundary neighbours included
        let explicit = if theta < 1.0 {
            (1.0 - theta) * dt * (lo * current[i - 1] + di * current[i] + up * current[i + 1])
        } else {
            0.0
        };
        rhs[j] = current[i] + explicit;
    }
    // implicit boundary contributions (c(·,0) = 1 constant, far boundary 0)
    rhs[0] += theta * dt * lower[0] * 1.0;

    // assemble I − θΔtL
    let n = m - 2;
    for j in 0..n {
        lower[j] *= -theta * dt;
        diag[j] = 1.0 - theta * dt * diag[j];
        upper[j] *= -theta * dt;
    }
    thomas_solve(lower, diag, upper, rhs, scratch)?;
    current[1..m - 1].copy_from_slice(&rhs[..n]);
    current[0] = 1.0;
    current[m - 1] = 0.0;
    Ok(())
}

/// Thomas algorithm; `rhs` holds the solution on return.
fn thomas_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], work: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::numerical("tridiag", "zero pivot in row 0"));
    }
    rhs[0] /= beta;
    for i in 1..n {
        work[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * work[i];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::numerical("tridiag", format!("solver breakdown in row {i}")));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= work[i + 1] * rhs[i + 1];
    }
    Ok(())
}

/// Post-solve sanity: prices in [0, 1], monotone decay in strike, and no
/// oscillation (negative discrete density) beyond tolerance on any slice.
fn check_shape(surface: &CallSurface) -> Result<()> {
    let m = surface.strikes.len();
    for (n, row) in surface.values.iter().enumerate() {
        let mut peak = 0.0_f64;
        let mut worst = 0.0_f64;
        for i in 1..m - 1 {
            let h0 = surface.strikes[i] - surface.strikes[i - 1];
            let h1 = surface.strikes[i + 1] - surface.strikes[i];
            let d = 2.0 * ((row[i + 1] - row[i]) / h1 - (row[i] - row[i - 1]) / h0) / (h0 + h1);
            peak = peak.max(d);
            worst = worst.min(d);
        }
        if worst < -surface.negative_density_tol * peak.max(1e-300) {
            return Err(Error::numerical(
                "dupire",
                format!(
                    "oscillation detector: negative density {worst:.3e} (peak {peak:.3e}) at t={}",
                    surface.times[n]
                ),
            ));
        }
        for i in 0..m {
            let v = row[i];
            if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return Err(Error::numerical(
                    "dupire",
                    format!("price {v} out of [0,1] at t={}, k={}", surface.times[n], surface.strikes[i]),
                ));
            }
            if i > 0 && v > row[i - 1] + 1e-9 {
                return Err(Error::numerical(
                    "dupire",
                    format!("price not decreasing in strike at t={}, k={}", surface.times[n], surface.strikes[i]),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::black::{black_call, implied_vol};

    fn flat_grid(horizon: f64, maturities: &[f64]) -> PdeGrid {
        PdeGrid::build(&GridSpec::default(), horizon, maturities, &[], 0.25).unwrap()
    }

    fn fine_spec() -> GridSpec {
        GridSpec {
            n_strike: 2400,
            sinh_concentration: 0.08,
            min_steps_to_first: 192,
            ..GridSpec::default()
        }
    }

    #[test]
    fn grid_contains_required_nodes() {
        let spec = GridSpec::default();
        let g = PdeGrid::build(&spec, 1.0, &[0.25, 0.5], &[0.93, 1.072], 0.3).unwrap();
        g.strike_index(1.0).unwrap();
        g.strike_index(0.93).unwrap();
        g.strike_index(1.072).unwrap();
        assert_eq!(g.strikes()[0], 0.0);
        g.time_index(0.25).unwrap();
        g.time_index(0.5).unwrap();
        g.time_index(1.0).unwrap();
        // steps bounded by dt_max
        for w in g.times().windows(2) {
            assert!(w[1] - w[0] <= spec.dt_max + 1e-12);
        }
    }

    #[test]
    fn lognormal_recovers_flat_smile() {
        // a = 0, η = 0.2: the model is exactly lognormal. The far short-dated
        // wing (k = 0.7 at t = 0.1 sits 5.6 standard deviations out) needs
        // the high-resolution grid to hit vol space at 2e-4.
        let a = MeanReversion::constant(0.0);
        let grid = PdeGrid::build(&fine_spec(), 2.0, &[0.1, 0.5, 1.0, 2.0], &[], 0.25).unwrap();
        let surf = solve_dupire(&|_t: f64, _k: f64| 0.2, &a, &grid).unwrap();
        for &t in &[0.1, 0.5, 1.0, 2.0] {
            let n = surf.time_index(t).unwrap();
            for (j, &k) in surf.strikes().iter().enumerate() {
                if !(0.7..=1.3).contains(&k) {
                    continue;
                }
                let iv = surf.implied_vol_node(n, j).unwrap();
                assert!((iv - 0.2).abs() < 2e-4, "t={t} k={k} iv={iv}");
            }
        }
    }

    #[test]
    fn boundary_columns_are_pinned() {
        let a = MeanReversion::constant(1.0);
        let grid = flat_grid(1.0, &[0.5, 1.0]);
        let surf = solve_dupire(&|_: f64, _: f64| 0.2, &a, &grid).unwrap();
        let m = surf.strikes().len();
        for n in 0..surf.times().len() {
            assert_eq!(surf.value_node(n, 0), 1.0);
            assert_eq!(surf.value_node(n, m - 1), 0.0);
        }
    }

    #[test]
    fn density_integrates_to_one_with_unit_mean() {
        let a = MeanReversion::constant(0.5);
        let grid = flat_grid(1.5, &[0.25, 1.0, 1.5]);
        let surf = solve_dupire(&|_: f64, _: f64| 0.25, &a, &grid).unwrap();
        for &t in &[0.25, 1.0, 1.5] {
            let d = surf.density_slice(t).unwrap();
            assert!((d.integral() - 1.0).abs() < 1e-3, "t={t} mass={}", d.integral());
            assert!((d.mean() - 1.0).abs() < 1e-3, "t={t} mean={}", d.mean());
        }
    }

    #[test]
    fn short_time_density_concentrates_at_one() {
        // t → 0: evaluate at the first positive time node, where the density
        // must still be essentially the initial Dirac mass at k = 1.
        let a = MeanReversion::constant(0.5);
        let grid = flat_grid(0.5, &[0.005, 0.5]);
        let surf = solve_dupire(&|_: f64, _: f64| 0.2, &a, &grid).unwrap();
        let t1 = surf.times()[1];
        let d = surf.density_slice(t1).unwrap();
        // 3 local spacings around k = 1
        let j = surf.strike_index(1.0).unwrap();
        let dk = (surf.strikes()[j + 1] - surf.strikes()[j - 1]) * 0.5;
        let mass = d.mass_within(1.0 - 3.0 * dk, 1.0 + 3.0 * dk);
        assert!(mass > 0.99, "mass near ATM = {mass}");
        assert!((d.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lognormal_density_kolmogorov_distance() {
        // compare the implied CDF against the exact lognormal at t = 1
        let a = MeanReversion::constant(0.0);
        let grid = flat_grid(1.0, &[1.0]);
        let surf = solve_dupire(&|_: f64, _: f64| 0.2, &a, &grid).unwrap();
        let n = surf.time_index(1.0).unwrap();
        let ks = surf.strikes();
        let mut worst = 0.0_f64;
        for i in 1..ks.len() - 1 {
            // P(s ≤ k) = 1 + ∂ₖc, centred difference
            let dk = ks[i + 1] - ks[i - 1];
            let cdf = 1.0 + (surf.value_node(n, i + 1) - surf.value_node(n, i - 1)) / dk;
            let z = (ks[i].ln() + 0.5 * 0.04) / 0.2;
            let exact = crate::math::norm_cdf(z);
            worst = worst.max((cdf - exact).abs());
        }
        assert!(worst < 1e-3, "Kolmogorov distance {worst}");
    }

    #[test]
    fn prop3_atm_vol_insensitive_to_reversion_at_short_maturity() {
        // At t = 1/365 the exact ATM vol carries a genuine O(a·t) correction
        // of about −η·a·t/2 ≈ −2.7e-4·a, inside the 5e-4 band; the grid must
        // be fine enough not to add to it.
        let t = 1.0 / 365.0;
        for &a_val in &[0.0, 0.5, 1.0, 1.5] {
            let a = MeanReversion::constant(a_val);
            let grid = PdeGrid::build(&fine_spec(), 0.05, &[t], &[], 0.25).unwrap();
            let surf = solve_dupire(&|_: f64, _: f64| 0.2, &a, &grid).unwrap();
            let n = surf.time_index(t).unwrap();
            let j = surf.strike_index(1.0).unwrap();
            let iv = surf.implied_vol_node(n, j).unwrap();
            assert!((iv - 0.2).abs() < 5e-4, "a={a_val} iv={iv}");
        }
    }

    #[test]
    fn rejects_nonpositive_local_vol() {
        let a = MeanReversion::constant(0.0);
        let grid = flat_grid(0.5, &[0.5]);
        let r = solve_dupire(&|_: f64, k: f64| 0.2 - 0.3 * (k - 1.0).abs(), &a, &grid);
        assert!(r.is_err());
    }

    #[test]
    fn surface_value_interpolates_and_extends() {
        let a = MeanReversion::constant(0.0);
        let grid = flat_grid(1.0, &[1.0]);
        let surf = solve_dupire(&|_: f64, _: f64| 0.2, &a, &grid).unwrap();
        // martingale extension below zero strike
        assert_eq!(surf.value(0.5, -0.2).unwrap(), 1.2);
        assert_eq!(surf.value(0.5, 0.0).unwrap(), 1.0);
        // interpolated interior value close to Black
        let c = surf.value(1.0, 0.97).unwrap();
        assert!((c - black_call(1.0, 0.97, 0.2)).abs() < 5e-5);
        // far field is zero
        let kmax = *surf.strikes().last().unwrap();
        assert_eq!(surf.value(0.5, kmax + 1.0).unwrap(), 0.0);
    }

    #[test]
    fn implied_vol_at_interpolated_points() {
        let a = MeanReversion::constant(0.0);
        let grid = flat_grid(1.0, &[0.4, 1.0]);
        let surf = solve_dupire(&|_: f64, _: f64| 0.3, &a, &grid).unwrap();
        let iv = surf.implied_vol_at(0.4, 1.08).unwrap();
        assert!((iv - 0.3).abs() < 3e-4, "iv={iv}");
        assert!(implied_vol(surf.value(1.0, 1.0).unwrap(), 1.0, 1.0).unwrap() > 0.0);
    }
}
