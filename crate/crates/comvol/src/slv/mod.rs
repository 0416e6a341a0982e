//! Stochastic-local-volatility Monte Carlo.
//!
//! Each futures price diffuses under a two-dimensional driver with
//! maturity-dependent loadings `[ρ(T), √(1−ρ²(T))]` and a common lognormal
//! Ornstein–Uhlenbeck volatility multiplier v:
//!
//! ```text
//! dF_t(T) = v_t · η_F(t, T, F_t(T)) / √(E[v²_t | F_t(T)]) · [ρ(T), √(1−ρ²)]·dW^F
//! d log v = −((1+e^{−2t})/2 ξ² + log v) dt + ξ dW^v,   v₀ = 1
//! ```
//!
//! The drift of log v makes E[v²] ≡ 1 exactly (the step uses the exact
//! Gaussian transition), and the conditional normalization is estimated per
//! pillar from the particle cloud, which is what keeps the futures marginals
//! glued to the calibrated local-vol model for any admissible (ξ, ρᵛ).
//! W^v correlates to both driver components at ρᵛ; positive-definiteness of
//! the 3×3 correlation caps |ρᵛ| at 1/√2.
//!
//! Paths advance block-parallel between the leverage-estimation barriers;
//! every block owns a counter-based RNG stream, so results are deterministic
//! for a given (seed, path count, block size).

pub mod leverage;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spot::CalibratedSpotModel;

pub use leverage::{LeverageConfig, LeverageTable};

/// Simulation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Largest time step (years).
    pub dt_max: f64,
    /// Paths per parallel block (the RNG stream granularity).
    pub block_size: usize,
    pub leverage: LeverageConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt_max: 1.0 / 365.0, block_size: 8192, leverage: LeverageConfig::default() }
    }
}

/// The SLV model: calibrated base model plus curve/smile dynamics knobs.
#[derive(Debug, Clone)]
pub struct SlvModel {
    pub base: CalibratedSpotModel,
    /// (T, ρ(T)) pillars; linear in T between pillars, clipped to [−1, 1].
    rho_pillars: Vec<(f64, f64)>,
    pub xi: f64,
    pub rho_v: f64,
    pub sim: SimConfig,
}

impl SlvModel {
    pub fn new(
        base: CalibratedSpotModel,
        rho_pillars: Vec<(f64, f64)>,
        xi: f64,
        rho_v: f64,
        sim: SimConfig,
    ) -> Result<Self> {
        if rho_pillars.is_empty() {
            return Err(Error::invalid("slv", "need at least one correlation pillar"));
        }
        for w in rho_pillars.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid("slv", "correlation pillars must be strictly increasing in T"));
            }
        }
        for &(t, r) in &rho_pillars {
            if !(-1.0..=1.0).contains(&r) {
                return Err(Error::invalid("slv", format!("rho({t}) = {r} outside [-1, 1]")));
            }
        }
        if !(xi >= 0.0) {
            return Err(Error::invalid("slv", format!("vol-of-vol must be non-negative, got {xi}")));
        }
        let cap = 1.0 / 2.0_f64.sqrt();
        if !(rho_v.abs() <= cap + 1e-15) {
            return Err(Error::invalid(
                "slv",
                format!("spot-vol correlation {rho_v} outside [-1/sqrt2, 1/sqrt2] (3x3 correlation not PSD)"),
            ));
        }
        Ok(Self { base, rho_pillars, xi, rho_v, sim })
    }

    /// Pure local-vol degeneration: ξ = 0, ρᵛ = 0, same engine.
    pub fn local_vol_degenerate(base: CalibratedSpotModel, rho_pillars: Vec<(f64, f64)>, sim: SimConfig) -> Result<Self> {
        Self::new(base, rho_pillars, 0.0, 0.0, sim)
    }

    /// ρ(T): linear between pillars, flat outside, clipped to [−1, 1].
    pub fn rho(&self, maturity: f64) -> f64 {
        let p = &self.rho_pillars;
        let n = p.len();
        let r = if n == 1 || maturity <= p[0].0 {
            p[0].1
        } else if maturity >= p[n - 1].0 {
            p[n - 1].1
        } else {
            let i = p.partition_point(|&(t, _)| t <= maturity) - 1;
            let (t0, r0) = p[i];
            let (t1, r1) = p[i + 1];
            r0 + (r1 - r0) * (maturity - t0) / (t1 - t0)
        };
        r.clamp(-1.0, 1.0)
    }
}

/// Instantaneous correlation between two futures returns implied by the
/// driver loadings: `ρ(T₁)ρ(T₂) + √((1−ρ²(T₁))(1−ρ²(T₂)))`.
pub fn instantaneous_correlation(model: &SlvModel, t1: f64, t2: f64) -> f64 {
    let r1 = model.rho(t1);
    let r2 = model.rho(t2);
    (r1 * r2 + ((1.0 - r1 * r1) * (1.0 - r2 * r2)).sqrt()).clamp(-1.0, 1.0)
}

/// Sample mean/standard error of E[v²] at one time node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct V2Row {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

/// Snapshots of the simulated futures at the monitor times.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub pillars: Vec<f64>,
    pub monitors: Vec<f64>,
    /// futures[monitor][pillar][path]
    pub futures: Vec<Vec<Vec<f64>>>,
    pub v2_series: Vec<V2Row>,
    pub n_paths: usize,
    initial: Vec<f64>,
}

impl PathEnsemble {
    pub fn monitor_index(&self, t: f64) -> Result<usize> {
        self.monitors
            .iter()
            .position(|&m| (m - t).abs() < 1e-10)
            .ok_or_else(|| Error::domain("ensemble", format!("{t} is not a monitored time")))
    }

    pub fn pillar_index(&self, maturity: f64) -> Result<usize> {
        self.pillars
            .iter()
            .position(|&p| (p - maturity).abs() < 1e-10)
            .ok_or_else(|| Error::domain("ensemble", format!("{maturity} is not a simulated pillar")))
    }

    /// Future-style vanilla price and standard error from the cloud.
    pub fn vanilla_price(&self, t: f64, maturity: f64, strike: f64) -> Result<(f64, f64)> {
        if t > maturity + 1e-12 {
            return Err(Error::domain("ensemble", format!("expiry {t} after futures maturity {maturity}")));
        }
        let m = self.monitor_index(t)?;
        let p = self.pillar_index(maturity)?;
        Ok(mean_se(self.futures[m][p].iter().map(|&f| (f - strike).max(0.0))))
    }

    /// Calendar-spread payoff price and standard error.
    pub fn cso_price(&self, t: f64, t1: f64, t2: f64, strike: f64) -> Result<(f64, f64)> {
        let m = self.monitor_index(t)?;
        let p1 = self.pillar_index(t1)?;
        let p2 = self.pillar_index(t2)?;
        let (a, b) = (&self.futures[m][p1], &self.futures[m][p2]);
        Ok(mean_se(a.iter().zip(b).map(|(&x, &y)| (x - y - strike).max(0.0))))
    }

    /// Sample-mean drift of the futures: (mean − F₀(T), standard error).
    pub fn martingale_error(&self, t: f64, maturity: f64) -> Result<(f64, f64)> {
        let m = self.monitor_index(t)?;
        let p = self.pillar_index(maturity)?;
        let (mean, se) = mean_se(self.futures[m][p].iter().copied());
        Ok((mean - self.initial[p], se))
    }

    /// Sample correlation between two pillars' futures at a monitor time.
    pub fn terminal_correlation(&self, t: f64, t1: f64, t2: f64) -> Result<f64> {
        let m = self.monitor_index(t)?;
        let p1 = self.pillar_index(t1)?;
        let p2 = self.pillar_index(t2)?;
        let (a, b) = (&self.futures[m][p1], &self.futures[m][p2]);
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            cab += (x - ma) * (y - mb);
            caa += (x - ma) * (x - ma);
            cbb += (y - mb) * (y - mb);
        }
        Ok(cab / (caa * cbb).sqrt())
    }

    /// E[v²] sample row closest to t.
    pub fn v2_at(&self, t: f64) -> Result<&V2Row> {
        self.v2_series
            .iter()
            .min_by(|x, y| (x.t - t).abs().partial_cmp(&(y.t - t).abs()).unwrap())
            .ok_or_else(|| Error::domain("ensemble", "empty v2 series"))
    }
}

fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sum_sq) = (0.0_f64, 0.0, 0.0);
    for v in values {
        n += 1.0;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Evolve the SLV dynamics and snapshot the futures at the monitor times.
///
/// `pillars` are the futures maturities (each frozen beyond its own T); all
/// monitors must lie on the step grid, which the builder guarantees.
pub fn simulate_paths(
    model: &SlvModel,
    pillars: &[f64],
    monitors: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if pillars.is_empty() || monitors.is_empty() {
        return Err(Error::invalid("simulate", "need at least one pillar and one monitor"));
    }
    if n_paths < model.sim.leverage.min_paths {
        return Err(Error::invalid(
            "simulate",
            format!("{n_paths} paths is below the leverage estimator minimum {}", model.sim.leverage.min_paths),
        ));
    }
    let horizon = monitors.iter().copied().fold(0.0_f64, f64::max);
    let mut sorted_monitors = monitors.to_vec();
    sorted_monitors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted_monitors.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    // step grid: monitors and pillar maturities are exact nodes
    let mut breaks = sorted_monitors.clone();
    breaks.extend(pillars.iter().copied().filter(|&p| p > 0.0 && p < horizon));
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut times = vec![0.0];
    let mut prev = 0.0;
    for &b in &breaks {
        let n = ((b - prev) / model.sim.dt_max).ceil().max(1.0) as usize;
        for i in 1..=n {
            times.push(prev + (b - prev) * i as f64 / n as f64);
        }
        let last = times.len() - 1;
        times[last] = b;
        prev = b;
    }

    let base = &model.base;
    let f0: Result<Vec<f64>> = pillars.iter().map(|&p| base.curve.price(p)).collect();
    let f0 = f0?;
    let rho_w: Vec<(f64, f64)> = pillars
        .iter()
        .map(|&p| {
            let r = model.rho(p);
            (r, (1.0 - r * r).max(0.0).sqrt())
        })
        .collect();

    let n_pillars = pillars.len();
    let bs = model.sim.block_size.max(64);
    let n_blocks = n_paths.div_ceil(bs);
    let mut rngs: Vec<ChaCha8Rng> = (0..n_blocks)
        .map(|b| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(b as u64);
            r
        })
        .collect();

    let mut logv = vec![0.0_f64; n_paths];
    let mut v2 = vec![1.0_f64; n_paths];
    let mut fut: Vec<Vec<f64>> = (0..n_pillars).map(|j| vec![f0[j]; n_paths]).collect();

    let mut snapshots: Vec<Vec<Vec<f64>>> = Vec::with_capacity(sorted_monitors.len());
    let mut v2_series = Vec::with_capacity(times.len());
    v2_series.push(V2Row { t: 0.0, mean: 1.0, se: 0.0 });
    if sorted_monitors[0] == 0.0 {
        snapshots.push(fut.clone());
    }

    for w in times.windows(2).collect::<Vec<_>>() {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let tm = 0.5 * (t0 + t1);

        // per-pillar step constants and leverage tables off the current cloud
        struct PillarStep {
            f0: f64,
            level: f64,
            growth: f64,
            w1: f64,
            w2: f64,
            table: Option<LeverageTable>,
            alive: bool,
        }
        let mut steps: Vec<PillarStep> = Vec::with_capacity(n_pillars);
        for j in 0..n_pillars {
            let alive = pillars[j] > t0 + 1e-12;
            if !alive {
                steps.push(PillarStep {
                    f0: f0[j],
                    level: 0.0,
                    growth: 1.0,
                    w1: 0.0,
                    w2: 0.0,
                    table: None,
                    alive,
                });
                continue;
            }
            let integral = base.mean_reversion.integral(tm, pillars[j])?;
            let decay = (-integral).exp();
            let table = if model.xi > 0.0 {
                Some(leverage::estimate(&fut[j], &v2, &model.sim.leverage)?)
            } else {
                None
            };
            steps.push(PillarStep {
                f0: f0[j],
                level: f0[j] * (1.0 - decay),
                growth: integral.exp(),
                w1: rho_w[j].0 * dt.sqrt(),
                w2: rho_w[j].1 * dt.sqrt(),
                table,
                alive,
            });
        }

        let decay_v = (-dt).exp();
        let drift_v = -(model.xi * model.xi / 2.0) * (1.0 - decay_v) * (1.0 + (-(t0 + t1)).exp());
        let noise_v = model.xi * ((1.0 - (-2.0 * dt).exp()) / 2.0).sqrt();
        let rho_v = model.rho_v;
        let orth_v = (1.0 - 2.0 * rho_v * rho_v).max(0.0).sqrt();

        // split the state into per-block work units
        let mut unit_logv: Vec<&mut [f64]> = logv.chunks_mut(bs).collect();
        let mut unit_v2: Vec<&mut [f64]> = v2.chunks_mut(bs).collect();
        let mut per_pillar: Vec<std::slice::ChunksMut<'_, f64>> =
            fut.iter_mut().map(|col| col.chunks_mut(bs)).collect();
        let mut unit_f: Vec<Vec<&mut [f64]>> = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            unit_f.push(per_pillar.iter_mut().map(|c| c.next().unwrap()).collect());
        }

        let local_vol = &base.local_vol;
        let steps_ref = &steps;
        unit_logv
            .par_iter_mut()
            .zip(unit_v2.par_iter_mut())
            .zip(unit_f.par_iter_mut())
            .zip(rngs.par_iter_mut())
            .for_each(|(((blk_logv, blk_v2), blk_f), rng)| {
                for i in 0..blk_logv.len() {
                    let u1: f64 = StandardNormal.sample(rng);
                    let u2: f64 = StandardNormal.sample(rng);
                    let u3: f64 = StandardNormal.sample(rng);
                    let z1 = u1;
                    let z2 = u2;
                    let zv = rho_v * (u1 + u2) + orth_v * u3;

                    let v = blk_v2[i].sqrt();
                    for (j, ps) in steps_ref.iter().enumerate() {
                        if !ps.alive {
                            continue;
                        }
                        let f = blk_f[j][i];
                        let k_eff = 1.0 - ps.growth * (1.0 - f / ps.f0);
                        let vol_abs = (f - ps.level).max(0.0) * local_vol.eta(tm, k_eff.max(0.0));
                        let lev = ps.table.as_ref().map(|t| t.eval(f)).unwrap_or(1.0);
                        blk_f[j][i] = f + v * vol_abs / lev.sqrt() * (ps.w1 * z1 + ps.w2 * z2);
                    }
                    let lv = decay_v * blk_logv[i] + drift_v + noise_v * zv;
                    blk_logv[i] = lv;
                    blk_v2[i] = (2.0 * lv).exp();
                }
            });

        let (v2_mean, v2_se) = mean_se(v2.iter().copied());
        v2_series.push(V2Row { t: t1, mean: v2_mean, se: v2_se });
        if sorted_monitors.iter().any(|&m| (m - t1).abs() < 1e-12) {
            snapshots.push(fut.clone());
        }
    }

    Ok(PathEnsemble {
        pillars: pillars.to_vec(),
        monitors: sorted_monitors,
        futures: snapshots,
        v2_series,
        n_paths,
        initial: f0,
    })
}

/// Simulate and price one future-style vanilla, returning (price, SE).
pub fn mc_price_vanilla(
    model: &SlvModel,
    t: f64,
    maturity: f64,
    strike: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let ens = simulate_paths(model, &[maturity], &[t], n_paths, seed)?;
    ens.vanilla_price(t, maturity, strike)
}

/// Simulate and price one calendar-spread option, returning (price, SE).
pub fn mc_price_cso(
    model: &SlvModel,
    t_exercise: f64,
    t1: f64,
    t2: f64,
    strike: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let ens = simulate_paths(model, &[t1, t2], &[t_exercise], n_paths, seed)?;
    ens.cso_price(t_exercise, t1, t2, strike)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::LocalVolSurface;
    use crate::market::FuturesCurve;
    use crate::pde::GridSpec;
    use crate::spot::MeanReversion;

    fn base_model(a: f64, eta: f64) -> CalibratedSpotModel {
        let curve = FuturesCurve::new(vec![(0.0, 100.0), (3.0, 100.0)]).unwrap();
        let lv = LocalVolSurface::from_nodes(vec![(1.0, vec![(1.0, eta)])], 1e-4, 5.0).unwrap();
        CalibratedSpotModel::new(curve, MeanReversion::constant(a), lv, GridSpec::default(), None)
    }

    fn quick_sim() -> SimConfig {
        SimConfig { dt_max: 1.0 / 120.0, ..SimConfig::default() }
    }

    #[test]
    fn validates_parameter_bounds() {
        let b = base_model(0.0, 0.2);
        assert!(SlvModel::new(b.clone(), vec![(1.0, 1.3)], 0.5, 0.0, quick_sim()).is_err());
        assert!(SlvModel::new(b.clone(), vec![(1.0, 0.9)], -0.1, 0.0, quick_sim()).is_err());
        assert!(SlvModel::new(b.clone(), vec![(1.0, 0.9)], 0.5, 0.9, quick_sim()).is_err());
        assert!(SlvModel::new(b, vec![(1.0, 0.9)], 0.5, 0.3, quick_sim()).is_ok());
    }

    #[test]
    fn rho_interpolates_and_clips() {
        let m = SlvModel::new(base_model(0.0, 0.2), vec![(0.5, 1.0), (1.5, 0.6)], 0.0, 0.0, quick_sim()).unwrap();
        assert_eq!(m.rho(0.1), 1.0);
        assert_eq!(m.rho(2.0), 0.6);
        assert!((m.rho(1.0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn instantaneous_correlation_cases() {
        let m = SlvModel::new(base_model(0.0, 0.2), vec![(0.5, 0.8), (1.5, 0.6)], 0.0, 0.0, quick_sim()).unwrap();
        // identical loadings give unity
        assert!((instantaneous_correlation(&m, 0.5, 0.5) - 1.0).abs() < 1e-15);
        // 0.8/0.6 loadings: 0.48 + sqrt(0.36·0.64) = 0.96
        assert!((instantaneous_correlation(&m, 0.5, 1.5) - 0.96).abs() < 1e-12);
        let m2 = SlvModel::new(base_model(0.0, 0.2), vec![(0.5, 1.0), (1.5, 0.0)], 0.0, 0.0, quick_sim()).unwrap();
        assert!((instantaneous_correlation(&m2, 0.5, 1.5)).abs() < 1e-15);
    }

    #[test]
    fn xi_zero_keeps_v_identically_one() {
        let m = SlvModel::new(base_model(0.5, 0.2), vec![(1.0, 1.0)], 0.0, 0.0, quick_sim()).unwrap();
        let ens = simulate_paths(&m, &[1.0], &[0.5], 2000, 42).unwrap();
        for row in &ens.v2_series {
            assert_eq!(row.mean, 1.0, "t={}", row.t);
            assert_eq!(row.se, 0.0);
        }
    }

    #[test]
    fn xi_zero_is_bitwise_the_local_vol_engine() {
        let slv = SlvModel::new(base_model(0.5, 0.2), vec![(1.0, 0.8)], 0.0, 0.0, quick_sim()).unwrap();
        let lv = SlvModel::local_vol_degenerate(base_model(0.5, 0.2), vec![(1.0, 0.8)], quick_sim()).unwrap();
        let e1 = simulate_paths(&slv, &[1.0], &[0.25, 0.5], 4096, 7).unwrap();
        let e2 = simulate_paths(&lv, &[1.0], &[0.25, 0.5], 4096, 7).unwrap();
        for (a, b) in e1.futures.iter().flatten().zip(e2.futures.iter().flatten()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let m = SlvModel::new(base_model(0.0, 0.25), vec![(1.0, 0.9)], 0.4, 0.2, quick_sim()).unwrap();
        let e1 = simulate_paths(&m, &[1.0], &[0.5], 3000, 9).unwrap();
        let e2 = simulate_paths(&m, &[1.0], &[0.5], 3000, 9).unwrap();
        assert_eq!(e1.futures, e2.futures);
    }

    #[test]
    fn comonotone_pillars_have_unit_terminal_correlation() {
        // rho = 1 on both pillars collapses the drivers to one factor
        let m = SlvModel::new(base_model(0.5, 0.2), vec![(1.0, 1.0)], 0.0, 0.0, quick_sim()).unwrap();
        let ens = simulate_paths(&m, &[1.0, 1.5], &[0.75], 20_000, 3).unwrap();
        let c = ens.terminal_correlation(0.75, 1.0, 1.5).unwrap();
        assert!(c >= 0.999, "corr={c}");
    }

    #[test]
    fn martingale_within_three_se() {
        let m = SlvModel::new(base_model(0.5, 0.25), vec![(1.0, 0.9)], 0.5, 0.3, quick_sim()).unwrap();
        let ens = simulate_paths(&m, &[1.0], &[0.5, 1.0], 50_000, 17).unwrap();
        for &t in &[0.5, 1.0] {
            let (err, se) = ens.martingale_error(t, 1.0).unwrap();
            assert!(err.abs() <= 3.0 * se, "t={t}: err={err} se={se}");
        }
    }

    #[test]
    fn rejects_insufficient_paths() {
        let m = SlvModel::new(base_model(0.0, 0.2), vec![(1.0, 1.0)], 0.5, 0.0, quick_sim()).unwrap();
        assert!(simulate_paths(&m, &[1.0], &[0.5], 100, 1).is_err());
    }
}
