//! Non-parametric local-vol calibration to futures option quotes.
//!
//! Quotes are first remapped into normalized-spot space (effective strikes
//! and equivalent Black vols), the local-vol nodes are seeded with the market
//! vols, and a fixed-point iteration then corrects level and skew per pillar
//! using the short-maturity asymptotics: the level moves by the ATM vol
//! ratio, the wings by twice the skew mismatch. One PDE sweep is consumed
//! per iteration; Anderson acceleration mixes the history of iterates.

pub mod anderson;
pub mod surface;

pub use anderson::{aa_solve, AaStep, AndersonAccelerator};
pub use surface::LocalVolSurface;

use serde::{Deserialize, Serialize};

use crate::black::{black_call, implied_vol};
use crate::error::{Error, Result};
use crate::market::{MarginStyle, MarketData};
use crate::pde::{solve_dupire, GridSpec, PdeGrid};
use crate::spot::{effective_strike, CalibratedSpotModel, MeanReversion};

/// Which node update the fixed-point map applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// ATM vol ratio for the level plus the skew-difference correction —
    /// the full first-order update.
    LevelSkew,
    /// Per-node multiplicative vol-ratio update (the level-only baseline).
    LevelOnly,
}

/// Calibration knobs. Defaults match the production setup: AA memory 8,
/// level+skew updates, 0.01 bp internal stop, 50 iteration budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub update: UpdateRule,
    /// Anderson window depth m; 0 runs the plain fixed point.
    pub aa_memory: usize,
    /// Relative ridge weight of the acceleration least squares.
    pub ridge_rel: f64,
    /// Internal stop threshold on the max vol error (bp).
    pub stop_tol_bp: f64,
    /// Reported convergence threshold (bp).
    pub report_tol_bp: f64,
    pub max_iterations: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub grid: GridSpec,
    /// Optional flattened node warm start (pillar-major order).
    #[serde(skip)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            update: UpdateRule::LevelSkew,
            aa_memory: 8,
            ridge_rel: 1e-10,
            stop_tol_bp: 0.01,
            report_tol_bp: 0.1,
            max_iterations: 50,
            eta_min: 1e-4,
            eta_max: 5.0,
            grid: GridSpec::default(),
            warm_start: None,
        }
    }
}

/// Where a normalized node came from, for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuoteSource {
    pub contract: String,
    pub strike: f64,
    pub style: MarginStyle,
}

/// One maturity pillar of normalized quotes.
#[derive(Debug, Clone)]
pub struct QuotePillar {
    pub t: f64,
    /// Effective strikes, ascending.
    pub strikes: Vec<f64>,
    /// Normalized market vols per strike.
    pub sigmas: Vec<f64>,
    /// Index of the node closest to k = 1 (ties toward the lower strike).
    pub atm_index: usize,
    pub sources: Vec<QuoteSource>,
}

impl QuotePillar {
    pub fn is_atm_wing(&self) -> bool {
        self.strikes.len() > 1 && (self.atm_index == 0 || self.atm_index == self.strikes.len() - 1)
    }
}

/// The full normalized quote grid {σ_mkt(t_i, k_ij)}.
#[derive(Debug, Clone)]
pub struct NormalizedQuotes {
    pub pillars: Vec<QuotePillar>,
}

impl NormalizedQuotes {
    pub fn n_quotes(&self) -> usize {
        self.pillars.iter().map(|p| p.strikes.len()).sum()
    }

    pub fn times(&self) -> Vec<f64> {
        self.pillars.iter().map(|p| p.t).collect()
    }

    pub fn all_strikes(&self) -> Vec<f64> {
        self.pillars.iter().flat_map(|p| p.strikes.iter().copied()).collect()
    }

    pub fn max_sigma(&self) -> f64 {
        self.pillars
            .iter()
            .flat_map(|p| p.sigmas.iter())
            .fold(0.0_f64, |m, &s| m.max(s))
    }

    /// Market vols flattened pillar-major — the iteration's initial point.
    pub fn market_nodes(&self) -> Vec<f64> {
        self.pillars.iter().flat_map(|p| p.sigmas.iter().copied()).collect()
    }

    /// Pillar times whose ATM node sits on a wing (deep-ITM/OTM-only sets);
    /// flagged in the report because the skew update is one-sided there.
    pub fn wing_atm_pillars(&self) -> Vec<f64> {
        self.pillars.iter().filter(|p| p.is_atm_wing()).map(|p| p.t).collect()
    }

    fn surface_from_flat(&self, flat: &[f64], eta_min: f64, eta_max: f64) -> Result<LocalVolSurface> {
        let mut pillars = Vec::with_capacity(self.pillars.len());
        let mut off = 0;
        for p in &self.pillars {
            let n = p.strikes.len();
            let nodes = p
                .strikes
                .iter()
                .zip(&flat[off..off + n])
                .map(|(&k, &e)| (k, e))
                .collect();
            pillars.push((p.t, nodes));
            off += n;
        }
        LocalVolSurface::from_nodes(pillars, eta_min, eta_max)
    }
}

/// Remap market quotes into normalized-spot space.
///
/// For each quote the futures premium is expressed per unit of
/// `F₀(T) e^{−A(t,T)}` and inverted back into a Black vol at the effective
/// strike, so that the PDE solution can be compared to the quote directly.
/// Equity-style quotes carry their discount factor in the premium convention
/// and normalize identically.
pub fn normalize_quotes(market: &MarketData, a: &MeanReversion) -> Result<NormalizedQuotes> {
    struct Row {
        t: f64,
        k: f64,
        sigma: f64,
        source: QuoteSource,
    }

    let mut rows: Vec<Row> = Vec::with_capacity(market.quotes.quotes.len());
    for q in &market.quotes.quotes {
        let ctx = format!("quote {} t={} K={}", q.contract, q.expiry, q.strike);
        let t_last = market.t_last(&q.contract)?;
        let f0 = market.curve.price(t_last).map_err(|e| Error::invalid(&ctx, e.to_string()))?;
        let growth = a
            .integral(q.expiry, t_last)
            .map_err(|e| Error::invalid(&ctx, e.to_string()))?
            .exp();
        let k_eff = effective_strike(a, q.expiry, t_last, q.strike, f0)?;
        if k_eff <= 0.0 {
            return Err(Error::domain(
                &ctx,
                format!("effective strike {k_eff:.6} at or below the absorbing level"),
            ));
        }
        let premium = black_call(q.expiry, q.strike / f0, q.vol) * growth;
        let sigma = implied_vol(premium, q.expiry, k_eff).map_err(|e| Error::domain(&ctx, e.to_string()))?;
        rows.push(Row {
            t: q.expiry,
            k: k_eff,
            sigma,
            source: QuoteSource { contract: q.contract.clone(), strike: q.strike, style: q.style },
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("normalize_quotes", "no quotes to calibrate"));
    }

    rows.sort_by(|x, y| x.t.partial_cmp(&y.t).unwrap().then(x.k.partial_cmp(&y.k).unwrap()));
    let mut pillars: Vec<QuotePillar> = Vec::new();
    for row in rows {
        let new_pillar = pillars.last().map(|p| (row.t - p.t).abs() > 1e-12).unwrap_or(true);
        if new_pillar {
            pillars.push(QuotePillar {
                t: row.t,
                strikes: vec![row.k],
                sigmas: vec![row.sigma],
                atm_index: 0,
                sources: vec![row.source],
            });
        } else {
            let p = pillars.last_mut().unwrap();
            if let Some(prev) = p.strikes.last() {
                if (row.k - prev).abs() < 1e-10 {
                    return Err(Error::invalid(
                        "normalize_quotes",
                        format!(
                            "quotes map to the same pillar node (t={}, k={:.8}): {} and {}",
                            row.t,
                            row.k,
                            p.sources.last().unwrap().contract,
                            row.source.contract
                        ),
                    ));
                }
            }
            p.strikes.push(row.k);
            p.sigmas.push(row.sigma);
            p.sources.push(row.source);
        }
    }
    for p in &mut pillars {
        p.atm_index = nearest_to_one(&p.strikes);
    }
    Ok(NormalizedQuotes { pillars })
}

fn nearest_to_one(ks: &[f64]) -> usize {
    let mut best = 0;
    for (j, &k) in ks.iter().enumerate() {
        if (k - 1.0).abs() < (ks[best] - 1.0).abs() - 1e-15 {
            best = j;
        }
    }
    best
}

/// ∂σ/∂k at the nodes: three-point central differences on the non-uniform
/// strike set, one-sided at the wings.
fn strike_slopes(ks: &[f64], vals: &[f64]) -> Vec<f64> {
    let n = ks.len();
    if n == 1 {
        return vec![0.0];
    }
    let mut out = vec![0.0; n];
    out[0] = (vals[1] - vals[0]) / (ks[1] - ks[0]);
    out[n - 1] = (vals[n - 1] - vals[n - 2]) / (ks[n - 1] - ks[n - 2]);
    for j in 1..n - 1 {
        let h0 = ks[j] - ks[j - 1];
        let h1 = ks[j + 1] - ks[j];
        out[j] = -h1 / (h0 * (h0 + h1)) * vals[j - 1]
            + (h1 - h0) / (h0 * h1) * vals[j]
            + h0 / (h1 * (h0 + h1)) * vals[j + 1];
    }
    out
}

/// Result of a single fixed-point step (one PDE solve).
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Clipped image f(x) of the node vector.
    pub image: Vec<f64>,
    /// Model vols per pillar at the quote nodes.
    pub model_sigmas: Vec<Vec<f64>>,
    pub max_bp: f64,
    pub rms_bp: f64,
    pub clipped: usize,
    /// Every node hit a bound; the update was damped by ½.
    pub stalled: bool,
    pub max_spline_slope: f64,
}

/// A prepared calibration: normalized quotes, the PDE grid with every quote
/// node snapped on it, and the update configuration. `step` is the
/// fixed-point map; `calibrate` drives it.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    quotes: NormalizedQuotes,
    a: MeanReversion,
    grid: PdeGrid,
    /// (time index, strike index) of every quote node on the PDE grid.
    node_idx: Vec<Vec<(usize, usize)>>,
    market_slopes: Vec<Vec<f64>>,
    cfg: CalibrationConfig,
}

impl CalibrationProblem {
    pub fn new(market: &MarketData, a: &MeanReversion, cfg: &CalibrationConfig) -> Result<Self> {
        let quotes = normalize_quotes(market, a)?;
        let horizon = quotes.times().last().copied().unwrap();
        let sigma_max = (quotes.max_sigma() * 1.5).max(0.1);
        let grid = PdeGrid::build(&cfg.grid, horizon, &quotes.times(), &quotes.all_strikes(), sigma_max)?;

        let mut node_idx = Vec::with_capacity(quotes.pillars.len());
        for p in &quotes.pillars {
            let ti = grid.time_index(p.t)?;
            let row: Result<Vec<(usize, usize)>> =
                p.strikes.iter().map(|&k| Ok((ti, grid.strike_index(k)?))).collect();
            node_idx.push(row?);
        }
        let market_slopes = quotes
            .pillars
            .iter()
            .map(|p| strike_slopes(&p.strikes, &p.sigmas))
            .collect();
        Ok(Self { quotes, a: a.clone(), grid, node_idx, market_slopes, cfg: cfg.clone() })
    }

    pub fn quotes(&self) -> &NormalizedQuotes {
        &self.quotes
    }

    pub fn config(&self) -> &CalibrationConfig {
        &self.cfg
    }

    /// The iteration's starting point: market vols as local-vol nodes.
    pub fn initial_nodes(&self) -> Vec<f64> {
        self.quotes
            .market_nodes()
            .iter()
            .map(|v| v.clamp(self.cfg.eta_min, self.cfg.eta_max))
            .collect()
    }

    /// Surface object for a node vector (pillar-major order).
    pub fn surface(&self, nodes: &[f64]) -> Result<LocalVolSurface> {
        self.quotes.surface_from_flat(nodes, self.cfg.eta_min, self.cfg.eta_max)
    }

    /// One iteration of the map: solve the PDE on the candidate surface,
    /// read model vols at the quote nodes, apply the node update, clip.
    /// Exactly one PDE solve per call.
    pub fn step(&self, nodes: &[f64]) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        let surface = self.quotes.surface_from_flat(nodes, cfg.eta_min, cfg.eta_max)?;
        let solved = solve_dupire(&surface, &self.a, &self.grid)?;

        let mut model_sigmas = Vec::with_capacity(self.quotes.pillars.len());
        let mut max_bp = 0.0_f64;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for (p, idx) in self.quotes.pillars.iter().zip(&self.node_idx) {
            let mut sig = Vec::with_capacity(idx.len());
            for (&(ti, ki), &target) in idx.iter().zip(&p.sigmas) {
                let model = solved.implied_vol_node(ti, ki)?;
                let err_bp = (model - target).abs() * 1e4;
                max_bp = max_bp.max(err_bp);
                sum_sq += err_bp * err_bp;
                count += 1;
                sig.push(model);
            }
            model_sigmas.push(sig);
        }
        let rms_bp = (sum_sq / count as f64).sqrt();

        let mut image = Vec::with_capacity(nodes.len());
        let mut clipped = 0usize;
        let mut off = 0;
        for (pi, (p, model)) in self.quotes.pillars.iter().zip(&model_sigmas).enumerate() {
            let n = p.strikes.len();
            let current = &nodes[off..off + n];
            match cfg.update {
                UpdateRule::LevelSkew => {
                    let j_atm = p.atm_index;
                    let ratio = p.sigmas[j_atm] / model[j_atm];
                    let model_slopes = strike_slopes(&p.strikes, model);
                    let mkt_slopes = &self.market_slopes[pi];
                    for j in 0..n {
                        let mut v = current[j] * ratio;
                        if j != j_atm {
                            v += 2.0 * (mkt_slopes[j] - model_slopes[j]) * (p.strikes[j] - p.strikes[j_atm]);
                        }
                        let c = v.clamp(cfg.eta_min, cfg.eta_max);
                        if c != v {
                            clipped += 1;
                        }
                        image.push(c);
                    }
                }
                UpdateRule::LevelOnly => {
                    for j in 0..n {
                        let v = current[j] * p.sigmas[j] / model[j];
                        let c = v.clamp(cfg.eta_min, cfg.eta_max);
                        if c != v {
                            clipped += 1;
                        }
                        image.push(c);
                    }
                }
            }
            off += n;
        }

        let stalled = clipped == nodes.len();
        if stalled {
            // fully clipped step: damp the move by ½ and re-clip
            for (img, &cur) in image.iter_mut().zip(nodes) {
                *img = (cur + 0.5 * (*img - cur)).clamp(cfg.eta_min, cfg.eta_max);
            }
        }

        Ok(StepOutcome {
            image,
            model_sigmas,
            max_bp,
            rms_bp,
            clipped,
            stalled,
            max_spline_slope: surface.max_abs_slope(),
        })
    }
}

/// Per-iteration calibration record (one PDE solve each).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub max_bp: f64,
    pub rms_bp: f64,
    pub clipped: usize,
    pub stalled: bool,
    /// History depth used by the Anderson mixing that produced the next
    /// iterate (0 on the final record).
    pub aa_memory_used: usize,
    pub aa_fallback: bool,
}

/// Convergence diagnostics of one calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Number of PDE solves consumed.
    pub iterations: usize,
    pub final_max_bp: f64,
    pub final_rms_bp: f64,
    /// Pillar times whose ATM node is a wing node.
    pub wing_atm_pillars: Vec<f64>,
    pub max_spline_slope: f64,
    pub n_quotes: usize,
}

impl CalibrationReport {
    /// First iteration whose max error is at or below `tol_bp`.
    pub fn iterations_to(&self, tol_bp: f64) -> Option<usize> {
        self.records.iter().find(|r| r.max_bp <= tol_bp).map(|r| r.iteration)
    }

    /// Write the `iteration,max_bp,rms_bp` series.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("iteration,max_bp,rms_bp\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.iteration, r.max_bp, r.rms_bp));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Calibrate the local-vol surface to the market quote set for a given
/// mean-reversion speed.
///
/// Returns the best iterate as a pricing-ready model together with the
/// convergence report; a run that exhausts its iteration budget still
/// returns the best iterate, flagged `converged = false`.
pub fn calibrate(
    market: &MarketData,
    a: &MeanReversion,
    cfg: &CalibrationConfig,
) -> Result<(CalibratedSpotModel, CalibrationReport)> {
    let ws = CalibrationProblem::new(market, a, cfg)?;
    let quotes = &ws.quotes;

    let mut x = match &cfg.warm_start {
        Some(w) => {
            if w.len() != quotes.n_quotes() {
                return Err(Error::invalid(
                    "calibrate",
                    format!("warm start has {} nodes, quotes define {}", w.len(), quotes.n_quotes()),
                ));
            }
            w.iter().map(|v| v.clamp(cfg.eta_min, cfg.eta_max)).collect()
        }
        None => ws.initial_nodes(),
    };

    let mut aa = AndersonAccelerator::new(cfg.aa_memory, cfg.ridge_rel);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut best_nodes = x.clone();
    let mut best = f64::INFINITY;
    let mut best_slope = 0.0;
    let mut final_rms = f64::NAN;

    for iteration in 1..=cfg.max_iterations {
        let out = ws.step(&x)?;
        if out.max_bp < best {
            best = out.max_bp;
            best_nodes = x.clone();
            best_slope = out.max_spline_slope;
            final_rms = out.rms_bp;
        }
        let mut record = IterationRecord {
            iteration,
            max_bp: out.max_bp,
            rms_bp: out.rms_bp,
            clipped: out.clipped,
            stalled: out.stalled,
            aa_memory_used: 0,
            aa_fallback: false,
        };
        if out.max_bp <= cfg.stop_tol_bp {
            records.push(record);
            break;
        }
        let (next, info) = aa.next_iterate(&x, &out.image);
        record.aa_memory_used = info.memory_used;
        record.aa_fallback = info.fell_back;
        records.push(record);
        x = next.into_iter().map(|v| v.clamp(cfg.eta_min, cfg.eta_max)).collect();
        if iteration == cfg.max_iterations {
            break;
        }
    }

    let surface = ws.surface(&best_nodes)?;
    let model = CalibratedSpotModel::new(
        market.curve.clone(),
        a.clone(),
        surface,
        cfg.grid.clone(),
        Some(market.valuation_date),
    );
    let report = CalibrationReport {
        iterations: records.len(),
        converged: best <= cfg.report_tol_bp,
        final_max_bp: best,
        final_rms_bp: final_rms,
        wing_atm_pillars: quotes.wing_atm_pillars(),
        max_spline_slope: best_slope,
        n_quotes: quotes.n_quotes(),
        records,
    };
    Ok((model, report))
}
