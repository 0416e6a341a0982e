//! Batch command-line front end.
//!
//! Subcommands: `calibrate`, `price`, `fit-a`, `simulate`, `implied-vol`.
//! Every run writes a `manifest.json` holding the resolved configuration and
//! SHA-256 hashes of the inputs, so reruns are exactly reproducible; outputs
//! are plain CSV with full-precision (shortest round-trip) decimals.
//!
//! Exit codes: 0 success, 1 I/O, 2 calibration non-convergence (best-effort
//! artifacts are still written), 3 invalid input, 4 model schema mismatch,
//! 5 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calib::{calibrate, CalibrationConfig, UpdateRule};
use crate::error::{Error, Result};
use crate::exotics::{fit_mean_reversion, price_cso_closed_form, price_mco, CsoQuote, FitConfig};
use crate::market::{load_market, LoadOptions, MarginStyle, MarketData};
use crate::math::Pchip;
use crate::pricing::PricingEngine;
use crate::slv::{simulate_paths, SimConfig, SlvModel};
use crate::spot::{CalibratedSpotModel, MeanReversion};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "comvol", version, about = "Commodity-futures smile modelling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate the local-vol surface to a market directory.
    Calibrate(CalibrateArgs),
    /// Price a trades file from a calibrated model.
    Price(PriceArgs),
    /// Fit the mean-reversion speed to CSO volatility drops.
    FitA(FitArgs),
    /// Simulate the SLV dynamics and report diagnostics.
    Simulate(SimulateArgs),
    /// Invert a normalized Black call price for its implied volatility.
    ImpliedVol(ImpliedVolArgs),
}

#[derive(Debug, Args)]
struct MarketArg {
    /// Market directory containing futures.csv, discount.csv, quotes.csv
    /// and calendars.csv.
    #[arg(long)]
    market: PathBuf,
    /// Accept discount curves with increasing factors.
    #[arg(long, default_value_t = false)]
    allow_increasing_discount: bool,
}

impl MarketArg {
    fn load(&self) -> Result<MarketData> {
        load_market(
            &self.market,
            &LoadOptions { enforce_discount_monotone: !self.allow_increasing_discount },
        )
    }
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    market: MarketArg,
    /// Constant mean-reversion speed.
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    /// Piecewise-constant speed as `t0=v0,t1=v1,...` (overrides --a).
    #[arg(long)]
    a_steps: Option<String>,
    /// Output model JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Convergence report CSV (iteration, max_bp, rms_bp).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Optional TOML file with a [calibration] table; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    aa_memory: Option<usize>,
    /// Node update rule: level-skew | level-only.
    #[arg(long)]
    update: Option<String>,
    #[arg(long)]
    stop_tol_bp: Option<f64>,
    #[arg(long)]
    eta_min: Option<f64>,
    #[arg(long)]
    eta_max: Option<f64>,
    #[arg(long)]
    grid_nodes: Option<usize>,
    #[arg(long)]
    dt_max: Option<f64>,
    /// Dump the solved call surface and quote-maturity density slices.
    #[arg(long, default_value_t = false)]
    dump_surface: bool,
}

#[derive(Debug, Args)]
struct PriceArgs {
    #[command(flatten)]
    market: MarketArg,
    /// Calibrated model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Trades CSV: trade_type,expiry,contract,strike,style.
    #[arg(long)]
    trades: PathBuf,
    /// Output CSV with prices and implied vols.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    market: MarketArg,
    /// CSO quotes CSV: expiry,near,far,strike,price.
    #[arg(long)]
    cso: PathBuf,
    /// Output drop-curve CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    grid_max: f64,
    #[arg(long, default_value_t = 0.05)]
    grid_step: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    market: MarketArg,
    #[arg(long)]
    model: PathBuf,
    /// Contracts to simulate (comma separated ids); default: all quoted.
    #[arg(long)]
    contracts: Option<String>,
    /// Vol-of-vol ξ.
    #[arg(long, default_value_t = 0.0)]
    xi: f64,
    /// Spot-vol correlation ρᵛ ∈ [−1/√2, 1/√2].
    #[arg(long, default_value_t = 0.0)]
    rho_v: f64,
    /// Correlation loadings `T=rho,...` (default flat 1).
    #[arg(long)]
    rho: Option<String>,
    #[arg(long, default_value_t = 50_000)]
    paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for diagnostics.csv, gyongy.csv, terminal.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ImpliedVolArgs {
    /// Option premium (normalized by the forward unless --forward is given).
    #[arg(long)]
    price: f64,
    /// Time to expiry in years.
    #[arg(long)]
    t: f64,
    /// Normalized strike K/F (exclusive with --strike/--forward).
    #[arg(long)]
    k: Option<f64>,
    /// Absolute strike, used with --forward.
    #[arg(long)]
    strike: Option<f64>,
    /// Forward level for absolute quoting.
    #[arg(long)]
    forward: Option<f64>,
}

/// Run the CLI on the process arguments, returning the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        Error::SchemaMismatch { .. } => EXIT_SCHEMA,
        Error::Numerical { .. } => EXIT_NUMERICAL,
        Error::Parse { .. } | Error::InvalidInput { .. } | Error::Domain { .. } | Error::Json(_) => EXIT_INVALID,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Price(args) => cmd_price(args),
        Command::FitA(args) => cmd_fit_a(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::ImpliedVol(args) => cmd_implied_vol(args),
    }
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    inputs: BTreeMap<String, String>,
    config: serde_json::Value,
    outputs: Vec<String>,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_market_dir(dir: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    for name in ["futures.csv", "discount.csv", "quotes.csv", "calendars.csv"] {
        let p = dir.join(name);
        inputs.insert(p.display().to_string(), sha256_hex(&p)?);
    }
    Ok(())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    inputs: BTreeMap<String, String>,
    config: serde_json::Value,
    outputs: &[&Path],
) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        inputs,
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn out_dir_of(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    calibration: PartialCalibration,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialCalibration {
    update: Option<String>,
    aa_memory: Option<usize>,
    ridge_rel: Option<f64>,
    stop_tol_bp: Option<f64>,
    report_tol_bp: Option<f64>,
    max_iterations: Option<usize>,
    eta_min: Option<f64>,
    eta_max: Option<f64>,
    grid_nodes: Option<usize>,
    dt_max: Option<f64>,
}

fn parse_update(s: &str) -> Result<UpdateRule> {
    match s {
        "level-skew" | "level_skew" | "levelskew" => Ok(UpdateRule::LevelSkew),
        "level-only" | "level_only" | "level" => Ok(UpdateRule::LevelOnly),
        other => Err(Error::invalid("cli", format!("unknown update rule '{other}'"))),
    }
}

fn parse_a_steps(s: &str) -> Result<MeanReversion> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for part in s.split(',') {
        let (t, v) = part
            .split_once('=')
            .ok_or_else(|| Error::parse("cli", format!("--a-steps entry '{part}' is not t=v")))?;
        times.push(t.trim().parse::<f64>().map_err(|e| Error::parse("cli", e.to_string()))?);
        values.push(v.trim().parse::<f64>().map_err(|e| Error::parse("cli", e.to_string()))?);
    }
    MeanReversion::piecewise(times, values)
}

fn resolve_calibration_config(args: &CalibrateArgs) -> Result<CalibrationConfig> {
    let mut cfg = CalibrationConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        let file: ConfigFile =
            toml::from_str(&text).map_err(|e| Error::parse("config", e.to_string()))?;
        let p = file.calibration;
        if let Some(u) = p.update {
            cfg.update = parse_update(&u)?;
        }
        if let Some(v) = p.aa_memory {
            cfg.aa_memory = v;
        }
        if let Some(v) = p.ridge_rel {
            cfg.ridge_rel = v;
        }
        if let Some(v) = p.stop_tol_bp {
            cfg.stop_tol_bp = v;
        }
        if let Some(v) = p.report_tol_bp {
            cfg.report_tol_bp = v;
        }
        if let Some(v) = p.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = p.eta_min {
            cfg.eta_min = v;
        }
        if let Some(v) = p.eta_max {
            cfg.eta_max = v;
        }
        if let Some(v) = p.grid_nodes {
            cfg.grid.n_strike = v;
        }
        if let Some(v) = p.dt_max {
            cfg.grid.dt_max = v;
        }
    }
    // flags beat the config file
    if let Some(u) = &args.update {
        cfg.update = parse_update(u)?;
    }
    if let Some(v) = args.aa_memory {
        cfg.aa_memory = v;
    }
    if let Some(v) = args.max_iter {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.stop_tol_bp {
        cfg.stop_tol_bp = v;
    }
    if let Some(v) = args.eta_min {
        cfg.eta_min = v;
    }
    if let Some(v) = args.eta_max {
        cfg.eta_max = v;
    }
    if let Some(v) = args.grid_nodes {
        cfg.grid.n_strike = v;
    }
    if let Some(v) = args.dt_max {
        cfg.grid.dt_max = v;
    }
    Ok(cfg)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<i32> {
    let market = args.market.load()?;
    let a = match &args.a_steps {
        Some(s) => parse_a_steps(s)?,
        None => MeanReversion::constant(args.a),
    };
    let cfg = resolve_calibration_config(&args)?;

    let (model, report) = calibrate(&market, &a, &cfg)?;
    model.save(&args.out)?;
    let report_path = args.report.clone().unwrap_or_else(|| out_dir_of(&args.out).join("report.csv"));
    report.write_csv(&report_path)?;

    let mut outputs: Vec<&Path> = vec![&args.out, &report_path];
    let surface_path = out_dir_of(&args.out).join("surface.csv");
    let density_path = out_dir_of(&args.out).join("density.csv");
    if args.dump_surface {
        dump_surface(&model, &market, &surface_path, &density_path)?;
        outputs.push(&surface_path);
        outputs.push(&density_path);
    }

    let mut inputs = BTreeMap::new();
    hash_market_dir(&args.market.market, &mut inputs)?;
    let config = serde_json::json!({
        "a": serde_json::to_value(&a)?,
        "calibration": serde_json::to_value(&cfg)?,
        "converged": report.converged,
        "iterations": report.iterations,
        "final_max_bp": report.final_max_bp,
    });
    write_manifest(&out_dir_of(&args.out), "calibrate", inputs, config, &outputs)?;

    println!(
        "calibrated {} quotes in {} iterations: max error {:.4} bp ({})",
        report.n_quotes,
        report.iterations,
        report.final_max_bp,
        if report.converged { "converged" } else { "NOT converged" }
    );
    Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn dump_surface(
    model: &CalibratedSpotModel,
    market: &MarketData,
    surface_path: &Path,
    density_path: &Path,
) -> Result<()> {
    let expiries: Vec<f64> = market.quotes.quotes.iter().map(|q| q.expiry).collect();
    let horizon = expiries.iter().copied().fold(0.0_f64, f64::max);
    let engine = PricingEngine::build(model.clone(), horizon, &expiries, &[])?;
    let surf = engine.surface();
    let mut out = String::from("t,k,c\n");
    for (n, &t) in surf.times().iter().enumerate() {
        for (j, &k) in surf.strikes().iter().enumerate() {
            out.push_str(&format!("{t},{k},{}\n", surf.value_node(n, j)));
        }
    }
    std::fs::write(surface_path, out)?;

    let mut dens = String::from("t,k,p\n");
    let mut uniq = expiries.clone();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    for &t in &uniq {
        let d = surf.density_slice(t)?;
        for (k, p) in d.strikes.iter().zip(&d.density) {
            dens.push_str(&format!("{t},{k},{p}\n"));
        }
    }
    std::fs::write(density_path, dens)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// price

fn cmd_price(args: PriceArgs) -> Result<i32> {
    let market = args.market.load()?;
    let model = CalibratedSpotModel::load(&args.model)?;
    let text = std::fs::read_to_string(&args.trades)?;

    struct Trade {
        kind: String,
        expiry: f64,
        contract: String,
        strike: f64,
        style: MarginStyle,
    }
    let mut trades = Vec::new();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let ctx = format!("trades row {row}");
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let get = |idx: usize, name: &str| -> Result<String> {
            rec.get(idx)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .ok_or_else(|| Error::parse(&ctx, format!("missing field '{name}'")))
        };
        trades.push(Trade {
            kind: get(0, "trade_type")?.to_ascii_lowercase(),
            expiry: get(1, "expiry")?.parse().map_err(|e| Error::parse(&ctx, format!("expiry: {e}")))?,
            contract: get(2, "contract")?,
            strike: get(3, "strike")?.parse().map_err(|e| Error::parse(&ctx, format!("strike: {e}")))?,
            style: get(4, "style")?.parse()?,
        });
    }

    // one engine covering every trade expiry
    let mut times: Vec<f64> = trades.iter().map(|t| t.expiry).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let horizon = times.last().copied().unwrap_or(1.0);
    let engine = PricingEngine::build(model, horizon, &times, &[])?;

    let mut out = String::from("trade_type,expiry,contract,strike,style,price,implied_vol\n");
    for tr in &trades {
        let style = match tr.style {
            MarginStyle::FutureStyle => "future",
            MarginStyle::EquityStyle => "equity",
        };
        match tr.kind.as_str() {
            "vanilla" | "mco" => {
                let t_last = market.t_last(&tr.contract)?;
                let t_pay = market.payment_yf(&tr.contract)?;
                let price = if tr.kind == "mco" {
                    price_mco(&engine, tr.expiry, t_last, tr.strike, tr.style, &market.discount, t_pay)?
                } else {
                    match tr.style {
                        MarginStyle::FutureStyle => {
                            engine.price_vanilla_future_style(tr.expiry, t_last, tr.strike)?
                        }
                        MarginStyle::EquityStyle => engine.price_vanilla_equity_style(
                            &market.discount,
                            tr.expiry,
                            t_last,
                            tr.strike,
                            t_pay,
                        )?,
                    }
                };
                let vol = engine.implied_futures_vol(tr.expiry, t_last, tr.strike).map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    tr.kind, tr.expiry, tr.contract, tr.strike, style, price, vol
                ));
            }
            "cso" => {
                let (near, far) = tr
                    .contract
                    .split_once(':')
                    .ok_or_else(|| Error::invalid("trades", "cso contract must be 'NEAR:FAR'"))?;
                let t1 = market.t_last(near)?;
                let t2 = market.t_last(far)?;
                let price = price_cso_closed_form(&engine, tr.expiry, t1, t2, tr.strike)?;
                out.push_str(&format!(
                    "{},{},{},{},{},{},\n",
                    tr.kind, tr.expiry, tr.contract, tr.strike, style, price
                ));
            }
            other => {
                return Err(Error::invalid("trades", format!("unsupported trade type '{other}'")));
            }
        }
    }
    std::fs::write(&args.out, out)?;

    let mut inputs = BTreeMap::new();
    hash_market_dir(&args.market.market, &mut inputs)?;
    inputs.insert(args.model.display().to_string(), sha256_hex(&args.model)?);
    inputs.insert(args.trades.display().to_string(), sha256_hex(&args.trades)?);
    write_manifest(
        &out_dir_of(&args.out),
        "price",
        inputs,
        serde_json::json!({"trades": trades.len()}),
        &[&args.out],
    )?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// fit-a

/// ATM Black-76 vol of a contract's quote pillar, interpolated in strike at
/// the forward of its T^last.
fn atm_vol(market: &MarketData, contract: &str) -> Result<(f64, f64)> {
    let t_last = market.t_last(contract)?;
    let f0 = market.curve.price(t_last)?;
    let mut rows: Vec<(f64, f64, f64)> = market
        .quotes
        .quotes
        .iter()
        .filter(|q| q.contract == contract)
        .map(|q| (q.expiry, q.strike, q.vol))
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("fit-a", format!("no vanilla quotes for contract '{contract}'")));
    }
    rows.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let expiry = rows[0].0;
    let strikes: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let vols: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let vol = if strikes.len() == 1 { vols[0] } else { Pchip::new(strikes, vols)?.value(f0) };
    Ok((expiry, vol))
}

fn cmd_fit_a(args: FitArgs) -> Result<i32> {
    let market = args.market.load()?;
    let text = std::fs::read_to_string(&args.cso)?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut quotes = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let ctx = format!("{} row {row}", args.cso.display());
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let get = |idx: usize, name: &str| -> Result<String> {
            rec.get(idx)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .ok_or_else(|| Error::parse(&ctx, format!("missing field '{name}'")))
        };
        let near = get(1, "near")?;
        let far = get(2, "far")?;
        let (_, sigma_near) = atm_vol(&market, &near)?;
        let (_, sigma_far) = atm_vol(&market, &far)?;
        quotes.push(CsoQuote {
            expiry: get(0, "expiry")?.parse().map_err(|e| Error::parse(&ctx, format!("expiry: {e}")))?,
            t1: market.t_last(&near)?,
            t2: market.t_last(&far)?,
            near,
            far,
            strike: get(3, "strike")?.parse().map_err(|e| Error::parse(&ctx, format!("strike: {e}")))?,
            price: get(4, "price")?.parse().map_err(|e| Error::parse(&ctx, format!("price: {e}")))?,
            sigma_near,
            sigma_far,
        });
    }

    let n_grid = (args.grid_max / args.grid_step).round() as usize;
    let cfg = FitConfig {
        a_grid: (0..=n_grid).map(|i| i as f64 * args.grid_step).collect(),
        ..Default::default()
    };
    let (fitted, report) = fit_mean_reversion(&quotes, &market, &cfg)?;

    let mut out = format!("# fitted_a={}\n", report.fitted_a);
    out.push_str("expiry,market_drop_bp");
    for c in &report.report_curves {
        out.push_str(&format!(",model_drop_a{:.2}_bp", c.a));
    }
    out.push_str(",model_drop_fitted_bp\n");
    for (qi, &t) in report.quote_expiries.iter().enumerate() {
        out.push_str(&format!("{t},{}", report.market_drops[qi] * 1e4));
        for c in &report.report_curves {
            out.push_str(&format!(",{}", c.drops[qi] * 1e4));
        }
        out.push_str(&format!(",{}\n", report.fitted_curve.drops[qi] * 1e4));
    }
    std::fs::write(&args.out, out)?;

    let mut inputs = BTreeMap::new();
    hash_market_dir(&args.market.market, &mut inputs)?;
    inputs.insert(args.cso.display().to_string(), sha256_hex(&args.cso)?);
    let (bp0, bp1) = fitted.breakpoints();
    write_manifest(
        &out_dir_of(&args.out),
        "fit-a",
        inputs,
        serde_json::json!({
            "fitted_a": report.fitted_a,
            "fitted_sse": report.fitted_sse,
            "breakpoints": bp0,
            "values": bp1,
            "skipped": report.skipped.len(),
        }),
        &[&args.out],
    )?;
    println!("fitted a = {}", report.fitted_a);
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// simulate

fn parse_rho(s: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let (t, r) = part
            .split_once('=')
            .ok_or_else(|| Error::parse("cli", format!("--rho entry '{part}' is not T=rho")))?;
        out.push((
            t.trim().parse::<f64>().map_err(|e| Error::parse("cli", e.to_string()))?,
            r.trim().parse::<f64>().map_err(|e| Error::parse("cli", e.to_string()))?,
        ));
    }
    Ok(out)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let market = args.market.load()?;
    let model = CalibratedSpotModel::load(&args.model)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let contracts: Vec<String> = match &args.contracts {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            let mut ids: Vec<String> = market.quotes.quotes.iter().map(|q| q.contract.clone()).collect();
            ids.sort();
            ids.dedup();
            ids
        }
    };
    if contracts.is_empty() {
        return Err(Error::invalid("simulate", "no contracts to simulate"));
    }
    let pillars: Result<Vec<f64>> = contracts.iter().map(|c| market.t_last(c)).collect();
    let pillars = pillars?;

    // monitors: the quoted expiries of the simulated contracts
    let mut monitors: Vec<f64> = market
        .quotes
        .quotes
        .iter()
        .filter(|q| contracts.contains(&q.contract))
        .map(|q| q.expiry)
        .collect();
    monitors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    monitors.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if monitors.is_empty() {
        return Err(Error::invalid("simulate", "no quoted expiries to monitor"));
    }

    let rho_pillars = match &args.rho {
        Some(s) => parse_rho(s)?,
        None => vec![(1.0, 1.0)],
    };
    let slv = SlvModel::new(model.clone(), rho_pillars.clone(), args.xi, args.rho_v, SimConfig::default())?;
    let ensemble = simulate_paths(&slv, &pillars, &monitors, args.paths, args.seed)?;

    // PDE reference for the Gyöngy gaps
    let horizon = monitors.last().copied().unwrap();
    let engine = PricingEngine::build(model, horizon, &monitors, &[])?;

    // diagnostics.csv: E[v²] series and per-pillar martingale errors
    let mut diag = String::from("t,ev2,ev2_se\n");
    for row in &ensemble.v2_series {
        diag.push_str(&format!("{},{},{}\n", row.t, row.mean, row.se));
    }
    let diag_path = args.out_dir.join("diagnostics.csv");
    std::fs::write(&diag_path, diag)?;

    let mut mart = String::from("t,contract,maturity,mean_error,se\n");
    for &t in &monitors {
        for (c, &p) in contracts.iter().zip(&pillars) {
            if t <= p + 1e-12 {
                let (err, se) = ensemble.martingale_error(t, p)?;
                mart.push_str(&format!("{t},{c},{p},{err},{se}\n"));
            }
        }
    }
    let mart_path = args.out_dir.join("martingale.csv");
    std::fs::write(&mart_path, mart)?;

    // gyongy.csv: per quote, PDE vol vs MC vol
    let mut gy = String::from("expiry,contract,strike,pde_vol,mc_vol,gap_bp\n");
    for q in &market.quotes.quotes {
        if !contracts.contains(&q.contract) {
            continue;
        }
        let t_last = market.t_last(&q.contract)?;
        let pde_vol = engine.implied_futures_vol(q.expiry, t_last, q.strike)?;
        let (mc_price, _) = ensemble.vanilla_price(q.expiry, t_last, q.strike)?;
        let f0 = market.curve.price(t_last)?;
        let mc_vol = crate::black::implied_vol(mc_price / f0, q.expiry, q.strike / f0)?;
        gy.push_str(&format!(
            "{},{},{},{},{},{}\n",
            q.expiry,
            q.contract,
            q.strike,
            pde_vol,
            mc_vol,
            (mc_vol - pde_vol).abs() * 1e4
        ));
    }
    let gy_path = args.out_dir.join("gyongy.csv");
    std::fs::write(&gy_path, gy)?;

    // terminal.csv: per-pillar quantiles at the last monitor each pillar sees
    let mut term = String::from("contract,maturity,monitor,quantile,value\n");
    for (c, &p) in contracts.iter().zip(&pillars) {
        let t = monitors.iter().copied().filter(|&m| m <= p + 1e-12).fold(f64::NAN, f64::max);
        if !t.is_finite() {
            continue;
        }
        let m = ensemble.monitor_index(t)?;
        let pi = ensemble.pillar_index(p)?;
        let mut xs = ensemble.futures[m][pi].clone();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for q in 1..=99 {
            let idx = ((q as f64 / 100.0) * (xs.len() - 1) as f64).round() as usize;
            term.push_str(&format!("{c},{p},{t},{},{}\n", q as f64 / 100.0, xs[idx]));
        }
    }
    let term_path = args.out_dir.join("terminal.csv");
    std::fs::write(&term_path, term)?;

    let mut inputs = BTreeMap::new();
    hash_market_dir(&args.market.market, &mut inputs)?;
    inputs.insert(args.model.display().to_string(), sha256_hex(&args.model)?);
    write_manifest(
        &args.out_dir,
        "simulate",
        inputs,
        serde_json::json!({
            "contracts": contracts,
            "xi": args.xi,
            "rho_v": args.rho_v,
            "rho": rho_pillars,
            "paths": args.paths,
            "seed": args.seed,
        }),
        &[&diag_path, &mart_path, &gy_path, &term_path],
    )?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// implied-vol

fn cmd_implied_vol(args: ImpliedVolArgs) -> Result<i32> {
    let (price, k) = match (args.k, args.strike, args.forward) {
        (Some(k), None, None) => (args.price, k),
        (None, Some(strike), Some(forward)) => (args.price / forward, strike / forward),
        _ => {
            return Err(Error::invalid(
                "implied-vol",
                "give either --k (normalized) or both --strike and --forward",
            ));
        }
    };
    let vol = crate::black::implied_vol(price, args.t, k)?;
    println!("{vol}");
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_rule_parsing() {
        assert_eq!(parse_update("level-skew").unwrap(), UpdateRule::LevelSkew);
        assert_eq!(parse_update("level-only").unwrap(), UpdateRule::LevelOnly);
        assert!(parse_update("bogus").is_err());
    }

    #[test]
    fn a_steps_parsing() {
        let a = parse_a_steps("0=0.5,1.0=0.8").unwrap();
        assert_eq!(a.rate(0.5), 0.5);
        assert_eq!(a.rate(1.5), 0.8);
        assert!(parse_a_steps("nonsense").is_err());
    }

    #[test]
    fn rho_parsing() {
        let r = parse_rho("0.5=0.9,1.5=0.7").unwrap();
        assert_eq!(r, vec![(0.5, 0.9), (1.5, 0.7)]);
        assert!(parse_rho("x").is_err());
    }

    #[test]
    fn toml_calibration_section() {
        let cfg: ConfigFile =
            toml::from_str("[calibration]\nupdate = \"level-only\"\naa_memory = 3\nstop_tol_bp = 0.5\n").unwrap();
        assert_eq!(cfg.calibration.update.as_deref(), Some("level-only"));
        assert_eq!(cfg.calibration.aa_memory, Some(3));
        assert_eq!(cfg.calibration.stop_tol_bp, Some(0.5));
        assert!(toml::from_str::<ConfigFile>("[calibration]\nbogus = 1\n").is_err());
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(exit_code_for(&Error::invalid("x", "y")), EXIT_INVALID);
        assert_eq!(exit_code_for(&Error::numerical("x", "y")), EXIT_NUMERICAL);
        assert_eq!(exit_code_for(&Error::SchemaMismatch { expected: 1, found: 2 }), EXIT_SCHEMA);
        assert_eq!(
            exit_code_for(&Error::NotConverged { max_error_bp: 1.0, iterations: 5 }),
            EXIT_NOT_CONVERGED
        );
        assert_eq!(exit_code_for(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
    }
}
