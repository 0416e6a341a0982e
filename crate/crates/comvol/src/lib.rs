//! Commodity-futures smile modelling toolkit.
//!
//! The model is a mean-reverting local-volatility "fictitious spot" for the
//! whole futures curve: a single normalized process
//!
//! ```text
//! ds = a(t) (1 − s) dt + η(t, s) s dW,   s₀ = 1
//! ```
//!
//! whose marginal densities are mapped onto every futures contract through an
//! affine strike remap. Normalized call prices satisfy an extended Dupire
//! forward PDE, so one PDE sweep prices every quoted vanilla; the
//! non-parametric local-vol surface is calibrated by an Anderson-accelerated
//! fixed-point iteration on the level/skew asymptotics. On top of the
//! calibrated one-factor model sit closed-form calendar-spread options, a
//! mean-reversion fitter driven by CSO volatility drops, and a two-factor
//! stochastic-local-volatility Monte Carlo with particle leverage matching.
//!
//! Module map:
//!
//! * [`market`] — curves, quotes, contract calendars, CSV ingestion
//! * [`black`] — normalized Black-76 analytics (prices, Greeks, implied vol)
//! * [`spot`] — mean reversion, strike remaps, futures local vol
//! * [`pde`] — the extended Dupire forward solver
//! * [`calib`] — local-vol surface, fixed-point iteration, Anderson scheme
//! * [`pricing`] — vanilla pricing under both margining styles
//! * [`exotics`] — mid-curve options, CSOs, mean-reversion fit
//! * [`slv`] — stochastic-local-vol Monte Carlo with leverage estimation
//! * [`cli`] — batch front end used by the `comvol` binary

pub mod black;
pub mod calib;
pub mod cli;
pub mod error;
pub mod exotics;
pub mod market;
pub mod math;
pub mod pde;
pub mod pricing;
pub mod slv;
pub mod spot;
pub mod synth;

pub use error::{Error, Result};
