//! Regime-aware portfolio engine.
//!
//! The pipeline segments market volatility into discrete states, learns a
//! Bayesian Markov transition matrix over those states, analyzes its mixing
//! behavior, and backtests a dynamic allocation that blends four classical
//! portfolio optimizers according to predicted state transitions.
//!
//! Modules follow the pipeline order:
//!
//! - [`marketdata`]: price ingestion, daily returns, rolling volatility
//! - [`regimes`]: K-means segmentation of the volatility series into states
//! - [`transitions`]: Dirichlet-multinomial transition posterior and Gibbs
//!   sampling with Gelman-Rubin diagnostics
//! - [`spectral`]: stationary distribution, SLEM, and mixing-time analysis
//! - [`allocators`]: equal weight, minimum variance, maximum diversification,
//!   and equal risk contribution solvers over a covariance estimate
//! - [`dynamic`]: per-state method selection, transition-weighted method
//!   blending, the t+1 backtest, and performance reporting
//! - [`fixtures`]: loaders for the published reference tables used in
//!   regression tests

pub mod allocators;
pub mod dynamic;
pub mod fixtures;
pub mod marketdata;
pub mod regimes;
pub mod spectral;
pub mod transitions;

mod stats;

pub use stats::Divisor;

/// Round a value to `digits` significant decimal digits.
///
/// Used when persisting matrices so artifact files carry a stable, documented
/// precision rather than the full shortest-roundtrip representation.
pub fn round_sig_digits(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits as i32 - 1 - magnitude);
    (x * factor).round() / factor
}
