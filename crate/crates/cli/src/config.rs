//! Declarative run configuration: defaults, TOML file, flag overrides, in
//! that order of increasing precedence (the output directory also honors the
//! `VOLSTATE_OUT` environment variable between defaults and file).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volstate::dynamic::{BlendMode, RefitPolicy, DEFAULT_RISK_FREE_RATE};
use volstate::marketdata::ReturnKind;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub prices: Option<PathBuf>,
    pub date_column: String,
    pub tickers: Option<Vec<String>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            prices: None,
            date_column: "date".to_string(),
            tickers: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolatilityConfig {
    pub window: usize,
    pub return_kind: ReturnKind,
}

impl Default for VolatilityConfig {
    fn default() -> Self {
        Self {
            window: 22,
            return_kind: ReturnKind::Simple,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 42,
            n_init: 10,
            max_iters: 300,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionConfig {
    /// Flat Dirichlet pseudo-count per entry.
    pub alpha: f64,
    pub chains: usize,
    pub iters: usize,
    /// Fraction of iterations discarded as burn-in.
    pub burn_in_frac: f64,
    /// Posterior-update cadence: one count batch per this many months.
    pub batch_months: u32,
    pub seed: u64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            chains: 4,
            iters: 2000,
            burn_in_frac: 0.2,
            batch_months: 6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingConfig {
    pub epsilon: f64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self { epsilon: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub risk_free_rate: f64,
    pub blend_mode: BlendMode,
    /// 0 keeps one full-period fit; otherwise re-fit every this many months.
    pub refit_months: u32,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            risk_free_rate: DEFAULT_RISK_FREE_RATE,
            blend_mode: BlendMode::Blend,
            refit_months: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}


#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub volatility: VolatilityConfig,
    pub regimes: RegimeConfig,
    pub transitions: TransitionConfig,
    pub mixing: MixingConfig,
    pub backtest: BacktestConfig,
    pub output: OutputConfig,
}

/// Flag overrides; every field beats the config file when set.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub prices: Option<PathBuf>,
    pub window: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub risk_free_rate: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::validation(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str::<RunConfig>(&text).map_err(|e| {
                    CliError::validation(format!("invalid config {}: {e}", path.display()))
                })?
            }
            None => RunConfig::default(),
        };

        if config.output.dir.is_none() {
            if let Ok(root) = std::env::var("VOLSTATE_OUT") {
                config.output.dir = Some(PathBuf::from(root));
            }
        }

        if let Some(p) = &overrides.prices {
            config.data.prices = Some(p.clone());
        }
        if let Some(w) = overrides.window {
            config.volatility.window = w;
        }
        if let Some(k) = overrides.k {
            config.regimes.k = k;
        }
        if let Some(s) = overrides.seed {
            config.regimes.seed = s;
        }
        if let Some(e) = overrides.epsilon {
            config.mixing.epsilon = e;
        }
        if let Some(r) = overrides.risk_free_rate {
            config.backtest.risk_free_rate = r;
        }
        if let Some(o) = &overrides.out {
            config.output.dir = Some(o.clone());
        }

        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.volatility.window < 2 {
            return Err(CliError::validation("volatility.window must be >= 2"));
        }
        if self.regimes.k < 1 {
            return Err(CliError::validation("regimes.k must be >= 1"));
        }
        if self.regimes.n_init < 1 {
            return Err(CliError::validation("regimes.n_init must be >= 1"));
        }
        if !(self.regimes.tol > 0.0) {
            return Err(CliError::validation("regimes.tol must be > 0"));
        }
        if self.transitions.chains < 2 {
            return Err(CliError::validation(
                "transitions.chains: n_chains >= 2 required for PSRF",
            ));
        }
        if !(self.transitions.alpha > 0.0) {
            return Err(CliError::validation("transitions.alpha must be > 0"));
        }
        if !(0.0..1.0).contains(&self.transitions.burn_in_frac) {
            return Err(CliError::validation(
                "transitions.burn_in_frac must be in [0, 1)",
            ));
        }
        if self.transitions.iters < 2
            || self.burn_in() >= self.transitions.iters
        {
            return Err(CliError::validation(
                "transitions.iters must exceed the burn-in",
            ));
        }
        if self.transitions.batch_months < 1 {
            return Err(CliError::validation("transitions.batch_months must be >= 1"));
        }
        if !(self.mixing.epsilon > 0.0 && self.mixing.epsilon < 1.0) {
            return Err(CliError::validation("mixing.epsilon must be in (0, 1)"));
        }
        if !self.backtest.risk_free_rate.is_finite() {
            return Err(CliError::validation("backtest.risk_free_rate must be finite"));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.transitions.iters as f64 * self.transitions.burn_in_frac).floor() as usize
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn refit_policy(&self) -> RefitPolicy {
        if self.backtest.refit_months == 0 {
            RefitPolicy::FullPeriod
        } else {
            RefitPolicy::WalkForward {
                months: self.backtest.refit_months,
            }
        }
    }
}
