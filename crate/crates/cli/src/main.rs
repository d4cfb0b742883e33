//! `volstate`: run the regime pipeline end to end or stage by stage.
//!
//! Exit codes: 0 success, 1 validation error, 2 computation error,
//! 3 convergence gate (Gelman-Rubin above threshold without
//! `--allow-unconverged`).

mod artifacts;
mod config;
mod reproduce;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use stages::Stages;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Computation(String),
    ConvergenceGate,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError::Validation(message.into())
    }

    pub fn computation(message: impl Into<String>) -> Self {
        CliError::Computation(message.into())
    }

    pub fn from_market(e: volstate::marketdata::MarketDataError) -> Self {
        CliError::Validation(e.to_string())
    }

    pub fn from_allocation(e: volstate::allocators::AllocationError) -> Self {
        CliError::Computation(e.to_string())
    }

    pub fn from_fixture(e: volstate::fixtures::FixtureError) -> Self {
        CliError::Validation(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Computation(_) => 2,
            CliError::ConvergenceGate => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Computation(m) => write!(f, "computation error: {m}"),
            CliError::ConvergenceGate => write!(
                f,
                "Gelman-Rubin PSRF above 1.1; rerun with more iterations or --allow-unconverged"
            ),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "volstate",
    about = "Volatility-regime segmentation, Bayesian state transitions, and dynamic portfolio backtesting",
    version
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (also VOLSTATE_OUT; defaults to ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonOverrides {
    /// Price CSV (date column plus one column per ticker).
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Rolling volatility window in trading days.
    #[arg(long)]
    window: Option<usize>,
    /// Number of market states.
    #[arg(long)]
    k: Option<usize>,
    /// K-means seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Mixing-time threshold.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Annual risk-free rate for Sharpe ratios.
    #[arg(long)]
    risk_free_rate: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load prices, compute returns, and persist both with a load report.
    Ingest {
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Compute rolling volatility and fit the K-means regime model.
    Cluster {
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Estimate the Bayesian transition matrix with Gibbs sampling.
    Transitions {
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Spectral mixing analysis of the estimated transition matrix.
    Mixing {
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Solve the four static allocations over the full-period covariance.
    Allocate {
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Run the dynamic backtest and emit the performance report.
    Backtest {
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Run every stage in order.
    Pipeline {
        #[command(flatten)]
        overrides: CommonOverrides,
        /// Exit 0 even when the Gelman-Rubin diagnostic exceeds 1.1.
        #[arg(long)]
        allow_unconverged: bool,
        /// Reproduce the published tables instead of running on data
        /// (paper_first_asset, paper_second_asset, or all).
        #[arg(long)]
        from_fixtures: Option<String>,
        /// Directory holding the reference tables.
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
    },
    /// Check the published reference tables against recomputation.
    ReproducePaperFixtures {
        /// Directory holding the reference tables.
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
        /// Which asset set to check: first, second, or all.
        #[arg(long, default_value = "all")]
        set: String,
    },
}

fn overrides_from(common: &CommonOverrides, out: &Option<PathBuf>) -> Overrides {
    Overrides {
        prices: common.prices.clone(),
        window: common.window,
        k: common.k,
        seed: common.seed,
        epsilon: common.epsilon,
        risk_free_rate: common.risk_free_rate,
        out: out.clone(),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { overrides } => {
            let config = RunConfig::load(
                cli.config.as_deref(),
                &overrides_from(&overrides, &cli.out),
            )?;
            let stages = Stages::new(config)?;
            let (prices, returns) = stages.ingest()?;
            println!(
                "ingested {} days x {} assets; {} return rows -> {}",
                prices.len(),
                prices.n_assets(),
                returns.len(),
                stages.out.display()
            );
            Ok(())
        }
        Command::Cluster { overrides } => {
            let config = RunConfig::load(
                cli.config.as_deref(),
                &overrides_from(&overrides, &cli.out),
            )?;
            let stages = Stages::new(config)?;
            let (vol, model) = stages.cluster()?;
            println!(
                "fit {} states over {} volatility days (WCSS {:.6e}) -> {}",
                model.k(),
                vol.len(),
                model.wcss,
                stages.out.display()
            );
            Ok(())
        }
        Command::Transitions { overrides } => {
            let config = RunConfig::load(
                cli.config.as_deref(),
                &overrides_from(&overrides, &cli.out),
            )?;
            let stages = Stages::new(config)?;
            let (_, run, file) = stages.transitions()?;
            println!(
                "posterior over {} states; converged = {} -> {}",
                file.k,
                run.converged,
                stages.out.display()
            );
            Ok(())
        }
        Command::Mixing { overrides } => {
            let config = RunConfig::load(
                cli.config.as_deref(),
                &overrides_from(&overrides, &cli.out),
            )?;
            let stages = Stages::new(config)?;
            let summary = stages.mixing()?;
            println!(
                "slem {:.6}, relaxation {:.3}, mixing point estimate {} steps -> {}",
                summary.slem,
                summary.t_rel,
                summary.point_estimate,
                stages.out.display()
            );
            Ok(())
        }
        Command::Allocate { overrides } => {
            let config = RunConfig::load(
                cli.config.as_deref(),
                &overrides_from(&overrides, &cli.out),
            )?;
            let stages = Stages::new(config)?;
            let records = stages.allocate()?;
            for record in &records {
                println!(
                    "{}: dr {:.4}, objective {:.6e}, residual {:.2e}",
                    record.method, record.dr, record.objective, record.residual
                );
            }
            Ok(())
        }
        Command::Backtest { overrides } => {
            let config = RunConfig::load(
                cli.config.as_deref(),
                &overrides_from(&overrides, &cli.out),
            )?;
            let stages = Stages::new(config)?;
            let report = stages.backtest()?;
            for totals in &report.totals {
                println!(
                    "{}: total return {:.4}, volatility {:.6}, sharpe {}",
                    totals.column,
                    totals.total_return,
                    totals.total_volatility,
                    totals
                        .total_sharpe
                        .map(|s| format!("{s:.4}"))
                        .unwrap_or_else(|| "n/a".to_string())
                );
            }
            Ok(())
        }
        Command::Pipeline {
            overrides,
            allow_unconverged,
            from_fixtures,
            fixtures,
        } => {
            if let Some(name) = from_fixtures {
                return stages::run_fixture_mode(&name, &fixtures);
            }
            let config = RunConfig::load(
                cli.config.as_deref(),
                &overrides_from(&overrides, &cli.out),
            )?;
            let stages = Stages::new(config)?;
            stages.pipeline(allow_unconverged)?;
            println!("pipeline complete -> {}", stages.out.display());
            Ok(())
        }
        Command::ReproducePaperFixtures { fixtures, set } => {
            let choice = match set.as_str() {
                "first" => reproduce::SetChoice::First,
                "second" => reproduce::SetChoice::Second,
                "all" => reproduce::SetChoice::All,
                other => {
                    return Err(CliError::validation(format!(
                        "unknown set {other:?} (expected first, second, or all)"
                    )))
                }
            };
            reproduce::run(&fixtures, choice)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("{error}");
            ExitCode::from(error.exit_code())
        }
    }
}
