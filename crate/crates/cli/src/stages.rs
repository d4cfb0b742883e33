//! Pipeline stages. Each stage writes its artifacts (atomically) plus a
//! manifest, and exposes an in-memory result so `pipeline` can chain stages
//! without re-reading from disk.

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use volstate::allocators::{self, CovarianceMatrix, Method};
use volstate::dynamic::{self, PerformanceReport, StaticReturns};
use volstate::marketdata::{self, CsvLayout, PriceSeries, ReturnSeries, VolatilitySeries};
use volstate::regimes::{self, ClusterConfig, RegimeModel, RegimeModelFile};
use volstate::spectral::{self, SpectralSummary};
use volstate::transitions::{
    self, DirichletPrior, GibbsRun, PosteriorTransitionMatrix, TransitionCounts,
    TransitionMatrixFile,
};

use crate::artifacts::{ensure_dir, sha256_str, write_json, Manifest};
use crate::config::RunConfig;
use crate::CliError;

pub struct Stages {
    pub config: RunConfig,
    pub out: PathBuf,
    pub config_hash: String,
}

/// One allocation row in `allocations.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub method: String,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub dr: f64,
    pub trc: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlendWeightsFile {
    pub methods: Vec<String>,
    pub best_per_state: Vec<String>,
    /// `w[state][method]`.
    pub w: Vec<Vec<f64>>,
}

impl Stages {
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        let out = config.out_dir();
        ensure_dir(&out)?;
        let canonical = serde_json::to_string(&config)
            .map_err(|e| CliError::computation(format!("config hash: {e}")))?;
        Ok(Self {
            config_hash: sha256_str(&canonical),
            config,
            out,
        })
    }

    fn manifest(&self, stage: &str) -> Manifest {
        Manifest::new(stage, &self.config_hash)
    }

    fn prices_path(&self) -> Result<PathBuf, CliError> {
        self.config
            .data
            .prices
            .clone()
            .ok_or_else(|| CliError::validation("no price file configured (data.prices or --prices)"))
    }

    // ---- ingest ----------------------------------------------------------

    pub fn ingest(&self) -> Result<(PriceSeries, ReturnSeries), CliError> {
        let input = self.prices_path()?;
        let layout = CsvLayout {
            date_column: self.config.data.date_column.clone(),
            tickers: self.config.data.tickers.clone(),
        };
        let (prices, report) =
            marketdata::load_prices(&input, &layout).map_err(CliError::from_market)?;
        let returns = marketdata::compute_returns_with(&prices, self.config.volatility.return_kind)
            .map_err(CliError::from_market)?;

        let mut manifest = self.manifest("ingest");
        manifest.input(&input)?;
        manifest.tickers = Some(prices.tickers().to_vec());
        let prices_out = self.out.join("prices.csv");
        let returns_out = self.out.join("returns.csv");
        let report_out = self.out.join("load_report.json");
        prices.write_csv(&prices_out).map_err(CliError::from_market)?;
        returns.write_csv(&returns_out).map_err(CliError::from_market)?;
        write_json(&report_out, &report)?;
        manifest.output(&prices_out);
        manifest.output(&returns_out);
        manifest.output(&report_out);
        manifest.write(&self.out)?;
        Ok((prices, returns))
    }

    pub fn load_returns(&self) -> Result<ReturnSeries, CliError> {
        let path = self.out.join("returns.csv");
        ReturnSeries::read_csv(&path).map_err(|e| {
            CliError::validation(format!(
                "cannot load {} (run `ingest` first): {e}",
                path.display()
            ))
        })
    }

    // ---- cluster ---------------------------------------------------------

    pub fn cluster_from(
        &self,
        returns: &ReturnSeries,
    ) -> Result<(VolatilitySeries, RegimeModel), CliError> {
        let reference =
            allocators::equal_weight(returns.n_assets()).map_err(CliError::from_allocation)?;
        let vol = marketdata::rolling_volatility(
            returns,
            &reference,
            self.config.volatility.window,
        )
        .map_err(CliError::from_market)?;
        let cluster_config = ClusterConfig {
            k: self.config.regimes.k,
            max_iters: self.config.regimes.max_iters,
            tol: self.config.regimes.tol,
            seed: self.config.regimes.seed,
            n_init: self.config.regimes.n_init,
        };
        let model = regimes::kmeans_fit(&vol, &cluster_config)
            .map_err(|e| CliError::computation(format!("k-means: {e}")))?;

        let mut manifest = self.manifest("cluster");
        let vol_out = self.out.join("volatility.csv");
        let model_out = self.out.join("regime_model.json");
        let mut text = String::from("date,volatility,state\n");
        for ((date, value), state) in vol
            .dates()
            .iter()
            .zip(vol.values())
            .zip(&model.labels)
        {
            text.push_str(&format!("{},{},{}\n", date.format("%Y-%m-%d"), value, state));
        }
        crate::artifacts::write_atomic(&vol_out, text.as_bytes())?;
        write_json(
            &model_out,
            &RegimeModelFile::new(&model, &vol, self.config.regimes.seed),
        )?;
        manifest.output(&vol_out);
        manifest.output(&model_out);
        manifest.write(&self.out)?;
        Ok((vol, model))
    }

    pub fn cluster(&self) -> Result<(VolatilitySeries, RegimeModel), CliError> {
        let returns = self.load_returns()?;
        self.cluster_from(&returns)
    }

    pub fn load_regime_model(&self) -> Result<RegimeModelFile, CliError> {
        let path = self.out.join("regime_model.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::validation(format!(
                "cannot load {} (run `cluster` first): {e}",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid {}: {e}", path.display())))
    }

    // ---- transitions -----------------------------------------------------

    pub fn transitions_from(
        &self,
        labels: &[usize],
        dates: &[NaiveDate],
    ) -> Result<(PosteriorTransitionMatrix, GibbsRun, TransitionMatrixFile), CliError> {
        let k = self.config.regimes.k;
        let prior = DirichletPrior::uniform(k, self.config.transitions.alpha)
            .map_err(|e| CliError::validation(format!("prior: {e}")))?;
        let batches = batch_counts_by_months(
            labels,
            dates,
            k,
            self.config.transitions.batch_months,
        )?;
        let mut pooled = TransitionCounts::zeros(k);
        for batch in &batches {
            pooled
                .add(batch)
                .map_err(|e| CliError::computation(format!("pooling counts: {e}")))?;
        }
        let run = transitions::gibbs_sample(
            &prior,
            &batches,
            self.config.transitions.chains,
            self.config.transitions.iters,
            self.config.burn_in(),
            self.config.transitions.seed,
        )
        .map_err(|e| CliError::computation(format!("gibbs: {e}")))?;
        let mut posterior = transitions::posterior_mean(&prior, &pooled)
            .map_err(|e| CliError::computation(format!("posterior: {e}")))?;
        posterior.samples_summary = Some(run.summary());

        let file = TransitionMatrixFile::new(&prior, &pooled, &posterior, &run);
        let mut manifest = self.manifest("transitions");
        let out = self.out.join("transition_matrix.json");
        write_json(&out, &file)?;
        manifest.output(&out);
        manifest.write(&self.out)?;
        Ok((posterior, run, file))
    }

    pub fn transitions(&self) -> Result<(PosteriorTransitionMatrix, GibbsRun, TransitionMatrixFile), CliError> {
        let model = self.load_regime_model()?;
        let (dates, labels): (Vec<NaiveDate>, Vec<usize>) = model.labels.iter().copied().unzip();
        self.transitions_from(&labels, &dates)
    }

    pub fn load_transition_file(&self) -> Result<TransitionMatrixFile, CliError> {
        let path = self.out.join("transition_matrix.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::validation(format!(
                "cannot load {} (run `transitions` first): {e}",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid {}: {e}", path.display())))
    }

    // ---- mixing ----------------------------------------------------------

    pub fn mixing_from(&self, mean: &[Vec<f64>]) -> Result<SpectralSummary, CliError> {
        let k = mean.len();
        let p = DMatrix::from_fn(k, k, |i, j| mean[i][j]);
        let summary = spectral::mixing_analysis(&p, self.config.mixing.epsilon)
            .map_err(|e| CliError::computation(format!("mixing analysis: {e}")))?;
        let mut manifest = self.manifest("mixing");
        let out = self.out.join("spectral_summary.json");
        write_json(&out, &summary)?;
        manifest.output(&out);
        manifest.write(&self.out)?;
        Ok(summary)
    }

    pub fn mixing(&self) -> Result<SpectralSummary, CliError> {
        let file = self.load_transition_file()?;
        self.mixing_from(&file.mean)
    }

    // ---- allocate --------------------------------------------------------

    pub fn allocate_from(
        &self,
        returns: &ReturnSeries,
    ) -> Result<Vec<AllocationRecord>, CliError> {
        let cov =
            allocators::estimate_covariance(returns, None).map_err(CliError::from_allocation)?;
        let records = allocation_records(&cov)?;
        let mut manifest = self.manifest("allocate");
        let out = self.out.join("allocations.json");
        write_json(&out, &records)?;
        manifest.output(&out);
        manifest.write(&self.out)?;
        Ok(records)
    }

    pub fn allocate(&self) -> Result<Vec<AllocationRecord>, CliError> {
        let returns = self.load_returns()?;
        self.allocate_from(&returns)
    }

    // ---- backtest --------------------------------------------------------

    pub fn backtest_from(
        &self,
        returns: &ReturnSeries,
        label_dates: &[NaiveDate],
        labels: &[usize],
        transition_mean: &[Vec<f64>],
    ) -> Result<PerformanceReport, CliError> {
        let start = returns
            .dates()
            .iter()
            .position(|d| *d == label_dates[0])
            .ok_or_else(|| {
                CliError::validation("regime labels do not align with the return series")
            })?;
        let range = start..start + labels.len();
        if range.end > returns.len() {
            return Err(CliError::validation(
                "regime labels extend past the return series",
            ));
        }
        for (offset, date) in label_dates.iter().enumerate() {
            if returns.dates()[start + offset] != *date {
                return Err(CliError::validation(format!(
                    "label date {date} does not match the return series"
                )));
            }
        }

        let static_returns: StaticReturns =
            dynamic::compute_static_returns(returns, range, self.config.refit_policy())
                .map_err(|e| CliError::computation(format!("static returns: {e}")))?;
        let assignment =
            dynamic::select_best_methods(&static_returns, labels, self.config.regimes.k)
                .map_err(|e| CliError::computation(format!("method selection: {e}")))?;
        let weights = dynamic::total_return_weights(transition_mean, &assignment)
            .map_err(|e| CliError::computation(format!("blend weights: {e}")))?;
        let ledger = dynamic::run_dynamic_backtest(
            &static_returns,
            labels,
            &weights,
            self.config.backtest.blend_mode,
        )
        .map_err(|e| CliError::computation(format!("backtest: {e}")))?;
        let report = dynamic::performance_report(&ledger, self.config.backtest.risk_free_rate)
            .map_err(|e| CliError::computation(format!("report: {e}")))?;

        let mut manifest = self.manifest("backtest");
        let weights_out = self.out.join("total_return_weights.json");
        write_json(
            &weights_out,
            &BlendWeightsFile {
                methods: weights.methods().iter().map(|m| m.label().to_string()).collect(),
                best_per_state: assignment
                    .best()
                    .iter()
                    .map(|m| m.label().to_string())
                    .collect(),
                w: weights.matrix().to_vec(),
            },
        )?;
        let report_out = self.out.join("report.json");
        write_json(&report_out, &report)?;
        let yearly_out = self.out.join("report_yearly.csv");
        report
            .write_yearly_csv(&yearly_out)
            .map_err(|e| CliError::computation(format!("yearly csv: {e}")))?;
        let totals_out = self.out.join("report_totals.csv");
        report
            .write_totals_csv(&totals_out)
            .map_err(|e| CliError::computation(format!("totals csv: {e}")))?;
        let paths_out = self.out.join("value_paths.csv");
        ledger
            .write_value_paths_csv(&paths_out)
            .map_err(|e| CliError::computation(format!("value paths csv: {e}")))?;
        for path in [&weights_out, &report_out, &yearly_out, &totals_out, &paths_out] {
            manifest.output(path);
        }
        manifest.write(&self.out)?;
        Ok(report)
    }

    pub fn backtest(&self) -> Result<PerformanceReport, CliError> {
        let returns = self.load_returns()?;
        let model = self.load_regime_model()?;
        let transition = self.load_transition_file()?;
        let (dates, labels): (Vec<NaiveDate>, Vec<usize>) = model.labels.iter().copied().unzip();
        self.backtest_from(&returns, &dates, &labels, &transition.mean)
    }

    // ---- pipeline --------------------------------------------------------

    pub fn pipeline(&self, allow_unconverged: bool) -> Result<(), CliError> {
        let (_prices, returns) = self.ingest()?;
        let (vol, model) = self.cluster_from(&returns)?;
        let (posterior, run, _file) =
            self.transitions_from(&model.labels, vol.dates())?;
        self.mixing_from(&posterior.mean)?;
        self.allocate_from(&returns)?;
        self.backtest_from(&returns, vol.dates(), &model.labels, &posterior.mean)?;
        if !run.converged && !allow_unconverged {
            return Err(CliError::ConvergenceGate);
        }
        Ok(())
    }
}

fn allocation_records(cov: &CovarianceMatrix) -> Result<Vec<AllocationRecord>, CliError> {
    let allocations = dynamic::solve_static_allocations(cov)
        .map_err(|e| CliError::computation(format!("allocators: {e}")))?;
    let records = Method::ALL
        .iter()
        .zip(&allocations.weights)
        .zip(&allocations.diagnostics)
        .map(|((method, weights), diagnostics)| {
            let w = weights.weights();
            match diagnostics {
                Some(d) => AllocationRecord {
                    method: method.label().to_string(),
                    weights: w.to_vec(),
                    objective: d.objective_value,
                    dr: d.dr,
                    trc: d.trc.clone(),
                    iterations: d.iterations,
                    residual: d.constraint_residual,
                },
                None => AllocationRecord {
                    method: method.label().to_string(),
                    weights: w.to_vec(),
                    objective: allocators::portfolio_variance(cov, w),
                    dr: allocators::diversification_ratio(cov, w),
                    trc: allocators::total_risk_contributions(cov, w),
                    iterations: 0,
                    residual: (w.iter().sum::<f64>() - 1.0).abs(),
                },
            }
        })
        .collect();
    Ok(records)
}

/// Split the label sequence into one count batch per calendar period.
/// Adjacent batches overlap one label so the pooled counts equal the
/// full-sequence counts exactly.
fn batch_counts_by_months(
    labels: &[usize],
    dates: &[NaiveDate],
    k: usize,
    months: u32,
) -> Result<Vec<TransitionCounts>, CliError> {
    if labels.len() != dates.len() {
        return Err(CliError::validation("labels and dates misaligned"));
    }
    if labels.len() < 2 {
        return Err(CliError::validation(
            "need at least two labeled days to count transitions",
        ));
    }
    let mut boundaries = vec![0usize];
    let mut next = add_months(dates[0], months);
    for (idx, date) in dates.iter().enumerate() {
        if *date >= next {
            boundaries.push(idx);
            next = add_months(*date, months);
        }
    }
    boundaries.push(labels.len() - 1);
    boundaries.dedup();

    let mut batches = Vec::new();
    for window in boundaries.windows(2) {
        let (start, end) = (window[0], window[1]);
        if end > start {
            let batch = transitions::count_transitions(&labels[start..=end], k)
                .map_err(|e| CliError::computation(format!("counting transitions: {e}")))?;
            batches.push(batch);
        }
    }
    Ok(batches)
}

fn add_months(date: NaiveDate, months: u32) -> NaiveDate {
    let total = date.month0() + months;
    let year = date.year() + (total / 12) as i32;
    let month = total % 12 + 1;
    NaiveDate::from_ymd_opt(year, month, 1).expect("valid month arithmetic")
}

/// Pipeline alias for the published-table reproduction run.
pub fn run_fixture_mode(name: &str, fixtures_dir: &Path) -> Result<(), CliError> {
    let set = match name {
        "paper_first_asset" | "first" => crate::reproduce::SetChoice::First,
        "paper_second_asset" | "second" => crate::reproduce::SetChoice::Second,
        "all" => crate::reproduce::SetChoice::All,
        other => {
            return Err(CliError::validation(format!(
                "unknown fixture set {other:?} (expected paper_first_asset, paper_second_asset, or all)"
            )))
        }
    };
    crate::reproduce::run(fixtures_dir, set)
}
