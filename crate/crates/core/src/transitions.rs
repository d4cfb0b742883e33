//! Bayesian estimation of the state-transition matrix.
//!
//! Row posteriors are Dirichlet by conjugacy with the multinomial transition
//! counts. The Gibbs sampler sweeps rows, drawing each from its conditional
//! (which, with observed labels, is the exact Dirichlet posterior given the
//! cumulative counts), and convergence is checked with the Gelman-Rubin
//! potential scale reduction factor at the 1.1 threshold.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, Divisor};

/// PSRF threshold below which chains are considered converged.
pub const PSRF_THRESHOLD: f64 = 1.1;

#[derive(Error, Debug)]
pub enum TransitionError {
    #[error("alpha must be strictly positive at ({row}, {col})")]
    NonPositiveAlpha { row: usize, col: usize },
    #[error("matrix must be square: {rows} rows, row {row} has {cols} columns")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("label {label} at position {pos} out of range 1..={k}")]
    LabelOutOfRange { label: usize, pos: usize, k: usize },
    #[error("label sequence must have length >= 2, got {0}")]
    SequenceTooShort(usize),
    #[error("dimension mismatch: prior is {prior}x{prior}, counts are {counts}x{counts}")]
    DimensionMismatch { prior: usize, counts: usize },
    #[error("need at least 2 chains, got {0}")]
    TooFewChains(usize),
    #[error("need n_iters > burn_in, got n_iters = {n_iters}, burn_in = {burn_in}")]
    BadIterationCounts { n_iters: usize, burn_in: usize },
    #[error("need at least {needed} retained draws per chain, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("empty batch list")]
    NoBatches,
}

/// Dirichlet concentration parameters, one row per origin state.
///
/// Entries act as prior pseudo-counts of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    alpha: Vec<Vec<f64>>,
}

impl DirichletPrior {
    pub fn new(alpha: Vec<Vec<f64>>) -> Result<Self, TransitionError> {
        let k = alpha.len();
        for (i, row) in alpha.iter().enumerate() {
            if row.len() != k {
                return Err(TransitionError::NotSquare {
                    rows: k,
                    row: i,
                    cols: row.len(),
                });
            }
            for (j, a) in row.iter().enumerate() {
                if !(*a > 0.0) {
                    return Err(TransitionError::NonPositiveAlpha { row: i, col: j });
                }
            }
        }
        Ok(Self { alpha })
    }

    /// Flat prior with every entry equal to `value`.
    pub fn uniform(k: usize, value: f64) -> Result<Self, TransitionError> {
        Self::new(vec![vec![value; k]; k])
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    /// Posterior-as-prior: absorb observed counts into the pseudo-counts.
    pub fn absorb(&self, counts: &TransitionCounts) -> Result<Self, TransitionError> {
        if counts.k() != self.k() {
            return Err(TransitionError::DimensionMismatch {
                prior: self.k(),
                counts: counts.k(),
            });
        }
        let alpha = self
            .alpha
            .iter()
            .zip(counts.counts())
            .map(|(arow, nrow)| {
                arow.iter()
                    .zip(nrow)
                    .map(|(a, n)| a + *n as f64)
                    .collect()
            })
            .collect();
        Self::new(alpha)
    }
}

/// Observed transition counts `N[i][j]` between consecutive labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCounts {
    counts: Vec<Vec<u64>>,
}

impl TransitionCounts {
    pub fn zeros(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_matrix(counts: Vec<Vec<u64>>) -> Result<Self, TransitionError> {
        let k = counts.len();
        for (i, row) in counts.iter().enumerate() {
            if row.len() != k {
                return Err(TransitionError::NotSquare {
                    rows: k,
                    row: i,
                    cols: row.len(),
                });
            }
        }
        Ok(Self { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, other: &TransitionCounts) -> Result<(), TransitionError> {
        if other.k() != self.k() {
            return Err(TransitionError::DimensionMismatch {
                prior: self.k(),
                counts: other.k(),
            });
        }
        for (row, orow) in self.counts.iter_mut().zip(other.counts()) {
            for (n, o) in row.iter_mut().zip(orow) {
                *n += o;
            }
        }
        Ok(())
    }
}

/// Count transitions between consecutive labels in `1..=k`.
pub fn count_transitions(labels: &[usize], k: usize) -> Result<TransitionCounts, TransitionError> {
    if labels.len() < 2 {
        return Err(TransitionError::SequenceTooShort(labels.len()));
    }
    for (pos, label) in labels.iter().enumerate() {
        if *label < 1 || *label > k {
            return Err(TransitionError::LabelOutOfRange {
                label: *label,
                pos,
                k,
            });
        }
    }
    let mut counts = TransitionCounts::zeros(k);
    for pair in labels.windows(2) {
        counts.counts[pair[0] - 1][pair[1] - 1] += 1;
    }
    Ok(counts)
}

/// Split a label sequence into consecutive batches of `batch_len`
/// transitions each (the final batch may be shorter).
///
/// Each batch counts the transitions inside its span, including the one that
/// crosses into the next batch's first label, so the batches pool back to the
/// full-sequence counts exactly.
pub fn count_transitions_batched(
    labels: &[usize],
    k: usize,
    batch_len: usize,
) -> Result<Vec<TransitionCounts>, TransitionError> {
    if labels.len() < 2 {
        return Err(TransitionError::SequenceTooShort(labels.len()));
    }
    let batch_len = batch_len.max(1);
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + 1 < labels.len() {
        let end = (start + batch_len + 1).min(labels.len());
        out.push(count_transitions(&labels[start..end], k)?);
        start = end - 1;
    }
    Ok(out)
}

/// Per-entry mean and standard deviation over retained Gibbs draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesSummary {
    pub mean: Vec<Vec<f64>>,
    pub stdev: Vec<Vec<f64>>,
}

/// Posterior over the transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTransitionMatrix {
    /// Row-stochastic posterior mean `E[P[i][j]]`.
    pub mean: Vec<Vec<f64>>,
    /// `alpha[i][j] + N[i][j]`.
    pub posterior_alpha: Vec<Vec<f64>>,
    /// Filled in when a Gibbs run produced this posterior.
    pub samples_summary: Option<SamplesSummary>,
}

impl PosteriorTransitionMatrix {
    pub fn k(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| self.mean[i][j])
    }
}

/// Analytic posterior mean: `E[P[i][j]] = (a[i][j] + N[i][j]) / sum_k (a[i][k] + N[i][k])`.
///
/// Every entry is strictly positive because the prior is, so no state ever
/// gets probability zero. A never-visited row reduces to the normalized
/// prior row.
pub fn posterior_mean(
    prior: &DirichletPrior,
    counts: &TransitionCounts,
) -> Result<PosteriorTransitionMatrix, TransitionError> {
    if prior.k() != counts.k() {
        return Err(TransitionError::DimensionMismatch {
            prior: prior.k(),
            counts: counts.k(),
        });
    }
    let posterior_alpha: Vec<Vec<f64>> = prior
        .alpha()
        .iter()
        .zip(counts.counts())
        .map(|(arow, nrow)| {
            arow.iter()
                .zip(nrow)
                .map(|(a, n)| a + *n as f64)
                .collect()
        })
        .collect();
    let mean = posterior_alpha
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.iter().map(|v| v / total).collect()
        })
        .collect();
    Ok(PosteriorTransitionMatrix {
        mean,
        posterior_alpha,
        samples_summary: None,
    })
}

/// One Gibbs run: all chains' retained draws plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct GibbsRun {
    /// `chains[c][draw]` is a sampled row-stochastic matrix.
    pub chains: Vec<Vec<Vec<Vec<f64>>>>,
    pub n_chains: usize,
    pub n_iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Per-entry potential scale reduction factor.
    pub psrf: Vec<Vec<f64>>,
    /// All PSRF entries below [`PSRF_THRESHOLD`].
    pub converged: bool,
    pub sample_mean: Vec<Vec<f64>>,
    pub sample_stdev: Vec<Vec<f64>>,
}

impl GibbsRun {
    pub fn k(&self) -> usize {
        self.sample_mean.len()
    }

    pub fn retained_per_chain(&self) -> usize {
        self.n_iters - self.burn_in
    }

    pub fn summary(&self) -> SamplesSummary {
        SamplesSummary {
            mean: self.sample_mean.clone(),
            stdev: self.sample_stdev.clone(),
        }
    }
}

fn sample_dirichlet_row<R: Rng>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = alpha
            .iter()
            .map(|a| {
                Gamma::new(*a, 1.0)
                    .expect("alpha validated positive")
                    .sample(rng)
            })
            .collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|g| g / total).collect();
        }
        // All-zero gamma draws are possible only for minuscule alpha; retry.
    }
}

/// Sample the transition-matrix posterior by sweeping rows.
///
/// `count_batches` arrive in calendar order; the sampler conditions on the
/// cumulative counts through the latest batch, so the stationary law is the
/// product of row posteriors `Dirichlet(alpha_i + sum_b N_i^b)`. Chains run
/// independently with RNGs derived from `(seed, chain)`, and draws after
/// `burn_in` are retained.
pub fn gibbs_sample(
    prior: &DirichletPrior,
    count_batches: &[TransitionCounts],
    n_chains: usize,
    n_iters: usize,
    burn_in: usize,
    seed: u64,
) -> Result<GibbsRun, TransitionError> {
    if n_chains < 2 {
        return Err(TransitionError::TooFewChains(n_chains));
    }
    if n_iters <= burn_in {
        return Err(TransitionError::BadIterationCounts { n_iters, burn_in });
    }
    if count_batches.is_empty() {
        return Err(TransitionError::NoBatches);
    }
    let mut pooled = TransitionCounts::zeros(prior.k());
    for batch in count_batches {
        pooled.add(batch)?;
    }
    let target = prior.absorb(&pooled)?;
    let k = prior.k();

    let chains: Vec<Vec<Vec<Vec<f64>>>> = (0..n_chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chain as u64 + 1);
            let mut retained = Vec::with_capacity(n_iters - burn_in);
            for iter in 0..n_iters {
                let matrix: Vec<Vec<f64>> = (0..k)
                    .map(|i| sample_dirichlet_row(&mut rng, &target.alpha()[i]))
                    .collect();
                if iter >= burn_in {
                    retained.push(matrix);
                }
            }
            retained
        })
        .collect();

    let (sample_mean, sample_stdev) = per_entry_moments(&chains, k);
    let psrf = psrf_per_entry(&chains, k)?;
    let converged = psrf.iter().flatten().all(|v| *v < PSRF_THRESHOLD);

    Ok(GibbsRun {
        chains,
        n_chains,
        n_iters,
        burn_in,
        seed,
        psrf,
        converged,
        sample_mean,
        sample_stdev,
    })
}

fn per_entry_moments(chains: &[Vec<Vec<Vec<f64>>>], k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut mean = vec![vec![0.0; k]; k];
    let mut stdev = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let series: Vec<f64> = chains
                .iter()
                .flat_map(|chain| chain.iter().map(|m| m[i][j]))
                .collect();
            mean[i][j] = stats::mean(&series);
            stdev[i][j] = stats::stdev(&series, Divisor::Sample);
        }
    }
    (mean, stdev)
}

/// Potential scale reduction factors, one per matrix entry.
///
/// This is the facade over the chains stored in a [`GibbsRun`]; the run
/// already carries the same values in `psrf`.
pub fn gelman_rubin(run: &GibbsRun) -> Result<Vec<Vec<f64>>, TransitionError> {
    psrf_per_entry(&run.chains, run.k())
}

fn psrf_per_entry(
    chains: &[Vec<Vec<Vec<f64>>>],
    k: usize,
) -> Result<Vec<Vec<f64>>, TransitionError> {
    if chains.len() < 2 {
        return Err(TransitionError::TooFewChains(chains.len()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 10 {
        return Err(TransitionError::TooFewDraws { needed: 10, got: n });
    }
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let per_chain: Vec<Vec<f64>> = chains
                .iter()
                .map(|chain| chain[..n].iter().map(|m| m[i][j]).collect())
                .collect();
            out[i][j] = psrf_scalar(&per_chain);
        }
    }
    Ok(out)
}

/// PSRF for one scalar across chains of equal length.
pub fn psrf_scalar(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let chain_means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let chain_vars: Vec<f64> = chains
        .iter()
        .map(|c| stats::variance(c, Divisor::Sample))
        .collect();
    let w = stats::mean(&chain_vars);
    let b = n as f64 * stats::variance(&chain_means, Divisor::Sample);
    if w == 0.0 {
        // Degenerate chains: identical constants are trivially converged,
        // distinct constants have diverged as far as possible.
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let n = n as f64;
    let var_plus = (n - 1.0) / n * w + b / n;
    let _ = m;
    (var_plus / w).sqrt()
}

/// Persisted form of the transition posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionMatrixFile {
    pub k: usize,
    pub alpha: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    /// Row-major posterior mean, rounded to 15 significant digits.
    pub mean: Vec<Vec<f64>>,
    pub psrf: Vec<Vec<f64>>,
    pub converged: bool,
}

impl TransitionMatrixFile {
    pub fn new(
        prior: &DirichletPrior,
        counts: &TransitionCounts,
        posterior: &PosteriorTransitionMatrix,
        run: &GibbsRun,
    ) -> Self {
        Self {
            k: prior.k(),
            alpha: prior.alpha().to_vec(),
            counts: counts.counts().to_vec(),
            mean: posterior
                .mean
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| crate::round_sig_digits(*v, 15))
                        .collect()
                })
                .collect(),
            psrf: run.psrf.clone(),
            converged: run.converged,
        }
    }
}
