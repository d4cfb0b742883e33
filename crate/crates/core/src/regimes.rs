//! K-means segmentation of the volatility series into market states.
//!
//! States are canonically ordered by ascending centroid, so state 1 is always
//! the lowest-volatility regime. Labels are 1-based throughout.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::VolatilitySeries;

#[derive(Error, Debug)]
pub enum RegimeError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need at least {k} distinct values, got {distinct}")]
    TooFewDistinctValues { k: usize, distinct: usize },
    #[error("non-finite input value at index {0}")]
    NonFinite(usize),
    #[error("empty input")]
    EmptyInput,
}

/// K-means settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when no centroid moves more than this between iterations.
    pub tol: f64,
    pub seed: u64,
    /// Independent random restarts; the lowest-WCSS fit wins.
    pub n_init: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 10,
            max_iters: 300,
            tol: 1e-12,
            seed: 0,
            n_init: 10,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), RegimeError> {
        if self.k < 1 {
            return Err(RegimeError::InvalidConfig("k must be >= 1".into()));
        }
        if self.max_iters < 1 {
            return Err(RegimeError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(RegimeError::InvalidConfig("tol must be > 0".into()));
        }
        if self.n_init < 1 {
            return Err(RegimeError::InvalidConfig("n_init must be >= 1".into()));
        }
        Ok(())
    }
}

/// A fitted segmentation: centroids sorted ascending plus per-day labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeModel {
    /// Strictly increasing after canonical relabeling.
    pub centroids: Vec<f64>,
    /// State per observation, in `1..=k`.
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares at the returned fit.
    pub wcss: f64,
    pub iterations_run: usize,
    /// WCSS after each assignment step, non-increasing by construction.
    pub wcss_trace: Vec<f64>,
}

impl RegimeModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

/// Persisted form of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeModelFile {
    pub k: usize,
    pub centroids: Vec<f64>,
    pub seed: u64,
    pub wcss: f64,
    pub labels: Vec<(NaiveDate, usize)>,
}

impl RegimeModelFile {
    pub fn new(model: &RegimeModel, vol: &VolatilitySeries, seed: u64) -> Self {
        Self {
            k: model.k(),
            centroids: model.centroids.clone(),
            seed,
            wcss: model.wcss,
            labels: vol
                .dates()
                .iter()
                .copied()
                .zip(model.labels.iter().copied())
                .collect(),
        }
    }
}

/// Within-cluster sum of squares for a given (centroids, labels) pair.
pub fn wcss(values: &[f64], centroids: &[f64], labels: &[usize]) -> f64 {
    values
        .iter()
        .zip(labels)
        .map(|(x, label)| {
            let d = x - centroids[label - 1];
            d * d
        })
        .sum()
}

fn nearest_centroid(centroids: &[f64], x: f64) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = (x - c) * (x - c);
        // strict comparison: ties go to the lower index
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

struct LloydFit {
    centroids: Vec<f64>,
    labels: Vec<usize>, // 0-based during iteration
    wcss: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn lloyd(values: &[f64], init: &[f64], max_iters: usize, tol: f64) -> LloydFit {
    let k = init.len();
    let mut centroids = init.to_vec();
    let mut labels = vec![0usize; values.len()];
    let mut trace = Vec::new();
    let mut iterations = 0usize;

    for _ in 0..max_iters {
        iterations += 1;
        for (i, x) in values.iter().enumerate() {
            labels[i] = nearest_centroid(&centroids, *x);
        }
        trace.push(wcss_zero_based(values, &centroids, &labels));

        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0usize; k];
        for (x, label) in values.iter().zip(&labels) {
            sums[*label] += x;
            counts[*label] += 1;
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                new_centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        // Reseed each empty cluster with the point farthest from its
        // assigned centroid, claiming points so no two clusters collide.
        let mut claimed = vec![false; values.len()];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_idx = 0usize;
            let mut far_d = -1.0f64;
            for (i, x) in values.iter().enumerate() {
                if claimed[i] {
                    continue;
                }
                let d = (x - new_centroids[labels[i]]).abs();
                if d > far_d {
                    far_d = d;
                    far_idx = i;
                }
            }
            claimed[far_idx] = true;
            new_centroids[c] = values[far_idx];
        }

        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        if shift < tol {
            break;
        }
    }

    // Final assignment consistent with the final centroids.
    for (i, x) in values.iter().enumerate() {
        labels[i] = nearest_centroid(&centroids, *x);
    }
    let final_wcss = wcss_zero_based(values, &centroids, &labels);
    trace.push(final_wcss);

    LloydFit {
        centroids,
        labels,
        wcss: final_wcss,
        iterations,
        trace,
    }
}

fn wcss_zero_based(values: &[f64], centroids: &[f64], labels: &[usize]) -> f64 {
    values
        .iter()
        .zip(labels)
        .map(|(x, label)| {
            let d = x - centroids[*label];
            d * d
        })
        .sum()
}

fn canonicalize(fit: LloydFit) -> RegimeModel {
    let k = fit.centroids.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| fit.centroids[*a].total_cmp(&fit.centroids[*b]));
    let mut rank = vec![0usize; k];
    for (new_idx, old_idx) in order.iter().enumerate() {
        rank[*old_idx] = new_idx;
    }
    let centroids: Vec<f64> = order.iter().map(|i| fit.centroids[*i]).collect();
    let labels: Vec<usize> = fit.labels.iter().map(|l| rank[*l] + 1).collect();
    RegimeModel {
        centroids,
        labels,
        wcss: fit.wcss,
        iterations_run: fit.iterations,
        wcss_trace: fit.trace,
    }
}

fn validate_values(values: &[f64], k: usize) -> Result<Vec<f64>, RegimeError> {
    if values.is_empty() {
        return Err(RegimeError::EmptyInput);
    }
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(RegimeError::NonFinite(idx));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(RegimeError::TooFewDistinctValues {
            k,
            distinct: distinct.len(),
        });
    }
    Ok(distinct)
}

/// Fit K-means to a volatility series.
pub fn kmeans_fit(vol: &VolatilitySeries, cfg: &ClusterConfig) -> Result<RegimeModel, RegimeError> {
    kmeans_fit_values(vol.values(), cfg)
}

/// Fit K-means to raw 1-D observations.
///
/// Runs `n_init` Lloyd restarts, each initialized by sampling `k` distinct
/// observed values uniformly with an RNG derived from `(seed, restart)`, and
/// keeps the lowest-WCSS fit (ties go to the lower restart index).
pub fn kmeans_fit_values(values: &[f64], cfg: &ClusterConfig) -> Result<RegimeModel, RegimeError> {
    cfg.validate()?;
    let distinct = validate_values(values, cfg.k)?;

    let fits: Vec<(usize, LloydFit)> = (0..cfg.n_init)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(restart as u64);
            let init: Vec<f64> = distinct
                .choose_multiple(&mut rng, cfg.k)
                .copied()
                .collect();
            (restart, lloyd(values, &init, cfg.max_iters, cfg.tol))
        })
        .collect();

    let best = fits
        .into_iter()
        .min_by(|(ia, fa), (ib, fb)| fa.wcss.total_cmp(&fb.wcss).then(ia.cmp(ib)))
        .map(|(_, fit)| fit)
        .expect("n_init >= 1");
    Ok(canonicalize(best))
}

/// Fit from explicit initial centroids (single Lloyd run, no restarts).
pub fn kmeans_fit_with_init(
    values: &[f64],
    init: &[f64],
    cfg: &ClusterConfig,
) -> Result<RegimeModel, RegimeError> {
    cfg.validate()?;
    if init.len() != cfg.k {
        return Err(RegimeError::InvalidConfig(format!(
            "init has {} centroids for k = {}",
            init.len(),
            cfg.k
        )));
    }
    validate_values(values, cfg.k)?;
    Ok(canonicalize(lloyd(values, init, cfg.max_iters, cfg.tol)))
}

/// Nearest-centroid state for a new observation; ties go to the lower state.
pub fn assign_state(model: &RegimeModel, vol_value: f64) -> Result<usize, RegimeError> {
    if !vol_value.is_finite() {
        return Err(RegimeError::NonFinite(0));
    }
    Ok(nearest_centroid(&model.centroids, vol_value) + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn cfg(k: usize, seed: u64) -> ClusterConfig {
        ClusterConfig {
            k,
            seed,
            ..ClusterConfig::default()
        }
    }

    #[test]
    fn perfectly_separated_two_clusters() {
        let mut values = vec![0.01; 5];
        values.extend(vec![0.10; 5]);
        let model = kmeans_fit_values(&values, &cfg(2, 1)).unwrap();
        assert_abs_diff_eq!(model.centroids[0], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(model.centroids[1], 0.10, epsilon = 1e-15);
        assert_eq!(model.wcss, 0.0);
        assert_eq!(&model.labels[..5], &[1, 1, 1, 1, 1]);
        assert_eq!(&model.labels[5..], &[2, 2, 2, 2, 2]);
    }

    #[test]
    fn k_one_centroid_is_mean() {
        let values = [0.5, 1.5, 2.0, 4.0];
        let model = kmeans_fit_values(&values, &cfg(1, 0)).unwrap();
        let mean = 2.0;
        assert_abs_diff_eq!(model.centroids[0], mean, epsilon = 1e-12);
        let tss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        assert_abs_diff_eq!(model.wcss, tss, epsilon = 1e-12);
    }

    #[test]
    fn wcss_matches_definition() {
        let values: Vec<f64> = (0..60).map(|i| ((i * 37 % 17) as f64) * 0.01).collect();
        let model = kmeans_fit_values(&values, &cfg(4, 7)).unwrap();
        let recomputed = wcss(&values, &model.centroids, &model.labels);
        assert_abs_diff_eq!(model.wcss, recomputed, epsilon = 1e-10);
    }

    #[test]
    fn wcss_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let values: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let model = kmeans_fit_values(&values, &cfg(5, 3)).unwrap();
        for pair in model.wcss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "trace rose: {pair:?}");
        }
    }

    #[test]
    fn idempotent_refit_from_converged_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..120).map(|_| rng.gen_range(0.0..0.2)).collect();
        let model = kmeans_fit_values(&values, &cfg(4, 11)).unwrap();
        let refit = kmeans_fit_with_init(&values, &model.centroids, &cfg(4, 11)).unwrap();
        assert_eq!(refit.iterations_run, 1);
        assert_eq!(refit.labels, model.labels);
        assert_eq!(refit.centroids, model.centroids);
    }

    #[test]
    fn relabeling_is_canonical_under_permuted_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (0..80).map(|_| rng.gen_range(0.0..1.0)).collect();
        let init = [0.1, 0.5, 0.9];
        let permuted = [0.9, 0.1, 0.5];
        let a = kmeans_fit_with_init(&values, &init, &cfg(3, 0)).unwrap();
        let b = kmeans_fit_with_init(&values, &permuted, &cfg(3, 0)).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let values: Vec<f64> = (0..150).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = kmeans_fit_values(&values, &cfg(6, 42)).unwrap();
        let b = kmeans_fit_values(&values, &cfg(6, 42)).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.wcss.to_bits(), b.wcss.to_bits());
    }

    #[test]
    fn too_few_distinct_values() {
        let values = [1.0, 1.0, 2.0];
        let err = kmeans_fit_values(&values, &cfg(3, 0)).unwrap_err();
        assert!(matches!(
            err,
            RegimeError::TooFewDistinctValues { k: 3, distinct: 2 }
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let values = [1.0, f64::NAN];
        assert!(matches!(
            kmeans_fit_values(&values, &cfg(1, 0)),
            Err(RegimeError::NonFinite(1))
        ));
    }

    #[test]
    fn assign_nearest_and_tie_break() {
        let model = RegimeModel {
            centroids: vec![0.01, 0.10],
            labels: vec![],
            wcss: 0.0,
            iterations_run: 1,
            wcss_trace: vec![],
        };
        assert_eq!(assign_state(&model, 0.02).unwrap(), 1);
        // Exactly representable midpoint so the distances tie bit-for-bit;
        // the tie goes to the lower state.
        let tie_model = RegimeModel {
            centroids: vec![0.25, 0.75],
            labels: vec![],
            wcss: 0.0,
            iterations_run: 1,
            wcss_trace: vec![],
        };
        assert_eq!(assign_state(&tie_model, 0.5).unwrap(), 1);
        assert!(assign_state(&model, f64::INFINITY).is_err());
    }

    #[test]
    fn training_points_map_back_to_their_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let values: Vec<f64> = (0..90).map(|_| rng.gen_range(0.0..1.0)).collect();
        let model = kmeans_fit_values(&values, &cfg(4, 2)).unwrap();
        for (x, label) in values.iter().zip(&model.labels) {
            assert_eq!(assign_state(&model, *x).unwrap(), *label);
        }
    }

    #[test]
    fn no_empty_clusters_in_returned_model() {
        // A configuration that tends to strand a centroid: heavy duplicate mass.
        let mut values = vec![0.0; 40];
        values.extend([1.0, 1.001, 1.002, 5.0]);
        let model = kmeans_fit_values(&values, &cfg(3, 8)).unwrap();
        let mut seen = [false; 3];
        for l in &model.labels {
            seen[*l - 1] = true;
        }
        assert!(seen.iter().all(|s| *s), "empty cluster: {:?}", model.centroids);
    }
}
