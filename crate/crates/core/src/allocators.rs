//! Static allocation solvers over an estimated covariance matrix: equal
//! weight, minimum variance (closed form and long-only), maximum
//! diversification, and equal risk contribution.
//!
//! Long-only minimum variance runs projected gradient descent on the simplex
//! followed by an exact active-set polish, so interior solutions match the
//! closed form to machine precision. Maximum diversification reduces to
//! minimum variance on the correlation matrix (substituting `y_i = w_i
//! sigma_i` makes the diversification ratio scale-free), and ERC solves the
//! log-barrier fixed point `y_i (Sigma y)_i = c` by cyclic coordinate descent
//! with a Newton polish.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::ReturnSeries;

#[derive(Error, Debug)]
pub enum AllocationError {
    #[error("asset count must be >= 1")]
    NoAssets,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix asymmetric: |S - S'| = {0} exceeds tolerance")]
    Asymmetric(f64),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("degenerate zero-variance asset at index {0}")]
    ZeroVarianceAsset(usize),
    #[error("matrix is not positive semidefinite: min eigenvalue {0}")]
    NotPsd(f64),
    #[error("matrix is singular or indefinite; cannot invert")]
    SingularOrIndefinite,
    #[error("weights sum to {0}, not 1")]
    WeightsNotNormalized(f64),
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("solver did not converge: {context} (residual {residual})")]
    NonConvergence { context: String, residual: f64 },
    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
}

/// Allocation method tags, in the canonical order used for tie-breaking and
/// reporting: ERC, MinVar, MaxDiv, Equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ERC")]
    Erc,
    MinVar,
    MaxDiv,
    Equal,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erc, Method::MinVar, Method::MaxDiv, Method::Equal];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Erc => "ERC",
            Method::MinVar => "MinVar",
            Method::MaxDiv => "MaxDiv",
            Method::Equal => "Equal",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Symmetric covariance matrix with per-asset volatilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    sigma: DMatrix<f64>,
    asset_vols: Vec<f64>,
    min_eigenvalue: f64,
}

impl CovarianceMatrix {
    /// Strict constructor: validates symmetry, positive diagonal, and
    /// positive semidefiniteness (up to `-1e-10` scaled noise).
    pub fn new(sigma: DMatrix<f64>) -> Result<Self, AllocationError> {
        let out = Self::new_allowing_indefinite(sigma)?;
        let scale = out
            .sigma
            .diagonal()
            .iter()
            .fold(1.0f64, |acc, d| acc.max(*d));
        if out.min_eigenvalue < -1e-10 * scale {
            return Err(AllocationError::NotPsd(out.min_eigenvalue));
        }
        Ok(out)
    }

    /// Lenient constructor for stress inputs: validates shape, symmetry, and
    /// positive diagonal but lets indefinite matrices through. Solvers that
    /// require PSD still reject them.
    pub fn new_allowing_indefinite(sigma: DMatrix<f64>) -> Result<Self, AllocationError> {
        let n = sigma.nrows();
        if n == 0 {
            return Err(AllocationError::NoAssets);
        }
        if sigma.ncols() != n {
            return Err(AllocationError::NotSquare {
                rows: n,
                cols: sigma.ncols(),
            });
        }
        let mut max_abs = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = sigma[(i, j)];
                if !v.is_finite() {
                    return Err(AllocationError::NonFinite { row: i, col: j });
                }
                max_abs = max_abs.max(v.abs());
            }
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > 1e-12 * max_abs.max(1.0) {
            return Err(AllocationError::Asymmetric(asym));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let mut asset_vols = Vec::with_capacity(n);
        for i in 0..n {
            let d = sigma[(i, i)];
            if d <= 0.0 {
                return Err(AllocationError::ZeroVarianceAsset(i));
            }
            asset_vols.push(d.sqrt());
        }
        let min_eigenvalue = SymmetricEigen::new(sigma.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            sigma,
            asset_vols,
            min_eigenvalue,
        })
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn asset_vols(&self) -> &[f64] {
        &self.asset_vols
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Correlation matrix `R[i][j] = S[i][j] / (vol_i vol_j)`.
    pub fn correlation(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            self.sigma[(i, j)] / (self.asset_vols[i] * self.asset_vols[j])
        })
    }
}

/// Portfolio weights with the method that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
    method_tag: Method,
}

impl WeightVector {
    /// Long-only weights: sum to 1 within 1e-8, every entry >= -1e-10.
    pub fn long_only(weights: Vec<f64>, method_tag: Method) -> Result<Self, AllocationError> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(AllocationError::WeightsNotNormalized(sum));
        }
        for (index, w) in weights.iter().enumerate() {
            if *w < -1e-10 {
                return Err(AllocationError::NegativeWeight {
                    index,
                    value: *w,
                });
            }
        }
        Ok(Self {
            weights,
            method_tag,
        })
    }

    /// Sum-to-one weights that may go negative (unconstrained closed form).
    pub fn sum_to_one(weights: Vec<f64>, method_tag: Method) -> Result<Self, AllocationError> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(AllocationError::WeightsNotNormalized(sum));
        }
        Ok(Self {
            weights,
            method_tag,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn method(&self) -> Method {
        self.method_tag
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Solver telemetry attached to every numeric allocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationDiagnostics {
    pub objective_value: f64,
    pub iterations: usize,
    /// Worst violation of the simplex constraints.
    pub constraint_residual: f64,
    /// Per-asset total risk contributions `w_i (S w)_i`.
    pub trc: Vec<f64>,
    /// Diversification ratio at the returned weights.
    pub dr: f64,
    /// Diagonal regularization added before inversion, 0 when none was needed.
    pub diagonal_jitter: f64,
}

/// `1/n` in every coordinate.
pub fn equal_weight(n: usize) -> Result<WeightVector, AllocationError> {
    if n == 0 {
        return Err(AllocationError::NoAssets);
    }
    WeightVector::long_only(vec![1.0 / n as f64; n], Method::Equal)
}

fn dvec(weights: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(weights)
}

/// `w' S w`.
pub fn portfolio_variance(cov: &CovarianceMatrix, weights: &[f64]) -> f64 {
    let w = dvec(weights);
    (w.transpose() * cov.sigma() * &w)[(0, 0)]
}

/// Weighted average volatility over portfolio volatility.
pub fn diversification_ratio(cov: &CovarianceMatrix, weights: &[f64]) -> f64 {
    let avg_vol: f64 = weights
        .iter()
        .zip(cov.asset_vols())
        .map(|(w, s)| w * s)
        .sum();
    avg_vol / portfolio_variance(cov, weights).sqrt()
}

/// `TRC_i = w_i (S w)_i`.
pub fn total_risk_contributions(cov: &CovarianceMatrix, weights: &[f64]) -> Vec<f64> {
    let sw = cov.sigma() * dvec(weights);
    weights.iter().zip(sw.iter()).map(|(w, s)| w * s).collect()
}

fn simplex_residual(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let neg = weights.iter().fold(0.0f64, |acc, w| acc.max(-w));
    (sum - 1.0).abs().max(neg)
}

/// Unconstrained (sum-to-one only) minimum variance: `w = S^-1 1 / (1' S^-1 1)`.
pub fn min_variance_closed_form(cov: &CovarianceMatrix) -> Result<WeightVector, AllocationError> {
    let n = cov.n();
    let chol =
        Cholesky::new(cov.sigma().clone()).ok_or(AllocationError::SingularOrIndefinite)?;
    let ones = DVector::from_element(n, 1.0);
    let x = chol.solve(&ones);
    let total: f64 = x.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(AllocationError::SingularOrIndefinite);
    }
    WeightVector::sum_to_one(x.iter().map(|v| v / total).collect(), Method::MinVar)
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j as f64 + 1.0);
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    // One exact renormalization pass over the support kills rounding drift.
    let support_sum: f64 = out.iter().sum();
    if support_sum > 0.0 {
        for w in out.iter_mut() {
            *w /= support_sum;
        }
    } else {
        out = vec![1.0 / n as f64; n];
    }
    out
}

struct QpResult {
    weights: Vec<f64>,
    iterations: usize,
    diagonal_jitter: f64,
}

/// Minimize `w' A w` over the simplex: projected gradient from equal weight,
/// then an exact restricted solve on the final support when `A` is PD there.
fn simplex_qp(a: &DMatrix<f64>) -> Result<QpResult, AllocationError> {
    let n = a.nrows();
    let eigen = SymmetricEigen::new(a.clone());
    let max_abs_eig = eigen
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.abs()));
    let mut w = vec![1.0 / n as f64; n];
    let mut iterations = 0usize;
    if max_abs_eig > 0.0 {
        let step = 1.0 / (2.0 * max_abs_eig);
        let max_iters = 200_000;
        for _ in 0..max_iters {
            iterations += 1;
            let grad = a * dvec(&w) * 2.0;
            let candidate: Vec<f64> = w
                .iter()
                .zip(grad.iter())
                .map(|(wi, gi)| wi - step * gi)
                .collect();
            let next = project_simplex(&candidate);
            let delta = w
                .iter()
                .zip(&next)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            w = next;
            if delta < 1e-15 {
                break;
            }
        }
    }

    let mut jitter = 0.0;
    if let Some(polished) = polish_active_set(a, &w, &mut jitter) {
        let obj_pgd = quad_form(a, &w);
        let obj_pol = quad_form(a, &polished);
        if obj_pol <= obj_pgd + 1e-12 * max_abs_eig.max(1.0) {
            w = polished;
        }
    }

    Ok(QpResult {
        weights: w,
        iterations,
        diagonal_jitter: jitter,
    })
}

fn quad_form(a: &DMatrix<f64>, w: &[f64]) -> f64 {
    let v = dvec(w);
    (v.transpose() * a * &v)[(0, 0)]
}

/// Active-set refinement: solve the equality-constrained QP restricted to the
/// support, dropping negative weights and re-adding KKT violators.
fn polish_active_set(a: &DMatrix<f64>, w: &[f64], jitter_out: &mut f64) -> Option<Vec<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
    let mut support: Vec<usize> = (0..n).filter(|i| w[*i] > 1e-9).collect();
    if support.is_empty() {
        return None;
    }
    for _ in 0..(4 * n + 8) {
        let m = support.len();
        let restricted = DMatrix::from_fn(m, m, |i, j| a[(support[i], support[j])]);
        let restricted = match Cholesky::new(restricted.clone()) {
            Some(c) => c,
            None => {
                // Near-singular restriction: retry once with a small ridge.
                let ridge = 1e-10 * restricted.trace() / m as f64;
                let jittered = &restricted + DMatrix::identity(m, m) * ridge;
                {
                    let c = Cholesky::new(jittered)?;
                    *jitter_out = ridge;
                    c
                }
            }
        };
        let ones = DVector::from_element(m, 1.0);
        let x = restricted.solve(&ones);
        let total: f64 = x.iter().sum();
        if total == 0.0 || !total.is_finite() {
            return None;
        }
        let ws: Vec<f64> = x.iter().map(|v| v / total).collect();

        if let Some((pos, _)) = ws
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < -1e-12)
            .min_by(|(_, a), (_, b)| a.total_cmp(b))
        {
            if support.len() == 1 {
                return None;
            }
            support.remove(pos);
            continue;
        }

        let mut full = vec![0.0f64; n];
        for (idx, value) in support.iter().zip(&ws) {
            full[*idx] = value.max(0.0);
        }
        let grad = a * dvec(&full) * 2.0;
        let lambda = -support
            .iter()
            .map(|i| grad[*i])
            .sum::<f64>()
            / support.len() as f64;
        let violator = (0..n)
            .filter(|i| !support.contains(i))
            .map(|i| (i, grad[i] + lambda))
            .filter(|(_, slack)| *slack < -1e-9 * scale.max(1.0))
            .min_by(|(_, a), (_, b)| a.total_cmp(b));
        match violator {
            Some((idx, _)) => {
                support.push(idx);
                support.sort_unstable();
            }
            None => return Some(full),
        }
    }
    None
}

/// Long-only minimum variance.
pub fn min_variance_constrained(
    cov: &CovarianceMatrix,
) -> Result<(WeightVector, AllocationDiagnostics), AllocationError> {
    let solved = simplex_qp(cov.sigma())?;
    let weights = solved.weights;
    let residual = simplex_residual(&weights);
    let grad = cov.sigma() * dvec(&weights) * 2.0;
    let kkt = kkt_residual(&weights, grad.as_slice());
    let grad_scale = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
    if kkt > 1e-6 * grad_scale.max(1e-300) || residual > 1e-8 {
        return Err(AllocationError::NonConvergence {
            context: format!("minimum variance KKT residual after {} iterations", solved.iterations),
            residual: kkt.max(residual),
        });
    }
    let diagnostics = AllocationDiagnostics {
        objective_value: portfolio_variance(cov, &weights),
        iterations: solved.iterations,
        constraint_residual: residual,
        trc: total_risk_contributions(cov, &weights),
        dr: diversification_ratio(cov, &weights),
        diagonal_jitter: solved.diagonal_jitter,
    };
    Ok((
        WeightVector::long_only(weights, Method::MinVar)?,
        diagnostics,
    ))
}

/// Stationarity residual for min `w'Aw` on the simplex: the gradient must be
/// constant on the support and no smaller off it.
fn kkt_residual(w: &[f64], grad: &[f64]) -> f64 {
    let support: Vec<usize> = (0..w.len()).filter(|i| w[*i] > 1e-9).collect();
    if support.is_empty() {
        return f64::INFINITY;
    }
    let lambda = support.iter().map(|i| grad[*i]).sum::<f64>() / support.len() as f64;
    let mut residual = 0.0f64;
    for i in 0..w.len() {
        if w[i] > 1e-9 {
            residual = residual.max((grad[i] - lambda).abs());
        } else {
            residual = residual.max((lambda - grad[i]).max(0.0));
        }
    }
    residual
}

/// Long-only maximum diversification.
///
/// With `y_i = w_i sigma_i` the ratio becomes `(sum y) / sqrt(y' R y)`, which
/// is scale-free in `y`, so maximizing it over the simplex is exactly minimum
/// variance on the correlation matrix `R`.
pub fn max_diversification(
    cov: &CovarianceMatrix,
) -> Result<(WeightVector, AllocationDiagnostics), AllocationError> {
    let correlation = cov.correlation();
    let solved = simplex_qp(&correlation)?;
    let unscaled: Vec<f64> = solved
        .weights
        .iter()
        .zip(cov.asset_vols())
        .map(|(y, s)| y / s)
        .collect();
    let total: f64 = unscaled.iter().sum();
    let weights: Vec<f64> = unscaled.iter().map(|v| v / total).collect();
    let residual = simplex_residual(&weights);
    if residual > 1e-8 {
        return Err(AllocationError::NonConvergence {
            context: "maximum diversification rescaling".to_string(),
            residual,
        });
    }
    let dr = diversification_ratio(cov, &weights);
    let diagnostics = AllocationDiagnostics {
        objective_value: dr,
        iterations: solved.iterations,
        constraint_residual: residual,
        trc: total_risk_contributions(cov, &weights),
        dr,
        diagonal_jitter: solved.diagonal_jitter,
    };
    Ok((
        WeightVector::long_only(weights, Method::MaxDiv)?,
        diagnostics,
    ))
}

/// Long-only equal risk contribution.
///
/// Solves the fixed point `y_i (Sigma y)_i = c` for `y > 0` (the stationarity
/// condition of `y'Sy/2 - c sum ln y`): cyclic coordinate descent to get into
/// the basin, Newton to machine precision, then `w = y / sum y`.
pub fn erc(
    cov: &CovarianceMatrix,
) -> Result<(WeightVector, AllocationDiagnostics), AllocationError> {
    let n = cov.n();
    let scale = cov.sigma().diagonal().iter().fold(0.0f64, |a, d| a.max(*d));
    if cov.min_eigenvalue() < -1e-10 * scale.max(1.0) {
        return Err(AllocationError::NotPsd(cov.min_eigenvalue()));
    }
    let sigma = cov.sigma();
    let mut y = vec![1.0 / n as f64; n];
    // Target contribution sized so the initial iterate is already close.
    let c = quad_form(sigma, &y) / n as f64;
    if !(c > 0.0) {
        return Err(AllocationError::NotPsd(cov.min_eigenvalue()));
    }

    let mut iterations = 0usize;
    for _ in 0..2000 {
        iterations += 1;
        let mut max_rel_step = 0.0f64;
        for i in 0..n {
            let sy_i: f64 = (0..n).map(|j| sigma[(i, j)] * y[j]).sum();
            let b = sy_i - sigma[(i, i)] * y[i];
            let disc = b * b + 4.0 * sigma[(i, i)] * c;
            let fresh = (-b + disc.sqrt()) / (2.0 * sigma[(i, i)]);
            max_rel_step = max_rel_step.max((fresh - y[i]).abs() / y[i].max(1e-300));
            y[i] = fresh;
        }
        if max_rel_step < 1e-13 {
            break;
        }
    }

    // Newton on g_i(y) = y_i (Sigma y)_i - c with positivity damping.
    for _ in 0..100 {
        let sy = sigma * dvec(&y);
        let g: Vec<f64> = y.iter().zip(sy.iter()).map(|(yi, si)| yi * si - c).collect();
        let g_norm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if g_norm <= 1e-14 * c {
            break;
        }
        iterations += 1;
        let jac = DMatrix::from_fn(n, n, |i, j| {
            let mut v = y[i] * sigma[(i, j)];
            if i == j {
                v += sy[i];
            }
            v
        });
        let delta = match jac.lu().solve(&dvec(&g)) {
            Some(d) => d,
            None => break,
        };
        let mut t = 1.0f64;
        loop {
            let candidate: Vec<f64> = y
                .iter()
                .zip(delta.iter())
                .map(|(yi, di)| yi - t * di)
                .collect();
            if candidate.iter().all(|v| *v > 0.0) {
                let sy_c = sigma * dvec(&candidate);
                let g_c = candidate
                    .iter()
                    .zip(sy_c.iter())
                    .map(|(yi, si)| (yi * si - c).abs())
                    .fold(0.0f64, f64::max);
                if g_c < g_norm || t < 1e-8 {
                    y = candidate;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                break;
            }
        }
    }

    let total: f64 = y.iter().sum();
    let weights: Vec<f64> = y.iter().map(|v| v / total).collect();
    let trc = total_risk_contributions(cov, &weights);
    let variance = portfolio_variance(cov, &weights);
    let spread = trc.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v))
        - trc.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if spread >= 1e-8 * variance {
        return Err(AllocationError::NonConvergence {
            context: format!("ERC risk-contribution spread after {iterations} iterations"),
            residual: spread / variance,
        });
    }
    let mean_trc = trc.iter().sum::<f64>() / n as f64;
    let objective: f64 = trc.iter().map(|t| (t - mean_trc) * (t - mean_trc)).sum();
    let diagnostics = AllocationDiagnostics {
        objective_value: objective,
        iterations,
        constraint_residual: simplex_residual(&weights),
        trc,
        dr: diversification_ratio(cov, &weights),
        diagonal_jitter: 0.0,
    };
    Ok((WeightVector::long_only(weights, Method::Erc)?, diagnostics))
}

/// Sample covariance (divisor n - 1) over the selected rows, symmetrized.
pub fn estimate_covariance(
    returns: &ReturnSeries,
    rows: Option<&[usize]>,
) -> Result<CovarianceMatrix, AllocationError> {
    let n_assets = returns.n_assets();
    let all_rows = returns.rows();
    let selected: Vec<usize> = match rows {
        Some(idx) => {
            for i in idx {
                if *i >= all_rows.len() {
                    return Err(AllocationError::RowOutOfRange {
                        index: *i,
                        rows: all_rows.len(),
                    });
                }
            }
            idx.to_vec()
        }
        None => (0..all_rows.len()).collect(),
    };
    let m = selected.len();
    if m < n_assets + 1 {
        return Err(AllocationError::TooFewRows {
            needed: n_assets + 1,
            got: m,
        });
    }

    let mut means = vec![0.0f64; n_assets];
    for &r in &selected {
        for (acc, v) in means.iter_mut().zip(&all_rows[r]) {
            *acc += v;
        }
    }
    for acc in means.iter_mut() {
        *acc /= m as f64;
    }

    let mut sigma = DMatrix::<f64>::zeros(n_assets, n_assets);
    for &r in &selected {
        let row = &all_rows[r];
        for i in 0..n_assets {
            let di = row[i] - means[i];
            for j in i..n_assets {
                sigma[(i, j)] += di * (row[j] - means[j]);
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..n_assets {
        for j in i..n_assets {
            sigma[(i, j)] /= denom;
            sigma[(j, i)] = sigma[(i, j)];
        }
    }
    CovarianceMatrix::new(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn cov_from(rows: &[&[f64]]) -> CovarianceMatrix {
        let n = rows.len();
        CovarianceMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> CovarianceMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
        CovarianceMatrix::new(sigma).unwrap()
    }

    #[test]
    fn equal_weight_examples() {
        assert_eq!(equal_weight(4).unwrap().weights(), &[0.25; 4]);
        assert_eq!(equal_weight(1).unwrap().weights(), &[1.0]);
        let w = equal_weight(11).unwrap();
        for v in w.weights() {
            assert_abs_diff_eq!(*v, 1.0 / 11.0, epsilon = 1e-15);
        }
        assert!(matches!(equal_weight(0), Err(AllocationError::NoAssets)));
    }

    #[test]
    fn closed_form_identity_and_diagonal() {
        let identity = cov_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let w = min_variance_closed_form(&identity).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 0.5, epsilon = 1e-14);

        let diagonal = cov_from(&[&[1.0, 0.0], &[0.0, 4.0]]);
        let w = min_variance_closed_form(&diagonal).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(w.weights()[1], 0.2, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cov = random_spd(5, &mut rng);
        let w = min_variance_closed_form(&cov).unwrap();
        let objective = portfolio_variance(&cov, w.weights());
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..5).map(|_| -rng.gen::<f64>().ln()).collect();
            let total: f64 = raw.iter().sum();
            let probe: Vec<f64> = raw.iter().map(|v| v / total).collect();
            assert!(objective <= portfolio_variance(&cov, &probe) + 1e-12);
        }
    }

    #[test]
    fn closed_form_rejects_singular() {
        let singular = CovarianceMatrix::new_allowing_indefinite(DMatrix::from_fn(2, 2, |_, _| 1.0))
            .unwrap();
        assert!(matches!(
            min_variance_closed_form(&singular),
            Err(AllocationError::SingularOrIndefinite)
        ));
    }

    #[test]
    fn constrained_matches_closed_form_when_interior() {
        let diagonal = cov_from(&[&[1.0, 0.0], &[0.0, 4.0]]);
        let (w, diag) = min_variance_constrained(&diagonal).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 0.8, epsilon = 1e-10);
        assert_abs_diff_eq!(w.weights()[1], 0.2, epsilon = 1e-10);
        assert!(diag.constraint_residual < 1e-8);
    }

    #[test]
    fn constrained_hits_vertex_when_closed_form_is_negative() {
        // Indefinite on purpose: the quadratic is concave along the simplex,
        // so the long-only optimum sits at a vertex. Grid-search verified.
        let sigma =
            CovarianceMatrix::new_allowing_indefinite(DMatrix::from_row_slice(2, 2, &[
                1.0, 0.9, 0.9, 0.5,
            ]))
            .unwrap();
        let closed = min_variance_closed_form(&sigma);
        assert!(matches!(closed, Err(AllocationError::SingularOrIndefinite)));

        let (w, _) = min_variance_constrained(&sigma).unwrap();

        let mut best_w1 = 0.0;
        let mut best_obj = f64::INFINITY;
        for step in 0..=1_000_000u64 {
            let w1 = step as f64 * 1e-6;
            let probe = [w1, 1.0 - w1];
            let obj = portfolio_variance(&sigma, &probe);
            if obj < best_obj {
                best_obj = obj;
                best_w1 = w1;
            }
        }
        assert_abs_diff_eq!(best_w1, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w.weights()[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w.weights()[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn constrained_equals_closed_form_on_random_feasible_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut feasible_seen = 0;
        for _ in 0..40 {
            let n = rng.gen_range(2..7);
            // Diagonal dominance keeps most closed forms non-negative.
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.2..0.2));
            let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 1.0;
            let cov = CovarianceMatrix::new(sigma).unwrap();
            let closed = min_variance_closed_form(&cov).unwrap();
            if closed.weights().iter().all(|w| *w >= 0.0) {
                feasible_seen += 1;
                let (constrained, _) = min_variance_constrained(&cov).unwrap();
                for (a, b) in constrained.weights().iter().zip(closed.weights()) {
                    assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
                }
            }
        }
        assert!(feasible_seen > 10, "only {feasible_seen} feasible instances");
    }

    #[test]
    fn max_div_symmetric_case() {
        let n = 4;
        let cov = CovarianceMatrix::new(DMatrix::<f64>::identity(n, n) * 0.04).unwrap();
        let (w, diag) = max_diversification(&cov).unwrap();
        for v in w.weights() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(diag.dr, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn max_div_diagonal_is_inverse_vol() {
        let cov = cov_from(&[
            &[0.01, 0.0, 0.0],
            &[0.0, 0.04, 0.0],
            &[0.0, 0.0, 0.09],
        ]);
        let (w, diag) = max_diversification(&cov).unwrap();
        let inv: [f64; 3] = [1.0 / 0.1, 1.0 / 0.2, 1.0 / 0.3];
        let total: f64 = inv.iter().sum();
        for (got, want) in w.weights().iter().zip(inv.iter().map(|v| v / total)) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(diag.dr, 3f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn max_div_perfect_correlation_is_flat() {
        let cov = cov_from(&[&[0.04, 0.06], &[0.06, 0.09]]); // rho = 1
        let (w, diag) = max_diversification(&cov).unwrap();
        assert_abs_diff_eq!(diag.dr, 1.0, epsilon = 1e-10);
        // Every feasible portfolio has DR 1 when correlation is perfect.
        for probe in [[0.3, 0.7], [0.9, 0.1], [0.5, 0.5]] {
            assert_abs_diff_eq!(diversification_ratio(&cov, &probe), 1.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(w.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn erc_diagonal_closed_form() {
        let cov = cov_from(&[&[1.0, 0.0], &[0.0, 4.0]]);
        let (w, _) = erc(&cov).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(w.weights()[1], 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn erc_scaled_identity_is_equal_weight() {
        let cov = CovarianceMatrix::new(DMatrix::<f64>::identity(3, 3) * 0.7).unwrap();
        let (w, diag) = erc(&cov).unwrap();
        for v in w.weights() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
        let first = diag.trc[0];
        for t in &diag.trc {
            assert_abs_diff_eq!(*t, first, epsilon = 1e-15);
        }
    }

    #[test]
    fn erc_random_spd_contributions_are_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_spd(6, &mut rng);
        let (_, diag) = erc(&cov).unwrap();
        let max = diag.trc.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
        let min = diag.trc.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        assert!((max - min) / max < 1e-6, "spread {}", (max - min) / max);
        assert!(diag.objective_value < 1e-12);
    }

    #[test]
    fn covariance_estimation_perfect_correlation() {
        let dates: Vec<NaiveDate> = (0..5)
            .map(|i| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i))
            .collect();
        // Second column is exactly 2x the first: correlation 1.
        let base = [0.01, -0.02, 0.005, 0.015, -0.01];
        let rows: Vec<Vec<f64>> = base.iter().map(|r| vec![*r, 2.0 * r]).collect();
        let returns =
            ReturnSeries::new(dates, vec!["A".into(), "B".into()], rows).unwrap();
        let cov = estimate_covariance(&returns, None).unwrap();
        let s = cov.sigma();
        assert_abs_diff_eq!(
            s[(0, 1)],
            cov.asset_vols()[0] * cov.asset_vols()[1],
            epsilon = 1e-15
        );
    }

    #[test]
    fn covariance_estimation_rejects_constant_column() {
        let dates: Vec<NaiveDate> = (0..5)
            .map(|i| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i))
            .collect();
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![0.01 * i as f64, 0.0]).collect();
        let returns =
            ReturnSeries::new(dates, vec!["A".into(), "B".into()], rows).unwrap();
        assert!(matches!(
            estimate_covariance(&returns, None),
            Err(AllocationError::ZeroVarianceAsset(1))
        ));
    }

    #[test]
    fn covariance_estimation_needs_enough_rows() {
        let dates: Vec<NaiveDate> = (0..2)
            .map(|i| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i))
            .collect();
        let rows = vec![vec![0.01, 0.02], vec![-0.01, 0.03]];
        let returns =
            ReturnSeries::new(dates, vec!["A".into(), "B".into()], rows).unwrap();
        assert!(matches!(
            estimate_covariance(&returns, None),
            Err(AllocationError::TooFewRows { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn covariance_row_subset() {
        let dates: Vec<NaiveDate> = (0..8)
            .map(|i| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02)])
            .collect();
        let returns =
            ReturnSeries::new(dates, vec!["A".into(), "B".into()], rows.clone()).unwrap();
        let subset = [0usize, 2, 4, 6];
        let cov = estimate_covariance(&returns, Some(&subset)).unwrap();
        // Two-pass reference on the same subset.
        let m = subset.len() as f64;
        let mean0: f64 = subset.iter().map(|r| rows[*r][0]).sum::<f64>() / m;
        let mean1: f64 = subset.iter().map(|r| rows[*r][1]).sum::<f64>() / m;
        let expected: f64 = subset
            .iter()
            .map(|r| (rows[*r][0] - mean0) * (rows[*r][1] - mean1))
            .sum::<f64>()
            / (m - 1.0);
        assert_abs_diff_eq!(cov.sigma()[(0, 1)], expected, epsilon = 1e-15);
        assert!(matches!(
            estimate_covariance(&returns, Some(&[9])),
            Err(AllocationError::RowOutOfRange { index: 9, rows: 8 })
        ));
    }

    #[test]
    fn scale_invariance_of_solvers() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cov = random_spd(4, &mut rng);
        let scaled = CovarianceMatrix::new(cov.sigma() * 1e-4).unwrap();
        let (a, _) = min_variance_constrained(&cov).unwrap();
        let (b, _) = min_variance_constrained(&scaled).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-8);
        }
        let (a, _) = max_diversification(&cov).unwrap();
        let (b, _) = max_diversification(&scaled).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-8);
        }
        let (a, _) = erc(&cov).unwrap();
        let (b, _) = erc(&scaled).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-8);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let cov = random_spd(4, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let permuted = CovarianceMatrix::new(DMatrix::from_fn(4, 4, |i, j| {
            cov.sigma()[(perm[i], perm[j])]
        }))
        .unwrap();
        for solver in [min_variance_constrained, max_diversification, erc] {
            let (w, _) = solver(&cov).unwrap();
            let (wp, _) = solver(&permuted).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(wp.weights()[i], w.weights()[perm[i]], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn dr_at_least_one_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..25 {
            let cov = random_spd(5, &mut rng);
            let raw: Vec<f64> = (0..5).map(|_| -rng.gen::<f64>().ln()).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            assert!(diversification_ratio(&cov, &w) >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn weight_vector_validation() {
        assert!(matches!(
            WeightVector::long_only(vec![0.6, 0.6], Method::Equal),
            Err(AllocationError::WeightsNotNormalized(_))
        ));
        assert!(matches!(
            WeightVector::long_only(vec![1.2, -0.2], Method::Equal),
            Err(AllocationError::NegativeWeight { index: 1, .. })
        ));
        assert!(WeightVector::sum_to_one(vec![1.2, -0.2], Method::MinVar).is_ok());
    }

    #[test]
    fn covariance_matrix_validation() {
        assert!(matches!(
            CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])),
            Err(AllocationError::Asymmetric(_))
        ));
        assert!(matches!(
            CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 0.5])),
            Err(AllocationError::NotPsd(_))
        ));
        assert!(matches!(
            CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])),
            Err(AllocationError::ZeroVarianceAsset(0))
        ));
    }
}
