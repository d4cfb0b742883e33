//! Spectral analysis of a transition matrix: stationary distribution,
//! second-largest eigenvalue modulus, relaxation time, and mixing-time
//! bounds with a point estimate.
//!
//! The bounds assume an irreducible, aperiodic chain and are sharp only for
//! reversible ones, so reversibility is checked (via the detailed-balance
//! residual) rather than assumed, and the summary flags the result.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SpectralError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("row {row} sums to {sum}, not 1 (tolerance {tol})")]
    NotStochastic { row: usize, sum: f64, tol: f64 },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("matrix is reducible: state {0} does not communicate with state 0")]
    Reducible(usize),
    #[error("not aperiodic/irreducible for mixing analysis (second modulus {0})")]
    NotMixing(f64),
    #[error("chain is periodic with period {0}")]
    Periodic(usize),
    #[error("epsilon must be in (0, 1), got {0}")]
    EpsilonOutOfRange(f64),
    #[error("dominant eigenvalue modulus {0} is not 1")]
    DominantNotOne(f64),
    #[error("linear solve failed for the stationary distribution")]
    SolveFailed,
    #[error("stationary distribution residual {0} exceeds 1e-10")]
    ResidualTooLarge(f64),
}

const ROW_SUM_TOL: f64 = 1e-8;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;
const REVERSIBILITY_TOL: f64 = 1e-12;

/// Everything [`mixing_analysis`] computes, in artifact-ready form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Eigenvalue moduli sorted descending; the first is ~1.
    pub eigen_moduli: Vec<f64>,
    /// Second-largest eigenvalue modulus.
    pub slem: f64,
    /// Relaxation time `1 / (1 - slem)`.
    pub t_rel: f64,
    #[serde(rename = "pi")]
    pub stationary: Vec<f64>,
    pub pi_min: f64,
    pub epsilon: f64,
    /// `(t_rel - 1) * ln(1 / 2eps)`; valid for reversible chains.
    pub lower_bound: f64,
    /// `t_rel * (ln(1 / pi_min) / 2 + ln(1 / 2eps))`; valid for reversible chains.
    pub upper_bound: f64,
    /// `ceil(ln(1/eps) / -ln(slem))`, the single-number estimate.
    pub point_estimate: u64,
    pub reversible: bool,
    pub detailed_balance_residual: f64,
}

fn validate_square(p: &DMatrix<f64>) -> Result<usize, SpectralError> {
    if p.nrows() != p.ncols() {
        return Err(SpectralError::NotSquare {
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    Ok(p.nrows())
}

/// Check row sums and entry signs.
pub fn validate_row_stochastic(p: &DMatrix<f64>) -> Result<(), SpectralError> {
    let n = validate_square(p)?;
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let v = p[(i, j)];
            if v < -1e-12 {
                return Err(SpectralError::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(SpectralError::NotStochastic {
                row: i,
                sum,
                tol: ROW_SUM_TOL,
            });
        }
    }
    Ok(())
}

/// Rescale each row to sum exactly to 1.
///
/// Reference matrices transcribed from rounded tables carry row sums off by
/// a few 1e-6; renormalizing makes them usable as exact chain inputs.
pub fn renormalize_rows(p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = p.clone();
    for i in 0..p.nrows() {
        let sum: f64 = p.row(i).iter().sum();
        for j in 0..p.ncols() {
            out[(i, j)] /= sum;
        }
    }
    out
}

fn reachable_from(adjacency: &[Vec<bool>], start: usize) -> Vec<bool> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if adjacency[u][v] && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Irreducibility via reachability on the positive-entry digraph.
pub fn check_irreducible(p: &DMatrix<f64>) -> Result<(), SpectralError> {
    let n = validate_square(p)?;
    let forward: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| p[(i, j)] > 0.0).collect())
        .collect();
    let backward: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| p[(j, i)] > 0.0).collect())
        .collect();
    let down = reachable_from(&forward, 0);
    let up = reachable_from(&backward, 0);
    for s in 0..n {
        if !down[s] || !up[s] {
            return Err(SpectralError::Reducible(s));
        }
    }
    Ok(())
}

/// Period of state 0: gcd of return-time lengths up to `n^2 + 1` steps.
/// Requires irreducibility (then every state shares the period).
pub fn period(p: &DMatrix<f64>) -> Result<usize, SpectralError> {
    let n = validate_square(p)?;
    let adjacency: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| p[(i, j)] > 0.0).collect())
        .collect();
    let mut reach = vec![false; n];
    reach[0] = true;
    let mut g = 0usize;
    for t in 1..=(n * n + 1) {
        let mut next = vec![false; n];
        for u in 0..n {
            if !reach[u] {
                continue;
            }
            for (v, edge) in adjacency[u].iter().enumerate() {
                if *edge {
                    next[v] = true;
                }
            }
        }
        reach = next;
        if reach[0] {
            g = gcd(g, t);
            if g == 1 {
                return Ok(1);
            }
        }
    }
    if g == 0 {
        // No return path found; irreducibility check would have caught this.
        return Err(SpectralError::Reducible(0));
    }
    Ok(g)
}

fn gcd(a: usize, b: usize) -> usize {
    if a == 0 {
        b
    } else {
        gcd(b % a, a)
    }
}

/// Left fixed vector of `P`, normalized to a probability distribution.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>, SpectralError> {
    let n = validate_square(p)?;
    validate_row_stochastic(p)?;
    check_irreducible(p)?;

    // Solve pi (P - I) = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DMatrix::<f64>::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    let solved = a.lu().solve(&b).ok_or(SpectralError::SolveFailed)?;
    let mut pi: Vec<f64> = solved.column(0).iter().copied().collect();
    let total: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= total;
    }

    let residual = stationary_residual(p, &pi);
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(SpectralError::ResidualTooLarge(residual));
    }
    Ok(pi)
}

/// `max_j |(pi P)_j - pi_j|`.
pub fn stationary_residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let n = p.nrows();
    (0..n)
        .map(|j| {
            let projected: f64 = (0..n).map(|i| pi[i] * p[(i, j)]).sum();
            (projected - pi[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// Eigenvalue moduli of `P`, sorted descending.
pub fn eigen_moduli(p: &DMatrix<f64>) -> Result<Vec<f64>, SpectralError> {
    validate_square(p)?;
    let eigenvalues = p.clone().complex_eigenvalues();
    let mut moduli: Vec<f64> = eigenvalues.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    Ok(moduli)
}

/// Second-largest eigenvalue modulus.
///
/// Errors when the second modulus reaches 1, since the chain then has no
/// spectral gap and no finite mixing time.
pub fn slem(p: &DMatrix<f64>) -> Result<f64, SpectralError> {
    validate_row_stochastic(p)?;
    let moduli = eigen_moduli(p)?;
    if (moduli[0] - 1.0).abs() > 1e-8 {
        return Err(SpectralError::DominantNotOne(moduli[0]));
    }
    if moduli.len() < 2 {
        return Ok(0.0);
    }
    let second = moduli[1];
    if second >= 1.0 - 1e-10 {
        return Err(SpectralError::NotMixing(second));
    }
    Ok(second)
}

/// `ceil(ln(1/eps) / -ln(slem))`, clamped to at least one step.
pub fn point_estimate_from_slem(slem: f64, epsilon: f64) -> Result<u64, SpectralError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SpectralError::EpsilonOutOfRange(epsilon));
    }
    if !(0.0..1.0).contains(&slem) {
        return Err(SpectralError::NotMixing(slem));
    }
    if slem == 0.0 {
        return Ok(1);
    }
    let steps = ((1.0 / epsilon).ln() / -slem.ln()).ceil();
    Ok((steps as u64).max(1))
}

/// `max_{i,j} |pi_i P_ij - pi_j P_ji|`.
pub fn detailed_balance_residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let n = p.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let flow = (pi[i] * p[(i, j)] - pi[j] * p[(j, i)]).abs();
            worst = worst.max(flow);
        }
    }
    worst
}

/// Full mixing analysis at threshold `epsilon`.
pub fn mixing_analysis(p: &DMatrix<f64>, epsilon: f64) -> Result<SpectralSummary, SpectralError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SpectralError::EpsilonOutOfRange(epsilon));
    }
    validate_row_stochastic(p)?;
    check_irreducible(p)?;
    let chain_period = period(p)?;
    if chain_period != 1 {
        return Err(SpectralError::Periodic(chain_period));
    }

    let stationary = stationary_distribution(p)?;
    let pi_min = stationary.iter().copied().fold(f64::INFINITY, f64::min);
    let moduli = eigen_moduli(p)?;
    let lambda2 = slem(p)?;
    let t_rel = 1.0 / (1.0 - lambda2);

    let log_half_eps = (1.0 / (2.0 * epsilon)).ln();
    let lower_bound = (t_rel - 1.0) * log_half_eps;
    let upper_bound = t_rel * (0.5 * (1.0 / pi_min).ln() + log_half_eps);
    let point_estimate = point_estimate_from_slem(lambda2, epsilon)?;

    let residual = detailed_balance_residual(p, &stationary);
    Ok(SpectralSummary {
        eigen_moduli: moduli,
        slem: lambda2,
        t_rel,
        stationary,
        pi_min,
        epsilon,
        lower_bound,
        upper_bound,
        point_estimate,
        reversible: residual <= REVERSIBILITY_TOL,
        detailed_balance_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn stationary_symmetric_two_state() {
        let p = mat(&[&[0.9, 0.1], &[0.1, 0.9]]);
        let pi = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stationary_asymmetric_two_state() {
        let p = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let pi = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_rejects_reducible() {
        let p = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            stationary_distribution(&p),
            Err(SpectralError::Reducible(_))
        ));
    }

    #[test]
    fn stationary_rejects_non_stochastic() {
        let p = mat(&[&[0.9, 0.2], &[0.2, 0.8]]);
        assert!(matches!(
            stationary_distribution(&p),
            Err(SpectralError::NotStochastic { row: 0, .. })
        ));
    }

    #[test]
    fn slem_analytic_two_state() {
        let p = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let moduli = eigen_moduli(&p).unwrap();
        assert_abs_diff_eq!(moduli[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moduli[1], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(slem(&p).unwrap(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn slem_identity_has_no_gap() {
        let p = DMatrix::<f64>::identity(3, 3);
        match slem(&p) {
            Err(SpectralError::NotMixing(second)) => assert_abs_diff_eq!(second, 1.0, epsilon = 1e-12),
            other => panic!("expected NotMixing, got {other:?}"),
        }
    }

    #[test]
    fn slem_from_constructed_spectrum() {
        // P = (1/3) J + 0.4 v2 v2' + 0.1 v3 v3' with orthonormal v2, v3 ⊥ 1:
        // doubly stochastic, symmetric, spectrum exactly {1, 0.4, 0.1}.
        let s2 = 2.0f64.sqrt();
        let s6 = 6.0f64.sqrt();
        let v2 = [1.0 / s2, -1.0 / s2, 0.0];
        let v3 = [1.0 / s6, 1.0 / s6, -2.0 / s6];
        let p = DMatrix::from_fn(3, 3, |i, j| {
            1.0 / 3.0 + 0.4 * v2[i] * v2[j] + 0.1 * v3[i] * v3[j]
        });
        validate_row_stochastic(&p).unwrap();
        assert_abs_diff_eq!(slem(&p).unwrap(), 0.4, epsilon = 1e-10);
        let moduli = eigen_moduli(&p).unwrap();
        assert_abs_diff_eq!(moduli[2], 0.1, epsilon = 1e-10);
    }

    #[test]
    fn point_estimates_match_published_slems() {
        assert_eq!(point_estimate_from_slem(0.9584, 0.01).unwrap(), 109);
        assert_eq!(point_estimate_from_slem(0.9277, 0.01).unwrap(), 62);
    }

    #[test]
    fn mixing_two_state_hand_values() {
        let p = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let summary = mixing_analysis(&p, 0.01).unwrap();
        assert_abs_diff_eq!(summary.t_rel, 10.0 / 3.0, epsilon = 1e-12);
        assert_eq!(summary.point_estimate, 13);
        assert_abs_diff_eq!(summary.lower_bound, 9.12805367933234, epsilon = 1e-10);
        let expected_upper =
            (10.0 / 3.0) * (0.5 * (3.0f64).ln() + 50.0f64.ln());
        assert_abs_diff_eq!(summary.upper_bound, expected_upper, epsilon = 1e-10);
        assert!(summary.lower_bound <= summary.upper_bound);
        assert_abs_diff_eq!(summary.pi_min, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn mixing_rejects_bad_epsilon_and_periodic() {
        let p = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        assert!(matches!(
            mixing_analysis(&p, 0.0),
            Err(SpectralError::EpsilonOutOfRange(_))
        ));
        assert!(matches!(
            mixing_analysis(&p, 1.5),
            Err(SpectralError::EpsilonOutOfRange(_))
        ));
        let flip = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(
            mixing_analysis(&flip, 0.01),
            Err(SpectralError::Periodic(2))
        ));
    }

    #[test]
    fn reversibility_flags() {
        // Symmetric chain: uniform stationary, detailed balance exact.
        let sym = mat(&[&[0.9, 0.1], &[0.1, 0.9]]);
        let s = mixing_analysis(&sym, 0.01).unwrap();
        assert!(s.reversible);
        // Every 2-state chain is reversible; use a rotating 3-state chain.
        let rotating = mat(&[
            &[0.1, 0.8, 0.1],
            &[0.1, 0.1, 0.8],
            &[0.8, 0.1, 0.1],
        ]);
        let s = mixing_analysis(&rotating, 0.01).unwrap();
        assert!(!s.reversible);
        assert!(s.detailed_balance_residual > 1e-3);
    }

    #[test]
    fn renormalize_fixes_rounded_rows() {
        let p = mat(&[&[0.900001, 0.1], &[0.2, 0.799999]]);
        let fixed = renormalize_rows(&p);
        for i in 0..2 {
            let sum: f64 = fixed.row(i).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn point_estimate_clamps_to_one_step() {
        // A zero-gap-free chain (slem 0) mixes immediately.
        assert_eq!(point_estimate_from_slem(0.0, 0.01).unwrap(), 1);
        assert!(point_estimate_from_slem(0.5, 0.0).is_err());
        assert!(point_estimate_from_slem(1.0, 0.01).is_err());
    }

    #[test]
    fn reversible_chain_has_real_spectrum_after_similarity_transform() {
        // Metropolis chain: reversible with respect to pi by construction.
        let pi = [0.5f64, 0.3, 0.2];
        let n = pi.len();
        let mut p = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j {
                    p[(i, j)] = (pi[j] / pi[i]).min(1.0) / n as f64;
                    off += p[(i, j)];
                }
            }
            p[(i, i)] = 1.0 - off;
        }
        let summary = mixing_analysis(&p, 0.01).unwrap();
        assert!(summary.reversible);

        // D^{1/2} P D^{-1/2} is symmetric for reversible P; its (real)
        // eigenvalues are P's and sit in [-1, 1] with the largest equal 1.
        let sym = DMatrix::from_fn(n, n, |i, j| {
            (summary.stationary[i] / summary.stationary[j]).sqrt() * p[(i, j)]
        });
        let asym = (&sym - sym.transpose()).abs().max();
        assert!(asym < 1e-12, "similarity transform not symmetric: {asym}");
        let mut eigenvalues: Vec<f64> = nalgebra::SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigenvalues.sort_by(f64::total_cmp);
        for e in &eigenvalues {
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(e), "eigenvalue {e}");
        }
        assert_abs_diff_eq!(eigenvalues[n - 1], 1.0, epsilon = 1e-12);
        // Moduli agree with the general-solver path.
        let moduli = eigen_moduli(&p).unwrap();
        let mut abs_eigs: Vec<f64> = eigenvalues.iter().map(|e| e.abs()).collect();
        abs_eigs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in abs_eigs.iter().zip(&moduli) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn period_of_aperiodic_chain_is_one() {
        let p = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(period(&p).unwrap(), 1);
    }

    #[test]
    fn period_of_three_cycle_is_three() {
        let p = mat(&[
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[1.0, 0.0, 0.0],
        ]);
        assert_eq!(period(&p).unwrap(), 3);
    }
}
