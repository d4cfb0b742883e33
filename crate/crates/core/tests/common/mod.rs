//! Shared test oracles: independent implementations kept deliberately
//! separate from the production code paths they check.

#![allow(dead_code)]

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use volstate::marketdata::PriceSeries;

/// Exhaustive 1-D K-means oracle: run Lloyd to a fixed point from every
/// k-combination of distinct observed values and keep the best WCSS.
pub fn brute_force_kmeans_wcss(values: &[f64], k: usize) -> f64 {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let n = distinct.len();
    assert!(n >= k);

    let mut best = f64::INFINITY;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let init: Vec<f64> = combo.iter().map(|i| distinct[*i]).collect();
        let wcss = lloyd_fixed_point_wcss(values, &init);
        if wcss < best {
            best = wcss;
        }
        // Advance the combination (lexicographic).
        let mut pos = k;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            if combo[pos] != pos + n - k {
                break;
            }
        }
        if combo[pos] == pos + n - k {
            return best;
        }
        combo[pos] += 1;
        for i in pos + 1..k {
            combo[i] = combo[i - 1] + 1;
        }
    }
}

fn lloyd_fixed_point_wcss(values: &[f64], init: &[f64]) -> f64 {
    let k = init.len();
    let mut centroids = init.to_vec();
    let mut labels = vec![0usize; values.len()];
    for _ in 0..500 {
        for (i, x) in values.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, mu) in centroids.iter().enumerate() {
                let d = (x - mu) * (x - mu);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best;
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (x, l) in values.iter().zip(&labels) {
            sums[*l] += x;
            counts[*l] += 1;
        }
        let mut moved = false;
        for c in 0..k {
            if counts[c] > 0 {
                let fresh = sums[c] / counts[c] as f64;
                if fresh != centroids[c] {
                    moved = true;
                    centroids[c] = fresh;
                }
            }
        }
        if !moved {
            break;
        }
    }
    values
        .iter()
        .zip(&labels)
        .map(|(x, l)| (x - centroids[*l]) * (x - centroids[*l]))
        .sum()
}

/// Second, independent transition counter built on a flat map.
pub fn count_transitions_oracle(labels: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut flat = vec![0u64; k * k];
    for t in 0..labels.len().saturating_sub(1) {
        flat[(labels[t] - 1) * k + (labels[t + 1] - 1)] += 1;
    }
    (0..k).map(|i| flat[i * k..(i + 1) * k].to_vec()).collect()
}

/// Direct transcription of the between/within-chain PSRF formula.
pub fn psrf_oracle(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().sum::<f64>() / n)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Brute-force mixing time: power the chain and find the first step where
/// every row is within `eps` total-variation distance of `pi`.
pub fn tv_mixing_time(p: &DMatrix<f64>, pi: &[f64], eps: f64, cap: usize) -> Option<usize> {
    let n = p.nrows();
    let mut dist = DMatrix::<f64>::identity(n, n);
    for t in 1..=cap {
        dist *= p;
        let mut worst = 0.0f64;
        for x in 0..n {
            let tv: f64 = (0..n).map(|j| (dist[(x, j)] - pi[j]).abs()).sum::<f64>() / 2.0;
            worst = worst.max(tv);
        }
        if worst <= eps {
            return Some(t);
        }
    }
    None
}

/// Reversible Metropolis chain targeting `pi` with uniform proposals.
pub fn metropolis_chain(pi: &[f64]) -> DMatrix<f64> {
    let n = pi.len();
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j {
                let accept = (pi[j] / pi[i]).min(1.0);
                p[(i, j)] = accept / n as f64;
                off += p[(i, j)];
            }
        }
        p[(i, i)] = 1.0 - off;
    }
    p
}

/// Two-pass covariance with divisor n - 1, written independently.
pub fn two_pass_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = rows.len();
    let n = rows[0].len();
    let mut means = vec![0.0f64; n];
    for row in rows {
        for (acc, v) in means.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for acc in means.iter_mut() {
        *acc /= m as f64;
    }
    let mut out = vec![vec![0.0f64; n]; n];
    for row in rows {
        for i in 0..n {
            for j in 0..n {
                out[i][j] += (row[i] - means[i]) * (row[j] - means[j]);
            }
        }
    }
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v /= (m - 1) as f64;
        }
    }
    out
}

/// Analytic Dirichlet marginals for a posterior row: (mean, variance).
pub fn dirichlet_marginals(alpha_row: &[f64]) -> Vec<(f64, f64)> {
    let a0: f64 = alpha_row.iter().sum();
    alpha_row
        .iter()
        .map(|a| {
            let m = a / a0;
            (m, m * (1.0 - m) / (a0 + 1.0))
        })
        .collect()
}

/// Synthetic two-regime price history: blocks alternate between a calm and a
/// stressed daily-volatility level. Returns the prices plus the true block
/// regime (0 calm, 1 stressed) for each RETURN day.
pub fn two_regime_prices<R: Rng>(
    rng: &mut R,
    n_assets: usize,
    block_len: usize,
    n_blocks: usize,
    calm_vol: f64,
    stressed_vol: f64,
) -> (PriceSeries, Vec<u8>) {
    let n_returns = block_len * n_blocks;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut truth = Vec::with_capacity(n_returns);
    let mut prices = vec![vec![100.0f64; n_assets]];
    for day in 0..n_returns {
        let regime = (day / block_len) % 2;
        truth.push(regime as u8);
        let sigma = if regime == 0 { calm_vol } else { stressed_vol };
        let prev = prices.last().unwrap().clone();
        let row: Vec<f64> = prev
            .iter()
            .map(|p| {
                let r: f64 = sigma * normal.sample(rng);
                p * (1.0 + r.max(-0.5))
            })
            .collect();
        prices.push(row);
    }
    let start = NaiveDate::from_ymd_opt(2015, 1, 2).unwrap();
    let dates: Vec<NaiveDate> = (0..prices.len())
        .map(|i| start + chrono::Duration::days(i as i64))
        .collect();
    let tickers: Vec<String> = (0..n_assets).map(|i| format!("A{i}")).collect();
    (
        PriceSeries::new(dates, tickers, prices).unwrap(),
        truth,
    )
}

/// Exhaustive diversification-ratio grid search on the 3-simplex.
/// Returns (best weights, best DR) at the given resolution.
pub fn grid_search_max_div_3(sigma: &DMatrix<f64>, steps: usize) -> ([f64; 3], f64) {
    let vols: Vec<f64> = (0..3).map(|i| sigma[(i, i)].sqrt()).collect();
    let mut best = ([0.0; 3], f64::NEG_INFINITY);
    for a in 0..=steps {
        let w0 = a as f64 / steps as f64;
        for b in 0..=(steps - a) {
            let w1 = b as f64 / steps as f64;
            let w2 = 1.0 - w0 - w1;
            let avg = w0 * vols[0] + w1 * vols[1] + w2 * vols[2];
            let mut var = 0.0;
            let w = [w0, w1, w2];
            for i in 0..3 {
                for j in 0..3 {
                    var += w[i] * sigma[(i, j)] * w[j];
                }
            }
            if var > 0.0 {
                let dr = avg / var.sqrt();
                if dr > best.1 {
                    best = (w, dr);
                }
            }
        }
    }
    best
}
