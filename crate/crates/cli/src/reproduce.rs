//! Reproduction of the published reference tables, printed one check per
//! line. Any failed check turns the run into a computation error.

use std::path::Path;

use nalgebra::DMatrix;

use volstate::dynamic::{self, StateMethodAssignment, DEFAULT_RISK_FREE_RATE};
use volstate::fixtures::{self, AnnualMetric, AssetSet};
use volstate::spectral;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetChoice {
    First,
    Second,
    All,
}

struct Checker {
    failures: usize,
}

impl Checker {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            println!("[PASS] {name}: {detail}");
        } else {
            self.failures += 1;
            println!("[FAIL] {name}: {detail}");
        }
    }
}

pub fn run(dir: &Path, choice: SetChoice) -> Result<(), CliError> {
    let mut checker = Checker { failures: 0 };

    if matches!(choice, SetChoice::First | SetChoice::All) {
        first_asset_checks(dir, &mut checker)?;
    }
    if matches!(choice, SetChoice::Second | SetChoice::All) {
        second_asset_checks(dir, &mut checker)?;
    }

    if checker.failures > 0 {
        Err(CliError::computation(format!(
            "{} reproduction check(s) failed",
            checker.failures
        )))
    } else {
        Ok(())
    }
}

fn first_asset_checks(dir: &Path, checker: &mut Checker) -> Result<(), CliError> {
    let matrix = fixtures::transition_matrix(dir).map_err(CliError::from_fixture)?;
    let best = fixtures::method_assignment(dir).map_err(CliError::from_fixture)?;
    let assignment = StateMethodAssignment::new(fixtures::METHOD_COLUMNS.to_vec(), best)
        .map_err(|e| CliError::computation(e.to_string()))?;
    let weights = dynamic::total_return_weights(&matrix, &assignment)
        .map_err(|e| CliError::computation(e.to_string()))?;
    let expected =
        fixtures::total_return_weights_table(dir, AssetSet::First).map_err(CliError::from_fixture)?;

    let mut worst = 0.0f64;
    for state in 0..expected.len() {
        for method in 0..4 {
            worst = worst.max((weights.matrix()[state][method] - expected[state][method]).abs());
        }
    }
    checker.check(
        "first-asset blend weights",
        worst <= 1e-5,
        format!("40 entries, worst deviation {worst:.2e} (tolerance 1e-5)"),
    );

    let p = DMatrix::from_fn(matrix.len(), matrix.len(), |i, j| matrix[i][j]);
    let renormalized = spectral::renormalize_rows(&p);
    let slem = spectral::slem(&renormalized).map_err(|e| CliError::computation(e.to_string()))?;
    checker.check(
        "first-asset SLEM",
        (slem - 0.9584).abs() < 1e-4,
        format!("computed {slem:.6} vs published 0.9584"),
    );

    let steps = spectral::point_estimate_from_slem(0.9584, 0.01)
        .map_err(|e| CliError::computation(e.to_string()))?;
    checker.check(
        "first-asset mixing steps",
        steps == 109,
        format!("SLEM 0.9584, eps 0.01 -> {steps} steps (published 109)"),
    );

    sharpe_cells(
        dir,
        AssetSet::First,
        &[(2008, 0, -6.244808), (2019, 4, 25.813070)],
        "first-asset Sharpe cells",
        checker,
    )?;

    totals_check(
        dir,
        AssetSet::First,
        (38.910, 0.1715, 226.77),
        (1e-3, 5e-5, 5e-3),
        "first-asset ERC totals",
        checker,
    )
}

fn second_asset_checks(dir: &Path, checker: &mut Checker) -> Result<(), CliError> {
    let steps = spectral::point_estimate_from_slem(0.9277, 0.01)
        .map_err(|e| CliError::computation(e.to_string()))?;
    checker.check(
        "second-asset mixing steps",
        steps == 62,
        format!("SLEM 0.9277, eps 0.01 -> {steps} steps (published 62)"),
    );

    let expected = fixtures::total_return_weights_table(dir, AssetSet::Second)
        .map_err(CliError::from_fixture)?;
    let worst = expected
        .iter()
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0f64, f64::max);
    checker.check(
        "second-asset blend-weight row sums",
        worst <= 1e-5,
        format!("worst row-sum deviation {worst:.2e}"),
    );

    sharpe_cells(
        dir,
        AssetSet::Second,
        &[(2015, 0, 7.587189), (2021, 0, -1.171490)],
        "second-asset Sharpe cells",
        checker,
    )?;

    totals_check(
        dir,
        AssetSet::Second,
        (65.244458, 1.406368, 46.385049),
        (1e-3, 1e-4, 1e-3),
        "second-asset ERC totals",
        checker,
    )
}

fn sharpe_cells(
    dir: &Path,
    set: AssetSet,
    cells: &[(i32, usize, f64)],
    name: &str,
    checker: &mut Checker,
) -> Result<(), CliError> {
    let returns =
        fixtures::annual_table(dir, set, AnnualMetric::Returns).map_err(CliError::from_fixture)?;
    let vols = fixtures::annual_table(dir, set, AnnualMetric::Volatility)
        .map_err(CliError::from_fixture)?;
    let mut worst = 0.0f64;
    for (year, column, tabulated) in cells {
        let recomputed = (returns.value(*year, *column).unwrap() - DEFAULT_RISK_FREE_RATE)
            / vols.value(*year, *column).unwrap();
        worst = worst.max((recomputed - tabulated).abs());
    }
    checker.check(
        name,
        worst <= 1e-4,
        format!("worst deviation {worst:.2e} over {} cells (rf = 0.01)", cells.len()),
    );
    Ok(())
}

fn totals_check(
    dir: &Path,
    set: AssetSet,
    published: (f64, f64, f64),
    tolerance: (f64, f64, f64),
    name: &str,
    checker: &mut Checker,
) -> Result<(), CliError> {
    let annual =
        fixtures::annual_table(dir, set, AnnualMetric::Returns).map_err(CliError::from_fixture)?;
    let series: Vec<f64> = annual.values.iter().map(|row| row[0]).collect();
    let total_return = dynamic::compound(&series);
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let total_volatility = (series
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / series.len() as f64)
        .sqrt();
    let total_sharpe = (total_return - DEFAULT_RISK_FREE_RATE) / total_volatility;
    let ok = (total_return - published.0).abs() <= tolerance.0
        && (total_volatility - published.1).abs() <= tolerance.1
        && (total_sharpe - published.2).abs() <= tolerance.2;
    checker.check(
        name,
        ok,
        format!(
            "{total_return:.4}/{total_volatility:.5}/{total_sharpe:.3} vs published \
             {}/{}/{}",
            published.0, published.1, published.2
        ),
    );
    Ok(())
}
