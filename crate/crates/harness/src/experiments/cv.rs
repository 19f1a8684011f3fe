//! Cross-validated choice of lambda on the low-rank path.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use nystrom_krr::lowrank::FeatureMap;
use nystrom_krr::regression::{predict, PredictContext};
use nystrom_krr::rng::{derive_seed, rng_from_seed};
use nystrom_krr::{krr_lowrank, KernelSpec};

use super::fit::{load_configured, pivoted_factor};
use super::stamp;
use crate::config::Config;
use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};
use crate::output::{num, CsvTable};

/// Seed key for the fold permutation.
const FOLDS_KEY: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda_star: f64,
    /// `(lambda, mean held-out squared error)` in grid order.
    pub scores: Vec<(f64, f64)>,
    /// Factor rank per fold.
    pub ranks: Vec<usize>,
}

/// Seeded permutation split into `folds` contiguous blocks.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    (0..folds)
        .map(|f| {
            let mut idx = perm[f * n / folds..(f + 1) * n / folds].to_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Lambda minimizing the mean held-out squared error over seeded folds. Each
/// fold fits on a pivoted factor whose rank is set by `trace_tol`; ties go to
/// the larger lambda.
pub fn cross_validate_lambda(
    data: &Dataset,
    kernel: KernelSpec,
    grid: &[f64],
    folds: usize,
    trace_tol: f64,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(HarnessError::Config("empty lambda grid".into()));
    }
    if folds < 2 {
        return Err(HarnessError::Config(format!("need at least 2 folds, got {folds}")));
    }
    let n = data.len();
    if n / folds < 2 {
        return Err(HarnessError::Config(format!(
            "{n} rows across {folds} folds leaves a fold with fewer than 2 rows"
        )));
    }
    let split = fold_assignment(n, folds, seed);
    let per_fold: Vec<(Vec<f64>, usize)> = split
        .par_iter()
        .map(|held| -> Result<(Vec<f64>, usize)> {
            let mut is_held = vec![false; n];
            for &i in held {
                is_held[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
            let tr = data.subset(&train);
            let te = data.subset(held);
            let factor = pivoted_factor(&tr.features, kernel, None, trace_tol)?;
            let map = FeatureMap::new(&factor, &tr.features, kernel)?;
            let sse = grid
                .iter()
                .map(|&lambda| -> Result<f64> {
                    let (fit, _) = krr_lowrank(&factor, &tr.targets, lambda)?;
                    let pred = predict(&fit, &te.features, PredictContext::Features(&map))?;
                    Ok((pred - &te.targets).norm_squared())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((sse, factor.rank()))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(j, &l)| (l, per_fold.iter().map(|(s, _)| s[j]).sum::<f64>() / n as f64))
        .collect();
    let mut best = 0;
    for (j, &(l, s)) in scores.iter().enumerate() {
        let (bl, bs) = scores[best];
        if s < bs || (s == bs && l > bl) {
            best = j;
        }
    }
    Ok(CvResult {
        lambda_star: scores[best].0,
        scores,
        ranks: per_fold.into_iter().map(|(_, r)| r).collect(),
    })
}

pub struct CvReport {
    pub table: CsvTable,
    pub result: CvResult,
}

pub fn run_cv(cfg: &Config) -> Result<CvReport> {
    cfg.validate_cv()?;
    let c = &cfg.cv;
    let (data, spec) = load_configured(cfg)?;
    let grid = c.grid();
    let result = cross_validate_lambda(&data, spec, &grid, c.folds, c.trace_tol, derive_seed(cfg.seed, &[FOLDS_KEY]))?;
    let mut table = CsvTable::new(&["lambda", "cv_mse"]);
    table.meta("dataset", &data.name);
    table.meta("n", data.len());
    if let KernelSpec::Gaussian { bandwidth } = spec {
        table.meta("bandwidth", num(bandwidth));
    }
    table.meta("folds", c.folds);
    table.meta("trace_tol", num(c.trace_tol));
    table.meta(
        "fold_ranks",
        result.ranks.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" "),
    );
    table.meta("lambda_star", num(result.lambda_star));
    for &(l, s) in &result.scores {
        table.push(vec![num(l), num(s)]);
    }
    stamp(&mut table, cfg, "cv");
    Ok(CvReport { table, result })
}
