pub mod cv;
pub mod fig1;
pub mod fit;
pub mod lemma;
pub mod rank_ratio;
pub mod rates;
pub mod theorem;

use nystrom_krr::statistics::{default_lambda_grid, optimal_lambda, LambdaOptimum};
use nystrom_krr::synthetic::{grid_problem, FixedDesignProblem};

use crate::config::{Config, Family};
use crate::error::Result;
use crate::output::CsvTable;

pub fn grid_family(family: &Family, n: usize) -> Result<FixedDesignProblem> {
    Ok(grid_problem(n, family.spectrum(), family.sigma2)?)
}

/// Error-minimizing lambda over the default grid.
pub fn best_lambda(problem: &FixedDesignProblem) -> Result<LambdaOptimum> {
    let grid = default_lambda_grid(problem.k.trace() / problem.n() as f64);
    Ok(optimal_lambda(problem, &grid)?)
}

/// Metadata common to every table.
pub fn stamp(table: &mut CsvTable, cfg: &Config, command: &str) {
    table.metadata.insert(0, ("command".into(), command.into()));
    table.metadata.insert(1, ("config_sha256".into(), cfg.hash()));
    table.metadata.insert(2, ("seed".into(), cfg.seed.to_string()));
}
