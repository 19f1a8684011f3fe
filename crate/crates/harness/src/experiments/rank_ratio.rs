//! Sufficient rank for a 1% loss in predictive performance, compared with the
//! degrees of freedom along a lambda grid.

use rayon::prelude::*;

use nystrom_krr::rng::derive_seed;
use nystrom_krr::statistics::{default_lambda_grid, log_grid, sufficient_rank, DofReport, SamplingMethod};

use super::{best_lambda, grid_family, stamp};
use crate::config::Config;
use crate::error::Result;
use crate::output::{num, CsvTable};

/// Resolution of the scan that locates the low-error lambda range.
const REGIME_SCAN_POINTS: usize = 400;

#[derive(Debug, Clone)]
pub struct RankRatioRow {
    pub lambda: f64,
    pub dof: DofReport,
    pub p_random: usize,
    pub p_pivoted: usize,
}

pub struct RankRatioReport {
    pub table: CsvTable,
    pub rows: Vec<RankRatioRow>,
}

pub fn run_rank_ratio(cfg: &Config) -> Result<RankRatioReport> {
    cfg.validate_rank_ratio()?;
    let c = &cfg.rank_ratio;
    let problem = grid_family(&c.family(), c.n)?;
    let spectral = problem.spectral()?;
    let lambdas = match &c.lambdas {
        Some(l) => l.clone(),
        None => {
            // Contiguous range around the optimum where err <= factor * err*.
            let best = best_lambda(&problem)?;
            let scan = log_grid(
                default_lambda_grid(problem.k.trace() / c.n as f64)[0],
                problem.k.trace() / c.n as f64,
                REGIME_SCAN_POINTS,
            );
            let ok: Vec<bool> = scan
                .iter()
                .map(|&l| spectral.error(l, problem.sigma2) <= c.regime_factor * best.error)
                .collect();
            let centre = scan
                .iter()
                .position(|&l| l >= best.lambda)
                .unwrap_or(scan.len() - 1)
                .min(scan.len() - 1);
            let mut lo = centre;
            while lo > 0 && ok[lo - 1] {
                lo -= 1;
            }
            let mut hi = centre;
            while hi + 1 < scan.len() && ok[hi + 1] {
                hi += 1;
            }
            log_grid(scan[lo], scan[hi], c.lambda_points)
        }
    };
    let rows: Vec<RankRatioRow> = lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| -> Result<RankRatioRow> {
            let seed = derive_seed(cfg.seed, &[i as u64]);
            Ok(RankRatioRow {
                lambda,
                dof: DofReport::from_spectral(&spectral, problem.sigma2, lambda),
                p_random: sufficient_rank(&problem, lambda, c.tol, c.trials, SamplingMethod::Random, seed)?,
                p_pivoted: sufficient_rank(&problem, lambda, c.tol, 1, SamplingMethod::Pivoted, seed)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&[
        "lambda",
        "d_max",
        "d_ave",
        "d_trace",
        "p_star_random",
        "p_star_pivoted",
        "ratio_random_dmax",
        "ratio_pivoted_dmax",
        "ratio_random_dave",
        "ratio_pivoted_dave",
        "dmax_over_dave",
    ]);
    table.meta("n", c.n);
    table.meta("beta", c.beta);
    table.meta("delta", c.delta);
    table.meta("sigma2", num(c.sigma2));
    table.meta("tol", num(c.tol));
    table.meta("trials", c.trials);
    table.meta(
        "lambda_rule",
        if c.lambdas.is_some() {
            "explicit".to_string()
        } else {
            format!("err <= {} * min err", c.regime_factor)
        },
    );
    let pivoted_wins = rows.iter().filter(|r| r.p_pivoted <= r.p_random).count();
    table.meta("pivoted_not_worse", format!("{pivoted_wins}/{}", rows.len()));
    for r in &rows {
        let d = &r.dof;
        table.push(vec![
            num(r.lambda),
            num(d.d_max),
            num(d.d_ave),
            num(d.d_trace),
            r.p_random.to_string(),
            r.p_pivoted.to_string(),
            num(r.p_random as f64 / d.d_max),
            num(r.p_pivoted as f64 / d.d_max),
            num(r.p_random as f64 / d.d_ave),
            num(r.p_pivoted as f64 / d.d_ave),
            num(d.d_max / d.d_ave),
        ]);
    }
    stamp(&mut table, cfg, "rank-ratio");
    Ok(RankRatioReport { table, rows })
}
