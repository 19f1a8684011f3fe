//! Kernel approximation error against prediction excess as the rank grows.

use rayon::prelude::*;

use nystrom_krr::lowrank::{approx_error, nystrom, pivoted_ichol, sample_columns, ErrorNorm, PivotStop};
use nystrom_krr::linalg::sym_eigenvalues;
use nystrom_krr::rng::derive_seed;
use nystrom_krr::spectral::Spectral;
use nystrom_krr::LowRankFactor;

use super::{best_lambda, grid_family, stamp};
use crate::config::Config;
use crate::error::Result;
use crate::output::{num, CsvTable};

/// Relative excess at which a low-rank fit counts as matching the full one.
pub const PRED_EXCESS_LEVEL: f64 = 1e-2;
/// Relative trace-norm error marking a "good" kernel approximation.
pub const TRACE_ERR_LEVEL: f64 = 0.1;

struct Metrics {
    trace: f64,
    op: f64,
    excess: f64,
}

pub fn run_fig1(cfg: &Config) -> Result<CsvTable> {
    cfg.validate_fig1()?;
    let c = &cfg.fig1;
    let problem = grid_family(&c.family(), c.n)?;
    let lambda = match c.lambda {
        Some(l) => l,
        None => best_lambda(&problem)?.lambda,
    };
    let full_error = problem.spectral()?.error(lambda, problem.sigma2);
    let tr_k = problem.k.trace();
    let op_k = sym_eigenvalues(problem.k.entries())[0];
    let n = problem.n();

    let metrics = |f: &LowRankFactor| -> Result<Metrics> {
        let err = if f.rank() == n && f.selection().indices().len() == n {
            full_error
        } else {
            Spectral::from_factor(f.phi(), Some(&problem.z))?.error(lambda, problem.sigma2)
        };
        Ok(Metrics {
            trace: approx_error(&problem.k, f, ErrorNorm::Trace)? / tr_k,
            op: approx_error(&problem.k, f, ErrorNorm::Operator)? / op_k,
            excess: (err - full_error) / full_error,
        })
    };

    let ranks = c.ranks();
    let random: Vec<Metrics> = ranks
        .par_iter()
        .map(|&p| -> Result<Metrics> {
            let runs = (0..c.trials)
                .map(|t| {
                    let sel = sample_columns(n, p, derive_seed(cfg.seed, &[p as u64, t as u64]))?;
                    metrics(&nystrom(&problem.k, &sel)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let m = runs.len() as f64;
            Ok(Metrics {
                trace: runs.iter().map(|r| r.trace).sum::<f64>() / m,
                op: runs.iter().map(|r| r.op).sum::<f64>() / m,
                excess: runs.iter().map(|r| r.excess).sum::<f64>() / m,
            })
        })
        .collect::<Result<_>>()?;
    let pivoted: Vec<Metrics> = ranks
        .par_iter()
        .map(|&p| metrics(&pivoted_ichol(&problem.k, PivotStop::rank(p))?))
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&["p", "method", "rel_trace_err", "rel_op_err", "rel_pred_excess"]);
    table.meta("n", n);
    table.meta("beta", c.beta);
    table.meta("delta", c.delta);
    table.meta("sigma2", num(c.sigma2));
    table.meta("lambda", num(lambda));
    table.meta("lambda_rule", if c.lambda.is_some() { "fixed" } else { "optimal" });
    table.meta("trials", c.trials);
    table.meta("full_error", num(full_error));
    for (name, rows) in [("random", &random), ("pivoted", &pivoted)] {
        let first = |pred: &dyn Fn(&Metrics) -> bool| {
            ranks
                .iter()
                .zip(rows.iter())
                .find(|(_, m)| pred(m))
                .map(|(p, _)| p.to_string())
                .unwrap_or_else(|| "none".into())
        };
        table.meta(
            &format!("crossing_pred_excess_{name}"),
            first(&|m| m.excess < PRED_EXCESS_LEVEL),
        );
        table.meta(&format!("crossing_pred_excess_zero_{name}"), first(&|m| m.excess <= 0.0));
        table.meta(&format!("crossing_trace_err_{name}"), first(&|m| m.trace < TRACE_ERR_LEVEL));
    }
    for (i, &p) in ranks.iter().enumerate() {
        for (name, rows) in [("random", &random), ("pivoted", &pivoted)] {
            let m = &rows[i];
            table.push(vec![p.to_string(), name.into(), num(m.trace), num(m.op), num(m.excess)]);
        }
    }
    stamp(&mut table, cfg, "fig1");
    Ok(table)
}
