//! Monte-Carlo check of the expected-error bound for uniform column sampling.

use std::collections::BTreeSet;

use rayon::prelude::*;

use nystrom_krr::statistics::{theorem_rank_value, verify_theorem, TheoremCheck};

use super::{best_lambda, grid_family, stamp};
use crate::config::Config;
use crate::error::Result;
use crate::output::{num, CsvTable};

/// Consecutive ranks checked right above `4 d_max`, before the geometric part.
const SWEEP_CONSECUTIVE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// Rank from the bound, capped at `n`.
    Bound,
    /// Rank from the sweep starting at `4 d_max`.
    Sweep,
}

impl CheckKind {
    fn label(self) -> &'static str {
        match self {
            CheckKind::Bound => "bound",
            CheckKind::Sweep => "sweep",
        }
    }
}

pub struct TheoremReport {
    pub table: CsvTable,
    pub bound_value: f64,
    pub checks: Vec<(CheckKind, TheoremCheck)>,
}

/// Ranks from `start` to `n`: a run of consecutive values, then `points`
/// geometric steps, always including `n`.
pub fn sweep_ranks(start: usize, n: usize, points: usize) -> Vec<usize> {
    let start = start.clamp(1, n);
    let mut set: BTreeSet<usize> = (start..(start + SWEEP_CONSECUTIVE).min(n + 1)).collect();
    let ratio = (n as f64 / start as f64).powf(1.0 / points.max(1) as f64);
    for i in 0..=points {
        set.insert(((start as f64 * ratio.powi(i as i32)).round() as usize).clamp(start, n));
    }
    set.insert(n);
    set.into_iter().collect()
}

pub fn run_verify_theorem(cfg: &Config) -> Result<TheoremReport> {
    cfg.validate_theorem()?;
    let c = &cfg.theorem;
    let problem = grid_family(&c.family(), c.n)?;
    let lambda = match c.lambda {
        Some(l) => l,
        None => best_lambda(&problem)?.lambda,
    };
    let d_max = problem.spectral()?.d_max(lambda);
    let bound_value = theorem_rank_value(d_max, c.theorem_delta, c.n, problem.k.r2(), lambda)?;
    let p_bound = (bound_value.ceil() as usize).min(c.n);

    let mut jobs = vec![(CheckKind::Bound, p_bound)];
    jobs.extend(
        sweep_ranks((4.0 * d_max).ceil() as usize, c.n, c.sweep_points)
            .into_iter()
            .map(|p| (CheckKind::Sweep, p)),
    );
    let checks: Vec<(CheckKind, TheoremCheck)> = jobs
        .par_iter()
        .map(|&(kind, p)| Ok((kind, verify_theorem(&problem, lambda, c.theorem_delta, p, c.trials, cfg.seed)?)))
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&[
        "kind",
        "p",
        "mean_ratio",
        "std_err",
        "holds",
        "exceed_fraction",
        "hp_threshold",
        "hp_bound",
    ]);
    table.meta("n", c.n);
    table.meta("beta", c.beta);
    table.meta("delta", c.delta);
    table.meta("sigma2", num(c.sigma2));
    table.meta("theorem_delta", num(c.theorem_delta));
    table.meta("lambda", num(lambda));
    table.meta("lambda_rule", if c.lambda.is_some() { "explicit" } else { "error-minimizing" });
    table.meta("trials", c.trials);
    table.meta("d_max", num(d_max));
    table.meta("r2", num(problem.k.r2()));
    table.meta("rank_bound", num(bound_value));
    table.meta("full_error", num(checks[0].1.full_error));
    let all_hold = checks.iter().all(|(_, ch)| ch.holds);
    table.meta("all_hold", all_hold);
    for (kind, ch) in &checks {
        table.push(vec![
            kind.label().to_string(),
            ch.p.to_string(),
            num(ch.mean_ratio),
            num(ch.std_err),
            ch.holds.to_string(),
            num(ch.exceed_fraction),
            num(ch.hp_threshold),
            num(ch.hp_bound),
        ]);
    }
    stamp(&mut table, cfg, "verify-theorem");
    Ok(TheoremReport { table, bound_value, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_covers_start_and_end() {
        let r = sweep_ranks(52, 400, 20);
        assert_eq!(r[0], 52);
        assert_eq!(*r.last().unwrap(), 400);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        assert!(r.contains(&61));
    }

    #[test]
    fn sweep_clamps_past_n() {
        assert_eq!(sweep_ranks(500, 400, 5), vec![400]);
    }
}
