//! Optimal regularization, optimal error and degrees of freedom against `n`,
//! with power-law exponents fitted per spectrum family.

use rayon::prelude::*;

use nystrom_krr::statistics::{
    expected_rates, fit_rate, log_grid, optimal_lambda_spectral, LambdaOptimum, RateFit,
};
use nystrom_krr::synthetic::grid_spectral;

use super::stamp;
use crate::config::{Config, Family};
use crate::error::Result;
use crate::output::{num, CsvTable};

#[derive(Debug, Clone)]
pub struct RateRow {
    pub family: Family,
    pub n: usize,
    pub optimum: LambdaOptimum,
    pub d_ave: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone)]
pub enum FitOutcome {
    Fitted { fit: RateFit, expected: Option<f64> },
    /// Fit refused; the reason names the offending sizes.
    Refused(String),
}

#[derive(Debug, Clone)]
pub struct FamilyFits {
    pub family: Family,
    pub lambda: FitOutcome,
    pub error: FitOutcome,
    pub d_ave: FitOutcome,
    /// Smallest size from which every larger size is saturated.
    pub saturation_from: Option<usize>,
}

pub struct RatesReport {
    pub table: CsvTable,
    pub rows: Vec<RateRow>,
    pub fits: Vec<FamilyFits>,
}

fn family_row(family: &Family, n: usize, grid_points: usize) -> Result<RateRow> {
    let s = grid_spectral(n, family.spectrum())?;
    let kxx = family.spectrum().kernel().self_similarity();
    let grid = log_grid(1e-16 * kxx, kxx, grid_points);
    let optimum = optimal_lambda_spectral(&s, family.sigma2, &grid)?;
    Ok(RateRow {
        family: *family,
        n,
        optimum,
        d_ave: s.d_ave(optimum.lambda),
        d_max: s.d_max(optimum.lambda),
    })
}

/// Fits over `rows` after dropping the `drop` smallest sizes, as long as at
/// least four sizes remain.
fn fit_family(family: &Family, rows: &[&RateRow], drop: usize) -> FamilyFits {
    let drop = if rows.len() >= drop + 4 { drop } else { 0 };
    let used = &rows[drop..];
    let saturated: Vec<usize> = used.iter().filter(|r| r.optimum.saturated).map(|r| r.n).collect();
    let saturation_from = rows
        .iter()
        .position(|r| r.optimum.saturated)
        .filter(|&i| rows[i..].iter().all(|r| r.optimum.saturated))
        .map(|i| rows[i].n);
    let expected = expected_rates(&family.spectrum());
    let fit = |value: &dyn Fn(&RateRow) -> f64, expected: Option<f64>| -> FitOutcome {
        if !saturated.is_empty() {
            return FitOutcome::Refused(format!(
                "optimal lambda saturated (at grid minimum or below 1e-15) for n in {saturated:?}"
            ));
        }
        let pairs: Vec<(f64, f64)> = used.iter().map(|r| (r.n as f64, value(r))).collect();
        match fit_rate(&pairs) {
            Ok(fit) => FitOutcome::Fitted { fit, expected },
            Err(e) => FitOutcome::Refused(e.to_string()),
        }
    };
    FamilyFits {
        family: *family,
        lambda: fit(&|r| r.optimum.lambda, expected.lambda),
        error: fit(&|r| r.optimum.error, expected.error),
        d_ave: fit(&|r| r.d_ave, expected.d_ave),
        saturation_from,
    }
}

pub fn run_rate_check(cfg: &Config) -> Result<RatesReport> {
    cfg.validate_rates()?;
    let c = &cfg.rates;
    let jobs: Vec<(Family, usize)> = c
        .families
        .iter()
        .flat_map(|f| c.n_list.iter().map(move |&n| (*f, n)))
        .collect();
    let rows: Vec<RateRow> = jobs
        .par_iter()
        .map(|(f, n)| family_row(f, *n, c.grid_points))
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&[
        "family", "beta", "delta", "sigma2", "n", "lambda_star", "err_star", "d_ave", "d_max", "saturated",
    ]);
    table.meta("n_list", format!("{:?}", c.n_list));
    table.meta("grid_points", c.grid_points);
    table.meta("drop_smallest", c.drop_smallest);
    let mut fits = Vec::new();
    for family in &c.families {
        let mine: Vec<&RateRow> = rows.iter().filter(|r| r.family == *family).collect();
        let f = fit_family(family, &mine, c.drop_smallest);
        let label = family.label();
        for (name, outcome) in [("lambda_star", &f.lambda), ("err_star", &f.error), ("d_ave", &f.d_ave)] {
            let text = match outcome {
                FitOutcome::Fitted { fit, expected } => format!(
                    "exponent={} r2={} expected={}",
                    num(fit.exponent),
                    num(fit.r_squared),
                    expected.map(num).unwrap_or_else(|| "none".into())
                ),
                FitOutcome::Refused(why) => format!("refused: {why}"),
            };
            table.meta(&format!("fit_{label}_{name}"), text);
        }
        table.meta(
            &format!("saturation_{label}"),
            f.saturation_from
                .map(|n| format!("from n={n}"))
                .unwrap_or_else(|| "none".into()),
        );
        fits.push(f);
    }
    for r in &rows {
        table.push(vec![
            r.family.label(),
            r.family.beta.to_string(),
            num(r.family.delta),
            num(r.family.sigma2),
            r.n.to_string(),
            num(r.optimum.lambda),
            num(r.optimum.error),
            num(r.d_ave),
            num(r.d_max),
            r.optimum.saturated.to_string(),
        ]);
    }
    stamp(&mut table, cfg, "rates");
    Ok(RatesReport { table, rows, fits })
}
