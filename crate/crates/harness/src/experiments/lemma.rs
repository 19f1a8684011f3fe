//! Tail of the subsampled second-moment deviation against the matrix
//! Bernstein bound, on several matrix families.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use nystrom_krr::linalg::SymEig;
use nystrom_krr::rng::{derive_seed, rng_from_seed};
use nystrom_krr::statistics::{verify_lemma_tail, LemmaRow};
use nystrom_krr::synthetic::random_design_problem;
use nystrom_krr::SpectrumSpec;

use super::stamp;
use crate::config::{Config, MatrixFamily};
use crate::error::Result;
use crate::output::{num, CsvTable};

/// Regularization used to scale the kernel-feature family.
const FEATURE_LAMBDA: f64 = 1e-3;
/// Row-scale exponent for the heavy-row family: row `i` is scaled by `(i+1)^{-0.5}`.
const HEAVY_ROW_EXPONENT: f64 = 0.5;
/// The t grid runs up to this multiple of `lambda_max(Psi^T Psi / n)`. The
/// deviation never exceeds `lambda_max`, while the bound only drops below one
/// past it for the smaller ranks.
pub const T_GRID_SPAN: f64 = 2.0;

impl MatrixFamily {
    pub fn label(self) -> &'static str {
        match self {
            MatrixFamily::Gaussian => "gaussian",
            MatrixFamily::HeavyRows => "heavy-rows",
            MatrixFamily::KernelFeatures => "kernel-features",
        }
    }
}

/// `n x r` test matrix of the given family.
pub fn family_matrix(family: MatrixFamily, n: usize, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = rng_from_seed(seed);
    let gaussian = |rng: &mut _| DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(rng));
    Ok(match family {
        MatrixFamily::Gaussian => gaussian(&mut rng),
        MatrixFamily::HeavyRows => {
            let mut m: DMatrix<f64> = gaussian(&mut rng);
            for (i, mut row) in m.row_iter_mut().enumerate() {
                row *= ((i + 1) as f64).powf(-HEAVY_ROW_EXPONENT);
            }
            m
        }
        MatrixFamily::KernelFeatures => {
            let problem = random_design_problem(n, SpectrumSpec::polynomial(1, 2.0), 1.0, seed)?;
            let eig = SymEig::new(problem.k.entries());
            let nl = n as f64 * FEATURE_LAMBDA;
            let mut m = eig.vectors.columns(0, r).into_owned() * (n as f64).sqrt();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                let s = eig.values[j].max(0.0);
                col *= (s / (s + nl)).sqrt();
            }
            m
        }
    })
}

pub struct LemmaReport {
    pub table: CsvTable,
    pub rows: Vec<(MatrixFamily, usize, LemmaRow)>,
}

pub fn run_verify_lemma(cfg: &Config) -> Result<LemmaReport> {
    cfg.validate_lemma()?;
    let c = &cfg.lemma;
    let mut rows = Vec::new();
    for (fi, &family) in c.families.iter().enumerate() {
        let psi = family_matrix(family, c.n, c.r, derive_seed(cfg.seed, &[fi as u64]))?;
        let lmax = SymEig::new(&(psi.tr_mul(&psi) / c.n as f64)).max();
        let t_grid: Vec<f64> = (1..=c.t_points)
            .map(|k| T_GRID_SPAN * lmax * k as f64 / c.t_points as f64).collect();
        for &p in &c.p_list {
            let seed = derive_seed(cfg.seed, &[fi as u64, p as u64]);
            for row in verify_lemma_tail(&psi, p, &t_grid, c.trials, seed)? {
                rows.push((family, p, row));
            }
        }
    }
    let mut table = CsvTable::new(&["family", "p", "t", "empirical", "std_err", "bound", "ok"]);
    table.meta("n", c.n);
    table.meta("r", c.r);
    table.meta("trials", c.trials);
    table.meta("t_grid", format!("{T_GRID_SPAN} * lambda_max(Psi^T Psi / n) * k / t_points"));
    table.meta("informative_points", rows.iter().filter(|(_, _, r)| r.bound < 1.0).count());
    let violations = rows.iter().filter(|(_, _, r)| r.empirical > r.bound).count();
    table.meta("violations", violations);
    for (family, p, r) in &rows {
        table.push(vec![
            family.label().to_string(),
            p.to_string(),
            num(r.t),
            num(r.empirical),
            num(r.std_err),
            num(r.bound),
            (r.empirical <= r.bound).to_string(),
        ]);
    }
    stamp(&mut table, cfg, "verify-lemma");
    Ok(LemmaReport { table, rows })
}
