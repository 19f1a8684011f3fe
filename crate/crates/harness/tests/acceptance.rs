//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//! Runs without the libtest harness so the lines always print.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use nystrom_harness::experiments::{fig1, lemma, rank_ratio, rates, theorem};
use nystrom_harness::{Config, CsvTable};
use nystrom_krr::linalg::submatrix;
use nystrom_krr::regression::krr_lowrank;
use nystrom_krr::rng::rng_from_seed;
use nystrom_krr::statistics::{bias_variance, monte_carlo_error};
use nystrom_krr::synthetic::random_design_problem;
use nystrom_krr::{
    nystrom, pivoted_ichol, sample_columns, KernelMatrix, LowRankFactor, SpectrumSpec, Spectral,
};
use nystrom_krr::lowrank::PivotStop;

const SEED: u64 = 7_001;

const ORACLE_TOL: f64 = 1e-8;
const ORACLE_INSTANCES: usize = 100;
const ORACLE_MAX_N: usize = 64;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);

const SMOOTHER_TOL: f64 = 1e-8;
const SMOOTHER_INSTANCES: usize = 50;
const SMOOTHER_MAX_N: usize = 100;
const SMOOTHER_BUDGET: Duration = Duration::from_secs(10);

/// Slack for the d.o.f. chain is this times `n`.
const DOF_SLACK: f64 = 1e-10;

const MC_DRAWS: usize = 2000;
const MC_N: usize = 100;
const MC_SIGMAS: f64 = 3.0;
const MC_LAMBDAS: [f64; 3] = [1e-4, 1e-3, 1e-2];
const MC_BUDGET: Duration = Duration::from_secs(20);

/// Prediction-excess crossing must be at most this fraction of the trace crossing.
const FIG1_RATIO: f64 = 0.5;
const FIG1_BUDGET: Duration = Duration::from_secs(300);

const THEOREM_MAX_RATIO: f64 = 2.0;
const THEOREM_BUDGET: Duration = Duration::from_secs(300);

const LEMMA_BUDGET: Duration = Duration::from_secs(120);

const RATE_TOL_MAIN: f64 = 0.15;
const RATE_TOL_DAVE: f64 = 0.1;
const RATE_LAMBDA_TARGET: f64 = -0.5;
const RATE_ERROR_TARGET: f64 = -0.9375;
const RATE_DAVE_TARGET: f64 = 0.25;
const RATES_BUDGET: Duration = Duration::from_secs(900);

const RANK_RATIO_BAND: (f64, f64) = (0.1, 10.0);
const DMAX_OVER_DAVE_MAX: f64 = 4.0;
const RANK_RATIO_POINTS: usize = 10;
const RANK_RATIO_BUDGET: Duration = Duration::from_secs(600);

struct Outcome {
    failed: usize,
}

impl Outcome {
    fn report(&mut self, id: u32, ok: bool, detail: String) {
        println!("[{}] criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random PSD matrix: `G G^T` with a random inner rank and column scales
/// spanning a few decades, so some instances are rank deficient.
fn random_psd(n: usize, rng: &mut impl Rng) -> KernelMatrix {
    let r = rng.random_range(1..=n);
    let mut g = gaussian(n, r, rng);
    for (j, mut col) in g.column_iter_mut().enumerate() {
        col *= 10f64.powf(-3.0 * j as f64 / r as f64);
    }
    KernelMatrix::from_dense(&g * g.transpose()).expect("symmetric")
}

/// `K(V,I) K(I,I)^+ K(I,V)` straight from the definition, with the
/// pseudo-inverse from nalgebra's symmetric eigensolver and the same relative
/// cutoff as the library.
fn direct_nystrom(k: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let all: Vec<usize> = (0..k.nrows()).collect();
    let c = submatrix(k, &all, idx);
    let eig = SymmetricEigen::new(submatrix(k, idx, idx));
    let top = eig.eigenvalues.max();
    let inv = eig.eigenvalues.map(|v| if v > 1e-12 * top { 1.0 / v } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    &c * pinv * c.transpose()
}

fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn approx(f: &LowRankFactor) -> DMatrix<f64> {
    f.phi() * f.phi().transpose()
}

struct DofCheck {
    worst: f64,
    violations: usize,
}

impl DofCheck {
    fn record(&mut self, s: &Spectral, lambda: f64) {
        let n = s.n() as f64;
        let (dm, dt, da) = (s.d_max(lambda), s.d_trace(lambda), s.d_ave(lambda));
        let gap = (dt - dm).max(da - dt);
        self.worst = self.worst.max(gap);
        if gap > DOF_SLACK * n {
            self.violations += 1;
        }
    }
}

fn criterion_1(out: &mut Outcome, dof: &mut DofCheck) {
    let ((worst_direct, worst_pivot), elapsed) = timed(|| {
        let mut rng = rng_from_seed(SEED);
        let (mut wd, mut wp) = (0.0f64, 0.0f64);
        for inst in 0..ORACLE_INSTANCES {
            let n = rng.random_range(2..=ORACLE_MAX_N);
            let k = random_psd(n, &mut rng);
            let p = rng.random_range(1..=n);
            let sel = sample_columns(n, p, SEED + inst as u64).unwrap();
            let f = nystrom(&k, &sel).unwrap();
            wd = wd.max(rel_fro(&approx(&f), &direct_nystrom(k.entries(), sel.indices())));

            let piv = pivoted_ichol(&k, PivotStop::rank(p)).unwrap();
            let mut idx = piv.selection().indices().to_vec();
            idx.sort_unstable();
            let again = nystrom(&k, &nystrom_krr::ColumnSelection::explicit(idx, n).unwrap()).unwrap();
            wp = wp.max(rel_fro(&approx(&piv), &approx(&again)));

            let lambda = 10f64.powf(rng.random_range(-6.0..0.0));
            dof.record(&Spectral::from_factor(f.phi(), None).unwrap(), lambda);
            dof.record(&Spectral::from_kernel(&k, None).unwrap(), lambda);
        }
        (wd, wp)
    });
    let ok = worst_direct <= ORACLE_TOL && worst_pivot <= ORACLE_TOL && elapsed <= ORACLE_BUDGET;
    out.report(
        1,
        ok,
        format!(
            "oracle equivalence on {ORACLE_INSTANCES} PSD matrices (n <= {ORACLE_MAX_N}): factor vs direct {worst_direct:.2e}, \
             pivoted vs own pivot set {worst_pivot:.2e} (tol {ORACLE_TOL:e}), {:.1}s (budget {}s)",
            elapsed.as_secs_f64(),
            ORACLE_BUDGET.as_secs()
        ),
    );
}

fn criterion_2(out: &mut Outcome, dof: &mut DofCheck) {
    let (worst, elapsed) = timed(|| {
        let mut rng = rng_from_seed(SEED + 1);
        let mut worst = 0.0f64;
        for inst in 0..SMOOTHER_INSTANCES {
            let n = rng.random_range(2..=SMOOTHER_MAX_N);
            let k = random_psd(n, &mut rng);
            let p = rng.random_range(1..=n);
            let lambda = 10f64.powf(rng.random_range(-6.0..0.0));
            let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let f = nystrom(&k, &sample_columns(n, p, SEED + 1000 + inst as u64).unwrap()).unwrap();
            let (_, via_factor) = krr_lowrank(&f, &y, lambda).unwrap();
            let l = direct_nystrom(k.entries(), f.selection().indices());
            let shifted = &l + DMatrix::identity(n, n) * (n as f64 * lambda);
            let via_l = &l * shifted.lu().solve(&y).expect("shifted PSD matrix is invertible");
            worst = worst.max((&via_factor - &via_l).norm() / via_l.norm().max(y.norm() * f64::EPSILON));
            dof.record(&Spectral::from_factor(f.phi(), None).unwrap(), lambda);
        }
        worst
    });
    let ok = worst <= SMOOTHER_TOL && elapsed <= SMOOTHER_BUDGET;
    out.report(
        2,
        ok,
        format!(
            "smoother identity on {SMOOTHER_INSTANCES} instances (n <= {SMOOTHER_MAX_N}): worst relative gap {worst:.2e} \
             (tol {SMOOTHER_TOL:e}), {:.1}s (budget {}s)",
            elapsed.as_secs_f64(),
            SMOOTHER_BUDGET.as_secs()
        ),
    );
}

fn criterion_3(out: &mut Outcome, dof: &DofCheck) {
    out.report(
        3,
        dof.violations == 0,
        format!(
            "d_max >= d_trace >= d_ave on suites 1-2: {} violations, worst excess {:.2e} (slack {DOF_SLACK:e} * n)",
            dof.violations, dof.worst
        ),
    );
}

fn criterion_4(out: &mut Outcome) {
    let (rows, elapsed) = timed(|| {
        let problem = random_design_problem(MC_N, SpectrumSpec::polynomial(1, 2.0), 0.1, SEED + 2).unwrap();
        MC_LAMBDAS
            .iter()
            .enumerate()
            .map(|(i, &lambda)| {
                let (b, v) = bias_variance(&problem.k, &problem.z, problem.sigma2, lambda).unwrap();
                let (mean, se) =
                    monte_carlo_error(&problem.k, &problem.z, problem.sigma2, lambda, MC_DRAWS, SEED + 10 + i as u64)
                        .unwrap();
                (lambda, b + v, mean, se)
            })
            .collect::<Vec<_>>()
    });
    let ok = rows.iter().all(|&(_, cf, mc, se)| (cf - mc).abs() <= MC_SIGMAS * se) && elapsed <= MC_BUDGET;
    let detail: Vec<String> = rows
        .iter()
        .map(|&(l, cf, mc, se)| format!("lambda {l:e}: {:.2} se", (cf - mc).abs() / se))
        .collect();
    out.report(
        4,
        ok,
        format!(
            "closed-form error vs {MC_DRAWS}-draw Monte Carlo (n = {MC_N}): {} (limit {MC_SIGMAS} se), {:.1}s (budget {}s)",
            detail.join(", "),
            elapsed.as_secs_f64(),
            MC_BUDGET.as_secs()
        ),
    );
}

fn crossing(table: &CsvTable, key: &str) -> Option<usize> {
    table.get_meta(key).and_then(|v| v.parse().ok())
}

fn criterion_5(out: &mut Outcome, cfg: &Config) -> CsvTable {
    let (table, elapsed) = timed(|| fig1::run_fig1(cfg).expect("fig1 runs"));
    let mut parts = Vec::new();
    let mut ok = elapsed <= FIG1_BUDGET;
    for m in ["random", "pivoted"] {
        let excess = crossing(&table, &format!("crossing_pred_excess_{m}"));
        let trace = crossing(&table, &format!("crossing_trace_err_{m}"));
        let pass = matches!((excess, trace), (Some(e), Some(t)) if e as f64 <= FIG1_RATIO * t as f64);
        ok &= pass;
        parts.push(format!("{m} excess<1e-2 at p={excess:?}, trace<0.1 at p={trace:?}"));
    }
    out.report(
        5,
        ok,
        format!(
            "rank crossings at n = {}, beta = {}: {} (need excess <= {FIG1_RATIO} * trace), {:.1}s (budget {}s)",
            cfg.fig1.n,
            cfg.fig1.beta,
            parts.join("; "),
            elapsed.as_secs_f64(),
            FIG1_BUDGET.as_secs()
        ),
    );
    table
}

fn criterion_6(out: &mut Outcome, cfg: &Config) -> CsvTable {
    let (report, elapsed) = timed(|| theorem::run_verify_theorem(cfg).expect("theorem check runs"));
    let bound_ratio = report
        .checks
        .iter()
        .find(|(k, _)| *k == theorem::CheckKind::Bound)
        .map(|(_, c)| c.mean_ratio)
        .unwrap_or(f64::INFINITY);
    let sweep: Vec<_> = report.checks.iter().filter(|(k, _)| *k == theorem::CheckKind::Sweep).collect();
    let sweep_worst = sweep.iter().map(|(_, c)| c.mean_ratio).fold(0.0f64, f64::max);
    let ok = bound_ratio <= THEOREM_MAX_RATIO
        && !sweep.is_empty()
        && sweep_worst <= THEOREM_MAX_RATIO
        && elapsed <= THEOREM_BUDGET;
    out.report(
        6,
        ok,
        format!(
            "mean error ratio at p = min(n, {:.0}) is {bound_ratio:.4}; worst over {} sweep ranks from 4*d_max is {sweep_worst:.4} \
             (limit {THEOREM_MAX_RATIO}), {:.1}s (budget {}s)",
            report.bound_value,
            sweep.len(),
            elapsed.as_secs_f64(),
            THEOREM_BUDGET.as_secs()
        ),
    );
    report.table
}

fn criterion_7(out: &mut Outcome, cfg: &Config) -> CsvTable {
    let (report, elapsed) = timed(|| lemma::run_verify_lemma(cfg).expect("lemma check runs"));
    let violations = report.rows.iter().filter(|(_, _, r)| r.empirical > r.bound).count();
    let informative = report.rows.iter().filter(|(_, _, r)| r.bound < 1.0).count();
    out.report(
        7,
        violations == 0 && elapsed <= LEMMA_BUDGET,
        format!(
            "{} (family, p, t) points, {} trials each: {violations} with empirical tail above the bound \
             ({informative} with bound < 1), {:.1}s (budget {}s)",
            report.rows.len(),
            cfg.lemma.trials,
            elapsed.as_secs_f64(),
            LEMMA_BUDGET.as_secs()
        ),
    );
    report.table
}

fn exponent(outcome: &rates::FitOutcome) -> Option<f64> {
    match outcome {
        rates::FitOutcome::Fitted { fit, .. } => Some(fit.exponent),
        rates::FitOutcome::Refused(_) => None,
    }
}

fn within(v: Option<f64>, target: f64, tol: f64) -> bool {
    v.is_some_and(|v| (v - target).abs() <= tol)
}

fn criteria_8_9(out: &mut Outcome, cfg: &Config) -> CsvTable {
    let (report, elapsed) = timed(|| rates::run_rate_check(cfg).expect("rates run"));
    let fam = |beta: u32, delta: f64| {
        report
            .fits
            .iter()
            .find(|f| f.family.beta == beta && f.family.delta == delta)
            .expect("family configured")
    };
    let f48 = fam(4, 8.0);
    let f12 = fam(1, 2.0);
    let (l, e, d) = (exponent(&f48.lambda), exponent(&f48.error), exponent(&f12.d_ave));
    let ok = within(l, RATE_LAMBDA_TARGET, RATE_TOL_MAIN)
        && within(e, RATE_ERROR_TARGET, RATE_TOL_MAIN)
        && within(d, RATE_DAVE_TARGET, RATE_TOL_DAVE)
        && elapsed <= RATES_BUDGET;
    out.report(
        8,
        ok,
        format!(
            "(beta 4, delta 8) lambda* exponent {l:.4?} (target {RATE_LAMBDA_TARGET} +- {RATE_TOL_MAIN}), error exponent {e:.4?} \
             (target {RATE_ERROR_TARGET} +- {RATE_TOL_MAIN}); (beta 1, delta 2) d_ave exponent {d:.4?} \
             (target {RATE_DAVE_TARGET} +- {RATE_TOL_DAVE}); {:.1}s (budget {}s)",
            elapsed.as_secs_f64(),
            RATES_BUDGET.as_secs()
        ),
    );
    let f88 = fam(8, 8.0);
    out.report(
        9,
        f88.saturation_from.is_some(),
        format!(
            "(beta 8, delta 8) lambda* saturation flagged from n = {:?} over n in {:?}",
            f88.saturation_from, cfg.rates.n_list
        ),
    );
    report.table
}

fn criterion_10(out: &mut Outcome, cfg: &Config) -> CsvTable {
    let (report, elapsed) = timed(|| rank_ratio::run_rank_ratio(cfg).expect("rank ratio runs"));
    let (lo, hi) = RANK_RATIO_BAND;
    let mut ratios = Vec::new();
    let mut dd = Vec::new();
    for r in &report.rows {
        ratios.push(r.p_random as f64 / r.dof.d_max);
        ratios.push(r.p_pivoted as f64 / r.dof.d_max);
        dd.push(r.dof.d_max / r.dof.d_ave);
    }
    let rmin = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmax = ratios.iter().cloned().fold(0.0, f64::max);
    let ddmax = dd.iter().cloned().fold(0.0, f64::max);
    let ok = report.rows.len() == RANK_RATIO_POINTS
        && rmin >= lo
        && rmax <= hi
        && ddmax <= DMAX_OVER_DAVE_MAX
        && elapsed <= RANK_RATIO_BUDGET;
    out.report(
        10,
        ok,
        format!(
            "{} lambdas at n = {}: p*/d_max in [{rmin:.3}, {rmax:.3}] (band [{lo}, {hi}]), max d_max/d_ave {ddmax:.3} \
             (limit {DMAX_OVER_DAVE_MAX}), {:.1}s (budget {}s)",
            report.rows.len(),
            cfg.rank_ratio.n,
            elapsed.as_secs_f64(),
            RANK_RATIO_BUDGET.as_secs()
        ),
    );
    report.table
}

fn criterion_11(out: &mut Outcome, cfg: &Config, first: &[(&str, CsvTable)]) {
    let mut mismatched = Vec::new();
    for (name, table) in first {
        let again = match *name {
            "fig1" => fig1::run_fig1(cfg).unwrap(),
            "verify-theorem" => theorem::run_verify_theorem(cfg).unwrap().table,
            "verify-lemma" => lemma::run_verify_lemma(cfg).unwrap().table,
            "rates" => rates::run_rate_check(cfg).unwrap().table,
            "rank-ratio" => rank_ratio::run_rank_ratio(cfg).unwrap().table,
            other => unreachable!("unknown command {other}"),
        };
        if again.to_bytes().unwrap() != table.to_bytes().unwrap() {
            mismatched.push(*name);
        }
    }
    let names: Vec<&str> = first.iter().map(|(n, _)| *n).collect();
    out.report(
        11,
        mismatched.is_empty(),
        format!(
            "byte-identical CSV on rerun with seed {} for {}: mismatches {mismatched:?}",
            cfg.seed,
            names.join(", ")
        ),
    );
}

fn main() -> ExitCode {
    let cfg = Config::default();
    let mut out = Outcome { failed: 0 };
    let mut dof = DofCheck { worst: f64::NEG_INFINITY, violations: 0 };
    criterion_1(&mut out, &mut dof);
    criterion_2(&mut out, &mut dof);
    criterion_3(&mut out, &dof);
    criterion_4(&mut out);
    let tables = vec![
        ("fig1", criterion_5(&mut out, &cfg)),
        ("verify-theorem", criterion_6(&mut out, &cfg)),
        ("verify-lemma", criterion_7(&mut out, &cfg)),
        ("rates", criteria_8_9(&mut out, &cfg)),
        ("rank-ratio", criterion_10(&mut out, &cfg)),
    ];
    criterion_11(&mut out, &cfg, &tables);
    if out.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", out.failed);
        ExitCode::FAILURE
    }
}
