//! Degrees of freedom, fixed-design bias and variance, the sufficient-rank
//! bound with its Monte-Carlo checks, and rate fitting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::{spd_solve, sym_eigenvalues};
use crate::lowrank::{nystrom, pivoted_ichol, sample_columns, LowRankFactor, PivotStop};
use crate::rng::derive_seed;
use crate::spectral::Spectral;
use crate::synthetic::{draw_noise, FixedDesignProblem, KernelDecay, SignalDecay, SpectrumSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofReport {
    /// `n ||diag(K (K + n lambda I)^{-1})||_inf`
    pub d_max: f64,
    /// `tr K (K + n lambda I)^{-1}`
    pub d_trace: f64,
    /// `tr K^2 (K + n lambda I)^{-2}`
    pub d_ave: f64,
    pub bias: f64,
    pub variance: f64,
    pub lambda: f64,
    pub n: usize,
}

impl DofReport {
    pub fn from_spectral(s: &Spectral, sigma2: f64, lambda: f64) -> Self {
        Self {
            d_max: s.d_max(lambda),
            d_trace: s.d_trace(lambda),
            d_ave: s.d_ave(lambda),
            bias: s.bias(lambda),
            variance: s.variance(lambda, sigma2),
            lambda,
            n: s.n(),
        }
    }

    pub fn error(&self) -> f64 {
        self.bias + self.variance
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")))
    }
}

/// `(d_max, d_trace, d_ave)` from one eigendecomposition of `K`.
pub fn dof(k: &KernelMatrix, lambda: f64) -> Result<(f64, f64, f64)> {
    check_lambda(lambda)?;
    let s = Spectral::from_kernel(k, None)?;
    Ok((s.d_max(lambda), s.d_trace(lambda), s.d_ave(lambda)))
}

/// Closed-form bias and variance of the smoothed estimate with noise `sigma2 I`.
pub fn bias_variance(k: &KernelMatrix, z: &DVector<f64>, sigma2: f64, lambda: f64) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    let s = Spectral::from_kernel(k, Some(z))?;
    Ok((s.bias(lambda), s.variance(lambda, sigma2)))
}

/// Monte-Carlo estimate of `(1/n) E ||z_hat - z||^2` and its standard error.
pub fn monte_carlo_error(
    k: &KernelMatrix,
    z: &DVector<f64>,
    sigma2: f64,
    lambda: f64,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    let n = k.n();
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least two draws".into()));
    }
    let mut a = k.entries().clone();
    for i in 0..n {
        a[(i, i)] += n as f64 * lambda;
    }
    // Smoother S = K (K + n lambda I)^{-1}, column by column.
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        inv.set_column(j, &spd_solve(&a, &e)?);
    }
    let smoother = k.entries() * inv;
    let noise = draw_noise(n, sigma2, draws, seed)?;
    let base = &smoother * z - z;
    let errs: Vec<f64> = (0..draws)
        .map(|t| {
            let eps = noise.row(t).transpose();
            (&base + &smoother * eps).norm_squared() / n as f64
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / draws as f64;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (draws - 1) as f64;
    Ok((mean, (var / draws as f64).sqrt()))
}

/// Real-valued rank requirement `(32 d / delta + 2) log(n R^2 / (delta lambda))`.
pub fn theorem_rank_value(d: f64, delta: f64, n: usize, r2: f64, lambda: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    check_lambda(lambda)?;
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!("d must be non-negative, got {d}")));
    }
    let n_r2 = n as f64 * r2;
    let delta_lambda = delta * lambda;
    if n_r2 <= delta_lambda {
        return Err(Error::VacuousBound { n_r2, delta_lambda });
    }
    Ok((32.0 * d / delta + 2.0) * (n_r2 / delta_lambda).ln())
}

/// Smallest integer rank satisfying the bound; may exceed `n`.
pub fn theorem_rank_bound(d: f64, delta: f64, n: usize, r2: f64, lambda: f64) -> Result<usize> {
    Ok(theorem_rank_value(d, delta, n, r2, lambda)?.ceil() as usize)
}

/// `n exp(-p / (32 d / delta + 2))`, the bound on the probability that a
/// column draw loses more than a `(1 - delta/2)^{-2}` factor.
pub fn high_probability_bound(d: f64, delta: f64, n: usize, p: usize) -> f64 {
    n as f64 * (-(p as f64) / (32.0 * d / delta + 2.0)).exp()
}

/// Expected error `bias + variance` of the rank-`p` factor.
pub fn factor_error(factor: &LowRankFactor, z: &DVector<f64>, sigma2: f64, lambda: f64) -> Result<f64> {
    Ok(Spectral::from_factor(factor.phi(), Some(z))?.error(lambda, sigma2))
}

fn factor_error_phi(phi: &DMatrix<f64>, z: &DVector<f64>, sigma2: f64, lambda: f64) -> Result<f64> {
    Ok(Spectral::from_factor(phi, Some(z))?.error(lambda, sigma2))
}

/// Expected errors of `trials` independent uniform rank-`p` approximations.
/// Trial `t` uses the seed `derive_seed(seed, [p, t])`; `p = n` is `L = K`.
pub fn sampled_errors(
    problem: &FixedDesignProblem,
    lambda: f64,
    p: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = problem.n();
    if p == n {
        let e = problem.spectral()?.error(lambda, problem.sigma2);
        return Ok(vec![e; trials]);
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let sel = sample_columns(n, p, derive_seed(seed, &[p as u64, t as u64]))?;
            factor_error(&nystrom(&problem.k, &sel)?, &problem.z, problem.sigma2, lambda)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub p: usize,
    pub delta: f64,
    pub lambda: f64,
    pub d_max: f64,
    pub full_error: f64,
    /// Per-draw `err(L) / err(K)`.
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub std_err: f64,
    /// `mean_ratio <= 1 + 4 delta`
    pub holds: bool,
    /// `(1 - delta/2)^{-2}`
    pub hp_threshold: f64,
    /// Fraction of draws with ratio above `hp_threshold`.
    pub exceed_fraction: f64,
    /// `min(1, n exp(-p / (32 d / delta + 2)))`
    pub hp_bound: f64,
}

/// Monte-Carlo check of the expected-error bound over `trials` column draws.
/// Errors are closed-form in the noise, so only the column sampling is random.
pub fn verify_theorem(
    problem: &FixedDesignProblem,
    lambda: f64,
    delta: f64,
    p: usize,
    trials: usize,
    seed: u64,
) -> Result<TheoremCheck> {
    check_lambda(lambda)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let n = problem.n();
    if p == 0 || p > n || trials == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= p <= n and trials >= 1, got p = {p}, n = {n}, trials = {trials}"
        )));
    }
    let full = problem.spectral()?;
    let full_error = full.error(lambda, problem.sigma2);
    let d_max = full.d_max(lambda);
    let ratios: Vec<f64> = if p == n {
        vec![1.0; trials]
    } else {
        sampled_errors(problem, lambda, p, trials, seed)?
            .into_iter()
            .map(|e| e / full_error)
            .collect()
    };
    let m = ratios.len() as f64;
    let mean_ratio = ratios.iter().sum::<f64>() / m;
    let std_err = if ratios.len() > 1 {
        (ratios.iter().map(|r| (r - mean_ratio).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
    } else {
        0.0
    };
    let hp_threshold = (1.0 - delta / 2.0).powi(-2);
    let exceed_fraction = ratios.iter().filter(|&&r| r > hp_threshold).count() as f64 / m;
    Ok(TheoremCheck {
        p,
        delta,
        lambda,
        d_max,
        full_error,
        mean_ratio,
        std_err,
        holds: mean_ratio <= 1.0 + 4.0 * delta,
        hp_threshold,
        exceed_fraction,
        hp_bound: high_probability_bound(d_max, delta, n, p).min(1.0),
        ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub t: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub bound: f64,
}

/// `lambda_max(Psi^T Psi / n - Psi_I^T Psi_I / p)` for each of `trials`
/// uniform subsets `I` of size `p`.
pub fn subsample_deviations(psi: &DMatrix<f64>, p: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let n = psi.nrows();
    let mean = psi.tr_mul(psi) / n as f64;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let sel = sample_columns(n, p, derive_seed(seed, &[p as u64, t as u64]))?;
            let rows = psi.select_rows(sel.indices());
            let dev = &mean - rows.tr_mul(&rows) / p as f64;
            Ok(sym_eigenvalues(&dev)[0])
        })
        .collect()
}

/// Empirical tail of the subsampled second-moment deviation against the
/// matrix Bernstein bound `r exp(-p t^2 / 2 / (lambda_max(Psi^T Psi / n) (R^2 + t / 3)))`,
/// with `R` the largest row norm.
pub fn verify_lemma_tail(
    psi: &DMatrix<f64>,
    p: usize,
    t_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<LemmaRow>> {
    let (n, r) = psi.shape();
    if p == 0 || p > n || trials == 0 || r == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= p <= n, r >= 1, trials >= 1; got p = {p}, n = {n}, r = {r}"
        )));
    }
    let r2 = psi.row_iter().map(|row| row.norm_squared()).fold(0.0f64, f64::max);
    let lmax = sym_eigenvalues(&(psi.tr_mul(psi) / n as f64))[0];
    let devs = subsample_deviations(psi, p, trials, seed)?;
    let m = trials as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let prob = devs.iter().filter(|&&d| d > t).count() as f64 / m;
            let bound = (r as f64 * (-(p as f64) * t * t / 2.0 / (lmax * (r2 + t / 3.0))).exp()).min(1.0);
            LemmaRow {
                t,
                empirical: prob,
                std_err: (prob * (1.0 - prob) / m).sqrt(),
                bound,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    Random,
    Pivoted,
}

/// Errors of the leading `p` pivoted columns for any `p`, from one run.
struct PivotedPath {
    factor: LowRankFactor,
}

impl PivotedPath {
    fn error(&self, p: usize, z: &DVector<f64>, sigma2: f64, lambda: f64) -> Result<f64> {
        let phi = self.factor.phi();
        let q = p.min(phi.ncols());
        factor_error_phi(&phi.columns(0, q).into_owned(), z, sigma2, lambda)
    }
}

/// Smallest rank whose expected error is within `(1 + tol)` of the full
/// kernel's, found by doubling then bisection and capped at `n`. Random
/// selection averages `trials` draws per rank; pivoting is deterministic.
pub fn sufficient_rank(
    problem: &FixedDesignProblem,
    lambda: f64,
    tol: f64,
    trials: usize,
    method: SamplingMethod,
    seed: u64,
) -> Result<usize> {
    check_lambda(lambda)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if method == SamplingMethod::Random && trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let n = problem.n();
    let target = (1.0 + tol) * problem.spectral()?.error(lambda, problem.sigma2);
    let pivoted = match method {
        SamplingMethod::Pivoted => Some(PivotedPath {
            factor: pivoted_ichol(&problem.k, PivotStop::rank(n))?,
        }),
        SamplingMethod::Random => None,
    };
    let passes = |p: usize| -> Result<bool> {
        if p >= n {
            return Ok(true);
        }
        let err = match &pivoted {
            Some(path) => path.error(p, &problem.z, problem.sigma2, lambda)?,
            None => {
                let errs = sampled_errors(problem, lambda, p, trials, seed)?;
                errs.iter().sum::<f64>() / errs.len() as f64
            }
        };
        Ok(err <= target)
    };
    if passes(1)? {
        return Ok(1);
    }
    let mut lo = 1; // known to fail
    let mut hi = 2;
    while hi < n && !passes(hi)? {
        lo = hi;
        hi *= 2;
    }
    hi = hi.min(n);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// 40 log-spaced values spanning `[1e-16, 1] * tr(K) / n`.
pub fn default_lambda_grid(trace_over_n: f64) -> Vec<f64> {
    log_grid(1e-16 * trace_over_n, trace_over_n, 40)
}

/// Below this value the optimum is treated as numerically saturated.
pub const SATURATION_LAMBDA: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaOptimum {
    pub lambda: f64,
    pub error: f64,
    /// The coarse minimum sat on the smallest grid value.
    pub at_grid_min: bool,
    /// `at_grid_min` or `lambda < 1e-15`.
    pub saturated: bool,
}

/// Minimizer of `bias + variance` over `grid`, refined once with 21 log-spaced
/// points between the neighbours of the coarse minimum.
pub fn optimal_lambda_spectral(s: &Spectral, sigma2: f64, grid: &[f64]) -> Result<LambdaOptimum> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("lambda grid must be positive and increasing".into()));
    }
    let argmin = |pts: &[f64]| -> (usize, f64) {
        pts.iter()
            .enumerate()
            .map(|(i, &l)| (i, s.error(l, sigma2)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    };
    let (i, coarse) = argmin(grid);
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    let (mut lambda, mut error) = (grid[i], coarse);
    if hi > lo {
        let fine = log_grid(lo, hi, 21);
        let (j, e) = argmin(&fine);
        if e < error {
            lambda = fine[j];
            error = e;
        }
    }
    let at_grid_min = i == 0;
    Ok(LambdaOptimum {
        lambda,
        error,
        at_grid_min,
        saturated: at_grid_min || lambda < SATURATION_LAMBDA,
    })
}

pub fn optimal_lambda(problem: &FixedDesignProblem, grid: &[f64]) -> Result<LambdaOptimum> {
    optimal_lambda_spectral(&problem.spectral()?, problem.sigma2, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub inputs: Vec<(f64, f64)>,
}

/// Least-squares line through `(log n, log value)`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 4 pairs, got {}",
            pairs.len()
        )));
    }
    if let Some(&(n, v)) = pairs.iter().find(|&&(n, v)| !(n > 0.0 && v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs positive inputs, got ({n}, {v})"
        )));
    }
    let m = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs at least two distinct n".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - exponent * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(RateFit {
        exponent,
        intercept,
        r_squared,
        inputs: pairs.to_vec(),
    })
}

/// Asymptotic exponents in `n` for a spectrum family; `None` where the rate
/// is not a pure power of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    pub lambda: Option<f64>,
    pub error: Option<f64>,
    pub d_ave: Option<f64>,
}

pub fn expected_rates(spec: &SpectrumSpec) -> ExpectedRates {
    match (spec.mu, spec.nu) {
        (KernelDecay::Polynomial { beta }, SignalDecay::Polynomial { delta }) => {
            let b = beta as f64;
            if 2.0 * delta > 4.0 * b + 1.0 {
                ExpectedRates {
                    lambda: Some(-1.0 / (2.0 + 1.0 / (2.0 * b))),
                    error: Some(1.0 / (4.0 * b + 1.0) - 1.0),
                    d_ave: Some(1.0 / (4.0 * b + 1.0)),
                }
            } else {
                ExpectedRates {
                    lambda: Some(-b / delta),
                    error: Some(1.0 / (2.0 * delta) - 1.0),
                    d_ave: Some(1.0 / (2.0 * delta)),
                }
            }
        }
        (KernelDecay::Polynomial { beta }, SignalDecay::Exponential { .. }) => {
            let b = beta as f64;
            ExpectedRates {
                lambda: Some(-1.0 / (2.0 + 1.0 / (2.0 * b))),
                error: Some(1.0 / (4.0 * b + 1.0) - 1.0),
                d_ave: Some(1.0 / (4.0 * b + 1.0)),
            }
        }
        (KernelDecay::Exponential { .. }, SignalDecay::Polynomial { delta }) => ExpectedRates {
            lambda: None,
            error: Some(1.0 / (2.0 * delta) - 1.0),
            d_ave: Some(1.0 / (2.0 * delta)),
        },
        (KernelDecay::Exponential { rho }, SignalDecay::Exponential { kappa }) => ExpectedRates {
            lambda: Some(if kappa > 2.0 * rho { -0.5 } else { -rho / kappa }),
            error: None,
            d_ave: None,
        },
    }
}
