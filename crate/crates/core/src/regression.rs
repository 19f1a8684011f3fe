//! Kernel ridge regression: exact solver, reduced low-rank solver and a damped
//! Newton method for smooth convex losses.
//!
//! All solvers use the `K + n lambda I` convention; `lambda` is never
//! pre-multiplied by `n` at the call site.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, KernelMatrix, KernelSpec};
use crate::linalg::spd_solve;
use crate::lowrank::{FeatureMap, LowRankFactor};
use crate::points::Points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `(y - u)^2 / 2`
    Square,
    /// `log(1 + exp(-y u))`, labels in `{-1, +1}`.
    Logistic,
}

impl Loss {
    pub fn value(self, y: f64, u: f64) -> f64 {
        match self {
            Loss::Square => 0.5 * (y - u) * (y - u),
            Loss::Logistic => softplus(-y * u),
        }
    }

    /// First and second derivative in `u`.
    pub fn derivatives(self, y: f64, u: f64) -> (f64, f64) {
        match self {
            Loss::Square => (u - y, 1.0),
            Loss::Logistic => {
                let m = y * u;
                let s = sigmoid(-m);
                (-y * s, s * sigmoid(m))
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Loss::Square => "square",
            Loss::Logistic => "logistic",
        }
    }
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitMode {
    /// Representer coefficients, `f(x) = sum_i alpha_i k(x, x_i)`.
    Exact { alpha: DVector<f64> },
    /// Weights on the explicit features built from the columns `indices`.
    LowRank { w: DVector<f64>, indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub mode: FitMode,
    pub lambda: f64,
    pub loss: Loss,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")))
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Smoothed estimate `z_hat = K (K + n lambda I)^{-1} y`.
pub fn krr_exact(k: &KernelMatrix, y: &DVector<f64>, lambda: f64) -> Result<(RidgeFit, DVector<f64>)> {
    check_lambda(lambda)?;
    let n = k.n();
    check_len(n, y.len())?;
    let mut a = k.entries().clone();
    for i in 0..n {
        a[(i, i)] += n as f64 * lambda;
    }
    let alpha = spd_solve(&a, y)?;
    let zhat = k.entries() * &alpha;
    Ok((
        RidgeFit {
            mode: FitMode::Exact { alpha },
            lambda,
            loss: Loss::Square,
        },
        zhat,
    ))
}

fn reduced_system(phi: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = phi.nrows();
    let mut a = phi.tr_mul(phi);
    for i in 0..a.nrows() {
        a[(i, i)] += n as f64 * lambda;
    }
    a
}

/// Square-loss fit on the factor: `(Phi^T Phi + n lambda I) w = Phi^T y`,
/// returning `z_hat_L = Phi w = L (L + n lambda I)^{-1} y`.
pub fn krr_lowrank(
    factor: &LowRankFactor,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<(RidgeFit, DVector<f64>)> {
    check_lambda(lambda)?;
    let phi = factor.phi();
    check_len(phi.nrows(), y.len())?;
    if phi.ncols() == 0 {
        return Err(Error::InvalidArgument("factor has rank zero".into()));
    }
    let w = spd_solve(&reduced_system(phi, lambda), &phi.tr_mul(y))?;
    let zhat = phi * &w;
    Ok((
        RidgeFit {
            mode: FitMode::LowRank {
                w,
                indices: factor.selection().indices().to_vec(),
            },
            lambda,
            loss: Loss::Square,
        },
        zhat,
    ))
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;
const LINE_SEARCH_HALVINGS: usize = 60;

/// `(1/n) sum_i loss(y_i, (Phi w)_i) + (lambda / 2) ||w||^2`.
pub fn objective(phi: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, lambda: f64, loss: Loss) -> f64 {
    let u = phi * w;
    let n = y.len() as f64;
    y.iter().zip(u.iter()).map(|(&yi, &ui)| loss.value(yi, ui)).sum::<f64>() / n
        + 0.5 * lambda * w.norm_squared()
}

fn gradient_hessian(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    lambda: f64,
    loss: Loss,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = y.len();
    let u = phi * w;
    let mut g1 = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let (a, b) = loss.derivatives(y[i], u[i]);
        g1[i] = a;
        d[i] = b;
    }
    let grad = phi.tr_mul(&g1) / n as f64 + w * lambda;
    let mut scaled = phi.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let mut hess = phi.tr_mul(&scaled) / n as f64;
    for j in 0..hess.nrows() {
        hess[(j, j)] += lambda;
    }
    (grad, hess)
}

/// Minimizes [`objective`] with damped Newton steps from `w = 0`.
///
/// Converged when `||grad|| <= 1e-10 max(1, ||Phi^T y|| / n)`. The square loss
/// is solved by its first step. If the line search cannot decrease the
/// objective any further at machine precision the current iterate is returned
/// as long as the step it rejected was negligible relative to `w`.
pub fn newton_solve(factor: &LowRankFactor, y: &DVector<f64>, lambda: f64, loss: Loss) -> Result<RidgeFit> {
    newton_from(factor.phi(), y, lambda, loss, None).map(|w| RidgeFit {
        mode: FitMode::LowRank {
            w,
            indices: factor.selection().indices().to_vec(),
        },
        lambda,
        loss,
    })
}

/// Newton iterations on an arbitrary design matrix, optionally warm-started.
pub fn newton_from(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loss: Loss,
    start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    check_len(phi.nrows(), y.len())?;
    if loss == Loss::Logistic && y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("logistic labels must be -1 or +1".into()));
    }
    let n = y.len() as f64;
    let tol = NEWTON_GRAD_TOL * (phi.tr_mul(y).norm() / n).max(1.0);
    let mut w = match start {
        Some(s) => {
            check_len(phi.ncols(), s.len())?;
            s.clone()
        }
        None => DVector::zeros(phi.ncols()),
    };
    let mut f = objective(phi, y, &w, lambda, loss);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let (grad, hess) = gradient_hessian(phi, y, &w, lambda, loss);
        grad_norm = grad.norm();
        if grad_norm <= tol {
            return Ok(w);
        }
        let step = spd_solve(&hess, &grad)?;
        if loss == Loss::Square {
            // Quadratic objective: the full step is exact.
            w -= &step;
            f = objective(phi, y, &w, lambda, loss);
            continue;
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..LINE_SEARCH_HALVINGS {
            let cand = &w - &step * scale;
            let fc = objective(phi, y, &cand, lambda, loss);
            if fc < f {
                w = cand;
                f = fc;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            if step.norm() <= 1e3 * f64::EPSILON * w.norm().max(1.0) {
                return Ok(w);
            }
            return Err(Error::NonConvergence {
                iterations: NEWTON_MAX_ITER,
                grad_norm,
                tolerance: tol,
            });
        }
    }
    let (grad, _) = gradient_hessian(phi, y, &w, lambda, loss);
    if grad.norm() <= tol {
        return Ok(w);
    }
    Err(Error::NonConvergence {
        iterations: NEWTON_MAX_ITER,
        grad_norm: grad_norm.min(grad.norm()),
        tolerance: tol,
    })
}

/// What a fit needs to be evaluated at new inputs.
#[derive(Debug, Clone, Copy)]
pub enum PredictContext<'a> {
    /// Training inputs and kernel, for exact fits.
    Kernel { training: &'a Points, spec: &'a KernelSpec },
    /// Explicit feature map, for low-rank fits.
    Features(&'a FeatureMap),
}

pub fn predict(fit: &RidgeFit, test: &Points, ctx: PredictContext<'_>) -> Result<DVector<f64>> {
    match (&fit.mode, ctx) {
        (FitMode::Exact { alpha }, PredictContext::Kernel { training, spec }) => {
            check_len(alpha.len(), training.len())?;
            Ok(cross_gram(test, training, spec)? * alpha)
        }
        (FitMode::LowRank { w, .. }, PredictContext::Features(map)) => {
            check_len(w.len(), map.dim())?;
            Ok(map.apply_all(test)? * w)
        }
        (FitMode::Exact { .. }, _) => Err(Error::ModeMismatch(
            "exact fit needs the training kernel context".into(),
        )),
        (FitMode::LowRank { .. }, _) => Err(Error::ModeMismatch(
            "low-rank fit needs a feature map context".into(),
        )),
    }
}

impl RidgeFit {
    pub fn coefficients(&self) -> &DVector<f64> {
        match &self.mode {
            FitMode::Exact { alpha } => alpha,
            FitMode::LowRank { w, .. } => w,
        }
    }

    /// Key-value CSV: `mode`, `lambda`, `loss`, `indices` and `coef` lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (mode, indices) = match &self.mode {
            FitMode::Exact { .. } => ("exact", &[][..]),
            FitMode::LowRank { indices, .. } => ("lowrank", &indices[..]),
        };
        writeln!(out, "mode,{mode}")?;
        writeln!(out, "lambda,{:e}", self.lambda)?;
        writeln!(out, "loss,{}", self.loss.name())?;
        let idx: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
        writeln!(out, "indices{}{}", if idx.is_empty() { "" } else { "," }, idx.join(","))?;
        let coef: Vec<String> = self.coefficients().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "coef,{}", coef.join(","))
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, ',');
            let key = parts.next().unwrap_or_default().trim().to_string();
            fields.insert(key, parts.next().unwrap_or_default().trim().to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| Error::Parse(format!("missing field {k:?}")));
        let lambda: f64 = get("lambda")?
            .parse()
            .map_err(|_| Error::Parse("bad lambda".into()))?;
        let loss = match get("loss")?.as_str() {
            "square" => Loss::Square,
            "logistic" => Loss::Logistic,
            other => return Err(Error::Parse(format!("unknown loss {other:?}"))),
        };
        let list = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(',').map(|t| t.trim().to_string()).collect()
            }
        };
        let coef: Vec<f64> = list(get("coef")?)
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad coefficient {s:?}"))))
            .collect::<Result<_>>()?;
        let coef = DVector::from_vec(coef);
        let mode = match get("mode")?.as_str() {
            "exact" => FitMode::Exact { alpha: coef },
            "lowrank" => FitMode::LowRank {
                w: coef,
                indices: list(get("indices").map(String::as_str).unwrap_or(""))
                    .iter()
                    .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad index {s:?}"))))
                    .collect::<Result<_>>()?,
            },
            other => return Err(Error::Parse(format!("unknown mode {other:?}"))),
        };
        Ok(Self { mode, lambda, loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gram;
    use crate::linalg::{pinv_sym, PINV_RELATIVE_CUTOFF};
    use crate::lowrank::{nystrom, pivoted_ichol, sample_columns, ColumnSelection, PivotStop};
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_psd(n: usize, rank: usize, seed: u64) -> KernelMatrix {
        let mut rng = rng_from_seed(seed);
        let g = DMatrix::from_fn(n, rank, |_, _| rng.random::<f64>() - 0.5);
        KernelMatrix::from_dense(&g * g.transpose()).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = rng_from_seed(seed);
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    /// Gauss-Jordan inverse written out elementwise.
    fn gauss_jordan_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut inv = DMatrix::<f64>::identity(n, n);
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
            m.swap_rows(c, piv);
            inv.swap_rows(c, piv);
            let d = m[(c, c)];
            for j in 0..n {
                m[(c, j)] /= d;
                inv[(c, j)] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = m[(r, c)];
                    for j in 0..n {
                        m[(r, j)] -= f * m[(c, j)];
                        inv[(r, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn identity_kernel_is_scalar_shrinkage() {
        let n = 7;
        let k = KernelMatrix::from_dense(DMatrix::identity(n, n)).unwrap();
        let y = random_vec(n, 1);
        let lambda = 0.3;
        let (_, zhat) = krr_exact(&k, &y, lambda).unwrap();
        assert!(rel(&zhat, &(&y / (1.0 + n as f64 * lambda))) < 1e-14);
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let k = random_psd(10, 10, 2);
        let y = random_vec(10, 3);
        let lmax = crate::linalg::sym_eigenvalues(k.entries())[0];
        let (_, zhat) = krr_exact(&k, &y, 1e6 * lmax / 10.0).unwrap();
        assert!(zhat.norm() <= 2e-6 * y.norm());
    }

    #[test]
    fn exact_matches_explicit_inverse() {
        let n = 6;
        let k = random_psd(n, n, 4);
        let y = random_vec(n, 5);
        let lambda = 0.01;
        let mut a = k.entries().clone();
        for i in 0..n {
            a[(i, i)] += n as f64 * lambda;
        }
        let want = k.entries() * gauss_jordan_inverse(&a) * &y;
        let (fit, zhat) = krr_exact(&k, &y, lambda).unwrap();
        assert!(rel(&zhat, &want) < 1e-10);
        let FitMode::Exact { alpha } = &fit.mode else { panic!() };
        assert!((&a * alpha - &y).norm() <= 1e-8 * y.norm());
        assert!(krr_exact(&k, &y, 0.0).is_err());
    }

    #[test]
    fn full_factor_matches_exact() {
        let k = random_psd(20, 20, 6);
        let y = random_vec(20, 7);
        let f = nystrom(&k, &ColumnSelection::all(20)).unwrap();
        let (_, zl) = krr_lowrank(&f, &y, 1e-3).unwrap();
        let (_, zk) = krr_exact(&k, &y, 1e-3).unwrap();
        assert!(rel(&zl, &zk) < 1e-8);
    }

    #[test]
    fn rank_one_scalar_formula() {
        let k = random_psd(9, 9, 8);
        let y = random_vec(9, 9);
        let f = nystrom(&k, &ColumnSelection::explicit(vec![4], 9).unwrap()).unwrap();
        let phi = f.phi().column(0);
        let lambda = 0.05;
        let want = phi.dot(&y) / (phi.dot(&phi) + 9.0 * lambda);
        let (fit, _) = krr_lowrank(&f, &y, lambda).unwrap();
        assert_relative_eq!(fit.coefficients()[0], want, max_relative = 1e-13);
    }

    #[test]
    fn lowrank_matches_dense_smoother() {
        let n = 50;
        let k = random_psd(n, n, 10);
        let y = random_vec(n, 11);
        let f = nystrom(&k, &sample_columns(n, 12, 12).unwrap()).unwrap();
        let l = f.approximation();
        let lambda = 1e-3;
        let mut a = l.clone();
        for i in 0..n {
            a[(i, i)] += n as f64 * lambda;
        }
        let want = &l * a.lu().solve(&y).unwrap();
        let (fit, zhat) = krr_lowrank(&f, &y, lambda).unwrap();
        assert!(rel(&zhat, &want) < 1e-8);
        let w = fit.coefficients();
        let lhs = reduced_system(f.phi(), lambda) * w;
        let rhs = f.phi().tr_mul(&y);
        assert!((lhs - &rhs).norm() <= 1e-8 * rhs.norm());
    }

    #[test]
    fn newton_square_matches_lowrank_and_is_one_step() {
        let n = 40;
        let k = random_psd(n, n, 13);
        let y = random_vec(n, 14);
        let f = nystrom(&k, &sample_columns(n, 10, 15).unwrap()).unwrap();
        let lambda = 1e-4;
        let newton = newton_solve(&f, &y, lambda, Loss::Square).unwrap();
        let (direct, _) = krr_lowrank(&f, &y, lambda).unwrap();
        assert!(rel(newton.coefficients(), direct.coefficients()) < 1e-10);
        // One more Newton step from the solution barely moves it.
        let w = newton.coefficients();
        let (g, h) = gradient_hessian(f.phi(), &y, w, lambda, Loss::Square);
        let step = spd_solve(&h, &g).unwrap();
        assert!(step.norm() < 1e-12 * w.norm());
    }

    #[test]
    fn logistic_shrinks_with_lambda() {
        let n = 30;
        // Periodic kernels have zero mean on a grid, so use a Gaussian one.
        let pts = Points::from_scalars((0..n).map(|i| i as f64 / n as f64).collect());
        let spec = KernelSpec::Gaussian { bandwidth: 0.3 };
        let k = gram(&pts, &spec).unwrap();
        let f = pivoted_ichol(&k, PivotStop::rank(8)).unwrap();
        let y = DVector::from_element(n, 1.0);
        let mut prev = f64::INFINITY;
        for lambda in [1e-2, 1e-1, 1.0, 10.0, 100.0] {
            let fit = newton_solve(&f, &y, lambda, Loss::Logistic).unwrap();
            let w = fit.coefficients();
            assert!(w.norm() < prev);
            prev = w.norm();
            // The optimum beats nearby perturbations and the origin.
            let fw = objective(f.phi(), &y, w, lambda, Loss::Logistic);
            assert!(fw <= objective(f.phi(), &y, &DVector::zeros(w.len()), lambda, Loss::Logistic));
            for s in [0.99, 1.01] {
                assert!(fw <= objective(f.phi(), &y, &(w * s), lambda, Loss::Logistic));
            }
        }
    }

    #[test]
    fn logistic_separable_toy() {
        let phi = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let lambda = 1e-3;
        let w = newton_from(&phi, &y, lambda, Loss::Logistic, None).unwrap();
        let (g, _) = gradient_hessian(&phi, &y, &w, lambda, Loss::Logistic);
        let tol = NEWTON_GRAD_TOL * (phi.tr_mul(&y).norm() / 2.0).max(1.0);
        assert!(g.norm() <= tol);
        let f0 = objective(&phi, &y, &DVector::zeros(1), lambda, Loss::Logistic);
        assert!(objective(&phi, &y, &w, lambda, Loss::Logistic) < f0);
        assert!(newton_from(&phi, &DVector::from_vec(vec![1.0, 0.5]), lambda, Loss::Logistic, None).is_err());
    }

    #[test]
    fn predictions_are_consistent_across_modes() {
        let n = 30;
        let pts = Points::from_scalars((0..n).map(|i| (i as f64 * 0.618).fract()).collect());
        let spec = KernelSpec::PeriodicPolynomial { beta: 2 };
        let k = gram(&pts, &spec).unwrap();
        let y = random_vec(n, 16);
        let lambda = 1e-4;
        let (exact, zk) = krr_exact(&k, &y, lambda).unwrap();
        let exact_ctx = PredictContext::Kernel { training: &pts, spec: &spec };
        let on_train = predict(&exact, &pts, exact_ctx).unwrap();
        assert!(rel(&on_train, &zk) < 1e-10);

        let f = nystrom(&k, &ColumnSelection::all(n)).unwrap();
        let fm = FeatureMap::new(&f, &pts, spec).unwrap();
        let (low, zl) = krr_lowrank(&f, &y, lambda).unwrap();
        assert!(rel(&predict(&low, &pts, PredictContext::Features(&fm)).unwrap(), &zl) < 1e-10);

        let grid = Points::from_scalars((0..57).map(|i| i as f64 / 57.0 + 0.003).collect());
        let pe = predict(&exact, &grid, exact_ctx).unwrap();
        let pl = predict(&low, &grid, PredictContext::Features(&fm)).unwrap();
        assert!((pe - pl).amax() <= 1e-6 * zk.amax());

        assert!(matches!(predict(&low, &grid, exact_ctx), Err(Error::ModeMismatch(_))));
        assert!(matches!(
            predict(&exact, &grid, PredictContext::Features(&fm)),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn tiny_lambda_reduced_solve_succeeds_on_fast_decay() {
        let n = 256;
        let pts = Points::from_scalars((0..n).map(|i| i as f64 / n as f64).collect());
        let k = gram(&pts, &KernelSpec::PeriodicPolynomial { beta: 8 }).unwrap();
        let f = nystrom(&k, &sample_columns(n, 64, 1).unwrap()).unwrap();
        let y = random_vec(n, 2);
        let (fit, zhat) = krr_lowrank(&f, &y, 1e-14).unwrap();
        assert!(fit.coefficients().iter().all(|v| v.is_finite()));
        assert!(zhat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fit_csv_roundtrip() {
        let k = random_psd(12, 12, 17);
        let y = random_vec(12, 18);
        let (fit, _) = krr_exact(&k, &y, 0.02).unwrap();
        let f = nystrom(&k, &sample_columns(12, 5, 19).unwrap()).unwrap();
        let (low, _) = krr_lowrank(&f, &y, 0.02).unwrap();
        for fit in [fit, low] {
            let mut buf = Vec::new();
            fit.write_csv(&mut buf).unwrap();
            assert_eq!(RidgeFit::read_csv(std::io::Cursor::new(buf)).unwrap(), fit);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn smoother_identity(seed in 0u64..10_000, n in 3usize..100, pfrac in 0.05f64..1.0, loglam in -6.0f64..0.0) {
            let k = random_psd(n, n, seed);
            let y = random_vec(n, seed + 1);
            let p = ((n as f64 * pfrac) as usize).clamp(1, n);
            let f = nystrom(&k, &sample_columns(n, p, seed + 2).unwrap()).unwrap();
            let lambda = 10f64.powf(loglam);
            let (_, zhat) = krr_lowrank(&f, &y, lambda).unwrap();
            let l = f.approximation();
            let mut a = l.clone();
            for i in 0..n { a[(i, i)] += n as f64 * lambda; }
            let want = &l * pinv_sym(&a, PINV_RELATIVE_CUTOFF * 1e-4) * &y;
            prop_assert!(rel(&zhat, &want) < 1e-8, "rel = {}", rel(&zhat, &want));
        }

        #[test]
        fn shrinkage_on_eigen_aligned_problem(seed in 0u64..10_000, n in 2usize..30) {
            let mut rng = rng_from_seed(seed);
            let q = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5).qr().q();
            let s = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.01);
            let k = KernelMatrix::from_dense(&q * DMatrix::from_diagonal(&s) * q.transpose()).unwrap();
            let y = &q * DVector::from_fn(n, |_, _| rng.random::<f64>());
            let mut prev = f64::INFINITY;
            for e in -6..=2 {
                let (_, zhat) = krr_exact(&k, &y, 10f64.powi(e)).unwrap();
                prop_assert!(zhat.norm() <= prev * (1.0 + 1e-12));
                prev = zhat.norm();
            }
        }
    }
}
