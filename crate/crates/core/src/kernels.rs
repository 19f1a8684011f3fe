//! Kernel functions and Gram matrices.
//!
//! The periodic kernels are `k(x, y) = sum_{i>=1} 2 mu_i cos(2 pi i (x - y))` on
//! `[0, 1]`. With `mu_i = i^{-2 beta}` the series has the closed form
//! `(-1)^{beta+1} (2 pi)^{2 beta} B_{2 beta}(frac(x - y)) / (2 beta)!`, where
//! `B_m` is the m-th Bernoulli polynomial; with `mu_i = e^{-rho i}` it is a
//! ratio of trigonometric terms.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::points::Points;
use crate::rng::rng_from_seed;

/// Integer smoothness orders with a tabulated Bernoulli polynomial.
pub const SUPPORTED_BETAS: [u32; 5] = [1, 2, 3, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `mu_i = i^{-2 beta}`.
    PeriodicPolynomial { beta: u32 },
    /// `mu_i = e^{-rho i}`.
    PeriodicExponential { rho: f64 },
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::PeriodicPolynomial { beta } => {
                if SUPPORTED_BETAS.contains(&beta) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "periodic polynomial kernel supports beta in {SUPPORTED_BETAS:?}, got {beta}"
                    )))
                }
            }
            KernelSpec::PeriodicExponential { rho } => {
                if rho > 0.0 && rho.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("rho must be positive, got {rho}")))
                }
            }
            KernelSpec::Gaussian { bandwidth } => {
                if bandwidth > 0.0 && bandwidth.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "bandwidth must be positive, got {bandwidth}"
                    )))
                }
            }
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, KernelSpec::Gaussian { .. })
    }

    /// Evaluate `k(x, y)`. Periodic kernels take one-dimensional inputs.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if self.is_periodic() && x.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: x.len(),
            });
        }
        self.validate()?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::PeriodicPolynomial { beta } => periodic_poly_value(x[0] - y[0], beta),
            KernelSpec::PeriodicExponential { rho } => periodic_exp_value(x[0] - y[0], rho),
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    /// `k(x, x)`, constant for every kernel here.
    pub fn self_similarity(&self) -> f64 {
        match *self {
            KernelSpec::PeriodicPolynomial { beta } => periodic_poly_value(0.0, beta),
            KernelSpec::PeriodicExponential { rho } => periodic_exp_value(0.0, rho),
            KernelSpec::Gaussian { .. } => 1.0,
        }
    }
}

/// Bernoulli numbers `B_0..=B_16` (convention `B_1 = -1/2`) from the recurrence
/// `sum_{k=0}^{m} C(m+1, k) B_k = 0`.
pub fn bernoulli_numbers() -> &'static [f64; 17] {
    static NUMBERS: OnceLock<[f64; 17]> = OnceLock::new();
    NUMBERS.get_or_init(|| {
        let mut b = [0.0; 17];
        b[0] = 1.0;
        for m in 1..17 {
            let s: f64 = (0..m).map(|k| binomial(m + 1, k) * b[k]).sum();
            b[m] = -s / (m as f64 + 1.0);
        }
        b
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients (ascending powers) of the Bernoulli polynomial `B_degree`.
pub fn bernoulli_polynomial(degree: usize) -> Vec<f64> {
    assert!(degree <= 16, "Bernoulli polynomials tabulated up to degree 16");
    let b = bernoulli_numbers();
    let mut coeffs = vec![0.0; degree + 1];
    for (k, bk) in b.iter().enumerate().take(degree + 1) {
        coeffs[degree - k] = binomial(degree, k) * bk;
    }
    coeffs
}

fn cached_bernoulli(beta: u32) -> &'static [f64] {
    static POLYS: OnceLock<Vec<(u32, Vec<f64>)>> = OnceLock::new();
    let polys = POLYS.get_or_init(|| {
        SUPPORTED_BETAS
            .iter()
            .map(|&b| (b, bernoulli_polynomial(2 * b as usize)))
            .collect()
    });
    polys
        .iter()
        .find(|(b, _)| *b == beta)
        .map(|(_, c)| c.as_slice())
        .expect("beta validated against SUPPORTED_BETAS")
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// `frac(t) = t - floor(t)`, in `[0, 1)` also for negative `t`.
pub fn frac(t: f64) -> f64 {
    let f = t - t.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

fn periodic_poly_value(delta: f64, beta: u32) -> f64 {
    let m = 2 * beta as i32;
    let sign = if beta % 2 == 1 { 1.0 } else { -1.0 };
    let factorial: f64 = (1..=m).map(f64::from).product();
    sign * (2.0 * PI).powi(m) * horner(cached_bernoulli(beta), frac(delta)) / factorial
}

fn periodic_exp_value(delta: f64, rho: f64) -> f64 {
    let q = (-rho).exp();
    let c = (2.0 * PI * delta).cos();
    2.0 * (q * c - q * q) / (1.0 - 2.0 * q * c + q * q)
}

/// `sum_{i>=1} 2 i^{-2 beta} cos(2 pi i (x - y))` in closed form.
pub fn periodic_poly_kernel(x: f64, y: f64, beta: u32) -> Result<f64> {
    KernelSpec::PeriodicPolynomial { beta }.validate()?;
    Ok(periodic_poly_value(x - y, beta))
}

/// `sum_{i>=1} 2 e^{-rho i} cos(2 pi i (x - y))` in closed form.
pub fn periodic_exp_kernel(x: f64, y: f64, rho: f64) -> Result<f64> {
    KernelSpec::PeriodicExponential { rho }.validate()?;
    Ok(periodic_exp_value(x - y, rho))
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> Result<f64> {
    KernelSpec::Gaussian { bandwidth }.eval(x, y)
}

/// Symmetric positive semidefinite Gram matrix with its diagonal cached.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    diag: DVector<f64>,
}

impl KernelMatrix {
    /// Wrap a dense square matrix, symmetrizing it exactly.
    pub fn from_dense(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let entries = (&m + m.transpose()) * 0.5;
        let diag = entries.diagonal();
        Ok(Self { entries, diag })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    /// `R^2 = ||diag(K)||_inf`.
    pub fn r2(&self) -> f64 {
        self.diag.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        self.diag.sum()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.entries.column(j).into_owned()
    }

    /// Smallest eigenvalue divided by the largest.
    pub fn min_eig_ratio(&self) -> f64 {
        let ev = sym_eigenvalues(&self.entries);
        let max = ev.first().copied().unwrap_or(0.0);
        let min = ev.last().copied().unwrap_or(0.0);
        if max > 0.0 {
            min / max
        } else {
            0.0
        }
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eig_ratio() >= -tol
    }

    /// True when entry `(i, j)` only depends on `(i - j) mod n`.
    pub fn is_circulant(&self, tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| (self.entries[(i, j)] - self.entries[((i + n - j) % n, 0)]).abs() <= tol))
    }
}

/// Source of kernel columns for algorithms that never form the full matrix.
pub trait ColumnOracle: Sync {
    fn n(&self) -> usize;
    fn diagonal(&self) -> DVector<f64>;
    fn column(&self, j: usize) -> DVector<f64>;
}

impl ColumnOracle for KernelMatrix {
    fn n(&self) -> usize {
        KernelMatrix::n(self)
    }

    fn diagonal(&self) -> DVector<f64> {
        self.diag.clone()
    }

    fn column(&self, j: usize) -> DVector<f64> {
        KernelMatrix::column(self, j)
    }
}

/// Kernel columns computed on demand from the design points.
pub struct LazyKernel<'a> {
    points: &'a Points,
    spec: KernelSpec,
}

impl<'a> LazyKernel<'a> {
    pub fn new(points: &'a Points, spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        if spec.is_periodic() && points.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: points.dim(),
            });
        }
        Ok(Self { points, spec })
    }
}

impl ColumnOracle for LazyKernel<'_> {
    fn n(&self) -> usize {
        self.points.len()
    }

    fn diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points.rows().map(|x| self.spec.eval_unchecked(x, x)),
        )
    }

    fn column(&self, j: usize) -> DVector<f64> {
        let xj = self.points.row(j);
        DVector::from_iterator(
            self.points.len(),
            self.points.rows().map(|x| self.spec.eval_unchecked(x, xj)),
        )
    }
}

fn check_points(points: &Points, spec: &KernelSpec) -> Result<()> {
    spec.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidArgument("gram needs at least one point".into()));
    }
    if spec.is_periodic() && points.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: points.dim(),
        });
    }
    Ok(())
}

/// Gram matrix `K_ij = k(x_i, x_j)`. Rows are filled in parallel; each entry
/// is evaluated once for `i <= j` and mirrored.
pub fn gram(points: &Points, spec: &KernelSpec) -> Result<KernelMatrix> {
    check_points(points, spec)?;
    let n = points.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = points.row(i);
            (i..n).map(|j| spec.eval_unchecked(xi, points.row(j))).collect()
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            m[(i, i + off)] = v;
            m[(i + off, i)] = v;
        }
    }
    let diag = m.diagonal();
    Ok(KernelMatrix { entries: m, diag })
}

/// Rectangular kernel matrix `k(a_i, b_j)`.
pub fn cross_gram(a: &Points, b: &Points, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if spec.is_periodic() && a.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: a.dim(),
        });
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        spec.eval_unchecked(a.row(i), b.row(j))
    }))
}

/// Median pairwise Euclidean distance on a seeded subsample of at most
/// `max_points` points.
pub fn median_bandwidth(points: &Points, max_points: usize, seed: u64) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "median heuristic needs at least two points".into(),
        ));
    }
    let m = n.min(max_points.max(2));
    let mut idx = sample(&mut rng_from_seed(seed), n, m).into_vec();
    idx.sort_unstable();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            let d2: f64 = points
                .row(idx[a])
                .iter()
                .zip(points.row(idx[b]))
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::InvalidArgument(
            "median pairwise distance is zero".into(),
        ))
    }
}
