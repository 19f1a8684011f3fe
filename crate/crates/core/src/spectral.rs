//! Closed-form fixed-design errors in the eigenbasis of a smoother matrix.
//!
//! For a PSD matrix `M` with eigenpairs `(s_k, u_k)`, target `z` and `t = n lambda`:
//!
//! ```text
//! bias(M)     = (1/n) [ sum_k (u_k^T z)^2 t^2 / (s_k + t)^2 + ||z_perp||^2 ]
//! variance(M) = (sigma^2 / n) sum_k s_k^2 / (s_k + t)^2
//! ```
//!
//! where `z_perp` is the part of `z` outside the span of the eigenvectors
//! (non-empty only for low-rank factors).

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::SymEig;

#[derive(Debug, Clone)]
enum Basis {
    /// Orthonormal eigenvectors as columns (n x r).
    Dense(DMatrix<f64>),
    /// Discrete Fourier basis of a circulant matrix; leverage scores are constant.
    Fourier,
}

#[derive(Debug, Clone)]
pub struct Spectral {
    n: usize,
    values: Vec<f64>,
    basis: Basis,
    weights: Vec<f64>,
    residual: f64,
}

impl Spectral {
    /// Dense eigendecomposition of `K`. Negative round-off eigenvalues are
    /// clamped to zero.
    pub fn from_kernel(k: &KernelMatrix, z: Option<&DVector<f64>>) -> Result<Self> {
        let eig = SymEig::new(k.entries());
        let values = eig.values.iter().map(|&v| v.max(0.0)).collect();
        Self::with_basis(k.n(), values, eig.vectors, z)
    }

    /// Spectrum of `L = Phi Phi^T` in `O(n p^2)`: a Householder QR `Phi = Q R`
    /// followed by the eigendecomposition of `R R^T`, so the basis `Q W` is
    /// orthonormal to working precision even when `Phi` is rank deficient.
    pub fn from_factor(phi: &DMatrix<f64>, z: Option<&DVector<f64>>) -> Result<Self> {
        let n = phi.nrows();
        if phi.ncols() == 0 {
            return Self::with_basis(n, Vec::new(), DMatrix::zeros(n, 0), z);
        }
        let qr = phi.clone().qr();
        let r = qr.r();
        let eig = SymEig::new(&(&r * r.transpose()));
        let values = eig.values.iter().map(|&v| v.max(0.0)).collect();
        Self::with_basis(n, values, qr.q() * eig.vectors, z)
    }

    /// Circulant matrix with known eigenvalues in Fourier order
    /// (`eigs[k]` belongs to frequency `k`). The signal is projected with an FFT.
    pub fn from_circulant(eigs: &[f64], z: Option<&DVector<f64>>) -> Result<Self> {
        let n = eigs.len();
        let weights = match z {
            Some(z) => {
                if z.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: z.len(),
                    });
                }
                let mut buf: Vec<Complex<f64>> = z.iter().map(|&v| Complex::new(v, 0.0)).collect();
                FftPlanner::new().plan_fft_forward(n).process(&mut buf);
                buf.iter().map(|c| c.norm_sqr() / n as f64).collect()
            }
            None => vec![0.0; n],
        };
        Ok(Self {
            n,
            values: eigs.iter().map(|&v| v.max(0.0)).collect(),
            basis: Basis::Fourier,
            weights,
            residual: 0.0,
        })
    }

    fn with_basis(
        n: usize,
        values: Vec<f64>,
        basis: DMatrix<f64>,
        z: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let (weights, residual) = match z {
            Some(z) => {
                if z.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: z.len(),
                    });
                }
                let coords = basis.transpose() * z;
                let perp = z - &basis * &coords;
                (coords.iter().map(|c| c * c).collect(), perp.norm_squared())
            }
            None => (vec![0.0; values.len()], 0.0),
        };
        Ok(Self {
            n,
            values,
            basis: Basis::Dense(basis),
            weights,
            residual,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Eigenvalues (descending for dense bases, Fourier order for circulant).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Squared coordinates of the signal on each eigenvector.
    pub fn signal_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn signal_residual(&self) -> f64 {
        self.residual
    }

    fn shift(&self, lambda: f64) -> f64 {
        self.n as f64 * lambda
    }

    pub fn bias(&self, lambda: f64) -> f64 {
        let t = self.shift(lambda);
        let inside: f64 = self
            .values
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| {
                let r = t / (s + t);
                w * r * r
            })
            .sum();
        (inside + self.residual) / self.n as f64
    }

    pub fn variance(&self, lambda: f64, sigma2: f64) -> f64 {
        sigma2 * self.d_ave(lambda) / self.n as f64
    }

    /// `bias + variance`, the expected in-sample error `(1/n) E ||z_hat - z||^2`.
    pub fn error(&self, lambda: f64, sigma2: f64) -> f64 {
        self.bias(lambda) + self.variance(lambda, sigma2)
    }

    /// `tr K (K + n lambda I)^{-1}`.
    pub fn d_trace(&self, lambda: f64) -> f64 {
        let t = self.shift(lambda);
        self.values.iter().map(|&s| s / (s + t)).sum()
    }

    /// `tr K^2 (K + n lambda I)^{-2}`.
    pub fn d_ave(&self, lambda: f64) -> f64 {
        let t = self.shift(lambda);
        self.values
            .iter()
            .map(|&s| {
                let r = s / (s + t);
                r * r
            })
            .sum()
    }

    /// Diagonal of `K (K + n lambda I)^{-1}` (leverage scores).
    pub fn leverage(&self, lambda: f64) -> Vec<f64> {
        let t = self.shift(lambda);
        match &self.basis {
            Basis::Fourier => vec![self.d_trace(lambda) / self.n as f64; self.n],
            Basis::Dense(u) => {
                let h: Vec<f64> = self.values.iter().map(|&s| s / (s + t)).collect();
                (0..self.n)
                    .map(|i| {
                        u.row(i)
                            .iter()
                            .zip(&h)
                            .map(|(v, hk)| v * v * hk)
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// `n ||diag(K (K + n lambda I)^{-1})||_inf`.
    pub fn d_max(&self, lambda: f64) -> f64 {
        match self.basis {
            Basis::Fourier => self.d_trace(lambda),
            Basis::Dense(_) => {
                self.n as f64
                    * self
                        .leverage(lambda)
                        .into_iter()
                        .fold(0.0f64, f64::max)
            }
        }
    }
}
