//! Dense symmetric helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues of `K(I,I)` below this fraction of the largest one are treated
/// as zero when forming pseudo-inverses.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let sym = symmetrize(m);
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), n, |r, c| {
            eig.eigenvectors[(r, order[c])]
        });
        Self { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `V f(D) V^T` for a scalar function applied to the eigenvalues.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |r, c| {
            self.vectors[(r, c)] * f(self.values[c])
        });
        &scaled * self.vectors.transpose()
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Symmetric pseudo-inverse square root `M^{+/2}` with a relative rank cutoff.
/// Returns the matrix and the retained rank.
pub fn pinv_sqrt(m: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    let eig = SymEig::new(m);
    let thresh = rel_cutoff * eig.max().max(0.0);
    let rank = eig.values.iter().filter(|&&v| v > thresh).count();
    let w = eig.apply(|v| if v > thresh && v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    (w, rank)
}

/// Symmetric pseudo-inverse with a relative rank cutoff.
pub fn pinv_sym(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let eig = SymEig::new(m);
    let thresh = rel_cutoff * eig.max().max(0.0);
    eig.apply(|v| if v > thresh && v > 0.0 { 1.0 / v } else { 0.0 })
}

/// Solve `A x = b` for symmetric positive (semi)definite `A`.
///
/// Cholesky first; when it fails the system is solved through the
/// eigendecomposition, dropping directions whose eigenvalue is not positive
/// at machine precision. A clearly negative eigenvalue is reported as a
/// breakdown.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    if let Some(chol) = Cholesky::new(symmetrize(a)) {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let eig = SymEig::new(a);
    let scale = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-8 * scale {
        return Err(Error::NumericalBreakdown(format!(
            "matrix is not positive semidefinite: eigenvalue {min:e} vs scale {scale:e}"
        )));
    }
    let floor = scale * f64::EPSILON * a.nrows() as f64;
    let coords = eig.vectors.transpose() * b;
    let scaled = DVector::from_iterator(
        coords.len(),
        coords
            .iter()
            .zip(eig.values.iter())
            .map(|(c, &v)| if v > floor { c / v } else { 0.0 }),
    );
    Ok(&eig.vectors * scaled)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// `||a - b||_F / ||b||_F`, or the absolute difference when `b` is zero.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = frobenius(&(a - b));
    let s = frobenius(b);
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Submatrix `M(rows, cols)`.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}
