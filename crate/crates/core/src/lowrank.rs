//! Column sampling, the Nyström factor and pivoted incomplete Cholesky.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, ColumnOracle, KernelMatrix, KernelSpec};
use crate::linalg::{frobenius, pinv_sqrt, sym_eigenvalues, PINV_RELATIVE_CUTOFF};
use crate::points::Points;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectionMethod {
    UniformRandom { seed: u64 },
    GreedyPivoted,
    /// Caller-supplied index set.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSelection {
    indices: Vec<usize>,
    method: SelectionMethod,
    n: usize,
}

impl ColumnSelection {
    pub fn new(indices: Vec<usize>, n: usize, method: SelectionMethod) -> Result<Self> {
        if indices.len() > n {
            return Err(Error::InvalidArgument(format!(
                "{} indices for {} columns",
                indices.len(),
                n
            )));
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!("index {i} out of range 0..{n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("duplicate index {i}")));
            }
        }
        Ok(Self { indices, method, n })
    }

    pub fn explicit(indices: Vec<usize>, n: usize) -> Result<Self> {
        Self::new(indices, n, SelectionMethod::Explicit)
    }

    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            method: SelectionMethod::Explicit,
            n,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn method(&self) -> SelectionMethod {
        self.method
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `p` distinct column indices drawn uniformly without replacement, sorted.
pub fn sample_columns(n: usize, p: usize, seed: u64) -> Result<ColumnSelection> {
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= p <= n, got p = {p}, n = {n}"
        )));
    }
    let mut indices = sample(&mut rng_from_seed(seed), n, p).into_vec();
    indices.sort_unstable();
    Ok(ColumnSelection {
        indices,
        method: SelectionMethod::UniformRandom { seed },
        n,
    })
}

/// `n x p` factor with `Phi Phi^T = L`.
///
/// When available, `whitener` is the `p x p` matrix `M` with
/// `Phi = K(V, I) M^T`, so that `M k_I(x)` is the explicit feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    phi: DMatrix<f64>,
    selection: ColumnSelection,
    trace_residual_trail: Vec<f64>,
    whitener: Option<DMatrix<f64>>,
}

impl LowRankFactor {
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn selection(&self) -> &ColumnSelection {
        &self.selection
    }

    /// `tr(K - L_k)` after each pivot; empty for sampled factors.
    pub fn trace_residual_trail(&self) -> &[f64] {
        &self.trace_residual_trail
    }

    pub fn whitener(&self) -> Option<&DMatrix<f64>> {
        self.whitener.as_ref()
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn rank(&self) -> usize {
        self.phi.ncols()
    }

    /// Dense `L = Phi Phi^T`.
    pub fn approximation(&self) -> DMatrix<f64> {
        &self.phi * self.phi.transpose()
    }

    /// Write as CSV: a `n,p` line, the index line, then `Phi` row-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{}", self.n(), self.rank())?;
        let idx: Vec<String> = self.selection.indices.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{}", idx.join(","))?;
        for r in 0..self.phi.nrows() {
            let row: Vec<String> = self.phi.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). The whitener is not stored.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of factor file".into()))?
                .map_err(|e| Error::Parse(e.to_string()))
        };
        let header = next()?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [n, p] = dims[..] else {
            return Err(Error::Parse(format!("bad header {header:?}")));
        };
        let idx_line = next()?;
        let indices: Vec<usize> = if idx_line.trim().is_empty() {
            Vec::new()
        } else {
            idx_line
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad index {s:?}"))))
                .collect::<Result<_>>()?
        };
        if indices.len() != p {
            return Err(Error::Parse(format!("expected {p} indices, got {}", indices.len())));
        }
        let mut data = Vec::with_capacity(n * p);
        for _ in 0..n {
            let line = next()?;
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad value {s:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != p {
                return Err(Error::Parse(format!("expected {p} values per row, got {}", row.len())));
            }
            data.extend(row);
        }
        Ok(Self {
            phi: DMatrix::from_row_slice(n, p, &data),
            selection: ColumnSelection::explicit(indices, n)?,
            trace_residual_trail: Vec::new(),
            whitener: None,
        })
    }
}

/// Nyström factor from the columns in `selection`:
/// `Phi = K(V, I) K(I, I)^{+/2}`, so `Phi Phi^T = K(V,I) K(I,I)^+ K(I,V)`.
///
/// Eigenvalues of `K(I, I)` below `1e-12` times the largest are dropped.
pub fn nystrom<O: ColumnOracle + ?Sized>(oracle: &O, selection: &ColumnSelection) -> Result<LowRankFactor> {
    let n = oracle.n();
    if selection.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: selection.n(),
        });
    }
    if selection.is_empty() {
        return Err(Error::InvalidArgument("empty column selection".into()));
    }
    let p = selection.len();
    let mut cols = DMatrix::zeros(n, p);
    for (c, &j) in selection.indices().iter().enumerate() {
        cols.set_column(c, &oracle.column(j));
    }
    let inner = DMatrix::from_fn(p, p, |a, b| cols[(selection.indices()[a], b)]);
    let (whitener, _rank) = pinv_sqrt(&inner, PINV_RELATIVE_CUTOFF);
    let phi = &cols * &whitener;
    Ok(LowRankFactor {
        phi,
        selection: selection.clone(),
        trace_residual_trail: Vec::new(),
        whitener: Some(whitener),
    })
}

/// Stopping rule for [`pivoted_ichol`]; at least one limit must be given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotStop {
    pub max_rank: Option<usize>,
    /// Stop once `tr(K - L_k)` is at or below this value.
    pub trace_tolerance: Option<f64>,
}

impl PivotStop {
    pub fn rank(p: usize) -> Self {
        Self {
            max_rank: Some(p),
            trace_tolerance: None,
        }
    }

    pub fn trace(tol: f64) -> Self {
        Self {
            max_rank: None,
            trace_tolerance: Some(tol),
        }
    }
}

/// Residual diagonal entries at or below this fraction of `max(diag K)` mean
/// the numerical rank is exhausted.
const PIVOT_FLOOR: f64 = 1e-12;
const BREAKDOWN_TOL: f64 = 1e-10;

/// Greedy incomplete Cholesky with diagonal pivoting.
///
/// Each step picks the largest residual diagonal entry (smallest index on
/// ties), evaluates one kernel column and updates the residual diagonal, whose
/// sum is the exact trace of `K - L_k`. Runs in `O(p^2 n)` time and `O(p n)`
/// memory; the oracle is queried for at most `p` columns.
pub fn pivoted_ichol<O: ColumnOracle + ?Sized>(oracle: &O, stop: PivotStop) -> Result<LowRankFactor> {
    let n = oracle.n();
    let max_rank = match (stop.max_rank, stop.trace_tolerance) {
        (None, None) => {
            return Err(Error::InvalidArgument(
                "pivoted_ichol needs a rank or a trace tolerance".into(),
            ))
        }
        (Some(p), _) if p == 0 || p > n => {
            return Err(Error::InvalidArgument(format!("need 1 <= p <= n, got p = {p}, n = {n}")))
        }
        (_, Some(tol)) if !(tol > 0.0) && stop.max_rank.is_none() => {
            return Err(Error::InvalidArgument(format!("trace tolerance must be positive, got {tol}")))
        }
        (Some(p), _) => p,
        (None, Some(_)) => n,
    };
    let mut resid = oracle.diagonal();
    if resid.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: resid.len(),
        });
    }
    let scale = resid.iter().fold(0.0f64, |a, v| a.max(*v));
    let mut g: Vec<DVector<f64>> = Vec::with_capacity(max_rank.min(n));
    let mut pivots = Vec::with_capacity(max_rank.min(n));
    let mut trail = Vec::with_capacity(max_rank.min(n));
    let mut trace: f64 = resid.sum();

    while pivots.len() < max_rank {
        if let Some(tol) = stop.trace_tolerance {
            if trace <= tol {
                break;
            }
        }
        let (piv, &dmax) = resid
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
        if dmax <= PIVOT_FLOOR * scale || dmax <= 0.0 {
            break;
        }
        let mut col = oracle.column(piv);
        for prev in &g {
            let coef = prev[piv];
            col.axpy(-coef, prev, 1.0);
        }
        col /= dmax.sqrt();
        for i in 0..n {
            resid[i] -= col[i] * col[i];
            if resid[i] < 0.0 {
                if resid[i] < -BREAKDOWN_TOL * scale {
                    return Err(Error::NumericalBreakdown(format!(
                        "residual diagonal {} at index {i} after {} pivots",
                        resid[i],
                        pivots.len() + 1
                    )));
                }
                resid[i] = 0.0;
            }
        }
        resid[piv] = 0.0;
        trace = resid.sum();
        pivots.push(piv);
        g.push(col);
        trail.push(trace);
    }

    let p = pivots.len();
    let phi = if p == 0 {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&g)
    };
    // Phi = K(V, P) L_PP^{-T} with L_PP = Phi(P, :), lower triangular.
    let lpp = DMatrix::from_fn(p, p, |a, b| phi[(pivots[a], b)]);
    let whitener = lpp
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::NumericalBreakdown("singular pivot block".into()))?;
    Ok(LowRankFactor {
        phi,
        selection: ColumnSelection::new(pivots, n, SelectionMethod::GreedyPivoted)?,
        trace_residual_trail: trail,
        whitener: Some(whitener),
    })
}

/// Explicit `p`-dimensional features `M (k(x_i, x))_{i in I}`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    spec: KernelSpec,
    anchors: Points,
    whitener: DMatrix<f64>,
}

impl FeatureMap {
    /// `training` are the points the factor was built on.
    pub fn new(factor: &LowRankFactor, training: &Points, spec: KernelSpec) -> Result<Self> {
        let whitener = factor
            .whitener()
            .ok_or_else(|| Error::ModeMismatch("factor carries no whitener".into()))?
            .clone();
        if training.len() != factor.n() {
            return Err(Error::DimensionMismatch {
                expected: factor.n(),
                got: training.len(),
            });
        }
        Ok(Self {
            spec,
            anchors: training.select(factor.selection().indices()),
            whitener,
        })
    }

    pub fn dim(&self) -> usize {
        self.whitener.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        let kx = DVector::from_iterator(
            self.anchors.len(),
            self.anchors
                .rows()
                .map(|a| self.spec.eval(a, x))
                .collect::<Result<Vec<_>>>()?,
        );
        Ok(&self.whitener * kx)
    }

    /// Feature rows for a batch of points (`m x p`).
    pub fn apply_all(&self, points: &Points) -> Result<DMatrix<f64>> {
        let k = cross_gram(points, &self.anchors, &self.spec)?;
        Ok(k * self.whitener.transpose())
    }
}

/// `phi(x) = whitener (k(x_i, x))_{i in I}` for a single point.
pub fn feature_map(
    x: &[f64],
    selection: &ColumnSelection,
    whitener: &DMatrix<f64>,
    training: &Points,
    spec: &KernelSpec,
) -> Result<DVector<f64>> {
    let kx = selection
        .indices()
        .iter()
        .map(|&i| spec.eval(training.row(i), x))
        .collect::<Result<Vec<_>>>()?;
    if whitener.ncols() != kx.len() {
        return Err(Error::DimensionMismatch {
            expected: whitener.ncols(),
            got: kx.len(),
        });
    }
    Ok(whitener * DVector::from_vec(kx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorNorm {
    Trace,
    Operator,
    Frobenius,
}

/// `||K - Phi Phi^T||` in the requested norm. The trace norm is computed as
/// `tr(K) - ||Phi||_F^2`, exact for the PSD residual of a Nyström factor.
pub fn approx_error(k: &KernelMatrix, factor: &LowRankFactor, norm: ErrorNorm) -> Result<f64> {
    if factor.n() != k.n() {
        return Err(Error::DimensionMismatch {
            expected: k.n(),
            got: factor.n(),
        });
    }
    Ok(match norm {
        ErrorNorm::Trace => (k.trace() - factor.phi().norm_squared()).max(0.0),
        ErrorNorm::Operator => {
            let r = k.entries() - factor.approximation();
            sym_eigenvalues(&r)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()))
        }
        ErrorNorm::Frobenius => frobenius(&(k.entries() - factor.approximation())),
    })
}
