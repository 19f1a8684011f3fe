//! Fixed-design problems with known spectra.
//!
//! Kernels on `[0, 1]` have the expansion `k(x, y) = sum_i 2 mu_i cos 2 pi i (x - y)`
//! and targets are `f(x) = sum_i 2 sqrt(nu_i) cos 2 pi i x`. On the grid
//! `x_i = (i - 1) / n` the Gram matrix is circulant with eigenvalues
//!
//! ```text
//! lambda_k = n sum_{s >= 1} mu_s ([s = k mod n] + [s = -k mod n])
//! ```
//!
//! indexed by discrete frequency `k = 0..n`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{bernoulli_numbers, gram, KernelMatrix, KernelSpec, SUPPORTED_BETAS};
use crate::points::Points;
use crate::rng::rng_from_seed;
use crate::spectral::Spectral;

/// Decay of the kernel eigenvalues `mu_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum KernelDecay {
    /// `mu_i = i^{-2 beta}`
    Polynomial { beta: u32 },
    /// `mu_i = e^{-rho i}`
    Exponential { rho: f64 },
}

/// Decay of the squared signal coefficients `nu_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum SignalDecay {
    /// `nu_i = i^{-2 delta}`
    Polynomial { delta: f64 },
    /// `nu_i = e^{-kappa i}`
    Exponential { kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub mu: KernelDecay,
    pub nu: SignalDecay,
}

impl SpectrumSpec {
    pub fn polynomial(beta: u32, delta: f64) -> Self {
        Self {
            mu: KernelDecay::Polynomial { beta },
            nu: SignalDecay::Polynomial { delta },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel().validate()?;
        match self.nu {
            SignalDecay::Polynomial { delta } if !(delta > 0.5 && delta.is_finite()) => {
                Err(Error::Config(format!("delta must exceed 1/2, got {delta}")))
            }
            SignalDecay::Exponential { kappa } if !(kappa > 0.0 && kappa.is_finite()) => {
                Err(Error::Config(format!("kappa must be positive, got {kappa}")))
            }
            _ => Ok(()),
        }
    }

    /// Periodic kernel with Fourier coefficients `mu_i`.
    pub fn kernel(&self) -> KernelSpec {
        match self.mu {
            KernelDecay::Polynomial { beta } => KernelSpec::PeriodicPolynomial { beta },
            KernelDecay::Exponential { rho } => KernelSpec::PeriodicExponential { rho },
        }
    }

    /// Target function `f(x) = sum_i 2 sqrt(nu_i) cos 2 pi i x`.
    pub fn signal(&self) -> Signal {
        Signal::new(self.nu)
    }
}

/// Largest number of series terms used when no closed form is available.
pub const MAX_SIGNAL_TERMS: usize = 1_000_000;

/// Evaluator for `f(x) = sum_i 2 sqrt(nu_i) cos 2 pi i x`.
///
/// `sqrt(nu_i) = i^{-delta}` is the Fourier sequence of the periodic
/// polynomial kernel of order `delta / 2`, and `sqrt(nu_i) = e^{-kappa i / 2}`
/// that of the exponential kernel with `rho = kappa / 2`; both are evaluated in
/// closed form. Other `delta` fall back to the series, truncated at the
/// smallest `m` with `(m + 1)^{-delta} m < 1e-10` (at most
/// [`MAX_SIGNAL_TERMS`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Signal {
    Closed(KernelSpec),
    Series { delta: f64, terms: usize },
}

impl Signal {
    pub fn new(nu: SignalDecay) -> Self {
        match nu {
            SignalDecay::Exponential { kappa } => {
                Signal::Closed(KernelSpec::PeriodicExponential { rho: kappa / 2.0 })
            }
            SignalDecay::Polynomial { delta } => {
                let half = delta / 2.0;
                if half.fract() == 0.0 && SUPPORTED_BETAS.contains(&(half as u32)) {
                    Signal::Closed(KernelSpec::PeriodicPolynomial { beta: half as u32 })
                } else {
                    Signal::Series {
                        delta,
                        terms: series_terms(delta),
                    }
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Signal::Closed(spec) => spec.eval_unchecked(&[x], &[0.0]),
            Signal::Series { delta, terms } => {
                // cos((i+1) t) = 2 cos t cos(i t) - cos((i-1) t)
                let t = 2.0 * std::f64::consts::PI * x;
                let c1 = t.cos();
                let (mut prev, mut cur) = (1.0, c1);
                let mut sum = 0.0;
                for i in 1..=terms {
                    sum += 2.0 * (i as f64).powf(-delta) * cur;
                    let next = 2.0 * c1 * cur - prev;
                    prev = cur;
                    cur = next;
                }
                sum
            }
        }
    }
}

fn series_terms(delta: f64) -> usize {
    let mut m = 1usize;
    while m < MAX_SIGNAL_TERMS && ((m + 1) as f64).powf(-delta) * m as f64 >= 1e-10 {
        m = (m * 2).min(MAX_SIGNAL_TERMS);
    }
    // Doubling overshoots; bisect back to the smallest admissible m.
    let (mut lo, mut hi) = (m / 2, m);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ((mid + 1) as f64).powf(-delta) * mid as f64 >= 1e-10 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.max(1)
}

/// Exact eigenvalues of the grid Gram matrix, indexed by frequency `k`.
///
/// Exponential decay uses the geometric closed form. Polynomial decay sums the
/// aliased series `sum_h (a + h n)^{-2 beta}` directly for the first terms and
/// closes it with an Euler-Maclaurin tail, adding correction terms until they
/// fall below `tail_tol` times the running value.
pub fn eig_circulant(mu: KernelDecay, n: usize, tail_tol: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tail_tol must be positive, got {tail_tol}")));
    }
    let aliased: Box<dyn Fn(usize) -> f64> = match mu {
        KernelDecay::Exponential { rho } => {
            if !(rho > 0.0) {
                return Err(Error::Config(format!("rho must be positive, got {rho}")));
            }
            let q = (-rho).exp();
            let denom = -(-rho * n as f64).exp_m1();
            Box::new(move |a| q.powi(a as i32) / denom)
        }
        KernelDecay::Polynomial { beta } => {
            KernelSpec::PeriodicPolynomial { beta }.validate()?;
            let s = 2.0 * beta as f64;
            Box::new(move |a| aliased_power_sum(a as f64, n as f64, s, tail_tol))
        }
    };
    let nf = n as f64;
    Ok((0..n)
        .map(|k| {
            if k == 0 {
                2.0 * nf * aliased(n)
            } else {
                nf * (aliased(k) + aliased(n - k))
            }
        })
        .collect())
}

/// `sum_{h >= 0} (a + h n)^{-s}` for `a >= 1`, `s > 1`.
fn aliased_power_sum(a: f64, n: f64, s: f64, tail_tol: f64) -> f64 {
    let head_terms = (2.0 * s).max(8.0) as usize;
    let mut sum = 0.0;
    for h in 0..head_terms {
        sum += (a + h as f64 * n).powf(-s);
    }
    // Euler-Maclaurin for g(x) = (a + x n)^{-s} on [H, inf).
    let u = a + head_terms as f64 * n;
    let gu = u.powf(-s);
    let mut tail = u * gu / (n * (s - 1.0)) + 0.5 * gu;
    let b = bernoulli_numbers();
    let mut rising = 1.0; // s (s+1) ... (s + 2j - 2)
    let mut fact = 1.0; // (2j)!
    let ratio = n / u;
    let mut pow = 1.0;
    for j in 1..=8 {
        let m = 2 * j - 1;
        if j > 1 {
            rising *= (s + (m - 2) as f64) * (s + (m - 1) as f64);
        } else {
            rising = s;
        }
        fact *= ((2 * j - 1) * (2 * j)) as f64;
        pow = if j == 1 { ratio } else { pow * ratio * ratio };
        let term = b[2 * j] / fact * rising * pow * gu;
        tail += term;
        if term.abs() < tail_tol * (sum + tail) {
            break;
        }
    }
    sum + tail
}

/// Deterministic design, noiseless target and noise level.
#[derive(Debug, Clone)]
pub struct FixedDesignProblem {
    pub points: Points,
    pub kernel: KernelSpec,
    pub k: KernelMatrix,
    pub z: DVector<f64>,
    pub sigma2: f64,
    pub spectrum: Option<SpectrumSpec>,
    /// Eigenvalues of `k` in frequency order, for grid designs.
    pub exact_eigs: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

/// Default relative tolerance for eigenvalue tails.
pub const DEFAULT_TAIL_TOL: f64 = 1e-14;

fn check_common(n: usize, sigma2: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    Ok(())
}

/// Design `x_i = (i - 1) / n` with the kernel and signal of `spec`.
pub fn grid_problem(n: usize, spec: SpectrumSpec, sigma2: f64) -> Result<FixedDesignProblem> {
    check_common(n, sigma2)?;
    spec.validate()?;
    let kernel = spec.kernel();
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    // First row, mirrored so that the circulant matrix is exactly symmetric.
    let mut row = vec![0.0; n];
    for m in 0..=n / 2 {
        let v = kernel.eval_unchecked(&[0.0], &[m as f64 / n as f64]);
        row[m] = v;
        row[(n - m) % n] = v;
    }
    let k = KernelMatrix::from_dense(DMatrix::from_fn(n, n, |i, j| row[(j + n - i) % n]))?;
    let signal = spec.signal();
    let z = DVector::from_iterator(n, xs.iter().map(|&x| signal.eval(x)));
    Ok(FixedDesignProblem {
        points: Points::from_scalars(xs),
        kernel,
        k,
        z,
        sigma2,
        spectrum: Some(spec),
        exact_eigs: Some(eig_circulant(spec.mu, n, DEFAULT_TAIL_TOL)?),
        seed: None,
    })
}

/// Spectrum of the grid problem without building the `n x n` matrix.
pub fn grid_spectral(n: usize, spec: SpectrumSpec) -> Result<Spectral> {
    check_common(n, 0.0)?;
    spec.validate()?;
    let signal = spec.signal();
    let z = DVector::from_fn(n, |i, _| signal.eval(i as f64 / n as f64));
    Spectral::from_circulant(&eig_circulant(spec.mu, n, DEFAULT_TAIL_TOL)?, Some(&z))
}

/// Inputs drawn i.i.d. uniform on `[0, 1]`.
pub fn random_design_problem(
    n: usize,
    spec: SpectrumSpec,
    sigma2: f64,
    seed: u64,
) -> Result<FixedDesignProblem> {
    check_common(n, sigma2)?;
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let points = Points::from_scalars(xs);
    let kernel = spec.kernel();
    let k = gram(&points, &kernel)?;
    let signal = spec.signal();
    let z = DVector::from_iterator(n, points.rows().map(|x| signal.eval(x[0])));
    Ok(FixedDesignProblem {
        points,
        kernel,
        k,
        z,
        sigma2,
        spectrum: Some(spec),
        exact_eigs: None,
        seed: Some(seed),
    })
}

/// `trials x n` matrix of i.i.d. `N(0, sigma2)` entries.
pub fn draw_noise(n: usize, sigma2: f64, trials: usize, seed: u64) -> Result<DMatrix<f64>> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return Ok(DMatrix::zeros(trials, n));
    }
    let sigma = sigma2.sqrt();
    let mut rng = rng_from_seed(seed);
    let mut out = DMatrix::zeros(trials, n);
    for t in 0..trials {
        for i in 0..n {
            out[(t, i)] = sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

/// Metadata written next to a problem's CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMetadata {
    pub n: usize,
    pub design: String,
    pub kernel: KernelSpec,
    pub spectrum: Option<SpectrumSpec>,
    pub sigma2: f64,
    pub seed: Option<u64>,
}

impl FixedDesignProblem {
    /// Problem on arbitrary inputs with a given target.
    pub fn from_parts(points: Points, kernel: KernelSpec, z: DVector<f64>, sigma2: f64) -> Result<Self> {
        check_common(points.len(), sigma2)?;
        if z.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: z.len(),
            });
        }
        let k = gram(&points, &kernel)?;
        Ok(Self {
            points,
            kernel,
            k,
            z,
            sigma2,
            spectrum: None,
            exact_eigs: None,
            seed: None,
        })
    }

    pub fn n(&self) -> usize {
        self.k.n()
    }

    /// Spectral view of `K` with the signal attached; uses the exact
    /// circulant eigenvalues when available.
    pub fn spectral(&self) -> Result<Spectral> {
        match &self.exact_eigs {
            Some(eigs) => Spectral::from_circulant(eigs, Some(&self.z)),
            None => Spectral::from_kernel(&self.k, Some(&self.z)),
        }
    }

    /// Dense eigendecomposition, ignoring any exact spectrum.
    pub fn dense_spectral(&self) -> Result<Spectral> {
        Spectral::from_kernel(&self.k, Some(&self.z))
    }

    pub fn metadata(&self) -> ProblemMetadata {
        ProblemMetadata {
            n: self.n(),
            design: if self.exact_eigs.is_some() { "grid" } else { "random" }.into(),
            kernel: self.kernel,
            spectrum: self.spectrum,
            sigma2: self.sigma2,
            seed: self.seed,
        }
    }

    /// CSV with columns `x0..x{d-1},z`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.points.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("z".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, x) in self.points.rows().enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.z[i]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Rebuild from [`write_csv`](Self::write_csv) output and its metadata.
    pub fn read_csv<R: BufRead>(r: R, meta: &ProblemMetadata) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty problem file".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let cols = header.split(',').count();
        if cols < 2 {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let d = cols - 1;
        let mut xs = Vec::new();
        let mut z = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad value {s:?}"))))
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(Error::Parse(format!("expected {cols} columns, got {}", vals.len())));
            }
            xs.extend_from_slice(&vals[..d]);
            z.push(vals[d]);
        }
        if z.len() != meta.n {
            return Err(Error::DimensionMismatch {
                expected: meta.n,
                got: z.len(),
            });
        }
        let points = Points::from_flat(xs, d)?;
        let mut p = if meta.design == "grid" {
            let spec = meta
                .spectrum
                .ok_or_else(|| Error::Parse("grid problem without spectrum".into()))?;
            let mut p = grid_problem(meta.n, spec, meta.sigma2)?;
            p.points = points;
            p.z = DVector::from_vec(z);
            p
        } else {
            Self::from_parts(points, meta.kernel, DVector::from_vec(z), meta.sigma2)?
        };
        p.spectrum = meta.spectrum;
        p.seed = meta.seed;
        Ok(p)
    }
}
