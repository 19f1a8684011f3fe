//! Column-sampling (Nyström) approximations for kernel ridge regression.
//!
//! The crate covers the full pipeline for fixed-design experiments:
//!
//! - [`kernels`]: periodic kernels with closed forms on `[0, 1]`, a Gaussian
//!   kernel, and Gram-matrix assembly.
//! - [`lowrank`]: uniform column sampling, the Nyström factor
//!   `L = K(V,I) K(I,I)^+ K(I,V)`, pivoted incomplete Cholesky and the explicit
//!   feature map.
//! - [`regression`]: exact and reduced kernel ridge solvers and a damped Newton
//!   solver for smooth convex losses.
//! - [`statistics`]: degrees of freedom, closed-form bias/variance, the
//!   sufficient-rank bound and its Monte-Carlo checks, and rate fitting.
//! - [`synthetic`]: grid and random-design problems with known spectra.

pub mod error;
pub mod kernels;
pub mod linalg;
pub mod lowrank;
pub mod points;
pub mod regression;
pub mod rng;
pub mod spectral;
pub mod statistics;
pub mod synthetic;

pub use error::{Error, Result};
pub use kernels::{gram, KernelMatrix, KernelSpec};
pub use lowrank::{nystrom, pivoted_ichol, sample_columns, ColumnSelection, LowRankFactor};
pub use points::Points;
pub use regression::{krr_exact, krr_lowrank, newton_solve, Loss, RidgeFit};
pub use spectral::Spectral;
pub use statistics::{bias_variance, dof, DofReport};
pub use synthetic::{FixedDesignProblem, SpectrumSpec};
