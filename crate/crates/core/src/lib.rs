//! Function-on-function differential regression.
//!
//! Functions on a 1-D interval are represented by coefficients over an
//! orthonormal basis. An unknown linear differential operator `D` with
//! `F = D(U) + noise` is estimated through its action: `D(u) = L T(P u, B u)`
//! where `T` lives in an operator-valued RKHS built from Gaussian kernels.
//! The estimator reduces to a `p² × p²` linear system, which gives a linear
//! smoother, a GCV criterion, and a wild-bootstrap goodness-of-fit test.
//!
//! Module map:
//!
//! * [`basis`]: cosine / tabulated bases, quadrature-backed projection.
//! * [`kernel`]: Gram matrices `K` and `K_L` of the operator kernel.
//! * [`regress`]: regularized fit, prediction, smoothing matrix, GCV, spectrum.
//! * [`gof`]: parametric null fit, `Q_n` statistic, wild bootstrap.
//! * [`sim`]: Helmholtz simulation design and Monte Carlo harness.
//! * [`ingest`]: trajectory CSV to [`DataSet`] (thermodynamic energy recipe).
//! * [`config`]: run configuration documents and named presets.
//! * [`io`]: on-disk formats for data sets and kernel caches.
//!
//! Coefficient index convention: the coefficient `c_jk` (output basis
//! function `j`, predictor basis function `k`) lives at flat index
//! `j * p + k`. Response matrices are vectorized column-major.

pub mod basis;
pub mod config;
pub mod error;
pub mod gof;
pub mod ingest;
pub mod io;
pub mod kernel;
mod linalg;
pub mod quadrature;
pub mod regress;
pub mod rng;
pub mod sim;

pub use basis::{make_cosine_basis, BasisKind, BasisSpec, BasisSystem, DataSet, FuncVec};
pub use error::{Error, Result};
pub use gof::{bootstrap_test, fit_parametric, qn_statistic, wild_multipliers};
pub use gof::{GofResult, ParamFamily, ParamFit, Strategy};
pub use kernel::{assemble_k, assemble_kl, KernelMatrices, KernelSpec, LinearOpSpec, OpKind, OpRole};
pub use regress::{fit, gcv, gcv_sweep, predict, rss, smoothing_matrix, spectrum_diag};
pub use regress::{Design, FitResult, SmoothingMatrix, SweepResult, SweepRow};
pub use sim::{calibrate_sigma, run_mc, EigenSign, McReport, SimConfig};

pub use nalgebra::{DMatrix, DVector};
