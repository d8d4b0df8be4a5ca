//! Regularized estimation of the transformed operator and its smoother.
//!
//! With `A = (I_p ⊗ U) K_L` (an `np × p²` design) the estimator minimizes
//! `‖vec(F) − A c‖² + nλ cᵀ K c`, i.e. solves the normal equations
//! `(AᵀA + nλK) ĉ = Aᵀ vec(F)`. Fitted responses are `vec(F̂) = S_λ vec(F)`
//! with `S_λ = A (AᵀA + nλK)⁻¹ Aᵀ`, kept in factored form.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::basis::{DataSet, FuncVec};
use crate::error::{arg, Error, Result};
use crate::kernel::{KernelMatrices, KernelProvenance};
use crate::linalg::{chol_condition, cholesky_jittered, unvec, vec_of};

/// Precomputed design for one set of predictors and one kernel.
#[derive(Debug, Clone)]
pub struct Design {
    n: usize,
    p: usize,
    ab: Arc<DMatrix<f64>>,
    gram: Arc<DMatrix<f64>>,
    k: DMatrix<f64>,
    k_l: DMatrix<f64>,
    basis_id: u64,
    provenance: KernelProvenance,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub c_hat: DVector<f64>,
    pub lambda: f64,
    pub basis_id: u64,
    pub kernel: KernelProvenance,
    /// Diagonal shift applied to the system matrix (0 when none was needed).
    pub jitter: f64,
    pub condition_estimate: f64,
    factor: Arc<Cholesky<f64, Dyn>>,
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Record<'a> {
            c_hat: &'a [f64],
            lambda: f64,
            basis_id: String,
            kernel: &'a KernelProvenance,
            jitter: f64,
            condition_estimate: f64,
        }
        Record {
            c_hat: self.c_hat.as_slice(),
            lambda: self.lambda,
            basis_id: format!("{:016x}", self.basis_id),
            kernel: &self.kernel,
            jitter: self.jitter,
            condition_estimate: self.condition_estimate,
        }
        .serialize(s)
    }
}

/// `S_λ` in factored form: `v ↦ A M⁻¹ Aᵀ v`.
#[derive(Debug, Clone)]
pub struct SmoothingMatrix {
    ab: Arc<DMatrix<f64>>,
    factor: Arc<Cholesky<f64, Dyn>>,
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
    trace: f64,
}

impl SmoothingMatrix {
    /// `S_λ v` for a stacked (column-major) vector of length `np`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let inner = self.factor.solve(&self.ab.tr_mul(v));
        &*self.ab * inner
    }

    /// `S_λ` applied to an `n × p` coefficient matrix.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.shape() != (self.n, self.p) {
            return arg(format!("expected a {}x{} matrix, got {:?}", self.n, self.p, m.shape()));
        }
        Ok(unvec(&self.apply(&vec_of(m)), self.n, self.p))
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn dim(&self) -> usize {
        self.n * self.p
    }

    /// Materializes the `np × np` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let inner = self.factor.solve(&self.ab.transpose());
        &*self.ab * inner
    }

    /// An explicit smoother, for tests and the degenerate `S = 0` / `S = I` cases.
    pub fn identity_like(n: usize, p: usize, scale: f64) -> Self {
        let dim = n * p;
        let ab = DMatrix::<f64>::identity(dim, dim) * scale.sqrt();
        let factor = DMatrix::<f64>::identity(dim, dim).cholesky().expect("identity is SPD");
        Self { ab: Arc::new(ab), factor: Arc::new(factor), n, p, lambda: f64::NAN, trace: scale * dim as f64 }
    }
}

impl Design {
    pub fn new(data: &DataSet, km: &KernelMatrices) -> Result<Self> {
        Self::from_predictors(data.u(), data.basis_id(), km)
    }

    pub fn from_predictors(u: &DMatrix<f64>, basis_id: u64, km: &KernelMatrices) -> Result<Self> {
        let (n, p) = u.shape();
        if basis_id != km.basis_id() {
            return Err(Error::BasisMismatch { expected: km.basis_id(), found: basis_id });
        }
        let pp = p * p;
        if km.k.shape() != (pp, pp) || km.k_l.shape() != (pp, pp) {
            return arg(format!("kernel matrices must be {pp}x{pp} for p = {p}"));
        }
        let mut ab = DMatrix::zeros(n * p, pp);
        let mut gram = DMatrix::zeros(pp, pp);
        let utu = u.tr_mul(u);
        for j in 0..p {
            let block = km.k_l.rows(j * p, p);
            ab.rows_mut(j * n, n).copy_from(&(u * block));
            gram += block.tr_mul(&(&utu * block));
        }
        Ok(Self {
            n,
            p,
            ab: Arc::new(ab),
            gram: Arc::new(gram),
            k: km.k.clone(),
            k_l: km.k_l.clone(),
            basis_id,
            provenance: km.provenance.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `AᵀA = K_Lᵀ (I_p ⊗ UᵀU) K_L`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.ab
    }

    fn factor(&self, lambda: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return arg(format!("lambda = {lambda} must be a positive finite number"));
        }
        let system = &*self.gram + &self.k * (self.n as f64 * lambda);
        cholesky_jittered(&system, "regularized normal equations")
    }

    pub fn fit(&self, f: &DMatrix<f64>, lambda: f64) -> Result<FitResult> {
        if f.shape() != (self.n, self.p) {
            return arg(format!("F must be {}x{}, got {:?}", self.n, self.p, f.shape()));
        }
        let (factor, jitter) = self.factor(lambda)?;
        let rhs = self.ab.tr_mul(&vec_of(f));
        let c_hat = factor.solve(&rhs);
        let condition_estimate = chol_condition(&factor);
        if c_hat.iter().any(|c| !c.is_finite()) {
            return Err(Error::Singular { context: "fit produced non-finite coefficients".into(), condition: condition_estimate });
        }
        Ok(FitResult {
            c_hat,
            lambda,
            basis_id: self.basis_id,
            kernel: self.provenance.clone(),
            jitter,
            condition_estimate,
            factor: Arc::new(factor),
        })
    }

    /// `F̂` (`n × p`) for the design's own predictors.
    pub fn fitted(&self, fit: &FitResult) -> DMatrix<f64> {
        unvec(&(&*self.ab * &fit.c_hat), self.n, self.p)
    }

    /// Estimated operator action on arbitrary predictor rows `u` (`m × p`).
    pub fn action(&self, fit: &FitResult, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.ncols() != self.p {
            return arg(format!("predictors must have {} columns, got {}", self.p, u.ncols()));
        }
        Ok(u * unvec(&(&self.k_l * &fit.c_hat), self.p, self.p))
    }

    pub fn smoother(&self, lambda: f64) -> Result<SmoothingMatrix> {
        let (factor, _) = self.factor(lambda)?;
        Ok(self.smoother_with(Arc::new(factor), lambda))
    }

    /// Smoother sharing the factorization cached in `fit`.
    pub fn smoother_for(&self, fit: &FitResult) -> SmoothingMatrix {
        self.smoother_with(fit.factor.clone(), fit.lambda)
    }

    fn smoother_with(&self, factor: Arc<Cholesky<f64, Dyn>>, lambda: f64) -> SmoothingMatrix {
        let trace = factor.solve(&self.gram).trace();
        SmoothingMatrix { ab: self.ab.clone(), factor, n: self.n, p: self.p, lambda, trace }
    }

    fn trace_for(&self, fit: &FitResult) -> f64 {
        fit.factor.solve(&self.gram).trace()
    }

    /// One row of a GCV table.
    pub fn sweep_row(&self, f: &DMatrix<f64>, lambda: f64) -> Result<(SweepRow, FitResult)> {
        let fit = self.fit(f, lambda)?;
        let rss = (f - self.fitted(&fit)).norm_squared();
        let trace = self.trace_for(&fit);
        let gcv = gcv_value(rss, trace, self.n, self.p)?;
        Ok((SweepRow { lambda, rss, gcv, trace }, fit))
    }

    pub fn sweep(&self, f: &DMatrix<f64>, grid: &[f64]) -> Result<SweepResult> {
        if grid.is_empty() {
            return arg("lambda grid must not be empty");
        }
        let rows: Vec<SweepRow> = grid
            .par_iter()
            .map(|&l| self.sweep_row(f, l).map(|(row, _)| row))
            .collect::<Result<_>>()?;
        let best = rows
            .iter()
            .min_by(|a, b| a.gcv.total_cmp(&b.gcv).then(a.lambda.total_cmp(&b.lambda)))
            .expect("non-empty grid");
        Ok(SweepResult { best_lambda: best.lambda, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub rss: f64,
    pub gcv: f64,
    /// `tr(S_λ)`; the smoothing-operator trace is this divided by `p`.
    pub trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub best_lambda: f64,
    pub rows: Vec<SweepRow>,
}

/// `n⁻¹ RSS / (1 − n⁻¹ tr(S)/p)²`.
pub fn gcv_value(rss: f64, trace: f64, n: usize, p: usize) -> Result<f64> {
    let frac = trace / (p as f64 * n as f64);
    if frac >= 1.0 || !frac.is_finite() {
        return Err(Error::DegenerateSmoother(frac));
    }
    Ok(rss / n as f64 / (1.0 - frac).powi(2))
}

pub fn fit(data: &DataSet, km: &KernelMatrices, lambda: f64) -> Result<FitResult> {
    Design::new(data, km)?.fit(data.f(), lambda)
}

/// Coefficients of `L T̂_λ(ũ)`: output `j'` is `Σ u_k' (K_L)_{(j'k'),(jk)} ĉ_jk`.
pub fn predict(fit: &FitResult, u: &FuncVec, km: &KernelMatrices) -> Result<FuncVec> {
    if u.basis_id() != fit.basis_id {
        return Err(Error::BasisMismatch { expected: fit.basis_id, found: u.basis_id() });
    }
    if km.basis_id() != fit.basis_id {
        return Err(Error::BasisMismatch { expected: fit.basis_id, found: km.basis_id() });
    }
    let p = u.len();
    let w = &km.k_l * &fit.c_hat;
    // w[j' p + k'] as a p×p matrix indexed [k', j']
    let x = unvec(&w, p, p);
    FuncVec::with_id(fit.basis_id, p, x.tr_mul(u.coeffs()))
}

pub fn smoothing_matrix(data: &DataSet, km: &KernelMatrices, lambda: f64) -> Result<SmoothingMatrix> {
    Design::new(data, km)?.smoother(lambda)
}

fn check_fit(fit: &FitResult, data: &DataSet) -> Result<()> {
    if data.basis_id() != fit.basis_id {
        return Err(Error::BasisMismatch { expected: fit.basis_id, found: data.basis_id() });
    }
    if fit.c_hat.len() != data.p() * data.p() {
        return arg("fit and data have inconsistent basis sizes");
    }
    Ok(())
}

/// `Σᵢ ‖Fᵢ − D̂_λ(Uᵢ)‖²` in coefficient space.
pub fn rss(fit: &FitResult, data: &DataSet, km: &KernelMatrices) -> Result<f64> {
    check_fit(fit, data)?;
    let p = data.p();
    let x = unvec(&(&km.k_l * &fit.c_hat), p, p);
    let fitted = data.u() * x;
    Ok((data.f() - fitted).norm_squared())
}

pub fn gcv(fit: &FitResult, data: &DataSet, km: &KernelMatrices) -> Result<f64> {
    let r = rss(fit, data, km)?;
    let design = Design::new(data, km)?;
    gcv_value(r, design.trace_for(fit), data.n(), data.p())
}

/// GCV over a grid; ties resolve to the smaller λ.
pub fn gcv_sweep(data: &DataSet, km: &KernelMatrices, grid: &[f64]) -> Result<SweepResult> {
    Design::new(data, km)?.sweep(data.f(), grid)
}

/// Least-squares slope of `log γ_k` on `log k` over 1-based indices
/// `from..=to`, skipping non-positive values. `None` with fewer than two points.
pub fn loglog_slope(gamma: &[f64], from: usize, to: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (from.max(1)..=to.min(gamma.len()))
        .filter(|&k| gamma[k - 1] > 0.0)
        .map(|k| ((k as f64).ln(), gamma[k - 1].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Largest `top_m` generalized eigenvalues of `(AᵀA / n) v = γ K v`,
/// descending and clamped at zero.
pub fn spectrum_diag(data: &DataSet, km: &KernelMatrices, top_m: usize) -> Result<Vec<f64>> {
    let design = Design::new(data, km)?;
    let pp = data.p() * data.p();
    if top_m > pp {
        return arg(format!("top_m = {top_m} exceeds p² = {pp}"));
    }
    let (chol, _) = cholesky_jittered(&km.k, "kernel Gram matrix")?;
    let l = chol.l();
    let g = &*design.gram / data.n() as f64;
    // C = L⁻¹ G L⁻ᵀ
    let left = l
        .solve_lower_triangular(&g)
        .ok_or_else(|| Error::Singular { context: "kernel factor".into(), condition: f64::INFINITY })?;
    let c = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Singular { context: "kernel factor".into(), condition: f64::INFINITY })?;
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(top_m);
    Ok(ev)
}
