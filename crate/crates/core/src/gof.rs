//! Goodness-of-fit test of a parametric operator family.
//!
//! The null family is `D_θ = θ D₀` with `D₀` given by its coefficient-space
//! matrix. The statistic `Q_n = n⁻¹ ‖S_λ ε̃‖²` smooths the null residuals with
//! the nonparametric smoother; its null distribution is approximated by a
//! wild bootstrap with golden-ratio two-point multipliers.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, DataSet};
use crate::error::{arg, Error, Result};
use crate::kernel::{KernelMatrices, LinearOpSpec};
use crate::regress::{Design, SmoothingMatrix};
use crate::rng;

/// `(1 + √5)/2`, drawn with probability `(√5 − 1)/(2√5)`.
pub const GOLDEN_HIGH: f64 = 1.618_033_988_749_895;
/// `(1 − √5)/2`.
pub const GOLDEN_LOW: f64 = -0.618_033_988_749_894_9;
pub const GOLDEN_HIGH_PROB: f64 = 0.276_393_202_250_021;

pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Parametric,
    Nonparametric,
    /// First `round(B/3)` replicates use parametric residuals, the rest
    /// nonparametric ones.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamFamily {
    name: String,
    /// `[j, k] = ⟨D₀ φ_k, φ_j⟩`.
    base: DMatrix<f64>,
    fixed: Option<f64>,
}

impl ParamFamily {
    /// `D_θ = −θ ∇²`; `D₀` is diagonal for cosine bases.
    pub fn scaled_neg_laplacian(basis: &BasisSystem) -> Result<Self> {
        let base = match basis.laplacian_eigenvalues() {
            Some(ev) => DMatrix::from_diagonal(&ev.into()),
            None => LinearOpSpec::new(crate::kernel::OpKind::NegLaplacian, crate::kernel::OpRole::D)
                .coefficient_matrix(basis)?,
        };
        Ok(Self { name: "scaled_neg_laplacian".into(), base, fixed: None })
    }

    /// `D_θ φ_k = θ m_k φ_k`.
    pub fn spectral(multipliers: &[f64]) -> Self {
        Self {
            name: "spectral".into(),
            base: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(multipliers)),
            fixed: None,
        }
    }

    /// `θ` times an arbitrary linear operator, via its coefficient matrix.
    pub fn from_operator(name: &str, op: &LinearOpSpec, basis: &BasisSystem) -> Result<Self> {
        Ok(Self { name: name.into(), base: op.coefficient_matrix(basis)?, fixed: None })
    }

    /// Pins `θ`: the null hypothesis becomes the single operator `θ D₀`.
    pub fn with_fixed_theta(mut self, theta: f64) -> Self {
        self.fixed = Some(theta);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Rows `D_θ(U_i)` as an `n × p` matrix.
    pub fn apply(&self, theta: f64, u: &DMatrix<f64>) -> DMatrix<f64> {
        u * self.base.transpose() * theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamFit {
    pub theta: f64,
    /// Unconstrained least-squares value before clipping to `θ ≥ 0`.
    pub raw_theta: f64,
    pub clipped: bool,
}

/// Least squares `θ̂ = Σ⟨Fᵢ, D₀Uᵢ⟩ / Σ‖D₀Uᵢ‖²`, clipped at 0.
pub fn fit_parametric(data: &DataSet, family: &ParamFamily) -> Result<ParamFit> {
    if family.base.shape() != (data.p(), data.p()) {
        return arg("family operator does not match the basis size");
    }
    if let Some(theta) = family.fixed {
        return Ok(ParamFit { theta, raw_theta: theta, clipped: false });
    }
    let v = family.apply(1.0, data.u());
    let denom = v.norm_squared();
    if !(denom > 0.0) {
        return Err(Error::DegenerateDesign("predictors carry no energy under the family operator".into()));
    }
    let raw = data.f().dot(&v) / denom;
    if raw > 0.0 {
        Ok(ParamFit { theta: raw, raw_theta: raw, clipped: false })
    } else {
        log::warn!("parametric estimate {raw} is outside θ > 0; clipped to the boundary");
        Ok(ParamFit { theta: 0.0, raw_theta: raw, clipped: true })
    }
}

/// `Q_n = n⁻¹ ‖S_λ vec(ε)‖²`.
pub fn qn_statistic(s: &SmoothingMatrix, residuals: &DMatrix<f64>) -> Result<f64> {
    Ok(s.apply_matrix(residuals)?.norm_squared() / s.n as f64)
}

/// I.i.d. golden-ratio two-point multipliers (`E δ = 0`, `E δ² = E δ³ = 1`).
pub fn wild_multipliers<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random::<f64>() < GOLDEN_HIGH_PROB { GOLDEN_HIGH } else { GOLDEN_LOW })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub theta_hat: f64,
    pub theta_raw: f64,
    pub theta_clipped: bool,
    pub q_n: f64,
    pub bootstrap_values: Vec<f64>,
    pub p_value: f64,
    pub strategy: Strategy,
    pub lambda: f64,
    pub seed: u64,
}

impl GofResult {
    /// `c_n^B(α)`: the `(1 − α)` sample quantile of the replicates.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        quantile(&self.bootstrap_values, 1.0 - alpha)
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Linearly interpolated sample quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Number of parametric-residual replicates under [`Strategy::Mixed`].
pub fn mixed_parametric_count(b: usize) -> usize {
    (b as f64 / 3.0).round() as usize
}

/// `1 − B⁻¹ #{b : Q_n ≥ Q_n^b}`.
pub fn p_value(q_n: f64, replicates: &[f64]) -> f64 {
    let hits = replicates.iter().filter(|&&q| q_n >= q).count();
    1.0 - hits as f64 / replicates.len() as f64
}

/// Wild-bootstrap replicates `Q_n^b` for given residual sets.
///
/// Replicate `b` draws its multipliers from stream `b` of `seed`.
pub fn bootstrap_replicates(
    s: &SmoothingMatrix,
    parametric: &DMatrix<f64>,
    nonparametric: &DMatrix<f64>,
    b: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = s.n;
    if parametric.shape() != (n, s.p) || nonparametric.shape() != (n, s.p) {
        return arg("residual matrices do not match the smoother");
    }
    let n_param = mixed_parametric_count(b);
    (0..b)
        .into_par_iter()
        .map(|rep| {
            let use_param = match strategy {
                Strategy::Parametric => true,
                Strategy::Nonparametric => false,
                Strategy::Mixed => rep < n_param,
            };
            let base = if use_param { parametric } else { nonparametric };
            let mut rng = rng::stream(seed, rep as u64);
            let delta = wild_multipliers(n, &mut rng);
            let mut e = base.clone();
            for (i, d) in delta.iter().enumerate() {
                e.row_mut(i).scale_mut(*d);
            }
            qn_statistic(s, &e)
        })
        .collect()
}

/// The full test on a data set: null fit, residuals, `Q_n`, bootstrap.
pub fn bootstrap_test(
    data: &DataSet,
    km: &KernelMatrices,
    lambda: f64,
    family: &ParamFamily,
    b: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<GofResult> {
    let design = Design::new(data, km)?;
    bootstrap_test_with(&design, data, lambda, family, b, strategy, seed)
}

/// As [`bootstrap_test`] with a precomputed design for `data`'s predictors.
pub fn bootstrap_test_with(
    design: &Design,
    data: &DataSet,
    lambda: f64,
    family: &ParamFamily,
    b: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<GofResult> {
    if b < MIN_BOOTSTRAP {
        return arg(format!("bootstrap size B = {b} must be >= {MIN_BOOTSTRAP}"));
    }
    let fit = design.fit(data.f(), lambda)?;
    let s = design.smoother_for(&fit);
    let pfit = fit_parametric(data, family)?;
    let tilde = data.f() - family.apply(pfit.theta, data.u());
    let hat = data.f() - design.fitted(&fit);
    let q_n = qn_statistic(&s, &tilde)?;
    let bootstrap_values = bootstrap_replicates(&s, &tilde, &hat, b, strategy, seed)?;
    Ok(GofResult {
        theta_hat: pfit.theta,
        theta_raw: pfit.raw_theta,
        theta_clipped: pfit.clipped,
        q_n,
        p_value: p_value(q_n, &bootstrap_values),
        bootstrap_values,
        strategy,
        lambda,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_cosine_basis;
    use crate::kernel::KernelSpec;
    use crate::regress::smoothing_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (BasisSystem, KernelMatrices, DataSet) {
        let b = make_cosine_basis(3, 61).unwrap();
        let km = KernelMatrices::helmholtz_default(&b, &KernelSpec { h: 0.05, include_boundary: true }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let ev = b.laplacian_eigenvalues().unwrap();
        let f = DMatrix::from_fn(12, 3, |i, k| 2.0 * ev[k] * u[(i, k)] + rng.random_range(-1.0..1.0));
        let d = DataSet::new(&b, u, f).unwrap();
        (b, km, d)
    }

    #[test]
    fn exact_member_recovers_theta() {
        let (b, _, d) = small();
        let fam = ParamFamily::scaled_neg_laplacian(&b).unwrap();
        let f = fam.apply(3.0, d.u());
        let d = d.with_responses(f).unwrap();
        let fit = fit_parametric(&d, &fam).unwrap();
        assert!((fit.theta - 3.0).abs() < 1e-12);
        assert!(!fit.clipped);
    }

    #[test]
    fn zero_response_is_clipped() {
        let (b, _, d) = small();
        let fam = ParamFamily::scaled_neg_laplacian(&b).unwrap();
        let d = d.with_responses(DMatrix::zeros(12, 3)).unwrap();
        let fit = fit_parametric(&d, &fam).unwrap();
        assert_eq!(fit.raw_theta, 0.0);
        assert!(fit.clipped);
        assert_eq!(fit.theta, 0.0);
    }

    #[test]
    fn zero_predictors_are_degenerate() {
        let (b, _, d) = small();
        let fam = ParamFamily::scaled_neg_laplacian(&b).unwrap();
        let d = DataSet::new(&b, DMatrix::zeros(12, 3), d.f().clone()).unwrap();
        assert!(matches!(fit_parametric(&d, &fam), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn qn_hand_computed() {
        let s = SmoothingMatrix::identity_like(2, 1, 1.0);
        let r = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        assert!((qn_statistic(&s, &r).unwrap() - 2.5).abs() < 1e-15);
        let zero = SmoothingMatrix::identity_like(2, 1, 0.0);
        assert_eq!(qn_statistic(&zero, &r).unwrap(), 0.0);
        assert_eq!(qn_statistic(&s, &DMatrix::zeros(2, 1)).unwrap(), 0.0);
    }

    #[test]
    fn multipliers_have_two_point_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = wild_multipliers(1000, &mut rng);
        assert!(d.iter().all(|&x| x == GOLDEN_HIGH || x == GOLDEN_LOW));
        assert!((GOLDEN_HIGH - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((GOLDEN_LOW - (1.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((GOLDEN_HIGH_PROB - (5f64.sqrt() - 1.0) / (2.0 * 5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn zero_residuals_give_zero_p_value() {
        let (b, km, d) = small();
        let fam = ParamFamily::scaled_neg_laplacian(&b).unwrap();
        // responses exactly in the family and fitted exactly would need λ → 0;
        // instead exercise the counting rule directly
        let s = smoothing_matrix(&d, &km, 1.0).unwrap();
        let z = DMatrix::zeros(12, 3);
        let reps = bootstrap_replicates(&s, &z, &z, 150, Strategy::Mixed, 1).unwrap();
        assert!(reps.iter().all(|&q| q == 0.0));
        assert_eq!(p_value(0.0, &reps), 0.0);
        let _ = fam;
    }

    #[test]
    fn small_b_is_rejected() {
        let (b, km, d) = small();
        let fam = ParamFamily::scaled_neg_laplacian(&b).unwrap();
        let r = bootstrap_test(&d, &km, 1.0, &fam, 99, Strategy::Mixed, 1);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn result_is_deterministic_and_consistent() {
        let (b, km, d) = small();
        let fam = ParamFamily::scaled_neg_laplacian(&b).unwrap();
        let r1 = bootstrap_test(&d, &km, 0.5, &fam, 120, Strategy::Mixed, 42).unwrap();
        let r2 = bootstrap_test(&d, &km, 0.5, &fam, 120, Strategy::Mixed, 42).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.bootstrap_values.len(), 120);
        assert_eq!(r1.p_value, p_value(r1.q_n, &r1.bootstrap_values));
        assert!((0.0..=1.0).contains(&r1.p_value));
        let r3 = bootstrap_test(&d, &km, 0.5, &fam, 120, Strategy::Mixed, 43).unwrap();
        assert_ne!(r1.bootstrap_values, r3.bootstrap_values);
    }

    #[test]
    fn scaling_residuals_scales_statistics_quadratically() {
        let (_, km, d) = small();
        let s = smoothing_matrix(&d, &km, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e1 = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let e2 = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let base = bootstrap_replicates(&s, &e1, &e2, 100, Strategy::Mixed, 5).unwrap();
        let scaled = bootstrap_replicates(&s, &(&e1 * 3.0), &(&e2 * 3.0), 100, Strategy::Mixed, 5).unwrap();
        let q = qn_statistic(&s, &e1).unwrap();
        let q3 = qn_statistic(&s, &(&e1 * 3.0)).unwrap();
        assert!((q3 - 9.0 * q).abs() < 1e-12 * q3);
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b - 9.0 * a).abs() < 1e-12 * b.max(1e-300));
        }
        // p-value unchanged up to rounding in ties
        assert_eq!(p_value(q, &base), p_value(q3, &scaled));
    }

    #[test]
    fn mixed_uses_round_b_over_three_parametric_replicates() {
        assert_eq!(mixed_parametric_count(200), 67);
        assert_eq!(mixed_parametric_count(1000), 333);
        assert_eq!(mixed_parametric_count(100), 33);
        // parametric residuals nonzero, nonparametric zero: exactly round(B/3) nonzero replicates
        let (_, km, d) = small();
        let s = smoothing_matrix(&d, &km, 0.5).unwrap();
        let e = DMatrix::from_element(12, 3, 1.0);
        let z = DMatrix::zeros(12, 3);
        let reps = bootstrap_replicates(&s, &e, &z, 200, Strategy::Mixed, 5).unwrap();
        assert_eq!(reps.iter().filter(|&&q| q > 0.0).count(), 67);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.95), 9.5);
    }
}
