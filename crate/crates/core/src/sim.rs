//! Helmholtz simulation design and the Monte Carlo harness.
//!
//! Predictors are `U_i = Σ_k k⁻³ Z_ik φ_k` with `Z_ik ~ U(−√3, √3)`, responses
//! `F_i = D(U_i) + σ Σ_k ε_ik φ_k` with `ε_ik ~ N(0, 1)` and `D = −∇² ∓ ω²`,
//! whose eigenvalue on `φ_k` is `μ_k = (kπ)² ∓ ω²`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{make_cosine_basis, BasisSystem, DataSet, DEFAULT_N_QUAD};
use crate::error::{arg, Error, Result};
use crate::gof::{bootstrap_test_with, fit_parametric, ParamFamily, Strategy};
use crate::kernel::{KernelMatrices, KernelSpec};
use crate::regress::Design;
use crate::rng;

/// Sign of the `ω²` shift in the Helmholtz eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSign {
    /// `μ_k = (kπ)² − ω²`, the operator `−∇² − ω²` taken literally.
    #[default]
    Minus,
    /// `μ_k = (kπ)² + ω²`.
    Plus,
}

/// How the test picks its `λ` in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestLambda {
    Fixed(f64),
    GcvOptimal,
    /// Oracle choice minimizing ESS (needs the true operator).
    EssOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub b: usize,
    pub strategy: Strategy,
    pub alpha: f64,
    pub lambda: TestLambda,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { b: 200, strategy: Strategy::Mixed, alpha: 0.05, lambda: TestLambda::EssOptimal }
    }
}

/// Offsets (in log10 λ) probed around the best grid point for the ESS oracle.
pub const ESS_REFINE_OFFSETS: [f64; 8] = [-0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub omega: f64,
    pub snr: f64,
    /// Overrides the calibrated noise level when set (e.g. 0 for noiseless).
    pub sigma: Option<f64>,
    pub eigen_sign: EigenSign,
    pub lambda_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub n_quad: usize,
    /// Refine the ESS-optimal λ around the best grid point.
    pub ess_refine: bool,
    pub test: Option<BootstrapConfig>,
    /// Keep bootstrap replicate values in each record.
    pub keep_replicates: bool,
    /// Log and drop failed replications instead of aborting.
    pub skip_failures: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            p: 10,
            omega: 0.0,
            snr: 3.0,
            sigma: None,
            eigen_sign: EigenSign::Minus,
            lambda_grid: default_lambda_grid(),
            reps: 100,
            seed: 1,
            kernel: KernelSpec::default(),
            n_quad: DEFAULT_N_QUAD,
            ess_refine: false,
            test: None,
            keep_replicates: false,
            skip_failures: false,
        }
    }
}

/// `{10⁰, …, 10⁵}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=5).map(|e| 10f64.powi(e)).collect()
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Argument(format!("{name}: {msg}"))
}

impl SimConfig {
    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(field("n", "must be >= 2"));
        }
        if self.p == 0 {
            return Err(field("p", "must be >= 1"));
        }
        if !(self.snr > 0.0) || !self.snr.is_finite() {
            return Err(field("snr", "must be a positive finite number"));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(field("omega", "must be a finite number >= 0"));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(field("sigma", "must be a finite number >= 0"));
            }
        }
        if self.reps == 0 {
            return Err(field("reps", "must be >= 1"));
        }
        if self.lambda_grid.is_empty() {
            return Err(field("lambda_grid", "must not be empty"));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(field("lambda_grid", "entries must be positive finite numbers"));
        }
        if !(self.kernel.h > 0.0) || !self.kernel.h.is_finite() {
            return Err(field("kernel.h", "must be a positive finite number"));
        }
        if self.n_quad < 2 * self.p + 1 {
            return Err(field("n_quad", format!("must be >= 2p + 1 = {}", 2 * self.p + 1)));
        }
        if let Some(t) = &self.test {
            if t.b < crate::gof::MIN_BOOTSTRAP {
                return Err(field("test.b", format!("must be >= {}", crate::gof::MIN_BOOTSTRAP)));
            }
            if !(t.alpha > 0.0 && t.alpha < 1.0) {
                return Err(field("test.alpha", "must lie in (0, 1)"));
            }
            if let TestLambda::Fixed(l) = t.lambda {
                if !(l > 0.0) || !l.is_finite() {
                    return Err(field("test.lambda", "fixed value must be a positive finite number"));
                }
            }
        }
        Ok(())
    }

    pub fn multipliers(&self) -> Vec<f64> {
        helmholtz_multipliers(self.p, self.omega, self.eigen_sign)
    }

    pub fn sigma(&self) -> Result<f64> {
        match self.sigma {
            Some(s) => Ok(s),
            None => calibrate_sigma(self.omega, self.snr, self.p, self.eigen_sign),
        }
    }
}

/// `μ_k = (kπ)² ∓ ω²` for `k = 1..=p`.
pub fn helmholtz_multipliers(p: usize, omega: f64, sign: EigenSign) -> Vec<f64> {
    let shift = match sign {
        EigenSign::Minus => -omega * omega,
        EigenSign::Plus => omega * omega,
    };
    (1..=p).map(|k| (k as f64 * std::f64::consts::PI).powi(2) + shift).collect()
}

/// `σ = sqrt(Σ_k k⁻⁶ μ_k² / (p · SNR²))`.
pub fn calibrate_sigma(omega: f64, snr: f64, p: usize, sign: EigenSign) -> Result<f64> {
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(field("snr", "must be a positive finite number"));
    }
    if p == 0 {
        return Err(field("p", "must be >= 1"));
    }
    let mu = helmholtz_multipliers(p, omega, sign);
    let signal: f64 = mu.iter().enumerate().map(|(i, m)| ((i + 1) as f64).powi(-6) * m * m).sum();
    Ok((signal / (p as f64 * snr * snr)).sqrt())
}

/// Raw random scores of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraws {
    /// `Z_ik ~ U(−√3, √3)`.
    pub z: DMatrix<f64>,
    /// `ε_ik ~ N(0, 1)`.
    pub eps: DMatrix<f64>,
}

impl SimDraws {
    pub fn draw<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Self {
        let r3 = 3f64.sqrt();
        let unif = Uniform::new(-r3, r3).expect("valid bounds");
        let z = DMatrix::from_fn(n, p, |_, _| unif.sample(rng));
        let eps = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
        Self { z, eps }
    }

    /// `U_ik = k⁻³ Z_ik`.
    pub fn predictors(&self) -> DMatrix<f64> {
        let mut u = self.z.clone();
        for (k, mut col) in u.column_iter_mut().enumerate() {
            col *= ((k + 1) as f64).powi(-3);
        }
        u
    }
}

/// One simulated sample together with the truth needed for ESS.
#[derive(Debug, Clone)]
pub struct SimData {
    pub data: DataSet,
    pub multipliers: Vec<f64>,
    pub sigma: f64,
}

/// Builds `(U, F)` from fixed draws: `F_ik = μ_k U_ik + σ ε_ik`.
pub fn dataset_from_draws(basis: &BasisSystem, draws: &SimDraws, multipliers: &[f64], sigma: f64) -> Result<DataSet> {
    let u = draws.predictors();
    if multipliers.len() != u.ncols() || draws.eps.shape() != u.shape() {
        return arg("draws and multipliers disagree on p");
    }
    let f = apply_multipliers(&u, multipliers) + &draws.eps * sigma;
    DataSet::new(basis, u, f)
}

pub fn gen_dataset<R: Rng + ?Sized>(cfg: &SimConfig, basis: &BasisSystem, rng: &mut R) -> Result<SimData> {
    let sigma = cfg.sigma()?;
    let multipliers = cfg.multipliers();
    let draws = SimDraws::draw(cfg.n, cfg.p, rng);
    let data = dataset_from_draws(basis, &draws, &multipliers, sigma)?;
    Ok(SimData { data, multipliers, sigma })
}

/// `U diag(μ)`: the true operator's action row by row.
pub fn apply_multipliers(u: &DMatrix<f64>, multipliers: &[f64]) -> DMatrix<f64> {
    let mut out = u.clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        col *= multipliers[k];
    }
    out
}

/// `Σ_i Σ_j (F̂_ij − μ_j U_ij)²`.
pub fn ess(predicted_action: &DMatrix<f64>, u: &DMatrix<f64>, multipliers: &[f64]) -> f64 {
    (predicted_action - apply_multipliers(u, multipliers)).norm_squared()
}

/// `Σ_i Σ_k μ_k² U_ik²`.
pub fn tss(u: &DMatrix<f64>, multipliers: &[f64]) -> f64 {
    apply_multipliers(u, multipliers).norm_squared()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepTest {
    pub lambda: f64,
    pub q_n: f64,
    pub p_value: f64,
    pub reject: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replicates: Option<Vec<f64>>,
}

/// Metrics of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub index: usize,
    pub sigma: f64,
    pub tss: f64,
    /// Indexed like the configured λ grid.
    pub ess_lambda: Vec<f64>,
    pub gcv: Vec<f64>,
    pub gcv_lambda: f64,
    /// Minimum ESS over the grid (and refinement points when enabled).
    pub ess_min: f64,
    pub ess_min_lambda: f64,
    pub theta_hat: f64,
    pub ess_theta: f64,
    pub test: Option<RepTest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard deviation of the mean; 0 with a single record.
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self { mean, se: (var / n as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCell {
    pub lambda: f64,
    pub ess: MeanSe,
    pub gcv: MeanSe,
    /// Fraction of replications whose GCV minimum sits at this λ.
    pub gcv_argmin_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub cells: Vec<LambdaCell>,
    pub ess_min: MeanSe,
    pub ess_theta: MeanSe,
    pub theta_hat: MeanSe,
    pub tss: MeanSe,
    pub rejection_rate: Option<f64>,
    pub mean_p_value: Option<f64>,
}

impl McSummary {
    /// Aggregates records; every field is a function of the records alone.
    pub fn from_records(grid: &[f64], records: &[RepRecord]) -> Self {
        let col = |f: &dyn Fn(&RepRecord) -> f64| MeanSe::of(&records.iter().map(f).collect::<Vec<_>>());
        let cells = grid
            .iter()
            .enumerate()
            .map(|(j, &lambda)| LambdaCell {
                lambda,
                ess: col(&|r| r.ess_lambda[j]),
                gcv: col(&|r| r.gcv[j]),
                gcv_argmin_share: records.iter().filter(|r| r.gcv_lambda == lambda).count() as f64
                    / records.len().max(1) as f64,
            })
            .collect();
        let tests: Vec<&RepTest> = records.iter().filter_map(|r| r.test.as_ref()).collect();
        let (rejection_rate, mean_p_value) = if tests.is_empty() {
            (None, None)
        } else {
            let m = tests.len() as f64;
            (
                Some(tests.iter().filter(|t| t.reject).count() as f64 / m),
                Some(tests.iter().map(|t| t.p_value).sum::<f64>() / m),
            )
        };
        Self {
            reps: records.len(),
            cells,
            ess_min: col(&|r| r.ess_min),
            ess_theta: col(&|r| r.ess_theta),
            theta_hat: col(&|r| r.theta_hat),
            tss: col(&|r| r.tss),
            rejection_rate,
            mean_p_value,
        }
    }

    pub fn cell(&self, lambda: f64) -> Option<&LambdaCell> {
        self.cells.iter().find(|c| (c.lambda - lambda).abs() <= 1e-12 * lambda.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: SimConfig,
    pub records: Vec<RepRecord>,
    pub failures: Vec<Failure>,
    pub summary: McSummary,
}

impl McReport {
    /// One row per replication.
    pub fn records_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index".to_string(), "sigma".into(), "tss".into()];
        for l in &self.config.lambda_grid {
            header.push(format!("ess_{l:e}"));
        }
        for l in &self.config.lambda_grid {
            header.push(format!("gcv_{l:e}"));
        }
        header.extend(
            ["gcv_lambda", "ess_min", "ess_min_lambda", "theta_hat", "ess_theta", "test_lambda", "q_n", "p_value", "reject"]
                .map(String::from),
        );
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.index.to_string(), r.sigma.to_string(), r.tss.to_string()];
            row.extend(r.ess_lambda.iter().chain(&r.gcv).map(|v| v.to_string()));
            row.extend([r.gcv_lambda, r.ess_min, r.ess_min_lambda, r.theta_hat, r.ess_theta].map(|v| v.to_string()));
            match &r.test {
                Some(t) => row.extend([t.lambda.to_string(), t.q_n.to_string(), t.p_value.to_string(), t.reject.to_string()]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Shared, replication-independent state of a study.
pub struct SimContext {
    pub basis: BasisSystem,
    pub kernel: KernelMatrices,
    pub family: ParamFamily,
}

impl SimContext {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        let basis = make_cosine_basis(cfg.p, cfg.n_quad)?;
        let kernel = KernelMatrices::helmholtz_default(&basis, &cfg.kernel)?;
        let family = ParamFamily::scaled_neg_laplacian(&basis)?;
        Ok(Self { basis, kernel, family })
    }
}

/// Runs one replication with stream `index` of the configured seed.
pub fn run_replication(cfg: &SimConfig, ctx: &SimContext, index: usize) -> Result<RepRecord> {
    let mut rng = rng::stream(cfg.seed, index as u64);
    let sim = gen_dataset(cfg, &ctx.basis, &mut rng)?;
    let (u, mu) = (sim.data.u(), &sim.multipliers);
    let design = Design::new(&sim.data, &ctx.kernel)?;

    let ess_at = |lambda: f64| -> Result<f64> {
        let fit = design.fit(sim.data.f(), lambda)?;
        Ok(ess(&design.fitted(&fit), u, mu))
    };

    let mut ess_lambda = Vec::with_capacity(cfg.lambda_grid.len());
    let mut gcv = Vec::with_capacity(cfg.lambda_grid.len());
    for &lambda in &cfg.lambda_grid {
        let (row, fit) = design.sweep_row(sim.data.f(), lambda)?;
        ess_lambda.push(ess(&design.fitted(&fit), u, mu));
        gcv.push(row.gcv);
    }
    let argmin = |v: &[f64]| {
        v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("non-empty grid")
    };
    let gcv_lambda = cfg.lambda_grid[argmin(&gcv)];
    let best = argmin(&ess_lambda);
    let (mut ess_min, mut ess_min_lambda) = (ess_lambda[best], cfg.lambda_grid[best]);
    if cfg.ess_refine {
        let centre = ess_min_lambda.log10();
        for off in ESS_REFINE_OFFSETS {
            let lambda = 10f64.powf(centre + off);
            let e = ess_at(lambda)?;
            if e < ess_min {
                ess_min = e;
                ess_min_lambda = lambda;
            }
        }
    }

    let pfit = fit_parametric(&sim.data, &ctx.family)?;
    let ess_theta = ess(&ctx.family.apply(pfit.theta, u), u, mu);

    let test = match &cfg.test {
        None => None,
        Some(t) => {
            let lambda = match t.lambda {
                TestLambda::Fixed(l) => l,
                TestLambda::GcvOptimal => gcv_lambda,
                TestLambda::EssOptimal => ess_min_lambda,
            };
            let seed = rng::derive_seed(cfg.seed, index as u64);
            let g = bootstrap_test_with(&design, &sim.data, lambda, &ctx.family, t.b, t.strategy, seed)?;
            Some(RepTest {
                lambda,
                q_n: g.q_n,
                p_value: g.p_value,
                reject: g.rejects(t.alpha),
                replicates: cfg.keep_replicates.then_some(g.bootstrap_values),
            })
        }
    };

    Ok(RepRecord {
        index,
        sigma: sim.sigma,
        tss: tss(u, mu),
        ess_lambda,
        gcv,
        gcv_lambda,
        ess_min,
        ess_min_lambda,
        theta_hat: pfit.theta,
        ess_theta,
        test,
    })
}

pub fn run_mc(cfg: &SimConfig) -> Result<McReport> {
    run_mc_with_progress(cfg, &|_, _| {})
}

/// As [`run_mc`], calling `progress(done, total)` after each replication.
pub fn run_mc_with_progress(cfg: &SimConfig, progress: &(dyn Fn(usize, usize) + Sync)) -> Result<McReport> {
    cfg.validate()?;
    let ctx = SimContext::new(cfg)?;
    let done = AtomicUsize::new(0);
    let outcomes: Vec<Result<RepRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let r = run_replication(cfg, &ctx, i);
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, cfg.reps);
            r
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.reps);
    let mut failures = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) if cfg.skip_failures => {
                log::warn!("replication {index} failed and was skipped: {e}");
                failures.push(Failure { index, message: e.to_string() });
            }
            Err(e) => return Err(Error::Replication { index, source: Box::new(e) }),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyData("every replication failed".into()));
    }
    let summary = McSummary::from_records(&cfg.lambda_grid, &records);
    Ok(McReport { config: cfg.clone(), records, failures, summary })
}

/// Gaussian kernel density estimate on `grid`; Silverman bandwidth by default.
pub fn kde(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Vec<f64> {
    let n = samples.len();
    if n == 0 {
        return vec![0.0; grid.len()];
    }
    let bw = bandwidth.unwrap_or_else(|| {
        let s = MeanSe::of(samples).se * (n as f64).sqrt();
        let iqr = crate::gof::quantile(samples, 0.75) - crate::gof::quantile(samples, 0.25);
        let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
        let spread = if spread > 0.0 { spread } else { 1.0 };
        0.9 * spread * (n as f64).powf(-0.2)
    });
    let norm = 1.0 / (n as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| samples.iter().map(|&s| (-0.5 * ((x - s) / bw).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// `m` equally spaced points covering the samples with a 10% margin on each side.
pub fn kde_grid(samples: &[f64], m: usize) -> Vec<f64> {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || m < 2 {
        return Vec::new();
    }
    let pad = 0.1 * (hi - lo).max(1e-12);
    let (a, b) = (lo - pad, hi + pad);
    (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect()
}
