//! Gram matrices of the separable operator-valued Gaussian kernel.
//!
//! The kernel acts on `ũ = (P u, B u)` through
//!
//! ```text
//! K(x,y,ξ,η)   = K₁(x,ξ) K₁(y,η)          on Ω
//! K_∂(x,y,ξ,η) = 1{x = ξ} K₁(y,η)         on Γ = {a, b}
//! K₁(x,y)      = (2πh²)^{-1/2} exp(−(x−y)²/(2h²))
//! ```
//!
//! so every entry factorizes into a predictor part `A[k',k]` and an output
//! part `M[j',j]` (or `M_L[j',j]` once `L` acts on `K₁` in `y`). With the
//! flat index `j * p + k` the full matrices are `K = M ⊗ A` and
//! `K_L = M_L ⊗ A`. Integrals are 2-D Gauss–Legendre sums on the basis grid.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{weight_columns, BasisSystem};
use crate::error::{arg, Error, Result};
use crate::linalg::{kron, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    /// Gaussian bandwidth `h`.
    pub h: f64,
    /// Whether the boundary term `K_∂` is included.
    pub include_boundary: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { h: 0.01, include_boundary: true }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return arg(format!("kernel bandwidth h = {} must be > 0", self.h));
        }
        Ok(())
    }

    /// `K₁` at offset `d = x − y`.
    pub fn k1(&self, d: f64) -> f64 {
        let h2 = self.h * self.h;
        (-d * d / (2.0 * h2)).exp() / (2.0 * std::f64::consts::PI * h2).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Identity,
    /// `−d²/dx²`
    NegLaplacian,
    /// `−d²/dx² − c`, carrying `c = ω²`.
    NegLaplacianMinusConst(f64),
    /// `−θ d²/dx²`
    ScaledNegLaplacian(f64),
    FirstDerivative,
    /// Diagonal action `φ_k ↦ m_k φ_k` given by a multiplier table.
    Spectral(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpRole {
    P,
    B,
    L,
    D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOpSpec {
    pub kind: OpKind,
    pub role: OpRole,
}

impl LinearOpSpec {
    pub fn new(kind: OpKind, role: OpRole) -> Self {
        Self { kind, role }
    }

    /// Action on every basis function, on the quadrature nodes (`ends = false`)
    /// or at the two endpoints (`ends = true`). Rows index basis functions.
    pub fn on_basis(&self, basis: &BasisSystem, ends: bool) -> Result<DMatrix<f64>> {
        let tab = |order| if ends { basis.tabulate_ends(order) } else { basis.tabulate(order) };
        Ok(match &self.kind {
            OpKind::Identity => tab(0)?,
            OpKind::NegLaplacian => -tab(2)?,
            OpKind::NegLaplacianMinusConst(c) => -tab(2)? - tab(0)? * *c,
            OpKind::ScaledNegLaplacian(theta) => -tab(2)? * *theta,
            OpKind::FirstDerivative => tab(1)?,
            OpKind::Spectral(m) => {
                if m.len() != basis.p() {
                    return arg(format!("spectral table has {} entries, basis has p = {}", m.len(), basis.p()));
                }
                let mut t = tab(0)?;
                for (k, mut row) in t.row_iter_mut().enumerate() {
                    row *= m[k];
                }
                t
            }
        })
    }

    /// Coefficient-space matrix of the operator: `[j, k] = ⟨Op φ_k, φ_j⟩`.
    pub fn coefficient_matrix(&self, basis: &BasisSystem) -> Result<DMatrix<f64>> {
        let phi = basis.tabulate(0)?;
        let op = self.on_basis(basis, false)?;
        Ok(weight_columns(&phi, &basis.quadrature().weights) * op.transpose())
    }

    /// `L_y K₁(y, η)` at `d = y − η`, closed form in Hermite-Gaussian terms.
    fn kernel_action(&self, spec: &KernelSpec, d: f64) -> Result<f64> {
        let h2 = spec.h * spec.h;
        let k = spec.k1(d);
        // ∂_y K₁ = −d/h² K₁, ∂²_y K₁ = (d²/h⁴ − 1/h²) K₁
        let neg_second = (1.0 / h2 - d * d / (h2 * h2)) * k;
        Ok(match &self.kind {
            OpKind::Identity => k,
            OpKind::NegLaplacian => neg_second,
            OpKind::NegLaplacianMinusConst(c) => neg_second - c * k,
            OpKind::ScaledNegLaplacian(theta) => theta * neg_second,
            OpKind::FirstDerivative => -d / h2 * k,
            OpKind::Spectral(_) => {
                return Err(Error::Capability(
                    "a spectral multiplier table cannot act on the Gaussian kernel in y".into(),
                ))
            }
        })
    }

    fn is_even(&self) -> bool {
        !matches!(self.kind, OpKind::FirstDerivative)
    }
}

/// Provenance stored with assembled matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProvenance {
    pub kernel: KernelSpec,
    pub p_op: LinearOpSpec,
    pub b_op: LinearOpSpec,
    pub l_op: LinearOpSpec,
    pub basis_id: u64,
    pub p: usize,
    pub n_quad: usize,
    pub interval: (f64, f64),
}

/// Factors of the separable Gram matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFactors {
    /// Predictor part `A[k',k]` (interior plus boundary).
    pub a: DMatrix<f64>,
    /// Boundary part of `A` alone.
    pub a_boundary: DMatrix<f64>,
    /// Output part `M[j',j] = ∫∫ K₁(y,η) φ_j'(y) φ_j(η)`.
    pub m: DMatrix<f64>,
    /// `M_L[j',j] = ∫∫ L_y K₁(y,η) φ_j'(y) φ_j(η)`.
    pub m_l: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrices {
    pub k: DMatrix<f64>,
    pub k_l: DMatrix<f64>,
    pub factors: Option<KernelFactors>,
    pub provenance: KernelProvenance,
}

impl KernelMatrices {
    /// Assembles `K` and `K_L` for the given operators.
    pub fn assemble(
        basis: &BasisSystem,
        p_op: &LinearOpSpec,
        b_op: &LinearOpSpec,
        l_op: &LinearOpSpec,
        spec: &KernelSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let factors = assemble_factors(basis, p_op, b_op, l_op, spec)?;
        let k = kron(&factors.m, &factors.a);
        let k_l = kron(&factors.m_l, &factors.a);
        Ok(Self {
            k,
            k_l,
            factors: Some(factors),
            provenance: KernelProvenance {
                kernel: *spec,
                p_op: p_op.clone(),
                b_op: b_op.clone(),
                l_op: l_op.clone(),
                basis_id: basis.id(),
                p: basis.p(),
                n_quad: basis.n_quad(),
                interval: basis.interval(),
            },
        })
    }

    /// The simulation setup: `P = L = −∇²`, Dirichlet `B = I`.
    pub fn helmholtz_default(basis: &BasisSystem, spec: &KernelSpec) -> Result<Self> {
        Self::assemble(
            basis,
            &LinearOpSpec::new(OpKind::NegLaplacian, OpRole::P),
            &LinearOpSpec::new(OpKind::Identity, OpRole::B),
            &LinearOpSpec::new(OpKind::NegLaplacian, OpRole::L),
            spec,
        )
    }

    pub fn p(&self) -> usize {
        self.provenance.p
    }

    pub fn basis_id(&self) -> u64 {
        self.provenance.basis_id
    }
}

/// The `p² × p²` matrix `K` with entries `⟨𝒦(φ̃_k, φ̃_k')φ_j, φ_j'⟩`.
pub fn assemble_k(basis: &BasisSystem, p_op: &LinearOpSpec, b_op: &LinearOpSpec, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let identity = LinearOpSpec::new(OpKind::Identity, OpRole::L);
    let f = assemble_factors(basis, p_op, b_op, &identity, spec)?;
    Ok(kron(&f.m, &f.a))
}

/// The `p² × p²` matrix `K_L` with entries `⟨L 𝒦(φ̃_k, φ̃_k')φ_j, φ_j'⟩`.
pub fn assemble_kl(
    basis: &BasisSystem,
    p_op: &LinearOpSpec,
    b_op: &LinearOpSpec,
    l_op: &LinearOpSpec,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let f = assemble_factors(basis, p_op, b_op, l_op, spec)?;
    Ok(kron(&f.m_l, &f.a))
}

pub fn assemble_factors(
    basis: &BasisSystem,
    p_op: &LinearOpSpec,
    b_op: &LinearOpSpec,
    l_op: &LinearOpSpec,
    spec: &KernelSpec,
) -> Result<KernelFactors> {
    let q = basis.quadrature();
    let p_phi = p_op.on_basis(basis, false)?;
    let phi = basis.tabulate(0)?;
    let b_ends = if spec.include_boundary { Some(b_op.on_basis(basis, true)?) } else { None };
    factors_on_grid(&q.nodes, &q.weights, &p_phi, &phi, b_ends.as_ref(), l_op, spec)
}

/// Factor assembly on an explicit grid; `p_phi` and `phi` are `p × m` tables
/// matching `nodes`, `b_ends` the `p × |Γ|` boundary table.
pub(crate) fn factors_on_grid(
    nodes: &[f64],
    weights: &[f64],
    p_phi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    b_ends: Option<&DMatrix<f64>>,
    l_op: &LinearOpSpec,
    spec: &KernelSpec,
) -> Result<KernelFactors> {
    let m = nodes.len();
    let p = phi.nrows();
    // reject unsupported L before doing any work
    l_op.kernel_action(spec, 0.0)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = nodes
        .par_iter()
        .map(|&y| {
            let mut k = Vec::with_capacity(m);
            let mut kl = Vec::with_capacity(m);
            for &eta in nodes {
                let d = y - eta;
                k.push(spec.k1(d));
                kl.push(l_op.kernel_action(spec, d).unwrap_or(f64::NAN));
            }
            (k, kl)
        })
        .collect();
    let k1 = DMatrix::from_fn(m, m, |i, j| rows[i].0[j]);
    let k1_l = DMatrix::from_fn(m, m, |i, j| rows[i].1[j]);

    let p_w = weight_columns(p_phi, weights);
    let phi_w = weight_columns(phi, weights);

    let mut a = &p_w * &k1 * p_w.transpose();
    let a_boundary = match b_ends {
        Some(e) => {
            if e.nrows() != p {
                return arg("boundary table has the wrong number of rows");
            }
            let mut ab = e * e.transpose();
            symmetrize(&mut ab);
            ab
        }
        None => DMatrix::zeros(p, p),
    };
    symmetrize(&mut a);
    a += &a_boundary;

    let mut mm = &phi_w * &k1 * phi_w.transpose();
    symmetrize(&mut mm);
    let mut m_l = &phi_w * &k1_l * phi_w.transpose();
    if l_op.is_even() {
        symmetrize(&mut m_l);
    }
    Ok(KernelFactors { a, a_boundary, m: mm, m_l })
}
