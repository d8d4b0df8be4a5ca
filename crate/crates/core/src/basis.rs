//! Function spaces on an interval: orthonormal bases, quadrature, projection.
//!
//! A [`BasisSystem`] couples an orthonormal family `φ_1..φ_p` on `[a, b]`
//! with a Gauss–Legendre grid. Functions are [`FuncVec`] coefficient
//! vectors; a paired sample is a [`DataSet`] of coefficient matrices.
//! The boundary `Γ` is the two-point set `{a, b}` with counting measure.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::quadrature::{sample_weights, Quadrature};

pub const DEFAULT_N_QUAD: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `φ_k(x) = √(2/L) cos(kπ(x−a)/L)`, `k = 1..p`.
    CosineUnit,
    /// The constant `1/√L` followed by cosines `k = 1..p−1`.
    CosineWithConstant,
    /// User-supplied values tabulated on the quadrature grid.
    Custom,
}

/// Values of a user-supplied basis. Entry `d` of `orders` holds the `d`-th
/// derivative: a `p × m` table on the quadrature nodes and a `p × 2` table
/// at the endpoints `a`, `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedBasis {
    pub orders: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

#[derive(Debug, Clone)]
pub struct BasisSystem {
    interval: (f64, f64),
    p: usize,
    kind: BasisKind,
    quad: Quadrature,
    table: Option<TabulatedBasis>,
    id: u64,
}

/// The cosine basis on `[0, 1]` with `n_quad` Gauss–Legendre nodes.
pub fn make_cosine_basis(p: usize, n_quad: usize) -> Result<BasisSystem> {
    BasisSystem::cosine(p, n_quad)
}

/// Serializable recipe for a cosine basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSpec {
    pub p: usize,
    pub interval: (f64, f64),
    pub n_quad: usize,
    /// Prepend the constant function.
    pub with_constant: bool,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { p: 10, interval: (0.0, 1.0), n_quad: DEFAULT_N_QUAD, with_constant: false }
    }
}

impl BasisSpec {
    pub fn build(&self) -> Result<BasisSystem> {
        BasisSystem::cosine_on(self.interval.0, self.interval.1, self.p, self.n_quad, self.with_constant)
    }
}

impl BasisSystem {
    pub fn cosine(p: usize, n_quad: usize) -> Result<Self> {
        Self::cosine_on(0.0, 1.0, p, n_quad, false)
    }

    pub fn cosine_on(a: f64, b: f64, p: usize, n_quad: usize, with_constant: bool) -> Result<Self> {
        if p == 0 {
            return arg("basis size p must be >= 1");
        }
        if n_quad < 2 * p + 1 {
            return arg(format!("n_quad = {n_quad} must be >= 2p+1 = {}", 2 * p + 1));
        }
        let quad = Quadrature::gauss_legendre(n_quad, a, b)?;
        Self::cosine_with_quadrature(a, b, p, with_constant, quad)
    }

    pub fn cosine_with_quadrature(
        a: f64,
        b: f64,
        p: usize,
        with_constant: bool,
        quad: Quadrature,
    ) -> Result<Self> {
        let kind = if with_constant {
            BasisKind::CosineWithConstant
        } else {
            BasisKind::CosineUnit
        };
        Self::build(a, b, p, kind, quad, None)
    }

    pub fn custom(a: f64, b: f64, quad: Quadrature, table: TabulatedBasis) -> Result<Self> {
        let Some((values, _)) = table.orders.first() else {
            return arg("custom basis needs at least the function values");
        };
        let p = values.nrows();
        for (d, (v, e)) in table.orders.iter().enumerate() {
            if v.shape() != (p, quad.len()) || e.shape() != (p, 2) {
                return arg(format!("custom basis table for derivative {d} has the wrong shape"));
            }
            if v.iter().chain(e.iter()).any(|x| !x.is_finite()) {
                return arg(format!("custom basis table for derivative {d} has non-finite entries"));
            }
        }
        Self::build(a, b, p, BasisKind::Custom, quad, Some(table))
    }

    fn build(
        a: f64,
        b: f64,
        p: usize,
        kind: BasisKind,
        quad: Quadrature,
        table: Option<TabulatedBasis>,
    ) -> Result<Self> {
        if !(a < b) {
            return arg(format!("interval [{a}, {b}] must satisfy a < b"));
        }
        if p == 0 {
            return arg("basis size p must be >= 1");
        }
        if quad.is_empty() || quad.nodes.len() != quad.weights.len() {
            return arg("quadrature nodes and weights must be non-empty and of equal length");
        }
        if !quad.nodes.windows(2).all(|w| w[0] < w[1]) {
            return arg("quadrature nodes must be strictly increasing");
        }
        if quad.nodes[0] < a || *quad.nodes.last().unwrap() > b {
            return arg("quadrature nodes must lie inside the interval");
        }
        if quad.weights.iter().any(|&w| !(w > 0.0)) {
            return arg("quadrature weights must be positive");
        }
        let total: f64 = quad.weights.iter().sum();
        if (total - (b - a)).abs() > 1e-10 * (b - a).max(1.0) {
            return arg(format!("quadrature weights sum to {total}, expected {}", b - a));
        }
        let id = fingerprint(a, b, p, kind, &quad, table.as_ref());
        Ok(Self { interval: (a, b), p, kind, quad, table, id })
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn len(&self) -> f64 {
        self.interval.1 - self.interval.0
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    pub fn n_quad(&self) -> usize {
        self.quad.len()
    }

    /// Content fingerprint used to check that coefficient vectors agree.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Cosine frequency of basis function `k` (0-based), `None` for custom bases.
    pub fn frequency(&self, k: usize) -> Option<usize> {
        match self.kind {
            BasisKind::CosineUnit => Some(k + 1),
            BasisKind::CosineWithConstant => Some(k),
            BasisKind::Custom => None,
        }
    }

    /// Eigenvalues of `−d²/dx²` on the basis functions (cosine bases only).
    pub fn laplacian_eigenvalues(&self) -> Option<Vec<f64>> {
        (0..self.p)
            .map(|k| self.frequency(k).map(|f| (f as f64 * PI / self.len()).powi(2)))
            .collect()
    }

    /// `d`-th derivative of basis function `k` (0-based) at `x`.
    ///
    /// Custom bases are interpolated linearly between tabulated nodes.
    pub fn derivative(&self, k: usize, order: usize, x: f64) -> Result<f64> {
        if k >= self.p {
            return arg(format!("basis index {k} out of range (p = {})", self.p));
        }
        match self.frequency(k) {
            Some(0) => Ok(if order == 0 { 1.0 / self.len().sqrt() } else { 0.0 }),
            Some(f) => {
                let len = self.len();
                let w = f as f64 * PI / len;
                let t = w * (x - self.interval.0);
                let amp = (2.0 / len).sqrt() * w.powi(order as i32);
                // d^n/dx^n cos(w t) cycles cos, -sin, -cos, sin
                Ok(amp
                    * match order % 4 {
                        0 => t.cos(),
                        1 => -t.sin(),
                        2 => -t.cos(),
                        _ => t.sin(),
                    })
            }
            None => {
                let (nodes, ends) = self.table_order(order)?;
                Ok(interpolate(self.interval, &self.quad.nodes, nodes.row(k).iter(), ends[(k, 0)], ends[(k, 1)], x))
            }
        }
    }

    pub fn eval(&self, k: usize, x: f64) -> Result<f64> {
        self.derivative(k, 0, x)
    }

    fn table_order(&self, order: usize) -> Result<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.table
            .as_ref()
            .and_then(|t| t.orders.get(order))
            .map(|(v, e)| (v, e))
            .ok_or_else(|| Error::Capability(format!("custom basis has no tabulated derivative of order {order}")))
    }

    /// `p × m` table of the `order`-th derivative on the quadrature nodes.
    pub fn tabulate(&self, order: usize) -> Result<DMatrix<f64>> {
        if self.kind == BasisKind::Custom {
            return self.table_order(order).map(|(v, _)| v.clone());
        }
        let m = self.quad.len();
        let mut out = DMatrix::zeros(self.p, m);
        for k in 0..self.p {
            for (i, &x) in self.quad.nodes.iter().enumerate() {
                out[(k, i)] = self.derivative(k, order, x)?;
            }
        }
        Ok(out)
    }

    /// `p × 2` table of the `order`-th derivative at `a` and `b`.
    pub fn tabulate_ends(&self, order: usize) -> Result<DMatrix<f64>> {
        if self.kind == BasisKind::Custom {
            return self.table_order(order).map(|(_, e)| e.clone());
        }
        let (a, b) = self.interval;
        let mut out = DMatrix::zeros(self.p, 2);
        for k in 0..self.p {
            out[(k, 0)] = self.derivative(k, order, a)?;
            out[(k, 1)] = self.derivative(k, order, b)?;
        }
        Ok(out)
    }

    /// Quadrature Gram matrix `G_jk = Σ_m w_m φ_j(x_m) φ_k(x_m)`.
    pub fn gram(&self) -> DMatrix<f64> {
        let phi = self.tabulate(0).expect("order 0 is always tabulated");
        let weighted = weight_columns(&phi, &self.quad.weights);
        &weighted * phi.transpose()
    }

    pub fn evaluate(&self, f: &FuncVec, x: f64) -> Result<f64> {
        self.evaluate_derivative(f, 0, x)
    }

    pub fn evaluate_derivative(&self, f: &FuncVec, order: usize, x: f64) -> Result<f64> {
        self.check(f.basis_id)?;
        let mut s = 0.0;
        for (k, c) in f.coeffs.iter().enumerate() {
            s += c * self.derivative(k, order, x)?;
        }
        Ok(s)
    }

    /// Values of `f` (or its derivative) on the quadrature nodes.
    pub fn values_on_grid(&self, f: &FuncVec, order: usize) -> Result<DVector<f64>> {
        self.check(f.basis_id)?;
        Ok(self.tabulate(order)?.transpose() * &f.coeffs)
    }

    /// Coefficients `c_k = Σ_m w_m v(x_m) φ_k(x_m)` of a function given on the
    /// quadrature nodes.
    pub fn from_grid_values(&self, values: &[f64]) -> Result<FuncVec> {
        if values.len() != self.quad.len() {
            return arg(format!("expected {} grid values, got {}", self.quad.len(), values.len()));
        }
        let phi = self.tabulate(0)?;
        let mut c = DVector::zeros(self.p);
        for (i, (&v, &w)) in values.iter().zip(&self.quad.weights).enumerate() {
            for k in 0..self.p {
                c[k] += w * v * phi[(k, i)];
            }
        }
        FuncVec::from_vector(self, c)
    }

    /// Weighted least-squares projection of sampled `(x, y)` pairs.
    pub fn project(&self, samples: &[(f64, f64)]) -> Result<FuncVec> {
        self.project_penalized(samples, 0.0)
    }

    /// Least-squares projection with roughness penalty `rho · ∫ (u'')²`.
    ///
    /// Samples are sorted, duplicate abscissae averaged, and weighted by
    /// composite Simpson weights of the sample grid.
    pub fn project_penalized(&self, samples: &[(f64, f64)], rho: f64) -> Result<FuncVec> {
        if !(rho >= 0.0) {
            return arg("roughness penalty must be >= 0");
        }
        let (a, b) = self.interval;
        let tol = 1e-12 * self.len().max(1.0);
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(samples.len());
        for &(x, y) in samples {
            if !x.is_finite() || !y.is_finite() {
                return arg("samples must be finite");
            }
            if x < a - tol || x > b + tol {
                return arg(format!("sample abscissa {x} outside [{a}, {b}]"));
            }
            pts.push((x.clamp(a, b), y));
        }
        pts.sort_by(|l, r| l.0.total_cmp(&r.0));
        let mut xs: Vec<f64> = Vec::with_capacity(pts.len());
        let mut ys: Vec<f64> = Vec::with_capacity(pts.len());
        let mut counts: Vec<f64> = Vec::with_capacity(pts.len());
        for (x, y) in pts {
            if xs.last() == Some(&x) {
                *ys.last_mut().unwrap() += y;
                *counts.last_mut().unwrap() += 1.0;
            } else {
                xs.push(x);
                ys.push(y);
                counts.push(1.0);
            }
        }
        for (y, c) in ys.iter_mut().zip(&counts) {
            *y /= c;
        }
        if xs.len() < self.p {
            return Err(Error::Singular {
                context: format!("projection: {} distinct abscissae for p = {}", xs.len(), self.p),
                condition: f64::INFINITY,
            });
        }
        let w = if xs.len() >= 2 { sample_weights(&xs) } else { vec![1.0] };
        let mut design = DMatrix::zeros(xs.len(), self.p);
        for (i, &x) in xs.iter().enumerate() {
            for k in 0..self.p {
                design[(i, k)] = self.eval(k, x)?;
            }
        }
        let wd = DMatrix::from_fn(xs.len(), self.p, |i, k| w[i] * design[(i, k)]);
        let mut normal = wd.transpose() * &design;
        if rho > 0.0 {
            let curv = self.tabulate(2)?;
            let cw = weight_columns(&curv, &self.quad.weights);
            normal += (cw * curv.transpose()) * rho;
        }
        let rhs = wd.transpose() * DVector::from_vec(ys);
        let condition = crate::linalg::diag_condition(&normal);
        let chol = normal.cholesky().ok_or_else(|| Error::Singular {
            context: "projection normal equations".into(),
            condition,
        })?;
        FuncVec::from_vector(self, chol.solve(&rhs))
    }

    pub fn l2_inner(&self, f: &FuncVec, g: &FuncVec) -> Result<f64> {
        self.check(f.basis_id)?;
        l2_inner(f, g)
    }

    pub(crate) fn check(&self, id: u64) -> Result<()> {
        if id != self.id {
            return Err(Error::BasisMismatch { expected: self.id, found: id });
        }
        Ok(())
    }
}

/// `⟨f, g⟩_{L²}` in the span: the dot product of the coefficient vectors.
pub fn l2_inner(f: &FuncVec, g: &FuncVec) -> Result<f64> {
    if f.basis_id != g.basis_id {
        return Err(Error::BasisMismatch { expected: f.basis_id, found: g.basis_id });
    }
    Ok(f.coeffs.dot(&g.coeffs))
}

/// Columns of `m` scaled by `w`.
pub(crate) fn weight_columns(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= w[j];
    }
    out
}

fn interpolate<'a>(
    interval: (f64, f64),
    nodes: &[f64],
    values: impl Iterator<Item = &'a f64>,
    at_a: f64,
    at_b: f64,
    x: f64,
) -> f64 {
    let mut xs = Vec::with_capacity(nodes.len() + 2);
    let mut ys = Vec::with_capacity(nodes.len() + 2);
    xs.push(interval.0);
    ys.push(at_a);
    for (&n, &v) in nodes.iter().zip(values) {
        if n > *xs.last().unwrap() {
            xs.push(n);
            ys.push(v);
        }
    }
    if interval.1 > *xs.last().unwrap() {
        xs.push(interval.1);
        ys.push(at_b);
    }
    let x = x.clamp(interval.0, interval.1);
    let i = xs.partition_point(|&t| t <= x).clamp(1, xs.len() - 1);
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// FNV-1a over the defining data of a basis.
fn fingerprint(a: f64, b: f64, p: usize, kind: BasisKind, quad: &Quadrature, table: Option<&TabulatedBasis>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &byte in bytes {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(&a.to_bits().to_le_bytes());
    feed(&b.to_bits().to_le_bytes());
    feed(&(p as u64).to_le_bytes());
    feed(&[kind as u8]);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        feed(&x.to_bits().to_le_bytes());
        feed(&w.to_bits().to_le_bytes());
    }
    if let Some(t) = table {
        for (v, e) in &t.orders {
            for x in v.iter().chain(e.iter()) {
                feed(&x.to_bits().to_le_bytes());
            }
        }
    }
    h
}

/// A function in the span of a basis, stored as its coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FuncVec {
    coeffs: DVector<f64>,
    basis_id: u64,
}

impl FuncVec {
    pub fn new(basis: &BasisSystem, coeffs: Vec<f64>) -> Result<Self> {
        Self::from_vector(basis, DVector::from_vec(coeffs))
    }

    pub fn from_vector(basis: &BasisSystem, coeffs: DVector<f64>) -> Result<Self> {
        Self::with_id(basis.id(), basis.p(), coeffs)
    }

    pub(crate) fn with_id(basis_id: u64, p: usize, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != p {
            return arg(format!("coefficient vector has length {}, basis has p = {p}", coeffs.len()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return arg("coefficients must be finite");
        }
        Ok(Self { coeffs, basis_id })
    }

    pub fn zeros(basis: &BasisSystem) -> Self {
        Self { coeffs: DVector::zeros(basis.p()), basis_id: basis.id() }
    }

    /// The basis function `φ_{k+1}` itself.
    pub fn unit(basis: &BasisSystem, k: usize) -> Result<Self> {
        if k >= basis.p() {
            return arg(format!("basis index {k} out of range"));
        }
        let mut f = Self::zeros(basis);
        f.coeffs[k] = 1.0;
        Ok(f)
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn basis_id(&self) -> u64 {
        self.basis_id
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `alpha · self + beta · other`.
    pub fn combine(&self, alpha: f64, other: &FuncVec, beta: f64) -> Result<FuncVec> {
        if self.basis_id != other.basis_id {
            return Err(Error::BasisMismatch { expected: self.basis_id, found: other.basis_id });
        }
        Ok(FuncVec { coeffs: &self.coeffs * alpha + &other.coeffs * beta, basis_id: self.basis_id })
    }
}

/// Paired sample: row `i` of `u` / `f` holds the coefficients of `U_i` / `F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    u: DMatrix<f64>,
    f: DMatrix<f64>,
    basis_id: u64,
}

impl DataSet {
    pub fn new(basis: &BasisSystem, u: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        Self::from_parts(basis.id(), basis.p(), u, f)
    }

    pub fn from_parts(basis_id: u64, p: usize, u: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        if u.nrows() == 0 {
            return arg("data set needs at least one observation");
        }
        if u.shape() != f.shape() {
            return arg(format!("U is {:?} but F is {:?}", u.shape(), f.shape()));
        }
        if u.ncols() != p {
            return arg(format!("coefficient matrices have {} columns, basis has p = {p}", u.ncols()));
        }
        if u.iter().chain(f.iter()).any(|x| !x.is_finite()) {
            return arg("data set entries must be finite");
        }
        Ok(Self { u, f, basis_id })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn basis_id(&self) -> u64 {
        self.basis_id
    }

    pub fn predictor(&self, i: usize) -> FuncVec {
        FuncVec { coeffs: self.u.row(i).transpose(), basis_id: self.basis_id }
    }

    pub fn response(&self, i: usize) -> FuncVec {
        FuncVec { coeffs: self.f.row(i).transpose(), basis_id: self.basis_id }
    }

    /// Same predictors, different responses.
    pub fn with_responses(&self, f: DMatrix<f64>) -> Result<Self> {
        Self::from_parts(self.basis_id, self.p(), self.u.clone(), f)
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` here.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n() {
            return arg("permutation length must equal n");
        }
        let u = DMatrix::from_fn(self.n(), self.p(), |i, k| self.u[(order[i], k)]);
        let f = DMatrix::from_fn(self.n(), self.p(), |i, k| self.f[(order[i], k)]);
        Self::from_parts(self.basis_id, self.p(), u, f)
    }

    /// Subtracts the column means of `U` and `F`.
    pub fn centered(&self) -> Self {
        let center = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            for mut col in out.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
            out
        };
        Self { u: center(&self.u), f: center(&self.f), basis_id: self.basis_id }
    }
}
