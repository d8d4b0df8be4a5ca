use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter added to the diagonal when a factorization fails.
pub(crate) const JITTER_SCALE: f64 = 1e-10;

/// Cheap condition estimate from the diagonal: `max d / min d`.
pub(crate) fn diag_condition(m: &DMatrix<f64>) -> f64 {
    let d = m.diagonal();
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(0.0, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Condition estimate from a Cholesky factor: `(max L_ii / min L_ii)²`.
pub(crate) fn chol_condition(c: &Cholesky<f64, Dyn>) -> f64 {
    let d = c.l_dirty().diagonal();
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(0.0, f64::max);
    (hi / lo).powi(2)
}

/// Cholesky of `m`; on failure retries once with `1e-10 · tr(m)/dim` added to
/// the diagonal. Returns the factor and the jitter actually used.
pub(crate) fn cholesky_jittered(m: &DMatrix<f64>, context: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = m.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let dim = m.nrows().max(1) as f64;
    let jitter = JITTER_SCALE * m.trace().abs() / dim;
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += jitter;
    }
    shifted.cholesky().map(|c| (c, jitter)).ok_or_else(|| Error::Singular {
        context: context.to_string(),
        condition: diag_condition(m),
    })
}

/// Kronecker product `a ⊗ b`.
pub(crate) fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Column-major stacking of a matrix.
pub(crate) fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub(crate) fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}
