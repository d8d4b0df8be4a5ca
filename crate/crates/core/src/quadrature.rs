//! Gauss–Legendre rules and weights for scattered samples.

use crate::error::{arg, Result};

/// Nodes and weights of a quadrature rule on `[a, b]`, nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// `n`-point Gauss–Legendre rule mapped to `[a, b]`.
    pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 {
            return arg("quadrature needs at least one node");
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return arg(format!("invalid interval [{a}, {b}]"));
        }
        let (x, w) = legendre_nodes(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Ok(Self {
            nodes: x.iter().map(|t| mid + half * t).collect(),
            weights: w.iter().map(|v| half * v).collect(),
        })
    }

    /// `panels` equal sub-intervals, each carrying an `order`-point rule.
    pub fn composite(panels: usize, order: usize, a: f64, b: f64) -> Result<Self> {
        if panels == 0 {
            return arg("composite rule needs at least one panel");
        }
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for i in 0..panels {
            let lo = a + width * i as f64;
            let hi = if i + 1 == panels { b } else { lo + width };
            let q = Self::gauss_legendre(order, lo, hi)?;
            nodes.extend(q.nodes);
            weights.extend(q.weights);
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss–Legendre nodes/weights on `[-1, 1]` by Newton iteration on `P_n`.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess, descending in i
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_eval(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_eval(n, z);
        if d.is_finite() {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` via the three-term recurrence.
fn legendre_eval(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Integration weights for sorted, distinct sample abscissae.
///
/// Composite Simpson on pairs of (possibly unequal) intervals; an odd
/// trailing interval is integrated with the quadratic through the last three
/// points. Falls back to the trapezoid rule when any Simpson weight is not
/// positive (strongly uneven spacing) or fewer than three points are given.
pub fn sample_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        return trapezoid_weights(x);
    }
    let mut w = vec![0.0; n];
    let mut i = 0;
    while i + 2 < n {
        let local = quadratic_weights(x[i], x[i + 1], x[i + 2], x[i], x[i + 2]);
        for (o, v) in local.iter().enumerate() {
            w[i + o] += v;
        }
        i += 2;
    }
    if i + 1 < n {
        // one interval left: [x[n-2], x[n-1]] with points n-3..n
        let local = quadratic_weights(x[n - 3], x[n - 2], x[n - 1], x[n - 2], x[n - 1]);
        for (o, v) in local.iter().enumerate() {
            w[n - 3 + o] += v;
        }
    }
    if w.iter().all(|&v| v > 0.0) {
        w
    } else {
        trapezoid_weights(x)
    }
}

pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Weights of the quadratic interpolant through `x0 < x1 < x2`, integrated
/// over `[lo, hi]`.
fn quadratic_weights(x0: f64, x1: f64, x2: f64, lo: f64, hi: f64) -> [f64; 3] {
    // Lagrange basis integrated exactly; shifted to x1 for conditioning.
    let (a, b) = (x0 - x1, x2 - x1);
    let (l, h) = (lo - x1, hi - x1);
    let m0 = h - l;
    let m1 = (h * h - l * l) / 2.0;
    let m2 = (h * h * h - l * l * l) / 3.0;
    // L0(t) = t (t - b) / (a (a - b)), L1 = (t - a)(t - b)/(a b), L2 = t (t - a)/(b (b - a))
    let w0 = (m2 - b * m1) / (a * (a - b));
    let w1 = (m2 - (a + b) * m1 + a * b * m0) / (a * b);
    let w2 = (m2 - a * m1) / (b * (b - a));
    [w0, w1, w2]
}
