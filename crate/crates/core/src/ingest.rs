//! Trajectory CSV ingestion and the thermodynamic-energy response recipe.
//!
//! Each subject's traced variables are pre-smoothed by penalized projection
//! onto the basis. The response `F = (p/p₀)^{−κ} (dT_real/dlog p − κ T_real)`
//! is then formed pointwise on the quadrature grid and projected back.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, DataSet, FuncVec};
use crate::error::{arg, Error, Result};

/// Column names expected in the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySchema {
    pub subject: String,
    pub ordinate: String,
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub ordinate: Vec<f64>,
    /// One column per schema variable, aligned with `ordinate`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub variables: Vec<String>,
    /// In order of first appearance in the file.
    pub subjects: Vec<Subject>,
    /// Rows with an empty or non-finite required field.
    pub dropped_missing: usize,
    /// Malformed rows skipped in lenient mode.
    pub dropped_malformed: usize,
}

impl TrajectoryTable {
    pub fn dropped_rows(&self) -> usize {
        self.dropped_missing + self.dropped_malformed
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::Argument(format!("variable '{name}' is not in the table")))
    }
}

pub fn load_trajectories(path: &Path, schema: &TrajectorySchema, lenient: bool) -> Result<TrajectoryTable> {
    parse_trajectories(std::fs::File::open(path)?, schema, lenient)
}

enum Cell {
    Missing,
    Value(f64),
}

fn parse_cell(raw: &str) -> std::result::Result<Cell, String> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(Cell::Missing);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Cell::Value(v)),
        Ok(_) => Ok(Cell::Missing),
        Err(_) => Err(format!("'{t}' is not a number")),
    }
}

/// Parses CSV with a header row. Rows with missing values are always dropped
/// and counted; malformed rows are an error unless `lenient`.
pub fn parse_trajectories<R: Read>(reader: R, schema: &TrajectorySchema, lenient: bool) -> Result<TrajectoryTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let subject_col = col(&schema.subject)?;
    let ordinate_col = col(&schema.ordinate)?;
    let var_cols: Vec<usize> = schema.variables.iter().map(|v| col(v)).collect::<Result<_>>()?;

    let mut subjects: Vec<Subject> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let (mut dropped_missing, mut dropped_malformed) = (0, 0);

    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if lenient => {
                log::warn!("skipping unreadable row: {e}");
                dropped_malformed += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let line = record.position().map_or(0, |p| p.line());
        let parsed: std::result::Result<Option<(f64, Vec<f64>)>, String> = (|| {
            if record.len() != header.len() {
                return Err(format!("expected {} fields, found {}", header.len(), record.len()));
            }
            if record[subject_col].is_empty() {
                return Ok(None);
            }
            let mut cells = Vec::with_capacity(var_cols.len() + 1);
            for &c in std::iter::once(&ordinate_col).chain(&var_cols) {
                match parse_cell(&record[c])? {
                    Cell::Missing => return Ok(None),
                    Cell::Value(v) => cells.push(v),
                }
            }
            let x = cells.remove(0);
            Ok(Some((x, cells)))
        })();
        match parsed {
            Ok(Some((x, vals))) => {
                let id = record[subject_col].to_string();
                let slot = *index.entry(id.clone()).or_insert_with(|| {
                    subjects.push(Subject { id, ordinate: Vec::new(), values: vec![Vec::new(); var_cols.len()] });
                    subjects.len() - 1
                });
                let s = &mut subjects[slot];
                s.ordinate.push(x);
                for (col, v) in s.values.iter_mut().zip(vals) {
                    col.push(v);
                }
            }
            Ok(None) => dropped_missing += 1,
            Err(message) if lenient => {
                log::warn!("line {line}: {message}; row dropped");
                dropped_malformed += 1;
            }
            Err(message) => return Err(Error::Parse { line, message }),
        }
    }
    if subjects.is_empty() {
        return Err(Error::EmptyData("no usable rows in trajectory file".into()));
    }
    if dropped_missing + dropped_malformed > 0 {
        log::info!("dropped {dropped_missing} rows with missing values and {dropped_malformed} malformed rows");
    }
    Ok(TrajectoryTable { variables: schema.variables.clone(), subjects, dropped_missing, dropped_malformed })
}

/// How the response curve is formed from the traced variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseFormula {
    /// `(p/p₀)^{−κ} (dT/dlog p − κ T)` with `T` the response variable.
    Thermo { kappa: f64, p0: f64 },
    /// The response variable itself.
    Identity,
    /// `m_k` times the response variable's coefficients.
    Spectral { multipliers: Vec<f64> },
}

impl Default for ResponseFormula {
    fn default() -> Self {
        Self::Thermo { kappa: 0.286, p0: 1000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Filters {
    /// Allowed range for a subject's smallest ordinate.
    pub min_ordinate_range: Option<(f64, f64)>,
    /// Allowed range for a subject's largest ordinate.
    pub max_ordinate_range: Option<(f64, f64)>,
    /// Largest admissible `|dU/dx|` of the smoothed predictor on the grid.
    pub max_abs_derivative: Option<f64>,
    /// Samples this far outside the interval are clamped onto it.
    pub edge_tolerance: f64,
}

impl Default for Filters {
    fn default() -> Self {
        Self {
            min_ordinate_range: Some((6.29, 6.31)),
            max_ordinate_range: Some((6.89, 6.91)),
            max_abs_derivative: None,
            edge_tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecipeSpec {
    pub predictor: String,
    pub response_variable: String,
    pub response: ResponseFormula,
    /// Pressure column (hPa) used for the weight when present.
    pub pressure_variable: Option<String>,
    /// Ordinate is already `log p`; otherwise its logarithm is taken.
    pub ordinate_is_log: bool,
    pub interval: (f64, f64),
    pub filters: Filters,
    /// Roughness penalty of the pre-smoothing projection.
    pub rho: f64,
    pub center: bool,
}

impl Default for RecipeSpec {
    fn default() -> Self {
        Self {
            predictor: "T_pot".into(),
            response_variable: "T_real".into(),
            response: ResponseFormula::default(),
            pressure_variable: None,
            ordinate_is_log: true,
            interval: (6.3, 6.9),
            filters: Filters::default(),
            rho: 0.0,
            center: true,
        }
    }
}

impl RecipeSpec {
    pub fn validate(&self) -> Result<()> {
        if let ResponseFormula::Thermo { kappa, p0 } = self.response {
            if !(kappa >= 0.0) || !kappa.is_finite() {
                return arg("recipe.response.kappa: must be a finite number >= 0");
            }
            if !(p0 > 0.0) || !p0.is_finite() {
                return arg("recipe.response.p0: must be a positive finite number");
            }
        }
        if !(self.interval.0 < self.interval.1) {
            return arg("recipe.interval: must satisfy a < b");
        }
        if !(self.rho >= 0.0) {
            return arg("recipe.rho: must be >= 0");
        }
        if !(self.filters.edge_tolerance >= 0.0) {
            return arg("recipe.filters.edge_tolerance: must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectCurves {
    pub id: String,
    pub predictor: FuncVec,
    pub response_source: FuncVec,
    /// Smoothed `log p` when a pressure column is configured.
    pub log_pressure: Option<FuncVec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub subjects: Vec<SubjectCurves>,
    pub skipped: Vec<Skipped>,
    pub subjects_in: usize,
}

fn in_range(v: f64, r: Option<(f64, f64)>) -> bool {
    r.is_none_or(|(lo, hi)| v > lo && v < hi)
}

fn subject_curves(
    s: &Subject,
    columns: (usize, usize, Option<usize>),
    recipe: &RecipeSpec,
    basis: &BasisSystem,
) -> std::result::Result<SubjectCurves, String> {
    let (a, b) = basis.interval();
    let tol = recipe.filters.edge_tolerance;
    let mut x = Vec::with_capacity(s.ordinate.len());
    for &o in &s.ordinate {
        if recipe.ordinate_is_log {
            x.push(o);
        } else if o > 0.0 {
            x.push(o.ln());
        } else {
            return Err(format!("non-positive ordinate {o} cannot be log-transformed"));
        }
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !in_range(lo, recipe.filters.min_ordinate_range) {
        return Err(format!("smallest ordinate {lo} outside the coverage gate"));
    }
    if !in_range(hi, recipe.filters.max_ordinate_range) {
        return Err(format!("largest ordinate {hi} outside the coverage gate"));
    }
    let keep: Vec<usize> = (0..x.len()).filter(|&i| x[i] >= a - tol && x[i] <= b + tol).collect();
    let xs: Vec<f64> = keep.iter().map(|&i| x[i].clamp(a, b)).collect();
    let mut distinct = xs.clone();
    distinct.sort_by(|p, q| p.total_cmp(q));
    distinct.dedup();
    if distinct.len() < basis.p() {
        return Err(format!("{} distinct ordinates inside the interval, need at least p = {}", distinct.len(), basis.p()));
    }
    let project = |col: usize, transform: fn(f64) -> f64| {
        let samples: Vec<(f64, f64)> = keep.iter().zip(&xs).map(|(&i, &xi)| (xi, transform(s.values[col][i]))).collect();
        basis.project_penalized(&samples, recipe.rho).map_err(|e| e.to_string())
    };
    let predictor = project(columns.0, |v| v)?;
    let response_source = project(columns.1, |v| v)?;
    let log_pressure = match columns.2 {
        Some(c) => {
            if keep.iter().any(|&i| !(s.values[c][i] > 0.0)) {
                return Err("non-positive pressure".into());
            }
            Some(project(c, f64::ln)?)
        }
        None => None,
    };
    if let Some(limit) = recipe.filters.max_abs_derivative {
        let d = basis.values_on_grid(&predictor, 1).map_err(|e| e.to_string())?;
        let worst = d.amax();
        if worst > limit {
            return Err(format!("predictor derivative magnitude {worst} exceeds {limit}"));
        }
    }
    Ok(SubjectCurves { id: s.id.clone(), predictor, response_source, log_pressure })
}

/// Pre-smooths every subject; subjects failing a gate are reported, not fatal.
pub fn curves_to_basis(table: &TrajectoryTable, recipe: &RecipeSpec, basis: &BasisSystem) -> Result<Curves> {
    recipe.validate()?;
    let (a, b) = basis.interval();
    let scale = (b - a).abs().max(1.0);
    if (a - recipe.interval.0).abs() > 1e-12 * scale || (b - recipe.interval.1).abs() > 1e-12 * scale {
        return arg(format!("basis interval [{a}, {b}] differs from recipe interval {:?}", recipe.interval));
    }
    let columns = (
        table.variable_index(&recipe.predictor)?,
        table.variable_index(&recipe.response_variable)?,
        recipe.pressure_variable.as_deref().map(|v| table.variable_index(v)).transpose()?,
    );
    let outcomes: Vec<_> = table.subjects.par_iter().map(|s| subject_curves(s, columns, recipe, basis)).collect();
    let mut subjects = Vec::new();
    let mut skipped = Vec::new();
    for (s, outcome) in table.subjects.iter().zip(outcomes) {
        match outcome {
            Ok(c) => subjects.push(c),
            Err(reason) => {
                log::info!("subject {} skipped: {reason}", s.id);
                skipped.push(Skipped { id: s.id.clone(), reason });
            }
        }
    }
    Ok(Curves { subjects, skipped, subjects_in: table.subjects.len() })
}

/// `(p/p₀)^{−κ} (T' − κ T)` evaluated on the grid and projected.
pub fn thermo_response(
    basis: &BasisSystem,
    t_real: &FuncVec,
    log_pressure: Option<&FuncVec>,
    kappa: f64,
    p0: f64,
) -> Result<FuncVec> {
    let t = basis.values_on_grid(t_real, 0)?;
    let dt = basis.values_on_grid(t_real, 1)?;
    let logp = match log_pressure {
        Some(lp) => basis.values_on_grid(lp, 0)?.iter().copied().collect::<Vec<_>>(),
        None => basis.quadrature().nodes.clone(),
    };
    let ln_p0 = p0.ln();
    let values: Vec<f64> =
        (0..t.len()).map(|i| (-kappa * (logp[i] - ln_p0)).exp() * (dt[i] - kappa * t[i])).collect();
    basis.from_grid_values(&values)
}

/// Assembles `(U, F)` from smoothed curves according to the recipe.
pub fn build_dataset(curves: &Curves, recipe: &RecipeSpec, basis: &BasisSystem) -> Result<DataSet> {
    recipe.validate()?;
    let n = curves.subjects.len();
    if n == 0 {
        let first = curves.skipped.first().map(|s| format!(" (first: {}: {})", s.id, s.reason)).unwrap_or_default();
        return Err(Error::EmptyData(format!("all {} subjects were skipped{first}", curves.subjects_in)));
    }
    let p = basis.p();
    let rows: Vec<FuncVec> = curves
        .subjects
        .par_iter()
        .map(|c| match &recipe.response {
            ResponseFormula::Thermo { kappa, p0 } => {
                thermo_response(basis, &c.response_source, c.log_pressure.as_ref(), *kappa, *p0)
            }
            ResponseFormula::Identity => Ok(c.response_source.clone()),
            ResponseFormula::Spectral { multipliers } => {
                if multipliers.len() != p {
                    return arg(format!("recipe.response.multipliers: expected {p} entries"));
                }
                let m = nalgebra::DVector::from_column_slice(multipliers);
                FuncVec::from_vector(basis, c.response_source.coeffs().component_mul(&m))
            }
        })
        .collect::<Result<_>>()?;
    let u = DMatrix::from_fn(n, p, |i, k| curves.subjects[i].predictor.coeffs()[k]);
    let f = DMatrix::from_fn(n, p, |i, k| rows[i].coeffs()[k]);
    let data = DataSet::new(basis, u, f)?;
    Ok(if recipe.center { data.centered() } else { data })
}

/// [`build_dataset`] restricted to the thermodynamic formula.
pub fn build_thermo_dataset(curves: &Curves, recipe: &RecipeSpec, basis: &BasisSystem) -> Result<DataSet> {
    if !matches!(recipe.response, ResponseFormula::Thermo { .. }) {
        return arg("recipe.response: expected the thermo formula");
    }
    build_dataset(curves, recipe, basis)
}

/// Bookkeeping for the output provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub subjects_in: usize,
    pub subjects_out: usize,
    pub skipped: Vec<Skipped>,
    pub dropped_missing: usize,
    pub dropped_malformed: usize,
    pub subject_ids: Vec<String>,
}

/// File to data set in one call.
pub fn ingest_file(
    path: &Path,
    schema: &TrajectorySchema,
    recipe: &RecipeSpec,
    basis: &BasisSystem,
    lenient: bool,
) -> Result<(DataSet, IngestReport)> {
    let table = load_trajectories(path, schema, lenient)?;
    let curves = curves_to_basis(&table, recipe, basis)?;
    let data = build_dataset(&curves, recipe, basis)?;
    let report = IngestReport {
        subjects_in: curves.subjects_in,
        subjects_out: curves.subjects.len(),
        skipped: curves.skipped.clone(),
        dropped_missing: table.dropped_missing,
        dropped_malformed: table.dropped_malformed,
        subject_ids: curves.subjects.iter().map(|c| c.id.clone()).collect(),
    };
    Ok((data, report))
}
