//! Run configuration documents and named presets.
//!
//! A document is JSON. When it names a `preset`, the preset document is
//! deep-merged underneath it (objects merge key by key, everything else is
//! replaced). Unknown keys are rejected and errors carry the field path.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::basis::{BasisSpec, BasisSystem};
use crate::error::{Error, Result};
use crate::gof::{ParamFamily, Strategy};
use crate::ingest::{RecipeSpec, TrajectorySchema};
use crate::kernel::{KernelMatrices, KernelSpec, LinearOpSpec, OpKind, OpRole};
use crate::sim::SimConfig;

pub const PRESETS: [&str; 6] = ["table1", "table2", "table3", "table4", "figure1", "era5"];

/// Kernel and operator choices for fitting stored data sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub h: f64,
    pub include_boundary: bool,
    pub p_op: OpKind,
    pub b_op: OpKind,
    pub l_op: OpKind,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let spec = KernelSpec::default();
        Self {
            h: spec.h,
            include_boundary: spec.include_boundary,
            p_op: OpKind::NegLaplacian,
            b_op: OpKind::Identity,
            l_op: OpKind::NegLaplacian,
        }
    }
}

impl KernelConfig {
    pub fn spec(&self) -> KernelSpec {
        KernelSpec { h: self.h, include_boundary: self.include_boundary }
    }

    pub fn assemble(&self, basis: &BasisSystem) -> Result<KernelMatrices> {
        KernelMatrices::assemble(
            basis,
            &LinearOpSpec::new(self.p_op.clone(), OpRole::P),
            &LinearOpSpec::new(self.b_op.clone(), OpRole::B),
            &LinearOpSpec::new(self.l_op.clone(), OpRole::L),
            &self.spec(),
        )
    }
}

/// Null family `θ D₀` for the goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub operator: OpKind,
    /// Tests the single operator `θ D₀` instead of the whole family.
    pub fixed_theta: Option<f64>,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { operator: OpKind::NegLaplacian, fixed_theta: None }
    }
}

impl FamilyConfig {
    pub fn build(&self, basis: &BasisSystem) -> Result<ParamFamily> {
        let family = match &self.operator {
            OpKind::NegLaplacian => ParamFamily::scaled_neg_laplacian(basis)?,
            OpKind::Spectral(m) => ParamFamily::spectral(m),
            other => ParamFamily::from_operator(
                &format!("{other:?}").to_lowercase(),
                &LinearOpSpec::new(other.clone(), OpRole::D),
                basis,
            )?,
        };
        Ok(match self.fixed_theta {
            Some(t) => family.with_fixed_theta(t),
            None => family,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSection {
    pub b: usize,
    pub strategy: Strategy,
    pub alpha: f64,
    /// Fixed `λ`; the GCV-best grid value when absent.
    pub lambda: Option<f64>,
    pub family: FamilyConfig,
    /// Points of the density grid written next to the replicates.
    pub kde_points: usize,
}

impl Default for TestSection {
    fn default() -> Self {
        Self { b: 200, strategy: Strategy::Mixed, alpha: 0.05, lambda: None, family: FamilyConfig::default(), kde_points: 256 }
    }
}

/// A labelled set of overrides applied to the simulation base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub label: String,
    #[serde(default)]
    pub set: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub base: SimConfig,
    pub scenarios: Vec<Scenario>,
    /// Also write replication 0 of each scenario as a data set directory.
    pub emit_dataset: bool,
    /// Number of samples whose bootstrap densities are written.
    pub density_samples: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { base: SimConfig::default(), scenarios: Vec::new(), emit_dataset: false, density_samples: 0 }
    }
}

impl SimulationSection {
    /// `(label, config)` per scenario; the base alone when none are listed.
    pub fn resolve(&self) -> Result<Vec<(String, SimConfig)>> {
        if self.scenarios.is_empty() {
            self.base.validate().map_err(|e| prefix("simulation.base", e))?;
            return Ok(vec![("default".into(), self.base.clone())]);
        }
        let base = serde_json::to_value(&self.base)?;
        self.scenarios
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let path = format!("simulation.scenarios[{i}].set");
                let mut v = base.clone();
                merge(&mut v, &Value::Object(s.set.clone()));
                let cfg: SimConfig = from_value_at(v, &path)?;
                cfg.validate().map_err(|e| prefix(&path, e))?;
                Ok((s.label.clone(), cfg))
            })
            .collect()
    }

    pub fn scenario(&self, label: &str) -> Result<SimConfig> {
        self.resolve()?
            .into_iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::Argument(format!("simulation.scenarios: no scenario labelled '{label}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub input: Option<PathBuf>,
    pub schema: TrajectorySchema,
    #[serde(default)]
    pub recipe: RecipeSpec,
    #[serde(default)]
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub description: Option<String>,
    pub seed: u64,
    /// Data set directory read by fit, sweep, test and spectrum.
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub basis: BasisSpec,
    pub kernel: KernelConfig,
    /// `λ` for `fit`; GCV-best grid value when absent.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub test: TestSection,
    /// Number of leading spectrum values to report; all when absent.
    pub top_m: Option<usize>,
    pub simulation: SimulationSection,
    pub ingest: Option<IngestSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            description: None,
            seed: 1,
            data: None,
            output: None,
            basis: BasisSpec::default(),
            kernel: KernelConfig::default(),
            lambda: None,
            lambda_grid: crate::sim::default_lambda_grid(),
            test: TestSection::default(),
            top_m: None,
            simulation: SimulationSection::default(),
            ingest: None,
        }
    }
}

fn prefix(path: &str, e: Error) -> Error {
    match e {
        Error::Argument(m) => Error::Argument(format!("{path}.{m}")),
        other => other,
    }
}

fn from_value_at<T: serde::de::DeserializeOwned>(v: Value, path: &str) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let full = match (path.is_empty(), inner == ".") {
            (true, _) => inner,
            (false, true) => path.to_string(),
            (false, false) => format!("{path}.{inner}"),
        };
        Error::Argument(format!("{full}: {}", e.into_inner()))
    })
}

/// Recursive object merge of `over` into `base`.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn pow10(e: f64) -> f64 {
    10f64.powf(e)
}

fn scenario(label: String, set: Value) -> Value {
    json!({ "label": label, "set": set })
}

fn table_base(reps: usize) -> Value {
    json!({
        "n": 200, "p": 10, "snr": 3.0, "omega": 0.0, "eigen_sign": "plus",
        "lambda_grid": crate::sim::default_lambda_grid(), "reps": reps, "seed": 20240611
    })
}

/// The six `(n, SNR, ω ladder)` rows of the power table.
const POWER_ROWS: [(usize, f64, [f64; 5]); 6] = [
    (200, 8.0, [0.0, 0.25, 0.50, 0.75, 1.00]),
    (200, 3.0, [0.0, 0.42, 0.84, 1.26, 1.68]),
    (200, 1.0, [0.0, 0.83, 1.66, 2.49, 3.32]),
    (400, 8.0, [0.0, 0.21, 0.42, 0.63, 0.84]),
    (400, 3.0, [0.0, 0.35, 0.70, 1.05, 1.40]),
    (400, 1.0, [0.0, 0.66, 1.32, 1.98, 2.64]),
];

/// The six `(n, SNR, ω ladder)` rows of the estimator comparison table.
const COMPARE_ROWS: [(usize, f64, [f64; 4]); 6] = [
    (200, 8.0, [0.0, 0.50, 1.00, 1.50]),
    (200, 3.0, [0.0, 0.84, 1.68, 2.52]),
    (200, 1.0, [0.0, 1.66, 3.32, 4.98]),
    (400, 8.0, [0.0, 0.42, 0.84, 1.26]),
    (400, 3.0, [0.0, 0.70, 1.40, 2.10]),
    (400, 1.0, [0.0, 1.32, 2.64, 3.96]),
];

/// Label used by table presets, e.g. `n200_snr3_w1.26`.
pub fn scenario_label(n: usize, snr: f64, omega: f64) -> String {
    format!("n{n}_snr{snr}_w{omega}")
}

/// The preset document for `name`, if it exists.
///
/// Desk-scale deviations: 100 Monte Carlo replications instead of 1000 and
/// `B = 200` bootstrap replicates instead of 1000.
pub fn preset(name: &str) -> Option<Value> {
    let doc = match name {
        "table1" => json!({
            "description": "ESS and GCV over the lambda grid, n=200, SNR=3 (100 replications)",
            "simulation": {
                "base": table_base(100),
                "scenarios": ([0.0, 0.84].map(|w| scenario(scenario_label(200, 3.0, w), json!({ "omega": w }))))
            }
        }),
        "table2" => json!({
            "description": "ESS of the regularized and parametric estimators, ESS-optimal lambda (100 replications)",
            "simulation": {
                "base": merged(table_base(100), json!({ "ess_refine": true })),
                "scenarios": COMPARE_ROWS.iter().flat_map(|(n, snr, ws)| ws.iter().map(move |&w|
                    scenario(scenario_label(*n, *snr, w), json!({ "n": n, "snr": snr, "omega": w })))).collect::<Vec<_>>()
            }
        }),
        "table3" => json!({
            "description": "Null rejection rates per residual strategy and fixed lambda, B=200 (100 replications)",
            "simulation": {
                "base": merged(table_base(100), json!({ "test": { "b": 200, "strategy": "mixed", "alpha": 0.05, "lambda": "gcv_optimal" } })),
                "scenarios": (["parametric", "nonparametric", "mixed"].iter().flat_map(|s|
                    [1.0, 2.0, 2.6, 2.8, 3.0, 3.2, 3.4, 4.0, 5.0].map(|e| scenario(
                        format!("{s}_lambda1e{e}"),
                        json!({ "test": { "b": 200, "strategy": s, "alpha": 0.05, "lambda": { "fixed": pow10(e) } } })))).collect::<Vec<_>>())
            }
        }),
        "table4" => json!({
            "description": "Rejection rates under alternatives, mixed residuals, ESS-optimal lambda, B=200 (100 replications)",
            "simulation": {
                "base": merged(table_base(100), json!({
                    "ess_refine": true,
                    "test": { "b": 200, "strategy": "mixed", "alpha": 0.05, "lambda": "ess_optimal" }
                })),
                "scenarios": POWER_ROWS.iter().flat_map(|(n, snr, ws)| ws.iter().map(move |&w|
                    scenario(scenario_label(*n, *snr, w), json!({ "n": n, "snr": snr, "omega": w })))).collect::<Vec<_>>()
            }
        }),
        "figure1" => json!({
            "description": "Densities of the statistic and its bootstrap for parametric and nonparametric residuals, n=200, SNR=3",
            "simulation": {
                "base": merged(table_base(100), json!({
                    "ess_refine": true,
                    "keep_replicates": true,
                    "test": { "b": 200, "strategy": "parametric", "alpha": 0.05, "lambda": "ess_optimal" }
                })),
                "density_samples": 5,
                "scenarios": (["parametric", "nonparametric"].iter().flat_map(|s| [0.0, 0.42, 0.84, 1.26].map(|w| scenario(
                    format!("{s}_w{w}"),
                    json!({ "omega": w, "test": { "b": 200, "strategy": s, "alpha": 0.05, "lambda": "ess_optimal" } })))).collect::<Vec<_>>())
            }
        }),
        "era5" => json!({
            "description": "Thermodynamic energy equation on trajectory data; supply ingest.input or data",
            "basis": { "p": 10, "interval": [6.3, 6.9], "n_quad": 201, "with_constant": true },
            "kernel": { "h": 0.01, "include_boundary": true, "p_op": "first_derivative", "b_op": "identity", "l_op": "first_derivative" },
            "lambda_grid": ([0.9, 1.1, 1.3, 1.5, 1.7, 1.9].map(pow10)),
            "test": { "b": 200, "strategy": "mixed", "alpha": 0.05, "family": { "operator": "first_derivative", "fixed_theta": 1.0 } },
            "ingest": {
                "input": null,
                "schema": { "subject": "id", "ordinate": "p", "variables": ["T_real", "T_pot"] },
                "recipe": {
                    "predictor": "T_pot", "response_variable": "T_real",
                    "response": { "kind": "thermo", "kappa": 0.286, "p0": 1000.0 },
                    "ordinate_is_log": false, "interval": [6.3, 6.9], "center": true
                }
            }
        }),
        _ => return None,
    };
    Some(doc)
}

fn merged(mut base: Value, over: Value) -> Value {
    merge(&mut base, &over);
    base
}

impl RunConfig {
    /// Parses a document, layering it over its preset when one is named.
    pub fn from_value(doc: Value) -> Result<Self> {
        if !doc.is_object() {
            return Err(Error::Argument("config: top level must be a JSON object".into()));
        }
        let effective = match doc.get("preset") {
            None | Some(Value::Null) => doc,
            Some(Value::String(name)) => {
                let mut base = preset(name).ok_or_else(|| {
                    Error::Argument(format!("preset: unknown preset '{name}' (known: {})", PRESETS.join(", ")))
                })?;
                merge(&mut base, &doc);
                base
            }
            Some(_) => return Err(Error::Argument("preset: must be a string".into())),
        };
        from_value_at(effective, "")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Argument(format!("config: {e}")))?;
        Self::from_value(doc)
    }

    pub fn named_preset(name: &str) -> Result<Self> {
        Self::from_value(json!({ "preset": name }))
    }

    /// Overrides the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.simulation.base.seed = seed;
        for s in &mut self.simulation.scenarios {
            s.set.remove("seed");
        }
    }

    /// Checks the fields shared by every command.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::Argument(format!("{path}: {msg}")));
        if self.basis.p == 0 {
            return bad("basis.p", "must be >= 1");
        }
        if !(self.basis.interval.0 < self.basis.interval.1) {
            return bad("basis.interval", "must satisfy a < b");
        }
        if self.basis.n_quad < 2 * self.basis.p + 1 {
            return bad("basis.n_quad", "must be >= 2p + 1");
        }
        if !(self.kernel.h > 0.0) || !self.kernel.h.is_finite() {
            return bad("kernel.h", "must be a positive finite number");
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return bad("lambda", "must be a positive finite number");
            }
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return bad("lambda_grid", "must be a non-empty list of positive finite numbers");
        }
        if self.test.b < crate::gof::MIN_BOOTSTRAP {
            return bad("test.b", "must be >= 100");
        }
        if !(self.test.alpha > 0.0 && self.test.alpha < 1.0) {
            return bad("test.alpha", "must lie in (0, 1)");
        }
        if let Some(l) = self.test.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return bad("test.lambda", "must be a positive finite number");
            }
        }
        if self.top_m == Some(0) {
            return bad("top_m", "must be >= 1");
        }
        if let Some(ing) = &self.ingest {
            ing.recipe.validate().map_err(|e| prefix("ingest", e))?;
        }
        self.simulation.resolve().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for name in PRESETS {
            let cfg = RunConfig::named_preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let e = RunConfig::from_json_str(r#"{"simulation": {"base": {"snrr": 3}}}"#).unwrap_err();
        assert!(e.to_string().contains("simulation.base"), "{e}");
        let e = RunConfig::from_json_str(r#"{"bogus": 1}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn invalid_snr_is_named() {
        let cfg = RunConfig::from_json_str(r#"{"simulation": {"base": {"snr": 0}}}"#).unwrap();
        let e = cfg.validate().unwrap_err();
        assert!(e.to_string().contains("snr"), "{e}");
    }

    #[test]
    fn user_values_override_preset() {
        let cfg = RunConfig::from_json_str(r#"{"preset": "table1", "simulation": {"base": {"reps": 3}}}"#).unwrap();
        assert_eq!(cfg.simulation.base.reps, 3);
        assert_eq!(cfg.simulation.base.n, 200);
        let sc = cfg.simulation.resolve().unwrap();
        assert_eq!(sc.len(), 2);
        assert_eq!(sc[1].1.omega, 0.84);
        assert_eq!(sc[1].1.reps, 3);
    }

    #[test]
    fn merge_replaces_arrays_and_merges_objects() {
        let mut a = json!({"x": {"y": 1, "z": [1, 2]}, "w": 0});
        merge(&mut a, &json!({"x": {"z": [3]}, "v": 2}));
        assert_eq!(a, json!({"x": {"y": 1, "z": [3]}, "w": 0, "v": 2}));
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(RunConfig::from_json_str(r#"{"preset": "table9"}"#).is_err());
    }
}
