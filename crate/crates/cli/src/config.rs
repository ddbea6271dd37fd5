//! Scenario files.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nhmpc_core::mpc::{find_insufficiency_state, CostSpec, Scenario};
use nhmpc_core::ocp::SolverSettings;
use nhmpc_core::VehicleModel;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub vehicle: VehicleSection,
    #[serde(default)]
    pub setpoint: SetpointSection,
    pub initial_state: InitialStateSection,
    pub cost: CostSection,
    pub horizon: HorizonSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// `[[lo, hi], ...]`, one pair per input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_bounds: Option<Vec<[f64; 2]>>,
}

/// Origin when `state` is absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<f64>>,
}

/// Either an explicit `state` or the radius of the quadratic-cost
/// insufficiency search around the origin (with `Q = I`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insufficiency_radius: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Tailored,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scale {
    Mode(ScaleMode),
    Value(f64),
}

impl Default for Scale {
    fn default() -> Self {
        Scale::Mode(ScaleMode::Auto)
    }
}

/// Weights default to one. For a quadratic cost `q` and `r` are the
/// diagonals of `Q` and `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub kind: CostKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default)]
    pub cancel_gcd: bool,
    #[serde(default)]
    pub scale: Scale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    pub dt: f64,
    pub steps: usize,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub substeps: usize,
    pub warm_start: bool,
    pub memory: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverSection {
            max_iter: s.max_iter,
            tol: s.tol,
            restarts: s.restarts,
            seed: s.seed,
            substeps: s.substeps,
            warm_start: s.warm_start,
            memory: s.memory,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// File stem; the config file name when empty.
    pub name: String,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into(), name: String::new(), svg: false }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.output.name.is_empty() {
            cfg.output.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<VehicleModel, CliError> {
        let mut model = VehicleModel::from_name(&self.vehicle.name, &self.vehicle.params).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(b) = &self.vehicle.input_bounds {
            model = model.with_input_bounds(b.iter().map(|p| (p[0], p[1])).collect()).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn setpoint(&self, n: usize) -> Result<DVector<f64>, CliError> {
        match &self.setpoint.state {
            Some(v) => vector("setpoint.state", v, n),
            None => Ok(DVector::zeros(n)),
        }
    }

    pub fn initial_state(&self, model: &VehicleModel) -> Result<DVector<f64>, CliError> {
        let n = model.state_dim();
        match (&self.initial_state.state, self.initial_state.insufficiency_radius) {
            (Some(v), None) => vector("initial_state.state", v, n),
            (None, Some(eps)) => find_insufficiency_state(model, &DMatrix::identity(n, n), eps).map_err(CliError::Numerical),
            _ => Err(CliError::Config("initial_state needs exactly one of `state` and `insufficiency_radius`".into())),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let model = self.model()?;
        let (n, m) = (model.state_dim(), model.input_dim());
        let setpoint = self.setpoint(n)?;
        let x0 = self.initial_state(&model)?;
        let q = weights("cost.q", &self.cost.q, n)?;
        let r = weights("cost.r", &self.cost.r, m)?;
        let cost = match self.cost.kind {
            CostKind::Tailored => CostSpec::Tailored {
                q,
                r,
                cancel_gcd: self.cost.cancel_gcd,
                scale: match self.cost.scale {
                    Scale::Mode(ScaleMode::Auto) => None,
                    Scale::Value(v) => Some(v),
                },
            },
            CostKind::Quadratic => CostSpec::Quadratic {
                q: DMatrix::from_diagonal(&DVector::from_vec(q)),
                r: DMatrix::from_diagonal(&DVector::from_vec(r)),
            },
        };
        let h = &self.horizon;
        let mut sc = Scenario::new(model, setpoint, x0, cost, h.dt, h.steps, h.duration);
        let s = &self.solver;
        sc.solver = SolverSettings {
            max_iter: s.max_iter,
            tol: s.tol,
            restarts: s.restarts,
            seed: s.seed,
            substeps: s.substeps,
            warm_start: s.warm_start,
            memory: s.memory,
            ..SolverSettings::default()
        };
        sc.seed = s.seed;
        sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sc)
    }
}

fn vector(what: &str, v: &[f64], n: usize) -> Result<DVector<f64>, CliError> {
    if v.len() != n {
        return Err(CliError::Config(format!("{what} has {} entries, the vehicle has {n} states", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn weights(what: &str, v: &Option<Vec<f64>>, n: usize) -> Result<Vec<f64>, CliError> {
    match v {
        None => Ok(vec![1.0; n]),
        Some(w) if w.len() == n => Ok(w.clone()),
        Some(w) => Err(CliError::Config(format!("{what} has {} entries, expected {n}", w.len()))),
    }
}
