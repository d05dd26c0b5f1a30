//! Scenario files: TOML experiment definitions turned into an OCP, a run
//! configuration and a list of initial states. Units are SI throughout.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::barrier::BarrierSpec;
use crate::density::DensityField;
use crate::dynamics::{builtin, Scheme};
use crate::error::{Error, Result};
use crate::geometry::Obstacle;
use crate::runtime::RunConfig;
use crate::solver::SolverConfig;
use crate::transcription::{CostWeights, Model, OcpProblem, Safety, SafetyMode};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 0.01;

/// Parameters accepted by [`Scenario::with_param`].
pub const SWEEP_PARAMS: [&str; 5] = ["sense_radius", "gamma", "alpha", "N", "dt"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: String,
    /// One initial state or a list of them.
    pub x0: InitialStates,
    pub target: Vec<f64>,
    pub duration: f64,
    pub dt: f64,
    pub horizon: usize,
    #[serde(default = "default_plant")]
    pub plant: Scheme,
    pub cost: CostWeights,
    pub safety: SafetySpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    /// Per-input `[lo, hi]`; the model's declared bounds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_bounds: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_max_failures")]
    pub max_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn default_plant() -> Scheme {
    Scheme::Rk4
}

fn default_max_failures() -> usize {
    RunConfig::default().max_failures
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialStates {
    One(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySpec {
    pub mode: SafetyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", deny_unknown_fields)]
pub enum ObstacleSpec {
    #[serde(rename = "circle2d")]
    Circle { center: [f64; 2], radius: f64, sense_radius: f64 },
    #[serde(rename = "sphere3d")]
    Sphere { center: [f64; 3], radius: f64, sense_radius: f64 },
    /// Axis along z.
    #[serde(rename = "cylinder3d")]
    Cylinder { center: [f64; 3], radius: f64, half_height: f64, sense_radius: f64 },
    /// `radius` is the tube radius; the ring lies in the xy plane.
    #[serde(rename = "torus3d")]
    Torus { center: [f64; 3], major_radius: f64, radius: f64, sense_radius: f64 },
}

impl ObstacleSpec {
    pub fn build(&self) -> Result<Obstacle<f64>> {
        match *self {
            Self::Circle { center, radius, sense_radius } => Obstacle::circle(center, radius, sense_radius),
            Self::Sphere { center, radius, sense_radius } => Obstacle::sphere(center, radius, sense_radius),
            Self::Cylinder { center, radius, half_height, sense_radius } => {
                Obstacle::cylinder(center, radius, half_height, sense_radius)
            }
            Self::Torus { center, major_radius, radius, sense_radius } => {
                Obstacle::torus(center, major_radius, radius, sense_radius)
            }
        }
    }

    pub fn sense_radius_mut(&mut self) -> &mut f64 {
        match self {
            Self::Circle { sense_radius, .. }
            | Self::Sphere { sense_radius, .. }
            | Self::Cylinder { sense_radius, .. }
            | Self::Torus { sense_radius, .. } => sense_radius,
        }
    }
}

fn scenario_err(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

impl Scenario {
    /// Parses and validates a TOML document. Parse errors carry the
    /// line/column diagnostics of the TOML reader.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| scenario_err(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Scenario(m) => scenario_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| scenario_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(scenario_err(format!("invalid scenario name '{}'", self.name)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(scenario_err("duration must be positive"));
        }
        if self.initial_states().is_empty() {
            return Err(scenario_err("x0 lists no initial state"));
        }
        let s = &self.safety;
        let check_pos = |v: Option<f64>, what: &str| match v {
            Some(a) if !(a > 0.0 && a.is_finite()) => Err(scenario_err(format!("{what} must be positive"))),
            _ => Ok(()),
        };
        check_pos(s.alpha, "alpha")?;
        check_pos(s.delta, "delta")?;
        if s.mode == SafetyMode::Cbf && s.gamma.is_none() {
            return Err(scenario_err("cbf mode requires gamma"));
        }
        if matches!(s.mode, SafetyMode::Cbf | SafetyMode::Cdf | SafetyMode::Euclidean) && self.obstacles.is_empty() {
            return Err(scenario_err(format!("{} mode requires at least one obstacle", s.mode.as_str())));
        }
        let ocp = self.build_ocp()?;
        for x0 in self.initial_states() {
            if x0.len() != ocp.model.state_dim() {
                return Err(scenario_err(format!(
                    "x0 has {} entries, model '{}' has {} states",
                    x0.len(),
                    self.model,
                    ocp.model.state_dim()
                )));
            }
        }
        self.solver.validate()
    }

    pub fn initial_states(&self) -> Vec<Vec<f64>> {
        match &self.x0 {
            InitialStates::One(x) => vec![x.clone()],
            InitialStates::Many(xs) => xs.clone(),
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        Ok(Arc::from(builtin::<f64>(&self.model)?))
    }

    pub fn build_obstacles(&self) -> Result<Vec<Obstacle<f64>>> {
        self.obstacles.iter().map(ObstacleSpec::build).collect()
    }

    pub fn build_safety(&self, model: &Model) -> Result<Safety> {
        let obstacles = self.build_obstacles()?;
        let s = &self.safety;
        Ok(match s.mode {
            SafetyMode::Cdf => {
                let field = DensityField::new(
                    obstacles,
                    s.alpha.unwrap_or(DEFAULT_ALPHA),
                    self.target.clone(),
                    s.delta.unwrap_or(DEFAULT_DELTA),
                )?;
                Safety::Cdf(field.with_v_dims(model.position_dim())?)
            }
            SafetyMode::Cbf => Safety::Cbf(BarrierSpec::new(obstacles, s.gamma.unwrap_or(f64::NAN))?),
            SafetyMode::Euclidean => Safety::Euclidean(obstacles),
            SafetyMode::None => Safety::None,
        })
    }

    pub fn build_ocp(&self) -> Result<OcpProblem> {
        let model = self.build_model()?;
        let safety = self.build_safety(&model)?;
        let mut ocp = OcpProblem::new(model, self.horizon, self.dt, self.cost.clone(), self.target.clone(), safety)?;
        if let Some(b) = &self.input_bounds {
            ocp.input_bounds = b.iter().map(|&[lo, hi]| (lo, hi)).collect();
        }
        if let Some(b) = &self.state_bounds {
            ocp.state_bounds = Some(b.iter().map(|&[lo, hi]| (lo, hi)).collect());
        }
        ocp.validate()?;
        Ok(ocp)
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig { duration: self.duration, plant: self.plant, solver: self.solver.clone(), max_failures: self.max_failures }
    }

    /// Copy with one tuning parameter replaced (see [`SWEEP_PARAMS`]).
    /// `sense_radius` is applied to every obstacle.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self> {
        let mut sc = self.clone();
        match param {
            "sense_radius" => sc.obstacles.iter_mut().for_each(|o| *o.sense_radius_mut() = value),
            "gamma" => sc.safety.gamma = Some(value),
            "alpha" => sc.safety.alpha = Some(value),
            "N" => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(scenario_err(format!("N must be a positive integer, got {value}")));
                }
                sc.horizon = value as usize;
            }
            "dt" => sc.dt = value,
            other => return Err(scenario_err(format!("unknown sweep parameter '{other}', expected one of {SWEEP_PARAMS:?}"))),
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Short tuning label used in output file names: the sensing radius of
    /// the first obstacle for cdf, γ for cbf.
    pub fn tuning_label(&self) -> String {
        match self.safety.mode {
            SafetyMode::Cdf => match self.obstacles.first() {
                Some(o) => format!("s{}", o.clone().sense_radius_mut()),
                None => "s".into(),
            },
            SafetyMode::Cbf => format!("g{}", self.safety.gamma.unwrap_or(f64::NAN)),
            SafetyMode::Euclidean | SafetyMode::None => "base".into(),
        }
    }

    /// `<scenario>_<mode>_<param>`, with `_<k>` appended for the k-th of
    /// several initial states.
    pub fn output_stem(&self, start: Option<usize>) -> String {
        let base = format!("{}_{}_{}", self.name, self.safety.mode.as_str(), self.tuning_label());
        match start {
            Some(k) => format!("{base}_{k}"),
            None => base,
        }
    }
}
