//! Experiment configuration: a strict JSON schema (unknown keys are errors)
//! and the builders that turn it into live systems, policies and filter
//! settings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{AlphaFn, FilterMode};
use crate::spline::Boundary;
use crate::systems::{DoubleIntegrator, Policy, Segway, SegwayParams, StdPolicy, System};
use crate::value::ValueConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    /// Rollout policy the value function evaluates.
    pub policy: PolicySpec,
    /// Nominal policy the filter minimally corrects.
    pub nominal: PolicySpec,
    pub value: ValueSpec,
    pub filter: FilterSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Build the live experiment; `seed` overrides the config seed when set.
    pub fn build(&self, seed: Option<u64>) -> Result<Experiment> {
        let system = self.system.build()?;
        let rollout_policy = self.policy.build(&system)?;
        let nominal_policy = self.nominal.build(&system)?;
        let master_seed = seed.unwrap_or(self.value.seed);
        let value = ValueConfig {
            horizon: self.value.horizon,
            dt: self.value.dt,
            num_samples: self.value.num_samples,
            vertex_weight: self.value.vertex_weight,
            seed: master_seed,
            boundary: self.value.boundary.into(),
        };
        value.validate()?;
        let alpha = AlphaFn::linear(self.filter.alpha)?;
        let hocbf_alpha1 = AlphaFn::linear(self.filter.hocbf_alpha1)?;
        let hocbf_alpha2 = AlphaFn::linear(self.filter.hocbf_alpha2)?;
        if self.filter.method == FilterMethod::Hocbf
            && !matches!(system, BuiltSystem::DoubleIntegrator(_))
        {
            return Err(Error::Config(
                "hocbf filter is defined for the double integrator only".into(),
            ));
        }
        let control_dt = self.experiment.control_dt.unwrap_or(self.value.dt);
        if !control_dt.is_finite() || control_dt <= 0.0 {
            return Err(Error::Config(format!("bad control_dt {control_dt}")));
        }
        Ok(Experiment {
            system,
            rollout_policy,
            nominal_policy,
            value,
            alpha,
            mode: self.filter.mode.into(),
            method: self.filter.method,
            hocbf_alpha1,
            hocbf_alpha2,
            reseed_per_step: self.experiment.reseed_per_step,
            control_dt,
            master_seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    DoubleIntegrator {
        mass_range: [f64; 2],
        position_bound: f64,
        #[serde(default = "default_control_bound")]
        control_bound: f64,
        /// Keep only the `p <= bound` face (gradient-study form).
        #[serde(default)]
        one_sided: bool,
    },
    Segway {
        #[serde(default)]
        overrides: SegwayOverrides,
    },
}

fn default_control_bound() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegwayOverrides {
    pub frame_mass: Option<f64>,
    pub body_mass_range: Option<[f64; 2]>,
    pub com_length: Option<f64>,
    pub wheel_radius: Option<f64>,
    pub gravity: Option<f64>,
    pub torque_bound: Option<f64>,
    pub angle_limit: Option<f64>,
    pub position_limit: Option<f64>,
    pub angle_weight: Option<f64>,
    pub position_weight: Option<f64>,
}

impl SystemSpec {
    pub fn build(&self) -> Result<BuiltSystem> {
        match self {
            SystemSpec::DoubleIntegrator {
                mass_range,
                position_bound,
                control_bound,
                one_sided,
            } => Ok(BuiltSystem::DoubleIntegrator(
                DoubleIntegrator::with_options(
                    *mass_range,
                    *position_bound,
                    *control_bound,
                    *one_sided,
                )?,
            )),
            SystemSpec::Segway { overrides } => {
                let mut p = SegwayParams::default();
                let o = overrides;
                if let Some(v) = o.frame_mass {
                    p.frame_mass = v;
                }
                if let Some(v) = o.body_mass_range {
                    p.body_mass_range = v;
                }
                if let Some(v) = o.com_length {
                    p.com_length = v;
                }
                if let Some(v) = o.wheel_radius {
                    p.wheel_radius = v;
                }
                if let Some(v) = o.gravity {
                    p.gravity = v;
                }
                if let Some(v) = o.torque_bound {
                    p.torque_bound = v;
                }
                if let Some(v) = o.angle_limit {
                    p.angle_limit = v;
                }
                if let Some(v) = o.position_limit {
                    p.position_limit = v;
                }
                if let Some(v) = o.angle_weight {
                    p.angle_weight = v;
                }
                if let Some(v) = o.position_weight {
                    p.position_weight = v;
                }
                Ok(BuiltSystem::Segway(Segway::new(p)?))
            }
        }
    }
}

/// A constructed benchmark system. The concrete variant stays visible so
/// system-specific baselines (the HOCBF) can get at the double integrator.
#[derive(Debug, Clone)]
pub enum BuiltSystem {
    DoubleIntegrator(DoubleIntegrator),
    Segway(Segway),
}

impl BuiltSystem {
    pub fn as_dyn(&self) -> &dyn System {
        match self {
            BuiltSystem::DoubleIntegrator(s) => s,
            BuiltSystem::Segway(s) => s,
        }
    }

    pub fn as_double_integrator(&self) -> Option<&DoubleIntegrator> {
        match self {
            BuiltSystem::DoubleIntegrator(s) => Some(s),
            BuiltSystem::Segway(_) => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Fixed control vector.
    Constant { value: Vec<f64> },
    /// `clip(-K x)`; `gains` is the row-major K (control_dim x state_dim).
    SaturatingLinear { gains: Vec<Vec<f64>> },
    /// `u_max_i · sign((-K x)_i)` projected into the control box.
    BangBang { gains: Vec<Vec<f64>> },
    /// The double integrator's smooth full-braking default.
    Braking,
    /// The segway's stock stabilizing feedback.
    SegwayStabilizer,
}

impl PolicySpec {
    pub fn build(&self, system: &BuiltSystem) -> Result<StdPolicy> {
        let sys = system.as_dyn();
        let gains_matrix = |gains: &Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
            let rows = gains.len();
            if rows != sys.control_dim() {
                return Err(Error::DimensionMismatch {
                    what: "policy gain rows",
                    expected: sys.control_dim(),
                    got: rows,
                });
            }
            let cols = gains.first().map_or(0, |r| r.len());
            if cols != sys.state_dim() || gains.iter().any(|r| r.len() != cols) {
                return Err(Error::DimensionMismatch {
                    what: "policy gain columns",
                    expected: sys.state_dim(),
                    got: cols,
                });
            }
            Ok(DMatrix::from_fn(rows, cols, |i, j| gains[i][j]))
        };
        match self {
            PolicySpec::Constant { value } => {
                if value.len() != sys.control_dim() {
                    return Err(Error::DimensionMismatch {
                        what: "constant policy control",
                        expected: sys.control_dim(),
                        got: value.len(),
                    });
                }
                Ok(StdPolicy::constant(
                    DVector::from_row_slice(value),
                    sys.state_dim(),
                ))
            }
            PolicySpec::SaturatingLinear { gains } => {
                StdPolicy::saturating_linear(gains_matrix(gains)?, sys.control_box().clone())
            }
            PolicySpec::BangBang { gains } => {
                StdPolicy::bang_bang(gains_matrix(gains)?, sys.control_box().clone())
            }
            PolicySpec::Braking => match system {
                BuiltSystem::DoubleIntegrator(di) => Ok(di.braking_policy()),
                BuiltSystem::Segway(_) => Err(Error::Config(
                    "braking policy is a double-integrator default".into(),
                )),
            },
            PolicySpec::SegwayStabilizer => match system {
                BuiltSystem::Segway(s) => Ok(s.stabilizing_policy()),
                BuiltSystem::DoubleIntegrator(_) => Err(Error::Config(
                    "segway_stabilizer needs the segway system".into(),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSpec {
    pub horizon: f64,
    pub dt: f64,
    pub num_samples: usize,
    #[serde(default = "default_vertex_weight")]
    pub vertex_weight: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub boundary: BoundarySpec,
}

fn default_vertex_weight() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySpec {
    #[default]
    NotAKnot,
    Natural,
}

impl From<BoundarySpec> for Boundary {
    fn from(b: BoundarySpec) -> Self {
        match b {
            BoundarySpec::NotAKnot => Boundary::NotAKnot,
            BoundarySpec::Natural => Boundary::Natural,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub alpha: f64,
    #[serde(default)]
    pub mode: FilterModeSpec,
    #[serde(default)]
    pub method: FilterMethod,
    #[serde(default = "default_hocbf_alpha")]
    pub hocbf_alpha1: f64,
    #[serde(default = "default_hocbf_alpha")]
    pub hocbf_alpha2: f64,
}

fn default_hocbf_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FilterModeSpec {
    #[default]
    NominalD,
    WorstVertex,
}

impl From<FilterModeSpec> for FilterMode {
    fn from(m: FilterModeSpec) -> Self {
        match m {
            FilterModeSpec::NominalD => FilterMode::NominalD,
            FilterModeSpec::WorstVertex => FilterMode::WorstVertex,
        }
    }
}

/// Which barrier drives the filter in sweeps and simulations.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    #[default]
    Rpcbf,
    Pcbf,
    Hocbf,
    /// No filtering: the clipped nominal control is applied as-is.
    None,
}

/// One state dimension of a sweep grid: either swept over `[lo, hi]` with
/// `count` points (endpoints included) or pinned to a fixed value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GridDim {
    Swept { lo: f64, hi: f64, count: usize },
    Fixed { fixed: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    /// Per-state-dimension grid; exactly two dimensions must be swept.
    pub grid: Option<Vec<GridDim>>,
    /// Closed-loop evaluation horizon T̄ in seconds.
    pub eval_horizon: Option<f64>,
    /// Number of plant disturbance realizations N̄.
    pub eval_samples: Option<usize>,
    /// Step sizes for the gradient-error study.
    pub dt_list: Option<Vec<f64>>,
    /// Closed-loop duration for `simulate`.
    pub duration: Option<f64>,
    /// Initial state for `simulate`.
    pub x0: Option<Vec<f64>>,
    /// Control period; defaults to the value dt.
    pub control_dt: Option<f64>,
    /// Redraw the filter's disturbance samples each control step from a
    /// per-step seed stream (the default), or freeze one batch.
    #[serde(default = "default_true")]
    pub reseed_per_step: bool,
}

fn default_true() -> bool {
    true
}

/// A fully built experiment: system, policies, filter settings and seeds.
pub struct Experiment {
    pub system: BuiltSystem,
    pub rollout_policy: StdPolicy,
    pub nominal_policy: StdPolicy,
    pub value: ValueConfig,
    pub alpha: AlphaFn,
    pub mode: FilterMode,
    pub method: FilterMethod,
    pub hocbf_alpha1: AlphaFn,
    pub hocbf_alpha2: AlphaFn,
    pub reseed_per_step: bool,
    pub control_dt: f64,
    pub master_seed: u64,
}

impl Experiment {
    pub fn system_dyn(&self) -> &dyn System {
        self.system.as_dyn()
    }

    pub fn nominal_control(&self, x: &DVector<f64>) -> DVector<f64> {
        let sys = self.system.as_dyn();
        sys.control_box().clip(&self.nominal_policy.act(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "system": {"kind": "double_integrator", "mass_range": [0.8, 1.2], "position_bound": 1.0},
        "policy": {"kind": "braking"},
        "nominal": {"kind": "constant", "value": [0.0]},
        "value": {"horizon": 6.4, "dt": 0.1, "num_samples": 100},
        "filter": {"alpha": 1.0}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_json(BASE).unwrap();
        let exp = cfg.build(Some(7)).unwrap();
        assert_eq!(exp.master_seed, 7);
        assert_eq!(exp.value.num_samples, 100);
        assert_eq!(exp.system_dyn().state_dim(), 2);
        assert_eq!(exp.control_dt, 0.1);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = BASE.replace("\"alpha\": 1.0", "\"alpha\": 1.0, \"alhpa\": 2.0");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad_top = BASE.replace("\"filter\"", "\"filterz\"");
        assert!(ExperimentConfig::from_json(&bad_top).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::from_json(BASE).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg.to_json(), again.to_json());
    }

    #[test]
    fn policy_dimension_mismatch_is_caught() {
        let bad = BASE.replace(
            r#"{"kind": "constant", "value": [0.0]}"#,
            r#"{"kind": "constant", "value": [0.0, 1.0]}"#,
        );
        let cfg = ExperimentConfig::from_json(&bad).unwrap();
        assert!(cfg.build(None).is_err());
    }

    #[test]
    fn hocbf_rejected_on_segway() {
        let cfg = ExperimentConfig::from_json(
            r#"{
            "system": {"kind": "segway", "overrides": {}},
            "policy": {"kind": "segway_stabilizer"},
            "nominal": {"kind": "constant", "value": [4.0]},
            "value": {"horizon": 20.0, "dt": 0.1, "num_samples": 1},
            "filter": {"alpha": 1.0, "method": "hocbf"}
        }"#,
        )
        .unwrap();
        assert!(cfg.build(None).is_err());
    }

    #[test]
    fn grid_dims_parse_both_forms() {
        let spec: Vec<GridDim> = serde_json::from_str(
            r#"[{"lo": -1.0, "hi": 1.0, "count": 5}, {"fixed": 0.25}]"#,
        )
        .unwrap();
        assert_eq!(
            spec[0],
            GridDim::Swept {
                lo: -1.0,
                hi: 1.0,
                count: 5
            }
        );
        assert_eq!(spec[1], GridDim::Fixed { fixed: 0.25 });
    }
}
