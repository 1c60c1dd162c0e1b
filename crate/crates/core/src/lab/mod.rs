//! Experiment harness: strict JSON configs, filter-boundary and safe-region
//! grid sweeps, closed-loop simulation under sampled plant disturbances, the
//! gradient-error study, and CSV/JSON emission.
//!
//! Every run is a pure function of (config, master seed). Seed streams for
//! the plant, the filter's internal samples and per-cell evaluations are
//! derived from the master seed with disjoint tags, so the plant never sees
//! the filter's own disturbance draws and parallel execution is
//! reproducible bit-for-bit.

pub mod config;
pub mod grad_study;
pub mod output;
pub mod sim;
pub mod sweep;

pub use config::{
    BuiltSystem, Experiment, ExperimentConfig, ExperimentSpec, FilterMethod, GridDim,
};
pub use grad_study::{gradient_error_study, GradStudyRow};
pub use output::RunManifest;
pub use sim::{simulate, TrajectoryRecord};
pub use sweep::{sweep_filter_boundary, sweep_safe_region, BoundarySweep, Grid, SafeRegionSweep};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::filter::{cbf_qp, hocbf_di};
use crate::rollout::derive_seed;
use crate::systems::{DoubleIntegrator, Policy, System};
use crate::value::{evaluate, evaluate_pcbf, ValueConfig};

// Disjoint seed-stream tags hung off the master seed.
const STREAM_PLANT: u64 = 1;
const STREAM_FILTER: u64 = 2;
const STREAM_CELL: u64 = 3;

/// Seed for the plant disturbances of one grid cell (or one simulate run).
pub fn plant_seed(master: u64, cell: u64) -> u64 {
    derive_seed(derive_seed(master, STREAM_PLANT), cell)
}

/// Base seed for the filter's internal draws along one closed-loop run.
pub fn filter_seed_base(master: u64, cell: u64, realization: u64) -> u64 {
    derive_seed(
        derive_seed(derive_seed(master, STREAM_FILTER), cell),
        realization,
    )
}

/// Seed for the one-shot value evaluation of a grid cell.
pub fn cell_seed(master: u64, cell: u64) -> u64 {
    derive_seed(derive_seed(master, STREAM_CELL), cell)
}

/// What one filtered control period produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u: DVector<f64>,
    pub status: &'static str,
    /// Barrier value at the state: the sampled value function for
    /// rpcbf/pcbf, the handcrafted candidate for hocbf, NaN when unfiltered.
    pub value: f64,
}

/// The HOCBF's candidate barrier on the double integrator:
/// `max_s (s·v + α₁(s·p - bound))` over the two position faces.
pub fn hocbf_candidate(system: &DoubleIntegrator, x: &DVector<f64>, alpha1: f64) -> f64 {
    let bound = -system.constraint(&DVector::from_row_slice(&[0.0, 0.0]));
    let (p, v) = (x[0], x[1]);
    (v + alpha1 * (p - bound)).max(-v + alpha1 * (-p - bound))
}

/// One control period under the configured filter method.
pub fn filter_step(exp: &Experiment, x: &DVector<f64>, eval_seed: u64) -> Result<StepOutcome> {
    let sys = exp.system_dyn();
    let u_nom = exp.nominal_policy.act(x);
    match exp.method {
        FilterMethod::Rpcbf => {
            let cfg = ValueConfig {
                seed: eval_seed,
                ..exp.value.clone()
            };
            let est = evaluate(sys, &exp.rollout_policy, &cfg, x)?;
            let dec = cbf_qp(sys, est.value, &est.gradient, x, &u_nom, &exp.alpha, exp.mode)?;
            Ok(StepOutcome {
                u: dec.u,
                status: dec.status.as_str(),
                value: est.value,
            })
        }
        FilterMethod::Pcbf => {
            let est = evaluate_pcbf(sys, &exp.rollout_policy, &exp.value, x)?;
            let dec = cbf_qp(sys, est.value, &est.gradient, x, &u_nom, &exp.alpha, exp.mode)?;
            Ok(StepOutcome {
                u: dec.u,
                status: dec.status.as_str(),
                value: est.value,
            })
        }
        FilterMethod::Hocbf => {
            let di = exp
                .system
                .as_double_integrator()
                .ok_or_else(|| Error::Config("hocbf needs the double integrator".into()))?;
            let dec = hocbf_di(di, x, &u_nom, &exp.hocbf_alpha1, &exp.hocbf_alpha2)?;
            Ok(StepOutcome {
                u: dec.u,
                status: dec.status.as_str(),
                value: hocbf_candidate(di, x, exp.hocbf_alpha1.coefficient()),
            })
        }
        FilterMethod::None => Ok(StepOutcome {
            u: sys.control_box().clip(&u_nom),
            status: "none",
            value: f64::NAN,
        }),
    }
}

/// The barrier value a boundary sweep plots for one state.
pub fn boundary_value(exp: &Experiment, x: &DVector<f64>, eval_seed: u64) -> Result<f64> {
    let sys = exp.system_dyn();
    match exp.method {
        FilterMethod::Rpcbf => {
            let cfg = ValueConfig {
                seed: eval_seed,
                ..exp.value.clone()
            };
            Ok(evaluate(sys, &exp.rollout_policy, &cfg, x)?.value)
        }
        FilterMethod::Pcbf => Ok(evaluate_pcbf(sys, &exp.rollout_policy, &exp.value, x)?.value),
        FilterMethod::Hocbf => {
            let di = exp
                .system
                .as_double_integrator()
                .ok_or_else(|| Error::Config("hocbf needs the double integrator".into()))?;
            Ok(hocbf_candidate(di, x, exp.hocbf_alpha1.coefficient()))
        }
        FilterMethod::None => Err(Error::Config(
            "filter method `none` has no boundary to sweep".into(),
        )),
    }
}
