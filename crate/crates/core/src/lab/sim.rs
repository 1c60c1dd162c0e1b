//! Closed-loop simulation: the filter runs once per control period while the
//! plant evolves under its own disturbance realization, sampled from a seed
//! stream disjoint from the filter's internal draws.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::rollout::{derive_seed, rollout, DisturbanceTrajectory};
use crate::systems::StdPolicy;

use super::config::Experiment;
use super::filter_step;

/// A recorded closed-loop run. All column vectors have equal length; `safe`
/// holds iff the recorded constraint samples never went positive and the run
/// was not truncated by a numerical blow-up.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls_nominal: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    pub statuses: Vec<&'static str>,
    pub h_values: Vec<f64>,
    pub safe: bool,
    /// Step at which the run was cut short, if the dynamics blew up.
    pub truncated: Option<usize>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_h(&self) -> f64 {
        self.h_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Run the configured filter in closed loop from `x0` for `duration`
/// seconds. The plant holds `plant.value(k)` over control period `k`; the
/// filter redraws its internal samples per step from `filter_seed` (or
/// freezes them when the experiment disables reseeding).
///
/// One row is recorded per control period plus one for the final state, so
/// the last recorded control is computed but never applied.
pub fn simulate(
    exp: &Experiment,
    x0: &DVector<f64>,
    duration: f64,
    plant: &DisturbanceTrajectory,
    filter_seed: u64,
) -> Result<TrajectoryRecord> {
    if !duration.is_finite() || duration <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let dt = exp.control_dt;
    let steps = (duration / dt).round().max(1.0) as usize;
    if plant.len() < steps {
        return Err(Error::TooFewSamples {
            need: steps,
            got: plant.len(),
        });
    }
    let sys = exp.system_dyn();

    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls_nominal: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        values: Vec::with_capacity(steps + 1),
        statuses: Vec::with_capacity(steps + 1),
        h_values: Vec::with_capacity(steps + 1),
        safe: false,
        truncated: None,
    };

    let mut x = x0.clone();
    for k in 0..=steps {
        let eval_seed = if exp.reseed_per_step {
            derive_seed(filter_seed, k as u64)
        } else {
            exp.value.seed
        };
        let outcome = match filter_step(exp, &x, eval_seed) {
            Ok(o) => o,
            Err(Error::NonFiniteState { .. }) => {
                rec.truncated = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        rec.times.push(k as f64 * dt);
        rec.states.push(x.clone());
        rec.controls_nominal.push(exp.nominal_control(&x));
        rec.h_values.push(sys.constraint(&x));
        rec.values.push(outcome.value);
        rec.statuses.push(outcome.status);
        rec.controls.push(outcome.u.clone());

        if k < steps {
            let held = StdPolicy::constant(outcome.u, sys.state_dim());
            let dist = DisturbanceTrajectory::constant(plant.value(k).clone(), 1);
            match rollout(sys, &held, &x, &dist, dt, 2, false) {
                Ok(res) => x = res.states[1].clone(),
                Err(Error::NonFiniteState { .. }) => {
                    rec.truncated = Some(k + 1);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }
    rec.safe = rec.truncated.is_none() && rec.max_h() <= 0.0;
    Ok(rec)
}
