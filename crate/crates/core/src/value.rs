//! The sampled robust value function: the worst constraint violation over a
//! finite horizon, maximized over sampled disturbance trajectories, together
//! with its gradient with respect to the initial state.
//!
//! The value is `max_i max_t S_i(t)` where `S_i` is the cubic interpolant of
//! the constraint samples of rollout `i`; only the winning sample contributes
//! to the gradient (a valid subgradient of the max, with lowest-index
//! tie-breaking). The gradient composes the spline's envelope weights with
//! the constraint gradient and the propagated state sensitivities, so it is
//! exact for the computed value rather than an autodiff of a surrogate.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::rollout::{rollout, sample_disturbances, DisturbanceTrajectory};
use crate::spline::{Boundary, SplineFit};
use crate::systems::{Policy, System};

/// Horizon, discretization and sampling choices for a value evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueConfig {
    /// Horizon T in seconds; must be an integer multiple of `dt`.
    pub horizon: f64,
    /// Integration and sampling step in seconds.
    pub dt: f64,
    /// Number of disturbance trajectories N.
    pub num_samples: usize,
    /// Probability that a disturbance step is drawn from the box vertices
    /// rather than uniformly over the box.
    pub vertex_weight: f64,
    /// Master seed for the disturbance streams.
    pub seed: u64,
    /// End conditions of the interpolating cubic.
    pub boundary: Boundary,
}

impl ValueConfig {
    pub fn new(horizon: f64, dt: f64, num_samples: usize, vertex_weight: f64, seed: u64) -> Self {
        Self {
            horizon,
            dt,
            num_samples,
            vertex_weight,
            seed,
            boundary: Boundary::default(),
        }
    }

    /// Number of recorded states `H`, with `T = H·dt` enforced up to a
    /// 1e-9 relative slack on the product (an ulp-strict check on the
    /// quotient would reject exact configurations like T=5, dt=0.1).
    pub fn steps(&self) -> Result<usize> {
        if !self.dt.is_finite() || self.dt <= 0.0 || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bad horizon/dt: {}/{}",
                self.horizon, self.dt
            )));
        }
        let h = (self.horizon / self.dt).round();
        if h < 2.0 {
            return Err(Error::InvalidParameter(format!(
                "horizon {} dt {} gives fewer than 2 samples",
                self.horizon, self.dt
            )));
        }
        if (self.horizon - h * self.dt).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(h as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.num_samples == 0 {
            return Err(Error::InvalidParameter("num_samples must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.vertex_weight) {
            return Err(Error::InvalidParameter(format!(
                "vertex_weight must lie in [0, 1], got {}",
                self.vertex_weight
            )));
        }
        Ok(())
    }
}

/// A value together with its gradient and the provenance of the maximum.
#[derive(Debug, Clone)]
pub struct ValueEstimate {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Index of the winning disturbance sample (0-based).
    pub argmax_sample: usize,
    /// Time of the winning spline maximum in `[0, (H-1)·dt]`.
    pub argmax_time: f64,
}

/// Evaluate the sampled robust value function and its gradient.
pub fn evaluate(
    system: &dyn System,
    policy: &dyn Policy,
    config: &ValueConfig,
    x0: &DVector<f64>,
) -> Result<ValueEstimate> {
    config.validate()?;
    let steps = config.steps()?;
    let trajectories = sample_disturbances(
        system,
        steps,
        config.num_samples,
        config.vertex_weight,
        config.seed,
    )?;
    evaluate_with_trajectories(system, policy, config, x0, &trajectories)
}

/// The undisturbed special case: one rollout under the nominal disturbance
/// (the box midpoint), same maximization and gradient machinery.
pub fn evaluate_pcbf(
    system: &dyn System,
    policy: &dyn Policy,
    config: &ValueConfig,
    x0: &DVector<f64>,
) -> Result<ValueEstimate> {
    config.validate()?;
    let steps = config.steps()?;
    let nominal = DisturbanceTrajectory::constant(system.disturbance_box().midpoint(), steps);
    evaluate_with_trajectories(system, policy, config, x0, &[nominal])
}

/// Shared core: roll out every trajectory, take the spline max per sample,
/// pick the winner (lowest index on ties), then re-roll only the winner with
/// sensitivities to assemble the gradient.
pub fn evaluate_with_trajectories(
    system: &dyn System,
    policy: &dyn Policy,
    config: &ValueConfig,
    x0: &DVector<f64>,
    trajectories: &[DisturbanceTrajectory],
) -> Result<ValueEstimate> {
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("x0 must be finite".into()));
    }
    let steps = config.steps()?;

    let mut best: Option<(usize, SplineFit, f64, f64, crate::spline::MaxLocation)> = None;
    for (i, traj) in trajectories.iter().enumerate() {
        let res =
            rollout(system, policy, x0, traj, config.dt, steps, false).map_err(|e| match e {
                Error::NonFiniteState { step, .. } => Error::NonFiniteState {
                    step,
                    sample: Some(i),
                },
                other => other,
            })?;
        let fit = SplineFit::new(&res.h_values, config.dt, config.boundary)?;
        let (value, time, loc) = fit.maximum();
        let better = match &best {
            None => true,
            Some((_, _, best_value, _, _)) => value > *best_value,
        };
        if better {
            best = Some((i, fit, value, time, loc));
        }
    }
    let (winner, fit, value, time, loc) = best.expect("at least one sample");

    let with_sens = rollout(
        system,
        policy,
        x0,
        &trajectories[winner],
        config.dt,
        steps,
        true,
    )
    .map_err(|e| match e {
        Error::NonFiniteState { step, .. } => Error::NonFiniteState {
            step,
            sample: Some(winner),
        },
        other => other,
    })?;

    let weights = fit.weights(loc);
    let n = system.state_dim();
    let mut gradient = DVector::zeros(n);
    let mut h_grad = DVector::zeros(n);
    for (j, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        system.constraint_gradient_into(&with_sens.states[j], &mut h_grad);
        gradient.gemv_tr(*w, &with_sens.sensitivities[j], &h_grad, 1.0);
    }

    Ok(ValueEstimate {
        value,
        gradient,
        argmax_sample: winner,
        argmax_time: time,
    })
}

/// Empirical check that the horizon is long enough: extend it by 50% (on the
/// same grid) and report how much the value moves. A large move flags a
/// too-short horizon, the failure mode behind overapproximated filter
/// boundaries.
pub fn horizon_sufficiency(
    system: &dyn System,
    policy: &dyn Policy,
    config: &ValueConfig,
    x0: &DVector<f64>,
    tolerance: f64,
) -> Result<(bool, f64)> {
    let base = evaluate(system, policy, config, x0)?;
    let steps = config.steps()?;
    let extended_steps = steps + steps.div_ceil(2);
    let extended = ValueConfig {
        horizon: extended_steps as f64 * config.dt,
        ..config.clone()
    };
    let ext = evaluate(system, policy, &extended, x0)?;
    let delta = ext.value - base.value;
    Ok((delta.abs() <= tolerance, delta))
}
