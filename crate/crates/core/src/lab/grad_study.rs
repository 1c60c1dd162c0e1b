//! The gradient-error study on the braking double integrator.
//!
//! Decelerating from `[0, v0]` at full braking, the worst future position is
//! `v0²/2` at time `v0`, so against the one-sided bound `p <= 1` the exact
//! value gradient is `[1, v0]`. The discrete maximum pins its argmax to an
//! integer step `τ`, giving `∂V/∂v0 = τ·Δt` — wrong by up to `Δt/2` and
//! discontinuous in `v0`. The spline maximum restores a continuous, nearly
//! exact gradient. This study tabulates both against the analytic reference
//! over a sweep of `v0` for each requested step size.

use nalgebra::DVector;

use crate::error::Result;
use crate::rollout::{rollout, DisturbanceTrajectory};
use crate::spline::{naive_max, Boundary, SplineFit};
use crate::systems::{DoubleIntegrator, StdPolicy, System};

#[derive(Debug, Clone, PartialEq)]
pub struct GradStudyRow {
    pub dt: f64,
    pub v0: f64,
    /// Exact ∂V/∂v0 for the braking parabola.
    pub analytic: f64,
    /// ∂V/∂v0 through the discrete maximum.
    pub naive: f64,
    /// ∂V/∂v0 through the spline maximum.
    pub spline: f64,
    pub naive_err: f64,
    pub spline_err: f64,
}

/// Sweep `v0` over `[0.5, 2.0]` (`v0_count` points) for each step size and
/// tabulate both gradient estimates against the analytic `v0`.
pub fn gradient_error_study(
    dt_list: &[f64],
    v0_count: usize,
    boundary: Boundary,
) -> Result<Vec<GradStudyRow>> {
    gradient_error_study_over(dt_list, 0.5, 2.0, v0_count, boundary)
}

pub fn gradient_error_study_over(
    dt_list: &[f64],
    v0_lo: f64,
    v0_hi: f64,
    v0_count: usize,
    boundary: Boundary,
) -> Result<Vec<GradStudyRow>> {
    if dt_list.is_empty() || dt_list.iter().any(|dt| !dt.is_finite() || *dt <= 0.0) {
        return Err(crate::error::Error::InvalidParameter(
            "dt_list must be nonempty and positive".into(),
        ));
    }
    let system = DoubleIntegrator::with_options([1.0, 1.0], 1.0, 1.0, true)?;
    let policy = StdPolicy::constant(DVector::from_row_slice(&[-1.0]), 2);
    let mut rows = Vec::with_capacity(dt_list.len() * v0_count);
    for &dt in dt_list {
        // Enough knots that the parabola vertex stays interior for every v0.
        let steps = ((v0_hi + 0.2) / dt).ceil() as usize + 1;
        let dist = DisturbanceTrajectory::constant(DVector::from_row_slice(&[1.0]), steps);
        for k in 0..v0_count {
            let v0 = v0_lo + (v0_hi - v0_lo) * k as f64 / (v0_count - 1) as f64;
            let x0 = DVector::from_row_slice(&[0.0, v0]);
            let res = rollout(&system, &policy, &x0, &dist, dt, steps, true)?;

            let grad_of = |weights: &[(usize, f64)]| -> DVector<f64> {
                let mut grad = DVector::zeros(2);
                for &(j, w) in weights {
                    let hg = system.constraint_gradient(&res.states[j]);
                    grad.gemv_tr(w, &res.sensitivities[j], &hg, 1.0);
                }
                grad
            };

            let (_, argmax) = naive_max(&res.h_values)?;
            let naive = grad_of(&[(argmax, 1.0)])[1];

            let fit = SplineFit::new(&res.h_values, dt, boundary)?;
            let (_, _, loc) = fit.maximum();
            let weights = fit.weights(loc);
            let spline_weights: Vec<(usize, f64)> = weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(j, w)| (j, *w))
                .collect();
            let spline = grad_of(&spline_weights)[1];

            rows.push(GradStudyRow {
                dt,
                v0,
                analytic: v0,
                naive,
                spline,
                naive_err: (naive - v0).abs(),
                spline_err: (spline - v0).abs(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_reference_is_v0() {
        let rows = gradient_error_study(&[0.1], 16, Boundary::default()).unwrap();
        let at_one = rows
            .iter()
            .min_by(|a, b| {
                (a.v0 - 1.0)
                    .abs()
                    .partial_cmp(&(b.v0 - 1.0).abs())
                    .unwrap()
            })
            .unwrap();
        assert!((at_one.analytic - at_one.v0).abs() < 1e-15);
        assert!((at_one.analytic - 1.0).abs() < 0.06);
    }

    #[test]
    fn naive_gradient_is_step_quantized() {
        // τ·Δt with integer τ: every naive gradient sits on the step grid.
        for row in gradient_error_study(&[0.1], 41, Boundary::default()).unwrap() {
            let steps = row.naive / row.dt;
            assert!(
                (steps - steps.round()).abs() < 1e-9,
                "naive gradient {} is not a multiple of dt",
                row.naive
            );
        }
    }

    #[test]
    fn spline_gradient_beats_naive_everywhere_it_matters() {
        let rows = gradient_error_study(&[0.05, 0.1, 0.2], 61, Boundary::default()).unwrap();
        for dt in [0.05, 0.1, 0.2] {
            let sub: Vec<&GradStudyRow> = rows.iter().filter(|r| r.dt == dt).collect();
            let max_naive = sub.iter().map(|r| r.naive_err).fold(f64::MIN, f64::max);
            let max_spline = sub.iter().map(|r| r.spline_err).fold(f64::MIN, f64::max);
            assert!(
                max_naive >= 0.25 * dt,
                "naive error too small at dt={dt}: {max_naive}"
            );
            assert!(
                max_spline <= 1e-3,
                "spline error too large at dt={dt}: {max_spline}"
            );
        }
    }
}
