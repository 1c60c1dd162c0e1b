//! The CBF-QP safety filter: project the nominal control onto the half-space
//! `∇B·(f + g u) ≤ -α(B)` subject to the control box, exactly.
//!
//! For a single linear constraint plus box bounds the KKT system collapses to
//! a one-parameter path `u(λ) = clip(u_nom - λ a)` whose constraint value is
//! nonincreasing and piecewise-linear in λ, so the minimal multiplier is
//! found by exact breakpoint search; no iterative QP solver is involved and
//! the result is exact to rounding. When no multiplier restores feasibility
//! the filter returns the least-violating box point instead of failing, and
//! surfaces that through its status.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::systems::{Bounds, DoubleIntegrator, Policy, System};
use crate::value::{evaluate, ValueConfig, ValueEstimate};

/// Linear class-κ function `α(s) = coefficient · s` with positive slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaFn {
    coefficient: f64,
}

impl AlphaFn {
    pub fn linear(coefficient: f64) -> Result<Self> {
        if !coefficient.is_finite() || coefficient <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha coefficient must be positive, got {coefficient}"
            )));
        }
        Ok(Self { coefficient })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coefficient * s
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

/// Which disturbance enters `f`, `g` when the QP constraint is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Box midpoint; robustness lives entirely in the value function.
    NominalD,
    /// Evaluate the constraint at every disturbance-box vertex and enforce
    /// the one most violated at the clipped nominal control.
    WorstVertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStatus {
    NominalPass,
    ConstraintActive,
    InfeasibleFallback,
}

impl FilterStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterStatus::NominalPass => "nominal_pass",
            FilterStatus::ConstraintActive => "constraint_active",
            FilterStatus::InfeasibleFallback => "infeasible_fallback",
        }
    }
}

/// The filtered control, how the QP resolved, and the constraint value at
/// the returned point (nonpositive unless infeasible).
#[derive(Debug, Clone)]
pub struct FilterDecision {
    pub u: DVector<f64>,
    pub status: FilterStatus,
    pub slack: f64,
}

/// Exact solution of `min ‖u - u_nom‖²  s.t.  a·u + b ≤ 0,  u ∈ box`.
///
/// Walks the breakpoints of `λ ↦ a·clip(u_nom - λ a) + b`; between
/// breakpoints the map is linear, so the smallest feasible multiplier is
/// recovered by interpolation. Falls back to the box point minimizing `a·u`
/// when the constraint cannot be met.
pub fn project_to_halfspace_box(
    u_nom: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
    bounds: &Bounds,
) -> FilterDecision {
    let u0 = bounds.clip(u_nom);
    let phi0 = a.dot(&u0) + b;
    if phi0 <= 0.0 {
        return FilterDecision {
            u: u0,
            status: FilterStatus::NominalPass,
            slack: phi0,
        };
    }
    if a.iter().all(|ai| *ai == 0.0) {
        // Gradient blind to the control; nothing any u can do.
        return FilterDecision {
            u: u0,
            status: FilterStatus::InfeasibleFallback,
            slack: phi0,
        };
    }

    let u_of = |lambda: f64| -> DVector<f64> {
        let mut u = u_nom - a * lambda;
        bounds.clip_in_place(&mut u);
        u
    };
    let phi_of = |lambda: f64| -> f64 { a.dot(&u_of(lambda)) + b };

    // Each coordinate contributes up to two kinks: where it enters the box
    // interior and where it saturates at the bound it moves toward.
    let mut breakpoints: Vec<f64> = Vec::with_capacity(2 * a.len());
    for i in 0..a.len() {
        if a[i] == 0.0 {
            continue;
        }
        let (near, far) = if a[i] > 0.0 {
            (bounds.hi()[i], bounds.lo()[i])
        } else {
            (bounds.lo()[i], bounds.hi()[i])
        };
        for bound in [near, far] {
            let lambda = (u_nom[i] - bound) / a[i];
            if lambda > 0.0 {
                breakpoints.push(lambda);
            }
        }
    }
    breakpoints.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breakpoints.dedup();

    let mut lam_lo = 0.0;
    let mut phi_lo = phi0;
    for &lam in &breakpoints {
        let phi = phi_of(lam);
        if phi <= 0.0 {
            let lam_star = lam_lo + (lam - lam_lo) * phi_lo / (phi_lo - phi);
            let u = u_of(lam_star);
            let slack = a.dot(&u) + b;
            return FilterDecision {
                u,
                status: FilterStatus::ConstraintActive,
                slack,
            };
        }
        lam_lo = lam;
        phi_lo = phi;
    }
    // Past the last breakpoint every moving coordinate is saturated, so the
    // constraint value is flat; phi_lo > 0 means infeasible.
    FilterDecision {
        u: u_of(lam_lo + 1.0),
        status: FilterStatus::InfeasibleFallback,
        slack: phi_lo,
    }
}

/// Assemble and solve the CBF-QP at state `x` given the barrier value and
/// gradient: `min ‖u - u_nom‖²  s.t.  ∇B·(f(x,d̂) + g(x,d̂)u) + α(B) ≤ 0`
/// over the control box.
pub fn cbf_qp(
    system: &dyn System,
    b_value: f64,
    b_gradient: &DVector<f64>,
    x: &DVector<f64>,
    u_nom: &DVector<f64>,
    alpha: &AlphaFn,
    mode: FilterMode,
) -> Result<FilterDecision> {
    if !b_gradient.iter().all(|v| v.is_finite()) || !u_nom.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(
            "barrier gradient and nominal control must be finite".into(),
        ));
    }
    let constraint_at = |d: &DVector<f64>| -> (DVector<f64>, f64) {
        let f = system.drift(x, d);
        let g = system.input_map(x, d);
        let a = g.transpose() * b_gradient;
        let b = b_gradient.dot(&f) + alpha.eval(b_value);
        (a, b)
    };
    let dbox = system.disturbance_box();
    let (a, b) = match mode {
        FilterMode::NominalD => constraint_at(&dbox.midpoint()),
        FilterMode::WorstVertex => {
            // Rank vertices by constraint violation at the clipped nominal.
            // When that ties (e.g. zero nominal on control-independent
            // drift), re-rank at the nominal-d solution, which separates
            // vertices by how much control authority they leave.
            let u0 = system.control_box().clip(u_nom);
            let vertices: Vec<(DVector<f64>, f64)> = (0..dbox.vertex_count())
                .map(|mask| constraint_at(&dbox.vertex(mask)))
                .collect();
            let violations: Vec<f64> = vertices.iter().map(|(av, bv)| av.dot(&u0) + bv).collect();
            let top = violations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..vertices.len())
                .filter(|&i| violations[i] >= top - 1e-12)
                .collect();
            let pick = if tied.len() == 1 {
                tied[0]
            } else {
                let (an, bn) = constraint_at(&dbox.midpoint());
                let u_ref = project_to_halfspace_box(u_nom, &an, bn, system.control_box()).u;
                *tied
                    .iter()
                    .max_by(|&&i, &&j| {
                        let vi = vertices[i].0.dot(&u_ref) + vertices[i].1;
                        let vj = vertices[j].0.dot(&u_ref) + vertices[j].1;
                        vi.partial_cmp(&vj).unwrap()
                    })
                    .expect("nonempty tie set")
            };
            vertices.into_iter().nth(pick).expect("vertex index valid")
        }
    };
    Ok(project_to_halfspace_box(u_nom, &a, b, system.control_box()))
}

/// Higher-order CBF baseline for the double integrator: differentiate each
/// position face twice so the control appears, then enforce
/// `ψ̇₁ + α₂ψ₁ ≤ 0` with `ψ₁ = ḣ + α₁h`. Input bounds are ignored when the
/// candidate is constructed, which is exactly the weakness this baseline
/// demonstrates.
pub fn hocbf_di(
    system: &DoubleIntegrator,
    x: &DVector<f64>,
    u_nom: &DVector<f64>,
    alpha1: &AlphaFn,
    alpha2: &AlphaFn,
) -> Result<FilterDecision> {
    let bounds = system.control_box().clone();
    let m_hat = system.disturbance_box().midpoint()[0];
    let bound = {
        // position bound recovered from the constraint itself
        let probe = DVector::from_row_slice(&[0.0, 0.0]);
        -system.constraint(&probe)
    };
    let (p, v) = (x[0], x[1]);
    let a1 = alpha1.coefficient();
    let a2 = alpha2.coefficient();
    // Face s·p - bound with s = ±1 gives the linear-in-u constraint
    //   s·u/m̂ + (α1+α2)·s·v + α1α2(s·p - bound) ≤ 0.
    let face = |s: f64| -> (DVector<f64>, f64) {
        (
            DVector::from_row_slice(&[s / m_hat]),
            (a1 + a2) * s * v + a1 * a2 * (s * p - bound),
        )
    };
    let (a_pos, b_pos) = face(1.0);
    let (a_neg, b_neg) = face(-1.0);
    let u0 = bounds.clip(u_nom);
    let viol_pos = a_pos.dot(&u0) + b_pos;
    let viol_neg = a_neg.dot(&u0) + b_neg;
    let (first, second) = if viol_pos >= viol_neg {
        ((a_pos.clone(), b_pos), (a_neg.clone(), b_neg))
    } else {
        ((a_neg.clone(), b_neg), (a_pos.clone(), b_pos))
    };

    let mut dec = project_to_halfspace_box(u_nom, &first.0, first.1, &bounds);
    let second_val = second.0.dot(&dec.u) + second.1;
    if second_val <= 1e-9 && dec.status != FilterStatus::InfeasibleFallback {
        dec.slack = dec.slack.max(second_val);
        return Ok(dec);
    }
    // Re-project onto the second face and re-check the first.
    let dec2 = project_to_halfspace_box(&dec.u, &second.0, second.1, &bounds);
    let first_val = first.0.dot(&dec2.u) + first.1;
    if first_val <= 1e-9 && dec2.status != FilterStatus::InfeasibleFallback {
        return Ok(FilterDecision {
            slack: (second.0.dot(&dec2.u) + second.1).max(first_val),
            u: dec2.u,
            status: FilterStatus::ConstraintActive,
        });
    }
    // Both faces cannot hold inside the box: least-violating control.
    let candidates = [bounds.lo().clone(), bounds.hi().clone(), bounds.clip(u_nom)];
    let worst = |u: &DVector<f64>| -> f64 { (a_pos.dot(u) + b_pos).max(a_neg.dot(u) + b_neg) };
    let u = candidates
        .into_iter()
        .min_by(|ua, ub| worst(ua).partial_cmp(&worst(ub)).unwrap())
        .unwrap();
    let slack = worst(&u);
    Ok(FilterDecision {
        u,
        status: FilterStatus::InfeasibleFallback,
        slack,
    })
}

/// One control period of the full safety filter: estimate the value and its
/// gradient at `x`, then project the nominal policy's control through the
/// CBF-QP.
pub fn step_filtered(
    system: &dyn System,
    nominal_policy: &dyn Policy,
    rollout_policy: &dyn Policy,
    config: &ValueConfig,
    alpha: &AlphaFn,
    mode: FilterMode,
    x: &DVector<f64>,
) -> Result<(FilterDecision, ValueEstimate)> {
    let estimate = evaluate(system, rollout_policy, config, x)?;
    let u_nom = nominal_policy.act(x);
    let decision = cbf_qp(
        system,
        estimate.value,
        &estimate.gradient,
        x,
        &u_nom,
        alpha,
        mode,
    )?;
    Ok((decision, estimate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::DisturbanceTrajectory;
    use crate::systems::StdPolicy;
    use nalgebra::DVector;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    #[test]
    fn one_dimensional_projection() {
        let bounds = Bounds::scalar(-1.0, 1.0).unwrap();
        let dec = project_to_halfspace_box(&dv(&[0.0]), &dv(&[1.0]), 0.5, &bounds);
        assert_eq!(dec.status, FilterStatus::ConstraintActive);
        assert!((dec.u[0] + 0.5).abs() <= 1e-12);
        assert!(dec.slack.abs() <= 1e-12);
    }

    #[test]
    fn inactive_constraint_passes_nominal() {
        let bounds = Bounds::scalar(-1.0, 1.0).unwrap();
        let dec = project_to_halfspace_box(&dv(&[0.3]), &dv(&[1.0]), -2.0, &bounds);
        assert_eq!(dec.status, FilterStatus::NominalPass);
        assert_eq!(dec.u, dv(&[0.3]));
    }

    #[test]
    fn zero_gradient_with_violation_falls_back() {
        let bounds = Bounds::scalar(-1.0, 1.0).unwrap();
        let dec = project_to_halfspace_box(&dv(&[0.3]), &dv(&[0.0]), 0.7, &bounds);
        assert_eq!(dec.status, FilterStatus::InfeasibleFallback);
        assert_eq!(dec.u, dv(&[0.3]));
        assert_eq!(dec.slack, 0.7);
    }

    #[test]
    fn infeasible_returns_least_violating_corner() {
        let bounds = Bounds::scalar(-1.0, 1.0).unwrap();
        let dec = project_to_halfspace_box(&dv(&[0.0]), &dv(&[1.0]), 5.0, &bounds);
        assert_eq!(dec.status, FilterStatus::InfeasibleFallback);
        assert_eq!(dec.u, dv(&[-1.0]));
        assert!((dec.slack - 4.0).abs() <= 1e-12);
    }

    /// Dense grid oracle: best feasible grid point of the same QP.
    fn grid_oracle(
        u_nom: &DVector<f64>,
        a: &DVector<f64>,
        b: f64,
        bounds: &Bounds,
        per_dim: usize,
    ) -> Option<(DVector<f64>, f64)> {
        let m = u_nom.len();
        let mut best: Option<(DVector<f64>, f64)> = None;
        let total = per_dim.pow(m as u32);
        for idx in 0..total {
            let mut rem = idx;
            let u = DVector::from_fn(m, |i, _| {
                let j = rem % per_dim;
                rem /= per_dim;
                let _ = i;
                bounds.lo()[i] + (bounds.hi()[i] - bounds.lo()[i]) * j as f64 / (per_dim - 1) as f64
            });
            if a.dot(&u) + b <= 0.0 {
                let cost = (&u - u_nom).norm_squared();
                if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                    best = Some((u, cost));
                }
            }
        }
        best
    }

    #[test]
    fn projection_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..60 {
            let m = rng.random_range(1..=2usize);
            let bounds = Bounds::new(
                DVector::from_fn(m, |_, _| rng.random_range(-2.0..-0.2)),
                DVector::from_fn(m, |_, _| rng.random_range(0.2..2.0)),
            )
            .unwrap();
            let u_nom = DVector::from_fn(m, |_, _| rng.random_range(-2.5..2.5));
            let a = DVector::from_fn(m, |_, _| rng.random_range(-1.5..1.5));
            // Anchor feasibility at a random interior point with margin, so
            // the oracle grid always contains feasible points.
            let u_feas =
                DVector::from_fn(m, |i, _| rng.random_range(bounds.lo()[i]..=bounds.hi()[i]));
            let slackness = rng.random_range(0.05..0.5);
            let b = -a.dot(&u_feas) - slackness;
            let dec = project_to_halfspace_box(&u_nom, &a, b, &bounds);
            assert!(a.dot(&dec.u) + b <= 1e-9, "infeasible return");
            assert!(bounds.contains(&dec.u, 1e-12));
            let per_dim = 301;
            let (u_grid, grid_cost) = grid_oracle(&u_nom, &a, b, &bounds, per_dim).unwrap();
            let cost = (&dec.u - u_nom).norm_squared();
            assert!(
                cost <= grid_cost + 1e-9,
                "solver worse than grid: {} vs {} at {u_grid}",
                cost,
                grid_cost
            );
        }
    }

    #[test]
    fn kkt_residual_is_tight_when_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut active_seen = 0;
        for _ in 0..400 {
            let m = rng.random_range(1..=3usize);
            let bounds = Bounds::new(
                DVector::from_fn(m, |_, _| rng.random_range(-1.5..-0.1)),
                DVector::from_fn(m, |_, _| rng.random_range(0.1..1.5)),
            )
            .unwrap();
            let u_nom = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let a = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let b = rng.random_range(-1.0..1.0);
            let dec = project_to_halfspace_box(&u_nom, &a, b, &bounds);
            if dec.status == FilterStatus::ConstraintActive {
                active_seen += 1;
                assert!(dec.slack.abs() <= 1e-9, "active but slack = {}", dec.slack);
            }
        }
        assert!(active_seen > 50, "too few active cases: {active_seen}");
    }

    #[test]
    fn cbf_qp_passes_nominal_deep_inside() {
        let sys = DoubleIntegrator::new([1.0, 1.0], 1.0).unwrap();
        let alpha = AlphaFn::linear(1.0).unwrap();
        let dec = cbf_qp(
            &sys,
            -0.9,
            &dv(&[1.0, 0.2]),
            &dv(&[0.0, 0.1]),
            &dv(&[0.2]),
            &alpha,
            FilterMode::NominalD,
        )
        .unwrap();
        assert_eq!(dec.status, FilterStatus::NominalPass);
        assert_eq!(dec.u, dv(&[0.2]));
    }

    #[test]
    fn worst_vertex_enforces_most_violated_vertex_constraint() {
        // On the DI the constraint at mass m reads u/m + v ≤ 0; at the
        // clipped nominal u = 1 the violation 1/m + 0.9 peaks at the small
        // vertex, so that is the constraint the filter must satisfy.
        let sys = DoubleIntegrator::new([0.5, 2.0], 1.0).unwrap();
        let alpha = AlphaFn::linear(1.0).unwrap();
        let grad = dv(&[1.0, 1.0]);
        let x = dv(&[0.6, 0.9]);
        let worst =
            cbf_qp(&sys, 0.0, &grad, &x, &dv(&[1.0]), &alpha, FilterMode::WorstVertex).unwrap();
        assert_eq!(worst.status, FilterStatus::ConstraintActive);
        assert!((worst.u[0] + 0.45).abs() <= 1e-12, "u = {}", worst.u[0]);
        assert!((worst.u[0] / 0.5 + 0.9).abs() <= 1e-9);

        // A degenerate disturbance box makes both modes identical.
        let point = DoubleIntegrator::new([1.0, 1.0], 1.0).unwrap();
        let a = cbf_qp(&point, 0.0, &grad, &x, &dv(&[1.0]), &alpha, FilterMode::NominalD).unwrap();
        let b =
            cbf_qp(&point, 0.0, &grad, &x, &dv(&[1.0]), &alpha, FilterMode::WorstVertex).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.status, b.status);
    }

    #[test]
    fn hocbf_rest_at_origin_passes() {
        let sys = DoubleIntegrator::new([1.0, 1.0], 1.0).unwrap();
        let a1 = AlphaFn::linear(1.0).unwrap();
        let dec = hocbf_di(&sys, &dv(&[0.0, 0.0]), &dv(&[0.0]), &a1, &a1).unwrap();
        assert_eq!(dec.status, FilterStatus::NominalPass);
        assert_eq!(dec.u, dv(&[0.0]));
    }

    #[test]
    fn hocbf_forces_braking_near_wall() {
        let sys = DoubleIntegrator::new([1.0, 1.0], 1.0).unwrap();
        let a1 = AlphaFn::linear(1.0).unwrap();
        // ψ terms by hand for face +: u + (1+1)·v + 1·(p-1) = u + 1.9 ≤ 0
        // at x = [0.9, 1.0], so u ≤ -1.9: box-infeasible, clamp to -1.
        let dec = hocbf_di(&sys, &dv(&[0.9, 1.0]), &dv(&[1.0]), &a1, &a1).unwrap();
        assert!(dec.u[0] < 1.0);
        assert_eq!(dec.u, dv(&[-1.0]));
        assert_eq!(dec.status, FilterStatus::InfeasibleFallback);
    }

    #[test]
    fn hocbf_ignores_input_bounds_and_fails_from_fast_states() {
        // From p = 0.99 at v = 1.5 even full braking overshoots the wall;
        // the HOCBF candidate never knew about the box, so the closed loop
        // leaves the safe set.
        let sys = DoubleIntegrator::new([1.0, 1.0], 1.0).unwrap();
        let a1 = AlphaFn::linear(1.0).unwrap();
        let nominal = StdPolicy::constant(dv(&[0.0]), 2);
        let dt = 0.1;
        let mut x = dv(&[0.99, 1.5]);
        let mut worst_h = f64::MIN;
        for _ in 0..50 {
            let dec = hocbf_di(&sys, &x, &nominal.act(&x), &a1, &a1).unwrap();
            let filt = StdPolicy::constant(dec.u.clone(), 2);
            let dist = DisturbanceTrajectory::constant(dv(&[1.0]), 1);
            let res = crate::rollout::rollout(&sys, &filt, &x, &dist, dt, 2, false).unwrap();
            x = res.states[1].clone();
            worst_h = worst_h.max(sys.constraint(&x));
        }
        assert!(worst_h > 0.0, "expected a violation, worst h = {worst_h}");
    }

    #[test]
    fn step_filtered_brakes_toward_wall() {
        let sys = DoubleIntegrator::new([1.0, 1.0], 1.0).unwrap();
        let rollout_pol = sys.braking_policy();
        let nominal = StdPolicy::constant(dv(&[1.0]), 2);
        let cfg = ValueConfig::new(5.0, 0.1, 1, 0.0, 0);
        let alpha = AlphaFn::linear(1.0).unwrap();
        let x = dv(&[0.5, 1.0]);
        let (dec, est) = step_filtered(
            &sys,
            &nominal,
            &rollout_pol,
            &cfg,
            &alpha,
            FilterMode::NominalD,
            &x,
        )
        .unwrap();
        assert!(est.value > -0.1, "close to the boundary, V = {}", est.value);
        assert!(dec.u[0] < 1.0, "filter must brake, got {}", dec.u[0]);
    }

    #[test]
    fn step_filtered_is_deterministic_and_passes_when_safe() {
        let sys = DoubleIntegrator::new([0.8, 1.2], 1.0).unwrap();
        let rollout_pol = sys.braking_policy();
        let nominal = StdPolicy::constant(dv(&[0.3]), 2);
        let cfg = ValueConfig::new(5.0, 0.1, 16, 0.5, 99);
        let alpha = AlphaFn::linear(5.0).unwrap();
        let x = dv(&[-0.5, 0.05]);
        let (dec1, est1) = step_filtered(
            &sys,
            &nominal,
            &rollout_pol,
            &cfg,
            &alpha,
            FilterMode::NominalD,
            &x,
        )
        .unwrap();
        let (dec2, est2) = step_filtered(
            &sys,
            &nominal,
            &rollout_pol,
            &cfg,
            &alpha,
            FilterMode::NominalD,
            &x,
        )
        .unwrap();
        assert_eq!(dec1.u, dec2.u);
        assert_eq!(est1.value, est2.value);
        assert_eq!(dec1.status, FilterStatus::NominalPass);
        assert_eq!(dec1.u, dv(&[0.3]));
    }
}
