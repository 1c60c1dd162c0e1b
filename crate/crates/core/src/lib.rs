//! Policy control barrier functions from disturbed rollouts.
//!
//! The value of a state is the worst future constraint violation seen while
//! rolling a fixed policy out over a finite horizon, maximized over sampled
//! disturbance trajectories. That value function is a control barrier
//! function candidate; its zero sublevel set approximates a robust controlled
//! invariant set, and its gradient feeds a box-constrained CBF-QP safety
//! filter that minimally corrects a nominal controller.
//!
//! Modules:
//! - [`systems`]: disturbed control-affine models (double integrator,
//!   segway), constraints, policies.
//! - [`rollout`]: seeded disturbance sampling, fixed-step RK4 integration,
//!   forward sensitivity propagation.
//! - [`spline`]: closed-form maximization of the sampled constraint signal
//!   with envelope weights for the gradient.
//! - [`value`]: the sampled robust value function and its exact gradient.
//! - [`filter`]: the CBF-QP projection filter and an HOCBF baseline.
//! - [`lab`]: experiment harness (grid sweeps, closed-loop simulation,
//!   gradient-error study, CSV/JSON emission).

pub mod error;
pub mod fd;
pub mod filter;
pub mod lab;
pub mod rollout;
pub mod spline;
pub mod systems;
pub mod value;

pub use error::{Error, Result};
