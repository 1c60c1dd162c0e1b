//! Disturbed control-affine systems `ẋ = f(x,d) + g(x,d)u` with box-bounded
//! controls and disturbances, their analytic Jacobians, state constraints
//! `h(x)` with subgradients, and rollout policies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Componentwise box `[lo, hi]` used for control and disturbance sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl Bounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for i in 0..lo.len() {
            if !lo[i].is_finite() || !hi[i].is_finite() || lo[i] > hi[i] {
                return Err(Error::InvalidParameter(format!(
                    "box bound {i}: [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn scalar(lo: f64, hi: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, lo), DVector::from_element(1, hi))
    }

    /// Symmetric box `[-b, b]` in every dimension.
    pub fn symmetric(b: &DVector<f64>) -> Result<Self> {
        Self::new(-b.clone(), b.clone())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn midpoint(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn clip(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.clip_in_place(&mut out);
        out
    }

    pub fn clip_in_place(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        (0..v.len()).all(|i| v[i] >= self.lo[i] - tol && v[i] <= self.hi[i] + tol)
    }

    pub fn vertex_count(&self) -> usize {
        1usize << self.dim()
    }

    /// Vertex selected by bitmask: bit i set picks `hi` in dimension i.
    pub fn vertex(&self, mask: usize) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            if mask >> i & 1 == 1 {
                self.hi[i]
            } else {
                self.lo[i]
            }
        })
    }
}

/// One face of a box state constraint: `scale * (sign * x[dim] - offset)`.
#[derive(Debug, Clone)]
struct Face {
    dim: usize,
    sign: f64,
    offset: f64,
    scale: f64,
}

/// `h(x) = max_i scale_i * (sign_i * x[dim_i] - offset_i)`.
///
/// The subgradient at a kink takes the first maximizing face (lowest index),
/// so `h` and its gradient are deterministic everywhere.
#[derive(Debug, Clone)]
pub struct FaceConstraint {
    faces: Vec<Face>,
}

impl FaceConstraint {
    fn new(faces: Vec<Face>) -> Self {
        assert!(!faces.is_empty());
        Self { faces }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.faces
            .iter()
            .map(|f| f.scale * (f.sign * x[f.dim] - f.offset))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gradient_into(&self, x: &DVector<f64>, grad: &mut DVector<f64>) {
        let mut best = f64::NEG_INFINITY;
        let mut best_face = &self.faces[0];
        for f in &self.faces {
            let v = f.scale * (f.sign * x[f.dim] - f.offset);
            if v > best {
                best = v;
                best_face = f;
            }
        }
        grad.fill(0.0);
        grad[best_face.dim] = best_face.scale * best_face.sign;
    }
}

/// A disturbed control-affine system with analytic state Jacobians and a
/// state constraint whose super-zero set is to be avoided.
///
/// All evaluation methods are pure; implementations are immutable after
/// construction and safe to share across threads.
pub trait System: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;

    fn control_box(&self) -> &Bounds;
    fn disturbance_box(&self) -> &Bounds;

    /// `f(x, d)`, written into `out` (length `state_dim`).
    fn drift_into(&self, x: &DVector<f64>, d: &DVector<f64>, out: &mut DVector<f64>);

    /// `g(x, d)`, written into `out` (`state_dim x control_dim`).
    fn input_map_into(&self, x: &DVector<f64>, d: &DVector<f64>, out: &mut DMatrix<f64>);

    /// `∂f/∂x` at fixed `d`, written into `out` (`state_dim x state_dim`).
    fn drift_jacobian_into(&self, x: &DVector<f64>, d: &DVector<f64>, out: &mut DMatrix<f64>);

    /// `∂(g(x,d)u)/∂x` at fixed `d`, `u` (`state_dim x state_dim`).
    fn input_map_jacobian_into(
        &self,
        x: &DVector<f64>,
        d: &DVector<f64>,
        u: &DVector<f64>,
        out: &mut DMatrix<f64>,
    );

    /// Constraint `h(x)`; the avoid set is `{x | h(x) > 0}`.
    fn constraint(&self, x: &DVector<f64>) -> f64;

    /// Subgradient of `h`, written into `out` (length `state_dim`).
    fn constraint_gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>);

    fn drift(&self, x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        self.drift_into(x, d, &mut out);
        out
    }

    fn input_map(&self, x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.state_dim(), self.control_dim());
        self.input_map_into(x, d, &mut out);
        out
    }

    fn drift_jacobian(&self, x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.state_dim(), self.state_dim());
        self.drift_jacobian_into(x, d, &mut out);
        out
    }

    fn input_map_jacobian(
        &self,
        x: &DVector<f64>,
        d: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.state_dim(), self.state_dim());
        self.input_map_jacobian_into(x, d, u, &mut out);
        out
    }

    fn constraint_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        self.constraint_gradient_into(x, &mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Double integrator with uncertain mass
// ---------------------------------------------------------------------------

/// Planar double integrator `ṗ = v`, `v̇ = u/m` where the unknown mass `m`
/// is the scalar disturbance. Safety asks for `|p| <= position_bound`
/// (or `p <= position_bound` in the one-sided variant).
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    control: Bounds,
    disturbance: Bounds,
    constraint: FaceConstraint,
}

impl DoubleIntegrator {
    pub fn new(mass_range: [f64; 2], position_bound: f64) -> Result<Self> {
        Self::with_options(mass_range, position_bound, 1.0, false)
    }

    /// `one_sided` keeps only the `p <= position_bound` face, which is the
    /// form used by the gradient-error study.
    pub fn with_options(
        mass_range: [f64; 2],
        position_bound: f64,
        control_bound: f64,
        one_sided: bool,
    ) -> Result<Self> {
        let [m_lo, m_hi] = mass_range;
        if m_lo <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mass lower bound must be positive, got {m_lo}"
            )));
        }
        if m_lo > m_hi {
            return Err(Error::InvalidParameter(format!(
                "mass range [{m_lo}, {m_hi}] is empty"
            )));
        }
        if position_bound <= 0.0 || control_bound <= 0.0 {
            return Err(Error::InvalidParameter(
                "position and control bounds must be positive".into(),
            ));
        }
        let mut faces = vec![Face {
            dim: 0,
            sign: 1.0,
            offset: position_bound,
            scale: 1.0,
        }];
        if !one_sided {
            faces.push(Face {
                dim: 0,
                sign: -1.0,
                offset: position_bound,
                scale: 1.0,
            });
        }
        Ok(Self {
            control: Bounds::scalar(-control_bound, control_bound)?,
            disturbance: Bounds::scalar(m_lo, m_hi)?,
            constraint: FaceConstraint::new(faces),
        })
    }

    /// High-gain clipped velocity feedback: full braking outside a narrow
    /// band around v = 0, linear inside it. Behaves like bang-bang braking
    /// but stays smooth at the stop, so fixed-step rollouts settle instead
    /// of chattering (the gain keeps |λ|·dt inside the RK4 stability region
    /// for every mass in the disturbance box).
    pub fn braking_policy(&self) -> StdPolicy {
        StdPolicy::SaturatingLinear {
            gain: DMatrix::from_row_slice(1, 2, &[0.0, 15.0]),
            bounds: self.control.clone(),
        }
    }
}

impl System for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn disturbance_dim(&self) -> usize {
        1
    }

    fn control_box(&self) -> &Bounds {
        &self.control
    }

    fn disturbance_box(&self) -> &Bounds {
        &self.disturbance
    }

    fn drift_into(&self, x: &DVector<f64>, _d: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = x[1];
        out[1] = 0.0;
    }

    fn input_map_into(&self, _x: &DVector<f64>, d: &DVector<f64>, out: &mut DMatrix<f64>) {
        out[(0, 0)] = 0.0;
        out[(1, 0)] = 1.0 / d[0];
    }

    fn drift_jacobian_into(&self, _x: &DVector<f64>, _d: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 1)] = 1.0;
    }

    fn input_map_jacobian_into(
        &self,
        _x: &DVector<f64>,
        _d: &DVector<f64>,
        _u: &DVector<f64>,
        out: &mut DMatrix<f64>,
    ) {
        out.fill(0.0);
    }

    fn constraint(&self, x: &DVector<f64>) -> f64 {
        self.constraint.value(x)
    }

    fn constraint_gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.constraint.gradient_into(x, out);
    }
}

// ---------------------------------------------------------------------------
// Segway (wheeled inverted pendulum)
// ---------------------------------------------------------------------------

/// Physical parameters of the segway model. The body is a point mass `m` at
/// distance `com_length` above the axle; `frame_mass` lumps wheels and chassis
/// translational inertia. The unknown body mass is the scalar disturbance.
///
/// State `[p, θ, v, θ̇]`, scalar wheel torque `τ`, dynamics in manipulator
/// form `M(θ)[v̇, θ̈]ᵀ = c(θ, θ̇) + [1/r, -1]ᵀ τ` with
/// `M = [[frame_mass + m, m·l·cosθ], [m·l·cosθ, m·l²]]` and
/// `c = [m·l·sinθ·θ̇², m·g·l·sinθ]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegwayParams {
    pub frame_mass: f64,
    pub body_mass_range: [f64; 2],
    pub com_length: f64,
    pub wheel_radius: f64,
    pub gravity: f64,
    pub torque_bound: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    /// Scale applied to the angle faces of `h` so both constraint groups are
    /// comparable; the position faces use `position_weight`.
    pub angle_weight: f64,
    pub position_weight: f64,
}

impl Default for SegwayParams {
    fn default() -> Self {
        Self {
            frame_mass: 1.0,
            body_mass_range: [1.0, 1.0],
            com_length: 1.0,
            wheel_radius: 0.25,
            gravity: 9.81,
            torque_bound: 4.0,
            angle_limit: 0.3 * std::f64::consts::PI,
            position_limit: 2.0,
            angle_weight: 1.0,
            position_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segway {
    params: SegwayParams,
    control: Bounds,
    disturbance: Bounds,
    constraint: FaceConstraint,
}

impl Segway {
    pub fn new(params: SegwayParams) -> Result<Self> {
        let p = &params;
        let positive = [
            ("frame_mass", p.frame_mass),
            ("body mass lower bound", p.body_mass_range[0]),
            ("com_length", p.com_length),
            ("wheel_radius", p.wheel_radius),
            ("gravity", p.gravity),
            ("torque_bound", p.torque_bound),
            ("angle_limit", p.angle_limit),
            ("position_limit", p.position_limit),
            ("angle_weight", p.angle_weight),
            ("position_weight", p.position_weight),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if p.body_mass_range[0] > p.body_mass_range[1] {
            return Err(Error::InvalidParameter(format!(
                "body mass range [{}, {}] is empty",
                p.body_mass_range[0], p.body_mass_range[1]
            )));
        }
        let constraint = FaceConstraint::new(vec![
            Face {
                dim: 1,
                sign: 1.0,
                offset: p.angle_limit,
                scale: p.angle_weight,
            },
            Face {
                dim: 1,
                sign: -1.0,
                offset: p.angle_limit,
                scale: p.angle_weight,
            },
            Face {
                dim: 0,
                sign: 1.0,
                offset: p.position_limit,
                scale: p.position_weight,
            },
            Face {
                dim: 0,
                sign: -1.0,
                offset: p.position_limit,
                scale: p.position_weight,
            },
        ]);
        let control = Bounds::scalar(-p.torque_bound, p.torque_bound)?;
        let disturbance = Bounds::scalar(p.body_mass_range[0], p.body_mass_range[1])?;
        Ok(Self {
            params,
            control,
            disturbance,
            constraint,
        })
    }

    pub fn params(&self) -> &SegwayParams {
        &self.params
    }

    /// Clipped linear feedback that balances the default parameterization;
    /// the gain (in the `u = clip(-K x)` convention) comes from an offline
    /// LQR solve of the upright linearization.
    pub fn stabilizing_policy(&self) -> StdPolicy {
        StdPolicy::SaturatingLinear {
            gain: DMatrix::from_row_slice(1, 4, &[-1.0, -12.6, -1.8, -3.7]),
            bounds: self.control.clone(),
        }
    }

    /// Mass matrix inverse at pitch angle `theta`, as flat `[a, b; b, c]`.
    fn mass_inverse(&self, theta: f64, m: f64) -> [f64; 3] {
        let p = &self.params;
        let l = p.com_length;
        let mt = p.frame_mass + m;
        let m12 = m * l * theta.cos();
        let m22 = m * l * l;
        let det = mt * m22 - m12 * m12;
        [m22 / det, -m12 / det, mt / det]
    }

    /// Bias term `c(θ, θ̇)` of the manipulator-form dynamics.
    fn bias(&self, theta: f64, omega: f64, m: f64) -> [f64; 2] {
        let p = &self.params;
        let l = p.com_length;
        [
            m * l * theta.sin() * omega * omega,
            m * p.gravity * l * theta.sin(),
        ]
    }

    /// Accelerations `[v̇, θ̈]` from the drift alone.
    fn drift_accel(&self, theta: f64, omega: f64, m: f64) -> [f64; 2] {
        let inv = self.mass_inverse(theta, m);
        let c = self.bias(theta, omega, m);
        [inv[0] * c[0] + inv[1] * c[1], inv[1] * c[0] + inv[2] * c[1]]
    }

    /// Acceleration direction of a unit torque, `M⁻¹ [1/r, -1]ᵀ`.
    fn control_accel(&self, theta: f64, m: f64) -> [f64; 2] {
        let inv = self.mass_inverse(theta, m);
        let inv_r = 1.0 / self.params.wheel_radius;
        [inv[0] * inv_r - inv[1], inv[1] * inv_r - inv[2]]
    }

    /// `∂M/∂θ`, as flat `[a, b; b, c]`.
    fn mass_dtheta(&self, theta: f64, m: f64) -> [f64; 3] {
        let entry = -m * self.params.com_length * theta.sin();
        [0.0, entry, 0.0]
    }
}

fn sym2_mul(a: &[f64; 3], v: &[f64; 2]) -> [f64; 2] {
    [a[0] * v[0] + a[1] * v[1], a[1] * v[0] + a[2] * v[1]]
}

impl System for Segway {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn disturbance_dim(&self) -> usize {
        1
    }

    fn control_box(&self) -> &Bounds {
        &self.control
    }

    fn disturbance_box(&self) -> &Bounds {
        &self.disturbance
    }

    fn drift_into(&self, x: &DVector<f64>, d: &DVector<f64>, out: &mut DVector<f64>) {
        let a = self.drift_accel(x[1], x[3], d[0]);
        out[0] = x[2];
        out[1] = x[3];
        out[2] = a[0];
        out[3] = a[1];
    }

    fn input_map_into(&self, x: &DVector<f64>, d: &DVector<f64>, out: &mut DMatrix<f64>) {
        let b = self.control_accel(x[1], d[0]);
        out[(0, 0)] = 0.0;
        out[(1, 0)] = 0.0;
        out[(2, 0)] = b[0];
        out[(3, 0)] = b[1];
    }

    fn drift_jacobian_into(&self, x: &DVector<f64>, d: &DVector<f64>, out: &mut DMatrix<f64>) {
        let (theta, omega, m) = (x[1], x[3], d[0]);
        let p = &self.params;
        let l = p.com_length;
        let inv = self.mass_inverse(theta, m);
        let a = self.drift_accel(theta, omega, m);

        // ∂a/∂θ = M⁻¹ (∂c/∂θ - ∂M/∂θ · a)
        let dc_dtheta = [
            m * l * theta.cos() * omega * omega,
            m * p.gravity * l * theta.cos(),
        ];
        let dm = self.mass_dtheta(theta, m);
        let dm_a = sym2_mul(&dm, &a);
        let da_dtheta = sym2_mul(&inv, &[dc_dtheta[0] - dm_a[0], dc_dtheta[1] - dm_a[1]]);

        // ∂a/∂θ̇ = M⁻¹ [2 m l sinθ θ̇, 0]
        let da_domega = sym2_mul(&inv, &[2.0 * m * l * theta.sin() * omega, 0.0]);

        out.fill(0.0);
        out[(0, 2)] = 1.0;
        out[(1, 3)] = 1.0;
        out[(2, 1)] = da_dtheta[0];
        out[(3, 1)] = da_dtheta[1];
        out[(2, 3)] = da_domega[0];
        out[(3, 3)] = da_domega[1];
    }

    fn input_map_jacobian_into(
        &self,
        x: &DVector<f64>,
        d: &DVector<f64>,
        u: &DVector<f64>,
        out: &mut DMatrix<f64>,
    ) {
        let (theta, m) = (x[1], d[0]);
        let inv = self.mass_inverse(theta, m);
        let b = self.control_accel(theta, m);
        // ∂(b·u)/∂θ = -u · M⁻¹ ∂M/∂θ b
        let dm = self.mass_dtheta(theta, m);
        let dm_b = sym2_mul(&dm, &b);
        let db = sym2_mul(&inv, &dm_b);
        out.fill(0.0);
        out[(2, 1)] = -u[0] * db[0];
        out[(3, 1)] = -u[0] * db[1];
    }

    fn constraint(&self, x: &DVector<f64>) -> f64 {
        self.constraint.value(x)
    }

    fn constraint_gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.constraint.gradient_into(x, out);
    }
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// State-feedback rollout policy with an analytic Jacobian. The Jacobian is
/// defined as zero wherever the output saturates (including exactly on the
/// saturation boundary), so sensitivity propagation stays well-defined.
pub trait Policy: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn act_into(&self, x: &DVector<f64>, u: &mut DVector<f64>);

    /// `∂π/∂x`, written into `jac` (`control_dim x state_dim`).
    fn act_jacobian_into(&self, x: &DVector<f64>, jac: &mut DMatrix<f64>);

    fn act(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.control_dim());
        self.act_into(x, &mut u);
        u
    }

    fn act_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.control_dim(), self.state_dim());
        self.act_jacobian_into(x, &mut jac);
        jac
    }
}

/// The stock policies: a fixed control, clipped linear feedback
/// `clip(-K x)`, and bang-bang feedback `u_maxᵢ · sign((-K x)ᵢ)`.
#[derive(Debug, Clone)]
pub enum StdPolicy {
    Constant {
        u: DVector<f64>,
        state_dim: usize,
    },
    SaturatingLinear {
        gain: DMatrix<f64>,
        bounds: Bounds,
    },
    BangBang {
        gain: DMatrix<f64>,
        bounds: Bounds,
    },
}

impl StdPolicy {
    pub fn constant(u: DVector<f64>, state_dim: usize) -> Self {
        Self::Constant { u, state_dim }
    }

    pub fn saturating_linear(gain: DMatrix<f64>, bounds: Bounds) -> Result<Self> {
        if gain.nrows() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "policy gain rows vs control box",
                expected: bounds.dim(),
                got: gain.nrows(),
            });
        }
        Ok(Self::SaturatingLinear { gain, bounds })
    }

    pub fn bang_bang(gain: DMatrix<f64>, bounds: Bounds) -> Result<Self> {
        if gain.nrows() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "policy gain rows vs control box",
                expected: bounds.dim(),
                got: gain.nrows(),
            });
        }
        Ok(Self::BangBang { gain, bounds })
    }
}

impl Policy for StdPolicy {
    fn state_dim(&self) -> usize {
        match self {
            Self::Constant { state_dim, .. } => *state_dim,
            Self::SaturatingLinear { gain, .. } | Self::BangBang { gain, .. } => gain.ncols(),
        }
    }

    fn control_dim(&self) -> usize {
        match self {
            Self::Constant { u, .. } => u.len(),
            Self::SaturatingLinear { gain, .. } | Self::BangBang { gain, .. } => gain.nrows(),
        }
    }

    fn act_into(&self, x: &DVector<f64>, u: &mut DVector<f64>) {
        match self {
            Self::Constant { u: fixed, .. } => u.copy_from(fixed),
            Self::SaturatingLinear { gain, bounds } => {
                u.gemv(-1.0, gain, x, 0.0);
                bounds.clip_in_place(u);
            }
            Self::BangBang { gain, bounds } => {
                u.gemv(-1.0, gain, x, 0.0);
                for i in 0..u.len() {
                    let s = u[i];
                    u[i] = if s > 0.0 {
                        bounds.hi()[i].abs()
                    } else if s < 0.0 {
                        -bounds.hi()[i].abs()
                    } else {
                        0.0
                    };
                }
                bounds.clip_in_place(u);
            }
        }
    }

    fn act_jacobian_into(&self, x: &DVector<f64>, jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        if let Self::SaturatingLinear { gain, bounds } = self {
            let raw = -(gain * x);
            for i in 0..raw.len() {
                // Strictly inside the box: linear row; saturated (or exactly
                // on the boundary): zero row.
                if raw[i] > bounds.lo()[i] && raw[i] < bounds.hi()[i] {
                    for j in 0..gain.ncols() {
                        jac[(i, j)] = -gain[(i, j)];
                    }
                }
            }
        }
    }
}
