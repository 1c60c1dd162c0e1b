//! Python bindings: the benchmark systems, rollout policies, sampled value
//! function and CBF-QP safety filter, exposed as a small extension module.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rpcbf::filter::{self, AlphaFn, FilterMode};
use rpcbf::systems::{DoubleIntegrator, Policy as _, Segway, SegwayParams, StdPolicy};
use rpcbf::value;

fn to_py_err(e: rpcbf::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dvector(values: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(values)
}

fn parse_mode(mode: &str) -> PyResult<FilterMode> {
    match mode {
        "nominal_d" => Ok(FilterMode::NominalD),
        "worst_vertex" => Ok(FilterMode::WorstVertex),
        other => Err(PyValueError::new_err(format!(
            "unknown filter mode `{other}` (use nominal_d or worst_vertex)"
        ))),
    }
}

enum SystemImpl {
    DoubleIntegrator(DoubleIntegrator),
    Segway(Segway),
}

impl SystemImpl {
    fn as_dyn(&self) -> &dyn rpcbf::systems::System {
        match self {
            SystemImpl::DoubleIntegrator(s) => s,
            SystemImpl::Segway(s) => s,
        }
    }
}

/// A disturbed control-affine benchmark system.
#[pyclass(name = "System")]
struct PySystem {
    inner: SystemImpl,
}

#[pymethods]
impl PySystem {
    /// Double integrator with the unknown mass as disturbance.
    #[staticmethod]
    #[pyo3(signature = (mass_range, position_bound, control_bound=1.0, one_sided=false))]
    fn double_integrator(
        mass_range: (f64, f64),
        position_bound: f64,
        control_bound: f64,
        one_sided: bool,
    ) -> PyResult<Self> {
        let sys = DoubleIntegrator::with_options(
            [mass_range.0, mass_range.1],
            position_bound,
            control_bound,
            one_sided,
        )
        .map_err(to_py_err)?;
        Ok(Self {
            inner: SystemImpl::DoubleIntegrator(sys),
        })
    }

    /// Wheeled inverted pendulum with the unknown body mass as disturbance.
    #[staticmethod]
    #[pyo3(signature = (body_mass_range=None, torque_bound=None, com_length=None, frame_mass=None))]
    fn segway(
        body_mass_range: Option<(f64, f64)>,
        torque_bound: Option<f64>,
        com_length: Option<f64>,
        frame_mass: Option<f64>,
    ) -> PyResult<Self> {
        let mut params = SegwayParams::default();
        if let Some((lo, hi)) = body_mass_range {
            params.body_mass_range = [lo, hi];
        }
        if let Some(v) = torque_bound {
            params.torque_bound = v;
        }
        if let Some(v) = com_length {
            params.com_length = v;
        }
        if let Some(v) = frame_mass {
            params.frame_mass = v;
        }
        Ok(Self {
            inner: SystemImpl::Segway(Segway::new(params).map_err(to_py_err)?),
        })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.as_dyn().state_dim()
    }

    #[getter]
    fn control_dim(&self) -> usize {
        self.inner.as_dyn().control_dim()
    }

    #[getter]
    fn disturbance_dim(&self) -> usize {
        self.inner.as_dyn().disturbance_dim()
    }

    /// Constraint h(x); the avoid set is h > 0.
    fn constraint(&self, x: Vec<f64>) -> f64 {
        self.inner.as_dyn().constraint(&dvector(&x))
    }

    fn constraint_gradient(&self, x: Vec<f64>) -> Vec<f64> {
        self.inner
            .as_dyn()
            .constraint_gradient(&dvector(&x))
            .iter()
            .copied()
            .collect()
    }

    fn __repr__(&self) -> String {
        match &self.inner {
            SystemImpl::DoubleIntegrator(_) => "System(double_integrator)".into(),
            SystemImpl::Segway(_) => "System(segway)".into(),
        }
    }
}

/// A rollout policy.
#[pyclass(name = "Policy")]
struct PyPolicy {
    inner: StdPolicy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn constant(value: Vec<f64>, state_dim: usize) -> Self {
        Self {
            inner: StdPolicy::constant(dvector(&value), state_dim),
        }
    }

    /// clip(-K x) against the system's control box; `gains` is row-major K.
    #[staticmethod]
    fn saturating_linear(gains: Vec<Vec<f64>>, system: &PySystem) -> PyResult<Self> {
        let sys = system.inner.as_dyn();
        let rows = gains.len();
        let cols = gains.first().map_or(0, |r| r.len());
        if gains.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("ragged gain matrix"));
        }
        let gain = DMatrix::from_fn(rows, cols, |i, j| gains[i][j]);
        StdPolicy::saturating_linear(gain, sys.control_box().clone())
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn bang_bang(gains: Vec<Vec<f64>>, system: &PySystem) -> PyResult<Self> {
        let sys = system.inner.as_dyn();
        let rows = gains.len();
        let cols = gains.first().map_or(0, |r| r.len());
        if gains.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("ragged gain matrix"));
        }
        let gain = DMatrix::from_fn(rows, cols, |i, j| gains[i][j]);
        StdPolicy::bang_bang(gain, sys.control_box().clone())
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    /// The double integrator's smooth full-braking policy.
    #[staticmethod]
    fn braking(system: &PySystem) -> PyResult<Self> {
        match &system.inner {
            SystemImpl::DoubleIntegrator(di) => Ok(Self {
                inner: di.braking_policy(),
            }),
            SystemImpl::Segway(_) => Err(PyValueError::new_err(
                "braking policy is a double-integrator default",
            )),
        }
    }

    /// The segway's stock stabilizing feedback.
    #[staticmethod]
    fn segway_stabilizer(system: &PySystem) -> PyResult<Self> {
        match &system.inner {
            SystemImpl::Segway(s) => Ok(Self {
                inner: s.stabilizing_policy(),
            }),
            SystemImpl::DoubleIntegrator(_) => {
                Err(PyValueError::new_err("segway_stabilizer needs the segway"))
            }
        }
    }

    fn act(&self, x: Vec<f64>) -> Vec<f64> {
        self.inner.act(&dvector(&x)).iter().copied().collect()
    }
}

/// Horizon, discretization and sampling settings for value evaluation.
#[pyclass(name = "ValueConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyValueConfig {
    inner: value::ValueConfig,
}

#[pymethods]
impl PyValueConfig {
    #[new]
    #[pyo3(signature = (horizon, dt, num_samples, vertex_weight=0.5, seed=0))]
    fn new(horizon: f64, dt: f64, num_samples: usize, vertex_weight: f64, seed: u64) -> PyResult<Self> {
        let inner = value::ValueConfig::new(horizon, dt, num_samples, vertex_weight, seed);
        inner.validate().map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn steps(&self) -> PyResult<usize> {
        self.inner.steps().map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ValueConfig(horizon={}, dt={}, num_samples={}, vertex_weight={}, seed={})",
            self.inner.horizon,
            self.inner.dt,
            self.inner.num_samples,
            self.inner.vertex_weight,
            self.inner.seed
        )
    }
}

/// A value, its gradient, and where the maximum came from.
#[pyclass(name = "ValueEstimate")]
struct PyValueEstimate {
    #[pyo3(get)]
    value: f64,
    #[pyo3(get)]
    gradient: Vec<f64>,
    #[pyo3(get)]
    argmax_sample: usize,
    #[pyo3(get)]
    argmax_time: f64,
}

impl From<value::ValueEstimate> for PyValueEstimate {
    fn from(est: value::ValueEstimate) -> Self {
        Self {
            value: est.value,
            gradient: est.gradient.iter().copied().collect(),
            argmax_sample: est.argmax_sample,
            argmax_time: est.argmax_time,
        }
    }
}

#[pymethods]
impl PyValueEstimate {
    fn __repr__(&self) -> String {
        format!(
            "ValueEstimate(value={}, gradient={:?}, argmax_sample={}, argmax_time={})",
            self.value, self.gradient, self.argmax_sample, self.argmax_time
        )
    }
}

/// The filtered control and how the QP resolved.
#[pyclass(name = "FilterDecision")]
struct PyFilterDecision {
    #[pyo3(get)]
    u: Vec<f64>,
    #[pyo3(get)]
    status: String,
    #[pyo3(get)]
    slack: f64,
}

impl From<filter::FilterDecision> for PyFilterDecision {
    fn from(dec: filter::FilterDecision) -> Self {
        Self {
            u: dec.u.iter().copied().collect(),
            status: dec.status.as_str().to_string(),
            slack: dec.slack,
        }
    }
}

#[pymethods]
impl PyFilterDecision {
    fn __repr__(&self) -> String {
        format!(
            "FilterDecision(u={:?}, status={}, slack={})",
            self.u, self.status, self.slack
        )
    }
}

/// Sampled robust value function with gradient.
#[pyfunction]
fn evaluate(
    system: &PySystem,
    policy: &PyPolicy,
    config: &PyValueConfig,
    x0: Vec<f64>,
) -> PyResult<PyValueEstimate> {
    value::evaluate(system.inner.as_dyn(), &policy.inner, &config.inner, &dvector(&x0))
        .map(Into::into)
        .map_err(to_py_err)
}

/// Nominal-disturbance special case (one rollout at the box midpoint).
#[pyfunction]
fn evaluate_pcbf(
    system: &PySystem,
    policy: &PyPolicy,
    config: &PyValueConfig,
    x0: Vec<f64>,
) -> PyResult<PyValueEstimate> {
    value::evaluate_pcbf(system.inner.as_dyn(), &policy.inner, &config.inner, &dvector(&x0))
        .map(Into::into)
        .map_err(to_py_err)
}

/// Box-constrained CBF-QP projection of the nominal control.
#[pyfunction]
#[pyo3(signature = (system, b_value, b_gradient, x, u_nom, alpha, mode="nominal_d"))]
#[allow(clippy::too_many_arguments)]
fn cbf_qp(
    system: &PySystem,
    b_value: f64,
    b_gradient: Vec<f64>,
    x: Vec<f64>,
    u_nom: Vec<f64>,
    alpha: f64,
    mode: &str,
) -> PyResult<PyFilterDecision> {
    let alpha = AlphaFn::linear(alpha).map_err(to_py_err)?;
    filter::cbf_qp(
        system.inner.as_dyn(),
        b_value,
        &dvector(&b_gradient),
        &dvector(&x),
        &dvector(&u_nom),
        &alpha,
        parse_mode(mode)?,
    )
    .map(Into::into)
    .map_err(to_py_err)
}

/// One filtered control period: value estimation plus the CBF-QP.
#[pyfunction]
#[pyo3(signature = (system, nominal, rollout_policy, config, alpha, x, mode="nominal_d"))]
#[allow(clippy::too_many_arguments)]
fn step_filtered(
    system: &PySystem,
    nominal: &PyPolicy,
    rollout_policy: &PyPolicy,
    config: &PyValueConfig,
    alpha: f64,
    x: Vec<f64>,
    mode: &str,
) -> PyResult<(PyFilterDecision, PyValueEstimate)> {
    let alpha = AlphaFn::linear(alpha).map_err(to_py_err)?;
    filter::step_filtered(
        system.inner.as_dyn(),
        &nominal.inner,
        &rollout_policy.inner,
        &config.inner,
        &alpha,
        parse_mode(mode)?,
        &dvector(&x),
    )
    .map(|(dec, est)| (dec.into(), est.into()))
    .map_err(to_py_err)
}

/// Higher-order CBF baseline on the double integrator.
#[pyfunction]
fn hocbf_di(
    system: &PySystem,
    x: Vec<f64>,
    u_nom: Vec<f64>,
    alpha1: f64,
    alpha2: f64,
) -> PyResult<PyFilterDecision> {
    let SystemImpl::DoubleIntegrator(di) = &system.inner else {
        return Err(PyValueError::new_err("hocbf_di needs the double integrator"));
    };
    let a1 = AlphaFn::linear(alpha1).map_err(to_py_err)?;
    let a2 = AlphaFn::linear(alpha2).map_err(to_py_err)?;
    filter::hocbf_di(di, &dvector(&x), &dvector(&u_nom), &a1, &a2)
        .map(Into::into)
        .map_err(to_py_err)
}

#[pymodule]
fn rpcbf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyValueConfig>()?;
    m.add_class::<PyValueEstimate>()?;
    m.add_class::<PyFilterDecision>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_pcbf, m)?)?;
    m.add_function(wrap_pyfunction!(cbf_qp, m)?)?;
    m.add_function(wrap_pyfunction!(step_filtered, m)?)?;
    m.add_function(wrap_pyfunction!(hocbf_di, m)?)?;
    Ok(())
}
