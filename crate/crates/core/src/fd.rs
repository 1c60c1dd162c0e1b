//! Central finite-difference probes. These are the independent oracles the
//! test-suite checks analytic Jacobians, sensitivities and value gradients
//! against; nothing in the library's own computation paths uses them.

use nalgebra::{DMatrix, DVector};

/// Central-difference Jacobian of a vector-valued function.
pub fn jacobian<F>(f: F, x: &DVector<f64>, eps: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fx = f(x);
    let mut jac = DMatrix::zeros(fx.len(), x.len());
    for j in 0..x.len() {
        let h = eps * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let df = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &df);
    }
    jac
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F>(f: F, x: &DVector<f64>, eps: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    DVector::from_fn(x.len(), |j, _| {
        let h = eps * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Relative closeness in Frobenius norm, with a unit floor so comparisons
/// against (near-)zero matrices degrade to an absolute check.
pub fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let scale = a.norm().max(b.norm()).max(1.0);
    (a - b).norm() <= tol * scale
}

/// Relative closeness of vectors with the same unit floor.
pub fn rel_close_vec(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    let scale = a.norm().max(b.norm()).max(1.0);
    (a - b).norm() <= tol * scale
}
