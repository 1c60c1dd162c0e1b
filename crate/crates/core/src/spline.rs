//! Closed-form maximization of a cubic spline through the sampled constraint
//! signal, plus the gradient of that maximum with respect to the samples.
//!
//! Maximizing the interpolant instead of the raw samples lets the maximum
//! fall between timesteps, which removes the integer-step gradient
//! discontinuity of the naive discrete maximum. At an interior maximum the
//! spline's time derivative vanishes, so the derivative of the maximum with
//! respect to the sample values needs no dt*/dh term (envelope theorem): it
//! is just the interpolation weight vector at the fixed maximizer.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// End conditions for the interpolating cubic.
///
/// `NotAKnot` reproduces polynomials up to cubics exactly (so quadratic
/// constraint signals recover their true extremum to machine precision) and
/// is the default. `Natural` zeroes the second derivative at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    NotAKnot,
    Natural,
}

/// Prefactored Thomas solve for the tridiagonal system with constant bands
/// `[1, 4, 1]`; one factorization serves every right-hand side.
struct Tridiag {
    cp: Vec<f64>,
    inv_m: Vec<f64>,
}

impl Tridiag {
    fn new(size: usize) -> Self {
        let mut cp = vec![0.0; size];
        let mut inv_m = vec![0.0; size];
        let mut prev = 0.0;
        for j in 0..size {
            let m = 4.0 - prev;
            inv_m[j] = 1.0 / m;
            cp[j] = inv_m[j];
            prev = cp[j];
        }
        Self { cp, inv_m }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        debug_assert_eq!(n, self.cp.len());
        if n == 0 {
            return;
        }
        rhs[0] *= self.inv_m[0];
        for j in 1..n {
            rhs[j] = (rhs[j] - rhs[j - 1]) * self.inv_m[j];
        }
        for j in (0..n - 1).rev() {
            rhs[j] -= self.cp[j] * rhs[j + 1];
        }
    }
}

fn reduced_size(n: usize, boundary: Boundary) -> usize {
    match boundary {
        Boundary::Natural => n.saturating_sub(2),
        Boundary::NotAKnot => n.saturating_sub(4),
    }
}

/// Knot second derivatives for data given as a lookup, so the same code path
/// serves the actual samples and the unit-vector resolves for the weights.
fn second_derivatives(
    h: &dyn Fn(usize) -> f64,
    n: usize,
    dt: f64,
    boundary: Boundary,
    tri: &Tridiag,
) -> Vec<f64> {
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let r = |j: usize| 6.0 * (h(j - 1) - 2.0 * h(j) + h(j + 1)) / (dt * dt);
    match boundary {
        Boundary::Natural => {
            let mut rhs: Vec<f64> = (1..=n - 2).map(r).collect();
            tri.solve(&mut rhs);
            m[1..=n - 2].copy_from_slice(&rhs);
        }
        Boundary::NotAKnot => {
            if n == 3 {
                // Single parabola through three points.
                let c = r(1) / 6.0;
                m.fill(c);
            } else {
                m[1] = r(1) / 6.0;
                m[n - 2] = r(n - 2) / 6.0;
                if n == 5 {
                    m[2] = (r(2) - m[1] - m[3]) / 4.0;
                } else if n >= 6 {
                    let mut rhs: Vec<f64> = (2..=n - 3).map(r).collect();
                    rhs[0] -= m[1];
                    let last = rhs.len() - 1;
                    rhs[last] -= m[n - 2];
                    tri.solve(&mut rhs);
                    m[2..=n - 3].copy_from_slice(&rhs);
                }
                m[0] = 2.0 * m[1] - m[2];
                m[n - 1] = 2.0 * m[n - 2] - m[n - 3];
            }
        }
    }
    m
}

/// Where a spline maximum sits: exactly on a knot, or inside a segment at
/// local coordinate `s` from the segment's left knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxLocation {
    Knot(usize),
    Interior { segment: usize, s: f64 },
}

/// An interpolating cubic on the uniform grid `t_k = k·dt`.
#[derive(Debug, Clone)]
pub struct SplineFit {
    values: Vec<f64>,
    second: Vec<f64>,
    dt: f64,
    boundary: Boundary,
}

impl SplineFit {
    pub fn new(values: &[f64], dt: f64, boundary: Boundary) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewSamples {
                need: 2,
                got: values.len(),
            });
        }
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("bad dt {dt}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "spline data must be finite".into(),
            ));
        }
        let tri = Tridiag::new(reduced_size(values.len(), boundary));
        let second = second_derivatives(&|j| values[j], values.len(), dt, boundary, &tri);
        Ok(Self {
            values: values.to_vec(),
            second,
            dt,
            boundary,
        })
    }

    pub fn knot_count(&self) -> usize {
        self.values.len()
    }

    pub fn duration(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// Cubic coefficients on segment `j`:
    /// `S(s) = d + c·s + b·s² + a·s³` for `s = t - t_j` in `[0, dt]`.
    fn segment_coeffs(
        values: &[f64],
        second: &[f64],
        dt: f64,
        j: usize,
    ) -> (f64, f64, f64, f64) {
        let d = values[j];
        let c = (values[j + 1] - values[j]) / dt - dt * (2.0 * second[j] + second[j + 1]) / 6.0;
        let b = 0.5 * second[j];
        let a = (second[j + 1] - second[j]) / (6.0 * dt);
        (d, c, b, a)
    }

    fn eval_segment(values: &[f64], second: &[f64], dt: f64, j: usize, s: f64) -> f64 {
        let (d, c, b, a) = Self::segment_coeffs(values, second, dt, j);
        d + s * (c + s * (b + s * a))
    }

    pub fn eval(&self, t: f64) -> f64 {
        let segments = self.values.len() - 1;
        let j = ((t / self.dt).floor() as isize).clamp(0, segments as isize - 1) as usize;
        Self::eval_segment(&self.values, &self.second, self.dt, j, t - j as f64 * self.dt)
    }

    /// Global maximum over `[0, (H-1)·dt]`. Candidates are the knots (using
    /// the exact sample values) and the real roots of the derivative
    /// quadratic inside each segment; ties go to the smallest time.
    pub fn maximum(&self) -> (f64, f64, MaxLocation) {
        let n = self.values.len();
        let mut best_value = self.values[0];
        let mut best_time = 0.0;
        let mut best_loc = MaxLocation::Knot(0);

        let mut consider = |value: f64, time: f64, loc: MaxLocation| {
            if value > best_value {
                best_value = value;
                best_time = time;
                best_loc = loc;
            }
        };

        for j in 0..n - 1 {
            // Interior critical points: S'(s) = c + 2b s + 3a s² = 0.
            let (_, c, b, a) = Self::segment_coeffs(&self.values, &self.second, self.dt, j);
            let mut roots = [0.0f64; 2];
            let mut count = 0;
            let qa = 3.0 * a;
            let qb = 2.0 * b;
            if qa.abs() <= 1e-14 * (qb.abs() + c.abs()).max(1.0) {
                if qb.abs() > 0.0 {
                    roots[0] = -c / qb;
                    count = 1;
                }
            } else {
                let disc = qb * qb - 4.0 * qa * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    let q = -0.5 * (qb + qb.signum() * sq);
                    if q != 0.0 {
                        roots[0] = q / qa;
                        roots[1] = c / q;
                        count = 2;
                    } else {
                        roots[0] = 0.0;
                        count = 1;
                    }
                }
            }
            let mut seg_roots: Vec<f64> = roots[..count]
                .iter()
                .copied()
                .filter(|s| *s > 0.0 && *s < self.dt)
                .collect();
            seg_roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for s in seg_roots {
                let v = Self::eval_segment(&self.values, &self.second, self.dt, j, s);
                consider(
                    v,
                    j as f64 * self.dt + s,
                    MaxLocation::Interior { segment: j, s },
                );
            }
            // Right knot (the left knot of segment 0 seeded `best`).
            consider(
                self.values[j + 1],
                (j + 1) as f64 * self.dt,
                MaxLocation::Knot(j + 1),
            );
        }
        (best_value, best_time, best_loc)
    }

    /// Envelope weights `w = ∂S(t*; h)/∂h` at the fixed maximizer: the unit
    /// vector at a knot maximizer, and otherwise one resolve of the spline
    /// system per sample direction, reusing a single factorization.
    pub fn weights(&self, location: MaxLocation) -> DVector<f64> {
        let n = self.values.len();
        match location {
            MaxLocation::Knot(k) => {
                let mut w = DVector::zeros(n);
                w[k] = 1.0;
                w
            }
            MaxLocation::Interior { segment, s } => {
                let tri = Tridiag::new(reduced_size(n, self.boundary));
                let mut w = DVector::zeros(n);
                for q in 0..n {
                    let unit = |j: usize| if j == q { 1.0 } else { 0.0 };
                    let m_q = second_derivatives(&unit, n, self.dt, self.boundary, &tri);
                    let values_pair = [unit(segment), unit(segment + 1)];
                    let d = values_pair[0];
                    let c = (values_pair[1] - values_pair[0]) / self.dt
                        - self.dt * (2.0 * m_q[segment] + m_q[segment + 1]) / 6.0;
                    let b = 0.5 * m_q[segment];
                    let a = (m_q[segment + 1] - m_q[segment]) / (6.0 * self.dt);
                    w[q] = d + s * (c + s * (b + s * a));
                }
                w
            }
        }
    }
}

/// The maximum of the fitted spline together with its location and the
/// gradient of the maximum value with respect to the sample vector.
#[derive(Debug, Clone)]
pub struct SplineMax {
    pub value: f64,
    pub time: f64,
    pub weights: DVector<f64>,
}

/// Fit a cubic through `(k·dt, h_k)` and maximize it in closed form.
pub fn spline_max(h_values: &[f64], dt: f64) -> Result<SplineMax> {
    spline_max_with(h_values, dt, Boundary::default())
}

pub fn spline_max_with(h_values: &[f64], dt: f64, boundary: Boundary) -> Result<SplineMax> {
    let fit = SplineFit::new(h_values, dt, boundary)?;
    let (value, time, loc) = fit.maximum();
    Ok(SplineMax {
        value,
        time,
        weights: fit.weights(loc),
    })
}

/// Plain discrete maximum with lowest-index tie-breaking; the baseline the
/// spline maximization improves on.
pub fn naive_max(h_values: &[f64]) -> Result<(f64, usize)> {
    if h_values.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let mut best = h_values[0];
    let mut idx = 0;
    for (k, &v) in h_values.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            idx = k;
        }
    }
    Ok((best, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn braking_samples(dt: f64, count: usize) -> Vec<f64> {
        // p(t) = t - t²/2 for x0 = [0, 1], a = -1.
        (0..count)
            .map(|k| {
                let t = k as f64 * dt;
                t - 0.5 * t * t
            })
            .collect()
    }

    #[test]
    fn braking_parabola_recovers_true_extremum() {
        let h = braking_samples(0.3, 8);
        let m = spline_max(&h, 0.3).unwrap();
        // Analytic maximum of the braking parabola: p0 + v0²/2 at t = v0.
        assert!((m.value - 0.5).abs() <= 1e-10, "value = {}", m.value);
        assert!((m.time - 1.0).abs() <= 1e-10, "time = {}", m.time);
    }

    #[test]
    fn quadratics_recover_extremum_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = -rng.random_range(0.2..3.0);
            let t_star = rng.random_range(0.3..1.7);
            let c = rng.random_range(-1.0..1.0);
            let dt = 0.1;
            let n = 21; // grid [0, 2]
            let data: Vec<f64> = (0..n)
                .map(|k| {
                    let t = k as f64 * dt;
                    a * (t - t_star) * (t - t_star) + c
                })
                .collect();
            let m = spline_max(&data, dt).unwrap();
            assert!((m.value - c).abs() <= 1e-10, "value err {}", m.value - c);
            assert!((m.time - t_star).abs() <= 1e-8, "time err {}", m.time - t_star);
        }
    }

    #[test]
    fn constant_data_maxes_at_first_knot() {
        let m = spline_max(&[0.7; 9], 0.2).unwrap();
        assert_eq!(m.value, 0.7);
        assert_eq!(m.time, 0.0);
        let mut e0 = DVector::zeros(9);
        e0[0] = 1.0;
        assert_eq!(m.weights, e0);
    }

    #[test]
    fn monotone_data_maxes_at_last_knot() {
        let data: Vec<f64> = (0..12).map(|k| 0.1 * k as f64).collect();
        let m = spline_max(&data, 0.5).unwrap();
        assert_eq!(m.value, 1.1);
        assert_eq!(m.time, 5.5);
        let mut e_last = DVector::zeros(12);
        e_last[11] = 1.0;
        assert_eq!(m.weights, e_last);
    }

    #[test]
    fn naive_max_examples() {
        assert_eq!(naive_max(&[0.0, 1.0, 0.0]).unwrap(), (1.0, 1));
        assert_eq!(naive_max(&[2.0, 2.0]).unwrap(), (2.0, 0));
        assert!(naive_max(&[]).is_err());
        // Braking samples at dt = 0.3 peak at integer step 3 below the true max.
        let h = braking_samples(0.3, 8);
        let (v, k) = naive_max(&h).unwrap();
        assert_eq!(k, 3);
        assert!((v - 0.495).abs() <= 1e-12);
        assert!(v < 0.5);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(spline_max(&[1.0], 0.1).is_err());
        assert!(spline_max(&[], 0.1).is_err());
        assert!(spline_max(&[1.0, 2.0], 0.1).is_ok());
    }

    #[test]
    fn envelope_weights_match_fd() {
        for boundary in [Boundary::NotAKnot, Boundary::Natural] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            for _ in 0..20 {
                let n = rng.random_range(5..24);
                let dt = 0.1;
                let phase = rng.random_range(0.0..3.0);
                let freq = rng.random_range(0.5..2.0);
                let data: Vec<f64> = (0..n)
                    .map(|k| (freq * k as f64 * dt + phase).sin())
                    .collect();
                let m = spline_max_with(&data, dt, boundary).unwrap();
                let eps = 1e-6;
                for q in 0..n {
                    let mut up = data.clone();
                    let mut dn = data.clone();
                    up[q] += eps;
                    dn[q] -= eps;
                    let vu = spline_max_with(&up, dt, boundary).unwrap().value;
                    let vd = spline_max_with(&dn, dt, boundary).unwrap().value;
                    let fd = (vu - vd) / (2.0 * eps);
                    assert!(
                        (fd - m.weights[q]).abs() <= 1e-6,
                        "{boundary:?} w[{q}] = {} vs fd {fd}",
                        m.weights[q]
                    );
                }
            }
        }
    }

    #[test]
    fn closed_form_max_dominates_dense_oversampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let n = rng.random_range(4..16);
            let dt = 0.1;
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fit = SplineFit::new(&data, dt, Boundary::NotAKnot).unwrap();
            let (value, _, _) = fit.maximum();
            // Whole-domain scan, then refine around its argmax until the
            // sampling gap is far below the comparison tolerance.
            let scan = |lo: f64, hi: f64| -> (f64, f64) {
                (0..=200_000)
                    .map(|i| {
                        let t = lo + (hi - lo) * i as f64 / 200_000.0;
                        (fit.eval(t), t)
                    })
                    .fold((f64::NEG_INFINITY, 0.0), |acc, c| if c.0 > acc.0 { c } else { acc })
            };
            let (coarse, t1) = scan(0.0, fit.duration());
            assert!(coarse <= value + 1e-12);
            let step = fit.duration() / 200_000.0;
            let (fine, _) = scan((t1 - 2.0 * step).max(0.0), (t1 + 2.0 * step).min(fit.duration()));
            assert!(fine <= value + 1e-12);
            assert!(value <= fine + 1e-12, "value {value} vs fine scan {fine}");
        }
    }

    proptest! {
        #[test]
        fn spline_max_bounds_hold(
            data in proptest::collection::vec(-10.0f64..10.0, 2..40),
            dt in 0.01f64..1.0,
        ) {
            let m = spline_max(&data, dt).unwrap();
            let (naive, _) = naive_max(&data).unwrap();
            // The knots themselves are candidates, so the spline max can
            // never fall below the discrete max.
            prop_assert!(m.value >= naive);
            let knot_max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.value >= knot_max - 1e-12);
            prop_assert!(m.time >= 0.0);
            prop_assert!(m.time <= (data.len() - 1) as f64 * dt + 1e-12);
            // Interpolation weights of any interpolant sum to one.
            let sum: f64 = m.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "weight sum {}", sum);
        }
    }
}
