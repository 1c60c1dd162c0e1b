//! Planar grid sweeps: the filter boundary (barrier values over a state
//! grid) and the safe region (closed-loop safety from each grid state under
//! sampled plant disturbances). Cells are processed by a work pool and
//! written back in deterministic cell order; per-cell failures become NaN
//! cells with an error log instead of aborting the sweep.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rollout::sample_disturbances;

use super::config::{Experiment, GridDim};
use super::sim::simulate;
use super::{boundary_value, cell_seed, filter_seed_base, plant_seed};

/// A resolved planar grid over two swept state dimensions with all other
/// dimensions pinned.
#[derive(Debug, Clone)]
pub struct Grid {
    pub i_dim: usize,
    pub j_dim: usize,
    pub i_values: Vec<f64>,
    pub j_values: Vec<f64>,
    base: DVector<f64>,
}

impl Grid {
    pub fn resolve(dims: &[GridDim], state_dim: usize) -> Result<Self> {
        if dims.len() != state_dim {
            return Err(Error::DimensionMismatch {
                what: "grid dimensions",
                expected: state_dim,
                got: dims.len(),
            });
        }
        let mut base = DVector::zeros(state_dim);
        let mut swept = Vec::new();
        for (d, g) in dims.iter().enumerate() {
            match g {
                GridDim::Fixed { fixed } => base[d] = *fixed,
                GridDim::Swept { lo, hi, count } => {
                    if *count < 2 || !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                        return Err(Error::Config(format!(
                            "swept dim {d} needs lo < hi and count >= 2"
                        )));
                    }
                    swept.push((d, *lo, *hi, *count));
                }
            }
        }
        if swept.len() != 2 {
            return Err(Error::Config(format!(
                "exactly 2 swept dimensions required, got {}",
                swept.len()
            )));
        }
        let linspace = |lo: f64, hi: f64, count: usize| -> Vec<f64> {
            (0..count)
                .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                .collect()
        };
        Ok(Self {
            i_dim: swept[0].0,
            j_dim: swept[1].0,
            i_values: linspace(swept[0].1, swept[0].2, swept[0].3),
            j_values: linspace(swept[1].1, swept[1].2, swept[1].3),
            base,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.i_values.len(), self.j_values.len())
    }

    pub fn cell_count(&self) -> usize {
        self.i_values.len() * self.j_values.len()
    }

    pub fn state(&self, i: usize, j: usize) -> DVector<f64> {
        let mut x = self.base.clone();
        x[self.i_dim] = self.i_values[i];
        x[self.j_dim] = self.j_values[j];
        x
    }

    /// Flat row-major index of cell `(i, j)`.
    pub fn flat(&self, i: usize, j: usize) -> usize {
        i * self.j_values.len() + j
    }
}

#[derive(Debug, Clone)]
pub struct CellError {
    pub i: usize,
    pub j: usize,
    pub message: String,
}

/// Barrier values over the grid; cells with `value <= 0` lie inside the
/// filter boundary. Failed cells carry NaN.
#[derive(Debug, Clone)]
pub struct BoundarySweep {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub errors: Vec<CellError>,
}

impl BoundarySweep {
    pub fn sublevel_count(&self) -> usize {
        self.values.iter().filter(|v| **v <= 0.0).count()
    }
}

pub fn sweep_filter_boundary(exp: &Experiment, dims: &[GridDim]) -> Result<BoundarySweep> {
    let grid = Grid::resolve(dims, exp.system_dyn().state_dim())?;
    let (ni, nj) = grid.shape();
    let cells: Vec<(usize, usize)> = (0..ni)
        .flat_map(|i| (0..nj).map(move |j| (i, j)))
        .collect();
    let results: Vec<std::result::Result<f64, String>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let x = grid.state(i, j);
            boundary_value(exp, &x, cell_seed(exp.master_seed, grid.flat(i, j) as u64))
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut values = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for ((i, j), r) in cells.into_iter().zip(results) {
        match r {
            Ok(v) => values.push(v),
            Err(message) => {
                values.push(f64::NAN);
                errors.push(CellError { i, j, message });
            }
        }
    }
    Ok(BoundarySweep {
        grid,
        values,
        errors,
    })
}

/// Closed-loop safety over the grid: a cell is safe iff every plant
/// realization keeps `h <= 0` for the whole evaluation horizon. The barrier
/// value is recorded alongside so level sets can be re-plotted without
/// recomputation.
#[derive(Debug, Clone)]
pub struct SafeRegionSweep {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub safe: Vec<bool>,
    pub errors: Vec<CellError>,
}

pub fn sweep_safe_region(
    exp: &Experiment,
    dims: &[GridDim],
    eval_horizon: f64,
    eval_samples: usize,
) -> Result<SafeRegionSweep> {
    if !eval_horizon.is_finite() || eval_horizon <= 0.0 || eval_samples == 0 {
        return Err(Error::Config(
            "safe-region sweep needs eval_horizon > 0 and eval_samples >= 1".into(),
        ));
    }
    let grid = Grid::resolve(dims, exp.system_dyn().state_dim())?;
    let steps = (eval_horizon / exp.control_dt).round().max(1.0) as usize;
    let (ni, nj) = grid.shape();
    let cells: Vec<(usize, usize)> = (0..ni)
        .flat_map(|i| (0..nj).map(move |j| (i, j)))
        .collect();

    struct CellOutcome {
        value: f64,
        safe: bool,
        error: Option<String>,
    }

    let results: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(i, j)| {
            let x0 = grid.state(i, j);
            let cell = grid.flat(i, j) as u64;
            let value = match boundary_value(exp, &x0, cell_seed(exp.master_seed, cell)) {
                Ok(v) => v,
                Err(e) => {
                    return CellOutcome {
                        value: f64::NAN,
                        safe: false,
                        error: Some(e.to_string()),
                    }
                }
            };
            // States already in the avoid set are unsafe by definition.
            if exp.system_dyn().constraint(&x0) > 0.0 {
                return CellOutcome {
                    value,
                    safe: false,
                    error: None,
                };
            }
            let plants = match sample_disturbances(
                exp.system_dyn(),
                steps,
                eval_samples,
                exp.value.vertex_weight,
                plant_seed(exp.master_seed, cell),
            ) {
                Ok(p) => p,
                Err(e) => {
                    return CellOutcome {
                        value,
                        safe: false,
                        error: Some(e.to_string()),
                    }
                }
            };
            for (r, plant) in plants.iter().enumerate() {
                match simulate(
                    exp,
                    &x0,
                    eval_horizon,
                    plant,
                    filter_seed_base(exp.master_seed, cell, r as u64),
                ) {
                    Ok(rec) if rec.safe => {}
                    Ok(_) => {
                        return CellOutcome {
                            value,
                            safe: false,
                            error: None,
                        }
                    }
                    Err(e) => {
                        return CellOutcome {
                            value,
                            safe: false,
                            error: Some(e.to_string()),
                        }
                    }
                }
            }
            CellOutcome {
                value,
                safe: true,
                error: None,
            }
        })
        .collect();

    let mut values = Vec::with_capacity(results.len());
    let mut safe = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for ((i, j), r) in cells.into_iter().zip(results) {
        values.push(r.value);
        safe.push(r.safe);
        if let Some(message) = r.error {
            errors.push(CellError { i, j, message });
        }
    }
    Ok(SafeRegionSweep {
        grid,
        values,
        safe,
        errors,
    })
}
