//! Grid samples of the background flow as seen by the operators.

use ndarray::Array1;

use crate::grid::Grid;
use crate::profile::ShearProfile;

/// `b`, `b'`, `b''` sampled on a grid. Operators only see these samples, so
/// test scenarios (constant flow, curvature switched off) are plain values.
#[derive(Clone, Debug)]
pub struct Background {
    pub grid: Grid,
    pub b: Array1<f64>,
    pub db: Array1<f64>,
    pub d2b: Array1<f64>,
}

impl Background {
    pub fn new(profile: &ShearProfile, grid: &Grid) -> Self {
        Background {
            grid: grid.clone(),
            b: profile.sample(grid, 0),
            db: profile.sample(grid, 1),
            d2b: profile.sample(grid, 2),
        }
    }

    /// Uniform flow `b = c`.
    pub fn uniform(grid: &Grid, c: f64) -> Self {
        let n = grid.n();
        Background { grid: grid.clone(), b: Array1::from_elem(n, c), db: Array1::zeros(n), d2b: Array1::zeros(n) }
    }

    /// Same flow with the curvature term `b''` replaced by zero.
    pub fn without_curvature(mut self) -> Self {
        self.d2b.fill(0.0);
        self
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn max_abs_b(&self) -> f64 {
        self.b.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
