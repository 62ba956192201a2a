//! Weighted norms adapted to a critical point, their quadratic surrogates,
//! and the lower bound `kappa` for `I + T` in those norms.

use ndarray::{concatenate, Array1, Array2, Axis};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::background::Background;
use crate::error::Result;
use crate::grid::{periodic_offset, ComplexField, Grid};
use crate::linalg;
use crate::profile::{param_geometry, GeometryConfig, ShearProfile, SpectralPoint, WeightCheck, WeightField};
use crate::resolvent::{assemble_t, Formulation, TOptions};

/// Exponents `(sigma1, sigma2)` of the weighted space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightExponents {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl WeightExponents {
    pub fn new(sigma1: f64, sigma2: f64) -> Self {
        WeightExponents { sigma1, sigma2 }
    }

    /// The three exponent pairs used with the parameter `gamma`.
    pub fn admissible(gamma: f64) -> [Self; 3] {
        [
            Self::new(0.0, -gamma),
            Self::new(1.0, 1.0 - gamma),
            Self::new(1.0 - 2.0 * (2.0 - gamma), 2.0 - gamma),
        ]
    }
}

/// Norm in which `I + T` is measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormChoice {
    Weighted { sigma1: f64, sigma2: f64 },
    H1k,
}

impl From<WeightExponents> for NormChoice {
    fn from(e: WeightExponents) -> Self {
        NormChoice::Weighted { sigma1: e.sigma1, sigma2: e.sigma2 }
    }
}

/// `int_a^b f` for grid samples `f` of a periodic function, linear between
/// nodes (so fractional end cells are integrated exactly for linear data).
pub fn integrate_interval(grid: &Grid, f: &Array1<f64>, a: f64, b: f64) -> f64 {
    let (h, n, p) = (grid.h(), grid.n() as isize, grid.period());
    if b - a >= p {
        return f.sum() * h;
    }
    let at = |y: f64| -> f64 {
        let s = y / h;
        let i = s.floor();
        let t = s - i;
        let i = i as isize;
        let v0 = f[i.rem_euclid(n) as usize];
        let v1 = f[(i + 1).rem_euclid(n) as usize];
        v0 * (1.0 - t) + v1 * t
    };
    let mut xs = vec![a];
    let mut m = (a / h).floor() as isize + 1;
    while (m as f64) * h < b {
        xs.push(m as f64 * h);
        m += 1;
    }
    xs.push(b);
    xs.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (at(w[0]) + at(w[1]))).sum()
}

/// How the pointwise block is measured.
#[derive(Clone, Copy, Debug, PartialEq)]
enum SupBlock {
    Max,
    /// Normalized `L^p` mean over the complement.
    Mean(f64),
}

fn weighted_norm_with(grid: &Grid, g: &ComplexField, e: WeightExponents, w: &WeightField, sup: SupBlock) -> f64 {
    let p = grid.period();
    let delta = w.delta;
    let d = delta.min(1.0 / w.k);
    let dg = grid.fourier_diff(g, 1);
    let offs = grid.nodes().mapv(|y| periodic_offset(y, w.center, p));
    let outside: Vec<usize> = (0..grid.n()).filter(|&m| offs[m].abs() >= delta).collect();
    let measure = (p - 2.0 * delta).max(0.0);
    let mut total = 0.0;
    for (beta, field) in [(0, g), (1, &dg)] {
        let sq = field.mapv(|z| z.norm_sqr());
        let l2 = integrate_interval(grid, &sq, w.center - delta, w.center + delta).max(0.0).sqrt();
        total += delta.powf(-0.5 + e.sigma1) * d.powf(e.sigma2 + beta as f64) * l2;
        let vals = outside
            .iter()
            .map(|&m| w.rho[m].powf(e.sigma1) * w.rho_k[m].powf(e.sigma2 + beta as f64) * field[m].norm());
        total += match sup {
            SupBlock::Max => vals.fold(0.0, f64::max),
            SupBlock::Mean(q) => {
                if outside.is_empty() || measure == 0.0 {
                    0.0
                } else {
                    (vals.map(|v| v.powf(q)).sum::<f64>() * grid.h() / measure).powf(1.0 / q)
                }
            }
        };
    }
    total
}

/// Weighted norm: `L^2` block on the window of radius `delta` around the
/// critical point plus the weighted max-norm block on the complement, each
/// for `g` and `g'`.
pub fn weighted_norm(grid: &Grid, g: &ComplexField, e: WeightExponents, w: &WeightField) -> f64 {
    weighted_norm_with(grid, g, e, w, SupBlock::Max)
}

/// `(k^2 ||g||^2 + ||g'||^2)^{1/2}`.
pub fn h1k_norm(grid: &Grid, g: &ComplexField, k: f64) -> f64 {
    crate::resolvent::hmk_norm(grid, g, k, 1)
}

/// Evaluate the chosen norm.
pub fn norm_of(grid: &Grid, g: &ComplexField, choice: NormChoice, w: &WeightField) -> f64 {
    match choice {
        NormChoice::Weighted { sigma1, sigma2 } => weighted_norm(grid, g, WeightExponents::new(sigma1, sigma2), w),
        NormChoice::H1k => h1k_norm(grid, g, w.k),
    }
}

fn surrogate_norm(grid: &Grid, g: &ComplexField, choice: NormChoice, w: &WeightField) -> f64 {
    match choice {
        NormChoice::Weighted { sigma1, sigma2 } => {
            weighted_norm_with(grid, g, WeightExponents::new(sigma1, sigma2), w, SupBlock::Mean(16.0))
        }
        NormChoice::H1k => h1k_norm(grid, g, w.k),
    }
}

/// Upper-triangular `R` with `||R g||_2^2` the quadratic surrogate of the
/// norm: the pointwise block is replaced by its mean square.
pub fn surrogate_factor(grid: &Grid, choice: NormChoice, w: &WeightField) -> Result<Array2<C64>> {
    let n = grid.n();
    let h = grid.h();
    let d1 = linalg::to_complex(&grid.diff_matrix(1));
    let eye = linalg::identity(n);
    let scales: [Array1<f64>; 2] = match choice {
        NormChoice::H1k => [Array1::from_elem(n, w.k * h.sqrt()), Array1::from_elem(n, h.sqrt())],
        NormChoice::Weighted { sigma1, sigma2 } => {
            let p = grid.period();
            let delta = w.delta;
            let d = delta.min(1.0 / w.k);
            let measure = (p - 2.0 * delta).max(h);
            let offs = grid.nodes().mapv(|y| periodic_offset(y, w.center, p));
            let make = |beta: f64| {
                Array1::from_shape_fn(n, |m| {
                    if offs[m].abs() < delta {
                        delta.powf(-0.5 + sigma1) * d.powf(sigma2 + beta) * h.sqrt()
                    } else {
                        w.rho[m].powf(sigma1) * w.rho_k[m].powf(sigma2 + beta) * (h / measure).sqrt()
                    }
                })
            };
            [make(0.0), make(1.0)]
        }
    };
    let cplx = |v: &Array1<f64>| v.mapv(|x| C64::new(x, 0.0));
    let top = linalg::scale_rows(&cplx(&scales[0]), &eye);
    let bottom = linalg::scale_rows(&cplx(&scales[1]), &d1);
    let stack = concatenate(Axis(0), &[top.view(), bottom.view()]).expect("matching widths");
    linalg::gram_factor(&stack)
}

/// `R X R^{-1}`, the operator seen in surrogate-orthonormal coordinates.
pub fn conjugate(r: &Array2<C64>, rinv: &Array2<C64>, x: &Array2<C64>) -> Array2<C64> {
    r.dot(&x.dot(rinv))
}

/// Operator norm in the quadratic surrogate.
pub fn surrogate_operator_norm(r: &Array2<C64>, rinv: &Array2<C64>, x: &Array2<C64>) -> Result<f64> {
    Ok(linalg::singular_values(&conjugate(r, rinv, x))?[0])
}

/// Lower-bound estimates for `||(I + T) h|| / ||h||`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapEstimate {
    /// Smallest singular value in the quadratic surrogate.
    pub kappa2: f64,
    /// Smallest ratio found for the true mixed norm.
    pub kappa_mixed: f64,
    /// Surrogate operator norm of `T`.
    pub t_norm: f64,
}

/// Number of bottom singular directions searched for the mixed norm.
const CANDIDATES: usize = 6;

pub fn lap_constant(grid: &Grid, t: &Array2<C64>, choice: NormChoice, w: &WeightField) -> Result<LapEstimate> {
    let n = grid.n();
    let r = surrogate_factor(grid, choice, w)?;
    let rinv = linalg::upper_inverse(&r)?;
    let mut shifted = t.clone();
    linalg::add_diag(&mut shifted, &Array1::from_elem(n, C64::new(1.0, 0.0)));
    let conj = conjugate(&r, &rinv, &shifted);
    let (sig, vecs) = linalg::smallest_singular(&conj, CANDIDATES)?;
    let kappa2 = sig[0];
    let t_norm = surrogate_operator_norm(&r, &rinv, t)?;
    let basis = rinv.dot(&vecs);
    let image = shifted.dot(&basis);
    let ratio = |c: &Array1<C64>, exact: bool| -> f64 {
        let h = basis.dot(c);
        let th = image.dot(c);
        let (num, den) = if exact {
            (norm_of(grid, &th, choice, w), norm_of(grid, &h, choice, w))
        } else {
            (surrogate_norm(grid, &th, choice, w), surrogate_norm(grid, &h, choice, w))
        };
        if den > 0.0 {
            num / den
        } else {
            f64::INFINITY
        }
    };
    let m = basis.ncols();
    let mut best = Array1::<C64>::zeros(m);
    best[0] = C64::new(1.0, 0.0);
    let mut best_val = ratio(&best, false);
    let mut step = 0.5;
    let mut evals = 0;
    while step > 1e-3 && evals < 4000 {
        let mut improved = false;
        for idx in 0..m {
            for dir in [C64::new(1.0, 0.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0)] {
                let mut trial = best.clone();
                trial[idx] += dir * step;
                let v = ratio(&trial, false);
                evals += 1;
                if v < best_val {
                    best = trial;
                    best_val = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let mut kappa_mixed = ratio(&best, true);
    for c in 0..m {
        let mut e = Array1::<C64>::zeros(m);
        e[c] = C64::new(1.0, 0.0);
        kappa_mixed = kappa_mixed.min(ratio(&e, true));
    }
    Ok(LapEstimate { kappa2, kappa_mixed, t_norm })
}

/// Outcome of the search for the localization constant `C_dagger`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c_dagger: f64,
    /// `||T_v1|| + ||T_v2||` at the chosen constant.
    pub viscous_norm: f64,
    pub satisfied: bool,
    /// `(C_dagger, ||T_v1|| + ||T_v2||)` for every rung tried.
    pub ladder: Vec<(f64, f64)>,
}

/// Walk the ladder of `C_dagger` values in order and stop at the first one
/// for which the viscous pieces have surrogate norm at most `target` in the
/// `(0, -gamma)` space. Rungs whose assembly fails are skipped.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_c_dagger(
    profile: &ShearProfile,
    bg: &Background,
    point: &SpectralPoint,
    base: &GeometryConfig,
    j: usize,
    gamma: f64,
    ladder: &[f64],
    target: f64,
) -> Result<Calibration> {
    let mut table = Vec::new();
    let e = WeightExponents::admissible(gamma)[0];
    for &c in ladder {
        let cfg = GeometryConfig { c_dagger: c, ..*base };
        let geom = param_geometry(profile, point, &cfg);
        let opts = TOptions {
            formulation: Some(Formulation::Degenerate { j }),
            check: WeightCheck::Override,
            ..TOptions::default()
        };
        let t = match assemble_t(profile, bg, point, &geom, opts) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let w = WeightField::new(profile, geom.delta, point.kf(), j, &bg.grid, WeightCheck::Override)?;
        let r = surrogate_factor(&bg.grid, e.into(), &w)?;
        let rinv = linalg::upper_inverse(&r)?;
        let pieces = t.pieces.as_ref().expect("degenerate formulation has pieces");
        let v = surrogate_operator_norm(&r, &rinv, &pieces.v1)? + surrogate_operator_norm(&r, &rinv, &pieces.v2)?;
        table.push((c, v));
        if v <= target {
            return Ok(Calibration { c_dagger: c, viscous_norm: v, satisfied: true, ladder: table });
        }
    }
    let (c, v) = table.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap_or((f64::NAN, f64::NAN));
    Ok(Calibration { c_dagger: c, viscous_norm: v, satisfied: false, ladder: table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_weights(grid: &Grid, delta: f64, k: f64) -> WeightField {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        WeightField::new(&p, delta, k, 0, grid, WeightCheck::Enforce).unwrap()
    }

    #[test]
    fn constant_function_hand_value() {
        let grid = Grid::new(256, 8.0).unwrap();
        let w = unit_weights(&grid, 0.5, 1.0);
        let g = grid.sample(|_| C64::new(1.0, 0.0));
        let v = weighted_norm(&grid, &g, WeightExponents::new(0.0, 0.0), &w);
        assert!((v - (2f64.sqrt() + 1.0)).abs() < 1e-12, "{v}");
        assert_eq!(weighted_norm(&grid, &grid.zeros(), WeightExponents::new(0.0, -1.9), &w), 0.0);
    }

    #[test]
    fn h1k_plane_wave() {
        let grid = Grid::new(64, 8.0).unwrap();
        let g = grid.sample(|y| C64::new(0.0, 2.0 * PI * y / 8.0).exp());
        let want = (4.0 * 8.0 + (PI / 4.0).powi(2) * 8.0f64).sqrt();
        assert!((h1k_norm(&grid, &g, 2.0) - want).abs() < 1e-10);
        assert!((want - 6.077_40).abs() < 1e-5);
    }

    #[test]
    fn fractional_cells_linear_exact() {
        let grid = Grid::new(16, 8.0).unwrap();
        let f = grid.sample_real(|y| 1.0 + 0.25 * y);
        // linear on [1.3, 2.7] away from the periodic seam
        let v = integrate_interval(&grid, &f, 1.3, 2.7);
        let want = 1.4 + 0.125 * (2.7f64.powi(2) - 1.3f64.powi(2));
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn trivial_operators() {
        let grid = Grid::new(64, 8.0).unwrap();
        let w = unit_weights(&grid, 0.3, 1.0);
        let zero = Array2::<C64>::zeros((64, 64));
        for choice in [NormChoice::H1k, WeightExponents::admissible(1.875)[1].into()] {
            let est = lap_constant(&grid, &zero, choice, &w).unwrap();
            assert!((est.kappa2 - 1.0).abs() < 1e-10 && (est.kappa_mixed - 1.0).abs() < 1e-10);
            let minus = linalg::identity(64).mapv(|z| -z);
            let est = lap_constant(&grid, &minus, choice, &w).unwrap();
            assert!(est.kappa2.abs() < 1e-12 && est.kappa_mixed.abs() < 1e-12);
        }
    }

    #[test]
    fn admissible_pairs() {
        let e = WeightExponents::admissible(1.875);
        assert_eq!(e[0], WeightExponents::new(0.0, -1.875));
        assert_eq!(e[1], WeightExponents::new(1.0, -0.875));
        assert!((e[2].sigma1 - 0.75).abs() < 1e-15 && (e[2].sigma2 - 0.125).abs() < 1e-15);
    }
}
