//! Scan for embedded eigenvalues of the inviscid problem: the smallest
//! singular value of the Rayleigh operator with the limiting-absorption
//! boundary term, and the discrete spectrum of the inviscid operator.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::Background;
use crate::error::Result;
use crate::grid::periodic_offset;
use crate::linalg;
use crate::profile::ShearProfile;
use crate::resolvent::assemble_inviscid;

/// Roots of `b - lambda` on the circle, located by sign changes on the grid
/// and refined by bisection on the profile.
pub fn level_crossings(profile: &ShearProfile, bg: &Background, lambda: f64) -> Vec<f64> {
    let grid = &bg.grid;
    let n = grid.n();
    let f = |y: f64| profile.value(y) - lambda;
    let mut roots = Vec::new();
    for m in 0..n {
        let (a, b) = (grid.node(m), grid.node(m) + grid.h());
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm * flo <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            roots.push((0.5 * (lo + hi)).rem_euclid(grid.period()));
        }
    }
    roots
}

/// `k^2 - d^2 + p.v. b''/(b - lambda) + i pi sum_roots b''/|b'| delta_root`.
///
/// Nodes within one cell of a root replace the principal-value multiplier by
/// its exact cell average against the linear interpolant of `b'' psi`; the
/// delta is an impulse on the nearest node acting on the interpolated value.
pub fn embedded_operator(profile: &ShearProfile, bg: &Background, k: f64, lambda: f64) -> Array2<C64> {
    let grid = &bg.grid;
    let (n, h, p) = (grid.n(), grid.h(), grid.period());
    let mut op = linalg::to_complex(&grid.diff_matrix(2)).mapv(|z| -z);
    for m in 0..n {
        op[[m, m]] += k * k;
    }
    let roots = level_crossings(profile, bg, lambda);
    let near = |m: usize| roots.iter().copied().find(|&r| grid.distance(grid.node(m), r) <= h);
    for m in 0..n {
        match near(m) {
            None => op[[m, m]] += bg.d2b[m] / (bg.b[m] - lambda),
            Some(r) => {
                let slope = profile.derivative(r, 1);
                let d = periodic_offset(grid.node(m), r, p);
                let (mut a0, mut a1) = (d - 0.5 * h, d + 0.5 * h);
                let tiny = 1e-12 * h;
                if a0.abs() < tiny {
                    a0 = -tiny;
                }
                if a1.abs() < tiny {
                    a1 = tiny;
                }
                let log = (a1 / a0).abs().ln();
                // (1/h) int (g_m + (s - d) g') / (b' s) ds over the cell
                op[[m, m]] += bg.d2b[m] * log / (slope * h);
                let lin = (h - d * log) / (slope * h) / (2.0 * h);
                let (up, dn) = ((m + 1) % n, (m + n - 1) % n);
                op[[m, up]] += bg.d2b[up] * lin;
                op[[m, dn]] -= bg.d2b[dn] * lin;
            }
        }
    }
    for &r in &roots {
        let m0 = grid.nearest_node(r);
        let s = r / h;
        let left = s.floor();
        let t = s - left;
        let l = (left as isize).rem_euclid(n as isize) as usize;
        let curvature = bg.d2b[l] * (1.0 - t) + bg.d2b[(l + 1) % n] * t;
        let coeff = C64::new(0.0, std::f64::consts::PI * curvature / profile.derivative(r, 1).abs());
        op[[m0, l]] += coeff * (1.0 - t) / h;
        op[[m0, (l + 1) % n]] += coeff * t / h;
    }
    op
}

/// Smallest singular value of the embedded operator at one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedRow {
    pub lambda: f64,
    pub sigma_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedScan {
    pub rows: Vec<EmbeddedRow>,
    /// Eigenvalues of the inviscid operator closest to the real axis.
    pub nearest_to_axis: Vec<(f64, f64)>,
    /// Eigenvalues lying outside the range of `b` by more than `1e-6`.
    pub off_band: Vec<(f64, f64)>,
}

impl EmbeddedScan {
    pub fn floor(&self) -> f64 {
        self.rows.iter().map(|r| r.sigma_min).fold(f64::INFINITY, f64::min)
    }
}

/// Number of near-axis eigenvalues reported.
const REPORTED: usize = 6;

pub fn embedded_eigenvalue_scan(
    profile: &ShearProfile,
    bg: &Background,
    k: f64,
    lambdas: &[f64],
) -> Result<EmbeddedScan> {
    let rows = lambdas
        .par_iter()
        .map(|&lambda| {
            let op = embedded_operator(profile, bg, k, lambda);
            let s = linalg::singular_values(&op)?;
            Ok(EmbeddedRow { lambda, sigma_min: s[s.len() - 1] })
        })
        .collect::<Result<Vec<_>>>()?;
    let eig = linalg::eigenvalues(&assemble_inviscid(bg, k)?)?;
    let mut vals: Vec<C64> = eig.to_vec();
    vals.sort_by(|a, b| a.im.abs().total_cmp(&b.im.abs()));
    let nearest_to_axis = vals.iter().take(REPORTED).map(|z| (z.re, z.im)).collect();
    let (lo, hi) = (bg.b.iter().cloned().fold(f64::INFINITY, f64::min), bg.b.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let off_band = vals
        .iter()
        .filter(|z| z.re < lo - 1e-6 || z.re > hi + 1e-6 || z.im.abs() > 1e-6)
        .map(|z| (z.re, z.im))
        .collect();
    Ok(EmbeddedScan { rows, nearest_to_axis, off_band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn flat_curvature_is_helmholtz() {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        let grid = Grid::new(64, 8.0).unwrap();
        let bg = Background::new(&p, &grid).without_curvature();
        let scan = embedded_eigenvalue_scan(&p, &bg, 2.0, &[0.3]).unwrap();
        assert!((scan.rows[0].sigma_min - 4.0).abs() < 1e-10);
    }

    #[test]
    fn kolmogorov_symmetry_and_positivity() {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        let grid = Grid::new(128, 8.0).unwrap();
        let bg = Background::new(&p, &grid);
        let scan = embedded_eigenvalue_scan(&p, &bg, 1.0, &[-0.4, 0.4]).unwrap();
        let (a, b) = (scan.rows[0].sigma_min, scan.rows[1].sigma_min);
        assert!(a > 0.0 && (a - b).abs() < 1e-8 * a);
        assert!(scan.off_band.is_empty(), "{:?}", scan.off_band);
    }

    #[test]
    fn crossings_found() {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        let grid = Grid::new(64, 8.0).unwrap();
        let bg = Background::new(&p, &grid);
        let r = level_crossings(&p, &bg, 0.5);
        assert_eq!(r.len(), 2);
        for y in r {
            assert!((p.value(y) - 0.5).abs() < 1e-12);
        }
    }
}
