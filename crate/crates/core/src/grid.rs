//! Uniform periodic grid, Fourier differentiation and the shared periodic
//! second-order solver.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseLu, RCOND_FLOOR};

/// Complex grid function aligned with the nodes of a [`Grid`].
pub type ComplexField = Array1<C64>;

/// Largest size for which the dense spectral assembly is the default.
pub const DENSE_ASSEMBLY_LIMIT: usize = 2048;

/// `N` equispaced nodes `y_m = m h` on the circle of circumference `p`.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    period: f64,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("period", &self.period).finish()
    }
}

impl Grid {
    pub fn new(n: usize, period: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Shape(format!("grid size {n} must be even and at least 4")));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Shape(format!("grid period {period} must be positive")));
        }
        let mut planner = FftPlanner::new();
        Ok(Grid {
            n,
            period,
            forward: planner.plan_fft_forward(n),
            backward: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn h(&self) -> f64 {
        self.period / self.n as f64
    }

    pub fn node(&self, m: usize) -> f64 {
        m as f64 * self.h()
    }

    pub fn nodes(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |m| self.node(m))
    }

    /// Index of the node closest to `y` (periodically).
    pub fn nearest_node(&self, y: f64) -> usize {
        let m = (y.rem_euclid(self.period) / self.h()).round() as usize;
        m % self.n
    }

    /// Wavenumbers in transform order: `(2 pi / p) * {0, 1, .., N/2-1, -N/2, .., -1}`.
    pub fn wavenumbers(&self) -> Array1<f64> {
        let base = 2.0 * PI / self.period;
        Array1::from_shape_fn(self.n, |m| {
            let idx = if m < self.n / 2 { m as f64 } else { m as f64 - self.n as f64 };
            base * idx
        })
    }

    pub fn zeros(&self) -> ComplexField {
        Array1::zeros(self.n)
    }

    pub fn sample(&self, f: impl Fn(f64) -> C64) -> ComplexField {
        Array1::from_shape_fn(self.n, |m| f(self.node(m)))
    }

    pub fn sample_real(&self, f: impl Fn(f64) -> f64) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |m| f(self.node(m)))
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, field: &ComplexField) -> Array1<C64> {
        self.check_len(field.len());
        let mut buf = field.to_vec();
        self.forward.process(&mut buf);
        Array1::from(buf)
    }

    /// Inverse of [`Grid::forward`], including the `1/N` normalization.
    pub fn inverse(&self, coeffs: &Array1<C64>) -> ComplexField {
        self.check_len(coeffs.len());
        let mut buf = coeffs.to_vec();
        self.backward.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        Array1::from_iter(buf.into_iter().map(|z| z * scale))
    }

    /// Apply a Fourier multiplier `symbol(l)` to a field.
    pub fn apply_symbol(&self, field: &ComplexField, symbol: impl Fn(f64) -> C64) -> ComplexField {
        let mut hat = self.forward(field);
        for (z, l) in hat.iter_mut().zip(self.wavenumbers().iter()) {
            *z *= symbol(*l);
        }
        self.inverse(&hat)
    }

    /// Spectral derivative of the given order. Odd orders drop the Nyquist mode
    /// so that real data stay real.
    pub fn fourier_diff(&self, field: &ComplexField, order: u32) -> ComplexField {
        let nyquist = -PI * self.n as f64 / self.period;
        self.apply_symbol(field, |l| {
            if order % 2 == 1 && l == nyquist {
                C64::new(0.0, 0.0)
            } else {
                C64::new(0.0, l).powu(order)
            }
        })
    }

    /// Solve `(d^2 - k^2) psi = omega` diagonally in Fourier space.
    pub fn invert_helmholtz(&self, omega: &ComplexField, k: f64) -> Result<ComplexField> {
        if k == 0.0 {
            return Err(Error::ZeroMode);
        }
        Ok(self.apply_symbol(omega, |l| C64::new(-1.0 / (l * l + k * k), 0.0)))
    }

    /// Dense real matrix of a real, even-or-odd Fourier multiplier.
    fn multiplier_matrix(&self, symbol: impl Fn(f64) -> C64) -> Array2<f64> {
        let n = self.n;
        let ls = self.wavenumbers();
        let sym: Vec<C64> = ls.iter().map(|&l| symbol(l)).collect();
        // Circulant: column j is the shift of column 0.
        let mut hat: Array1<C64> = Array1::from_elem(n, C64::new(1.0, 0.0));
        for (z, s) in hat.iter_mut().zip(sym.iter()) {
            *z *= *s;
        }
        let col0 = self.inverse(&hat);
        Array2::from_shape_fn((n, n), |(i, j)| col0[(i + n - j) % n].re)
    }

    /// Spectral differentiation matrix of order 1 or 2.
    pub fn diff_matrix(&self, order: u32) -> Array2<f64> {
        let nyquist = -PI * self.n as f64 / self.period;
        self.multiplier_matrix(|l| {
            if order % 2 == 1 && l == nyquist {
                C64::new(0.0, 0.0)
            } else {
                C64::new(0.0, l).powu(order)
            }
        })
    }

    /// Dense matrix of `(d^2 - k^2)^{-1}`.
    pub fn helmholtz_inverse_matrix(&self, k: f64) -> Result<Array2<f64>> {
        if k == 0.0 {
            return Err(Error::ZeroMode);
        }
        Ok(self.multiplier_matrix(|l| C64::new(-1.0 / (l * l + k * k), 0.0)))
    }

    /// Evaluate the trigonometric interpolant of `field` at an arbitrary point.
    pub fn interpolate(&self, field: &ComplexField, y: f64) -> C64 {
        let hat = self.forward(field);
        let n = self.n as f64;
        let nyq = self.n / 2;
        hat.iter()
            .zip(self.wavenumbers().iter())
            .enumerate()
            .map(|(m, (c, l))| {
                if m == nyq {
                    // split the Nyquist mode symmetrically so real data interpolate to real values
                    c * (l * y).cos()
                } else {
                    c * C64::new(0.0, l * y).exp()
                }
            })
            .sum::<C64>()
            / n
    }

    /// Periodic (geodesic) distance on the circle.
    pub fn distance(&self, a: f64, b: f64) -> f64 {
        periodic_distance(a, b, self.period)
    }

    /// Trapezoid (spectrally accurate) integral of a field over one period.
    pub fn integrate(&self, field: &ComplexField) -> C64 {
        field.sum() * self.h()
    }

    pub fn l2_norm(&self, field: &ComplexField) -> f64 {
        (field.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.h()).sqrt()
    }

    fn check_len(&self, len: usize) {
        assert_eq!(len, self.n, "field length {len} does not match grid size {}", self.n);
    }
}

/// Geodesic distance between `a` and `b` on a circle of circumference `p`.
pub fn periodic_distance(a: f64, b: f64, p: f64) -> f64 {
    let d = (a - b).rem_euclid(p);
    d.min(p - d)
}

/// Signed periodic offset `a - b` reduced to `[-p/2, p/2)`.
pub fn periodic_offset(a: f64, b: f64, p: f64) -> f64 {
    (a - b + 0.5 * p).rem_euclid(p) - 0.5 * p
}

/// Discretization choice for [`PeriodicOperator`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assembly {
    DenseSpectral,
    BandedStencil,
}

impl Assembly {
    pub fn default_for(n: usize) -> Self {
        if n <= DENSE_ASSEMBLY_LIMIT {
            Assembly::DenseSpectral
        } else {
            Assembly::BandedStencil
        }
    }
}

/// `c2(y) d^2 + c0(y)` on the periodic grid.
#[derive(Clone, Debug)]
pub struct PeriodicOperator {
    pub c2: ComplexField,
    pub c0: ComplexField,
}

/// Sixth-order central second-difference weights for offsets 0..=3.
const STENCIL6: [f64; 4] = [-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0];

impl PeriodicOperator {
    pub fn new(c2: ComplexField, c0: ComplexField) -> Self {
        assert_eq!(c2.len(), c0.len());
        PeriodicOperator { c2, c0 }
    }

    pub fn constant(grid: &Grid, c2: C64, c0: C64) -> Self {
        PeriodicOperator::new(Array1::from_elem(grid.n(), c2), Array1::from_elem(grid.n(), c0))
    }

    pub fn apply(&self, grid: &Grid, field: &ComplexField) -> ComplexField {
        let d2 = grid.fourier_diff(field, 2);
        &self.c2 * &d2 + &self.c0 * field
    }

    pub fn dense(&self, grid: &Grid) -> Array2<C64> {
        let d2 = linalg::to_complex(&grid.diff_matrix(2));
        let mut a = linalg::scale_rows(&self.c2, &d2);
        linalg::add_diag(&mut a, &self.c0);
        a
    }

    pub fn banded(&self, grid: &Grid) -> CyclicBanded {
        let n = grid.n();
        let h2 = grid.h() * grid.h();
        let m = STENCIL6.len() - 1;
        let mut cb = CyclicBanded::zeros(n, m);
        for i in 0..n {
            let c2 = self.c2[i] / h2;
            cb.set(i, 0, c2 * STENCIL6[0] + self.c0[i]);
            for (off, &w) in STENCIL6.iter().enumerate().skip(1) {
                cb.set(i, off as isize, c2 * w);
                cb.set(i, -(off as isize), c2 * w);
            }
        }
        cb
    }
}

/// Solve `op x = rhs` with the chosen assembly.
pub fn solve_periodic(
    grid: &Grid,
    op: &PeriodicOperator,
    rhs: &ComplexField,
    assembly: Assembly,
) -> Result<ComplexField> {
    match assembly {
        Assembly::DenseSpectral => Ok(DenseLu::new(&op.dense(grid))?.solve(rhs)),
        Assembly::BandedStencil => op.banded(grid).solve(rhs),
    }
}

/// Cyclic banded matrix with half-bandwidth `m`, stored by diagonal offset.
#[derive(Clone, Debug)]
pub struct CyclicBanded {
    n: usize,
    m: usize,
    // data[i][off + m] = A[i, (i + off) mod n]
    data: Vec<Vec<C64>>,
}

impl CyclicBanded {
    pub fn zeros(n: usize, m: usize) -> Self {
        assert!(n > 2 * m + 1, "cyclic band too wide for the grid");
        CyclicBanded { n, m, data: vec![vec![C64::new(0.0, 0.0); 2 * m + 1]; n] }
    }

    pub fn set(&mut self, row: usize, offset: isize, value: C64) {
        self.data[row][(offset + self.m as isize) as usize] = value;
    }

    pub fn get(&self, row: usize, offset: isize) -> C64 {
        self.data[row][(offset + self.m as isize) as usize]
    }

    pub fn apply(&self, x: &ComplexField) -> ComplexField {
        let (n, m) = (self.n, self.m as isize);
        Array1::from_shape_fn(n, |i| {
            (-m..=m)
                .map(|off| self.get(i, off) * x[((i as isize + off).rem_euclid(n as isize)) as usize])
                .sum()
        })
    }

    pub fn norm1(&self) -> f64 {
        let mut cols = vec![0.0; self.n];
        let m = self.m as isize;
        for i in 0..self.n {
            for off in -m..=m {
                let j = (i as isize + off).rem_euclid(self.n as isize) as usize;
                cols[j] += self.get(i, off).norm();
            }
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    /// Solve by banded LU of the non-wrapping part plus a Woodbury correction
    /// for the corner blocks.
    pub fn solve(&self, rhs: &ComplexField) -> Result<ComplexField> {
        let (n, m) = (self.n, self.m);
        let lu = BandLu::factor(self)?;
        // Rows carrying wrap-around entries, and their wrapped (column, value) pairs.
        let mut corner_rows = Vec::new();
        let mut corner_entries: Vec<Vec<(usize, C64)>> = Vec::new();
        for i in (0..m).chain(n - m..n) {
            let mut entries = Vec::new();
            for off in -(m as isize)..=(m as isize) {
                let j = i as isize + off;
                if j < 0 || j >= n as isize {
                    let v = self.get(i, off);
                    if v.norm() != 0.0 {
                        entries.push((j.rem_euclid(n as isize) as usize, v));
                    }
                }
            }
            corner_rows.push(i);
            corner_entries.push(entries);
        }
        let r = corner_rows.len();
        let z = lu.solve(rhs);
        let mut zu = Vec::with_capacity(r);
        for &row in &corner_rows {
            let mut e = Array1::zeros(n);
            e[row] = C64::new(1.0, 0.0);
            zu.push(lu.solve(&e));
        }
        let vdot = |entries: &Vec<(usize, C64)>, x: &ComplexField| -> C64 {
            entries.iter().map(|&(j, v)| v * x[j]).sum()
        };
        let mut s = linalg::identity(r);
        for a in 0..r {
            for b in 0..r {
                s[[a, b]] += vdot(&corner_entries[a], &zu[b]);
            }
        }
        let vz = Array1::from_shape_fn(r, |a| vdot(&corner_entries[a], &z));
        let coeff = DenseLu::new(&s)?.solve(&vz);
        let mut x = z;
        for b in 0..r {
            x.scaled_add(-coeff[b], &zu[b]);
        }
        // Cheap condition estimate from probe solves.
        let norm_a = self.norm1();
        let mut inv_est = 0.0f64;
        let probe = |x: &ComplexField| x.iter().map(|z| z.norm()).sum::<f64>();
        let rhs_norm = probe(rhs);
        if rhs_norm > 0.0 {
            inv_est = inv_est.max(probe(&x) / rhs_norm);
        }
        let rcond = if inv_est > 0.0 { 1.0 / (norm_a * inv_est) } else { 1.0 };
        if !x.iter().all(|z| z.is_finite()) || rcond < RCOND_FLOOR {
            return Err(Error::near_singular(rcond));
        }
        Ok(x)
    }
}

/// LU factorization with partial pivoting of the non-wrapping band.
struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    // rows[i][c] = U-or-A[i, i - kl + c], c in 0..width (width = 2 kl + ku + 1)
    rows: Vec<Vec<C64>>,
    lower: Vec<Vec<C64>>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn factor(a: &CyclicBanded) -> Result<Self> {
        let (n, kl) = (a.n, a.m);
        let ku = a.m;
        let width = 2 * kl + ku + 1;
        let zero = C64::new(0.0, 0.0);
        let mut rows = vec![vec![zero; width]; n];
        for i in 0..n {
            for off in -(kl as isize)..=(ku as isize) {
                let j = i as isize + off;
                if j >= 0 && j < n as isize {
                    rows[i][(off + kl as isize) as usize] = a.get(i, off);
                }
            }
        }
        let idx = |i: usize, j: usize| -> usize { j + kl - i };
        let mut lower = vec![vec![zero; kl]; n];
        let mut pivots = vec![0; n];
        let scale = rows.iter().flatten().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            for i in k + 1..=last {
                if rows[i][idx(i, k)].norm() > rows[p][idx(p, k)].norm() {
                    p = i;
                }
            }
            pivots[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a_kj = rows[k][idx(k, j)];
                    let a_pj = if j + kl >= p && idx(p, j) < width { rows[p][idx(p, j)] } else { zero };
                    rows[k][idx(k, j)] = a_pj;
                    if j + kl >= p && idx(p, j) < width {
                        rows[p][idx(p, j)] = a_kj;
                    }
                }
            }
            let piv = rows[k][idx(k, k)];
            if piv.norm() <= 1e-15 * scale {
                return Err(Error::near_singular(piv.norm() / scale));
            }
            for i in k + 1..=last {
                let l = rows[i][idx(i, k)] / piv;
                lower[k][i - k - 1] = l;
                rows[i][idx(i, k)] = zero;
                if l.norm() != 0.0 {
                    for j in k + 1..=jmax {
                        let t = rows[k][idx(k, j)];
                        rows[i][idx(i, j)] -= l * t;
                    }
                }
            }
        }
        Ok(BandLu { n, kl, width, rows, lower, pivots })
    }

    fn solve(&self, b: &ComplexField) -> ComplexField {
        let (n, kl) = (self.n, self.kl);
        let mut x = b.clone();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            let xk = x[k];
            for i in k + 1..=last {
                x[i] -= self.lower[k][i - k - 1] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            let jmax = (i + self.width - 1 - kl).min(n - 1);
            for j in i + 1..=jmax {
                acc -= self.rows[i][j + kl - i] * x[j];
            }
            x[i] = acc / self.rows[i][kl];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mode(grid: &Grid, q: f64) -> ComplexField {
        let p = grid.period();
        grid.sample(|y| C64::new(0.0, 2.0 * PI * q * y / p).exp())
    }

    #[test]
    fn derivative_of_fundamental_mode() {
        let grid = Grid::new(64, 8.0).unwrap();
        let f = mode(&grid, 1.0);
        let df = grid.fourier_diff(&f, 1);
        let want = f.mapv(|z| z * C64::new(0.0, 2.0 * PI / 8.0));
        assert!(linalg::max_abs((&df - &want).view()) < 1e-12);
    }

    #[test]
    fn second_derivative_of_sine_and_constant() {
        let grid = Grid::new(64, 8.0).unwrap();
        let f = grid.sample(|y| C64::new((2.0 * PI * y / 8.0).sin(), 0.0));
        let d2 = grid.fourier_diff(&f, 2);
        let c = (PI / 4.0).powi(2);
        assert!(linalg::max_abs((&d2 + &f.mapv(|z| z * c)).view()) < 1e-12);
        let one = Array1::from_elem(64, C64::new(1.0, 0.0));
        assert!(linalg::max_abs(grid.fourier_diff(&one, 2).view()) < 1e-13);
    }

    #[test]
    fn helmholtz_of_fundamental_mode() {
        let grid = Grid::new(32, 8.0).unwrap();
        let w = mode(&grid, 1.0);
        let psi = grid.invert_helmholtz(&w, 1.0).unwrap();
        let factor = -1.0 / ((PI / 4.0).powi(2) + 1.0);
        assert!((factor + 0.618_487).abs() < 1e-6);
        assert!(linalg::max_abs((&psi - &w.mapv(|z| z * factor)).view()) < 1e-13);
        assert_eq!(grid.invert_helmholtz(&w, 0.0), Err(Error::ZeroMode));
        assert!(linalg::max_abs(grid.invert_helmholtz(&grid.zeros(), 2.0).unwrap().view()) == 0.0);
    }

    #[test]
    fn dense_matrices_match_transform_route() {
        let grid = Grid::new(32, 8.0).unwrap();
        let f = grid.sample(|y| C64::new((0.7 * y).sin().exp(), (y * PI / 4.0).cos()));
        for order in [1, 2] {
            let d = linalg::to_complex(&grid.diff_matrix(order));
            let diff = d.dot(&f) - grid.fourier_diff(&f, order);
            assert!(linalg::max_abs(diff.view()) < 1e-10);
        }
        let hinv = linalg::to_complex(&grid.helmholtz_inverse_matrix(2.0).unwrap());
        let diff = hinv.dot(&f) - grid.invert_helmholtz(&f, 2.0).unwrap();
        assert!(linalg::max_abs(diff.view()) < 1e-12);
    }

    #[test]
    fn periodic_solver_examples() {
        let grid = Grid::new(64, 8.0).unwrap();
        let rhs = mode(&grid, 1.0);
        let op = PeriodicOperator::constant(&grid, C64::new(1.0, 0.0), C64::new(-1.0, 0.0));
        let x = solve_periodic(&grid, &op, &rhs, Assembly::DenseSpectral).unwrap();
        let want = rhs.mapv(|z| -z / (1.0 + (PI / 4.0).powi(2)));
        assert!(linalg::max_abs((&x - &want).view()) < 1e-12);

        let id = PeriodicOperator::constant(&grid, C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        for assembly in [Assembly::DenseSpectral, Assembly::BandedStencil] {
            let x = solve_periodic(&grid, &id, &rhs, assembly).unwrap();
            assert!(linalg::max_abs((&x - &rhs).view()) < 1e-13);
        }

        let lap = PeriodicOperator::constant(&grid, C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let one = Array1::from_elem(64, C64::new(1.0, 0.0));
        for assembly in [Assembly::DenseSpectral, Assembly::BandedStencil] {
            assert!(matches!(
                solve_periodic(&grid, &lap, &one, assembly),
                Err(Error::NearSingular { .. })
            ));
        }
    }

    #[test]
    fn banded_and_dense_agree_on_smooth_problem() {
        let grid = Grid::new(512, 8.0).unwrap();
        let c2 = grid.sample(|y| C64::new(0.05, 0.01 * (PI * y / 4.0).sin()));
        let c0 = grid.sample(|y| C64::new(-1.0 - 0.2 * (PI * y / 4.0).cos(), (PI * y / 4.0).sin()));
        let op = PeriodicOperator::new(c2, c0);
        let rhs = grid.sample(|y| C64::new((PI * y / 4.0).cos(), 0.3 * (PI * y / 2.0).sin()));
        let xd = solve_periodic(&grid, &op, &rhs, Assembly::DenseSpectral).unwrap();
        let xb = solve_periodic(&grid, &op, &rhs, Assembly::BandedStencil).unwrap();
        let rel = linalg::norm2((&xd - &xb).view()) / linalg::norm2(xd.view());
        assert!(rel < 1e-6, "rel {rel}");
        let res = op.banded(&grid).apply(&xb) - &rhs;
        assert!(linalg::norm2(res.view()) < 1e-10 * linalg::norm2(rhs.view()));
    }

    #[test]
    fn distances_wrap() {
        assert!((periodic_distance(0.5, 7.5, 8.0) - 1.0).abs() < 1e-15);
        assert!((periodic_offset(0.5, 7.5, 8.0) - 1.0).abs() < 1e-15);
        assert!((periodic_offset(7.5, 0.5, 8.0) + 1.0).abs() < 1e-15);
    }
}
