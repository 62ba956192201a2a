//! Periodic Helmholtz Green's function, the derived kernel `F_k`, the
//! modified Green's function with a localized potential, and the `H` kernel.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::airy::{erode_mask, RESOLUTION_TOLERANCE};
use crate::cutoff::{phi0, phi0_derivative};
use crate::error::{Error, Result};
use crate::grid::{periodic_offset, Grid};
use crate::linalg::{self, DenseLu};
use crate::profile::{ShearProfile, SpectralPoint, WeightCheck, WeightField};

/// Closed-form Green's function of `k^2 - d^2/dy^2` on the circle of length `period`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardGreen {
    pub k: f64,
    pub period: f64,
}

/// `F_k = d_z d_y G_k - delta(y - z)` as a smooth kernel and the coefficient
/// of the remaining delta, which is never discretized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitKernel {
    pub smooth: f64,
    pub delta_coefficient: f64,
}

pub fn green_standard(k: f64, period: f64) -> Result<StandardGreen> {
    if k < 1.0 {
        return Err(Error::Shape(format!("wavenumber {k} must be at least 1")));
    }
    Ok(StandardGreen { k, period })
}

impl StandardGreen {
    /// `cosh(k(p/2 - d)) / sinh(kp/2)` written with decaying exponentials.
    fn even_part(&self, d: f64) -> f64 {
        let (k, p) = (self.k, self.period);
        ((-k * d).exp() + (-k * (p - d)).exp()) / (1.0 - (-k * p).exp())
    }

    fn odd_part(&self, d: f64) -> f64 {
        let (k, p) = (self.k, self.period);
        ((-k * d).exp() - (-k * (p - d)).exp()) / (1.0 - (-k * p).exp())
    }

    pub fn value(&self, y: f64, z: f64) -> f64 {
        let d = periodic_offset(y, z, self.period).abs();
        self.even_part(d) / (2.0 * self.k)
    }

    /// `d_y G_k(y, z)`; zero at `y = z` where the one-sided limits cancel.
    pub fn dy(&self, y: f64, z: f64) -> f64 {
        let x = periodic_offset(y, z, self.period);
        if x == 0.0 {
            return 0.0;
        }
        -x.signum() * self.odd_part(x.abs()) / 2.0
    }

    /// `F_k(y, z) = -k^2 G_k(y, z)`; the delta cancels exactly.
    pub fn f_kernel(&self, y: f64, z: f64) -> SplitKernel {
        SplitKernel { smooth: -self.k * self.k * self.value(y, z), delta_coefficient: 0.0 }
    }

    /// `d_y F_k(y, z)`.
    pub fn f_dy(&self, y: f64, z: f64) -> f64 {
        -self.k * self.k * self.dy(y, z)
    }

    pub fn matrix(&self, grid: &Grid) -> Array2<f64> {
        let n = grid.n();
        Array2::from_shape_fn((n, n), |(m, q)| self.value(grid.node(m), grid.node(q)))
    }

    /// Smallest `C` with `|G| + |d_y G| / k <= C e^{-k d} / k` on the grid.
    pub fn pointwise_constant(&self, grid: &Grid) -> f64 {
        let z = 0.0;
        (0..grid.n())
            .map(|m| {
                let y = grid.node(m);
                let d = grid.distance(y, z);
                (self.value(y, z).abs() + self.dy(y, z).abs() / self.k) * self.k * (self.k * d).exp()
            })
            .fold(0.0, f64::max)
    }

    /// `[k^{3/2} ||G(y,.)||, k^{1/2} ||d_y G(y,.)||]`; translation invariance
    /// makes the supremum over `y` a single evaluation.
    pub fn l2_constants(&self, grid: &Grid) -> [f64; 2] {
        let h = grid.h();
        let (mut g, mut dg) = (0.0, 0.0);
        for m in 0..grid.n() {
            let z = grid.node(m);
            g += self.value(0.0, z).powi(2) * h;
            dg += self.dy(0.0, z).powi(2) * h;
        }
        [self.k.powf(1.5) * g.sqrt(), self.k.powf(0.5) * dg.sqrt()]
    }

    /// `[k^{-1/2} ||F(y,.)||, k^{-3/2} ||d_y F(y,.)||]` for the smooth part.
    pub fn f_l2_constants(&self, grid: &Grid) -> [f64; 2] {
        let h = grid.h();
        let (mut f, mut df) = (0.0, 0.0);
        for m in 0..grid.n() {
            let z = grid.node(m);
            f += self.f_kernel(0.0, z).smooth.powi(2) * h;
            df += self.f_dy(0.0, z).powi(2) * h;
        }
        [self.k.powf(-0.5) * f.sqrt(), self.k.powf(-1.5) * df.sqrt()]
    }
}

/// Options for assembling the modified Green's function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModifiedOptions {
    /// Drop the potential, reducing to the discrete Helmholtz Green.
    pub zero_potential: bool,
    pub check: WeightCheck,
}

impl Default for ModifiedOptions {
    fn default() -> Self {
        ModifiedOptions { zero_potential: false, check: WeightCheck::Enforce }
    }
}

/// Modified Green's function on the grid, `matrix[m, n] ~ G(y_m, z_n)`.
#[derive(Clone, Debug)]
pub struct ModifiedGreen {
    pub grid: Grid,
    pub j: usize,
    pub k: f64,
    pub delta: f64,
    pub delta0: f64,
    pub center: f64,
    pub potential: Array1<C64>,
    pub matrix: Array2<C64>,
    /// `G - G_k` solved from the same discrete operator; smooth in both
    /// indices, so it is the only part differentiated spectrally.
    pub remainder: Array2<C64>,
    pub max_residual: f64,
    pub symmetry_defect: f64,
    pub min_re_potential: f64,
}

impl ModifiedGreen {
    pub fn re_potential_nonnegative(&self) -> bool {
        self.min_re_potential >= 0.0
    }

    fn standard(&self) -> StandardGreen {
        StandardGreen { k: self.k, period: self.grid.period() }
    }

    /// Closed-form `d_y G_k` on the grid, zero on the diagonal.
    fn standard_dy(&self) -> Array2<C64> {
        let (g, grid) = (self.standard(), &self.grid);
        Array2::from_shape_fn((grid.n(), grid.n()), |(m, q)| C64::new(g.dy(grid.node(m), grid.node(q)), 0.0))
    }

    fn d1(&self) -> Array2<C64> {
        linalg::to_complex(&self.grid.diff_matrix(1))
    }

    /// `d_y G`: closed form for `G_k`, spectral for the remainder.
    pub fn dy(&self) -> Array2<C64> {
        self.standard_dy() + &self.d1().dot(&self.remainder)
    }

    /// `d_z G`: closed form for `G_k`, spectral for the remainder.
    pub fn dz(&self) -> Array2<C64> {
        self.remainder.dot(&self.d1().t()) - &self.standard_dy()
    }
}

/// Cutoff bracket `phi0((y - y*)/delta0) - phi0((y - y*)/delta)`.
pub fn cutoff_bracket(y: f64, center: f64, period: f64, delta0: f64, delta: f64) -> f64 {
    let x = periodic_offset(y, center, period);
    phi0(x / delta0) - phi0(x / delta)
}

/// Localized potential `b'' / (b - lambda - i alpha) * bracket`. Nodes within
/// `1e-10` of a real crossing are evaluated half a cell away.
pub fn modified_potential(
    profile: &ShearProfile,
    grid: &Grid,
    point: &SpectralPoint,
    j: usize,
    delta: f64,
) -> Array1<C64> {
    let center = profile.critical_points()[j];
    let delta0 = profile.delta0();
    let p = grid.period();
    grid.nodes().mapv(|y| {
        let eta = cutoff_bracket(y, center, p, delta0, delta);
        if eta == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let mut yy = y;
        let slope = profile.derivative(y, 1).abs().max(f64::MIN_POSITIVE);
        if point.alpha == 0.0 && (profile.value(y) - point.lambda).abs() / slope < 1e-10 {
            yy = y + 0.5 * grid.h();
        }
        let den = C64::new(profile.value(yy) - point.lambda, -point.alpha);
        profile.derivative(yy, 2) * eta / den
    })
}

/// Assemble `k^2 - d^2 + V`, invert it and check the column residuals and
/// the symmetry of the result. `delta` is the localization scale of the point.
pub fn green_modified(
    profile: &ShearProfile,
    grid: &Grid,
    point: &SpectralPoint,
    j: usize,
    delta: f64,
    opts: ModifiedOptions,
) -> Result<ModifiedGreen> {
    let bound = profile.period() / 8.0;
    if opts.check == WeightCheck::Enforce && delta > bound {
        return Err(Error::DeltaTooLarge { delta, bound });
    }
    let k = point.kf();
    let potential = if opts.zero_potential { grid.zeros() } else { modified_potential(profile, grid, point, j, delta) };
    let op = modified_operator(grid, k, &potential);
    let lu = DenseLu::new(&op).map_err(|e| e.with_context("modified Green operator"))?;
    let h = grid.h();
    let inverse = lu.inverse();
    let matrix = inverse.mapv(|z| z / h);
    let prod = op.dot(&matrix).mapv(|z| z * h);
    let mut max_residual: f64 = 0.0;
    for (n, col) in prod.columns().into_iter().enumerate() {
        let mut r = col.to_owned();
        r[n] -= 1.0;
        max_residual = max_residual.max(linalg::norm2(r.view()));
    }
    let gmax = linalg::max_abs_matrix(matrix.view());
    let symmetry_defect = linalg::max_abs_matrix((&matrix - &matrix.t()).view()) / gmax;
    let min_re_potential = potential.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
    let standard = linalg::to_complex(&StandardGreen { k, period: grid.period() }.matrix(grid));
    let source = linalg::scale_rows(&potential.mapv(|v| -v), &standard);
    let remainder = inverse.dot(&source);
    Ok(ModifiedGreen {
        grid: grid.clone(),
        j,
        k,
        delta,
        delta0: profile.delta0(),
        center: profile.critical_points()[j],
        potential,
        matrix,
        remainder,
        max_residual,
        symmetry_defect,
        min_re_potential,
    })
}

/// Dense `k^2 - d^2 + diag(V)`.
pub fn modified_operator(grid: &Grid, k: f64, potential: &Array1<C64>) -> Array2<C64> {
    let mut op = linalg::to_complex(&grid.diff_matrix(2)).mapv(|z| -z);
    let diag = potential.mapv(|v| v + k * k);
    linalg::add_diag(&mut op, &diag);
    op
}

fn h_cutoff(green: &ModifiedGreen, derivative: bool) -> Array1<C64> {
    let (p, r) = (green.grid.period(), 10.0 * green.delta);
    green.grid.sample(|y| {
        let s = periodic_offset(y, green.center, p) / r;
        C64::new(if derivative { phi0_derivative(s) / r } else { phi0(s) }, 0.0)
    })
}

/// `H = d_z G + phi0((y - y*)/(10 delta)) d_y G`.
pub fn h_kernel(green: &ModifiedGreen) -> Array2<C64> {
    green.dz() + &linalg::scale_rows(&h_cutoff(green, false), &green.dy())
}

/// `d_y H`. The `G_k` contribution `(phi - 1) d_y G_k` is differentiated in
/// closed form off the diagonal, where `d_y^2 G_k = k^2 G_k`.
pub fn h_kernel_dy(green: &ModifiedGreen) -> Array2<C64> {
    let (cut, dcut) = (h_cutoff(green, false), h_cutoff(green, true));
    let d1 = green.d1();
    let r_dy = d1.dot(&green.remainder);
    let smooth = green.remainder.dot(&d1.t()) + &linalg::scale_rows(&cut, &r_dy);
    let g = green.standard();
    let grid = &green.grid;
    let closed = Array2::from_shape_fn((grid.n(), grid.n()), |(m, q)| {
        let (y, z) = (grid.node(m), grid.node(q));
        let phi = cut[m].re;
        C64::new(dcut[m].re * g.dy(y, z) + (phi - 1.0) * g.k * g.k * g.value(y, z), 0.0)
    });
    d1.dot(&smooth) + &closed
}

/// Fitted constants for the weighted bounds on `G`, `H` and `(d_y + d_z) G`,
/// indexed by the number of `y` derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenBounds {
    pub green: [f64; 2],
    pub h: [f64; 2],
    pub sum: [f64; 2],
}

fn bound_envelope(decay: f64, num: f64, den: f64, other_num: f64, other_den: f64) -> f64 {
    decay.min(num / den).min(other_num / other_den)
}

struct BoundKernels {
    green: [Array2<C64>; 2],
    h: [Array2<C64>; 2],
    sum: [Array2<C64>; 2],
}

/// Kernels entering the bounds, indexed by the number of `y` derivatives.
fn bound_kernels(green: &ModifiedGreen) -> BoundKernels {
    let d1 = green.d1();
    let sum0 = d1.dot(&green.remainder) + &green.remainder.dot(&d1.t());
    BoundKernels {
        green: [green.matrix.clone(), green.dy()],
        h: [h_kernel(green), h_kernel_dy(green)],
        sum: [sum0.clone(), d1.dot(&sum0)],
    }
}

/// Smallest constants for which the weighted envelopes dominate the kernels
/// on the grid. The `H` bound is evaluated for `z` within `4 delta` of the
/// critical point.
pub fn fit_bounds(profile: &ShearProfile, green: &ModifiedGreen) -> Result<GreenBounds> {
    fit_bounds_refined(profile, green, None)
}

/// As [`fit_bounds`], skipping pairs the grid does not resolve: a pair counts
/// only if its kernel-to-envelope ratio moves by at most
/// `RESOLUTION_TOLERANCE * min(ratio, 1)` on a grid with twice the nodes,
/// throughout its 3x3 neighbourhood.
pub fn fit_bounds_refined(
    profile: &ShearProfile,
    green: &ModifiedGreen,
    fine: Option<&ModifiedGreen>,
) -> Result<GreenBounds> {
    let grid = &green.grid;
    let n = grid.n();
    if let Some(f) = fine {
        if f.grid.n() != 2 * n {
            return Err(Error::Shape(format!("refinement needs {} nodes, got {}", 2 * n, f.grid.n())));
        }
    }
    let w = WeightField::new(profile, green.delta, green.k, green.j, grid, WeightCheck::Override)?;
    let kernels = bound_kernels(green);
    let (rho, rho_k, k) = (&w.rho, &w.rho_k, green.k);
    // Ratio scale (weight over envelope) per kernel family, beta and pair.
    let scales = |m: usize, q: usize, beta: usize| -> [f64; 3] {
        let dist = grid.distance(grid.node(m), grid.node(q));
        let env = bound_envelope((-k * dist).exp(), rho[m].powi(2), rho[q].powi(2), rho[q], rho[m]);
        let env_sum = bound_envelope((-0.5 * k * dist).exp(), rho_k[m], rho[q], rho_k[q], rho[m]);
        let wy = rho_k[m].powi(beta as i32);
        [wy / (rho_k[q] * env), wy / env, wy / env_sum]
    };
    let families = |b: &BoundKernels| [b.green.clone(), b.h.clone(), b.sum.clone()];
    let coarse = families(&kernels);
    let masks: Option<Vec<[Array2<bool>; 2]>> = fine.map(|f| {
        let fine = families(&bound_kernels(f));
        (0..3)
            .map(|fam| {
                [0, 1].map(|beta| {
                    erode_mask(&Array2::from_shape_fn((n, n), |(m, q)| {
                        let s = scales(m, q, beta)[fam];
                        let r = s * coarse[fam][beta][[m, q]].norm();
                        let drift = s * (coarse[fam][beta][[m, q]] - fine[fam][beta][[2 * m, 2 * q]]).norm();
                        drift <= RESOLUTION_TOLERANCE * r.min(1.0)
                    }))
                })
            })
            .collect()
    });
    let mut best = [[0.0f64; 2]; 3];
    for m in 0..n {
        for q in 0..n {
            let in_layer = grid.distance(grid.node(q), green.center) <= 4.0 * green.delta;
            for beta in 0..2 {
                let s = scales(m, q, beta);
                for fam in 0..3 {
                    if fam == 1 && !in_layer {
                        continue;
                    }
                    if masks.as_ref().is_some_and(|mk| !mk[fam][beta][[m, q]]) {
                        continue;
                    }
                    best[fam][beta] = best[fam][beta].max(s[fam] * coarse[fam][beta][[m, q]].norm());
                }
            }
        }
    }
    let out = GreenBounds { green: best[0], h: best[1], sum: best[2] };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;
    use std::f64::consts::PI;

    #[test]
    fn closed_form_values() {
        let g = green_standard(1.0, 8.0).unwrap();
        assert!((g.value(0.3, 0.3) - 0.5 / 4f64.tanh()).abs() < 1e-14);
        assert!((g.value(0.3, 0.3) - 0.500_335).abs() < 1e-6);
        assert_eq!(g.value(1.0, 3.0), g.value(3.0, 1.0));
        assert!(green_standard(0.5, 8.0).is_err());
    }

    #[test]
    fn fourier_coefficients_oracle() {
        // int G(y, 0) e^{-i l y} dy = 1/(k^2 + l^2), split at the kink
        for k in [1.0, 3.0] {
            let g = green_standard(k, 8.0).unwrap();
            for m in 0..4 {
                let l = 2.0 * PI * m as f64 / 8.0;
                let f = |y: f64| C64::new(0.0, -l * y).exp() * g.value(y, 0.0);
                let v = quadrature::integrate(f, 0.0, 4.0, 1e-13).unwrap()
                    + quadrature::integrate(f, 4.0, 8.0, 1e-13).unwrap();
                assert!((v - 1.0 / (k * k + l * l)).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn derivative_jump_is_unit() {
        let g = green_standard(2.0, 8.0).unwrap();
        let jump = g.dy(1e-12, 0.0) - g.dy(-1e-12, 0.0);
        assert!((jump + 1.0).abs() < 1e-9);
        let fd = (g.value(1.0 + 1e-6, 0.0) - g.value(1.0 - 1e-6, 0.0)) / 2e-6;
        assert!((fd - g.dy(1.0, 0.0)).abs() < 1e-8);
    }

    #[test]
    fn zero_potential_is_discrete_helmholtz() {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        let grid = Grid::new(128, 8.0).unwrap();
        let pt = SpectralPoint::new(0.0, 0.0, 1e-3, 2);
        let opts = ModifiedOptions { zero_potential: true, check: WeightCheck::Override };
        let m = green_modified(&p, &grid, &pt, 0, 0.5, opts).unwrap();
        let want = grid.helmholtz_inverse_matrix(2.0).unwrap().mapv(|v| -v / grid.h());
        let diff = linalg::max_abs_matrix((&m.matrix - &linalg::to_complex(&want)).view());
        assert!(diff < 1e-8, "diff {diff}");
        assert!(m.max_residual < 1e-8 && m.symmetry_defect < 1e-7);
        let closed = green_standard(2.0, 8.0).unwrap().matrix(&grid);
        // impulse discretization converges at first order against the closed form
        let e = linalg::max_abs_matrix((&m.matrix - &linalg::to_complex(&closed)).view());
    assert!(e < grid.h(), "closed-form gap {e} vs h {}", grid.h());
    }

    #[test]
    fn h_kernel_away_from_center_is_dz() {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        let grid = Grid::new(64, 8.0).unwrap();
        let pt = SpectralPoint::new(0.99, 0.0, 1e-3, 1);
        let opts = ModifiedOptions { zero_potential: false, check: WeightCheck::Override };
        let m = green_modified(&p, &grid, &pt, 0, 0.05, opts).unwrap();
        let h = h_kernel(&m);
        let dz = m.dz();
        let far = grid.nearest_node(6.0);
        for q in 0..grid.n() {
            assert_eq!(h[[far, q]], dz[[far, q]]);
        }
    }

    #[test]
    fn delta_bound_enforced() {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        let grid = Grid::new(32, 8.0).unwrap();
        let pt = SpectralPoint::new(0.99, 0.0, 1e-3, 1);
        let r = green_modified(&p, &grid, &pt, 0, 1.5, ModifiedOptions::default());
        assert!(matches!(r, Err(Error::DeltaTooLarge { .. })));
    }
}
