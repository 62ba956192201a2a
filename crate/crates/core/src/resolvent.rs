//! The linearized operator `L_{k,nu}`, the spectral density (resolvent
//! applied to initial vorticity) and the operator `T` whose invertibility
//! gives the limiting absorption principle.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::airy::{airy_matrix, AirySolver};
use crate::background::Background;
use crate::cutoff::phi0;
use crate::error::{Error, Result};
use crate::green::{green_modified, ModifiedGreen, ModifiedOptions};
use crate::grid::{periodic_offset, ComplexField, Grid};
use crate::linalg::{self, DenseLu};
use crate::profile::{ParamGeometry, ShearProfile, SpectralPoint, WeightCheck};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Dense `Delta_k^{-1} = (d^2 - k^2)^{-1}`.
pub fn helmholtz_inverse(grid: &Grid, k: f64) -> Result<Array2<C64>> {
    Ok(linalg::to_complex(&grid.helmholtz_inverse_matrix(k)?))
}

/// Inviscid operator `b - b'' Delta_k^{-1}` (real, acting on vorticity).
pub fn assemble_inviscid(bg: &Background, k: f64) -> Result<Array2<C64>> {
    let dinv = helmholtz_inverse(&bg.grid, k)?;
    let mut l = linalg::scale_rows(&bg.d2b.mapv(|v| C64::new(-v, 0.0)), &dinv);
    linalg::add_diag(&mut l, &bg.b.mapv(|v| C64::new(v, 0.0)));
    Ok(l)
}

/// `L_{k,nu} = (nu/k) d^2 - i b + i b'' Delta_k^{-1}`; without `nu` the
/// inviscid operator is returned.
pub fn assemble_lk(bg: &Background, k: f64, nu: Option<f64>) -> Result<Array2<C64>> {
    if k < 1.0 {
        return Err(Error::ZeroMode);
    }
    let inviscid = assemble_inviscid(bg, k)?;
    match nu {
        None => Ok(inviscid),
        Some(nu) => {
            let d2 = linalg::to_complex(&bg.grid.diff_matrix(2));
            Ok(d2.mapv(|z| z * (nu / k)) - inviscid.mapv(|z| z * I))
        }
    }
}

/// Cutoff sum `sum_j phi0((y - y_j)/delta0)` on the grid.
pub fn critical_cutoff(profile: &ShearProfile, grid: &Grid) -> Array1<f64> {
    let (p, d0) = (profile.period(), profile.delta0());
    grid.sample_real(|y| profile.critical_points().iter().map(|&c| phi0(periodic_offset(y, c, p) / d0)).sum())
}

/// Solution of the resolvent problem at one spectral point.
#[derive(Clone, Debug)]
pub struct SpectralDensity {
    pub omega: ComplexField,
    pub psi: ComplexField,
    /// `psi` with the critical-point singular profile removed.
    pub psi_star: ComplexField,
    /// Forcing of the equation satisfied by the modified density.
    pub f0k: ComplexField,
    /// `||omega_0||` in the `k`-weighted `H^3` norm.
    pub m_k: f64,
    /// Relative residual of `(d^2 - k^2) psi = omega`.
    pub helmholtz_residual: f64,
    /// Relative residual of `A omega + i b'' psi = omega_0`.
    pub equation_residual: f64,
}

/// `||g||_{H^m_k}` with `sum_j k^{2(m-j)} ||d^j g||^2`.
pub fn hmk_norm(grid: &Grid, g: &ComplexField, k: f64, m: u32) -> f64 {
    (0..=m)
        .map(|j| {
            let d = if j == 0 { g.clone() } else { grid.fourier_diff(g, j) };
            k.powi(2 * (m - j) as i32) * grid.l2_norm(&d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn rel(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Solve the coupled system for `(omega, psi)` given `omega_0`.
pub fn spectral_density(
    profile: &ShearProfile,
    bg: &Background,
    point: &SpectralPoint,
    omega0: &ComplexField,
    sigma_sharp: f64,
) -> Result<SpectralDensity> {
    point.validate(sigma_sharp)?;
    let grid = &bg.grid;
    let k = point.kf();
    let dinv = helmholtz_inverse(grid, k)?;
    let ib2 = bg.d2b.mapv(|v| C64::new(0.0, v));
    let mut sys = airy_matrix(bg, point);
    sys = sys + linalg::scale_rows(&ib2, &dinv);
    let lu = DenseLu::new(&sys).map_err(|e| {
        Error::NodeFailure { lambda: point.lambda, reason: format!("resolvent system singular ({e})") }
    })?;
    let omega = lu.solve(omega0);
    let psi = grid.invert_helmholtz(&omega, k)?;
    let lap = grid.fourier_diff(&psi, 2) - &psi.mapv(|z| z * k * k);
    let helmholtz_residual = rel(linalg::norm2((&lap - &omega).view()), linalg::norm2(omega.view()));
    let lhs = crate::airy::apply_a(bg, point, &omega) + &(&ib2 * &psi);
    let equation_residual = rel(linalg::norm2((&lhs - omega0).view()), linalg::norm2(omega0.view()));
    let cut = critical_cutoff(profile, grid);
    let singular = Array1::from_shape_fn(grid.n(), |m| {
        if cut[m] == 0.0 {
            C64::new(0.0, 0.0)
        } else {
            cut[m] * omega0[m] / ib2[m]
        }
    });
    let psi_star = &psi - &singular;
    let lap_sing = grid.fourier_diff(&singular, 2) - &singular.mapv(|z| z * k * k);
    let f0k = omega0 - &(omega0 * &cut.mapv(|c| C64::new(c, 0.0))) - &crate::airy::apply_a(bg, point, &lap_sing);
    Ok(SpectralDensity {
        omega,
        psi,
        psi_star,
        f0k,
        m_k: hmk_norm(grid, omega0, k, 3),
        helmholtz_residual,
        equation_residual,
    })
}

/// Which definition of `T` is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Formulation {
    /// `T = Delta_k^{-1} A^{-1} (i b'' .)`.
    Nondegenerate,
    /// Modified-Green form localized at critical point `j`.
    Degenerate { j: usize },
}

/// Formulation prescribed by the spectral windows: degenerate when lambda lies
/// in a window and `alpha < delta0`.
pub fn default_formulation(profile: &ShearProfile, point: &SpectralPoint, geometry: &ParamGeometry) -> Formulation {
    if point.alpha < profile.delta0() {
        for j in 0..2 {
            if geometry.in_sigma[j] {
                return Formulation::Degenerate { j };
            }
        }
    }
    Formulation::Nondegenerate
}

/// The four pieces of the degenerate `T`.
#[derive(Clone, Debug)]
pub struct TPieces {
    pub i1: Array2<C64>,
    pub i2: Array2<C64>,
    pub v1: Array2<C64>,
    pub v2: Array2<C64>,
}

impl TPieces {
    /// `-i T_I1 - i T_I2 - i T_v1 - T_v2`.
    pub fn combine(&self) -> Array2<C64> {
        (&self.i1 + &self.i2 + &self.v1).mapv(|z| -I * z) - &self.v2
    }
}

#[derive(Clone, Debug)]
pub struct TOperator {
    pub matrix: Array2<C64>,
    pub formulation: Formulation,
    pub delta: f64,
    pub pieces: Option<TPieces>,
    pub green: Option<ModifiedGreen>,
    /// Degenerate: `max |T - combine(pieces)| / max |T|`. Nondegenerate:
    /// relative defect of `A Delta_k T = i b''`.
    pub identity_defect: f64,
    /// Whether the inner cutoff `phi0(./(delta/3))` vanishes wherever the
    /// localizer is nonzero, which the piecewise identity needs.
    pub decomposition_exact: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TOptions {
    /// `None` uses [`default_formulation`].
    pub formulation: Option<Formulation>,
    pub check: WeightCheck,
    pub sigma0: f64,
}

impl Default for TOptions {
    fn default() -> Self {
        TOptions { formulation: None, check: WeightCheck::Enforce, sigma0: crate::airy::SIGMA0_DEFAULT }
    }
}

pub fn assemble_t(
    profile: &ShearProfile,
    bg: &Background,
    point: &SpectralPoint,
    geometry: &ParamGeometry,
    opts: TOptions,
) -> Result<TOperator> {
    let grid = &bg.grid;
    let k = point.kf();
    let formulation = opts.formulation.unwrap_or_else(|| default_formulation(profile, point, geometry));
    let airy = AirySolver::new(bg, point, opts.sigma0)?;
    let ainv = airy.inverse();
    let b2 = bg.d2b.mapv(|v| C64::new(v, 0.0));
    match formulation {
        Formulation::Nondegenerate => {
            let dinv = helmholtz_inverse(grid, k)?;
            let ib2 = b2.mapv(|z| z * I);
            let matrix = dinv.dot(&linalg::scale_cols(&ainv, &ib2));
            // A Delta_k T should reproduce diag(i b'')
            let a = airy_matrix(bg, point);
            let d2 = linalg::to_complex(&grid.diff_matrix(2));
            let mut lap = d2;
            linalg::add_diag(&mut lap, &Array1::from_elem(grid.n(), C64::new(-k * k, 0.0)));
            let mut back = a.dot(&lap.dot(&matrix));
            let scale = linalg::max_abs(ib2.view()).max(f64::MIN_POSITIVE);
            linalg::add_diag(&mut back, &ib2.mapv(|z| -z));
            let identity_defect = linalg::max_abs_matrix(back.view()) / scale;
            Ok(TOperator {
                matrix,
                formulation,
                delta: geometry.delta,
                pieces: None,
                green: None,
                identity_defect,
                decomposition_exact: true,
            })
        }
        Formulation::Degenerate { j } => {
            let delta = geometry.delta;
            let green = green_modified(profile, grid, point, j, delta, ModifiedOptions { zero_potential: false, check: opts.check })?;
            let h = grid.h();
            // integral operator with kernel G is G * h on the grid
            let g = green.matrix.mapv(|z| z * h);
            let (p, d0) = (profile.period(), profile.delta0());
            let center = profile.critical_points()[j];
            let offs = grid.nodes().mapv(|y| periodic_offset(y, center, p));
            let outer = offs.mapv(|x| phi0(x / d0));
            let inner = offs.mapv(|x| phi0(x / delta));
            let chi = offs.mapv(|x| phi0(x / (delta / 3.0)));
            let eta = &outer - &inner;
            let real = |v: &Array1<f64>| v.mapv(|x| C64::new(x, 0.0));
            let a_eta = linalg::scale_cols(&ainv, &(&b2 * &real(&eta)));
            let i1 = g.dot(&linalg::scale_cols(&ainv, &(&b2 * &real(&outer.mapv(|c| 1.0 - c)))));
            let i2 = g.dot(&linalg::scale_cols(&ainv, &(&b2 * &real(&inner))));
            let v1 = g.dot(&linalg::scale_rows(&real(&chi), &a_eta));
            let d2 = linalg::to_complex(&grid.diff_matrix(2)).mapv(|z| z * point.epsilon());
            let damp = Array1::from_shape_fn(grid.n(), |m| {
                let w = 1.0 - chi[m];
                if w == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    w / C64::new(bg.b[m] - point.lambda, -point.alpha)
                }
            });
            let v2 = g.dot(&linalg::scale_rows(&damp, &d2.dot(&a_eta)));
            let pieces = TPieces { i1, i2, v1, v2 };
            let inner_term = linalg::scale_cols(&ainv, &b2.mapv(|z| z * I));
            let mut bracket = inner_term;
            linalg::add_diag(&mut bracket, &green.potential);
            let matrix = g.dot(&bracket).mapv(|z| -z);
            let scale = linalg::max_abs_matrix(matrix.view()).max(f64::MIN_POSITIVE);
            let identity_defect = linalg::max_abs_matrix((&matrix - &pieces.combine()).view()) / scale;
            let decomposition_exact = chi.iter().zip(eta.iter()).all(|(c, e)| *c == 0.0 || *e == 0.0);
            Ok(TOperator {
                matrix,
                formulation,
                delta,
                pieces: Some(pieces),
                green: Some(green),
                identity_defect,
                decomposition_exact,
            })
        }
    }
}

impl TOperator {
    /// `I + T`.
    pub fn shifted(&self) -> Array2<C64> {
        let mut m = self.matrix.clone();
        let n = m.nrows();
        linalg::add_diag(&mut m, &Array1::from_elem(n, C64::new(1.0, 0.0)));
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{param_geometry, GeometryConfig};
    use std::f64::consts::PI;

    fn setup(n: usize) -> (ShearProfile, Background) {
        let p = ShearProfile::kolmogorov(8.0).unwrap();
        let grid = Grid::new(n, 8.0).unwrap();
        let bg = Background::new(&p, &grid);
        (p, bg)
    }

    fn bump(grid: &Grid) -> ComplexField {
        grid.sample(|y| C64::new((-(y - 4.0).powi(2)).exp() * (PI * y / 4.0).cos(), 0.0))
    }

    #[test]
    fn zero_flow_gives_zero_inviscid_operator() {
        let grid = Grid::new(32, 8.0).unwrap();
        let bg = Background::uniform(&grid, 0.0);
        let l = assemble_lk(&bg, 1.0, None).unwrap();
        assert_eq!(linalg::max_abs_matrix(l.view()), 0.0);
    }

    #[test]
    fn resolvent_identity() {
        let (p, bg) = setup(128);
        let pt = SpectralPoint::new(0.3, 0.01, 1e-3, 1);
        let w0 = bump(&bg.grid);
        let d = spectral_density(&p, &bg, &pt, &w0, 0.02).unwrap();
        let l = assemble_lk(&bg, 1.0, Some(1e-3)).unwrap();
        let lhs = d.omega.mapv(|z| z * C64::new(-pt.alpha, pt.lambda)) + &l.dot(&d.omega);
        assert!(linalg::norm2((&lhs - &w0).view()) / linalg::norm2(w0.view()) < 1e-8);
        assert!(d.helmholtz_residual < 1e-9 && d.equation_residual < 1e-8);
    }

    #[test]
    fn decoupled_without_curvature() {
        let (p, bg) = setup(64);
        let bg = bg.without_curvature();
        let pt = SpectralPoint::new(0.3, 0.01, 1e-3, 2);
        let w0 = bump(&bg.grid);
        let d = spectral_density(&p, &bg, &pt, &w0, 0.02).unwrap();
        let want = crate::airy::solve_a(&bg, &pt, &w0, 0.05).unwrap();
        assert!(linalg::max_abs((&d.omega - &want).view()) < 1e-10);
        let zero = spectral_density(&p, &bg, &pt, &bg.grid.zeros(), 0.02).unwrap();
        assert_eq!(linalg::max_abs(zero.omega.view()), 0.0);
    }

    #[test]
    fn nondegenerate_route_matches_density() {
        let (p, bg) = setup(128);
        let pt = SpectralPoint::new(0.3, 0.01, 1e-3, 1);
        let geom = param_geometry(&p, &pt, &GeometryConfig::default());
        let t = assemble_t(&p, &bg, &pt, &geom, TOptions::default()).unwrap();
        assert_eq!(t.formulation, Formulation::Nondegenerate);
        assert!(t.identity_defect < 1e-7, "defect {}", t.identity_defect);
        let w0 = bump(&bg.grid);
        let d = spectral_density(&p, &bg, &pt, &w0, 0.02).unwrap();
        let ainv_w0 = crate::airy::solve_a(&bg, &pt, &w0, 0.05).unwrap();
        let rhs = bg.grid.invert_helmholtz(&ainv_w0, 1.0).unwrap();
        let psi = linalg::solve(&t.shifted(), &rhs).unwrap();
        assert!(linalg::norm2((&psi - &d.psi).view()) / linalg::norm2(d.psi.view()) < 1e-6);
    }

    #[test]
    fn degenerate_pieces_recombine() {
        let (p, bg) = setup(128);
        let pt = SpectralPoint::new(1.0 - 1e-4, 0.0, 1e-6, 1);
        let cfg = GeometryConfig { c_dagger: 1.0, ..GeometryConfig::default() };
        let geom = param_geometry(&p, &pt, &cfg);
        let opts = TOptions { check: WeightCheck::Enforce, ..TOptions::default() };
        let t = assemble_t(&p, &bg, &pt, &geom, opts).unwrap();
        assert_eq!(t.formulation, Formulation::Degenerate { j: 0 });
        assert!(t.decomposition_exact, "delta {} delta0 {}", t.delta, p.delta0());
        assert!(t.identity_defect < 1e-8, "defect {}", t.identity_defect);
    }

    #[test]
    fn no_curvature_gives_zero_t() {
        let (p, bg) = setup(64);
        let bg = bg.without_curvature();
        let pt = SpectralPoint::new(0.3, 0.01, 1e-3, 1);
        let geom = param_geometry(&p, &pt, &GeometryConfig::default());
        let t = assemble_t(&p, &bg, &pt, &geom, TOptions::default()).unwrap();
        assert_eq!(linalg::max_abs_matrix(t.matrix.view()), 0.0);
    }
}
