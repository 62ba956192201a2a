//! The generalized Airy operator `A = eps d^2 + i(lambda - b) - alpha`:
//! application, inversion, fundamental solution, length scales, kernel
//! envelopes, the singular decomposition near crossings, and the special
//! function `W`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::background::Background;
use crate::cutoff::phi0;
use crate::error::{Error, Result};
use crate::grid::{periodic_offset, ComplexField};
use crate::linalg::{self, DenseLu};
use crate::profile::{KernelRegime, ParamGeometry, ShearProfile, SpectralPoint, WeightField};
use crate::quadrature;

/// Default admissible negative shift, in units of `eps^{1/2}`.
pub const SIGMA0_DEFAULT: f64 = 0.05;

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn check_alpha(point: &SpectralPoint, sigma0: f64) -> Result<()> {
    let floor = -sigma0 * point.epsilon().sqrt();
    if point.alpha < floor {
        return Err(Error::AlphaOutOfRange { alpha: point.alpha, floor });
    }
    Ok(())
}

/// Multiplication part `i(lambda - b) - alpha` on the grid.
pub fn potential(bg: &Background, point: &SpectralPoint) -> Array1<C64> {
    bg.b.mapv(|b| C64::new(-point.alpha, point.lambda - b))
}

/// `(nu/k) f'' + (i(lambda - b) - alpha) f` by spectral differentiation.
pub fn apply_a(bg: &Background, point: &SpectralPoint, field: &ComplexField) -> ComplexField {
    let d2 = bg.grid.fourier_diff(field, 2);
    d2.mapv(|z| z * point.epsilon()) + &potential(bg, point) * field
}

/// Dense spectral matrix of the Airy operator.
pub fn airy_matrix(bg: &Background, point: &SpectralPoint) -> Array2<C64> {
    let mut a = linalg::to_complex(&bg.grid.diff_matrix(2)).mapv(|z| z * point.epsilon());
    linalg::add_diag(&mut a, &potential(bg, point));
    a
}

/// Factorized Airy operator for repeated solves.
pub struct AirySolver {
    lu: DenseLu,
}

impl AirySolver {
    pub fn new(bg: &Background, point: &SpectralPoint, sigma0: f64) -> Result<Self> {
        check_alpha(point, sigma0)?;
        let lu = DenseLu::new(&airy_matrix(bg, point))
            .map_err(|e| e.with_context(format!("Airy operator, lambda = {}", point.lambda)))?;
        Ok(AirySolver { lu })
    }

    pub fn solve(&self, rhs: &ComplexField) -> ComplexField {
        self.lu.solve(rhs)
    }

    /// `A^{-1}` as a dense matrix.
    pub fn inverse(&self) -> Array2<C64> {
        self.lu.inverse()
    }

    pub fn rcond(&self) -> f64 {
        self.lu.rcond()
    }
}

pub fn solve_a(bg: &Background, point: &SpectralPoint, rhs: &ComplexField, sigma0: f64) -> Result<ComplexField> {
    Ok(AirySolver::new(bg, point, sigma0)?.solve(rhs))
}

/// Fundamental solution sampled on grid pairs, `values[m, n] ~ k(y_m, z_n)`.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub values: Array2<C64>,
    pub h: f64,
    /// Largest relative column residual of `A k(., z_n) = delta_n`.
    pub max_residual: f64,
    /// Pairs where the samples agree with a grid of half the spacing; `None`
    /// treats every pair as resolved.
    pub resolved: Option<Array2<bool>>,
}

impl KernelMatrix {
    /// Mark the pairs on which `fine` (same period, twice the nodes) agrees
    /// to [`RESOLUTION_TOLERANCE`].
    pub fn refine_against(mut self, fine: &KernelMatrix) -> Result<Self> {
        self.resolved = Some(resolved_pairs(&self.values, &fine.values)?);
        Ok(self)
    }

    fn is_resolved(&self, m: usize, q: usize) -> bool {
        self.resolved.as_ref().is_none_or(|r| r[[m, q]])
    }

    /// Quadrature action `sum_n K[m, n] f_n h`.
    pub fn apply(&self, f: &ComplexField) -> ComplexField {
        self.values.dot(f).mapv(|z| z * self.h)
    }
}

pub fn airy_kernel(bg: &Background, point: &SpectralPoint, sigma0: f64) -> Result<KernelMatrix> {
    let solver = AirySolver::new(bg, point, sigma0)?;
    let h = bg.grid.h();
    let values = solver.inverse().mapv(|z| z / h);
    let a = airy_matrix(bg, point);
    let prod = a.dot(&values).mapv(|z| z * h);
    let mut max_residual: f64 = 0.0;
    for (n, col) in prod.columns().into_iter().enumerate() {
        let mut r = col.to_owned();
        r[n] -= 1.0;
        max_residual = max_residual.max(linalg::norm2(r.view()));
    }
    Ok(KernelMatrix { values, h, max_residual, resolved: None })
}

/// Relative disagreement with the refined grid below which a sample counts as
/// grid-converged.
pub const RESOLUTION_TOLERANCE: f64 = 0.1;

/// `|coarse - fine| <= tol |coarse|` on the shared nodes, where `fine` lives
/// on the grid with twice the nodes (coarse node `m` is fine node `2m`).
/// The result is eroded by [`erode_mask`].
pub fn resolved_pairs(coarse: &Array2<C64>, fine: &Array2<C64>) -> Result<Array2<bool>> {
    let n = coarse.nrows();
    if fine.nrows() != 2 * n || fine.ncols() != 2 * coarse.ncols() {
        return Err(Error::Shape(format!("refined kernel is {:?}, expected twice {:?}", fine.dim(), coarse.dim())));
    }
    Ok(erode_mask(&Array2::from_shape_fn(coarse.dim(), |(m, q)| {
        let c = coarse[[m, q]];
        (c - fine[[2 * m, 2 * q]]).norm() <= RESOLUTION_TOLERANCE * c.norm()
    })))
}

/// Keep a pair only if its periodic 3x3 neighbourhood is kept, so that
/// isolated points where two unresolved samples happen to cross are dropped.
pub fn erode_mask(mask: &Array2<bool>) -> Array2<bool> {
    let (r, c) = mask.dim();
    Array2::from_shape_fn((r, c), |(m, q)| {
        (0..3).all(|a| (0..3).all(|b| mask[[(m + r + a - 1) % r, (q + c + b - 1) % c]]))
    })
}

fn bracket(values: &[f64]) -> f64 {
    (1.0 + values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Local Airy length scales around critical point `j` and in the
/// nondegenerate regime.
#[derive(Clone, Debug)]
pub struct AiryScale {
    pub l_j: Array1<f64>,
    pub l_nondegenerate: Array1<f64>,
}

pub fn airy_scales(bg: &Background, point: &SpectralPoint, critical_value: f64) -> AiryScale {
    let eps = point.epsilon();
    let gap = (point.lambda - critical_value).abs();
    let l_j = if gap >= eps.sqrt() {
        let s = eps.powf(-1.0 / 3.0) * gap.powf(-1.0 / 3.0);
        bg.b.mapv(|b| eps.powf(1.0 / 3.0) * gap.powf(-1.0 / 6.0) / bracket(&[s * (point.lambda - b), s * point.alpha]).sqrt())
    } else {
        let s = eps.powf(-0.5);
        bg.b.mapv(|b| eps.powf(0.25) / bracket(&[s * (point.lambda - b), s * point.alpha]).sqrt())
    };
    let s = eps.powf(-1.0 / 3.0);
    let l_nondegenerate =
        bg.b.mapv(|b| eps.powf(1.0 / 3.0) / bracket(&[s * (point.lambda - b), s * point.alpha]).sqrt());
    AiryScale { l_j, l_nondegenerate }
}

/// Exponents of the kernel envelope, interpolating continuously between the
/// nondegenerate (`beta = 0`) and viscous (`beta = 1/4`) forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeShape {
    pub beta: f64,
    pub eps: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl EnvelopeShape {
    pub fn new(regime: KernelRegime, beta: f64, point: &SpectralPoint) -> Self {
        let beta = match regime {
            KernelRegime::Nondegenerate => 0.0,
            KernelRegime::Viscous => 0.25,
            KernelRegime::Intermediate => beta,
        };
        EnvelopeShape { beta, eps: point.epsilon(), alpha: point.alpha, lambda: point.lambda }
    }

    pub fn from_geometry(geometry: &ParamGeometry, point: &SpectralPoint) -> Self {
        Self::new(geometry.kernel_regime, geometry.beta, point)
    }

    pub fn prefactor_power(&self) -> f64 {
        -(2.0 + self.beta) / 3.0
    }

    fn bracket_scale(&self) -> f64 {
        self.eps.powf(-(1.0 + 2.0 * self.beta) / 3.0)
    }

    fn distance_scale(&self) -> f64 {
        self.eps.powf(-(1.0 - self.beta) / 3.0)
    }

    /// `eps^p / <s alpha, s (b(z) - lambda)>^{1/2}`.
    pub fn prefactor(&self, bz: f64) -> f64 {
        let s = self.bracket_scale();
        self.eps.powf(self.prefactor_power()) / bracket(&[s * self.alpha, s * (bz - self.lambda)]).sqrt()
    }

    /// Decay argument multiplying `-c0`.
    pub fn decay(&self, by: f64, bz: f64, dist: f64) -> f64 {
        let s = self.bracket_scale();
        bracket(&[s * self.alpha, s * (by - self.lambda), s * (bz - self.lambda)]).sqrt() * dist * self.distance_scale()
    }

    pub fn value(&self, c: f64, c0: f64, by: f64, bz: f64, dist: f64) -> f64 {
        c * self.prefactor(bz) * (-c0 * self.decay(by, bz, dist)).exp()
    }
}

/// Envelope `E(y, z)` on all grid pairs.
pub fn envelope(bg: &Background, shape: &EnvelopeShape, c: f64, c0: f64) -> Array2<f64> {
    let n = bg.n();
    let grid = &bg.grid;
    Array2::from_shape_fn((n, n), |(m, q)| {
        shape.value(c, c0, bg.b[m], bg.b[q], grid.distance(grid.node(m), grid.node(q)))
    })
}

/// Fitted envelope constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub c: f64,
    pub c0: f64,
    pub pairs: usize,
}

/// Relative magnitude below which kernel entries are treated as round-off.
const KERNEL_FLOOR: f64 = 1e-10;

fn kernel_samples(kernel: &KernelMatrix, bg: &Background, shape: &EnvelopeShape) -> Vec<(f64, f64)> {
    let grid = &bg.grid;
    let n = bg.n();
    let kmax = linalg::max_abs_matrix(kernel.values.view());
    let mut out = Vec::with_capacity(n * n);
    for m in 0..n {
        for q in 0..n {
            let v = kernel.values[[m, q]].norm();
            if v <= KERNEL_FLOOR * kmax || !kernel.is_resolved(m, q) {
                continue;
            }
            let dist = grid.distance(grid.node(m), grid.node(q));
            let lhs = (v / shape.prefactor(bg.b[q])).ln();
            out.push((shape.decay(bg.b[m], bg.b[q], dist), lhs));
        }
    }
    out
}

/// Fit `(C, c0)` by least squares on the upper hull of `log|K| - log(prefactor)`
/// against the decay argument, then lift `C` so the bound holds on every pair.
pub fn fit_envelope(kernel: &KernelMatrix, bg: &Background, shape: &EnvelopeShape) -> EnvelopeFit {
    let samples = kernel_samples(kernel, bg, shape);
    let qmax = samples.iter().fold(0.0f64, |m, s| m.max(s.0));
    let bins = 48;
    let mut hull = vec![f64::NEG_INFINITY; bins];
    for &(q, l) in &samples {
        let b = ((q / qmax.max(f64::MIN_POSITIVE)) * bins as f64).floor().min(bins as f64 - 1.0) as usize;
        hull[b] = hull[b].max(l);
    }
    let pts: Vec<(f64, f64)> = hull
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, &v)| ((i as f64 + 0.5) / bins as f64 * qmax, v))
        .collect();
    let c0 = if pts.len() >= 2 {
        let (slope, _) = least_squares_line(&pts);
        (-slope).max(1e-3)
    } else {
        1e-3
    };
    let c = samples.iter().map(|&(q, l)| (l + c0 * q).exp()).fold(0.0, f64::max);
    EnvelopeFit { c, c0, pairs: samples.len() }
}

/// Smallest `C` for which `|K| <= C E` holds on every pair at fixed `c0`.
pub fn envelope_constant(kernel: &KernelMatrix, bg: &Background, shape: &EnvelopeShape, c0: f64) -> f64 {
    kernel_samples(kernel, bg, shape).iter().map(|&(q, l)| (l + c0 * q).exp()).fold(0.0, f64::max)
}

/// Smallest `C` with `|k(z,z)| <= C * prefactor(z)`.
pub fn diagonal_constant(kernel: &KernelMatrix, bg: &Background, shape: &EnvelopeShape) -> f64 {
    (0..bg.n()).map(|q| kernel.values[[q, q]].norm() / shape.prefactor(bg.b[q])).fold(0.0, f64::max)
}

pub(crate) fn least_squares_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Modulus of `i(lambda - b) + |alpha| + eps^{1/2} + eps^{1/3} |lambda - b_j|^{1/3}`.
pub fn combined_multiplier(bg: &Background, point: &SpectralPoint, critical_value: f64) -> Array1<f64> {
    let eps = point.epsilon();
    let re = point.alpha.abs() + eps.sqrt() + eps.powf(1.0 / 3.0) * (point.lambda - critical_value).abs().powf(1.0 / 3.0);
    bg.b.mapv(|b| C64::new(re, point.lambda - b).norm())
}

/// Ratio `|| w A^{-1} h ||_p / || w h / multiplier ||_p` for the weight
/// `w = rho^s1 rho_k^s2 multiplier^s3`; `p = f64::INFINITY` selects the max norm.
pub fn weighted_solve_ratio(
    bg: &Background,
    point: &SpectralPoint,
    weights: &WeightField,
    critical_value: f64,
    sigma: (f64, f64, f64),
    h: &ComplexField,
    p: f64,
    sigma0: f64,
) -> Result<f64> {
    let u = solve_a(bg, point, h, sigma0)?;
    let mult = combined_multiplier(bg, point, critical_value);
    let w = Array1::from_shape_fn(bg.n(), |m| {
        weights.rho[m].powf(sigma.0) * weights.rho_k[m].powf(sigma.1) * mult[m].powf(sigma.2)
    });
    let lp = |vals: Array1<f64>| -> f64 {
        if p.is_infinite() {
            vals.iter().fold(0.0, |m: f64, v| m.max(*v))
        } else {
            (vals.iter().map(|v| v.powf(p)).sum::<f64>() * bg.grid.h()).powf(1.0 / p)
        }
    };
    let num = lp(Array1::from_shape_fn(bg.n(), |m| w[m] * u[m].norm()));
    let den = lp(Array1::from_shape_fn(bg.n(), |m| w[m] * h[m].norm() / mult[m]));
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// The special function `W(y) = -int_{-inf}^0 e^{i y xi} exp(xi^3/3 + c xi) d xi`,
/// solving `W'' - i y W - c W = 1`.
#[derive(Clone, Copy, Debug)]
pub struct WFunction {
    pub c: f64,
}

/// Absolute accuracy requested from the quadrature.
pub const W_TOLERANCE: f64 = 1e-10;
/// Beyond this |y| the two-term asymptotic expansion is used.
const W_ASYMPTOTIC_FROM: f64 = 60.0;

impl WFunction {
    pub fn new(c: f64, sigma0: f64) -> Result<Self> {
        if c < -sigma0 {
            return Err(Error::AlphaOutOfRange { alpha: c, floor: -sigma0 });
        }
        Ok(WFunction { c })
    }

    fn truncation(&self) -> f64 {
        if self.c < 0.0 {
            20f64.max(4.0 / self.c.abs().sqrt())
        } else {
            20.0
        }
    }

    pub fn eval(&self, y: f64) -> Result<C64> {
        if y.abs() >= W_ASYMPTOTIC_FROM {
            let z = C64::new(self.c, y);
            return Ok(-1.0 / z + 2.0 / z.powu(4));
        }
        let c = self.c;
        let integrand = |xi: f64| C64::new(xi * xi * xi / 3.0 + c * xi, y * xi).exp();
        // The integrand is below 1e-30 well before xi = -7; integrate the
        // significant part tightly and confirm the remainder is negligible.
        let cut = -7.0f64.max(-self.truncation());
        let main = quadrature::integrate(integrand, cut, 0.0, 0.1 * W_TOLERANCE)?;
        let tail = quadrature::integrate(integrand, -self.truncation(), cut, 0.1 * W_TOLERANCE)?;
        Ok(-(main + tail))
    }

    pub fn eval_many(&self, ys: &[f64]) -> Result<Vec<C64>> {
        ys.iter().map(|&y| self.eval(y)).collect()
    }
}

/// Evaluate `W` for parameter `c` at the sample points.
pub fn w_special(c: f64, ys: &[f64], sigma0: f64) -> Result<Vec<C64>> {
    WFunction::new(c, sigma0)?.eval_many(ys)
}

/// `max_y |W(y) - 1/(1 - i y)| (1 + y^2)` over the samples.
pub fn w_residual_constant(w: &WFunction, ys: &[f64]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for &y in ys {
        let v = w.eval(y)?;
        best = best.max((v - 1.0 / C64::new(1.0, -y)).norm() * (1.0 + y * y));
    }
    Ok(best)
}

/// Split of `A^{-1} h` near the two crossings `b = lambda` around critical
/// point `j` into a regular part and an explicit singular part.
#[derive(Clone, Debug)]
pub struct SingularDecomposition {
    pub w1: ComplexField,
    pub w2: ComplexField,
    pub model: ComplexField,
    /// Crossings on the left and right of the critical point.
    pub crossings: (f64, f64),
    /// `M = ||h||_2 + d_jk ||h'||_2`.
    pub m_norm: f64,
    /// `max |w2 - model| / (right side of the model bound)`.
    pub model_ratio: f64,
    /// `max |w1| / (right side of the regular-part bound)`.
    pub regular_ratio: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn singular_decomposition(
    profile: &ShearProfile,
    bg: &Background,
    point: &SpectralPoint,
    geometry: &ParamGeometry,
    h: &ComplexField,
    j: usize,
    m_visc: f64,
    sigma0: f64,
) -> Result<SingularDecomposition> {
    let eps = point.epsilon();
    let bj = profile.critical_values()[j];
    let gap = (point.lambda - bj).abs();
    if gap <= m_visc * eps.sqrt() {
        return Err(Error::RegimeMismatch(format!(
            "|lambda - b_j| = {gap:e} is within the viscous layer {:e}",
            m_visc * eps.sqrt()
        )));
    }
    let crossings = profile.crossings_near(j, point.lambda).ok_or_else(|| {
        Error::RegimeMismatch(format!("lambda = {} has no crossings next to critical point {}", point.lambda, j + 1))
    })?;
    let grid = &bg.grid;
    let p = grid.period();
    let full = solve_a(bg, point, h, sigma0)?;
    let width = gap.sqrt();
    let mut w2 = grid.zeros();
    let mut model = grid.zeros();
    let mut amplitudes = Vec::new();
    for &yc in &[crossings.0, crossings.1] {
        let slope = profile.derivative(yc, 1);
        let hc = grid.interpolate(h, yc);
        amplitudes.push(hc.norm());
        let mu = eps.powf(-1.0 / 3.0) * slope.abs().powf(1.0 / 3.0);
        let pref = eps.powf(-1.0 / 3.0) * slope.abs().powf(-2.0 / 3.0);
        let w = WFunction::new(pref * point.alpha, sigma0)?;
        let reg = eps.powf(1.0 / 3.0) * gap.powf(1.0 / 3.0);
        for m in 0..grid.n() {
            let x = periodic_offset(grid.node(m), yc, p);
            let cut = phi0(2.0 * x / width);
            if cut == 0.0 {
                continue;
            }
            let arg = slope.signum() * x * mu;
            w2[m] += hc * pref * w.eval(arg)? * cut;
            model[m] += hc * cut / (-I * slope * x + reg);
        }
    }
    let w1 = &full - &w2;
    let weights = WeightField::new(profile, geometry.delta, point.kf(), j, grid, crate::profile::WeightCheck::Override)?;
    let d = weights.d_jk;
    let dh = grid.fourier_diff(h, 1);
    let m_norm = grid.l2_norm(h) + d * grid.l2_norm(&dh);
    let scale_model = eps.powf(1.0 / 3.0) * gap.powf(-1.0 / 6.0);
    let mut model_ratio: f64 = 0.0;
    let mut regular_ratio: f64 = 0.0;
    if m_norm > 0.0 {
        for m in 0..grid.n() {
            let y = grid.node(m);
            let mut rhs_model = 0.0;
            let mut rhs_reg = 1.0 / (d.sqrt() * gap) * m_norm;
            for &yc in &[crossings.0, crossings.1] {
                let x = grid.distance(y, yc);
                rhs_model += gap.powf(-0.5) * eps.powf(-1.0 / 3.0) * gap.powf(1.0 / 6.0)
                    / (1.0 + (x / scale_model).powi(2))
                    / d.sqrt()
                    * m_norm;
                rhs_reg += 1.0 / (d * gap.sqrt()) / x.max(0.5 * grid.h()).sqrt() * m_norm;
            }
            model_ratio = model_ratio.max((w2[m] - model[m]).norm() / rhs_model);
            regular_ratio = regular_ratio.max(w1[m].norm() / rhs_reg);
        }
    }
    Ok(SingularDecomposition { w1, w2, model, crossings, m_norm, model_ratio, regular_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    fn gamma_one_third() -> f64 {
        2.678_938_534_707_747_6
    }

    #[test]
    fn w_at_zero_matches_gamma_oracle() {
        let w = WFunction::new(0.0, SIGMA0_DEFAULT).unwrap();
        let want = -(3f64).powf(-2.0 / 3.0) * gamma_one_third();
        assert!((w.eval(0.0).unwrap().re - want).abs() < 1e-9);
        assert!(w.eval(0.0).unwrap().im.abs() < 1e-12);
    }

    #[test]
    fn w_solves_its_ode() {
        let c = 0.3;
        let w = WFunction::new(c, SIGMA0_DEFAULT).unwrap();
        let h = 1e-3;
        for y in [-3.0, -0.5, 0.7, 4.0] {
            let (wm, w0, wp) = (w.eval(y - h).unwrap(), w.eval(y).unwrap(), w.eval(y + h).unwrap());
            let d2 = (wp - 2.0 * w0 + wm) / (h * h);
            let r = d2 - I * y * w0 - c * w0 - 1.0;
            assert!(r.norm() < 1e-3, "residual {r} at {y}");
        }
    }

    #[test]
    fn w_asymptotic_branch_is_continuous() {
        let w = WFunction::new(0.0, SIGMA0_DEFAULT).unwrap();
        let inner = w.eval(W_ASYMPTOTIC_FROM - 1e-9).unwrap();
        let outer = w.eval(W_ASYMPTOTIC_FROM).unwrap();
        assert!((inner - outer).norm() < 1e-9);
        assert!(WFunction::new(-0.1, 0.05).is_err());
    }

    #[test]
    fn constant_flow_symbol() {
        let grid = Grid::new(64, 8.0).unwrap();
        let bg = Background::uniform(&grid, 0.3);
        let point = SpectralPoint::new(0.3, 0.1, 0.01, 1);
        let f = grid.sample(|y| C64::new(0.0, 2.0 * PI * y / 8.0).exp());
        let af = apply_a(&bg, &point, &f);
        let sym = -(0.01 * (PI / 4.0).powi(2) + 0.1);
        assert!((sym + 0.106_168_5).abs() < 1e-7);
        assert!(linalg::max_abs((&af - &f.mapv(|z| z * sym)).view()) < 1e-12);
        let x = solve_a(&bg, &point, &f, SIGMA0_DEFAULT).unwrap();
        assert!(linalg::max_abs((&x - &f.mapv(|z| z / sym)).view()) < 1e-10);
        assert!((1.0 / sym + 9.4190).abs() < 1e-4);
    }

    #[test]
    fn alpha_floor_enforced() {
        let grid = Grid::new(32, 8.0).unwrap();
        let bg = Background::uniform(&grid, 0.0);
        let point = SpectralPoint::new(0.0, -0.01, 1e-2, 1);
        assert!(matches!(solve_a(&bg, &point, &grid.zeros(), 0.05), Err(Error::AlphaOutOfRange { .. })));
    }

    #[test]
    fn erosion_drops_isolated_pairs() {
        let mut mask = Array2::from_elem((6, 6), true);
        mask[[0, 0]] = false;
        let e = erode_mask(&mask);
        assert!(!e[[5, 5]] && !e[[1, 1]] && !e[[0, 1]]);
        assert!(e[[2, 2]] && e[[3, 4]]);
        let lone = Array2::from_shape_fn((5, 5), |(m, q)| m == 2 && q == 2);
        assert!(!erode_mask(&lone).iter().any(|&b| b));
    }

    #[test]
    fn envelope_prefactor_limits() {
        let eps = 1e-3;
        let pt = SpectralPoint::new(0.0, 0.0, eps, 1);
        let nd = EnvelopeShape::new(KernelRegime::Nondegenerate, 0.1, &pt);
        assert!((nd.prefactor(0.0) - eps.powf(-2.0 / 3.0)).abs() < 1e-9 * eps.powf(-2.0 / 3.0));
        let v = EnvelopeShape::new(KernelRegime::Viscous, 0.0, &pt);
        assert!((v.prefactor(0.0) - eps.powf(-0.75)).abs() < 1e-9 * eps.powf(-0.75));
        let mid = EnvelopeShape::new(KernelRegime::Intermediate, 0.25, &pt);
        assert!((mid.prefactor_power() + 0.75).abs() < 1e-15);
    }
}
