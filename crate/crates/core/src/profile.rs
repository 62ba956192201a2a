//! Background shear profiles, their critical structure, and the parameter
//! geometry (localization radii, spectral windows, weights).

use std::f64::consts::PI;
use std::path::PathBuf;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{periodic_distance, periodic_offset, Grid};

/// Smallest |b''| accepted at a critical point.
pub const CURVATURE_FLOOR: f64 = 1e-3;
/// Tolerance on |b'| at located critical points.
pub const ROOT_TOLERANCE: f64 = 1e-12;

/// How a profile is specified in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ProfileDescriptor {
    Kolmogorov { period: f64 },
    /// Uniform samples of one period; `y,b` CSV with a header row.
    Table { path: PathBuf, order: usize },
}

#[derive(Clone, Debug)]
enum Shape {
    Kolmogorov,
    Spline(PeriodicSpline),
}

/// A periodic background flow `b(y)` with exactly two non-degenerate
/// critical points.
#[derive(Clone, Debug)]
pub struct ShearProfile {
    period: f64,
    shape: Shape,
    label: String,
    critical_points: [f64; 2],
    critical_values: [f64; 2],
    curvatures: [f64; 2],
    c4_norm: f64,
    kappa: f64,
    delta0: f64,
}

impl ShearProfile {
    pub fn kolmogorov(period: f64) -> Result<Self> {
        if !(period > 2.0 * PI) {
            return Err(Error::PeriodTooSmall { period });
        }
        Self::finish(period, Shape::Kolmogorov, format!("kolmogorov(p={period})"))
    }

    /// Build from uniform samples `values[m] = b(m p / N)` using a periodic
    /// interpolating spline of odd degree `order` (3 or 5).
    pub fn from_samples(values: &[f64], period: f64, order: usize) -> Result<Self> {
        if !(period > 2.0 * PI) {
            return Err(Error::PeriodTooSmall { period });
        }
        let spline = PeriodicSpline::new(values, period, order)?;
        Self::finish(period, Shape::Spline(spline), format!("table(n={}, order={order})", values.len()))
    }

    pub fn build(descriptor: &ProfileDescriptor) -> Result<Self> {
        match descriptor {
            ProfileDescriptor::Kolmogorov { period } => Self::kolmogorov(*period),
            ProfileDescriptor::Table { path, order } => {
                let (period, values) = read_table(path)?;
                Self::from_samples(&values, period, *order)
            }
        }
    }

    fn finish(period: f64, shape: Shape, label: String) -> Result<Self> {
        let mut profile = ShearProfile {
            period,
            shape,
            label,
            critical_points: [0.0; 2],
            critical_values: [0.0; 2],
            curvatures: [0.0; 2],
            c4_norm: 0.0,
            kappa: 0.0,
            delta0: 0.0,
        };
        let roots = profile.locate_critical_points();
        if roots.len() != 2 {
            return Err(Error::WrongCriticalCount { found: roots.len() });
        }
        for &y in &roots {
            let c = profile.derivative(y, 2);
            if c.abs() < CURVATURE_FLOOR {
                return Err(Error::DegenerateCritical { position: y, curvature: c.abs(), floor: CURVATURE_FLOOR });
            }
        }
        // Order the critical points so that the maximum comes first.
        let mut pts = [roots[0], roots[1]];
        if profile.value(pts[0]) < profile.value(pts[1]) {
            pts.swap(0, 1);
        }
        profile.critical_points = pts;
        profile.critical_values = [profile.value(pts[0]), profile.value(pts[1])];
        profile.curvatures = [profile.derivative(pts[0], 2), profile.derivative(pts[1], 2)];
        profile.c4_norm = profile.compute_c4_norm();
        let min_curv = profile.curvatures[0].abs().min(profile.curvatures[1].abs());
        let max_curv = profile.curvatures[0].abs().max(profile.curvatures[1].abs());
        profile.kappa = min_curv.min(1.0 / profile.c4_norm.max(max_curv)).min(1.0 - 1e-12);
        profile.delta0 = profile.choose_delta0();
        Ok(profile)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Critical points, maximum first.
    pub fn critical_points(&self) -> [f64; 2] {
        self.critical_points
    }

    pub fn critical_values(&self) -> [f64; 2] {
        self.critical_values
    }

    /// `b''` at the critical points.
    pub fn curvatures(&self) -> [f64; 2] {
        self.curvatures
    }

    /// Largest structure constant compatible with the curvature and
    /// derivative bounds.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn c4_norm(&self) -> f64 {
        self.c4_norm
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    /// Whether a candidate structure constant satisfies the profile bounds.
    pub fn is_admissible_kappa(&self, kappa: f64) -> bool {
        kappa > 0.0
            && kappa < 1.0
            && self.curvatures.iter().all(|c| c.abs() >= kappa && c.abs() <= 1.0 / kappa)
            && self.c4_norm <= 1.0 / kappa
    }

    /// Half-width of the spectral window around the critical value `j`.
    pub fn sigma_half_width(&self, j: usize) -> f64 {
        self.curvatures[j].abs() * self.delta0 * self.delta0 / 16.0
    }

    pub fn in_sigma(&self, j: usize, lambda: f64) -> bool {
        (lambda - self.critical_values[j]).abs() <= self.sigma_half_width(j)
    }

    pub fn value(&self, y: f64) -> f64 {
        self.derivative(y, 0)
    }

    /// `m`-th derivative of `b` at `y`, `m <= 4`.
    pub fn derivative(&self, y: f64, m: u32) -> f64 {
        match &self.shape {
            Shape::Kolmogorov => {
                let w = 2.0 * PI / self.period;
                let phase = w * y;
                let s = match m % 4 {
                    0 => phase.sin(),
                    1 => phase.cos(),
                    2 => -phase.sin(),
                    _ => -phase.cos(),
                };
                w.powi(m as i32) * s
            }
            Shape::Spline(sp) => sp.derivative(y, m),
        }
    }

    /// Sample `b^{(m)}` on a grid.
    pub fn sample(&self, grid: &Grid, m: u32) -> Array1<f64> {
        grid.sample_real(|y| self.derivative(y, m))
    }

    /// Roots of `b - lambda` nearest to the critical point `j` on each side
    /// (left, right), searched within half a period.
    pub fn crossings_near(&self, j: usize, lambda: f64) -> Option<(f64, f64)> {
        let yc = self.critical_points[j];
        let f = |s: f64| self.value(yc + s) - lambda;
        let half = 0.5 * self.period;
        let steps = 4096;
        let ds = half / steps as f64;
        let find = |dir: f64| -> Option<f64> {
            let mut a = 0.0;
            let mut fa = f(0.0);
            for i in 1..=steps {
                let b = dir * i as f64 * ds;
                let fb = f(b);
                if fa == 0.0 && i == 1 {
                    return Some(0.0);
                }
                if fa * fb <= 0.0 {
                    let (mut lo, mut hi) = if dir > 0.0 { (a, b) } else { (b, a) };
                    let flo = f(lo);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if (f(mid) > 0.0) == (flo > 0.0) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if hi - lo < 1e-15 {
                            break;
                        }
                    }
                    return Some(0.5 * (lo + hi));
                }
                a = b;
                fa = fb;
            }
            None
        };
        let left = find(-1.0)?;
        let right = find(1.0)?;
        Some((yc + left, yc + right))
    }

    fn locate_critical_points(&self) -> Vec<f64> {
        let samples = 8192;
        let h = self.period / samples as f64;
        let db = |y: f64| self.derivative(y, 1);
        let mut roots: Vec<f64> = Vec::new();
        for i in 0..samples {
            let a = i as f64 * h;
            let b = a + h;
            let (fa, fb) = (db(a), db(b));
            if fa == 0.0 {
                roots.push(a);
                continue;
            }
            if fa * fb < 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if (db(mid) > 0.0) == (fa > 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-14 {
                        break;
                    }
                }
                let mut y = 0.5 * (lo + hi);
                for _ in 0..3 {
                    let c = self.derivative(y, 2);
                    if c == 0.0 {
                        break;
                    }
                    let step = db(y) / c;
                    if step.abs() > h {
                        break;
                    }
                    y -= step;
                }
                roots.push(y.rem_euclid(self.period));
            }
        }
        roots.retain(|y| db(*y).abs() <= ROOT_TOLERANCE.max(1e-10));
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.dedup_by(|a, b| periodic_distance(*a, *b, self.period) < 1e-9);
        roots
    }

    fn compute_c4_norm(&self) -> f64 {
        match self.shape {
            Shape::Kolmogorov => (0..=4).map(|m| (2.0 * PI / self.period).powi(m)).fold(0.0, f64::max),
            Shape::Spline(_) => {
                let samples = 16384;
                let h = self.period / samples as f64;
                let mut best: f64 = 0.0;
                for m in 0..=4 {
                    for i in 0..samples {
                        best = best.max(self.derivative(i as f64 * h, m).abs());
                    }
                }
                best
            }
        }
    }

    /// Largest `(1/8) 0.95^m`, `m >= 1`, satisfying the separation and
    /// third-derivative conditions around both critical points.
    fn choose_delta0(&self) -> f64 {
        let sep = periodic_distance(self.critical_points[0], self.critical_points[1], self.period);
        let mut d = 0.125 * 0.95;
        for _ in 0..400 {
            let mut ok = sep > 10.0 * d;
            for j in 0..2 {
                let yc = self.critical_points[j];
                let samples = 256;
                let mut sup: f64 = 0.0;
                for i in 0..=samples {
                    let y = yc - 4.0 * d + 8.0 * d * i as f64 / samples as f64;
                    sup = sup.max(self.derivative(y, 3).abs());
                }
                ok &= sup * d < self.curvatures[j].abs() / 10.0;
            }
            if ok {
                return d;
            }
            d *= 0.95;
        }
        d
    }
}

fn read_table(path: &PathBuf) -> Result<(f64, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut ys = Vec::new();
    let mut bs = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Io(format!("{}: malformed row {:?}", path.display(), rec)))
        };
        ys.push(parse(0)?);
        bs.push(parse(1)?);
    }
    if ys.len() < 8 {
        return Err(Error::Io(format!("{}: need at least 8 samples", path.display())));
    }
    let h = ys[1] - ys[0];
    Ok((h * ys.len() as f64, bs))
}

/// Periodic interpolating spline of odd degree on a uniform grid, expressed
/// in centered cardinal B-splines.
#[derive(Clone, Debug)]
pub struct PeriodicSpline {
    period: f64,
    degree: usize,
    coeffs: Vec<f64>,
}

impl PeriodicSpline {
    pub fn new(values: &[f64], period: f64, degree: usize) -> Result<Self> {
        let n = values.len();
        if degree % 2 == 0 || !(3..=7).contains(&degree) {
            return Err(Error::ConfigInvalid {
                field: "profile.order".into(),
                line: None,
                message: format!("spline order {degree} must be 3, 5 or 7"),
            });
        }
        if n < 2 * degree + 2 || n % 2 != 0 {
            return Err(Error::Shape(format!("{n} samples are too few or odd for a degree-{degree} spline")));
        }
        let grid = Grid::new(n, period)?;
        let half = (degree as i64 + 1) / 2;
        let mut kernel = Array1::<C64>::zeros(n);
        for k in -half..=half {
            let v = bspline(degree, k as f64, 0);
            kernel[(k.rem_euclid(n as i64)) as usize] += C64::new(v, 0.0);
        }
        let khat = grid.forward(&kernel);
        let fhat = grid.forward(&Array1::from_iter(values.iter().map(|&v| C64::new(v, 0.0))));
        let chat = &fhat / &khat;
        let coeffs = grid.inverse(&chat).iter().map(|z| z.re).collect();
        Ok(PeriodicSpline { period, degree, coeffs })
    }

    pub fn derivative(&self, y: f64, m: u32) -> f64 {
        let n = self.coeffs.len();
        let h = self.period / n as f64;
        let x = y.rem_euclid(self.period) / h;
        let reach = (self.degree + 1) / 2 + 1;
        let center = x.floor() as i64;
        let mut acc = 0.0;
        for j in center - reach as i64..=center + reach as i64 {
            let c = self.coeffs[j.rem_euclid(n as i64) as usize];
            acc += c * bspline(self.degree, x - j as f64, m);
        }
        acc / h.powi(m as i32)
    }
}

/// `m`-th derivative of the centered cardinal B-spline of the given degree.
fn bspline(degree: usize, x: f64, m: u32) -> f64 {
    let m = m as usize;
    if m > degree {
        return 0.0;
    }
    let n1 = degree + 1;
    let shift = n1 as f64 / 2.0;
    let p = degree - m;
    let mut acc = 0.0;
    let mut binom = 1.0;
    for i in 0..=n1 {
        let t = x + shift - i as f64;
        if t > 0.0 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * t.powi(p as i32);
        }
        binom = binom * (n1 - i) as f64 / (i + 1) as f64;
    }
    acc / factorial(p)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// The parameter bundle `(lambda, alpha, nu, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub lambda: f64,
    pub alpha: f64,
    pub nu: f64,
    pub k: u32,
}

impl SpectralPoint {
    pub fn new(lambda: f64, alpha: f64, nu: f64, k: u32) -> Self {
        SpectralPoint { lambda, alpha, nu, k }
    }

    pub fn kf(&self) -> f64 {
        self.k as f64
    }

    pub fn epsilon(&self) -> f64 {
        self.nu / self.k as f64
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        SpectralPoint { lambda, ..self }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        SpectralPoint { alpha, ..self }
    }

    /// Check `k >= 1`, `0 < eps < 1/8` and `alpha >= -floor * eps^{1/2}`.
    pub fn validate(&self, alpha_floor: f64) -> Result<()> {
        if self.k == 0 {
            return Err(Error::ZeroMode);
        }
        let eps = self.epsilon();
        if !(eps > 0.0 && eps < 0.125) {
            return Err(Error::Shape(format!("nu/k = {eps} must lie in (0, 1/8)")));
        }
        let floor = -alpha_floor * eps.sqrt();
        if self.alpha < floor {
            return Err(Error::AlphaOutOfRange { alpha: self.alpha, floor });
        }
        Ok(())
    }
}

/// Branch used for the localization machinery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Nondegenerate,
    AlphaDominated,
    Intermediate,
    Viscous,
}

impl Regime {
    /// Whether the degenerate (modified Green) formulation applies.
    pub fn is_degenerate(self) -> bool {
        matches!(self, Regime::Intermediate | Regime::Viscous)
    }
}

/// Kernel-scale regime of the Airy operator, independent of the spectral
/// windows: viscous below `m_visc eps^{1/2}`, nondegenerate once the gap to
/// the nearest critical value reaches `nondegenerate_gap`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRegime {
    Nondegenerate,
    Intermediate,
    Viscous,
}

/// Thresholds and calibrated constants entering the geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub c_dagger: f64,
    pub m_visc: f64,
    /// `None` uses `delta0`.
    pub alpha_dominated_at: Option<f64>,
    pub nondegenerate_gap: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { c_dagger: 10.0, m_visc: 4.0, alpha_dominated_at: None, nondegenerate_gap: 1.0 }
    }
}

/// Derived length scales and classification at a spectral point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGeometry {
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub c_dagger: f64,
    pub in_sigma: [bool; 2],
    pub regime: Regime,
    pub kernel_regime: KernelRegime,
    pub beta: f64,
    /// Index of the critical value closest to lambda.
    pub nearest: usize,
    /// `min_j |lambda - b(y_j)|`.
    pub gap: f64,
}

pub fn param_geometry(profile: &ShearProfile, point: &SpectralPoint, cfg: &GeometryConfig) -> ParamGeometry {
    let eps = point.epsilon();
    let gaps = [
        (point.lambda - profile.critical_values[0]).abs(),
        (point.lambda - profile.critical_values[1]).abs(),
    ];
    let nearest = if gaps[0] <= gaps[1] { 0 } else { 1 };
    let gap = gaps[nearest];
    let root = (0..2)
        .map(|j| (gaps[j] / profile.curvatures[j].abs()).sqrt())
        .fold(f64::INFINITY, f64::min);
    let delta1 = 8.0 * root;
    let delta2 = root / 8.0;
    let delta = point.alpha.abs().sqrt() + cfg.c_dagger * eps.powf(0.25) + delta1;
    let in_sigma = [profile.in_sigma(0, point.lambda), profile.in_sigma(1, point.lambda)];
    let visc_cut = cfg.m_visc * eps.sqrt();
    let alpha_cut = cfg.alpha_dominated_at.unwrap_or(profile.delta0);
    let regime = if point.alpha >= alpha_cut {
        Regime::AlphaDominated
    } else if gap <= visc_cut {
        Regime::Viscous
    } else if gap <= profile.sigma_half_width(nearest) {
        Regime::Intermediate
    } else {
        Regime::Nondegenerate
    };
    let kernel_regime = if gap <= visc_cut {
        KernelRegime::Viscous
    } else if gap >= cfg.nondegenerate_gap {
        KernelRegime::Nondegenerate
    } else {
        KernelRegime::Intermediate
    };
    ParamGeometry {
        delta,
        delta1,
        delta2,
        c_dagger: cfg.c_dagger,
        in_sigma,
        regime,
        kernel_regime,
        beta: beta_exponent(gap, eps),
        nearest,
        gap,
    }
}

/// Exponent with `gap = eps^{2 beta}`, clamped to `[0, 1/4]`.
pub fn beta_exponent(gap: f64, eps: f64) -> f64 {
    if gap <= 0.0 {
        return 0.25;
    }
    (gap.ln() / (2.0 * eps.ln())).clamp(0.0, 0.25)
}

/// Whether the bound `delta <= p/8` is enforced when building weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightCheck {
    Enforce,
    Override,
}

/// Grid-sampled weights attached to the critical point `j`.
#[derive(Clone, Debug)]
pub struct WeightField {
    pub j: usize,
    pub center: f64,
    pub delta: f64,
    pub k: f64,
    pub rho: Array1<f64>,
    pub rho_k: Array1<f64>,
    pub d_jk: f64,
}

impl WeightField {
    pub fn new(profile: &ShearProfile, delta: f64, k: f64, j: usize, grid: &Grid, check: WeightCheck) -> Result<Self> {
        let bound = profile.period / 8.0;
        if check == WeightCheck::Enforce && delta > bound {
            return Err(Error::DeltaTooLarge { delta, bound });
        }
        let center = profile.critical_points[j];
        let rho = grid.sample_real(|y| periodic_distance(y, center, profile.period) + delta);
        let rho_k = rho.mapv(|r| r.min(1.0 / k));
        Ok(WeightField { j, center, delta, k, rho, rho_k, d_jk: delta.min(1.0 / k) })
    }

    /// Weight `rho_j` at an arbitrary point.
    pub fn rho_at(&self, y: f64, period: f64) -> f64 {
        periodic_distance(y, self.center, period) + self.delta
    }

    /// Signed offset of `y` from the critical point.
    pub fn offset(&self, y: f64, period: f64) -> f64 {
        periodic_offset(y, self.center, period)
    }
}

/// Weights for the spectral point, enforcing `delta <= p/8` unless overridden.
pub fn weights(
    profile: &ShearProfile,
    geometry: &ParamGeometry,
    point: &SpectralPoint,
    j: usize,
    grid: &Grid,
    check: WeightCheck,
) -> Result<WeightField> {
    WeightField::new(profile, geometry.delta, point.kf(), j, grid, check)
}
