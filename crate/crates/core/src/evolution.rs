//! Time evolution of one x-Fourier mode of the linearized vorticity, by
//! direct integration and by synthesis from the spectral density along a
//! horizontal contour, plus reconstruction of physical-space fields.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::Background;
use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid};
use crate::linalg::{self, DenseLu};
use crate::resolvent::assemble_lk;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// `k L_{k,nu} - nu k^2`, the generator of the mode dynamics.
pub fn generator(bg: &Background, k: f64, nu: f64) -> Result<Array2<C64>> {
    let mut g = assemble_lk(bg, k, Some(nu))?.mapv(|z| z * k);
    let n = g.nrows();
    linalg::add_diag(&mut g, &Array1::from_elem(n, C64::new(-nu * k * k, 0.0)));
    Ok(g)
}

/// Vorticity and stream function of one mode at the stored times.
#[derive(Clone, Debug)]
pub struct EvolutionState {
    pub grid: Grid,
    pub k: f64,
    pub nu: f64,
    pub times: Vec<f64>,
    pub omega: Vec<ComplexField>,
    pub psi: Vec<ComplexField>,
}

impl EvolutionState {
    pub fn from_omega(grid: &Grid, k: f64, nu: f64, times: Vec<f64>, omega: Vec<ComplexField>) -> Result<Self> {
        let psi = omega.iter().map(|w| grid.invert_helmholtz(w, k)).collect::<Result<Vec<_>>>()?;
        Ok(EvolutionState { grid: grid.clone(), k, nu, times, omega, psi })
    }

    /// `u^x = -d_y psi`.
    pub fn ux(&self, i: usize) -> ComplexField {
        self.grid.fourier_diff(&self.psi[i], 1).mapv(|z| -z)
    }

    /// `u^y = i k psi`.
    pub fn uy(&self, i: usize) -> ComplexField {
        self.psi[i].mapv(|z| z * I * self.k)
    }

    /// Largest relative defect of `(d^2 - k^2) psi = omega` over stored times.
    pub fn helmholtz_defect(&self) -> f64 {
        self.omega
            .iter()
            .zip(&self.psi)
            .map(|(w, p)| {
                let lap = self.grid.fourier_diff(p, 2) - &p.mapv(|z| z * self.k * self.k);
                linalg::norm2((&lap - w).view()) / linalg::norm2(w.view()).max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Shape("times must be non-negative and non-decreasing".into()));
    }
    Ok(())
}

/// Time integrator for the direct route.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DirectMethod {
    /// Dense matrix exponential per distinct step.
    Exponential,
    /// Crank-Nicolson with step-doubling error control and extrapolation.
    CrankNicolson { tol: f64 },
}

impl DirectMethod {
    /// Exponential up to `N = 1024`, implicit stepping beyond.
    pub fn auto(n: usize) -> Self {
        if n <= 1024 {
            DirectMethod::Exponential
        } else {
            DirectMethod::CrankNicolson { tol: 1e-10 }
        }
    }
}

fn step_key(dt: f64) -> i64 {
    (dt * 1e12).round() as i64
}

pub fn evolve_direct(
    bg: &Background,
    k: f64,
    nu: f64,
    omega0: &ComplexField,
    times: &[f64],
    method: DirectMethod,
) -> Result<EvolutionState> {
    check_times(times)?;
    let g = generator(bg, k, nu)?;
    let mut out = Vec::with_capacity(times.len());
    let mut state = omega0.clone();
    let mut t = 0.0;
    match method {
        DirectMethod::Exponential => {
            let mut cache: HashMap<i64, Array2<C64>> = HashMap::new();
            for &target in times {
                let dt = target - t;
                if dt > 0.0 {
                    let key = step_key(dt);
                    if !cache.contains_key(&key) {
                        cache.insert(key, linalg::expm(&g.mapv(|z| z * dt))?);
                    }
                    state = cache[&key].dot(&state);
                }
                t = target;
                out.push(state.clone());
            }
        }
        DirectMethod::CrankNicolson { tol } => {
            let mut stepper = CrankNicolson::new(&g, tol);
            for &target in times {
                if target > t {
                    state = stepper.advance(&state, t, target)?;
                }
                t = target;
                out.push(state.clone());
            }
        }
    }
    EvolutionState::from_omega(&bg.grid, k, nu, times.to_vec(), out)
}

/// Crank-Nicolson steps `(I - dt/2 G) y = (I + dt/2 G) x` with step doubling.
struct CrankNicolson<'a> {
    g: &'a Array2<C64>,
    tol: f64,
    cache: HashMap<i64, (DenseLu, Array2<C64>)>,
}

/// Maximum number of step halvings before giving up.
const MAX_HALVINGS: u32 = 40;

impl<'a> CrankNicolson<'a> {
    fn new(g: &'a Array2<C64>, tol: f64) -> Self {
        CrankNicolson { g, tol, cache: HashMap::new() }
    }

    fn step(&mut self, x: &ComplexField, dt: f64) -> Result<ComplexField> {
        let key = step_key(dt);
        if !self.cache.contains_key(&key) {
            let n = self.g.nrows();
            let half = self.g.mapv(|z| z * (0.5 * dt));
            let eye = linalg::identity(n);
            let lu = DenseLu::new(&(&eye - &half)).map_err(|e| e.with_context("implicit step"))?;
            self.cache.insert(key, (lu, &eye + &half));
        }
        let (lu, rhs) = &self.cache[&key];
        Ok(lu.solve(&rhs.dot(x)))
    }

    fn advance(&mut self, x: &ComplexField, t0: f64, t1: f64) -> Result<ComplexField> {
        let span = t1 - t0;
        let mut level = 0u32;
        let mut state = x.clone();
        let mut done = 0.0;
        while done < span * (1.0 - 1e-14) {
            let dt = (span / 2f64.powi(level as i32)).min(span - done);
            let coarse = self.step(&state, dt)?;
            let half = self.step(&state, 0.5 * dt)?;
            let fine = self.step(&half, 0.5 * dt)?;
            let err = linalg::norm2((&fine - &coarse).view()) / 3.0 / linalg::norm2(fine.view()).max(f64::MIN_POSITIVE);
            if err > self.tol {
                level += 1;
                if level > MAX_HALVINGS {
                    return Err(Error::StepRejection { t: t0 + done, dt });
                }
                continue;
            }
            state = (fine.mapv(|z| z * 4.0) - &coarse).mapv(|z| z / 3.0);
            done += dt;
            if err < self.tol / 64.0 && level > 0 {
                level -= 1;
            }
        }
        Ok(state)
    }
}

/// Quadrature plan for synthesizing the evolution from the spectral density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourPlan {
    /// Horizontal contour `Im = alpha` of the spectral parameter.
    pub alpha: f64,
    pub spacing: f64,
    pub lambda_max: f64,
    /// Number of Neumann terms subtracted and integrated exactly.
    pub model_terms: usize,
    pub model_shift: f64,
    /// Relative tail estimate above which synthesis fails.
    pub tail_limit: f64,
}

impl ContourPlan {
    /// Default plan: spacing `pi/(32 k t_max)`, range `max|b| + 10`.
    pub fn new(bg: &Background, k: f64, alpha: f64, t_max: f64) -> Self {
        ContourPlan {
            alpha,
            spacing: std::f64::consts::PI / (32.0 * k * t_max.max(1e-3)),
            lambda_max: bg.max_abs_b() + 10.0,
            model_terms: 6,
            model_shift: 1.0,
            tail_limit: 1e-5,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let m = (self.lambda_max / self.spacing).ceil() as i64;
        (-m..=m).map(|i| i as f64 * self.spacing).collect()
    }
}

/// Densities at the quadrature nodes, kept for the local/nonlocal split.
#[derive(Clone, Debug)]
pub struct ContourData {
    pub lambdas: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row `j` holds `omega_{k,nu}(., lambda_j + i alpha)`.
    pub omega: Array2<C64>,
    pub psi: Array2<C64>,
}

/// Accuracy indicators of a synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourReport {
    pub nodes: usize,
    /// Neumann terms subtracted from the node densities.
    pub model_terms: usize,
    /// Largest estimated truncation tail relative to the synthesized norm
    /// at the same time.
    pub tail: f64,
    /// Relative change when every other node is dropped.
    pub halving: f64,
}

pub fn evolve_contour(
    bg: &Background,
    k: f64,
    nu: f64,
    omega0: &ComplexField,
    plan: &ContourPlan,
    times: &[f64],
) -> Result<(EvolutionState, ContourReport, ContourData)> {
    check_times(times)?;
    let grid = &bg.grid;
    let n = grid.n();
    let l = assemble_lk(bg, k, Some(nu))?;
    let (q, h) = linalg::hessenberg(&l);
    let rhs = q.t().mapv(|z| z.conj()).dot(omega0);
    let lambdas = plan.nodes();
    let nodes = lambdas.len();
    let mut weights = vec![plan.spacing; nodes];
    weights[0] *= 0.5;
    weights[nodes - 1] *= 0.5;

    let solved: Vec<ComplexField> = lambdas
        .par_iter()
        .map_init(
            || Array2::<C64>::zeros((n, n)),
            |work, &lambda| {
                let shift = C64::new(-plan.alpha, lambda);
                linalg::hessenberg_shifted_solve(&h, shift, &rhs, work)
                    .map(|x| q.dot(&x))
                    .map_err(|e| Error::NodeFailure { lambda, reason: e.to_string() })
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut omega_nodes = Array2::<C64>::zeros((nodes, n));
    for (j, w) in solved.iter().enumerate() {
        omega_nodes.row_mut(j).assign(w);
    }

    let mut shifted = l.clone();
    linalg::add_diag(&mut shifted, &Array1::from_elem(n, C64::new(plan.model_shift - plan.alpha, 0.0)));
    let terms = plan.model_terms.max(1);
    let (omega, tail, halving) = synthesize(grid, &shifted, omega0, plan, &lambdas, &weights, &omega_nodes, terms, k, nu, times);
    if tail > plan.tail_limit {
        return Err(Error::TailTooLarge { tail, limit: plan.tail_limit });
    }
    let mut psi_nodes = Array2::<C64>::zeros((nodes, n));
    for j in 0..nodes {
        let p = grid.invert_helmholtz(&omega_nodes.row(j).to_owned(), k)?;
        psi_nodes.row_mut(j).assign(&p);
    }
    let state = EvolutionState::from_omega(grid, k, nu, times.to_vec(), omega)?;
    let report = ContourReport { nodes, model_terms: terms, tail, halving };
    Ok((state, report, ContourData { lambdas, weights, omega: omega_nodes, psi: psi_nodes }))
}

/// Synthesize the trajectory with a `terms`-term Neumann model subtracted
/// from the node densities. Returns the fields, the relative tail estimate
/// and the node-halving change.
#[allow(clippy::too_many_arguments)]
fn synthesize(
    grid: &Grid,
    shifted: &Array2<C64>,
    omega0: &ComplexField,
    plan: &ContourPlan,
    lambdas: &[f64],
    weights: &[f64],
    omega_nodes: &Array2<C64>,
    terms: usize,
    k: f64,
    nu: f64,
    times: &[f64],
) -> (Vec<ComplexField>, f64, f64) {
    let nodes = lambdas.len();
    // Neumann model: sum_n (-1)^n v_n / (i lambda - c0)^{n+1}, v_n = (L - alpha + c0)^n omega0
    let c0 = plan.model_shift;
    let mut v = vec![omega0.clone()];
    for _ in 1..terms {
        let next = shifted.dot(v.last().expect("non-empty"));
        v.push(next);
    }
    let model = |lambda: f64| -> ComplexField {
        let z = C64::new(-c0, lambda);
        let mut acc = grid.zeros();
        let mut pow = z;
        for (m, vn) in v.iter().enumerate() {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            acc = acc + &vn.mapv(|x| x * sign / pow);
            pow *= z;
        }
        acc
    };
    let mut remainder = omega_nodes.clone();
    for (j, &lambda) in lambdas.iter().enumerate() {
        let m = model(lambda);
        let mut row = remainder.row_mut(j);
        row -= &m;
    }

    let bracket = |t: f64, stride: usize| -> ComplexField {
        let tau = k * t;
        let mut acc = grid.zeros();
        for j in (0..nodes).step_by(stride) {
            let w = if stride == 1 {
                weights[j]
            } else {
                plan.spacing * stride as f64 * if j == 0 || j + stride >= nodes { 0.5 } else { 1.0 }
            };
            let phase = C64::new(0.0, -lambdas[j] * tau).exp() * w;
            acc.zip_mut_with(&remainder.row(j), |a, r| *a += r * phase);
        }
        let mut out = acc.mapv(|z| -z / (2.0 * std::f64::consts::PI));
        let mut fact = 1.0;
        for (m, vn) in v.iter().enumerate() {
            if m > 0 {
                fact *= m as f64;
            }
            let c = (-c0 * tau).exp() * tau.powi(m as i32) / fact;
            out.zip_mut_with(vn, |a, x| *a += x * c);
        }
        out
    };

    // Tail beyond |lambda| = lambda_max for a remainder decaying like
    // lambda^{-(M+1)}: at most lambda_max |R| / M, and at most 2 |R| / tau
    // after one integration by parts against the oscillation.
    let ends = linalg::norm2(remainder.row(0)) + linalg::norm2(remainder.row(nodes - 1));
    let mut omega = Vec::with_capacity(times.len());
    let mut tail: f64 = 0.0;
    let mut halving: f64 = 0.0;
    for &t in times {
        let full = bracket(t, 1);
        let coarse = bracket(t, 2);
        let nf = linalg::norm2(full.view());
        let reach = (plan.lambda_max / terms as f64).min(if t > 0.0 { 2.0 / (k * t) } else { f64::INFINITY });
        let tail_abs = ends * reach / (2.0 * std::f64::consts::PI);
        if nf > 0.0 {
            halving = halving.max(linalg::norm2((&full - &coarse).view()) / nf);
            tail = tail.max(tail_abs / nf);
        } else {
            tail = tail.max(tail_abs);
        }
        let factor = (plan.alpha * k * t - nu * k * k * t).exp();
        omega.push(full.mapv(|z| z * factor));
    }
    (omega, tail, halving)
}

/// Local and nonlocal parts of the synthesized fields at each time.
#[derive(Clone, Debug)]
pub struct Split {
    pub omega_loc: Vec<ComplexField>,
    pub omega_nonloc: Vec<ComplexField>,
    pub psi_loc: Vec<ComplexField>,
    pub psi_nonloc: Vec<ComplexField>,
}

/// Half-width of the local window at `y`:
/// `c_split (min_j |b(y) - b_j| + (nu/k)^{1/2})`.
pub fn local_width(b: f64, critical_values: [f64; 2], c_split: f64, eps: f64) -> f64 {
    c_split * ((b - critical_values[0]).abs().min((b - critical_values[1]).abs()) + eps.sqrt())
}

/// Default `c_split`.
pub const C_SPLIT_DEFAULT: f64 = 0.25;

/// Partition the contour quadrature at each `y` into nodes with
/// `|lambda - b(y)|` inside the local window and the rest. The local part is
/// the plain node sum; the nonlocal part is the full synthesis minus it, so
/// the two add up exactly. With `c_split = inf` everything is local.
pub fn split_local_nonlocal(
    state: &EvolutionState,
    data: &ContourData,
    bg: &Background,
    critical_values: [f64; 2],
    alpha: f64,
    c_split: f64,
) -> Split {
    let (k, nu) = (state.k, state.nu);
    let eps = nu / k;
    let n = bg.n();
    let mut out = Split { omega_loc: vec![], omega_nonloc: vec![], psi_loc: vec![], psi_nonloc: vec![] };
    for (i, &t) in state.times.iter().enumerate() {
        if c_split.is_infinite() {
            out.omega_loc.push(state.omega[i].clone());
            out.omega_nonloc.push(bg.grid.zeros());
            out.psi_loc.push(state.psi[i].clone());
            out.psi_nonloc.push(bg.grid.zeros());
            continue;
        }
        let tau = k * t;
        let pref = -(alpha * tau - nu * k * k * t).exp() / (2.0 * std::f64::consts::PI);
        let phases: Vec<C64> = data
            .lambdas
            .iter()
            .zip(&data.weights)
            .map(|(&l, &w)| C64::new(0.0, -l * tau).exp() * w * pref)
            .collect();
        let mut wl = bg.grid.zeros();
        let mut pl = bg.grid.zeros();
        for m in 0..n {
            let width = local_width(bg.b[m], critical_values, c_split, eps);
            for (j, &l) in data.lambdas.iter().enumerate() {
                if (l - bg.b[m]).abs() < width {
                    wl[m] += phases[j] * data.omega[[j, m]];
                    pl[m] += phases[j] * data.psi[[j, m]];
                }
            }
        }
        out.omega_nonloc.push(&state.omega[i] - &wl);
        out.psi_nonloc.push(&state.psi[i] - &pl);
        out.omega_loc.push(wl);
        out.psi_loc.push(pl);
    }
    out
}

/// Real fields on an `x` by `y` grid.
#[derive(Clone, Debug)]
pub struct PhysicalSnapshot {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub omega: Array2<f64>,
    pub ux: Array2<f64>,
    pub uy: Array2<f64>,
}

/// `f(x, y) = 2 Re sum_k e^{ikx} f_k(y)` for vorticity and velocity at time
/// index `i` of every mode.
pub fn synthesize_xy(modes: &[&EvolutionState], i: usize, x: &[f64]) -> Result<PhysicalSnapshot> {
    let first = modes.first().ok_or_else(|| Error::Shape("no modes to synthesize".into()))?;
    let grid = &first.grid;
    let ny = grid.n();
    let mut omega = Array2::zeros((x.len(), ny));
    let mut ux = Array2::zeros((x.len(), ny));
    let mut uy = Array2::zeros((x.len(), ny));
    for mode in modes {
        if mode.grid.n() != ny {
            return Err(Error::Shape("modes must share the y grid".into()));
        }
        let (w, u, v) = (&mode.omega[i], mode.ux(i), mode.uy(i));
        for (a, &xa) in x.iter().enumerate() {
            let e = C64::new(0.0, mode.k * xa).exp();
            for m in 0..ny {
                omega[[a, m]] += 2.0 * (e * w[m]).re;
                ux[[a, m]] += 2.0 * (e * u[m]).re;
                uy[[a, m]] += 2.0 * (e * v[m]).re;
            }
        }
    }
    Ok(PhysicalSnapshot { x: x.to_vec(), y: grid.nodes().to_vec(), omega, ux, uy })
}
