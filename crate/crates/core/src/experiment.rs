//! Experiment orchestration: the stages behind the command-line tool and the
//! pipeline that turns a configuration into artifacts and a manifest.

use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airy::{airy_kernel, fit_envelope, EnvelopeFit, EnvelopeShape, SIGMA0_DEFAULT};
use crate::background::Background;
use crate::config::{DepletionDatum, ExperimentConfig, NormKind, Route};
use crate::cutoff::PHI0_DESCRIPTION;
use crate::diagnostics::{self, DepletionProfile, DepletionRun, RateFit, RateSpec};
use crate::error::{Error, Result};
use crate::evolution::{evolve_contour, evolve_direct, ContourPlan, ContourReport, DirectMethod, EvolutionState};
use crate::grid::{ComplexField, Grid};
use crate::io::{self, ArtifactWriter, GridInfo, RunConstants, RunManifest};
use crate::linalg;
use crate::norms::{lap_constant, NormChoice, WeightExponents};
use crate::profile::{
    param_geometry, GeometryConfig, KernelRegime, ProfileDescriptor, Regime, ShearProfile, SpectralPoint, WeightCheck,
    WeightField,
};
use crate::rayleigh::{embedded_eigenvalue_scan, EmbeddedScan};
use crate::resolvent::{assemble_t, hmk_norm, Formulation, TOptions};

/// Center of the built-in initial datum, midway between the critical points
/// of the Kolmogorov profile with period 8.
pub const BUMP_CENTER: f64 = 4.0;
pub const BUMP_RADIUS: f64 = 1.5;

/// Smooth odd bump `s exp(-1/(1 - s^2))`, `s = (y - center)/radius`.
pub fn bump_initial(grid: &Grid, center: f64, radius: f64) -> ComplexField {
    let p = grid.period();
    grid.sample(|y| {
        let s = crate::grid::periodic_offset(y, center, p) / radius;
        if s.abs() < 1.0 {
            C64::new(s * (-1.0 / (1.0 - s * s)).exp(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Periodized Gaussian `sum_m exp(-((y - center + m p)/width)^2)`.
pub fn gaussian_initial(grid: &Grid, center: f64, width: f64) -> ComplexField {
    let p = grid.period();
    grid.sample(|y| {
        let v: f64 = (-3..=3).map(|m| (-((y - center + m as f64 * p) / width).powi(2)).exp()).sum();
        C64::new(v, 0.0)
    })
}

/// Offset of the depletion datum's center from the critical point.
pub const DEPLETION_OFFSET: f64 = 0.5;

/// Interpolate a `(y, value)` table onto the grid nodes.
pub fn initial_from_samples(grid: &Grid, ys: &[f64], zs: &[C64]) -> Result<ComplexField> {
    if ys.len() == grid.n() && ys.iter().enumerate().all(|(m, &y)| (y - grid.node(m)).abs() < 1e-9 * grid.period()) {
        return Ok(Array1::from(zs.to_vec()));
    }
    if ys.len() < 2 {
        return Err(Error::Shape("initial condition needs at least two samples".into()));
    }
    let p = grid.period();
    Ok(grid.sample(|y| {
        let i = ys.partition_point(|&v| v <= y);
        let (a, b) = if i == 0 || i == ys.len() {
            (ys.len() - 1, 0)
        } else {
            (i - 1, i)
        };
        let (ya, mut yb) = (ys[a], ys[b]);
        if yb <= ya {
            yb += p;
        }
        let mut t = y;
        if t < ya {
            t += p;
        }
        let w = ((t - ya) / (yb - ya)).clamp(0.0, 1.0);
        zs[a] * (1.0 - w) + zs[b] * w
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub label: String,
    pub period: f64,
    pub critical_points: [f64; 2],
    pub critical_values: [f64; 2],
    pub curvatures: [f64; 2],
    pub kappa: f64,
    pub c4_norm: f64,
    pub delta0: f64,
    pub sigma_half_widths: [f64; 2],
    pub hash: String,
}

/// Hash of the label and the sampled values on `grid`.
pub fn profile_hash(profile: &ShearProfile, grid: &Grid) -> String {
    let mut bytes = profile.label().as_bytes().to_vec();
    for v in profile.sample(grid, 0).iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    io::sha256_hex(&bytes)
}

pub fn profile_report(profile: &ShearProfile, grid: &Grid) -> ProfileReport {
    ProfileReport {
        label: profile.label().to_string(),
        period: profile.period(),
        critical_points: profile.critical_points(),
        critical_values: profile.critical_values(),
        curvatures: profile.curvatures(),
        kappa: profile.kappa(),
        c4_norm: profile.c4_norm(),
        delta0: profile.delta0(),
        sigma_half_widths: [profile.sigma_half_width(0), profile.sigma_half_width(1)],
        hash: profile_hash(profile, grid),
    }
}

/// Fitted Airy-kernel envelope at one spectral point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub point: SpectralPoint,
    pub kernel_regime: KernelRegime,
    pub beta: f64,
    pub fit: EnvelopeFit,
    pub max_residual: f64,
    /// Share of kernel pairs that agree with the grid of twice the nodes and
    /// so enter the fit.
    pub resolved_fraction: f64,
}

pub fn kernel_report(
    profile: &ShearProfile,
    bg: &Background,
    point: &SpectralPoint,
    geometry: &GeometryConfig,
) -> Result<(KernelReport, crate::airy::KernelMatrix)> {
    let geom = param_geometry(profile, point, geometry);
    let fine_bg = Background::new(profile, &Grid::new(2 * bg.n(), bg.grid.period())?);
    let fine = airy_kernel(&fine_bg, point, SIGMA0_DEFAULT)?;
    let kernel = airy_kernel(bg, point, SIGMA0_DEFAULT)?.refine_against(&fine)?;
    let resolved = kernel.resolved.as_ref().map_or(1.0, |r| r.iter().filter(|&&b| b).count() as f64 / r.len() as f64);
    let shape = EnvelopeShape::from_geometry(&geom, point);
    let fit = fit_envelope(&kernel, bg, &shape);
    let report = KernelReport {
        point: *point,
        kernel_regime: geom.kernel_regime,
        beta: geom.beta,
        fit,
        max_residual: kernel.max_residual,
        resolved_fraction: resolved,
    };
    Ok((report, kernel))
}

/// `count` parameters spread over the interior of the spectral window at
/// critical point `j`.
pub fn sigma_lambdas(profile: &ShearProfile, j: usize, count: usize) -> Vec<f64> {
    let c = profile.critical_values()[j];
    let hw = profile.sigma_half_width(j);
    (0..count).map(|i| c + hw * (2.0 * (i as f64 + 0.5) / count as f64 - 1.0)).collect()
}

/// Operator 1-norms of the four degenerate pieces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct PieceNorms {
    pub i1: f64,
    pub i2: f64,
    pub v1: f64,
    pub v2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapRow {
    pub lambda: f64,
    pub regime: Regime,
    pub delta: f64,
    pub kappa2: f64,
    pub kappa_mixed: f64,
    #[serde(rename = "Tnorm")]
    pub t_norm: f64,
    pub pieces: PieceNorms,
}

pub fn norm_choice(kind: NormKind, gamma: f64) -> NormChoice {
    match kind {
        NormKind::Weighted => WeightExponents::admissible(gamma)[0].into(),
        NormKind::H1k => NormChoice::H1k,
    }
}

/// LAP estimates for the degenerate formulation at critical point `j`.
#[allow(clippy::too_many_arguments)]
pub fn lap_scan(
    profile: &ShearProfile,
    bg: &Background,
    k: u32,
    nu: f64,
    j: usize,
    lambdas: &[f64],
    geometry: &GeometryConfig,
    choice: NormChoice,
) -> Result<Vec<LapRow>> {
    lambdas
        .par_iter()
        .map(|&lambda| {
            let point = SpectralPoint::new(lambda, 0.0, nu, k);
            let geom = param_geometry(profile, &point, geometry);
            let opts = TOptions {
                formulation: Some(Formulation::Degenerate { j }),
                check: WeightCheck::Override,
                ..TOptions::default()
            };
            let t = assemble_t(profile, bg, &point, &geom, opts)?;
            let w = WeightField::new(profile, geom.delta, point.kf(), j, &bg.grid, WeightCheck::Override)?;
            let est = lap_constant(&bg.grid, &t.matrix, choice, &w)?;
            let pieces = t.pieces.as_ref().map_or(PieceNorms::default(), |p| PieceNorms {
                i1: linalg::norm1(p.i1.view()),
                i2: linalg::norm1(p.i2.view()),
                v1: linalg::norm1(p.v1.view()),
                v2: linalg::norm1(p.v2.view()),
            });
            Ok(LapRow {
                lambda,
                regime: geom.regime,
                delta: geom.delta,
                kappa2: est.kappa2,
                kappa_mixed: est.kappa_mixed,
                t_norm: est.t_norm,
                pieces,
            })
        })
        .collect()
}

/// Parameters strictly inside the range of `b`, avoiding the critical values
/// by `exclusion`.
pub fn embedded_lambdas(profile: &ShearProfile, count: usize, exclusion: f64) -> Vec<f64> {
    let [hi, lo] = profile.critical_values();
    let (a, b) = (lo + exclusion, hi - exclusion);
    (0..count).map(|i| a + (b - a) * i as f64 / (count.max(2) - 1) as f64).collect()
}

/// Evolution by the requested route.
pub fn evolve_route(
    bg: &Background,
    k: f64,
    nu: f64,
    omega0: &ComplexField,
    times: &[f64],
    route: Route,
    alpha: f64,
) -> Result<(EvolutionState, Option<ContourReport>)> {
    match route {
        Route::Direct => Ok((evolve_direct(bg, k, nu, omega0, times, DirectMethod::auto(bg.n()))?, None)),
        Route::Contour => {
            let t_max = times.iter().cloned().fold(0.0, f64::max);
            let plan = ContourPlan::new(bg, k, alpha, t_max);
            let (state, report, _) = evolve_contour(bg, k, nu, omega0, &plan, times)?;
            Ok((state, Some(report)))
        }
    }
}

/// Largest relative L2 difference between two trajectories at `t >= t_from`.
pub fn route_difference(a: &EvolutionState, b: &EvolutionState, t_from: f64) -> f64 {
    a.times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= t_from)
        .map(|(i, _)| a.grid.l2_norm(&(&a.omega[i] - &b.omega[i])) / a.grid.l2_norm(&a.omega[i]).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatesReport {
    pub k: u32,
    pub nu: f64,
    pub fits: Vec<RateFit>,
    /// `sigma_sharp nu^{1/2}`, the reference enhanced-dissipation rate.
    pub reference_rate: f64,
}

/// Run one viscosity of a depletion sweep and return its compensated series.
pub fn depletion_run(
    bg: &Background,
    k: u32,
    nu: f64,
    omega0: &ComplexField,
    y_star: f64,
    t_scale: f64,
    samples: usize,
    seed: u64,
) -> Result<DepletionRun> {
    let t_end = t_scale / nu.sqrt();
    let times: Vec<f64> = (0..=samples).map(|i| t_end * i as f64 / samples as f64).collect();
    let state = evolve_direct(bg, k as f64, nu, omega0, &times, DirectMethod::auto(bg.n()))?;
    let m_k = hmk_norm(&bg.grid, omega0, k as f64, 3);
    DepletionRun::from_state(&state, y_star, m_k, seed)
}

fn tag(k: u32, nu: f64) -> String {
    format!("k{k}_nu{nu:e}")
}

struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    profile: ShearProfile,
    bg: Background,
    omega0: ComplexField,
    constants: RunConstants,
}

impl Pipeline<'_> {
    fn run(&mut self, w: &mut ArtifactWriter) -> Result<()> {
        let cfg = self.cfg;
        let grid = self.bg.grid.clone();
        if cfg.sweeps.k.is_empty() && cfg.sweeps.nu.is_empty() && cfg.depletion.nu.is_empty() {
            return Ok(());
        }
        w.write_json("profile.json", &profile_report(&self.profile, &grid))?;
        let choice = norm_choice(cfg.lap.norm, cfg.lap.gamma);
        let times = cfg.evolution.t.times();
        let spec = RateSpec {
            window: (cfg.rates.window[0], cfg.rates.window[1]),
            gamma: cfg.lap.gamma,
            critical_points: self.profile.critical_points(),
            seed: cfg.rates.seed,
        };
        let ys = grid.nodes().to_vec();
        for &k in &cfg.sweeps.k {
            let scan: EmbeddedScan = embedded_eigenvalue_scan(
                &self.profile,
                &self.bg,
                k as f64,
                &embedded_lambdas(&self.profile, 4 * cfg.lap.lambda_points, 0.05),
            )?;
            w.write_json(&format!("embedded_k{k}.json"), &scan)?;
            for &nu in &cfg.sweeps.nu {
                let t = tag(k, nu);
                let mut kernels = Vec::new();
                for j in 0..2 {
                    let lambda = self.profile.critical_values()[j] - 0.1 * (1 - 2 * j as i32) as f64;
                    let point = SpectralPoint::new(lambda, 0.0, nu, k);
                    let (rep, _) = kernel_report(&self.profile, &self.bg, &point, &cfg.geometry)?;
                    self.constants.envelope_fits.push((format!("airy_{t}_j{}", j + 1), rep.fit.c, rep.fit.c0));
                    kernels.push(rep);
                }
                w.write_json(&format!("kernels_{t}.json"), &kernels)?;
                let mut lap = Vec::new();
                for j in 0..2 {
                    let lambdas = sigma_lambdas(&self.profile, j, cfg.lap.lambda_points);
                    lap.extend(lap_scan(&self.profile, &self.bg, k, nu, j, &lambdas, &cfg.geometry, choice)?);
                }
                w.write_json(&format!("lap_{t}.json"), &lap)?;
                let mut states = Vec::new();
                for &route in &cfg.evolution.routes {
                    let (state, report) =
                        evolve_route(&self.bg, k as f64, nu, &self.omega0, &times, route, cfg.evolution.contour_alpha)?;
                    let name = format!("{route:?}").to_lowercase();
                    let fields: Vec<&[C64]> = state.omega.iter().map(|f| f.as_slice().unwrap()).collect();
                    w.write_blocks(&format!("omega_{t}_{name}.bin"), &state.times, &fields)?;
                    w.write_field_csv(&format!("omega_{t}_{name}_final.csv"), &ys, state.omega.last().unwrap().as_slice().unwrap())?;
                    if let Some(report) = report {
                        w.write_json(&format!("contour_{t}.json"), &report)?;
                    }
                    states.push(state);
                }
                if states.len() == 2 {
                    let diff = route_difference(&states[0], &states[1], 0.25);
                    w.write_json(&format!("routes_{t}.json"), &serde_json::json!({ "max_relative_l2": diff }))?;
                }
                if let Some(state) = states.first() {
                    let series = diagnostics::rate_series(state, &spec);
                    let rows: Vec<Vec<f64>> = (0..series.times.len())
                        .map(|i| vec![series.times[i], series.ux_sup[i], series.psi_weighted_sup[i], series.omega_compensated_l2[i]])
                        .collect();
                    w.write_table_csv(&format!("series_{t}.csv"), &["t", "ux_sup", "psi_weighted_sup", "omega_compensated_l2"], &rows)?;
                    let fits = diagnostics::fit_rates(state, &spec)?;
                    let report = RatesReport { k, nu, fits, reference_rate: cfg.lap.sigma_sharp * nu.sqrt() };
                    w.write_json(&format!("rates_{t}.json"), &report)?;
                }
            }
        }
        if !cfg.depletion.nu.is_empty() {
            let d = &cfg.depletion;
            let y_star = self.profile.critical_points()[d.j - 1];
            let omega0 = match d.ic {
                DepletionDatum::Gaussian => gaussian_initial(&grid, y_star + DEPLETION_OFFSET, 1.0),
                DepletionDatum::Evolution => self.omega0.clone(),
            };
            let runs = d
                .nu
                .iter()
                .map(|&nu| depletion_run(&self.bg, d.k, nu, &omega0, y_star, d.t_scale, d.samples, cfg.rates.seed))
                .collect::<Result<Vec<_>>>()?;
            for r in &runs {
                let rows: Vec<Vec<f64>> = r.times.iter().zip(&r.values).map(|(&t, &v)| vec![t, v]).collect();
                w.write_table_csv(&format!("depletion_nu{:e}.csv", r.nu), &["t", "compensated"], &rows)?;
            }
            let profile: DepletionProfile = diagnostics::depletion_profile(&runs, cfg.lap.gamma)?;
            w.write_json("depletion.json", &profile)?;
        }
        Ok(())
    }
}

/// Execute the configured pipeline into `out`. The manifest is written even
/// when a stage fails, with `complete = false` and the error message.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    let profile = ShearProfile::build(&cfg.profile)?;
    let grid = Grid::new(cfg.grid.n, profile.period())?;
    let bg = Background::new(&profile, &grid);
    let omega0 = match cfg.evolution.ic.csv_path() {
        Some(path) => {
            let (ys, zs) = io::read_field_csv(path)?;
            initial_from_samples(&grid, &ys, &zs)?
        }
        None => bump_initial(&grid, BUMP_CENTER, BUMP_RADIUS),
    };
    let constants = RunConstants {
        c_dagger: cfg.geometry.c_dagger,
        sigma_sharp: cfg.lap.sigma_sharp,
        sigma0: SIGMA0_DEFAULT,
        envelope_fits: Vec::new(),
    };
    let mut writer = ArtifactWriter::new(out)?;
    let mut pipeline = Pipeline { cfg, profile, bg, omega0, constants };
    let outcome = pipeline.run(&mut writer);
    let descriptor = match &cfg.profile {
        ProfileDescriptor::Table { path, order } => format!("table({}, order {order})", path.display()),
        ProfileDescriptor::Kolmogorov { period } => format!("kolmogorov(period {period})"),
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: serde_json::to_value(cfg).map_err(|e| Error::Io(e.to_string()))?,
        profile: descriptor,
        profile_hash: profile_hash(&pipeline.profile, &grid),
        grid: GridInfo { n: grid.n(), period: grid.period() },
        constants: pipeline.constants,
        cutoff: PHI0_DESCRIPTION.to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        complete: outcome.is_ok(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        artifacts: writer.entries().to_vec(),
    };
    io::write_manifest(out, &manifest)?;
    outcome.map(|_| manifest)
}
