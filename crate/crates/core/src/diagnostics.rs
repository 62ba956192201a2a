//! Decay-rate fits with bootstrap uncertainty and the late-time depletion
//! profile at a critical point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::airy::least_squares_line;
use crate::error::{Error, Result};
use crate::evolution::EvolutionState;
use crate::grid::periodic_distance;
use crate::linalg;

/// Samples before this time are treated as transient and never fitted.
pub const T_MIN: f64 = 2.0;
/// Bootstrap resamples for the uncertainty band.
pub const RESAMPLES: usize = 200;
const MIN_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// `v ~ A t^p`; the estimate is `p`.
    PowerLaw,
    /// `v ~ A e^{-r t}`; the estimate is `r`.
    ExponentialRate,
}

/// A fitted exponent or rate with its 95% bootstrap band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub quantity: String,
    pub kind: FitKind,
    pub window: (f64, f64),
    pub points: usize,
    pub estimate: f64,
    pub band: (f64, f64),
    pub r_squared: f64,
    /// Root-mean-square residual of the linearized fit.
    pub residual: f64,
}

impl RateFit {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.band.1 - self.band.0)
    }
}

fn r_squared(pts: &[(f64, f64)], slope: f64, icpt: f64) -> (f64, f64) {
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - icpt).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (r2, (ss_res / n).sqrt())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn fit_line(
    quantity: &str,
    kind: FitKind,
    t: &[f64],
    v: &[f64],
    window: (f64, f64),
    seed: u64,
    transform: impl Fn(f64, f64) -> Option<(f64, f64)>,
    estimate: impl Fn(f64) -> f64,
) -> Result<RateFit> {
    let start = window.0.max(T_MIN);
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(v)
        .filter(|(ti, _)| **ti >= start && **ti <= window.1)
        .filter_map(|(&ti, &vi)| transform(ti, vi))
        .collect();
    if pts.len() < MIN_POINTS {
        return Err(Error::WindowTooShort { start, end: window.1, points: pts.len(), needed: MIN_POINTS });
    }
    let (slope, icpt) = least_squares_line(&pts);
    let (r2, residual) = r_squared(&pts, slope, icpt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = Vec::with_capacity(RESAMPLES);
    let mut sample = Vec::with_capacity(pts.len());
    for _ in 0..RESAMPLES {
        sample.clear();
        for _ in 0..pts.len() {
            sample.push(pts[rng.random_range(0..pts.len())]);
        }
        boot.push(estimate(least_squares_line(&sample).0));
    }
    boot.sort_by(f64::total_cmp);
    Ok(RateFit {
        quantity: quantity.to_string(),
        kind,
        window: (start, window.1),
        points: pts.len(),
        estimate: estimate(slope),
        band: (percentile(&boot, 0.025), percentile(&boot, 0.975)),
        r_squared: r2,
        residual,
    })
}

/// Log-log least squares for `v ~ A t^p` on the window.
pub fn fit_power_law(quantity: &str, t: &[f64], v: &[f64], window: (f64, f64), seed: u64) -> Result<RateFit> {
    let tr = |ti: f64, vi: f64| (ti > 0.0 && vi > 0.0).then(|| (ti.ln(), vi.ln()));
    fit_line(quantity, FitKind::PowerLaw, t, v, window, seed, tr, |s| s)
}

/// Semilog least squares for `v ~ A e^{-r t}` on the window.
pub fn fit_exponential_rate(quantity: &str, t: &[f64], v: &[f64], window: (f64, f64), seed: u64) -> Result<RateFit> {
    let tr = |ti: f64, vi: f64| (vi > 0.0).then(|| (ti, vi.ln()));
    fit_line(quantity, FitKind::ExponentialRate, t, v, window, seed, tr, |s| -s)
}

/// What to extract from a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub window: (f64, f64),
    pub gamma: f64,
    pub critical_points: [f64; 2],
    pub seed: u64,
}

/// Time series of the fitted quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub times: Vec<f64>,
    pub ux_sup: Vec<f64>,
    pub psi_weighted_sup: Vec<f64>,
    pub omega_compensated_l2: Vec<f64>,
    /// `||omega(t)||_2 / ||omega(0)||_2`.
    pub omega_l2_ratio: Vec<f64>,
}

impl RateSeries {
    /// `values[i] / omega_l2_ratio[i]`: removes the dissipative decay so that
    /// only the mixing contribution remains.
    pub fn normalized(&self, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.omega_l2_ratio).map(|(v, r)| v / r).collect()
    }
}

/// `(|y - y_1|^{2-gamma} + |y - y_2|^{2-gamma})` on the grid.
pub fn stream_weight(state: &EvolutionState, gamma: f64, critical_points: [f64; 2]) -> Vec<f64> {
    let p = state.grid.period();
    state
        .grid
        .nodes()
        .iter()
        .map(|&y| critical_points.iter().map(|&c| periodic_distance(y, c, p).powf(2.0 - gamma)).sum())
        .collect()
}

pub fn rate_series(state: &EvolutionState, spec: &RateSpec) -> RateSeries {
    let w = stream_weight(state, spec.gamma, spec.critical_points);
    let k2 = state.nu * state.k * state.k;
    let mut out = RateSeries {
        times: state.times.clone(),
        ux_sup: vec![],
        psi_weighted_sup: vec![],
        omega_compensated_l2: vec![],
        omega_l2_ratio: vec![],
    };
    let l2_0 = state.omega.first().map_or(1.0, |w| state.grid.l2_norm(w));
    for (i, &t) in state.times.iter().enumerate() {
        out.ux_sup.push(linalg::max_abs(state.ux(i).view()));
        out.psi_weighted_sup.push(state.psi[i].iter().zip(&w).map(|(z, wi)| z.norm() * wi).fold(0.0, f64::max));
        let l2 = state.grid.l2_norm(&state.omega[i]);
        out.omega_compensated_l2.push(l2 * (k2 * t).exp());
        out.omega_l2_ratio.push(l2 / l2_0);
    }
    out
}

/// Quantity names produced by [`fit_rates`].
pub const UX_SUP: &str = "ux_sup";
pub const PSI_WEIGHTED_SUP: &str = "psi_weighted_sup";
pub const UX_SUP_NORMALIZED: &str = "ux_sup_normalized";
pub const PSI_WEIGHTED_SUP_NORMALIZED: &str = "psi_weighted_sup_normalized";
pub const OMEGA_COMPENSATED_L2: &str = "omega_compensated_l2";

/// Power laws of `sup|u^x|` and weighted `sup|psi|`, raw and divided by the
/// decay of `||omega||_2`, and the exponential rate of the heat-compensated
/// `||omega||_2`.
pub fn fit_rates(state: &EvolutionState, spec: &RateSpec) -> Result<Vec<RateFit>> {
    let s = rate_series(state, spec);
    let (w, seed) = (spec.window, spec.seed);
    Ok(vec![
        fit_power_law(UX_SUP, &s.times, &s.ux_sup, w, seed)?,
        fit_power_law(PSI_WEIGHTED_SUP, &s.times, &s.psi_weighted_sup, w, seed)?,
        fit_power_law(UX_SUP_NORMALIZED, &s.times, &s.normalized(&s.ux_sup), w, seed)?,
        fit_power_law(PSI_WEIGHTED_SUP_NORMALIZED, &s.times, &s.normalized(&s.psi_weighted_sup), w, seed)?,
        fit_exponential_rate(OMEGA_COMPENSATED_L2, &s.times, &s.omega_compensated_l2, w, seed)?,
    ])
}

/// Relative disagreement of the two half-window medians that still counts as
/// a plateau.
pub const PLATEAU_SPREAD: f64 = 0.3;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over the last quarter of the series; fails when the two halves of
/// that window disagree by more than [`PLATEAU_SPREAD`].
pub fn plateau(nu: f64, values: &[f64]) -> Result<f64> {
    let n = values.len();
    let start = n - n / 4;
    let tail = &values[start..];
    if tail.len() < 4 {
        return Err(Error::NoPlateaus { nu, spread: f64::INFINITY });
    }
    let half = tail.len() / 2;
    let a = median(&mut tail[..half].to_vec());
    let b = median(&mut tail[half..].to_vec());
    let spread = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    if spread > PLATEAU_SPREAD {
        return Err(Error::NoPlateaus { nu, spread: 100.0 * spread });
    }
    Ok(median(&mut tail.to_vec()))
}

/// One viscosity's trajectory at the critical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepletionRun {
    pub nu: f64,
    pub times: Vec<f64>,
    /// `|omega(t, y*)|` divided by `M_k` and compensated by the fitted
    /// late-time decay of `||omega||_2`.
    pub values: Vec<f64>,
    pub decay_rate: f64,
}

impl DepletionRun {
    /// Extract from a trajectory; `decay_rate` is fitted on the second half.
    pub fn from_state(state: &EvolutionState, y_star: f64, m_k: f64, seed: u64) -> Result<Self> {
        let i = state.grid.nearest_node(y_star);
        let l2: Vec<f64> = state.omega.iter().map(|w| state.grid.l2_norm(w)).collect();
        let t_end = *state.times.last().unwrap_or(&0.0);
        let fit = fit_exponential_rate("omega_l2", &state.times, &l2, (0.5 * t_end, t_end), seed)?;
        let r = fit.estimate;
        let values = state
            .times
            .iter()
            .zip(&state.omega)
            .map(|(&t, w)| w[i].norm() * (r * t).exp() / m_k)
            .collect();
        Ok(DepletionRun { nu: state.nu, times: state.times.clone(), values, decay_rate: r })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepletionProfile {
    pub gamma: f64,
    pub nus: Vec<f64>,
    pub plateaus: Vec<f64>,
    /// Slope of `log plateau` against `log nu`.
    pub slope: f64,
    pub r_squared: f64,
    pub expected_slope: f64,
    /// Whether the plateau decreases with decreasing viscosity.
    pub monotone: bool,
}

pub fn depletion_profile(runs: &[DepletionRun], gamma: f64) -> Result<DepletionProfile> {
    let mut rows: Vec<(f64, f64)> = runs.iter().map(|r| plateau(r.nu, &r.values).map(|p| (r.nu, p))).collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pts: Vec<(f64, f64)> = rows.iter().map(|(n, p)| (n.ln(), p.ln())).collect();
    let (slope, icpt) = if pts.len() >= 2 { least_squares_line(&pts) } else { (f64::NAN, f64::NAN) };
    let (r2, _) = if pts.len() >= 2 { r_squared(&pts, slope, icpt) } else { (f64::NAN, f64::NAN) };
    Ok(DepletionProfile {
        gamma,
        nus: rows.iter().map(|r| r.0).collect(),
        plateaus: rows.iter().map(|r| r.1).collect(),
        slope,
        r_squared: r2,
        expected_slope: gamma / 4.0,
        monotone: rows.windows(2).all(|w| w[0].1 <= w[1].1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_recovers_its_model() {
        let t: Vec<f64> = (0..200).map(|i| 0.25 * i as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 / (t * t)).collect();
        let f = fit_power_law("x", &t, &v, (5.0, 50.0), 1).unwrap();
        assert!((f.estimate + 2.0).abs() < 1e-10 && f.half_width() < 0.01);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_rate_recovers_its_model() {
        let t: Vec<f64> = (0..200).map(|i| 0.25 * i as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| 2.0 * (-0.1 * t).exp()).collect();
        let f = fit_exponential_rate("x", &t, &v, (0.0, 50.0), 1).unwrap();
        assert!((f.estimate - 0.1).abs() < 1e-12 && f.half_width() < 0.002);
        assert_eq!(f.window.0, T_MIN);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let t: Vec<f64> = (0..100).map(|i| 1.0 + 0.5 * i as f64).collect();
        let v: Vec<f64> = t.iter().enumerate().map(|(i, t)| t.powf(-1.0) * (1.0 + 0.05 * ((i * 7919) % 13) as f64 / 13.0)).collect();
        let a = fit_power_law("x", &t, &v, (2.0, 50.0), 9).unwrap();
        let b = fit_power_law("x", &t, &v, (2.0, 50.0), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.band.0 < a.estimate && a.estimate < a.band.1);
    }

    #[test]
    fn short_window_rejected() {
        let t = [0.0, 1.0, 2.5, 3.0];
        let v = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(fit_power_law("x", &t, &v, (0.0, 3.0), 0), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn plateau_detection() {
        let flat: Vec<f64> = (0..40).map(|i| 1.0 + 0.01 * (i % 3) as f64).collect();
        assert!((plateau(1e-3, &flat).unwrap() - 1.01).abs() < 0.011);
        let decaying: Vec<f64> = (0..40).map(|i| (-0.3 * i as f64).exp()).collect();
        assert!(matches!(plateau(1e-3, &decaying), Err(Error::NoPlateaus { .. })));
    }

    #[test]
    fn depletion_slope_from_synthetic_plateaus() {
        let runs: Vec<DepletionRun> = [1e-3, 3e-4, 1e-4, 3e-5]
            .iter()
            .map(|&nu: &f64| DepletionRun { nu, times: vec![0.0; 16], values: vec![nu.powf(0.47); 16], decay_rate: 0.0 })
            .collect();
        let d = depletion_profile(&runs, 1.875).unwrap();
        assert!((d.slope - 0.47).abs() < 1e-12 && d.monotone);
        assert!((d.expected_slope - 0.46875).abs() < 1e-15);
    }
}
