//! The derivative in the spectral parameter that follows the critical layers:
//! `D = d/d lambda + a(y, lambda) d/dy` away from the critical values.

use ndarray::Array1;
use num_complex::Complex64 as C64;

use crate::cutoff::phi0;
use crate::error::{Error, Result};
use crate::grid::{periodic_offset, ComplexField, Grid};
use crate::profile::ShearProfile;

/// Distance from `lambda` to the critical values below which only
/// `d/d lambda` is used, in units of `eps^{1/2}`.
pub const BRANCH_FACTOR: f64 = 10.0;

/// Inner localization scale `delta2(lambda) = min_j sqrt(|lambda - b_j| / |b''_j|) / 8`.
pub fn delta2(profile: &ShearProfile, lambda: f64) -> f64 {
    (0..2)
        .map(|j| ((lambda - profile.critical_values()[j]).abs() / profile.curvatures()[j].abs()).sqrt())
        .fold(f64::INFINITY, f64::min)
        / 8.0
}

/// Whether the transport term is active at `lambda`.
pub fn transport_active(profile: &ShearProfile, lambda: f64, eps: f64) -> bool {
    let [b1, b2] = profile.critical_values();
    let (lo, hi) = (b1.min(b2), b1.max(b2));
    let gap = (lambda - b1).abs().min((lambda - b2).abs());
    lambda >= lo && lambda <= hi && gap >= BRANCH_FACTOR * eps.sqrt()
}

/// Coefficient `a(y, lambda)` of the transport term, zero on the inactive branch.
pub fn transport_coefficient(profile: &ShearProfile, grid: &Grid, lambda: f64, eps: f64) -> Array1<f64> {
    if !transport_active(profile, lambda, eps) {
        return Array1::zeros(grid.n());
    }
    let d2 = delta2(profile, lambda);
    let p = profile.period();
    let [c1, c2] = profile.critical_points();
    grid.sample_real(|y| {
        let w = (1.0 - phi0(periodic_offset(y, c1, p) / d2)) * (1.0 - phi0(periodic_offset(y, c2, p) / d2));
        if w == 0.0 {
            0.0
        } else {
            w / profile.derivative(y, 1)
        }
    })
}

/// Fields sampled on a uniform grid of spectral parameters.
#[derive(Clone, Debug)]
pub struct LambdaSamples {
    pub lambdas: Vec<f64>,
    pub fields: Vec<ComplexField>,
}

impl LambdaSamples {
    pub fn new(lambdas: Vec<f64>, fields: Vec<ComplexField>) -> Result<Self> {
        if lambdas.len() != fields.len() {
            return Err(Error::Shape(format!("{} parameters but {} fields", lambdas.len(), fields.len())));
        }
        if lambdas.len() >= 2 {
            let d = lambdas[1] - lambdas[0];
            if lambdas.windows(2).any(|w| ((w[1] - w[0]) - d).abs() > 1e-9 * d.abs()) {
                return Err(Error::Shape("parameter samples must be uniformly spaced".into()));
            }
        }
        Ok(LambdaSamples { lambdas, fields })
    }

    fn spacing(&self) -> f64 {
        self.lambdas[1] - self.lambdas[0]
    }

    fn check(&self, index: usize, reach: usize) -> Result<()> {
        if index < reach || index + reach >= self.lambdas.len() {
            return Err(Error::StencilOutOfRange { index, needed: 2 * reach + 1, available: self.lambdas.len() });
        }
        Ok(())
    }

    /// Fourth-order centered `d/d lambda` at `index`.
    fn d_lambda(&self, index: usize) -> ComplexField {
        let f = &self.fields;
        let h = self.spacing();
        (&f[index - 2] - &f[index - 1].mapv(|z| z * 8.0) + &f[index + 1].mapv(|z| z * 8.0) - &f[index + 2])
            .mapv(|z| z / (12.0 * h))
    }
}

fn apply(samples: &LambdaSamples, index: usize, profile: &ShearProfile, grid: &Grid, eps: f64) -> ComplexField {
    let a = transport_coefficient(profile, grid, samples.lambdas[index], eps);
    let dy = grid.fourier_diff(&samples.fields[index], 1);
    samples.d_lambda(index) + &(&dy * &a.mapv(|v| C64::new(v, 0.0)))
}

/// `(D f, D^2 f)` at sample `index`; the second derivative applies `D` to
/// the first with the coefficient updated at each parameter.
pub fn good_derivative(
    samples: &LambdaSamples,
    index: usize,
    profile: &ShearProfile,
    grid: &Grid,
    eps: f64,
) -> Result<(ComplexField, ComplexField)> {
    samples.check(index, 4)?;
    let first = apply(samples, index, profile, grid, eps);
    let neighbors: Vec<ComplexField> = (index - 2..=index + 2).map(|m| apply(samples, m, profile, grid, eps)).collect();
    let inner = LambdaSamples { lambdas: samples.lambdas[index - 2..=index + 2].to_vec(), fields: neighbors };
    let second = apply(&inner, 2, profile, grid, eps);
    Ok((first, second))
}

/// First derivative only; needs two samples on each side.
pub fn good_derivative_first(
    samples: &LambdaSamples,
    index: usize,
    profile: &ShearProfile,
    grid: &Grid,
    eps: f64,
) -> Result<ComplexField> {
    samples.check(index, 2)?;
    Ok(apply(samples, index, profile, grid, eps))
}
