//! GOA against Mie on angular grids, and the relative error metrics used
//! to compare them.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::goa::{GoaInput, GoaSolver};
use crate::mie::{mie_coefficients, MieInput};
use crate::ComplexValue;

/// Relative squared error (a - b)^2 / a^2 of `b` against the reference `a`.
pub fn rel_mse(reference: f64, value: f64) -> f64 {
    let d = reference - value;
    d * d / (reference * reference)
}

/// sum (a - b)^2 / sum a^2 over paired samples.
pub fn rel_mse_energy(reference: &[f64], values: &[f64]) -> f64 {
    let (num, den) = reference
        .iter()
        .zip(values)
        .fold((0.0, 0.0), |(n, d), (a, b)| (n + (a - b) * (a - b), d + a * a));
    num / den
}

/// Mean of (a - b)^2 / a^2 over paired samples.
pub fn rel_mse_pointwise(reference: &[f64], values: &[f64]) -> f64 {
    reference.iter().zip(values).map(|(a, b)| rel_mse(*a, *b)).sum::<f64>() / reference.len() as f64
}

/// Angles 0, step, ..., 180 degrees.
pub fn theta_grid_deg(step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0 && step_deg <= 180.0) {
        return Err(Error::InvalidInput(format!("theta step must be in (0, 180] deg, got {step_deg}")));
    }
    let n = (180.0 / step_deg).round() as usize;
    Ok((0..=n).map(|k| (k as f64 * step_deg).min(180.0)).collect())
}

/// True for angles farther than `half_width_deg` from every caustic
/// (rainbow or glory) of the solver's ray orders.
pub fn caustic_mask(solver: &GoaSolver, thetas_deg: &[f64], half_width_deg: f64) -> Vec<bool> {
    let caustics: Vec<f64> = solver.caustics().iter().map(|c| c.theta.to_degrees()).collect();
    thetas_deg.iter().map(|t| caustics.iter().all(|c| (t - c).abs() > half_width_deg)).collect()
}

/// (|S1| + |S2|) / 2 from Mie on the grid.
pub fn mie_curve(radius_um: f64, wavelength_um: f64, eta: ComplexValue, eta_medium: f64, thetas_deg: &[f64]) -> Result<Vec<f64>> {
    let coeffs = mie_coefficients(&MieInput::in_host(radius_um, wavelength_um, eta, eta_medium))?;
    Ok(thetas_deg.iter().map(|t| coeffs.amplitudes(t.to_radians()).mean_magnitude()).collect())
}

/// (|S1| + |S2|) / 2 from GOA on the grid.
pub fn goa_curve(solver: &GoaSolver, radius_um: f64, wavelength_um: f64, thetas_deg: &[f64]) -> Vec<f64> {
    thetas_deg
        .iter()
        .map(|t| solver.amplitudes(radius_um, wavelength_um, t.to_radians()).amplitudes.mean_magnitude())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSettings {
    pub wavelength_um: f64,
    pub eta: ComplexValue,
    pub eta_medium: f64,
    pub step_deg: f64,
    /// Half width of the band dropped around each caustic.
    pub exclusion_deg: f64,
    pub p_max: usize,
}

impl Default for ComparisonSettings {
    fn default() -> Self {
        Self {
            wavelength_um: 0.6,
            eta: ComplexValue::new(1.33, 0.0),
            eta_medium: 1.0,
            step_deg: 0.1,
            exclusion_deg: 0.5,
            p_max: GoaInput::new(1.0, 1.0, ComplexValue::new(1.0, 0.0), 1.0).p_max_amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodComparison {
    pub radius_um: f64,
    /// Energy-form RelMSE of GOA against Mie over the kept angles.
    pub rel_mse: f64,
    pub rel_mse_pointwise: f64,
    pub kept_angles: usize,
    pub mie_seconds: f64,
    pub goa_seconds: f64,
}

impl MethodComparison {
    pub fn timing_ratio(&self) -> f64 {
        self.mie_seconds / self.goa_seconds
    }
}

/// Both methods on the same grid, timed from scratch (coefficients or root
/// scan included).
pub fn compare_methods(radius_um: f64, settings: &ComparisonSettings) -> Result<MethodComparison> {
    let thetas = theta_grid_deg(settings.step_deg)?;
    let input = GoaInput::new(radius_um, settings.wavelength_um, settings.eta, settings.eta_medium).with_p_max(settings.p_max);
    input.validate()?;

    let start = Instant::now();
    let mie = mie_curve(radius_um, settings.wavelength_um, settings.eta, settings.eta_medium, &thetas)?;
    let mie_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let solver = GoaSolver::new(settings.eta, settings.eta_medium, settings.p_max)?;
    let goa = goa_curve(&solver, radius_um, settings.wavelength_um, &thetas);
    let goa_seconds = start.elapsed().as_secs_f64();

    let mask = caustic_mask(&solver, &thetas, settings.exclusion_deg);
    let (a, b): (Vec<f64>, Vec<f64>) =
        mie.iter().zip(&goa).zip(&mask).filter(|(_, &keep)| keep).map(|((a, b), _)| (*a, *b)).unzip();
    Ok(MethodComparison {
        radius_um,
        rel_mse: rel_mse_energy(&a, &b),
        rel_mse_pointwise: rel_mse_pointwise(&a, &b),
        kept_angles: a.len(),
        mie_seconds,
        goa_seconds,
    })
}
