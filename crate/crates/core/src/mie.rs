//! Lorenz-Mie scattering by a homogeneous sphere.
//!
//! Coefficients a_n, b_n follow the classic formulation in terms of the
//! logarithmic derivative D_n(m x) (downward recurrence) and the
//! Riccati-Bessel functions psi_n(x), xi_n(x) (upward recurrence).
//! The size parameter uses the real part of the host index; host absorption
//! only enters the cross-section prefactors.

use std::f64::consts::PI;

use crate::amplitude::AmplitudePair;
use crate::error::{Error, Result};
use crate::specfun::{fill_angular, log_derivative_from_zero, ComplexValue};

/// Largest size parameter accepted by the series evaluation.
pub const MAX_SIZE_PARAMETER: f64 = 2.1e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MieInput {
    pub radius_um: f64,
    /// Vacuum wavelength in µm.
    pub wavelength_um: f64,
    pub eta_particle: ComplexValue,
    pub eta_medium: ComplexValue,
}

impl MieInput {
    pub fn new(radius_um: f64, wavelength_um: f64, eta_particle: ComplexValue, eta_medium: ComplexValue) -> Self {
        Self { radius_um, wavelength_um, eta_particle, eta_medium }
    }

    /// Convenience constructor for a particle in a non-absorbing host.
    pub fn in_host(radius_um: f64, wavelength_um: f64, eta_relative: ComplexValue, eta_medium: f64) -> Self {
        Self::new(radius_um, wavelength_um, eta_relative * eta_medium, ComplexValue::new(eta_medium, 0.0))
    }

    pub fn relative_index(&self) -> ComplexValue {
        self.eta_particle / self.eta_medium
    }

    /// |k| = 2 pi |eta_m| / lambda, in µm^-1.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.eta_medium.norm() / self.wavelength_um
    }

    /// |alpha| = |k| r.
    pub fn size_parameter(&self) -> f64 {
        self.wavenumber() * self.radius_um
    }

    /// Real size parameter used as the Riccati-Bessel argument.
    fn bessel_argument(&self) -> f64 {
        2.0 * PI * self.eta_medium.re * self.radius_um / self.wavelength_um
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_um > 0.0 && self.radius_um.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {}", self.radius_um)));
        }
        if !(self.wavelength_um > 0.0 && self.wavelength_um.is_finite()) {
            return Err(Error::InvalidInput(format!("wavelength must be positive, got {}", self.wavelength_um)));
        }
        if !(self.eta_medium.re > 0.0) || self.eta_medium.im < 0.0 {
            return Err(Error::Domain("host index needs Re > 0 and Im >= 0".into()));
        }
        if !(self.relative_index().re > 0.0) {
            return Err(Error::Domain("relative index needs a positive real part".into()));
        }
        let alpha = self.size_parameter();
        if !(alpha > 0.0 && alpha <= MAX_SIZE_PARAMETER) {
            return Err(Error::SizeParameterRange { alpha, max: MAX_SIZE_PARAMETER });
        }
        Ok(())
    }
}

/// ceil(|alpha| + 4.3 |alpha|^(1/3) + 1)
pub fn term_count(alpha: f64) -> usize {
    let a = alpha.abs();
    ((a + 4.3 * a.cbrt() + 1.0).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MieCoefficients {
    pub a: Vec<ComplexValue>,
    pub b: Vec<ComplexValue>,
    pub n_max: usize,
}

impl MieCoefficients {
    /// S1, S2 at scattering angle `theta` (radians).
    pub fn amplitudes(&self, theta: f64) -> AmplitudePair {
        let mut s1 = ComplexValue::new(0.0, 0.0);
        let mut s2 = ComplexValue::new(0.0, 0.0);
        fill_angular(theta.cos(), self.n_max, |n, pi, tau| {
            let nf = n as f64;
            let w = (2.0 * nf + 1.0) / (nf * (nf + 1.0));
            let (a, b) = (self.a[n - 1], self.b[n - 1]);
            s1 += w * (a * pi + b * tau);
            s2 += w * (b * pi + a * tau);
        });
        AmplitudePair::new(s1, s2)
    }

    /// sum (2n+1)(|a_n|^2 + |b_n|^2)
    pub fn scattering_sum(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .enumerate()
            .map(|(i, (a, b))| (2.0 * (i + 1) as f64 + 1.0) * (a.norm_sqr() + b.norm_sqr()))
            .sum()
    }

    /// sum (2n+1)(a_n + b_n)
    pub fn extinction_sum(&self) -> ComplexValue {
        self.a
            .iter()
            .zip(&self.b)
            .enumerate()
            .map(|(i, (a, b))| (2.0 * (i + 1) as f64 + 1.0) * (a + b))
            .sum()
    }
}

pub fn mie_coefficients(input: &MieInput) -> Result<MieCoefficients> {
    input.validate()?;
    let n_max = term_count(input.size_parameter());
    Ok(coefficients_with_terms(input, n_max))
}

/// Coefficients with an explicit term count (used for convergence checks).
pub fn coefficients_with_terms(input: &MieInput, n_max: usize) -> MieCoefficients {
    let m = input.relative_index();
    let x = input.bessel_argument();
    let d = log_derivative_from_zero(m * x, n_max);

    let mut a = Vec::with_capacity(n_max);
    let mut b = Vec::with_capacity(n_max);

    // psi_{n-2}, psi_{n-1}, chi_{n-2}, chi_{n-1}
    let (mut psi0, mut psi1) = (x.cos(), x.sin());
    let (mut chi0, mut chi1) = (-x.sin(), x.cos());
    let mut xi1 = ComplexValue::new(psi1, -chi1);
    for n in 1..=n_max {
        let nf = n as f64;
        let psi = (2.0 * nf - 1.0) * psi1 / x - psi0;
        let chi = (2.0 * nf - 1.0) * chi1 / x - chi0;
        let xi = ComplexValue::new(psi, -chi);
        let dn = d[n];
        let ta = dn / m + nf / x;
        let tb = dn * m + nf / x;
        a.push((ta * psi - psi1) / (ta * xi - xi1));
        b.push((tb * psi - psi1) / (tb * xi - xi1));
        psi0 = psi1;
        psi1 = psi;
        chi0 = chi1;
        chi1 = chi;
        xi1 = ComplexValue::new(psi1, -chi1);
    }
    MieCoefficients { a, b, n_max }
}

pub fn mie_amplitudes(input: &MieInput, theta: f64) -> Result<AmplitudePair> {
    Ok(mie_coefficients(input)?.amplitudes(theta))
}

/// C_t = (lambda^2 / 2 pi) sum (2n+1) Re{(a_n + b_n) / eta_m^2}, in µm².
pub fn mie_extinction_cross_section(coeffs: &MieCoefficients, input: &MieInput) -> f64 {
    let l2 = input.wavelength_um * input.wavelength_um;
    l2 / (2.0 * PI) * (coeffs.extinction_sum() / (input.eta_medium * input.eta_medium)).re
}

/// Host-absorption correction gamma(beta) = 2(1 + (beta - 1) e^beta) / beta^2,
/// with gamma(0) = 1.
pub fn host_absorption_gamma(beta: f64) -> f64 {
    if beta.abs() < 1.0 {
        // sum_j 2 (j+1) beta^j / (j+2)!
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..30 {
            let jf = j as f64;
            term *= beta * (jf + 1.0) / (jf * (jf + 2.0));
            sum += term;
        }
        sum
    } else {
        2.0 * (1.0 + (beta - 1.0) * beta.exp()) / (beta * beta)
    }
}

/// Scattering cross section in µm², including the host-absorption factors.
pub fn mie_scattering_cross_section(coeffs: &MieCoefficients, input: &MieInput) -> f64 {
    let l = input.wavelength_um;
    let beta = 4.0 * PI * input.radius_um * input.eta_medium.im / l;
    let gamma = host_absorption_gamma(beta);
    l * l * (-beta).exp() / (2.0 * PI * gamma * input.eta_medium.norm_sqr()) * coeffs.scattering_sum()
}

/// Normalized phase function f_p(theta) in sr^-1.
pub fn mie_phase_function(input: &MieInput, theta: f64) -> Result<f64> {
    let coeffs = mie_coefficients(input)?;
    Ok(phase_from_coefficients(&coeffs, theta))
}

pub(crate) fn phase_from_coefficients(coeffs: &MieCoefficients, theta: f64) -> f64 {
    coeffs.amplitudes(theta).intensity() / (4.0 * PI * coeffs.scattering_sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn water(r: f64) -> MieInput {
        MieInput::in_host(r, 0.6, ComplexValue::new(1.33, 0.0), 1.0)
    }

    #[test]
    fn term_count_example() {
        let input = MieInput::in_host(1.0, 0.6, ComplexValue::new(1.33, 0.0), 1.0);
        assert!((input.size_parameter() - 10.472).abs() < 1e-3);
        assert_eq!(term_count(input.size_parameter()), 21);
    }

    #[test]
    fn index_matched_sphere_does_not_scatter() {
        let input = MieInput::in_host(1.0, 0.6, ComplexValue::new(1.0, 0.0), 1.0);
        let c = mie_coefficients(&input).unwrap();
        assert!(c.a.iter().chain(&c.b).all(|v| v.norm() <= 1e-10));
        assert!(mie_extinction_cross_section(&c, &input).abs() <= 1e-10);
    }

    #[test]
    fn forward_degeneracy_and_backscatter_relation() {
        for r in [0.3, 2.0, 10.0] {
            let c = mie_coefficients(&water(r)).unwrap();
            let f = c.amplitudes(0.0);
            assert_eq!(f.s1, f.s2);
            let b = c.amplitudes(PI);
            assert!((b.s1 + b.s2).norm() <= 1e-8 * b.s1.norm().max(1.0));
        }
    }

    #[test]
    fn absorbing_sphere_scatters_less_than_it_extinguishes() {
        let input = MieInput::in_host(2.0, 0.6, ComplexValue::new(1.33, 1e-3), 1.0);
        let c = mie_coefficients(&input).unwrap();
        assert!(mie_scattering_cross_section(&c, &input) < mie_extinction_cross_section(&c, &input));
        let input = water(2.0);
        let c = mie_coefficients(&input).unwrap();
        let (ct, cs) = (mie_extinction_cross_section(&c, &input), mie_scattering_cross_section(&c, &input));
        assert!(((ct - cs) / ct).abs() < 1e-6);
    }

    #[test]
    fn gamma_limit_is_continuous() {
        assert_eq!(host_absorption_gamma(0.0), 1.0);
        assert!((host_absorption_gamma(1e-4) - (1.0 + 2e-4 / 3.0 + 1e-8 / 4.0)).abs() < 1e-12);
        let below = host_absorption_gamma(1.0 - 1e-9);
        let above = host_absorption_gamma(1.0 + 1e-9);
        assert!((below - above).abs() < 1e-8);
    }

    #[test]
    fn rejects_out_of_range_size_parameter() {
        let err = mie_coefficients(&MieInput::in_host(2500.0, 0.6, ComplexValue::new(1.33, 0.0), 1.0)).unwrap_err();
        assert!(matches!(err, Error::SizeParameterRange { .. }));
        assert!(mie_coefficients(&MieInput::in_host(-1.0, 0.6, ComplexValue::new(1.33, 0.0), 1.0)).is_err());
    }

    #[test]
    fn extra_terms_do_not_change_extinction() {
        let input = water(20.0);
        let c = mie_coefficients(&input).unwrap();
        let more = coefficients_with_terms(&input, c.n_max + 10);
        let a = mie_extinction_cross_section(&c, &input);
        let b = mie_extinction_cross_section(&more, &input);
        assert!(((a - b) / a).abs() < 1e-8);
    }

    #[test]
    fn large_sphere_extinction_paradox() {
        let input = water(100.0);
        let c = mie_coefficients(&input).unwrap();
        let q = mie_extinction_cross_section(&c, &input) / (2.0 * PI * 100.0 * 100.0);
        assert!((0.99..=1.01).contains(&q), "{q}");
    }
}
