//! Special functions shared by the Mie and geometrical-optics code paths.
//!
//! Only what those paths need: cylindrical Bessel functions of order 0 and 1
//! (Fraunhofer diffraction), the Mie angular functions, and the logarithmic
//! derivative of the Riccati-Bessel function of the first kind.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex scalar used throughout the scattering code.
pub type ComplexValue = Complex64;

/// Arguments below this use the power series, above it the Hankel asymptotic
/// expansion.
const SERIES_LIMIT: f64 = 12.0;

/// First-order Bessel function of the first kind, J1(x).
pub fn bessel_j1(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < SERIES_LIMIT {
        series(ax, 1)
    } else {
        asymptotic(ax, 1)
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Zeroth-order Bessel function of the first kind, J0(x).
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < SERIES_LIMIT {
        series(ax, 0)
    } else {
        asymptotic(ax, 0)
    }
}

/// J1(x)/x with the x -> 0 limit of 1/2.
pub fn bessel_j1_over_x(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        0.5 - x * x / 16.0
    } else {
        bessel_j1(x) / x
    }
}

// sum_k (-1)^k (x/2)^(2k+order) / (k! (k+order)!)
fn series(x: f64, order: u32) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= -q / (k * (k + order as f64));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) {
            break;
        }
        if k > 300.0 {
            break;
        }
    }
    sum
}

// Hankel expansion, truncated at the smallest term.
fn asymptotic(x: f64, order: u32) -> f64 {
    let mu = 4.0 * (order as f64).powi(2);
    let z8 = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut prev = f64::INFINITY;
    let mut k = 1u32;
    loop {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) / (k as f64 * z8);
        if term.abs() >= prev {
            break;
        }
        prev = term.abs();
        // terms alternate between Q (odd k) and P (even k) with sign pattern
        // +Q, -P, -Q, +P, ...
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-17 {
            break;
        }
        k += 1;
        if k > 200 {
            break;
        }
    }
    let chi = x - (0.5 * order as f64 + 0.25) * std::f64::consts::PI;
    (2.0 / (std::f64::consts::PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Angular functions pi_n(cos theta) and tau_n(cos theta), n = 1..=n_max.
///
/// Index `i` of each returned vector holds order `n = i + 1`.
pub fn mie_angular_functions(cos_theta: f64, n_max: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_max == 0 {
        return Err(Error::InvalidInput("n_max must be at least 1".into()));
    }
    let mut pi = Vec::with_capacity(n_max);
    let mut tau = Vec::with_capacity(n_max);
    fill_angular(cos_theta, n_max, |_, p, t| {
        pi.push(p);
        tau.push(t);
    });
    Ok((pi, tau))
}

/// Streams (n, pi_n, tau_n) without allocating.
#[inline]
pub(crate) fn fill_angular(mu: f64, n_max: usize, mut f: impl FnMut(usize, f64, f64)) {
    let mut pi_prev = 0.0;
    let mut pi_cur = 1.0;
    for n in 1..=n_max {
        let nf = n as f64;
        let tau = nf * mu * pi_cur - (nf + 1.0) * pi_prev;
        f(n, pi_cur, tau);
        let pi_next = ((2.0 * nf + 1.0) * mu * pi_cur - (nf + 1.0) * pi_prev) / nf;
        pi_prev = pi_cur;
        pi_cur = pi_next;
    }
}

/// Logarithmic derivative D_n(z) = psi_n'(z)/psi_n(z) for n = 1..=n_max.
///
/// Downward recurrence from D = 0 at `max(n_max, |z|) + 15`.
pub fn riccati_log_derivative(z: ComplexValue, n_max: usize) -> Result<Vec<ComplexValue>> {
    if z.norm() == 0.0 {
        return Err(Error::InvalidInput("log-derivative argument must be non-zero".into()));
    }
    if n_max == 0 {
        return Err(Error::InvalidInput("n_max must be at least 1".into()));
    }
    let mut d = log_derivative_from_zero(z, n_max);
    d.remove(0);
    Ok(d)
}

/// Same recurrence, returning D_0..=D_n_max.
pub(crate) fn log_derivative_from_zero(z: ComplexValue, n_max: usize) -> Vec<ComplexValue> {
    let start = n_max.max(z.norm().ceil() as usize) + 15;
    let mut d = vec![ComplexValue::new(0.0, 0.0); n_max + 1];
    let mut cur = ComplexValue::new(0.0, 0.0);
    for n in (1..=start).rev() {
        let nz = n as f64 / z;
        cur = nz - 1.0 / (cur + nz);
        if n - 1 <= n_max {
            d[n - 1] = cur;
        }
    }
    d
}
