//! Geometrical optics approximation (GOA) of scattering by a sphere.
//!
//! The amplitude is the sum of Fraunhofer diffraction (forward hemisphere
//! only) and one term per emergent ray of order `p`, where `p` counts the
//! chords the ray travels inside the particle (`p = 0` is external
//! reflection). Absorbing particles use an effective real index and an
//! effective absorption coefficient that depend on the incidence angle.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::amplitude::AmplitudePair;
use crate::error::{Error, Result};
use crate::specfun::{bessel_j1_over_x, ComplexValue};

/// Highest ray order accepted for amplitude sums.
pub const MAX_RAY_ORDER: usize = 16;
/// Number of uniform brackets scanned in theta_i when inverting the
/// deflection map.
pub const ROOT_BRACKETS: usize = 4096;
/// Bisection stops once the bracket is narrower than this (radians).
pub const ROOT_TOLERANCE: f64 = 1e-12;
/// Lower bound applied to |d theta_p / d theta_i| near caustics.
pub const CAUSTIC_CLAMP: f64 = 1e-9;
/// Geometric terms are evaluated at theta clamped to
/// [THETA_CLAMP, pi - THETA_CLAMP].
pub const THETA_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GoaInput {
    pub radius_um: f64,
    /// Vacuum wavelength in µm.
    pub wavelength_um: f64,
    /// Relative index eta = eta_particle / eta_medium.
    pub eta: ComplexValue,
    pub eta_medium_real: f64,
    pub p_max_amplitude: usize,
    /// Odd ray orders summed in the extinction formula.
    pub p_set_extinction: BTreeSet<usize>,
}

impl GoaInput {
    pub fn new(radius_um: f64, wavelength_um: f64, eta: ComplexValue, eta_medium_real: f64) -> Self {
        Self {
            radius_um,
            wavelength_um,
            eta,
            eta_medium_real,
            p_max_amplitude: 3,
            p_set_extinction: BTreeSet::from([1]),
        }
    }

    pub fn with_p_max(mut self, p_max: usize) -> Self {
        self.p_max_amplitude = p_max;
        self
    }

    pub fn with_extinction_orders(mut self, orders: impl IntoIterator<Item = usize>) -> Self {
        self.p_set_extinction = orders.into_iter().collect();
        self
    }

    /// |k| = 2 pi eta_m / lambda in µm^-1.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.eta_medium_real / self.wavelength_um
    }

    pub fn size_parameter(&self) -> f64 {
        self.wavenumber() * self.radius_um
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_um > 0.0 && self.radius_um.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {}", self.radius_um)));
        }
        if !(self.wavelength_um > 0.0 && self.wavelength_um.is_finite()) {
            return Err(Error::InvalidInput(format!("wavelength must be positive, got {}", self.wavelength_um)));
        }
        if !(self.eta_medium_real > 0.0 && self.eta_medium_real.is_finite()) {
            return Err(Error::InvalidInput("host index must be positive".into()));
        }
        if !(self.eta.re > 0.0) || self.eta.im < 0.0 || !self.eta.im.is_finite() {
            return Err(Error::Domain("relative index needs Re > 0 and Im >= 0".into()));
        }
        if self.p_max_amplitude > MAX_RAY_ORDER {
            return Err(Error::InvalidInput(format!(
                "p_max_amplitude {} exceeds {MAX_RAY_ORDER}",
                self.p_max_amplitude
            )));
        }
        if let Some(p) = self.p_set_extinction.iter().find(|&&p| p % 2 == 0) {
            return Err(Error::InvalidInput(format!("extinction orders must be odd, got {p}")));
        }
        Ok(())
    }
}

/// Geometry and amplitude of one emergent ray reaching a given angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOrderContribution {
    pub p: usize,
    /// Scattering angle the ray emerges at (after clamping).
    pub theta: f64,
    pub theta_i: f64,
    /// Refraction angle (the effective angle for absorbing particles).
    pub theta_t: f64,
    pub q: i32,
    pub l: i64,
    pub s: i32,
    /// d theta_p / d theta_i before clamping.
    pub dtheta_p: f64,
    pub amplitude_s1: ComplexValue,
    pub amplitude_s2: ComplexValue,
    /// Set when |d theta_p / d theta_i| was clamped at a caustic.
    pub caustic_clamped: bool,
}

impl RayOrderContribution {
    pub fn amplitudes(&self) -> AmplitudePair {
        AmplitudePair::new(self.amplitude_s1, self.amplitude_s2)
    }
}

/// Fraunhofer diffraction amplitude alpha^2 J1(alpha sin theta) / (alpha sin theta).
pub fn fraunhofer_amplitude(alpha: f64, theta: f64) -> ComplexValue {
    ComplexValue::new(alpha * alpha * bessel_j1_over_x(alpha * theta.sin()), 0.0)
}

/// Deflection theta_p = 2 p theta_t - 2 theta_i - (p - 1) pi for a real
/// relative index. Fails when the refracted ray does not exist (total
/// internal reflection for eta < 1).
pub fn deflection_angle(p: usize, theta_i: f64, eta_effective: f64) -> Result<f64> {
    let sin_t = theta_i.sin() / eta_effective;
    if sin_t > 1.0 {
        return Err(Error::Domain(format!(
            "total internal reflection at theta_i = {theta_i} for eta = {eta_effective}"
        )));
    }
    Ok(2.0 * p as f64 * sin_t.asin() - 2.0 * theta_i - (p as f64 - 1.0) * PI)
}

/// Effective real index eta', effective absorption coefficient chi and
/// effective refraction angle theta'_t for incidence angle `theta_i`.
///
/// `eta` is the relative index; eta' and chi refer to the absolute particle
/// index eta * eta_medium_real.
pub fn effective_index(eta: ComplexValue, eta_medium_real: f64, theta_i: f64) -> (f64, f64, f64) {
    let e = effective(eta, eta_medium_real, theta_i);
    (e.eta_prime, e.chi, e.theta_t)
}

#[derive(Debug, Clone, Copy)]
struct Effective {
    eta_prime: f64,
    chi: f64,
    theta_t: f64,
    /// d eta' / d theta_i
    deta_prime: f64,
}

fn effective(eta: ComplexValue, eta_m: f64, theta_i: f64) -> Effective {
    let np = eta * eta_m;
    let (nr, ni) = (np.re, np.im);
    let sin_i = theta_i.sin();
    let u = (eta_m * sin_i).powi(2);
    let a = nr * nr - ni * ni;
    let b = (4.0 * nr * nr * ni * ni + (a - u) * (a - u)).sqrt();
    let eta_prime = (0.5 * (a + u) + 0.5 * b).sqrt();
    let chi = (0.5 * (u - a) + 0.5 * b).max(0.0).sqrt();
    let theta_t = (eta_m * sin_i / eta_prime).min(1.0).asin();
    let deta_prime = if b > 0.0 {
        let du = eta_m * eta_m * (2.0 * theta_i).sin();
        (0.5 - 0.5 * (a - u) / b) * du / (2.0 * eta_prime)
    } else {
        0.0
    };
    Effective { eta_prime, chi, theta_t, deta_prime }
}

/// Ray geometry at one incidence angle.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    theta_t: f64,
    /// eta' / eta_m, the relative index seen by this ray.
    n_rel: f64,
    chi: f64,
    theta_p: f64,
    dtheta_p: f64,
}

/// Index model shared by the solver and the extinction formula.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Media {
    eta: ComplexValue,
    eta_m: f64,
}

impl Media {
    fn absorbing(&self) -> bool {
        self.eta.im != 0.0
    }

    /// Largest incidence angle for which order `p` exists.
    fn theta_i_max(&self, p: usize) -> f64 {
        if p == 0 || self.absorbing() || self.eta.re >= 1.0 {
            FRAC_PI_2
        } else {
            self.eta.re.asin()
        }
    }

    fn geometry(&self, p: usize, theta_i: f64, use_effective: bool) -> Geometry {
        let pf = p as f64;
        let (theta_t, n_rel, chi, dtheta_t) = if use_effective {
            let e = effective(self.eta, self.eta_m, theta_i);
            let cos_t = e.theta_t.cos();
            let d = self.eta_m * (theta_i.cos() / e.eta_prime - theta_i.sin() * e.deta_prime / (e.eta_prime * e.eta_prime))
                / cos_t;
            (e.theta_t, e.eta_prime / self.eta_m, e.chi, d)
        } else {
            let n = self.eta.re;
            let theta_t = (theta_i.sin() / n).min(1.0).asin();
            (theta_t, n, 0.0, theta_i.cos() / (n * theta_t.cos()))
        };
        Geometry {
            theta_t,
            n_rel,
            chi,
            theta_p: 2.0 * pf * theta_t - 2.0 * theta_i - (pf - 1.0) * PI,
            dtheta_p: 2.0 * pf * dtheta_t - 2.0,
        }
    }
}

/// Maps a deflection angle to (theta, q, l) with theta = q (theta_p - 2 pi l)
/// in [0, pi].
fn fold(theta_p: f64) -> (f64, i32, i64) {
    let turns = (theta_p / (2.0 * PI)).floor();
    let t = theta_p - 2.0 * PI * turns;
    if t <= PI {
        (t, 1, turns as i64)
    } else {
        (2.0 * PI - t, -1, turns as i64 + 1)
    }
}

/// Fresnel amplitude reflection coefficients (R1 perpendicular, R2 parallel)
/// for a real relative index.
pub fn fresnel_real(eta: f64, theta_i: f64) -> (f64, f64) {
    let ci = theta_i.cos();
    let st = theta_i.sin() / eta;
    let ct = (1.0 - st * st).max(0.0).sqrt();
    ((ci - eta * ct) / (ci + eta * ct), (eta * ci - ct) / (eta * ci + ct))
}

/// Complex Fresnel reflection coefficients for an absorbing relative index.
pub fn fresnel_complex(eta: ComplexValue, theta_i: f64) -> (ComplexValue, ComplexValue) {
    let ci = theta_i.cos();
    let st = theta_i.sin() / eta;
    let ct = (1.0 - st * st).sqrt();
    ((ci - eta * ct) / (ci + eta * ct), (eta * ci - ct) / (eta * ci + ct))
}

/// epsilon_j: R for p = 0, (1 - R^2)(-R)^(p-1) otherwise.
pub fn ray_fraction<T>(p: usize, r: T) -> T
where
    T: Copy + std::ops::Mul<Output = T> + std::ops::Sub<Output = T> + std::ops::Neg<Output = T> + From<f64>,
{
    if p == 0 {
        return r;
    }
    let mut v = T::from(1.0) - r * r;
    for _ in 1..p {
        v = v * -r;
    }
    v
}

fn focal_phase(p: usize, l: i64, s: i32, q: i32) -> f64 {
    FRAC_PI_2 * (1.0 + p as f64 - 2.0 * l as f64 - 0.5 * s as f64 - 0.5 * q as f64)
}

/// Inverts the deflection map of each ray order on a precomputed theta_i
/// scan. The scan depends only on the indices, so one solver serves any
/// radius and wavelength with the same relative index.
#[derive(Debug, Clone)]
pub struct GoaSolver {
    media: Media,
    use_effective: bool,
    orders: Vec<OrderScan>,
}

#[derive(Debug, Clone)]
struct OrderScan {
    theta_i: Vec<f64>,
    folded: Vec<f64>,
    /// Sample index ranges [start, end] over which `folded` is monotone.
    /// Consecutive runs share their end sample; every bracket lies in
    /// exactly one run.
    runs: Vec<(usize, usize)>,
}

fn monotone_runs(v: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    let mut dir = 0.0;
    for k in 0..v.len() - 1 {
        let d = v[k + 1] - v[k];
        if d == 0.0 {
            continue;
        }
        if dir == 0.0 {
            dir = d.signum();
        } else if d.signum() != dir {
            runs.push((start, k));
            start = k;
            dir = d.signum();
        }
    }
    runs.push((start, v.len() - 1));
    runs
}

impl GoaSolver {
    pub fn new(eta: ComplexValue, eta_medium_real: f64, p_max: usize) -> Result<Self> {
        let probe = GoaInput::new(1.0, 1.0, eta, eta_medium_real).with_p_max(p_max);
        probe.validate()?;
        let media = Media { eta, eta_m: eta_medium_real };
        Ok(Self::build(media, media.absorbing(), p_max))
    }

    fn build(media: Media, use_effective: bool, p_max: usize) -> Self {
        let orders = (0..=p_max)
            .map(|p| {
                let hi = media.theta_i_max(p);
                let theta_i: Vec<f64> = (0..=ROOT_BRACKETS).map(|k| hi * k as f64 / ROOT_BRACKETS as f64).collect();
                let folded: Vec<f64> =
                    theta_i.iter().map(|&t| fold(media.geometry(p, t, use_effective).theta_p).0).collect();
                let runs = monotone_runs(&folded);
                OrderScan { theta_i, folded, runs }
            })
            .collect();
        Self { media, use_effective, orders }
    }

    pub fn p_max(&self) -> usize {
        self.orders.len() - 1
    }

    /// Incidence angles of order `p` rays leaving at scattering angle `theta`.
    pub fn incident_angles(&self, p: usize, theta: f64) -> Vec<f64> {
        let Some(scan) = self.orders.get(p) else {
            return Vec::new();
        };
        let g = |t: f64| fold(self.media.geometry(p, t, self.use_effective).theta_p).0 - theta;
        let mut roots = Vec::new();
        for &(start, end) in &scan.runs {
            // within a monotone run the predicate g < 0 flips at most once
            let run = &scan.folded[start..=end];
            let first_negative = run[0] - theta < 0.0;
            if first_negative == (run[run.len() - 1] - theta < 0.0) {
                continue;
            }
            let k = start + run.partition_point(|&v| (v - theta < 0.0) == first_negative) - 1;
            let g0 = scan.folded[k] - theta;
            let (mut lo, mut hi) = (scan.theta_i[k], scan.theta_i[k + 1]);
            let lo_negative = g0 < 0.0;
            while hi - lo > ROOT_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                if (g(mid) < 0.0) == lo_negative {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        roots
    }

    /// All emergent rays of orders 0..=p_max at `theta`, amplitudes included.
    pub fn contributions(&self, radius_um: f64, wavelength_um: f64, theta: f64) -> Vec<RayOrderContribution> {
        let theta = theta.clamp(THETA_CLAMP, PI - THETA_CLAMP);
        let alpha = 2.0 * PI * self.media.eta_m * radius_um / wavelength_um;
        let mut out = Vec::new();
        for p in 0..=self.p_max() {
            for theta_i in self.incident_angles(p, theta) {
                out.push(self.emergent(p, theta_i, theta, alpha));
            }
        }
        out
    }

    fn emergent(&self, p: usize, theta_i: f64, theta: f64, alpha: f64) -> RayOrderContribution {
        let g = self.media.geometry(p, theta_i, self.use_effective);
        let (_, q, l) = fold(g.theta_p);
        let s = if g.dtheta_p < 0.0 { -1 } else { 1 };
        let caustic_clamped = g.dtheta_p.abs() < CAUSTIC_CLAMP;
        let dtheta = g.dtheta_p.abs().max(CAUSTIC_CLAMP);
        let spread = ((2.0 * theta_i).sin().max(0.0) / (2.0 * theta.sin() * dtheta)).sqrt();
        let phase = 2.0 * alpha * (theta_i.cos() - p as f64 * g.n_rel * g.theta_t.cos()) + focal_phase(p, l, s, q);
        let (eps1, eps2) = if self.use_effective {
            let (r1, r2) = fresnel_complex(self.media.eta, theta_i);
            let xi = (-2.0 * g.chi * p as f64 * alpha * g.theta_t.cos().powi(2) / self.media.eta_m).exp();
            (ray_fraction(p, r1) * xi, ray_fraction(p, r2) * xi)
        } else {
            let (r1, r2) = fresnel_real(self.media.eta.re, theta_i);
            (ComplexValue::from(ray_fraction(p, r1)), ComplexValue::from(ray_fraction(p, r2)))
        };
        let common = ComplexValue::from_polar(alpha * spread, phase);
        RayOrderContribution {
            p,
            theta,
            theta_i,
            theta_t: g.theta_t,
            q,
            l,
            s,
            dtheta_p: g.dtheta_p,
            amplitude_s1: eps1 * common,
            amplitude_s2: eps2 * common,
            caustic_clamped,
        }
    }

    /// Total GOA amplitudes: emergent rays plus diffraction for theta < pi/2.
    pub fn amplitudes(&self, radius_um: f64, wavelength_um: f64, theta: f64) -> GoaAmplitudes {
        let alpha = 2.0 * PI * self.media.eta_m * radius_um / wavelength_um;
        let mut sum = AmplitudePair::default();
        let mut caustic_clamped = false;
        for c in self.contributions(radius_um, wavelength_um, theta) {
            sum += c.amplitudes();
            caustic_clamped |= c.caustic_clamped;
        }
        if theta < FRAC_PI_2 {
            let d = fraunhofer_amplitude(alpha, theta);
            sum += AmplitudePair::new(d, d);
        }
        GoaAmplitudes { amplitudes: sum, caustic_clamped }
    }

    /// Scattering angles of the rainbows of orders 2..=p_max, as (p, theta)
    /// pairs. Located where d theta_p / d theta_i changes sign.
    pub fn rainbow_angles(&self) -> Vec<(usize, f64)> {
        self.caustics()
            .into_iter()
            .filter(|c| c.kind == CausticKind::Rainbow)
            .map(|c| (c.p, c.theta))
            .collect()
    }

    /// Angles where the geometric amplitude diverges: rainbows (stationary
    /// deflection) and glories (an off-axis ray leaving exactly forward or
    /// backward, where sin theta vanishes in the spreading factor).
    pub fn caustics(&self) -> Vec<Caustic> {
        let mut out = Vec::new();
        for p in 0..=self.p_max() {
            let scan = &self.orders[p];
            let geo = |t: f64| self.media.geometry(p, t, self.use_effective);
            if p >= 2 {
                let d = |t: f64| geo(t).dtheta_p;
                for k in 0..ROOT_BRACKETS {
                    let (a, b) = (scan.theta_i[k], scan.theta_i[k + 1]);
                    let (da, db) = (d(a), d(b));
                    if (da < 0.0) == (db < 0.0) || !da.is_finite() || !db.is_finite() {
                        continue;
                    }
                    let t = bisect(a, b, |t| (d(t) < 0.0) == (da < 0.0));
                    out.push(Caustic { p, theta: fold(geo(t).theta_p).0, kind: CausticKind::Rainbow });
                }
            }
            // the first bracket holds the central ray, which is not a glory
            for k in 1..ROOT_BRACKETS {
                let (a, b) = (scan.theta_i[k], scan.theta_i[k + 1]);
                let (ma, mb) = ((geo(a).theta_p / PI).floor(), (geo(b).theta_p / PI).floor());
                if ma == mb {
                    continue;
                }
                let m = ma.max(mb);
                let theta = if m.rem_euclid(2.0) == 0.0 { 0.0 } else { PI };
                out.push(Caustic { p, theta, kind: CausticKind::Glory });
            }
        }
        out
    }
}

fn bisect(mut lo: f64, mut hi: f64, left_side: impl Fn(f64) -> bool) -> f64 {
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if left_side(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausticKind {
    Rainbow,
    Glory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Caustic {
    pub p: usize,
    /// Scattering angle in radians.
    pub theta: f64,
    pub kind: CausticKind,
}

/// Summed GOA amplitudes and whether any term hit the caustic clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoaAmplitudes {
    pub amplitudes: AmplitudePair,
    pub caustic_clamped: bool,
}

/// Rays of order `p` reaching `theta` for a real relative index.
pub fn solve_incident_angles(p: usize, theta: f64, eta_effective: f64) -> Vec<RayOrderContribution> {
    let media = Media { eta: ComplexValue::new(eta_effective, 0.0), eta_m: 1.0 };
    let solver = GoaSolver::build(media, false, p);
    let theta = theta.clamp(0.0, PI);
    solver
        .incident_angles(p, theta)
        .into_iter()
        .map(|theta_i| {
            let g = media.geometry(p, theta_i, false);
            let (_, q, l) = fold(g.theta_p);
            RayOrderContribution {
                p,
                theta,
                theta_i,
                theta_t: g.theta_t,
                q,
                l,
                s: if g.dtheta_p < 0.0 { -1 } else { 1 },
                dtheta_p: g.dtheta_p,
                amplitude_s1: ComplexValue::new(0.0, 0.0),
                amplitude_s2: ComplexValue::new(0.0, 0.0),
                caustic_clamped: false,
            }
        })
        .collect()
}

/// Amplitude of one solved ray (fills in the amplitude fields).
pub fn emergent_amplitude(contribution: &RayOrderContribution, input: &GoaInput) -> Result<RayOrderContribution> {
    input.validate()?;
    let media = Media { eta: input.eta, eta_m: input.eta_medium_real };
    let solver = GoaSolver { media, use_effective: media.absorbing(), orders: Vec::new() };
    let theta = contribution.theta.clamp(THETA_CLAMP, PI - THETA_CLAMP);
    Ok(solver.emergent(contribution.p, contribution.theta_i, theta, input.size_parameter()))
}

/// Total GOA amplitudes (diffraction plus ray orders) for a single input.
/// Builds a solver per call; use [`GoaSolver`] directly when evaluating
/// many angles.
pub fn goa_amplitudes(input: &GoaInput, theta: f64) -> Result<GoaAmplitudes> {
    input.validate()?;
    let solver = GoaSolver::new(input.eta, input.eta_medium_real, input.p_max_amplitude)?;
    Ok(solver.amplitudes(input.radius_um, input.wavelength_um, theta))
}

/// Extinction cross section and degeneracy flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoaExtinction {
    /// C_t in µm².
    pub value: f64,
    /// eta = 1: the particle is invisible and C_t is reported as 0.
    pub index_matched: bool,
    /// Some order had p / eta = 1 and was left out of the sum.
    pub skipped_orders: bool,
}

/// C_t = 2 pi r^2 + (2 pi r / |k|) sum_p Re{eps(0) xi_p(0) e^{i phi}} / |p/eta' - 1|.
///
/// For a real index this is the classic cos(phi_p + phi_f) form; for an
/// absorbing index the complex Fresnel fraction and the attenuation factor
/// at normal incidence enter the real part.
pub fn goa_extinction_cross_section(input: &GoaInput) -> Result<GoaExtinction> {
    input.validate()?;
    if input.eta == ComplexValue::new(1.0, 0.0) {
        return Ok(GoaExtinction { value: 0.0, index_matched: true, skipped_orders: false });
    }
    let r = input.radius_um;
    let k = input.wavenumber();
    let alpha = input.size_parameter();
    let absorbing = input.eta.im != 0.0;
    let e0 = effective(input.eta, input.eta_medium_real, 0.0);
    let n = if absorbing { e0.eta_prime / input.eta_medium_real } else { input.eta.re };
    let mut sum = 0.0;
    let mut skipped_orders = false;
    for &p in &input.p_set_extinction {
        let pf = p as f64;
        let denom = (pf / n - 1.0).abs();
        if denom == 0.0 {
            skipped_orders = true;
            continue;
        }
        let s = if 2.0 * pf / n - 2.0 < 0.0 { -1 } else { 1 };
        let l = -((p as i64 - 1) / 2);
        let phase = 2.0 * alpha * (1.0 - pf * n) + focal_phase(p, l, s, s);
        let term = if absorbing {
            let (r1, _) = fresnel_complex(input.eta, 0.0);
            let xi = (-2.0 * e0.chi * pf * alpha / input.eta_medium_real).exp();
            (ray_fraction(p, r1) * xi * ComplexValue::from_polar(1.0, phase)).re
        } else {
            let (r1, _) = fresnel_real(n, 0.0);
            ray_fraction(p, r1) * phase.cos()
        };
        sum += term / denom;
    }
    Ok(GoaExtinction { value: 2.0 * PI * r * r + 2.0 * PI * r / k * sum, index_matched: false, skipped_orders })
}

/// Closed form for p = {1} and a real index:
/// 2 pi r^2 + 4 r lambda' eta^2 / ((eta+1)^2 |eta-1|) sin(4 pi r (1 - eta) / lambda'),
/// with lambda' the wavelength in the host.
pub fn extinction_closed_form(radius_um: f64, wavelength_um: f64, eta: f64, eta_medium_real: f64) -> f64 {
    let l = wavelength_um / eta_medium_real;
    let r = radius_um;
    2.0 * PI * r * r
        + 4.0 * r * l * eta * eta / ((eta + 1.0).powi(2) * (eta - 1.0).abs()) * (4.0 * PI * r * (1.0 - eta) / l).sin()
}

/// C_a = (16 pi^2 r^3 eta_i / (3 lambda' eta_r)) [eta_r^3 - (eta_r^2 - 1)^(3/2)],
/// with lambda' the wavelength in the host.
pub fn goa_absorption_cross_section(input: &GoaInput) -> Result<f64> {
    input.validate()?;
    let (nr, ni) = (input.eta.re, input.eta.im);
    if nr <= 1.0 {
        return Err(Error::Domain(format!("absorption formula needs Re(eta) > 1, got {nr}")));
    }
    let r = input.radius_um;
    let l = input.wavelength_um / input.eta_medium_real;
    Ok(16.0 * PI * PI * r.powi(3) * ni / (3.0 * l * nr) * (nr.powi(3) - (nr * nr - 1.0).powf(1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::bessel_j1;

    const WATER: f64 = 1.33;

    fn water(r: f64) -> GoaInput {
        GoaInput::new(r, 0.6, ComplexValue::new(WATER, 0.0), 1.0)
    }

    #[test]
    fn diffraction_limits() {
        let alpha = 500.0;
        assert_eq!(fraunhofer_amplitude(alpha, 0.0).re, alpha * alpha / 2.0);
        let theta = (3.8317059702 / alpha).asin();
        assert!(fraunhofer_amplitude(alpha, theta).norm() < 1e-6 * alpha * alpha);
        assert!(bessel_j1(3.8317059702).abs() < 1e-8);
    }

    #[test]
    fn central_rays() {
        assert!((deflection_angle(0, 0.0, WATER).unwrap() - PI).abs() < 1e-15);
        assert_eq!(deflection_angle(1, 0.0, WATER).unwrap(), 0.0);
        assert!(deflection_angle(1, 1.2, 0.75).is_err());
    }

    // Scattering angle of the p = 2 ray written out directly.
    fn second_order_angle(theta_i: f64) -> f64 {
        let tt = (theta_i.sin() / WATER).asin();
        let dev = 4.0 * tt - 2.0 * theta_i - PI;
        dev.abs()
    }

    #[test]
    fn primary_rainbow_matches_minimization() {
        // golden-section minimization of the p = 2 angle
        let (mut a, mut b) = (0.0, FRAC_PI_2);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-12 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if second_order_angle(c) < second_order_angle(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let oracle = second_order_angle(0.5 * (a + b));
        // 137.48 deg for eta = 1.33; the often quoted 137.9 deg belongs to eta = 1.333
        assert!((oracle.to_degrees() - 137.48).abs() < 0.01);
        let analytic_ti = ((WATER * WATER - 1.0) / 3.0).sqrt().acos();
        assert!((second_order_angle(analytic_ti) - oracle).abs() < 1e-12);
        let solver = GoaSolver::new(ComplexValue::new(WATER, 0.0), 1.0, 2).unwrap();
        let bows = solver.rainbow_angles();
        assert_eq!(bows.len(), 1);
        assert!((bows[0].1 - oracle).abs() < 1e-9, "{} vs {oracle}", bows[0].1);
    }

    #[test]
    fn backward_glory_is_detected() {
        let solver = GoaSolver::new(ComplexValue::new(1.49, 0.0), 1.0, 3).unwrap();
        let caustics = solver.caustics();
        assert!(caustics.iter().any(|c| c.kind == CausticKind::Glory && c.p == 2 && c.theta == PI));
        // water has no glory among the first three orders
        let solver = GoaSolver::new(ComplexValue::new(WATER, 0.0), 1.0, 3).unwrap();
        assert!(solver.caustics().iter().all(|c| c.kind == CausticKind::Rainbow));
    }

    fn brute_force_roots(p: usize, theta: f64) -> usize {
        let n = 1_000_000;
        let f = |k: usize| {
            let t = FRAC_PI_2 * k as f64 / n as f64;
            fold(deflection_angle(p, t, WATER).unwrap()).0 - theta
        };
        let mut count = 0;
        let mut prev = f(0);
        for k in 1..=n {
            let cur = f(k);
            if (prev < 0.0) != (cur < 0.0) {
                count += 1;
            }
            prev = cur;
        }
        count
    }

    #[test]
    fn root_counts() {
        for deg in [10.0, 45.0, 90.0, 135.0, 170.0_f64] {
            assert_eq!(solve_incident_angles(0, deg.to_radians(), WATER).len(), 1);
        }
        let at160 = solve_incident_angles(2, 160f64.to_radians(), WATER);
        assert_eq!(at160.len(), 2);
        assert_eq!(brute_force_roots(2, 160f64.to_radians()), 2);
        assert!(solve_incident_angles(2, 120f64.to_radians(), WATER).is_empty());
        assert_eq!(brute_force_roots(2, 120f64.to_radians()), 0);
        for c in &at160 {
            let theta = c.q as f64 * (deflection_angle(2, c.theta_i, WATER).unwrap() - 2.0 * PI * c.l as f64);
            assert!((theta - 160f64.to_radians()).abs() < 1e-9);
        }
    }

    #[test]
    fn fresnel_fractions_at_normal_incidence() {
        let (r1, r2) = fresnel_real(WATER, 0.0);
        assert!((r1.abs() - 0.33 / 2.33).abs() < 1e-15);
        assert!((r2.abs() - 0.33 / 2.33).abs() < 1e-15);
        assert!((0.1416 - r1.abs()).abs() < 1e-4);
        let eps = ray_fraction(1, r1);
        assert!((eps - 0.97995).abs() < 1e-5, "{eps}");
    }

    #[test]
    fn effective_index_limits() {
        let (ep, chi, tt) = effective_index(ComplexValue::new(1.5, 0.0), 1.2, 0.7);
        assert!((ep - 1.8).abs() < 1e-14);
        assert_eq!(chi, 0.0);
        assert!((1.2 * 0.7f64.sin() - ep * tt.sin()).abs() < 1e-14);
        // at normal incidence eta' and chi are the real and imaginary parts
        let (ep, chi, tt) = effective_index(ComplexValue::new(1.5, 0.02), 1.2, 0.0);
        assert!((ep - 1.8).abs() < 1e-14);
        assert!((chi - 0.024).abs() < 1e-14);
        assert_eq!(tt, 0.0);
    }

    #[test]
    fn effective_index_matches_formula() {
        let (nr, ni, nm) = (1.5, 0.1, 1.0);
        for k in 0..100 {
            let ti = FRAC_PI_2 * k as f64 / 99.0;
            let s2 = (nm * ti.sin()).powi(2);
            let root = (4.0 * nr * nr * ni * ni + (nr * nr - ni * ni - s2).powi(2)).sqrt();
            let ep = (0.5 * (nr * nr - ni * ni + s2) + 0.5 * root).sqrt();
            let chi = (0.5 * (-nr * nr + ni * ni + s2) + 0.5 * root).sqrt();
            let (a, b, _) = effective_index(ComplexValue::new(nr, ni), nm, ti);
            assert!((a - ep).abs() < 1e-14 && (b - chi).abs() < 1e-14);
        }
    }

    #[test]
    fn attenuation_vanishes_without_absorption() {
        let e = effective(ComplexValue::new(WATER, 0.0), 1.0, 0.4);
        let xi = (-2.0 * e.chi * 3.0 * 1000.0 * e.theta_t.cos().powi(2)).exp();
        assert_eq!(xi, 1.0);
    }

    #[test]
    fn absorbing_path_reduces_to_real_path() {
        let media = Media { eta: ComplexValue::new(WATER, 0.0), eta_m: 1.0 };
        let real = GoaSolver::build(media, false, 3);
        let complex = GoaSolver::build(media, true, 3);
        for deg in [5.0, 30.0, 60.0, 100.0, 150.0, 175.0_f64] {
            let a = real.amplitudes(20.0, 0.6, deg.to_radians()).amplitudes;
            let b = complex.amplitudes(20.0, 0.6, deg.to_radians()).amplitudes;
            let scale = a.s1.norm().max(a.s2.norm());
            assert!((a.s1 - b.s1).norm() <= 1e-12 * scale, "{deg}: {a:?} {b:?}");
            assert!((a.s2 - b.s2).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn extinction_general_form_matches_closed_form() {
        for r in [0.5, 1.0, 1.7, 2.345, 10.0, 77.7] {
            let general = goa_extinction_cross_section(&water(r)).unwrap().value;
            let closed = extinction_closed_form(r, 0.6, WATER, 1.0);
            assert!(((general - closed) / closed).abs() < 1e-12, "{r}: {general} {closed}");
        }
    }

    #[test]
    fn extinction_at_sine_zeros() {
        for m in 1..6 {
            let r = m as f64 * 0.6 / (4.0 * 0.33);
            let ct = extinction_closed_form(r, 0.6, WATER, 1.0);
            assert!(((ct - 2.0 * PI * r * r) / ct).abs() < 1e-12);
        }
    }

    #[test]
    fn index_matched_extinction_is_flagged() {
        let e = goa_extinction_cross_section(&GoaInput::new(3.0, 0.6, ComplexValue::new(1.0, 0.0), 1.0)).unwrap();
        assert!(e.index_matched);
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn absorption_scaling() {
        let base = GoaInput::new(5.0, 0.6, ComplexValue::new(1.33, 1e-3), 1.0);
        let ca = goa_absorption_cross_section(&base).unwrap();
        let mut doubled = base.clone();
        doubled.eta.im = 2e-3;
        assert!((goa_absorption_cross_section(&doubled).unwrap() / ca - 2.0).abs() < 1e-12);
        let mut bigger = base.clone();
        bigger.radius_um = 10.0;
        assert!((goa_absorption_cross_section(&bigger).unwrap() / ca - 8.0).abs() < 1e-12);
        assert_eq!(goa_absorption_cross_section(&water(5.0)).unwrap(), 0.0);
        let bubble = GoaInput::new(5.0, 0.6, ComplexValue::new(0.75, 1e-3), 1.0);
        assert!(goa_absorption_cross_section(&bubble).unwrap_err().is_domain());
    }

    #[test]
    fn input_validation() {
        assert!(water(1.0).with_p_max(17).validate().is_err());
        assert!(water(1.0).with_extinction_orders([1, 2]).validate().is_err());
        assert!(water(-1.0).validate().is_err());
    }

    #[test]
    fn forward_amplitude_is_diffraction_dominated() {
        let input = water(200.0);
        let s = goa_amplitudes(&input, 0.0).unwrap().amplitudes;
        let alpha = input.size_parameter();
        assert!((s.s1.re / (alpha * alpha / 2.0) - 1.0).abs() < 0.01);
    }
}
