//! Single-particle optics: routes each radius to Mie or GOA and tabulates
//! the phase function for rendering.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use crate::amplitude::AmplitudePair;
use crate::error::{Error, Result};
use crate::goa::{
    fraunhofer_amplitude, goa_absorption_cross_section, goa_extinction_cross_section, GoaInput, GoaSolver,
};
use crate::mie::{
    mie_coefficients, mie_extinction_cross_section, mie_scattering_cross_section, MieCoefficients, MieInput,
};
use crate::specfun::{bessel_j0, bessel_j1, ComplexValue};

/// Default number of uniformly spaced theta nodes (0.1 deg spacing).
pub const DEFAULT_THETA_NODES: usize = 1801;
/// Fewest theta nodes accepted by [`build_phase_table`].
pub const MIN_THETA_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridPolicy {
    /// Radii at or above this use GOA, below it Mie.
    pub r_switch_um: f64,
}

impl Default for HybridPolicy {
    fn default() -> Self {
        Self { r_switch_um: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mie,
    Goa,
}

impl HybridPolicy {
    pub fn new(r_switch_um: f64) -> Result<Self> {
        if !(r_switch_um > 0.0 && r_switch_um.is_finite()) {
            return Err(Error::InvalidInput(format!("r_switch must be positive, got {r_switch_um}")));
        }
        Ok(Self { r_switch_um })
    }

    pub fn method(&self, radius_um: f64) -> Method {
        if radius_um >= self.r_switch_um {
            Method::Goa
        } else {
            Method::Mie
        }
    }

    /// Stable fingerprint used to key cached tables.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(&self.r_switch_um.to_bits().to_le_bytes())
    }
}

/// A sphere at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub radius_um: f64,
    /// Vacuum wavelength in µm.
    pub wavelength_um: f64,
    /// Relative index eta_particle / eta_medium.
    pub eta: ComplexValue,
    pub eta_medium: f64,
}

impl Sphere {
    pub fn new(radius_um: f64, wavelength_um: f64, eta: ComplexValue, eta_medium: f64) -> Self {
        Self { radius_um, wavelength_um, eta, eta_medium }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.eta_medium / self.wavelength_um
    }

    pub fn size_parameter(&self) -> f64 {
        self.wavenumber() * self.radius_um
    }

    fn mie_input(&self) -> MieInput {
        MieInput::in_host(self.radius_um, self.wavelength_um, self.eta, self.eta_medium)
    }

    fn goa_input(&self) -> GoaInput {
        GoaInput::new(self.radius_um, self.wavelength_um, self.eta, self.eta_medium)
    }
}

/// Amplitudes from whichever method the policy selects for this radius.
pub fn amplitudes(sphere: &Sphere, theta: f64, policy: &HybridPolicy) -> Result<AmplitudePair> {
    Ok(AmplitudeSource::new(sphere, policy)?.amplitudes(theta))
}

/// Prepared evaluator: Mie coefficients or a GOA root solver.
enum AmplitudeSource {
    Mie(MieCoefficients),
    Goa { solver: GoaSolver, sphere: Sphere },
}

impl AmplitudeSource {
    fn new(sphere: &Sphere, policy: &HybridPolicy) -> Result<Self> {
        match policy.method(sphere.radius_um) {
            Method::Mie => Ok(Self::Mie(mie_coefficients(&sphere.mie_input())?)),
            Method::Goa => {
                let input = sphere.goa_input();
                input.validate()?;
                let solver = GoaSolver::new(input.eta, input.eta_medium_real, input.p_max_amplitude)?;
                Ok(Self::Goa { solver, sphere: *sphere })
            }
        }
    }

    fn amplitudes(&self, theta: f64) -> AmplitudePair {
        match self {
            Self::Mie(c) => c.amplitudes(theta),
            Self::Goa { solver, sphere } => solver.amplitudes(sphere.radius_um, sphere.wavelength_um, theta).amplitudes,
        }
    }
}

/// Cross sections in µm².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSections {
    pub c_t: f64,
    pub c_s: f64,
    pub c_a: f64,
    /// A negative value produced by the subtraction was clamped to zero.
    pub clamped: bool,
}

impl CrossSections {
    fn from_extinction_absorption(c_t: f64, c_a: f64) -> Self {
        let c_s = c_t - c_a;
        if c_s < 0.0 {
            log::debug!("negative scattering cross section {c_s:e} clamped to 0");
            Self { c_t: c_t.max(0.0), c_s: 0.0, c_a: c_t.max(0.0), clamped: true }
        } else {
            Self { c_t, c_s, c_a, clamped: false }
        }
    }

    fn from_extinction_scattering(c_t: f64, c_s: f64) -> Self {
        let c_s = c_s.max(0.0);
        let c_a = c_t - c_s;
        if c_a < 0.0 {
            // real index: C_s and C_t agree to rounding
            Self { c_t, c_s: c_t, c_a: 0.0, clamped: c_a < -1e-9 * c_t.abs() }
        } else {
            Self { c_t, c_s, c_a, clamped: false }
        }
    }
}

/// C_t, C_s, C_a from the selected method. The GOA branch takes C_t from the
/// analytic extinction formula and C_s = C_t - C_a.
pub fn cross_sections(sphere: &Sphere, policy: &HybridPolicy) -> Result<CrossSections> {
    match policy.method(sphere.radius_um) {
        Method::Mie => {
            let input = sphere.mie_input();
            let c = mie_coefficients(&input)?;
            Ok(CrossSections::from_extinction_scattering(
                mie_extinction_cross_section(&c, &input),
                mie_scattering_cross_section(&c, &input),
            ))
        }
        Method::Goa => {
            let input = sphere.goa_input();
            let c_t = goa_extinction_cross_section(&input)?.value;
            let c_a = if input.eta.im == 0.0 { 0.0 } else { goa_absorption_cross_section(&input)? };
            Ok(CrossSections::from_extinction_absorption(c_t, c_a))
        }
    }
}

/// Normalized single-particle phase function f_p(theta) in sr^-1.
///
/// Builds the normalization on every call; use [`PhaseEvaluator`] for
/// repeated evaluation.
pub fn single_particle_phase(sphere: &Sphere, theta: f64, policy: &HybridPolicy) -> Result<f64> {
    Ok(PhaseEvaluator::new(sphere, policy)?.eval(theta))
}

/// Phase function with its normalization precomputed.
///
/// The Mie branch normalizes by the series scattering sum. The GOA branch
/// normalizes by the integrated intensity, since C_t - C_a need not match the
/// integral of the approximate amplitudes.
pub struct PhaseEvaluator {
    source: AmplitudeSource,
    /// Integral of |S1|^2 + |S2|^2 over the sphere.
    total: f64,
}

impl PhaseEvaluator {
    pub fn new(sphere: &Sphere, policy: &HybridPolicy) -> Result<Self> {
        let source = AmplitudeSource::new(sphere, policy)?;
        let total = match &source {
            AmplitudeSource::Mie(c) => 4.0 * PI * c.scattering_sum(),
            AmplitudeSource::Goa { .. } => {
                2.0 * PI * bin_masses(&source, sphere, &uniform_nodes(DEFAULT_THETA_NODES)).iter().sum::<f64>()
            }
        };
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::UndefinedPhase);
        }
        Ok(Self { source, total })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.source.amplitudes(theta).intensity() / self.total
    }
}

fn uniform_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|k| PI * k as f64 / (n - 1) as f64).collect()
}

/// Integral of |S1|^2 + |S2|^2 over cos(theta) within each node interval.
///
/// Mie intensities are smooth at table resolution and use Simpson's rule in
/// cos(theta). GOA intensities integrate the Fraunhofer part analytically and
/// the remainder with the trapezoid rule, which keeps the narrow diffraction
/// lobe of large spheres exact.
fn bin_masses(source: &AmplitudeSource, sphere: &Sphere, nodes: &[f64]) -> Vec<f64> {
    let intensity = |theta: f64| source.amplitudes(theta).intensity();
    let mu: Vec<f64> = nodes.iter().map(|t| t.cos()).collect();
    match source {
        AmplitudeSource::Mie(_) => {
            let at_nodes: Vec<f64> = nodes.iter().map(|&t| intensity(t)).collect();
            (0..nodes.len() - 1)
                .map(|k| {
                    let dmu = mu[k] - mu[k + 1];
                    let mid = (0.5 * (mu[k] + mu[k + 1])).acos();
                    dmu / 6.0 * (at_nodes[k] + 4.0 * intensity(mid) + at_nodes[k + 1])
                })
                .collect()
        }
        AmplitudeSource::Goa { .. } => {
            let alpha = sphere.size_parameter();
            let diffraction = |t: f64| {
                if t < FRAC_PI_2 {
                    2.0 * fraunhofer_amplitude(alpha, t).norm_sqr()
                } else {
                    0.0
                }
            };
            let residual: Vec<f64> = nodes.iter().map(|&t| intensity(t) - diffraction(t)).collect();
            (0..nodes.len() - 1)
                .map(|k| {
                    let dmu = mu[k] - mu[k + 1];
                    let geometric = 0.5 * dmu * (residual[k] + residual[k + 1]);
                    (diffraction_mass(alpha, nodes[k], nodes[k + 1]) + geometric).max(0.0)
                })
                .collect()
        }
    }
}

/// Integral over cos(theta) in [cos b, cos a] of 2 |S_D|^2, restricted to
/// theta < pi/2. Uses int J1(x)^2/x dx = -(J0^2 + J1^2)/2 with cos(theta)
/// frozen at the interval midpoint.
fn diffraction_mass(alpha: f64, a: f64, b: f64) -> f64 {
    let b = b.min(FRAC_PI_2);
    if a >= b {
        return 0.0;
    }
    let g = |t: f64| {
        let x = alpha * t.sin();
        let (j0, j1) = (bessel_j0(x), bessel_j1(x));
        j0 * j0 + j1 * j1
    };
    let cos_mid = (0.5 * (a + b)).cos();
    2.0 * alpha * alpha / cos_mid * 0.5 * (g(a) - g(b))
}

/// Tabulated phase function on uniform theta nodes.
///
/// Each node interval carries the exact integral of the phase function over
/// it; within an interval the density is constant in cos(theta). Evaluation
/// and sampling use the same piecewise-constant density, so sampled weights
/// f / pdf are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTable {
    /// Phase function at the nodes, sr^-1.
    values: Vec<f64>,
    /// Probability of each node interval (sums to 1).
    mass: Vec<f64>,
    /// Cumulative probability at each node.
    cdf: Vec<f64>,
    mu: Vec<f64>,
}

impl PhaseTable {
    /// Builds a table from per-interval masses and node values (both in any
    /// common scale).
    pub fn from_masses(node_values: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let n = node_values.len();
        if n < 2 || masses.len() != n - 1 {
            return Err(Error::InvalidInput("phase table needs n nodes and n-1 interval masses".into()));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) || masses.iter().any(|&m| m < 0.0) {
            return Err(Error::UndefinedPhase);
        }
        let mass: Vec<f64> = masses.iter().map(|m| m / total).collect();
        let values = node_values.iter().map(|v| v / (2.0 * PI * total)).collect();
        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        let mut acc = 0.0;
        for m in &mass {
            acc += m;
            cdf.push(acc);
        }
        let last = *cdf.last().unwrap();
        cdf.iter_mut().for_each(|c| *c /= last);
        Ok(Self { values, mass, cdf, mu: uniform_nodes(n).iter().map(|t| t.cos()).collect() })
    }

    /// Rebuilds interval masses from node values with the trapezoid rule.
    pub fn from_node_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidInput("phase table needs at least two nodes".into()));
        }
        let mu: Vec<f64> = uniform_nodes(n).iter().map(|t| t.cos()).collect();
        let masses = (0..n - 1).map(|k| 0.5 * (mu[k] - mu[k + 1]) * (values[k] + values[k + 1])).collect();
        Self::from_masses(values, masses)
    }

    /// Isotropic phase function 1 / (4 pi).
    pub fn isotropic(n: usize) -> Self {
        Self::from_node_values(vec![1.0; n.max(2)]).expect("constant table is valid")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn thetas(&self) -> Vec<f64> {
        uniform_nodes(self.len())
    }

    /// Phase function at the nodes.
    pub fn node_values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Interval holding cos(theta).
    #[inline]
    pub fn interval(&self, cos_theta: f64) -> usize {
        let n = self.len();
        let theta = cos_theta.clamp(-1.0, 1.0).acos();
        ((theta / PI * (n - 1) as f64) as usize).min(n - 2)
    }

    /// Density in sr^-1 of interval `k`.
    #[inline]
    pub fn interval_density(&self, k: usize) -> f64 {
        let dmu = self.mu[k] - self.mu[k + 1];
        self.mass[k] / (2.0 * PI * dmu)
    }

    /// Phase function (piecewise constant in cos theta), sr^-1.
    #[inline]
    pub fn eval(&self, cos_theta: f64) -> f64 {
        self.interval_density(self.interval(cos_theta))
    }

    /// Solid-angle pdf of [`PhaseTable::sample_cos`]; equals `eval`.
    pub fn pdf(&self, cos_theta: f64) -> f64 {
        self.eval(cos_theta)
    }

    /// Linear interpolation of the node values.
    pub fn interpolate(&self, theta: f64) -> f64 {
        let n = self.len();
        let x = (theta.clamp(0.0, PI) / PI) * (n - 1) as f64;
        let k = (x as usize).min(n - 2);
        let f = x - k as f64;
        self.values[k] * (1.0 - f) + self.values[k + 1] * f
    }

    /// Inverse-CDF sample of cos(theta) from a uniform number in [0, 1).
    pub fn sample_cos(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c <= u).saturating_sub(1).min(self.mass.len() - 1);
        let span = self.cdf[k + 1] - self.cdf[k];
        let f = if span > 0.0 { ((u - self.cdf[k]) / span).clamp(0.0, 1.0) } else { 0.5 };
        self.mu[k] + (self.mu[k + 1] - self.mu[k]) * f
    }

    /// Weighted mixture of tables sharing a node count.
    pub fn mix(tables: &[&PhaseTable], weights: &[f64]) -> Result<Self> {
        let first = tables.first().ok_or_else(|| Error::InvalidInput("empty mixture".into()))?;
        let n = first.len();
        if tables.iter().any(|t| t.len() != n) || weights.len() != tables.len() {
            return Err(Error::InvalidInput("mixture tables must share node count".into()));
        }
        let mut masses = vec![0.0; n - 1];
        let mut values = vec![0.0; n];
        for (t, &w) in tables.iter().zip(weights) {
            masses.iter_mut().zip(&t.mass).for_each(|(m, x)| *m += w * x);
            values.iter_mut().zip(&t.values).for_each(|(v, x)| *v += w * x);
        }
        // from_masses divides node values by 2 pi times the mass total
        values.iter_mut().for_each(|v| *v *= 2.0 * PI);
        Self::from_masses(values, masses)
    }

    /// Writes `theta,f_p` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "theta_rad,phase_per_sr")?;
        for (t, v) in self.thetas().iter().zip(&self.values) {
            writeln!(w, "{t:.17e},{v:.17e}")?;
        }
        Ok(())
    }

    /// Reads a table written by [`PhaseTable::write_csv`]. Interval masses
    /// are rebuilt with the trapezoid rule.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .nth(1)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("bad phase table row {}: {line}", i + 1)))?;
            values.push(v);
        }
        Self::from_node_values(values)
    }
}

/// Cross sections and phase table of one radius at one wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptics {
    pub wavelength_um: f64,
    pub cross_sections: CrossSections,
    pub phase: PhaseTable,
}

/// Optics of one particle radius at each wavelength sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleOptics {
    pub radius_um: f64,
    pub spectral: Vec<SpectralOptics>,
}

/// Phase table and cross sections for one sphere.
pub fn build_phase_table(sphere: &Sphere, policy: &HybridPolicy, n_theta: usize) -> Result<SpectralOptics> {
    if n_theta < MIN_THETA_NODES {
        return Err(Error::InvalidInput(format!("n_theta must be at least {MIN_THETA_NODES}, got {n_theta}")));
    }
    let cross_sections = cross_sections(sphere, policy)?;
    let source = AmplitudeSource::new(sphere, policy)?;
    let nodes = uniform_nodes(n_theta);
    let masses = bin_masses(&source, sphere, &nodes);
    let values = nodes.iter().map(|&t| source.amplitudes(t).intensity()).collect();
    let phase = PhaseTable::from_masses(values, masses)?;
    Ok(SpectralOptics { wavelength_um: sphere.wavelength_um, cross_sections, phase })
}

/// Refractive index of the particle material relative to the host, as a
/// function of vacuum wavelength.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexModel {
    Constant(ComplexValue),
    /// (wavelength_um, eta) samples sorted by wavelength; linear
    /// interpolation, clamped at the ends.
    Table(Vec<(f64, ComplexValue)>),
}

impl IndexModel {
    pub fn at(&self, wavelength_um: f64) -> ComplexValue {
        match self {
            Self::Constant(eta) => *eta,
            Self::Table(rows) => {
                let k = rows.partition_point(|r| r.0 < wavelength_um);
                if k == 0 {
                    rows[0].1
                } else if k == rows.len() {
                    rows[k - 1].1
                } else {
                    let (a, b) = (rows[k - 1], rows[k]);
                    let f = (wavelength_um - a.0) / (b.0 - a.0);
                    a.1 * (1.0 - f) + b.1 * f
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Table(rows) = self {
            if rows.is_empty() || rows.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidInput("index table must be non-empty and sorted by wavelength".into()));
            }
        }
        Ok(())
    }
}

impl ParticleOptics {
    pub fn build(
        radius_um: f64,
        wavelengths_um: &[f64],
        index: &IndexModel,
        eta_medium: f64,
        policy: &HybridPolicy,
        n_theta: usize,
    ) -> Result<Self> {
        index.validate()?;
        let spectral = wavelengths_um
            .iter()
            .map(|&l| build_phase_table(&Sphere::new(radius_um, l, index.at(l), eta_medium), policy, n_theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { radius_um, spectral })
    }
}

const CACHE_MAGIC: &[u8; 4] = b"GLPT";
const CACHE_VERSION: u32 = 1;

/// On-disk cache of [`SpectralOptics`], keyed by (r, lambda, eta, eta_m,
/// policy, n_theta). Files carry their key and are ignored on mismatch.
#[derive(Debug, Clone)]
pub struct OpticsCache {
    dir: PathBuf,
}

impl OpticsCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn key(sphere: &Sphere, policy: &HybridPolicy, n_theta: usize) -> [u64; 7] {
        [
            sphere.radius_um.to_bits(),
            sphere.wavelength_um.to_bits(),
            sphere.eta.re.to_bits(),
            sphere.eta.im.to_bits(),
            sphere.eta_medium.to_bits(),
            policy.fingerprint(),
            n_theta as u64,
        ]
    }

    fn path(&self, key: &[u64; 7]) -> PathBuf {
        let bytes: Vec<u8> = key.iter().flat_map(|k| k.to_le_bytes()).collect();
        self.dir.join(format!("{:016x}.glpt", fnv1a(&bytes)))
    }

    pub fn get_or_build(&self, sphere: &Sphere, policy: &HybridPolicy, n_theta: usize) -> Result<SpectralOptics> {
        let key = Self::key(sphere, policy, n_theta);
        let path = self.path(&key);
        if let Ok(optics) = read_cache_file(&path, &key) {
            return Ok(optics);
        }
        let optics = build_phase_table(sphere, policy, n_theta)?;
        write_cache_file(&path, &key, &optics)?;
        Ok(optics)
    }
}

fn write_cache_file(path: &Path, key: &[u64; 7], optics: &SpectralOptics) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    key.iter().for_each(|k| buf.extend_from_slice(&k.to_le_bytes()));
    let cs = &optics.cross_sections;
    for v in [optics.wavelength_um, cs.c_t, cs.c_s, cs.c_a] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(cs.clamped as u8);
    buf.extend_from_slice(&(optics.phase.len() as u64).to_le_bytes());
    for v in optics.phase.values.iter().chain(&optics.phase.mass) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_cache_file(path: &Path, key: &[u64; 7]) -> Result<SpectralOptics> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };
    if r.take(4)? != CACHE_MAGIC || r.u32()? != CACHE_VERSION {
        return Err(Error::Format("not a phase table cache file".into()));
    }
    for k in key {
        if r.u64()? != *k {
            return Err(Error::Format("cache key mismatch".into()));
        }
    }
    let wavelength_um = r.f64()?;
    let (c_t, c_s, c_a) = (r.f64()?, r.f64()?, r.f64()?);
    let clamped = r.take(1)?[0] != 0;
    let n = r.u64()? as usize;
    let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mass = (0..n.saturating_sub(1)).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    // masses are already normalized; values already in sr^-1
    let values = values.iter().map(|v| v * 2.0 * PI).collect();
    let phase = PhaseTable::from_masses(values, mass)?;
    Ok(SpectralOptics { wavelength_um, cross_sections: CrossSections { c_t, c_s, c_a, clamped }, phase })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated cache file".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn water(r: f64) -> Sphere {
        Sphere::new(r, 0.6, ComplexValue::new(1.33, 0.0), 1.0)
    }

    #[test]
    fn routing_threshold() {
        let p = HybridPolicy::default();
        assert_eq!(p.method(1.99), Method::Mie);
        assert_eq!(p.method(2.0), Method::Goa);
        assert!(HybridPolicy::new(0.0).is_err());
    }

    #[test]
    fn routing_is_deterministic() {
        let p = HybridPolicy::default();
        for r in [1.0, 5.0] {
            let a = amplitudes(&water(r), 0.3, &p).unwrap();
            let b = amplitudes(&water(r), 0.3, &p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn goa_branch_real_index_has_no_absorption() {
        let cs = cross_sections(&water(50.0), &HybridPolicy::default()).unwrap();
        assert_eq!(cs.c_a, 0.0);
        assert_eq!(cs.c_s, cs.c_t);
    }

    #[test]
    fn absorbing_goa_branch() {
        let p = HybridPolicy::default();
        let mut prev = 0.0;
        for ni in [1e-5, 2e-5, 4e-5] {
            let cs = cross_sections(&Sphere::new(800.0, 0.6, ComplexValue::new(1.5, ni), 1.0), &p).unwrap();
            assert!(cs.c_a > prev);
            assert!(cs.c_t >= cs.c_s && cs.c_s >= 0.0);
            prev = cs.c_a;
        }
    }

    #[test]
    fn cdf_is_monotone_and_normalized() {
        for r in [0.5, 5.0] {
            let t = build_phase_table(&water(r), &HybridPolicy::default(), DEFAULT_THETA_NODES).unwrap();
            let cdf = t.phase.cdf();
            assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
            assert!((cdf[cdf.len() - 1] - 1.0).abs() < 1e-9);
            assert_eq!(cdf[0], 0.0);
        }
        assert!(build_phase_table(&water(1.0), &HybridPolicy::default(), 100).is_err());
    }

    #[test]
    fn sample_and_eval_agree() {
        let t = build_phase_table(&water(3.0), &HybridPolicy::default(), 512).unwrap().phase;
        // sampled cos lands in the interval whose cdf bracket holds u
        for &u in &[0.0, 0.1, 0.5, 0.9, 0.999_999] {
            let c = t.sample_cos(u);
            let k = t.interval(c);
            assert!(t.cdf()[k] <= u + 1e-12 && u <= t.cdf()[k + 1] + 1e-12, "{u} {k}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = build_phase_table(&water(1.0), &HybridPolicy::default(), 256).unwrap().phase;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = PhaseTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), t.len());
        for (a, b) in back.node_values().iter().zip(t.node_values()) {
            assert!((a - b).abs() <= 2e-3 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = OpticsCache::new(dir.path()).unwrap();
        let s = water(4.0);
        let p = HybridPolicy::default();
        let a = cache.get_or_build(&s, &p, 300).unwrap();
        let b = cache.get_or_build(&s, &p, 300).unwrap();
        assert_eq!(a.cross_sections, b.cross_sections);
        for (x, y) in a.phase.masses().iter().zip(b.phase.masses()) {
            assert!((x - y).abs() <= 1e-15);
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn index_table_interpolates() {
        let m = IndexModel::Table(vec![(0.4, ComplexValue::new(1.34, 0.0)), (0.8, ComplexValue::new(1.32, 0.0))]);
        assert!((m.at(0.6).re - 1.33).abs() < 1e-12);
        assert_eq!(m.at(0.1).re, 1.34);
        assert!(IndexModel::Table(vec![]).validate().is_err());
    }

    #[test]
    fn mixture_is_normalized() {
        let p = HybridPolicy::default();
        let a = build_phase_table(&water(1.0), &p, 256).unwrap().phase;
        let b = PhaseTable::isotropic(256);
        let m = PhaseTable::mix(&[&a, &b], &[0.3, 0.7]).unwrap();
        assert!((m.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = 0.2;
        assert!((m.eval(c) - (0.3 * a.eval(c) + 0.7 * b.eval(c))).abs() < 1e-12 * m.eval(c));
    }
}
