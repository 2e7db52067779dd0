//! Particle size distributions, reproducible particle clouds and their
//! file formats, local PSD histograms and whole-volume bulk properties.
//!
//! Clouds are drawn from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! [`CLOUD_STREAM`]. Uniform doubles are `(u64 >> 11) * 2^-53`. For each
//! record the generator draws x, y, z and then the radius; a log-normal
//! radius uses Box-Muller on two fresh uniforms per attempt,
//! `sqrt(-2 ln(1 - u1)) cos(2 pi u2)`, and attempts outside `r_clip` are
//! rejected and redrawn. Bimodal clouds emit all records of the first mode
//! before the second.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use glam::DVec3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{um2_to_m2, Aabb};
use crate::scatter::{PhaseTable, SpectralOptics};

/// RNG stream used for cloud generation.
pub const CLOUD_STREAM: u64 = 1;
/// RNG stream used by the renderer.
pub const RENDER_STREAM: u64 = 2;
/// Smallest and largest radius accepted anywhere (µm).
pub const RADIUS_LIMITS_UM: (f64, f64) = (0.01, 2000.0);

const PARTICLE_MAGIC: &[u8; 4] = b"DPMC";
const PARTICLE_VERSION: u32 = 1;
const RNG_NAME: &str = "ChaCha8";
const MAX_ATTEMPTS: u64 = 1_000_000;

/// One log-normal mode of a bimodal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalMode {
    pub r_g_um: f64,
    pub sigma_g: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsdKind {
    LogNormal { r_g_um: f64, sigma_g: f64 },
    Bimodal { modes: [LogNormalMode; 2] },
    Uniform { r_min_um: f64, r_max_um: f64 },
    Monodisperse { r_um: f64 },
}

/// Number size distribution of a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    #[serde(flatten)]
    pub kind: PsdKind,
    pub n_total: u64,
    /// Radii outside [r_clip.0, r_clip.1] are rejected and redrawn.
    pub r_clip: (f64, f64),
}

impl SizeDistribution {
    pub fn new(kind: PsdKind, n_total: u64) -> Self {
        Self { kind, n_total, r_clip: RADIUS_LIMITS_UM }
    }

    pub fn log_normal(r_g_um: f64, sigma_g: f64, n_total: u64) -> Self {
        Self::new(PsdKind::LogNormal { r_g_um, sigma_g }, n_total)
    }

    pub fn monodisperse(r_um: f64, n_total: u64) -> Self {
        Self::new(PsdKind::Monodisperse { r_um }, n_total)
    }

    pub fn uniform(r_min_um: f64, r_max_um: f64, n_total: u64) -> Self {
        Self::new(PsdKind::Uniform { r_min_um, r_max_um }, n_total)
    }

    pub fn bimodal(first: LogNormalMode, second: LogNormalMode) -> Self {
        Self::new(PsdKind::Bimodal { modes: [first, second] }, first.count + second.count)
    }

    pub fn with_clip(mut self, r_min_um: f64, r_max_um: f64) -> Self {
        self.r_clip = (r_min_um, r_max_um);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.r_clip;
        if !(lo >= RADIUS_LIMITS_UM.0 && hi <= RADIUS_LIMITS_UM.1 && lo < hi) {
            return Err(Error::InvalidInput(format!(
                "r_clip ({lo}, {hi}) must be ordered inside [{}, {}] um",
                RADIUS_LIMITS_UM.0, RADIUS_LIMITS_UM.1
            )));
        }
        let inside = |r: f64| r >= lo && r <= hi;
        let mode_ok = |r_g: f64, s: f64| r_g > 0.0 && r_g.is_finite() && s >= 1.0 && s.is_finite();
        let ok = match self.kind {
            PsdKind::LogNormal { r_g_um, sigma_g } => mode_ok(r_g_um, sigma_g) && (sigma_g > 1.0 || inside(r_g_um)),
            PsdKind::Bimodal { modes } => {
                if modes[0].count + modes[1].count != self.n_total {
                    return Err(Error::InvalidInput("bimodal mode counts must sum to n_total".into()));
                }
                modes.iter().all(|m| mode_ok(m.r_g_um, m.sigma_g) && (m.sigma_g > 1.0 || inside(m.r_g_um)))
            }
            PsdKind::Uniform { r_min_um, r_max_um } => r_min_um <= r_max_um && inside(r_min_um) && inside(r_max_um),
            PsdKind::Monodisperse { r_um } => inside(r_um),
        };
        if !ok {
            return Err(Error::InvalidInput(format!("invalid size distribution {:?}", self.kind)));
        }
        Ok(())
    }
}

fn uniform01<R: RngCore>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Standard normal deviate by Box-Muller (cosine branch only).
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u1 = uniform01(rng);
    let u2 = uniform01(rng);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn sample_mode<R: RngCore>(r_g: f64, sigma_g: f64, clip: (f64, f64), rng: &mut R, rejections: &mut u64) -> f64 {
    if sigma_g == 1.0 {
        return r_g;
    }
    let (mu, s) = (r_g.ln(), sigma_g.ln());
    for _ in 0..MAX_ATTEMPTS {
        let r = (mu + s * standard_normal(rng)).exp();
        if r >= clip.0 && r <= clip.1 {
            return r;
        }
        *rejections += 1;
    }
    log::warn!("radius clip rejects nearly all of log-normal({r_g}, {sigma_g}); clamping");
    r_g.clamp(clip.0, clip.1)
}

/// One radius draw; returns (radius_um, rejected attempts).
pub fn sample_radius_counted<R: RngCore>(psd: &SizeDistribution, rng: &mut R) -> (f64, u64) {
    let mut rejections = 0;
    let r = match psd.kind {
        PsdKind::LogNormal { r_g_um, sigma_g } => sample_mode(r_g_um, sigma_g, psd.r_clip, rng, &mut rejections),
        PsdKind::Bimodal { modes } => {
            let total = (modes[0].count + modes[1].count).max(1) as f64;
            let m = if uniform01(rng) * total < modes[0].count as f64 { modes[0] } else { modes[1] };
            sample_mode(m.r_g_um, m.sigma_g, psd.r_clip, rng, &mut rejections)
        }
        PsdKind::Uniform { r_min_um, r_max_um } => r_min_um + (r_max_um - r_min_um) * uniform01(rng),
        PsdKind::Monodisperse { r_um } => r_um,
    };
    (r, rejections)
}

/// One radius draw (µm).
pub fn sample_radius<R: RngCore>(psd: &SizeDistribution, rng: &mut R) -> f64 {
    sample_radius_counted(psd, rng).0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleRecord {
    /// Center in meters.
    pub position: DVec3,
    pub radius_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub records: Vec<ParticleRecord>,
    pub bounds: Aabb,
    pub seed: u64,
    /// `None` for clouds imported from bare CSV.
    pub psd: Option<SizeDistribution>,
    /// Radius draws rejected by the clip during generation.
    pub rejections: u64,
}

/// Draws `psd.n_total` particles uniformly in `bounds`.
pub fn generate_cloud(psd: &SizeDistribution, bounds: &Aabb, seed: u64) -> Result<ParticleCloud> {
    psd.validate()?;
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CLOUD_STREAM);
    let extent = bounds.extent();
    // largest coordinate strictly below max keeps centers half-open inside
    let below = |x: f64, max: f64| if x < max { x } else { max.next_down() };
    let position = |rng: &mut ChaCha8Rng| {
        let p = bounds.min + extent * DVec3::new(uniform01(rng), uniform01(rng), uniform01(rng));
        DVec3::new(below(p.x, bounds.max.x), below(p.y, bounds.max.y), below(p.z, bounds.max.z))
    };
    // radii are stored at file precision so a cloud equals its reloaded copy
    let record = |position: DVec3, r: f64| ParticleRecord { position, radius_um: r as f32 as f64 };
    let mut rejections = 0;
    let mut records = Vec::with_capacity(psd.n_total as usize);
    if let PsdKind::Bimodal { modes } = psd.kind {
        for m in modes {
            for _ in 0..m.count {
                let p = position(&mut rng);
                let r = sample_mode(m.r_g_um, m.sigma_g, psd.r_clip, &mut rng, &mut rejections);
                records.push(record(p, r));
            }
        }
    } else {
        for _ in 0..psd.n_total {
            let p = position(&mut rng);
            let (r, n) = sample_radius_counted(psd, &mut rng);
            rejections += n;
            records.push(record(p, r));
        }
    }
    if rejections > 0 {
        log::info!("radius clipping rejected {rejections} draws for {} particles", psd.n_total);
    }
    Ok(ParticleCloud { records, bounds: *bounds, seed, psd: Some(*psd), rejections })
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Smallest and largest radius present, `None` when empty.
    pub fn radius_range(&self) -> Option<(f64, f64)> {
        self.records.iter().fold(None, |acc, r| match acc {
            None => Some((r.radius_um, r.radius_um)),
            Some((lo, hi)) => Some((lo.min(r.radius_um), hi.max(r.radius_um))),
        })
    }

    pub fn max_radius_um(&self) -> f64 {
        self.radius_range().map_or(0.0, |r| r.1)
    }

    /// Binary particle file: magic, version, seed, JSON size distribution,
    /// bounds, count, RNG name, then (f64 x, y, z, f32 radius) records, all
    /// little-endian.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let psd = serde_json::to_vec(&self.psd).map_err(|e| Error::Format(e.to_string()))?;
        let mut buf = Vec::with_capacity(96 + psd.len() + 28 * self.records.len());
        buf.extend_from_slice(PARTICLE_MAGIC);
        buf.extend_from_slice(&PARTICLE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(psd.len() as u32).to_le_bytes());
        buf.extend_from_slice(&psd);
        for v in self.bounds.min.to_array().iter().chain(&self.bounds.max.to_array()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(RNG_NAME.len() as u32).to_le_bytes());
        buf.extend_from_slice(RNG_NAME.as_bytes());
        for r in &self.records {
            for v in r.position.to_array() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&(r.radius_um as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(4)? != PARTICLE_MAGIC {
            return Err(Error::Format("not a particle file".into()));
        }
        let version = u32::from_le_bytes(cur.array()?);
        if version != PARTICLE_VERSION {
            return Err(Error::Format(format!("unsupported particle file version {version}")));
        }
        let seed = u64::from_le_bytes(cur.array()?);
        let n = u32::from_le_bytes(cur.array()?) as usize;
        let psd: Option<SizeDistribution> =
            serde_json::from_slice(cur.take(n)?).map_err(|e| Error::Format(e.to_string()))?;
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = f64::from_le_bytes(cur.array()?);
        }
        let bounds = Aabb::new(DVec3::new(b[0], b[1], b[2]), DVec3::new(b[3], b[4], b[5]));
        let count = u64::from_le_bytes(cur.array()?) as usize;
        let n = u32::from_le_bytes(cur.array()?) as usize;
        let rng = cur.take(n)?;
        if rng != RNG_NAME.as_bytes() {
            log::warn!("particle file generated with RNG {:?}", String::from_utf8_lossy(rng));
        }
        if buf.len() - cur.pos != count * 28 {
            return Err(Error::Format(format!("expected {count} records, found {} bytes", buf.len() - cur.pos)));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let x = f64::from_le_bytes(cur.array()?);
            let y = f64::from_le_bytes(cur.array()?);
            let z = f64::from_le_bytes(cur.array()?);
            let radius = f32::from_le_bytes(cur.array()?) as f64;
            records.push(ParticleRecord { position: DVec3::new(x, y, z), radius_um: radius });
        }
        Ok(Self { records, bounds, seed, psd, rejections: 0 })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Reads the binary form, or the CSV mirror for a `.csv` extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::read_csv(file)
        } else {
            Self::read(std::io::BufReader::new(file))
        }
    }

    /// CSV mirror: a `#` metadata line (seed, bounds, JSON size
    /// distribution), then `x,y,z,radius_um` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let psd = serde_json::to_string(&self.psd).map_err(|e| Error::Format(e.to_string()))?;
        let (a, b) = (self.bounds.min, self.bounds.max);
        writeln!(w, "# seed={} bounds={},{},{},{},{},{} psd={psd}", self.seed, a.x, a.y, a.z, b.x, b.y, b.z)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["x", "y", "z", "radius_um"]).map_err(csv_error)?;
        for r in &self.records {
            let p = r.position;
            csv.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string(), (r.radius_um as f32).to_string()])
                .map_err(csv_error)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Reads the CSV mirror. Leading `#` lines other than the metadata line
    /// are skipped. Without the metadata line the seed is 0, the size
    /// distribution unknown and the bounds the smallest box holding every
    /// center.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = std::io::BufReader::new(r);
        let mut meta_line = None;
        let mut line = String::new();
        let rest = loop {
            line.clear();
            if std::io::BufRead::read_line(&mut reader, &mut line)? == 0 {
                break String::new();
            }
            match line.strip_prefix('#').map(str::trim) {
                Some(m) if m.starts_with("seed=") => meta_line = Some(m.to_string()),
                Some(_) => {}
                None => break line.clone(),
            }
        };
        let meta = meta_line.as_deref();
        let chained = std::io::Read::chain(rest.as_bytes(), reader);
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(chained);
        let mut records = Vec::new();
        for row in csv.records() {
            let row = row.map_err(csv_error)?;
            let v: Vec<f64> = row
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(Error::Format(format!("expected 4 columns, got {}", v.len())));
            }
            records.push(ParticleRecord { position: DVec3::new(v[0], v[1], v[2]), radius_um: v[3] as f32 as f64 });
        }
        let (seed, bounds, psd) = match meta {
            Some(m) => parse_csv_meta(m)?,
            None => {
                if records.is_empty() {
                    return Err(Error::Format("bare CSV without particles has no bounds".into()));
                }
                let (lo, hi) = records.iter().fold((DVec3::INFINITY, DVec3::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r.position), hi.max(r.position))
                });
                let hi = DVec3::new(hi.x.next_up(), hi.y.next_up(), hi.z.next_up());
                (0, Aabb::new(lo, hi), None)
            }
        };
        Ok(Self { records, bounds, seed, psd, rejections: 0 })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn parse_csv_meta(meta: &str) -> Result<(u64, Aabb, Option<SizeDistribution>)> {
    let bad = |what: &str| Error::Format(format!("malformed CSV metadata ({what})"));
    let rest = meta.strip_prefix("seed=").ok_or_else(|| bad("seed"))?;
    let (seed, rest) = rest.split_once(" bounds=").ok_or_else(|| bad("bounds"))?;
    let (bounds, psd) = rest.split_once(" psd=").ok_or_else(|| bad("psd"))?;
    let seed = seed.parse().map_err(|_| bad("seed"))?;
    let b: Vec<f64> = bounds.split(',').map(|s| s.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad("bounds"))?;
    if b.len() != 6 {
        return Err(bad("bounds"));
    }
    let psd = serde_json::from_str(psd).map_err(|e| Error::Format(e.to_string()))?;
    Ok((seed, Aabb::new(DVec3::new(b[0], b[1], b[2]), DVec3::new(b[3], b[4], b[5])), psd))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated particle file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Radius histogram on log-spaced bins.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdHistogram {
    /// n_bins + 1 edges (µm).
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl PsdHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `n` log-spaced bins over [lo, hi], returned as edges.
pub fn log_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..=n).map(|k| if k == 0 { lo } else if k == n { hi } else { (a + (b - a) * k as f64 / n as f64).exp() }).collect()
}

/// Histogram of the radii of records whose centers lie in `region`
/// (half-open), on log bins spanning the cloud's clip range (or its
/// radius range when the size distribution is unknown). Radii outside the
/// range land in the end bins.
pub fn estimate_local_psd(cloud: &ParticleCloud, region: &Aabb, n_bins: usize) -> Result<PsdHistogram> {
    if n_bins == 0 {
        return Err(Error::InvalidInput("n_bins must be at least 1".into()));
    }
    let (lo, hi) = match (cloud.psd, cloud.radius_range()) {
        (Some(p), _) => p.r_clip,
        (None, Some((lo, hi))) if hi > lo => (lo, hi),
        (None, Some((r, _))) => (r * 0.5, r * 2.0),
        (None, None) => RADIUS_LIMITS_UM,
    };
    let edges = log_edges(lo, hi, n_bins);
    let mut counts = vec![0; n_bins];
    let (a, b) = (lo.ln(), hi.ln());
    for r in cloud.records.iter().filter(|r| region.contains(r.position)) {
        let k = ((r.radius_um.ln() - a) / (b - a) * n_bins as f64).floor();
        counts[(k.max(0.0) as usize).min(n_bins - 1)] += 1;
    }
    Ok(PsdHistogram { edges, counts })
}

/// Per-radius optics lookup used by the bulk and local property queries.
pub trait OpticsProvider: Sync {
    fn n_bands(&self) -> usize;
    fn wavelength_um(&self, band: usize) -> f64;
    /// Optics entry used for a particle of this radius.
    fn entry(&self, radius_um: f64) -> usize;
    fn optics(&self, entry: usize, band: usize) -> &SpectralOptics;
    fn n_entries(&self) -> usize;
}

/// Bulk coefficients (1/m) and ensemble phase of one wavelength sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkBand {
    pub wavelength_um: f64,
    pub sigma_t: f64,
    pub sigma_s: f64,
    pub sigma_a: f64,
    /// `None` when nothing scatters: forward pass-through.
    pub phase: Option<PhaseTable>,
}

/// Whole-volume coefficients per wavelength sample, with the bounding box
/// as the averaging volume.
pub fn global_bulk_properties(cloud: &ParticleCloud, optics: &dyn OpticsProvider) -> Result<Vec<BulkBand>> {
    let volume = cloud.bounds.volume();
    let mut counts = vec![0u64; optics.n_entries()];
    for r in &cloud.records {
        counts[optics.entry(r.radius_um)] += 1;
    }
    (0..optics.n_bands())
        .map(|band| {
            let (mut ct, mut cs) = (0.0, 0.0);
            let mut tables = Vec::new();
            let mut weights = Vec::new();
            for (e, &n) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
                let o = optics.optics(e, band);
                ct += n as f64 * o.cross_sections.c_t;
                cs += n as f64 * o.cross_sections.c_s;
                if o.cross_sections.c_s > 0.0 {
                    tables.push(&o.phase);
                    weights.push(n as f64 * o.cross_sections.c_s);
                }
            }
            let phase = if cs > 0.0 { Some(PhaseTable::mix(&tables, &weights)?) } else { None };
            let (sigma_t, sigma_s) = (um2_to_m2(ct) / volume, um2_to_m2(cs) / volume);
            Ok(BulkBand {
                wavelength_um: optics.wavelength_um(band),
                sigma_t,
                sigma_s,
                sigma_a: (sigma_t - sigma_s).max(0.0),
                phase,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Aabb {
        Aabb::new(DVec3::ZERO, DVec3::ONE)
    }

    #[test]
    fn monodisperse_draws_are_literal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psd = SizeDistribution::monodisperse(1000.0, 1);
        assert!((0..100).all(|_| sample_radius(&psd, &mut rng) == 1000.0));
        let degenerate = SizeDistribution::log_normal(100.0, 1.0, 1);
        assert!((0..100).all(|_| sample_radius(&degenerate, &mut rng) == 100.0));
    }

    #[test]
    fn validation() {
        assert!(SizeDistribution::log_normal(100.0, 0.9, 1).validate().is_err());
        assert!(SizeDistribution::monodisperse(3000.0, 1).validate().is_err());
        assert!(SizeDistribution::uniform(1.0, 10.0, 5).with_clip(5.0, 2.0).validate().is_err());
        let m = LogNormalMode { r_g_um: 10.0, sigma_g: 2.0, count: 3 };
        let mut b = SizeDistribution::bimodal(m, m);
        assert!(b.validate().is_ok());
        b.n_total = 5;
        assert!(b.validate().is_err());
    }

    #[test]
    fn empty_cloud() {
        let cloud = generate_cloud(&SizeDistribution::log_normal(100.0, 2.0, 0), &unit_box(), 3).unwrap();
        assert!(cloud.is_empty());
        assert_eq!(estimate_local_psd(&cloud, &unit_box(), 8).unwrap().total(), 0);
    }

    #[test]
    fn generation_is_reproducible_and_bounded() {
        let psd = SizeDistribution::log_normal(100.0, 6.0, 2000);
        let b = Aabb::new(DVec3::new(-1.0, 0.0, 2.0), DVec3::new(1.0, 0.5, 2.1));
        let a = generate_cloud(&psd, &b, 42).unwrap();
        assert_eq!(a, generate_cloud(&psd, &b, 42).unwrap());
        assert_ne!(a.records, generate_cloud(&psd, &b, 43).unwrap().records);
        assert!(a.records.iter().all(|r| b.contains(r.position) && r.radius_um >= 0.01 && r.radius_um <= 2000.0));
        assert!(a.rejections > 0);
    }

    #[test]
    fn bimodal_keeps_mode_counts() {
        let psd = SizeDistribution::bimodal(
            LogNormalMode { r_g_um: 100.0, sigma_g: 1.0, count: 30 },
            LogNormalMode { r_g_um: 5.0, sigma_g: 1.5, count: 70 },
        );
        let c = generate_cloud(&psd, &unit_box(), 9).unwrap();
        assert_eq!(c.len(), 100);
        assert!(c.records[..30].iter().all(|r| r.radius_um == 100.0));
        assert!(c.records[30..].iter().all(|r| r.radius_um < 100.0));
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let psd = SizeDistribution::uniform(1.0, 10.0, 50);
        let cloud = generate_cloud(&psd, &unit_box(), 5).unwrap();
        let mut bytes = Vec::new();
        cloud.write(&mut bytes).unwrap();
        let back = ParticleCloud::read(bytes.as_slice()).unwrap();
        assert_eq!(back.records, cloud.records);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(bytes, again);

        let mut csv = Vec::new();
        cloud.write_csv(&mut csv).unwrap();
        let from_csv = ParticleCloud::read_csv(csv.as_slice()).unwrap();
        assert_eq!(from_csv.records, cloud.records);
        assert_eq!((from_csv.seed, from_csv.bounds, from_csv.psd), (5, cloud.bounds, cloud.psd));

        let bare = "x,y,z,radius_um\n0.1,0.2,0.3,4\n0.5,0.1,0.9,2\n";
        let c = ParticleCloud::read_csv(bare.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.records.iter().all(|r| c.bounds.contains(r.position)));
        assert!(ParticleCloud::read(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn histogram_regions() {
        let psd = SizeDistribution::log_normal(20.0, 2.0, 1000);
        let cloud = generate_cloud(&psd, &unit_box(), 11).unwrap();
        assert_eq!(estimate_local_psd(&cloud, &unit_box(), 16).unwrap().total(), 1000);
        let away = Aabb::new(DVec3::splat(2.0), DVec3::splat(3.0));
        assert!(estimate_local_psd(&cloud, &away, 16).unwrap().counts.iter().all(|&c| c == 0));
        let h = estimate_local_psd(&cloud, &unit_box(), 16).unwrap();
        assert_eq!(h.edges.len(), 17);
        assert_eq!((h.edges[0], h.edges[16]), (0.01, 2000.0));
    }
}
