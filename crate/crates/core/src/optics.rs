//! Per-radius optics tables shared by every particle of a cloud: radii are
//! grouped into log-spaced bins and each bin carries one set of cross
//! sections and phase tables per wavelength sample.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::particles::{OpticsProvider, ParticleCloud};
use crate::scatter::{
    build_phase_table, HybridPolicy, IndexModel, OpticsCache, ParticleOptics, SpectralOptics, Sphere,
    DEFAULT_THETA_NODES,
};
use crate::ComplexValue;

/// Visible range split into equal bands (nm).
pub const SPECTRAL_RANGE_NM: (f64, f64) = (380.0, 720.0);
pub const DEFAULT_BANDS: usize = 8;
pub const DEFAULT_RADIUS_BINS: usize = 64;

/// Centers of `n` equal bands over [`SPECTRAL_RANGE_NM`], in nm.
pub fn band_centers_nm(n: usize) -> Vec<f64> {
    let (lo, hi) = SPECTRAL_RANGE_NM;
    let width = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * width).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticsSettings {
    pub wavelengths_um: Vec<f64>,
    /// Particle index relative to the host.
    pub index: IndexModel,
    pub eta_medium: f64,
    pub policy: HybridPolicy,
    pub n_theta: usize,
    pub n_bins: usize,
}

impl Default for OpticsSettings {
    fn default() -> Self {
        Self {
            wavelengths_um: band_centers_nm(DEFAULT_BANDS).iter().map(|l| l * 1e-3).collect(),
            index: IndexModel::Constant(ComplexValue::new(1.33, 0.0)),
            eta_medium: 1.0,
            policy: HybridPolicy::default(),
            n_theta: DEFAULT_THETA_NODES,
            n_bins: DEFAULT_RADIUS_BINS,
        }
    }
}

/// Optics for radii binned on a log scale over a fixed range. Every radius
/// maps to the bin containing it (end bins absorb radii outside the range);
/// a bin is represented by its log-center radius, or by the exact radius
/// when the range is a single value.
#[derive(Debug, Clone)]
pub struct BinnedOptics {
    wavelengths_um: Vec<f64>,
    log_range: (f64, f64),
    bins: Vec<ParticleOptics>,
}

impl BinnedOptics {
    pub fn build(radius_range_um: (f64, f64), settings: &OpticsSettings, cache: Option<&OpticsCache>) -> Result<Self> {
        let (lo, hi) = radius_range_um;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid radius range ({lo}, {hi})")));
        }
        if settings.wavelengths_um.is_empty() || settings.n_bins == 0 {
            return Err(Error::InvalidInput("need at least one wavelength and one radius bin".into()));
        }
        settings.index.validate()?;
        let log_range = (lo.ln(), hi.ln());
        let n_bins = if hi > lo { settings.n_bins } else { 1 };
        let radii: Vec<f64> = if n_bins == 1 && hi == lo {
            vec![lo]
        } else {
            let (a, b) = log_range;
            (0..n_bins).map(|k| (a + (k as f64 + 0.5) * (b - a) / n_bins as f64).exp()).collect()
        };
        let n_bands = settings.wavelengths_um.len();
        let tables = (0..n_bins * n_bands)
            .into_par_iter()
            .map(|job| {
                let (r, l) = (radii[job / n_bands], settings.wavelengths_um[job % n_bands]);
                let sphere = Sphere::new(r, l, settings.index.at(l), settings.eta_medium);
                match cache {
                    Some(c) => c.get_or_build(&sphere, &settings.policy, settings.n_theta),
                    None => build_phase_table(&sphere, &settings.policy, settings.n_theta),
                }
            })
            .collect::<Result<Vec<SpectralOptics>>>()?;
        let mut tables = tables.into_iter();
        let bins = radii
            .iter()
            .map(|&radius_um| ParticleOptics { radius_um, spectral: tables.by_ref().take(n_bands).collect() })
            .collect();
        Ok(Self { wavelengths_um: settings.wavelengths_um.clone(), log_range, bins })
    }

    /// Bins spanning the cloud's actual radius range. An empty cloud gets
    /// no bins at all.
    pub fn for_cloud(cloud: &ParticleCloud, settings: &OpticsSettings, cache: Option<&OpticsCache>) -> Result<Self> {
        match cloud.radius_range() {
            Some(range) => Self::build(range, settings, cache),
            None => Ok(Self { wavelengths_um: settings.wavelengths_um.clone(), log_range: (0.0, 0.0), bins: vec![] }),
        }
    }

    pub fn bins(&self) -> &[ParticleOptics] {
        &self.bins
    }
}

impl OpticsProvider for BinnedOptics {
    fn n_bands(&self) -> usize {
        self.wavelengths_um.len()
    }

    fn wavelength_um(&self, band: usize) -> f64 {
        self.wavelengths_um[band]
    }

    fn entry(&self, radius_um: f64) -> usize {
        let n = self.bins.len();
        let (a, b) = self.log_range;
        if n <= 1 || b <= a {
            return 0;
        }
        let k = ((radius_um.ln() - a) / (b - a) * n as f64).floor();
        (k.max(0.0) as usize).min(n - 1)
    }

    fn optics(&self, entry: usize, band: usize) -> &SpectralOptics {
        &self.bins[entry].spectral[band]
    }

    fn n_entries(&self) -> usize {
        self.bins.len()
    }
}
