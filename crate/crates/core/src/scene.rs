//! Scene description: camera, medium, lights, diffuse surfaces and
//! integrator settings, loadable from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Camera, Quad};
use crate::medium::{CaptureNormalization, Resolution};
use crate::optics::{band_centers_nm, BinnedOptics, OpticsSettings, DEFAULT_BANDS, DEFAULT_RADIUS_BINS};
use crate::particles::{global_bulk_properties, ParticleCloud};
use crate::scatter::{HybridPolicy, IndexModel, OpticsCache, PhaseTable, DEFAULT_THETA_NODES};
use crate::ComplexValue;

/// A value per band, or one value for all bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spectrum {
    Constant(f64),
    Bands(Vec<f64>),
}

impl Spectrum {
    pub fn expand(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Self::Constant(v) => Ok(vec![*v; n]),
            Self::Bands(v) if v.len() == n => Ok(v.clone()),
            Self::Bands(v) => Err(Error::InvalidInput(format!("spectrum has {} values, expected {n}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub spp: u32,
    /// Scattering and reflection events per path.
    pub max_bounces: u32,
    /// Footprint factor scaling the query cylinder cross section.
    pub k_factor: f64,
    pub seed: u64,
    pub bands: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self { spp: 16, max_bounces: 16, k_factor: 1.0, seed: 0, bands: DEFAULT_BANDS }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        if self.spp == 0 || self.bands == 0 || self.max_bounces == 0 {
            return Err(Error::InvalidInput("spp, max_bounces and bands must be positive".into()));
        }
        if !(self.k_factor > 0.0 && self.k_factor.is_finite()) {
            return Err(Error::InvalidInput(format!("footprint factor must be positive, got {}", self.k_factor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    pub eta_medium: f64,
    /// Constant particle index (re, im).
    pub eta: [f64; 2],
    /// Rows (wavelength µm, re, im); overrides `eta` when present.
    pub eta_table: Option<Vec<[f64; 3]>>,
    pub n_theta: usize,
    pub radius_bins: usize,
    pub r_switch_um: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            eta_medium: 1.0,
            eta: [1.33, 0.0],
            eta_table: None,
            n_theta: DEFAULT_THETA_NODES,
            radius_bins: DEFAULT_RADIUS_BINS,
            r_switch_um: HybridPolicy::default().r_switch_um,
            cache_dir: None,
        }
    }
}

impl OpticsConfig {
    fn settings(&self, bands: usize) -> Result<OpticsSettings> {
        let index = match &self.eta_table {
            Some(rows) => IndexModel::Table(rows.iter().map(|r| (r[0], ComplexValue::new(r[1], r[2]))).collect()),
            None => IndexModel::Constant(ComplexValue::new(self.eta[0], self.eta[1])),
        };
        index.validate()?;
        if !(self.eta_medium > 0.0) {
            return Err(Error::InvalidInput("host index must be positive".into()));
        }
        Ok(OpticsSettings {
            wavelengths_um: band_centers_nm(bands).iter().map(|l| l * 1e-3).collect(),
            index,
            eta_medium: self.eta_medium,
            policy: HybridPolicy::new(self.r_switch_um)?,
            n_theta: self.n_theta,
            n_bins: self.radius_bins,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MediumConfig {
    #[default]
    None,
    Discrete {
        particles: PathBuf,
        #[serde(default)]
        capture: CaptureNormalization,
        resolution: Option<[usize; 3]>,
    },
    /// Homogeneous medium, either the bulk of a particle file or explicit
    /// coefficients (1/m) over `bounds` with an optional phase table CSV
    /// (isotropic otherwise).
    Continuous {
        particles: Option<PathBuf>,
        bounds: Option<Aabb>,
        sigma_t: Option<Spectrum>,
        sigma_s: Option<Spectrum>,
        phase: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LightConfig {
    /// One-sided emitter facing along edge_u x edge_v.
    Quad { corner: DVec3, edge_u: DVec3, edge_v: DVec3, radiance: Spectrum },
    Point { position: DVec3, intensity: Spectrum },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceConfig {
    Quad { corner: DVec3, edge_u: DVec3, edge_v: DVec3, albedo: Spectrum },
    Box { min: DVec3, max: DVec3, albedo: Spectrum },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub camera: Camera,
    #[serde(default)]
    pub medium: MediumConfig,
    #[serde(default)]
    pub optics: OpticsConfig,
    #[serde(default)]
    pub lights: Vec<LightConfig>,
    #[serde(default)]
    pub surfaces: Vec<SurfaceConfig>,
    #[serde(default)]
    pub integrator: IntegratorSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Light {
    Quad { quad: Quad, radiance: Vec<f64> },
    Point { position: DVec3, intensity: Vec<f64> },
}

/// Two-sided Lambertian quad.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub quad: Quad,
    pub albedo: Vec<f64>,
}

/// Homogeneous coefficients of one band.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousBand {
    pub sigma_t: f64,
    pub sigma_s: f64,
    /// `None` when the band does not scatter.
    pub phase: Option<PhaseTable>,
}

#[derive(Debug, Clone)]
pub enum SceneMedium {
    None,
    Discrete { cloud: Arc<ParticleCloud>, capture: CaptureNormalization, resolution: Resolution },
    Continuous { bounds: Aabb, bands: Vec<ContinuousBand> },
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub camera: Camera,
    pub medium: SceneMedium,
    pub optics: OpticsSettings,
    pub cache_dir: Option<PathBuf>,
    pub lights: Vec<Light>,
    pub surfaces: Vec<Surface>,
    pub integrator: IntegratorSettings,
}

fn box_faces(min: DVec3, max: DVec3) -> [Quad; 6] {
    let e = max - min;
    let (x, y, z) = (DVec3::X * e.x, DVec3::Y * e.y, DVec3::Z * e.z);
    [
        Quad::new(min, z, y),
        Quad::new(DVec3::new(max.x, min.y, min.z), y, z),
        Quad::new(min, x, z),
        Quad::new(DVec3::new(min.x, max.y, min.z), z, x),
        Quad::new(min, y, x),
        Quad::new(DVec3::new(min.x, min.y, max.z), x, y),
    ]
}

impl Scene {
    /// Reads a TOML scene; relative file paths resolve against its folder.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let config: SceneConfig = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_config(&config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_config(config: &SceneConfig, base_dir: &Path) -> Result<Self> {
        config.camera.validate()?;
        config.integrator.validate()?;
        let n = config.integrator.bands;
        let optics = config.optics.settings(n)?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let medium = match &config.medium {
            MediumConfig::None => SceneMedium::None,
            MediumConfig::Discrete { particles, capture, resolution } => SceneMedium::Discrete {
                cloud: Arc::new(ParticleCloud::load(resolve(particles))?),
                capture: *capture,
                resolution: resolution.map_or(Resolution::Auto, Resolution::Fixed),
            },
            MediumConfig::Continuous { particles: Some(p), .. } => {
                let cloud = ParticleCloud::load(resolve(p))?;
                continuous_from_cloud(&cloud, &optics, config.optics.cache_dir.as_deref())?
            }
            MediumConfig::Continuous { particles: None, bounds, sigma_t, sigma_s, phase } => {
                let missing = || Error::InvalidInput("continuous medium needs particles or bounds and sigma_t".into());
                let bounds = bounds.ok_or_else(missing)?;
                bounds.validate()?;
                let sigma_t = sigma_t.as_ref().ok_or_else(missing)?.expand(n)?;
                let sigma_s = sigma_s.as_ref().map_or(Ok(sigma_t.clone()), |s| s.expand(n))?;
                let table = match phase {
                    Some(p) => PhaseTable::read_csv(std::io::BufReader::new(std::fs::File::open(resolve(p))?))?,
                    None => PhaseTable::isotropic(optics.n_theta),
                };
                let bands = sigma_t
                    .iter()
                    .zip(&sigma_s)
                    .map(|(&t, &s)| {
                        if !(t >= 0.0 && s >= 0.0 && s <= t) {
                            return Err(Error::InvalidInput(format!("need 0 <= sigma_s <= sigma_t, got {s} and {t}")));
                        }
                        Ok(ContinuousBand { sigma_t: t, sigma_s: s, phase: (s > 0.0).then(|| table.clone()) })
                    })
                    .collect::<Result<_>>()?;
                SceneMedium::Continuous { bounds, bands }
            }
        };
        let lights = config
            .lights
            .iter()
            .map(|l| {
                Ok(match l {
                    LightConfig::Quad { corner, edge_u, edge_v, radiance } => {
                        Light::Quad { quad: Quad::new(*corner, *edge_u, *edge_v), radiance: radiance.expand(n)? }
                    }
                    LightConfig::Point { position, intensity } => {
                        Light::Point { position: *position, intensity: intensity.expand(n)? }
                    }
                })
            })
            .collect::<Result<_>>()?;
        let mut surfaces = Vec::new();
        for s in &config.surfaces {
            match s {
                SurfaceConfig::Quad { corner, edge_u, edge_v, albedo } => {
                    surfaces.push(Surface { quad: Quad::new(*corner, *edge_u, *edge_v), albedo: albedo.expand(n)? })
                }
                SurfaceConfig::Box { min, max, albedo } => {
                    let albedo = albedo.expand(n)?;
                    surfaces.extend(box_faces(*min, *max).map(|quad| Surface { quad, albedo: albedo.clone() }));
                }
            }
        }
        Ok(Self {
            camera: config.camera,
            medium,
            optics,
            cache_dir: config.optics.cache_dir.as_ref().map(|p| resolve(p)),
            lights,
            surfaces,
            integrator: config.integrator,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.optics.wavelengths_um.len()
    }

    pub fn wavelengths_nm(&self) -> Vec<f64> {
        self.optics.wavelengths_um.iter().map(|l| l * 1e3).collect()
    }

    pub fn cache(&self) -> Result<Option<OpticsCache>> {
        self.cache_dir.as_ref().map(OpticsCache::new).transpose()
    }

    /// The same scene with a discrete medium replaced by its bulk
    /// coefficients and ensemble phase over the cloud bounds.
    pub fn with_continuous_medium(&self) -> Result<Self> {
        let mut out = self.clone();
        if let SceneMedium::Discrete { cloud, .. } = &self.medium {
            out.medium = continuous_from_cloud(cloud, &self.optics, self.cache_dir.as_deref())?;
        }
        Ok(out)
    }
}

fn continuous_from_cloud(cloud: &ParticleCloud, settings: &OpticsSettings, cache_dir: Option<&Path>) -> Result<SceneMedium> {
    let cache = cache_dir.map(OpticsCache::new).transpose()?;
    let optics = BinnedOptics::for_cloud(cloud, settings, cache.as_ref())?;
    let bands = global_bulk_properties(cloud, &optics)?
        .into_iter()
        .map(|b| ContinuousBand { sigma_t: b.sigma_t, sigma_s: b.sigma_s, phase: b.phase })
        .collect();
    Ok(SceneMedium::Continuous { bounds: cloud.bounds, bands })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = r#"
[camera]
position = [0.5, 0.5, -3.0]
look_at = [0.5, 0.5, 0.5]
up = [0.0, 1.0, 0.0]
fov_y_deg = 30.0
width = 8
height = 6

[medium]
kind = "continuous"
bounds = { min = [0.0, 0.0, 0.0], max = [1.0, 1.0, 1.0] }
sigma_t = 0.5
sigma_s = [0.1, 0.2, 0.3, 0.4]

[[lights]]
type = "quad"
corner = [-1.0, -1.0, 2.0]
edge_u = [0.0, 3.0, 0.0]
edge_v = [3.0, 0.0, 0.0]
radiance = 1.0

[[lights]]
type = "point"
position = [0.0, 3.0, 0.0]
intensity = [1.0, 2.0, 3.0, 4.0]

[[surfaces]]
type = "box"
min = [2.0, 0.0, 0.0]
max = [3.0, 1.0, 1.0]
albedo = 0.5

[integrator]
spp = 4
bands = 4
"#;

    #[test]
    fn parses_toml_scene() {
        let config: SceneConfig = toml::from_str(SCENE).unwrap();
        let scene = Scene::from_config(&config, Path::new(".")).unwrap();
        assert_eq!(scene.camera.z_near, 1.0);
        assert_eq!(scene.n_bands(), 4);
        assert_eq!(scene.surfaces.len(), 6);
        assert_eq!(scene.lights.len(), 2);
        match &scene.medium {
            SceneMedium::Continuous { bands, .. } => {
                assert_eq!(bands[3].sigma_s, 0.4);
                assert!(bands.iter().all(|b| b.sigma_t == 0.5 && b.phase.is_some()));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(scene.integrator.max_bounces, 16);
    }

    #[test]
    fn rejects_bad_scenes() {
        let bad = SCENE.replace("sigma_s = [0.1, 0.2, 0.3, 0.4]", "sigma_s = [0.1, 0.2]");
        let config: SceneConfig = toml::from_str(&bad).unwrap();
        assert!(Scene::from_config(&config, Path::new(".")).is_err());
        let bad = SCENE.replace("sigma_s = [0.1, 0.2, 0.3, 0.4]", "sigma_s = 0.9");
        let config: SceneConfig = toml::from_str(&bad).unwrap();
        assert!(Scene::from_config(&config, Path::new(".")).is_err());
        assert!(toml::from_str::<SceneConfig>(&SCENE.replace("spp = 4", "spp = 4\nfoo = 1")).is_err());
    }

    #[test]
    fn box_faces_point_outward() {
        let (min, max) = (DVec3::ZERO, DVec3::new(1.0, 2.0, 3.0));
        let center = 0.5 * (min + max);
        for q in box_faces(min, max) {
            let c = q.point(0.5, 0.5);
            assert!(q.normal().dot(c - center) > 0.0);
        }
    }
}
