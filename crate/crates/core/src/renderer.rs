//! Spectral Monte Carlo path tracer for discrete and continuous media.
//!
//! All bands share one geometric path. Free-flight distances are drawn
//! from the band-averaged bulk extinction and scattering directions from
//! the scattering-weighted bulk phase function; per-band weights correct
//! for both. Emission at the end of every segment is added with its exact
//! transmittance, so the free-flight choice only decides how the path
//! continues. In a discrete medium, transmittance and scattering come from
//! the particles gathered around the ray and around each vertex.

use std::f64::consts::PI;
use std::time::Instant;

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{basis, Aabb, Camera, Ray};
use crate::medium::{capture_radius, footprint_cross_section, LocalQ, Medium, QueryCylinder};
use crate::optics::BinnedOptics;
use crate::particles::{global_bulk_properties, RENDER_STREAM};
use crate::scatter::PhaseTable;
use crate::scene::{IntegratorSettings, Light, Scene, SceneMedium, Surface};
use crate::spectrum::SpectralImage;

/// Vertices after which Russian roulette starts.
const ROULETTE_DEPTH: u32 = 5;
/// Offset of ray origins leaving a surface (m).
const SURFACE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderStats {
    /// Path samples dropped because a band came out NaN or infinite.
    pub nan_samples: u64,
    pub capture_radius_m: Option<f64>,
    pub grid_resolution: Option<[usize; 3]>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: SpectralImage,
    pub stats: RenderStats,
}

enum Coefficients {
    Discrete { medium: Medium, r_c: f64 },
    Continuous { sigma_t: Vec<f64>, sigma_s: Vec<f64>, phases: Vec<Option<PhaseTable>> },
}

/// A medium with nonzero mean extinction.
struct Volume {
    bounds: Aabb,
    sigma_bar: f64,
    sampling: PhaseTable,
    coefficients: Coefficients,
}

/// Per-thread buffers.
struct Scratch {
    segment: Vec<u32>,
    vertex: Vec<u32>,
    tau: Vec<f64>,
    weight: Vec<f64>,
    full: Vec<f64>,
    shadow: Vec<f64>,
    value: Vec<f64>,
    beta: Vec<f64>,
    radiance: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let v = || vec![0.0; n];
        Self {
            segment: Vec::new(),
            vertex: Vec::new(),
            tau: v(),
            weight: v(),
            full: v(),
            shadow: v(),
            value: v(),
            beta: v(),
            radiance: v(),
        }
    }
}

fn scattering_weighted_phase(bands: &[(f64, Option<&PhaseTable>)], n_theta: usize) -> Result<PhaseTable> {
    let (tables, weights): (Vec<&PhaseTable>, Vec<f64>) =
        bands.iter().filter_map(|&(s, p)| p.filter(|_| s > 0.0).map(|p| (p, s))).unzip();
    if tables.is_empty() {
        return Ok(PhaseTable::isotropic(n_theta));
    }
    PhaseTable::mix(&tables, &weights)
}

impl Volume {
    /// Optical depth per band over the segment [a, b], into `s.tau`.
    fn optical_depth(&self, a: DVec3, b: DVec3, s: &mut Scratch) -> Result<()> {
        match &self.coefficients {
            Coefficients::Continuous { sigma_t, .. } => {
                let d = (b - a).length();
                s.tau.iter_mut().zip(sigma_t).for_each(|(t, c)| *t = c * d);
            }
            Coefficients::Discrete { medium, r_c } => {
                if a == b {
                    s.tau.fill(0.0);
                    return Ok(());
                }
                medium.gather(&QueryCylinder::new(a, b, *r_c)?, &mut s.segment)?;
                medium.optical_depths(&s.segment, *r_c, &mut s.tau);
            }
        }
        Ok(())
    }

    /// Multiplies `s.full` or `s.shadow` by the transmittance of
    /// `origin + t dir`, t in [0, t_max].
    fn attenuate(&self, origin: DVec3, dir: DVec3, t_max: f64, s: &mut Scratch, out: Out) -> Result<()> {
        if let Some((t0, t1)) = self.bounds.clip(origin, dir, 0.0, t_max).filter(|(t0, t1)| t1 > t0) {
            self.optical_depth(origin + t0 * dir, origin + t1 * dir, s)?;
            let target = match out {
                Out::Full => &mut s.full,
                Out::Shadow => &mut s.shadow,
            };
            target.iter_mut().zip(&s.tau).for_each(|(o, t)| *o *= (-t).exp());
        }
        Ok(())
    }

    /// Gathers the particles around a vertex; false when there are none.
    fn prepare_vertex(&self, x: DVec3, s: &mut Scratch) -> Result<bool> {
        match &self.coefficients {
            Coefficients::Continuous { .. } => Ok(true),
            Coefficients::Discrete { medium, r_c } => {
                medium.gather_sphere(x, *r_c, &mut s.vertex)?;
                Ok(!s.vertex.is_empty())
            }
        }
    }

    /// Q per band (1/(m sr)) at the prepared vertex, into `s.value`.
    fn scattering(&self, cos_theta: f64, s: &mut Scratch) {
        match &self.coefficients {
            Coefficients::Continuous { sigma_s, phases, .. } => {
                for ((v, c), p) in s.value.iter_mut().zip(sigma_s).zip(phases) {
                    *v = p.as_ref().map_or(0.0, |p| c * p.eval(cos_theta));
                }
            }
            Coefficients::Discrete { medium, r_c } => match medium.local_q_from(&s.vertex, *r_c, cos_theta) {
                LocalQ::Values(q) => s.value.copy_from_slice(&q),
                LocalQ::PassThrough => s.value.fill(0.0),
            },
        }
    }
}

#[derive(Clone, Copy)]
enum Out {
    Full,
    Shadow,
}

#[derive(Clone, Copy)]
enum HitKind {
    Light(usize),
    Surface(usize),
}

#[derive(Clone, Copy)]
struct Hit {
    t: f64,
    kind: HitKind,
}

/// Where a light sample is taken.
enum VertexKind<'a> {
    Medium { incoming: DVec3 },
    Surface { normal: DVec3, albedo: &'a [f64] },
}

fn power_heuristic(a: f64, b: f64) -> f64 {
    let (a2, b2) = (a * a, b * b);
    if a2 + b2 > 0.0 {
        a2 / (a2 + b2)
    } else {
        0.0
    }
}

/// Direction at angle acos(cos_theta) from `axis`, azimuth `phi`.
fn rotate(axis: DVec3, cos_theta: f64, phi: f64) -> DVec3 {
    let (t, b) = basis(axis);
    let sin = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    (t * (sin * phi.cos()) + b * (sin * phi.sin()) + axis * cos_theta).normalize()
}

/// Prepared scene, ready to render.
pub struct Renderer {
    camera: Camera,
    integrator: IntegratorSettings,
    wavelengths_nm: Vec<f64>,
    lights: Vec<Light>,
    surfaces: Vec<Surface>,
    volume: Option<Volume>,
    capture_radius_m: Option<f64>,
}

impl Renderer {
    pub fn new(scene: &Scene) -> Result<Self> {
        scene.camera.validate()?;
        scene.integrator.validate()?;
        let n_theta = scene.optics.n_theta;
        let mut capture_radius_m = None;
        let volume = match &scene.medium {
            SceneMedium::None => None,
            SceneMedium::Discrete { cloud, .. } if cloud.is_empty() => None,
            SceneMedium::Discrete { cloud, capture, resolution } => {
                let cache = scene.cache()?;
                let optics = BinnedOptics::for_cloud(cloud, &scene.optics, cache.as_ref())?;
                let bulk = global_bulk_properties(cloud, &optics)?;
                let sigma_bar = bulk.iter().map(|b| b.sigma_t).sum::<f64>() / bulk.len() as f64;
                if sigma_bar > 0.0 {
                    let area = footprint_cross_section(&scene.camera, &cloud.bounds, scene.integrator.k_factor)?;
                    let r_c = capture_radius(area);
                    capture_radius_m = Some(r_c);
                    let phases: Vec<_> = bulk.iter().map(|b| (b.sigma_s, b.phase.as_ref())).collect();
                    let sampling = scattering_weighted_phase(&phases, n_theta)?;
                    let medium = Medium::new((**cloud).clone(), Box::new(optics), *resolution, r_c, *capture)?;
                    log::info!(
                        "discrete medium: {} particles, capture radius {r_c:.4e} m, grid {:?}",
                        cloud.len(),
                        medium.grid.resolution()
                    );
                    Some(Volume { bounds: cloud.bounds, sigma_bar, sampling, coefficients: Coefficients::Discrete { medium, r_c } })
                } else {
                    None
                }
            }
            SceneMedium::Continuous { bounds, bands } => {
                let sigma_bar = bands.iter().map(|b| b.sigma_t).sum::<f64>() / bands.len() as f64;
                if sigma_bar > 0.0 {
                    let phases: Vec<_> = bands.iter().map(|b| (b.sigma_s, b.phase.as_ref())).collect();
                    let sampling = scattering_weighted_phase(&phases, n_theta)?;
                    let coefficients = Coefficients::Continuous {
                        sigma_t: bands.iter().map(|b| b.sigma_t).collect(),
                        sigma_s: bands.iter().map(|b| b.sigma_s).collect(),
                        phases: bands.iter().map(|b| b.phase.clone()).collect(),
                    };
                    Some(Volume { bounds: *bounds, sigma_bar, sampling, coefficients })
                } else {
                    None
                }
            }
        };
        Ok(Self {
            camera: scene.camera,
            integrator: scene.integrator,
            wavelengths_nm: scene.wavelengths_nm(),
            lights: scene.lights.clone(),
            surfaces: scene.surfaces.clone(),
            volume,
            capture_radius_m,
        })
    }

    pub fn capture_radius_m(&self) -> Option<f64> {
        self.capture_radius_m
    }

    pub fn grid_resolution(&self) -> Option<[usize; 3]> {
        match &self.volume.as_ref()?.coefficients {
            Coefficients::Discrete { medium, .. } => Some(medium.grid.resolution()),
            Coefficients::Continuous { .. } => None,
        }
    }

    fn n_bands(&self) -> usize {
        self.wavelengths_nm.len()
    }

    /// Renders every pixel; pixels draw from their own random stream, so
    /// the image does not depend on thread count or scheduling.
    pub fn render(&self) -> Result<RenderOutput> {
        let start = Instant::now();
        let (w, h, n) = (self.camera.width as usize, self.camera.height as usize, self.n_bands());
        let mut image = SpectralImage::new(w, h, self.wavelengths_nm.clone());
        let nan_samples = image
            .data
            .par_chunks_mut(w * n)
            .enumerate()
            .map(|(y, row)| {
                let mut s = Scratch::new(n);
                let mut nans = 0;
                for (x, px) in row.chunks_mut(n).enumerate() {
                    nans += self.render_pixel(x, y, &mut s, px)?;
                }
                Ok(nans)
            })
            .collect::<Result<Vec<u64>>>()?
            .into_iter()
            .sum();
        if nan_samples > 0 {
            log::warn!("{nan_samples} non-finite path samples dropped");
        }
        let stats = RenderStats {
            nan_samples,
            capture_radius_m: self.capture_radius_m,
            grid_resolution: self.grid_resolution(),
            seconds: start.elapsed().as_secs_f64(),
        };
        Ok(RenderOutput { image, stats })
    }

    fn render_pixel(&self, x: usize, y: usize, s: &mut Scratch, out: &mut [f64]) -> Result<u64> {
        let index = (y * self.camera.width as usize + x) as u128;
        let mut rng = ChaCha8Rng::seed_from_u64(self.integrator.seed);
        rng.set_stream(RENDER_STREAM);
        rng.set_word_pos(index << 40);
        out.fill(0.0);
        let mut nans = 0;
        for _ in 0..self.integrator.spp {
            let (jx, jy): (f64, f64) = (rng.random(), rng.random());
            let ray = self.camera.ray(x as f64 + jx, y as f64 + jy);
            self.trace(ray, &mut rng, s)?;
            if s.radiance.iter().all(|v| v.is_finite()) {
                out.iter_mut().zip(&s.radiance).for_each(|(o, v)| *o += v);
            } else {
                nans += 1;
            }
        }
        let inv = 1.0 / self.integrator.spp as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(nans)
    }

    fn intersect(&self, ray: &Ray, t_max: f64, skip_light: Option<usize>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut limit = t_max;
        for (i, light) in self.lights.iter().enumerate() {
            if let Light::Quad { quad, .. } = light {
                if skip_light == Some(i) {
                    continue;
                }
                if let Some(t) = quad.intersect(ray, 0.0, limit) {
                    limit = t;
                    best = Some(Hit { t, kind: HitKind::Light(i) });
                }
            }
        }
        for (i, surface) in self.surfaces.iter().enumerate() {
            if let Some(t) = surface.quad.intersect(ray, 0.0, limit) {
                limit = t;
                best = Some(Hit { t, kind: HitKind::Surface(i) });
            }
        }
        best
    }

    /// Solid-angle density of picking the point `t` along `ray` on quad
    /// light `i` by light sampling.
    fn light_pdf(&self, i: usize, ray: &Ray, t: f64) -> f64 {
        match &self.lights[i] {
            Light::Quad { quad, .. } => {
                let cos = quad.normal().dot(-ray.dir).abs();
                t * t / (cos * quad.area() * self.lights.len() as f64)
            }
            Light::Point { .. } => 0.0,
        }
    }

    /// One light sample from `x`, added to `s.radiance` with the path weight.
    fn direct_lighting(&self, x: DVec3, vertex: VertexKind, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()> {
        if self.lights.is_empty() {
            return Ok(());
        }
        let nl = self.lights.len();
        let i = ((rng.random::<f64>() * nl as f64) as usize).min(nl - 1);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        // light point, emitted spectrum and the light strategy's pdf (None for points)
        let (target, emitted, light_pdf) = match &self.lights[i] {
            Light::Quad { quad, radiance } => (quad.point(u, v), radiance, Some(quad)),
            Light::Point { position, intensity } => (*position, intensity, None),
        };
        let d = target - x;
        let dist2 = d.length_squared();
        if dist2 == 0.0 {
            return Ok(());
        }
        let dist = dist2.sqrt();
        let wi = d / dist;
        let (pdf_light, delta) = match light_pdf {
            Some(quad) => {
                let cos_l = -quad.normal().dot(wi);
                if cos_l <= 0.0 {
                    return Ok(());
                }
                (dist2 / (cos_l * quad.area() * nl as f64), false)
            }
            None => (dist2 / nl as f64, true),
        };
        let pdf_scatter = match vertex {
            VertexKind::Medium { incoming } => {
                let cos = incoming.dot(wi);
                self.volume.as_ref().expect("medium vertex").scattering(cos, s);
                self.volume.as_ref().unwrap().sampling.pdf(cos)
            }
            VertexKind::Surface { normal, albedo } => {
                let c = normal.dot(wi);
                if c <= 0.0 {
                    return Ok(());
                }
                s.value.iter_mut().zip(albedo).for_each(|(f, a)| *f = a / PI * c);
                c / PI
            }
        };
        if s.value.iter().all(|&f| f == 0.0) {
            return Ok(());
        }
        let origin = match vertex {
            VertexKind::Surface { normal, .. } => x + normal * SURFACE_EPS,
            VertexKind::Medium { .. } => x,
        };
        let shadow_ray = Ray { origin, dir: wi };
        let reach = (target - origin).length();
        if self.intersect(&shadow_ray, reach * (1.0 - 1e-9), light_pdf.map(|_| i)).is_some() {
            return Ok(());
        }
        s.shadow.fill(1.0);
        if let Some(vol) = &self.volume {
            vol.attenuate(origin, wi, reach, s, Out::Shadow)?;
        }
        let mis = if delta { 1.0 } else { power_heuristic(pdf_light, pdf_scatter) };
        for k in 0..s.radiance.len() {
            s.radiance[k] += s.beta[k] * s.value[k] * s.shadow[k] * emitted[k] * mis / pdf_light;
        }
        Ok(())
    }

    fn trace(&self, camera_ray: Ray, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()> {
        s.radiance.fill(0.0);
        s.beta.fill(1.0);
        let mut ray = camera_ray;
        let mut prev_pdf: Option<f64> = None;
        let mut depth = 0u32;
        loop {
            let hit = self.intersect(&ray, f64::INFINITY, None);
            let t_hit = hit.map_or(f64::INFINITY, |h| h.t);

            // free flight: `weight` is the transmittance to the event
            // divided by its probability (density)
            s.weight.fill(1.0);
            let mut scatter_at = None;
            let mut transmit_full = true;
            if let Some(vol) = &self.volume {
                if let Some((t0, t1)) = vol.bounds.clip(ray.origin, ray.dir, 0.0, t_hit).filter(|(t0, t1)| t1 > t0) {
                    let t = t0 - (1.0 - rng.random::<f64>()).ln() / vol.sigma_bar;
                    if t < t1 {
                        vol.optical_depth(ray.at(t0), ray.at(t), s)?;
                        let pdf = vol.sigma_bar * (-vol.sigma_bar * (t - t0)).exp();
                        s.weight.iter_mut().zip(&s.tau).for_each(|(w, tau)| *w = (-tau).exp() / pdf);
                        scatter_at = Some(t);
                        transmit_full = false;
                    } else {
                        vol.optical_depth(ray.at(t0), ray.at(t1), s)?;
                        let pass = (-vol.sigma_bar * (t1 - t0)).exp();
                        s.full.iter_mut().zip(&s.tau).for_each(|(f, tau)| *f = (-tau).exp());
                        s.weight.iter_mut().zip(&s.full).for_each(|(w, f)| *w = f / pass);
                    }
                } else {
                    s.full.fill(1.0);
                }
            } else {
                s.full.fill(1.0);
            }

            // emission at the segment end, with the exact transmittance
            if let Some(Hit { t, kind: HitKind::Light(i) }) = hit {
                if let Light::Quad { quad, radiance } = &self.lights[i] {
                    if quad.normal().dot(ray.dir) < 0.0 {
                        let mis = prev_pdf.map_or(1.0, |p| power_heuristic(p, self.light_pdf(i, &ray, t)));
                        if !transmit_full {
                            s.full.fill(1.0);
                            self.volume.as_ref().unwrap().attenuate(ray.origin, ray.dir, t, s, Out::Full)?;
                        }
                        for k in 0..s.radiance.len() {
                            s.radiance[k] += s.beta[k] * s.full[k] * radiance[k] * mis;
                        }
                    }
                }
            }

            s.beta.iter_mut().zip(&s.weight).for_each(|(b, w)| *b *= w);
            if let Some(t) = scatter_at {
                let vol = self.volume.as_ref().unwrap();
                let x = ray.at(t);
                // no particles nearby: nothing scatters into the path here
                if depth >= self.integrator.max_bounces || !vol.prepare_vertex(x, s)? {
                    break;
                }
                depth += 1;
                self.direct_lighting(x, VertexKind::Medium { incoming: ray.dir }, rng, s)?;
                let cos = vol.sampling.sample_cos(rng.random());
                let phi = 2.0 * PI * rng.random::<f64>();
                let pdf = vol.sampling.pdf(cos);
                vol.scattering(cos, s);
                s.beta.iter_mut().zip(&s.value).for_each(|(b, q)| *b *= q / pdf);
                prev_pdf = Some(pdf);
                ray = Ray { origin: x, dir: rotate(ray.dir, cos, phi) };
            } else {
                let Some(Hit { t, kind: HitKind::Surface(i) }) = hit else { break };
                if depth >= self.integrator.max_bounces {
                    break;
                }
                depth += 1;
                let surface = &self.surfaces[i];
                let p = ray.at(t);
                let n = surface.quad.normal();
                let normal = if n.dot(ray.dir) < 0.0 { n } else { -n };
                self.direct_lighting(p, VertexKind::Surface { normal, albedo: &surface.albedo }, rng, s)?;
                let (u1, u2): (f64, f64) = (rng.random(), rng.random());
                let cos = (1.0 - u1).sqrt();
                let dir = rotate(normal, cos, 2.0 * PI * u2);
                s.beta.iter_mut().zip(&surface.albedo).for_each(|(b, a)| *b *= a);
                prev_pdf = Some(cos / PI);
                ray = Ray { origin: p + normal * SURFACE_EPS, dir };
            }

            let max_beta = s.beta.iter().fold(0.0f64, |m, &b| m.max(b));
            if !(max_beta > 0.0) {
                break;
            }
            if depth >= ROULETTE_DEPTH && max_beta < 1.0 {
                if rng.random::<f64>() >= max_beta {
                    break;
                }
                s.beta.iter_mut().for_each(|b| *b /= max_beta);
            }
        }
        Ok(())
    }
}

/// Renders a scene as described, with a discrete or continuous medium.
pub fn render(scene: &Scene) -> Result<RenderOutput> {
    Renderer::new(scene)?.render()
}

/// Renders the scene with any discrete medium replaced by its bulk
/// coefficients and ensemble phase.
pub fn render_continuous(scene: &Scene) -> Result<RenderOutput> {
    render(&scene.with_continuous_medium()?)
}
