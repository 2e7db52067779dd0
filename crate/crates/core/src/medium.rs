//! Spatial index over a particle cloud and the local queries of the
//! discrete-medium transport: voxel traversal, query-cylinder gathers,
//! segment transmittance and the local angular scattering density Q.
//!
//! Particle radii stay in µm; positions, cylinder radii and lengths are in
//! meters, and the conversions go through [`um_to_m`] and [`um2_to_m2`].

use std::f64::consts::PI;
use std::io::Write;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{um2_to_m2, um_to_m, Aabb, Camera};
use crate::particles::{OpticsProvider, ParticleCloud};

/// Grid resolution policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resolution {
    /// About one voxel per particle, split across axes by the box aspect.
    #[default]
    Auto,
    Fixed([usize; 3]),
}

/// Uniform voxel grid. Each voxel lists every particle whose sphere, grown
/// by the capture margin, overlaps it. A particle within `r_p + r_c` of a
/// point is therefore listed in that point's voxel whenever
/// `r_c <= margin`, so walking the voxels pierced by a segment finds every
/// particle of a cylinder around it.
#[derive(Debug, Clone)]
pub struct UniformGrid {
    domain: Aabb,
    res: [usize; 3],
    cell: DVec3,
    margin_m: f64,
    offsets: Vec<u32>,
    items: Vec<u32>,
}

fn auto_resolution(n: usize, bounds: &Aabb) -> [usize; 3] {
    if n == 0 {
        return [1, 1, 1];
    }
    let density = (n as f64 / bounds.volume()).cbrt();
    let e = bounds.extent();
    [e.x, e.y, e.z].map(|x| ((x * density).ceil() as usize).max(1))
}

impl UniformGrid {
    /// Indexes `cloud`. Queries may use capture radii up to `margin_m`.
    pub fn build(cloud: &ParticleCloud, resolution: Resolution, margin_m: f64) -> Result<Self> {
        cloud.bounds.validate()?;
        if !(margin_m >= 0.0 && margin_m.is_finite()) {
            return Err(Error::InvalidInput(format!("capture margin must be finite and >= 0, got {margin_m}")));
        }
        let res = match resolution {
            Resolution::Auto => auto_resolution(cloud.len(), &cloud.bounds),
            Resolution::Fixed(r) if r.iter().all(|&n| n > 0) => r,
            Resolution::Fixed(r) => return Err(Error::InvalidInput(format!("grid resolution {r:?} must be positive"))),
        };
        let grow = um_to_m(cloud.max_radius_um()) + margin_m;
        let domain = if cloud.is_empty() { cloud.bounds } else { cloud.bounds.grow(grow) };
        let dims = DVec3::new(res[0] as f64, res[1] as f64, res[2] as f64);
        let mut grid = Self { domain, res, cell: domain.extent() / dims, margin_m, offsets: vec![], items: vec![] };

        let n_voxels = res[0] * res[1] * res[2];
        let mut counts = vec![0u32; n_voxels + 1];
        grid.for_each_overlap(cloud, |v, _| counts[v + 1] += 1);
        for v in 0..n_voxels {
            counts[v + 1] += counts[v];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[n_voxels] as usize];
        grid.for_each_overlap(cloud, |v, i| {
            items[fill[v] as usize] = i;
            fill[v] += 1;
        });
        grid.offsets = counts;
        grid.items = items;
        Ok(grid)
    }

    fn for_each_overlap(&self, cloud: &ParticleCloud, mut f: impl FnMut(usize, u32)) {
        for (i, rec) in cloud.records.iter().enumerate() {
            let reach = um_to_m(rec.radius_um) + self.margin_m;
            let lo = self.voxel_clamped(rec.position - DVec3::splat(reach));
            let hi = self.voxel_clamped(rec.position + DVec3::splat(reach));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let b = self.voxel_box([x, y, z]);
                        let d = rec.position.clamp(b.min, b.max) - rec.position;
                        if d.length_squared() <= reach * reach {
                            f(self.linear([x, y, z]), i as u32);
                        }
                    }
                }
            }
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    /// Indexed region: cloud bounds grown by the largest radius plus margin.
    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    pub fn voxel_size(&self) -> DVec3 {
        self.cell
    }

    pub fn margin_m(&self) -> f64 {
        self.margin_m
    }

    fn linear(&self, v: [usize; 3]) -> usize {
        (v[2] * self.res[1] + v[1]) * self.res[0] + v[0]
    }

    fn voxel_clamped(&self, p: DVec3) -> [usize; 3] {
        let f = (p - self.domain.min) / self.cell;
        [0, 1, 2].map(|a| (f[a].floor().max(0.0) as usize).min(self.res[a] - 1))
    }

    /// Voxel containing `p`, `None` outside the domain.
    pub fn voxel_of(&self, p: DVec3) -> Option<[usize; 3]> {
        let inside = p.cmpge(self.domain.min).all() && p.cmple(self.domain.max).all();
        inside.then(|| self.voxel_clamped(p))
    }

    pub fn voxel_box(&self, v: [usize; 3]) -> Aabb {
        let lo = self.domain.min + DVec3::new(v[0] as f64, v[1] as f64, v[2] as f64) * self.cell;
        Aabb::new(lo, lo + self.cell)
    }

    /// Particle indices listed in voxel `v`.
    pub fn cell_items(&self, v: [usize; 3]) -> &[u32] {
        let k = self.linear(v);
        &self.items[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }

    /// Calls `visit` for the voxels pierced by the segment `a -> b`, in
    /// order along the segment. Where the segment crosses an edge or corner
    /// every voxel sharing it is visited.
    pub fn traverse(&self, a: DVec3, b: DVec3, mut visit: impl FnMut([usize; 3])) {
        let delta = b - a;
        let length = delta.length();
        if length == 0.0 {
            if let Some(v) = self.voxel_of(a) {
                visit(v);
            }
            return;
        }
        let dir = delta / length;
        let Some((t0, t1)) = self.domain.clip(a, dir, 0.0, length) else {
            return;
        };
        let mut v = self.voxel_clamped(a + t0 * dir);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for ax in 0..3 {
            if dir[ax] > 0.0 {
                step[ax] = 1;
                let boundary = self.domain.min[ax] + (v[ax] + 1) as f64 * self.cell[ax];
                t_max[ax] = (boundary - a[ax]) / dir[ax];
                t_delta[ax] = self.cell[ax] / dir[ax];
            } else if dir[ax] < 0.0 {
                step[ax] = -1;
                let boundary = self.domain.min[ax] + v[ax] as f64 * self.cell[ax];
                t_max[ax] = (boundary - a[ax]) / dir[ax];
                t_delta[ax] = -self.cell[ax] / dir[ax];
            }
        }
        let res = self.res;
        let moved = |v: [usize; 3], axes: &[usize]| -> Option<[usize; 3]> {
            let mut w = v;
            for &ax in axes {
                let n = w[ax] as i64 + step[ax];
                if n < 0 || n >= res[ax] as i64 {
                    return None;
                }
                w[ax] = n as usize;
            }
            Some(w)
        };
        visit(v);
        loop {
            let t = t_max[0].min(t_max[1]).min(t_max[2]);
            if t > t1 {
                return;
            }
            let tol = 1e-12 * t.abs().max(self.cell.max_element());
            let tied: Vec<usize> = (0..3).filter(|&ax| t_max[ax] - t <= tol).collect();
            if tied.len() > 1 {
                // voxels touched only at the shared edge or corner
                let n = tied.len();
                for mask in 1..(1u32 << n) - 1 {
                    let axes: Vec<usize> = (0..n).filter(|&k| mask & (1 << k) != 0).map(|k| tied[k]).collect();
                    if let Some(w) = moved(v, &axes) {
                        visit(w);
                    }
                }
            }
            match moved(v, &tied) {
                Some(w) => v = w,
                None => return,
            }
            for &ax in &tied {
                t_max[ax] += t_delta[ax];
            }
            visit(v);
        }
    }

    /// Voxels visited by [`traverse`](Self::traverse), collected.
    pub fn traverse_voxels(&self, a: DVec3, b: DVec3) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        self.traverse(a, b, |v| out.push(v));
        out
    }

    /// (particles listed, number of voxels) pairs, ascending.
    pub fn occupancy_histogram(&self) -> Vec<(usize, usize)> {
        let mut hist = std::collections::BTreeMap::new();
        for w in self.offsets.windows(2) {
            *hist.entry((w[1] - w[0]) as usize).or_insert(0usize) += 1;
        }
        hist.into_iter().collect()
    }

    pub fn write_stats_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# resolution={}x{}x{} margin_m={}", self.res[0], self.res[1], self.res[2], self.margin_m)?;
        writeln!(w, "particles_per_voxel,voxels")?;
        for (k, n) in self.occupancy_histogram() {
            writeln!(w, "{k},{n}")?;
        }
        Ok(())
    }
}

/// Thin cylinder of radius `r_c` around the segment `a -> b`, flat ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryCylinder {
    pub a: DVec3,
    pub b: DVec3,
    pub r_c: f64,
}

impl QueryCylinder {
    pub fn new(a: DVec3, b: DVec3, r_c: f64) -> Result<Self> {
        if !(r_c > 0.0 && r_c.is_finite()) {
            return Err(Error::InvalidInput(format!("cylinder radius must be positive, got {r_c}")));
        }
        Ok(Self { a, b, r_c })
    }

    /// Cross-sectional area pi r_c^2 (m^2).
    pub fn cross_section_area(&self) -> f64 {
        PI * self.r_c * self.r_c
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).length()
    }

    /// Membership of a particle centered at `c` with radius `r_p` (m): its
    /// projection falls in [0, L) along the segment and its distance to the
    /// axis is below r_p + r_c. The half-open ends make consecutive
    /// segments partition the particles they gather.
    pub fn contains(&self, c: DVec3, r_p: f64) -> bool {
        let d = self.b - self.a;
        let len2 = d.length_squared();
        if len2 == 0.0 {
            return false;
        }
        let w = c - self.a;
        let s = w.dot(d);
        if s < 0.0 || s >= len2 {
            return false;
        }
        let reach = r_p + self.r_c;
        (w - d * (s / len2)).length_squared() < reach * reach
    }
}

/// Area and volume used to turn gathered cross sections into coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureNormalization {
    /// pi r_c^2 and (4/3) pi r_c^3 for every particle.
    AxisArea,
    /// pi (r_c + r_p)^2 and (4/3) pi (r_c + r_p)^3 per particle, the region
    /// in which a particle's center is actually captured. Unbiased against
    /// the bulk coefficients for any r_c.
    #[default]
    CaptureArea,
}

impl CaptureNormalization {
    fn area(self, r_c: f64, r_p: f64) -> f64 {
        let r = match self {
            Self::AxisArea => r_c,
            Self::CaptureArea => r_c + r_p,
        };
        PI * r * r
    }

    fn volume(self, r_c: f64, r_p: f64) -> f64 {
        let r = match self {
            Self::AxisArea => r_c,
            Self::CaptureArea => r_c + r_p,
        };
        4.0 / 3.0 * PI * r * r * r
    }
}

/// Scattering density at one point: none of the particles near the point,
/// or Q(theta) per band (1/(m sr)).
#[derive(Debug, Clone, PartialEq)]
pub enum LocalQ {
    PassThrough,
    Values(Vec<f64>),
}

/// A cloud, its grid and its optics, ready for local queries.
pub struct Medium {
    pub cloud: ParticleCloud,
    pub grid: UniformGrid,
    pub optics: Box<dyn OpticsProvider + Send>,
    pub capture: CaptureNormalization,
    entries: Vec<u32>,
    radius_m: Vec<f64>,
}

impl std::fmt::Debug for Medium {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Medium")
            .field("particles", &self.cloud.len())
            .field("resolution", &self.grid.resolution())
            .field("capture", &self.capture)
            .finish()
    }
}

impl Medium {
    pub fn new(
        cloud: ParticleCloud,
        optics: Box<dyn OpticsProvider + Send>,
        resolution: Resolution,
        margin_m: f64,
        capture: CaptureNormalization,
    ) -> Result<Self> {
        let grid = UniformGrid::build(&cloud, resolution, margin_m)?;
        let min_cell = grid.voxel_size().min_element();
        if !cloud.is_empty() && 100.0 * margin_m > min_cell {
            log::warn!(
                "capture radius {margin_m:.3e} m is not two orders of magnitude below the voxel side {min_cell:.3e} m"
            );
        }
        let entries = cloud.records.iter().map(|r| optics.entry(r.radius_um) as u32).collect();
        let radius_m = cloud.records.iter().map(|r| um_to_m(r.radius_um)).collect();
        Ok(Self { cloud, grid, optics, capture, entries, radius_m })
    }

    pub fn n_bands(&self) -> usize {
        self.optics.n_bands()
    }

    fn check_radius(&self, r_c: f64) -> Result<()> {
        if r_c > self.grid.margin_m() * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "capture radius {r_c} m exceeds the grid margin {} m",
                self.grid.margin_m()
            )));
        }
        Ok(())
    }

    /// Sorted indices of the particles in the cylinder.
    pub fn gather(&self, cyl: &QueryCylinder, out: &mut Vec<u32>) -> Result<()> {
        self.check_radius(cyl.r_c)?;
        out.clear();
        self.grid.traverse(cyl.a, cyl.b, |v| {
            for &i in self.grid.cell_items(v) {
                if cyl.contains(self.cloud.records[i as usize].position, self.radius_m[i as usize]) {
                    out.push(i);
                }
            }
        });
        out.sort_unstable();
        out.dedup();
        Ok(())
    }

    /// Sorted indices of particles whose center is within r_p + r_c of `x`.
    pub fn gather_sphere(&self, x: DVec3, r_c: f64, out: &mut Vec<u32>) -> Result<()> {
        self.check_radius(r_c)?;
        out.clear();
        if let Some(v) = self.grid.voxel_of(x) {
            for &i in self.grid.cell_items(v) {
                let reach = self.radius_m[i as usize] + r_c;
                if (self.cloud.records[i as usize].position - x).length_squared() < reach * reach {
                    out.push(i);
                }
            }
        }
        out.sort_unstable();
        Ok(())
    }

    /// Optical depth of the gathered particles per band, written to `tau`.
    pub fn optical_depths(&self, gathered: &[u32], r_c: f64, tau: &mut [f64]) {
        tau.iter_mut().for_each(|t| *t = 0.0);
        for &i in gathered {
            let area = self.capture.area(r_c, self.radius_m[i as usize]);
            let e = self.entries[i as usize] as usize;
            for (band, t) in tau.iter_mut().enumerate() {
                *t += um2_to_m2(self.optics.optics(e, band).cross_sections.c_t) / area;
            }
        }
    }

    /// Transmittance exp(-sum C_t / area) along the cylinder, one band.
    pub fn transmittance(&self, cyl: &QueryCylinder, band: usize) -> Result<f64> {
        let mut gathered = Vec::new();
        self.gather(cyl, &mut gathered)?;
        let mut tau = vec![0.0; self.n_bands()];
        self.optical_depths(&gathered, cyl.r_c, &mut tau);
        Ok((-tau[band]).exp())
    }

    /// Q(theta) per band from the particles gathered around a point;
    /// `cos_theta` is the cosine of the scattering angle.
    pub fn local_q_from(&self, gathered: &[u32], r_c: f64, cos_theta: f64) -> LocalQ {
        if gathered.is_empty() {
            return LocalQ::PassThrough;
        }
        let mut q = vec![0.0; self.n_bands()];
        for &i in gathered {
            let volume = self.capture.volume(r_c, self.radius_m[i as usize]);
            let e = self.entries[i as usize] as usize;
            for (band, v) in q.iter_mut().enumerate() {
                let o = self.optics.optics(e, band);
                *v += um2_to_m2(o.cross_sections.c_s) * o.phase.eval(cos_theta) / volume;
            }
        }
        LocalQ::Values(q)
    }

    /// Q(theta) at `x` for all bands.
    pub fn local_q(&self, x: DVec3, r_c: f64, theta: f64) -> Result<LocalQ> {
        let mut gathered = Vec::new();
        self.gather_sphere(x, r_c, &mut gathered)?;
        Ok(self.local_q_from(&gathered, r_c, theta.cos()))
    }
}

/// Particles in the cylinder by testing every record.
pub fn brute_force_gather(cloud: &ParticleCloud, cyl: &QueryCylinder) -> Vec<u32> {
    (0..cloud.len() as u32)
        .filter(|&i| {
            let r = &cloud.records[i as usize];
            cyl.contains(r.position, um_to_m(r.radius_um))
        })
        .collect()
}

/// Depth along the camera axis of the nearest medium point seen through a
/// pixel center, never less than z_near.
pub fn nearest_medium_depth(camera: &Camera, bounds: &Aabb) -> Result<f64> {
    let (_, _, forward) = camera.frame();
    let mut best = f64::INFINITY;
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = camera.ray(x as f64 + 0.5, y as f64 + 0.5);
            if let Some((t0, _)) = bounds.clip(ray.origin, ray.dir, 0.0, f64::INFINITY) {
                best = best.min(t0 * ray.dir.dot(forward));
            }
        }
    }
    if best.is_infinite() {
        return Err(Error::NoMediumInView);
    }
    Ok(best.max(camera.z_near))
}

/// Query-cylinder cross section k S_pix z_med / z_near (m^2), with S_pix
/// the pixel area on the near plane.
pub fn footprint_cross_section(camera: &Camera, bounds: &Aabb, k_factor: f64) -> Result<f64> {
    if !(k_factor > 0.0) {
        return Err(Error::InvalidInput(format!("footprint factor must be positive, got {k_factor}")));
    }
    camera.validate()?;
    let z_med = nearest_medium_depth(camera, bounds)?;
    let pixel = camera.pixel_pitch() * camera.z_near;
    Ok(k_factor * pixel * pixel * z_med / camera.z_near)
}

/// Cylinder radius sqrt(S / pi) for a cross-section area.
pub fn capture_radius(area: f64) -> f64 {
    (area / PI).sqrt()
}
