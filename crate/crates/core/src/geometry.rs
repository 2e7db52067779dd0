//! Small geometric primitives shared by the medium and the renderer.
//! Scene units are meters.

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Micrometres to scene units (meters). Radii and cross sections are kept in
/// µm and µm² everywhere else; these two functions are the only crossing.
pub fn um_to_m(x: f64) -> f64 {
    x * 1e-6
}

/// Square micrometres to square meters.
pub fn um2_to_m2(a: f64) -> f64 {
    a * 1e-12
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub fn new(min: DVec3, max: DVec3) -> Self {
        Self { min, max }
    }

    /// Error unless every extent is positive and finite.
    pub fn validate(&self) -> Result<()> {
        let e = self.max - self.min;
        if !(e.is_finite() && e.min_element() > 0.0) {
            return Err(Error::InvalidInput(format!("degenerate bounds {:?} .. {:?}", self.min, self.max)));
        }
        Ok(())
    }

    pub fn extent(&self) -> DVec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn center(&self) -> DVec3 {
        0.5 * (self.min + self.max)
    }

    /// Half-open containment, min <= p < max. Partitions of a box into
    /// sub-boxes therefore count every point once.
    pub fn contains(&self, p: DVec3) -> bool {
        p.cmpge(self.min).all() && p.cmplt(self.max).all()
    }

    pub fn grow(&self, margin: f64) -> Self {
        Self { min: self.min - DVec3::splat(margin), max: self.max + DVec3::splat(margin) }
    }

    /// Parametric interval [t0, t1] of `origin + t dir` inside the closed box,
    /// intersected with [t_min, t_max].
    pub fn clip(&self, origin: DVec3, dir: DVec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (t_min, t_max);
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut near, mut far) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Ray with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    pub dir: DVec3,
}

impl Ray {
    pub fn new(origin: DVec3, dir: DVec3) -> Self {
        Self { origin, dir: dir.normalize() }
    }

    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + t * self.dir
    }
}

/// Parallelogram `corner + u edge_u + v edge_v`, u, v in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub corner: DVec3,
    pub edge_u: DVec3,
    pub edge_v: DVec3,
}

impl Quad {
    pub fn new(corner: DVec3, edge_u: DVec3, edge_v: DVec3) -> Self {
        Self { corner, edge_u, edge_v }
    }

    /// Unit normal along edge_u x edge_v.
    pub fn normal(&self) -> DVec3 {
        self.edge_u.cross(self.edge_v).normalize()
    }

    pub fn area(&self) -> f64 {
        self.edge_u.cross(self.edge_v).length()
    }

    pub fn point(&self, u: f64, v: f64) -> DVec3 {
        self.corner + u * self.edge_u + v * self.edge_v
    }

    /// Ray parameter of the hit in (t_min, t_max), either side.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<f64> {
        let n = self.edge_u.cross(self.edge_v);
        let denom = n.dot(ray.dir);
        if denom.abs() < 1e-300 {
            return None;
        }
        let t = n.dot(self.corner - ray.origin) / denom;
        if !(t > t_min && t < t_max) {
            return None;
        }
        let d = ray.at(t) - self.corner;
        let nn = n.length_squared();
        let u = d.cross(self.edge_v).dot(n) / nn;
        let v = self.edge_u.cross(d).dot(n) / nn;
        ((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)).then_some(t)
    }
}

fn default_z_near() -> f64 {
    1.0
}

/// Pinhole camera. `fov_y_deg` is the full vertical field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: DVec3,
    pub look_at: DVec3,
    pub up: DVec3,
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_z_near")]
    pub z_near: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let forward = self.look_at - self.position;
        if !(self.width > 0 && self.height > 0) {
            return Err(Error::InvalidInput("image resolution must be positive".into()));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0 && self.z_near > 0.0) {
            return Err(Error::InvalidInput("need 0 < fov < 180 deg and z_near > 0".into()));
        }
        if forward.length_squared() == 0.0 || forward.cross(self.up).length_squared() == 0.0 {
            return Err(Error::InvalidInput("camera look_at and up must span a plane".into()));
        }
        Ok(())
    }

    /// (right, up, forward) unit vectors.
    pub fn frame(&self) -> (DVec3, DVec3, DVec3) {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(self.up).normalize();
        (right, right.cross(forward), forward)
    }

    /// Width of one pixel on the plane at unit depth.
    pub fn pixel_pitch(&self) -> f64 {
        2.0 * (0.5 * self.fov_y_deg.to_radians()).tan() / self.height as f64
    }

    /// Ray through image position (x, y) in pixels, y down.
    pub fn ray(&self, x: f64, y: f64) -> Ray {
        let (right, up, forward) = self.frame();
        let pitch = self.pixel_pitch();
        let sx = (x - 0.5 * self.width as f64) * pitch;
        let sy = (0.5 * self.height as f64 - y) * pitch;
        Ray::new(self.position, forward + sx * right + sy * up)
    }
}

/// Orthonormal basis with `n` as the third axis.
pub fn basis(n: DVec3) -> (DVec3, DVec3) {
    let sign = 1.0f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (DVec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x), DVec3::new(b, sign + n.y * n.y * a, -n.y))
}
