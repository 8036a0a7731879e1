//! Watertight ray/triangle intersection (Woop, Benthin and Wald 2013).
//!
//! The test shears the triangle into a ray-aligned frame and evaluates the
//! three edge functions there. A ray through a shared edge or vertex
//! therefore registers on at least one incident triangle, never on none.

use crate::geometry::{Point3, Vec3};

/// Precomputed per-ray shear constants.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Point3,
    pub dir: Vec3,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl Ray {
    pub fn new(origin: Point3, dir: Vec3) -> Self {
        let kz = (0..3).max_by(|&a, &b| dir[a].abs().total_cmp(&dir[b].abs())).unwrap();
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if dir[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Ray {
            origin,
            dir,
            kx,
            ky,
            kz,
            sx: dir[kx] / dir[kz],
            sy: dir[ky] / dir[kz],
            sz: 1.0 / dir[kz],
        }
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.dir * t
    }
}

/// Ray parameter `t > t_min` of the hit, or `None`. Both faces count.
#[inline]
pub fn intersect(ray: &Ray, tri: &[Point3; 3], t_min: f64) -> Option<f64> {
    let a = tri[0] - ray.origin;
    let b = tri[1] - ray.origin;
    let c = tri[2] - ray.origin;
    let (kx, ky, kz) = (ray.kx, ray.ky, ray.kz);

    let ax = a[kx] - ray.sx * a[kz];
    let ay = a[ky] - ray.sy * a[kz];
    let bx = b[kx] - ray.sx * b[kz];
    let by = b[ky] - ray.sy * b[kz];
    let cx = c[kx] - ray.sx * c[kz];
    let cy = c[ky] - ray.sy * c[kz];

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;

    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let az = ray.sz * a[kz];
    let bz = ray.sz * b[kz];
    let cz = ray.sz * c[kz];
    let t = (u * az + v * bz + w * cz) / det;
    (t > t_min && t.is_finite()).then_some(t)
}
