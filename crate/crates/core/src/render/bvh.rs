//! Bounding-volume hierarchy over a triangle soup tagged with its source
//! mesh.

use crate::geometry::{Aabb, Point3, Vec3};
use crate::mesh::TriMesh;

use super::intersect::{intersect, Ray};

const LEAF_SIZE: usize = 4;
/// Relative padding on node boxes so rounding in the slab test never culls
/// a triangle the exact intersection test would accept.
const BOX_PAD: f64 = 1e-9;

/// Closest hit. Ordering is by `t`, then by source mesh, then by face index,
/// so the result is independent of traversal order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub source: u8,
    pub face: u32,
}

impl Hit {
    fn better_than(&self, other: &Hit) -> bool {
        (self.t, self.source, self.face) < (other.t, other.source, other.face)
    }
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: `count > 0`, triangles `first..first + count` of `order`.
    /// Interior: children at `first` and `first + 1`.
    first: u32,
    count: u32,
}

/// Immutable scene: several meshes merged into one hierarchy.
#[derive(Clone, Debug)]
pub struct Scene {
    tris: Vec<[Point3; 3]>,
    tags: Vec<(u8, u32)>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

fn tri_bounds(t: &[Point3; 3]) -> Aabb {
    let mut b = Aabb::empty();
    for p in t {
        b.grow(p);
    }
    b
}

impl Scene {
    /// Builds a scene from `(source id, mesh)` pairs.
    pub fn new(meshes: &[(u8, &TriMesh)]) -> Self {
        let mut tris = Vec::new();
        let mut tags = Vec::new();
        for &(source, mesh) in meshes {
            for fi in 0..mesh.faces.len() {
                tris.push(mesh.triangle(fi));
                tags.push((source, fi as u32));
            }
        }
        let mut scene = Scene {
            order: (0..tris.len() as u32).collect(),
            tris,
            tags,
            nodes: Vec::new(),
        };
        if !scene.tris.is_empty() {
            let centroids: Vec<Point3> = scene
                .tris
                .iter()
                .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
                .collect();
            scene.nodes.push(Node {
                bounds: Aabb::empty(),
                first: 0,
                count: 0,
            });
            scene.build(0, 0, scene.tris.len(), &centroids);
        }
        scene
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| n.bounds)
    }

    fn build(&mut self, node: usize, start: usize, end: usize, centroids: &[Point3]) {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..end] {
            bounds = bounds.merge(&tri_bounds(&self.tris[i as usize]));
            cbounds.grow(&centroids[i as usize]);
        }
        let pad = BOX_PAD * (1.0 + bounds.extent().norm() + bounds.max.coords.abs().max());
        self.nodes[node].bounds = bounds.inflated(pad);

        let ext = cbounds.extent();
        let axis = (0..3).max_by(|&a, &b| ext[a].total_cmp(&ext[b])).unwrap();
        if end - start <= LEAF_SIZE || ext[axis] == 0.0 {
            self.nodes[node].first = start as u32;
            self.nodes[node].count = (end - start) as u32;
            return;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.nodes.len();
        let blank = Node {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        };
        self.nodes.push(blank.clone());
        self.nodes.push(blank);
        self.nodes[node].first = left as u32;
        self.nodes[node].count = 0;
        self.build(left, start, mid, centroids);
        self.build(left + 1, mid, end, centroids);
    }

    /// Entry distance of the ray into `b`, if it enters before `t_max`.
    fn slab(ray: &Ray, inv: &Vec3, b: &Aabb, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            if ray.dir[a] == 0.0 {
                if ray.origin[a] < b.min[a] || ray.origin[a] > b.max[a] {
                    return None;
                }
                continue;
            }
            let mut ta = (b.min[a] - ray.origin[a]) * inv[a];
            let mut tb = (b.max[a] - ray.origin[a]) * inv[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    /// Closest hit with `t > 0`.
    pub fn closest_hit(&self, ray: &Ray) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
        let mut best: Option<Hit> = None;
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(f64::INFINITY, |h| h.t * (1.0 + 1e-12) + 1e-12);
            if Self::slab(ray, &inv, &node.bounds, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.first as usize;
                for &ti in &self.order[s..s + node.count as usize] {
                    if let Some(t) = intersect(ray, &self.tris[ti as usize], 0.0) {
                        let (source, face) = self.tags[ti as usize];
                        let hit = Hit { t, source, face };
                        if best.is_none_or(|b| hit.better_than(&b)) {
                            best = Some(hit);
                        }
                    }
                }
            } else {
                let (l, r) = (node.first as usize, node.first as usize + 1);
                let tl = Self::slab(ray, &inv, &self.nodes[l].bounds, limit);
                let tr = Self::slab(ray, &inv, &self.nodes[r].bounds, limit);
                match (tl, tr) {
                    (Some(a), Some(b)) => {
                        // Push the farther child first.
                        if a <= b {
                            stack.push(r);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(r);
                        }
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// Brute-force closest hit, for cross-checking the hierarchy.
    pub fn closest_hit_brute(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (ti, tri) in self.tris.iter().enumerate() {
            if let Some(t) = intersect(ray, tri, 0.0) {
                let (source, face) = self.tags[ti];
                let hit = Hit { t, source, face };
                if best.is_none_or(|b| hit.better_than(&b)) {
                    best = Some(hit);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bvh_agrees_with_brute_force() {
        let a = icosphere(Point3::new(0.0, 0.0, 0.0), 3.0, 3);
        let b = icosphere(Point3::new(2.0, -1.0, 0.5), 2.0, 2);
        let scene = Scene::new(&[(0, &a), (1, &b)]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let o = Point3::new(rng.random_range(-5.0..5.0), 10.0, rng.random_range(-5.0..5.0));
            let d = Vec3::new(rng.random_range(-0.3..0.3), -1.0, rng.random_range(-0.3..0.3));
            let ray = Ray::new(o, d);
            assert_eq!(scene.closest_hit(&ray), scene.closest_hit_brute(&ray));
        }
    }

    #[test]
    fn coincident_copies_prefer_lower_source() {
        let a = icosphere(Point3::origin(), 1.0, 2);
        let scene = Scene::new(&[(1, &a), (0, &a)]);
        let ray = Ray::new(Point3::new(0.1, 5.0, 0.05), Vec3::new(0.0, -1.0, 0.0));
        assert_eq!(scene.closest_hit(&ray).unwrap().source, 0);
    }

    #[test]
    fn empty_scene() {
        let scene = Scene::new(&[]);
        let ray = Ray::new(Point3::origin(), Vec3::new(0.0, -1.0, 0.0));
        assert!(scene.closest_hit(&ray).is_none());
    }
}
