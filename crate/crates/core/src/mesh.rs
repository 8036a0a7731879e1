//! Indexed triangle meshes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Level, Point3, Rigid, Vec3};

/// Minimum face area (mm²) below which a face counts as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Indexed triangle surface in mm, with an optional per-vertex vertebra label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_labels: Option<Vec<u8>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Self {
        TriMesh {
            vertices,
            faces,
            vertex_labels: None,
        }
    }

    pub fn with_label(mut self, level: Level) -> Self {
        self.vertex_labels = Some(vec![level.get(); self.vertices.len()]);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Checks index bounds, degenerate faces and label arity.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::Topology(format!("face {fi} references a vertex out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {fi} repeats a vertex index")));
            }
            if self.face_area(fi) <= MIN_FACE_AREA {
                return Err(Error::Topology(format!("face {fi} has zero area")));
            }
        }
        if let Some(labels) = &self.vertex_labels {
            if labels.len() != n {
                return Err(Error::Consistency(format!(
                    "{} vertex labels for {} vertices",
                    labels.len(),
                    n
                )));
            }
            if labels.iter().any(|&l| l > 5) {
                return Err(Error::Label("vertex label outside 0..=5".into()));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn triangle(&self, fi: usize) -> [Point3; 3] {
        let f = self.faces[fi];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    /// Un-normalised face normal (twice the area, right-hand winding).
    #[inline]
    pub fn face_cross(&self, fi: usize) -> Vec3 {
        let [a, b, c] = self.triangle(fi);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, fi: usize) -> Vec3 {
        self.face_cross(fi).normalize()
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        0.5 * self.face_cross(fi).norm()
    }

    /// Label of a face, taken from its first vertex; 0 when unlabeled.
    pub fn face_label(&self, fi: usize) -> u8 {
        self.vertex_labels.as_ref().map_or(0, |l| l[self.faces[fi][0] as usize])
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|i| self.face_area(i)).sum()
    }

    /// Signed enclosed volume by the divergence theorem; positive for
    /// outward-wound closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let a = self.vertices[f[0] as usize].coords;
                let b = self.vertices[f[1] as usize].coords;
                let c = self.vertices[f[2] as usize].coords;
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Option<Point3> {
        let mut acc = Vec3::zeros();
        let mut area = 0.0;
        for fi in 0..self.faces.len() {
            let [a, b, c] = self.triangle(fi);
            let w = self.face_area(fi);
            acc += w * (a.coords + b.coords + c.coords) / 3.0;
            area += w;
        }
        (area > 0.0).then(|| Point3::from(acc / area))
    }

    /// Centroid of the enclosed solid (uniform density). Falls back to the
    /// surface centroid when the enclosed volume vanishes.
    pub fn volume_centroid(&self) -> Option<Point3> {
        let mut acc = Vec3::zeros();
        let mut vol = 0.0;
        for f in &self.faces {
            let a = self.vertices[f[0] as usize].coords;
            let b = self.vertices[f[1] as usize].coords;
            let c = self.vertices[f[2] as usize].coords;
            let v = a.dot(&b.cross(&c)) / 6.0;
            acc += v * (a + b + c) / 4.0;
            vol += v;
        }
        if vol.abs() > 1e-9 {
            Some(Point3::from(acc / vol))
        } else {
            self.surface_centroid()
        }
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn transformed(&self, t: &Rigid) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|p| t * p).collect(),
            faces: self.faces.clone(),
            vertex_labels: self.vertex_labels.clone(),
        }
    }

    pub fn translated(&self, d: Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|p| p + d).collect(),
            faces: self.faces.clone(),
            vertex_labels: self.vertex_labels.clone(),
        }
    }

    /// Undirected edge -> number of incident faces.
    pub fn edge_face_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut counts = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge borders exactly two faces, traversed once in each
    /// direction (closed and consistently wound).
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// No edge is shared by more than two faces.
    pub fn is_edge_manifold(&self) -> bool {
        self.edge_face_counts().values().all(|&n| n <= 2)
    }

    /// V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_face_counts().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Vertex adjacency lists (sorted, deduplicated).
    pub fn vertex_neighbors(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Concatenates meshes, offsetting face indices. Labels are kept when
    /// every input carries them; otherwise unlabeled vertices get 0.
    pub fn merge<'a>(meshes: impl IntoIterator<Item = &'a TriMesh>) -> TriMesh {
        let mut out = TriMesh::default();
        let mut labels = Vec::new();
        let mut any_labels = false;
        for m in meshes {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.faces
                .extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
            match &m.vertex_labels {
                Some(l) => {
                    any_labels = true;
                    labels.extend_from_slice(l);
                }
                None => labels.extend(std::iter::repeat_n(0, m.vertices.len())),
            }
        }
        if any_labels {
            out.vertex_labels = Some(labels);
        }
        out
    }

    /// Sub-mesh of faces carrying `level`, with vertices re-indexed.
    pub fn extract_level(&self, level: Level) -> TriMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut out = TriMesh::default();
        let mut labels = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if self.face_label(fi) != level.get() {
                continue;
            }
            let mut nf = [0u32; 3];
            for (k, &vi) in f.iter().enumerate() {
                if remap[vi as usize] == u32::MAX {
                    remap[vi as usize] = out.vertices.len() as u32;
                    out.vertices.push(self.vertices[vi as usize]);
                    labels.push(level.get());
                }
                nf[k] = remap[vi as usize];
            }
            out.faces.push(nf);
        }
        out.vertex_labels = Some(labels);
        out
    }

    /// Distinct nonzero vertex labels, ascending.
    pub fn levels(&self) -> Vec<Level> {
        let mut seen = [false; 6];
        if let Some(labels) = &self.vertex_labels {
            for &l in labels {
                if (l as usize) < seen.len() {
                    seen[l as usize] = true;
                }
            }
        }
        Level::ALL.into_iter().filter(|l| seen[l.get() as usize]).collect()
    }
}

/// Axis-aligned box as a closed, outward-wound 12-triangle mesh.
pub fn box_mesh(min: Point3, max: Point3) -> TriMesh {
    let v = |x: bool, y: bool, z: bool| {
        Point3::new(
            if x { max.x } else { min.x },
            if y { max.y } else { min.y },
            if z { max.z } else { min.z },
        )
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [3, 6, 2],
        [3, 7, 6],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriMesh::new(vertices, faces)
}

/// Icosphere of the given radius: `subdivisions` rounds of 4-way splitting
/// of an icosahedron, vertices projected to the sphere.
pub fn icosphere(center: Point3, radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriMesh::new(verts.into_iter().map(|v| center + v * radius).collect(), faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_is_closed_and_outward() {
        let m = box_mesh(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0));
        m.validate().unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        assert!((m.signed_volume() - 6.0).abs() < 1e-12);
        assert!((m.surface_area() - 22.0).abs() < 1e-12);
        let c = m.volume_centroid().unwrap();
        assert!((c - Point3::new(0.5, 1.0, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let m = icosphere(Point3::origin(), 2.0, 3);
        m.validate().unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        let v = m.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 8.0;
        assert!(v > 0.0 && (v - exact).abs() / exact < 0.03);
    }

    #[test]
    fn degenerate_face_rejected() {
        let m = TriMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        );
        assert!(matches!(m.validate(), Err(Error::Topology(_))));
        let m = TriMesh::new(vec![Point3::origin()], vec![[0, 0, 1]]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn merge_and_extract_level() {
        let a = box_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0)).with_label(Level::new(2).unwrap());
        let b = box_mesh(Point3::new(0.0, 0.0, 5.0), Point3::new(1.0, 1.0, 6.0)).with_label(Level::new(3).unwrap());
        let merged = TriMesh::merge([&a, &b]);
        assert_eq!(merged.faces.len(), 24);
        assert_eq!(merged.levels().len(), 2);
        let back = merged.extract_level(Level::new(3).unwrap());
        assert_eq!(back.faces.len(), b.faces.len());
        assert!((back.signed_volume() - b.signed_volume()).abs() < 1e-12);
        assert!(back.is_watertight());
    }
}
