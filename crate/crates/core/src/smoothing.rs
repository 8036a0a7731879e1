//! Gaussian-weighted Laplacian relaxation of mesh vertices.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh::TriMesh;

pub const DEFAULT_ITERATIONS: usize = 10;
pub const DEFAULT_STRENGTH: f64 = 0.5;

/// Moves every vertex a fraction `strength` towards the Gaussian-weighted
/// mean of its one-ring neighbours, `iterations` times. The kernel width is
/// the mean edge length of the input. Faces are untouched.
pub fn smooth_mesh(mesh: &TriMesh, iterations: usize, strength: f64) -> Result<TriMesh> {
    if !(strength > 0.0 && strength < 1.0) {
        return Err(Error::Argument(format!(
            "smoothing strength must be in (0,1), got {strength}"
        )));
    }
    if !mesh.is_edge_manifold() {
        return Err(Error::Topology("mesh has an edge shared by more than two faces".into()));
    }
    if iterations == 0 {
        return Ok(mesh.clone());
    }

    let neighbors = mesh.vertex_neighbors();
    let (mut edge_sum, mut edge_count) = (0.0, 0usize);
    for (i, ns) in neighbors.iter().enumerate() {
        for &j in ns {
            if (j as usize) > i {
                edge_sum += (mesh.vertices[i] - mesh.vertices[j as usize]).norm();
                edge_count += 1;
            }
        }
    }
    let sigma = if edge_count > 0 {
        edge_sum / edge_count as f64
    } else {
        1.0
    };
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    let mut current = mesh.vertices.clone();
    let mut next = current.clone();
    for _ in 0..iterations {
        for (i, ns) in neighbors.iter().enumerate() {
            if ns.is_empty() {
                next[i] = current[i];
                continue;
            }
            let p = current[i];
            let mut acc = Vec3::zeros();
            let mut wsum = 0.0;
            for &j in ns {
                let q = current[j as usize];
                let w = (-(q - p).norm_squared() * inv_two_sigma2).exp();
                acc += w * q.coords;
                wsum += w;
            }
            let target = acc / wsum;
            next[i] = p + strength * (target - p.coords);
        }
        std::mem::swap(&mut current, &mut next);
    }

    Ok(TriMesh {
        vertices: current,
        faces: mesh.faces.clone(),
        vertex_labels: mesh.vertex_labels.clone(),
    })
}

/// Largest angle (radians) between the normals of two faces sharing an edge.
pub fn max_dihedral_deviation(mesh: &TriMesh) -> f64 {
    use std::collections::HashMap;
    let mut by_edge: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    by_edge
        .values()
        .filter(|fs| fs.len() == 2)
        .map(|fs| {
            let c = mesh.face_normal(fs[0]).dot(&mesh.face_normal(fs[1])).clamp(-1.0, 1.0);
            c.acos()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Level, Point3};
    use crate::marching_cubes::marching_cubes;
    use crate::mesh::box_mesh;
    use crate::volume::LabelMap;

    #[test]
    fn zero_iterations_is_identity() {
        let m = box_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        assert_eq!(smooth_mesh(&m, 0, 0.5).unwrap(), m);
    }

    #[test]
    fn unit_cube_area_shrinks() {
        let m = box_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        let s = smooth_mesh(&m, 10, 0.5).unwrap();
        assert_eq!(s.faces, m.faces);
        assert!(s.surface_area() < m.surface_area());
        let bb = m.aabb().unwrap().inflated(1.0);
        assert!(s.vertices.iter().all(|v| bb.contains(v)));
    }

    fn staircase() -> TriMesh {
        let mut map = LabelMap::zeros([10, 8, 10], [1.0; 3], [0.0; 3]);
        for z in 1..9 {
            for y in 1..7 {
                for x in 1..9usize {
                    // Steps descend along x.
                    if z <= 9 - x.min(8) {
                        map.set(x, y, z, 1);
                    }
                }
            }
        }
        marching_cubes(&map, Level::new(1).unwrap()).unwrap()
    }

    #[test]
    fn staircase_dihedral_deviation_decreases() {
        let m = staircase();
        let s = smooth_mesh(&m, 10, 0.5).unwrap();
        assert_eq!(s.faces, m.faces);
        let before = max_dihedral_deviation(&m);
        let after = max_dihedral_deviation(&s);
        assert!(after < before, "{after} !< {before}");
        assert!(s.surface_area() <= m.surface_area());
        let bb = m.aabb().unwrap().inflated(1.0);
        assert!(s.vertices.iter().all(|v| bb.contains(v)));
    }

    #[test]
    fn non_manifold_rejected() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]);
        assert!(matches!(smooth_mesh(&m, 3, 0.5), Err(Error::Topology(_))));
    }

    #[test]
    fn strength_out_of_range() {
        let m = box_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        assert!(smooth_mesh(&m, 3, 1.0).is_err());
        assert!(smooth_mesh(&m, 3, 0.0).is_err());
    }
}
