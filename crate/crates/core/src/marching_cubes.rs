//! Marching cubes on a binary label mask.
//!
//! The indicator field is 1 inside the label and 0 elsewhere, thresholded at
//! 0.5, so every surface vertex sits at the midpoint of a lattice edge whose
//! endpoints disagree. Instead of the classic 256-entry triangle table the
//! case table is derived from per-face rules: each cube face contributes
//! oriented segments that cut its inside corners off from the outside ones,
//! and ambiguous faces (diagonal inside corners) always keep the inside
//! corners separate. Because a face's segments depend only on that face's
//! four corners, neighbouring cubes agree on them and the mesh is closed by
//! construction. The segments of one cube chain into loops; loops longer
//! than a triangle are fanned around their centroid.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{Level, Point3, Vec3};
use crate::mesh::TriMesh;
use crate::volume::LabelMap;

/// Corner `c` of the unit cube has offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as (lower corner, upper corner, axis).
const EDGES: [(usize, usize, usize); 12] = [
    (0, 1, 0),
    (2, 3, 0),
    (4, 5, 0),
    (6, 7, 0),
    (0, 2, 1),
    (1, 3, 1),
    (4, 6, 1),
    (5, 7, 1),
    (0, 4, 2),
    (1, 5, 2),
    (2, 6, 2),
    (3, 7, 2),
];

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    EDGES
        .iter()
        .position(|&(x, y, _)| x == lo && y == hi)
        .expect("corners are not adjacent")
}

fn corner_pos(c: usize) -> Vec3 {
    let o = corner_offset(c);
    Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64)
}

fn edge_mid(e: usize) -> Vec3 {
    let (a, b, _) = EDGES[e];
    (corner_pos(a) + corner_pos(b)) * 0.5
}

/// Loops of edge ids for one of the 256 inside/outside corner configurations.
type CaseTable = Vec<Vec<Vec<u8>>>;

fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

fn build_case(config: usize) -> Vec<Vec<u8>> {
    let inside = |c: usize| config & (1 << c) != 0;
    let mut next: [Option<usize>; 12] = [None; 12];

    for axis in 0..3 {
        let u = (axis + 1) % 3;
        let v = (axis + 2) % 3;
        for side in 0..2 {
            let corner = |bu: usize, bv: usize| (side << axis) | (bu << u) | (bv << v);
            let cycle = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            let mut normal = Vec3::zeros();
            normal[axis] = if side == 1 { 1.0 } else { -1.0 };

            let face_edges: Vec<usize> = (0..4).map(|k| edge_between(cycle[k], cycle[(k + 1) % 4])).collect();
            let active: Vec<usize> = (0..4)
                .filter(|&k| inside(cycle[k]) != inside(cycle[(k + 1) % 4]))
                .collect();

            let segments: Vec<(usize, usize)> = match active.len() {
                0 => Vec::new(),
                2 => vec![(face_edges[active[0]], face_edges[active[1]])],
                4 => (0..4)
                    .filter(|&k| inside(cycle[k]))
                    .map(|k| (face_edges[(k + 3) % 4], face_edges[k]))
                    .collect(),
                _ => unreachable!("a face has an even number of sign changes"),
            };

            for (a, b) in segments {
                let mid = (edge_mid(a) + edge_mid(b)) * 0.5;
                let p_in = cycle
                    .iter()
                    .filter(|&&c| inside(c))
                    .map(|&c| corner_pos(c))
                    .min_by(|p, q| (p - mid).norm_squared().total_cmp(&(q - mid).norm_squared()))
                    .expect("active face has an inside corner");
                let d = edge_mid(b) - edge_mid(a);
                let outward = normal.cross(&d);
                let (from, to) = if outward.dot(&(p_in - mid)) > 0.0 {
                    (b, a)
                } else {
                    (a, b)
                };
                debug_assert!(next[from].is_none(), "edge {from} starts two segments");
                next[from] = Some(to);
            }
        }
    }

    let mut loops = Vec::new();
    let mut visited = [false; 12];
    for start in 0..12 {
        if visited[start] || next[start].is_none() {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        loop {
            visited[e] = true;
            lp.push(e as u8);
            e = next[e].expect("segment chain is closed");
            if e == start {
                break;
            }
        }
        loops.push(lp);
    }
    loops
}

/// Extracts the closed surface of `{voxel == level}` as a labeled mesh in
/// world millimetres. The volume is treated as surrounded by background.
pub fn marching_cubes(map: &LabelMap, level: Level) -> Result<TriMesh> {
    let label = level.get();
    let [nx, ny, nz] = map.dims;

    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if map.get(x, y, z) == label {
                    any = true;
                    for (a, v) in [x, y, z].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v);
                    }
                }
            }
        }
    }
    if !any {
        return Err(Error::EmptyRegion(label));
    }

    // Lattice coordinates are shifted by +1 so that index 0 is padding.
    let inside = |p: [usize; 3]| -> bool {
        if p.iter().zip(map.dims.iter()).any(|(&c, &d)| c == 0 || c > d) {
            return false;
        }
        map.get(p[0] - 1, p[1] - 1, p[2] - 1) == label
    };

    let table = case_table();
    let mut vertex_ids: HashMap<([usize; 3], usize), u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();

    // Cubes whose lower corner spans [lo, hi + 1] in padded lattice coordinates.
    for cz in lo[2]..=hi[2] + 1 {
        for cy in lo[1]..=hi[1] + 1 {
            for cx in lo[0]..=hi[0] + 1 {
                let base = [cx, cy, cz];
                let mut config = 0usize;
                for c in 0..8 {
                    let o = corner_offset(c);
                    if inside([base[0] + o[0], base[1] + o[1], base[2] + o[2]]) {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                for lp in &table[config] {
                    let ids: Vec<u32> = lp
                        .iter()
                        .map(|&e| {
                            let (a, _, axis) = EDGES[e as usize];
                            let o = corner_offset(a);
                            let key = ([base[0] + o[0], base[1] + o[1], base[2] + o[2]], axis);
                            *vertex_ids.entry(key).or_insert_with(|| {
                                let mut idx = [key.0[0] as f64 - 1.0, key.0[1] as f64 - 1.0, key.0[2] as f64 - 1.0];
                                idx[axis] += 0.5;
                                vertices.push(map.world(idx));
                                vertices.len() as u32 - 1
                            })
                        })
                        .collect();
                    if ids.len() == 3 {
                        faces.push([ids[0], ids[1], ids[2]]);
                        continue;
                    }
                    // A centre vertex keeps every triangle edge either on a
                    // shared cube face or private to this cube.
                    let centre = ids
                        .iter()
                        .fold(Vec3::zeros(), |acc, &i| acc + vertices[i as usize].coords)
                        / ids.len() as f64;
                    vertices.push(Point3::from(centre));
                    let c = vertices.len() as u32 - 1;
                    for k in 0..ids.len() {
                        faces.push([c, ids[k], ids[(k + 1) % ids.len()]]);
                    }
                }
            }
        }
    }

    let n = vertices.len();
    Ok(TriMesh {
        vertices,
        faces,
        vertex_labels: Some(vec![label; n]),
    })
}

/// Extracts every present level; returns `(level, mesh)` in L1..L5 order.
pub fn extract_all(map: &LabelMap) -> Result<Vec<(Level, TriMesh)>> {
    map.levels_present()
        .into_iter()
        .map(|l| marching_cubes(map, l).map(|m| (l, m)))
        .collect()
}

/// World position helper used by tests: centre of voxel `(x, y, z)`.
pub fn voxel_center(map: &LabelMap, x: usize, y: usize, z: usize) -> Point3 {
    map.world([x as f64, y as f64, z as f64])
}
