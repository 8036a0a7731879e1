//! Per-vertebra partial inputs cut from a rendered spine cloud.
//!
//! A box is centred on the target vertebra's centre of mass. Laterally and
//! anterior-posteriorly it spans the whole cloud. Along the cranial axis it
//! reaches halfway to each neighbour plus a margin when neighbouring cloud
//! fusion is on, so a sliver of each adjacent vertebra comes along; with
//! fusion off it is limited to the vertebra's own extent and points
//! attributed to other levels are dropped.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Level, Point3, PointCloud, Vec3};
use crate::mesh::TriMesh;
use crate::spatial::KdTree;
use crate::util::seeded_rng;

pub const DEFAULT_MARGIN_MM: f64 = 5.0;
pub const DEFAULT_POINTS: usize = 2048;

/// Relative slack added to upper bounds so the extreme cloud points fall
/// inside the half-open box.
const UPPER_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub margin_mm: f64,
    pub partial_points: usize,
    pub gt_points: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            margin_mm: DEFAULT_MARGIN_MM,
            partial_points: DEFAULT_POINTS,
            gt_points: DEFAULT_POINTS,
        }
    }
}

/// Box around a vertebra. Extents are measured from `center_mm` towards
/// the lower (`-`) and upper (`+`) side of each axis; membership is
/// `center - lower <= p < center + upper` per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskBox {
    pub center_mm: Point3,
    pub lower_extent_mm: Vec3,
    pub upper_extent_mm: Vec3,
    pub level: Level,
}

impl MaskBox {
    pub fn new(center_mm: Point3, lower_extent_mm: Vec3, upper_extent_mm: Vec3, level: Level) -> Result<Self> {
        if lower_extent_mm
            .iter()
            .chain(upper_extent_mm.iter())
            .any(|&e| !(e > 0.0))
        {
            return Err(Error::Argument(format!(
                "mask box extents must be positive, got {lower_extent_mm:?} / {upper_extent_mm:?}"
            )));
        }
        Ok(MaskBox {
            center_mm,
            lower_extent_mm,
            upper_extent_mm,
            level,
        })
    }

    pub fn min(&self) -> Point3 {
        self.center_mm - self.lower_extent_mm
    }

    pub fn max(&self) -> Point3 {
        self.center_mm + self.upper_extent_mm
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a])
    }
}

fn with_slack(x: f64) -> f64 {
    x + UPPER_SLACK * x.abs().max(1.0)
}

/// Finds the mesh of `level` among `meshes`: by vertex label when present,
/// else by position (L1 first).
pub fn mesh_for_level(meshes: &[TriMesh], level: Level) -> Option<&TriMesh> {
    meshes.iter().find(|m| m.levels() == [level]).or_else(|| {
        (meshes.len() == 5 && meshes[level.index()].vertex_labels.is_none()).then(|| &meshes[level.index()])
    })
}

/// Builds the mask box for `level` over `cloud`.
pub fn mask_box(cloud: &PointCloud, meshes: &[TriMesh], level: Level, fusion: bool, margin_mm: f64) -> Result<MaskBox> {
    if !(margin_mm >= 0.0 && margin_mm.is_finite()) {
        return Err(Error::Argument("margin_mm must be finite and non-negative".into()));
    }
    let cloud_box = cloud
        .aabb()
        .ok_or_else(|| Error::EmptyInput("spine cloud has no points".into()))?;
    let own = mesh_for_level(meshes, level).ok_or_else(|| Error::Label(format!("no ground-truth mesh for {level}")))?;
    let center = own
        .volume_centroid()
        .ok_or_else(|| Error::EmptyInput(format!("ground-truth mesh for {level} is empty")))?;
    let own_box = own.aabb().expect("non-empty mesh");

    let mut lower = Vec3::zeros();
    let mut upper = Vec3::zeros();
    for a in 0..2 {
        lower[a] = (center[a] - cloud_box.min[a]).max(0.0);
        upper[a] = with_slack((cloud_box.max[a] - center[a]).max(0.0));
    }
    let own_down = center.z - own_box.min.z;
    let own_up = with_slack(own_box.max.z - center.z);
    if fusion {
        let reach = |neighbour: Option<Level>, own_extent: f64| match neighbour
            .and_then(|n| mesh_for_level(meshes, n))
            .and_then(TriMesh::volume_centroid)
        {
            Some(c) => (0.5 * (c - center).norm() + margin_mm).max(own_extent),
            None => own_extent + margin_mm,
        };
        upper.z = reach(level.cranial_neighbor(), own_up);
        lower.z = reach(level.caudal_neighbor(), own_down);
    } else {
        upper.z = own_up;
        lower.z = own_down;
    }
    // A flat cloud would give zero lateral or AP reach; keep the box proper.
    for a in 0..3 {
        lower[a] = lower[a].max(UPPER_SLACK);
        upper[a] = upper[a].max(UPPER_SLACK);
    }
    MaskBox::new(center, lower, upper, level)
}

/// Level of the mesh whose nearest vertex is closest to `p`.
struct LevelLocator {
    tree: KdTree,
    labels: Vec<u8>,
}

impl LevelLocator {
    fn new(meshes: &[TriMesh]) -> Self {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (i, m) in meshes.iter().enumerate() {
            let fallback = (i + 1) as u8;
            points.extend_from_slice(&m.vertices);
            match &m.vertex_labels {
                Some(l) => labels.extend_from_slice(l),
                None => labels.extend(std::iter::repeat_n(fallback, m.vertices.len())),
            }
        }
        LevelLocator {
            tree: KdTree::new(&points),
            labels,
        }
    }

    fn level_of(&self, p: &Point3) -> u8 {
        self.tree.nearest(p).map_or(0, |(i, _)| self.labels[i])
    }
}

/// Points of `cloud` inside the mask box of `level`. With `fusion` off,
/// points attributed to another level are removed: by the cloud's own
/// labels when it has them, else by the nearest ground-truth vertex.
pub fn mask_vertebra(
    cloud: &PointCloud,
    meshes: &[TriMesh],
    level: Level,
    fusion: bool,
    margin_mm: f64,
) -> Result<PointCloud> {
    let bx = mask_box(cloud, meshes, level, fusion, margin_mm)?;
    let locator = (!fusion && cloud.labels.is_none()).then(|| LevelLocator::new(meshes));
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if !bx.contains(p) {
            continue;
        }
        let label = match (&cloud.labels, &locator) {
            (Some(l), _) => l[i],
            (None, Some(loc)) => loc.level_of(p),
            (None, None) => 0,
        };
        if !fusion && label != level.get() {
            continue;
        }
        points.push(*p);
        labels.push(label);
    }
    if points.is_empty() {
        return Err(Error::EmptyMask(level.get()));
    }
    Ok(if cloud.labels.is_some() || locator.is_some() {
        PointCloud::with_labels(points, labels)
    } else {
        PointCloud::new(points)
    })
}

/// Farthest-point order of `points` starting at `start`, truncated to `n`.
/// Distance ties go to the smaller index.
pub fn farthest_point_order(points: &[Point3], n: usize, start: usize) -> Vec<usize> {
    let n = n.min(points.len());
    let mut order = Vec::with_capacity(n);
    if n == 0 {
        return order;
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..n {
        order.push(current);
        let c = points[current];
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, d) in dist.iter_mut().enumerate() {
            let nd = (points[i] - c).norm_squared();
            if nd < *d {
                *d = nd;
            }
            if *d > best.1 {
                best = (i, *d);
            }
        }
        current = best.0;
    }
    order
}

/// Brings `cloud` to exactly `n` points: farthest-point subsampling when it
/// has at least `n`, otherwise every point plus draws with replacement,
/// shuffled. Deterministic for a given seed.
pub fn resample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Argument("resample target must be positive".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot resample an empty cloud".into()));
    }
    let mut rng = seeded_rng(seed, "resample");
    let len = cloud.len();
    let idx = if len >= n {
        let start = rng.random_range(0..len);
        farthest_point_order(&cloud.points, n, start)
    } else {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.extend((len..n).map(|_| rng.random_range(0..len)));
        idx.shuffle(&mut rng);
        idx
    };
    let points = idx.iter().map(|&i| cloud.points[i]).collect();
    Ok(match &cloud.labels {
        Some(l) => PointCloud::with_labels(points, idx.iter().map(|&i| l[i]).collect()),
        None => PointCloud::new(points),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::box_mesh;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    fn key(p: &Point3) -> [u64; 3] {
        [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
    }

    /// Five stacked 20 mm cubes with 10 mm gaps, L1 on top.
    fn column() -> Vec<TriMesh> {
        (0..5)
            .map(|i| {
                let z = 60.0 - 30.0 * i as f64;
                box_mesh(Point3::new(-10.0, -10.0, z - 10.0), Point3::new(10.0, 10.0, z + 10.0))
                    .with_label(Level::ALL[i])
            })
            .collect()
    }

    fn grid_cloud(meshes: &[TriMesh]) -> PointCloud {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for m in meshes {
            let l = m.vertex_labels.as_ref().unwrap()[0];
            let b = m.aabb().unwrap();
            for i in 0..=10 {
                for j in 0..=10 {
                    let x = b.min.x + 2.0 * i as f64;
                    let z = b.min.z + 2.0 * j as f64;
                    pts.push(Point3::new(x, b.max.y, z));
                    labels.push(l);
                }
            }
        }
        PointCloud::with_labels(pts, labels)
    }

    #[test]
    fn fusion_off_keeps_only_target() {
        let m = column();
        let cloud = grid_cloud(&m);
        let out = mask_vertebra(&cloud, &m, Level::new(3).unwrap(), false, 5.0).unwrap();
        assert!(out.labels.unwrap().iter().all(|&l| l == 3));
        assert_eq!(out.points.len(), 121);
    }

    #[test]
    fn fusion_on_brings_neighbours() {
        let m = column();
        let cloud = grid_cloud(&m);
        // Half the 30 mm pitch plus a 6 mm margin reaches 21 mm from the
        // centre, 1 mm past the neighbours' near faces.
        let out = mask_vertebra(&cloud, &m, Level::new(3).unwrap(), true, 6.0).unwrap();
        let labels = out.labels.unwrap();
        assert!(labels.contains(&2) && labels.contains(&4));
        assert!(!labels.contains(&1) && !labels.contains(&5));
    }

    #[test]
    fn unlabelled_cloud_uses_nearest_mesh() {
        let m = column();
        let cloud = PointCloud::new(grid_cloud(&m).points);
        let out = mask_vertebra(&cloud, &m, Level::new(2).unwrap(), false, 5.0).unwrap();
        assert!(out.labels.unwrap().iter().all(|&l| l == 2));
    }

    #[test]
    fn nothing_inside_is_an_error() {
        let m = column();
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 500.0)]);
        assert!(matches!(
            mask_vertebra(&cloud, &m, Level::new(3).unwrap(), true, 5.0),
            Err(Error::EmptyMask(3))
        ));
    }

    #[test]
    fn box_is_half_open() {
        let b = MaskBox::new(
            Point3::origin(),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
            Level::new(1).unwrap(),
        )
        .unwrap();
        assert!(b.contains(&Point3::new(-1.0, -1.0, -1.0)));
        assert!(!b.contains(&Point3::new(1.0, 0.0, 0.0)));
        assert!(MaskBox::new(Point3::origin(), Vec3::zeros(), Vec3::x(), Level::new(1).unwrap()).is_err());
    }

    #[test]
    fn resample_contracts() {
        let mut rng = seeded_rng(1, "t");
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let cloud = PointCloud::new(pts);
        let set: HashSet<_> = cloud.points.iter().map(key).collect();
        let out = resample(&cloud, 2048, 3).unwrap();
        assert_eq!(out.len(), 2048);
        assert!(out.points.iter().all(|p| set.contains(&key(p))));
        assert_eq!(out, resample(&cloud, 2048, 3).unwrap());

        let small = PointCloud::new(cloud.points[..100].to_vec());
        let up = resample(&small, 2048, 3).unwrap();
        assert_eq!(up.len(), 2048);
        let support: HashSet<_> = up.points.iter().map(key).collect();
        let input: HashSet<_> = small.points.iter().map(key).collect();
        assert_eq!(support, input);

        assert!(matches!(resample(&small, 0, 1), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn same_size_resample_is_permutation(n in 1usize..60, seed in 0u64..1000) {
            let mut rng = seeded_rng(seed, "p");
            let pts: Vec<Point3> = (0..n).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
            let cloud = PointCloud::new(pts);
            let out = resample(&cloud, n, seed).unwrap();
            let mut a: Vec<_> = cloud.points.iter().map(key).collect();
            let mut b: Vec<_> = out.points.iter().map(key).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn fusion_off_within_fusion_on(level in 1u8..=5, margin in 0.0f64..12.0) {
            let m = column();
            let cloud = grid_cloud(&m);
            let lvl = Level::new(level).unwrap();
            let off = mask_vertebra(&cloud, &m, lvl, false, margin).unwrap();
            let on = mask_vertebra(&cloud, &m, lvl, true, margin).unwrap();
            let on_set: HashSet<_> = on.points.iter().map(key).collect();
            prop_assert!(off.points.iter().all(|p| on_set.contains(&key(p))));
            let bx = mask_box(&cloud, &m, lvl, true, margin).unwrap();
            prop_assert!(on.points.iter().all(|p| bx.contains(p)));
        }
    }
}
