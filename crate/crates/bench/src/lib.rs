//! Fixtures shared by the benchmarks in `benches/`.

use spinefill_core::marching_cubes::extract_all;
use spinefill_core::phantom::lumbar_phantom;
use spinefill_core::smoothing::{smooth_mesh, DEFAULT_ITERATIONS, DEFAULT_STRENGTH};
use spinefill_core::{Point3, PointCloud, TriMesh};

/// `n` points on a Fibonacci spiral over an ellipsoid, rotated by `phase`
/// radians about the cranial axis so two calls give distinct clouds.
pub fn spiral_cloud(n: usize, phase: f64) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let points = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64 + phase;
            Point3::new(30.0 * r * a.cos(), 20.0 * r * a.sin(), 15.0 * z)
        })
        .collect();
    PointCloud::new(points)
}

/// Smoothed, labelled per-level meshes of phantom `seed`.
pub fn phantom_meshes(seed: u64) -> Vec<TriMesh> {
    extract_all(&lumbar_phantom(seed))
        .expect("phantom has labelled vertebrae")
        .into_iter()
        .map(|(level, m)| {
            smooth_mesh(&m, DEFAULT_ITERATIONS, DEFAULT_STRENGTH)
                .expect("smoothing")
                .with_label(level)
        })
        .collect()
}
