//! Synthetic lumbar label maps.
//!
//! Each vertebra is a union of boxes and an elliptic cylinder: body,
//! pedicles, lamina, spinous and transverse processes, and superior and
//! inferior articular processes. Articular processes of adjacent levels
//! overlap along the cranial axis, separated laterally by a small gap, the
//! way real facet joints interlock. Sizes and sagittal alignment vary per
//! seed so that a set of phantoms behaves like a small subject cohort.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util::seeded_rng;
use crate::volume::LabelMap;

/// Parameters of one phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    /// Global size factor (1.0 = nominal adult lumbar dimensions).
    pub scale: f64,
    /// Per-level size factors, L1..L5, applied on top of `scale`.
    pub level_scale: [f64; 5],
    /// Per-level posterior offsets (mm), a coarse lordosis.
    pub level_offset_y_mm: [f64; 5],
    /// Per-level lateral offsets (mm), a coarse scoliosis.
    pub level_offset_x_mm: [f64; 5],
    pub spacing_mm: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            scale: 1.0,
            level_scale: [0.94, 0.97, 1.0, 1.03, 1.06],
            level_offset_y_mm: [0.0; 5],
            level_offset_x_mm: [0.0; 5],
            spacing_mm: 1.0,
        }
    }
}

impl PhantomParams {
    /// Randomised subject: size within about ±15 % and a few mm of
    /// sagittal and lateral misalignment.
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded_rng(seed, "phantom");
        let scale = rng.random_range(0.85..1.15);
        let curve = rng.random_range(2.0..6.0);
        let lean = rng.random_range(-2.0..2.0);
        let mut p = PhantomParams {
            scale,
            ..PhantomParams::default()
        };
        for i in 0..5 {
            p.level_scale[i] *= rng.random_range(0.97..1.03);
            let u = i as f64 - 2.0;
            p.level_offset_y_mm[i] = curve * (1.0 - u * u / 4.0) + rng.random_range(-0.5..0.5);
            p.level_offset_x_mm[i] = lean * u / 2.0 + rng.random_range(-0.5..0.5);
        }
        p
    }
}

/// Axis-aligned box in vertebra-local coordinates.
struct Block {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Block {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }
}

// Nominal dimensions in mm, vertebra-local: origin at the body centre,
// +x left, +y posterior, +z cranial.
const BODY_RX: f64 = 18.0;
const BODY_RY: f64 = 13.0;
const BODY_HZ: f64 = 12.0;
const LEVEL_PITCH: f64 = 32.0;

fn blocks() -> Vec<Block> {
    let b = |lo: [f64; 3], hi: [f64; 3]| Block { lo, hi };
    let mut v = vec![
        // Lamina.
        b([-13.0, 18.0, -8.0], [13.0, 24.0, 10.0]),
        // Spinous process, sloping caudally.
        b([-3.0, 22.0, -10.0], [3.0, 34.0, 5.0]),
        b([-3.0, 33.0, -14.0], [3.0, 44.0, 0.0]),
    ];
    for s in [-1.0, 1.0] {
        let span = |a: f64, c: f64| if s > 0.0 { [a, c] } else { [-c, -a] };
        let x_ped = span(8.0, 13.0);
        let x_tp = span(13.0, 32.0);
        let x_sup = span(10.0, 15.0);
        let x_inf = span(4.5, 9.5);
        // Pedicle.
        v.push(b([x_ped[0], 8.0, -5.0], [x_ped[1], 20.0, 5.0]));
        // Transverse process.
        v.push(b([x_tp[0], 12.0, -3.0], [x_tp[1], 18.0, 3.0]));
        // Superior articular process reaching up towards the level above.
        v.push(b([x_sup[0], 18.0, 6.0], [x_sup[1], 27.0, 22.0]));
        // Inferior articular process reaching down, medial to the
        // superior process of the level below.
        v.push(b([x_inf[0], 18.0, -22.0], [x_inf[1], 26.0, -6.0]));
    }
    v
}

fn inside(local: [f64; 3], blocks: &[Block]) -> bool {
    let [x, y, z] = local;
    if z.abs() <= BODY_HZ && (x / BODY_RX).powi(2) + (y / BODY_RY).powi(2) <= 1.0 {
        return true;
    }
    blocks.iter().any(|b| b.contains(local))
}

/// Rasterises the phantom described by `params`.
pub fn lumbar_phantom_with(params: &PhantomParams) -> LabelMap {
    let h = params.spacing_mm;
    let max_scale = params.scale * params.level_scale.iter().cloned().fold(0.0, f64::max);
    let x_half = 36.0 * max_scale + 6.0;
    let y_lo = -BODY_RY * max_scale - 6.0;
    let y_hi = 46.0 * max_scale + 8.0;
    let z_half = 2.0 * LEVEL_PITCH * max_scale + 30.0 * max_scale;
    let dims = [
        (2.0 * x_half / h).ceil() as usize,
        ((y_hi - y_lo) / h).ceil() as usize,
        (2.0 * z_half / h).ceil() as usize,
    ];
    let origin = [-x_half, y_lo, -z_half];
    let mut map = LabelMap::zeros(dims, [h; 3], origin);

    // Level centres: L1 cranial, spaced by the mean scale of each pair.
    let mut centres = [[0.0f64; 3]; 5];
    let mut z = 0.0;
    for i in 0..5 {
        if i > 0 {
            let s_pair = 0.5 * (params.level_scale[i - 1] + params.level_scale[i]) * params.scale;
            z -= LEVEL_PITCH * s_pair;
        }
        centres[i] = [params.level_offset_x_mm[i], params.level_offset_y_mm[i], z];
    }
    let mid = centres[2][2];
    for c in &mut centres {
        c[2] -= mid;
    }

    let blocks = blocks();
    for zi in 0..dims[2] {
        let wz = origin[2] + (zi as f64 + 0.5) * h;
        for yi in 0..dims[1] {
            let wy = origin[1] + (yi as f64 + 0.5) * h;
            for xi in 0..dims[0] {
                let wx = origin[0] + (xi as f64 + 0.5) * h;
                for (i, c) in centres.iter().enumerate() {
                    let s = params.scale * params.level_scale[i];
                    let local = [(wx - c[0]) / s, (wy - c[1]) / s, (wz - c[2]) / s];
                    if local[2].abs() > 24.0 {
                        continue;
                    }
                    if inside(local, &blocks) {
                        map.set(xi, yi, zi, (i + 1) as u8);
                        break;
                    }
                }
            }
        }
    }
    map
}

/// Random phantom for `seed`.
pub fn lumbar_phantom(seed: u64) -> LabelMap {
    lumbar_phantom_with(&PhantomParams::random(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Level;

    #[test]
    fn all_levels_present_and_ordered() {
        let map = lumbar_phantom_with(&PhantomParams {
            spacing_mm: 2.0,
            ..PhantomParams::default()
        });
        assert_eq!(map.levels_present(), Level::ALL.to_vec());
        let mut prev = f64::INFINITY;
        for l in 1..=5u8 {
            let (mut sum, mut n) = (0.0, 0usize);
            for z in 0..map.dims[2] {
                for y in 0..map.dims[1] {
                    for x in 0..map.dims[0] {
                        if map.get(x, y, z) == l {
                            sum += z as f64;
                            n += 1;
                        }
                    }
                }
            }
            let mean = sum / n as f64;
            assert!(mean < prev, "level {l} not caudal of its predecessor");
            prev = mean;
        }
    }

    #[test]
    fn seeds_give_distinct_subjects() {
        assert_ne!(PhantomParams::random(1), PhantomParams::random(2));
        assert_eq!(PhantomParams::random(3), PhantomParams::random(3));
        let p = PhantomParams::random(4);
        assert!((0.85..1.15).contains(&p.scale));
    }
}
