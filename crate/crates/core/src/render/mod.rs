//! Ultrasound-consistent partial views by ray casting.
//!
//! Rays form an orthographic grid travelling anteriorly (`-posterior` of the
//! camera frame) from the camera plane. A ray keeps its first hit only, which
//! models acoustic shadowing; with physics enabled the hit is also dropped
//! when the surface normal turns away from the probe by more than
//! `incidence_max_deg`. Scattering is modelled by casting against the spine
//! together with a copy shifted across the beam and keeping only first hits
//! that still land on the original.

pub mod bvh;
pub mod intersect;

use std::collections::BTreeMap;

use nalgebra::UnitQuaternion;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Level, Point3, PointCloud, Rigid, Vec3};
use crate::mesh::TriMesh;
use crate::util::config_hash;

use bvh::Scene;
use intersect::Ray;

/// Source id of the original mesh in a scattering scene.
const ORIGINAL: u8 = 0;
const SHIFTED: u8 = 1;

/// A (lateral, anterior-posterior) displacement in mm, serialised as a
/// two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ShiftPair {
    pub lateral_mm: f64,
    pub ap_mm: f64,
}

impl ShiftPair {
    pub const fn new(lateral_mm: f64, ap_mm: f64) -> Self {
        ShiftPair { lateral_mm, ap_mm }
    }

    pub const ZERO: ShiftPair = ShiftPair::new(0.0, 0.0);

    /// File-name friendly tag, e.g. `lat-7_ap-5`.
    pub fn tag(&self) -> String {
        format!("lat{}_ap{}", self.lateral_mm, self.ap_mm)
    }
}

impl From<[f64; 2]> for ShiftPair {
    fn from(v: [f64; 2]) -> Self {
        ShiftPair::new(v[0], v[1])
    }
}

impl From<ShiftPair> for [f64; 2] {
    fn from(s: ShiftPair) -> Self {
        [s.lateral_mm, s.ap_mm]
    }
}

pub const LATERAL_SHIFT_MAGNITUDES_MM: [f64; 3] = [5.0, 7.0, 10.0];
pub const AP_SHIFTS_MM: [f64; 3] = [-1.0, -5.0, -10.0];

/// The nine default scattering shifts: every lateral magnitude paired with
/// every anterior-posterior value, lateral sign alternating so both sides
/// are covered.
pub fn default_shift_pairs() -> Vec<ShiftPair> {
    let mut out = Vec::with_capacity(9);
    let mut k = 0;
    for &lat in &LATERAL_SHIFT_MAGNITUDES_MM {
        for &ap in &AP_SHIFTS_MM {
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            out.push(ShiftPair::new(sign * lat, ap));
            k += 1;
        }
    }
    out
}

fn is_allowed_shift(s: &ShiftPair) -> bool {
    LATERAL_SHIFT_MAGNITUDES_MM.contains(&s.lateral_mm.abs()) && AP_SHIFTS_MM.contains(&s.ap_mm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub camera_standoff_mm: f64,
    pub ray_grid_spacing_mm: f64,
    pub incidence_max_deg: f64,
    pub physics_enabled: bool,
    pub shift_pairs_mm: Vec<ShiftPair>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            camera_standoff_mm: 100.0,
            ray_grid_spacing_mm: 0.5,
            incidence_max_deg: 85.0,
            physics_enabled: true,
            shift_pairs_mm: default_shift_pairs(),
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.incidence_max_deg > 0.0 && self.incidence_max_deg <= 90.0) {
            return Err(Error::Argument(format!(
                "incidence_max_deg must be in (0, 90], got {}",
                self.incidence_max_deg
            )));
        }
        if !(self.ray_grid_spacing_mm > 0.0 && self.ray_grid_spacing_mm.is_finite()) {
            return Err(Error::Argument("ray_grid_spacing_mm must be positive".into()));
        }
        if !(self.camera_standoff_mm > 0.0 && self.camera_standoff_mm.is_finite()) {
            return Err(Error::Argument("camera_standoff_mm must be positive".into()));
        }
        if let Some(bad) = self.shift_pairs_mm.iter().find(|s| !is_allowed_shift(s)) {
            return Err(Error::Argument(format!(
                "shift {:?} is not in {{±5, ±7, ±10}} x {{-1, -5, -10}}",
                bad
            )));
        }
        Ok(())
    }

    fn cos_threshold(&self) -> f64 {
        self.incidence_max_deg.to_radians().cos()
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Virtual probe: a position plus an orientation whose local axes are
/// (lateral, posterior, cranial). Rays travel along `-posterior`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub origin: Point3,
    pub orientation: UnitQuaternion<f64>,
}

impl Camera {
    pub fn at(origin: Point3) -> Self {
        Camera {
            origin,
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn lateral(&self) -> Vec3 {
        self.orientation * Vec3::x()
    }

    pub fn posterior(&self) -> Vec3 {
        self.orientation * Vec3::y()
    }

    pub fn cranial(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn ray_direction(&self) -> Vec3 {
        -self.posterior()
    }

    pub fn transformed(&self, t: &Rigid) -> Camera {
        Camera {
            origin: t * self.origin,
            orientation: t.rotation * self.orientation,
        }
    }
}

/// Where a partial view came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub deformation_id: String,
    pub shift_mm: ShiftPair,
    pub config_hash: String,
}

/// Retained first hits, in canonical grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialCloud {
    pub points: Vec<Point3>,
    /// Vertebra level of the hit face (0 when the mesh is unlabeled).
    pub level_hint: Vec<u8>,
    /// Grid index `(cranial, lateral)` of the ray that produced each point.
    pub grid_index: Vec<(i64, i64)>,
    pub provenance: Provenance,
}

impl PartialCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_point_cloud(&self) -> PointCloud {
        PointCloud::with_labels(self.points.clone(), self.level_hint.clone())
    }
}

/// Camera above the spinous process of `level`: the apex is the labelled
/// vertex with the largest posterior coordinate (ties: smallest |lateral|,
/// then smallest cranial), and the camera sits `standoff_mm` behind it.
pub fn place_camera(spine: &TriMesh, level: Level, standoff_mm: f64) -> Result<Camera> {
    let labels = spine
        .vertex_labels
        .as_ref()
        .ok_or_else(|| Error::Label("spine mesh carries no vertex labels".into()))?;
    let apex = spine
        .vertices
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == level.get())
        .map(|(v, _)| v)
        .min_by(|a, b| {
            b.y.total_cmp(&a.y)
                .then(a.x.abs().total_cmp(&b.x.abs()))
                .then(a.z.total_cmp(&b.z))
        })
        .ok_or_else(|| Error::Label(format!("level {level} is not present in the spine mesh")))?;
    Ok(Camera::at(apex + Vec3::y() * standoff_mm))
}

/// Same as [`place_camera`] but takes a raw level number, so that
/// out-of-range levels surface as label errors.
pub fn place_camera_raw(spine: &TriMesh, level: u8, standoff_mm: f64) -> Result<Camera> {
    place_camera(spine, Level::new(level)?, standoff_mm)
}

struct GridHit {
    point: Point3,
    level: u8,
}

/// Casts the ray grid of `camera` (lattice anchored at `anchor` projected
/// onto the camera plane) against `scene` and returns retained original
/// hits keyed by `(cranial, lateral)` grid index.
fn cast_grid(
    scene: &Scene,
    original: &TriMesh,
    camera: &Camera,
    anchor: &Point3,
    config: &AcquisitionConfig,
) -> BTreeMap<(i64, i64), GridHit> {
    let pitch = config.ray_grid_spacing_mm;
    let lat = camera.lateral();
    let cra = camera.cranial();
    let dir = camera.ray_direction();

    let (mut lat_lo, mut lat_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut cra_lo, mut cra_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &original.vertices {
        let d = v - anchor;
        let (a, b) = (d.dot(&lat), d.dot(&cra));
        lat_lo = lat_lo.min(a);
        lat_hi = lat_hi.max(a);
        cra_lo = cra_lo.min(b);
        cra_hi = cra_hi.max(b);
    }
    // One spare row and column on each side so rounding never trims the
    // silhouette.
    let i0 = (lat_lo / pitch).floor() as i64 - 1;
    let i1 = (lat_hi / pitch).ceil() as i64 + 1;
    let j0 = (cra_lo / pitch).floor() as i64 - 1;
    let j1 = (cra_hi / pitch).ceil() as i64 + 1;

    let to_anchor = anchor - camera.origin;
    let base = camera.origin + lat * to_anchor.dot(&lat) + cra * to_anchor.dot(&cra);
    let cos_max = config.cos_threshold();

    let rows: Vec<Vec<((i64, i64), GridHit)>> = (j0..=j1)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::new();
            for i in i0..=i1 {
                let origin = base + lat * (i as f64 * pitch) + cra * (j as f64 * pitch);
                let ray = Ray::new(origin, dir);
                let Some(hit) = scene.closest_hit(&ray) else { continue };
                if hit.source != ORIGINAL {
                    continue;
                }
                let face = hit.face as usize;
                if config.physics_enabled {
                    let n = original.face_cross(face);
                    let norm = n.norm();
                    if norm == 0.0 || n.dot(&-dir) / norm < cos_max {
                        continue;
                    }
                }
                row.push((
                    (j, i),
                    GridHit {
                        point: ray.at(hit.t),
                        level: original.face_label(face),
                    },
                ));
            }
            row
        })
        .collect();
    rows.into_iter().flatten().collect()
}

fn assemble(hits: BTreeMap<(i64, i64), GridHit>, provenance: Provenance) -> PartialCloud {
    let mut out = PartialCloud {
        points: Vec::with_capacity(hits.len()),
        level_hint: Vec::with_capacity(hits.len()),
        grid_index: Vec::with_capacity(hits.len()),
        provenance,
    };
    for (idx, h) in hits {
        out.points.push(h.point);
        out.level_hint.push(h.level);
        out.grid_index.push(idx);
    }
    out
}

fn check_inputs(spine: &TriMesh, config: &AcquisitionConfig) -> Result<()> {
    if spine.is_empty() {
        return Err(Error::EmptyInput("spine mesh has no faces".into()));
    }
    if !(config.incidence_max_deg > 0.0 && config.incidence_max_deg <= 90.0) {
        return Err(Error::Argument("incidence_max_deg must be in (0, 90]".into()));
    }
    if !(config.ray_grid_spacing_mm > 0.0) {
        return Err(Error::Argument("ray_grid_spacing_mm must be positive".into()));
    }
    Ok(())
}

fn shifted_copy(spine: &TriMesh, camera: &Camera, shift: ShiftPair) -> TriMesh {
    spine.translated(camera.lateral() * shift.lateral_mm + camera.posterior() * shift.ap_mm)
}

/// First visible hits of the ray grid with optional incidence culling.
pub fn raycast_visible(spine: &TriMesh, camera: &Camera, config: &AcquisitionConfig) -> Result<PartialCloud> {
    check_inputs(spine, config)?;
    let scene = Scene::new(&[(ORIGINAL, spine)]);
    let hits = cast_grid(&scene, spine, camera, &camera.origin, config);
    Ok(assemble(
        hits,
        Provenance {
            deformation_id: "undeformed".into(),
            shift_mm: ShiftPair::ZERO,
            config_hash: config.hash(),
        },
    ))
}

/// Like [`raycast_visible`] but the scene also contains a copy of the spine
/// displaced by `shift` (lateral, posterior) in the camera frame; only
/// first hits on the original survive.
pub fn raycast_with_scattering(
    spine: &TriMesh,
    camera: &Camera,
    config: &AcquisitionConfig,
    shift: ShiftPair,
) -> Result<PartialCloud> {
    check_inputs(spine, config)?;
    let copy = shifted_copy(spine, camera, shift);
    let scene = Scene::new(&[(ORIGINAL, spine), (SHIFTED, &copy)]);
    let hits = cast_grid(&scene, spine, camera, &camera.origin, config);
    Ok(assemble(
        hits,
        Provenance {
            deformation_id: "undeformed".into(),
            shift_mm: shift,
            config_hash: config.hash(),
        },
    ))
}

/// Union of the renders from cameras over every listed level. All cameras
/// share one ray lattice (anchored at the first camera); a grid cell keeps
/// the hit of the first camera that retains one. Cameras whose plane lies
/// behind the whole scene produce identical renders and are cast once.
///
/// With `shift = None` no scattering copy is added.
pub fn render_spine(
    spine: &TriMesh,
    levels: &[Level],
    config: &AcquisitionConfig,
    shift: Option<ShiftPair>,
    deformation_id: &str,
) -> Result<PartialCloud> {
    check_inputs(spine, config)?;
    if levels.is_empty() {
        return Err(Error::Argument("no levels to place cameras over".into()));
    }
    let cameras = levels
        .iter()
        .map(|&l| place_camera(spine, l, config.camera_standoff_mm))
        .collect::<Result<Vec<_>>>()?;
    let anchor = cameras[0].origin;
    let post = cameras[0].posterior();

    let copy = shift.map(|s| shifted_copy(spine, &cameras[0], s));
    let mut sources = vec![(ORIGINAL, spine)];
    if let Some(c) = &copy {
        sources.push((SHIFTED, c));
    }
    let scene = Scene::new(&sources);
    let top = sources
        .iter()
        .flat_map(|(_, m)| m.vertices.iter())
        .map(|v| (v - anchor).dot(&post))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut merged: BTreeMap<(i64, i64), GridHit> = BTreeMap::new();
    let mut cast_clear_view = false;
    for cam in &cameras {
        let clear = (cam.origin - anchor).dot(&post) > top;
        if clear && cast_clear_view {
            continue;
        }
        cast_clear_view |= clear;
        for (idx, hit) in cast_grid(&scene, spine, cam, &anchor, config) {
            merged.entry(idx).or_insert(hit);
        }
    }
    Ok(assemble(
        merged,
        Provenance {
            deformation_id: deformation_id.to_string(),
            shift_mm: shift.unwrap_or(ShiftPair::ZERO),
            config_hash: config.hash(),
        },
    ))
}

/// One partial view per configured shift pair. With physics disabled the
/// scattering step is bypassed and every view is the plain first-hit render
/// (kept per shift so views pair up with their physics counterparts).
pub fn render_views(spine: &TriMesh, config: &AcquisitionConfig, deformation_id: &str) -> Result<Vec<PartialCloud>> {
    config.validate()?;
    let levels = spine.levels();
    if config.physics_enabled {
        config
            .shift_pairs_mm
            .iter()
            .map(|&s| render_spine(spine, &levels, config, Some(s), deformation_id))
            .collect()
    } else {
        let base = render_spine(spine, &levels, config, None, deformation_id)?;
        Ok(config
            .shift_pairs_mm
            .iter()
            .map(|&s| {
                let mut view = base.clone();
                view.provenance.shift_mm = s;
                view
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, icosphere};

    fn off(config: &AcquisitionConfig) -> AcquisitionConfig {
        AcquisitionConfig {
            physics_enabled: false,
            ..config.clone()
        }
    }

    #[test]
    fn default_shifts_are_nine_canonical_pairs() {
        let s = default_shift_pairs();
        assert_eq!(s.len(), 9);
        assert!(s.iter().all(is_allowed_shift));
        assert!(s.contains(&ShiftPair::new(-7.0, -5.0)));
        let json = serde_json::to_string(&s[0]).unwrap();
        assert_eq!(json, "[-5.0,-1.0]");
        AcquisitionConfig::default().validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = AcquisitionConfig::default();
        c.incidence_max_deg = 0.0;
        assert!(c.validate().is_err());
        c.incidence_max_deg = 90.0;
        c.validate().unwrap();
        c.shift_pairs_mm.push(ShiftPair::new(3.0, -1.0));
        assert!(c.validate().is_err());
    }

    #[test]
    fn camera_over_apex() {
        let mut m = icosphere(Point3::origin(), 1.0, 1);
        m.vertices.push(Point3::new(0.0, 40.0, 0.0));
        // Keep the extra vertex referenced so labels line up.
        let n = m.vertices.len();
        m.vertex_labels = Some(vec![1; n]);
        let cam = place_camera(&m, Level::new(1).unwrap(), 100.0).unwrap();
        assert_eq!(cam.origin, Point3::new(0.0, 140.0, 0.0));
    }

    #[test]
    fn camera_apex_tie_break() {
        let v = vec![
            Point3::new(3.0, 10.0, 0.0),
            Point3::new(-1.0, 10.0, 5.0),
            Point3::new(1.0, 10.0, -2.0),
            Point3::new(0.0, 0.0, 0.0),
        ];
        let m = TriMesh {
            vertices: v,
            faces: vec![],
            vertex_labels: Some(vec![2; 4]),
        };
        let cam = place_camera(&m, Level::new(2).unwrap(), 10.0).unwrap();
        // |x| = 1 twice: the smaller cranial coordinate wins.
        assert_eq!(cam.origin, Point3::new(1.0, 20.0, -2.0));
        assert!(matches!(place_camera_raw(&m, 6, 10.0), Err(Error::Label(_))));
        assert!(matches!(place_camera_raw(&m, 3, 10.0), Err(Error::Label(_))));
    }

    #[test]
    fn sphere_first_hits_are_upper_hemisphere() {
        let r = 10.0;
        let sphere = icosphere(Point3::origin(), r, 4).with_label(Level::new(1).unwrap());
        let cfg = off(&AcquisitionConfig::default());
        let cam = Camera::at(Point3::new(0.0, 50.0, 0.0));
        let cloud = raycast_visible(&sphere, &cam, &cfg).unwrap();
        assert!(!cloud.is_empty());
        assert!(cloud.points.iter().all(|p| p.y >= -cfg.ray_grid_spacing_mm));
        assert!(cloud.level_hint.iter().all(|&l| l == 1));
    }

    #[test]
    fn orthogonal_plane_keeps_everything() {
        // A thin slab whose top face is orthogonal to the rays.
        let slab = box_mesh(Point3::new(-5.0, -1.0, -5.0), Point3::new(5.0, 0.0, 5.0));
        let cam = Camera::at(Point3::new(0.1, 20.0, 0.1));
        let all = raycast_visible(&slab, &cam, &off(&AcquisitionConfig::default())).unwrap();
        for deg in [1.0, 30.0, 85.0] {
            let cfg = AcquisitionConfig {
                incidence_max_deg: deg,
                ..AcquisitionConfig::default()
            };
            let kept = raycast_visible(&slab, &cam, &cfg).unwrap();
            assert_eq!(kept.points, all.points);
        }
    }

    #[test]
    fn zero_shift_is_identity() {
        let sphere = icosphere(Point3::origin(), 10.0, 3);
        let cam = Camera::at(Point3::new(0.13, 60.0, -0.07));
        let cfg = AcquisitionConfig::default();
        let plain = raycast_visible(&sphere, &cam, &cfg).unwrap();
        let scattered = raycast_with_scattering(&sphere, &cam, &cfg, ShiftPair::ZERO).unwrap();
        assert_eq!(plain.points, scattered.points);
        assert_eq!(plain.grid_index, scattered.grid_index);
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let cam = Camera::at(Point3::new(0.0, 10.0, 0.0));
        let empty = TriMesh::default();
        assert!(matches!(
            raycast_visible(&empty, &cam, &AcquisitionConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }
}
