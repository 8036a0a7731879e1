//! Shared geometric primitives: points, clouds, boxes, rigid transforms and
//! the vertebra level newtype.
//!
//! Axes convention used everywhere: `+x` lateral-left, `+y` posterior,
//! `+z` cranial. All lengths are millimetres.

use std::fmt;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Rigid = Isometry3<f64>;

/// Lumbar vertebra level, `1..=5` for L1..L5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Level(u8);

impl Level {
    pub const ALL: [Level; 5] = [Level(1), Level(2), Level(3), Level(4), Level(5)];

    pub fn new(value: u8) -> Result<Self> {
        if (1..=5).contains(&value) {
            Ok(Level(value))
        } else {
            Err(Error::Label(format!("level {value} is outside L1..L5")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index, L1 -> 0.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn cranial_neighbor(self) -> Option<Level> {
        (self.0 > 1).then(|| Level(self.0 - 1))
    }

    pub fn caudal_neighbor(self) -> Option<Level> {
        (self.0 < 5).then(|| Level(self.0 + 1))
    }
}

impl TryFrom<u8> for Level {
    type Error = Error;
    fn try_from(value: u8) -> Result<Self> {
        Level::new(value)
    }
}

impl From<Level> for u8 {
    fn from(level: Level) -> u8 {
        level.0
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// A plain 3D point set in millimetres, optionally tagged per point with a
/// vertebra level (0 = unknown).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points, labels: None }
    }

    pub fn with_labels(points: Vec<Point3>, labels: Vec<u8>) -> Self {
        debug_assert_eq!(points.len(), labels.len());
        PointCloud {
            points,
            labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3> {
        centroid(&self.points)
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    pub fn transformed(&self, t: &Rigid) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t * p).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().all(|p| p.coords.iter().all(|c| c.is_finite()))
    }
}

pub fn centroid(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points(points: &[Point3]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        Some(b)
    }

    pub fn grow(&mut self, p: &Point3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn inflated(&self, by: f64) -> Aabb {
        let d = Vec3::repeat(by);
        Aabb {
            min: self.min - d,
            max: self.max + d,
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Serializable form of a rigid transform: row-major rotation matrix and a
/// translation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Rigid> for PoseRecord {
    fn from(t: &Rigid) -> Self {
        let m = t.rotation.to_rotation_matrix().into_inner();
        let mut rotation = [[0.0; 3]; 3];
        for (r, row) in rotation.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        PoseRecord {
            rotation,
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl PoseRecord {
    pub fn to_rigid(&self) -> Rigid {
        let m = Matrix3::from_fn(|r, c| self.rotation[r][c]);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        Isometry3::from_parts(
            Translation3::new(self.translation[0], self.translation[1], self.translation[2]),
            rot,
        )
    }
}

/// Checks that a rotation matrix is orthonormal with determinant +1.
pub fn is_proper_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    let should_be_identity = m.transpose() * m;
    (should_be_identity - Matrix3::identity()).abs().max() <= tol && (m.determinant() - 1.0).abs() <= tol
}

pub fn p3(v: [f64; 3]) -> Point3 {
    Point3::new(v[0], v[1], v[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_bounds() {
        assert!(Level::new(0).is_err());
        assert!(Level::new(6).is_err());
        let l3 = Level::new(3).unwrap();
        assert_eq!(l3.cranial_neighbor(), Some(Level(2)));
        assert_eq!(l3.caudal_neighbor(), Some(Level(4)));
        assert_eq!(Level(1).cranial_neighbor(), None);
        assert_eq!(Level(5).caudal_neighbor(), None);
        assert_eq!(serde_json::to_string(&l3).unwrap(), "3");
        assert!(serde_json::from_str::<Level>("9").is_err());
    }

    #[test]
    fn pose_record_round_trip() {
        let t = Isometry3::new(Vec3::new(1.0, -2.0, 3.5), Vec3::new(0.1, 0.2, -0.3));
        let back = PoseRecord::from(&t).to_rigid();
        let p = Point3::new(4.0, 5.0, 6.0);
        assert!(((t * p) - (back * p)).norm() < 1e-12);
        let m = back.rotation.to_rotation_matrix().into_inner();
        assert!(is_proper_rotation(&m, 1e-12));
    }
}
