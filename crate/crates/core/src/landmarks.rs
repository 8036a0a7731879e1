//! Automatic landmark extraction on vertebra point sets.
//!
//! The spinous-process centerline is the posterior-most ridge: points in a
//! thin band below the most posterior point, binned along the cranial axis,
//! keeping the most posterior point of each bin. A facet-joint centre is
//! the mean of the inferior articular region on one side: posterior half,
//! away from the midline, lowest fifth of that side's extent.

use crate::error::{Error, Result};
use crate::geometry::{centroid, Level, Point3};
use crate::metrics::{LandmarkAnnotation, Side};

pub const CENTERLINE_DEPTH_MM: f64 = 8.0;
pub const CENTERLINE_HALF_WIDTH_MM: f64 = 6.0;
pub const CENTERLINE_BIN_MM: f64 = 2.0;
pub const FACET_BAND: f64 = 0.2;
/// Midline exclusion as a fraction of the arch half-width, keeping the
/// spinous process out of the facet regions.
pub const FACET_MIDLINE_GAP: f64 = 0.1;

pub fn spinous_centerline(points: &[Point3], level: Level) -> Result<LandmarkAnnotation> {
    let apex = points
        .iter()
        .max_by(|a, b| a.y.total_cmp(&b.y))
        .ok_or_else(|| Error::Degeneracy("no points for a spinous centerline".into()))?;
    let band: Vec<&Point3> = points
        .iter()
        .filter(|p| p.y >= apex.y - CENTERLINE_DEPTH_MM && (p.x - apex.x).abs() <= CENTERLINE_HALF_WIDTH_MM)
        .collect();
    let z0 = band.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let mut bins: std::collections::BTreeMap<i64, Point3> = std::collections::BTreeMap::new();
    for p in band {
        let k = ((p.z - z0) / CENTERLINE_BIN_MM).floor() as i64;
        bins.entry(k)
            .and_modify(|q| {
                if p.y > q.y {
                    *q = *p;
                }
            })
            .or_insert(*p);
    }
    let line: Vec<Point3> = bins.into_values().collect();
    if line.len() < 2 {
        return Err(Error::Degeneracy(format!(
            "spinous centerline of {level} spans fewer than two bins"
        )));
    }
    LandmarkAnnotation::centerline(level, &line)
}

pub fn facet_center(points: &[Point3], level: Level, side: Side) -> Result<LandmarkAnnotation> {
    let c = centroid(points).ok_or_else(|| Error::Degeneracy("no points for a facet centre".into()))?;
    let arch: Vec<&Point3> = points.iter().filter(|p| p.y >= c.y).collect();
    let half_width = arch.iter().map(|p| (p.x - c.x).abs()).fold(0.0, f64::max);
    let gap = FACET_MIDLINE_GAP * half_width;
    let sided: Vec<&Point3> = arch
        .into_iter()
        .filter(|p| match side {
            Side::Left => p.x >= c.x + gap,
            Side::Right => p.x <= c.x - gap,
        })
        .collect();
    let (lo, hi) = sided.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.z), hi.max(p.z))
    });
    let cut = lo + FACET_BAND * (hi - lo);
    let region: Vec<Point3> = sided.into_iter().filter(|p| p.z <= cut).copied().collect();
    let center =
        centroid(&region).ok_or_else(|| Error::Degeneracy(format!("empty {side:?} facet region on {level}")))?;
    Ok(LandmarkAnnotation::facet(level, side, center))
}

/// Both facet centres; sides without a region are skipped.
pub fn facet_centers(points: &[Point3], level: Level) -> Vec<LandmarkAnnotation> {
    [Side::Left, Side::Right]
        .into_iter()
        .filter_map(|s| facet_center(points, level, s).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LandmarkKind;

    fn ridge() -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..20 {
            let z = i as f64;
            pts.push(Point3::new(0.0, 40.0, z));
            pts.push(Point3::new(0.5, 39.0, z));
            pts.push(Point3::new(15.0, 30.0, z));
            pts.push(Point3::new(-15.0, 30.0, z));
            pts.push(Point3::new(0.0, -10.0, z));
        }
        pts
    }

    #[test]
    fn centerline_follows_the_ridge() {
        let a = spinous_centerline(&ridge(), Level::new(3).unwrap()).unwrap();
        assert_eq!(a.kind, LandmarkKind::SpinousCenterline);
        assert_eq!(a.points_mm.len(), 10);
        assert!(a.points_mm.iter().all(|p| p[1] == 40.0 && p[0] == 0.0));
        assert!(spinous_centerline(&[Point3::origin()], Level::new(3).unwrap()).is_err());
    }

    #[test]
    fn facet_centres_are_lateral_and_low() {
        let pts = ridge();
        let l = facet_center(&pts, Level::new(3).unwrap(), Side::Left).unwrap();
        let r = facet_center(&pts, Level::new(3).unwrap(), Side::Right).unwrap();
        assert!(l.points_mm[0][0] > 10.0 && r.points_mm[0][0] < -10.0);
        assert!(l.points_mm[0][2] < 4.0);
        assert_eq!(facet_centers(&pts, Level::new(3).unwrap()).len(), 2);
    }
}
