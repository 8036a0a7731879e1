//! Completion metrics: scaled Chamfer distance, EMD, F1, spinous-process
//! Chamfer distance and facet-joint centre distance.
//!
//! Shape metrics are computed on coordinates normalised by the ground truth
//! (centred on its centroid, scaled by its largest radius); the transform
//! is returned with every report. Facet distances stay in millimetres so
//! they can be judged against the absolute clinical threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{auction, hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{centroid, Aabb, Level, Point3, PointCloud, Vec3};
use crate::spatial::KdTree;

/// Chamfer values are reported multiplied by this factor.
pub const CD_SCALE: f64 = 1e4;
/// Largest problem solved by exact assignment; larger ones use the auction.
pub const EMD_EXACT_MAX: usize = 512;
/// Certified relative error bound of the auction solver (half the 1 %
/// allowance, leaving room for rounding in the matched mean).
pub const EMD_AUCTION_TOL: f64 = 5e-3;
pub const FACET_THRESHOLD_MM: f64 = 5.0;
/// Default F1 threshold as a fraction of the ground-truth box diagonal.
pub const F1_TAU_FRACTION: f64 = 0.01;

fn nonempty(c: &PointCloud, what: &str) -> Result<()> {
    if c.is_empty() {
        Err(Error::Argument(format!("{what} cloud is empty")))
    } else {
        Ok(())
    }
}

/// Squared nearest-neighbour distance from each point of `from` to `to`.
fn nn_sq(from: &[Point3], to: &KdTree) -> Vec<f64> {
    from.par_iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d)| d))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean squared nearest distance from `p` to `q`, times [`CD_SCALE`].
pub fn chamfer_one_sided(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    nonempty(p, "first")?;
    nonempty(q, "second")?;
    Ok(mean(&nn_sq(&p.points, &KdTree::new(&q.points))) * CD_SCALE)
}

/// Symmetric Chamfer distance on squared distances, times [`CD_SCALE`].
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    nonempty(p, "first")?;
    nonempty(q, "second")?;
    let tp = KdTree::new(&p.points);
    let tq = KdTree::new(&q.points);
    let a = mean(&nn_sq(&p.points, &tq));
    let b = mean(&nn_sq(&q.points, &tp));
    Ok((a + b) * CD_SCALE)
}

fn distance_matrix(p: &PointCloud, q: &PointCloud) -> CostMatrix {
    CostMatrix::from_fn(p.len(), |i, j| (p.points[i] - q.points[j]).norm())
}

fn check_emd(p: &PointCloud, q: &PointCloud) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "EMD needs equal cardinalities, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    nonempty(p, "first")
}

/// Mean matched distance under the optimal bijection, summed in sorted
/// order so the value does not depend on argument order.
fn matched_mean(c: &CostMatrix, assignment: &[usize]) -> f64 {
    let mut d: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| c.get(i, j)).collect();
    d.sort_by(f64::total_cmp);
    d.iter().sum::<f64>() / d.len() as f64
}

/// Earth mover's distance between equal-size clouds: exact assignment up
/// to [`EMD_EXACT_MAX`] points, ε-scaling auction above.
pub fn emd(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_emd(p, q)?;
    if p.len() <= EMD_EXACT_MAX {
        emd_exact(p, q)
    } else {
        emd_auction(p, q)
    }
}

pub fn emd_exact(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_emd(p, q)?;
    let c = distance_matrix(p, q);
    Ok(matched_mean(&c, &hungarian(&c)))
}

pub fn emd_auction(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_emd(p, q)?;
    let c = distance_matrix(p, q);
    Ok(matched_mean(&c, &auction(&c, EMD_AUCTION_TOL)))
}

/// Precision, recall and F1 at distance threshold `tau` (inclusive).
pub fn precision_recall_f1(p: &PointCloud, q: &PointCloud, tau: f64) -> Result<(f64, f64, f64)> {
    nonempty(p, "first")?;
    nonempty(q, "second")?;
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("F1 threshold must be positive, got {tau}")));
    }
    let t2 = tau * tau;
    let within = |d: Vec<f64>| d.iter().filter(|&&x| x <= t2).count() as f64 / d.len() as f64;
    let precision = within(nn_sq(&p.points, &KdTree::new(&q.points)));
    let recall = within(nn_sq(&q.points, &KdTree::new(&p.points)));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

pub fn f1_score(p: &PointCloud, q: &PointCloud, tau: f64) -> Result<f64> {
    precision_recall_f1(p, q, tau).map(|r| r.2)
}

/// Similarity applied before shape metrics: `x' = (x + translation) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub translation: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        (p + self.translation) * self.scale
    }

    pub fn apply_cloud(&self, c: &PointCloud) -> PointCloud {
        PointCloud {
            points: c.points.iter().map(|p| self.apply(p)).collect(),
            labels: c.labels.clone(),
        }
    }

    /// Normalisation fixed by a ground-truth cloud.
    pub fn from_gt(gt: &PointCloud) -> Result<Self> {
        let c = centroid(&gt.points).ok_or_else(|| Error::Degeneracy("ground-truth cloud is empty".into()))?;
        let r = gt.points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Degeneracy("ground-truth points are all identical".into()));
        }
        // An already centred unit-radius cloud gets exactly the identity.
        let translation = if c.coords == Vec3::zeros() {
            Vec3::zeros()
        } else {
            -c.coords
        };
        Ok(Normalization {
            translation,
            scale: 1.0 / r,
        })
    }
}

/// Centres both clouds on the ground-truth centroid and scales them by the
/// inverse ground-truth radius.
pub fn normalize_pair(gt: &PointCloud, other: &PointCloud) -> Result<(PointCloud, PointCloud, Normalization)> {
    let n = Normalization::from_gt(gt)?;
    Ok((n.apply_cloud(gt), n.apply_cloud(other), n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkKind {
    SpinousCenterline,
    FacetCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Landmark set; JSON form `{"kind","level","side","points_mm":[[x,y,z],...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkAnnotation {
    pub kind: LandmarkKind,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    pub points_mm: Vec<[f64; 3]>,
}

impl LandmarkAnnotation {
    pub fn centerline(level: Level, points: &[Point3]) -> Result<Self> {
        let a = LandmarkAnnotation {
            kind: LandmarkKind::SpinousCenterline,
            level,
            side: None,
            points_mm: points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn facet(level: Level, side: Side, center: Point3) -> Self {
        LandmarkAnnotation {
            kind: LandmarkKind::FacetCenter,
            level,
            side: Some(side),
            points_mm: vec![[center.x, center.y, center.z]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LandmarkKind::SpinousCenterline if self.points_mm.len() < 2 => Err(Error::Argument(format!(
                "spinous centerline needs at least 2 points, got {}",
                self.points_mm.len()
            ))),
            LandmarkKind::FacetCenter if self.points_mm.len() != 1 => Err(Error::Argument(format!(
                "facet center needs exactly 1 point, got {}",
                self.points_mm.len()
            ))),
            LandmarkKind::FacetCenter if self.side.is_none() => {
                Err(Error::Argument("facet center needs a side".into()))
            }
            _ if self.points_mm.iter().flatten().any(|c| !c.is_finite()) => {
                Err(Error::Argument("landmark coordinates must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn points(&self) -> Vec<Point3> {
        self.points_mm.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud::new(self.points())
    }

    pub fn normalized(&self, n: &Normalization) -> LandmarkAnnotation {
        LandmarkAnnotation {
            points_mm: self
                .points()
                .iter()
                .map(|p| {
                    let q = n.apply(p);
                    [q.x, q.y, q.z]
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Chamfer distance (same convention and scaling as [`chamfer`]) between
/// two spinous-process centerlines of the same level.
pub fn sp_cd(completion: &LandmarkAnnotation, input: &LandmarkAnnotation) -> Result<f64> {
    for a in [completion, input] {
        if a.kind != LandmarkKind::SpinousCenterline {
            return Err(Error::Argument("SP-CD needs spinous-centerline annotations".into()));
        }
        a.validate()?;
    }
    if completion.level != input.level {
        return Err(Error::Argument(format!(
            "centerlines of different levels ({} vs {})",
            completion.level, input.level
        )));
    }
    chamfer(&completion.cloud(), &input.cloud())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FacetResult {
    pub distance_mm: f64,
    pub pass: bool,
}

/// Distance in mm between two facet-joint centres of the same level and
/// side; passes at or below [`FACET_THRESHOLD_MM`].
pub fn facet_distance(completion: &LandmarkAnnotation, gt: &LandmarkAnnotation) -> Result<FacetResult> {
    facet_distance_with(completion, gt, FACET_THRESHOLD_MM)
}

pub fn facet_distance_with(
    completion: &LandmarkAnnotation,
    gt: &LandmarkAnnotation,
    threshold_mm: f64,
) -> Result<FacetResult> {
    for a in [completion, gt] {
        if a.kind != LandmarkKind::FacetCenter {
            return Err(Error::Argument("facet distance needs facet-center annotations".into()));
        }
        a.validate()?;
    }
    if completion.level != gt.level || completion.side != gt.side {
        return Err(Error::Argument("facet centers differ in level or side".into()));
    }
    let d = (completion.points()[0] - gt.points()[0]).norm();
    Ok(FacetResult {
        distance_mm: d,
        pass: d <= threshold_mm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// F1 threshold in normalised units; `None` means 1 % of the
    /// normalised ground-truth box diagonal.
    pub f1_tau: Option<f64>,
    pub facet_threshold_mm: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            f1_tau: None,
            facet_threshold_mm: FACET_THRESHOLD_MM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub f1_tau: f64,
    pub facet_threshold_mm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct FacetPair {
    pub left: Option<FacetResult>,
    pub right: Option<FacetResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cd_scaled: f64,
    pub emd: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub sp_cd: Option<f64>,
    pub facet_dist_mm: Option<FacetPair>,
    pub thresholds: Thresholds,
    pub normalization: Normalization,
    pub points: usize,
}

/// Optional landmark inputs for [`evaluate`], all in millimetres.
#[derive(Clone, Debug, Default)]
pub struct Landmarks<'a> {
    pub sp_pred: Option<&'a LandmarkAnnotation>,
    pub sp_input: Option<&'a LandmarkAnnotation>,
    pub facet_pred: &'a [LandmarkAnnotation],
    pub facet_gt: &'a [LandmarkAnnotation],
}

/// Full report for one prediction against its ground truth. When the
/// cardinalities differ, EMD is taken on the first `min(|gt|, |pred|)`
/// farthest-point samples of each.
pub fn evaluate(
    gt: &PointCloud,
    pred: &PointCloud,
    landmarks: &Landmarks,
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    nonempty(pred, "predicted")?;
    let (g, p, norm) = normalize_pair(gt, pred)?;
    let tau = match config.f1_tau {
        Some(t) => t,
        None => F1_TAU_FRACTION * Aabb::from_points(&g.points).expect("non-empty").diagonal(),
    };
    let cd = chamfer(&p, &g)?;
    let emd_value = if g.len() == p.len() {
        emd(&p, &g)?
    } else {
        let n = g.len().min(p.len());
        let pick = |c: &PointCloud| {
            PointCloud::new(
                crate::mask::farthest_point_order(&c.points, n, 0)
                    .iter()
                    .map(|&i| c.points[i])
                    .collect(),
            )
        };
        emd(&pick(&p), &pick(&g))?
    };
    let (precision, recall, f1) = precision_recall_f1(&p, &g, tau)?;

    let sp = match (landmarks.sp_pred, landmarks.sp_input) {
        (Some(a), Some(b)) => Some(sp_cd(&a.normalized(&norm), &b.normalized(&norm))?),
        _ => None,
    };
    let mut facets = FacetPair::default();
    let mut any = false;
    for fp in landmarks.facet_pred {
        if let Some(fg) = landmarks
            .facet_gt
            .iter()
            .find(|g| g.side == fp.side && g.level == fp.level)
        {
            let r = facet_distance_with(fp, fg, config.facet_threshold_mm)?;
            any = true;
            match fp.side {
                Some(Side::Left) => facets.left = Some(r),
                Some(Side::Right) => facets.right = Some(r),
                None => {}
            }
        }
    }
    Ok(MetricsReport {
        cd_scaled: cd,
        emd: emd_value,
        f1,
        precision,
        recall,
        sp_cd: sp,
        facet_dist_mm: any.then_some(facets),
        thresholds: Thresholds {
            f1_tau: tau,
            facet_threshold_mm: config.facet_threshold_mm,
        },
        normalization: norm,
        points: pred.len(),
    })
}
