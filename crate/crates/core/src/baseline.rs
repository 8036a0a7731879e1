//! Atlas-retrieval completer and the external completer hook.
//!
//! Every atlas entry of the requested level is rigidly registered to the
//! partial view by point-to-point ICP; the entry whose aligned copy best
//! explains the partial (smallest one-sided Chamfer from partial to entry)
//! is returned in the partial's frame.

use std::fs;
use std::path::Path;
use std::process::Command;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, is_proper_rotation, Level, Point3, PointCloud, Rigid, Vec3};
use crate::meshio::{read_cloud_ply, write_cloud_ply, PlyFormat};
use crate::metrics::chamfer_one_sided;
use crate::spatial::KdTree;

pub const ICP_MAX_ITERATIONS: usize = 50;
pub const ICP_REL_TOL: f64 = 1e-6;
/// Correspondences farther than this multiple of the median distance are
/// ignored, so fused neighbour points do not drag the alignment.
pub const ICP_TRIM_FACTOR: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AtlasEntry {
    pub id: String,
    pub level: Level,
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atlas {
    entries: Vec<AtlasEntry>,
}

#[derive(Serialize, Deserialize)]
struct AtlasIndex {
    schema_version: u32,
    cardinality: usize,
    entries: Vec<AtlasIndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct AtlasIndexEntry {
    id: String,
    level: Level,
    file: String,
}

pub const ATLAS_INDEX: &str = "atlas.json";

impl Atlas {
    pub fn new(entries: Vec<AtlasEntry>) -> Result<Self> {
        let mut ids = std::collections::HashSet::new();
        for e in &entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Atlas(format!("duplicate atlas id {}", e.id)));
            }
            if e.cloud.is_empty() {
                return Err(Error::Atlas(format!("atlas entry {} is empty", e.id)));
            }
            if e.cloud.len() != entries[0].cloud.len() {
                return Err(Error::Atlas(format!(
                    "atlas entry {} has {} points, expected {}",
                    e.id,
                    e.cloud.len(),
                    entries[0].cloud.len()
                )));
            }
        }
        Ok(Atlas { entries })
    }

    pub fn entries(&self) -> &[AtlasEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cardinality(&self) -> usize {
        self.entries.first().map_or(0, |e| e.cloud.len())
    }

    /// Writes `atlas.json` plus one PLY per entry into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = AtlasIndex {
            schema_version: crate::SCHEMA_VERSION,
            cardinality: self.cardinality(),
            entries: Vec::new(),
        };
        for e in &self.entries {
            let file = format!("{}.ply", e.id);
            write_cloud_ply(&dir.join(&file), &e.cloud, PlyFormat::BinaryLittleEndian)?;
            index.entries.push(AtlasIndexEntry {
                id: e.id.clone(),
                level: e.level,
                file,
            });
        }
        let path = dir.join(ATLAS_INDEX);
        let json = serde_json::to_string_pretty(&index)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(ATLAS_INDEX);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: AtlasIndex =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let entries = index
            .entries
            .into_iter()
            .map(|e| {
                Ok(AtlasEntry {
                    cloud: read_cloud_ply(&dir.join(&e.file))?,
                    id: e.id,
                    level: e.level,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Atlas::new(entries)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResult {
    pub completion: PointCloud,
    pub chosen_atlas_id: String,
    /// Maps the atlas entry into the partial's frame.
    pub alignment: Rigid,
    pub score: f64,
    /// `(id, score)` for every candidate considered, in atlas order.
    pub candidate_scores: Vec<(String, f64)>,
}

/// Least-squares rigid transform taking `a[i]` onto `b[i]` (Kabsch).
pub fn kabsch(a: &[Point3], b: &[Point3]) -> Option<Rigid> {
    let ca = centroid(a)?;
    let cb = centroid(b)?;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ca) * (q - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    let rot = UnitQuaternion::from_matrix(&r);
    let t = cb.coords - rot * ca.coords;
    Some(Isometry3::from_parts(Translation3::from(t), rot))
}

/// Initial guess: match lateral and cranial centroids and the posterior
/// extremes. Partial views only show the posterior surface, so matching
/// centroids along the anterior-posterior axis would pull the candidate
/// too far back.
fn initial_guess(candidate: &PointCloud, partial: &PointCloud) -> Rigid {
    let cc = candidate.centroid().expect("non-empty");
    let cp = partial.centroid().expect("non-empty");
    let ymax = |c: &PointCloud| c.points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let t = Vec3::new(cp.x - cc.x, ymax(partial) - ymax(candidate), cp.z - cc.z);
    Isometry3::translation(t.x, t.y, t.z)
}

/// Point-to-point ICP aligning `candidate` to `partial`, with partial
/// points as the query side and trimmed correspondences.
pub fn icp(candidate: &PointCloud, partial: &PointCloud, init: Rigid) -> Rigid {
    let tree = KdTree::new(&candidate.points);
    let mut t = init;
    let mut prev = f64::INFINITY;
    for _ in 0..ICP_MAX_ITERATIONS {
        let inv = t.inverse();
        let mut pairs: Vec<(usize, f64, Point3)> = partial
            .points
            .iter()
            .filter_map(|q| tree.nearest(&(inv * q)).map(|(i, d)| (i, d, *q)))
            .collect();
        let mut d: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        d.sort_by(f64::total_cmp);
        let median = d[d.len() / 2];
        let limit = median * ICP_TRIM_FACTOR * ICP_TRIM_FACTOR;
        pairs.retain(|p| p.1 <= limit);
        let err = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        let a: Vec<Point3> = pairs.iter().map(|p| candidate.points[p.0]).collect();
        let b: Vec<Point3> = pairs.iter().map(|p| p.2).collect();
        match kabsch(&a, &b) {
            Some(next) => t = next,
            None => break,
        }
        if prev.is_finite() && (prev - err).abs() <= ICP_REL_TOL * prev.max(f64::MIN_POSITIVE) {
            break;
        }
        prev = err;
    }
    t
}

/// Retrieves the best atlas entry for `partial`, restricted to
/// `level_hint` when given.
pub fn complete(partial: &PointCloud, atlas: &Atlas, level_hint: Option<Level>) -> Result<CompletionResult> {
    if partial.is_empty() {
        return Err(Error::EmptyInput("partial cloud has no points".into()));
    }
    let candidates: Vec<&AtlasEntry> = atlas
        .entries
        .iter()
        .filter(|e| level_hint.is_none_or(|l| e.level == l))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Atlas(match level_hint {
            Some(l) => format!("no atlas entries for {l}"),
            None => "atlas is empty".into(),
        }));
    }
    let scored: Vec<(Rigid, f64)> = candidates
        .par_iter()
        .map(|e| {
            let t = icp(&e.cloud, partial, initial_guess(&e.cloud, partial));
            let aligned = e.cloud.transformed(&t);
            let score = chamfer_one_sided(partial, &aligned)?;
            Ok((t, score))
        })
        .collect::<Result<_>>()?;
    let best = (0..scored.len())
        .min_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1).then(a.cmp(&b)))
        .expect("non-empty");
    let (alignment, score) = scored[best];
    debug_assert!(is_proper_rotation(
        &alignment.rotation.to_rotation_matrix().into_inner(),
        1e-9
    ));
    Ok(CompletionResult {
        completion: candidates[best].cloud.transformed(&alignment),
        chosen_atlas_id: candidates[best].id.clone(),
        alignment,
        score,
        candidate_scores: candidates
            .iter()
            .zip(&scored)
            .map(|(e, s)| (e.id.clone(), s.1))
            .collect(),
    })
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', "'\\''"))
}

/// Runs an external completer. `template` is a shell command containing
/// `{in}` and `{out}`; the partial is written to `{in}` as PLY and the
/// completion is read back from `{out}`. When `expected_points` is given
/// the completion must have exactly that many points.
pub fn run_external_completer(
    partial: &PointCloud,
    template: &str,
    expected_points: Option<usize>,
) -> Result<PointCloud> {
    if !template.contains("{in}") || !template.contains("{out}") {
        return Err(Error::Argument(
            "completer command must contain {in} and {out} placeholders".into(),
        ));
    }
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("partial.ply");
    let output = dir.path().join("completion.ply");
    write_cloud_ply(&input, partial, PlyFormat::BinaryLittleEndian)?;
    let cmd = template
        .replace("{in}", &shell_quote(&input))
        .replace("{out}", &shell_quote(&output));
    let run = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| Error::ExternalCompleter {
            message: format!("could not start `{cmd}`: {e}"),
            diagnostics: String::new(),
        })?;
    if !run.status.success() {
        return Err(Error::ExternalCompleter {
            message: format!("`{template}` exited with {}", run.status),
            diagnostics: format!(
                "stdout:\n{}\nstderr:\n{}",
                String::from_utf8_lossy(&run.stdout),
                String::from_utf8_lossy(&run.stderr)
            ),
        });
    }
    if !output.exists() {
        return Err(Error::Format("external completer wrote no output file".into()));
    }
    let cloud = read_cloud_ply(&output)?;
    if !cloud.all_finite() {
        return Err(Error::Format("completion contains non-finite coordinates".into()));
    }
    if cloud.is_empty() {
        return Err(Error::Format("completion is empty".into()));
    }
    if let Some(n) = expected_points {
        if cloud.len() != n {
            return Err(Error::Format(format!(
                "completion has {} points, expected {n}",
                cloud.len()
            )));
        }
    }
    Ok(cloud)
}
