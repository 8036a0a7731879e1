//! Dataset generation, subject-level splits and batch evaluation.
//!
//! Output layout under the dataset root:
//!
//! ```text
//! manifest.json
//! volumes/<vid>/meshes/L<n>.ply            smoothed rest meshes
//! volumes/<vid>/<dNN>/poses.json           loads and relaxed poses
//! volumes/<vid>/<dNN>/gt_L<n>.ply          ground-truth cloud
//! volumes/<vid>/<dNN>/annotations_L<n>.json
//! samples/<vid>/<sample_id>.ply            masked partial view
//! ```
//!
//! Partial views are stored at full density; they are brought to the
//! configured cardinality at evaluation time with the sample's seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{complete, run_external_completer, Atlas, AtlasEntry};
use crate::deform::{sample_deformations, DeformConfig};
use crate::error::{Error, Result};
use crate::geometry::{Level, PointCloud, PoseRecord, Rigid};
use crate::landmarks::{facet_centers, spinous_centerline};
use crate::marching_cubes::extract_all;
use crate::mask::{mask_vertebra, resample, MaskConfig};
use crate::mesh::TriMesh;
use crate::meshio::{read_cloud_ply, write_cloud_ply, write_mesh_ply, PlyFormat};
use crate::metrics::{evaluate, LandmarkAnnotation, LandmarkKind, Landmarks, MetricsConfig, MetricsReport};
use crate::render::{render_views, AcquisitionConfig, ShiftPair};
use crate::smoothing::{smooth_mesh, DEFAULT_ITERATIONS, DEFAULT_STRENGTH};
use crate::stats::{summarize, Summary};
use crate::util::{config_hash, derive_seed, seeded_rng};
use crate::volume::load_labelmap_from_header;
use crate::SCHEMA_VERSION;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const AGGREGATES_CSV: &str = "aggregates.csv";
pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];
const SPLIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Argument(format!("unknown split `{s}` (train|val|test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub iterations: usize,
    pub strength: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            iterations: DEFAULT_ITERATIONS,
            strength: DEFAULT_STRENGTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Only consider atlas entries of the sample's level.
    pub use_level_hint: bool,
    /// Shell template with `{in}` and `{out}` for an external completer.
    pub external_command: Option<String>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            use_level_hint: true,
            external_command: None,
        }
    }
}

/// One ablation cell: ultrasound physics on/off, neighbour fusion on/off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub physics: bool,
    pub fusion: bool,
}

impl Condition {
    pub const FULL: Condition = Condition {
        physics: true,
        fusion: true,
    };

    pub fn tag(&self) -> String {
        format!("p{}f{}", self.physics as u8, self.fusion as u8)
    }
}

/// Everything that determines a generated dataset. The per-condition
/// physics flag overrides `acquisition.physics_enabled`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub smoothing: SmoothingConfig,
    pub deformation: DeformConfig,
    pub acquisition: AcquisitionConfig,
    pub masking: MaskConfig,
    pub metrics: MetricsConfig,
    pub baseline: BaselineConfig,
    /// Train, validation and test shares of the source volumes.
    pub split_fractions: [f64; 3],
    pub conditions: Vec<Condition>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            smoothing: SmoothingConfig::default(),
            deformation: DeformConfig::default(),
            acquisition: AcquisitionConfig::default(),
            masking: MaskConfig::default(),
            metrics: MetricsConfig::default(),
            baseline: BaselineConfig::default(),
            split_fractions: DEFAULT_SPLIT_FRACTIONS,
            conditions: vec![Condition::FULL],
        }
    }
}

impl PipelineConfig {
    /// Parses a JSON config. The document must carry a `seed` unless
    /// `seed_override` supplies one.
    pub fn from_json(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let has_seed = value.get("seed").is_some();
        let mut config: PipelineConfig = serde_json::from_value(value)?;
        match seed_override {
            Some(s) => config.seed = s,
            None if !has_seed => return Err(Error::Argument("config has no `seed`".into())),
            None => {}
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, seed_override).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        check_fractions(self.split_fractions)?;
        if self.conditions.is_empty() {
            return Err(Error::Argument("at least one condition is required".into()));
        }
        if self.conditions.iter().collect::<BTreeSet<_>>().len() != self.conditions.len() {
            return Err(Error::Argument("conditions must be distinct".into()));
        }
        if !(self.smoothing.strength > 0.0 && self.smoothing.strength < 1.0) {
            return Err(Error::Argument("smoothing strength must be in (0,1)".into()));
        }
        if self.deformation.n_variants == 0 {
            return Err(Error::Argument("n_variants must be at least 1".into()));
        }
        if self.masking.partial_points == 0 || self.masking.gt_points == 0 {
            return Err(Error::Argument("point counts must be positive".into()));
        }
        if !(self.masking.margin_mm >= 0.0 && self.masking.margin_mm.is_finite()) {
            return Err(Error::Argument("margin_mm must be finite and non-negative".into()));
        }
        self.acquisition.validate()
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

fn check_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Argument(format!("split fractions must be non-negative: {f:?}")));
    }
    let sum: f64 = f.iter().sum();
    if (sum - 1.0).abs() > SPLIT_TOL {
        return Err(Error::Argument(format!("split fractions sum to {sum}, not 1")));
    }
    Ok(())
}

/// Paths relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePaths {
    pub partial: String,
    pub gt: String,
    pub annotations: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub sample_id: String,
    pub source_volume: String,
    pub level: Level,
    pub deformation_id: String,
    pub shift_pair: ShiftPair,
    pub fusion: bool,
    pub physics: bool,
    pub split: Split,
    pub paths: SamplePaths,
    pub config_hash: String,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRecord {
    pub id: String,
    pub split: Split,
    pub levels: Vec<Level>,
    pub deformed: bool,
    pub expected_samples: usize,
    pub generated_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub volume: String,
    pub sample_id: Option<String>,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub volumes: Vec<VolumeRecord>,
    pub samples: Vec<SampleManifest>,
    pub failures: Vec<Failure>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "manifest schema {} is not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Checks id uniqueness, per-volume split consistency, config hashes
    /// and that every referenced file exists under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        for s in &self.samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::Consistency(format!("duplicate sample id {}", s.sample_id)));
            }
            if *splits.entry(&s.source_volume).or_insert(s.split) != s.split {
                return Err(Error::Consistency(format!(
                    "volume {} appears in more than one split",
                    s.source_volume
                )));
            }
            if s.config_hash != self.config_hash {
                return Err(Error::Consistency(format!("{} has a foreign config hash", s.sample_id)));
            }
            for p in [&s.paths.partial, &s.paths.gt, &s.paths.annotations] {
                if !root.join(p).is_file() {
                    return Err(Error::Consistency(format!("{}: missing file {p}", s.sample_id)));
                }
            }
        }
        Ok(())
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Reassigns splits by volume and updates the volume records.
    pub fn resplit(&mut self, fractions: [f64; 3], seed: u64) -> Result<()> {
        let ids: Vec<String> = self.volumes.iter().map(|v| v.id.clone()).collect();
        let assignment = assign_splits(&ids, fractions, seed)?;
        for v in &mut self.volumes {
            v.split = assignment[&v.id];
        }
        for s in &mut self.samples {
            s.split = assignment[&s.source_volume];
        }
        self.split_fractions = fractions;
        Ok(())
    }
}

/// Landmarks of one ground-truth vertebra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub schema_version: u32,
    pub level: Level,
    pub landmarks: Vec<LandmarkAnnotation>,
}

impl AnnotationFile {
    pub fn from_points(points: &PointCloud, level: Level) -> Self {
        let mut landmarks: Vec<LandmarkAnnotation> = spinous_centerline(&points.points, level).into_iter().collect();
        landmarks.extend(facet_centers(&points.points, level));
        AnnotationFile {
            schema_version: SCHEMA_VERSION,
            level,
            landmarks,
        }
    }

    pub fn centerline(&self) -> Option<&LandmarkAnnotation> {
        self.landmarks
            .iter()
            .find(|l| l.kind == LandmarkKind::SpinousCenterline)
    }

    pub fn facets(&self) -> Vec<LandmarkAnnotation> {
        self.landmarks
            .iter()
            .filter(|l| l.kind == LandmarkKind::FacetCenter)
            .cloned()
            .collect()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Split sizes for `n` volumes by largest remainder (ties to the earlier
/// bucket). A bucket with a positive share that rounds to zero takes one
/// volume from the largest bucket.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    check_fractions(fractions)?;
    let nonzero = fractions.iter().filter(|&&f| f > 0.0).count();
    if n < nonzero {
        return Err(Error::Split(format!(
            "{n} volumes cannot fill {nonzero} non-empty split buckets"
        )));
    }
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    for &b in order.iter().take(n.saturating_sub(assigned)) {
        counts[b] += 1;
    }
    for b in 0..3 {
        if fractions[b] > 0.0 && counts[b] == 0 {
            let donor = (0..3)
                .max_by(|&x, &y| counts[x].cmp(&counts[y]).then(y.cmp(&x)))
                .expect("three buckets");
            counts[donor] -= 1;
            counts[b] += 1;
        }
    }
    Ok(counts)
}

/// Shuffles the distinct volume ids with `seed` and partitions them.
pub fn assign_splits(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<BTreeMap<String, Split>> {
    let mut ids: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let counts = split_counts(ids.len(), fractions)?;
    ids.shuffle(&mut seeded_rng(seed, "split"));
    let mut out = BTreeMap::new();
    let mut it = ids.into_iter();
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for id in it.by_ref().take(count) {
            out.insert(id, split);
        }
    }
    Ok(out)
}

/// Assigns every sample the split of its source volume.
pub fn split_dataset(samples: &[SampleManifest], fractions: [f64; 3], seed: u64) -> Result<Vec<SampleManifest>> {
    let ids: Vec<String> = samples.iter().map(|s| s.source_volume.clone()).collect();
    let assignment = assign_splits(&ids, fractions, seed)?;
    Ok(samples
        .iter()
        .map(|s| SampleManifest {
            split: assignment[&s.source_volume],
            ..s.clone()
        })
        .collect())
}

/// Volume id: the header file stem.
pub fn volume_id(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Argument(format!("cannot derive a volume id from {}", path.display())))
}

pub fn sample_id(volume: &str, deformation: &str, level: Level, shift: ShiftPair, condition: Condition) -> String {
    format!("{volume}_{deformation}_{level}_{}_{}", shift.tag(), condition.tag())
}

/// Extracts and smooths every labelled vertebra of a volume.
pub fn volume_meshes(header: &Path, smoothing: &SmoothingConfig) -> Result<Vec<TriMesh>> {
    let map = load_labelmap_from_header(header)?;
    extract_all(&map)?
        .into_iter()
        .map(|(level, m)| Ok(smooth_mesh(&m, smoothing.iterations, smoothing.strength)?.with_label(level)))
        .collect()
}

fn level_of(mesh: &TriMesh) -> Level {
    mesh.levels()[0]
}

struct Variant {
    id: String,
    poses: Vec<Rigid>,
    meshes: Vec<TriMesh>,
    poses_json: serde_json::Value,
}

fn undeformed_variants(meshes: &[TriMesh], n: usize) -> Vec<Variant> {
    (0..n)
        .map(|k| {
            let id = format!("d{k:02}");
            let poses = vec![Rigid::identity(); meshes.len()];
            let records: Vec<_> = meshes
                .iter()
                .map(|m| {
                    let rec = PoseRecord::from(&Rigid::identity());
                    serde_json::json!({
                        "level": level_of(m).get(),
                        "rotation": rec.rotation,
                        "translation": rec.translation,
                    })
                })
                .collect();
            Variant {
                poses_json: serde_json::json!({
                    "schema_version": SCHEMA_VERSION,
                    "deformation_id": id,
                    "forces_N": [],
                    "poses": records,
                    "deformed": false,
                }),
                id,
                poses,
                meshes: meshes.to_vec(),
            }
        })
        .collect()
}

struct VolumeOutput {
    record: VolumeRecord,
    samples: Vec<SampleManifest>,
    failures: Vec<Failure>,
}

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn generate_volume(
    header: &Path,
    vid: &str,
    split: Split,
    config: &PipelineConfig,
    hash: &str,
    out_dir: &Path,
) -> VolumeOutput {
    let mut out = VolumeOutput {
        record: VolumeRecord {
            id: vid.to_string(),
            split,
            levels: Vec::new(),
            deformed: false,
            expected_samples: 0,
            generated_samples: 0,
        },
        samples: Vec::new(),
        failures: Vec::new(),
    };
    let fail = |out: &mut VolumeOutput, sample: Option<String>, stage: &str, e: Error| {
        out.failures.push(Failure {
            volume: vid.to_string(),
            sample_id: sample,
            stage: stage.to_string(),
            message: e.to_string(),
        });
    };
    if let Err(e) = generate_volume_inner(header, vid, config, hash, out_dir, &mut out, &fail) {
        fail(&mut out, None, "volume", e);
    }
    out.record.generated_samples = out.samples.len();
    out
}

type FailFn<'a> = dyn Fn(&mut VolumeOutput, Option<String>, &str, Error) + 'a;

fn generate_volume_inner(
    header: &Path,
    vid: &str,
    config: &PipelineConfig,
    hash: &str,
    out_dir: &Path,
    out: &mut VolumeOutput,
    fail: &FailFn,
) -> Result<()> {
    let meshes = volume_meshes(header, &config.smoothing).map_err(|e| e.context("mesh extraction"))?;
    let levels: Vec<Level> = meshes.iter().map(level_of).collect();
    out.record.levels = levels.clone();
    out.record.expected_samples = levels.len()
        * config.deformation.n_variants
        * config.acquisition.shift_pairs_mm.len()
        * config.conditions.len();

    let vol_dir = out_dir.join("volumes").join(vid);
    let mesh_dir = vol_dir.join("meshes");
    ensure_dir(&mesh_dir)?;
    for m in &meshes {
        write_mesh_ply(
            &mesh_dir.join(format!("{}.ply", level_of(m))),
            m,
            PlyFormat::BinaryLittleEndian,
        )?;
    }

    let variants = if meshes.len() == 5 {
        let deform = DeformConfig {
            seed: derive_seed(config.seed, &format!("deform/{}/{vid}", config.deformation.seed)),
            ..config.deformation.clone()
        };
        let spines = sample_deformations(&meshes, &deform).map_err(|e| e.context("deformation"))?;
        out.record.deformed = true;
        spines
            .into_iter()
            .map(|d| Variant {
                poses_json: d.pose_json(),
                id: d.id,
                poses: d.poses,
                meshes: d.meshes,
            })
            .collect()
    } else {
        undeformed_variants(&meshes, config.deformation.n_variants)
    };

    // Ground truth per level: farthest-point samples of the rest mesh,
    // carried rigidly into each variant so all variants share indices.
    let gt_rest: Vec<PointCloud> = meshes
        .iter()
        .map(|m| {
            let seed = derive_seed(config.seed, &format!("gt/{vid}/{}", level_of(m)));
            resample(&PointCloud::new(m.vertices.clone()), config.masking.gt_points, seed)
        })
        .collect::<Result<_>>()?;

    let mut physics_values: Vec<bool> = Vec::new();
    for c in &config.conditions {
        if !physics_values.contains(&c.physics) {
            physics_values.push(c.physics);
        }
    }

    let sample_dir = out_dir.join("samples").join(vid);
    ensure_dir(&sample_dir)?;
    let mut rows: Vec<((usize, usize, usize, usize), SampleManifest)> = Vec::new();
    for (vi, variant) in variants.iter().enumerate() {
        let var_dir = vol_dir.join(&variant.id);
        ensure_dir(&var_dir)?;
        write_json(&var_dir.join("poses.json"), &variant.poses_json)?;
        let mut gt_paths = Vec::new();
        for (k, level) in levels.iter().enumerate() {
            let gt = gt_rest[k].transformed(&variant.poses[k]);
            let gt_path = var_dir.join(format!("gt_{level}.ply"));
            write_cloud_ply(&gt_path, &gt, PlyFormat::BinaryLittleEndian)?;
            let ann_path = var_dir.join(format!("annotations_{level}.json"));
            write_json(&ann_path, &AnnotationFile::from_points(&gt, *level))?;
            gt_paths.push((rel(&gt_path, out_dir), rel(&ann_path, out_dir)));
        }

        let spine = TriMesh::merge(&variant.meshes);
        for &physics in &physics_values {
            let acquisition = AcquisitionConfig {
                physics_enabled: physics,
                ..config.acquisition.clone()
            };
            let views = match render_views(&spine, &acquisition, &variant.id) {
                Ok(v) => v,
                Err(e) => {
                    fail(
                        out,
                        None,
                        "render",
                        e.context(format!("{} physics={physics}", variant.id)),
                    );
                    continue;
                }
            };
            for (si, view) in views.iter().enumerate() {
                let cloud = view.to_point_cloud();
                let shift = view.provenance.shift_mm;
                for (k, &level) in levels.iter().enumerate() {
                    for (ci, cond) in config
                        .conditions
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.physics == physics)
                    {
                        let id = sample_id(vid, &variant.id, level, shift, *cond);
                        let masked = match mask_vertebra(
                            &cloud,
                            &variant.meshes,
                            level,
                            cond.fusion,
                            config.masking.margin_mm,
                        ) {
                            Ok(m) => m,
                            Err(e) => {
                                fail(out, Some(id), "mask", e);
                                continue;
                            }
                        };
                        let path = sample_dir.join(format!("{id}.ply"));
                        write_cloud_ply(&path, &masked, PlyFormat::BinaryLittleEndian)?;
                        rows.push((
                            (vi, k, si, ci),
                            SampleManifest {
                                rng_seed: derive_seed(config.seed, &format!("sample/{id}")),
                                sample_id: id,
                                source_volume: vid.to_string(),
                                level,
                                deformation_id: variant.id.clone(),
                                shift_pair: shift,
                                fusion: cond.fusion,
                                physics,
                                split: out.record.split,
                                paths: SamplePaths {
                                    partial: rel(&path, out_dir),
                                    gt: gt_paths[k].0.clone(),
                                    annotations: gt_paths[k].1.clone(),
                                },
                                config_hash: hash.to_string(),
                            },
                        ));
                    }
                }
            }
        }
    }
    rows.sort_by_key(|r| r.0);
    out.samples = rows.into_iter().map(|r| r.1).collect();
    Ok(())
}

/// Generates the full dataset for `volumes` (label-map header paths) into
/// `out_dir` and writes `manifest.json`. Volumes are processed in parallel;
/// per-volume and per-sample failures are recorded in the manifest and do
/// not stop the run.
pub fn generate_dataset(volumes: &[PathBuf], config: &PipelineConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    if volumes.is_empty() {
        return Err(Error::EmptyInput("no input volumes".into()));
    }
    let ids = volumes.iter().map(|p| volume_id(p)).collect::<Result<Vec<_>>>()?;
    if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
        return Err(Error::Argument("volume file stems must be unique".into()));
    }
    let splits = assign_splits(&ids, config.split_fractions, config.seed)?;
    ensure_dir(out_dir)?;
    let hash = config.hash();
    let outputs: Vec<VolumeOutput> = volumes
        .par_iter()
        .zip(&ids)
        .map(|(path, vid)| generate_volume(path, vid, splits[vid], config, &hash, out_dir))
        .collect();
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        seed: config.seed,
        split_fractions: config.split_fractions,
        volumes: Vec::new(),
        samples: Vec::new(),
        failures: Vec::new(),
    };
    for o in outputs {
        manifest.volumes.push(o.record);
        manifest.samples.extend(o.samples);
        manifest.failures.extend(o.failures);
    }
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Atlas from the ground truth of `split` volumes: one entry per (volume,
/// level), taken from the first deformation variant, with id `<vid>_L<n>`.
pub fn build_atlas(manifest: &Manifest, root: &Path, split: Split) -> Result<Atlas> {
    let mut chosen: BTreeMap<(String, Level), &SampleManifest> = BTreeMap::new();
    for s in manifest.samples.iter().filter(|s| s.split == split) {
        chosen
            .entry((s.source_volume.clone(), s.level))
            .and_modify(|c| {
                if s.deformation_id < c.deformation_id {
                    *c = s;
                }
            })
            .or_insert(s);
    }
    if chosen.is_empty() {
        return Err(Error::Atlas(format!(
            "no {} samples to build an atlas from",
            split.as_str()
        )));
    }
    let entries = chosen
        .into_iter()
        .map(|((vid, level), s)| {
            let cloud = read_cloud_ply(&root.join(&s.paths.gt))?;
            Ok(AtlasEntry {
                id: atlas_id(&vid, level),
                level,
                cloud: PointCloud::new(cloud.points),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Atlas::new(entries)
}

pub fn atlas_id(volume: &str, level: Level) -> String {
    format!("{volume}_{level}")
}

pub enum Completer {
    Baseline(Atlas),
    /// Shell template with `{in}` and `{out}`.
    External(String),
    /// Returns the ground truth itself; a harness check.
    Identity,
}

impl Completer {
    pub fn name(&self) -> &'static str {
        match self {
            Completer::Baseline(_) => "baseline",
            Completer::External(_) => "external",
            Completer::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_id: String,
    pub source_volume: String,
    pub level: Level,
    pub deformation_id: String,
    pub shift_pair: ShiftPair,
    pub physics: bool,
    pub fusion: bool,
    pub split: Split,
    pub chosen_atlas_id: Option<String>,
    pub expected_atlas_id: Option<String>,
    pub retrieval_correct: Option<bool>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Physics-on vs physics-off samples matched on every other field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub n_pairs: usize,
    /// Per metric: summary over pairs of `physics_off - physics_on`.
    pub off_minus_on: BTreeMap<String, Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub completer: String,
    pub split: Option<Split>,
    pub n_samples: usize,
    pub n_failed: usize,
    pub samples: Vec<SampleResult>,
    /// Group (`all`, `level=L3`, `physics=true`, `fusion=false`,
    /// `physics=true,fusion=false`, ...) -> metric -> summary.
    pub aggregates: BTreeMap<String, BTreeMap<String, Summary>>,
    pub physics_pairs: Option<PairedComparison>,
}

impl BatchReport {
    pub fn metric(&self, group: &str, metric: &str) -> Option<&Summary> {
        self.aggregates.get(group)?.get(metric)
    }
}

fn metric_values(r: &SampleResult) -> Vec<(&'static str, Option<f64>)> {
    let m = r.metrics.as_ref();
    let facet = |left: bool| {
        m.and_then(|m| m.facet_dist_mm)
            .and_then(|f| if left { f.left } else { f.right })
            .map(|f| f.distance_mm)
    };
    vec![
        ("cd_scaled", m.map(|m| m.cd_scaled)),
        ("emd", m.map(|m| m.emd)),
        ("f1", m.map(|m| m.f1)),
        ("precision", m.map(|m| m.precision)),
        ("recall", m.map(|m| m.recall)),
        ("sp_cd", m.and_then(|m| m.sp_cd)),
        ("facet_left_mm", facet(true)),
        ("facet_right_mm", facet(false)),
        ("retrieval_correct", r.retrieval_correct.map(|b| b as u8 as f64)),
    ]
}

fn groups_of(r: &SampleResult) -> Vec<String> {
    vec![
        "all".to_string(),
        format!("level={}", r.level),
        format!("physics={}", r.physics),
        format!("fusion={}", r.fusion),
        format!("physics={},fusion={}", r.physics, r.fusion),
    ]
}

fn aggregate(results: &[SampleResult]) -> BTreeMap<String, BTreeMap<String, Summary>> {
    let mut values: BTreeMap<String, BTreeMap<&'static str, Vec<f64>>> = BTreeMap::new();
    for r in results {
        let vals = metric_values(r);
        for g in groups_of(r) {
            let group = values.entry(g).or_default();
            for (name, v) in &vals {
                let list = group.entry(name).or_default();
                if let Some(v) = v {
                    list.push(*v);
                }
            }
        }
    }
    values
        .into_iter()
        .map(|(g, metrics)| {
            let summaries = metrics
                .into_iter()
                .filter_map(|(name, v)| summarize(&v).map(|s| (name.to_string(), s)))
                .collect();
            (g, summaries)
        })
        .collect()
}

fn pair_key(r: &SampleResult) -> (String, String, Level, u64, u64, bool) {
    (
        r.source_volume.clone(),
        r.deformation_id.clone(),
        r.level,
        r.shift_pair.lateral_mm.to_bits(),
        r.shift_pair.ap_mm.to_bits(),
        r.fusion,
    )
}

fn physics_pairs(results: &[SampleResult]) -> Option<PairedComparison> {
    let on: BTreeMap<_, &SampleResult> = results.iter().filter(|r| r.physics).map(|r| (pair_key(r), r)).collect();
    let mut diffs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut n_pairs = 0;
    for off in results.iter().filter(|r| !r.physics) {
        let Some(on) = on.get(&pair_key(off)) else { continue };
        if off.metrics.is_none() || on.metrics.is_none() {
            continue;
        }
        n_pairs += 1;
        for ((name, a), (_, b)) in metric_values(off).into_iter().zip(metric_values(on)) {
            if let (Some(a), Some(b)) = (a, b) {
                diffs.entry(name.to_string()).or_default().push(a - b);
            }
        }
    }
    (n_pairs > 0).then(|| PairedComparison {
        n_pairs,
        off_minus_on: diffs
            .into_iter()
            .filter_map(|(k, v)| summarize(&v).map(|s| (k, s)))
            .collect(),
    })
}

struct Completed {
    prediction: PointCloud,
    chosen: Option<String>,
}

fn evaluate_sample(
    s: &SampleManifest,
    root: &Path,
    completer: &Completer,
    config: &PipelineConfig,
) -> Result<(Completed, MetricsReport)> {
    let partial = read_cloud_ply(&root.join(&s.paths.partial))?;
    let gt = read_cloud_ply(&root.join(&s.paths.gt))?;
    let annotations: AnnotationFile = read_json(&root.join(&s.paths.annotations))?;
    if partial.is_empty() {
        return Err(Error::EmptyInput("partial view has no points".into()));
    }
    let input = resample(
        &PointCloud::new(partial.points),
        config.masking.partial_points,
        s.rng_seed,
    )?;
    let done = match completer {
        Completer::Baseline(atlas) => {
            let hint = config.baseline.use_level_hint.then_some(s.level);
            let r = complete(&input, atlas, hint)?;
            Completed {
                prediction: r.completion,
                chosen: Some(r.chosen_atlas_id),
            }
        }
        Completer::External(cmd) => Completed {
            prediction: run_external_completer(&input, cmd, None)?,
            chosen: None,
        },
        Completer::Identity => Completed {
            prediction: PointCloud::new(gt.points.clone()),
            chosen: None,
        },
    };
    let sp_pred = spinous_centerline(&done.prediction.points, s.level).ok();
    let facet_pred = facet_centers(&done.prediction.points, s.level);
    let facet_gt = annotations.facets();
    let landmarks = Landmarks {
        sp_pred: sp_pred.as_ref(),
        sp_input: annotations.centerline(),
        facet_pred: &facet_pred,
        facet_gt: &facet_gt,
    };
    let report = evaluate(
        &PointCloud::new(gt.points),
        &done.prediction,
        &landmarks,
        &config.metrics,
    )?;
    Ok((done, report))
}

/// Completes and scores every sample of `split` (all samples when `None`).
/// Per-sample failures become error entries; aggregates cover the rest.
pub fn evaluate_batch(
    manifest: &Manifest,
    root: &Path,
    completer: &Completer,
    config: &PipelineConfig,
    split: Option<Split>,
) -> Result<BatchReport> {
    let selected: Vec<&SampleManifest> = manifest
        .samples
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .collect();
    if selected.is_empty() {
        return Err(Error::Split(match split {
            Some(sp) => format!("no samples in the {} split", sp.as_str()),
            None => "manifest has no samples".into(),
        }));
    }
    let atlas_ids: BTreeSet<&str> = match completer {
        Completer::Baseline(a) => a.entries().iter().map(|e| e.id.as_str()).collect(),
        _ => BTreeSet::new(),
    };
    let results: Vec<SampleResult> = selected
        .par_iter()
        .map(|s| {
            let expected = Some(atlas_id(&s.source_volume, s.level)).filter(|id| atlas_ids.contains(id.as_str()));
            let mut r = SampleResult {
                sample_id: s.sample_id.clone(),
                source_volume: s.source_volume.clone(),
                level: s.level,
                deformation_id: s.deformation_id.clone(),
                shift_pair: s.shift_pair,
                physics: s.physics,
                fusion: s.fusion,
                split: s.split,
                chosen_atlas_id: None,
                expected_atlas_id: expected,
                retrieval_correct: None,
                metrics: None,
                error: None,
            };
            match evaluate_sample(s, root, completer, config) {
                Ok((done, report)) => {
                    r.retrieval_correct = match (&done.chosen, &r.expected_atlas_id) {
                        (Some(c), Some(e)) => Some(c == e),
                        _ => None,
                    };
                    r.chosen_atlas_id = done.chosen;
                    r.metrics = Some(report);
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r
        })
        .collect();
    let n_failed = results.iter().filter(|r| r.error.is_some()).count();
    Ok(BatchReport {
        schema_version: SCHEMA_VERSION,
        config_hash: manifest.config_hash.clone(),
        completer: completer.name().to_string(),
        split,
        n_samples: results.len(),
        n_failed,
        aggregates: aggregate(&results),
        physics_pairs: physics_pairs(&results),
        samples: results,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.json`, `samples.csv` and `aggregates.csv` into `dir`.
pub fn write_report(report: &BatchReport, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join(REPORT_FILE), report)?;
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));

    let path = dir.join(SAMPLES_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec![
        "sample_id",
        "source_volume",
        "level",
        "deformation_id",
        "shift_lateral_mm",
        "shift_ap_mm",
        "physics",
        "fusion",
        "split",
        "chosen_atlas_id",
        "retrieval_correct",
    ];
    let metric_names: Vec<&str> = metric_values(&report.samples[0])
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| *n != "retrieval_correct")
        .collect();
    header.extend(&metric_names);
    header.push("error");
    w.write_record(&header).map_err(csv_err)?;
    for r in &report.samples {
        let mut row = vec![
            r.sample_id.clone(),
            r.source_volume.clone(),
            r.level.to_string(),
            r.deformation_id.clone(),
            r.shift_pair.lateral_mm.to_string(),
            r.shift_pair.ap_mm.to_string(),
            r.physics.to_string(),
            r.fusion.to_string(),
            r.split.as_str().to_string(),
            r.chosen_atlas_id.clone().unwrap_or_default(),
            r.retrieval_correct.map(|b| b.to_string()).unwrap_or_default(),
        ];
        row.extend(
            metric_values(r)
                .into_iter()
                .filter(|(n, _)| *n != "retrieval_correct")
                .map(|(_, v)| opt(v)),
        );
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(AGGREGATES_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["group", "metric", "n", "mean", "median", "q1", "q3", "min", "max"])
        .map_err(csv_err)?;
    let mut write_summary = |group: &str, metric: &str, s: &Summary| {
        w.write_record([
            group.to_string(),
            metric.to_string(),
            s.n.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ])
        .map_err(csv_err)
    };
    for (group, metrics) in &report.aggregates {
        for (metric, s) in metrics {
            write_summary(group, metric, s)?;
        }
    }
    if let Some(p) = &report.physics_pairs {
        for (metric, s) in &p.off_minus_on {
            write_summary("paired:physics_off-physics_on", metric, s)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
