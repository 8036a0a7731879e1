//! `spinefill` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure
//! (a summary of failed items is printed to stderr).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spinefill_core::baseline::{complete, run_external_completer, Atlas};
use spinefill_core::deform::{sample_deformations, DeformConfig};
use spinefill_core::geometry::{Level, PointCloud};
use spinefill_core::landmarks::{facet_centers, spinous_centerline};
use spinefill_core::mask::{mask_vertebra, resample};
use spinefill_core::meshio::{read_cloud_ply, read_mesh, write_cloud_ply, write_mesh_ply, PlyFormat};
use spinefill_core::metrics::{evaluate, Landmarks};
use spinefill_core::phantom::lumbar_phantom;
use spinefill_core::pipeline::{
    build_atlas, evaluate_batch, generate_dataset, volume_meshes, write_report, AnnotationFile, Completer, Manifest,
    PipelineConfig, Split, MANIFEST_FILE,
};
use spinefill_core::render::{render_views, AcquisitionConfig};
use spinefill_core::volume::save_labelmap;
use spinefill_core::{TriMesh, SCHEMA_VERSION};

#[derive(Parser)]
#[command(
    name = "spinefill",
    version,
    about = "Ultrasound-consistent vertebra point clouds and completion metrics"
)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract and smooth per-level meshes from a label volume.
    ExtractMesh {
        #[arg(long)]
        volume: PathBuf,
    },
    /// Sample spring-model deformations of a 5-level spine.
    Deform {
        /// Directory with L1.ply .. L5.ply.
        #[arg(long)]
        meshes: PathBuf,
    },
    /// Render the partial views of a spine.
    Render {
        /// Directory of per-level meshes or a single labelled spine mesh.
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum)]
        physics: Option<Switch>,
    },
    /// Cut one vertebra's partial view out of a spine cloud.
    Mask {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        level: u8,
        #[arg(long, value_enum, default_value = "on")]
        fusion: Switch,
    },
    /// Generate a dataset from label volumes.
    GenDataset {
        #[arg(long, num_args = 1.., required = true)]
        volumes: Vec<PathBuf>,
    },
    /// Reassign subject-level splits in a manifest (rewritten in place
    /// unless --out is given).
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// train,val,test fractions.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Build a retrieval atlas from one split of a dataset.
    BuildAtlas {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Complete a partial cloud with the atlas baseline.
    Complete {
        #[arg(long)]
        partial: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        level: Option<u8>,
    },
    /// Complete a partial cloud with an external command.
    CompleteExt {
        #[arg(long)]
        partial: PathBuf,
        /// Shell template containing {in} and {out}.
        #[arg(long)]
        cmd: String,
    },
    /// Score one completion against its ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth annotation file; enables SP-CD and facet distances.
        #[arg(long, requires = "level")]
        annotations: Option<PathBuf>,
        #[arg(long)]
        level: Option<u8>,
    },
    /// Complete and score every sample of a dataset split.
    EvalBatch {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        completer: CompleterArgs,
        /// Split to evaluate; `all` for every sample.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write synthetic lumbar label volumes.
    Phantom {
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct CompleterArgs {
    /// Atlas directory for the baseline completer.
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// External completer template.
    #[arg(long)]
    cmd: Option<String>,
    /// Use the ground truth as the completion.
    #[arg(long)]
    identity: bool,
}

enum Outcome {
    Done,
    Partial(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(summary)) => {
            eprintln!("{summary}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(path) => Ok(PipelineConfig::load(path, cli.seed)?),
        None => {
            let config = PipelineConfig {
                seed: cli.seed.unwrap_or(0),
                ..PipelineConfig::default()
            };
            config.validate()?;
            Ok(config)
        }
    }
}

fn out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| anyhow!("--out is required for this command"))
}

fn level(n: u8) -> Result<Level> {
    Ok(Level::new(n)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Loads `L<n>.ply` files from a directory, labelling each mesh by its
/// file name when the file carries no labels.
fn load_mesh_dir(dir: &Path) -> Result<Vec<TriMesh>> {
    let mut meshes = Vec::new();
    for l in Level::ALL {
        let path = dir.join(format!("{l}.ply"));
        if path.is_file() {
            let mut m = read_mesh(&path)?;
            if m.vertex_labels.is_none() {
                m = m.with_label(l);
            }
            meshes.push(m);
        }
    }
    if meshes.is_empty() {
        bail!("no L1.ply .. L5.ply meshes in {}", dir.display());
    }
    Ok(meshes)
}

fn write_mesh_dir(dir: &Path, meshes: &[TriMesh]) -> Result<()> {
    create_dir(dir)?;
    for m in meshes {
        let l = m.levels()[0];
        write_mesh_ply(&dir.join(format!("{l}.ply")), m, PlyFormat::BinaryLittleEndian)?;
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        Ok(None)
    } else {
        Ok(Some(s.parse()?))
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::ExtractMesh { volume } => {
            let dir = out(cli)?;
            let meshes = volume_meshes(volume, &cfg.smoothing)?;
            write_mesh_dir(dir, &meshes)?;
            println!("wrote {} meshes to {}", meshes.len(), dir.display());
        }
        Command::Deform { meshes } => {
            let dir = out(cli)?;
            let meshes = load_mesh_dir(meshes)?;
            let deform = DeformConfig {
                seed: cfg.seed,
                ..cfg.deformation.clone()
            };
            for d in sample_deformations(&meshes, &deform)? {
                let vdir = dir.join(&d.id);
                write_mesh_dir(&vdir, &d.meshes)?;
                write_json(&vdir.join("poses.json"), &d.pose_json())?;
                if !d.report.converged {
                    eprintln!(
                        "warning: {} stopped after {} steps without converging",
                        d.id, d.report.steps
                    );
                }
            }
            println!("wrote {} variants to {}", deform.n_variants, dir.display());
        }
        Command::Render { mesh, physics } => {
            let dir = out(cli)?;
            let spine = if mesh.is_dir() {
                TriMesh::merge(&load_mesh_dir(mesh)?)
            } else {
                read_mesh(mesh)?
            };
            let acquisition = AcquisitionConfig {
                physics_enabled: physics.map_or(cfg.acquisition.physics_enabled, Switch::on),
                ..cfg.acquisition.clone()
            };
            let views = render_views(&spine, &acquisition, "input")?;
            create_dir(dir)?;
            let mut index = Vec::new();
            for (k, v) in views.iter().enumerate() {
                let name = format!("view_{k}_{}.ply", v.provenance.shift_mm.tag());
                write_cloud_ply(&dir.join(&name), &v.to_point_cloud(), PlyFormat::BinaryLittleEndian)?;
                index.push(serde_json::json!({
                    "file": name,
                    "points": v.len(),
                    "provenance": v.provenance,
                }));
            }
            write_json(
                &dir.join("views.json"),
                &serde_json::json!({ "schema_version": SCHEMA_VERSION, "views": index }),
            )?;
            println!("wrote {} views to {}", views.len(), dir.display());
        }
        Command::Mask {
            cloud,
            gt_dir,
            level: l,
            fusion,
        } => {
            let path = out(cli)?;
            let cloud = read_cloud_ply(cloud)?;
            let meshes = load_mesh_dir(gt_dir)?;
            let masked = mask_vertebra(&cloud, &meshes, level(*l)?, fusion.on(), cfg.masking.margin_mm)?;
            write_cloud_ply(path, &masked, PlyFormat::BinaryLittleEndian)?;
            println!("{} points", masked.len());
        }
        Command::GenDataset { volumes } => {
            let dir = out(cli)?;
            let manifest = generate_dataset(volumes, &cfg, dir)?;
            println!(
                "{} samples from {} volumes; manifest {}",
                manifest.samples.len(),
                manifest.volumes.len(),
                dir.join(MANIFEST_FILE).display()
            );
            if manifest.has_failures() {
                let mut s = format!("{} failures:", manifest.failures.len());
                for f in &manifest.failures {
                    s.push_str(&format!(
                        "\n  {} {} [{}]: {}",
                        f.volume,
                        f.sample_id.as_deref().unwrap_or("-"),
                        f.stage,
                        f.message
                    ));
                }
                return Ok(Outcome::Partial(s));
            }
        }
        Command::Split { manifest, fractions } => {
            let mut m = Manifest::load(manifest)?;
            let fractions = match fractions.as_deref() {
                Some(&[a, b, c]) => [a, b, c],
                Some(_) => bail!("--fractions takes exactly three values"),
                None => cfg.split_fractions,
            };
            let seed = cli.seed.unwrap_or(m.seed);
            m.resplit(fractions, seed)?;
            let target = cli.out.clone().unwrap_or_else(|| manifest.clone());
            m.save(&target)?;
            for s in Split::ALL {
                let n = m.volumes.iter().filter(|v| v.split == s).count();
                println!("{}: {n} volumes", s.as_str());
            }
        }
        Command::BuildAtlas { manifest, split } => {
            let dir = out(cli)?;
            let m = Manifest::load(manifest)?;
            let root = manifest.parent().unwrap_or(Path::new("."));
            let split = parse_split(split)?.ok_or_else(|| anyhow!("the atlas needs a single split"))?;
            let atlas = build_atlas(&m, root, split)?;
            atlas.save(dir)?;
            println!("atlas of {} entries in {}", atlas.len(), dir.display());
        }
        Command::Complete {
            partial,
            atlas,
            level: l,
        } => {
            let path = out(cli)?;
            let atlas = Atlas::load(atlas)?;
            let raw = read_cloud_ply(partial)?;
            let input = resample(&PointCloud::new(raw.points), cfg.masking.partial_points, cfg.seed)?;
            let hint = l.map(level).transpose()?;
            let r = complete(&input, &atlas, hint)?;
            write_cloud_ply(path, &r.completion, PlyFormat::BinaryLittleEndian)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "schema_version": SCHEMA_VERSION,
                    "chosen_atlas_id": r.chosen_atlas_id,
                    "score": r.score,
                    "candidate_scores": r.candidate_scores,
                }))?
            );
        }
        Command::CompleteExt { partial, cmd } => {
            let path = out(cli)?;
            let cloud = read_cloud_ply(partial)?;
            let completion = run_external_completer(&cloud, cmd, None)?;
            write_cloud_ply(path, &completion, PlyFormat::BinaryLittleEndian)?;
            println!("{} points", completion.len());
        }
        Command::Eval {
            gt,
            pred,
            annotations,
            level: l,
        } => {
            let gt = read_cloud_ply(gt)?;
            let pred = read_cloud_ply(pred)?;
            let ann: Option<AnnotationFile> = annotations
                .as_ref()
                .map(|p| -> Result<AnnotationFile> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) })
                .transpose()?;
            let report = match (ann, l) {
                (Some(ann), Some(l)) => {
                    let l = level(*l)?;
                    let sp = spinous_centerline(&pred.points, l).ok();
                    let facets = facet_centers(&pred.points, l);
                    let facet_gt = ann.facets();
                    let marks = Landmarks {
                        sp_pred: sp.as_ref(),
                        sp_input: ann.centerline(),
                        facet_pred: &facets,
                        facet_gt: &facet_gt,
                    };
                    evaluate(&gt, &pred, &marks, &cfg.metrics)?
                }
                _ => evaluate(&gt, &pred, &Landmarks::default(), &cfg.metrics)?,
            };
            let doc = serde_json::json!({ "schema_version": SCHEMA_VERSION, "report": report });
            match &cli.out {
                Some(p) => write_json(p, &doc)?,
                None => println!("{}", serde_json::to_string_pretty(&doc)?),
            }
        }
        Command::EvalBatch {
            manifest,
            completer,
            split,
        } => {
            let dir = out(cli)?;
            let m = Manifest::load(manifest)?;
            let root = manifest.parent().unwrap_or(Path::new("."));
            let completer = match (completer.atlas.as_ref(), completer.cmd.as_ref()) {
                (Some(a), _) => Completer::Baseline(Atlas::load(a)?),
                (_, Some(c)) => Completer::External(c.clone()),
                _ => Completer::Identity,
            };
            let report = evaluate_batch(&m, root, &completer, &cfg, parse_split(split)?)?;
            write_report(&report, dir)?;
            println!(
                "evaluated {} samples ({} failed); report in {}",
                report.n_samples,
                report.n_failed,
                dir.display()
            );
            if report.n_failed > 0 {
                let mut s = format!("{} samples failed:", report.n_failed);
                for r in report.samples.iter().filter(|r| r.error.is_some()) {
                    s.push_str(&format!("\n  {}: {}", r.sample_id, r.error.as_deref().unwrap_or("")));
                }
                return Ok(Outcome::Partial(s));
            }
        }
        Command::Phantom { count } => {
            let dir = out(cli)?;
            create_dir(dir)?;
            for k in 0..*count {
                let map = lumbar_phantom(cfg.seed.wrapping_add(k as u64));
                let header = dir.join(format!("phantom{k:02}.json"));
                save_labelmap(&map, &header, &header.with_extension("raw"))?;
            }
            println!("wrote {count} volumes to {}", dir.display());
        }
    }
    Ok(Outcome::Done)
}
