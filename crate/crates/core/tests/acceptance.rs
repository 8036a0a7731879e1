//! Acceptance checks. Each test prints one `criterion N PASS|FAIL` line to
//! the real stdout (bypassing libtest capture) before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use spinefill_core::baseline::Atlas;
use spinefill_core::deform::{build_spring_system, relax, SpringSystem};
use spinefill_core::mesh::icosphere;
use spinefill_core::meshio::read_cloud_ply;
use spinefill_core::metrics::{
    chamfer, emd, emd_auction, emd_exact, facet_distance, precision_recall_f1, LandmarkAnnotation, Side,
    FACET_THRESHOLD_MM,
};
use spinefill_core::phantom::lumbar_phantom;
use spinefill_core::pipeline::{
    build_atlas, evaluate_batch, generate_dataset, volume_meshes, write_report, BatchReport, Completer, Condition,
    Manifest, PipelineConfig, SmoothingConfig, Split,
};
use spinefill_core::render::{
    default_shift_pairs, place_camera, render_spine, render_views, AcquisitionConfig, PartialCloud, ShiftPair,
};
use spinefill_core::spatial::KdTree;
use spinefill_core::util::seeded_rng;
use spinefill_core::volume::{default_data_path, save_labelmap};
use spinefill_core::{Level, Point3, PointCloud, Rigid, TriMesh, Vec3};

const SEED: u64 = 7;
const N_VOLUMES: u64 = 5;

fn report(n: u32, pass: bool, what: &str, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance criterion {n:>2} {verdict}: {what} [{detail}]");
    let _ = out.flush();
}

fn level(n: u8) -> Level {
    Level::new(n).unwrap()
}

fn write_phantom(dir: &Path, seed: u64) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let header = dir.join(format!("vol{seed:02}.json"));
    save_labelmap(&lumbar_phantom(seed), &header, &default_data_path(&header)).unwrap();
    header
}

/// Smoothed, labelled meshes of phantom `seed`, as dataset generation builds them.
fn phantom_meshes(seed: u64) -> Vec<TriMesh> {
    let dir = tempfile::tempdir().unwrap();
    let header = write_phantom(dir.path(), seed);
    volume_meshes(&header, &SmoothingConfig::default()).unwrap()
}

fn phantom_spine() -> &'static TriMesh {
    static SPINE: OnceLock<TriMesh> = OnceLock::new();
    SPINE.get_or_init(|| TriMesh::merge(&phantom_meshes(SEED)))
}

fn exact_subset(small: &[Point3], big: &[Point3]) -> bool {
    let tree = KdTree::new(big);
    small.iter().all(|p| tree.nearest(p).is_some_and(|(_, d)| d == 0.0))
}

// Criterion 1

#[test]
fn c01_incidence_cap_on_unit_sphere() {
    let sphere = icosphere(Point3::origin(), 1.0, 6).with_label(level(1));
    let mut capped = AcquisitionConfig {
        incidence_max_deg: 60.0,
        ..AcquisitionConfig::default()
    };
    capped.ray_grid_spacing_mm = 0.5;
    let open = AcquisitionConfig {
        physics_enabled: false,
        ..capped.clone()
    };
    let t = Instant::now();
    let a = render_spine(&sphere, &[level(1)], &capped, None, "sphere").unwrap();
    let b = render_spine(&sphere, &[level(1)], &open, None, "sphere").unwrap();
    let elapsed = t.elapsed();
    let ratio = a.len() as f64 / b.len() as f64;

    // The same ratio on a fine lattice shows where the count converges.
    let fine = |c: &AcquisitionConfig| {
        let c = AcquisitionConfig {
            ray_grid_spacing_mm: 0.01,
            ..c.clone()
        };
        render_spine(&sphere, &[level(1)], &c, None, "sphere").unwrap().len() as f64
    };
    let fine_ratio = fine(&capped) / fine(&open);

    let pass = (ratio - 0.5).abs() <= 0.05 * 0.5 && elapsed < Duration::from_secs(5);
    report(
        1,
        pass,
        "incidence cap retains 0.5 of the uncapped unit-sphere render within 5 %",
        &format!(
            "count ratio {ratio:.4} ({}/{} hits), ratio at 0.01 mm pitch {fine_ratio:.4}, {:.2?}",
            a.len(),
            b.len(),
            elapsed
        ),
    );
    assert!(pass, "count ratio {ratio} is not within 5 % of 0.5");
}

// Criterion 2

#[test]
fn c02_scattering_subset_and_count() {
    let spine = phantom_spine();
    let cfg = AcquisitionConfig::default();
    let t = Instant::now();
    let views = render_views(spine, &cfg, "d00").unwrap();
    let plain = render_spine(spine, &spine.levels(), &cfg, None, "d00").unwrap();
    let elapsed = t.elapsed();
    let subsets = views.iter().filter(|v| exact_subset(&v.points, &plain.points)).count();
    let strict = views.iter().filter(|v| v.len() < plain.len()).count();
    let pass = views.len() == 9 && subsets == 9 && elapsed < Duration::from_secs(30);
    report(
        2,
        pass,
        "9 scattered views per spine, each a subset of the unscattered render",
        &format!(
            "{} views, {subsets} exact subsets ({strict} strict), unscattered {} pts, {:.2?}",
            views.len(),
            plain.len(),
            elapsed
        ),
    );
    assert!(pass);
}

// Criterion 3

/// Segment/triangle intersection parameter in (0, 1), no back-face culling.
fn segment_hits(a: &Point3, b: &Point3, tri: [Point3; 3]) -> Option<f64> {
    let d = b - a;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let h = d.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 {
        return None;
    }
    let f = 1.0 / det;
    let s = a - tri[0];
    let u = f * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = f * d.dot(&q);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = f * e2.dot(&q);
    (t > 0.0 && t < 1.0).then_some(t)
}

/// Counts sampled points that have any surface between the camera plane and
/// themselves, more than `eps_mm` before the point.
fn earlier_hits(
    cloud: &PartialCloud,
    meshes: &[&TriMesh],
    origin: Point3,
    post: Vec3,
    samples: usize,
    seed: u64,
) -> usize {
    let eps_mm = 1e-6;
    let mut rng = seeded_rng(seed, "occlusion-oracle");
    let picks: Vec<usize> = if cloud.len() <= samples {
        (0..cloud.len()).collect()
    } else {
        rand::seq::index::sample(&mut rng, cloud.len(), samples).into_vec()
    };
    picks
        .iter()
        .filter(|&&i| {
            let p = cloud.points[i];
            let start = p + post * (origin - p).dot(&post);
            let len = (p - start).norm();
            let cut = 1.0 - eps_mm / len;
            meshes
                .iter()
                .any(|m| (0..m.faces.len()).any(|fi| segment_hits(&start, &p, m.triangle(fi)).is_some_and(|t| t < cut)))
        })
        .count()
}

#[test]
fn c03_occlusion_soundness() {
    let spine = phantom_spine();
    let cfg = AcquisitionConfig::default();
    let levels = spine.levels();
    let cam = place_camera(spine, levels[0], cfg.camera_standoff_mm).unwrap();
    let post = cam.posterior();
    let shifts = default_shift_pairs();
    let mut lines = Vec::new();
    let mut total_bad = 0;
    for (k, shift) in [None, Some(shifts[0]), Some(shifts[8])].into_iter().enumerate() {
        let cloud = render_spine(spine, &levels, &cfg, shift, "d00").unwrap();
        let copy = shift.map(|s: ShiftPair| spine.translated(cam.lateral() * s.lateral_mm + post * s.ap_mm));
        let mut scene = vec![spine];
        scene.extend(copy.as_ref());
        let top = scene
            .iter()
            .flat_map(|m| m.vertices.iter())
            .map(|v| (v - cam.origin).dot(&post))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(top < 0.0, "camera plane must lie outside the scene");
        let bad = earlier_hits(&cloud, &scene, cam.origin, post, 1000, k as u64);
        total_bad += bad;
        lines.push(format!(
            "{}: {bad}/{}",
            shift.map_or("plain".into(), |s| s.tag()),
            cloud.len().min(1000)
        ));
    }
    let pass = total_bad == 0;
    report(
        3,
        pass,
        "no earlier intersection on 1000 retained points per render",
        &lines.join(", "),
    );
    assert!(pass);
}

// Criterion 4

fn max_body_shift(a: &SpringSystem) -> f64 {
    a.bodies.iter().map(|b| b.displacement_mm().norm()).fold(0.0, f64::max)
}

#[test]
fn c04_spring_model_fixed_point() {
    let meshes = phantom_meshes(SEED);
    let sys = build_spring_system(&meshes, SEED).unwrap();
    let dt = 1e-3;
    let timed = |s: &SpringSystem, f: &[Vec3; 5]| {
        let t = Instant::now();
        let out = relax(s, f, dt, 50_000, 1e-8).unwrap();
        (out, t.elapsed())
    };

    let (rest, t0) = timed(&sys, &[Vec3::zeros(); 5]);
    let zero_move = max_body_shift(&rest);

    let mut f = [Vec3::zeros(); 5];
    f[2] = Vec3::new(0.0, 30.0, 0.0);
    let (pushed, t1) = timed(&sys, &f);
    let d: Vec<f64> = pushed.bodies.iter().map(|b| b.displacement_mm().norm()).collect();
    let l3_y = pushed.bodies[2].displacement_mm().y;
    let attenuates = l3_y > 0.0 && d[1] < d[2] && d[3] < d[2];

    let mut fm = [Vec3::zeros(); 5];
    fm[1] = Vec3::new(0.0, -15.0, 0.0);
    fm[2] = Vec3::new(0.0, 30.0, 0.0);
    fm[3] = Vec3::new(0.0, -15.0, 0.0);
    let (a, t2) = timed(&sys, &fm);
    let (b, t3) = timed(&sys.mirrored(), &fm);
    let mut mirror_err: f64 = 0.0;
    for (ba, bb) in a.bodies.iter().zip(&b.bodies) {
        for (va, vb) in ba.posed_mesh().vertices.iter().zip(&bb.posed_mesh().vertices) {
            mirror_err = mirror_err.max((Point3::new(-va.x, va.y, va.z) - vb).norm());
        }
    }
    let slowest = [t0, t1, t2, t3].into_iter().max().unwrap();

    let pass = zero_move <= 1e-6 && attenuates && mirror_err <= 1e-4 && slowest < Duration::from_secs(60);
    report(
        4,
        pass,
        "zero-force fixed point, L3 push attenuates, mirror symmetry",
        &format!(
            "zero-force max {zero_move:.2e} mm; 30 N on L3: dy {l3_y:.3e} mm, |d| L2/L3/L4 {:.3e}/{:.3e}/{:.3e}; \
             mirror err {mirror_err:.2e} mm; slowest relax {slowest:.2?}",
            d[1], d[2], d[3]
        ),
    );
    assert!(pass);
}

// Criterion 5

fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect(),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_emd(p: &PointCloud, q: &PointCloud) -> f64 {
    permutations(p.len())
        .iter()
        .map(|perm| {
            let mut d: Vec<f64> = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (p.points[i] - q.points[j]).norm())
                .collect();
            d.sort_by(f64::total_cmp);
            d.iter().sum::<f64>() / d.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn nn_sq_brute(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    a.points
        .iter()
        .map(|p| {
            b.points
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn brute_chamfer(p: &PointCloud, q: &PointCloud) -> f64 {
    let m = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    (m(nn_sq_brute(p, q)) + m(nn_sq_brute(q, p))) * 1e4
}

fn brute_f1(p: &PointCloud, q: &PointCloud, tau: f64) -> f64 {
    let frac = |v: Vec<f64>| v.iter().filter(|&&d| d.sqrt() <= tau).count() as f64 / v.len() as f64;
    let (pr, re) = (frac(nn_sq_brute(p, q)), frac(nn_sq_brute(q, p)));
    if pr + re > 0.0 {
        2.0 * pr * re / (pr + re)
    } else {
        0.0
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn c05_metric_oracles() {
    let mut rng = seeded_rng(SEED, "metric-oracles");
    let (mut emd_mismatch, mut cd_worst, mut f1_worst) = (0, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let p = random_cloud(&mut rng, n);
        let q = random_cloud(&mut rng, n);
        let r = random_cloud(&mut rng, m);
        if emd(&p, &q).unwrap() != brute_emd(&p, &q) {
            emd_mismatch += 1;
        }
        cd_worst = cd_worst.max(rel(chamfer(&p, &r).unwrap(), brute_chamfer(&p, &r)));
        let tau = rng.random_range(0.2..1.0);
        f1_worst = f1_worst.max(rel(precision_recall_f1(&p, &r, tau).unwrap().2, brute_f1(&p, &r, tau)));
    }
    let p = random_cloud(&mut rng, 64);
    let q = random_cloud(&mut rng, 64);
    let exact = emd_exact(&p, &q).unwrap();
    let approx = emd_auction(&p, &q).unwrap();
    let auction_rel = (approx - exact) / exact;

    let pass = emd_mismatch == 0 && cd_worst <= 1e-12 && f1_worst <= 1e-12 && auction_rel.abs() <= 0.01;
    report(
        5,
        pass,
        "EMD/CD/F1 against brute-force oracles; auction within 1 % at n = 64",
        &format!(
            "EMD mismatches {emd_mismatch}/200, worst CD rel {cd_worst:.1e}, worst F1 rel {f1_worst:.1e}, \
             auction rel {auction_rel:.2e}"
        ),
    );
    assert!(pass);
}

// Criterion 6

fn random_rigid(rng: &mut impl Rng) -> Rigid {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    Rigid::new(
        Vec3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        ),
        axis.normalize() * angle,
    )
}

#[test]
fn c06_metric_invariances() {
    let mut rng = seeded_rng(SEED, "metric-invariance");
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for _ in 0..100 {
        let n = rng.random_range(16..=96);
        let p = random_cloud(&mut rng, n);
        let q = random_cloud(&mut rng, n);
        let tau = 0.25;
        let t = random_rigid(&mut rng);
        let (pt, qt) = (p.transformed(&t), q.transformed(&t));
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let qp = PointCloud::new(perm.iter().map(|&i| q.points[i]).collect());

        let base = [
            chamfer(&p, &q).unwrap(),
            emd(&p, &q).unwrap(),
            precision_recall_f1(&p, &q, tau).unwrap().2,
        ];
        let moved = [
            chamfer(&pt, &qt).unwrap(),
            emd(&pt, &qt).unwrap(),
            precision_recall_f1(&pt, &qt, tau).unwrap().2,
        ];
        let permuted = [
            chamfer(&p, &qp).unwrap(),
            emd(&p, &qp).unwrap(),
            precision_recall_f1(&p, &qp, tau).unwrap().2,
        ];
        for (k, name) in ["CD", "EMD", "F1"].into_iter().enumerate() {
            let e = worst.entry(name).or_insert(0.0);
            *e = e.max(rel(base[k], moved[k])).max(rel(base[k], permuted[k]));
        }
    }
    let pass = worst.values().all(|&e| e <= 1e-9);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        6,
        pass,
        "rigid and permutation invariance over 100 trials",
        &format!("worst rel {detail}"),
    );
    assert!(pass);
}

// Criteria 7, 8, 10

struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    manifest: Manifest,
    report: BatchReport,
    elapsed: Duration,
}

fn pipeline_config() -> PipelineConfig {
    PipelineConfig {
        seed: SEED,
        conditions: vec![
            Condition {
                physics: true,
                fusion: false,
            },
            Condition {
                physics: false,
                fusion: false,
            },
        ],
        ..PipelineConfig::default()
    }
}

fn volumes() -> &'static (tempfile::TempDir, Vec<PathBuf>) {
    static VOLS: OnceLock<(tempfile::TempDir, Vec<PathBuf>)> = OnceLock::new();
    VOLS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let paths = (0..N_VOLUMES).map(|s| write_phantom(dir.path(), s)).collect();
        (dir, paths)
    })
}

fn run_pipeline() -> Run {
    let cfg = pipeline_config();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    let t = Instant::now();
    let manifest = generate_dataset(&volumes().1, &cfg, &root).unwrap();
    let atlas: Atlas = build_atlas(&manifest, &root, Split::Train).unwrap();
    atlas.save(&root.join("atlas")).unwrap();
    let report = evaluate_batch(&manifest, &root, &Completer::Baseline(atlas), &cfg, Some(Split::Train)).unwrap();
    write_report(&report, &root.join("eval")).unwrap();
    Run {
        _tmp: tmp,
        root,
        manifest,
        report,
        elapsed: t.elapsed(),
    }
}

fn first_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(run_pipeline)
}

#[test]
fn c07_end_to_end_self_retrieval() {
    let run = first_run();
    let rows: Vec<_> = run
        .report
        .samples
        .iter()
        .filter(|s| s.expected_atlas_id.is_some())
        .collect();
    let good = |physics: bool| {
        let sel: Vec<_> = rows.iter().filter(|s| s.physics == physics).collect();
        let ok = sel
            .iter()
            .filter(|s| s.retrieval_correct == Some(true) && s.metrics.as_ref().is_some_and(|m| m.cd_scaled < 1.0))
            .count();
        (ok, sel.len())
    };
    let (ok_on, n_on) = good(true);
    let (ok_off, n_off) = good(false);
    let ok = ok_on + ok_off;
    let frac = ok as f64 / rows.len().max(1) as f64;
    let n_volumes = run.manifest.volumes.len();
    let pass = n_volumes == N_VOLUMES as usize
        && run.report.n_failed == 0
        && !rows.is_empty()
        && frac >= 0.95
        && run.elapsed < Duration::from_secs(15 * 60);
    report(
        7,
        pass,
        "atlas self-retrieval with scaled CD < 1 on >= 95 % of samples",
        &format!(
            "{ok}/{} = {:.1} % (physics on {ok_on}/{n_on}, off {ok_off}/{n_off}), {} samples generated, \
             median CD {:.3}, pipeline {:.1?}",
            rows.len(),
            100.0 * frac,
            run.manifest.samples.len(),
            run.report.metric("all", "cd_scaled").map_or(f64::NAN, |s| s.median),
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn c08_physics_ablation_pairs() {
    let run = first_run();
    let key = |s: &spinefill_core::pipeline::SampleManifest| {
        (
            s.source_volume.clone(),
            s.deformation_id.clone(),
            s.level,
            s.shift_pair.tag(),
            s.fusion,
        )
    };
    let on: BTreeMap<_, _> = run
        .manifest
        .samples
        .iter()
        .filter(|s| s.physics)
        .map(|s| (key(s), s))
        .collect();
    let mut pairs = 0;
    let mut supersets = 0;
    let mut strict = 0;
    for off in run.manifest.samples.iter().filter(|s| !s.physics) {
        let Some(on) = on.get(&key(off)) else { continue };
        pairs += 1;
        let a = read_cloud_ply(&run.root.join(&on.paths.partial)).unwrap();
        let b = read_cloud_ply(&run.root.join(&off.paths.partial)).unwrap();
        if exact_subset(&a.points, &b.points) {
            supersets += 1;
            strict += (b.len() > a.len()) as usize;
        }
    }
    let paired = run.report.physics_pairs.as_ref();
    let cd_on = run.report.metric("physics=true", "cd_scaled");
    let cd_off = run.report.metric("physics=false", "cd_scaled");
    let diff = paired.and_then(|p| p.off_minus_on.get("cd_scaled"));
    let exposed = paired.is_some_and(|p| p.n_pairs > 0) && cd_on.is_some() && cd_off.is_some() && diff.is_some();
    let direction = match diff {
        Some(d) if d.median > 0.0 => "physics=false worse",
        Some(d) if d.median < 0.0 => "physics=false better",
        Some(_) => "no change",
        None => "unavailable",
    };
    let pass = pairs > 0 && supersets == pairs && exposed;
    report(
        8,
        pass,
        "physics=false partials are supersets; paired aggregates exposed",
        &format!(
            "{supersets}/{pairs} supersets ({strict} strict); CD median on {:.3} / off {:.3}; \
             paired off-on median {:.3} over {} pairs ({direction})",
            cd_on.map_or(f64::NAN, |s| s.median),
            cd_off.map_or(f64::NAN, |s| s.median),
            diff.map_or(f64::NAN, |s| s.median),
            paired.map_or(0, |p| p.n_pairs),
        ),
    );
    assert!(pass);
}

fn tree_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn c10_determinism() {
    let a = first_run();
    let b = run_pipeline();
    let fa = tree_files(&a.root);
    let fb = tree_files(&b.root);
    let same_names = fa.keys().eq(fb.keys());
    let differing: Vec<_> = fa
        .iter()
        .filter(|(k, v)| fb.get(*k).is_some_and(|w| w != *v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let clouds = fa.keys().filter(|k| k.extension().is_some_and(|e| e == "ply")).count();
    let pass = same_names && differing.is_empty() && fa.contains_key(Path::new("manifest.json"));
    report(
        10,
        pass,
        "same-seed rerun is byte-identical",
        &format!(
            "{} files ({clouds} clouds) compared, names match {same_names}, {} differ{}",
            fa.len(),
            differing.len(),
            differing.first().map(|d| format!(", e.g. {d}")).unwrap_or_default()
        ),
    );
    assert!(pass);
}

// Criterion 9

#[test]
fn c09_facet_threshold() {
    let gt = LandmarkAnnotation::facet(level(4), Side::Left, Point3::new(12.0, 30.0, -4.0));
    let dir = Vec3::new(1.0, -2.0, 2.0).normalize();
    let at = |d: f64| LandmarkAnnotation::facet(level(4), Side::Left, Point3::new(12.0, 30.0, -4.0) + dir * d);
    let near = facet_distance(&at(2.64), &gt).unwrap();
    let far = facet_distance(&at(7.66), &gt).unwrap();
    let pass = near.pass
        && !far.pass
        && (near.distance_mm - 2.64).abs() < 1e-9
        && (far.distance_mm - 7.66).abs() < 1e-9
        && FACET_THRESHOLD_MM == 5.0;
    report(
        9,
        pass,
        "facet distances 2.64 mm pass and 7.66 mm fail at 5 mm",
        &format!(
            "{:.2} mm -> {}, {:.2} mm -> {}",
            near.distance_mm,
            if near.pass { "pass" } else { "fail" },
            far.distance_mm,
            if far.pass { "pass" } else { "fail" }
        ),
    );
    assert!(pass);
}
