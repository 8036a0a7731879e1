//! Spine curvature variation with a rigid-body and spring model.
//!
//! Each vertebra is a rigid body. Adjacent vertebrae are joined by two
//! spring families: soft inter-body springs between opposing endplates and
//! stiff facet-joint springs between opposing articular regions. L1 and L5
//! are fixed; forces along the anterior-posterior axis on the free bodies
//! bend the chain, and relaxation to equilibrium yields a new curvature.
//!
//! Geometry is kept in millimetres; dynamics run in SI units. With the
//! stiffness and damping values used here the system is far too stiff for
//! an explicit integrator at millisecond steps, so each step is a
//! linearly-implicit backward Euler step over the free bodies' 18 degrees
//! of freedom, with force Jacobians taken by central differences.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, UnitQuaternion};
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Level, Point3, PoseRecord, Rigid, Vec3};
use crate::mesh::TriMesh;
use crate::util::seeded_rng;

pub const INTER_BODY_STIFFNESS_N_PER_M: (f64, f64) = (500.0, 1000.0);
pub const INTER_BODY_COUNT: (usize, usize) = (400, 800);
pub const INTER_BODY_DAMPING_N_S_PER_M: f64 = 3.0;
pub const FACET_STIFFNESS_N_PER_M: f64 = 8000.0;
pub const FACET_COUNT: (usize, usize) = (200, 500);
pub const FACET_DAMPING_N_S_PER_M: f64 = 500.0;
pub const BODY_MASS_KG: f64 = 0.1;

/// Fraction of the vertebral body height forming each endplate region.
pub const ENDPLATE_SLAB: f64 = 0.15;
/// Fraction of the posterior element height forming each facet region.
pub const FACET_SLAB: f64 = 0.20;

/// Displacement beyond which a simulation is declared divergent.
pub const DIVERGENCE_MM: f64 = 200.0;

const MM: f64 = 1e-3;
const FD_STEP_M: f64 = 1e-8;
const FD_STEP_RAD: f64 = 1e-7;
/// Static residual accepted at convergence, relative to the applied load.
const RESIDUAL_REL: f64 = 1e-6;
const RESIDUAL_ABS_N: f64 = 1e-9;
/// Steps between force Jacobian refreshes. The network is close to linear
/// over a few steps, so a stale Jacobian only affects convergence speed.
const JACOBIAN_REFRESH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpringKind {
    InterBody,
    FacetJoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub body_a: usize,
    pub body_b: usize,
    /// Attachment on each body relative to its rest centroid, in the body
    /// frame (mm).
    pub attach_a: Vec3,
    pub attach_b: Vec3,
    pub stiffness_n_per_m: f64,
    pub rest_length_mm: f64,
    pub damping_n_s_per_m: f64,
    pub kind: SpringKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidBody {
    pub level: Level,
    /// The undeformed mesh; the posed mesh is `pose * mesh`.
    pub mesh: TriMesh,
    pub rest_centroid_mm: Point3,
    pub centroid_mm: Point3,
    pub pose: Rigid,
    pub mass_kg: f64,
    /// Inertia tensor about the centroid in the body frame (kg·m²).
    pub inertia_kg_m2: Matrix3<f64>,
    pub velocity_m_s: Vec3,
    pub angular_velocity_rad_s: Vec3,
}

impl RigidBody {
    fn new(level: Level, mesh: TriMesh) -> Result<Self> {
        let c = mesh
            .surface_centroid()
            .ok_or_else(|| Error::EmptyInput(format!("mesh for {level} has no area")))?;
        let ext = mesh.aabb().expect("mesh with area has vertices").extent() * MM;
        let m = BODY_MASS_KG;
        let inertia = Matrix3::from_diagonal(&Vec3::new(
            m / 12.0 * (ext.y * ext.y + ext.z * ext.z),
            m / 12.0 * (ext.x * ext.x + ext.z * ext.z),
            m / 12.0 * (ext.x * ext.x + ext.y * ext.y),
        ));
        Ok(RigidBody {
            level,
            mesh,
            rest_centroid_mm: c,
            centroid_mm: c,
            pose: Rigid::identity(),
            mass_kg: m,
            inertia_kg_m2: inertia,
            velocity_m_s: Vec3::zeros(),
            angular_velocity_rad_s: Vec3::zeros(),
        })
    }

    pub fn posed_mesh(&self) -> TriMesh {
        self.mesh.transformed(&self.pose)
    }

    pub fn displacement_mm(&self) -> Vec3 {
        self.centroid_mm - self.rest_centroid_mm
    }
}

fn world_inertia(b: &RigidBody, rot: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let r = rot.to_rotation_matrix().into_inner();
    r * b.inertia_kg_m2 * r.transpose()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpringSystem {
    pub bodies: Vec<RigidBody>,
    pub springs: Vec<Spring>,
    pub anchored: [bool; 5],
    pub external_forces_n: [Vec3; 5],
}

/// Mutable dynamic state: centroid displacement and orientation per body.
#[derive(Clone)]
struct State {
    u_mm: [Vec3; 5],
    rot: [UnitQuaternion<f64>; 5],
    v: [Vec3; 5],
    w: [Vec3; 5],
}

fn endplate_region(mesh: &TriMesh, centroid: &Point3, superior: bool) -> Vec<Point3> {
    let body: Vec<&Point3> = mesh.vertices.iter().filter(|p| p.y < centroid.y).collect();
    slab(&body, ENDPLATE_SLAB, superior)
}

fn facet_region(mesh: &TriMesh, centroid: &Point3, left: bool, superior: bool) -> Vec<Point3> {
    let arch: Vec<&Point3> = mesh
        .vertices
        .iter()
        .filter(|p| p.y >= centroid.y && ((p.x >= centroid.x) == left))
        .collect();
    slab(&arch, FACET_SLAB, superior)
}

fn slab(points: &[&Point3], fraction: f64, superior: bool) -> Vec<Point3> {
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.z), hi.max(p.z))
    });
    let band = fraction * (hi - lo);
    points
        .iter()
        .filter(|p| if superior { p.z >= hi - band } else { p.z <= lo + band })
        .map(|p| **p)
        .collect()
}

fn check_order(meshes: &[TriMesh]) -> Result<Vec<Point3>> {
    if meshes.len() != 5 {
        return Err(Error::Arity {
            expected: 5,
            got: meshes.len(),
        });
    }
    let mut centroids = Vec::with_capacity(5);
    for (i, m) in meshes.iter().enumerate() {
        if let Some(labels) = &m.vertex_labels {
            if labels.iter().any(|&l| l as usize != i + 1) {
                return Err(Error::Ordering(format!(
                    "mesh {i} is not labelled L{} throughout",
                    i + 1
                )));
            }
        }
        let c = m
            .surface_centroid()
            .ok_or_else(|| Error::EmptyInput(format!("mesh for L{} has no area", i + 1)))?;
        if let Some(prev) = centroids.last().map(|p: &Point3| p.z) {
            if c.z >= prev {
                return Err(Error::Ordering(format!("L{} is not caudal of L{} along +z", i + 1, i)));
            }
        }
        centroids.push(c);
    }
    Ok(centroids)
}

/// Builds the spring network between five vertebra meshes given L1..L5
/// from cranial to caudal. Attachment points are mesh vertices drawn
/// uniformly from the opposing regions; rest lengths equal the undeformed
/// attachment distances.
pub fn build_spring_system(meshes: &[TriMesh], seed: u64) -> Result<SpringSystem> {
    let centroids = check_order(meshes)?;
    let bodies = meshes
        .iter()
        .enumerate()
        .map(|(i, m)| RigidBody::new(Level::ALL[i], m.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeded_rng(seed, "springs");
    let mut springs = Vec::new();

    for a in 0..4 {
        let b = a + 1;
        let (ca, cb) = (centroids[a], centroids[b]);
        let region_err =
            |what: &str, level: usize| Error::AttachmentRegion(format!("no {what} vertices found on L{}", level + 1));

        let ea = endplate_region(&meshes[a], &ca, false);
        let eb = endplate_region(&meshes[b], &cb, true);
        if ea.is_empty() {
            return Err(region_err("inferior endplate", a));
        }
        if eb.is_empty() {
            return Err(region_err("superior endplate", b));
        }
        let n = rng.random_range(INTER_BODY_COUNT.0..=INTER_BODY_COUNT.1);
        for _ in 0..n {
            let k = rng.random_range(INTER_BODY_STIFFNESS_N_PER_M.0..=INTER_BODY_STIFFNESS_N_PER_M.1);
            let pa = *ea.choose(&mut rng).unwrap();
            let pb = *eb.choose(&mut rng).unwrap();
            springs.push(Spring {
                body_a: a,
                body_b: b,
                attach_a: pa - ca,
                attach_b: pb - cb,
                stiffness_n_per_m: k,
                rest_length_mm: 0.0,
                damping_n_s_per_m: INTER_BODY_DAMPING_N_S_PER_M,
                kind: SpringKind::InterBody,
            });
        }

        let n = rng.random_range(FACET_COUNT.0..=FACET_COUNT.1);
        for (side, left) in [true, false].into_iter().enumerate() {
            let fa = facet_region(&meshes[a], &ca, left, false);
            let fb = facet_region(&meshes[b], &cb, left, true);
            if fa.is_empty() {
                return Err(region_err("inferior facet", a));
            }
            if fb.is_empty() {
                return Err(region_err("superior facet", b));
            }
            let count = n / 2 + if side == 0 { n % 2 } else { 0 };
            for _ in 0..count {
                let pa = *fa.choose(&mut rng).unwrap();
                let pb = *fb.choose(&mut rng).unwrap();
                springs.push(Spring {
                    body_a: a,
                    body_b: b,
                    attach_a: pa - ca,
                    attach_b: pb - cb,
                    stiffness_n_per_m: FACET_STIFFNESS_N_PER_M,
                    rest_length_mm: 0.0,
                    damping_n_s_per_m: FACET_DAMPING_N_S_PER_M,
                    kind: SpringKind::FacetJoint,
                });
            }
        }
    }

    let mut system = SpringSystem {
        bodies,
        springs,
        anchored: [true, false, false, false, true],
        external_forces_n: [Vec3::zeros(); 5],
    };
    // Rest lengths from the exact expression used during simulation, so the
    // undeformed configuration carries no force at all.
    let st = system.state();
    for i in 0..system.springs.len() {
        let (xa, xb) = system.attachment_points(&st, i);
        system.springs[i].rest_length_mm = (xb - xa).norm();
    }
    Ok(system)
}

/// Convergence and energy trace of one relaxation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelaxReport {
    pub steps: usize,
    pub converged: bool,
    /// Total mechanical energy (springs + kinetic + external load potential)
    /// after each step, in joules.
    pub energy_j: Vec<f64>,
    pub kinetic_j: f64,
    pub residual_n: f64,
}

impl SpringSystem {
    pub fn free_bodies(&self) -> Vec<usize> {
        (0..5).filter(|&i| !self.anchored[i]).collect()
    }

    pub fn spring_counts(&self, a: usize, kind: SpringKind) -> usize {
        self.springs
            .iter()
            .filter(|s| s.body_a == a && s.body_b == a + 1 && s.kind == kind)
            .count()
    }

    pub fn posed_meshes(&self) -> Vec<TriMesh> {
        self.bodies.iter().map(RigidBody::posed_mesh).collect()
    }

    pub fn poses(&self) -> Vec<Rigid> {
        self.bodies.iter().map(|b| b.pose).collect()
    }

    fn state(&self) -> State {
        let mut st = State {
            u_mm: [Vec3::zeros(); 5],
            rot: [UnitQuaternion::identity(); 5],
            v: [Vec3::zeros(); 5],
            w: [Vec3::zeros(); 5],
        };
        for (i, b) in self.bodies.iter().enumerate() {
            st.u_mm[i] = b.centroid_mm - b.rest_centroid_mm;
            st.rot[i] = b.pose.rotation;
            st.v[i] = b.velocity_m_s;
            st.w[i] = b.angular_velocity_rad_s;
        }
        st
    }

    fn store(&mut self, st: &State) {
        for (i, b) in self.bodies.iter_mut().enumerate() {
            if self.anchored[i] {
                continue;
            }
            b.centroid_mm = b.rest_centroid_mm + st.u_mm[i];
            let r = st.rot[i];
            let t = b.centroid_mm.coords - r * b.rest_centroid_mm.coords;
            b.pose = Isometry3::from_parts(Translation3::from(t), r);
            b.velocity_m_s = st.v[i];
            b.angular_velocity_rad_s = st.w[i];
        }
    }

    fn attachment_points(&self, st: &State, s: usize) -> (Point3, Point3) {
        let sp = &self.springs[s];
        let (a, b) = (sp.body_a, sp.body_b);
        let xa = self.bodies[a].rest_centroid_mm + st.u_mm[a] + st.rot[a] * sp.attach_a;
        let xb = self.bodies[b].rest_centroid_mm + st.u_mm[b] + st.rot[b] * sp.attach_b;
        (xa, xb)
    }

    /// Force and torque (SI, about each centroid, world frame) per body.
    fn wrenches(&self, st: &State, ext: &[Vec3; 5]) -> [(Vec3, Vec3); 5] {
        let mut out = [(Vec3::zeros(), Vec3::zeros()); 5];
        for (i, f) in ext.iter().enumerate() {
            out[i].0 += f;
        }
        for (s, sp) in self.springs.iter().enumerate() {
            let (a, b) = (sp.body_a, sp.body_b);
            let (xa, xb) = self.attachment_points(st, s);
            let d = xb - xa;
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let dir = d / len;
            let ra = (st.rot[a] * sp.attach_a) * MM;
            let rb = (st.rot[b] * sp.attach_b) * MM;
            let va = st.v[a] + st.w[a].cross(&ra);
            let vb = st.v[b] + st.w[b].cross(&rb);
            let stretch = (len - sp.rest_length_mm) * MM;
            let mag = sp.stiffness_n_per_m * stretch + sp.damping_n_s_per_m * (vb - va).dot(&dir);
            // Force on body a, pulling it towards b under tension.
            let f = dir * mag;
            out[a].0 += f;
            out[a].1 += ra.cross(&f);
            out[b].0 -= f;
            out[b].1 -= rb.cross(&f);
        }
        out
    }

    fn generalized(&self, st: &State, ext: &[Vec3; 5], free: &[usize]) -> DVector<f64> {
        let w = self.wrenches(st, ext);
        let mut g = DVector::zeros(6 * free.len());
        for (k, &i) in free.iter().enumerate() {
            g.fixed_rows_mut::<3>(6 * k).copy_from(&w[i].0);
            g.fixed_rows_mut::<3>(6 * k + 3).copy_from(&w[i].1);
        }
        g
    }

    /// Central-difference Jacobians of the generalized forces with respect
    /// to positions and velocities of the free bodies.
    fn jacobians(&self, st: &State, ext: &[Vec3; 5], free: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = 6 * free.len();
        let mut jx = DMatrix::zeros(n, n);
        let mut jv = DMatrix::zeros(n, n);
        for (k, &i) in free.iter().enumerate() {
            for axis in 0..6 {
                let col = 6 * k + axis;
                let h = if axis < 3 { FD_STEP_M } else { FD_STEP_RAD };
                let gp = self.generalized(&Self::perturb_position(st, i, axis, h), ext, free);
                let gm = self.generalized(&Self::perturb_position(st, i, axis, -h), ext, free);
                jx.set_column(col, &((gp - gm) / (2.0 * h)));
                let gp = self.generalized(&Self::perturb_velocity(st, i, axis, h), ext, free);
                let gm = self.generalized(&Self::perturb_velocity(st, i, axis, -h), ext, free);
                jv.set_column(col, &((gp - gm) / (2.0 * h)));
            }
        }
        (jx, jv)
    }

    fn perturb_position(st: &State, i: usize, axis: usize, h: f64) -> State {
        let mut p = st.clone();
        if axis < 3 {
            p.u_mm[i][axis] += h / MM;
        } else {
            let mut e = Vec3::zeros();
            e[axis - 3] = h;
            p.rot[i] = UnitQuaternion::from_scaled_axis(e) * p.rot[i];
        }
        p
    }

    fn perturb_velocity(st: &State, i: usize, axis: usize, h: f64) -> State {
        let mut p = st.clone();
        if axis < 3 {
            p.v[i][axis] += h;
        } else {
            p.w[i][axis - 3] += h;
        }
        p
    }

    fn energy(&self, st: &State, ext: &[Vec3; 5]) -> (f64, f64) {
        let mut potential = 0.0;
        for (s, sp) in self.springs.iter().enumerate() {
            let (xa, xb) = self.attachment_points(st, s);
            let stretch = ((xb - xa).norm() - sp.rest_length_mm) * MM;
            potential += 0.5 * sp.stiffness_n_per_m * stretch * stretch;
        }
        let mut kinetic = 0.0;
        for (i, b) in self.bodies.iter().enumerate() {
            let iw = world_inertia(b, &st.rot[i]);
            kinetic += 0.5 * b.mass_kg * st.v[i].norm_squared() + 0.5 * st.w[i].dot(&(iw * st.w[i]));
            potential -= ext[i].dot(&(st.u_mm[i] * MM));
        }
        (potential + kinetic, kinetic)
    }

    /// Mirror image about the sagittal plane (`x -> -x`).
    pub fn mirrored(&self) -> SpringSystem {
        let flip = |v: Vec3| Vec3::new(-v.x, v.y, v.z);
        let flip_p = |p: Point3| Point3::new(-p.x, p.y, p.z);
        let s = Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        let flip_q = |q: UnitQuaternion<f64>| {
            // S R S for a reflection S keeps the rotation proper.
            UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(q.w, q.i, -q.j, -q.k))
        };
        let bodies = self
            .bodies
            .iter()
            .map(|b| {
                let mut mesh = b.mesh.clone();
                for v in &mut mesh.vertices {
                    v.x = -v.x;
                }
                for f in &mut mesh.faces {
                    f.swap(1, 2);
                }
                let rot = flip_q(b.pose.rotation);
                let centroid = flip_p(b.centroid_mm);
                let rest = flip_p(b.rest_centroid_mm);
                let t = centroid.coords - rot * rest.coords;
                RigidBody {
                    level: b.level,
                    mesh,
                    rest_centroid_mm: rest,
                    centroid_mm: centroid,
                    pose: Isometry3::from_parts(Translation3::from(t), rot),
                    mass_kg: b.mass_kg,
                    inertia_kg_m2: s * b.inertia_kg_m2 * s,
                    velocity_m_s: flip(b.velocity_m_s),
                    angular_velocity_rad_s: -flip(b.angular_velocity_rad_s),
                }
            })
            .collect();
        SpringSystem {
            bodies,
            springs: self
                .springs
                .iter()
                .map(|sp| Spring {
                    attach_a: flip(sp.attach_a),
                    attach_b: flip(sp.attach_b),
                    ..sp.clone()
                })
                .collect(),
            anchored: self.anchored,
            external_forces_n: self.external_forces_n.map(flip),
        }
    }
}

/// Relaxes `system` under `forces_n` (per body, SI; ignored on anchored
/// bodies) until the kinetic energy drops below `ke_eps` with the static
/// force balance satisfied, or `max_steps` is reached.
pub fn relax(
    system: &SpringSystem,
    forces_n: &[Vec3; 5],
    dt_s: f64,
    max_steps: usize,
    ke_eps: f64,
) -> Result<SpringSystem> {
    relax_traced(system, forces_n, dt_s, max_steps, ke_eps).map(|(s, _)| s)
}

/// [`relax`] plus a per-step energy trace.
pub fn relax_traced(
    system: &SpringSystem,
    forces_n: &[Vec3; 5],
    dt_s: f64,
    max_steps: usize,
    ke_eps: f64,
) -> Result<(SpringSystem, RelaxReport)> {
    if !(dt_s > 0.0 && dt_s <= 0.01) {
        return Err(Error::Argument(format!("dt_s must be in (0, 0.01], got {dt_s}")));
    }
    if forces_n.iter().any(|f| !f.iter().all(|c| c.is_finite())) {
        return Err(Error::Argument("external forces must be finite".into()));
    }
    let mut out = system.clone();
    let mut ext = [Vec3::zeros(); 5];
    for i in 0..5 {
        if !out.anchored[i] {
            ext[i] = forces_n[i];
        }
    }
    out.external_forces_n = ext;
    let free = out.free_bodies();
    let n = 6 * free.len();
    let load: f64 = ext.iter().map(|f| f.norm()).sum();
    let residual_tol = RESIDUAL_ABS_N + RESIDUAL_REL * load;

    let mut st = out.state();
    let mut report = RelaxReport::default();
    if n == 0 {
        report.converged = true;
        return Ok((out, report));
    }

    let mut jx = DMatrix::zeros(n, n);
    let mut jv = DMatrix::zeros(n, n);
    for step in 0..max_steps {
        let g = out.generalized(&st, &ext, &free);
        let mut vel = DVector::zeros(n);
        let mut mass = DMatrix::zeros(n, n);
        for (k, &i) in free.iter().enumerate() {
            vel.fixed_rows_mut::<3>(6 * k).copy_from(&st.v[i]);
            vel.fixed_rows_mut::<3>(6 * k + 3).copy_from(&st.w[i]);
            let b = &out.bodies[i];
            for a in 0..3 {
                mass[(6 * k + a, 6 * k + a)] = b.mass_kg;
            }
            let iw = world_inertia(b, &st.rot[i]);
            mass.view_mut((6 * k + 3, 6 * k + 3), (3, 3)).copy_from(&iw);
        }

        if step % JACOBIAN_REFRESH == 0 {
            (jx, jv) = out.jacobians(&st, &ext, &free);
        }

        let a = &mass - &jv * dt_s - &jx * (dt_s * dt_s);
        let rhs = (&g + &jx * &vel * dt_s) * dt_s;
        let dv = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Instability("singular system matrix".into()))?;
        let vel = vel + dv;

        for (k, &i) in free.iter().enumerate() {
            st.v[i] = vel.fixed_rows::<3>(6 * k).into();
            st.w[i] = vel.fixed_rows::<3>(6 * k + 3).into();
            st.u_mm[i] += st.v[i] * (dt_s / MM);
            st.rot[i] = UnitQuaternion::from_scaled_axis(st.w[i] * dt_s) * st.rot[i];
            st.rot[i].renormalize();
            let moved = st.u_mm[i].norm();
            if !moved.is_finite() || moved > DIVERGENCE_MM {
                return Err(Error::Instability(format!(
                    "L{} moved {moved:.3e} mm at step {step}",
                    i + 1
                )));
            }
        }

        let (energy, kinetic) = out.energy(&st, &ext);
        report.energy_j.push(energy);
        report.steps = step + 1;
        report.kinetic_j = kinetic;
        if kinetic < ke_eps {
            let residual = out.generalized(&st, &ext, &free).norm();
            report.residual_n = residual;
            if residual <= residual_tol {
                report.converged = true;
                break;
            }
        }
    }
    out.store(&st);
    Ok((out, report))
}

/// Deformation settings used by dataset generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    pub n_variants: usize,
    #[serde(rename = "force_max_N")]
    pub force_max_n: f64,
    pub dt_s: f64,
    pub max_steps: usize,
    pub ke_eps: f64,
    pub seed: u64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            n_variants: 3,
            force_max_n: DEFAULT_FORCE_MAX_N,
            dt_s: 1e-3,
            max_steps: 50_000,
            ke_eps: 1e-8,
            seed: 0,
        }
    }
}

/// Default force bound. The spring network is stiff (several MN/m per
/// joint), so kilonewton loads are needed for millimetre-scale curvature
/// changes.
pub const DEFAULT_FORCE_MAX_N: f64 = 2000.0;

/// One deformed spine.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformedSpine {
    pub id: String,
    pub forces_n: [f64; 5],
    pub poses: Vec<Rigid>,
    pub meshes: Vec<TriMesh>,
    pub report: RelaxReport,
}

impl DeformedSpine {
    pub fn pose_json(&self) -> serde_json::Value {
        let poses: Vec<_> = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let rec = PoseRecord::from(p);
                serde_json::json!({
                    "level": i + 1,
                    "rotation": rec.rotation,
                    "translation": rec.translation,
                })
            })
            .collect();
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "deformation_id": self.id,
            "forces_N": self.forces_n,
            "poses": poses,
        })
    }
}

/// Draws `config.n_variants` independent anterior-posterior load sets,
/// uniform in `[-force_max, force_max]` per body, and relaxes the spine
/// under each. Variants run in parallel; results are in variant order.
pub fn sample_deformations(meshes: &[TriMesh], config: &DeformConfig) -> Result<Vec<DeformedSpine>> {
    if config.n_variants == 0 {
        return Err(Error::Argument("n_variants must be at least 1".into()));
    }
    if !(config.force_max_n >= 0.0 && config.force_max_n.is_finite()) {
        return Err(Error::Argument("force_max_N must be finite and non-negative".into()));
    }
    let system = build_spring_system(meshes, config.seed)?;
    (0..config.n_variants)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeded_rng(config.seed, &format!("forces/{k}"));
            let mut forces = [0.0; 5];
            for f in &mut forces {
                *f = if config.force_max_n > 0.0 {
                    rng.random_range(-config.force_max_n..=config.force_max_n)
                } else {
                    0.0
                };
            }
            let vecs = forces.map(|f| Vec3::new(0.0, f, 0.0));
            let (relaxed, report) = relax_traced(&system, &vecs, config.dt_s, config.max_steps, config.ke_eps)?;
            let poses = relaxed.poses();
            Ok(DeformedSpine {
                id: format!("d{k:02}"),
                forces_n: forces,
                meshes: meshes.iter().zip(&poses).map(|(m, p)| m.transformed(p)).collect(),
                poses,
                report,
            })
        })
        .collect()
}
