//! Ultrasound-consistent partial point clouds of lumbar vertebrae and
//! shape-completion metrics.
//!
//! The crate covers the full data path: labeled volumes to smoothed meshes
//! ([`marching_cubes`], [`smoothing`]), spring-network spine deformation
//! ([`deform`]), incidence- and scattering-aware ray casting ([`render`]),
//! per-vertebra masking with neighbouring-cloud fusion ([`mask`]), general
//! and landmark metrics ([`metrics`]), an atlas-retrieval completer
//! ([`baseline`]) and dataset orchestration ([`pipeline`]).

pub mod assignment;
pub mod baseline;
pub mod deform;
pub mod error;
pub mod geometry;
pub mod landmarks;
pub mod marching_cubes;
pub mod mask;
pub mod mesh;
pub mod meshio;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod render;
pub mod smoothing;
pub mod spatial;
pub mod stats;
pub mod util;
pub mod volume;

/// Version tag written into every JSON document the crate produces.
pub const SCHEMA_VERSION: u32 = 1;

pub use error::{Error, Result};
pub use geometry::{Aabb, Level, Point3, PointCloud, PoseRecord, Rigid, Vec3};
pub use mesh::TriMesh;
pub use volume::LabelMap;
