//! Discrete toolkit for displacement fields with jumps: slice measures, rigid-motion
//! fitting on cubes, multiscale piecewise-rigid partitions and compactness experiments.

pub mod compactness;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod korn;
pub mod partition_builder;
pub mod slicing;
pub mod suites;

pub use compactness::{EnergyMode, SequenceSpec};
pub use error::{GbdError, Result};
pub use field::{
    dyadic_cubes, CaccioppoliPartition, CellFace, Cube, DisplacementField, Domain, DyadicGrid, JumpFacet,
    PiecewiseRigidMotion, RigidMotion, Sampler,
};
pub use geometry::{Aabb, Mat3, Vec3};
pub use korn::{CubeFit, FitOptions, CALIBRATED_C};
pub use partition_builder::{BuildOptions, BuildResult};
