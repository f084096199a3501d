//! Grid domain, displacement fields with explicit jump facets, rigid motions,
//! label partitions and dyadic cube lattices.

mod displacement;
mod domain;
mod dyadic;
mod facet;
mod partition;
mod rigid;

pub use displacement::{DisplacementField, Sampler};
pub use domain::Domain;
pub use dyadic::{dyadic_cubes, Cube, DyadicGrid};
pub use facet::JumpFacet;
pub use partition::{CaccioppoliPartition, CellFace};
pub use rigid::{PiecewiseRigidMotion, RigidMotion};
