use serde::{Deserialize, Serialize};

use crate::error::{GbdError, Result};
use crate::field::CaccioppoliPartition;
use crate::geometry::{skew_part, Mat3, Vec3};

/// Infinitesimal rigid motion `x ↦ Wx + b` with `W` skew-symmetric.
///
/// In 2D only the upper-left 2×2 block of `W` and the first two entries of `b` are used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    dim: usize,
    w: Mat3,
    b: Vec3,
}

impl RigidMotion {
    /// Validates exact skew-symmetry (`W + Wᵀ = 0`) and the planar embedding in 2D.
    pub fn new(dim: usize, w: Mat3, b: Vec3) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(GbdError::Parameter(format!("dimension must be 2 or 3, got {dim}")));
        }
        if w + w.transpose() != Mat3::zeros() {
            return Err(GbdError::Parameter("rigid motion gradient must be skew-symmetric".into()));
        }
        if dim == 2 && (w[(0, 2)] != 0.0 || w[(1, 2)] != 0.0 || b.z != 0.0) {
            return Err(GbdError::Parameter("planar rigid motion has out-of-plane components".into()));
        }
        Ok(RigidMotion { dim, w, b })
    }

    /// Rigid motion from the skew part of an arbitrary matrix.
    pub fn from_matrix(dim: usize, m: &Mat3, b: Vec3) -> Self {
        let mut w = skew_part(m);
        let mut b = b;
        if dim == 2 {
            for k in 0..3 {
                w[(k, 2)] = 0.0;
                w[(2, k)] = 0.0;
            }
            b.z = 0.0;
        }
        RigidMotion { dim, w, b }
    }

    /// Planar motion `W = [[0, ω], [−ω, 0]]`.
    pub fn planar(omega: f64, b: Vec3) -> Self {
        let mut w = Mat3::zeros();
        w[(0, 1)] = omega;
        w[(1, 0)] = -omega;
        RigidMotion { dim: 2, w, b: Vec3::new(b.x, b.y, 0.0) }
    }

    /// Spatial motion `x ↦ ω × x + b`.
    pub fn from_axial(omega: Vec3, b: Vec3) -> Self {
        let w = Mat3::new(0.0, -omega.z, omega.y, omega.z, 0.0, -omega.x, -omega.y, omega.x, 0.0);
        RigidMotion { dim: 3, w, b }
    }

    pub fn zero(dim: usize) -> Self {
        RigidMotion { dim, w: Mat3::zeros(), b: Vec3::zeros() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w(&self) -> &Mat3 {
        &self.w
    }

    pub fn b(&self) -> &Vec3 {
        &self.b
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.w * x + self.b
    }

    pub fn sub(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion { dim: self.dim, w: self.w - other.w, b: self.b - other.b }
    }

    pub fn add(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion { dim: self.dim, w: self.w + other.w, b: self.b + other.b }
    }

    pub fn scaled(&self, k: f64) -> RigidMotion {
        RigidMotion { dim: self.dim, w: self.w * k, b: self.b * k }
    }

    /// Axial vector `a` with `Wx = a × x`.
    pub fn axial(&self) -> Vec3 {
        Vec3::new(self.w[(2, 1)], self.w[(0, 2)], self.w[(1, 0)])
    }

    /// `sup_{|x| ≤ 1} |Wx + b|`, in closed form.
    ///
    /// Splitting `b` along and across the rotation axis, the supremum is
    /// `sqrt((|a| + |b⊥|)² + |b∥|²)`.
    pub fn sup_on_unit_ball(&self) -> f64 {
        let a = self.axial();
        let an = a.norm();
        if an == 0.0 {
            return self.b.norm();
        }
        let axis = a / an;
        let b_par = axis * axis.dot(&self.b);
        let b_perp = self.b - b_par;
        ((an + b_perp.norm()).powi(2) + b_par.norm_squared()).sqrt()
    }
}

/// Rigid motion per piece of a Caccioppoli partition: `Σ_n a^n χ_{P_n}`.
#[derive(Clone, Debug)]
pub struct PiecewiseRigidMotion {
    partition: CaccioppoliPartition,
    motions: Vec<RigidMotion>,
}

impl PiecewiseRigidMotion {
    pub fn new(partition: CaccioppoliPartition, motions: Vec<RigidMotion>) -> Result<Self> {
        if motions.len() != partition.piece_count() {
            return Err(GbdError::Parameter(format!(
                "{} motions for {} pieces",
                motions.len(),
                partition.piece_count()
            )));
        }
        Ok(PiecewiseRigidMotion { partition, motions })
    }

    pub fn partition(&self) -> &CaccioppoliPartition {
        &self.partition
    }

    pub fn motions(&self) -> &[RigidMotion] {
        &self.motions
    }

    /// Motion of piece `label` (1-based).
    pub fn motion(&self, label: u32) -> &RigidMotion {
        &self.motions[label as usize - 1]
    }

    /// Value at the center of cell `flat`.
    pub fn at_cell(&self, flat: usize) -> Vec3 {
        let x = self.partition.domain().cell_center(flat);
        self.motion(self.partition.label(flat)).apply(&x)
    }

    /// Value at a point, using the label of the cell containing it.
    pub fn at_point(&self, x: &Vec3) -> Vec3 {
        let dom = self.partition.domain();
        let flat = dom.flat(dom.cell_of_point(x));
        self.motion(self.partition.label(flat)).apply(x)
    }
}
