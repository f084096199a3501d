use serde::{Deserialize, Serialize};

use crate::error::{GbdError, Result};
use crate::geometry::{self, Aabb, FaceRule, Vec3};

/// Oriented piece of the jump set: a segment in 2D or a convex planar polygon in 3D.
///
/// `jump` is `u⁺ − u⁻`, where `u⁺` is the trace on the side the normal points to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpFacet {
    vertices: Vec<Vec3>,
    normal: Vec3,
    jump: Vec3,
}

impl JumpFacet {
    /// Segment `a → b` in the plane; the normal is the direction rotated clockwise.
    pub fn segment(a: Vec3, b: Vec3, jump: Vec3) -> Result<Self> {
        let d = b - a;
        let len = d.norm();
        if !(len > 0.0) {
            return Err(GbdError::Facet("segment has zero length".into()));
        }
        let normal = Vec3::new(d.y / len, -d.x / len, 0.0);
        Self::with_normal(vec![a, b], normal, jump)
    }

    /// Convex planar polygon with the Newell normal of its vertex order.
    pub fn polygon(vertices: Vec<Vec3>, jump: Vec3) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(GbdError::Facet("polygon needs at least three vertices".into()));
        }
        let n = geometry::newell(&vertices);
        if !(n.norm() > 0.0) {
            return Err(GbdError::Facet("polygon has zero area".into()));
        }
        Self::with_normal(vertices, n.normalize(), jump)
    }

    /// Facet in the hyperplane `x[axis] = coord`, spanning `[lo, hi]` in the other axes,
    /// with normal `+e_axis`.
    pub fn axis_aligned(dim: usize, axis: usize, coord: f64, lo: Vec3, hi: Vec3, jump: Vec3) -> Result<Self> {
        let mut normal = Vec3::zeros();
        normal[axis] = 1.0;
        if dim == 2 {
            let other = 1 - axis;
            let mut a = Vec3::zeros();
            let mut b = Vec3::zeros();
            a[axis] = coord;
            b[axis] = coord;
            a[other] = lo[other];
            b[other] = hi[other];
            return Self::with_normal(vec![a, b], normal, jump);
        }
        let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
        let corner = |sp: f64, sq: f64| {
            let mut v = Vec3::zeros();
            v[axis] = coord;
            v[p] = sp;
            v[q] = sq;
            v
        };
        let verts = vec![
            corner(lo[p], lo[q]),
            corner(hi[p], lo[q]),
            corner(hi[p], hi[q]),
            corner(lo[p], hi[q]),
        ];
        Self::with_normal(verts, normal, jump)
    }

    /// Facet with an explicit unit normal; 3D vertices are reordered counter-clockwise about it.
    pub fn with_normal(mut vertices: Vec<Vec3>, normal: Vec3, jump: Vec3) -> Result<Self> {
        if !vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) || !jump.iter().all(|c| c.is_finite()) {
            return Err(GbdError::Facet("non-finite coordinates".into()));
        }
        if (normal.norm() - 1.0).abs() > 1e-9 {
            return Err(GbdError::Facet(format!("normal must be a unit vector, |n| = {}", normal.norm())));
        }
        let normal = normal.normalize();
        if vertices.len() == 2 {
            let d = vertices[1] - vertices[0];
            if d.norm() == 0.0 || normal.dot(&d).abs() > 1e-9 * d.norm() || normal.z != 0.0 {
                return Err(GbdError::Facet("segment normal must be perpendicular in the plane".into()));
            }
        } else {
            let n = geometry::newell(&vertices);
            let area2 = n.norm();
            if !(area2 > 0.0) {
                return Err(GbdError::Facet("facet has zero area".into()));
            }
            if (n / area2).cross(&normal).norm() > 1e-9 {
                return Err(GbdError::Facet("normal is not perpendicular to the facet plane".into()));
            }
            if n.dot(&normal) < 0.0 {
                vertices.reverse();
            }
        }
        Ok(JumpFacet { vertices, normal, jump })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    pub fn jump(&self) -> &Vec3 {
        &self.jump
    }

    /// Euclidean amplitude `|[u]|`.
    pub fn amplitude(&self) -> f64 {
        self.jump.norm()
    }

    pub fn is_segment(&self) -> bool {
        self.vertices.len() == 2
    }

    /// `H^{d-1}` measure (length in 2D, area in 3D).
    pub fn area(&self) -> f64 {
        if self.is_segment() {
            (self.vertices[1] - self.vertices[0]).norm()
        } else {
            geometry::polygon_area(&self.vertices)
        }
    }

    pub fn midpoint(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    pub fn bbox(&self, dim: usize) -> Aabb {
        Aabb::of_points(dim, &self.vertices)
    }

    /// Transversal crossing parameter along the segment `[p, q]`.
    pub fn crossing(&self, p: &Vec3, q: &Vec3) -> Option<f64> {
        if self.is_segment() {
            geometry::segment_crossing_2d(p, q, &self.vertices[0], &self.vertices[1])
        } else {
            geometry::segment_crossing_polygon(p, q, &self.vertices, &self.normal)
        }
    }

    /// Closed-set contact with the segment `[p, q]`, tangential contact included.
    pub fn touches(&self, p: &Vec3, q: &Vec3) -> bool {
        if self.is_segment() {
            geometry::segments_touch_2d(p, q, &self.vertices[0], &self.vertices[1])
        } else {
            geometry::segment_touches_polygon(p, q, &self.vertices, &self.normal)
        }
    }

    pub fn distance(&self, x: &Vec3) -> f64 {
        if self.is_segment() {
            geometry::point_segment_distance(x, &self.vertices[0], &self.vertices[1])
        } else {
            geometry::point_polygon_distance(x, &self.vertices, &self.normal)
        }
    }

    /// Measure of the facet inside `bx`, attributing face-coplanar facets by `rule`.
    pub fn measure_in_box(&self, bx: &Aabb, rule: FaceRule) -> f64 {
        geometry::facet_measure_in_box(&self.vertices, &self.normal, bx, rule)
    }

    /// Positive-measure overlap with another facet (coplanar and intersecting).
    pub fn overlaps(&self, other: &JumpFacet) -> bool {
        if self.is_segment() != other.is_segment() {
            return false;
        }
        if self.normal.cross(&other.normal).norm() > 1e-9 {
            return false;
        }
        let off = self.normal.dot(&(other.vertices[0] - self.vertices[0]));
        let scale = 1.0 + self.area().max(other.area());
        if off.abs() > 1e-10 * scale {
            return false;
        }
        if self.is_segment() {
            let d = (self.vertices[1] - self.vertices[0]).normalize();
            let s = |v: &Vec3| d.dot(&(v - self.vertices[0]));
            let (a0, a1) = (0.0f64, s(&self.vertices[1]));
            let (b0, b1) = {
                let x = s(&other.vertices[0]);
                let y = s(&other.vertices[1]);
                (x.min(y), x.max(y))
            };
            return a1.min(b1) - a0.max(b0) > 1e-10 * scale;
        }
        // clip other against the edges of self
        let mut poly = other.vertices.clone();
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let inward = self.normal.cross(&(b - a));
            let side = |p: &Vec3| inward.dot(&(p - a));
            let mut out = Vec::new();
            for k in 0..poly.len() {
                let cur = poly[k];
                let nxt = poly[(k + 1) % poly.len()];
                let (sc, sn) = (side(&cur), side(&nxt));
                if sc >= 0.0 {
                    out.push(cur);
                }
                if (sc >= 0.0) != (sn >= 0.0) {
                    out.push(cur + (nxt - cur) * (sc / (sc - sn)));
                }
            }
            poly = out;
            if poly.len() < 3 {
                return false;
            }
        }
        geometry::polygon_area(&poly) > 1e-10 * scale
    }
}
