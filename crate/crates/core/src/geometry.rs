//! Low-level geometric predicates on points, segments and convex planar polygons.
//!
//! Points are stored as `Vector3<f64>` in both two and three dimensions; in 2D the
//! third coordinate is zero and polygons degenerate to segments.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Relative tolerance used by the intersection predicates.
pub const GEOM_EPS: f64 = 1e-12;

/// Axis-aligned box `[min, max]` in the first `dim` coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub dim: usize,
    pub min: Vec3,
    pub max: Vec3,
}

/// How facets lying exactly on a box face are attributed to the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceRule {
    /// Open box: facets on any face are excluded.
    Open,
    /// Half-open box `(min, max]`: facets on an upper face count, on a lower face do not.
    HalfOpen,
    /// Closed box: facets on any face count.
    Closed,
}

impl Aabb {
    pub fn new(dim: usize, min: Vec3, max: Vec3) -> Self {
        Aabb { dim, min, max }
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim).map(|a| self.side(a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.side(a)).product()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains_closed(&self, p: &Vec3, tol: f64) -> bool {
        (0..self.dim).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    pub fn contains_open(&self, p: &Vec3) -> bool {
        (0..self.dim).all(|a| p[a] > self.min[a] && p[a] < self.max[a])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..self.dim).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }

    pub fn expanded(&self, by: f64) -> Aabb {
        let mut out = *self;
        for a in 0..self.dim {
            out.min[a] -= by;
            out.max[a] += by;
        }
        out
    }

    pub fn of_points(dim: usize, pts: &[Vec3]) -> Aabb {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for p in pts {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Aabb { dim, min, max }
    }

    /// Parameter interval `[t0, t1]` of the line `origin + t·dir` inside the closed box.
    pub fn clip_line(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..self.dim {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let ta = (self.min[a] - origin[a]) / dir[a];
            let tb = (self.max[a] - origin[a]) / dir[a];
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        if t1 > t0 {
            Some((t0, t1))
        } else {
            None
        }
    }
}

#[inline]
pub fn cross2(a: &Vec3, b: &Vec3) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Crossing parameter `s ∈ [0,1]` of segment `[p,q]` with segment `[a,b]` (2D).
///
/// Parallel segments never cross; use [`segments_touch_2d`] for closed contact.
pub fn segment_crossing_2d(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3) -> Option<f64> {
    let d = q - p;
    let e = b - a;
    let denom = cross2(&d, &e);
    let scale = d.norm() * e.norm();
    if denom.abs() <= GEOM_EPS * scale || scale == 0.0 {
        return None;
    }
    let ap = a - p;
    let s = cross2(&ap, &e) / denom;
    let r = cross2(&ap, &d) / denom;
    let tol = 1e-10;
    if s >= -tol && s <= 1.0 + tol && r >= -tol && r <= 1.0 + tol {
        Some(s.clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Closed-set contact of two segments in 2D, including collinear overlap.
pub fn segments_touch_2d(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3) -> bool {
    if segment_crossing_2d(p, q, a, b).is_some() {
        return true;
    }
    let d = q - p;
    let e = b - a;
    let len = d.norm().max(e.norm());
    if len == 0.0 {
        return (p - a).norm() <= GEOM_EPS;
    }
    // collinear overlap
    let tol = 1e-10 * (1.0 + len);
    if point_segment_distance(a, p, q) <= tol
        || point_segment_distance(b, p, q) <= tol
        || point_segment_distance(p, a, b) <= tol
        || point_segment_distance(q, a, b) <= tol
    {
        return true;
    }
    false
}

pub fn point_segment_distance(x: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let e = b - a;
    let l2 = e.norm_squared();
    if l2 == 0.0 {
        return (x - a).norm();
    }
    let s = ((x - a).dot(&e) / l2).clamp(0.0, 1.0);
    (x - (a + e * s)).norm()
}

/// True if `x` (assumed on the polygon plane) lies inside the convex polygon,
/// whose vertices are counter-clockwise with respect to `normal`.
pub fn inside_convex_polygon(x: &Vec3, verts: &[Vec3], normal: &Vec3, tol: f64) -> bool {
    let n = verts.len();
    for i in 0..n {
        let a = &verts[i];
        let b = &verts[(i + 1) % n];
        let edge = b - a;
        let side = normal.dot(&edge.cross(&(x - a)));
        if side < -tol * edge.norm() {
            return false;
        }
    }
    true
}

/// Crossing parameter `s ∈ [0,1]` of segment `[p,q]` with a convex polygon (3D).
pub fn segment_crossing_polygon(p: &Vec3, q: &Vec3, verts: &[Vec3], normal: &Vec3) -> Option<f64> {
    let dp = normal.dot(&(p - verts[0]));
    let dq = normal.dot(&(q - verts[0]));
    let len = (q - p).norm();
    if (dp - dq).abs() <= GEOM_EPS * len || len == 0.0 {
        return None;
    }
    let s = dp / (dp - dq);
    let tol = 1e-10;
    if !(-tol..=1.0 + tol).contains(&s) {
        return None;
    }
    let x = p + (q - p) * s;
    if inside_convex_polygon(&x, verts, normal, 1e-10) {
        Some(s.clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Closed-set contact of a segment with a convex polygon, including coplanar overlap.
pub fn segment_touches_polygon(p: &Vec3, q: &Vec3, verts: &[Vec3], normal: &Vec3) -> bool {
    if segment_crossing_polygon(p, q, verts, normal).is_some() {
        return true;
    }
    let dp = normal.dot(&(p - verts[0]));
    let dq = normal.dot(&(q - verts[0]));
    let tol = 1e-10 * (1.0 + (q - p).norm());
    if dp.abs() > tol || dq.abs() > tol {
        return false;
    }
    if inside_convex_polygon(p, verts, normal, 1e-10) || inside_convex_polygon(q, verts, normal, 1e-10) {
        return true;
    }
    // coplanar: test against every edge
    let n = verts.len();
    (0..n).any(|i| segment_segment_distance(p, q, &verts[i], &verts[(i + 1) % n]) <= tol)
}

/// Euclidean distance between two segments in 3D.
pub fn segment_segment_distance(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let d1 = q - p;
    let d2 = b - a;
    let r = p - a;
    let aa = d1.dot(&d1);
    let ee = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if aa <= 1e-300 && ee <= 1e-300 {
        return r.norm();
    }
    if aa <= 1e-300 {
        s = 0.0;
        t = (f / ee).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if ee <= 1e-300 {
            t = 0.0;
            s = (-c / aa).clamp(0.0, 1.0);
        } else {
            let bb = d1.dot(&d2);
            let denom = aa * ee - bb * bb;
            let mut s0 = if denom > 1e-300 { ((bb * f - c * ee) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (bb * s0 + f) / ee;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / aa).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((bb - c) / aa).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p + d1 * s) - (a + d2 * t)).norm()
}

/// Distance from a point to a convex planar polygon.
pub fn point_polygon_distance(x: &Vec3, verts: &[Vec3], normal: &Vec3) -> f64 {
    let h = normal.dot(&(x - verts[0]));
    let proj = x - normal * h;
    if inside_convex_polygon(&proj, verts, normal, 0.0) {
        return h.abs();
    }
    let n = verts.len();
    (0..n)
        .map(|i| point_segment_distance(x, &verts[i], &verts[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Area (Newell) of a planar polygon.
pub fn polygon_area(verts: &[Vec3]) -> f64 {
    newell(verts).norm() * 0.5
}

/// Unnormalized Newell normal; its length is twice the polygon area.
pub fn newell(verts: &[Vec3]) -> Vec3 {
    let n = verts.len();
    let mut acc = Vec3::zeros();
    for i in 0..n {
        acc += verts[i].cross(&verts[(i + 1) % n]);
    }
    acc
}

/// Sutherland–Hodgman clip of a polygon against the half-space `s·x[axis] <= s·bound`.
fn clip_polygon_axis(poly: &[Vec3], axis: usize, bound: f64, keep_below: bool) -> Vec<Vec3> {
    let inside = |p: &Vec3| if keep_below { p[axis] <= bound } else { p[axis] >= bound };
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for i in 0..n {
        let cur = &poly[i];
        let nxt = &poly[(i + 1) % n];
        let ci = inside(cur);
        let ni = inside(nxt);
        if ci {
            out.push(*cur);
        }
        if ci != ni {
            let t = (bound - cur[axis]) / (nxt[axis] - cur[axis]);
            let mut p = cur + (nxt - cur) * t;
            p[axis] = bound;
            out.push(p);
        }
    }
    out
}

/// Measure of the part of a facet (segment in 2D, convex polygon in 3D) inside a box.
///
/// Facets lying on a box face (axis-aligned normal, coordinate equal to the face)
/// are attributed according to `rule`.
pub fn facet_measure_in_box(verts: &[Vec3], normal: &Vec3, bx: &Aabb, rule: FaceRule) -> f64 {
    let scale = bx.diameter().max(1e-300);
    let tol = 1e-10 * scale;
    for axis in 0..bx.dim {
        if normal[axis].abs() > 1.0 - 1e-12 {
            let c = verts[0][axis];
            let on_min = (c - bx.min[axis]).abs() <= tol;
            let on_max = (c - bx.max[axis]).abs() <= tol;
            if on_min || on_max {
                let counted = match rule {
                    FaceRule::Open => false,
                    FaceRule::Closed => true,
                    FaceRule::HalfOpen => on_max && !on_min,
                };
                if !counted {
                    return 0.0;
                }
                // clip in the remaining axes only
                let mut flat = *bx;
                flat.min[axis] = c - tol;
                flat.max[axis] = c + tol;
                return clipped_measure(verts, &flat);
            }
        }
    }
    clipped_measure(verts, bx)
}

fn clipped_measure(verts: &[Vec3], bx: &Aabb) -> f64 {
    if verts.len() == 2 {
        let p = verts[0];
        let d = verts[1] - verts[0];
        let len = d.norm();
        if len == 0.0 {
            return 0.0;
        }
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for a in 0..bx.dim {
            if d[a].abs() < 1e-300 {
                if p[a] < bx.min[a] || p[a] > bx.max[a] {
                    return 0.0;
                }
                continue;
            }
            let ta = (bx.min[a] - p[a]) / d[a];
            let tb = (bx.max[a] - p[a]) / d[a];
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        return (t1 - t0).max(0.0) * len;
    }
    let mut poly = verts.to_vec();
    for a in 0..bx.dim {
        poly = clip_polygon_axis(&poly, a, bx.min[a], false);
        if poly.len() < 3 {
            return 0.0;
        }
        poly = clip_polygon_axis(&poly, a, bx.max[a], true);
        if poly.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&poly)
}

/// Skew-symmetric part `(A - Aᵀ)/2`.
pub fn skew_part(a: &Mat3) -> Mat3 {
    (a - a.transpose()) * 0.5
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn sym_part(a: &Mat3) -> Mat3 {
    (a + a.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, 0.0)
    }

    #[test]
    fn crossing_of_perpendicular_segments() {
        let s = segment_crossing_2d(&v(0.0, 0.5), &v(1.0, 0.5), &v(0.5, 0.0), &v(0.5, 1.0));
        assert!((s.unwrap() - 0.5).abs() < 1e-15);
        assert!(segment_crossing_2d(&v(0.0, 0.5), &v(0.4, 0.5), &v(0.5, 0.0), &v(0.5, 1.0)).is_none());
    }

    #[test]
    fn collinear_overlap_touches_but_does_not_cross() {
        let (p, q, a, b) = (v(0.0, 0.0), v(1.0, 0.0), v(0.5, 0.0), v(2.0, 0.0));
        assert!(segment_crossing_2d(&p, &q, &a, &b).is_none());
        assert!(segments_touch_2d(&p, &q, &a, &b));
    }

    #[test]
    fn segment_clip_in_box_respects_face_rule() {
        let bx = Aabb::new(2, v(0.25, 0.0), v(0.5, 0.25));
        let verts = [v(0.5, 0.0), v(0.5, 1.0)];
        let n = Vec3::x();
        assert!((facet_measure_in_box(&verts, &n, &bx, FaceRule::HalfOpen) - 0.25).abs() < 1e-12);
        assert_eq!(facet_measure_in_box(&verts, &n, &bx, FaceRule::Open), 0.0);
        let lower = Aabb::new(2, v(0.5, 0.0), v(0.75, 0.25));
        assert_eq!(facet_measure_in_box(&verts, &n, &lower, FaceRule::HalfOpen), 0.0);
    }

    #[test]
    fn polygon_clip_area() {
        let verts = [
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(0.5, 1.0, 0.0),
            Vec3::new(0.5, 1.0, 1.0),
            Vec3::new(0.5, 0.0, 1.0),
        ];
        let n = Vec3::x();
        let bx = Aabb::new(3, Vec3::new(0.0, 0.25, 0.25), Vec3::new(1.0, 0.75, 0.5));
        assert!((facet_measure_in_box(&verts, &n, &bx, FaceRule::Closed) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn segment_through_square_polygon() {
        let verts = [
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(0.5, 1.0, 0.0),
            Vec3::new(0.5, 1.0, 1.0),
            Vec3::new(0.5, 0.0, 1.0),
        ];
        let n = newell(&verts).normalize();
        let s = segment_crossing_polygon(&Vec3::new(0.0, 0.5, 0.5), &Vec3::new(1.0, 0.5, 0.5), &verts, &n);
        assert!((s.unwrap() - 0.5).abs() < 1e-14);
        let miss = segment_crossing_polygon(&Vec3::new(0.0, 1.5, 0.5), &Vec3::new(1.0, 1.5, 0.5), &verts, &n);
        assert!(miss.is_none());
    }
}
