use crate::error::{GbdError, Result};
use crate::geometry::{Aabb, Vec3};

/// Axis-aligned box Ω sampled on a uniform lattice of cells with spacing `h`.
///
/// Cells are indexed row-major with the first axis slowest:
/// `flat = (i0 * n1 + i1) * n2 + i2` (with `n2 = 1` in 2D).
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    dim: usize,
    bounds: Aabb,
    h: f64,
    counts: [usize; 3],
}

impl Domain {
    pub fn new(dim: usize, min: &[f64], max: &[f64], h: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(GbdError::Domain(format!("dimension must be 2 or 3, got {dim}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(GbdError::Domain(format!("grid spacing must be positive, got {h}")));
        }
        if min.len() != dim || max.len() != dim {
            return Err(GbdError::Domain("bounds must have one entry per axis".into()));
        }
        let mut lo = Vec3::zeros();
        let mut hi = Vec3::zeros();
        let mut counts = [1usize; 3];
        for a in 0..dim {
            let side = max[a] - min[a];
            let n = (side / h).round();
            if !(side > 0.0) || ((side / h) - n).abs() > 1e-9 * n.max(1.0) {
                return Err(GbdError::Domain(format!(
                    "side {side} along axis {a} is not a positive integer multiple of h = {h}"
                )));
            }
            if n < 2.0 {
                return Err(GbdError::Domain(format!("axis {a} needs at least two cells")));
            }
            counts[a] = n as usize;
            lo[a] = min[a];
            hi[a] = max[a];
        }
        Ok(Domain { dim, bounds: Aabb::new(dim, lo, hi), h, counts })
    }

    /// Unit square `[0,1]²` with `n` cells per side.
    pub fn unit_square(n: usize) -> Self {
        Domain::new(2, &[0.0, 0.0], &[1.0, 1.0], 1.0 / n as f64).expect("valid unit square")
    }

    /// Unit cube `[0,1]³` with `n` cells per side.
    pub fn unit_cube(n: usize) -> Self {
        Domain::new(3, &[0.0; 3], &[1.0; 3], 1.0 / n as f64).expect("valid unit cube")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn cell_count(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// `H^{d-1}` measure of one cell face.
    pub fn face_area(&self) -> f64 {
        self.h.powi(self.dim as i32 - 1)
    }

    pub fn volume(&self) -> f64 {
        self.bounds.volume()
    }

    #[inline]
    pub fn flat(&self, m: [usize; 3]) -> usize {
        (m[0] * self.counts[1] + m[1]) * self.counts[2] + m[2]
    }

    #[inline]
    pub fn multi(&self, flat: usize) -> [usize; 3] {
        let i2 = flat % self.counts[2];
        let rest = flat / self.counts[2];
        [rest / self.counts[1], rest % self.counts[1], i2]
    }

    #[inline]
    pub fn center_of(&self, m: [usize; 3]) -> Vec3 {
        let mut c = Vec3::zeros();
        for a in 0..self.dim {
            c[a] = self.bounds.min[a] + (m[a] as f64 + 0.5) * self.h;
        }
        c
    }

    #[inline]
    pub fn cell_center(&self, flat: usize) -> Vec3 {
        self.center_of(self.multi(flat))
    }

    /// Cell containing `p` under the half-open convention `(a, a+h]`, clamped to the grid.
    pub fn cell_of_point(&self, p: &Vec3) -> [usize; 3] {
        let mut m = [0usize; 3];
        for a in 0..self.dim {
            let s = ((p[a] - self.bounds.min[a]) / self.h).ceil() - 1.0;
            m[a] = s.clamp(0.0, (self.counts[a] - 1) as f64) as usize;
        }
        m
    }

    /// Face neighbour of `m` along `axis` in the positive direction, if any.
    #[inline]
    pub fn upper_neighbor(&self, m: [usize; 3], axis: usize) -> Option<[usize; 3]> {
        if m[axis] + 1 < self.counts[axis] {
            let mut n = m;
            n[axis] += 1;
            Some(n)
        } else {
            None
        }
    }

    /// All face neighbours of a cell.
    pub fn neighbors(&self, m: [usize; 3]) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.dim).flat_map(move |a| {
            let lo = if m[a] > 0 {
                let mut n = m;
                n[a] -= 1;
                Some(n)
            } else {
                None
            };
            lo.into_iter().chain(self.upper_neighbor(m, a))
        })
    }

    /// Flat indices of cells whose centers lie in the half-open box `(min, max]`.
    pub fn cells_in_box(&self, bx: &Aabb) -> Vec<usize> {
        let mut ranges = [(0usize, 1usize); 3];
        for a in 0..self.dim {
            // center_i = min + (i + 1/2) h ∈ (lo, hi]
            let lo = ((bx.min[a] - self.bounds.min[a]) / self.h - 0.5).floor() + 1.0;
            let hi = ((bx.max[a] - self.bounds.min[a]) / self.h - 0.5).floor() + 1.0;
            let lo = lo.clamp(0.0, self.counts[a] as f64) as usize;
            let hi = hi.clamp(0.0, self.counts[a] as f64) as usize;
            ranges[a] = (lo, hi.max(lo));
        }
        let mut out = Vec::with_capacity((ranges[0].1 - ranges[0].0) * (ranges[1].1 - ranges[1].0) * (ranges[2].1 - ranges[2].0));
        for i0 in ranges[0].0..ranges[0].1 {
            for i1 in ranges[1].0..ranges[1].1 {
                for i2 in ranges[2].0..ranges[2].1 {
                    out.push(self.flat([i0, i1, i2]));
                }
            }
        }
        out
    }
}
