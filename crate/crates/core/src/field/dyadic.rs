use crate::error::{GbdError, Result};
use crate::field::Domain;
use crate::geometry::{Aabb, Vec3};

/// Half-open cube `min + δ(m + (0,1]^d)` of a dyadic lattice anchored at the domain's lower corner.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    pub level: usize,
    pub index: [usize; 3],
    pub bounds: Aabb,
}

impl Cube {
    pub fn side(&self) -> f64 {
        self.bounds.side(0)
    }

    pub fn center(&self) -> Vec3 {
        self.bounds.center()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.volume()
    }

    /// Cells whose centers lie in the cube.
    pub fn cells(&self, domain: &Domain) -> Vec<usize> {
        domain.cells_in_box(&self.bounds)
    }
}

/// All cubes of side `δ_j = δ0 2^{-j}` that fit inside the domain box, in lexicographic order.
#[derive(Clone, Debug)]
pub struct DyadicGrid {
    level: usize,
    delta0: f64,
    delta: f64,
    counts: [usize; 3],
    cubes: Vec<Cube>,
}

impl DyadicGrid {
    pub fn new(domain: &Domain, delta0: f64, level: usize) -> Result<Self> {
        if !(delta0 > 0.0 && delta0.is_finite()) {
            return Err(GbdError::Parameter(format!("base scale must be positive, got {delta0}")));
        }
        let delta = delta0 / (1u64 << level) as f64;
        let h = domain.h();
        if delta < 2.0 * h * (1.0 - 1e-12) {
            return Err(GbdError::Resolution(format!("cube side {delta} is below 2h = {}", 2.0 * h)));
        }
        let dim = domain.dim();
        let bx = domain.bounds();
        let mut counts = [1usize; 3];
        for (a, c) in counts.iter_mut().enumerate().take(dim) {
            *c = (bx.side(a) / delta + 1e-9).floor() as usize;
        }
        let total = counts[0] * counts[1] * counts[2];
        let mut cubes = Vec::with_capacity(total);
        if (0..dim).all(|a| counts[a] > 0) {
            for i0 in 0..counts[0] {
                for i1 in 0..counts[1] {
                    for i2 in 0..counts[2] {
                        let index = [i0, i1, i2];
                        let mut lo = Vec3::zeros();
                        let mut hi = Vec3::zeros();
                        for a in 0..dim {
                            lo[a] = bx.min[a] + index[a] as f64 * delta;
                            hi[a] = lo[a] + delta;
                        }
                        cubes.push(Cube { level, index, bounds: Aabb::new(dim, lo, hi) });
                    }
                }
            }
        }
        Ok(DyadicGrid { level, delta0, delta, counts, cubes })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Position of the cube with lattice index `m`, if it exists at this level.
    pub fn position(&self, m: [usize; 3]) -> Option<usize> {
        if (0..3).all(|a| m[a] < self.counts[a]) && !self.cubes.is_empty() {
            Some((m[0] * self.counts[1] + m[1]) * self.counts[2] + m[2])
        } else {
            None
        }
    }

    /// Position in `coarse` of the cube containing cube `i` of this (finer) grid, or `None` if
    /// it lies in the band the coarse grid leaves uncovered.
    pub fn parent_in(&self, i: usize, coarse: &DyadicGrid) -> Option<usize> {
        let shift = self.level.checked_sub(coarse.level)?;
        let m = self.cubes[i].index;
        coarse.position([m[0] >> shift, m[1] >> shift, m[2] >> shift])
    }

    /// Cube position per cell, `None` for cells in the uncovered band.
    pub fn cell_owner(&self, domain: &Domain) -> Vec<Option<u32>> {
        let mut owner = vec![None; domain.cell_count()];
        for (i, q) in self.cubes.iter().enumerate() {
            for c in q.cells(domain) {
                owner[c] = Some(i as u32);
            }
        }
        owner
    }
}

/// Dyadic cubes at level `j` of base scale `delta0`.
pub fn dyadic_cubes(domain: &Domain, delta0: f64, j: usize) -> Result<DyadicGrid> {
    DyadicGrid::new(domain, delta0, j)
}
