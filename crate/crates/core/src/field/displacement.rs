use std::fmt;
use std::sync::Arc;

use crate::error::{GbdError, Result};
use crate::field::{Domain, JumpFacet};
use crate::geometry::{Aabb, Vec3};

/// Analytic point evaluator attached to a field for off-lattice queries.
pub type Sampler = Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync>;

/// Uniform bin grid over the domain listing the facets whose bounding box meets each bin.
#[derive(Clone, Debug, Default)]
pub(crate) struct FacetIndex {
    dim: usize,
    origin: Vec3,
    bin: f64,
    nb: [usize; 3],
    bins: Vec<Vec<u32>>,
}

impl FacetIndex {
    fn build(domain: &Domain, facets: &[JumpFacet]) -> Self {
        let dim = domain.dim();
        let bx = domain.bounds();
        let bin = 4.0 * domain.h();
        let mut nb = [1usize; 3];
        for (a, n) in nb.iter_mut().enumerate().take(dim) {
            *n = ((bx.side(a) / bin).ceil() as usize).max(1);
        }
        let mut idx = FacetIndex { dim, origin: bx.min, bin, nb, bins: vec![Vec::new(); nb[0] * nb[1] * nb[2]] };
        for (i, f) in facets.iter().enumerate() {
            let fb = f.bbox(dim).expanded(1e-9 * (1.0 + bx.diameter()));
            let (lo, hi) = idx.range(&fb);
            for b0 in lo[0]..=hi[0] {
                for b1 in lo[1]..=hi[1] {
                    for b2 in lo[2]..=hi[2] {
                        let k = (b0 * nb[1] + b1) * nb[2] + b2;
                        idx.bins[k].push(i as u32);
                    }
                }
            }
        }
        idx
    }

    fn range(&self, bx: &Aabb) -> ([usize; 3], [usize; 3]) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..self.dim {
            let l = ((bx.min[a] - self.origin[a]) / self.bin).floor();
            let u = ((bx.max[a] - self.origin[a]) / self.bin).floor();
            let top = (self.nb[a] - 1) as f64;
            lo[a] = l.clamp(0.0, top) as usize;
            hi[a] = u.clamp(0.0, top) as usize;
        }
        (lo, hi)
    }

    /// Facet ids whose bounding box may meet `bx`, sorted and deduplicated.
    pub(crate) fn query(&self, bx: &Aabb) -> Vec<u32> {
        if self.bins.iter().all(|b| b.is_empty()) {
            return Vec::new();
        }
        let (lo, hi) = self.range(bx);
        let mut out = Vec::new();
        for b0 in lo[0]..=hi[0] {
            for b1 in lo[1]..=hi[1] {
                for b2 in lo[2]..=hi[2] {
                    out.extend_from_slice(&self.bins[(b0 * self.nb[1] + b1) * self.nb[2] + b2]);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Vector field sampled at cell centers plus an explicit list of jump facets.
#[derive(Clone)]
pub struct DisplacementField {
    domain: Domain,
    values: Vec<f64>,
    facets: Vec<JumpFacet>,
    sampler: Option<Sampler>,
    index: FacetIndex,
}

impl fmt::Debug for DisplacementField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DisplacementField")
            .field("domain", &self.domain)
            .field("facets", &self.facets.len())
            .field("sampler", &self.sampler.is_some())
            .finish()
    }
}

impl DisplacementField {
    /// Field from flat cell values (`dim` components per cell, row-major cells).
    pub fn new(domain: Domain, values: Vec<f64>, facets: Vec<JumpFacet>) -> Result<Self> {
        let d = domain.dim();
        if values.len() != domain.cell_count() * d {
            return Err(GbdError::Domain(format!(
                "expected {} values, got {}",
                domain.cell_count() * d,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GbdError::Domain(format!("non-finite value at flat position {i}")));
        }
        let tol = 1e-9 * (1.0 + domain.bounds().diameter());
        for (i, f) in facets.iter().enumerate() {
            if f.vertices().iter().any(|v| !domain.bounds().contains_closed(v, tol)) {
                return Err(GbdError::Facet(format!("facet {i} leaves the domain box")));
            }
            if d == 2 && !f.is_segment() || d == 3 && f.is_segment() {
                return Err(GbdError::Facet(format!("facet {i} has the wrong dimension")));
            }
            if !(f.area() > 0.0) {
                return Err(GbdError::Facet(format!("facet {i} has zero measure")));
            }
        }
        let index = FacetIndex::build(&domain, &facets);
        for (i, f) in facets.iter().enumerate() {
            for j in index.query(&f.bbox(d).expanded(tol)) {
                let j = j as usize;
                if j > i && f.overlaps(&facets[j]) {
                    return Err(GbdError::Facet(format!("facets {i} and {j} overlap")));
                }
            }
        }
        Ok(DisplacementField { domain, values, facets, sampler: None, index })
    }

    /// Field sampled from an analytic map, which is kept for off-lattice evaluation.
    pub fn from_fn<F>(domain: Domain, f: F, facets: Vec<JumpFacet>) -> Result<Self>
    where
        F: Fn(&Vec3) -> Vec3 + Send + Sync + 'static,
    {
        let sampler: Sampler = Arc::new(f);
        let mut field = Self::grid_from_fn(domain, &*sampler, facets)?;
        field.sampler = Some(sampler);
        Ok(field)
    }

    /// Field sampled from a map at cell centers only; later queries interpolate.
    pub fn grid_from_fn(domain: Domain, f: &dyn Fn(&Vec3) -> Vec3, facets: Vec<JumpFacet>) -> Result<Self> {
        let d = domain.dim();
        let mut values = Vec::with_capacity(domain.cell_count() * d);
        for c in 0..domain.cell_count() {
            let v = f(&domain.cell_center(c));
            values.extend((0..d).map(|a| v[a]));
        }
        Self::new(domain, values, facets)
    }

    pub fn zeros(domain: Domain) -> Self {
        let n = domain.cell_count() * domain.dim();
        Self::new(domain, vec![0.0; n], Vec::new()).expect("zero field is valid")
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = Some(sampler);
        self
    }

    pub fn without_sampler(mut self) -> Self {
        self.sampler = None;
        self
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn facets(&self) -> &[JumpFacet] {
        &self.facets
    }

    pub fn sampler(&self) -> Option<&Sampler> {
        self.sampler.as_ref()
    }

    #[inline]
    pub fn cell_value(&self, flat: usize) -> Vec3 {
        let d = self.dim();
        let mut v = Vec3::zeros();
        for a in 0..d {
            v[a] = self.values[flat * d + a];
        }
        v
    }

    /// Facet ids whose bounding box may meet `bx`.
    pub(crate) fn facets_near(&self, bx: &Aabb) -> Vec<u32> {
        self.index.query(bx)
    }

    /// True if the closed segment `[p, q]` touches a facet with `|[u]| >= min_amplitude`.
    pub fn segment_hits(&self, p: &Vec3, q: &Vec3, min_amplitude: f64) -> bool {
        let bx = Aabb::of_points(self.dim(), &[*p, *q]).expanded(1e-9);
        self.index.query(&bx).into_iter().any(|i| {
            let f = &self.facets[i as usize];
            f.amplitude() >= min_amplitude && f.touches(p, q)
        })
    }

    /// Total `H^{d-1}` measure of facets with amplitude at least `sigma` (`sigma = 0`: all nonzero jumps).
    pub fn jump_measure(&self, sigma: f64) -> f64 {
        self.facets
            .iter()
            .filter(|f| {
                let a = f.amplitude();
                a > 0.0 && a >= sigma
            })
            .map(|f| f.area())
            .sum()
    }

    /// Point value: exact sampler when present, otherwise multilinear interpolation whose
    /// stencil never reaches across a facet.
    pub fn evaluate(&self, x: &Vec3) -> Result<Vec3> {
        let bx = self.domain.bounds();
        let tol = 1e-12 * (1.0 + bx.diameter());
        if !bx.contains_closed(x, tol) {
            return Err(GbdError::Domain(format!("point {:?} outside the domain box", [x.x, x.y, x.z])));
        }
        let h = self.domain.h();
        let near = self.index.query(&Aabb::new(self.dim(), *x, *x).expanded(3.0 * h));
        for &i in &near {
            if self.facets[i as usize].distance(x) <= tol {
                return Err(GbdError::OnFacet { point: [x.x, x.y, x.z], facet: i as usize });
            }
        }
        if let Some(s) = &self.sampler {
            return Ok(s(x));
        }
        Ok(self.interpolate(x, &near))
    }

    fn reachable(&self, x: &Vec3, c: &Vec3, near: &[u32]) -> bool {
        near.iter().all(|&i| !self.facets[i as usize].touches(x, c))
    }

    fn interpolate(&self, x: &Vec3, near: &[u32]) -> Vec3 {
        let d = self.dim();
        let h = self.domain.h();
        let counts = self.domain.counts();
        let min = self.domain.bounds().min;
        let mut s = [0.0f64; 3];
        let mut base = [0usize; 3];
        for a in 0..d {
            s[a] = (x[a] - min[a]) / h - 0.5;
            base[a] = (s[a].floor().max(0.0) as usize).min(counts[a] - 2);
        }
        if near.is_empty() {
            return self.stencil_value(base, &s);
        }
        // candidate stencils per axis: default pair, then shifted down, then up
        let mut per_axis: [Vec<usize>; 3] = [vec![0], vec![0], vec![0]];
        for a in 0..d {
            let mut c = vec![base[a]];
            if base[a] > 0 {
                c.push(base[a] - 1);
            }
            if base[a] + 2 < counts[a] {
                c.push(base[a] + 1);
            }
            per_axis[a] = c;
        }
        let mut combos: Vec<[usize; 3]> = Vec::new();
        for &i0 in &per_axis[0] {
            for &i1 in &per_axis[1] {
                for &i2 in &per_axis[2] {
                    combos.push([i0, i1, i2]);
                }
            }
        }
        combos.sort_by_key(|c| (0..d).filter(|&a| c[a] != base[a]).count());
        for lo in combos {
            let lo = if d == 2 { [lo[0], lo[1], 0] } else { lo };
            let ok = corners(d).all(|off| {
                let m = [lo[0] + off[0], lo[1] + off[1], lo[2] + off[2]];
                self.reachable(x, &self.domain.center_of(m), near)
            });
            if ok {
                return self.stencil_value(lo, &s);
            }
        }
        // no facet-free stencil: nearest reachable neighbour cell, else the own cell
        let own = self.domain.cell_of_point(x);
        let mut best: Option<(f64, usize)> = None;
        let span = |i: usize, n: usize| (i.saturating_sub(1))..=((i + 1).min(n - 1));
        for i0 in span(own[0], counts[0]) {
            for i1 in span(own[1], counts[1]) {
                for i2 in span(own[2], counts[2]) {
                    let m = [i0, i1, i2];
                    let c = self.domain.center_of(m);
                    if self.reachable(x, &c, near) {
                        let dist = (c - x).norm();
                        if best.is_none_or(|(b, _)| dist < b) {
                            best = Some((dist, self.domain.flat(m)));
                        }
                    }
                }
            }
        }
        self.cell_value(best.map_or(self.domain.flat(own), |(_, f)| f))
    }

    fn stencil_value(&self, lo: [usize; 3], s: &[f64; 3]) -> Vec3 {
        let d = self.dim();
        let mut acc = Vec3::zeros();
        for off in corners(d) {
            let mut w = 1.0;
            for a in 0..d {
                let t = s[a] - lo[a] as f64;
                w *= if off[a] == 1 { t } else { 1.0 - t };
            }
            if w == 0.0 {
                continue;
            }
            let m = [lo[0] + off[0], lo[1] + off[1], lo[2] + off[2]];
            acc += self.cell_value(self.domain.flat(m)) * w;
        }
        acc
    }
}

fn corners(d: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..(1usize << d)).map(|k| [k & 1, (k >> 1) & 1, (k >> 2) & 1])
}
