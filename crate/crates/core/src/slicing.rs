//! One-dimensional restrictions `t ↦ u(y + tξ)·ξ` of a field and the variation measures built from them.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{GbdError, Result};
use crate::field::{DisplacementField, Domain};
use crate::geometry::{sym_part, Aabb, Mat3, Vec3};

/// Amplitude at and above which a jump belongs to the capped set `J¹`.
pub const J1_THRESHOLD: f64 = 1.0;

/// Finite union of closed parameter intervals, kept sorted and merged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalSet {
    parts: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn new(mut parts: Vec<(f64, f64)>) -> Self {
        parts.retain(|(a, b)| b > a);
        parts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(parts.len());
        for (a, b) in parts {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        IntervalSet { parts: merged }
    }

    pub fn full(a: f64, b: f64) -> Self {
        Self::new(vec![(a, b)])
    }

    pub fn parts(&self) -> &[(f64, f64)] {
        &self.parts
    }

    pub fn contains(&self, t: f64) -> bool {
        self.parts.iter().any(|&(a, b)| a <= t && t <= b)
    }

    /// Length of `[a, b] ∩ self`.
    pub fn overlap(&self, a: f64, b: f64) -> f64 {
        self.parts.iter().map(|&(p, q)| (q.min(b) - p.max(a)).max(0.0)).sum()
    }
}

/// A jump of the slice at parameter `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceJump {
    pub t: f64,
    /// `û(t⁺) − û(t⁻)`.
    pub amplitude: f64,
    /// `|[u]|` of the facet crossed, which decides membership in `J¹_u`.
    pub facet_amplitude: f64,
    pub facet: Option<usize>,
}

/// Sampled slice with its jumps; samples are split into jump-free segments.
#[derive(Clone, Debug)]
pub struct SliceFunction {
    origin: Vec3,
    xi: Vec3,
    range: (f64, f64),
    t: Vec<f64>,
    values: Vec<f64>,
    jumps: Vec<SliceJump>,
    // sample index ranges, one more than the number of jumps
    segments: Vec<(usize, usize)>,
}

impl SliceFunction {
    /// Slice from raw samples and `(t, amplitude)` jumps placed strictly between samples.
    pub fn from_parts(t: Vec<f64>, values: Vec<f64>, jumps: Vec<(f64, f64)>) -> Result<Self> {
        let jumps = jumps
            .into_iter()
            .map(|(t, a)| SliceJump { t, amplitude: a, facet_amplitude: a.abs(), facet: None })
            .collect();
        Self::assemble(Vec3::zeros(), Vec3::x(), t, values, jumps)
    }

    fn assemble(origin: Vec3, xi: Vec3, t: Vec<f64>, values: Vec<f64>, jumps: Vec<SliceJump>) -> Result<Self> {
        if t.len() != values.len() || t.len() < 2 {
            return Err(GbdError::Parameter("slice needs at least two samples with matching values".into()));
        }
        if t.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(GbdError::Parameter("slice samples must be finite".into()));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GbdError::Parameter("sample parameters must increase strictly".into()));
        }
        if jumps.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(GbdError::Parameter("jump parameters must increase strictly".into()));
        }
        let mut segments = Vec::with_capacity(jumps.len() + 1);
        let mut start = 0;
        for j in &jumps {
            if !(j.t > t[0] && j.t < t[t.len() - 1]) || !j.amplitude.is_finite() {
                return Err(GbdError::Parameter(format!("jump at {} is not inside the sampled range", j.t)));
            }
            let end = t.partition_point(|&s| s < j.t);
            if t[end] == j.t {
                return Err(GbdError::Parameter(format!("jump at {} coincides with a sample", j.t)));
            }
            segments.push((start, end));
            start = end;
        }
        segments.push((start, t.len()));
        let range = (t[0], t[t.len() - 1]);
        Ok(SliceFunction { origin, xi, range, t, values, jumps, segments })
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn direction(&self) -> &Vec3 {
        &self.xi
    }

    /// Parameter interval of the line inside the domain.
    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn t_samples(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jumps(&self) -> &[SliceJump] {
        &self.jumps
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn point(&self, t: f64) -> Vec3 {
        self.origin + self.xi * t
    }

    /// Consecutive sample pairs inside one segment: `(i, i + 1)`.
    pub fn intervals(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().flat_map(|&(s, e)| s..e.saturating_sub(1).max(s))
    }

    /// `∫ |û'|` by first differences within segments.
    pub fn ac_variation(&self) -> f64 {
        self.intervals().map(|i| (self.values[i + 1] - self.values[i]).abs()).sum()
    }

    /// `∫_B |û'|` for the piecewise-linear interpolant within segments.
    pub fn ac_variation_in(&self, b: &IntervalSet) -> f64 {
        self.intervals()
            .map(|i| {
                let (a, c) = (self.t[i], self.t[i + 1]);
                (self.values[i + 1] - self.values[i]).abs() * b.overlap(a, c) / (c - a)
            })
            .sum()
    }

    /// `|Dû|` of the whole line, jumps at full amplitude.
    pub fn total_variation(&self) -> f64 {
        self.ac_variation() + self.jumps.iter().map(|j| j.amplitude.abs()).sum::<f64>()
    }

    /// Number of jumps with `|amplitude| >= sigma` (`sigma = 0`: all nonzero jumps).
    pub fn jump_count(&self, sigma: f64) -> usize {
        self.jumps.iter().filter(|j| j.amplitude != 0.0 && j.amplitude.abs() >= sigma).count()
    }

    /// `|Dû|(B \ J¹) + H⁰(B ∩ J¹)`: AC variation on `B` plus jumps in `B` capped at 1.
    pub fn mu_hat_line(&self, b: &IntervalSet) -> f64 {
        let jumps: f64 = self
            .jumps
            .iter()
            .filter(|j| b.contains(j.t))
            .map(|j| cap(j.amplitude))
            .sum();
        self.ac_variation_in(b) + jumps
    }

    /// `|Dû|` off the slice's `J^σ`: AC variation plus jumps with `|amplitude| < σ` at full size.
    pub fn i_sigma(&self, sigma: f64) -> Result<f64> {
        if !(sigma > 1.0) {
            return Err(GbdError::Parameter(format!("sigma must exceed 1, got {sigma}")));
        }
        let small: f64 = self
            .jumps
            .iter()
            .map(|j| j.amplitude.abs())
            .filter(|&a| a < sigma)
            .sum();
        Ok(self.ac_variation() + small)
    }

    /// Per-cell split of the slice measure: `(cell, full measure, measure off J¹_u)`.
    ///
    /// Interval variation is spread over the cells the interval passes through by length; a
    /// jump goes to the cell holding its crossing point under the half-open cell rule.
    pub fn cell_contributions(&self, domain: &Domain) -> Vec<(usize, f64, f64)> {
        let walk = cell_walk(domain, &self.origin, &self.xi, self.range.0, self.range.1);
        let mut out: Vec<(usize, f64, f64)> = Vec::new();
        let mut push = |cell: usize, v: f64, excl: f64| match out.last_mut() {
            Some(last) if last.0 == cell => {
                last.1 += v;
                last.2 += excl;
            }
            _ => out.push((cell, v, excl)),
        };
        let mut w = 0;
        let mut next_jump = 0;
        for i in self.intervals() {
            let (a, c) = (self.t[i], self.t[i + 1]);
            // jumps located before this interval
            while next_jump < self.jumps.len() && self.jumps[next_jump].t <= a {
                let j = &self.jumps[next_jump];
                let (m, e) = jump_split(j);
                push(jump_cell(domain, &self.point(j.t)), m, e);
                next_jump += 1;
            }
            let var = (self.values[i + 1] - self.values[i]).abs();
            while w < walk.len() && walk[w].1 <= a {
                w += 1;
            }
            let mut k = w;
            while k < walk.len() && walk[k].0 < c {
                let len = walk[k].1.min(c) - walk[k].0.max(a);
                if len > 0.0 {
                    let v = var * len / (c - a);
                    push(walk[k].2, v, v);
                }
                k += 1;
            }
        }
        for j in &self.jumps[next_jump..] {
            let (m, e) = jump_split(j);
            push(jump_cell(domain, &self.point(j.t)), m, e);
        }
        out
    }
}

#[inline]
fn cap(a: f64) -> f64 {
    a.abs().min(1.0)
}

// (full measure, measure off J¹_u) of a slice jump
fn jump_split(j: &SliceJump) -> (f64, f64) {
    let m = cap(j.amplitude);
    if j.facet_amplitude >= J1_THRESHOLD {
        (m, 0.0)
    } else {
        (m, m)
    }
}

fn jump_cell(domain: &Domain, x: &Vec3) -> usize {
    domain.flat(domain.cell_of_point(&snap_to_grid(domain, x)))
}

/// Moves coordinates within round-off of a grid plane onto the plane.
fn snap_to_grid(domain: &Domain, x: &Vec3) -> Vec3 {
    let h = domain.h();
    let min = domain.bounds().min;
    let mut p = *x;
    for a in 0..domain.dim() {
        let s = (p[a] - min[a]) / h;
        let r = s.round();
        if (s - r).abs() < 1e-9 {
            p[a] = min[a] + r * h;
        }
    }
    p
}

/// Cells crossed by the line on `[t0, t1]` as `(ta, tb, cell)` pieces in increasing `t`.
fn cell_walk(domain: &Domain, origin: &Vec3, xi: &Vec3, t0: f64, t1: f64) -> Vec<(f64, f64, usize)> {
    let h = domain.h();
    let min = domain.bounds().min;
    let counts = domain.counts();
    let mut cuts = vec![t0, t1];
    for a in 0..domain.dim() {
        if xi[a].abs() < 1e-15 {
            continue;
        }
        for k in 1..counts[a] {
            let t = (min[a] + k as f64 * h - origin[a]) / xi[a];
            if t > t0 && t < t1 {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let eps = 1e-13 * (1.0 + (t1 - t0));
    cuts.dedup_by(|b, a| (*b - *a).abs() <= eps);
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = origin + xi * (0.5 * (w[0] + w[1]));
            (w[0], w[1], domain.flat(domain.cell_of_point(&mid)))
        })
        .collect()
}

/// Slice of `field` along the line `y + tξ`, clipped to the domain box.
pub fn extract_slice(field: &DisplacementField, xi: &Vec3, y: &Vec3) -> Result<SliceFunction> {
    let xi = unit(xi)?;
    let (t0, t1) = field.domain().bounds().clip_line(y, &xi).ok_or(GbdError::EmptySlice)?;
    if t1 - t0 <= 1e-12 * (1.0 + field.domain().bounds().diameter()) {
        return Err(GbdError::EmptySlice);
    }
    build_slice(field, *y, xi, t0, t1)
}

/// Slice along the segment `[p, q]` with `ξ = (q − p)/|q − p|` and `t ∈ [0, |q − p|]`.
pub fn extract_segment(field: &DisplacementField, p: &Vec3, q: &Vec3) -> Result<SliceFunction> {
    let len = (q - p).norm();
    if !(len > 0.0) {
        return Err(GbdError::EmptySlice);
    }
    build_slice(field, *p, (q - p) / len, 0.0, len)
}

fn unit(xi: &Vec3) -> Result<Vec3> {
    let n = xi.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
        return Err(GbdError::Parameter(format!("slice direction must be a unit vector, |xi| = {n}")));
    }
    Ok(xi / n)
}

fn build_slice(field: &DisplacementField, origin: Vec3, xi: Vec3, t0: f64, t1: f64) -> Result<SliceFunction> {
    let dim = field.dim();
    let p = origin + xi * t0;
    let q = origin + xi * t1;
    let len = t1 - t0;
    let h = field.domain().h();
    let bx = Aabb::of_points(dim, &[p, q]).expanded(1e-9 * (1.0 + len));
    let mut jumps: Vec<SliceJump> = Vec::new();
    for i in field.facets_near(&bx) {
        let f = &field.facets()[i as usize];
        if let Some(s) = f.crossing(&p, &q) {
            let t = t0 + s * len;
            let dn = xi.dot(f.normal());
            let a = f.jump().dot(&xi) * dn.signum();
            jumps.push(SliceJump { t, amplitude: a, facet_amplitude: f.amplitude(), facet: Some(i as usize) });
        }
    }
    jumps.sort_by(|a, b| a.t.total_cmp(&b.t));
    let eps = 1e-10 * (1.0 + len);
    jumps.dedup_by(|b, a| (b.t - a.t).abs() <= eps);
    // crossings at the ends of the line have no second side
    jumps.retain(|j| j.t - t0 > eps && t1 - j.t > eps);

    let nudge = 1e-7 * h;
    let mut ends = Vec::with_capacity(jumps.len() + 2);
    ends.push((t0, false));
    for j in &jumps {
        ends.push((j.t, true));
    }
    ends.push((t1, false));
    let mut t = Vec::new();
    let mut values = Vec::new();
    for w in ends.windows(2) {
        let a = if w[0].1 { w[0].0 + nudge } else { w[0].0 };
        let b = if w[1].1 { w[1].0 - nudge } else { w[1].0 };
        if b <= a {
            continue;
        }
        let n = ((b - a) / h).ceil().max(1.0) as usize;
        for k in 0..=n {
            let s = if k == n { b } else { a + (b - a) * (k as f64 / n as f64) };
            if let Some(&last) = t.last() {
                if s <= last {
                    continue;
                }
            }
            // a sample grazing a facet it does not cross (an endpoint or a tangency) moves off it
            let v = match field.evaluate(&(origin + xi * s)) {
                Err(GbdError::OnFacet { .. }) => {
                    let side = if s + nudge < b { nudge } else { -nudge };
                    field.evaluate(&(origin + xi * (s + side)))?
                }
                r => r?,
            };
            t.push(s);
            values.push(v.dot(&xi));
        }
    }
    // a jump whose neighbouring segment vanished cannot be represented
    jumps.retain(|j| t.first().is_some_and(|&f| f < j.t) && t.last().is_some_and(|&l| l > j.t));
    SliceFunction::assemble(origin, xi, t, values, jumps)
}

/// Convenience: `I^σ` of the slice through `y` along `ξ`.
pub fn i_sigma(field: &DisplacementField, xi: &Vec3, y: &Vec3, sigma: f64) -> Result<f64> {
    if !(sigma > 1.0) {
        return Err(GbdError::Parameter(format!("sigma must exceed 1, got {sigma}")));
    }
    extract_slice(field, xi, y)?.i_sigma(sigma)
}

/// Lattice of parallel lines along `ξ` with offsets spaced `spacing` apart in the orthogonal hyperplane.
#[derive(Clone, Debug)]
pub struct SliceFamily {
    xi: Vec3,
    basis: [Vec3; 2],
    spacing: f64,
    weight: f64,
    offsets: Vec<Vec3>,
}

impl SliceFamily {
    pub fn new(domain: &Domain, xi: &Vec3, spacing: f64) -> Result<Self> {
        let xi = unit(xi)?;
        let dim = domain.dim();
        if dim == 2 && xi.z != 0.0 {
            return Err(GbdError::Parameter("planar slice direction has a z component".into()));
        }
        if !(spacing > 0.0) {
            return Err(GbdError::Parameter(format!("slice spacing must be positive, got {spacing}")));
        }
        let basis = orthonormal_complement(dim, &xi);
        let bx = domain.bounds();
        let corners: Vec<Vec3> = (0..(1usize << dim))
            .map(|k| {
                let mut c = bx.min;
                for a in 0..dim {
                    if k >> a & 1 == 1 {
                        c[a] = bx.max[a];
                    }
                }
                c
            })
            .collect();
        // centred lattice per basis axis, so the family is symmetric under ξ → −ξ
        let mut axes: Vec<Vec<f64>> = Vec::new();
        for b in basis.iter().take(dim - 1) {
            let proj: Vec<f64> = corners.iter().map(|c| c.dot(b)).collect();
            let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let n = ((hi - lo) / spacing - 1e-9).ceil().max(1.0) as usize;
            let mid = 0.5 * (lo + hi);
            axes.push((0..n).map(|i| mid + (i as f64 - 0.5 * (n as f64 - 1.0)) * spacing).collect());
        }
        let mut offsets = Vec::new();
        let second = if dim == 3 { axes[1].clone() } else { vec![0.0] };
        for &s in &axes[0] {
            for &r in &second {
                let y = basis[0] * s + basis[1] * r;
                if let Some((t0, t1)) = bx.clip_line(&y, &xi) {
                    if t1 - t0 > 1e-12 * (1.0 + bx.diameter()) {
                        offsets.push(y);
                    }
                }
            }
        }
        Ok(SliceFamily { xi, basis, spacing, weight: spacing.powi(dim as i32 - 1), offsets })
    }

    pub fn direction(&self) -> &Vec3 {
        &self.xi
    }

    pub fn basis(&self) -> &[Vec3; 2] {
        &self.basis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// `H^{d-1}` quadrature weight per line.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    /// Slice through offset `i`; a line lying inside a facet plane is shifted off it.
    pub fn slice(&self, field: &DisplacementField, i: usize) -> Result<SliceFunction> {
        let y = self.offsets[i];
        match extract_slice(field, &self.xi, &y) {
            Err(GbdError::OnFacet { .. }) => {
                let shift = self.basis[0] * (1e-9 * self.spacing);
                extract_slice(field, &self.xi, &(y + shift))
            }
            r => r,
        }
    }

    /// All slices in offset order.
    pub fn slices(&self, field: &DisplacementField) -> Result<Vec<SliceFunction>> {
        (0..self.offsets.len()).into_par_iter().map(|i| self.slice(field, i)).collect()
    }
}

fn orthonormal_complement(dim: usize, xi: &Vec3) -> [Vec3; 2] {
    if dim == 2 {
        return [Vec3::new(-xi.y, xi.x, 0.0), Vec3::zeros()];
    }
    let mut k = 0;
    for a in 1..3 {
        if xi[a].abs() < xi[k].abs() {
            k = a;
        }
    }
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    let b1 = (e - xi * xi.dot(&e)).normalize();
    let b2 = xi.cross(&b1);
    [b1, b2]
}

/// Default direction set: 16 uniform angles in 2D, the 26 normalized lattice neighbours in 3D.
pub fn default_directions(dim: usize) -> Vec<Vec3> {
    if dim == 2 {
        directions(2, 16)
    } else {
        directions(3, 26)
    }
}

/// `n` directions: uniform angles on `[0, π)` in 2D; in 3D the lattice neighbours for
/// `n = 26`, the axes for `n = 3`, a Fibonacci sphere otherwise.
pub fn directions(dim: usize, n: usize) -> Vec<Vec3> {
    use std::f64::consts::PI;
    if dim == 2 {
        return (0..n)
            .map(|i| {
                let th = PI * i as f64 / n as f64;
                Vec3::new(th.cos(), th.sin(), 0.0)
            })
            .collect();
    }
    match n {
        3 => vec![Vec3::x(), Vec3::y(), Vec3::z()],
        26 => {
            let mut out = Vec::with_capacity(26);
            for i in -1i32..=1 {
                for j in -1i32..=1 {
                    for k in -1i32..=1 {
                        if (i, j, k) != (0, 0, 0) {
                            out.push(Vec3::new(i as f64, j as f64, k as f64).normalize());
                        }
                    }
                }
            }
            out
        }
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * i as f64;
                    Vec3::new(r * th.cos(), r * th.sin(), z)
                })
                .collect()
        }
    }
}

/// Directional slice measure per cell: full and restricted to the complement of `J¹_u`.
#[derive(Clone, Debug)]
pub struct CellMeasure {
    pub total: Vec<f64>,
    pub off_j1: Vec<f64>,
}

impl CellMeasure {
    fn zeros(n: usize) -> Self {
        CellMeasure { total: vec![0.0; n], off_j1: vec![0.0; n] }
    }

    pub fn sum(&self, mask: Option<&[bool]>) -> f64 {
        masked_sum(&self.total, mask)
    }

    pub fn sum_off_j1(&self, mask: Option<&[bool]>) -> f64 {
        masked_sum(&self.off_j1, mask)
    }

    /// Sum over an explicit cell list.
    pub fn sum_cells(&self, cells: &[usize]) -> (f64, f64) {
        cells.iter().fold((0.0, 0.0), |(a, b), &c| (a + self.total[c], b + self.off_j1[c]))
    }
}

fn masked_sum(v: &[f64], mask: Option<&[bool]>) -> f64 {
    match mask {
        None => v.iter().sum(),
        Some(m) => v.iter().zip(m).filter(|(_, &keep)| keep).map(|(x, _)| x).sum(),
    }
}

/// `(μ̂)^ξ` distributed over cells, with line spacing `h`.
pub fn directional_cell_measure(field: &DisplacementField, xi: &Vec3) -> Result<CellMeasure> {
    let domain = field.domain();
    let fam = SliceFamily::new(domain, xi, domain.h())?;
    let w = fam.weight();
    let per_line: Vec<Vec<(usize, f64, f64)>> = (0..fam.offsets().len())
        .into_par_iter()
        .map(|i| fam.slice(field, i).map(|s| s.cell_contributions(domain)))
        .collect::<Result<_>>()?;
    let mut m = CellMeasure::zeros(domain.cell_count());
    for line in per_line {
        for (c, v, e) in line {
            m.total[c] += w * v;
            m.off_j1[c] += w * e;
        }
    }
    Ok(m)
}

/// `(μ̂)^ξ(B)` for a cell mask (`None` = whole domain).
pub fn mu_hat_directional(field: &DisplacementField, xi: &Vec3, mask: Option<&[bool]>) -> Result<f64> {
    Ok(directional_cell_measure(field, xi)?.sum(mask))
}

/// Cellwise maximum of the directional measures over a direction set.
pub fn mu_hat_cells(field: &DisplacementField, directions: &[Vec3]) -> Result<CellMeasure> {
    if directions.is_empty() {
        return Err(GbdError::Parameter("at least one direction is required".into()));
    }
    let n = field.domain().cell_count();
    let mut best = CellMeasure::zeros(n);
    for xi in directions {
        let m = directional_cell_measure(field, xi)?;
        for c in 0..n {
            best.total[c] = best.total[c].max(m.total[c]);
            best.off_j1[c] = best.off_j1[c].max(m.off_j1[c]);
        }
    }
    Ok(best)
}

/// `μ̂(B)` approximated by the cellwise maximum over `directions`.
pub fn mu_hat(field: &DisplacementField, directions: &[Vec3], mask: Option<&[bool]>) -> Result<f64> {
    Ok(mu_hat_cells(field, directions)?.sum(mask))
}

/// `H^{d-1}(J^σ_u)` under the `|[u]| >= σ` convention; `σ = 0` gives all of `J_u`.
pub fn jump_surface_measure(field: &DisplacementField, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(GbdError::Parameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    Ok(field.jump_measure(sigma))
}

/// Centred-difference gradient `∂u_i/∂x_j` with step `h`, one-sided at the box boundary.
pub fn gradient_fd(field: &DisplacementField, x: &Vec3, h: f64) -> Result<Mat3> {
    let bx = field.domain().bounds();
    let mut g = Mat3::zeros();
    for b in 0..field.dim() {
        let mut e = Vec3::zeros();
        e[b] = 1.0;
        let lo = (x[b] - h).max(bx.min[b]);
        let hi = (x[b] + h).min(bx.max[b]);
        let mut p = *x;
        let mut q = *x;
        p[b] = lo;
        q[b] = hi;
        let col = (field.evaluate(&q)? - field.evaluate(&p)?) / (hi - lo);
        g.set_column(b, &col);
    }
    Ok(g)
}

/// Discrepancy between slice derivatives and `ξᵀ e(u) ξ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientIdentityReport {
    pub max_error: f64,
    pub mean_error: f64,
    /// `Σ_lines weight Σ_intervals |error| Δt`.
    pub l1_error: f64,
    pub samples: usize,
    pub within_tolerance: bool,
}

/// Compares forward differences of each slice with `ξᵀ e(u) ξ` from centred differences of
/// the full field, skipping samples within `2h` of a facet.
pub fn check_slice_gradient_identity(field: &DisplacementField, xi: &Vec3, tolerance: f64) -> Result<GradientIdentityReport> {
    let domain = field.domain();
    let h = domain.h();
    let fam = SliceFamily::new(domain, xi, h)?;
    let xi = *fam.direction();
    let clear = |x: &Vec3| {
        field
            .facets_near(&Aabb::new(field.dim(), *x, *x).expanded(2.0 * h))
            .iter()
            .all(|&i| field.facets()[i as usize].distance(x) >= 2.0 * h)
    };
    let per_line: Vec<(f64, f64, f64, usize)> = (0..fam.offsets().len())
        .into_par_iter()
        .map(|i| {
            let s = fam.slice(field, i)?;
            let (mut max, mut l1, mut sum, mut n) = (0.0f64, 0.0, 0.0, 0usize);
            for k in s.intervals() {
                let (a, c) = (s.t_samples()[k], s.t_samples()[k + 1]);
                let x = s.point(a);
                if !clear(&x) || !clear(&s.point(c)) {
                    continue;
                }
                let lhs = (s.values()[k + 1] - s.values()[k]) / (c - a);
                let e = sym_part(&gradient_fd(field, &x, h)?);
                let rhs = xi.dot(&(e * xi));
                let err = (lhs - rhs).abs();
                max = max.max(err);
                l1 += err * (c - a);
                sum += err;
                n += 1;
            }
            Ok((max, l1, sum, n))
        })
        .collect::<Result<_>>()?;
    let w = fam.weight();
    let (mut max, mut l1, mut sum, mut n) = (0.0f64, 0.0, 0.0, 0usize);
    for (m, l, s, c) in per_line {
        max = max.max(m);
        l1 += w * l;
        sum += s;
        n += c;
    }
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    Ok(GradientIdentityReport { max_error: max, mean_error: mean, l1_error: l1, samples: n, within_tolerance: max <= tolerance })
}

/// One row per line of a slice family.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceLineRow {
    pub direction: usize,
    pub offset: Vec3,
    pub mu_hat_line: f64,
    pub ac_variation: f64,
    pub jumps: usize,
    pub j1_jumps: usize,
    pub i_sigma: Vec<f64>,
}

/// Aggregates per direction: `(μ̂)^ξ(Ω) = Σ weight × mu_hat_line` and the weighted `I^σ` sums.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceDirectionRow {
    pub direction: Vec3,
    pub weight: f64,
    pub lines: usize,
    pub mu_hat: f64,
    pub i_sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceMeasureReport {
    pub sigmas: Vec<f64>,
    pub lines: Vec<SliceLineRow>,
    pub directions: Vec<SliceDirectionRow>,
}

/// Line-by-line slice measures over a direction set, with `I^σ` for each `σ > 1`.
pub fn slice_measure_report(field: &DisplacementField, directions: &[Vec3], sigmas: &[f64]) -> Result<SliceMeasureReport> {
    if let Some(s) = sigmas.iter().find(|&&s| !(s > 1.0)) {
        return Err(GbdError::Parameter(format!("sigma must exceed 1, got {s}")));
    }
    let domain = field.domain();
    let mut lines = Vec::new();
    let mut dirs = Vec::new();
    for (di, xi) in directions.iter().enumerate() {
        let fam = SliceFamily::new(domain, xi, domain.h())?;
        let slices = fam.slices(field)?;
        let w = fam.weight();
        let mut agg = SliceDirectionRow {
            direction: *fam.direction(),
            weight: w,
            lines: slices.len(),
            mu_hat: 0.0,
            i_sigma: vec![0.0; sigmas.len()],
        };
        for (s, y) in slices.iter().zip(fam.offsets()) {
            let (t0, t1) = s.range();
            let mu = s.mu_hat_line(&IntervalSet::full(t0, t1));
            let is: Vec<f64> = sigmas.iter().map(|&sg| s.i_sigma(sg)).collect::<Result<_>>()?;
            agg.mu_hat += w * mu;
            for (a, v) in agg.i_sigma.iter_mut().zip(&is) {
                *a += w * v;
            }
            lines.push(SliceLineRow {
                direction: di,
                offset: *y,
                mu_hat_line: mu,
                ac_variation: s.ac_variation(),
                jumps: s.jump_count(0.0),
                j1_jumps: s.jump_count(J1_THRESHOLD),
                i_sigma: is,
            });
        }
        dirs.push(agg);
    }
    Ok(SliceMeasureReport { sigmas: sigmas.to_vec(), lines, directions: dirs })
}

impl SliceMeasureReport {
    /// Per-line rows followed by per-direction aggregate rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let sig: Vec<String> = self.sigmas.iter().map(|s| format!("i_sigma_{s}")).collect();
        writeln!(w, "kind,direction,xi_x,xi_y,xi_z,y_x,y_y,y_z,mu_hat,ac_variation,jumps,j1_jumps{}", prefixed(&sig))?;
        for r in &self.lines {
            let xi = self.directions[r.direction].direction;
            let is: Vec<String> = r.i_sigma.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(
                w,
                "line,{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}{}",
                r.direction, xi.x, xi.y, xi.z, r.offset.x, r.offset.y, r.offset.z, r.mu_hat_line, r.ac_variation, r.jumps, r.j1_jumps,
                prefixed(&is)
            )?;
        }
        for (i, d) in self.directions.iter().enumerate() {
            let is: Vec<String> = d.i_sigma.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(
                w,
                "direction,{},{:.17e},{:.17e},{:.17e},,,,{:.17e},,{},{}",
                i, d.direction.x, d.direction.y, d.direction.z, d.mu_hat, d.lines, prefixed(&is)
            )?;
        }
        Ok(())
    }
}

fn prefixed(cols: &[String]) -> String {
    cols.iter().map(|c| format!(",{c}")).collect()
}
