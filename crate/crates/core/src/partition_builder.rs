//! Multiscale good/bad cube classification, per-cube rigid fits along a sequence, clustering of
//! the fitted motions and assembly of the resulting partition.

use std::collections::VecDeque;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;

use crate::error::{GbdError, Result};
use crate::field::{dyadic_cubes, CaccioppoliPartition, DisplacementField, Domain, DyadicGrid, PiecewiseRigidMotion, RigidMotion};
use crate::geometry::Vec3;
use crate::korn::{self, CubeFit, FitOptions, CALIBRATED_C};
use crate::slicing::{self, CellMeasure, J1_THRESHOLD};

/// Good/bad split of one dyadic level.
#[derive(Clone, Debug)]
pub struct ScaleClassification {
    pub level: usize,
    pub delta: f64,
    pub eta: f64,
    /// Cube positions in the level's grid.
    pub good: Vec<usize>,
    pub bad: Vec<usize>,
    /// `H^{d-1}(J¹ ∩ Q)` per cube (for the last field examined).
    pub j1_area: Vec<f64>,
    /// Cells of the band left uncovered by the level's cubes.
    pub band: Vec<bool>,
    /// Band plus bad cubes; the builder widens it to bad cubes at all finer levels.
    pub b_mask: Vec<bool>,
    /// First sequence index (1-based) from which the split no longer changes.
    pub k_stable: Option<usize>,
    /// False when the split kept changing and the union of bad sets was used.
    pub stable: bool,
}

impl ScaleClassification {
    pub fn bad_volume(&self, grid: &DyadicGrid) -> f64 {
        self.bad.iter().map(|&i| grid.cubes()[i].volume()).sum()
    }

    pub fn b_volume(&self, domain: &Domain) -> f64 {
        self.b_mask.iter().filter(|&&b| b).count() as f64 * domain.cell_volume()
    }
}

fn band_mask(domain: &Domain, grid: &DyadicGrid) -> Vec<bool> {
    grid.cell_owner(domain).iter().map(|o| o.is_none()).collect()
}

fn bad_flags(field: &DisplacementField, grid: &DyadicGrid, eta: f64) -> (Vec<bool>, Vec<f64>) {
    let face = grid.delta().powi(field.dim() as i32 - 1);
    let areas: Vec<f64> = grid.cubes().iter().map(|q| korn::j1_area_in(field, &q.bounds)).collect();
    (areas.iter().map(|&a| a > eta * face).collect(), areas)
}

fn assemble(domain: &Domain, grid: &DyadicGrid, eta: f64, bad: &[bool], areas: Vec<f64>, k_stable: Option<usize>, stable: bool) -> ScaleClassification {
    let band = band_mask(domain, grid);
    let mut b_mask = band.clone();
    for (i, &b) in bad.iter().enumerate() {
        if b {
            for c in grid.cubes()[i].cells(domain) {
                b_mask[c] = true;
            }
        }
    }
    ScaleClassification {
        level: grid.level(),
        delta: grid.delta(),
        eta,
        good: (0..bad.len()).filter(|&i| !bad[i]).collect(),
        bad: (0..bad.len()).filter(|&i| bad[i]).collect(),
        j1_area: areas,
        band,
        b_mask,
        k_stable,
        stable,
    }
}

/// Marks a cube bad iff `H^{d-1}(J¹ ∩ Q) > η δ^{d-1}` (half-open cube faces).
pub fn classify_cubes(field: &DisplacementField, grid: &DyadicGrid, eta: f64) -> Result<ScaleClassification> {
    if !(eta > 0.0) {
        return Err(GbdError::Parameter(format!("eta must be positive, got {eta}")));
    }
    let (bad, areas) = bad_flags(field, grid, eta);
    Ok(assemble(field.domain(), grid, eta, &bad, areas, Some(1), true))
}

/// Classification along a sequence: the tail classification if it is constant over at least
/// the last half of the sequence, otherwise the union of all bad sets (flagged unstable).
pub fn stabilize_classification(sequence: &[DisplacementField], grid: &DyadicGrid, eta: f64) -> Result<ScaleClassification> {
    let k_len = sequence.len();
    if k_len < 2 {
        return Err(GbdError::Parameter("a sequence needs at least two fields".into()));
    }
    if !(eta > 0.0) {
        return Err(GbdError::Parameter(format!("eta must be positive, got {eta}")));
    }
    let flags: Vec<(Vec<bool>, Vec<f64>)> = sequence.par_iter().map(|f| bad_flags(f, grid, eta)).collect();
    let last = &flags[k_len - 1].0;
    let mut start = k_len - 1;
    while start > 0 && flags[start - 1].0 == *last {
        start -= 1;
    }
    let k_stable = start + 1;
    let domain = sequence[0].domain();
    if k_stable <= k_len - k_len.div_ceil(2) + 1 {
        let areas = flags[k_len - 1].1.clone();
        return Ok(assemble(domain, grid, eta, last, areas, Some(k_stable), true));
    }
    let mut union = vec![false; grid.len()];
    for (b, _) in &flags {
        for (u, &x) in union.iter_mut().zip(b) {
            *u |= x;
        }
    }
    let areas = flags[k_len - 1].1.clone();
    Ok(assemble(domain, grid, eta, &union, areas, None, false))
}

/// Verdict of the finite-sequence dichotomy for one pair of cubes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairVerdict {
    Bounded,
    Diverging,
    Indeterminate,
}

/// `sup_{|x| ≤ 1} |a_k − a'_k|` for `k = 1..K`.
pub fn divergence_profile(a: &[RigidMotion], b: &[RigidMotion]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x.sub(y).sup_on_unit_ball()).collect()
}

/// Bounded iff `max D ≤ τ_bound`; diverging iff `D(K) ≥ τ_div` and `D` is nondecreasing over the
/// last `⌈K/2⌉` indices.
pub fn classify_pair(profile: &[f64], tau_bound: f64, tau_div: f64) -> PairVerdict {
    let max = profile.iter().copied().fold(0.0, f64::max);
    if max <= tau_bound {
        return PairVerdict::Bounded;
    }
    let k = profile.len();
    let tail = &profile[k - k.div_ceil(2)..];
    let slack = 1e-12 * (1.0 + max);
    let growing = tail.windows(2).all(|w| w[1] >= w[0] - slack);
    if profile[k - 1] >= tau_div && growing {
        PairVerdict::Diverging
    } else {
        PairVerdict::Indeterminate
    }
}

/// A recorded pair of cubes: `(level, position)` each, the profile and the verdict.
#[derive(Clone, Debug)]
pub struct PairRecord {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub relation: PairRelation,
    pub profile: Vec<f64>,
    pub verdict: PairVerdict,
    pub forced: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairRelation {
    SameLevel,
    Adjacent,
    Nested,
}

/// Class of cubes whose motions stay together along the sequence.
#[derive(Clone, Debug)]
pub struct MotionSequenceClass {
    /// Member cubes as `(level, position)`, sorted.
    pub members: Vec<(usize, usize)>,
    /// Representative cube: first member at the coarsest level present.
    pub representative: (usize, usize),
    /// Representative motion per `k`.
    pub motions: Vec<RigidMotion>,
}

/// Fits of the good cubes of one level: `fits[i][k]` for good cube `cubes[i]`.
#[derive(Clone, Debug)]
pub struct LevelFits {
    pub level: usize,
    pub cubes: Vec<usize>,
    pub fits: Vec<Vec<CubeFit>>,
}

impl LevelFits {
    pub fn position_of(&self, cube: usize) -> Option<usize> {
        self.cubes.binary_search(&cube).ok()
    }
}

/// Output of `cluster_motions`.
#[derive(Clone, Debug)]
pub struct Clustering {
    pub classes: Vec<MotionSequenceClass>,
    /// Class index per node, in the node order `(level, position)` used by the caller.
    pub class_of: Vec<usize>,
    pub pairs: Vec<PairRecord>,
}

/// Clusters per-cube motion sequences.
///
/// `nodes[i] = (level, position)` with `fits[i][k]` its fit at step `k`; `candidates` lists the
/// pairs to compare together with their geometric relation. Nested and adjacent pairs whose fits
/// agree within `c δ μ̂` at every `k` are merged regardless of `τ_bound`.
pub fn cluster_motions(
    nodes: &[(usize, usize)],
    fits: &[&[CubeFit]],
    candidates: &[(usize, usize, PairRelation)],
    domain: &Domain,
    c: f64,
    tau_bound: f64,
    tau_div: f64,
) -> Result<Clustering> {
    let n = nodes.len();
    let motions: Vec<Vec<RigidMotion>> = fits.iter().map(|f| f.iter().map(|x| x.motion).collect()).collect();
    let evaluated: Vec<(Vec<f64>, PairVerdict, bool)> = candidates
        .par_iter()
        .map(|&(i, j, rel)| {
            let profile = divergence_profile(&motions[i], &motions[j]);
            let verdict = classify_pair(&profile, tau_bound, tau_div);
            let forced = rel != PairRelation::SameLevel && verdict != PairVerdict::Bounded && agree_in_l1(domain, fits[i], fits[j], c);
            (profile, verdict, forced)
        })
        .collect();
    let mut uf = UnionFind::<usize>::new(n);
    for (&(i, j, _), (_, verdict, forced)) in candidates.iter().zip(&evaluated) {
        if *verdict == PairVerdict::Bounded || *forced {
            uf.union(i, j);
        }
    }
    let mut pairs = Vec::with_capacity(candidates.len());
    for (&(i, j, rel), (profile, verdict, forced)) in candidates.iter().zip(evaluated) {
        if !uf.equiv(i, j) && verdict != PairVerdict::Diverging {
            return Err(GbdError::Ambiguity { a: i, b: j, profile });
        }
        pairs.push(PairRecord { a: nodes[i], b: nodes[j], relation: rel, profile, verdict, forced });
    }
    // classes in order of their smallest node, nodes sorted by (level, position)
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| nodes[i]);
    let mut class_of = vec![usize::MAX; n];
    let mut root_class = std::collections::HashMap::new();
    let mut classes: Vec<MotionSequenceClass> = Vec::new();
    for &i in &order {
        let r = uf.find_mut(i);
        let cl = *root_class.entry(r).or_insert_with(|| {
            classes.push(MotionSequenceClass { members: Vec::new(), representative: nodes[i], motions: motions[i].clone() });
            classes.len() - 1
        });
        classes[cl].members.push(nodes[i]);
        class_of[i] = cl;
    }
    Ok(Clustering { classes, class_of, pairs })
}

// ∫_{Q∩Q' \ (ω ∪ ω')} |a − a'| ≤ c δ (μ̂(Q \ J¹) + μ̂(Q' \ J¹)) at every k; for adjacent cubes the
// integral runs over both cubes
fn agree_in_l1(domain: &Domain, a: &[CubeFit], b: &[CubeFit], c: f64) -> bool {
    a.iter().zip(b).all(|(fa, fb)| {
        let (small, large) = if fa.delta <= fb.delta { (fa, fb) } else { (fb, fa) };
        let nested = small.cells.iter().all(|x| large.cells.binary_search(x).is_ok());
        let region: Vec<usize> = if nested {
            small.cells.clone()
        } else {
            let mut r = fa.cells.clone();
            r.extend_from_slice(&fb.cells);
            r
        };
        let diff = fa.motion.sub(&fb.motion);
        let lhs: f64 = region
            .iter()
            .filter(|x| fa.omega.binary_search(x).is_err() && fb.omega.binary_search(x).is_err())
            .map(|&x| diff.apply(&domain.cell_center(x)).norm())
            .sum::<f64>()
            * domain.cell_volume();
        lhs <= c * large.delta * (fa.mu_hat_off_j1 + fb.mu_hat_off_j1) + 1e-12
    })
}

/// Parameters of `build_partition`; `None` fields take their documented defaults.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    /// Default: shortest box side over 4.
    pub delta0: Option<f64>,
    /// Default: the level with `δ = 4h`.
    pub j_max: Option<usize>,
    /// Default: `min(0.05, 2^{-d}/(8c))`.
    pub eta: Option<f64>,
    pub c: f64,
    /// Default: `max(10 × median residual/(|Q| δ), 1e-6)`.
    pub tau_bound: Option<f64>,
    /// Default: `100 τ_bound`.
    pub tau_div: Option<f64>,
    /// Default: the standard direction set.
    pub directions: Option<Vec<Vec3>>,
    pub fit: FitOptions,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            delta0: None,
            j_max: None,
            eta: None,
            c: CALIBRATED_C,
            tau_bound: None,
            tau_div: None,
            directions: None,
            fit: FitOptions::default(),
            seed: 0,
        }
    }
}

pub fn default_eta(dim: usize, c: f64) -> f64 {
    0.05f64.min(0.5f64.powi(dim as i32) / (8.0 * c))
}

#[derive(Clone, Debug)]
pub struct BuildReport {
    pub delta0: f64,
    pub j_max: usize,
    pub eta: f64,
    pub c: f64,
    pub tau_bound: f64,
    pub tau_div: f64,
    pub classifications: Vec<ScaleClassification>,
    pub grids: Vec<DyadicGrid>,
    pub fits: Vec<LevelFits>,
    pub classes: Vec<MotionSequenceClass>,
    pub pairs: Vec<PairRecord>,
    /// Good cubes moved to the bad set because their fit gave up at some `k`.
    pub demoted: Vec<(usize, usize)>,
    /// Cells in the finest `B_j`, labelled by the nearest-class rule.
    pub reassigned_cells: usize,
    /// Cellwise `μ̂` per step.
    pub mu: Vec<CellMeasure>,
    pub warnings: Vec<String>,
}

impl BuildReport {
    /// One row per compared pair: cubes, relation, verdict, forced merge flag and `D(1..K)`.
    pub fn write_pairs_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let k_len = self.pairs.first().map_or(0, |p| p.profile.len());
        let cols: String = (1..=k_len).map(|k| format!(",d_{k}")).collect();
        writeln!(w, "level_a,cube_a,level_b,cube_b,relation,verdict,forced{cols}")?;
        for p in &self.pairs {
            let d: String = p.profile.iter().map(|v| format!(",{v:.17e}")).collect();
            writeln!(w, "{},{},{},{},{:?},{:?},{}{}", p.a.0, p.a.1, p.b.0, p.b.1, p.relation, p.verdict, p.forced, d)?;
        }
        Ok(())
    }

    /// One row per cube and level: side, `J¹` area, good flag, stabilization index.
    pub fn write_classification_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,cube,delta,j1_area,good,stable,k_stable,b_volume_cells")?;
        for (cl, grid) in self.classifications.iter().zip(&self.grids) {
            let b = cl.b_mask.iter().filter(|&&x| x).count();
            for (i, area) in cl.j1_area.iter().enumerate().take(grid.len()) {
                let good = cl.good.binary_search(&i).is_ok();
                let ks = cl.k_stable.map_or(String::new(), |k| k.to_string());
                writeln!(w, "{},{},{:.17e},{:.17e},{},{},{},{}", cl.level, i, cl.delta, area, good, cl.stable, ks, b)?;
            }
        }
        Ok(())
    }

    /// `B_j` for level `j`.
    pub fn b_mask(&self, j: usize) -> &[bool] {
        &self.classifications[j].b_mask
    }

    /// `|B_j|`.
    pub fn b_volume(&self, domain: &Domain, j: usize) -> f64 {
        self.classifications[j].b_volume(domain)
    }
}

#[derive(Clone, Debug)]
pub struct BuildResult {
    pub partition: CaccioppoliPartition,
    /// Piecewise rigid motion per step `k = 1..K`.
    pub motions: Vec<PiecewiseRigidMotion>,
    pub report: BuildReport,
}

fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut s = master ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        s = (s ^ p).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        s ^= s >> 31;
    }
    s
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Builds the partition and per-step piecewise rigid motions for the sequence `u_1..u_K`.
pub fn build_partition(sequence: &[DisplacementField], opts: &BuildOptions) -> Result<BuildResult> {
    let k_len = sequence.len();
    if k_len < 2 {
        return Err(GbdError::Parameter("a sequence needs at least two fields".into()));
    }
    let domain = sequence[0].domain().clone();
    if sequence.iter().any(|f| *f.domain() != domain) {
        return Err(GbdError::Domain("all fields of a sequence must share the domain".into()));
    }
    let dim = domain.dim();
    let h = domain.h();
    let c = opts.c;
    if !(c > 0.0) {
        return Err(GbdError::Parameter(format!("constant c must be positive, got {c}")));
    }
    let side = (0..dim).map(|a| domain.bounds().side(a)).fold(f64::INFINITY, f64::min);
    let delta0 = opts.delta0.unwrap_or(side / 4.0);
    let j_max = match opts.j_max {
        Some(j) => j,
        None => {
            let ratio = delta0 / (4.0 * h);
            if ratio < 1.0 - 1e-9 {
                return Err(GbdError::Resolution(format!("base scale {delta0} is below 4h")));
            }
            (ratio * (1.0 + 1e-9)).log2().floor() as usize
        }
    };
    if delta0 / ((1u64 << j_max) as f64) < 2.0 * h * (1.0 - 1e-12) {
        return Err(GbdError::Resolution(format!("finest cube side is below 2h at level {j_max}")));
    }
    let eta = opts.eta.unwrap_or_else(|| default_eta(dim, c));
    let eta_cap = 0.5f64.powi(dim as i32) / (4.0 * c);
    if !(eta > 0.0 && eta < eta_cap) {
        return Err(GbdError::Parameter(format!("eta must lie in (0, {eta_cap}), got {eta}")));
    }
    let directions = opts.directions.clone().unwrap_or_else(|| slicing::default_directions(dim));

    let mu: Vec<CellMeasure> = sequence.iter().map(|f| slicing::mu_hat_cells(f, &directions)).collect::<Result<_>>()?;

    let grids: Vec<DyadicGrid> = (0..=j_max).map(|j| dyadic_cubes(&domain, delta0, j)).collect::<Result<_>>()?;
    let mut classifications: Vec<ScaleClassification> =
        grids.iter().map(|g| stabilize_classification(sequence, g, eta)).collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    for cl in &classifications {
        if !cl.stable {
            warnings.push(format!("level {}: classification not stable along the sequence; using the union of bad cubes", cl.level));
        }
    }

    // fit good cubes at every step
    let mut fits: Vec<LevelFits> = Vec::with_capacity(grids.len());
    let mut demoted = Vec::new();
    for (j, grid) in grids.iter().enumerate() {
        let good = classifications[j].good.clone();
        let per_cube: Vec<Vec<CubeFit>> = good
            .par_iter()
            .map(|&q| {
                (0..k_len)
                    .map(|k| {
                        // same draws at every k, so fits of u + rigid shift with the rigid part
                        let seed = derive_seed(opts.seed, &[j as u64, q as u64]);
                        match korn::pk_fit_with(&sequence[k], &grid.cubes()[q].bounds, &mu[k], &opts.fit, seed) {
                            Err(GbdError::SelectionFailure { .. }) => Ok(None),
                            Ok(f) if f.early_exit => Ok(None),
                            Ok(f) => Ok(Some(f)),
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Result<Option<Vec<CubeFit>>>>()
            })
            .collect::<Result<Vec<Option<Vec<CubeFit>>>>>()?
            .into_iter()
            .zip(&good)
            .filter_map(|(f, &q)| {
                if f.is_none() {
                    demoted.push((j, q));
                }
                f
            })
            .collect();
        let kept: Vec<usize> = good.iter().copied().filter(|q| !demoted.contains(&(j, *q))).collect();
        fits.push(LevelFits { level: j, cubes: kept, fits: per_cube });
    }
    if !demoted.is_empty() {
        warnings.push(format!("{} good cubes had no admissible fit at some step and were treated as bad", demoted.len()));
        for &(j, q) in &demoted {
            let cl = &mut classifications[j];
            cl.good.retain(|&g| g != q);
            cl.bad.push(q);
            cl.bad.sort_unstable();
            for c in grids[j].cubes()[q].cells(&domain) {
                cl.b_mask[c] = true;
            }
        }
    }
    // B_j collects bad cubes of every level ≥ j
    for j in (0..j_max).rev() {
        let bad_cells: Vec<bool> = {
            let mut m = vec![false; domain.cell_count()];
            for jj in (j + 1)..=j_max {
                for &q in &classifications[jj].bad {
                    for c in grids[jj].cubes()[q].cells(&domain) {
                        m[c] = true;
                    }
                }
            }
            m
        };
        for (b, x) in classifications[j].b_mask.iter_mut().zip(bad_cells) {
            *b |= x;
        }
    }

    // thresholds
    let tau_bound = match opts.tau_bound {
        Some(t) => t,
        None => {
            // residual per volume and side: a strain scale, read on the unit ball as a displacement
            let mut scaled: Vec<f64> = fits.iter().flat_map(|l| l.fits.iter().flatten()).map(|f| f.residual / (f.cube.volume() * f.delta)).collect();
            (10.0 * median(&mut scaled)).max(1e-6)
        }
    };
    let tau_div = opts.tau_div.unwrap_or(100.0 * tau_bound);
    if !(tau_div > tau_bound) {
        return Err(GbdError::Parameter("tau_div must exceed tau_bound".into()));
    }

    // nodes and candidate pairs
    let mut nodes: Vec<(usize, usize)> = Vec::new();
    let mut node_fits: Vec<&[CubeFit]> = Vec::new();
    let mut node_index: Vec<Vec<Option<usize>>> = Vec::with_capacity(grids.len());
    for (j, lf) in fits.iter().enumerate() {
        let mut idx = vec![None; grids[j].len()];
        for (i, &q) in lf.cubes.iter().enumerate() {
            idx[q] = Some(nodes.len());
            nodes.push((j, q));
            node_fits.push(&lf.fits[i]);
        }
        node_index.push(idx);
    }
    if nodes.is_empty() {
        return Err(GbdError::Resolution("no good cube at any level; the jump set is too dense for this resolution".into()));
    }
    let mut candidates: Vec<(usize, usize, PairRelation)> = Vec::new();
    for (j, lf) in fits.iter().enumerate() {
        let grid = &grids[j];
        for (a, &qa) in lf.cubes.iter().enumerate() {
            let ia = node_index[j][qa].expect("indexed");
            for &qb in &lf.cubes[a + 1..] {
                let ib = node_index[j][qb].expect("indexed");
                let ma = grid.cubes()[qa].index;
                let mb = grid.cubes()[qb].index;
                let dist: usize = (0..3).map(|x| ma[x].abs_diff(mb[x])).sum();
                let rel = if dist == 1 { PairRelation::Adjacent } else { PairRelation::SameLevel };
                candidates.push((ia, ib, rel));
            }
            if j > 0 {
                if let Some(p) = grid.parent_in(qa, &grids[j - 1]) {
                    if let Some(ip) = node_index[j - 1][p] {
                        candidates.push((ip, ia, PairRelation::Nested));
                    }
                }
            }
        }
    }
    let clustering = cluster_motions(&nodes, &node_fits, &candidates, &domain, c, tau_bound, tau_div)?;

    // labels per level on Ω \ B_j, checking nesting
    let n_cells = domain.cell_count();
    let mut labels: Vec<Option<usize>> = vec![None; n_cells];
    for j in 0..=j_max {
        let owner = grids[j].cell_owner(&domain);
        let b = &classifications[j].b_mask;
        for cell in 0..n_cells {
            if b[cell] {
                continue;
            }
            let q = owner[cell].expect("cells outside B_j lie in a cube") as usize;
            let node = node_index[j][q].expect("cells outside B_j lie in a good cube");
            let cl = clustering.class_of[node];
            if let Some(prev) = labels[cell] {
                if prev != cl {
                    let coarse = (0..j).rev().find_map(|jj| {
                        let o = grids[jj].cell_owner(&domain)[cell]? as usize;
                        node_index[jj][o]
                    });
                    return Err(GbdError::Nesting { level: j, coarse: coarse.unwrap_or(usize::MAX), fine: node });
                }
            }
            labels[cell] = Some(cl);
        }
    }

    // remaining cells: nearest class through facet-free faces of the last field
    let last = &sequence[k_len - 1];
    let reassigned = labels.iter().filter(|l| l.is_none()).count();
    flood_labels(&domain, &mut labels, |a, b| {
        last.segment_hits(&domain.cell_center(a), &domain.cell_center(b), J1_THRESHOLD)
    });
    flood_labels(&domain, &mut labels, |_, _| false);

    // compact class ids to 1..=N in class order
    let mut used = vec![false; clustering.classes.len()];
    for l in labels.iter().flatten() {
        used[*l] = true;
    }
    let mut remap = vec![0u32; clustering.classes.len()];
    let mut next = 0u32;
    for (i, u) in used.iter().enumerate() {
        if *u {
            next += 1;
            remap[i] = next;
        }
    }
    let cell_labels: Vec<u32> = labels.iter().map(|l| remap[l.expect("every cell labelled")]).collect();
    let partition = CaccioppoliPartition::new(domain.clone(), cell_labels)?;
    let kept: Vec<&MotionSequenceClass> = clustering.classes.iter().zip(&used).filter(|(_, u)| **u).map(|(c, _)| c).collect();
    let motions: Vec<PiecewiseRigidMotion> = (0..k_len)
        .map(|k| PiecewiseRigidMotion::new(partition.clone(), kept.iter().map(|c| c.motions[k]).collect()))
        .collect::<Result<_>>()?;
    let classes = kept.into_iter().cloned().collect();

    Ok(BuildResult {
        partition,
        motions,
        report: BuildReport {
            delta0,
            j_max,
            eta,
            c,
            tau_bound,
            tau_div,
            classifications,
            grids,
            fits,
            classes,
            pairs: clustering.pairs,
            demoted,
            reassigned_cells: reassigned,
            mu,
            warnings,
        },
    })
}

/// Multi-source breadth-first labelling of unlabelled cells; a cell reached by several classes in
/// the same round takes the lowest one.
fn flood_labels(domain: &Domain, labels: &mut [Option<usize>], blocked: impl Fn(usize, usize) -> bool) {
    let mut frontier: VecDeque<usize> = (0..labels.len()).filter(|&c| labels[c].is_some()).collect();
    while !frontier.is_empty() {
        let mut next: Vec<(usize, usize)> = Vec::new();
        for &c in &frontier {
            let l = labels[c].expect("frontier is labelled");
            for nb in domain.neighbors(domain.multi(c)) {
                let n = domain.flat(nb);
                if labels[n].is_none() && !blocked(c, n) {
                    next.push((n, l));
                }
            }
        }
        next.sort_unstable();
        frontier.clear();
        for (n, l) in next {
            if labels[n].is_none() {
                labels[n] = Some(l);
                frontier.push_back(n);
            }
        }
    }
}

/// Growth of `|a_k^n(x) − a_k^{n'}(x)|` and of its component along sampled directions.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceReport {
    /// Per class pair `(n, n')` (1-based): minimum over sampled `x` of `|Δa_K(x)|`.
    pub pair_min: Vec<((usize, usize), f64)>,
    /// Flagged `(pair, x index, ξ index)` with directional growth below `τ_div`.
    pub flagged: Vec<((usize, usize), usize, usize)>,
    pub tested: usize,
    pub passed: usize,
}

/// For sampled points and directions, checks that every pair of pieces drifts apart.
///
/// A sample passes when the value at the last step reaches `tau_div` and is at least the value
/// half way through the sequence.
pub fn verify_divergence(motions: &[PiecewiseRigidMotion], xs: &[Vec3], xis: &[Vec3], tau_div: f64) -> Result<DivergenceReport> {
    let k_len = motions.len();
    if k_len < 2 {
        return Err(GbdError::Parameter("a sequence needs at least two steps".into()));
    }
    let n = motions[0].motions().len();
    if n < 2 {
        return Err(GbdError::Parameter("divergence needs at least two pieces".into()));
    }
    let mid = (k_len - 1) / 2;
    let mut pair_min = Vec::new();
    let mut flagged = Vec::new();
    let (mut tested, mut passed) = (0, 0);
    for a in 1..=n {
        for b in (a + 1)..=n {
            let diff = |k: usize, x: &Vec3| {
                let m = &motions[k];
                m.motion(a as u32).apply(x) - m.motion(b as u32).apply(x)
            };
            let mut min = f64::INFINITY;
            for (xi_idx, x) in xs.iter().enumerate() {
                min = min.min(diff(k_len - 1, x).norm());
                for (e_idx, e) in xis.iter().enumerate() {
                    let last = diff(k_len - 1, x).dot(e).abs();
                    let half = diff(mid, x).dot(e).abs();
                    tested += 1;
                    if last >= tau_div && last >= half {
                        passed += 1;
                    } else {
                        flagged.push(((a, b), xi_idx, e_idx));
                    }
                }
            }
            pair_min.push(((a, b), min));
        }
    }
    Ok(DivergenceReport { pair_min, flagged, tested, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::JumpFacet;

    fn p(x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, 0.0)
    }

    fn split(n: usize, amp: f64) -> DisplacementField {
        let facet = JumpFacet::segment(p(0.5, 0.0), p(0.5, 1.0), p(amp, 0.0)).unwrap();
        DisplacementField::from_fn(Domain::unit_square(n), move |x| if x.x > 0.5 { p(amp, 0.0) } else { Vec3::zeros() }, vec![facet]).unwrap()
    }

    #[test]
    fn column_of_bad_cubes() {
        let f = split(32, 2.0);
        let g = dyadic_cubes(f.domain(), 0.25, 0).unwrap();
        let cl = classify_cubes(&f, &g, 0.1).unwrap();
        assert_eq!(cl.bad.len(), 4);
        assert_eq!(cl.good.len(), 12);
        for &q in &cl.bad {
            assert!((g.cubes()[q].center().x - 0.375).abs() < 1e-12);
        }
        assert!(classify_cubes(&f, &g, 4.5).unwrap().bad.is_empty());
    }

    #[test]
    fn stabilization_index() {
        let seq: Vec<_> = (1..=10).map(|k| split(32, k as f64 / 5.0)).collect();
        let g = dyadic_cubes(seq[0].domain(), 0.25, 0).unwrap();
        let cl = stabilize_classification(&seq, &g, 0.1).unwrap();
        assert!(cl.stable);
        assert_eq!(cl.k_stable, Some(5));
        let osc: Vec<_> = (1..=10).map(|k| split(32, if k % 2 == 0 { 2.0 } else { 0.5 })).collect();
        let cl = stabilize_classification(&osc, &g, 0.1).unwrap();
        assert!(!cl.stable);
        assert_eq!(cl.bad.len(), 4);
    }

    #[test]
    fn pair_verdicts() {
        let k: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        assert_eq!(classify_pair(&k, 1e-6, 1e-4), PairVerdict::Diverging);
        assert_eq!(classify_pair(&[0.0; 20], 1e-6, 1e-4), PairVerdict::Bounded);
        let osc: Vec<f64> = (0..20).map(|k| if k % 2 == 0 { 1.0 } else { 0.5 }).collect();
        assert_eq!(classify_pair(&osc, 1e-6, 1e-4), PairVerdict::Indeterminate);
        let a: Vec<RigidMotion> = (1..=5).map(|k| RigidMotion::planar(k as f64, Vec3::zeros())).collect();
        let b = vec![RigidMotion::zero(2); 5];
        let d = divergence_profile(&a, &b);
        assert!(d.iter().zip(1..).all(|(v, k)| (v - k as f64).abs() < 1e-12));
    }

    #[test]
    fn divergence_directions() {
        let d = Domain::unit_square(8);
        let labels = (0..d.cell_count()).map(|c| if d.cell_center(c).x > 0.5 { 2 } else { 1 }).collect();
        let part = CaccioppoliPartition::new(d, labels).unwrap();
        let motions: Vec<_> = (1..=10)
            .map(|k| PiecewiseRigidMotion::new(part.clone(), vec![RigidMotion::zero(2), RigidMotion::planar(0.0, p(k as f64, 0.0))]).unwrap())
            .collect();
        let r = verify_divergence(&motions, &[p(0.3, 0.3)], &[Vec3::y(), Vec3::x()], 1.0).unwrap();
        assert_eq!(r.tested, 2);
        assert_eq!(r.passed, 1);
        assert_eq!(r.flagged, vec![((1, 2), 0, 0)]);
    }
}
