//! Seeded fields and sequences shared by the calibration run, the acceptance tests, the CLI and
//! the benchmarks.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compactness::{EnergyMode, NoiseSpec, PieceRate, SequenceSpec};
use crate::error::{GbdError, Result};
use crate::field::{CaccioppoliPartition, DisplacementField, Domain, JumpFacet, RigidMotion};
use crate::geometry::{Aabb, Vec3};

fn p(x: f64, y: f64) -> Vec3 {
    Vec3::new(x, y, 0.0)
}

/// Chord of the unit square along the line through `a` with direction `dir`.
fn chord(a: Vec3, dir: Vec3) -> Option<(Vec3, Vec3)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for ax in 0..2 {
        if dir[ax].abs() < 1e-14 {
            if !(0.0..=1.0).contains(&a[ax]) {
                return None;
            }
            continue;
        }
        let (s, e) = ((0.0 - a[ax]) / dir[ax], (1.0 - a[ax]) / dir[ax]);
        t0 = t0.max(s.min(e));
        t1 = t1.min(s.max(e));
    }
    (t1 - t0 > 1e-6).then(|| (a + dir * t0, a + dir * t1))
}

#[derive(Clone, Debug)]
enum Inclusion {
    // u jumps by `v` crossing the line towards the normal side
    HalfPlane { a: Vec3, n: Vec3, v: Vec3 },
    // u is shifted by `v` inside the triangle
    Triangle { verts: [Vec3; 3], v: Vec3 },
}

fn inside_triangle(t: &[Vec3; 3], x: &Vec3) -> bool {
    (0..3).all(|i| {
        let (a, b) = (t[i], t[(i + 1) % 3]);
        let (e, r) = (b - a, x - a);
        e.x * r.y - e.y * r.x > 0.0
    })
}

/// Seeded field on the unit square: a rigid motion plus a smooth perturbation plus up to three
/// facets, either chords with jumps below 1 or tiny triangles with jumps of at least 1 whose
/// total length keeps the large-jump density below the early-exit threshold.
pub fn calibration_field(n: usize, seed: u64) -> Result<DisplacementField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = Domain::unit_square(n);
    let rigid = RigidMotion::planar(rng.random_range(-1.0..1.0), p(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let modes: Vec<(Vec3, f64, Vec3)> = (0..3)
        .map(|_| {
            let f = p(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let amp = p(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            (f, rng.random_range(0.0..std::f64::consts::TAU), amp)
        })
        .collect();
    let count = rng.random_range(0..=3usize);
    let mut inclusions = Vec::new();
    let mut facets = Vec::new();
    // tiny triangles share a length budget of a quarter of the threshold
    let budget = 0.25 / 256.0;
    for _ in 0..count {
        if rng.random_bool(0.5) {
            let a = p(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
            let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let dir = p(th.cos(), th.sin());
            let Some((s, e)) = chord(a, dir) else { continue };
            let v = p(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
            let f = JumpFacet::segment(s, e, v)?;
            if facets.iter().any(|g: &JumpFacet| g.overlaps(&f)) {
                continue;
            }
            inclusions.push(Inclusion::HalfPlane { a: s, n: *f.normal(), v });
            facets.push(f);
        } else {
            let c = p(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            let r = budget / 6.0;
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let verts: [Vec3; 3] = std::array::from_fn(|i| {
                let t = phase + i as f64 * std::f64::consts::TAU / 3.0;
                c + p(t.cos(), t.sin()) * r
            });
            let amp = rng.random_range(1.0..3.0);
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let v = p(th.cos(), th.sin()) * amp;
            let edges: Vec<JumpFacet> = (0..3).map(|i| JumpFacet::segment(verts[i], verts[(i + 1) % 3], -v)).collect::<Result<_>>()?;
            if edges.iter().any(|e| facets.iter().any(|g: &JumpFacet| g.touches(&e.vertices()[0], &e.vertices()[1]))) {
                continue;
            }
            inclusions.push(Inclusion::Triangle { verts, v });
            facets.extend(edges);
        }
    }
    let f = move |x: &Vec3| {
        let mut u = rigid.apply(x);
        for (k, ph, amp) in &modes {
            u += amp * (std::f64::consts::TAU * k.dot(x) + ph).sin();
        }
        for inc in &inclusions {
            match inc {
                Inclusion::HalfPlane { a, n, v } => {
                    if n.dot(&(x - a)) > 0.0 {
                        u += v;
                    }
                }
                Inclusion::Triangle { verts, v } => {
                    if inside_triangle(verts, x) {
                        u += v;
                    }
                }
            }
        }
        u
    };
    DisplacementField::from_fn(domain, f, facets)
}

/// `count` calibration fields, each fitted on the whole unit square.
pub fn calibration_cases(n: usize, count: usize, seed: u64) -> Result<Vec<(DisplacementField, Aabb)>> {
    (0..count)
        .map(|i| {
            let f = calibration_field(n, seed.wrapping_add(i as u64))?;
            let q = *f.domain().bounds();
            Ok((f, q))
        })
        .collect()
}

/// A named acceptance sequence with its ground truth.
#[derive(Clone, Debug)]
pub struct Suite {
    pub name: &'static str,
    pub spec: SequenceSpec,
    /// `H^{d-1}` of the true interfaces between pieces.
    pub interface_area: f64,
}

fn stripes(domain: &Domain, cuts: &[f64]) -> CaccioppoliPartition {
    let labels = (0..domain.cell_count())
        .map(|c| 1 + cuts.iter().filter(|&&x| domain.cell_center(c).x > x).count() as u32)
        .collect();
    CaccioppoliPartition::new(domain.clone(), labels).expect("stripes cover every label")
}

fn smooth_base(domain: &Domain) -> Result<DisplacementField> {
    let pi = std::f64::consts::PI;
    DisplacementField::from_fn(
        domain.clone(),
        move |x| p(0.01 * (pi * x.x).sin() * (pi * x.y).sin(), 0.01 * (pi * x.x).cos() * (pi * x.y).sin()),
        vec![],
    )
}

fn spec(base: DisplacementField, partition: CaccioppoliPartition, rates: Vec<PieceRate>, k_len: usize) -> SequenceSpec {
    SequenceSpec { base, partition, rates, noise: None, k_len, mode: EnergyMode::Gbd, bound: None }
}

/// Two halves split at `x = 1/2`; the right half drifts by `k (1, 1/2)`.
pub fn two_piece(n: usize, k_len: usize) -> Result<Suite> {
    let d = Domain::unit_square(n);
    let s = spec(
        smooth_base(&d)?,
        stripes(&d, &[0.5]),
        vec![PieceRate::translation(2, Vec3::zeros()), PieceRate::translation(2, p(1.0, 0.5))],
        k_len,
    );
    Ok(Suite { name: "two-piece", spec: s, interface_area: 1.0 })
}

/// Three vertical stripes cut at cell faces 43 and 85 (of 128); the outer stripes drift apart
/// from the fixed middle one.
pub fn three_stripes(n: usize, k_len: usize) -> Result<Suite> {
    let d = Domain::unit_square(n);
    let h = d.h();
    let cuts = [(43.0 * n as f64 / 128.0).round() * h, (85.0 * n as f64 / 128.0).round() * h];
    let s = spec(
        smooth_base(&d)?,
        stripes(&d, &cuts),
        vec![
            PieceRate::translation(2, p(-1.0, 0.5)),
            PieceRate::translation(2, Vec3::zeros()),
            PieceRate::translation(2, p(0.5, 1.0)),
        ],
        k_len,
    );
    Ok(Suite { name: "three-stripes", spec: s, interface_area: 2.0 })
}

/// `two_piece` plus a smooth perturbation of size `0.05/k`.
pub fn noisy(n: usize, k_len: usize) -> Result<Suite> {
    let mut s = two_piece(n, k_len)?;
    s.name = "noisy";
    s.spec.noise = Some(NoiseSpec { amplitude: 0.05, power: 1.0 });
    Ok(s)
}

/// Two halves; the right half rotates about `(3/4, 1/2)` at unit rate and drifts by `k (1, 0)`.
pub fn rotational(n: usize, k_len: usize) -> Result<Suite> {
    let mut s = two_piece(n, k_len)?;
    s.name = "rotational";
    s.spec.rates[1] = PieceRate { rate: RigidMotion::planar(1.0, p(1.0, 0.0)), center: p(0.75, 0.5) };
    Ok(s)
}

/// Two halves plus a fixed crack of length 40/128 along `y = 1/2` from the left edge, whose opening
/// tapers linearly to zero at the tip; energy measured in the `p = 2` mode.
pub fn gsbd_crack(n: usize, k_len: usize) -> Result<Suite> {
    let d = Domain::unit_square(n);
    let h = d.h();
    let cells = (40.0 * n as f64 / 128.0).round() as usize;
    let len = cells as f64 * h;
    let open = p(0.0, 0.3);
    let taper = move |x: f64| (1.0 - x / len).clamp(0.0, 1.0);
    let pi = std::f64::consts::PI;
    let facets: Vec<JumpFacet> = (0..cells)
        .map(|i| {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            // segment a → b has normal −e_y; u⁺ lies below the crack
            JumpFacet::segment(p(a, 0.5), p(b, 0.5), -open * taper(0.5 * (a + b)))
        })
        .collect::<Result<_>>()?;
    let base = DisplacementField::from_fn(
        d.clone(),
        move |x| {
            let smooth = p(0.01 * (pi * x.x).sin() * (pi * x.y).sin(), 0.01 * (pi * x.x).cos() * (pi * x.y).sin());
            if x.y > 0.5 {
                smooth + open * taper(x.x)
            } else {
                smooth
            }
        },
        facets,
    )?;
    let s = SequenceSpec {
        base,
        partition: stripes(&d, &[0.5]),
        rates: vec![PieceRate::translation(2, Vec3::zeros()), PieceRate::translation(2, p(1.0, 0.5))],
        noise: None,
        k_len,
        mode: EnergyMode::Gsbd { p: 2.0 },
        bound: None,
    };
    Ok(Suite { name: "gsbd-crack", spec: s, interface_area: 1.0 })
}

/// The five acceptance suites at `n` cells per side.
pub fn acceptance_suites(n: usize, k_len: usize) -> Result<Vec<Suite>> {
    Ok(vec![two_piece(n, k_len)?, three_stripes(n, k_len)?, noisy(n, k_len)?, rotational(n, k_len)?, gsbd_crack(n, k_len)?])
}

/// Suite by name: `two-piece`, `three-stripes`, `noisy`, `rotational` or `gsbd-crack`.
pub fn suite_by_name(name: &str, n: usize, k_len: usize) -> Result<Suite> {
    match name {
        "two-piece" => two_piece(n, k_len),
        "three-stripes" => three_stripes(n, k_len),
        "noisy" => noisy(n, k_len),
        "rotational" => rotational(n, k_len),
        "gsbd-crack" => gsbd_crack(n, k_len),
        _ => Err(GbdError::Parameter(format!("unknown suite {name:?}"))),
    }
}

/// Fraction of cells on which two labelings agree after matching labels one to one,
/// greedily by largest overlap.
pub fn label_agreement(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() || a.len() != b.len() {
        return 0.0;
    }
    let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *counts.entry((x, y)).or_default() += 1;
    }
    let mut pairs: Vec<((u32, u32), usize)> = counts.into_iter().collect();
    pairs.sort_by(|p, q| q.1.cmp(&p.1).then(p.0.cmp(&q.0)));
    let (mut used_a, mut used_b) = (BTreeSet::new(), BTreeSet::new());
    let mut hit = 0;
    for ((x, y), n) in pairs {
        if !used_a.contains(&x) && !used_b.contains(&y) {
            used_a.insert(x);
            used_b.insert(y);
            hit += n;
        }
    }
    hit as f64 / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::korn::{early_exit_threshold, j1_area_in};

    #[test]
    fn calibration_fields_stay_below_threshold() {
        for s in 0..40 {
            let f = calibration_field(32, s).unwrap();
            let q = *f.domain().bounds();
            assert!(j1_area_in(&f, &q) < early_exit_threshold(2));
            assert!(f.facets().len() <= 9);
        }
    }

    #[test]
    fn triangle_jump_matches_inside_value() {
        // find a seed with a triangle and check the field against its facet jumps
        for s in 0..200 {
            let f = calibration_field(32, s).unwrap();
            let Some(e) = f.facets().iter().find(|e| e.amplitude() >= 1.0) else { continue };
            let m = e.midpoint();
            let n = *e.normal() * 1e-7;
            let out = f.evaluate(&(m + n)).unwrap();
            let inn = f.evaluate(&(m - n)).unwrap();
            assert!((out - inn - e.jump()).norm() < 1e-5);
            return;
        }
        panic!("no triangle drawn");
    }

    #[test]
    fn suites_have_expected_pieces() {
        let s = acceptance_suites(32, 4).unwrap();
        let pieces: Vec<usize> = s.iter().map(|s| s.spec.partition.piece_count()).collect();
        assert_eq!(pieces, vec![2, 3, 2, 2, 2]);
        assert!((s[4].spec.base.jump_measure(0.0) - 0.3125).abs() < 1e-12);
        assert_eq!(s[1].spec.partition.perimeter(), 2.0);
    }

    #[test]
    fn agreement_ignores_label_names() {
        assert_eq!(label_agreement(&[1, 1, 2, 3], &[3, 3, 1, 2]), 1.0);
        assert_eq!(label_agreement(&[1, 1, 2, 2], &[1, 1, 1, 1]), 0.5);
    }
}
