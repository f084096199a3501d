use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gbdlab_core::compactness::{
    cauchy_check, convergence_check, energy_report, generate_all, generate_sequence, lsc_check, NoiseSpec, PieceRate,
};
use gbdlab_core::korn::{pk_fit, pk_verify};
use gbdlab_core::partition_builder::{build_partition, verify_divergence};
use gbdlab_core::slicing::{check_slice_gradient_identity, jump_surface_measure, mu_hat, IntervalSet, SliceFunction};
use gbdlab_core::suites::two_piece;
use gbdlab_core::{
    Aabb, BuildOptions, CaccioppoliPartition, DisplacementField, Domain, EnergyMode, FitOptions, JumpFacet, PiecewiseRigidMotion,
    RigidMotion, SequenceSpec, Vec3,
};

fn p(x: f64, y: f64) -> Vec3 {
    Vec3::new(x, y, 0.0)
}

fn halves(n: usize) -> CaccioppoliPartition {
    let d = Domain::unit_square(n);
    let labels = (0..d.cell_count()).map(|c| 1 + (d.cell_center(c).x > 0.5) as u32).collect();
    CaccioppoliPartition::new(d, labels).unwrap()
}

fn smooth(n: usize) -> DisplacementField {
    DisplacementField::from_fn(Domain::unit_square(n), |x| p(0.02 * (3.0 * x.y).sin(), 0.01 * x.x * x.y), vec![]).unwrap()
}

fn spec(base: DisplacementField, partition: CaccioppoliPartition, rates: Vec<PieceRate>, k_len: usize) -> SequenceSpec {
    SequenceSpec { base, partition, rates, noise: None, k_len, mode: EnergyMode::Gbd, bound: None }
}

// slice on (0, 1) sampled every 1/8, plus a sample just past 1/2 so the jump gap is negligible
const GAP: f64 = 1e-9;

fn flat_with_jump(amp: f64, slope: f64) -> SliceFunction {
    let mut t: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
    t.insert(5, 0.5 + GAP);
    let v = t.iter().map(|&s| slope * s + if s > 0.5 { amp } else { 0.0 }).collect();
    SliceFunction::from_parts(t, v, vec![(0.5 + 0.5 * GAP, amp)]).unwrap()
}

#[test]
fn line_measures_cap_and_filter_jumps() {
    let full = IntervalSet::full(0.0, 1.0);
    assert_eq!(flat_with_jump(2.0, 0.0).mu_hat_line(&full), 1.0);
    assert!((flat_with_jump(0.3, 0.0).mu_hat_line(&full) - 0.3).abs() < 1e-15);
    let s = flat_with_jump(1.5, 0.0);
    assert_eq!(s.i_sigma(2.0).unwrap(), 1.5);
    assert_eq!(s.i_sigma(1.2).unwrap(), 0.0);
    // slope 1 carries unit variation on the two segments: 0.5 + 0.5
    assert!((flat_with_jump(0.4, 1.0).i_sigma(2.0).unwrap() - 1.4).abs() <= 2.0 * GAP);
}

#[test]
fn jump_measure_filters_facets_by_amplitude() {
    let d = Domain::unit_square(8);
    let big = JumpFacet::segment(p(0.5, 0.0), p(0.5, 1.0), p(5.0, 0.0)).unwrap();
    let u = DisplacementField::new(d.clone(), vec![0.0; 128], vec![big]).unwrap();
    assert_eq!(jump_surface_measure(&u, 3.0).unwrap(), 1.0);
    assert_eq!(jump_surface_measure(&u, 7.0).unwrap(), 0.0);
    let a = JumpFacet::segment(p(0.25, 0.0), p(0.25, 0.5), p(0.5, 0.0)).unwrap();
    let b = JumpFacet::segment(p(0.75, 0.0), p(0.75, 0.5), p(0.0, 2.0)).unwrap();
    let u = DisplacementField::new(d.clone(), vec![0.0; 128], vec![a, b]).unwrap();
    assert_eq!(jump_surface_measure(&u, 1.0).unwrap(), 0.5);
    assert_eq!(jump_surface_measure(&DisplacementField::zeros(d), 0.0).unwrap(), 0.0);
}

#[test]
fn zero_field_has_no_slice_measure() {
    let z = DisplacementField::zeros(Domain::unit_square(16));
    assert_eq!(mu_hat(&z, &[Vec3::x(), Vec3::y(), p(0.6, 0.8)], None).unwrap(), 0.0);
}

#[test]
fn forward_differences_of_a_parabola_are_off_by_h() {
    // ((x + h)² − x²)/h − 2x = h on every interior interval
    for n in [16, 32] {
        let u = DisplacementField::from_fn(Domain::unit_square(n), |x| p(x.x * x.x, 0.0), vec![]).unwrap();
        let r = check_slice_gradient_identity(&u, &Vec3::x(), f64::INFINITY).unwrap();
        let h = 1.0 / n as f64;
        assert!((r.max_error - h).abs() <= 1e-9, "{} vs {h}", r.max_error);
        assert!(r.mean_error >= 0.5 * h);
    }
}

#[test]
fn step_of_amplitude_three_exits_on_the_whole_square_and_fits_off_it() {
    let facet = JumpFacet::segment(p(0.5, 0.0), p(0.5, 1.0), p(3.0, 0.0)).unwrap();
    let u = DisplacementField::from_fn(Domain::unit_square(32), |x| if x.x > 0.5 { p(3.0, 0.0) } else { Vec3::zeros() }, vec![facet]).unwrap();
    let whole = pk_fit(&u, u.domain().bounds(), &FitOptions::default(), 1).unwrap();
    assert!(whole.early_exit);
    assert_eq!(whole.omega.len(), whole.cells.len());
    assert!(pk_verify(&whole, 0.1).holds);
    // a quarter-side cube away from the facet sees a constant field
    let cube = Aabb::new(2, p(0.5, 0.25), p(0.75, 0.5));
    let fit = pk_fit(&u, &cube, &FitOptions::default(), 1).unwrap();
    assert!(!fit.early_exit);
    assert!(fit.residual <= 1e-12);
    assert!((fit.motion.apply(&p(0.6, 0.3)) - p(3.0, 0.0)).norm() <= 1e-10);
    assert_eq!(pk_verify(&fit, 1.0).ratio, 0.0);
}

#[test]
fn fixed_smooth_sequence_gives_one_piece() {
    let base = smooth(32);
    let trivial = CaccioppoliPartition::trivial(base.domain().clone());
    let s = spec(base, trivial.clone(), vec![PieceRate::translation(2, Vec3::zeros())], 8);
    let seq = generate_all(&s).unwrap();
    let built = build_partition(&seq, &BuildOptions::default()).unwrap();
    assert_eq!(built.partition.piece_count(), 1);
    assert_eq!(built.partition.perimeter(), 0.0);
    let l = lsc_check(&seq, &trivial, None, &[2.0, 4.0], EnergyMode::Gbd).unwrap();
    assert!(l.holds);
    assert_eq!(l.lhs, 0.0);
}

#[test]
fn translating_half_gives_two_pieces_with_diverging_motions() {
    let d = Domain::unit_square(32);
    let s = spec(DisplacementField::zeros(d), halves(32), vec![PieceRate::translation(2, Vec3::zeros()), PieceRate::translation(2, p(1.0, 0.0))], 10);
    let seq = generate_all(&s).unwrap();
    let built = build_partition(&seq, &BuildOptions::default()).unwrap();
    assert_eq!(built.partition.piece_count(), 2);
    assert!((built.partition.perimeter() - 1.0).abs() < 1e-12);
    let d = built.partition.domain();
    let at = |x: Vec3| built.partition.label(d.flat(d.cell_of_point(&x)));
    let (left, right) = (at(p(0.1, 0.5)), at(p(0.9, 0.5)));
    for (k, m) in built.motions.iter().enumerate() {
        let diff = m.motion(right).b() - m.motion(left).b();
        assert!((diff - p((k + 1) as f64, 0.0)).norm() <= 1e-9, "k = {}: {diff:?}", k + 1);
    }
}

#[test]
fn decaying_noise_keeps_the_slice_measure_bounded() {
    let mut s = spec(smooth(32), halves(32), vec![PieceRate::translation(2, Vec3::zeros()), PieceRate::translation(2, p(1.0, 0.5))], 12);
    s.noise = Some(NoiseSpec { amplitude: 0.2, power: 2.0 });
    s.bound = Some(4.0);
    let seq = generate_all(&s).unwrap();
    let dirs = gbdlab_core::slicing::default_directions(2);
    let m: Vec<f64> = seq.iter().map(|u| mu_hat(u, &dirs, None).unwrap()).collect();
    assert!(m.iter().all(|v| v.is_finite() && *v <= 4.0));
    s.bound = Some(0.5);
    assert!(generate_sequence(&s, 3).is_err());
}

#[test]
fn rotating_piece_leaves_the_elastic_energy_unchanged() {
    let mut s = spec(smooth(32), halves(32), vec![PieceRate::translation(2, Vec3::zeros()), PieceRate::translation(2, Vec3::zeros())], 6);
    s.rates[1] = PieceRate { rate: RigidMotion::planar(1.0, Vec3::zeros()), center: p(0.75, 0.5) };
    s.mode = EnergyMode::Gsbd { p: 2.0 };
    let e: Vec<f64> = generate_all(&s).unwrap().iter().map(|u| energy_report(u, 2.0).unwrap().p_energy).collect();
    for v in &e {
        assert!((v - e[0]).abs() <= 1e-12 * (1.0 + e[0]), "{e:?}");
    }
}

#[test]
fn exact_piecewise_rigid_sequence_has_zero_cauchy_lhs() {
    let d = Domain::unit_square(32);
    let s = spec(DisplacementField::zeros(d), halves(32), vec![PieceRate::translation(2, Vec3::zeros()), PieceRate::translation(2, p(1.0, 0.5))], 8);
    let seq = generate_all(&s).unwrap();
    let built = build_partition(&seq, &BuildOptions::default()).unwrap();
    for j in 0..=built.report.j_max {
        let c = cauchy_check(&seq, &built, &Vec3::x(), 1.0, j).unwrap();
        assert!(c.lhs.iter().all(|&v| v <= 1e-12), "{:?}", c.lhs);
        assert!(c.holds);
    }
}

#[test]
fn doubling_sigma_doubles_the_first_bound_term() {
    let s = two_piece(32, 10).unwrap().spec;
    let seq = generate_all(&s).unwrap();
    let built = build_partition(&seq, &BuildOptions::default()).unwrap();
    let e = p(0.6, 0.8);
    let j = built.report.j_max;
    let a = cauchy_check(&seq, &built, &e, 1.0, j).unwrap();
    let b = cauchy_check(&seq, &built, &e, 2.0, j).unwrap();
    let tail = |r: &gbdlab_core::compactness::CauchyReport| r.bound - r.energy_constant * built.report.grids[j].delta();
    assert!((tail(&b) - 2.0 * tail(&a)).abs() <= 1e-12 * (1.0 + tail(&b)));
    // larger truncation level: pointwise no smaller, and no more than twice
    for (x, y) in a.lhs.iter().zip(&b.lhs) {
        assert!(*y >= x - 1e-15 && *y <= 2.0 * x + 1e-15, "{x} -> {y}");
    }
}

#[test]
fn noise_deviation_decays_with_the_noise_level() {
    let mut s = spec(smooth(32), halves(32), vec![PieceRate::translation(2, Vec3::zeros()), PieceRate::translation(2, p(1.0, 0.5))], 12);
    s.noise = Some(NoiseSpec { amplitude: 0.05, power: 1.0 });
    let seq = generate_all(&s).unwrap();
    let motions: Vec<PiecewiseRigidMotion> = (1..=12).map(|k| s.pattern(k)).collect();
    let noise: Vec<f64> = (1..=12).map(|k| s.noise_bound(k)).collect();
    let r = convergence_check(&seq, &motions, &noise).unwrap();
    // u_k − a_k = base + n_k φ, so deviations are |n_k − median of the tail n| × |φ|
    let mut tail: Vec<f64> = noise[r.tail_start - 1..].to_vec();
    tail.sort_by(f64::total_cmp);
    let m = if tail.len() % 2 == 1 { tail[tail.len() / 2] } else { 0.5 * (tail[tail.len() / 2 - 1] + tail[tail.len() / 2]) };
    let scale = |k: usize| (noise[k - 1] - m).abs();
    for (k, l) in [(1, 2), (2, 4), (1, 4)] {
        let want = scale(k) / scale(l);
        let got = r.rows[k - 1].q99 / r.rows[l - 1].q99;
        assert!((got - want).abs() <= 1e-9 * want, "k = {k}, l = {l}: {got} vs {want}");
    }
}

#[test]
fn generic_directions_see_the_divergence() {
    let part = halves(16);
    let motions: Vec<PiecewiseRigidMotion> = (1..=20)
        .map(|k| PiecewiseRigidMotion::new(part.clone(), vec![RigidMotion::zero(2), RigidMotion::planar(0.0, p(k as f64, 0.3 * k as f64))]).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let xis: Vec<Vec3> = (0..64)
        .map(|_| {
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            p(th.cos(), th.sin())
        })
        .collect();
    let r = verify_divergence(&motions, &[p(0.25, 0.5)], &xis, 0.1).unwrap();
    assert_eq!(r.tested, 64);
    assert!(r.passed >= 63, "{} passed", r.passed);
}
