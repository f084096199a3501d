use std::sync::Arc;

use proptest::prelude::*;

use gbdlab_core::compactness::{cauchy_check, cell_gradient, generate_all, truncate};
use gbdlab_core::korn::{pk_fit, pk_verify};
use gbdlab_core::partition_builder::{build_partition, classify_cubes};
use gbdlab_core::slicing::{
    default_directions, directions, extract_slice, jump_surface_measure, mu_hat, mu_hat_directional, slice_measure_report, SliceFamily,
};
use gbdlab_core::suites::{calibration_field, label_agreement, two_piece};
use gbdlab_core::{
    dyadic_cubes, Aabb, BuildOptions, CaccioppoliPartition, DisplacementField, Domain, FitOptions, JumpFacet, Mat3, PiecewiseRigidMotion,
    RigidMotion, Sampler, Vec3,
};

fn p(x: f64, y: f64) -> Vec3 {
    Vec3::new(x, y, 0.0)
}

fn unit2(theta: f64) -> Vec3 {
    p(theta.cos(), theta.sin())
}

fn rigid3(w: [f64; 3], b: [f64; 3]) -> RigidMotion {
    RigidMotion::from_axial(Vec3::new(w[0], w[1], w[2]), Vec3::new(b[0], b[1], b[2]))
}

/// `u + r` with the sampler shifted too.
fn plus_rigid(u: &DisplacementField, r: &RigidMotion) -> DisplacementField {
    let d = u.domain().clone();
    let dim = d.dim();
    let mut values = u.values().to_vec();
    for c in 0..d.cell_count() {
        let a = r.apply(&d.cell_center(c));
        for k in 0..dim {
            values[c * dim + k] += a[k];
        }
    }
    let f = DisplacementField::new(d, values, u.facets().to_vec()).unwrap();
    match u.sampler() {
        Some(s) => {
            let (s, r) = (s.clone(), r.clone());
            let shifted: Sampler = Arc::new(move |x: &Vec3| s(x) + r.apply(x));
            f.with_sampler(shifted)
        }
        None => f,
    }
}

/// `x ↦ u(x/λ)` on the box scaled by `λ`.
fn rescaled(u: &DisplacementField, lambda: f64) -> DisplacementField {
    let d = u.domain();
    let b = d.bounds();
    let dom = Domain::new(2, &[b.min.x * lambda, b.min.y * lambda], &[b.max.x * lambda, b.max.y * lambda], d.h() * lambda).unwrap();
    let facets = u
        .facets()
        .iter()
        .map(|f| JumpFacet::segment(f.vertices()[0] * lambda, f.vertices()[1] * lambda, *f.jump()).unwrap())
        .collect();
    let g = DisplacementField::new(dom, u.values().to_vec(), facets).unwrap();
    match u.sampler() {
        Some(s) => {
            let s = s.clone();
            let scaled: Sampler = Arc::new(move |x: &Vec3| s(&(x / lambda)));
            g.with_sampler(scaled)
        }
        None => g,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn truncation_is_odd_bounded_and_lipschitz(x in -1e6f64..1e6, y in -1e6f64..1e6, sigma in 1e-3f64..1e3) {
        let (tx, ty) = (truncate(x, sigma), truncate(y, sigma));
        prop_assert_eq!(truncate(-x, sigma), -tx);
        prop_assert!(tx.abs() < sigma);
        prop_assert!((tx - ty).abs() <= (x - y).abs() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn rigid_motions_are_skew(w in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform3(-5.0f64..5.0), m in prop::array::uniform9(-3.0f64..3.0)) {
        let r = rigid3(w, b);
        prop_assert_eq!(r.w() + r.w().transpose(), Mat3::zeros());
        let r = RigidMotion::from_matrix(3, &Mat3::from_row_slice(&m), Vec3::zeros());
        prop_assert_eq!(r.w() + r.w().transpose(), Mat3::zeros());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rigid_fields_have_zero_discrete_strain(omega in -3.0f64..3.0, bx in -2.0f64..2.0, by in -2.0f64..2.0, n in 4usize..40) {
        let r = RigidMotion::planar(omega, p(bx, by));
        let u = DisplacementField::grid_from_fn(Domain::unit_square(n), &|x| r.apply(x), vec![]).unwrap();
        for c in 0..u.domain().cell_count() {
            let g = cell_gradient(&u, c);
            prop_assert!(((g + g.transpose()) * 0.5).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn perimeter_counts_faces_and_ignores_label_names(n in 2usize..12, raw in prop::collection::vec(1u32..5, 144), shift in 1u32..4) {
        let d = Domain::unit_square(n);
        let cells = d.cell_count();
        let part = CaccioppoliPartition::from_raw(d.clone(), &raw[..cells]).unwrap();
        let mut faces = 0;
        for c in 0..cells {
            let m = d.multi(c);
            for a in 0..2 {
                if let Some(up) = d.upper_neighbor(m, a) {
                    faces += (part.label(c) != part.label(d.flat(up))) as usize;
                }
            }
        }
        prop_assert!((part.perimeter() - faces as f64 * d.h()).abs() < 1e-12);
        let k = part.piece_count() as u32;
        let permuted: Vec<u32> = part.labels().iter().map(|l| (l - 1 + shift) % k + 1).collect();
        let q = CaccioppoliPartition::new(d, permuted).unwrap();
        prop_assert_eq!(q.perimeter(), part.perimeter());
    }

    #[test]
    fn piecewise_motion_evaluates_by_label(n in 2usize..10, raw in prop::collection::vec(1u32..4, 100), w in prop::collection::vec(-1.0f64..1.0, 9)) {
        let d = Domain::unit_square(n);
        let part = CaccioppoliPartition::from_raw(d.clone(), &raw[..d.cell_count()]).unwrap();
        let motions: Vec<RigidMotion> = (0..part.piece_count()).map(|i| RigidMotion::planar(w[3 * i], p(w[3 * i + 1], w[3 * i + 2]))).collect();
        let pr = PiecewiseRigidMotion::new(part.clone(), motions.clone()).unwrap();
        for c in 0..d.cell_count() {
            let x = d.cell_center(c);
            prop_assert_eq!(pr.at_cell(c), motions[part.label(c) as usize - 1].apply(&x));
        }
    }

    #[test]
    fn dyadic_levels_refine(nx in 8usize..40, ny in 8usize..40, base in 2usize..8) {
        let h = 1.0 / 64.0;
        let d = Domain::new(2, &[0.0, 0.0], &[nx as f64 * h, ny as f64 * h], h).unwrap();
        let delta0 = base as f64 * 2.0 * h;
        let mut coarse = dyadic_cubes(&d, delta0, 0).unwrap();
        for j in 1..4 {
            let Ok(fine) = dyadic_cubes(&d, delta0, j) else { break };
            let covered = coarse.cell_owner(&d);
            for (i, q) in fine.cubes().iter().enumerate() {
                prop_assert!(q.bounds.min.x >= -1e-12 && q.bounds.max.x <= d.bounds().max.x + 1e-12);
                prop_assert!((q.side() - fine.delta()).abs() < 1e-12);
                match fine.parent_in(i, &coarse) {
                    Some(par) => prop_assert!(coarse.cubes()[par].bounds.contains_closed(&q.center(), 1e-12)),
                    // outside every coarse cube: some of its cells lie in the uncovered band
                    None => prop_assert!(q.cells(&d).iter().any(|&c| covered[c].is_none())),
                }
            }
            coarse = fine;
        }
    }

    #[test]
    fn evaluation_is_exact_on_affine_fields(a in prop::array::uniform4(-2.0f64..2.0), b in prop::array::uniform2(-1.0f64..1.0), x in 0.0f64..1.0, y in 0.0f64..1.0, n in 4usize..32) {
        let f = move |q: &Vec3| p(a[0] * q.x + a[1] * q.y + b[0], a[2] * q.x + a[3] * q.y + b[1]);
        // values only, so evaluation goes through interpolation
        let u = DisplacementField::grid_from_fn(Domain::unit_square(n), &f, vec![]).unwrap().without_sampler();
        let q = p(x, y);
        prop_assert!((u.evaluate(&q).unwrap() - f(&q)).abs().max() <= 1e-12);
    }

    #[test]
    fn slice_families_are_orthogonal_and_cover(theta in 0.0f64..std::f64::consts::PI, n in 8usize..48) {
        let d = Domain::unit_square(n);
        let xi = unit2(theta);
        let fam = SliceFamily::new(&d, &xi, d.h()).unwrap();
        prop_assert!((fam.direction().norm() - 1.0).abs() < 1e-15);
        let mut covered = 0.0;
        for (i, y) in fam.offsets().iter().enumerate() {
            prop_assert!(y.dot(fam.direction()).abs() <= 1e-12);
            let (t0, t1) = fam.slice(&DisplacementField::zeros(d.clone()), i).unwrap().range();
            covered += fam.weight() * (t1 - t0);
        }
        let diam = d.bounds().diameter();
        prop_assert!(covered >= (1.0 - 2.0 * d.h() / diam) * d.volume());
    }

    #[test]
    fn slices_see_facet_jumps_along_the_direction(theta in 0.05f64..1.5, vx in -3.0f64..3.0, vy in -3.0f64..3.0, s in 0.2f64..0.8) {
        let v = p(vx, vy);
        let f = JumpFacet::segment(p(0.5, 0.0), p(0.5, 1.0), v).unwrap();
        let u = DisplacementField::from_fn(Domain::unit_square(32), move |x| if x.x > 0.5 { v } else { Vec3::zeros() }, vec![f.clone()]).unwrap();
        let xi = unit2(theta);
        // line through (0.5, s) with offset perpendicular to xi
        let q = p(0.5, s);
        let y = q - xi * q.dot(&xi);
        let sl = extract_slice(&u, &xi, &y).unwrap();
        prop_assert_eq!(sl.jumps().len(), 1);
        let sign = f.normal().dot(&xi).signum();
        prop_assert!((sl.jumps()[0].amplitude - sign * v.dot(&xi)).abs() <= 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn slice_measures_are_flip_symmetric(seed in 0u64..1000, theta in 0.0f64..std::f64::consts::PI) {
        let u = calibration_field(32, seed).unwrap();
        let xi = unit2(theta);
        let a = mu_hat_directional(&u, &xi, None).unwrap();
        let b = mu_hat_directional(&u, &(-xi), None).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn mu_hat_is_monotone_in_directions_and_additive(seed in 0u64..1000, split in 1usize..1023) {
        let u = calibration_field(32, seed).unwrap();
        let few = directions(2, 4);
        let many = directions(2, 8);
        prop_assert!(mu_hat(&u, &few, None).unwrap() <= mu_hat(&u, &many, None).unwrap() + 1e-12);
        let dirs = default_directions(2);
        let a: Vec<bool> = (0..1024).map(|c| c < split).collect();
        let b: Vec<bool> = a.iter().map(|x| !x).collect();
        let whole = mu_hat(&u, &dirs, None).unwrap();
        let parts = mu_hat(&u, &dirs, Some(&a)).unwrap() + mu_hat(&u, &dirs, Some(&b)).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-10 * (1.0 + whole));
    }

    #[test]
    fn off_jump_variation_is_dominated(seed in 0u64..1000, sigma in 1.1f64..8.0) {
        let u = calibration_field(32, seed).unwrap();
        let dirs = directions(2, 6);
        let r = slice_measure_report(&u, &dirs, &[sigma]).unwrap();
        for (k, d) in r.directions.iter().enumerate() {
            let lines: f64 = r.lines.iter().filter(|l| l.direction == k).map(|l| d.weight * l.mu_hat_line).sum();
            prop_assert!((lines - d.mu_hat).abs() <= 1e-12 * (1.0 + d.mu_hat));
            let direct = mu_hat_directional(&u, &dirs[k], None).unwrap();
            prop_assert!((direct - d.mu_hat).abs() <= 1e-9 * (1.0 + d.mu_hat));
            prop_assert!(d.i_sigma[0] <= sigma * d.mu_hat * 1.01);
        }
    }

    #[test]
    fn jump_measure_decreases_in_sigma(seed in 0u64..1000) {
        let u = calibration_field(32, seed).unwrap();
        let m: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|&s| jump_surface_measure(&u, s).unwrap()).collect();
        prop_assert!(m.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bad_volume_is_bounded(seed in 0u64..1000, eta in 0.005f64..0.5, j in 0usize..4) {
        let u = calibration_field(64, seed).unwrap();
        let grid = dyadic_cubes(u.domain(), 0.5, j).unwrap();
        let cl = classify_cubes(&u, &grid, eta).unwrap();
        let bound = grid.delta() / eta * jump_surface_measure(&u, 1.0).unwrap();
        prop_assert!(cl.bad_volume(&grid) <= bound + 1e-12);
    }

    #[test]
    fn fits_shift_with_added_rigid_motions(seed in 0u64..1000, omega in -1.0f64..1.0, bx in -1.0f64..1.0, by in -1.0f64..1.0) {
        let u = calibration_field(32, seed).unwrap();
        let r = RigidMotion::planar(omega, p(bx, by));
        let v = plus_rigid(&u, &r);
        let cube = *u.domain().bounds();
        let fu = pk_fit(&u, &cube, &FitOptions::default(), seed).unwrap();
        let fv = pk_fit(&v, &cube, &FitOptions::default(), seed).unwrap();
        let shifted = fu.motion.add(&r);
        prop_assert!((fv.motion.w() - shifted.w()).abs().max() <= 1e-9);
        prop_assert!((fv.motion.b() - shifted.b()).abs().max() <= 1e-9);
        prop_assert_eq!(&fv.omega, &fu.omega);
        prop_assert!((fv.residual - fu.residual).abs() <= 1e-9);
    }

    #[test]
    fn fit_ratio_is_scale_invariant(seed in 0u64..1000, lambda in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0])) {
        let u = calibration_field(32, seed).unwrap();
        let v = rescaled(&u, lambda);
        let fu = pk_fit(&u, u.domain().bounds(), &FitOptions::default(), seed).unwrap();
        let fv = pk_fit(&v, v.domain().bounds(), &FitOptions::default(), seed).unwrap();
        let (ru, rv) = (pk_verify(&fu, 1.0).ratio, pk_verify(&fv, 1.0).ratio);
        prop_assert!((ru - rv).abs() <= 0.01 * ru.max(1e-12), "{} vs {}", ru, rv);
    }

    #[test]
    fn accepted_fits_are_well_conditioned_and_omega_is_small(seed in 0u64..1000, n in prop::sample::select(vec![32usize, 64])) {
        let u = calibration_field(n, seed).unwrap();
        let cube: Aabb = *u.domain().bounds();
        let fit = pk_fit(&u, &cube, &FitOptions::default(), seed).unwrap();
        prop_assert!(!fit.early_exit);
        prop_assert!(fit.diagnostics.condition <= 1e6);
        // |ω| against the acceptance factor 16(d+1) of the selection rule
        let omega_vol = fit.omega.len() as f64 * u.domain().cell_volume();
        prop_assert!(omega_vol <= 48.0 * fit.delta * fit.jump_density * fit.delta + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn build_sets_shrink_and_cauchy_matrices_are_symmetric(seed in 0u64..1000) {
        let seq = generate_all(&two_piece(32, 8).unwrap().spec).unwrap();
        let built = build_partition(&seq, &BuildOptions { seed, ..Default::default() }).unwrap();
        let r = &built.report;
        for j in 0..r.j_max {
            let (a, b) = (r.b_mask(j), r.b_mask(j + 1));
            prop_assert!(b.iter().zip(a).all(|(&fine, &coarse)| !fine || coarse));
        }
        let c = cauchy_check(&seq, &built, &p(0.6, 0.8), 2.0, r.j_max).unwrap();
        for (k, row) in c.matrix.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                prop_assert!(*v >= 0.0 && *v == c.matrix[l][k]);
            }
        }
    }
}

#[test]
fn labels_barely_depend_on_the_master_seed() {
    let seq = generate_all(&two_piece(64, 12).unwrap().spec).unwrap();
    let base = build_partition(&seq, &BuildOptions::default()).unwrap();
    for seed in [1, 2, 3] {
        let other = build_partition(&seq, &BuildOptions { seed, ..Default::default() }).unwrap();
        assert!(label_agreement(base.partition.labels(), other.partition.labels()) >= 0.99);
    }
}
