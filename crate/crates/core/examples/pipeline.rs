//! Runs partition, convergence, Cauchy and lsc checks on every acceptance suite.

use std::time::Instant;

use gbdlab_core::compactness::{cauchy_check, convergence_check, generate_all, lsc_check};
use gbdlab_core::partition_builder::{build_partition, BuildOptions};
use gbdlab_core::suites::{acceptance_suites, label_agreement};
use gbdlab_core::Vec3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map_or(Ok(128), |s| s.parse())?;
    for suite in acceptance_suites(n, 20)? {
        let t = Instant::now();
        let seq = generate_all(&suite.spec)?;
        let built = build_partition(&seq, &BuildOptions::default())?;
        let tb = t.elapsed();
        let truth = suite.spec.partition.labels();
        let agree = label_agreement(built.partition.labels(), truth);
        let noise: Vec<f64> = (1..=20).map(|k| suite.spec.noise_bound(k)).collect();
        let conv = convergence_check(&seq, &built.motions, &noise)?;
        let lsc = lsc_check(&seq, &built.partition, Some(&suite.spec.base), &[2.0, 4.0, 8.0, 16.0, 32.0], suite.spec.mode)?;
        println!(
            "{}: pieces={} agree={:.4} perim={:.4} tau=({:.2e},{:.2e}) demoted={} warnings={:?} build={:.1?}",
            suite.name,
            built.partition.piece_count(),
            agree,
            built.partition.perimeter(),
            built.report.tau_bound,
            built.report.tau_div,
            built.report.demoted.len(),
            built.report.warnings,
            tb
        );
        let tail: Vec<String> = conv.rows[conv.tail_start - 1..].iter().map(|r| format!("{:.1e}/{:.1e}", r.q99, r.tolerance)).collect();
        println!("  conv ok={} interp={:.2e} escape={:.4} tail={:?}", conv.tail_within_tolerance(), conv.interpolation_bound, conv.escape_volume, tail);
        println!("  lsc holds={} lhs={:.4} rhs={:.4} chosen={} warn={:?}", lsc.holds, lsc.lhs, lsc.rhs, lsc.chosen, lsc.warnings);
        for j in 0..=built.report.j_max {
            for sigma in [1.0, 4.0] {
                for e in [Vec3::x(), Vec3::y()] {
                    let c = cauchy_check(&seq, &built, &e, sigma, j)?;
                    let max = c.lhs.iter().copied().fold(0.0, f64::max);
                    println!("  cauchy j={j} s={sigma} e={:?} holds={} max_lhs={:.3e} bound={:.3e} eta={:.3e} cw={:.2}", [e.x, e.y], c.holds, max, c.bound, c.eta, c.omega_constant);
                }
            }
        }
        println!("  total {:.1?}", t.elapsed());
    }
    Ok(())
}
