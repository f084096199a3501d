//! Prints the fitted-estimate ratios on the seeded calibration suite at two resolutions.

use std::time::Instant;

use gbdlab_core::korn::{calibrate, FitOptions};
use gbdlab_core::suites::calibration_cases;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for n in [64, 128] {
        let t = Instant::now();
        let cases = calibration_cases(n, 100, 2024)?;
        let r = calibrate(&cases, &FitOptions::default(), 7)?;
        println!(
            "n={n} max_ratio={:.6e} constant={:.6e} early_exits={} failures={} ({:.1?})",
            r.max_ratio,
            r.constant(),
            r.early_exits,
            r.failures,
            t.elapsed()
        );
    }
    Ok(())
}
