//! Fixtures shared by the kernel benchmarks.

use gbdlab_core::compactness::generate_all;
use gbdlab_core::suites::{calibration_field, two_piece};
use gbdlab_core::DisplacementField;

/// Smooth field with a few inclusions, `n` cells per side.
pub fn inclusion_field(n: usize) -> DisplacementField {
    calibration_field(n, 11).expect("calibration field")
}

/// The two-piece sequence at `n` cells per side.
pub fn two_piece_sequence(n: usize, k_len: usize) -> Vec<DisplacementField> {
    generate_all(&two_piece(n, k_len).expect("suite").spec).expect("sequence")
}
