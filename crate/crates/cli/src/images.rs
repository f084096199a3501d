//! Grayscale grid images (binary PGM). Row 0 is the top of the domain; 3D grids show the middle z layer.

use std::path::Path;

use anyhow::{Context, Result};
use gbdlab_core::Domain;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

pub fn write_pgm(path: &Path, domain: &Domain, cell_value: impl Fn(usize) -> u8) -> Result<()> {
    let [nx, ny, nz] = domain.counts();
    let z = nz / 2;
    let mut pixels = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        let y = ny - 1 - row;
        for x in 0..nx {
            pixels.push(cell_value(domain.flat([x, y, z])));
        }
    }
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, nx as u32, ny as u32, ExtendedColorType::L8)
        .with_context(|| format!("writing {}", path.display()))
}

/// Labels spread evenly over the gray range.
pub fn labels_image(path: &Path, domain: &Domain, labels: &[u32]) -> Result<()> {
    let top = labels.iter().copied().max().unwrap_or(1).max(2) - 1;
    write_pgm(path, domain, |c| ((labels[c].saturating_sub(1)) as f64 / top as f64 * 255.0).round() as u8)
}

/// Nonnegative values scaled so the largest is white.
pub fn scalar_image(path: &Path, domain: &Domain, values: &[f64]) -> Result<()> {
    let top = values.iter().copied().fold(0.0, f64::max);
    let scale = if top > 0.0 { 255.0 / top } else { 0.0 };
    write_pgm(path, domain, |c| (values[c].max(0.0) * scale).round().min(255.0) as u8)
}
