//! Grayscale spectrogram images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::dsp::Grid;
use crate::error::{Error, Result};

/// Dynamic range mapped onto the gray scale.
pub const DYNAMIC_RANGE_DB: f64 = 80.0;

/// Row-major 8-bit pixels, `rows` high and `cols` wide, lowest frequency in
/// the bottom row. Values are linear magnitudes shown in dB relative to the
/// grid maximum; anything more than 80 dB down is black. An all-zero grid is
/// black throughout.
pub fn spectrogram_pixels(grid: &Grid) -> Result<Vec<u8>> {
    if grid.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "magnitudes must be finite and non-negative".into(),
        ));
    }
    let peak = grid.data().iter().fold(0.0f64, |m, &v| m.max(v));
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut px = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        for c in 0..cols {
            let v = grid.get(r, c);
            let level = if peak > 0.0 && v > 0.0 {
                let db = 20.0 * (v / peak).log10();
                ((db + DYNAMIC_RANGE_DB) / DYNAMIC_RANGE_DB).clamp(0.0, 1.0)
            } else {
                0.0
            };
            px.push((level * 255.0).round() as u8);
        }
    }
    Ok(px)
}

/// Writes a grayscale PNG: frequency rows bottom to top, frames left to right.
pub fn emit_spectrogram_png(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let px = spectrogram_pixels(grid)?;
    let file = File::create(path.as_ref())?;
    let mut enc = png::Encoder::new(BufWriter::new(file), grid.cols() as u32, grid.rows() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&px)?;
    writer.finish()?;
    Ok(())
}
