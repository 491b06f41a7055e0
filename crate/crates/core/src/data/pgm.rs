use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// `(rows, cols)` of a near-square grid holding `count` tiles.
pub fn grid_dims(count: usize) -> (usize, usize) {
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    (count.div_ceil(cols), cols)
}

/// Writes tiles of `h x w` pixels in `[0, 1]` as a binary PGM (P5) grid
/// with `cols` tiles per row and a one-pixel black gutter.
pub fn write_pgm_grid(path: impl AsRef<Path>, tiles: &[&[f64]], h: usize, w: usize, cols: usize) -> Result<()> {
    if tiles.is_empty() || cols == 0 {
        return Err(Error::Validation("nothing to draw".into()));
    }
    if let Some(t) = tiles.iter().find(|t| t.len() != h * w) {
        return Err(Error::dim(format!("tile has {} pixels, expected {h}x{w}", t.len())));
    }
    let rows = tiles.len().div_ceil(cols);
    let (gw, gh) = (cols * (w + 1) + 1, rows * (h + 1) + 1);
    let mut img = vec![0u8; gw * gh];
    for (k, tile) in tiles.iter().enumerate() {
        let (ty, tx) = (k / cols, k % cols);
        for y in 0..h {
            for x in 0..w {
                let v = (tile[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                img[(1 + ty * (h + 1) + y) * gw + 1 + tx * (w + 1) + x] = v;
            }
        }
    }
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    fs::write(path, out)?;
    Ok(())
}
