use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Separator byte between tiles.
pub const SEPARATOR: u8 = 128;

/// Tiles the rows of `frames` row-major, `cols` per grid row, with
/// 1-pixel separators, into a binary PGM (P5) image. `shape` gives each
/// frame's height and width; without it frames must be square.
pub fn render_image_grid(frames: &Matrix, cols: usize, shape: Option<(usize, usize)>) -> Result<Vec<u8>> {
    let n = frames.rows();
    if n == 0 || cols == 0 {
        return Err(Error::InvalidArgument("image grid needs frames and at least one column".into()));
    }
    let (h, w) = match shape {
        Some((h, w)) if h * w == frames.cols() => (h, w),
        Some((h, w)) => {
            return Err(Error::InvalidArgument(format!(
                "frame shape {h}x{w} does not match width {}",
                frames.cols()
            )))
        }
        None => {
            let side = (frames.cols() as f64).sqrt().round() as usize;
            if side * side != frames.cols() {
                return Err(Error::InvalidArgument(format!(
                    "frames of width {} are not square; give their shape",
                    frames.cols()
                )));
            }
            (side, side)
        }
    };
    if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
    }
    let gc = cols.min(n);
    let gr = n.div_ceil(gc);
    let width = gc * w + gc - 1;
    let height = gr * h + gr - 1;
    let mut pixels = vec![SEPARATOR; width * height];
    for f in 0..n {
        let (top, left) = ((f / gc) * (h + 1), (f % gc) * (w + 1));
        let frame = frames.row(f);
        for y in 0..h {
            for x in 0..w {
                pixels[(top + y) * width + left + x] = (frame[y * w + x] * 255.0).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    Ok(out)
}

pub fn emit_image_grid(frames: &Matrix, cols: usize, shape: Option<(usize, usize)>, path: &Path) -> Result<()> {
    fs::write(path, render_image_grid(frames, cols, shape)?)?;
    Ok(())
}
