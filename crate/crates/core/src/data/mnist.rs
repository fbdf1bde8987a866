use std::fs;
use std::path::Path;

use super::{SequenceDataset, ValueRange};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RandomSource};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images as rows of `rows * cols` pixels in `[0, 1]`, with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages {
    pub images: Matrix,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            what,
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::IdxBadMagic { expected, found });
    }
    Ok(())
}

/// Parses an IDX image file; returns `(count, rows, cols, pixels)` with
/// pixels scaled to `[0, 1]`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    check_magic(bytes, IMAGE_MAGIC, "IDX image header")?;
    let n = be_u32(bytes, 4, "IDX image header")? as usize;
    let rows = be_u32(bytes, 8, "IDX image header")? as usize;
    let cols = be_u32(bytes, 12, "IDX image header")? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "IDX image payload",
            expected,
            found: bytes.len(),
        });
    }
    let pixels = bytes[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, "IDX label header")?;
    let n = be_u32(bytes, 4, "IDX label header")? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "IDX label payload",
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<LabeledImages> {
    let (n, rows, cols, pixels) = read_idx_images(&fs::read(images)?)?;
    let labels = read_idx_labels(&fs::read(labels)?)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    Ok(LabeledImages {
        images: Matrix::from_vec(n, rows * cols, pixels)?,
        labels,
        rows,
        cols,
    })
}

/// Pixels are rounded to the nearest of 256 levels.
pub fn write_idx_images(path: &Path, store: &LabeledImages) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + store.images.len());
    for v in [IMAGE_MAGIC, store.len() as u32, store.rows as u32, store.cols as u32] {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    buf.extend(store.images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    fs::write(path, buf)?;
    Ok(())
}

/// Stroke skeletons on a unit square (x right, y down).
fn strokes(digit: u8) -> &'static [[f64; 4]] {
    const T: f64 = 0.15;
    const M: f64 = 0.5;
    const B: f64 = 0.85;
    const L: f64 = 0.28;
    const R: f64 = 0.72;
    match digit {
        0 => &[[L, T, R, T], [R, T, R, B], [R, B, L, B], [L, B, L, T]],
        1 => &[[0.5, T, 0.5, B], [0.36, 0.28, 0.5, T]],
        2 => &[[L, T, R, T], [R, T, R, M], [R, M, L, B], [L, B, R, B]],
        3 => &[[L, T, R, T], [R, T, R, B], [L, B, R, B], [0.4, M, R, M]],
        4 => &[[L, T, L, M], [L, M, R, M], [R, T, R, B]],
        5 => &[[R, T, L, T], [L, T, L, M], [L, M, R, M], [R, M, R, B], [R, B, L, B]],
        6 => &[[R, T, L, T], [L, T, L, B], [L, B, R, B], [R, B, R, M], [R, M, L, M]],
        7 => &[[L, T, R, T], [R, T, 0.45, B]],
        8 => &[[L, T, R, T], [R, T, R, B], [R, B, L, B], [L, B, L, T], [L, M, R, M]],
        _ => &[[R, M, L, M], [L, M, L, T], [L, T, R, T], [R, T, R, B], [R, B, L, B]],
    }
}

fn segment_distance(p: [f64; 2], s: [f64; 4]) -> f64 {
    let (ax, ay, bx, by) = (s[0], s[1], s[2], s[3]);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - ax) * dx + (p[1] - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p[0] - ax - t * dx).powi(2) + (p[1] - ay - t * dy).powi(2)).sqrt()
}

/// Hand-drawn-looking digit glyphs: stroke skeletons under a random scale,
/// shift, slant and stroke width, quantised to 256 grey levels. Used in
/// place of the real digit files when those are not available.
pub fn synthetic_digits(per_class: usize, side: usize, seed: u64) -> Result<LabeledImages> {
    if per_class == 0 || side < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least one image per class and side >= 4, got {per_class}/{side}"
        )));
    }
    let mut rng = RandomSource::new(seed);
    let n = per_class * 10;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        let scale = rng.uniform_range(0.8, 1.05);
        let shift = [rng.uniform_range(-0.08, 0.08), rng.uniform_range(-0.08, 0.08)];
        let slant = rng.uniform_range(-0.2, 0.2);
        let width = rng.uniform_range(0.06, 0.1);
        let segs: Vec<[f64; 4]> = strokes(digit)
            .iter()
            .map(|s| {
                let tf = |x: f64, y: f64| {
                    let (x, y) = ((x - 0.5) * scale, (y - 0.5) * scale);
                    [x - slant * y + 0.5 + shift[0], y + 0.5 + shift[1]]
                };
                let a = tf(s[0], s[1]);
                let b = tf(s[2], s[3]);
                [a[0], a[1], b[0], b[1]]
            })
            .collect();
        let soft = 1.0 / side as f64;
        for r in 0..side {
            for c in 0..side {
                let p = [(c as f64 + 0.5) / side as f64, (r as f64 + 0.5) / side as f64];
                let d = segs.iter().map(|&s| segment_distance(p, s)).fold(f64::INFINITY, f64::min);
                let v = ((width - d) / soft + 0.5).clamp(0.0, 1.0);
                data.push((v * 255.0).round() / 255.0);
            }
        }
        labels.push(digit);
    }
    Ok(LabeledImages {
        images: Matrix::from_vec(n, side * side, data)?,
        labels,
        rows: side,
        cols: side,
    })
}

/// One sequence cycling through labels 0..9. Each cycle draws a fresh
/// instance per class from a per-class order shuffled by `seed`; `cycles`
/// defaults to the size of the smallest class. Returns the labels too.
pub fn sequence_mnist(store: &LabeledImages, seed: u64, cycles: Option<usize>) -> Result<(SequenceDataset, Vec<u8>)> {
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in store.labels.iter().enumerate() {
        if let Some(p) = pools.get_mut(l as usize) {
            p.push(i);
        }
    }
    if let Some(missing) = pools.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass(missing as u8));
    }
    let mut rng = RandomSource::new(seed);
    for p in &mut pools {
        rng.shuffle(p);
    }
    let cycles = cycles.unwrap_or_else(|| pools.iter().map(Vec::len).min().unwrap_or(0));
    let width = store.rows * store.cols;
    let mut data = Vec::with_capacity(cycles * 10 * width);
    let mut labels = Vec::with_capacity(cycles * 10);
    for c in 0..cycles {
        for (digit, pool) in pools.iter().enumerate() {
            data.extend_from_slice(store.images.row(pool[c % pool.len()]));
            labels.push(digit as u8);
        }
    }
    let ds = SequenceDataset::new(vec![Matrix::from_vec(cycles * 10, width, data)?], ValueRange::UnitInterval)?
        .with_frame_shape(store.rows, store.cols)?;
    Ok((ds, labels))
}
