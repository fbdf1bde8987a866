//! Datasets: bouncing-balls videos, sequenced digits and motion-capture
//! channels, plus splitting, windowing and batching.

mod balls;
mod mnist;
mod mocap;

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RandomSource};

pub use balls::{generate_bouncing_balls, render_balls, simulate_bouncing_balls, Ball, BallSystem, BouncingBallsConfig};
pub use mnist::{
    load_mnist_idx, read_idx_images, read_idx_labels, sequence_mnist, synthetic_digits, write_idx_images,
    write_idx_labels, LabeledImages,
};
pub use mocap::{load_mocap_csv, parse_mocap_csv, synthetic_mocap, write_mocap_csv, MOCAP_CHANNELS, MOCAP_FRAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    UnitInterval,
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Full,
    Train,
    Test,
}

/// Per-channel affine standardisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population moments over every row of `frames`. Constant channels get
    /// std 1.
    pub fn fit(frames: &[&Matrix]) -> Result<Self> {
        let width = frames.first().map(|m| m.cols()).unwrap_or(0);
        let n: usize = frames.iter().map(|m| m.rows()).sum();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot standardise an empty set".into()));
        }
        let mut mean = vec![0.0; width];
        for m in frames {
            for r in 0..m.rows() {
                for (a, v) in mean.iter_mut().zip(m.row(r)) {
                    *a += v;
                }
            }
        }
        mean.iter_mut().for_each(|a| *a /= n as f64);
        let mut var = vec![0.0; width];
        for m in frames {
            for r in 0..m.rows() {
                for ((a, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        self.map(m, |v, mu, s| (v - mu) / s)
    }

    pub fn invert(&self, m: &Matrix) -> Result<Matrix> {
        self.map(m, |v, mu, s| v * s + mu)
    }

    fn map(&self, m: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Result<Matrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::shape("standardization", m.shape(), (m.rows(), self.mean.len())));
        }
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = f(*v, self.mean[c], self.std[c]);
            }
        }
        Ok(out)
    }
}

/// Sequences of equal-width frames; each sequence is a `frames × width`
/// matrix with one timestep per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Matrix>,
    pub width: usize,
    pub range: ValueRange,
    pub split: Split,
    /// Present when frames are stored standardised or when statistics for
    /// later standardisation have been fitted.
    pub standardization: Option<Standardization>,
    /// Whether `sequences` hold standardised values.
    pub standardized: bool,
    /// Image height and width for pixel data.
    pub frame_shape: Option<(usize, usize)>,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Matrix>, range: ValueRange) -> Result<Self> {
        let width = sequences.first().map(|s| s.cols()).unwrap_or(0);
        let ds = SequenceDataset {
            sequences,
            width,
            range,
            split: Split::Full,
            standardization: None,
            standardized: false,
            frame_shape: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_frame_shape(mut self, height: usize, width: usize) -> Result<Self> {
        if height * width != self.width {
            return Err(Error::InvalidArgument(format!(
                "frame shape {height}x{width} does not match width {}",
                self.width
            )));
        }
        self.frame_shape = Some((height, width));
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.sequences.iter().enumerate() {
            if s.cols() != self.width {
                return Err(Error::InvalidArgument(format!(
                    "sequence {i} has width {}, dataset width is {}",
                    s.cols(),
                    self.width
                )));
            }
            if self.range == ValueRange::UnitInterval && s.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("sequence {i} has values outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(Matrix::rows).sum()
    }

    pub fn frame(&self, seq: usize, t: usize) -> Matrix {
        Matrix::row_vector(self.sequences[seq].row(t).to_vec())
    }

    /// Applies the stored statistics if not yet applied.
    pub fn standardize(&self) -> Result<SequenceDataset> {
        let stats = self
            .standardization
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no standardisation statistics".into()))?;
        if self.standardized {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.sequences = self.sequences.iter().map(|s| stats.apply(s)).collect::<Result<_>>()?;
        out.standardized = true;
        Ok(out)
    }
}

/// Per-sequence prefix/suffix split at `floor(0.8 * len)`.
pub fn split_80_20(ds: &SequenceDataset) -> Result<(SequenceDataset, SequenceDataset)> {
    let mut train = Vec::with_capacity(ds.len());
    let mut test = Vec::with_capacity(ds.len());
    for (i, s) in ds.sequences.iter().enumerate() {
        if s.rows() < 5 {
            return Err(Error::SequenceTooShort {
                index: i,
                len: s.rows(),
                min: 5,
            });
        }
        let cut = s.rows() * 4 / 5;
        train.push(s.row_range(0, cut)?);
        test.push(s.row_range(cut, s.rows() - cut)?);
    }
    let part = |sequences, split| SequenceDataset {
        sequences,
        split,
        ..ds.clone()
    };
    Ok((part(train, Split::Train), part(test, Split::Test)))
}

/// Sliding windows of `len` frames every `stride` frames, in sequence order;
/// a final window shorter than `len` is dropped.
pub fn make_subsequences(ds: &SequenceDataset, len: usize, stride: usize) -> Result<Vec<Matrix>> {
    if len < 2 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window length must be at least 2 and stride positive, got {len}/{stride}"
        )));
    }
    let mut out = Vec::new();
    for s in &ds.sequences {
        let mut start = 0;
        while start + len <= s.rows() {
            out.push(s.row_range(start, len)?);
            start += stride;
        }
    }
    Ok(out)
}

/// As [`make_subsequences`], in an order shuffled by `rng`.
pub fn shuffled_subsequences(ds: &SequenceDataset, len: usize, stride: usize, rng: &mut RandomSource) -> Result<Vec<Matrix>> {
    let mut w = make_subsequences(ds, len, stride)?;
    rng.shuffle(&mut w);
    Ok(w)
}

/// Groups equal-length windows into minibatches: each group becomes a
/// timeline whose step `t` stacks row `t` of every window in the group. The
/// last group may be smaller.
pub fn batch_timelines(windows: &[Matrix], batch: usize) -> Result<Vec<Vec<Matrix>>> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let Some(first) = windows.first() else {
        return Ok(Vec::new());
    };
    let (len, width) = first.shape();
    if let Some(w) = windows.iter().find(|w| w.shape() != (len, width)) {
        return Err(Error::shape("batch_timelines", w.shape(), (len, width)));
    }
    let mut out = Vec::new();
    for group in windows.chunks(batch) {
        let mut timeline = Vec::with_capacity(len);
        for t in 0..len {
            let mut data = Vec::with_capacity(group.len() * width);
            for w in group {
                data.extend_from_slice(w.row(t));
            }
            timeline.push(Matrix::from_vec(group.len(), width, data)?);
        }
        out.push(timeline);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoHeader {
    pub version: u32,
    pub n_sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

pub const VIDEO_VERSION: u32 = 1;

/// JSON header line, then every value as little-endian `f32`, frame-major.
pub fn write_video(path: &Path, ds: &SequenceDataset) -> Result<()> {
    let frames = ds.sequences.first().map(Matrix::rows).unwrap_or(0);
    if ds.sequences.iter().any(|s| s.rows() != frames) {
        return Err(Error::InvalidArgument("video sequences must share a frame count".into()));
    }
    let (height, width) = ds.frame_shape.unwrap_or((1, ds.width));
    let header = VideoHeader {
        version: VIDEO_VERSION,
        n_sequences: ds.len(),
        frames,
        height,
        width,
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    buf.reserve(ds.total_frames() * ds.width * 4);
    for s in &ds.sequences {
        for v in s.data() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_video(path: &Path, range: ValueRange) -> Result<SequenceDataset> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: VideoHeader = serde_json::from_str(line.trim_end())?;
    if header.version != VIDEO_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported video version {}", header.version)));
    }
    let width = header.height * header.width;
    let expected = header.n_sequences * header.frames * width * 4;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Truncated {
            what: "video payload",
            expected,
            found: payload.len(),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let per = header.frames * width;
    let sequences = (0..header.n_sequences)
        .map(|i| Matrix::from_vec(header.frames, width, values[i * per..(i + 1) * per].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = SequenceDataset::new(sequences, range)?;
    ds.width = width;
    ds.with_frame_shape(header.height, header.width)
}
