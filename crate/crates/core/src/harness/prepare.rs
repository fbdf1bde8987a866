use std::path::{Path, PathBuf};

use super::{DatasetKind, TrainConfig};
use crate::data::{
    generate_bouncing_balls, load_mnist_idx, load_mocap_csv, make_subsequences, read_video, sequence_mnist, split_80_20,
    synthetic_digits, synthetic_mocap, LabeledImages, SequenceDataset, Standardization, ValueRange,
};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RandomSource};

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Seed for one named use of the run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    RandomSource::new(seed).fork(tag).next_u64()
}

/// `count` images of one soft Gaussian bump each, values in (0, 1].
pub fn gaussian_blobs(count: usize, side: usize, seed: u64) -> Result<Matrix> {
    if side < 3 {
        return Err(Error::InvalidArgument(format!("blob images need side >= 3, got {side}")));
    }
    let mut rng = RandomSource::new(seed);
    let mut data = Vec::with_capacity(count * side * side);
    let hi = (side - 2) as f64;
    for _ in 0..count {
        let (cy, cx) = (rng.uniform_range(1.0, hi), rng.uniform_range(1.0, hi));
        let s = rng.uniform_range(0.8, 1.6);
        for y in 0..side {
            for x in 0..side {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                data.push((-d2 / (2.0 * s * s)).exp());
            }
        }
    }
    Matrix::from_vec(count, side * side, data)
}

enum Train {
    Mnist(LabeledImages),
    Balls,
    Fixed(SequenceDataset),
}

/// Training and test data for one run. Generated data is a pure function
/// of the config, so a resumed run sees the same frames.
pub struct PreparedData {
    cfg: TrainConfig,
    train: Train,
    pub test: SequenceDataset,
    /// Statistics to map standardised frames back to original units.
    pub original_units: Option<Standardization>,
}

fn path_of(cfg: &TrainConfig) -> Option<PathBuf> {
    cfg.dataset.path.as_ref().map(PathBuf::from)
}

fn mnist_store(dir: &Path, images: &str, labels: &str) -> Result<LabeledImages> {
    load_mnist_idx(&dir.join(images), &dir.join(labels))
}

impl PreparedData {
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let d = &cfg.dataset;
        let seed = cfg.seed;
        let mut original_units = None;
        let (train, test) = match d.kind {
            DatasetKind::Mnist => {
                let (train, test) = match path_of(cfg) {
                    Some(dir) => (
                        mnist_store(&dir, MNIST_FILES[0], MNIST_FILES[1])?,
                        mnist_store(&dir, MNIST_FILES[2], MNIST_FILES[3])?,
                    ),
                    None => (
                        synthetic_digits(d.per_class, d.image_side, derive_seed(seed, 10))?,
                        synthetic_digits((d.per_class / 4).max(1), d.image_side, derive_seed(seed, 11))?,
                    ),
                };
                if train.rows != d.image_side || train.cols != d.image_side {
                    return Err(Error::Config(format!(
                        "digits are {}x{}, config expects side {}",
                        train.rows, train.cols, d.image_side
                    )));
                }
                let (test_seq, _) = sequence_mnist(&test, derive_seed(seed, 12), Some(d.test_cycles))?;
                (Train::Mnist(train), test_seq)
            }
            DatasetKind::Balls => match path_of(cfg) {
                Some(p) => {
                    let ds = read_video(&p, ValueRange::UnitInterval)?;
                    let (train, test) = split_80_20(&ds)?;
                    (Train::Fixed(train), test)
                }
                None => {
                    let mut b = d.balls;
                    b.seed = derive_seed(seed ^ d.balls.seed, 1);
                    (Train::Balls, generate_bouncing_balls(&b, d.test_videos)?)
                }
            },
            DatasetKind::Mocap => {
                let ds = match path_of(cfg) {
                    Some(p) => load_mocap_csv(&p)?,
                    None => {
                        let m = synthetic_mocap(d.mocap_frames, derive_seed(seed, 2))?;
                        let cut = (m.rows() * 4 / 5).max(1);
                        let mut ds = SequenceDataset::new(vec![m.clone()], ValueRange::Unbounded)?;
                        ds.standardization = Some(Standardization::fit(&[&m.row_range(0, cut)?])?);
                        ds
                    }
                };
                let (train, test) = split_80_20(&ds)?;
                original_units = ds.standardization.clone();
                (Train::Fixed(train.standardize()?), test.standardize()?)
            }
            DatasetKind::Blobs => {
                let side = d.blob_side;
                let make = |count, tag| -> Result<SequenceDataset> {
                    let m = gaussian_blobs(count, side, derive_seed(seed, tag))?;
                    SequenceDataset::new(vec![m], ValueRange::UnitInterval)?.with_frame_shape(side, side)
                };
                match path_of(cfg) {
                    Some(p) => {
                        let ds = read_video(&p, ValueRange::UnitInterval)?;
                        let (train, test) = split_80_20(&ds)?;
                        (Train::Fixed(train), test)
                    }
                    None => (Train::Fixed(make(d.blob_count, 3)?), make((d.blob_count / 4).max(5), 4)?),
                }
            }
        };
        if test.width != cfg.visible_width() {
            return Err(Error::Config(format!(
                "dataset frames have width {}, config expects {}",
                test.width,
                cfg.visible_width()
            )));
        }
        Ok(PreparedData {
            cfg: cfg.clone(),
            train,
            test,
            original_units,
        })
    }

    /// Training sequences for 0-based `epoch`.
    pub fn epoch(&self, epoch: usize) -> Result<SequenceDataset> {
        let seed = self.cfg.seed;
        match &self.train {
            Train::Mnist(store) => Ok(sequence_mnist(store, derive_seed(seed, 100 + epoch as u64), None)?.0),
            Train::Balls => {
                let d = &self.cfg.dataset;
                let mut b = d.balls;
                b.seed = derive_seed(seed ^ d.balls.seed, 100 + epoch as u64);
                generate_bouncing_balls(&b, d.videos_per_epoch)
            }
            Train::Fixed(ds) => Ok(ds.clone()),
        }
    }

    /// Held-out sequences cut into non-overlapping windows of the training
    /// length; sequences shorter than that are kept whole.
    pub fn test_sequences(&self) -> Result<Vec<Matrix>> {
        let len = self.cfg.subsequence_length.max(2);
        let mut out = Vec::new();
        for s in &self.test.sequences {
            if s.rows() < len {
                out.push(s.clone());
            } else {
                let one = SequenceDataset {
                    sequences: vec![s.clone()],
                    ..self.test.clone()
                };
                out.extend(make_subsequences(&one, len, len)?);
            }
        }
        Ok(out)
    }

    /// Every held-out frame as one matrix.
    pub fn test_frames(&self) -> Result<Matrix> {
        let parts: Vec<&Matrix> = self.test.sequences.iter().collect();
        Matrix::vstack(&parts)
    }

    pub fn frame_shape(&self) -> Option<(usize, usize)> {
        self.test.frame_shape
    }
}
