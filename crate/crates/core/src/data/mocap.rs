use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{SequenceDataset, Standardization, ValueRange};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RandomSource};

pub const MOCAP_CHANNELS: usize = 49;
/// Length of the reference capture.
pub const MOCAP_FRAMES: usize = 3826;

/// Parses headerless CSV with 49 reals per row. Row numbers in errors are
/// 1-based line numbers; blank lines are skipped.
pub fn parse_mocap_csv(text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != MOCAP_CHANNELS {
            return Err(Error::ColumnCount {
                row: i + 1,
                expected: MOCAP_CHANNELS,
                found: cells.len(),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
                row: i + 1,
                col: c + 1,
                cell: cell.to_string(),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, MOCAP_CHANNELS, data)
}

/// One file is one sequence. Statistics are fitted on the training prefix
/// (the first `floor(0.8 * len)` frames) and stored, not applied.
pub fn load_mocap_csv(path: &Path) -> Result<SequenceDataset> {
    let m = parse_mocap_csv(&fs::read_to_string(path)?)?;
    if m.rows() == 0 {
        return Err(Error::InvalidArgument(format!("{} holds no frames", path.display())));
    }
    let train = m.row_range(0, (m.rows() * 4 / 5).max(1))?;
    let stats = Standardization::fit(&[&train])?;
    let mut ds = SequenceDataset::new(vec![m], ValueRange::Unbounded)?;
    ds.standardization = Some(stats);
    Ok(ds)
}

pub fn write_mocap_csv(path: &Path, m: &Matrix) -> Result<()> {
    if m.cols() != MOCAP_CHANNELS {
        return Err(Error::shape("write_mocap_csv", m.shape(), (m.rows(), MOCAP_CHANNELS)));
    }
    let mut out = String::new();
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("write to string");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Stand-in capture: a quasi-periodic gait phase drives each channel
/// through its own harmonics, a few channels carry slow drifts like root
/// translation, plus sensor noise. Channel scales vary over two orders of
/// magnitude.
pub fn synthetic_mocap(frames: usize, seed: u64) -> Result<Matrix> {
    let mut rng = RandomSource::new(seed);
    struct Channel {
        offset: f64,
        amp: [f64; 2],
        phase: [f64; 2],
        drift: f64,
        noise: f64,
    }
    let channels: Vec<Channel> = (0..MOCAP_CHANNELS)
        .map(|c| {
            let scale = 10f64.powf(rng.uniform_range(-0.5, 1.5));
            Channel {
                offset: rng.normal(0.0, 2.0 * scale),
                amp: [scale * rng.uniform_range(0.3, 1.0), scale * rng.uniform_range(0.0, 0.4)],
                phase: [rng.uniform_range(0.0, std::f64::consts::TAU), rng.uniform_range(0.0, std::f64::consts::TAU)],
                drift: if c < 3 { scale * 0.05 } else { 0.0 },
                noise: 0.02 * scale,
            }
        })
        .collect();
    let mut data = Vec::with_capacity(frames * MOCAP_CHANNELS);
    let mut phase = 0.0;
    let mut period = 36.0;
    let mut walk = [0.0f64; 3];
    for _ in 0..frames {
        period = (period + rng.normal(0.0, 0.3)).clamp(28.0, 46.0);
        phase += std::f64::consts::TAU / period;
        for w in &mut walk {
            *w += rng.normal(0.0, 1.0);
        }
        for (c, ch) in channels.iter().enumerate() {
            let mut v = ch.offset + ch.amp[0] * (phase + ch.phase[0]).sin() + ch.amp[1] * (2.0 * phase + ch.phase[1]).sin();
            if c < 3 {
                v += ch.drift * walk[c];
            }
            v += rng.normal(0.0, ch.noise);
            data.push(v);
        }
    }
    Matrix::from_vec(frames, MOCAP_CHANNELS, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_80_20;

    #[test]
    fn three_rows_parse() {
        let row = (0..49).map(|i| format!("{}.5", i)).collect::<Vec<_>>().join(",");
        let m = parse_mocap_csv(&format!("{row}\n{row}\n{row}\n")).unwrap();
        assert_eq!(m.shape(), (3, 49));
        assert_eq!(m.get(2, 48), 48.5);
    }

    #[test]
    fn column_count_names_row() {
        let good = vec!["1"; 49].join(",");
        let bad = vec!["1"; 48].join(",");
        let err = parse_mocap_csv(&format!("{good}\n{bad}\n")).unwrap_err();
        assert!(matches!(err, Error::ColumnCount { row: 2, expected: 49, found: 48 }));
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn non_numeric_rejected() {
        let mut cells = vec!["1"; 49];
        cells[7] = "abc";
        assert!(matches!(
            parse_mocap_csv(&cells.join(",")),
            Err(Error::NonNumeric { row: 1, col: 8, .. })
        ));
    }

    #[test]
    fn train_only_standardization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = synthetic_mocap(500, 2).unwrap();
        write_mocap_csv(&p, &m).unwrap();
        let ds = load_mocap_csv(&p).unwrap();
        assert_eq!(ds.sequences[0], m);
        let (train, test) = split_80_20(&ds).unwrap();
        let train = train.standardize().unwrap();
        let z = &train.sequences[0];
        for c in 0..MOCAP_CHANNELS {
            let col: Vec<f64> = (0..z.rows()).map(|r| z.get(r, c)).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "channel {c} std {std}");
        }
        // Test frames reuse the training statistics.
        let t = test.standardize().unwrap();
        assert_eq!(t.standardization, train.standardization);
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let a = synthetic_mocap(MOCAP_FRAMES, 1).unwrap();
        assert_eq!(a.shape(), (3826, 49));
        assert!(a.is_finite());
        assert_eq!(a, synthetic_mocap(MOCAP_FRAMES, 1).unwrap());
    }
}
