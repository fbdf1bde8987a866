use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,split,metric,value";

/// Metric name of the row that marks a diverged run.
pub const DIVERGED: &str = "diverged";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.split, self.metric, self.value)
    }
}

/// Rows of `(epoch, split, metric, value)`, epochs non-decreasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if epoch < last.epoch {
                return Err(Error::InvalidArgument(format!(
                    "metrics epoch {epoch} precedes logged epoch {}",
                    last.epoch
                )));
            }
        }
        self.rows.push(MetricRow {
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    /// Records a non-finite value together with a flag row.
    pub fn flag_diverged(&mut self, epoch: usize, split: &str, metric: &str, value: f64) -> Result<()> {
        self.push(epoch, split, metric, value)?;
        self.push(epoch, split, DIVERGED, 1.0)
    }

    pub fn is_diverged(&self) -> bool {
        self.rows.iter().any(|r| r.metric == DIVERGED)
    }

    /// Values of one series in logging order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.series(split, metric).last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(out, "{}", r.to_csv()).expect("write to string");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(Error::InvalidArgument("metrics file lacks the header row".into()));
        }
        let mut log = MetricsLog::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::InvalidArgument(format!("metrics row {}: {line:?}", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            let epoch = f[0].parse().map_err(|_| bad())?;
            let value = f[3].parse().map_err(|_| bad())?;
            log.push(epoch, f[1], f[2], value)?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Appends rows `from..` to `path`, writing the header if the file is new.
    pub fn append_rows(&self, path: &Path, from: usize) -> Result<()> {
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = String::new();
        if fresh {
            out.push_str(METRICS_HEADER);
            out.push('\n');
        }
        for r in &self.rows[from.min(self.rows.len())..] {
            writeln!(out, "{}", r.to_csv()).expect("write to string");
        }
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut log = MetricsLog::new();
        log.push(1, "train", "bce", 0.1 + 0.2).unwrap();
        log.push(1, "test", "mse", 1e-300).unwrap();
        log.flag_diverged(2, "train", "bce", f64::NAN).unwrap();
        let text = log.to_csv();
        assert!(text.starts_with("epoch,split,metric,value\n1,train,bce,0.30000000000000004\n"));
        let back = MetricsLog::parse_csv(&text).unwrap();
        assert_eq!(back.rows.len(), 4);
        assert_eq!(back.rows[0], log.rows[0]);
        assert!(back.rows[2].value.is_nan());
        assert!(back.is_diverged());
    }

    #[test]
    fn epochs_non_decreasing() {
        let mut log = MetricsLog::new();
        log.push(3, "train", "x", 1.0).unwrap();
        assert!(log.push(2, "train", "x", 1.0).is_err());
    }

    #[test]
    fn append_matches_save() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = MetricsLog::new();
        log.push(1, "train", "a", 1.0).unwrap();
        let p = dir.path().join("m.csv");
        log.append_rows(&p, 0).unwrap();
        log.push(2, "train", "a", 0.5).unwrap();
        log.append_rows(&p, 1).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), log.to_csv());
    }
}
