use std::fs;
use std::path::Path;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GSNC";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_EPOCH: &str = "meta.epoch";
const META_RNG: &str = "meta.rng";
const META_CONFIG: &str = "meta.config";

/// Named tensors plus the run's config, RNG position and epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Matrix)>,
    pub config: TrainConfig,
    pub rng: RngState,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::CheckpointMissing(name.to_string()))
    }

    /// Tensors whose names start with `prefix`, in stored order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Matrix)> + 'a {
        self.tensors
            .iter()
            .filter(move |(n, _)| n.starts_with(prefix))
            .map(|(n, m)| (n.as_str(), m))
    }
}

fn put_record(buf: &mut Vec<u8>, name: &str, dims: &[usize], values: impl Iterator<Item = f64>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(dims.len() as u8);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} too large")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Little-endian: magic, version, records of (u16 name length, name, u8
/// rank, u32 dims, f64 payload), then a CRC32 of everything before it.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_record(&mut buf, META_EPOCH, &[], std::iter::once(ck.epoch as f64))?;
    let words = [
        ck.rng.seed,
        ck.rng.stream,
        ck.rng.word_pos as u64,
        (ck.rng.word_pos >> 64) as u64,
    ];
    put_record(&mut buf, META_RNG, &[4], words.into_iter().map(f64::from_bits))?;
    let cfg = serde_json::to_vec(&ck.config)?;
    put_record(&mut buf, META_CONFIG, &[cfg.len()], cfg.iter().map(|&b| b as f64))?;
    for (name, m) in &ck.tensors {
        if name.starts_with("meta.") {
            return Err(Error::InvalidArgument(format!("tensor name {name:?} is reserved")));
        }
        put_record(&mut buf, name, &[m.rows(), m.cols()], m.data().iter().copied())?;
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.end - self.pos < n {
            return Err(Error::CheckpointTruncated(self.end));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8_lossy(self.take(len)?).into_owned();
        let rank = self.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let count: usize = dims.iter().product();
        let raw = self.take(count.checked_mul(8).ok_or(Error::CheckpointTruncated(self.end))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, dims, values))
    }
}

fn parse_records(bytes: &[u8]) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut r = Reader {
        bytes,
        pos: 8,
        end: bytes.len() - 4,
    };
    let mut out = Vec::new();
    while r.pos < r.end {
        out.push(r.record()?);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::CheckpointTruncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointMagic(magic));
    }
    if bytes.len() < 12 {
        return Err(Error::CheckpointTruncated(bytes.len()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body]);
    // A checksum mismatch from a cut-short file is reported as truncation
    // when the record structure runs past the end.
    let records = match parse_records(bytes) {
        Ok(r) if stored == computed => r,
        Err(e @ Error::CheckpointTruncated(_)) => return Err(e),
        _ => return Err(Error::CheckpointIntegrity { stored, computed }),
    };

    let mut epoch = None;
    let mut rng = None;
    let mut config = None;
    let mut tensors = Vec::new();
    for (name, dims, values) in records {
        match name.as_str() {
            META_EPOCH => epoch = values.first().map(|&v| v as usize),
            META_RNG if values.len() == 4 => {
                let w: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
                rng = Some(RngState {
                    seed: w[0],
                    stream: w[1],
                    word_pos: (w[2] as u128) | ((w[3] as u128) << 64),
                });
            }
            META_CONFIG => {
                let bytes: Vec<u8> = values.iter().map(|&v| v as u8).collect();
                config = Some(serde_json::from_slice::<TrainConfig>(&bytes)?);
            }
            _ => {
                let (r, c) = match dims.as_slice() {
                    [r, c] => (*r, *c),
                    [n] => (1, *n),
                    [] => (1, 1),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "tensor {name:?} has rank {}",
                            dims.len()
                        )))
                    }
                };
                tensors.push((name, Matrix::from_vec(r, c, values)?));
            }
        }
    }
    Ok(Checkpoint {
        tensors,
        config: config.ok_or_else(|| Error::CheckpointMissing(META_CONFIG.into()))?,
        rng: rng.ok_or_else(|| Error::CheckpointMissing(META_RNG.into()))?,
        epoch: epoch.ok_or_else(|| Error::CheckpointMissing(META_EPOCH.into()))?,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
