//! Binary dataset container.
//!
//! Layout (all little-endian): magic `NLDS`, version `u16`, `N`, `d`, `C` as
//! `u32`, features `N*d` x `f64` row-major, clean labels `N` x `u16`, noisy
//! labels `N` x `u16`, flip mask packed LSB-first in `ceil(N/8)` bytes, noise
//! kind `u8`, nominal rate `f64`.

use std::path::Path;

use super::{CleanDataset, NoiseKind, NoisyDataset};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"NLDS";
pub const DATASET_VERSION: u16 = 1;

pub fn write_dataset(ds: &NoisyDataset) -> Vec<u8> {
    let n = ds.len();
    let mut out = Vec::with_capacity(19 + n * (ds.dim() * 8 + 4) + n.div_ceil(8) + 9);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [n, ds.dim(), ds.num_classes()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in ds.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in ds.clean_labels().iter().chain(ds.noisy_labels()) {
        out.extend_from_slice(&(y as u16).to_le_bytes());
    }
    let mut packed = vec![0u8; n.div_ceil(8)];
    for (i, &f) in ds.flip_mask().iter().enumerate() {
        if f {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    out.push(ds.noise_kind().code());
    out.extend_from_slice(&ds.nominal_rate().to_le_bytes());
    out
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Parse {
                offset: self.pos,
                reason: format!(
                    "truncated while reading {what}: need {len} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| self.err("length overflow"))?, what)?;
        Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }

    pub(crate) fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<NoisyDataset> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "bad magic, expected NLDS".into(),
        });
    }
    let version = r.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n = r.u32("N")? as usize;
    let d = r.u32("d")? as usize;
    let c = r.u32("C")? as usize;
    let nd = n.checked_mul(d).ok_or_else(|| r.err("N*d overflows"))?;
    let features = r.f64s(nd, "features")?;
    let read_labels = |r: &mut Reader<'_>, what: &str| -> Result<Vec<usize>> {
        let start = r.pos();
        let raw = r.take(n * 2, what)?;
        let labels: Vec<usize> = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as usize).collect();
        if let Some(i) = labels.iter().position(|&y| y >= c) {
            return Err(Error::Parse {
                offset: start + 2 * i,
                reason: format!("{what}: label {} out of range 0..{c}", labels[i]),
            });
        }
        Ok(labels)
    };
    let clean_labels = read_labels(&mut r, "clean labels")?;
    let noisy_labels = read_labels(&mut r, "noisy labels")?;
    let mask_start = r.pos();
    let packed = r.take(n.div_ceil(8), "flip mask")?;
    for i in 0..n {
        let bit = packed[i / 8] >> (i % 8) & 1 == 1;
        if bit != (clean_labels[i] != noisy_labels[i]) {
            return Err(Error::Parse {
                offset: mask_start + i / 8,
                reason: format!("flip mask bit {i} disagrees with the labels"),
            });
        }
    }
    let kind_pos = r.pos();
    let kind = NoiseKind::from_code(r.u8("noise kind")?).ok_or(Error::Parse {
        offset: kind_pos,
        reason: "unknown noise kind".into(),
    })?;
    let rate = r.f64("nominal rate")?;
    r.finish()?;
    let clean = CleanDataset::new(features, clean_labels, d, c).map_err(|e| Error::Parse {
        offset: 18,
        reason: e.to_string(),
    })?;
    NoisyDataset::new(clean, noisy_labels, kind, rate)
}

pub fn save_dataset(ds: &NoisyDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<NoisyDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}
