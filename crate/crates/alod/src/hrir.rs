//! Plain binary HRIR container.
//!
//! Little-endian layout:
//!
//! | field      | type            |
//! |------------|-----------------|
//! | magic      | `b"ALODHRIR"`   |
//! | version    | u32 = 1         |
//! | rate       | f64, Hz         |
//! | count      | u32, directions |
//! | length     | u32, taps       |
//! | directions | count × (azimuth f64, elevation f64), degrees |
//! | samples    | count × (left length × f32, right length × f32) |

use std::path::Path;

use alod_core::spatial::{HrirEntry, HrirSet};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ALODHRIR";
pub const VERSION: u32 = 1;

pub fn encode_hrir(fs: f64, entries: &[HrirEntry]) -> Vec<u8> {
    let len = entries.first().map_or(0, |e| e.left.len());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fs.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&e.azimuth.to_le_bytes());
        out.extend_from_slice(&e.elevation.to_le_bytes());
    }
    for e in entries {
        for v in e.left.iter().chain(&e.right) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let b = self.data.get(self.at..self.at + N)?;
        self.at += N;
        b.try_into().ok()
    }
    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }
    fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_le_bytes)
    }
    fn f32(&mut self) -> Option<f32> {
        self.take().map(f32::from_le_bytes)
    }
}

/// Decode the container into its rate and entries without validation.
pub fn decode_hrir(data: &[u8], origin: &Path) -> Result<(f64, Vec<HrirEntry>)> {
    let bad = |m: &str| Error::parse(origin, m);
    let mut r = Reader { data, at: 0 };
    if r.take::<8>().as_ref() != Some(MAGIC) {
        return Err(bad("not an HRIR container (bad magic)"));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported HRIR container version {version}")));
    }
    let truncated = || bad("truncated HRIR data");
    let fs = r.f64().ok_or_else(truncated)?;
    let count = r.u32().ok_or_else(truncated)? as usize;
    let len = r.u32().ok_or_else(truncated)? as usize;
    let expected = 28 + count * 16 + count * len * 8;
    if data.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", data.len())));
    }
    let mut dirs = Vec::with_capacity(count);
    for _ in 0..count {
        dirs.push((r.f64().ok_or_else(truncated)?, r.f64().ok_or_else(truncated)?));
    }
    let mut entries = Vec::with_capacity(count);
    for (azimuth, elevation) in dirs {
        let mut read = || (0..len).map(|_| r.f32().map(f64::from)).collect::<Option<Vec<f64>>>();
        let left = read().ok_or_else(truncated)?;
        let right = read().ok_or_else(truncated)?;
        entries.push(HrirEntry {
            azimuth,
            elevation,
            left,
            right,
        });
    }
    Ok((fs, entries))
}

/// Load and validate a set, resampled to `fs` when stored at another rate.
pub fn load_hrir(path: &Path, fs: f64) -> Result<HrirSet> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (fs_data, entries) = decode_hrir(&data, path)?;
    Ok(HrirSet::at_rate(fs_data, entries, fs)?)
}

pub fn write_hrir(path: &Path, set: &HrirSet) -> Result<()> {
    std::fs::write(path, encode_hrir(set.fs, &set.entries)).map_err(|e| Error::io(path, e))
}
