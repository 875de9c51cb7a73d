//! Flat record file for synthetic datasets.
//!
//! Layout: magic `FLTDS1`, then `M`, `dim`, `count` as little-endian u32,
//! then per sample a u32 label followed by `dim` little-endian f32 values.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 6] = b"FLTDS1";

pub fn write_records(path: &Path, dataset: &Dataset) -> Result<()> {
    let dim = dataset.dim();
    let mut out = Vec::with_capacity(18 + dataset.len() * (4 + 4 * dim));
    out.extend_from_slice(RECORD_MAGIC);
    for v in [dataset.num_classes(), dim, dataset.len()] {
        let v = u32::try_from(v)
            .map_err(|_| Error::InvalidArgument(format!("{v} does not fit a u32 header field")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in dataset.samples() {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        for f in s.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path, name: &str) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 18 || &bytes[..6] != RECORD_MAGIC {
        return Err(malformed("missing FLTDS1 header".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (m, dim, count) = (u32_at(6), u32_at(10), u32_at(14));
    let rec = 4 + 4 * dim;
    if bytes.len() != 18 + count * rec {
        return Err(malformed(format!(
            "expected {} bytes for {count} records of dimension {dim}, found {}",
            18 + count * rec,
            bytes.len()
        )));
    }
    let mut labels = Vec::with_capacity(count);
    let mut features = Vec::with_capacity(count * dim);
    for chunk in bytes[18..].chunks_exact(rec) {
        labels.push(u32::from_le_bytes(chunk[..4].try_into().unwrap()));
        features.extend(
            chunk[4..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
    }
    Dataset::new(name, m, dim, features, labels)
}
