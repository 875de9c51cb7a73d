//! CIFAR-10 binary format.
//!
//! Each record is one label byte followed by 3072 pixel bytes: the 1024-byte
//! red plane, then green, then blue, each row-major over a 32x32 image.

use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};

pub const CIFAR_PIXELS: usize = 3072;
pub const CIFAR_RECORD_LEN: usize = CIFAR_PIXELS + 1;
pub const CIFAR_CLASSES: usize = 10;
const PLANE: usize = 1024;

/// Undecoded CIFAR records: labels plus the raw pixel bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CifarRaw {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl CifarRaw {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn append(&mut self, other: CifarRaw) {
        self.labels.extend(other.labels);
        self.pixels.extend(other.pixels);
    }
}

pub fn read_cifar_file(path: &Path) -> Result<CifarRaw> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::MalformedFile {
            path: path.to_path_buf(),
            reason: format!(
                "size {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record length",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut raw = CifarRaw {
        labels: Vec::with_capacity(n),
        pixels: Vec::with_capacity(n * CIFAR_PIXELS),
    };
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = chunk[0];
        if label as usize >= CIFAR_CLASSES {
            return Err(Error::CorruptRecord {
                path: path.to_path_buf(),
                record,
                label,
            });
        }
        raw.labels.push(label);
        raw.pixels.extend_from_slice(&chunk[1..]);
    }
    Ok(raw)
}

pub fn write_cifar_file(path: &Path, raw: &CifarRaw) -> Result<()> {
    if raw.pixels.len() != raw.labels.len() * CIFAR_PIXELS {
        return Err(Error::ShapeMismatch(format!(
            "{} pixel bytes for {} records",
            raw.pixels.len(),
            raw.labels.len()
        )));
    }
    let mut out = Vec::with_capacity(raw.len() * CIFAR_RECORD_LEN);
    for (label, px) in raw.labels.iter().zip(raw.pixels.chunks_exact(CIFAR_PIXELS)) {
        out.push(*label);
        out.extend_from_slice(px);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_all(paths: &[PathBuf]) -> Result<CifarRaw> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("no CIFAR-10 batch files given".into()));
    }
    let mut raw = CifarRaw::default();
    for p in paths {
        raw.append(read_cifar_file(p)?);
    }
    Ok(raw)
}

/// Per-channel (mean, std) of pixels scaled to [0, 1].
fn channel_stats(raw: &CifarRaw) -> [(f64, f64); 3] {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    for img in raw.pixels.chunks_exact(CIFAR_PIXELS) {
        for (c, plane) in img.chunks_exact(PLANE).enumerate() {
            for &p in plane {
                let v = p as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let n = (raw.len() * PLANE).max(1) as f64;
    let mut out = [(0.0, 1.0); 3];
    for c in 0..3 {
        let mean = sum[c] / n;
        let var = (sq[c] / n - mean * mean).max(0.0);
        let std = var.sqrt();
        out[c] = (mean, if std > 1e-12 { std } else { 1.0 });
    }
    out
}

fn normalize(raw: &CifarRaw, stats: &[(f64, f64); 3], name: &str) -> Result<Dataset> {
    let mut features = Vec::with_capacity(raw.pixels.len());
    for img in raw.pixels.chunks_exact(CIFAR_PIXELS) {
        for (c, plane) in img.chunks_exact(PLANE).enumerate() {
            let (mean, std) = stats[c];
            features.extend(plane.iter().map(|&p| ((p as f64 / 255.0 - mean) / std) as f32));
        }
    }
    let labels = raw.labels.iter().map(|&l| l as u32).collect();
    Dataset::new(name, CIFAR_CLASSES, CIFAR_PIXELS, features, labels)
}

/// Load CIFAR-10 train and test sets, standardizing both with the
/// per-channel statistics of the training set.
pub fn load_cifar10(train_paths: &[PathBuf], test_path: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_all(train_paths)?;
    let test = read_cifar_file(test_path)?;
    let stats = channel_stats(&train);
    Ok((
        normalize(&train, &stats, "cifar10-train")?,
        normalize(&test, &stats, "cifar10-test")?,
    ))
}

/// Load from the standard `cifar-10-batches-bin` layout.
pub fn load_cifar10_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    for p in train.iter().chain(std::iter::once(&dir.join("test_batch.bin"))) {
        if !p.exists() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
            ));
        }
    }
    load_cifar10(&train, &dir.join("test_batch.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, CIFAR_PIXELS));
        r
    }

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        fs::write(&p, record(3, 128)).unwrap();
        let (train, test) = load_cifar10(std::slice::from_ref(&p), &p).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(train.class_counts()[3], 1);
        assert_eq!(test.len(), 1);
        // constant image: zero variance channels are left unscaled
        assert!(train.features(0).iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn bad_size_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut bytes = record(1, 0);
        bytes.push(7);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_cifar_file(&p), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn bad_label_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut bytes = record(1, 0);
        bytes.extend(record(10, 0));
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            read_cifar_file(&p),
            Err(Error::CorruptRecord {
                record: 1,
                label: 10,
                ..
            })
        ));
    }

    #[test]
    fn empty_file_list_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        fs::write(&p, record(0, 0)).unwrap();
        assert!(matches!(load_cifar10(&[], &p), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn train_statistics_standardize_train() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut bytes = record(0, 0);
        bytes.extend(record(1, 255));
        fs::write(&p, bytes).unwrap();
        let (train, _) = load_cifar10(std::slice::from_ref(&p), &p).unwrap();
        // two images at 0 and 1: mean 0.5, std 0.5
        assert!((train.features(0)[0] + 1.0).abs() < 1e-6);
        assert!((train.features(1)[5] - 1.0).abs() < 1e-6);
    }
}
