//! `FLTCKPT1` model checkpoints.
//!
//! Layout (little-endian): magic `FLTCKPT1`; arch tag u32 (0 linear, 1 one
//! hidden layer); hidden units u32; input_dim u32; num_classes u32;
//! init_seed u64; then the representation block followed by the head block
//! as f64. An optional federated-feature section follows: `FF`, per-class
//! count u32, num_classes u32, feature_dim u32, one matched byte per class,
//! then the feature values as f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fl::FederatedFeatures;
use crate::nn::{Arch, ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLTCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub features: Option<FederatedFeatures>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check_shape(&self.config)?;
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let (tag, hidden) = match self.config.arch {
            Arch::LinearSoftmax => (0, 0),
            Arch::Mlp1h { hidden } => (1, hidden),
        };
        put_u32(&mut out, tag)?;
        put_u32(&mut out, hidden)?;
        put_u32(&mut out, self.config.input_dim)?;
        put_u32(&mut out, self.config.num_classes)?;
        out.extend_from_slice(&self.config.init_seed.to_le_bytes());
        for v in self.params.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(ff) = &self.features {
            out.extend_from_slice(b"FF");
            put_u32(&mut out, ff.per_class)?;
            put_u32(&mut out, ff.num_classes)?;
            put_u32(&mut out, ff.feature_dim)?;
            out.extend(ff.matched.iter().map(|&m| m as u8));
            for v in &ff.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::InvalidArgument("not an FLTCKPT1 checkpoint".into()));
        }
        let tag = r.u32()?;
        let hidden = r.u32()?;
        let arch = match tag {
            0 => Arch::LinearSoftmax,
            1 => Arch::Mlp1h { hidden },
            t => return Err(Error::InvalidArgument(format!("unknown architecture tag {t}"))),
        };
        let input_dim = r.u32()?;
        let num_classes = r.u32()?;
        let init_seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let config = ModelConfig::new(arch, input_dim, num_classes, init_seed);
        config.validate()?;
        let rep = r.f64s(config.rep_len())?;
        let head = r.f64s(config.head_len())?;
        let features = if r.pos == bytes.len() {
            None
        } else {
            if r.take(2)? != b"FF" {
                return Err(Error::InvalidArgument(
                    "trailing bytes are not an FF section".into(),
                ));
            }
            let per_class = r.u32()?;
            let m = r.u32()?;
            let f = r.u32()?;
            let matched = r.take(m)?.iter().map(|&b| b != 0).collect();
            let values = r.f64s(m * per_class * f)?;
            Some(FederatedFeatures {
                num_classes: m,
                per_class,
                feature_dim: f,
                values,
                matched,
            })
        };
        if r.pos != bytes.len() {
            return Err(Error::InvalidArgument("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            config,
            params: ModelParams { rep, head },
            features,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}
