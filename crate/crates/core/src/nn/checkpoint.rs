//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "SGVF1"                      5 bytes magic
//! kind                         u8 (0 = score, 1 = tangent)
//! sigma_min, sigma_max         f64, f64
//! seed, iterations             u64, u64
//! config digest                32 bytes (SHA-256 of the resolved config)
//! layer count n                u32
//! layer sizes                  n x u32
//! per layer: weights, biases   out*in f64 row-major, then out f64
//! total file length            u64, counts the whole file including itself
//! ```

use std::fs;
use std::path::Path;

use super::{Dense, Mlp};
use crate::{Error, Result};

const MAGIC: &[u8; 5] = b"SGVF1";
const TRAILER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Score,
    Tangent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub seed: u64,
    pub iterations: u64,
    pub config_digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut out = Vec::with_capacity(128 + 8 * self.model.num_params());
        out.extend_from_slice(MAGIC);
        out.push(match m.kind {
            ModelKind::Score => 0,
            ModelKind::Tangent => 1,
        });
        out.extend_from_slice(&m.sigma_min.to_le_bytes());
        out.extend_from_slice(&m.sigma_max.to_le_bytes());
        out.extend_from_slice(&m.seed.to_le_bytes());
        out.extend_from_slice(&m.iterations.to_le_bytes());
        out.extend_from_slice(&m.config_digest);
        let sizes = self.model.sizes();
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for layer in self.model.layers() {
            for v in layer.weights.iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let total = (out.len() + TRAILER) as u64;
        out.extend_from_slice(&total.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::Format { offset: offset as u64, msg };
        if bytes.len() < MAGIC.len() + TRAILER {
            return Err(fail(bytes.len(), format!("file is only {} bytes long", bytes.len())));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(fail(0, "missing SGVF1 magic".into()));
        }
        let body_end = bytes.len() - TRAILER;
        let recorded = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if recorded != bytes.len() as u64 {
            return Err(fail(
                body_end,
                format!("length trailer says {recorded} bytes but file has {} (truncated?)", bytes.len()),
            ));
        }

        let mut r = Reader { bytes: &bytes[..body_end], pos: MAGIC.len() };
        let kind = match r.take(1)?[0] {
            0 => ModelKind::Score,
            1 => ModelKind::Tangent,
            k => return Err(fail(r.pos - 1, format!("unknown model kind {k}"))),
        };
        let sigma_min = r.f64()?;
        let sigma_max = r.f64()?;
        let seed = r.u64()?;
        let iterations = r.u64()?;
        let config_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let n = r.u32()? as usize;
        if n < 2 {
            return Err(fail(r.pos - 4, format!("{n} layer sizes, need at least 2")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            let s = r.u32()? as usize;
            if s == 0 {
                return Err(fail(r.pos - 4, "zero layer size".into()));
            }
            sizes.push(s);
        }
        let expected: usize = sizes.windows(2).map(|w| (w[0] * w[1] + w[1]) * 8).sum();
        if r.remaining() != expected {
            return Err(fail(
                r.pos,
                format!(
                    "layer sizes {sizes:?} need {expected} payload bytes, found {}",
                    r.remaining()
                ),
            ));
        }
        let mut layers = Vec::with_capacity(n - 1);
        for w in sizes.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let weights = (0..in_dim * out_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..out_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Dense { in_dim, out_dim, weights, bias });
        }
        let model = Mlp::from_layers(layers).map_err(|e| fail(MAGIC.len(), e.to_string()))?;
        Ok(Self {
            model,
            meta: CheckpointMeta { kind, sigma_min, sigma_max, seed, iterations, config_digest },
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("need {n} more bytes, {} left", self.remaining()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
