//! Binary network checkpoints.
//!
//! Little-endian: `b"DNMD"`, version `u32`, layer count `u32`, then per layer
//! `in u32`, `out u32`, activation `u8`, row-major `out x in` f64 weights and
//! `out` f64 biases.

use std::fs;
use std::path::Path;

use super::{Activation, Dense, LayerSpec, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNMD";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Mlp {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + self.param_count() * 8 + self.layers().len() * 9);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layers().len() as u32).to_le_bytes());
        for layer in self.layers() {
            buf.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
            buf.push(layer.activation().code());
            for o in 0..layer.output_dim() {
                for i in 0..layer.input_dim() {
                    buf.extend_from_slice(&layer.weight(o, i).to_le_bytes());
                }
            }
            for b in layer.bias() {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inp = r.u32()? as usize;
            let out = r.u32()? as usize;
            let code = r.take(1)?[0];
            let act = Activation::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {code}")))?;
            if inp == 0 || out == 0 {
                return Err(Error::Checkpoint("zero layer dimension".into()));
            }
            let mut layer = Dense::zeros(LayerSpec::new(inp, out, act));
            for o in 0..out {
                for i in 0..inp {
                    layer.set_weight(o, i, r.f64()?);
                }
            }
            for b in layer.bias_mut() {
                *b = r.f64()?;
            }
            layers.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Mlp::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
