//! Versioned checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DSSTCKPT"  u32 version
//! u32 len, TOML training config
//! u64 step
//! u32 count, then per parameter block:
//!     u16 len, name; u8 rank; u64 dims[rank]; f64 values[prod(dims)]
//! u8 has_optimizer, then if set: u64 optimizer step and, per parameter in
//!     the same order, f64 first moments followed by f64 second moments
//! ```

use std::io::{Read, Write};
use std::path::Path;

use autograd::{Adam, ParamStore, Tensor};
use ndarray::IxDyn;

use crate::config::TrainConfig;
use crate::error::{io_err, Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"DSSTCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(bad("truncated checkpoint"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("block too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn put_values(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(config: TrainConfig, step: u64, params: ParamStore, adam: Option<&Adam>) -> Self {
        let optimizer = adam.filter(|a| a.steps_taken() > 0).map(|a| {
            let (m, v) = a.moments();
            OptimizerState {
                step: a.steps_taken(),
                m: m.to_vec(),
                v: v.to_vec(),
            }
        });
        Self {
            config,
            step,
            params,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.to_toml();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_values(&mut out, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                for (m, v) in o.m.iter().zip(&o.v) {
                    put_values(&mut out, m);
                    put_values(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(bad("not a DSSTCKPT file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| bad("config is not UTF-8"))?;
        let config = TrainConfig::from_toml(text)?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let values = r.f64s(n.ok_or_else(|| bad(format!("{name}: shape overflows")))?)?;
            let t = Tensor::from_shape_vec(IxDyn(&dims), values).expect("length matches shape");
            params.insert(name, t);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for t in params.values() {
                    let n = t.len();
                    m.push(Tensor::from_shape_vec(t.raw_dim(), r.f64s(n)?).expect("same shape"));
                    v.push(Tensor::from_shape_vec(t.raw_dim(), r.f64s(n)?).expect("same shape"));
                }
                Some(OptimizerState { step, m, v })
            }
            f => return Err(bad(format!("bad optimizer flag {f}"))),
        };
        if !r.buf.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self {
            config,
            step,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model and checks that every stored block matches it by
    /// name and shape.
    pub fn model(&self) -> Result<Model> {
        let (model, fresh) = Model::new(&self.config.model, self.config.seed)?;
        if fresh.len() != self.params.len() {
            return Err(bad(format!(
                "checkpoint holds {} blocks, the model needs {}",
                self.params.len(),
                fresh.len()
            )));
        }
        for ((_, want, a), (_, got, b)) in fresh.iter().zip(self.params.iter()) {
            if want != got || a.shape() != b.shape() {
                return Err(bad(format!(
                    "block {got} {:?} does not match model block {want} {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(model)
    }

    /// `(name, shape)` for every block.
    pub fn summary(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip_and_corruption() {
        let cfg = TrainConfig::tiny();
        let (_, params) = Model::new(&cfg.model, 3).unwrap();
        let ck = Checkpoint::new(cfg, 17, params, None);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.params.values(), ck.params.values());
        back.model().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut future = bytes;
        future[8] = 9;
        assert!(Checkpoint::from_bytes(&future).is_err());
    }
}
