//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SCFNCKPT"  u32 version  u8 precision bits (32|64)
//! u32 len + UTF-8 model config text
//! u32 len + UTF-8 training config text
//! u64 epochs completed   u64 optimizer steps taken
//! u32 entry count, then per entry:
//!   u8 kind (0 parameter, 1 buffer, 2 momentum)
//!   u32 len + UTF-8 name
//!   u32 rank, u64 per dim
//!   values in the stated precision
//! ```
//!
//! Entries are looked up by name, so their order in the file is free.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::ParamStore;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::optim::Momentum;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"SCFNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub store: ParamStore<T>,
    pub momentum: Momentum<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn model(&self) -> Model<T> {
        Model { cfg: self.model_cfg.clone(), store: self.store.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BITS);
        put_str(&mut out, &self.model_cfg.to_text());
        put_str(&mut out, &self.train_cfg.to_text());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        let entries: Vec<(u8, &String, &Tensor<T>)> = self
            .store
            .params()
            .map(|(k, v)| (0, k, v))
            .chain(self.store.buffers().map(|(k, v)| (1, k, v)))
            .chain(self.momentum.iter().map(|(k, v)| (2, k, v)))
            .collect();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (kind, name, t) in entries {
            put_entry(&mut out, kind, name, t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version} is not supported (expected {VERSION})")));
        }
        let bits = r.take(1)?[0];
        if bits != T::BITS {
            return Err(Error::Format(format!("checkpoint holds {bits}-bit values; {}-bit requested", T::BITS)));
        }
        let model_cfg = ModelConfig::parse(&r.string()?)?;
        let train_cfg = TrainConfig::parse(&r.string()?)?;
        let epoch = r.u64()? as usize;
        let step = r.u64()? as usize;
        let n = r.u32()?;
        let mut store = ParamStore::new();
        let mut momentum = BTreeMap::new();
        for _ in 0..n {
            let kind = r.take(1)?[0];
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let count = count.ok_or_else(|| Error::Format(format!("entry `{name}`: shape overflow")))?;
            let raw = r.take(count.checked_mul(T::BYTES).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("entry `{name}`: {e}")))?;
            match kind {
                0 => store.insert(name, t),
                1 => store.insert_buffer(name, t),
                2 => {
                    momentum.insert(name, t);
                }
                k => return Err(Error::Format(format!("entry `{name}`: unknown kind {k}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { model_cfg, train_cfg, epoch, step, store, momentum })
    }
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Precision tag of a checkpoint file without decoding it.
pub fn checkpoint_bits(path: &Path) -> Result<u8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    Ok(bytes[12])
}

/// Loads a checkpoint whatever its stored precision, converted to `T`.
pub fn load_checkpoint_as<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    fn convert<A: Real, B: Real>(c: Checkpoint<A>) -> Checkpoint<B> {
        Checkpoint {
            model_cfg: c.model_cfg,
            train_cfg: c.train_cfg,
            epoch: c.epoch,
            step: c.step,
            store: c.store.cast(),
            momentum: c.momentum.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
    match checkpoint_bits(path)? {
        b if b == T::BITS => load_checkpoint(path),
        32 => Ok(convert(load_checkpoint::<f32>(path)?)),
        64 => Ok(convert(load_checkpoint::<f64>(path)?)),
        b => Err(Error::Format(format!("{}: unknown precision tag {b}", path.display()))),
    }
}

/// Serialises a single entry; public so tests can write files in any order.
pub fn put_entry<T: Real>(out: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor<T>) {
    out.push(kind);
    put_str(out, name);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("truncated checkpoint: wanted {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }
}
