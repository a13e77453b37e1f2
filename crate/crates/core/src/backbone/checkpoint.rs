//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "FLOWSRCK"
//! version      u32
//! header_len   u32, then header_len bytes of UTF-8 `key = value` lines
//! tensor_count u32
//! per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   dtype    u8   (0 = f32, 1 = f64)
//!   ndim     u8, then ndim × u32 extents
//!   data     product(extents) × dtype width
//! ```
//!
//! Model tensors are stored twice, as `raw/<name>` and `ema/<name>`.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::numerics::{ParamSet, Real, Tensor};
use crate::rng::Seed;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWSRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MODEL_PREFIX: &str = "model.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSet {
    Raw,
    Ema,
}

impl WeightSet {
    fn prefix(self) -> &'static str {
        match self {
            WeightSet::Raw => "raw/",
            WeightSet::Ema => "ema/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: KvDoc,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Checkpoint<T> {
    /// Package raw weights and their EMA shadow. `extra` header entries are
    /// appended after the model configuration.
    pub fn from_model(kind: &str, model: &Model<T>, ema: &ParamSet<T>, extra: &KvDoc) -> Result<Self> {
        if ema.names() != model.params.names() {
            return Err(Error::contract("EMA shadow does not mirror the model parameters"));
        }
        let mut header = KvDoc::new();
        header.set("kind", kind);
        model.config.write_kv(&mut header, MODEL_PREFIX);
        header.merge(extra);
        let mut tensors = Vec::with_capacity(2 * model.params.len());
        for (set, params) in [(WeightSet::Raw, &model.params), (WeightSet::Ema, ema)] {
            for (name, t) in params.iter() {
                tensors.push((format!("{}{name}", set.prefix()), t.clone()));
            }
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get_raw("kind")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::default().read_kv(&self.header, MODEL_PREFIX)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuild the model from one of the stored weight sets.
    pub fn model(&self, which: WeightSet) -> Result<Model<T>> {
        let config = self.model_config()?;
        let mut model = Model::init(config, Seed(0))?;
        for id in 0..model.params.len() {
            let name = format!("{}{}", which.prefix(), model.params.name(id));
            let stored = self
                .tensor(&name)
                .ok_or_else(|| Error::contract(format!("checkpoint lacks tensor {name}")))?;
            if stored.shape() != model.params.get(id).shape() {
                return Err(Error::shape(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = stored.clone();
        }
        Ok(model)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = self.header.serialize();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::contract(format!("tensor name {name:?} is too long")))?;
            let ndim = u8::try_from(t.shape().len())
                .map_err(|_| Error::contract(format!("tensor {name} has too many axes")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE_TAG);
            out.push(ndim);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Decode a checkpoint, converting stored values to `T`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, "bad magic, not a checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(8, &format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header_at = r.pos;
        let header_text = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| r.error_at(header_at, "header is not UTF-8"))?;
        let header = KvDoc::parse(header_text).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset: header_at + offset,
                message,
            },
            other => other,
        })?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.error_at(at, "tensor name is not UTF-8"))?
                .to_string();
            let dtype_at = r.pos;
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let data: Vec<T> = match dtype {
                0 => r.take(n * 4)?.chunks(4).map(|c| T::c(f32::read_le(c) as f64)).collect(),
                1 => r.take(n * 8)?.chunks(8).map(|c| T::c(f64::read_le(c))).collect(),
                other => return Err(r.error_at(dtype_at, &format!("unknown dtype tag {other}"))),
            };
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes after last tensor"));
        }
        Ok(Checkpoint { header, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: &str) -> Error {
        Error::Parse {
            offset,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(self.bytes.len(), "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
}

pub fn write_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let bytes = ckpt.encode()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}
