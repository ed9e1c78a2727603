//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PFCK"  u16 version
//! u32 header length, header bytes: JSON {"config": ModelConfig, "step": u64, "meta": any}
//! u32 tensor count, then per tensor:
//!   u32 name length, UTF-8 name
//!   u8 dtype (0 = f32, 1 = f64)
//!   u32 rank, u32 extent per axis
//!   row-major values
//! ```
//!
//! Tensor names are grouped by prefix: `param/<path>` for learnable
//! tensors, `state/norm/<site>/{mean,var}` and
//! `state/whitening/<site>/{mean,var}` for running statistics, and
//! `extra/<name>` for anything the caller attaches (optimizer moments).
//! Writers emit f64 only.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::binio::ByteReader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const MAX_HEADER: usize = 1 << 20;
const MAX_NAME: usize = 4096;
const MAX_RANK: usize = 8;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub meta: serde_json::Value,
    pub extra: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    #[serde(default)]
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: Model, step: u64) -> Self {
        Checkpoint {
            model,
            step,
            meta: serde_json::Value::Null,
            extra: BTreeMap::new(),
        }
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (path, t) in self.model.params.iter() {
            out.push((format!("param/{path}"), t));
        }
        for (site, s) in &self.model.state.norms {
            out.push((format!("state/norm/{site}/mean"), &s.running_mean));
            out.push((format!("state/norm/{site}/var"), &s.running_var));
        }
        for (site, w) in &self.model.state.whitening {
            out.push((format!("state/whitening/{site}/mean"), &w.mean));
            out.push((format!("state/whitening/{site}/var"), &w.var));
        }
        for (name, t) in &self.extra {
            out.push((format!("extra/{name}"), t));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.model.config.clone(),
            step: self.step,
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::config(format!("checkpoint header: {e}")))?;
        let tensors = self.named_tensors();
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
        buf.write_u32::<LittleEndian>(header.len() as u32)?;
        buf.extend_from_slice(&header);
        buf.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (name, t) in tensors {
            buf.write_u32::<LittleEndian>(name.len() as u32)?;
            buf.extend_from_slice(name.as_bytes());
            buf.write_u8(DTYPE_F64)?;
            buf.write_u32::<LittleEndian>(t.rank() as u32)?;
            for &d in t.dims() {
                buf.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in t.data() {
                buf.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(buf)
    }

    /// Parses and validates a checkpoint image. Every parameter and state
    /// tensor the configuration implies must be present with its exact
    /// shape, and nothing else may appear outside the `extra/` group.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let at = r.offset();
        let len = r.u32()? as usize;
        if len > MAX_HEADER {
            return Err(r.invalid_at(at, format!("header length {len} exceeds {MAX_HEADER}")));
        }
        let header: Header =
            serde_json::from_slice(r.bytes(len)?).map_err(|e| r.invalid_at(at, format!("header: {e}")))?;
        // A fresh model supplies the expected names and shapes.
        let mut model = Model::new(header.config, 0).map_err(|e| r.invalid_at(at, format!("header: {e}")))?;
        let mut expected: BTreeMap<String, Vec<usize>> = Checkpoint::new(model.clone(), 0)
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.dims().to_vec()))
            .collect();
        let mut extra = BTreeMap::new();

        let count = r.u32()?;
        for _ in 0..count {
            let at = r.offset();
            let name = r.string(MAX_NAME, "tensor name")?;
            let tensor = read_tensor(&mut r)?;
            if let Some(rest) = name.strip_prefix("extra/") {
                if extra.insert(rest.to_string(), tensor).is_some() {
                    return Err(r.invalid_at(at, format!("duplicate tensor {name:?}")));
                }
                r.last_good = Some(name);
                continue;
            }
            match expected.remove(&name) {
                None => return Err(r.invalid_at(at, format!("unexpected or duplicate tensor {name:?}"))),
                Some(dims) if dims != tensor.dims() => {
                    return Err(r.invalid_at(
                        at,
                        format!("tensor {name:?} has shape {:?}, expected {dims:?}", tensor.dims()),
                    ))
                }
                Some(_) => {}
            }
            store_tensor(&mut model, &name, tensor)?;
            r.last_good = Some(name);
        }
        if let Some(missing) = expected.keys().next() {
            return Err(r.invalid_at(r.offset(), format!("missing tensor {missing:?}")));
        }
        if !r.is_empty() {
            return Err(r.invalid_at(r.offset(), format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint {
            model,
            step: header.step,
            meta: header.meta,
            extra,
        })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

fn read_tensor(r: &mut ByteReader<'_>) -> Result<Tensor> {
    let at = r.offset();
    let dtype = r.u8()?;
    let width = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        other => return Err(r.invalid_at(at, format!("unknown dtype {other}"))),
    };
    let rank = r.u32()? as usize;
    if rank > MAX_RANK {
        return Err(r.invalid_at(at, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(r.invalid_at(at, "zero extent"));
        }
        numel = numel.saturating_mul(d);
        dims.push(d);
    }
    if numel.saturating_mul(width) > r.remaining() {
        return Err(r.truncated());
    }
    let values = if dtype == DTYPE_F64 { r.f64s(numel)? } else { r.f32s(numel)?.into_iter().map(f64::from).collect() };
    Tensor::new(dims, values).map_err(|e| r.invalid_at(at, e.to_string()))
}

fn store_tensor(model: &mut Model, name: &str, tensor: Tensor) -> Result<()> {
    if let Some(path) = name.strip_prefix("param/") {
        model.params.insert(path, tensor);
        return Ok(());
    }
    let (site, field) = name
        .rsplit_once('/')
        .ok_or_else(|| Error::contract(format!("malformed tensor name {name:?}")))?;
    if let Some(site) = site.strip_prefix("state/norm/") {
        let s = model.state.norm_mut(site)?;
        match field {
            "mean" => s.running_mean = tensor,
            _ => s.running_var = tensor,
        }
    } else if let Some(site) = site.strip_prefix("state/whitening/") {
        let w = model.state.whitening_mut(site)?;
        match field {
            "mean" => w.mean = tensor,
            _ => w.var = tensor,
        }
    }
    Ok(())
}
