//! Binary checkpoints of named tensors with a JSON config sidecar.
//!
//! Layout (little-endian): magic `HECK`, format version (u32), tensor count
//! (u32), then per tensor: name length (u32), UTF-8 name, rank (u32), dims
//! (u64 each), values (f64). Buffers are stored under a `buffers/` prefix.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hydroembed_core::nn::{Tensor, TensorStore};
use hydroembed_core::train::Model;

use crate::config::ExperimentConfig;

const MAGIC: &[u8; 4] = b"HECK";
const VERSION: u32 = 1;
const BUFFER_PREFIX: &str = "buffers/";

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((model.params.len() + model.buffers.len()) as u32).to_le_bytes());
    let params = model.params.iter().map(|(_, n, t)| (n.to_string(), t));
    let buffers = model.buffers.iter().map(|(_, n, t)| (format!("{BUFFER_PREFIX}{n}"), t));
    for (name, t) in params.chain(buffers) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Decodes `(name, tensor)` pairs in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).context("truncated checkpoint")?;
    ensure!(&magic == MAGIC, "not a checkpoint file");
    let version = read_u32(&mut r)?;
    ensure!(version == VERSION, "unsupported checkpoint version {version}");
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).context("tensor name is not UTF-8")?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).with_context(|| format!("truncated tensor {name}"))?;
            data.push(f64::from_le_bytes(b));
        }
        tensors.push((name.clone(), Tensor::new(shape, data).with_context(|| format!("tensor {name}"))?));
    }
    ensure!(r.position() as usize == bytes.len(), "trailing bytes after {count} tensors");
    Ok(tensors)
}

/// Overwrites every tensor of `model` from `tensors`; names and shapes must
/// match exactly.
pub fn restore(model: &mut Model, tensors: Vec<(String, Tensor)>) -> Result<()> {
    ensure!(
        tensors.len() == model.params.len() + model.buffers.len(),
        "checkpoint has {} tensors, model expects {}",
        tensors.len(),
        model.params.len() + model.buffers.len()
    );
    for (name, t) in tensors {
        let (store, key): (&mut TensorStore, &str) = match name.strip_prefix(BUFFER_PREFIX) {
            Some(b) => (&mut model.buffers, b),
            None => (&mut model.params, name.as_str()),
        };
        let Some(id) = store.find(key) else { bail!("checkpoint tensor {name} is not part of the model") };
        store.set(id, t).with_context(|| format!("checkpoint tensor {name} does not match the model"))?;
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save(path: impl AsRef<Path>, model: &Model, config: &ExperimentConfig) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).with_context(|| format!("writing {}", path.display()))?;
    fs::write(sidecar_path(path), config.to_json()?).with_context(|| format!("writing sidecar for {}", path.display()))
}

/// Rebuilds the model described by the sidecar and loads its tensors.
pub fn load(path: impl AsRef<Path>) -> Result<(Model, ExperimentConfig)> {
    let path = path.as_ref();
    let config = ExperimentConfig::read(sidecar_path(path))?;
    let mut model = config.build_model()?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    restore(&mut model, decode(&bytes)?).with_context(|| format!("loading {}", path.display()))?;
    Ok((model, config))
}
