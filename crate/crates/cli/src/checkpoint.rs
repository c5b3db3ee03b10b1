//! Model checkpoints.
//!
//! Layout: the 8 magic bytes `WRKCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor as little-endian `f64` in header order. The header records the
//! model kind, its architecture config and each tensor's name, shape and
//! element offset into the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wrinkle_core::features::{DilatedConvNet, FeatureNetConfig};
use wrinkle_core::inpaint::{DiscConfig, GeneratorConfig, InpaintGenerator, PatchDiscriminator};
use wrinkle_core::nn::Module;
use wrinkle_core::segnet::{SegModel, SegModelConfig};
use wrinkle_core::Tensor;

use crate::error::{CliError, CliResult};
use crate::io::ensure_parent;

const MAGIC: &[u8; 8] = b"WRKCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// A model that can be rebuilt from its config and a state dict.
pub trait Checkpointable: Module + Sized {
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned;

    fn arch(&self) -> &Self::Config;
    fn build(cfg: Self::Config) -> wrinkle_core::Result<Self>;
}

impl Checkpointable for SegModel {
    const KIND: &'static str = "segmentation";
    type Config = SegModelConfig;

    fn arch(&self) -> &SegModelConfig {
        self.config()
    }

    fn build(cfg: SegModelConfig) -> wrinkle_core::Result<Self> {
        SegModel::new(cfg)
    }
}

impl Checkpointable for InpaintGenerator {
    const KIND: &'static str = "generator";
    type Config = GeneratorConfig;

    fn arch(&self) -> &GeneratorConfig {
        self.config()
    }

    fn build(cfg: GeneratorConfig) -> wrinkle_core::Result<Self> {
        InpaintGenerator::new(cfg)
    }
}

impl Checkpointable for PatchDiscriminator {
    const KIND: &'static str = "discriminator";
    type Config = DiscConfig;

    fn arch(&self) -> &DiscConfig {
        self.config()
    }

    fn build(cfg: DiscConfig) -> wrinkle_core::Result<Self> {
        PatchDiscriminator::new(cfg)
    }
}

impl Checkpointable for DilatedConvNet {
    const KIND: &'static str = "features";
    type Config = FeatureNetConfig;

    fn arch(&self) -> &FeatureNetConfig {
        self.config()
    }

    fn build(cfg: FeatureNetConfig) -> wrinkle_core::Result<Self> {
        DilatedConvNet::new(cfg)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes<M: Checkpointable>(model: &M) -> CliResult<Vec<u8>> {
    let state = model.state_dict();
    let mut tensors = Vec::with_capacity(state.len());
    let mut offset = 0;
    for (name, t) in &state {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
    }
    let header = Header {
        kind: M::KIND.to_string(),
        config: serde_json::to_value(model.arch()).map_err(CliError::runtime)?,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(CliError::runtime)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in state.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes<M: Checkpointable>(bytes: &[u8], origin: &str) -> CliResult<M> {
    let bad = |what: &str| CliError::runtime(format!("{origin}: {what}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < len {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..len]).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.kind != M::KIND {
        return Err(bad(&format!(
            "holds a {} model, expected {}",
            header.kind,
            M::KIND
        )));
    }
    let cfg: M::Config = serde_json::from_value(header.config)
        .map_err(|e| bad(&format!("architecture mismatch: {e}")))?;
    let blob = &body[len..];
    let mut state = BTreeMap::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let range = 8 * entry.offset..8 * (entry.offset + n);
        let raw = blob
            .get(range)
            .ok_or_else(|| bad(&format!("tensor {} is truncated", entry.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        state.insert(entry.name, Tensor::new(&entry.shape, data)?);
    }
    let mut model = M::build(cfg)?;
    model
        .load_state_dict(&state)
        .map_err(|e| bad(&format!("architecture mismatch: {e}")))?;
    Ok(model)
}

pub fn save<M: Checkpointable>(path: &Path, model: &M) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, to_bytes(model)?)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn load<M: Checkpointable>(path: &Path) -> CliResult<M> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes, &path.display().to_string())
}
