//! Binary container for parameter sets and knowledge-base embeddings.
//!
//! Layout: 4 magic bytes, a little-endian `u32` header length, a UTF-8 JSON
//! header, then the raw little-endian `f32` payloads in manifest order.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CgtError, Result};
use crate::model::{CgtModel, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::text::TokenizerSpec;

pub const MODEL_MAGIC: [u8; 4] = *b"CGT1";
pub const KB_MAGIC: [u8; 4] = *b"CGTK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

/// Decoded container: header JSON fields plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: serde_json::Map<String, serde_json::Value>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn format_err(msg: impl Into<String>) -> CgtError {
    CgtError::Format(msg.into())
}

/// Serializes `tensors` under `magic`. `fields` are merged into the header
/// next to `format_version` and `tensors`.
pub fn encode_container(
    magic: [u8; 4],
    mut fields: serde_json::Map<String, serde_json::Value>,
    tensors: &[(&str, &Tensor<f32>)],
) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        t.ensure_finite(name)?;
        let len = (t.len() * 4) as u64;
        manifest.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            byte_offset: offset,
            byte_len: len,
        });
        offset += len;
    }
    fields.insert("format_version".into(), FORMAT_VERSION.into());
    fields.insert("tensors".into(), serde_json::to_value(&manifest)?);
    let header = serde_json::to_vec(&fields)?;
    let header_len = u32::try_from(header.len()).map_err(|_| format_err("header too large"))?;
    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8], magic: [u8; 4]) -> Result<Container> {
    if bytes.len() < 8 {
        return Err(format_err("file too short for a header"));
    }
    if bytes[..4] != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err("truncated header"))?;
    let mut header: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..body]).map_err(|e| format_err(format!("header JSON: {e}")))?;
    let version = header.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(format_err(format!("unsupported format_version {version:?}")));
    }
    let manifest: Vec<TensorEntry> = serde_json::from_value(header.remove("tensors").ok_or_else(|| format_err("missing tensor manifest"))?)
        .map_err(|e| format_err(format!("tensor manifest: {e}")))?;
    header.remove("format_version");

    let payload = &bytes[body..];
    let mut expected_offset = 0u64;
    let mut tensors = Vec::with_capacity(manifest.len());
    for entry in manifest {
        if entry.dtype != "f32" {
            return Err(format_err(format!("tensor {} has unsupported dtype {}", entry.name, entry.dtype)));
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format_err(format!("tensor {} shape overflows", entry.name)))?;
        if entry.byte_len != count as u64 * 4 {
            return Err(format_err(format!(
                "tensor {} declares {} bytes for shape {:?}",
                entry.name, entry.byte_len, entry.shape
            )));
        }
        if entry.byte_offset != expected_offset {
            return Err(format_err(format!(
                "tensor {} at offset {}, expected {expected_offset}",
                entry.name, entry.byte_offset
            )));
        }
        let start = entry.byte_offset as usize;
        let end = start + entry.byte_len as usize;
        let raw = payload.get(start..end).ok_or_else(|| format_err(format!("truncated payload for tensor {}", entry.name)))?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(entry.shape, data)?;
        if !t.is_finite() {
            return Err(CgtError::NonFinite(format!("tensor {} holds non-finite values", entry.name)));
        }
        tensors.push((entry.name, t));
        expected_offset = end as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(format_err(format!(
            "payload has {} bytes, manifest accounts for {expected_offset}",
            payload.len()
        )));
    }
    Ok(Container { header, tensors })
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name = path.file_name().ok_or_else(|| CgtError::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Training provenance stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stage: Option<String>,
    #[serde(default)]
    pub steps: u64,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &CgtModel<f32>, meta: CheckpointMeta) -> Self {
        Checkpoint { config: model.config().clone(), meta, params: model.params().clone() }
    }

    pub fn into_model(self) -> Result<CgtModel<f32>> {
        CgtModel::with_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut fields = serde_json::Map::new();
        fields.insert("model_config".into(), serde_json::to_value(&self.config)?);
        fields.insert("metadata".into(), serde_json::to_value(&self.meta)?);
        let tensors: Vec<(&str, &Tensor<f32>)> = self.params.iter().map(|p| (p.name.as_str(), &p.tensor)).collect();
        encode_container(MODEL_MAGIC, fields, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = decode_container(bytes, MODEL_MAGIC)?;
        let config: ModelConfig = serde_json::from_value(c.header.remove("model_config").ok_or_else(|| format_err("missing model_config"))?)
            .map_err(|e| CgtError::Config(format!("model_config: {e}")))?;
        config.validate()?;
        let meta: CheckpointMeta = match c.header.remove("metadata") {
            Some(v) => serde_json::from_value(v).map_err(|e| format_err(format!("metadata: {e}")))?,
            None => CheckpointMeta::default(),
        };
        let mut params = ParamStore::new();
        for (name, t) in c.tensors {
            params.insert(name, t, true)?;
        }
        // Validates names and shapes against the config.
        let model = CgtModel::with_params(config, params)?;
        let config = model.config().clone();
        Ok(Checkpoint { config, meta, params: model.into_params() })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
