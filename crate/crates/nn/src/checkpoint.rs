//! Checkpoint container: a magic line, a length-prefixed JSON header holding
//! the model config and tensor table, then every tensor as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig};
use crate::{NnError, Result};

pub const CHECKPOINT_SCHEMA: &str = "voyagecast.checkpoint.v1";
const MAGIC: &[u8] = b"VCKPT1\n";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let params = model.params();
    let buffers = model.buffers();
    let mut tensors: Vec<(String, &[f64])> = params
        .iter()
        .map(|p| (p.name.clone(), &p.value[..]))
        .collect();
    tensors.extend(buffers.iter().map(|(n, b)| (n.clone(), &b[..])));
    let header = Header {
        schema: CHECKPOINT_SCHEMA.into(),
        config: model.config.clone(),
        tensors: tensors
            .iter()
            .map(|(n, v)| TensorEntry {
                name: n.clone(),
                len: v.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, v) in &tensors {
        for x in *v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("not a checkpoint file"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header"));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < len {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..len])?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(bad(format!(
            "schema `{}`, expected `{CHECKPOINT_SCHEMA}`",
            header.schema
        )));
    }
    let mut data = &rest[len..];
    let mut model = Model::new(header.config)?;
    let mut names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    names.extend(model.buffers().into_iter().map(|(n, _)| n));
    if names.len() != header.tensors.len() {
        return Err(bad("tensor count does not match the model"));
    }
    let mut values = Vec::with_capacity(names.len());
    for (entry, name) in header.tensors.iter().zip(&names) {
        if &entry.name != name {
            return Err(bad(format!(
                "tensor `{}` where `{name}` was expected",
                entry.name
            )));
        }
        if data.len() < entry.len * 8 {
            return Err(bad("truncated tensor data"));
        }
        let v: Vec<f64> = data[..entry.len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[entry.len * 8..];
        values.push(v);
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let n = model.params().len();
    let mut it = values.into_iter();
    for p in model.params_mut() {
        let v = it.next().expect("counted");
        if v.len() != p.len() {
            return Err(bad(format!(
                "tensor `{}` has {} values, expected {}",
                p.name,
                v.len(),
                p.len()
            )));
        }
        p.value = v;
    }
    for b in model.buffers_mut() {
        let v = it.next().expect("counted");
        if v.len() != b.len() {
            return Err(bad("buffer length mismatch"));
        }
        *b = v;
    }
    debug_assert_eq!(n, model.params().len());
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    from_bytes(&bytes)
}
