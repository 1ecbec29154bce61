//! On-disk model container: a length-prefixed JSON manifest (tensor names,
//! shapes, dtype, byte offsets, embedded vocabulary and class names)
//! followed by raw little-endian f32 tensor data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AgentId, Inventory};
use crate::error::{Error, Result};

use super::model::{CnnModel, ModelConfig};
use super::vocab::Vocabulary;

const MODEL_FORMAT_VERSION: &str = "turngate-cnn-v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    config: ModelConfig,
    vocab_size: usize,
    n_classes: usize,
    seed: u64,
    /// Vocabulary tokens in index order.
    vocab: Vec<String>,
    /// Class names in canonical inventory order.
    classes: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset into the data section.
    offset: usize,
    /// Element count.
    len: usize,
}

fn tensor_plan(model: &CnnModel) -> Vec<(&'static str, Vec<usize>, &Vec<f64>)> {
    let c = &model.cfg;
    vec![
        (
            "embedding",
            vec![model.vocab_size, c.embed_dim],
            &model.embedding,
        ),
        (
            "conv_w",
            vec![c.filters, c.kernel, c.embed_dim],
            &model.conv_w,
        ),
        ("conv_b", vec![c.filters], &model.conv_b),
        ("dense_w", vec![c.hidden, c.filters], &model.dense_w),
        ("dense_b", vec![c.hidden], &model.dense_b),
        ("out_w", vec![model.n_classes, c.hidden], &model.out_w),
        ("out_b", vec![model.n_classes], &model.out_b),
    ]
}

/// Write model, vocabulary and class names. Parameters are quantized to f32.
pub fn save_model(
    model: &CnnModel,
    vocab: &Vocabulary,
    classes: &[AgentId],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let plan = tensor_plan(model);
    let mut tensors = Vec::new();
    let mut offset = 0usize;
    for (name, shape, data) in &plan {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.clone(),
            dtype: "f32".to_string(),
            offset,
            len: data.len(),
        });
        offset += data.len() * 4;
    }
    let manifest = Manifest {
        version: MODEL_FORMAT_VERSION.to_string(),
        config: model.cfg.clone(),
        vocab_size: model.vocab_size,
        n_classes: model.n_classes,
        seed: model.seed,
        vocab: vocab.tokens().to_vec(),
        classes: classes.iter().map(|a| a.to_string()).collect(),
        tensors,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::Corrupt(e.to_string()))?;

    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let werr = |e: std::io::Error| Error::io(path, e);
    out.write_all(&(manifest_bytes.len() as u64).to_le_bytes())
        .map_err(werr)?;
    out.write_all(&manifest_bytes).map_err(werr)?;
    for (_, _, data) in &plan {
        for value in data.iter() {
            out.write_all(&(*value as f32).to_le_bytes())
                .map_err(werr)?;
        }
    }
    out.flush().map_err(werr)?;
    Ok(())
}

/// Load a model container; shapes and sizes are validated against the
/// manifest and truncated files are rejected.
pub fn load_model(path: impl AsRef<Path>) -> Result<(CnnModel, Vocabulary, Vec<AgentId>)> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;

    if bytes.len() < 8 {
        return Err(Error::Corrupt("file shorter than its header".into()));
    }
    let manifest_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + manifest_len {
        return Err(Error::Corrupt("manifest truncated".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[8..8 + manifest_len])
        .map_err(|e| Error::Corrupt(format!("bad manifest: {e}")))?;
    if manifest.version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: MODEL_FORMAT_VERSION.to_string(),
        });
    }

    let data = &bytes[8 + manifest_len..];
    let read_tensor = |name: &str, expect_len: usize| -> Result<Vec<f64>> {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Corrupt(format!("tensor {name} missing from manifest")))?;
        if entry.dtype != "f32" {
            return Err(Error::Corrupt(format!(
                "tensor {name} has dtype {}, expected f32",
                entry.dtype
            )));
        }
        let shape_len: usize = entry.shape.iter().product();
        if entry.len != expect_len || shape_len != expect_len {
            return Err(Error::Corrupt(format!(
                "tensor {name} has {} elements, expected {expect_len}",
                entry.len
            )));
        }
        let end = entry.offset + entry.len * 4;
        if end > data.len() {
            return Err(Error::Corrupt(format!("tensor {name} data truncated")));
        }
        Ok(data[entry.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    };

    let c = &manifest.config;
    let model = CnnModel {
        embedding: read_tensor("embedding", manifest.vocab_size * c.embed_dim)?,
        conv_w: read_tensor("conv_w", c.filters * c.kernel * c.embed_dim)?,
        conv_b: read_tensor("conv_b", c.filters)?,
        dense_w: read_tensor("dense_w", c.hidden * c.filters)?,
        dense_b: read_tensor("dense_b", c.hidden)?,
        out_w: read_tensor("out_w", manifest.n_classes * c.hidden)?,
        out_b: read_tensor("out_b", manifest.n_classes)?,
        cfg: manifest.config.clone(),
        vocab_size: manifest.vocab_size,
        n_classes: manifest.n_classes,
        seed: manifest.seed,
    };
    if manifest.vocab.len() != manifest.vocab_size {
        return Err(Error::Corrupt(
            "vocabulary length disagrees with vocab_size".into(),
        ));
    }
    let vocab = Vocabulary::from_tokens(manifest.vocab);
    let classes = manifest.classes.into_iter().map(AgentId::new).collect();
    Ok((model, vocab, classes))
}

/// Check that the container's class list matches an inventory.
pub fn verify_classes(classes: &[AgentId], inventory: &Inventory) -> Result<()> {
    let expected: Vec<&AgentId> = inventory.names().collect();
    if classes.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Dimension(
            "model class list does not match the corpus agent inventory".into(),
        ));
    }
    Ok(())
}
