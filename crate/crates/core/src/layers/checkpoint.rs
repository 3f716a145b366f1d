//! Model checkpoints: a JSON manifest next to a flat little-endian `f64`
//! weight blob. `<path>.json` holds the config and per-tensor byte offsets,
//! `<path>.bin` the concatenated weights.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerStack, ModelConfig, Task};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the blob.
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub task: Task,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: ModelConfig,
    in_dim: usize,
    n_classes: usize,
    has_transform: bool,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

const VERSION: u32 = 1;

pub fn save_checkpoint(stack: &LayerStack, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in stack.params() {
        entries.push(TensorEntry {
            name,
            rows: t.rows(),
            cols: t.cols(),
            offset: blob.len(),
        });
        for v in t.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: VERSION,
        model: stack.config.clone(),
        in_dim: stack.in_dim,
        n_classes: stack.n_classes,
        has_transform: stack.transform.is_some(),
        meta: meta.clone(),
        tensors: entries,
    };
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut f = std::fs::File::create(path.with_extension("bin"))?;
    f.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(LayerStack, CheckpointMeta)> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    if manifest.version != VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let mut blob = Vec::new();
    std::fs::File::open(path.with_extension("bin"))?.read_to_end(&mut blob)?;

    // Rebuild the skeleton, then overwrite every tensor from the blob.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut stack = LayerStack::new(
        manifest.model.clone(),
        manifest.in_dim,
        manifest.n_classes,
        manifest.has_transform,
        &mut rng,
    )?;
    {
        let mut params = stack.params_mut();
        if params.len() != manifest.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint lists {} tensors, model has {}",
                manifest.tensors.len(),
                params.len()
            )));
        }
        for (slot, entry) in params.iter_mut().zip(&manifest.tensors) {
            let count = entry.rows * entry.cols;
            let end = entry.offset + count * 8;
            if end > blob.len() {
                return Err(Error::Config(format!(
                    "tensor {} overruns weight blob ({} > {})",
                    entry.name,
                    end,
                    blob.len()
                )));
            }
            if (slot.rows(), slot.cols()) != (entry.rows, entry.cols) {
                return Err(Error::Config(format!(
                    "tensor {} is {}x{} in the manifest but {}x{} in the model",
                    entry.name,
                    entry.rows,
                    entry.cols,
                    slot.rows(),
                    slot.cols()
                )));
            }
            let values: Vec<f64> = blob[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            **slot = Tensor::from_vec(entry.rows, entry.cols, values);
        }
    }
    Ok((stack, manifest.meta))
}
