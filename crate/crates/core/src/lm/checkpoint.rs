//! Checkpoints are directories holding `manifest.json` (format version,
//! config, vocabulary, tensor names and shapes) and `weights.bin`, the
//! tensors as little-endian f32 in manifest order, row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{CausalLM, LMConfig, ParamStore};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "convbias-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: LMConfig,
    pub steps: u64,
    pub vocabulary: Tokenizer,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &CausalLM, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        steps: model.steps,
        vocabulary: model.tokenizer.clone(),
        tensors: model
            .params
            .names()
            .iter()
            .zip(model.params.values())
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                shape: [v.nrows(), v.ncols()],
            })
            .collect(),
    };
    let mut bytes = Vec::with_capacity(model.config.n_parameters() * 4);
    for v in model.params.values() {
        for &x in v.iter() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<CausalLM> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
            manifest.format, manifest.version
        )));
    }
    manifest.config.validate()?;
    if manifest.vocabulary.len() != manifest.config.vocab_size {
        return Err(Error::Checkpoint("vocabulary size differs from config".into()));
    }
    let expected = manifest.config.param_shapes();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, (r, c))) in manifest.tensors.iter().zip(&expected) {
        if &entry.name != name || entry.shape != [*r, *c] {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, config implies {name} {:?}",
                entry.name,
                entry.shape,
                [r, c]
            )));
        }
    }

    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let total: usize = expected.iter().map(|(_, (r, c))| r * c).sum();
    if bytes.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "{} holds {} bytes, expected {}",
            wpath.display(),
            bytes.len(),
            total * 4
        )));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let mut names = Vec::with_capacity(expected.len());
    let mut values = Vec::with_capacity(expected.len());
    for (name, (r, c)) in expected {
        let data: Vec<f64> = floats.by_ref().take(r * c).collect();
        values.push(Array2::from_shape_vec((r, c), data).expect("length checked above"));
        names.push(name);
    }
    Ok(CausalLM {
        config: manifest.config,
        tokenizer: manifest.vocabulary,
        params: ParamStore::new(names, values),
        steps: manifest.steps,
    })
}
