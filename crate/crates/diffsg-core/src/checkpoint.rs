//! Self-describing parameter checkpoints.
//!
//! One JSON file holds a type tag, the model config, and every parameter
//! array with its name and shape. The denoiser and the regression baseline
//! share the container; `model_type` tells them apart.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{MtfnnConfig, MtfnnParams};
use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_type: String,
    pub config: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("cannot read checkpoint {}: {e}", path.display()),
            ))
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: ckpt.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        Ok(ckpt)
    }
}

pub fn save_denoiser(params: &DenoiserParams, path: &Path) -> Result<()> {
    let arrays = params
        .named_arrays()
        .into_iter()
        .map(|(name, shape, data)| ArrayEntry { name, shape, data: data.to_vec() })
        .collect();
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model_type: "denoiser".into(),
        config: serde_json::to_value(params.config())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?,
        arrays,
    };
    ckpt.save(path)
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserParams> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.model_type != "denoiser" {
        return Err(Error::invalid_argument(format!(
            "checkpoint {} holds a {:?} model, expected denoiser",
            path.display(),
            ckpt.model_type
        )));
    }
    let config: DenoiserConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    let map: BTreeMap<String, Vec<f64>> =
        ckpt.arrays.into_iter().map(|a| (a.name, a.data)).collect();
    DenoiserParams::from_named_arrays(config, |name| map.get(name).cloned())
}

pub fn save_mtfnn(params: &MtfnnParams, path: &Path) -> Result<()> {
    let arrays = params
        .named_arrays()
        .into_iter()
        .map(|(name, shape, data)| ArrayEntry { name, shape, data: data.to_vec() })
        .collect();
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model_type: "mtfnn".into(),
        config: serde_json::to_value(params.config())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?,
        arrays,
    };
    ckpt.save(path)
}

pub fn load_mtfnn(path: &Path) -> Result<MtfnnParams> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.model_type != "mtfnn" {
        return Err(Error::invalid_argument(format!(
            "checkpoint {} holds a {:?} model, expected mtfnn",
            path.display(),
            ckpt.model_type
        )));
    }
    let config: MtfnnConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    let map: BTreeMap<String, Vec<f64>> =
        ckpt.arrays.into_iter().map(|a| (a.name, a.data)).collect();
    MtfnnParams::from_named_arrays(config, |name| map.get(name).cloned())
}
