//! Parameter archives: one JSON document holding the architecture manifest and
//! every named array in row-major order.
//!
//! Floats are written with round-trip precision, so loading a saved archive
//! reproduces the parameters bit for bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ModelConfig, ModelParams, ParamKey};

pub const FORMAT: &str = "mutual-span-params/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Archive {
    format: String,
    manifest: ModelConfig,
    params: Vec<NamedArray>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedArray {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn to_json(params: &ModelParams) -> String {
    let archive = Archive {
        format: FORMAT.to_string(),
        manifest: params.config,
        params: params
            .iter()
            .map(|(k, t)| NamedArray {
                name: k.name().to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
                data: t.iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_string(&archive).expect("archive serializes")
}

/// Parses an archive. Any structural problem is reported as a manifest mismatch.
pub fn from_json(text: &str) -> Result<ModelParams> {
    let archive: Archive = serde_json::from_str(text)
        .map_err(|e| Error::ManifestMismatch(format!("unreadable checkpoint: {e}")))?;
    if archive.format != FORMAT {
        return Err(Error::ManifestMismatch(format!(
            "unknown checkpoint format {:?}",
            archive.format
        )));
    }
    let mut slots: Vec<Option<Array2<f64>>> = vec![None; ParamKey::ALL.len()];
    for entry in archive.params {
        let key = ParamKey::from_name(&entry.name)
            .ok_or_else(|| Error::ManifestMismatch(format!("unknown parameter {:?}", entry.name)))?;
        let array = Array2::from_shape_vec((entry.rows, entry.cols), entry.data).map_err(|_| {
            Error::ManifestMismatch(format!("{}: data length does not match its shape", entry.name))
        })?;
        let slot = &mut slots[key as usize];
        if slot.is_some() {
            return Err(Error::ManifestMismatch(format!("duplicate parameter {}", entry.name)));
        }
        *slot = Some(array);
    }
    let tensors = ParamKey::ALL
        .iter()
        .zip(slots)
        .map(|(k, s)| s.ok_or_else(|| Error::ManifestMismatch(format!("missing parameter {}", k.name()))))
        .collect::<Result<Vec<_>>>()?;
    ModelParams::from_tensors(archive.manifest, tensors).map_err(|e| match e {
        Error::Config(m) => Error::ManifestMismatch(m),
        other => other,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

/// Fails unless the loaded manifest equals `expected` in every architecture field.
/// The seed is ignored: it only records how the arrays were initialized.
pub fn check_manifest(params: &ModelParams, expected: &ModelConfig) -> Result<()> {
    let got = params.config;
    let same = ModelConfig { seed: expected.seed, ..got } == *expected;
    if same {
        Ok(())
    } else {
        Err(Error::ManifestMismatch(format!(
            "checkpoint has d={} d_in={} vocab_size={} kernel_size={}, expected d={} d_in={} vocab_size={} kernel_size={}",
            got.d, got.d_in, got.vocab_size, got.kernel_size,
            expected.d, expected.d_in, expected.vocab_size, expected.kernel_size
        )))
    }
}
