//! Encoder checkpoints: one little-endian f64 blob plus a JSON manifest
//! describing the tensor layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderParams, Linear};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// `[rows, cols]` for weights, `[len]` for biases.
    pub shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: String,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub k: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `<stem>.bin` and `<stem>.json` next to each other.
pub fn save_encoder(params: &EncoderParams, stem: &Path) -> Result<()> {
    let mut blob = Vec::with_capacity(params.param_count() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, layer) in params.layers() {
        tensors.push(TensorEntry {
            name: format!("{name}.weight"),
            shape: vec![layer.outputs, layer.inputs],
            offset,
        });
        offset += layer.weight.len();
        tensors.push(TensorEntry {
            name: format!("{name}.bias"),
            shape: vec![layer.outputs],
            offset,
        });
        offset += layer.bias.len();
        for v in layer.weight.iter().chain(&layer.bias) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        dtype: "f64le".into(),
        feature_dim: params.feature_dim(),
        hidden_dim: params.hidden_dim(),
        k: params.k,
        tensors,
    };
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
    fs::write(&json, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_encoder(stem: &Path) -> Result<EncoderParams> {
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
    if manifest.dtype != "f64le" {
        return Err(Error::Config(format!(
            "unsupported encoder dtype {}",
            manifest.dtype
        )));
    }
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(
            "encoder blob length is not a multiple of 8".into(),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let d = manifest.feature_dim;
    let h = manifest.hidden_dim;
    let mut params = EncoderParams {
        embed: Linear::zeros(3, d),
        local: Linear::zeros(d, d),
        fc1: Linear::zeros(2 * d, h),
        fc2: Linear::zeros(h, d),
        proj: Linear::zeros(d, 3),
        k: manifest.k,
    };
    let mut seen = 0;
    for (name, dst) in params.tensors_mut() {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("encoder manifest lacks tensor {name}")))?;
        let len: usize = entry.shape.iter().product();
        if len != dst.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {name} has {len} elements, expected {}",
                dst.len()
            )));
        }
        let src = values
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::Config(format!("tensor {name} runs past the end of the blob")))?;
        dst.copy_from_slice(src);
        seen += len;
    }
    if seen != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "blob holds {} values but the manifest describes {seen}",
            values.len()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("encoder");
        let p = EncoderParams::new(7, 5, 4, 99);
        save_encoder(&p, &stem).unwrap();
        assert_eq!(load_encoder(&stem).unwrap(), p);
        let bytes = fs::metadata(stem.with_extension("bin")).unwrap().len();
        assert_eq!(bytes as usize, p.param_count() * 8);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("enc");
        save_encoder(&EncoderParams::new(4, 4, 2, 0), &stem).unwrap();
        let bin = stem.with_extension("bin");
        let mut b = fs::read(&bin).unwrap();
        b.truncate(b.len() - 16);
        fs::write(&bin, b).unwrap();
        assert!(load_encoder(&stem).is_err());
    }
}
