//! Checkpoint directories: `manifest.json` plus one raw little-endian f64
//! file per parameter tensor.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{ChannelName, ChannelSpec, MultichannelCnn};
use crate::embeddings::TokenizerKind;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mcdst-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestChannel {
    pub name: ChannelName,
    pub tokenizer: TokenizerKind,
    pub embedding_dim: usize,
    pub filter_heights: Vec<usize>,
    pub filter_counts: Vec<usize>,
}

impl From<&ChannelSpec> for ManifestChannel {
    fn from(s: &ChannelSpec) -> Self {
        Self {
            name: s.name,
            tokenizer: s.tokenizer,
            embedding_dim: s.embedding_dim,
            filter_heights: s.filter_heights.clone(),
            filter_counts: s.filter_counts.clone(),
        }
    }
}

impl ManifestChannel {
    pub fn to_spec(&self) -> Result<ChannelSpec> {
        ChannelSpec::new(
            self.name,
            self.tokenizer,
            self.embedding_dim,
            self.filter_heights.clone(),
            self.filter_counts.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub channels: Vec<ManifestChannel>,
    pub labels: Vec<String>,
    pub dropout_rate: f64,
    pub always_empty: bool,
    /// Free-form training metadata (hyperparameters, slot identity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

fn encode_tensor(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for &v in values {
        out.write_f64::<LittleEndian>(v).expect("write to Vec");
    }
    out
}

pub fn save_model(model: &MultichannelCnn, dir: &Path) -> Result<Manifest> {
    save_model_with_metadata(model, dir, None)
}

/// Writes the tensor files first and the manifest last, so a directory with
/// a manifest is complete.
pub fn save_model_with_metadata(
    model: &MultichannelCnn,
    dir: &Path,
    metadata: Option<serde_json::Value>,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (info, values) in model.tensor_infos().into_iter().zip(model.tensors()) {
        let file = format!("{}.f64", info.name);
        let bytes = encode_tensor(values);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name: info.name,
            file,
            shape: info.shape,
            crc32: crc32fast::hash(&bytes),
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        schema_version: CHECKPOINT_VERSION,
        channels: model.channels.iter().map(|c| ManifestChannel::from(&c.spec)).collect(),
        labels: model.labels.clone(),
        dropout_rate: model.dropout_rate,
        always_empty: model.always_empty,
        metadata,
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint {
            tensor: MANIFEST_FILE.into(),
            message: format!("format {:?}, expected {CHECKPOINT_FORMAT:?}", manifest.format),
        });
    }
    if manifest.schema_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint {
            tensor: MANIFEST_FILE.into(),
            message: format!(
                "schema version {} is not supported (expected {CHECKPOINT_VERSION})",
                manifest.schema_version
            ),
        });
    }
    Ok(manifest)
}

pub fn load_model(dir: &Path) -> Result<MultichannelCnn> {
    let manifest = load_manifest(dir)?;
    let specs = manifest
        .channels
        .iter()
        .map(ManifestChannel::to_spec)
        .collect::<Result<Vec<_>>>()?;
    let mut model = MultichannelCnn::init(specs, manifest.labels.clone(), manifest.dropout_rate, 0)?;
    model.always_empty = manifest.always_empty;
    let infos = model.tensor_infos();
    if manifest.tensors.len() != infos.len() {
        return Err(Error::Checkpoint {
            tensor: MANIFEST_FILE.into(),
            message: format!("{} tensors listed, channel layout needs {}", manifest.tensors.len(), infos.len()),
        });
    }
    for ((entry, info), dst) in manifest.tensors.iter().zip(&infos).zip(model.tensors_mut()) {
        let fail = |message: String| Error::Checkpoint {
            tensor: entry.name.clone(),
            message,
        };
        if entry.name != info.name {
            return Err(fail(format!("expected tensor {} at this position", info.name)));
        }
        if entry.shape != info.shape {
            return Err(fail(format!("shape {:?} does not match expected {:?}", entry.shape, info.shape)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| fail(format!("cannot read {}: {e}", path.display())))?;
        if bytes.len() != dst.len() * 8 {
            return Err(fail(format!("file holds {} bytes, expected {}", bytes.len(), dst.len() * 8)));
        }
        let crc = crc32fast::hash(&bytes);
        if crc != entry.crc32 {
            return Err(fail(format!("checksum {crc:08x} does not match manifest {:08x}", entry.crc32)));
        }
        let mut cursor = Cursor::new(bytes);
        cursor
            .read_f64_into::<LittleEndian>(dst)
            .map_err(|e| fail(e.to_string()))?;
        if let Some(bad) = dst.iter().find(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite parameter {bad}")));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MultichannelCnn {
        let specs = vec![
            ChannelSpec::standard(ChannelName::EnglishWord, 3, 2),
            ChannelSpec::standard(ChannelName::ChineseChar, 2, 1),
        ];
        MultichannelCnn::init(specs, vec!["a".into(), "b".into()], 0.4, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        let meta = serde_json::json!({"topic": "FOOD"});
        save_model_with_metadata(&m, dir.path(), Some(meta.clone())).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(m, back);
        let a: Vec<u64> = m.flat_parameters().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flat_parameters().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(load_manifest(dir.path()).unwrap().metadata, Some(meta));
    }

    fn edit_manifest(dir: &Path, f: impl FnOnce(&mut Manifest)) {
        let mut man = load_manifest(dir).unwrap();
        f(&mut man);
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string(&man).unwrap()).unwrap();
    }

    #[test]
    fn wrong_shape_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&model(), dir.path()).unwrap();
        edit_manifest(dir.path(), |m| m.tensors[2].shape = vec![9, 9, 9]);
        let err = load_model(dir.path()).unwrap_err().to_string();
        assert!(err.contains("english_word.h2.weight"), "{err}");
    }

    #[test]
    fn version_and_missing_file_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&model(), dir.path()).unwrap();
        edit_manifest(dir.path(), |m| m.schema_version = 99);
        assert!(load_model(dir.path()).unwrap_err().to_string().contains("schema version"));

        let dir = tempfile::tempdir().unwrap();
        save_model(&model(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("output.bias.f64")).unwrap();
        assert!(load_model(dir.path()).unwrap_err().to_string().contains("output.bias"));

        let dir = tempfile::tempdir().unwrap();
        save_model(&model(), dir.path()).unwrap();
        let p = dir.path().join("output.weight.f64");
        let mut bytes = fs::read(&p).unwrap();
        bytes[3] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        let err = load_model(dir.path()).unwrap_err().to_string();
        assert!(err.contains("output.weight") && err.contains("checksum"), "{err}");
    }
}
