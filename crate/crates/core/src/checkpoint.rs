//! On-disk model format: `manifest.json` plus `tensors.bin` holding every
//! tensor as little-endian `f32`, concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::embed::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seqnet::Tensor;

pub const FORMAT_VERSION: &str = "dfn-checkpoint-1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::with_capacity(model.store.len());
    for id in model.store.ids() {
        let t = model.store.get(id);
        let offset = blob.len();
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: model.store.name(id).to_string(),
            rows: t.rows(),
            cols: t.cols(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.to_string(),
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors,
    };
    fs::write(dir.join(TENSOR_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {:?}, this build reads {FORMAT_VERSION:?}",
            m.version
        )));
    }
    m.vocab.reindex();
    Ok(m)
}

pub fn load(dir: &Path) -> Result<Model> {
    let m = read_manifest(dir)?;
    let blob = fs::read(dir.join(TENSOR_FILE))?;
    let words = Tensor::zeros(m.vocab.num_words(), m.config.word_dim);
    let mut model = Model::new(m.config.clone(), m.vocab.clone(), words)?;
    if m.tensors.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, the configured model has {}",
            m.tensors.len(),
            model.store.len()
        )));
    }
    for e in &m.tensors {
        let id = model
            .store
            .find(&e.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {:?}", e.name)))?;
        let t = model.store.get(id);
        if t.shape() != (e.rows, e.cols) || e.bytes != 4 * e.rows * e.cols {
            return Err(Error::Checkpoint(format!(
                "tensor {:?}: manifest {}x{} ({} bytes), model expects {:?}",
                e.name, e.rows, e.cols, e.bytes, t.shape()
            )));
        }
        let end = e.offset.checked_add(e.bytes).filter(|&end| end <= blob.len()).ok_or_else(|| {
            Error::Checkpoint(format!("tensor {:?} extends past the end of {TENSOR_FILE}", e.name))
        })?;
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        *model.store.get_mut(id) = Tensor::from_vec(e.rows, e.cols, data);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, Family, SynthSpec};

    fn tiny() -> Model {
        let samples = gen_synthetic(&SynthSpec::new(Family::Cloze, 40, 4, 0)).unwrap();
        let config = TrainConfig {
            hidden: 3,
            char_hidden: 2,
            char_dim: 2,
            word_dim: 4,
            perspectives: 2,
            state_dim: 4,
            t_max: 2,
            ..TrainConfig::default()
        };
        Model::with_random_words(config, Vocabulary::build(&samples)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        save(&m, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert!(m.same_parameters(&back));
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn version_and_length_mismatch_rejected() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        save(&m, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace(FORMAT_VERSION, "dfn-checkpoint-0")).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint(_))));

        save(&m, dir.path()).unwrap();
        let bin = dir.path().join(TENSOR_FILE);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint(_))));
    }
}
