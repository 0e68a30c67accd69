//! Self-describing JSON checkpoints.
//!
//! A checkpoint carries everything needed to decode: the alignment and
//! training configuration, the seed, the vocabulary and label set, and every
//! parameter tensor by name. Floats are written in shortest round-trip form,
//! so a save/load cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::TrainConfig;

pub const FORMAT_VERSION: &str = "ita-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
    labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Document {
    version: String,
    seed: u64,
    alignment: AlignmentConfig,
    training: TrainConfig,
    vocabulary: VocabRecord,
    tensors: Vec<TensorRecord>,
}

/// A trained model with the configuration it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub alignment: AlignmentConfig,
    pub training: TrainConfig,
    pub vocab: Vocabulary,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let doc = Document {
            version: FORMAT_VERSION.into(),
            seed: self.seed,
            alignment: self.alignment.clone(),
            training: self.training.clone(),
            vocabulary: VocabRecord {
                tokens: self.vocab.corpus_tokens().to_vec(),
                labels: self.vocab.labels().to_vec(),
            },
            tensors: self
                .model
                .named()
                .into_iter()
                .map(|(name, _, t)| TensorRecord {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("checkpoints serialize")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "checkpoint".into(),
            source: e,
        })?;
        let found = value.get("version").and_then(|v| v.as_str()).unwrap_or("<missing>");
        if found != FORMAT_VERSION {
            return Err(Error::Version {
                found: found.to_string(),
                supported: FORMAT_VERSION.to_string(),
            });
        }
        let doc: Document = serde_json::from_value(value).map_err(|e| Error::Json {
            context: "checkpoint".into(),
            source: e,
        })?;
        doc.training.encoder.validate()?;
        let vocab = Vocabulary::from_parts(doc.vocabulary.tokens, doc.vocabulary.labels)?;
        let mut model = Model::zeros(
            &doc.training.encoder,
            vocab.size(),
            doc.alignment.max_total_length,
            vocab.num_labels(),
        );
        let mut slots = model.named_mut();
        if slots.len() != doc.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                doc.tensors.len(),
                slots.len()
            )));
        }
        for ((name, _, slot), record) in slots.iter_mut().zip(&doc.tensors) {
            if *name != record.name || slot.shape() != record.shape.as_slice() || slot.len() != record.data.len() {
                return Err(Error::Shape(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {:?}",
                    record.name,
                    record.shape,
                    slot.shape()
                )));
            }
            for (dst, src) in slot.iter_mut().zip(&record.data) {
                *dst = *src;
            }
        }
        drop(slots);
        Ok(Checkpoint {
            seed: doc.seed,
            alignment: doc.alignment,
            training: doc.training,
            vocab,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

/// Write through a temporary file in the target directory and rename it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
