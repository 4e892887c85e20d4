//! JSON checkpoints. Parameters are stored as `f64`, which holds every `f32`
//! exactly, so a save/load cycle reproduces the model bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use dahcrf_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{DahCrfModel, ModelShape};
use crate::train::TrainedModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    config_hash: String,
    vocab: Vocabulary,
    vocab_hash: String,
    da_labels: LabelSet,
    topic_labels: Option<LabelSet>,
    tensors: BTreeMap<String, StoredTensor>,
}

impl TrainedModel {
    pub fn to_json_writer(&self, w: impl Write) -> Result<()> {
        let ckpt = Checkpoint {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            config_hash: self.config.hash(),
            vocab: self.vocab.clone(),
            vocab_hash: self.vocab.hash(),
            da_labels: self.da_labels.clone(),
            topic_labels: self.topic_labels.clone(),
            tensors: self
                .model
                .state()
                .into_iter()
                .map(|(n, shape, data)| (n, StoredTensor { shape, data }))
                .collect(),
        };
        serde_json::to_writer(w, &ckpt).map_err(|e| Error::Data(format!("cannot write checkpoint: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.to_json_writer(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed checkpoint: {e}")))?;
        Self::from_checkpoint(ckpt)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Data(format!("{}: malformed checkpoint: {e}", path.display())))?;
        Self::from_checkpoint(ckpt)
    }

    fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(Error::Data("checkpoint config hash mismatch".into()));
        }
        if ckpt.vocab.hash() != ckpt.vocab_hash {
            return Err(Error::Data("checkpoint vocabulary hash mismatch".into()));
        }
        let cfg = ckpt.config;
        let shape = ModelShape::from_config(
            &cfg,
            ckpt.vocab.len(),
            ckpt.vocab.num_chars(),
            ckpt.da_labels.len(),
            ckpt.topic_labels.as_ref().map_or(0, LabelSet::len),
        );
        let words = Tensor::<f32>::zeros(&[ckpt.vocab.len(), cfg.word_dim]);
        let model = DahCrfModel::new(shape, &words, 0)?;
        model.load_state(
            ckpt.tensors
                .iter()
                .map(|(n, t)| (n.as_str(), t.shape.as_slice(), t.data.as_slice())),
        )?;
        Ok(TrainedModel {
            config: cfg,
            vocab: ckpt.vocab,
            da_labels: ckpt.da_labels,
            topic_labels: ckpt.topic_labels,
            model,
        })
    }
}
