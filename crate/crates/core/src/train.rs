//! Training loop, evaluation and prediction.

use std::collections::BTreeSet;
use std::io::Write;

use dahcrf_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TopicSource};
use crate::corpus::{
    build_vocab, load_embeddings, make_batches, random_embeddings, Batch, BatchWarning, Batching,
    Conversation, LabelSet, Vocabulary,
};
use crate::encoder::DropoutCtx;
use crate::error::{Error, Result};
use crate::lda::{label_corpus, LabelStrategy, LdaBundle};
use crate::model::{DahCrfModel, Decoded, ModelShape};
use crate::optim::{clip_grad_norm, Adam};
use crate::util::derive_seed;

// Stream ids for seeds derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_EMBED: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;
const STREAM_TOPICS: u64 = 5;

/// A model together with the vocabulary and label inventories it was
/// trained with.
pub struct TrainedModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub da_labels: LabelSet,
    pub topic_labels: Option<LabelSet>,
    pub model: DahCrfModel<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub stopped_early: bool,
    pub truncated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub correct: usize,
    pub utterances: usize,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are gold labels, columns predictions, both in label-set order.
    pub confusion: Vec<Vec<usize>>,
    pub labels: Vec<String>,
    /// Accuracy of the topic tagger on utterances whose topic label is
    /// known to the model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topic_accuracy: Option<f64>,
}

impl Metrics {
    pub fn from_pairs(labels: &[String], pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let l = labels.len();
        let mut confusion = vec![vec![0usize; l]; l];
        for (gold, pred) in pairs {
            confusion[gold][pred] += 1;
        }
        let utterances: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..l).map(|i| confusion[i][i]).sum();
        let per_class = (0..l)
            .map(|i| {
                let support: usize = confusion[i].iter().sum();
                let predicted: usize = confusion.iter().map(|r| r[i]).sum();
                let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
                ClassMetrics {
                    label: labels[i].clone(),
                    precision: ratio(confusion[i][i], predicted),
                    recall: ratio(confusion[i][i], support),
                    support,
                }
            })
            .collect();
        Metrics {
            accuracy: if utterances == 0 {
                0.0
            } else {
                correct as f64 / utterances as f64
            },
            correct,
            utterances,
            per_class,
            confusion,
            labels: labels.to_vec(),
            topic_accuracy: None,
        }
    }

    pub fn write_confusion_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "gold\\pred")?;
        for l in &self.labels {
            write!(w, ",{}", csv_field(l))?;
        }
        writeln!(w)?;
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            write!(w, "{}", csv_field(l))?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold: Vec<String>,
    pub pred: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topic_pred: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub id: String,
    pub utterance: usize,
    pub tokens: Vec<String>,
    pub da_attention: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topic_attention: Option<Vec<f64>>,
}

/// Fills topic labels as the configured topic source asks.
///
/// `manual_conv` broadcasts each conversation's first topic label to all of
/// its utterances. The `lda_*` sources label with `config.topic_model` when
/// one is set and otherwise expect labels already in the corpus.
pub fn prepare_topics(cfg: &ModelConfig, convs: &[Conversation]) -> Result<Vec<Conversation>> {
    if !cfg.variant.has_topic() {
        return Ok(convs.to_vec());
    }
    let strategy = match cfg.topic_source {
        TopicSource::None => return Ok(convs.to_vec()),
        TopicSource::ManualConv => {
            return convs
                .iter()
                .map(|c| {
                    let topic = c
                        .utterances
                        .iter()
                        .find_map(|u| u.topic_label.clone())
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "topic_source manual_conv but conversation {} has no topic label",
                                c.id
                            ))
                        })?;
                    let mut c = c.clone();
                    for u in &mut c.utterances {
                        u.topic_label = Some(topic.clone());
                    }
                    Ok(c)
                })
                .collect();
        }
        TopicSource::LdaConv => LabelStrategy::Conv,
        TopicSource::LdaUtt => LabelStrategy::Utt,
    };
    match &cfg.topic_model {
        Some(path) => {
            let bundle = LdaBundle::load(path)?;
            Ok(label_corpus(
                &bundle,
                convs,
                strategy,
                cfg.fold_in_sweeps,
                derive_seed(cfg.seed, &[STREAM_TOPICS]),
            )?
            .conversations)
        }
        None => {
            require_topics(cfg, convs)?;
            Ok(convs.to_vec())
        }
    }
}

fn require_topics(cfg: &ModelConfig, convs: &[Conversation]) -> Result<()> {
    for c in convs {
        if c.utterances.iter().any(|u| u.topic_label.is_none()) {
            return Err(Error::Config(format!(
                "variant {} needs topic labels ({}) but conversation {} lacks them",
                cfg.variant, cfg.topic_source, c.id
            )));
        }
    }
    Ok(())
}

fn topic_label_set(convs: &[&[Conversation]]) -> LabelSet {
    LabelSet::new(
        convs
            .iter()
            .flat_map(|cs| cs.iter())
            .flat_map(|c| c.utterances.iter().filter_map(|u| u.topic_label.clone())),
    )
}

fn batching(cfg: &ModelConfig, seed: Option<u64>) -> Batching {
    Batching {
        max_batch: cfg.max_batch,
        seed,
        max_conversation_len: cfg.max_conversation_len,
    }
}

/// Trains on `train` (topic labels must already be in place for topic
/// variants; see [`prepare_topics`]) with early stopping on `valid`
/// accuracy. The returned model holds the best-validation parameters.
pub fn train(cfg: &ModelConfig, train: &[Conversation], valid: &[Conversation]) -> Result<(TrainedModel, TrainReport)> {
    let model = build(cfg, train, valid)?;
    let report = fit(&model, train, valid)?;
    Ok((model, report))
}

/// Vocabulary, label inventories and a freshly initialised model. DA and
/// topic labels are collected from both `train` and `valid`.
pub fn build(cfg: &ModelConfig, train: &[Conversation], valid: &[Conversation]) -> Result<TrainedModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::Data("validation corpus is empty".into()));
    }
    if cfg.variant.has_topic() {
        require_topics(cfg, train)?;
        require_topics(cfg, valid)?;
    }
    let vocab = build_vocab(train, cfg.vocab_coverage)?;
    let da_labels = LabelSet::new(
        train
            .iter()
            .chain(valid)
            .flat_map(|c| c.utterances.iter().map(|u| u.da_label.clone())),
    );
    let topic_labels = cfg.variant.has_topic().then(|| topic_label_set(&[train, valid]));
    let words = match &cfg.embeddings {
        Some(path) => load_embeddings::<f32>(path, &vocab, cfg.word_dim, derive_seed(cfg.seed, &[STREAM_EMBED]))?,
        None => random_embeddings::<f32>(vocab.len(), cfg.word_dim, derive_seed(cfg.seed, &[STREAM_EMBED])),
    };
    let shape = ModelShape::from_config(
        cfg,
        vocab.len(),
        vocab.num_chars(),
        da_labels.len(),
        topic_labels.as_ref().map_or(0, LabelSet::len),
    );
    let model = DahCrfModel::<f32>::new(shape, &words, derive_seed(cfg.seed, &[STREAM_INIT]))?;
    Ok(TrainedModel {
        config: cfg.clone(),
        vocab,
        da_labels,
        topic_labels,
        model,
    })
}

/// Optimises `tm` in place and leaves it holding the parameters of the
/// best validation epoch.
pub fn fit(tm: &TrainedModel, train: &[Conversation], valid: &[Conversation]) -> Result<TrainReport> {
    let cfg = &tm.config;
    let params: Vec<Tensor<f32>> = tm.model.parameters().iter().map(|(_, t)| t.clone()).collect();
    let mut opt = Adam::new(&params, cfg.lr, cfg.weight_decay, cfg.decoupled_weight_decay);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_DROPOUT]));
    let (valid_batches, _) = make_batches(valid, &tm.vocab, &tm.da_labels, None, &batching(cfg, None))?;

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<(String, Vec<usize>, Vec<f64>)>)> = None;
    let mut since_best = 0;
    let mut truncated = BTreeSet::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let (batches, warnings) = make_batches(
            train,
            &tm.vocab,
            &tm.da_labels,
            tm.topic_labels.as_ref(),
            &batching(cfg, Some(derive_seed(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]))),
        )?;
        truncated.extend(warnings.into_iter().map(|w: BatchWarning| w.conversation));
        let mut total = 0.0;
        let mut max_norm: f64 = 0.0;
        for batch in &batches {
            tm.model.zero_grad();
            let mut drop = DropoutCtx {
                rate: cfg.dropout,
                rng: Some(&mut drop_rng),
                embeddings: cfg.dropout_embeddings,
                encoder: cfg.dropout_encoder,
                tagger: cfg.dropout_tagger,
            };
            let loss = tm.model.loss(batch, &mut drop, cfg.alpha)?;
            let value = loss.item()? as f64;
            if !value.is_finite() {
                return Err(Error::Data(format!("loss became {value} in epoch {epoch}")));
            }
            loss.backward()?;
            drop_graph(loss);
            let norm = if cfg.clip_norm > 0.0 {
                clip_grad_norm(&params, cfg.clip_norm)
            } else {
                crate::optim::grad_norm(&params)
            };
            max_norm = max_norm.max(norm);
            opt.step(&params);
            total += value * batch.num_conversations() as f64;
        }
        tm.model.zero_grad();
        let valid_accuracy = accuracy_on(tm, &valid_batches)?;
        let stats = EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            valid_accuracy,
            max_grad_norm: max_norm,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} valid acc {:.4}",
            stats.train_loss,
            stats.valid_accuracy
        );
        history.push(stats);
        if best.as_ref().is_none_or(|(_, acc, _)| valid_accuracy > *acc) {
            best = Some((epoch, valid_accuracy, tm.model.state()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    let (best_epoch, best_valid_accuracy, state) = best.expect("at least one epoch");
    tm.model
        .load_state(state.iter().map(|(n, s, d)| (n.as_str(), s.as_slice(), d.as_slice())))?;
    Ok(TrainReport {
        history,
        best_epoch,
        best_valid_accuracy,
        stopped_early,
        truncated: truncated.into_iter().collect(),
    })
}

fn drop_graph<T>(_: T) {}

fn accuracy_on(tm: &TrainedModel, batches: &[Batch]) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for b in batches {
        for (dec, span) in tm.model.decode(b, false)?.iter().zip(&b.spans) {
            correct += dec
                .da
                .iter()
                .zip(&b.da_ids[span.clone()])
                .filter(|(p, g)| p == g)
                .count();
            total += span.len();
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

impl TrainedModel {
    fn decode_all(&self, convs: &[Conversation], record_attention: bool) -> Result<Vec<Decoded>> {
        // Gold labels play no part in decoding; unknown ones are mapped to a
        // placeholder so that any corpus can be batched.
        let fallback = self.da_labels.name(0).to_owned();
        let known: Vec<Conversation> = convs
            .iter()
            .map(|c| {
                let mut c = c.clone();
                for u in &mut c.utterances {
                    if self.da_labels.id(&u.da_label).is_none() {
                        u.da_label = fallback.clone();
                    }
                }
                c
            })
            .collect();
        let cfg = Batching {
            max_conversation_len: None,
            ..batching(&self.config, None)
        };
        let (batches, _) = make_batches(&known, &self.vocab, &self.da_labels, None, &cfg)?;
        let mut out = vec![None; convs.len()];
        for b in &batches {
            for (dec, &ci) in self.model.decode(b, record_attention)?.into_iter().zip(&b.conversations) {
                out[ci] = Some(dec);
            }
        }
        Ok(out.into_iter().map(|d| d.expect("every conversation batched")).collect())
    }

    /// Utterance-level DA accuracy, per-class precision/recall and the
    /// confusion matrix. Dropout is off, so repeated calls agree exactly.
    pub fn evaluate(&self, convs: &[Conversation]) -> Result<Metrics> {
        if convs.is_empty() {
            return Err(Error::Data("evaluation corpus is empty".into()));
        }
        let gold: Vec<Vec<usize>> = convs
            .iter()
            .map(|c| self.da_labels.ids(c.utterances.iter().map(|u| u.da_label.as_str())))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::UnknownLabels(mut all) => {
                    all.sort();
                    all.dedup();
                    Error::UnknownLabels(all)
                }
                other => other,
            })?;
        let decoded = self.decode_all(convs, false)?;
        let pairs = gold
            .iter()
            .zip(&decoded)
            .flat_map(|(g, d)| g.iter().copied().zip(d.da.iter().copied()));
        let mut metrics = Metrics::from_pairs(self.da_labels.names(), pairs);
        if let Some(topics) = &self.topic_labels {
            let mut hit = 0;
            let mut n = 0;
            for (c, d) in convs.iter().zip(&decoded) {
                let Some(pred) = &d.topic else { continue };
                for (u, &p) in c.utterances.iter().zip(pred) {
                    if let Some(g) = u.topic_label.as_deref().and_then(|t| topics.id(t)) {
                        n += 1;
                        hit += usize::from(g == p);
                    }
                }
            }
            if n > 0 {
                metrics.topic_accuracy = Some(hit as f64 / n as f64);
            }
        }
        Ok(metrics)
    }

    pub fn predict(&self, convs: &[Conversation]) -> Result<Vec<Prediction>> {
        let decoded = self.decode_all(convs, false)?;
        Ok(convs
            .iter()
            .zip(decoded)
            .map(|(c, d)| Prediction {
                id: c.id.clone(),
                gold: c.utterances.iter().map(|u| u.da_label.clone()).collect(),
                pred: d.da.iter().map(|&i| self.da_labels.name(i).to_owned()).collect(),
                topic_pred: d.topic.map(|t| {
                    let names = self.topic_labels.as_ref().expect("topic variant");
                    t.iter().map(|&i| names.name(i).to_owned()).collect()
                }),
            })
            .collect())
    }

    /// Attention weights over the tokens of every utterance. Empty for the
    /// mean-pooling variant.
    pub fn attention(&self, convs: &[Conversation]) -> Result<Vec<AttentionRecord>> {
        let decoded = self.decode_all(convs, true)?;
        let mut out = Vec::new();
        for (c, d) in convs.iter().zip(decoded) {
            for (i, u) in c.utterances.iter().enumerate() {
                let Some(a) = d.alpha.get(i) else { continue };
                out.push(AttentionRecord {
                    id: c.id.clone(),
                    utterance: i,
                    tokens: u.tokens.clone(),
                    da_attention: a.clone(),
                    topic_attention: d.beta.get(i).cloned(),
                });
            }
        }
        Ok(out)
    }
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}
