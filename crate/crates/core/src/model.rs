//! The full hierarchical model: shared encoder, per-task attention,
//! conversation taggers and CRFs.

use dahcrf_tensor::{no_grad, Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::attention::{condition, mean_pool, weighted_sum, TaskAttention};
use crate::config::{ContextKind, ModelConfig, Variant};
use crate::corpus::Batch;
use crate::crf::{joint_loss, LinearChainCrf};
use crate::encoder::{DropoutCtx, EncoderDims, SharedUtteranceEncoder};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tagger::ConversationTagger;

/// Everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub variant: Variant,
    pub encoder: EncoderDims,
    pub attention_dim: usize,
    pub da_labels: usize,
    /// Zero when the variant has no topic task.
    pub topic_labels: usize,
    pub crf_start_stop: bool,
}

impl ModelShape {
    pub fn from_config(
        cfg: &ModelConfig,
        vocab: usize,
        chars: usize,
        da_labels: usize,
        topic_labels: usize,
    ) -> Self {
        ModelShape {
            variant: cfg.variant,
            encoder: EncoderDims {
                vocab,
                word_dim: cfg.word_dim,
                chars,
                char_dim: cfg.char_dim,
                char_features: cfg.char_features,
                char_kind: cfg.char_encoder,
                hidden: cfg.hidden,
            },
            attention_dim: cfg.attention_dim,
            da_labels,
            topic_labels: if cfg.variant.has_topic() { topic_labels } else { 0 },
            crf_start_stop: cfg.crf_start_stop,
        }
    }
}

pub struct TopicBranch<F: Float> {
    pub tagger: ConversationTagger<F>,
    pub crf: LinearChainCrf<F>,
}

pub struct DahCrfModel<F: Float> {
    pub shape: ModelShape,
    pub encoder: SharedUtteranceEncoder<F>,
    /// `None` when contexts are mean-pooled.
    pub da_attention: Option<TaskAttention<F>>,
    pub topic_attention: Option<TaskAttention<F>>,
    pub da_tagger: ConversationTagger<F>,
    pub da_crf: LinearChainCrf<F>,
    pub topic: Option<TopicBranch<F>>,
    params: Vec<(String, Tensor<F>)>,
}

/// Per-conversation outputs of a forward pass.
pub struct ConversationOutput<F: Float> {
    pub da_emissions: Tensor<F>,
    pub topic_emissions: Option<Tensor<F>>,
    /// DA attention weights per utterance, when requested.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub da: Vec<usize>,
    pub da_score: f64,
    pub topic: Option<Vec<usize>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl<F: Float> DahCrfModel<F> {
    /// Random initialisation from `seed`; `words` is the initial word table.
    pub fn new(shape: ModelShape, words: &Tensor<F>, seed: u64) -> Result<Self> {
        let v = shape.variant;
        if shape.da_labels == 0 {
            return Err(Error::Data("no dialogue-act labels".into()));
        }
        if v.has_topic() && shape.topic_labels == 0 {
            return Err(Error::Config(format!("variant {v} needs topic labels")));
        }
        let mut store = ParamStore::new(seed);
        let encoder = SharedUtteranceEncoder::new(&mut store, shape.encoder, words)?;
        let d_h = shape.encoder.hidden;
        let d_tok = encoder.output_dim();
        let (da_attention, topic_attention) = match v.context() {
            ContextKind::Single => (
                Some(TaskAttention::new(&mut store, "attn.da", d_h, d_tok, shape.attention_dim)),
                None,
            ),
            ContextKind::Dual => (
                Some(TaskAttention::new(&mut store, "attn.da", 2 * d_h, d_tok, shape.attention_dim)),
                Some(TaskAttention::new(&mut store, "attn.topic", 2 * d_h, d_tok, shape.attention_dim)),
            ),
            ContextKind::MeanPool => (None, None),
        };
        let da_tagger = ConversationTagger::new(&mut store, "tagger.da", d_tok, d_h);
        let crf = v.has_crf();
        let da_crf = LinearChainCrf::new(&mut store, "crf.da", 2 * d_h, shape.da_labels, crf, crf && shape.crf_start_stop);
        let topic = v.has_topic().then(|| TopicBranch {
            tagger: ConversationTagger::new(&mut store, "tagger.topic", d_tok, d_h),
            crf: LinearChainCrf::new(
                &mut store,
                "crf.topic",
                2 * d_h,
                shape.topic_labels,
                crf,
                crf && shape.crf_start_stop,
            ),
        });
        Ok(DahCrfModel {
            shape,
            encoder,
            da_attention,
            topic_attention,
            da_tagger,
            da_crf,
            topic,
            params: store.into_entries(),
        })
    }

    /// Named trainable tensors in a fixed order.
    pub fn parameters(&self) -> &[(String, Tensor<F>)] {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// Emission scores for every conversation of `batch`.
    pub fn forward(
        &self,
        batch: &Batch,
        drop: &mut DropoutCtx<'_>,
        record_attention: bool,
    ) -> Result<Vec<ConversationOutput<F>>> {
        let enc = self.encoder.encode(batch, drop)?;
        let da_proj = self
            .da_attention
            .as_ref()
            .map(|a| a.project_tokens(&enc.states))
            .transpose()?;
        let topic_proj = self
            .topic_attention
            .as_ref()
            .map(|a| a.project_tokens(&enc.states))
            .transpose()?;
        let weights = |t: &Tensor<F>| t.data().iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();

        let mut outputs = Vec::with_capacity(batch.num_conversations());
        for span in &batch.spans {
            let t_len = span.len();
            if t_len == 0 {
                return Err(Error::Data("conversation without utterances".into()));
            }
            let mut g = self.da_tagger.initial();
            let mut s = self.topic.as_ref().map(|b| b.tagger.initial());
            let mut g_fwd = Vec::with_capacity(t_len);
            let mut s_fwd = Vec::with_capacity(t_len);
            let mut l_ctx = Vec::with_capacity(t_len);
            let mut v_ctx = Vec::with_capacity(t_len);
            let mut alpha = Vec::new();
            let mut beta = Vec::new();
            for u in span.clone() {
                let rows = enc.rows(u);
                let h = enc.states.gather_rows(&rows)?;
                let mask = vec![true; rows.len()];
                let (l, v) = match self.shape.variant.context() {
                    ContextKind::MeanPool => {
                        let m = mean_pool(&h, &mask)?;
                        (m.clone(), Some(m))
                    }
                    kind => {
                        let cond = condition(if kind == ContextKind::Dual { s.as_ref() } else { None }, &g)?;
                        let att = self.da_attention.as_ref().expect("attention variant");
                        let hp = da_proj.as_ref().expect("attention variant").gather_rows(&rows)?;
                        let a = att.weights_projected(&hp, &cond, &mask)?;
                        if record_attention {
                            alpha.push(weights(&a));
                        }
                        let l = weighted_sum(&a, &h)?;
                        let v = match (&self.topic_attention, &topic_proj) {
                            (Some(att), Some(proj)) => {
                                let b = att.weights_projected(&proj.gather_rows(&rows)?, &cond, &mask)?;
                                if record_attention {
                                    beta.push(weights(&b));
                                }
                                Some(weighted_sum(&b, &h)?)
                            }
                            _ => None,
                        };
                        (l, v)
                    }
                };
                g = self.da_tagger.fwd.step(&g, &l)?;
                g_fwd.push(g.clone());
                l_ctx.push(l);
                if let (Some(branch), Some(v)) = (&self.topic, v) {
                    let next = branch.tagger.fwd.step(s.as_ref().expect("topic state"), &v)?;
                    s_fwd.push(next.clone());
                    s = Some(next);
                    v_ctx.push(v);
                }
            }
            let g_all = self.da_tagger.finish(&g_fwd, &Tensor::concat(&l_ctx, 0)?)?;
            let g_all = drop.apply(&g_all, drop.tagger)?;
            let da_emissions = self.da_crf.emissions(&g_all)?;
            let topic_emissions = match &self.topic {
                Some(branch) => {
                    let s_all = branch.tagger.finish(&s_fwd, &Tensor::concat(&v_ctx, 0)?)?;
                    let s_all = drop.apply(&s_all, drop.tagger)?;
                    Some(branch.crf.emissions(&s_all)?)
                }
                None => None,
            };
            outputs.push(ConversationOutput {
                da_emissions,
                topic_emissions,
                alpha,
                beta,
            });
        }
        Ok(outputs)
    }

    /// Joint negative log-likelihood of the gold labels in `batch`, averaged
    /// over its conversations.
    pub fn loss(&self, batch: &Batch, drop: &mut DropoutCtx<'_>, alpha: f64) -> Result<Tensor<F>> {
        let outputs = self.forward(batch, drop, false)?;
        let mut da_ll = Vec::with_capacity(outputs.len());
        let mut topic_ll = Vec::new();
        for (out, span) in outputs.iter().zip(&batch.spans) {
            da_ll.push(self.da_crf.log_likelihood(&out.da_emissions, &batch.da_ids[span.clone()])?);
            if let (Some(branch), Some(em)) = (&self.topic, &out.topic_emissions) {
                let ids = batch
                    .topic_ids
                    .as_ref()
                    .ok_or_else(|| Error::Data("batch has no topic labels".into()))?;
                topic_ll.push(branch.crf.log_likelihood(em, &ids[span.clone()])?);
            }
        }
        let topic = self.topic.as_ref().map(|_| topic_ll.as_slice());
        joint_loss(&da_ll, topic, alpha)
    }

    /// Viterbi decoding of every conversation, without recording gradients.
    pub fn decode(&self, batch: &Batch, record_attention: bool) -> Result<Vec<Decoded>> {
        no_grad(|| {
            let outputs = self.forward(batch, &mut DropoutCtx::eval(), record_attention)?;
            outputs
                .into_iter()
                .map(|out| {
                    let da = self.da_crf.viterbi(&out.da_emissions)?;
                    let topic = match (&self.topic, &out.topic_emissions) {
                        (Some(b), Some(em)) => Some(b.crf.viterbi(em)?.labels),
                        _ => None,
                    };
                    Ok(Decoded {
                        da: da.labels,
                        da_score: da.score,
                        topic,
                        alpha: out.alpha,
                        beta: out.beta,
                    })
                })
                .collect()
        })
    }

    /// Copies every parameter value out as `f64`.
    pub fn state(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.params
            .iter()
            .map(|(n, t)| {
                (
                    n.clone(),
                    t.shape().to_vec(),
                    t.data().iter().map(|x| x.to_f64_lossy()).collect(),
                )
            })
            .collect()
    }

    /// Overwrites parameters by name; every parameter must be supplied with
    /// its exact shape.
    pub fn load_state<'a>(&self, state: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [f64])>) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, shape, data) in state {
            let i = self
                .params
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Data(format!("unexpected parameter {name}")))?;
            let t = &self.params[i].1;
            if t.shape() != shape || data.len() != t.numel() {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {shape:?}, expected {:?}",
                    t.shape()
                )));
            }
            let mut d = t.data_mut();
            for (dst, &src) in d.iter_mut().zip(data) {
                *dst = F::of(src);
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::Data(format!("missing parameter {}", self.params[i].0)));
        }
        Ok(())
    }
}
