//! Shared utterance encoder: word ⊕ character embeddings per token, then a
//! bidirectional GRU over each utterance.

use dahcrf_tensor::{Float, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, PAD};
use crate::error::{Error, Result};
use crate::nn::{dropout, linear, ParamStore};

/// GRU cell with the three gates fused column-wise: `w` is
/// `[d_in × 3d_h]` ordered (update, reset, candidate).
pub struct GruCell<F: Float> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
    /// `[d_h × 2d_h]` recurrent weights of the update and reset gates.
    pub u_zr: Tensor<F>,
    /// `[d_h × d_h]` recurrent weights of the candidate.
    pub u_h: Tensor<F>,
    d_in: usize,
    d_h: usize,
}

impl<F: Float> GruCell<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, d_in: usize, d_h: usize) -> Self {
        GruCell {
            w: store.fan_in(&format!("{name}.w"), &[d_in, 3 * d_h], d_h),
            b: store.fan_in(&format!("{name}.b"), &[3 * d_h], d_h),
            u_zr: store.fan_in(&format!("{name}.u_zr"), &[d_h, 2 * d_h], d_h),
            u_h: store.fan_in(&format!("{name}.u_h"), &[d_h, d_h], d_h),
            d_in,
            d_h,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn hidden_dim(&self) -> usize {
        self.d_h
    }

    /// Input half of all three gates for a batch of rows, bias included.
    pub fn project_inputs(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        linear(x, &self.w, &self.b)
    }

    /// One step from already projected inputs `xp` `[n × 3d_h]`.
    pub fn step_projected(&self, h: &Tensor<F>, xp: &Tensor<F>) -> Result<Tensor<F>> {
        let d = self.d_h;
        let hzr = h.matmul(&self.u_zr)?;
        let z = xp.narrow(1, 0, d)?.add(&hzr.narrow(1, 0, d)?)?.sigmoid();
        let r = xp.narrow(1, d, d)?.add(&hzr.narrow(1, d, d)?)?.sigmoid();
        let cand = xp
            .narrow(1, 2 * d, d)?
            .add(&r.mul(h)?.matmul(&self.u_h)?)?
            .tanh();
        // (1 - z) ⊙ h + z ⊙ ĥ
        Ok(h.add(&z.mul(&cand.sub(h)?)?)?)
    }

    /// `h [n × d_h]`, `x [n × d_in]` → `[n × d_h]`.
    pub fn step(&self, h: &Tensor<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        if h.shape().len() != 2 || h.shape()[1] != self.d_h || x.shape().get(1) != Some(&self.d_in) {
            return Err(Error::Argument(format!(
                "gru step expects h [n×{}] and x [n×{}], got {:?} and {:?}",
                self.d_h,
                self.d_in,
                h.shape(),
                x.shape()
            )));
        }
        self.step_projected(h, &self.project_inputs(x)?)
    }

    pub fn zero_state(&self, rows: usize) -> Tensor<F> {
        Tensor::zeros(&[rows, self.d_h])
    }
}

/// Per-step states of a masked bidirectional pass over `n` padded rows.
pub struct BiGruStates<F: Float> {
    /// `fwd[t]`, `bwd[t]` are `[n × d_h]`.
    pub fwd: Vec<Tensor<F>>,
    pub bwd: Vec<Tensor<F>>,
}

impl<F: Float> BiGruStates<F> {
    /// Last forward state of every row (the state after its last real step).
    pub fn last_fwd(&self) -> Option<&Tensor<F>> {
        self.fwd.last()
    }

    /// Backward state at position 0, which has seen every real step.
    pub fn first_bwd(&self) -> Option<&Tensor<F>> {
        self.bwd.first()
    }

    /// `[(steps·n) × 2d_h]`, time-major, row `t·n + i` = `fwd[t][i] ⊕ bwd[t][i]`.
    pub fn time_major(&self) -> Result<Tensor<F>> {
        let steps: Vec<Tensor<F>> = self
            .fwd
            .iter()
            .zip(&self.bwd)
            .map(|(f, b)| Tensor::concat(&[f.clone(), b.clone()], 1))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Tensor::concat(&steps, 0)?)
    }
}

pub struct BiGru<F: Float> {
    pub fwd: GruCell<F>,
    pub bwd: GruCell<F>,
}

impl<F: Float> BiGru<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, d_in: usize, d_h: usize) -> Self {
        BiGru {
            fwd: GruCell::new(store, &format!("{name}.fwd"), d_in, d_h),
            bwd: GruCell::new(store, &format!("{name}.bwd"), d_in, d_h),
        }
    }

    /// Runs both directions over time-major inputs `[(steps·n) × d_in]`
    /// where row `i` is real for the first `lengths[i]` steps. Padded steps
    /// carry the previous state through unchanged, so the backward pass
    /// starts each row at its own last real step from a zero state.
    pub fn run(&self, xs: &Tensor<F>, lengths: &[usize]) -> Result<BiGruStates<F>> {
        let n = lengths.len();
        let steps = if n == 0 { 0 } else { xs.shape()[0] / n };
        let fp = self.fwd.project_inputs(xs)?;
        let bp = self.bwd.project_inputs(xs)?;
        let masks: Vec<Vec<bool>> = (0..steps)
            .map(|t| lengths.iter().map(|&l| t < l).collect())
            .collect();
        let all_real = |t: usize| masks[t].iter().all(|&m| m);

        let mut fwd = Vec::with_capacity(steps);
        let mut h = self.fwd.zero_state(n);
        for t in 0..steps {
            let next = self.fwd.step_projected(&h, &fp.narrow(0, t * n, n)?)?;
            h = if all_real(t) {
                next
            } else {
                Tensor::select_rows(&masks[t], &next, &h)?
            };
            fwd.push(h.clone());
        }
        let mut bwd = vec![Tensor::zeros(&[0]); steps];
        let mut h = self.bwd.zero_state(n);
        for t in (0..steps).rev() {
            let next = self.bwd.step_projected(&h, &bp.narrow(0, t * n, n)?)?;
            h = if all_real(t) {
                next
            } else {
                Tensor::select_rows(&masks[t], &next, &h)?
            };
            bwd[t] = h.clone();
        }
        Ok(BiGruStates { fwd, bwd })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharEncoderKind {
    Cnn,
    Bigru,
}

/// Character features of a token: a width-3 convolution with max pooling,
/// or the final states of a character BiGRU.
pub enum CharEncoder<F: Float> {
    Cnn {
        table: Tensor<F>,
        /// `[3·char_dim × features]`, rows ordered (left, centre, right).
        w: Tensor<F>,
        b: Tensor<F>,
    },
    Bigru {
        table: Tensor<F>,
        rnn: BiGru<F>,
    },
}

impl<F: Float> CharEncoder<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        kind: CharEncoderKind,
        num_chars: usize,
        char_dim: usize,
        features: usize,
    ) -> Result<Self> {
        let table = store.uniform("char.embed", &[num_chars, char_dim], 0.25);
        Ok(match kind {
            CharEncoderKind::Cnn => CharEncoder::Cnn {
                table,
                w: store.fan_in("char.conv.w", &[3 * char_dim, features], 3 * char_dim),
                b: store.zeros("char.conv.b", &[features]),
            },
            CharEncoderKind::Bigru => {
                if features % 2 != 0 {
                    return Err(Error::Config(format!(
                        "character BiGRU needs an even feature size, got {features}"
                    )));
                }
                CharEncoder::Bigru {
                    table,
                    rnn: BiGru::new(store, "char.rnn", char_dim, features / 2),
                }
            }
        })
    }

    /// One feature row per token; tokens without characters get zeros.
    pub fn encode(&self, tokens: &[&[usize]], features: usize) -> Result<Tensor<F>> {
        match self {
            CharEncoder::Cnn { table, w, b } => {
                let mut left = Vec::new();
                let mut centre = Vec::new();
                let mut right = Vec::new();
                let mut segments = Vec::with_capacity(tokens.len());
                for chars in tokens {
                    segments.push((centre.len(), chars.len()));
                    for j in 0..chars.len() {
                        left.push(j.checked_sub(1).map(|p| chars[p]));
                        centre.push(Some(chars[j]));
                        right.push(chars.get(j + 1).copied());
                    }
                }
                if centre.is_empty() {
                    return Ok(Tensor::zeros(&[tokens.len(), features]));
                }
                let windows = Tensor::concat(
                    &[
                        table.gather_rows(&left)?,
                        table.gather_rows(&centre)?,
                        table.gather_rows(&right)?,
                    ],
                    1,
                )?;
                Ok(linear(&windows, w, b)?.segment_max(&segments)?)
            }
            CharEncoder::Bigru { table, rnn } => {
                let real: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].is_empty()).collect();
                if real.is_empty() {
                    return Ok(Tensor::zeros(&[tokens.len(), features]));
                }
                let steps = real.iter().map(|&i| tokens[i].len()).max().unwrap_or(0);
                let mut idx = Vec::with_capacity(steps * real.len());
                for t in 0..steps {
                    idx.extend(real.iter().map(|&i| tokens[i].get(t).copied()));
                }
                let lengths: Vec<usize> = real.iter().map(|&i| tokens[i].len()).collect();
                let states = rnn.run(&table.gather_rows(&idx)?, &lengths)?;
                let finals = Tensor::concat(
                    &[
                        states.last_fwd().expect("at least one step").clone(),
                        states.first_bwd().expect("at least one step").clone(),
                    ],
                    1,
                )?;
                let mut slot = vec![None; tokens.len()];
                for (k, &i) in real.iter().enumerate() {
                    slot[i] = Some(k);
                }
                Ok(finals.gather_rows(&slot)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab: usize,
    pub word_dim: usize,
    pub chars: usize,
    pub char_dim: usize,
    pub char_features: usize,
    pub char_kind: CharEncoderKind,
    pub hidden: usize,
}

/// Dropout settings for one forward pass; `rng: None` disables dropout.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub embeddings: bool,
    pub encoder: bool,
    pub tagger: bool,
}

impl DropoutCtx<'_> {
    pub fn eval() -> Self {
        DropoutCtx {
            rate: 0.0,
            rng: None,
            embeddings: false,
            encoder: false,
            tagger: false,
        }
    }

    pub(crate) fn apply<F: Float>(&mut self, x: &Tensor<F>, site: bool) -> Result<Tensor<F>> {
        if !site {
            return Ok(x.clone());
        }
        dropout(x, self.rate, self.rng.as_deref_mut())
    }
}

pub struct SharedUtteranceEncoder<F: Float> {
    pub words: Tensor<F>,
    pub chars: CharEncoder<F>,
    pub rnn: BiGru<F>,
    pub dims: EncoderDims,
}

/// Encoder output for a batch of utterances.
pub struct EncodedBatch<F: Float> {
    /// `[(max_len·n) × 2d_h]`, time-major: token `t` of utterance `u` is row
    /// `t·n + u`. Rows at PAD positions hold no meaningful state.
    pub states: Tensor<F>,
    pub lengths: Vec<usize>,
}

impl<F: Float> EncodedBatch<F> {
    pub fn num_utterances(&self) -> usize {
        self.lengths.len()
    }

    /// Row indices of the real tokens of utterance `u`.
    pub fn rows(&self, u: usize) -> Vec<Option<usize>> {
        let n = self.lengths.len();
        (0..self.lengths[u]).map(|t| Some(t * n + u)).collect()
    }

    /// `[len_u × 2d_h]` hidden states of utterance `u`.
    pub fn utterance(&self, u: usize) -> Result<Tensor<F>> {
        Ok(self.states.gather_rows(&self.rows(u))?)
    }
}

impl<F: Float> SharedUtteranceEncoder<F> {
    /// `words` supplies the initial word table (random or pretrained).
    pub fn new(store: &mut ParamStore<F>, dims: EncoderDims, words: &Tensor<F>) -> Result<Self> {
        if words.shape() != [dims.vocab, dims.word_dim] {
            return Err(Error::Argument(format!(
                "word table shape {:?} does not match [{}, {}]",
                words.shape(),
                dims.vocab,
                dims.word_dim
            )));
        }
        let words = store.adopt("word.embed", words);
        let chars = CharEncoder::new(store, dims.char_kind, dims.chars, dims.char_dim, dims.char_features)?;
        let rnn = BiGru::new(store, "encoder", dims.word_dim + dims.char_features, dims.hidden);
        Ok(SharedUtteranceEncoder {
            words,
            chars,
            rnn,
            dims,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.dims.word_dim + self.dims.char_features
    }

    pub fn output_dim(&self) -> usize {
        2 * self.dims.hidden
    }

    fn check_ids(&self, word: usize, chars: &[usize]) -> Result<()> {
        if word >= self.dims.vocab {
            return Err(Error::Argument(format!(
                "word id {word} outside a vocabulary of {}",
                self.dims.vocab
            )));
        }
        if let Some(&c) = chars.iter().find(|&&c| c >= self.dims.chars) {
            return Err(Error::Argument(format!(
                "char id {c} outside a table of {}",
                self.dims.chars
            )));
        }
        Ok(())
    }

    /// Embeddings of tokens given as `(word id, char ids)`; PAD word ids give
    /// a zero word row.
    pub fn embed_tokens(&self, tokens: &[(usize, &[usize])]) -> Result<Tensor<F>> {
        for &(w, cs) in tokens {
            self.check_ids(w, cs)?;
        }
        let ids: Vec<Option<usize>> = tokens
            .iter()
            .map(|&(w, _)| (w != PAD).then_some(w))
            .collect();
        let chars: Vec<&[usize]> = tokens.iter().map(|&(_, c)| c).collect();
        Ok(Tensor::concat(
            &[
                self.words.gather_rows(&ids)?,
                self.chars.encode(&chars, self.dims.char_features)?,
            ],
            1,
        )?)
    }

    /// `[word_dim + char_features]` embedding of a single token.
    pub fn embed_token(&self, word: usize, chars: &[usize]) -> Result<Tensor<F>> {
        let e = self.embed_tokens(&[(word, chars)])?;
        Ok(e.reshape(&[self.token_dim()])?)
    }

    pub fn encode(&self, batch: &Batch, drop: &mut DropoutCtx<'_>) -> Result<EncodedBatch<F>> {
        let n = batch.num_utterances();
        if let Some(u) = batch.lengths.iter().position(|&l| l == 0) {
            return Err(Error::Data(format!("utterance row {u} has no tokens")));
        }
        let steps = batch.max_len;
        let mut tokens = Vec::with_capacity(steps * n);
        for t in 0..steps {
            for u in 0..n {
                let real = t < batch.lengths[u];
                let chars: &[usize] = if real {
                    &batch.char_ids[u][t][..batch.char_lengths[u][t]]
                } else {
                    &[]
                };
                tokens.push((if real { batch.word_ids[u][t] } else { PAD }, chars));
            }
        }
        let emb = self.embed_tokens(&tokens)?;
        let emb = drop.apply(&emb, drop.embeddings)?;
        let states = self.rnn.run(&emb, &batch.lengths)?.time_major()?;
        let states = drop.apply(&states, drop.encoder)?;
        Ok(EncodedBatch {
            states,
            lengths: batch.lengths.clone(),
        })
    }

    /// Hidden states `[K × 2d_h]` of one utterance given as `(word, chars)`.
    pub fn encode_utterance(&self, tokens: &[(usize, Vec<usize>)]) -> Result<Tensor<F>> {
        if tokens.is_empty() || tokens.iter().all(|(w, _)| *w == PAD) {
            return Err(Error::Data("cannot encode an utterance without real tokens".into()));
        }
        let batch = Batch::from_token_rows(&[tokens.to_vec()]);
        self.encode(&batch, &mut DropoutCtx::eval())?.utterance(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(d_in: usize, d_h: usize) -> GruCell<f64> {
        GruCell::new(&mut ParamStore::new(1), "g", d_in, d_h)
    }

    fn zero_params(c: &GruCell<f64>) {
        for t in [&c.w, &c.b, &c.u_zr, &c.u_h] {
            t.data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let c = cell(2, 3);
        zero_params(&c);
        let h = Tensor::new(vec![0.4, -0.2, 0.8], &[1, 3]).unwrap();
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let out = c.step(&h, &x).unwrap().to_vec();
        assert_eq!(out, vec![0.2, -0.1, 0.4]);
        let out = c.step(&c.zero_state(1), &x).unwrap().to_vec();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let c = cell(2, 3);
        let h = Tensor::zeros(&[1, 2]);
        let x = Tensor::zeros(&[1, 2]);
        assert!(c.step(&h, &x).is_err());
    }

    #[test]
    fn states_stay_in_unit_interval() {
        let c = cell(4, 5);
        let mut h = c.zero_state(1);
        for i in 0..20 {
            let x = Tensor::new(vec![3.0 * (i as f64).sin(), 5.0, -7.0, 2.0], &[1, 4]).unwrap();
            h = c.step(&h, &x).unwrap();
            assert!(h.to_vec().iter().all(|v| v.abs() < 1.0));
        }
    }

    fn encoder(kind: CharEncoderKind) -> SharedUtteranceEncoder<f64> {
        let dims = EncoderDims {
            vocab: 8,
            word_dim: 4,
            chars: 6,
            char_dim: 3,
            char_features: 4,
            char_kind: kind,
            hidden: 3,
        };
        let mut store = ParamStore::new(5);
        let words = crate::corpus::random_embeddings(8, 4, 2);
        SharedUtteranceEncoder::new(&mut store, dims, &words).unwrap()
    }

    #[test]
    fn pad_token_embeds_to_zero() {
        for kind in [CharEncoderKind::Cnn, CharEncoderKind::Bigru] {
            let enc = encoder(kind);
            let e = enc.embed_token(PAD, &[]).unwrap();
            assert_eq!(e.shape(), &[8]);
            assert!(e.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identical_characters_give_identical_char_features() {
        let enc = encoder(CharEncoderKind::Cnn);
        let a = enc.embed_token(2, &[2, 3, 4]).unwrap().to_vec();
        let b = enc.embed_token(5, &[2, 3, 4]).unwrap().to_vec();
        assert_eq!(a[4..], b[4..]);
        assert_ne!(a[..4], b[..4]);
    }

    #[test]
    fn out_of_range_ids_are_errors() {
        let enc = encoder(CharEncoderKind::Cnn);
        assert!(enc.embed_token(99, &[]).is_err());
        assert!(enc.embed_token(2, &[17]).is_err());
    }

    #[test]
    fn batched_encoding_matches_single_utterances() {
        for kind in [CharEncoderKind::Cnn, CharEncoderKind::Bigru] {
            let enc = encoder(kind);
            let rows = vec![
                vec![(2, vec![2, 3]), (3, vec![4]), (4, vec![2, 5, 5])],
                vec![(5, vec![3])],
                vec![(6, vec![2, 2]), (1, vec![1, 4])],
            ];
            let batch = Batch::from_token_rows(&rows);
            let out = enc.encode(&batch, &mut DropoutCtx::eval()).unwrap();
            for (u, row) in rows.iter().enumerate() {
                let single = enc.encode_utterance(row).unwrap().to_vec();
                let batched = out.utterance(u).unwrap().to_vec();
                assert_eq!(single.len(), row.len() * 6);
                let diff = single
                    .iter()
                    .zip(&batched)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-12, "{kind:?} row {u}: {diff}");
            }
        }
    }

    #[test]
    fn rejects_all_pad_utterance() {
        let enc = encoder(CharEncoderKind::Cnn);
        assert!(enc.encode_utterance(&[(PAD, vec![])]).is_err());
    }
}
