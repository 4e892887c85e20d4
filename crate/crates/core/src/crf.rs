//! Linear-chain CRF over per-utterance emission scores.
//!
//! `score(y) = Σ_t E[t, y_t] + Σ_{t≥2} P[y_t, y_{t-1}]` (plus optional start
//! and stop scores) and `log p(y) = score(y) - log Z`. Without a transition
//! matrix the chain factorises into independent per-utterance softmaxes,
//! which is how the non-CRF variants are expressed.

use dahcrf_tensor::{Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{linear, ParamStore};

pub struct LinearChainCrf<F: Float> {
    /// `[d × L]` emission projection.
    pub w: Tensor<F>,
    pub b: Tensor<F>,
    /// `P[j, i]`: score of label `j` following label `i`.
    pub transitions: Option<Tensor<F>>,
    pub start: Option<Tensor<F>>,
    pub stop: Option<Tensor<F>>,
    labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSequence {
    pub labels: Vec<usize>,
    pub score: f64,
}

impl<F: Float> LinearChainCrf<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        labels: usize,
        transitions: bool,
        start_stop: bool,
    ) -> Self {
        LinearChainCrf {
            w: store.fan_in(&format!("{name}.w"), &[d_in, labels], d_in),
            b: store.zeros(&format!("{name}.b"), &[labels]),
            transitions: transitions.then(|| store.zeros(&format!("{name}.transitions"), &[labels, labels])),
            start: start_stop.then(|| store.zeros(&format!("{name}.start"), &[labels])),
            stop: start_stop.then(|| store.zeros(&format!("{name}.stop"), &[labels])),
            labels,
        }
    }

    /// Assembles a CRF from explicit tensors.
    pub fn from_parts(
        w: Tensor<F>,
        b: Tensor<F>,
        transitions: Option<Tensor<F>>,
        start: Option<Tensor<F>>,
        stop: Option<Tensor<F>>,
    ) -> Result<Self> {
        let labels = b.numel();
        let ok = w.shape().len() == 2
            && w.shape()[1] == labels
            && transitions.as_ref().is_none_or(|p| p.shape() == [labels, labels])
            && start.as_ref().is_none_or(|s| s.shape() == [labels])
            && stop.as_ref().is_none_or(|s| s.shape() == [labels]);
        if !ok || labels == 0 {
            return Err(Error::Argument(format!(
                "inconsistent CRF parts for {labels} labels (projection {:?})",
                w.shape()
            )));
        }
        Ok(LinearChainCrf {
            w,
            b,
            transitions,
            start,
            stop,
            labels,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    /// `[T × L]` emission scores, row `t` = `g_t · w + b`.
    pub fn emissions(&self, g: &Tensor<F>) -> Result<Tensor<F>> {
        if g.shape().len() != 2 || g.shape()[1] != self.w.shape()[0] {
            return Err(Error::Argument(format!(
                "emission input {:?} does not match projection {:?}",
                g.shape(),
                self.w.shape()
            )));
        }
        linear(g, &self.w, &self.b)
    }

    fn check_emissions(&self, em: &Tensor<F>) -> Result<usize> {
        match em.shape() {
            &[t, l] if l == self.labels && t > 0 => Ok(t),
            s => Err(Error::Argument(format!(
                "emissions {s:?} must be [T × {}] with T ≥ 1",
                self.labels
            ))),
        }
    }

    /// `log Z` by the forward algorithm in log space.
    pub fn log_partition(&self, em: &Tensor<F>) -> Result<Tensor<F>> {
        let t_len = self.check_emissions(em)?;
        let Some(p) = &self.transitions else {
            return Ok(em.log_sum_exp_rows()?.sum());
        };
        let mut alpha = em.row(0)?;
        if let Some(s) = &self.start {
            alpha = alpha.add(s)?;
        }
        for t in 1..t_len {
            // M[j, i] = P[j, i] + α[i]; α'[j] = lse_i M[j, i] + E[t, j]
            alpha = p.add_row(&alpha)?.log_sum_exp_rows()?.add(&em.row(t)?)?;
        }
        if let Some(s) = &self.stop {
            alpha = alpha.add(s)?;
        }
        Ok(alpha.log_sum_exp()?)
    }

    fn check_labels(&self, t_len: usize, gold: &[usize]) -> Result<()> {
        if gold.len() != t_len {
            return Err(Error::Argument(format!(
                "{} gold labels for {t_len} emission rows",
                gold.len()
            )));
        }
        if let Some(&y) = gold.iter().find(|&&y| y >= self.labels) {
            return Err(Error::Argument(format!(
                "label {y} out of range for {} labels",
                self.labels
            )));
        }
        Ok(())
    }

    /// Unnormalised score of one label sequence.
    pub fn sequence_score(&self, em: &Tensor<F>, gold: &[usize]) -> Result<Tensor<F>> {
        let t_len = self.check_emissions(em)?;
        self.check_labels(t_len, gold)?;
        let l = self.labels;
        let flat: Vec<usize> = gold.iter().enumerate().map(|(t, &y)| t * l + y).collect();
        let mut score = em.gather(&flat)?.sum();
        if let Some(p) = &self.transitions {
            if t_len > 1 {
                let idx: Vec<usize> = gold.windows(2).map(|w| w[1] * l + w[0]).collect();
                score = score.add(&p.gather(&idx)?.sum())?;
            }
        }
        if let Some(s) = &self.start {
            score = score.add(&s.gather(&[gold[0]])?.sum())?;
        }
        if let Some(s) = &self.stop {
            score = score.add(&s.gather(&[gold[t_len - 1]])?.sum())?;
        }
        Ok(score)
    }

    /// `score(gold) - log Z`, never positive.
    pub fn log_likelihood(&self, em: &Tensor<F>, gold: &[usize]) -> Result<Tensor<F>> {
        Ok(self.sequence_score(em, gold)?.sub(&self.log_partition(em)?)?)
    }

    /// Highest-scoring sequence by max-sum dynamic programming. Ties go to
    /// the lower label index at every step.
    pub fn viterbi(&self, em: &Tensor<F>) -> Result<TagSequence> {
        let t_len = self.check_emissions(em)?;
        let l = self.labels;
        let e: Vec<f64> = em.data().iter().map(|x| x.to_f64_lossy()).collect();
        let vals = |t: &Option<Tensor<F>>| -> Option<Vec<f64>> {
            t.as_ref().map(|x| x.data().iter().map(|v| v.to_f64_lossy()).collect())
        };
        let p = vals(&self.transitions);
        let start = vals(&self.start);
        let stop = vals(&self.stop);

        let mut delta: Vec<f64> = (0..l)
            .map(|j| e[j] + start.as_ref().map_or(0.0, |s| s[j]))
            .collect();
        let mut back = vec![vec![0usize; l]; t_len];
        for t in 1..t_len {
            let mut next = vec![0.0; l];
            for j in 0..l {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, &d) in delta.iter().enumerate() {
                    let v = d + p.as_ref().map_or(0.0, |p| p[j * l + i]);
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                back[t][j] = best;
                next[j] = best_v + e[t * l + j];
            }
            delta = next;
        }
        if let Some(s) = &stop {
            for (d, s) in delta.iter_mut().zip(s) {
                *d += s;
            }
        }
        let mut last = 0;
        for j in 1..l {
            if delta[j] > delta[last] {
                last = j;
            }
        }
        let score = delta[last];
        let mut labels = vec![last; t_len];
        for t in (1..t_len).rev() {
            labels[t - 1] = back[t][labels[t]];
        }
        Ok(TagSequence { labels, score })
    }
}

/// `-(mean_c da_ll_c + α · mean_c topic_ll_c)` over the conversations of a
/// batch.
pub fn joint_loss<F: Float>(da_ll: &[Tensor<F>], topic_ll: Option<&[Tensor<F>]>, alpha: f64) -> Result<Tensor<F>> {
    let mean = |xs: &[Tensor<F>]| -> Result<Tensor<F>> {
        if xs.is_empty() {
            return Err(Error::Argument("no log-likelihoods to average".into()));
        }
        let rows: Vec<Tensor<F>> = xs.iter().map(|x| x.reshape(&[1])).collect::<std::result::Result<_, _>>()?;
        Ok(Tensor::concat(&rows, 0)?.mean()?)
    };
    let mut objective = mean(da_ll)?;
    if let Some(t) = topic_ll {
        if t.len() != da_ll.len() {
            return Err(Error::Argument(format!(
                "{} topic log-likelihoods for {} conversations",
                t.len(),
                da_ll.len()
            )));
        }
        if alpha != 0.0 {
            objective = objective.add(&mean(t)?.scale(F::of(alpha)))?;
        }
    }
    Ok(objective.scale(F::of(-1.0)))
}
