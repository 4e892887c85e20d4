use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of one collapsed Gibbs run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
}

impl LdaParams {
    /// Symmetric priors α = 50/K, β = 0.01 and 1000 sweeps.
    pub fn new(k: usize, seed: u64) -> Self {
        LdaParams {
            k,
            alpha: 50.0 / k as f64,
            beta: 0.01,
            iters: 1000,
            seed,
        }
    }
}

/// Probability vector over topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDistribution(pub Vec<f64>);

impl TopicDistribution {
    pub fn uniform(k: usize) -> Self {
        TopicDistribution(vec![1.0 / k as f64; k])
    }

    /// Most probable topic; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Count state of a collapsed Gibbs LDA sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub vocab_size: usize,
    /// `[V×K]` word-topic counts.
    pub word_topic: Vec<u32>,
    /// `[D×K]` document-topic counts.
    pub doc_topic: Vec<u32>,
    pub topic_totals: Vec<u64>,
    pub doc_lengths: Vec<u32>,
    /// Documents that had no tokens and were left out of sampling.
    pub skipped_docs: Vec<usize>,
    /// Topic of every token, per document.
    #[serde(skip)]
    pub assignments: Vec<Vec<u32>>,
}

impl TopicModel {
    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn nwk(&self, w: usize, k: usize) -> u32 {
        self.word_topic[w * self.k + k]
    }

    pub fn ndk(&self, d: usize, k: usize) -> u32 {
        self.doc_topic[d * self.k + k]
    }

    /// Checks Σ_w N_wk = N_k for every topic and Σ_k N_dk = |d| for every
    /// document.
    pub fn counts_consistent(&self) -> bool {
        let k = self.k;
        let mut col = vec![0u64; k];
        for row in self.word_topic.chunks(k) {
            for (c, &n) in col.iter_mut().zip(row) {
                *c += n as u64;
            }
        }
        if col != self.topic_totals {
            return false;
        }
        self.doc_topic
            .chunks(k)
            .zip(&self.doc_lengths)
            .all(|(row, &len)| row.iter().map(|&n| n as u64).sum::<u64>() == len as u64)
    }

    /// θ_d = (N_dk + α) / (N_d + Kα).
    pub fn doc_topic_proportions(&self, doc: usize) -> Result<TopicDistribution> {
        if doc >= self.num_docs() {
            return Err(Error::Argument(format!(
                "document {doc} out of range for {} documents",
                self.num_docs()
            )));
        }
        let k = self.k;
        let denom = self.doc_lengths[doc] as f64 + k as f64 * self.alpha;
        Ok(TopicDistribution(
            self.doc_topic[doc * k..(doc + 1) * k]
                .iter()
                .map(|&n| (n as f64 + self.alpha) / denom)
                .collect(),
        ))
    }

    /// φ_k over the vocabulary for a fixed topic.
    pub fn topic_word(&self, topic: usize) -> Vec<f64> {
        let denom = self.topic_totals[topic] as f64 + self.vocab_size as f64 * self.beta;
        (0..self.vocab_size)
            .map(|w| (self.nwk(w, topic) as f64 + self.beta) / denom)
            .collect()
    }

    /// The `n` highest-count words of `topic`; ties go to the lower word id.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.vocab_size).collect();
        ids.sort_by(|&a, &b| self.nwk(b, topic).cmp(&self.nwk(a, topic)).then(a.cmp(&b)));
        ids.truncate(n);
        ids
    }

    /// Fold-in inference for an unseen document of in-vocabulary word ids,
    /// with the trained counts frozen. θ is averaged over the final quarter
    /// of the sweeps (at least one).
    pub fn infer_topics(&self, doc: &[usize], iters: usize, seed: u64) -> Result<Inference> {
        if let Some(&w) = doc.iter().find(|&&w| w >= self.vocab_size) {
            return Err(Error::Argument(format!(
                "word id {w} outside a vocabulary of {}",
                self.vocab_size
            )));
        }
        let k = self.k;
        if doc.is_empty() {
            return Ok(Inference {
                theta: TopicDistribution::uniform(k),
                no_known_tokens: true,
            });
        }
        let iters = iters.max(1);
        let vbeta = self.vocab_size as f64 * self.beta;
        let phi = |w: usize, t: usize| {
            (self.nwk(w, t) as f64 + self.beta) / (self.topic_totals[t] as f64 + vbeta)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
        let mut ndk = vec![0u32; k];
        for &t in &z {
            ndk[t] += 1;
        }
        let averaged = (iters / 4).max(1);
        let mut acc = vec![0.0; k];
        let mut p = vec![0.0; k];
        let denom = doc.len() as f64 + k as f64 * self.alpha;
        for sweep in 0..iters {
            for (i, &w) in doc.iter().enumerate() {
                ndk[z[i]] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (ndk[t] as f64 + self.alpha) * phi(w, t);
                    p[t] = total;
                }
                z[i] = sample_cumulative(&p, total, &mut rng);
                ndk[z[i]] += 1;
            }
            if sweep >= iters - averaged {
                for t in 0..k {
                    acc[t] += (ndk[t] as f64 + self.alpha) / denom;
                }
            }
        }
        Ok(Inference {
            theta: TopicDistribution(acc.into_iter().map(|a| a / averaged as f64).collect()),
            no_known_tokens: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub theta: TopicDistribution,
    /// The document had no in-vocabulary tokens; θ is uniform.
    pub no_known_tokens: bool,
}

fn sample_cumulative(cumulative: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>() * total;
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// A running sampler; [`fit_lda`] drives it for the configured sweeps.
pub struct GibbsSampler<'a> {
    model: TopicModel,
    docs: &'a [Vec<usize>],
    rng: ChaCha8Rng,
    cumulative: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    /// Randomly initialises assignments. Empty documents are skipped with a
    /// warning. Unlike `fit_lda`, more topics than tokens is allowed here.
    pub fn new(docs: &'a [Vec<usize>], vocab_size: usize, params: &LdaParams) -> Result<Self> {
        let k = params.k;
        if k < 2 {
            return Err(Error::Argument(format!("LDA needs at least 2 topics, got {k}")));
        }
        if docs.is_empty() {
            return Err(Error::Data("LDA needs at least one document".into()));
        }
        if !(params.alpha > 0.0 && params.beta > 0.0) {
            return Err(Error::Argument("LDA priors must be positive".into()));
        }
        if let Some(&w) = docs.iter().flatten().find(|&&w| w >= vocab_size) {
            return Err(Error::Argument(format!(
                "word id {w} outside a vocabulary of {vocab_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut model = TopicModel {
            k,
            alpha: params.alpha,
            beta: params.beta,
            vocab_size,
            word_topic: vec![0; vocab_size * k],
            doc_topic: vec![0; docs.len() * k],
            topic_totals: vec![0; k],
            doc_lengths: docs.iter().map(|d| d.len() as u32).collect(),
            skipped_docs: Vec::new(),
            assignments: Vec::with_capacity(docs.len()),
        };
        for (d, doc) in docs.iter().enumerate() {
            if doc.is_empty() {
                log::warn!("LDA: document {d} is empty and was skipped");
                model.skipped_docs.push(d);
            }
            let z: Vec<u32> = doc
                .iter()
                .map(|&w| {
                    let t = rng.random_range(0..k);
                    model.word_topic[w * k + t] += 1;
                    model.doc_topic[d * k + t] += 1;
                    model.topic_totals[t] += 1;
                    t as u32
                })
                .collect();
            model.assignments.push(z);
        }
        Ok(GibbsSampler {
            model,
            docs,
            rng,
            cumulative: vec![0.0; k],
        })
    }

    /// One pass resampling every token from
    /// p(z = k) ∝ (N_dk + α)(N_wk + β) / (N_k + Vβ), own count removed.
    pub fn sweep(&mut self) {
        let m = &mut self.model;
        let k = m.k;
        let vbeta = m.vocab_size as f64 * m.beta;
        for (d, doc) in self.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = m.assignments[d][i] as usize;
                m.word_topic[w * k + old] -= 1;
                m.doc_topic[d * k + old] -= 1;
                m.topic_totals[old] -= 1;

                let wrow = &m.word_topic[w * k..(w + 1) * k];
                let drow = &m.doc_topic[d * k..(d + 1) * k];
                let mut total = 0.0;
                for t in 0..k {
                    total += (drow[t] as f64 + m.alpha) * (wrow[t] as f64 + m.beta)
                        / (m.topic_totals[t] as f64 + vbeta);
                    self.cumulative[t] = total;
                }
                let new = sample_cumulative(&self.cumulative, total, &mut self.rng);

                m.word_topic[w * k + new] += 1;
                m.doc_topic[d * k + new] += 1;
                m.topic_totals[new] += 1;
                m.assignments[d][i] = new as u32;
            }
        }
    }

    pub fn model(&self) -> &TopicModel {
        &self.model
    }

    pub fn into_model(self) -> TopicModel {
        self.model
    }
}

/// Trains LDA with collapsed Gibbs sampling over documents of word ids.
pub fn fit_lda(docs: &[Vec<usize>], vocab_size: usize, params: &LdaParams) -> Result<TopicModel> {
    if params.iters == 0 {
        return Err(Error::Argument("LDA needs at least one iteration".into()));
    }
    let total: usize = docs.iter().map(Vec::len).sum();
    if params.k > total {
        return Err(Error::Data(format!(
            "{} topics exceed the {total} tokens of the corpus",
            params.k
        )));
    }
    let mut sampler = GibbsSampler::new(docs, vocab_size, params)?;
    for _ in 0..params.iters {
        sampler.sweep();
    }
    Ok(sampler.into_model())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_corpus_conserves_counts() {
        let docs = vec![vec![0]];
        let p = LdaParams {
            iters: 1,
            ..LdaParams::new(2, 3)
        };
        let mut s = GibbsSampler::new(&docs, 1, &p).unwrap();
        for _ in 0..50 {
            s.sweep();
            assert_eq!(s.model().topic_totals.iter().sum::<u64>(), 1);
            assert!(s.model().counts_consistent());
        }
    }

    #[test]
    fn argument_errors() {
        let docs = vec![vec![0, 1]];
        assert!(fit_lda(&docs, 2, &LdaParams::new(1, 0)).is_err());
        assert!(fit_lda(&docs, 2, &LdaParams::new(3, 0)).is_err());
        assert!(fit_lda(&docs, 1, &LdaParams::new(2, 0)).is_err());
        let p = LdaParams {
            iters: 0,
            ..LdaParams::new(2, 0)
        };
        assert!(fit_lda(&docs, 2, &p).is_err());
    }

    #[test]
    fn empty_documents_are_skipped_but_keep_their_index() {
        let docs = vec![vec![0, 1, 1], vec![], vec![1, 0]];
        let p = LdaParams {
            iters: 5,
            ..LdaParams::new(2, 1)
        };
        let m = fit_lda(&docs, 2, &p).unwrap();
        assert_eq!(m.skipped_docs, vec![1]);
        let theta = m.doc_topic_proportions(1).unwrap();
        assert_eq!(theta, TopicDistribution::uniform(2));
        assert!(m.doc_topic_proportions(3).is_err());
    }

    #[test]
    fn theta_formula() {
        let m = TopicModel {
            k: 2,
            alpha: 0.5,
            beta: 0.01,
            vocab_size: 1,
            word_topic: vec![3, 1],
            doc_topic: vec![3, 1],
            topic_totals: vec![3, 1],
            doc_lengths: vec![4],
            skipped_docs: vec![],
            assignments: vec![],
        };
        let theta = m.doc_topic_proportions(0).unwrap();
        assert!((theta.0[0] - 0.7).abs() < 1e-12);
        assert!((theta.0[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn theta_concentrates_as_alpha_vanishes() {
        let m = TopicModel {
            k: 2,
            alpha: 1e-9,
            beta: 0.01,
            vocab_size: 1,
            word_topic: vec![5, 0],
            doc_topic: vec![5, 0],
            topic_totals: vec![5, 0],
            doc_lengths: vec![5],
            skipped_docs: vec![],
            assignments: vec![],
        };
        let theta = m.doc_topic_proportions(0).unwrap();
        assert!(theta.0[0] > 1.0 - 1e-6 && theta.0[1] < 1e-6);
    }

    #[test]
    fn inference_of_empty_document_is_uniform() {
        let docs = vec![vec![0, 1]];
        let m = fit_lda(&docs, 2, &LdaParams { iters: 2, ..LdaParams::new(2, 1) }).unwrap();
        let inf = m.infer_topics(&[], 20, 0).unwrap();
        assert!(inf.no_known_tokens);
        assert_eq!(inf.theta, TopicDistribution::uniform(2));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(TopicDistribution(vec![0.4, 0.4, 0.2]).argmax(), 0);
        assert_eq!(TopicDistribution(vec![0.1, 0.5, 0.4]).argmax(), 1);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let docs: Vec<Vec<usize>> = (0..20).map(|d| (0..15).map(|i| (d * 7 + i * 3) % 11).collect()).collect();
        let p = LdaParams { iters: 10, ..LdaParams::new(3, 42) };
        let a = fit_lda(&docs, 11, &p).unwrap();
        let b = fit_lda(&docs, 11, &p).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a, b);
    }
}
