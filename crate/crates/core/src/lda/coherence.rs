//! C_V topic coherence: boolean sliding-window probabilities, NPMI context
//! vectors and indirect cosine similarity under one-set segmentation.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::TopicModel;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 110;
pub const DEFAULT_TOP_N: usize = 10;
pub const NPMI_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScores {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

/// Normalised PMI from window probabilities.
///
/// Pairs that never share a window score -1 and pairs present in every
/// window score 1; otherwise
/// `ln((p_ab + ε) / (p_a p_b)) / -ln(p_ab + ε)`, clamped to [-1, 1].
pub fn npmi(p_ab: f64, p_a: f64, p_b: f64) -> f64 {
    if p_ab <= 0.0 {
        return -1.0;
    }
    if p_ab >= 1.0 {
        return 1.0;
    }
    let joint = p_ab + NPMI_EPSILON;
    ((joint / (p_a * p_b)).ln() / -joint.ln()).clamp(-1.0, 1.0)
}

/// Number of window starts whose window contains none of `positions`
/// (sorted ascending) in a document of `len` tokens. A document no longer
/// than the window is a single window.
fn windows_without(positions: &[usize], len: usize, window: usize) -> usize {
    if len <= window {
        return usize::from(positions.is_empty());
    }
    let starts = len - window + 1;
    let mut covered = 0;
    let mut reach = 0;
    for &p in positions {
        let lo = (p + 1).saturating_sub(window).max(reach);
        let hi = p.min(starts - 1) + 1;
        if hi > lo {
            covered += hi - lo;
            reach = hi;
        }
    }
    starts - covered
}

/// Window-level occurrence statistics for a fixed set of words.
struct WindowCounts {
    windows: usize,
    single: HashMap<usize, usize>,
    pair: HashMap<(usize, usize), usize>,
}

impl WindowCounts {
    /// Documents containing none of the relevant words contribute no
    /// windows, matching the reference C_V tooling.
    fn collect(
        reference: &[Vec<usize>],
        relevant: &BTreeSet<usize>,
        pairs: &BTreeSet<(usize, usize)>,
        window: usize,
    ) -> Self {
        let mut counts = WindowCounts {
            windows: 0,
            single: HashMap::new(),
            pair: HashMap::new(),
        };
        for doc in reference {
            let mut positions: HashMap<usize, Vec<usize>> = HashMap::new();
            for (i, &w) in doc.iter().enumerate() {
                if relevant.contains(&w) {
                    positions.entry(w).or_default().push(i);
                }
            }
            if positions.is_empty() {
                continue;
            }
            let len = doc.len();
            let n = if len <= window { 1 } else { len - window + 1 };
            counts.windows += n;
            let mut lacking = HashMap::new();
            for (&w, pos) in &positions {
                let l = windows_without(pos, len, window);
                lacking.insert(w, l);
                *counts.single.entry(w).or_default() += n - l;
            }
            for &(a, b) in pairs {
                let (Some(pa), Some(pb)) = (positions.get(&a), positions.get(&b)) else {
                    continue;
                };
                let mut merged: Vec<usize> = pa.iter().chain(pb).copied().collect();
                merged.sort_unstable();
                let both = n + windows_without(&merged, len, window) - lacking[&a] - lacking[&b];
                *counts.pair.entry((a, b)).or_default() += both;
            }
        }
        counts
    }

    fn prob(&self, w: usize) -> f64 {
        self.single.get(&w).copied().unwrap_or(0) as f64 / self.windows as f64
    }

    fn joint(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return self.prob(a);
        }
        let key = (a.min(b), a.max(b));
        self.pair.get(&key).copied().unwrap_or(0) as f64 / self.windows as f64
    }

    fn npmi(&self, a: usize, b: usize) -> f64 {
        npmi(self.joint(a, b), self.prob(a), self.prob(b))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// C_V coherence of explicit top-word lists against reference documents.
///
/// For each topic with top words W, every w' in W gets the context vector
/// `[NPMI(w', w_j)]_j`; the segment score is the cosine between that vector
/// and the sum of all context vectors of W. Topic scores are the mean over
/// segments and the model score is the mean over topics.
pub fn topic_coherence(
    topics: &[Vec<usize>],
    reference: &[Vec<usize>],
    window: usize,
) -> Result<CoherenceScores> {
    if topics.is_empty() {
        return Err(Error::Argument("no topics to score".into()));
    }
    if window == 0 {
        return Err(Error::Argument("coherence window must be positive".into()));
    }
    if let Some(t) = topics.iter().find(|t| t.len() < 2) {
        return Err(Error::Argument(format!(
            "coherence needs at least 2 top words per topic, got {}",
            t.len()
        )));
    }
    let relevant: BTreeSet<usize> = topics.iter().flatten().copied().collect();
    let mut pairs = BTreeSet::new();
    for t in topics {
        for (i, &a) in t.iter().enumerate() {
            for &b in &t[i + 1..] {
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    let counts = WindowCounts::collect(reference, &relevant, &pairs, window);
    if counts.windows == 0 {
        return Err(Error::Data(
            "no reference document contains any top word".into(),
        ));
    }
    let per_topic: Vec<f64> = topics
        .iter()
        .map(|words| {
            let vectors: Vec<Vec<f64>> = words
                .iter()
                .map(|&a| words.iter().map(|&b| counts.npmi(a, b)).collect())
                .collect();
            let total: Vec<f64> = (0..words.len())
                .map(|j| vectors.iter().map(|v| v[j]).sum())
                .collect();
            vectors.iter().map(|v| cosine(v, &total)).sum::<f64>() / words.len() as f64
        })
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(CoherenceScores { per_topic, mean })
}

/// Coherence of a trained model's `top_n` words per topic.
pub fn coherence(
    model: &TopicModel,
    reference: &[Vec<usize>],
    top_n: usize,
    window: usize,
) -> Result<CoherenceScores> {
    if top_n < 2 {
        return Err(Error::Argument(format!("top_n must be at least 2, got {top_n}")));
    }
    let topics: Vec<Vec<usize>> = (0..model.k).map(|k| model.top_words(k, top_n)).collect();
    topic_coherence(&topics, reference, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Materialises every window and counts directly.
    fn naive_windows_without(positions: &[usize], len: usize, window: usize) -> usize {
        if len <= window {
            return usize::from(positions.is_empty());
        }
        (0..=len - window)
            .filter(|&s| !positions.iter().any(|&p| p >= s && p < s + window))
            .count()
    }

    #[test]
    fn gap_counting_matches_enumeration() {
        let cases: &[(&[usize], usize, usize)] = &[
            (&[], 10, 3),
            (&[0], 10, 3),
            (&[9], 10, 3),
            (&[2, 3, 8], 10, 3),
            (&[0, 5], 10, 1),
            (&[4], 5, 5),
            (&[1, 2], 4, 7),
            (&[0, 4, 9, 10, 11, 30], 40, 6),
        ];
        for &(pos, len, w) in cases {
            assert_eq!(
                windows_without(pos, len, w),
                naive_windows_without(pos, len, w),
                "{pos:?} {len} {w}"
            );
        }
    }

    #[test]
    fn npmi_extremes() {
        assert_eq!(npmi(0.0, 0.3, 0.4), -1.0);
        assert_eq!(npmi(1.0, 1.0, 1.0), 1.0);
        assert!((npmi(0.25, 0.25, 0.25) - 1.0).abs() < 1e-9);
        assert!(npmi(0.1, 0.5, 0.2).abs() < 1e-9);
    }

    #[test]
    fn always_cooccurring_words_have_npmi_one() {
        // 0 and 1 always together, half the documents.
        let reference = vec![vec![0, 1, 5], vec![5, 5], vec![1, 0], vec![6]];
        let relevant = BTreeSet::from([0, 1, 5, 6]);
        let pairs = BTreeSet::from([(0, 1), (0, 6)]);
        let c = WindowCounts::collect(&reference, &relevant, &pairs, 110);
        assert!((c.npmi(0, 1) - 1.0).abs() < 1e-9);
        assert_eq!(c.npmi(0, 6), -1.0);
    }

    #[test]
    fn absent_words_score_minus_one() {
        let reference = vec![vec![0, 1], vec![1, 2]];
        let relevant = BTreeSet::from([0, 1, 2, 9]);
        let c = WindowCounts::collect(&reference, &relevant, &BTreeSet::from([(1, 9)]), 110);
        assert_eq!(c.npmi(1, 9), -1.0);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(topic_coherence(&[vec![0]], &[vec![0]], 110).is_err());
        assert!(topic_coherence(&[vec![0, 1]], &[vec![0]], 0).is_err());
        assert!(topic_coherence(&[vec![0, 1]], &[vec![3]], 110).is_err());
    }
}
