use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{coherence, fit_lda, LdaParams, DEFAULT_TOP_N, DEFAULT_WINDOW};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub candidates: Vec<usize>,
    pub iters: usize,
    /// Symmetric document prior; `None` uses 50/K per candidate.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub top_n: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            candidates: (1..=10).map(|i| i * 10).collect(),
            iters: 1000,
            alpha: None,
            beta: 0.01,
            top_n: DEFAULT_TOP_N,
            window: DEFAULT_WINDOW,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub k: usize,
    pub score: Option<f64>,
    pub per_topic: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_k: usize,
    pub best_score: f64,
    pub rows: Vec<SelectionRow>,
}

/// Fits one model per candidate topic count (in parallel) and picks the
/// count with the highest mean coherence on `reference`. Candidates whose
/// fit fails are reported in the table and left out of the choice; ties go
/// to the earlier candidate.
pub fn select_topic_count(
    docs: &[Vec<usize>],
    vocab_size: usize,
    reference: &[Vec<usize>],
    settings: &SweepSettings,
) -> Result<Selection> {
    if settings.candidates.is_empty() {
        return Err(Error::Argument("no candidate topic counts".into()));
    }
    let rows: Vec<SelectionRow> = settings
        .candidates
        .par_iter()
        .map(|&k| {
            let params = LdaParams {
                k,
                alpha: settings.alpha.unwrap_or(50.0 / k as f64),
                beta: settings.beta,
                iters: settings.iters,
                seed: settings.seed,
            };
            let scored = fit_lda(docs, vocab_size, &params)
                .and_then(|m| coherence(&m, reference, settings.top_n, settings.window));
            match scored {
                Ok(s) => SelectionRow {
                    k,
                    score: Some(s.mean),
                    per_topic: s.per_topic,
                    error: None,
                },
                Err(e) => {
                    log::warn!("topic count {k} failed: {e}");
                    SelectionRow {
                        k,
                        score: None,
                        per_topic: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for row in &rows {
        if let Some(s) = row.score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((row.k, s));
            }
        }
    }
    let (best_k, best_score) = best.ok_or_else(|| {
        Error::Data(format!(
            "every candidate topic count failed: {}",
            rows.iter()
                .filter_map(|r| r.error.as_deref())
                .collect::<Vec<_>>()
                .join("; ")
        ))
    })?;
    Ok(Selection {
        best_k,
        best_score,
        rows,
    })
}

/// `k,coherence` rows; failed candidates have an empty score.
pub fn write_coherence_csv(mut w: impl Write, selection: &Selection) -> std::io::Result<()> {
    writeln!(w, "k,coherence")?;
    for row in &selection.rows {
        match row.score {
            Some(s) => writeln!(w, "{},{s}", row.k)?,
            None => writeln!(w, "{},", row.k)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Vec<Vec<usize>> {
        (0..30)
            .map(|d| {
                let base = (d % 2) * 5;
                (0..20).map(|i| base + (i * 3 + d) % 5).collect()
            })
            .collect()
    }

    #[test]
    fn single_candidate_is_returned() {
        let docs = tiny_corpus();
        let s = SweepSettings {
            candidates: vec![3],
            iters: 20,
            top_n: 4,
            ..Default::default()
        };
        let sel = select_topic_count(&docs, 10, &docs, &s).unwrap();
        assert_eq!(sel.best_k, 3);
        assert_eq!(sel.rows.len(), 1);
    }

    #[test]
    fn failed_candidates_are_excluded() {
        let docs = tiny_corpus();
        let s = SweepSettings {
            candidates: vec![1, 2],
            iters: 20,
            top_n: 4,
            ..Default::default()
        };
        let sel = select_topic_count(&docs, 10, &docs, &s).unwrap();
        assert_eq!(sel.best_k, 2);
        assert!(sel.rows[0].error.is_some());
        let mut csv = Vec::new();
        write_coherence_csv(&mut csv, &sel).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("k,coherence\n1,\n2,"));
    }

    #[test]
    fn all_failures_are_an_error() {
        let docs = tiny_corpus();
        let s = SweepSettings {
            candidates: vec![1],
            iters: 5,
            ..Default::default()
        };
        assert!(select_topic_count(&docs, 10, &docs, &s).is_err());
    }
}
