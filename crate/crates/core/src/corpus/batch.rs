use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Conversation, LabelSet, Vocabulary, PAD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Batching {
    /// Maximum number of conversations per batch.
    pub max_batch: usize,
    /// Shuffle conversation order with this seed; `None` keeps file order.
    pub seed: Option<u64>,
    /// Utterances beyond this count are dropped from a conversation.
    pub max_conversation_len: Option<usize>,
}

impl Default for Batching {
    fn default() -> Self {
        Batching {
            max_batch: 50,
            seed: None,
            max_conversation_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchWarning {
    pub conversation: String,
    pub original_len: usize,
    pub kept: usize,
}

/// Whole conversations with their utterances padded to a common length.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Index of each conversation in the slice given to [`make_batches`].
    pub conversations: Vec<usize>,
    /// Utterance rows belonging to each conversation, in order.
    pub spans: Vec<Range<usize>>,
    /// `[utterances × max_len]`, PAD-filled.
    pub word_ids: Vec<Vec<usize>>,
    /// `[utterances × max_len × max_chars]`, PAD-filled.
    pub char_ids: Vec<Vec<Vec<usize>>>,
    pub char_lengths: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    pub max_chars: usize,
    pub da_ids: Vec<usize>,
    pub topic_ids: Option<Vec<usize>>,
}

impl Batch {
    pub fn num_conversations(&self) -> usize {
        self.spans.len()
    }

    pub fn num_utterances(&self) -> usize {
        self.lengths.len()
    }

    /// Builds a single batch from already-mapped rows; used for ad hoc
    /// encoding of individual utterances.
    pub fn from_token_rows(rows: &[Vec<(usize, Vec<usize>)>]) -> Batch {
        let max_len = rows.iter().map(Vec::len).max().unwrap_or(0);
        let max_chars = rows
            .iter()
            .flatten()
            .map(|(_, c)| c.len())
            .max()
            .unwrap_or(0);
        let mut b = Batch {
            conversations: vec![0],
            spans: vec![0..rows.len()],
            word_ids: Vec::new(),
            char_ids: Vec::new(),
            char_lengths: Vec::new(),
            lengths: Vec::new(),
            max_len,
            max_chars,
            da_ids: vec![0; rows.len()],
            topic_ids: None,
        };
        for row in rows {
            b.push_row(row.iter().map(|(w, c)| (*w, c.clone())));
        }
        b
    }

    fn push_row(&mut self, tokens: impl Iterator<Item = (usize, Vec<usize>)>) {
        let mut words = vec![PAD; self.max_len];
        let mut chars = vec![vec![PAD; self.max_chars]; self.max_len];
        let mut char_lens = vec![0; self.max_len];
        let mut len = 0;
        for (i, (w, cs)) in tokens.enumerate() {
            words[i] = w;
            char_lens[i] = cs.len();
            chars[i][..cs.len()].copy_from_slice(&cs);
            len += 1;
        }
        self.word_ids.push(words);
        self.char_ids.push(chars);
        self.char_lengths.push(char_lens);
        self.lengths.push(len);
    }
}

/// Groups conversations into batches of at most `max_batch`, shuffling their
/// order first when a seed is given. Every utterance in a batch is padded to
/// the batch's longest utterance.
pub fn make_batches(
    convs: &[Conversation],
    vocab: &Vocabulary,
    da_labels: &LabelSet,
    topic_labels: Option<&LabelSet>,
    cfg: &Batching,
) -> Result<(Vec<Batch>, Vec<BatchWarning>)> {
    if cfg.max_batch == 0 {
        return Err(Error::Argument("max_batch must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..convs.len()).collect();
    if let Some(seed) = cfg.seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut warnings = Vec::new();
    let mut batches = Vec::new();
    for group in order.chunks(cfg.max_batch) {
        let kept: Vec<usize> = group
            .iter()
            .map(|&ci| {
                let n = convs[ci].len();
                match cfg.max_conversation_len {
                    Some(cap) if n > cap => {
                        log::warn!("truncating conversation {} from {n} to {cap} utterances", convs[ci].id);
                        warnings.push(BatchWarning {
                            conversation: convs[ci].id.clone(),
                            original_len: n,
                            kept: cap,
                        });
                        cap
                    }
                    _ => n,
                }
            })
            .collect();
        let utts = || {
            group
                .iter()
                .zip(&kept)
                .flat_map(|(&ci, &n)| convs[ci].utterances[..n].iter())
        };
        let max_len = utts().map(|u| u.tokens.len()).max().unwrap_or(0);
        let max_chars = utts()
            .flat_map(|u| u.tokens.iter().map(|t| t.chars().count()))
            .max()
            .unwrap_or(0);
        let mut batch = Batch {
            conversations: group.to_vec(),
            spans: Vec::with_capacity(group.len()),
            word_ids: Vec::new(),
            char_ids: Vec::new(),
            char_lengths: Vec::new(),
            lengths: Vec::new(),
            max_len,
            max_chars,
            da_ids: da_labels.ids(utts().map(|u| u.da_label.as_str()))?,
            topic_ids: None,
        };
        if let Some(topics) = topic_labels {
            let mut names = Vec::new();
            for (&ci, &n) in group.iter().zip(&kept) {
                for (t, u) in convs[ci].utterances[..n].iter().enumerate() {
                    match &u.topic_label {
                        Some(l) => names.push(l.as_str()),
                        None => {
                            return Err(Error::Data(format!(
                                "utterance {t} of conversation {:?} has no topic label",
                                convs[ci].id
                            )))
                        }
                    }
                }
            }
            batch.topic_ids = Some(topics.ids(names)?);
        }
        let mut row = 0;
        for (&ci, &n) in group.iter().zip(&kept) {
            batch.spans.push(row..row + n);
            row += n;
            for u in &convs[ci].utterances[..n] {
                batch.push_row(
                    u.tokens
                        .iter()
                        .map(|tok| (vocab.word_id(tok), vocab.char_ids(tok))),
                );
            }
        }
        batches.push(batch);
    }
    Ok((batches, warnings))
}
