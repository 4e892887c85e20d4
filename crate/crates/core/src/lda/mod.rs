//! Topic labels for the auxiliary task: collapsed Gibbs LDA over
//! conversations, coherence-based choice of the topic count, and
//! conversation- or utterance-level labelling.

mod coherence;
mod gibbs;
mod label;
mod select;

pub use coherence::{
    coherence, npmi, topic_coherence, CoherenceScores, DEFAULT_TOP_N, DEFAULT_WINDOW,
    NPMI_EPSILON,
};
pub use gibbs::{fit_lda, GibbsSampler, Inference, LdaParams, TopicDistribution, TopicModel};
pub use label::{label_corpus, topic_name, LabelStrategy, Labelled, DEFAULT_FOLD_IN_SWEEPS};
pub use select::{select_topic_count, write_coherence_csv, Selection, SelectionRow, SweepSettings};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Conversation;
use crate::error::{Error, Result};

/// Word inventory of a topic model. Conversations are the documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TopicVocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TopicVocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        TopicVocabulary { words, index }
    }
}

impl From<TopicVocabulary> for Vec<String> {
    fn from(v: TopicVocabulary) -> Self {
        v.words
    }
}

impl TopicVocabulary {
    /// Every word occurring at least `min_count` times and not in `stopwords`,
    /// in lexicographic order.
    pub fn build(convs: &[Conversation], min_count: usize, stopwords: &BTreeSet<String>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for tok in convs.iter().flat_map(|c| c.tokens()) {
            *counts.entry(tok).or_default() += 1;
        }
        counts
            .into_iter()
            .filter(|(w, n)| *n >= min_count.max(1) && !stopwords.contains(*w))
            .map(|(w, _)| w.to_owned())
            .collect::<Vec<_>>()
            .into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Maps tokens to ids, dropping out-of-vocabulary ones.
    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        tokens.into_iter().filter_map(|t| self.id(t)).collect()
    }

    /// One document per conversation.
    pub fn documents(&self, convs: &[Conversation]) -> Vec<Vec<usize>> {
        convs.iter().map(|c| self.encode(c.tokens())).collect()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        crate::util::hex(&h.finalize())
    }
}

/// A trained topic model with the vocabulary and the training document ids
/// it was fitted on; the on-disk topic-model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaBundle {
    pub format_version: u32,
    pub model: TopicModel,
    pub vocab: TopicVocabulary,
    pub vocab_hash: String,
    pub doc_ids: Vec<String>,
}

pub const LDA_FORMAT_VERSION: u32 = 1;

impl LdaBundle {
    /// Builds the vocabulary, fits LDA on every conversation of `convs`.
    pub fn fit(
        convs: &[Conversation],
        params: &LdaParams,
        min_count: usize,
        stopwords: &BTreeSet<String>,
    ) -> Result<Self> {
        let vocab = TopicVocabulary::build(convs, min_count, stopwords);
        if vocab.is_empty() {
            return Err(Error::Data("topic vocabulary is empty".into()));
        }
        let docs = vocab.documents(convs);
        let model = fit_lda(&docs, vocab.len(), params)?;
        Ok(LdaBundle {
            format_version: LDA_FORMAT_VERSION,
            model,
            vocab_hash: vocab.hash(),
            vocab,
            doc_ids: convs.iter().map(|c| c.id.clone()).collect(),
        })
    }

    pub fn training_doc(&self, conversation_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|id| id == conversation_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let bundle: LdaBundle = serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if bundle.format_version != LDA_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported topic model version {}",
                bundle.format_version
            )));
        }
        if bundle.vocab.hash() != bundle.vocab_hash {
            return Err(Error::Data("topic model vocabulary hash mismatch".into()));
        }
        Ok(bundle)
    }

    /// Top words of every topic as strings.
    pub fn describe_topics(&self, top_n: usize) -> Vec<Vec<String>> {
        (0..self.model.k)
            .map(|k| {
                self.model
                    .top_words(k, top_n)
                    .into_iter()
                    .map(|w| self.vocab.word(w).to_owned())
                    .collect()
            })
            .collect()
    }
}
