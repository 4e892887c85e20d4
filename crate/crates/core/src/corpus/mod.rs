//! Conversation corpora: JSONL ingest, vocabularies, label sets, batching and
//! pretrained word vectors.
//!
//! One conversation per line:
//!
//! ```text
//! {"id": "sw2005", "utterances": [{"speaker": "A", "tokens": ["okay", "uh"], "da": "b", "topic": "t3"}]}
//! ```

mod batch;
mod embeddings;
mod vocab;

pub use batch::{make_batches, Batch, BatchWarning, Batching};
pub use embeddings::{load_embeddings, random_embeddings};
pub use vocab::{build_vocab, LabelSet, Vocabulary, PAD, UNK};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub tokens: Vec<String>,
    #[serde(rename = "da")]
    pub da_label: String,
    #[serde(rename = "topic", default, skip_serializing_if = "Option::is_none")]
    pub topic_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// All tokens of the conversation in order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.utterances
            .iter()
            .flat_map(|u| u.tokens.iter().map(String::as_str))
    }
}

/// Token normalisation applied at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocess {
    pub lowercase: bool,
    /// Re-split tokens on internal whitespace.
    pub split_whitespace: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            lowercase: true,
            split_whitespace: true,
        }
    }
}

impl Preprocess {
    /// Leaves tokens exactly as stored.
    pub fn none() -> Self {
        Preprocess {
            lowercase: false,
            split_whitespace: false,
        }
    }

    pub fn apply(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let tok = if self.lowercase {
                tok.to_lowercase()
            } else {
                tok.clone()
            };
            if self.split_whitespace {
                out.extend(tok.split_whitespace().map(str::to_owned));
            } else if !tok.is_empty() {
                out.push(tok);
            }
        }
        out
    }
}

/// Parses JSONL from `reader`. `origin` names the source in errors.
pub fn parse_corpus(reader: impl BufRead, origin: &str, prep: &Preprocess) -> Result<Vec<Conversation>> {
    let mut convs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            path: origin.to_owned(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_owned(),
            line: lineno,
            msg,
        };
        let mut conv: Conversation =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if conv.utterances.is_empty() {
            return Err(parse_err(format!("conversation {:?} has no utterances", conv.id)));
        }
        for (t, utt) in conv.utterances.iter_mut().enumerate() {
            utt.tokens = prep.apply(&utt.tokens);
            if utt.tokens.is_empty() {
                return Err(parse_err(format!(
                    "utterance {} of conversation {:?} has no tokens",
                    t, conv.id
                )));
            }
        }
        convs.push(conv);
    }
    Ok(convs)
}

/// Loads a corpus file; an empty file yields an empty list.
pub fn load_corpus(path: impl AsRef<Path>, prep: &Preprocess) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), &path.display().to_string(), prep)
}

pub fn write_corpus(writer: impl Write, convs: &[Conversation]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for conv in convs {
        let line = serde_json::to_string(conv).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<corpus output>", e))?;
    }
    w.flush().map_err(|e| Error::io("<corpus output>", e))
}

pub fn save_corpus(path: impl AsRef<Path>, convs: &[Conversation]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(file, convs)
}
