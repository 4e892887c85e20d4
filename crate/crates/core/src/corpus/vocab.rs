use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Conversation;
use crate::error::{Error, Result};
use crate::util::hex;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Word and character indices. Index 0 is padding and 1 is unknown in both
/// tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    chars: Vec<char>,
    word_index: HashMap<String, usize>,
    char_index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    words: Vec<String>,
    chars: Vec<char>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.words, r.chars)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            words: v.words,
            chars: v.chars,
        }
    }
}

impl Vocabulary {
    /// `words` and `chars` must start with the two reserved entries.
    fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_index = words
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let char_index = chars
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, &c)| (c, i))
            .collect();
        Vocabulary {
            words,
            chars,
            word_index,
            char_index,
        }
    }

    /// Builds a vocabulary from explicit word and character lists.
    pub fn new(words: impl IntoIterator<Item = String>, chars: impl IntoIterator<Item = char>) -> Self {
        let mut w = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        let mut seen = BTreeSet::new();
        for word in words {
            if word != PAD_TOKEN && word != UNK_TOKEN && seen.insert(word.clone()) {
                w.push(word);
            }
        }
        let mut c = vec!['\0', '\u{1}'];
        let mut seen = BTreeSet::new();
        for ch in chars {
            if ch != '\0' && ch != '\u{1}' && seen.insert(ch) {
                c.push(ch);
            }
        }
        Self::from_parts(w, c)
    }

    /// Number of word rows including the two reserved ones.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn char_ids(&self, word: &str) -> Vec<usize> {
        word.chars()
            .map(|c| self.char_index.get(&c).copied().unwrap_or(UNK))
            .collect()
    }

    /// Indexed words, excluding the reserved entries.
    pub fn words(&self) -> &[String] {
        &self.words[2..]
    }

    /// Content hash over both tables, stable across runs.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.update([0xffu8]);
        for c in &self.chars {
            h.update(c.to_string().as_bytes());
            h.update([0u8]);
        }
        hex(&h.finalize())
    }
}

/// Indexes words by descending frequency (ties lexicographic) until the
/// indexed words cover at least `coverage` of all tokens. Characters are
/// indexed from every token.
pub fn build_vocab(convs: &[Conversation], coverage: f64) -> Result<Vocabulary> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Argument(format!(
            "vocabulary coverage must be in (0, 1], got {coverage}"
        )));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut chars = BTreeSet::new();
    let mut total = 0usize;
    for tok in convs.iter().flat_map(|c| c.tokens()) {
        *counts.entry(tok).or_default() += 1;
        chars.extend(tok.chars());
        total += 1;
    }
    if total == 0 {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // BTreeMap order is lexicographic; a stable sort keeps it within ties.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    let mut words = Vec::new();
    let mut covered = 0usize;
    for (w, n) in ranked {
        if covered as f64 >= coverage * total as f64 {
            break;
        }
        covered += n;
        words.push(w.to_owned());
    }
    Ok(Vocabulary::new(words, chars))
}

/// Sorted label inventory mapping label strings to dense ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = labels.into_iter().collect();
        LabelSet {
            names: set.into_iter().collect(),
        }
    }

    pub fn from_das(convs: &[Conversation]) -> Self {
        Self::new(
            convs
                .iter()
                .flat_map(|c| c.utterances.iter().map(|u| u.da_label.clone())),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Maps every label, failing with the sorted list of unknown ones.
    pub fn ids<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        let mut unknown = BTreeSet::new();
        for l in labels {
            match self.id(l) {
                Some(i) => ids.push(i),
                None => {
                    unknown.insert(l.to_owned());
                }
            }
        }
        if unknown.is_empty() {
            Ok(ids)
        } else {
            Err(Error::UnknownLabels(unknown.into_iter().collect()))
        }
    }
}
