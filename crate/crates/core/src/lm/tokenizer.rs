use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
const SPECIALS: [&str; 4] = [PAD, UNK, BOS, EOS];

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{L}\p{N}]+|[^\s\p{L}\p{N}]").expect("valid regex"));

/// Lowercases and splits into alphanumeric runs and single punctuation
/// characters.
pub fn split_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    TOKEN.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

/// Word-level vocabulary with four reserved ids: pad 0, unk 1, bos 2, eos 3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Tokenizer {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        if words.len() < SPECIALS.len() || words[..4] != SPECIALS {
            return Err(Error::invalid("vocabulary", "must start with <pad> <unk> <bos> <eos>"));
        }
        let ids: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if ids.len() != words.len() {
            return Err(Error::invalid("vocabulary", "duplicate entries"));
        }
        Ok(Tokenizer { words, ids })
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.words
    }
}

impl Tokenizer {
    /// Keeps the `max_vocab - 4` most frequent words of `corpus` (ties broken
    /// lexicographically); `max_vocab` counts the special tokens.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_vocab: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("corpus", "cannot build a vocabulary from no text"));
        }
        if max_vocab < SPECIALS.len() {
            return Err(Error::invalid("max_vocab", "must leave room for the 4 special tokens"));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for w in split_words(text.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
            .collect();
        // BTreeMap order is lexicographic and the sort is stable.
        ranked.sort_by_key(|e| std::cmp::Reverse(e.1));
        let words: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .take(max_vocab)
            .collect();
        Self::try_from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Token ids of `text` without bos/eos; unknown words map to unk.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w).unwrap_or(UNK_ID)).collect()
    }

    /// `bos + encode(text) + eos`.
    pub fn encode_sequence(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(8);
        ids.push(BOS_ID);
        ids.extend(self.encode(text));
        ids.push(EOS_ID);
        ids
    }

    /// Words joined by single spaces; special tokens are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i > EOS_ID)
            .filter_map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
