use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token/id bijection with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    min_freq: usize,
    tokens: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_tokens(r.tokens, r.min_freq)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            min_freq: v.min_freq,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// Rebuilds from the id-ordered token list (including the reserved entries).
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Data("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens for the kept (non-reserved) ids of `doc`.
    pub fn decode(&self, doc: &EncodedDocument) -> Vec<String> {
        doc.ids[..doc.true_len]
            .iter()
            .filter(|&&id| id != PAD_ID && id != UNK_ID)
            .filter_map(|&id| self.token(id).map(str::to_string))
            .collect()
    }
}

/// Ids ordered by descending frequency, then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Empty("vocabulary corpus"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for t in doc {
            let t = t.as_ref();
            if t != PAD_TOKEN && t != UNK_TOKEN {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = [PAD_TOKEN, UNK_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    Vocabulary::from_tokens(tokens, min_freq)
}

/// Fixed-length id sequence; positions at or beyond `true_len` hold PAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDocument {
    pub ids: Vec<u32>,
    pub true_len: usize,
}

impl EncodedDocument {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_len]
    }
}

/// Maps tokens to ids with UNK fallback, truncating or padding to `max_len`.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> EncodedDocument {
    let true_len = tokens.len().min(max_len);
    let mut ids = vec![PAD_ID; max_len];
    for (slot, t) in ids.iter_mut().zip(tokens) {
        *slot = vocab.id(t.as_ref());
    }
    EncodedDocument { ids, true_len }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Vec<&'static str>> {
        vec![vec!["a", "b"], vec!["a"]]
    }

    #[test]
    fn frequency_order() {
        let v = build_vocab(&corpus(), 1).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn min_freq_filters() {
        let v = build_vocab(&corpus(), 2).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(build_vocab::<&str>(&[], 1).is_err());
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = build_vocab(&[vec!["z", "y", "x"]], 1).unwrap();
        assert_eq!(&v.tokens()[2..], &["x", "y", "z"]);
    }

    #[test]
    fn encode_pads_truncates_and_falls_back() {
        let v = build_vocab(&[vec!["a", "b", "c", "d", "e", "f", "g"]], 1).unwrap();
        let d = encode(&["a", "b", "c"], &v, 5);
        assert_eq!(d.true_len, 3);
        assert_eq!(&d.ids[3..], &[PAD_ID, PAD_ID]);
        let d = encode(&["a", "b", "c", "d", "e", "f", "g"], &v, 5);
        assert_eq!(d.true_len, 5);
        assert_eq!(d.ids, vec![v.id("a"), v.id("b"), v.id("c"), v.id("d"), v.id("e")]);
        let d = encode(&["never-seen"], &v, 3);
        assert_eq!(d.ids[0], UNK_ID);
        assert_eq!(encode(&["<unk>"], &v, 1).ids[0], UNK_ID);
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&corpus(), 1).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let w: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, w);
    }
}
