use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::distill::split_sentences;
use crate::error::{Error, Result};
use crate::text::tokenize;

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const UNK: usize = 2;
const SPECIALS: [&str; 3] = ["[CLS]", "[SEP]", "[UNK]"];

/// Word-level vocabulary: the three specials followed by sorted words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect::<Vec<_>>();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// `[CLS] q [SEP] p [SEP]` with segment ids 0 for the query side and 1 for
/// the passage side. Positions are `0..len`; there is no padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPair {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// Query tokens kept after truncation.
    pub query_len: usize,
    /// Passage tokens kept after truncation.
    pub passage_len: usize,
}

impl TokenizedPair {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index of the first passage token.
    pub fn passage_offset(&self) -> usize {
        self.query_len + 2
    }

    /// Pair index of query token `i`, if it survived truncation.
    pub fn query_position(&self, i: usize) -> Option<usize> {
        (i < self.query_len).then_some(1 + i)
    }

    /// Pair index of passage token `i`, if it survived truncation.
    pub fn passage_position(&self, i: usize) -> Option<usize> {
        (i < self.passage_len).then(|| self.passage_offset() + i)
    }
}

/// Passage tokens are the concatenated sentence tokens, so sentence spans
/// from meta-graph construction index straight into them. The passage is
/// truncated first; the query only when it alone overflows.
pub fn tokenize_pair(query: &str, passage: &str, vocab: &Vocab, max_len: usize) -> Result<TokenizedPair> {
    let q = tokenize(query);
    if q.is_empty() {
        return Err(Error::Input("empty query".into()));
    }
    if max_len < 4 {
        return Err(Error::Config("max_len must be at least 4".into()));
    }
    let p: Vec<String> = split_sentences(passage).concat();
    let budget = max_len - 3;
    let query_len = q.len().min(budget);
    let passage_len = p.len().min(budget - query_len);

    let mut ids = Vec::with_capacity(query_len + passage_len + 3);
    let mut segments = Vec::with_capacity(ids.capacity());
    ids.push(CLS);
    ids.extend(q[..query_len].iter().map(|w| vocab.id(w)));
    ids.push(SEP);
    segments.resize(ids.len(), 0);
    ids.extend(p[..passage_len].iter().map(|w| vocab.id(w)));
    ids.push(SEP);
    segments.resize(ids.len(), 1);
    Ok(TokenizedPair {
        ids,
        segments,
        query_len,
        passage_len,
    })
}
