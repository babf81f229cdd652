use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, KnowledgeGraph};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub entity: EntityId,
    pub span: Span,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: HashMap<String, usize>,
    entity: Option<EntityId>,
}

/// Token trie over entity surface forms (`liver_enzyme` -> `liver enzyme`).
#[derive(Debug, Clone)]
pub struct EntityLexicon {
    nodes: Vec<TrieNode>,
    max_phrase_len: usize,
}

/// Tokens shorter than this are never plural-stripped (`is`, `gas`).
const MIN_PLURAL_LEN: usize = 4;

impl EntityLexicon {
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, EntityId)>) -> Self {
        let mut lex = EntityLexicon {
            nodes: vec![TrieNode::default()],
            max_phrase_len: 0,
        };
        for (name, id) in entries {
            let tokens: Vec<&str> = name.split('_').filter(|t| !t.is_empty()).collect();
            if tokens.is_empty() {
                continue;
            }
            let mut node = 0;
            for tok in &tokens {
                node = match lex.nodes[node].children.get(*tok) {
                    Some(&child) => child,
                    None => {
                        lex.nodes.push(TrieNode::default());
                        let child = lex.nodes.len() - 1;
                        lex.nodes[node].children.insert(tok.to_string(), child);
                        child
                    }
                };
            }
            lex.nodes[node].entity.get_or_insert(id);
            lex.max_phrase_len = lex.max_phrase_len.max(tokens.len());
        }
        lex
    }

    pub fn from_graph(g: &KnowledgeGraph) -> Self {
        Self::from_entries(
            g.entities()
                .iter()
                .enumerate()
                .map(|(i, n)| (n.as_str(), EntityId(i as u32))),
        )
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    /// Entity whose phrase is exactly `tokens`. A token ending in `s` may
    /// also match its form without the `s` (`enzymes` -> `enzyme`); exact
    /// matches are tried first.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Option<EntityId> {
        if tokens.is_empty() {
            return None;
        }
        self.walk(0, tokens)
    }

    fn walk<S: AsRef<str>>(&self, node: usize, rest: &[S]) -> Option<EntityId> {
        let Some((first, tail)) = rest.split_first() else {
            return self.nodes[node].entity;
        };
        let tok = first.as_ref();
        let children = &self.nodes[node].children;
        if let Some(found) = children.get(tok).and_then(|&c| self.walk(c, tail)) {
            return Some(found);
        }
        if tok.len() >= MIN_PLURAL_LEN {
            if let Some(stem) = tok.strip_suffix('s') {
                return children.get(stem).and_then(|&c| self.walk(c, tail));
            }
        }
        None
    }
}

/// Left-to-right longest-match scan. At each position phrases are tried
/// from the longest possible length down to one; on a match the scan jumps
/// past it, so sub-phrases of a recognized entity are never reported.
pub fn recognize_entities<S: AsRef<str>>(tokens: &[S], lex: &EntityLexicon) -> Vec<Mention> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = lex.max_phrase_len.min(tokens.len() - i);
        let hit = (1..=longest)
            .rev()
            .find_map(|len| lex.lookup(&tokens[i..i + len]).map(|e| (e, len)));
        match hit {
            Some((entity, len)) => {
                out.push(Mention {
                    entity,
                    span: Span::new(i, i + len),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn lex(names: &[&str]) -> EntityLexicon {
        EntityLexicon::from_entries(names.iter().enumerate().map(|(i, n)| (*n, EntityId(i as u32))))
    }

    #[test]
    fn longest_phrase_wins() {
        let l = lex(&["liver", "liver_enzyme", "cause"]);
        let m = recognize_entities(&tokenize("what causes low liver enzymes"), &l);
        let ids: Vec<u32> = m.iter().map(|m| m.entity.0).collect();
        assert_eq!(ids, [2, 1]);
        assert_eq!(m[1].span, Span::new(3, 5));
        assert!(!ids.contains(&0));
    }

    #[test]
    fn empty_lexicon_finds_nothing() {
        assert!(recognize_entities(&tokenize("anything at all"), &lex(&[])).is_empty());
    }

    #[test]
    fn repeated_phrases_keep_positions() {
        let m = recognize_entities(&tokenize("a b a b"), &lex(&["a_b"]));
        let spans: Vec<Span> = m.iter().map(|m| m.span).collect();
        assert_eq!(spans, [Span::new(0, 2), Span::new(2, 4)]);
    }

    #[test]
    fn short_tokens_are_not_plural_stripped() {
        let l = lex(&["i", "ga"]);
        assert!(recognize_entities(&tokenize("is gas"), &l).is_empty());
        assert_eq!(l.lookup(&["i"]), Some(EntityId(0)));
    }

    #[test]
    fn exact_match_preferred_over_stem() {
        let l = lex(&["news", "new"]);
        assert_eq!(l.lookup(&["news"]), Some(EntityId(0)));
    }
}
