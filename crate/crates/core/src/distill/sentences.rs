use crate::embed::{query_sentence_relevance, WordEmbeddingTable};
use crate::text::tokenize;

/// Splits on `.`, `!` or `?` followed by whitespace or end of text, then
/// tokenizes. Sentences without tokens are dropped. There is no
/// abbreviation handling: `"e.g. test."` yields two sentences.
pub fn split_sentences(passage: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = passage.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                push_tokens(&mut out, &passage[start..end]);
                start = end;
            }
        }
    }
    push_tokens(&mut out, &passage[start..]);
    out
}

fn push_tokens(out: &mut Vec<Vec<String>>, text: &str) {
    let tokens = tokenize(text);
    if !tokens.is_empty() {
        out.push(tokens);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeySentence {
    pub index: usize,
    /// `None` when no sentence had a defined relevance.
    pub score: Option<f64>,
}

/// Argmax of query-sentence relevance. Sentences whose relevance is
/// undefined are skipped, the first index wins ties, and index 0 with no
/// score is returned when nothing is scorable.
pub fn select_key_sentence<S: AsRef<str>>(
    table: &WordEmbeddingTable,
    query: &[S],
    sentences: &[Vec<String>],
) -> KeySentence {
    let scores = sentences.iter().map(|s| query_sentence_relevance(table, query, s));
    pick_best(scores)
}

pub(crate) fn pick_best(scores: impl Iterator<Item = Option<f64>>) -> KeySentence {
    let mut best = KeySentence { index: 0, score: None };
    for (i, s) in scores.enumerate() {
        if let Some(s) = s {
            if best.score.is_none_or(|b| s > b) {
                best = KeySentence { index: i, score: Some(s) };
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitting_rules() {
        assert_eq!(split_sentences("A b. C d!"), vec![vec!["a", "b"], vec!["c", "d"]]);
        assert_eq!(split_sentences("no terminator").len(), 1);
        assert_eq!(split_sentences("e.g. test."), vec![vec!["e", "g"], vec!["test"]]);
        assert_eq!(split_sentences("3.5 units? yes"), vec![vec!["3", "5", "units"], vec!["yes"]]);
        assert!(split_sentences(" ... ! ").is_empty());
    }

    #[test]
    fn argmax_rules() {
        let pick = |v: &[Option<f64>]| pick_best(v.iter().copied());
        assert_eq!(pick(&[Some(0.1), Some(0.9), Some(0.3)]).index, 1);
        assert_eq!(pick(&[Some(0.5), Some(0.5)]).index, 0);
        assert_eq!(pick(&[None, None]), KeySentence { index: 0, score: None });
        assert_eq!(pick(&[None, Some(-2.0)]), KeySentence { index: 1, score: Some(-2.0) });
    }

    #[test]
    fn selects_with_word_vectors() {
        let t = WordEmbeddingTable::parse("liver 1 0\nenzyme 1 0\nsky 0 1\n", "v").unwrap();
        let sents = split_sentences("The sky is blue. Liver enzyme levels rise.");
        let k = select_key_sentence(&t, &["liver"], &sents);
        assert_eq!(k.index, 1);
        let k = select_key_sentence(&t, &["unknown"], &sents);
        assert_eq!(k, KeySentence { index: 0, score: None });
    }
}
