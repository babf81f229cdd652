use serde::Serialize;

use super::trec::{Qrels, RunFile};
use crate::error::{Error, Result};

/// Queries that appear in the run and have at least one relevant judgment,
/// each with the relevance flags of its ranked list.
fn judged_lists(run: &RunFile, qrels: &Qrels, k: usize) -> Result<Vec<(Vec<bool>, usize)>> {
    if k == 0 {
        return Err(Error::Config("metric cutoff k must be at least 1".into()));
    }
    if run.is_empty() {
        return Err(Error::Config("cannot evaluate an empty run".into()));
    }
    let lists: Vec<_> = run
        .per_query()
        .into_iter()
        .filter_map(|(qid, rows)| {
            let r = qrels.relevant_count(qid);
            (r > 0).then(|| (rows.iter().map(|row| qrels.is_relevant(qid, &row.pid)).collect(), r))
        })
        .collect();
    if lists.is_empty() {
        return Err(Error::Config("no query in the run has a relevant judgment".into()));
    }
    Ok(lists)
}

/// Mean over judged queries of the reciprocal rank of the first relevant
/// passage in the top `k`, 0 when there is none.
pub fn mrr_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<f64> {
    let lists = judged_lists(run, qrels, k)?;
    let total: f64 = lists
        .iter()
        .map(|(rel, _)| rel.iter().take(k).position(|&r| r).map_or(0.0, |i| 1.0 / (i + 1) as f64))
        .sum();
    Ok(total / lists.len() as f64)
}

/// Mean over judged queries of the precision at each relevant rank within
/// the top `k`, normalized by `min(R, k)`.
pub fn map_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<f64> {
    let lists = judged_lists(run, qrels, k)?;
    let total: f64 = lists
        .iter()
        .map(|(rel, r)| {
            let mut hits = 0usize;
            let mut sum = 0.0;
            for (i, _) in rel.iter().take(k).enumerate().filter(|(_, &x)| x) {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
            sum / (*r).min(k) as f64
        })
        .sum();
    Ok(total / lists.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub queries: usize,
    #[serde(rename = "mrr@10")]
    pub mrr_10: f64,
    #[serde(rename = "map@10")]
    pub map_10: f64,
    #[serde(rename = "map@30")]
    pub map_30: f64,
}

pub fn evaluate(run: &RunFile, qrels: &Qrels) -> Result<EvalReport> {
    Ok(EvalReport {
        queries: judged_lists(run, qrels, 1)?.len(),
        mrr_10: mrr_at_k(run, qrels, 10)?,
        map_10: map_at_k(run, qrels, 10)?,
        map_30: map_at_k(run, qrels, 30)?,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    /// One query per entry; the passage at each listed rank is relevant.
    fn fixture(lists: &[(usize, &[usize])]) -> (RunFile, Qrels) {
        let mut scores = BTreeMap::new();
        let mut qrels = Qrels::new();
        for (q, (n, relevant)) in lists.iter().enumerate() {
            let qid = format!("q{q}");
            let list = (1..=*n).map(|r| (format!("p{r:03}"), -(r as f64))).collect();
            scores.insert(qid.clone(), list);
            for r in *relevant {
                qrels.insert(&qid, &format!("p{r:03}"), 1);
            }
        }
        (RunFile::from_scores(scores, "t").unwrap(), qrels)
    }

    #[test]
    fn reciprocal_rank_cases() {
        let (run, q) = fixture(&[(20, &[3])]);
        assert_eq!(mrr_at_k(&run, &q, 10).unwrap(), 1.0 / 3.0);
        let (run, q) = fixture(&[(20, &[11])]);
        assert_eq!(mrr_at_k(&run, &q, 10).unwrap(), 0.0);
        let (run, q) = fixture(&[(5, &[1]), (5, &[2])]);
        assert_eq!(mrr_at_k(&run, &q, 10).unwrap(), 0.75);
    }

    #[test]
    fn average_precision_cases() {
        let (run, q) = fixture(&[(10, &[1, 2])]);
        assert_eq!(map_at_k(&run, &q, 10).unwrap(), 1.0);
        let (run, q) = fixture(&[(10, &[2])]);
        assert_eq!(map_at_k(&run, &q, 10).unwrap(), 0.5);
        let (run, q) = fixture(&[(10, &[1, 3])]);
        assert!((map_at_k(&run, &q, 10).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn unjudged_queries_are_excluded_and_empty_runs_rejected() {
        let (run, q) = fixture(&[(5, &[1]), (5, &[])]);
        assert_eq!(mrr_at_k(&run, &q, 10).unwrap(), 1.0);
        assert!(matches!(mrr_at_k(&RunFile::default(), &q, 10), Err(Error::Config(_))));
        assert!(matches!(map_at_k(&run, &q, 0), Err(Error::Config(_))));
    }
}
