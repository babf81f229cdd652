use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{read_to_string, Error, Result};

/// Graded judgments, `qid -> pid -> grade`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, i32>>,
}

/// Grades at or above this count as relevant.
pub const RELEVANT_GRADE: i32 = 1;

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: &str, pid: &str, grade: i32) {
        self.judgments
            .entry(qid.to_string())
            .or_default()
            .insert(pid.to_string(), grade);
    }

    /// Unjudged pairs grade 0.
    pub fn grade(&self, qid: &str, pid: &str) -> i32 {
        self.judgments
            .get(qid)
            .and_then(|m| m.get(pid))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_relevant(&self, qid: &str, pid: &str) -> bool {
        self.grade(qid, pid) >= RELEVANT_GRADE
    }

    pub fn relevant_count(&self, qid: &str) -> usize {
        self.judgments
            .get(qid)
            .map_or(0, |m| m.values().filter(|&&g| g >= RELEVANT_GRADE).count())
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `qid iter pid grade` rows, whitespace separated. A repeated pair keeps
    /// its last grade.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut q = Qrels::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 4 {
                return Err(Error::parse(
                    source_name,
                    i + 1,
                    format!("expected 4 columns, found {}", cols.len()),
                ));
            }
            let grade = cols[3]
                .parse::<i32>()
                .map_err(|e| Error::parse(source_name, i + 1, format!("bad grade `{}`: {e}", cols[3])))?;
            q.insert(cols[0], cols[2], grade);
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (qid, m) in &self.judgments {
            for (pid, g) in m {
                let _ = writeln!(out, "{qid} 0 {pid} {g}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub qid: String,
    pub pid: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Ranked lists in TREC run format. Rows are kept grouped by query id in
/// ascending order and by rank within a query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    rows: Vec<RunRow>,
}

fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl RunFile {
    /// Sorts each query's `(pid, score)` list by score descending, then pid
    /// ascending, and assigns ranks from 1.
    pub fn from_scores(scores: BTreeMap<String, Vec<(String, f64)>>, tag: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (qid, mut list) in scores {
            if let Some((pid, s)) = list.iter().find(|(_, s)| !s.is_finite()) {
                return Err(Error::Input(format!("non-finite score {s} for ({qid}, {pid})")));
            }
            list.sort_by(rank_order);
            for w in list.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Input(format!("duplicate candidate {} for query {qid}", w[0].0)));
                }
            }
            rows.extend(list.into_iter().enumerate().map(|(i, (pid, score))| RunRow {
                qid: qid.clone(),
                pid,
                rank: i + 1,
                score,
                tag: tag.to_string(),
            }));
        }
        Ok(RunFile { rows })
    }

    pub fn rows(&self) -> &[RunRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Each query's rows in rank order.
    pub fn per_query(&self) -> BTreeMap<&str, Vec<&RunRow>> {
        let mut out: BTreeMap<&str, Vec<&RunRow>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.qid.as_str()).or_default().push(r);
        }
        out
    }

    /// `qid Q0 pid rank score tag` rows, whitespace separated.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(source_name, i + 1, m);
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let rank = cols[3]
                .parse::<usize>()
                .map_err(|e| err(format!("bad rank `{}`: {e}", cols[3])))?;
            let score = cols[4]
                .parse::<f64>()
                .map_err(|e| err(format!("bad score `{}`: {e}", cols[4])))?;
            if !score.is_finite() {
                return Err(err(format!("non-finite score `{}`", cols[4])));
            }
            rows.push(RunRow {
                qid: cols[0].to_string(),
                pid: cols[2].to_string(),
                rank,
                score,
                tag: cols[5].to_string(),
            });
        }
        rows.sort_by(|a, b| a.qid.cmp(&b.qid).then(a.rank.cmp(&b.rank)).then_with(|| a.pid.cmp(&b.pid)));
        Ok(RunFile { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    /// Scores print in shortest round-trip form, so parsing the output
    /// reproduces every value exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{} Q0 {} {} {} {}", r.qid, r.pid, r.rank, r.score, r.tag);
        }
        out
    }
}

/// `id<TAB>text` rows. Blank lines are skipped; ids must be unique.
pub fn parse_id_text(text: &str, source_name: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, body)) = line.split_once('\t') else {
            return Err(Error::parse(source_name, i + 1, "expected `id<TAB>text`"));
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(source_name, i + 1, "empty id"));
        }
        if out.insert(id.to_string(), body.to_string()).is_some() {
            return Err(Error::parse(source_name, i + 1, format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

pub fn load_id_text(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_id_text(&read_to_string(path)?, &path.display().to_string())
}

pub fn write_id_text(entries: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (id, text) in entries {
        let _ = writeln!(out, "{id}\t{}", text.replace(['\t', '\n', '\r'], " "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_roundtrip_and_tie_order() {
        let mut s = BTreeMap::new();
        s.insert("q1".to_string(), vec![("p2".to_string(), 0.5), ("p1".to_string(), 0.5), ("p3".to_string(), 0.1 + 0.2)]);
        let run = RunFile::from_scores(s, "kerm").unwrap();
        let pids: Vec<&str> = run.rows().iter().map(|r| r.pid.as_str()).collect();
        assert_eq!(pids, ["p1", "p2", "p3"]);
        let text = run.to_text();
        let back = RunFile::parse(&text, "run").unwrap();
        assert_eq!(back, run);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_rows() {
        let e = RunFile::parse("q1 Q0 p1 1 0.5 tag\nq1 Q0 p2 2\n", "r.run").unwrap_err();
        assert!(e.to_string().contains("r.run:2"), "{e}");
        let q = Qrels::parse("q1 0 p1 2\nq1 0 p2 0\n", "qrels").unwrap();
        assert_eq!(q.grade("q1", "p1"), 2);
        assert_eq!(q.relevant_count("q1"), 1);
        assert!(Qrels::parse("q1 0 p1\n", "qrels").is_err());
        assert!(parse_id_text("a\tx\na\ty\n", "t").is_err());
    }
}
