//! Ranking metrics and run-file evaluation against relevance judgments.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::RankedList;

pub const DEFAULT_KS: [usize; 3] = [10, 20, 100];

/// Claim id to the set of relevant evidence ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels(pub BTreeMap<String, BTreeSet<String>>);

impl Qrels {
    pub fn insert(&mut self, claim: impl Into<String>, evidence: impl Into<String>) {
        self.0.entry(claim.into()).or_default().insert(evidence.into());
    }

    pub fn relevant(&self, claim: &str) -> Option<&BTreeSet<String>> {
        self.0.get(claim)
    }

    pub fn claims(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_relevant(&self, claim: &str, evidence: &str) -> bool {
        self.0.get(claim).is_some_and(|s| s.contains(evidence))
    }

    /// `claim_id<TAB>evidence_id` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (c, es) in &self.0 {
            for e in es {
                let _ = writeln!(out, "{c}\t{e}");
            }
        }
        out
    }
}

fn hits<'a>(ranking: &'a RankedList, relevant: &'a BTreeSet<String>, k: usize) -> impl Iterator<Item = (usize, bool)> + 'a {
    ranking
        .ids()
        .take(k)
        .enumerate()
        .map(move |(i, id)| (i + 1, relevant.contains(id)))
}

pub fn recall_at_k(ranking: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let found = hits(ranking, relevant, k).filter(|&(_, r)| r).count();
    found as f64 / relevant.len() as f64
}

pub fn mrr_at_k(ranking: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    hits(ranking, relevant, k)
        .find(|&(_, r)| r)
        .map_or(0.0, |(rank, _)| 1.0 / rank as f64)
}

/// Binary gains, `log2(rank + 1)` discount.
pub fn ndcg_at_k(ranking: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    let dcg: f64 = hits(ranking, relevant, k)
        .filter(|&(_, r)| r)
        .map(|(rank, _)| 1.0 / ((rank + 1) as f64).log2())
        .sum();
    let ideal: f64 = (1..=relevant.len().min(k)).map(|i| 1.0 / ((i + 1) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Recall,
    Mrr,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Recall, Metric::Mrr, Metric::Ndcg];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Mrr => "mrr",
            Metric::Ndcg => "ndcg",
        }
    }

    pub fn compute(self, ranking: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
        match self {
            Metric::Recall => recall_at_k(ranking, relevant, k),
            Metric::Mrr => mrr_at_k(ranking, relevant, k),
            Metric::Ndcg => ndcg_at_k(ranking, relevant, k),
        }
    }
}

/// Macro-averaged metrics keyed by `(metric, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub values: BTreeMap<(Metric, usize), f64>,
    pub claims: usize,
}

impl Report {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.values.get(&(metric, k)).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value\n");
        for ((m, k), v) in &self.values {
            let _ = writeln!(out, "{},{k},{v}", m.name());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let bad = || Error::Artifact(format!("report line {}: {line:?}", i + 1));
            let mut parts = line.split(',');
            let (Some(m), Some(k), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad());
            };
            let m = Metric::ALL.into_iter().find(|x| x.name() == m).ok_or_else(bad)?;
            values.insert((m, k.parse().map_err(|_| bad())?), v.parse().map_err(|_| bad())?);
        }
        Ok(Self { values, claims: 0 })
    }

    pub fn table(&self) -> String {
        let ks: BTreeSet<usize> = self.values.keys().map(|&(_, k)| k).collect();
        let mut out = format!("{:<8}", "metric");
        for k in &ks {
            let _ = write!(out, "{:>10}", format!("@{k}"));
        }
        out.push('\n');
        for m in Metric::ALL {
            let _ = write!(out, "{:<8}", m.name());
            for &k in &ks {
                match self.get(m, k) {
                    Some(v) => {
                        let _ = write!(out, "{v:>10.4}");
                    }
                    None => out.push_str(&format!("{:>10}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Parses run lines `claim_id evidence_id rank score stage` into ranked
/// lists ordered by the rank column, claims in order of first appearance.
pub fn parse_run(text: &str) -> Result<Vec<RankedList>> {
    let mut by_claim: Vec<(String, Vec<(usize, String, f64)>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::RunParse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err("expected 5 fields: claim_id evidence_id rank score stage"));
        }
        let rank: usize = fields[2].parse().map_err(|_| err("rank is not a positive integer"))?;
        if rank == 0 {
            return Err(err("rank is not a positive integer"));
        }
        let score: f64 = fields[3].parse().map_err(|_| err("score is not a number"))?;
        let i = *slot.entry(fields[0].to_string()).or_insert_with(|| {
            by_claim.push((fields[0].to_string(), Vec::new()));
            by_claim.len() - 1
        });
        by_claim[i].1.push((rank, fields[1].to_string(), score));
    }
    Ok(by_claim
        .into_iter()
        .map(|(claim, mut rows)| {
            rows.sort_by_key(|r| r.0);
            RankedList {
                query_id: claim,
                entries: rows.into_iter().map(|(_, id, s)| (id, s)).collect(),
            }
        })
        .collect())
}

pub fn load_run(path: &Path) -> Result<Vec<RankedList>> {
    parse_run(&std::fs::read_to_string(path)?)
}

/// Macro-averages every `(metric, k)` over the claims in `qrels`; claims the
/// run does not cover score zero.
pub fn evaluate(run: &[RankedList], qrels: &Qrels, ks: &[usize]) -> Result<Report> {
    let run_claims: HashSet<&str> = run.iter().map(|l| l.query_id.as_str()).collect();
    if !qrels.claims().any(|c| run_claims.contains(c)) {
        return Err(Error::NoOverlap);
    }
    let empty = RankedList {
        query_id: String::new(),
        entries: Vec::new(),
    };
    let lookup: BTreeMap<&str, &RankedList> = run.iter().map(|l| (l.query_id.as_str(), l)).collect();
    let mut values = BTreeMap::new();
    for m in Metric::ALL {
        for &k in ks {
            let total: f64 = qrels
                .0
                .iter()
                .map(|(c, rel)| m.compute(lookup.get(c.as_str()).copied().unwrap_or(&empty), rel, k))
                .sum();
            values.insert((m, k), total / qrels.len() as f64);
        }
    }
    Ok(Report {
        values,
        claims: qrels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "c".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), -(i as f64)))
                .collect(),
        }
    }

    fn rel(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_examples() {
        let r = ranking(&["a", "b", "c"]);
        assert_eq!(recall_at_k(&r, &rel(&["a", "b"]), 20), 1.0);
        assert_eq!(recall_at_k(&r, &rel(&["x"]), 20), 0.0);
        assert_eq!(recall_at_k(&r, &rel(&["a", "c", "x", "y"]), 20), 0.5);
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr_at_k(&ranking(&["a", "b"]), &rel(&["a"]), 10), 1.0);
        assert_eq!(mrr_at_k(&ranking(&["w", "x", "y", "a"]), &rel(&["a"]), 10), 0.25);
        assert_eq!(mrr_at_k(&ranking(&["w", "x", "y", "a"]), &rel(&["a"]), 3), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&ranking(&["a", "b"]), &rel(&["a"]), 10), 1.0);
        assert!((ndcg_at_k(&ranking(&["x", "y", "a"]), &rel(&["a"]), 10) - 0.5).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&ranking(&["x", "y"]), &rel(&["a"]), 10), 0.0);
        assert!((ndcg_at_k(&ranking(&["a", "b", "x"]), &rel(&["a", "b"]), 10) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn run_round_trip_and_errors() {
        let text = "c1 e2 2 0.1 rerank\nc1 e1 1 0.9 rerank\n";
        let run = parse_run(text).unwrap();
        assert_eq!(run[0].ids().collect::<Vec<_>>(), ["e1", "e2"]);
        let e = parse_run("c1 e1 1 0.9 rerank\nc1 e2 x 0.1 rerank\n").unwrap_err();
        assert!(matches!(e, Error::RunParse { line: 2, .. }));
        assert!(matches!(parse_run("c1 e1 1\n"), Err(Error::RunParse { line: 1, .. })));
    }

    #[test]
    fn evaluate_ideal_missing_and_disjoint() {
        let mut q = Qrels::default();
        q.insert("c1", "e1");
        q.insert("c2", "e2");
        let mut run = vec![ranking(&["e1", "e3"])];
        run[0].query_id = "c1".into();
        let rep = evaluate(&run, &q, &DEFAULT_KS).unwrap();
        assert_eq!(rep.get(Metric::Mrr, 10), Some(0.5));
        assert_eq!(rep.get(Metric::Recall, 100), Some(0.5));

        run.push(ranking(&["e2"]));
        run[1].query_id = "c2".into();
        let rep = evaluate(&run, &q, &DEFAULT_KS).unwrap();
        assert!(rep.values.values().all(|&v| v == 1.0));
        assert_eq!(Report::from_csv(&rep.to_csv()).unwrap().values, rep.values);

        run[0].query_id = "zz".into();
        run[1].query_id = "yy".into();
        assert!(matches!(evaluate(&run, &q, &DEFAULT_KS), Err(Error::NoOverlap)));
    }
}
