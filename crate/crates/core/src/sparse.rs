//! Sparse lexical retrieval: an inverted index with BM25 and ltc TF-IDF
//! scoring, Borda-count rank fusion, and page-level candidate preselection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Claim, EvidenceDoc, ViewKind};
use crate::parallel;

/// Lowercases and splits on every non-alphanumeric character.
///
/// The mask token `[Mask]` therefore becomes the single token `mask`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Which text of a record gets indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexField {
    Raw,
    Full,
    Sent,
    Struct,
}

impl IndexField {
    fn view(self) -> Option<ViewKind> {
        match self {
            IndexField::Raw => None,
            IndexField::Full => Some(ViewKind::Full),
            IndexField::Sent => Some(ViewKind::Sent),
            IndexField::Struct => Some(ViewKind::Struct),
        }
    }

    pub fn evidence_text(self, doc: &EvidenceDoc) -> Result<String> {
        match self.view() {
            None => Ok(doc.raw_text.clone()),
            Some(kind) => {
                let s = doc.summary.as_ref().ok_or_else(|| Error::MissingSummary(doc.id.clone()))?;
                Ok(s.view(kind).unwrap_or_default())
            }
        }
    }

    pub fn claim_text(self, claim: &Claim) -> Result<String> {
        match self.view() {
            None => Ok(claim.raw_text.clone()),
            Some(kind) => {
                let s = claim.summary.as_ref().ok_or_else(|| Error::MissingSummary(claim.id.clone()))?;
                Ok(s.view(kind).unwrap_or_default())
            }
        }
    }
}

/// One posting: document position and term frequency.
pub type Posting = (u32, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    version: u32,
    params: Bm25Params,
    doc_ids: Vec<String>,
    /// Term strings in id order.
    terms: Vec<String>,
    /// Postings per term id, sorted by document position.
    postings: Vec<Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    #[serde(skip)]
    vocab: HashMap<String, u32>,
    #[serde(skip)]
    doc_pos: HashMap<String, u32>,
    #[serde(skip)]
    tfidf_norms: Vec<f64>,
}

const INDEX_VERSION: u32 = 1;

impl SparseIndex {
    /// Indexes `(doc id, text)` pairs.
    pub fn from_texts(docs: &[(String, String)], params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let tokenized = parallel::map(docs, |(_, text)| tokenize(text));

        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut terms: Vec<String> = Vec::new();
        let mut postings: Vec<Vec<Posting>> = Vec::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (pos, tokens) in tokenized.iter().enumerate() {
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for tok in tokens {
                let id = *vocab.entry(tok.clone()).or_insert_with(|| {
                    terms.push(tok.clone());
                    postings.push(Vec::new());
                    (terms.len() - 1) as u32
                });
                *counts.entry(id).or_default() += 1;
            }
            for (id, tf) in counts {
                postings[id as usize].push((pos as u32, tf));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }

        let mut index = Self {
            version: INDEX_VERSION,
            params,
            doc_ids: docs.iter().map(|(id, _)| id.clone()).collect(),
            terms,
            postings,
            avg_doc_length: total as f64 / docs.len() as f64,
            doc_lengths,
            vocab,
            doc_pos: HashMap::new(),
            tfidf_norms: Vec::new(),
        };
        index.rebuild_lookups()?;
        Ok(index)
    }

    pub fn build(corpus: &[EvidenceDoc], field: IndexField, params: Bm25Params) -> Result<Self> {
        let docs = corpus
            .iter()
            .map(|d| Ok((d.id.clone(), field.evidence_text(d)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_texts(&docs, params)
    }

    fn rebuild_lookups(&mut self) -> Result<()> {
        self.vocab = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        self.doc_pos = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect();
        if self.doc_pos.len() != self.doc_ids.len() {
            return Err(Error::Artifact("duplicate document id in sparse index".into()));
        }
        let mut sq = vec![0.0f64; self.doc_ids.len()];
        for (term, plist) in self.postings.iter().enumerate() {
            let idf = self.tfidf_idf(term as u32);
            for &(doc, tf) in plist {
                let w = (1.0 + f64::from(tf).ln()) * idf;
                sq[doc as usize] += w * w;
            }
        }
        self.tfidf_norms = sq.into_iter().map(f64::sqrt).collect();
        Ok(())
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_length(&self, doc: &str) -> Option<u32> {
        self.doc_pos.get(doc).map(|&p| self.doc_lengths[p as usize])
    }

    /// Postings of `term` as `(doc id, tf)` pairs.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.vocab
            .get(term)
            .map(|&t| {
                self.postings[t as usize]
                    .iter()
                    .map(|&(d, tf)| (self.doc_ids[d as usize].as_str(), tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    fn doc_freq(&self, term: u32) -> usize {
        self.postings[term as usize].len()
    }

    fn tf(&self, term: u32, doc: u32) -> u32 {
        let plist = &self.postings[term as usize];
        plist
            .binary_search_by_key(&doc, |&(d, _)| d)
            .map_or(0, |i| plist[i].1)
    }

    fn position(&self, doc: &str) -> Result<u32> {
        self.doc_pos
            .get(doc)
            .copied()
            .ok_or_else(|| Error::UnknownDoc(doc.to_string()))
    }

    /// `ln((N - n + 0.5) / (n + 0.5) + 1)`
    pub fn bm25_idf(&self, term: &str) -> f64 {
        self.vocab.get(term).map_or(0.0, |&t| {
            let n = self.doc_count() as f64;
            let df = self.doc_freq(t) as f64;
            ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
        })
    }

    fn tfidf_idf(&self, term: u32) -> f64 {
        (self.doc_count() as f64 / self.doc_freq(term) as f64).ln()
    }

    fn bm25_term(&self, term: u32, doc: u32) -> f64 {
        let tf = self.tf(term, doc);
        if tf == 0 {
            return 0.0;
        }
        let tf = f64::from(tf);
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        let Bm25Params { k1, b } = self.params;
        let norm = 1.0 - b + b * f64::from(self.doc_lengths[doc as usize]) / self.avg_doc_length;
        idf * (tf * (k1 + 1.0)) / (tf + k1 * norm)
    }

    pub fn bm25_score(&self, query: &[String], doc: &str) -> Result<f64> {
        let pos = self.position(doc)?;
        let mut score = 0.0;
        for tok in query {
            if let Some(&t) = self.vocab.get(tok) {
                score += self.bm25_term(t, pos);
            }
        }
        Ok(score)
    }

    /// BM25 score of every document, in index order.
    pub fn bm25_all(&self, query: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_count()];
        for tok in query {
            if let Some(&t) = self.vocab.get(tok) {
                for &(doc, _) in &self.postings[t as usize] {
                    scores[doc as usize] += self.bm25_term(t, doc);
                }
            }
        }
        scores
    }

    /// Query term weights `(term id, (1 + ln tf) * idf)` plus the query norm.
    fn tfidf_query(&self, query: &[String]) -> (Vec<(u32, f64)>, f64) {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for tok in query {
            if let Some(&t) = self.vocab.get(tok) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let weights: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(t, tf)| (t, (1.0 + f64::from(tf).ln()) * self.tfidf_idf(t)))
            .collect();
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        (weights, norm)
    }

    /// Cosine between ltc-weighted query and document vectors.
    pub fn tfidf_score(&self, query: &[String], doc: &str) -> Result<f64> {
        let pos = self.position(doc)?;
        let (weights, qnorm) = self.tfidf_query(query);
        let dnorm = self.tfidf_norms[pos as usize];
        if qnorm == 0.0 || dnorm == 0.0 {
            return Ok(0.0);
        }
        let mut dot = 0.0;
        for &(t, qw) in &weights {
            let tf = self.tf(t, pos);
            if tf > 0 {
                dot += qw * (1.0 + f64::from(tf).ln()) * self.tfidf_idf(t);
            }
        }
        Ok(dot / (qnorm * dnorm))
    }

    pub fn tfidf_all(&self, query: &[String]) -> Vec<f64> {
        let (weights, qnorm) = self.tfidf_query(query);
        let mut dots = vec![0.0; self.doc_count()];
        if qnorm == 0.0 {
            return dots;
        }
        for &(t, qw) in &weights {
            let idf = self.tfidf_idf(t);
            for &(doc, tf) in &self.postings[t as usize] {
                dots[doc as usize] += qw * (1.0 + f64::from(tf).ln()) * idf;
            }
        }
        for (d, dot) in dots.iter_mut().enumerate() {
            let dnorm = self.tfidf_norms[d];
            *dot = if dnorm == 0.0 { 0.0 } else { *dot / (qnorm * dnorm) };
        }
        dots
    }

    pub fn rank_bm25(&self, query_id: &str, query: &[String], k: usize) -> RankedList {
        self.rank(query_id, self.bm25_all(query), k)
    }

    pub fn rank_tfidf(&self, query_id: &str, query: &[String], k: usize) -> RankedList {
        self.rank(query_id, self.tfidf_all(query), k)
    }

    fn rank(&self, query_id: &str, scores: Vec<f64>, k: usize) -> RankedList {
        let entries = self.doc_ids.iter().cloned().zip(scores).collect();
        let mut list = RankedList::from_scores(query_id, entries);
        list.truncate(k);
        list
    }

    /// Checks every structural invariant of a (possibly deserialized) index.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Artifact(format!("sparse index: {m}")));
        if self.version != INDEX_VERSION {
            return bad(&format!("unsupported version {}", self.version));
        }
        if self.doc_ids.is_empty() {
            return bad("no documents");
        }
        if self.doc_lengths.len() != self.doc_ids.len() || self.postings.len() != self.terms.len() {
            return bad("inconsistent table sizes");
        }
        let mut lengths = vec![0u64; self.doc_ids.len()];
        for plist in &self.postings {
            if plist.is_empty() || plist.windows(2).any(|w| w[0].0 >= w[1].0) {
                return bad("postings not strictly sorted");
            }
            for &(d, tf) in plist {
                if d as usize >= self.doc_ids.len() || tf == 0 {
                    return bad("posting references unknown document");
                }
                lengths[d as usize] += u64::from(tf);
            }
        }
        if lengths.iter().zip(&self.doc_lengths).any(|(a, &b)| *a != u64::from(b)) {
            return bad("document lengths disagree with postings");
        }
        let mean = lengths.iter().sum::<u64>() as f64 / lengths.len() as f64;
        if (mean - self.avg_doc_length).abs() > 1e-9 * mean.max(1.0) || mean <= 0.0 {
            return bad("average document length mismatch");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut index: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        index.validate()?;
        index.rebuild_lookups()?;
        Ok(index)
    }
}

/// Scored documents for one query, best first.
///
/// Scores are non-increasing; equal scores are ordered by ascending doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

pub(crate) fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl RankedList {
    /// Sorts `entries`; a repeated id keeps only its best-ranked entry.
    pub fn from_scores(query_id: impl Into<String>, mut entries: Vec<(String, f64)>) -> Self {
        entries.sort_by(rank_order);
        let mut seen = HashSet::new();
        entries.retain(|(id, _)| seen.insert(id.clone()));
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn is_well_formed(&self) -> bool {
        let unique = {
            let mut ids: Vec<&str> = self.ids().collect();
            ids.sort_unstable();
            ids.windows(2).all(|w| w[0] != w[1])
        };
        unique
            && self
                .entries
                .windows(2)
                .all(|w| rank_order(&w[0], &w[1]) == Ordering::Less)
    }
}

/// Borda-count fusion.
///
/// A document at 0-based rank `r` of a list earns `cutoff - r` points from
/// it (nothing at or beyond `cutoff`, nothing if absent).
pub fn fuse_rankings(lists: &[RankedList], cutoff: usize) -> Result<RankedList> {
    let Some(first) = lists.first() else {
        return Err(Error::Config("fuse_rankings needs at least one list".into()));
    };
    let mut points: HashMap<&str, f64> = HashMap::new();
    for list in lists {
        if list.query_id != first.query_id {
            return Err(Error::QueryMismatch(first.query_id.clone(), list.query_id.clone()));
        }
        for (rank, (id, _)) in list.entries.iter().enumerate() {
            let p = points.entry(id).or_default();
            *p += cutoff.saturating_sub(rank) as f64;
        }
    }
    let entries = points.into_iter().map(|(id, p)| (id.to_string(), p)).collect();
    let mut fused = RankedList::from_scores(first.query_id.clone(), entries);
    fused.truncate(cutoff);
    Ok(fused)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreselectParams {
    pub pages: usize,
    pub per_doc: usize,
}

impl Default for PreselectParams {
    fn default() -> Self {
        Self { pages: 150, per_doc: 30 }
    }
}

/// Page-level and unit-level indexes used to preselect candidate evidence.
///
/// Pages group evidence units (see [`EvidenceDoc::page_id`]); a page's text
/// is the concatenation of its units' texts.
#[derive(Debug, Clone)]
pub struct PageIndex {
    pub field: IndexField,
    pub pages: SparseIndex,
    pub units: SparseIndex,
    members: HashMap<String, Vec<String>>,
}

impl PageIndex {
    pub fn build(corpus: &[EvidenceDoc], field: IndexField, params: Bm25Params) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut members: HashMap<String, Vec<String>> = HashMap::new();
        let mut texts: HashMap<String, String> = HashMap::new();
        for doc in corpus {
            let page = doc.page_id().to_string();
            let text = field.evidence_text(doc)?;
            let entry = members.entry(page.clone()).or_insert_with(|| {
                order.push(page.clone());
                Vec::new()
            });
            entry.push(doc.id.clone());
            let buf = texts.entry(page).or_default();
            if !buf.is_empty() {
                buf.push(' ');
            }
            buf.push_str(&text);
        }
        let page_docs: Vec<(String, String)> = order
            .iter()
            .map(|p| (p.clone(), texts.remove(p).unwrap_or_default()))
            .collect();
        Ok(Self {
            field,
            pages: SparseIndex::from_texts(&page_docs, params)?,
            units: SparseIndex::build(corpus, field, params)?,
            members,
        })
    }

    /// Candidate evidence ids for one claim, in fused page order.
    pub fn preselect(&self, claim: &Claim, params: PreselectParams) -> Result<Vec<String>> {
        let query = tokenize(&self.field.claim_text(claim)?);
        self.preselect_tokens(&claim.id, &query, params)
    }

    pub fn preselect_tokens(&self, query_id: &str, query: &[String], params: PreselectParams) -> Result<Vec<String>> {
        if query.is_empty() || params.pages == 0 || params.per_doc == 0 {
            return Ok(Vec::new());
        }
        let tfidf = self.pages.rank_tfidf(query_id, query, params.pages);
        let bm25 = self.pages.rank_bm25(query_id, query, params.pages);
        let fused = fuse_rankings(&[tfidf, bm25], params.pages)?;

        let mut out: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for page in fused.ids() {
            let units = &self.members[page];
            let scored = units
                .iter()
                .map(|u| Ok((u.clone(), self.units.bm25_score(query, u)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut ranked = RankedList::from_scores(query_id, scored);
            ranked.truncate(params.per_doc);
            for (id, _) in ranked.entries {
                if seen.insert(id.clone()) {
                    out.push(id);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn index(texts: &[&str]) -> SparseIndex {
        let docs: Vec<(String, String)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("d{}", i + 1), t.to_string()))
            .collect();
        SparseIndex::from_texts(&docs, Bm25Params::default()).unwrap()
    }

    fn list(q: &str, ids: &[&str]) -> RankedList {
        RankedList {
            query_id: q.into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), (ids.len() - i) as f64))
                .collect(),
        }
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(toks("Alice met Bob!"), ["alice", "met", "bob"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("[Mask] met [Mask]"), ["mask", "met", "mask"]);
    }

    #[test]
    fn single_doc_index() {
        let idx = index(&["a b a"]);
        assert_eq!(idx.postings("a"), [("d1", 2)]);
        assert_eq!(idx.postings("b"), [("d1", 1)]);
        assert_eq!(idx.avg_doc_length(), 3.0);
        assert_eq!(idx.doc_count(), 1);
    }

    #[test]
    fn two_doc_index() {
        let idx = index(&["a", "a b"]);
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(idx.avg_doc_length(), 1.5);
    }

    #[test]
    fn three_doc_index_matches_hand_built() {
        let idx = index(&["x y x", "y z", "z z z w"]);
        let expect: &[(&str, &[(&str, u32)])] = &[
            ("x", &[("d1", 2)]),
            ("y", &[("d1", 1), ("d2", 1)]),
            ("z", &[("d2", 1), ("d3", 3)]),
            ("w", &[("d3", 1)]),
        ];
        assert_eq!(idx.vocabulary_size(), 4);
        for (term, plist) in expect {
            assert_eq!(idx.postings(term), *plist, "term {term}");
        }
        assert_eq!(idx.doc_length("d3"), Some(4));
        assert_eq!(idx.avg_doc_length(), 3.0);
        idx.validate().unwrap();
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            SparseIndex::from_texts(&[], Bm25Params::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn bm25_edge_cases() {
        let idx = index(&["a b", "b c", "c d"]);
        assert_eq!(idx.bm25_score(&toks("z"), "d1").unwrap(), 0.0);
        assert_eq!(idx.bm25_score(&[], "d1").unwrap(), 0.0);
        assert!(matches!(idx.bm25_score(&toks("a"), "nope"), Err(Error::UnknownDoc(_))));
    }

    #[test]
    fn bm25_hand_value() {
        // N=3, df(a)=1, |d1|=2, avgdl=2: idf = ln(2.5/1.5 + 1), tf part = 2.2/2.2 = 1
        let idx = index(&["a b", "b c", "c d"]);
        let expected = (2.5f64 / 1.5 + 1.0).ln();
        assert!((idx.bm25_score(&toks("a"), "d1").unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn tfidf_edge_cases() {
        let idx = index(&["a", "b", "c"]);
        assert!((idx.tfidf_score(&toks("a"), "d1").unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(idx.tfidf_score(&toks("b"), "d1").unwrap(), 0.0);
        // universal term has idf 0, so both vectors have zero norm
        let idx = index(&["a", "a b"]);
        assert_eq!(idx.tfidf_score(&toks("a"), "d1").unwrap(), 0.0);
    }

    #[test]
    fn tfidf_hand_value() {
        // d1 = "a a b", d2 = "b c", d3 = "c"; query "a b".
        // idf(a) = ln 3, idf(b) = ln 1.5, idf(c) = ln 1.5
        // q = (ln3, ln1.5); d1 = ((1+ln2) ln3, ln1.5)
        let idx = index(&["a a b", "b c", "c"]);
        let (l3, l15, l2) = (3f64.ln(), 1.5f64.ln(), 2f64.ln());
        let dot = l3 * (1.0 + l2) * l3 + l15 * l15;
        let qn = (l3 * l3 + l15 * l15).sqrt();
        let dn = ((1.0 + l2) * (1.0 + l2) * l3 * l3 + l15 * l15).sqrt();
        let got = idx.tfidf_score(&toks("a b"), "d1").unwrap();
        assert!((got - dot / (qn * dn)).abs() < 1e-14);
    }

    #[test]
    fn all_doc_scoring_matches_single() {
        let idx = index(&["a b a c", "b c", "c d e", "a e e"]);
        let q = toks("a c e e");
        let bm = idx.bm25_all(&q);
        let tf = idx.tfidf_all(&q);
        for (i, id) in idx.doc_ids().iter().enumerate() {
            assert_eq!(bm[i], idx.bm25_score(&q, id).unwrap());
            assert!((tf[i] - idx.tfidf_score(&q, id).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn fusion_examples() {
        let a = list("q", &["A", "B", "C"]);
        assert_eq!(fuse_rankings(&[a.clone(), a.clone()], 3).unwrap().ids().collect::<Vec<_>>(), ["A", "B", "C"]);

        let fused = fuse_rankings(&[list("q", &["A", "B"]), list("q", &["B", "A"])], 2).unwrap();
        assert_eq!(fused.entries, [("A".to_string(), 3.0), ("B".to_string(), 3.0)]);

        // hand tally with cutoff 4: A 4+2+3, B 3+4+1, C 2+3+4, D 1+1+2
        let fused = fuse_rankings(
            &[
                list("q", &["A", "B", "C", "D"]),
                list("q", &["B", "C", "A", "D"]),
                list("q", &["C", "A", "D", "B"]),
            ],
            4,
        )
        .unwrap();
        assert_eq!(
            fused.entries,
            [("A".into(), 9.0), ("C".into(), 9.0), ("B".into(), 8.0), ("D".into(), 4.0)]
        );

        assert!(matches!(
            fuse_rankings(&[list("q1", &["A"]), list("q2", &["A"])], 1),
            Err(Error::QueryMismatch(..))
        ));
    }

    #[test]
    fn single_list_fusion_truncates() {
        let l = list("q", &["A", "B", "C"]);
        let fused = fuse_rankings(std::slice::from_ref(&l), 2).unwrap();
        assert_eq!(fused.ids().collect::<Vec<_>>(), ["A", "B"]);
    }

    fn page_corpus() -> Vec<EvidenceDoc> {
        let mk = |id: &str, page: &str, text: &str| {
            let mut d = EvidenceDoc::text(id, text);
            d.page = Some(page.into());
            d
        };
        vec![
            mk("p1_1", "p1", "storm hits coast town"),
            mk("p1_2", "p1", "storm storm warning issued"),
            mk("p1_3", "p1", "town council meets"),
            mk("p2_1", "p2", "election results announced"),
            mk("p2_2", "p2", "storm delays election"),
            mk("p3_1", "p3", "football match report"),
        ]
    }

    fn claim(text: &str) -> Claim {
        Claim {
            id: "c".into(),
            raw_text: text.into(),
            summary: None,
        }
    }

    #[test]
    fn preselect_saturates_small_corpus() {
        let idx = PageIndex::build(&page_corpus(), IndexField::Raw, Bm25Params::default()).unwrap();
        let got = idx.preselect(&claim("storm"), PreselectParams::default()).unwrap();
        assert_eq!(got.len(), 6);
    }

    #[test]
    fn preselect_top_page_top_units() {
        let idx = PageIndex::build(&page_corpus(), IndexField::Raw, Bm25Params::default()).unwrap();
        let params = PreselectParams { pages: 1, per_doc: 2 };
        // p1 carries five "storm"/"town" hits and wins both page rankings.
        // Unit BM25 (N=6, avgdl=10/3): p1_1 = 0.640 + 0.952 = 1.592,
        // p1_3 = 1.074 (rarer "town", shorter doc), p1_2 = 0.902.
        let got = idx.preselect(&claim("storm town"), params).unwrap();
        assert_eq!(got, ["p1_1", "p1_3"]);
        assert!(idx.preselect(&claim("!!"), params).unwrap().is_empty());
    }
}
