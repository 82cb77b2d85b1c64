//! Two-stage retrieval: exhaustive cosine recall over a dense index of
//! evidence embeddings, then cross-scorer rerank of the recalled candidates.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::encoder::{dot, EncoderModel, Features};
use crate::error::{Error, Result};
use crate::event::{Claim, EvidenceDoc, ViewKind};
use crate::parallel;
use crate::sparse::RankedList;

/// Full-view embeddings of a corpus, one unit row per evidence id.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    dim: usize,
    matrix: Vec<f64>,
    fingerprint: String,
}

pub(crate) fn full_text(summary: Option<&crate::event::EventSummary>, id: &str) -> Result<String> {
    let s = summary.ok_or_else(|| Error::MissingSummary(id.to_string()))?;
    s.view(ViewKind::Full)
}

impl DenseIndex {
    pub fn build(model: &EncoderModel, corpus: &[EvidenceDoc]) -> Result<Self> {
        let features = corpus
            .iter()
            .map(|d| Ok(model.featurize(&full_text(d.summary.as_ref(), &d.id)?)))
            .collect::<Result<Vec<_>>>()?;
        let ids = corpus.iter().map(|d| d.id.clone()).collect();
        Ok(Self::from_features(model, ids, &features))
    }

    /// Builds from precomputed features (same order as `ids`).
    pub fn from_features(model: &EncoderModel, ids: Vec<String>, features: &[Features]) -> Self {
        assert_eq!(ids.len(), features.len());
        let rows = parallel::map(features, |f| model.encode_features(f).embedding.0);
        Self {
            ids,
            dim: model.embed_dim(),
            matrix: rows.concat(),
            fingerprint: model.fingerprint(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of `query` against every row, in index order.
    pub fn scores(&self, query: &[f64]) -> Vec<f64> {
        self.matrix.chunks_exact(self.dim).map(|row| dot(query, row)).collect()
    }

    // Layout, little-endian: magic "DACLRIDX" | u64 n | u64 d | u32 len +
    // fingerprint | n x (u32 len + id bytes) | f64 x n*d
    const MAGIC: &'static [u8; 8] = b"DACLRIDX";

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.matrix.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for s in std::iter::once(&self.fingerprint).chain(&self.ids) {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for x in &self.matrix {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Artifact(format!("dense index: {m}"));
        let take = |r: &mut &[u8], n: usize| -> Result<Vec<u8>> {
            if r.len() < n {
                return Err(bad("truncated"));
            }
            let (head, rest) = r.split_at(n);
            *r = rest;
            Ok(head.to_vec())
        };
        let mut r = bytes;
        if take(&mut r, 8)? != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let u64_at = |r: &mut &[u8]| -> Result<usize> {
            let b = take(r, 8)?;
            Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
        };
        let n = u64_at(&mut r)?;
        let dim = u64_at(&mut r)?;
        let mut strings = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            let len = u32::from_le_bytes(take(&mut r, 4)?.try_into().expect("4 bytes")) as usize;
            strings.push(String::from_utf8(take(&mut r, len)?).map_err(|_| bad("non-UTF-8 id"))?);
        }
        if Some(r.len()) != n.checked_mul(dim).and_then(|x| x.checked_mul(8)) {
            return Err(bad("matrix size does not match header"));
        }
        let matrix = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let fingerprint = strings.remove(0);
        Ok(Self {
            ids: strings,
            dim,
            matrix,
            fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Exact top-`p` by cosine.
    pub fn top(&self, query_id: &str, query: &[f64], p: usize) -> RankedList {
        let entries = self.ids.iter().cloned().zip(self.scores(query)).collect();
        let mut list = RankedList::from_scores(query_id, entries);
        list.truncate(p);
        list
    }
}

/// A model paired with a dense index built by that same model.
pub struct Retriever<'a> {
    model: &'a EncoderModel,
    index: &'a DenseIndex,
    evidence_text: HashMap<&'a str, String>,
}

impl<'a> Retriever<'a> {
    pub fn new(model: &'a EncoderModel, index: &'a DenseIndex, corpus: &'a [EvidenceDoc]) -> Result<Self> {
        if index.fingerprint != model.fingerprint() {
            return Err(Error::Artifact("dense index was built with a different model".into()));
        }
        let evidence_text = corpus
            .iter()
            .map(|d| Ok((d.id.as_str(), full_text(d.summary.as_ref(), &d.id)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            index,
            evidence_text,
        })
    }

    pub fn recall(&self, claim: &Claim, p: usize) -> Result<RankedList> {
        let n = self.index.len();
        if p == 0 || p > n {
            return Err(Error::InvalidP { p, n });
        }
        let query = self.model.encode(&full_text(claim.summary.as_ref(), &claim.id)?);
        Ok(self.index.top(&claim.id, &query.0, p))
    }

    pub fn rerank(&self, claim: &Claim, candidates: &RankedList, q: usize) -> Result<RankedList> {
        if q > candidates.len() {
            return Err(Error::InvalidQ {
                q,
                available: candidates.len(),
            });
        }
        let claim_text = full_text(claim.summary.as_ref(), &claim.id)?;
        let entries = candidates
            .ids()
            .map(|id| {
                let text = self
                    .evidence_text
                    .get(id)
                    .ok_or_else(|| Error::UnknownDoc(id.to_string()))?;
                Ok((id.to_string(), self.model.cross_score(&claim_text, text)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut list = RankedList::from_scores(claim.id.clone(), entries);
        list.truncate(q);
        Ok(list)
    }

    /// Recall top-`p`, rerank, keep top-`q`. Requires `q < p <= n`.
    pub fn retrieve(&self, claim: &Claim, p: usize, q: usize) -> Result<RankedList> {
        let n = self.index.len();
        if !(q < p && p <= n) || q == 0 {
            return Err(Error::InvalidStagePlan { q, p, n });
        }
        let recalled = self.recall(claim, p)?;
        self.rerank(claim, &recalled, q)
    }
}

/// Convenience wrappers matching the single-call shape of the retrieval API.
pub fn build_dense_index(model: &EncoderModel, corpus: &[EvidenceDoc]) -> Result<DenseIndex> {
    DenseIndex::build(model, corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Recall,
    Rerank,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Recall => "recall",
            Stage::Rerank => "rerank",
        }
    }
}

/// Writes TREC-style run lines `claim_id evidence_id rank score stage`.
pub fn write_run<W: Write>(out: &mut W, lists: &[RankedList], stage: Stage) -> Result<()> {
    for list in lists {
        for (rank, (id, score)) in list.entries.iter().enumerate() {
            writeln!(out, "{} {} {} {} {}", list.query_id, id, rank + 1, score, stage.as_str())?;
        }
    }
    Ok(())
}

pub fn save_run(path: &Path, lists: &[RankedList], stage: Stage) -> Result<()> {
    let mut buf = Vec::new();
    write_run(&mut buf, lists, stage)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventSummary;

    fn doc(id: &str, text: &str) -> EvidenceDoc {
        let mut d = EvidenceDoc::text(id, text);
        d.summary = Some(EventSummary::from_parts(text.into(), vec![], vec![]));
        d
    }

    fn claim(text: &str) -> Claim {
        Claim {
            id: "c1".into(),
            raw_text: text.into(),
            summary: Some(EventSummary::from_parts(text.into(), vec![], vec![])),
        }
    }

    fn corpus() -> Vec<EvidenceDoc> {
        vec![
            doc("e1", "storm hits the coast"),
            doc("e2", "election results announced"),
            doc("e3", "storm warning issued for coast"),
            doc("e4", "football match report"),
            doc("e5", "coast guard rescues sailors"),
        ]
    }

    #[test]
    fn single_doc_index_shape() {
        let m = EncoderModel::new(128, 4, 1).unwrap();
        let idx = DenseIndex::build(&m, &corpus()[..1]).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.row(0).len(), 4);
        assert_eq!(idx, DenseIndex::build(&m, &corpus()[..1]).unwrap());
    }

    #[test]
    fn bytes_round_trip() {
        let m = EncoderModel::new(128, 4, 1).unwrap();
        let idx = DenseIndex::build(&m, &corpus()).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(DenseIndex::from_bytes(&bytes).unwrap(), idx);
        assert!(DenseIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rows_match_individual_encodes() {
        let m = EncoderModel::new(128, 8, 2).unwrap();
        let c = corpus();
        let idx = DenseIndex::build(&m, &c).unwrap();
        for (i, d) in c.iter().enumerate() {
            assert_eq!(idx.row(i), m.encode(&d.raw_text).0.as_slice());
        }
    }

    #[test]
    fn missing_summary_is_reported() {
        let m = EncoderModel::new(64, 4, 1).unwrap();
        let mut c = corpus();
        c[2].summary = None;
        assert!(matches!(DenseIndex::build(&m, &c), Err(Error::MissingSummary(id)) if id == "e3"));
    }

    #[test]
    fn recall_self_match_and_bounds() {
        let m = EncoderModel::new(512, 16, 3).unwrap();
        let c = corpus();
        let idx = DenseIndex::build(&m, &c).unwrap();
        let r = Retriever::new(&m, &idx, &c).unwrap();
        let hit = r.recall(&claim("storm warning issued for coast"), 5).unwrap();
        assert_eq!(hit.entries[0].0, "e3");
        assert!((hit.entries[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(hit.len(), 5);
        assert!(matches!(r.recall(&claim("x"), 0), Err(Error::InvalidP { .. })));
        assert!(matches!(r.recall(&claim("x"), 6), Err(Error::InvalidP { .. })));
    }

    #[test]
    fn zero_head_rerank_is_id_order() {
        let mut m = EncoderModel::new(256, 8, 4).unwrap();
        m.head_weights_mut().iter_mut().for_each(|w| *w = 0.0);
        let c = corpus();
        let idx = DenseIndex::build(&m, &c).unwrap();
        let r = Retriever::new(&m, &idx, &c).unwrap();
        let cands = r.recall(&claim("storm coast"), 4).unwrap();
        let out = r.rerank(&claim("storm coast"), &cands, 4).unwrap();
        let mut ids: Vec<&str> = cands.ids().collect();
        ids.sort_unstable();
        assert_eq!(out.ids().collect::<Vec<_>>(), ids);
        assert!(matches!(r.rerank(&claim("x"), &cands, 5), Err(Error::InvalidQ { .. })));
    }

    #[test]
    fn stage_plan_is_checked() {
        let m = EncoderModel::new(256, 8, 4).unwrap();
        let c = corpus();
        let idx = DenseIndex::build(&m, &c).unwrap();
        let r = Retriever::new(&m, &idx, &c).unwrap();
        for (p, q) in [(3, 3), (6, 2), (2, 0)] {
            assert!(matches!(
                r.retrieve(&claim("storm"), p, q),
                Err(Error::InvalidStagePlan { .. })
            ));
        }
        assert_eq!(r.retrieve(&claim("storm"), 5, 1).unwrap().len(), 1);
    }

    #[test]
    fn foreign_index_is_rejected() {
        let m1 = EncoderModel::new(64, 4, 1).unwrap();
        let m2 = EncoderModel::new(64, 4, 2).unwrap();
        let c = corpus();
        let idx = DenseIndex::build(&m1, &c).unwrap();
        assert!(Retriever::new(&m2, &idx, &c).is_err());
    }

    #[test]
    fn run_lines() {
        let list = RankedList {
            query_id: "c1".into(),
            entries: vec![("e2".into(), 0.5), ("e1".into(), 0.25)],
        };
        let mut buf = Vec::new();
        write_run(&mut buf, &[list], Stage::Rerank).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "c1 e2 1 0.5 rerank\nc1 e1 2 0.25 rerank\n");
    }
}
