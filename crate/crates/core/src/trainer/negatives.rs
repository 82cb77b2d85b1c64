//! The three negative pools and per-claim allocation between them.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{dot, Embedding};
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::parallel;
use crate::sparse::{fuse_rankings, tokenize, Bm25Params, IndexField, RankedList, SparseIndex};
use crate::event::{Claim, EvidenceDoc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativePools {
    /// Every evidence id, sorted.
    pub d_rand: Vec<String>,
    /// Fused TF-IDF/BM25 neighbours per claim, best first.
    pub d_tb: BTreeMap<String, Vec<String>>,
    /// Model-mined neighbours per claim, best first.
    pub d_model: BTreeMap<String, Vec<String>>,
    pub k: usize,
}

/// Provenance of one allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub ids: Vec<String>,
    pub n_rand: usize,
    pub n_tb: usize,
    pub n_model: usize,
}

/// Requested split of `k` negatives for a given `p_dyn`.
pub fn split_counts(k: usize, p_dyn: f64) -> (usize, usize, usize) {
    let n_model = ((k as f64 * p_dyn).floor() as usize).min(k);
    let fixed = k - n_model;
    let n_rand = fixed / 2;
    (n_rand, fixed - n_rand, n_model)
}

impl NegativePools {
    /// `d_rand` from the corpus, `d_tb` from fused sparse rankings of each
    /// claim's full view (top `depth`), `d_model` empty.
    pub fn build(claims: &[Claim], corpus: &[EvidenceDoc], qrels: &Qrels, k: usize, depth: usize) -> Result<Self> {
        let index = SparseIndex::build(corpus, IndexField::Full, Bm25Params::default())?;
        let queries = claims
            .iter()
            .map(|c| Ok((c.id.as_str(), tokenize(&IndexField::Full.claim_text(c)?))))
            .collect::<Result<Vec<_>>>()?;
        let lists = parallel::map(&queries, |(id, q)| {
            let lists = [index.rank_tfidf(id, q, depth), index.rank_bm25(id, q, depth)];
            fuse_rankings(&lists, depth).map(|fused| strip_gold(fused, qrels))
        });
        let mut d_tb = BTreeMap::new();
        for ((id, _), list) in queries.iter().zip(lists) {
            d_tb.insert(id.to_string(), list?);
        }
        let mut d_rand: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
        d_rand.sort_unstable();
        Ok(Self {
            d_rand,
            d_tb,
            d_model: BTreeMap::new(),
            k,
        })
    }

    /// Draws `k` distinct non-gold negatives: `floor(k * p_dyn)` from the head
    /// of `d_model`, the rest split between a random draw and the head of
    /// `d_tb` (odd one to `d_tb`). Shortfalls are filled from `d_rand`.
    pub fn allocate<R: Rng>(&self, claim: &str, gold: &BTreeSet<String>, p_dyn: f64, rng: &mut R) -> Result<Allocation> {
        let (want_rand, want_tb, want_model) = split_counts(self.k, p_dyn);
        let mut taken: HashSet<&str> = HashSet::new();
        let mut ids = Vec::with_capacity(self.k);
        let n_model = take_head(self.d_model.get(claim), gold, want_model, &mut taken, &mut ids);
        let n_tb = take_head(self.d_tb.get(claim), gold, want_tb, &mut taken, &mut ids);

        let need = self.k - n_model - n_tb;
        debug_assert!(need >= want_rand);
        let free: Vec<&String> = self
            .d_rand
            .iter()
            .filter(|id| !gold.contains(*id) && !taken.contains(id.as_str()))
            .collect();
        if free.len() < need {
            return Err(Error::InsufficientNegatives {
                claim: claim.to_string(),
                available: ids.len() + free.len(),
                needed: self.k,
            });
        }
        ids.extend(index::sample(rng, free.len(), need).into_iter().map(|i| free[i].clone()));
        Ok(Allocation {
            ids,
            n_rand: need,
            n_tb,
            n_model,
        })
    }

    /// Only random negatives, for the ablation without hard pools.
    pub fn allocate_random<R: Rng>(&self, claim: &str, gold: &BTreeSet<String>, rng: &mut R) -> Result<Allocation> {
        let free: Vec<&String> = self.d_rand.iter().filter(|id| !gold.contains(*id)).collect();
        if free.len() < self.k {
            return Err(Error::InsufficientNegatives {
                claim: claim.to_string(),
                available: free.len(),
                needed: self.k,
            });
        }
        Ok(Allocation {
            ids: index::sample(rng, free.len(), self.k)
                .into_iter()
                .map(|i| free[i].clone())
                .collect(),
            n_rand: self.k,
            n_tb: 0,
            n_model: 0,
        })
    }
}

/// Appends up to `want` unseen non-gold ids from the head of `list`.
fn take_head<'a>(
    list: Option<&'a Vec<String>>,
    gold: &BTreeSet<String>,
    want: usize,
    taken: &mut HashSet<&'a str>,
    ids: &mut Vec<String>,
) -> usize {
    let mut n = 0;
    for id in list.into_iter().flatten() {
        if n == want {
            break;
        }
        if !gold.contains(id) && taken.insert(id.as_str()) {
            ids.push(id.clone());
            n += 1;
        }
    }
    n
}

fn strip_gold(list: RankedList, qrels: &Qrels) -> Vec<String> {
    let gold = qrels.relevant(&list.query_id);
    list.entries
        .into_iter()
        .map(|(id, _)| id)
        .filter(|id| !gold.is_some_and(|g| g.contains(id)))
        .collect()
}

/// Top-`m` non-gold evidence ids per claim by cosine, best first.
///
/// `corpus` rows and `ids` are parallel; the result fully replaces any
/// previous `d_model` entries for these claims.
pub fn mine_hard_negatives(
    claims: &[(&str, Embedding)],
    ids: &[String],
    corpus: &[Embedding],
    qrels: &Qrels,
    m: usize,
) -> BTreeMap<String, Vec<String>> {
    let lists = parallel::map(claims, |(claim, q)| {
        let gold = qrels.relevant(claim);
        let entries = ids
            .iter()
            .zip(corpus)
            .filter(|(id, _)| !gold.is_some_and(|g| g.contains(*id)))
            .map(|(id, e)| (id.clone(), dot(&q.0, &e.0)))
            .collect();
        let mut list = RankedList::from_scores(*claim, entries);
        list.truncate(m);
        list.entries.into_iter().map(|(id, _)| id).collect::<Vec<_>>()
    });
    claims.iter().map(|(c, _)| c.to_string()).zip(lists).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pools(k: usize) -> NegativePools {
        let ids: Vec<String> = (0..40).map(|i| format!("e{i:02}")).collect();
        let mut d_tb = BTreeMap::new();
        d_tb.insert("c".to_string(), ids[..20].to_vec());
        let mut d_model = BTreeMap::new();
        d_model.insert("c".to_string(), ids[20..].to_vec());
        NegativePools {
            d_rand: ids,
            d_tb,
            d_model,
            k,
        }
    }

    fn gold() -> BTreeSet<String> {
        ["e00".to_string(), "e20".to_string()].into()
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_counts(16, 0.5), (4, 4, 8));
        assert_eq!(split_counts(16, 0.0), (8, 8, 0));
        assert_eq!(split_counts(10, 0.33), (3, 4, 3));
    }

    #[test]
    fn allocation_is_exact_and_clean() {
        let p = pools(16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p_dyn in [0.0, 0.1, 0.5, 0.9, 1.0 - 1e-9] {
            let a = p.allocate("c", &gold(), p_dyn, &mut rng).unwrap();
            assert_eq!(a.ids.len(), 16);
            assert_eq!(a.n_rand + a.n_tb + a.n_model, 16);
            assert!(a.ids.iter().all(|id| !gold().contains(id)));
            let uniq: HashSet<_> = a.ids.iter().collect();
            assert_eq!(uniq.len(), 16);
        }
        let a = p.allocate("c", &gold(), 0.5, &mut rng).unwrap();
        assert_eq!(a.ids[..8], ["e21", "e22", "e23", "e24", "e25", "e26", "e27", "e28"]);
        assert_eq!(a.ids[8..12], ["e01", "e02", "e03", "e04"]);
        assert_eq!((a.n_model, a.n_tb, a.n_rand), (8, 4, 4));
    }

    #[test]
    fn empty_model_pool_backfills_from_random() {
        let mut p = pools(16);
        p.d_model.clear();
        let a = p.allocate("c", &gold(), 0.75, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((a.n_model, a.n_tb, a.n_rand), (0, 2, 14));
    }

    #[test]
    fn insufficient_negatives() {
        let p = pools(39);
        let e = p.allocate("c", &gold(), 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(e, Error::InsufficientNegatives { available: 38, needed: 39, .. }));
    }

    #[test]
    fn same_rng_same_allocation() {
        let p = pools(16);
        let a = p.allocate("c", &gold(), 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = p.allocate("c", &gold(), 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mining_excludes_gold_and_sorts() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let rows = vec![Embedding(vec![1.0, 0.0]), Embedding(vec![0.6, 0.8]), Embedding(vec![0.8, 0.6])];
        let mut q = Qrels::default();
        q.insert("x", "a");
        let out = mine_hard_negatives(&[("x", Embedding(vec![1.0, 0.0]))], &ids, &rows, &q, 5);
        assert_eq!(out["x"], ["c", "b"]);

        let mut only_gold = Qrels::default();
        for id in &ids {
            only_gold.insert("x", id.clone());
        }
        let out = mine_hard_negatives(&[("x", Embedding(vec![1.0, 0.0]))], &ids, &rows, &only_gold, 5);
        assert!(out["x"].is_empty());
    }
}
