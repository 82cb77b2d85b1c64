use std::collections::BTreeSet;

use proptest::prelude::*;

use daclr_core::eval::{mrr_at_k, ndcg_at_k, recall_at_k};
use daclr_core::event::{is_valid, mask_structure, EventSummary, MASK};
use daclr_core::sparse::{fuse_rankings, tokenize, RankedList};
use daclr_core::summarizer::fallback_extract;
use daclr_core::trainer::{info_nce, info_nce_grad, schedule, split_counts, update_ema};

fn ranking(ids: Vec<u8>) -> RankedList {
    let entries = ids.iter().enumerate().map(|(i, id)| (format!("d{id}"), -(i as f64))).collect();
    RankedList::from_scores("q", entries)
}

proptest! {
    #[test]
    fn info_nce_is_nonnegative_and_gradients_balance(
        pos in -1.0f64..1.0,
        negs in prop::collection::vec(-1.0f64..1.0, 1..20),
        tau in 0.01f64..2.0,
    ) {
        let (loss, d_pos, d_neg) = info_nce_grad(pos, &negs, tau);
        prop_assert!(loss >= 0.0 && loss.is_finite());
        prop_assert_eq!(loss, info_nce(pos, &negs, tau));
        // softmax probabilities sum to one
        let total = d_pos + d_neg.iter().sum::<f64>();
        prop_assert!(total.abs() * tau < 1e-12);
        prop_assert!(d_pos <= 0.0 && d_neg.iter().all(|g| *g >= 0.0));
    }

    #[test]
    fn schedule_stays_in_open_interval(ema in -5.0f64..5.0, mid in -5.0f64..5.0, tau in 1e-3f64..10.0) {
        let (p, beta) = schedule(ema, mid, tau);
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert_eq!(p + beta, 1.0);
    }

    #[test]
    fn ema_between_inputs(prev in -10.0f64..10.0, x in -10.0f64..10.0) {
        let e = update_ema(prev, x);
        prop_assert!(e >= prev.min(x) && e <= prev.max(x));
    }

    #[test]
    fn split_counts_sum_to_k(k in 0usize..200, p in 0.0f64..=1.0) {
        let (r, tb, m) = split_counts(k, p);
        prop_assert_eq!(r + tb + m, k);
    }

    #[test]
    fn metrics_are_bounded(
        ids in prop::collection::vec(0u8..40, 0..40),
        rel in prop::collection::btree_set(0u8..40, 0..6),
        k in 1usize..50,
    ) {
        let list = ranking(ids);
        let rel: BTreeSet<String> = rel.into_iter().map(|r| format!("d{r}")).collect();
        for v in [recall_at_k(&list, &rel, k), mrr_at_k(&list, &rel, k), ndcg_at_k(&list, &rel, k)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(recall_at_k(&list, &rel, k) <= recall_at_k(&list, &rel, k + 1));
    }

    #[test]
    fn fusion_is_well_formed(
        lists in prop::collection::vec(prop::collection::vec(0u8..30, 0..15), 1..5),
        cutoff in 1usize..20,
    ) {
        let lists: Vec<RankedList> = lists.into_iter().map(ranking).collect();
        let fused = fuse_rankings(&lists, cutoff).unwrap();
        prop_assert!(fused.is_well_formed());
        prop_assert!(fused.len() <= cutoff);
        let seen: BTreeSet<&str> = lists.iter().flat_map(|l| l.ids()).collect();
        prop_assert!(fused.ids().all(|id| seen.contains(id)));
    }

    #[test]
    fn masking_is_idempotent(
        words in prop::collection::vec("[A-Za-z0-9]{1,6}", 1..12),
        picks in prop::collection::vec(0usize..12, 0..4),
    ) {
        let summary = words.join(" ");
        let mut spans: Vec<String> = picks.iter().map(|&i| words[i % words.len()].clone()).collect();
        spans.sort();
        spans.dedup();
        let once = mask_structure(&summary, &spans, &[]);
        prop_assert_eq!(mask_structure(&once, &spans, &[]), once.clone());
        let s = EventSummary { summary, participants: spans, attributes: vec![], structure: once };
        prop_assert!(is_valid(&s));
    }

    #[test]
    fn fallback_always_valid(text in "[A-Za-z0-9 ,.\\[\\]]{1,60}") {
        if let Ok(s) = fallback_extract(&text) {
            prop_assert!(is_valid(&s));
            prop_assert!(tokenize(&s.structure).iter().all(|t| !t.is_empty()));
            prop_assert!(s.structure.matches(MASK).count() >= s.summary.matches(MASK).count());
        }
    }
}
