//! Filtered link-prediction ranking, MRR and Hits@N.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{egt_distance, transform_into, ComplexVector, EgtKind, NormOrder};
use crate::kgdata::{KnowledgeGraph, Side, Triple};
use crate::model::{AttentionState, EmbeddingState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub triple: Triple,
    pub side: Side,
    /// Filtered rank, ties resolved to the mean position rounded half up.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub n_queries: usize,
}

impl MetricsReport {
    pub const TSV_HEADER: &'static str = "variant\tphase\tdim\tmrr_x1000\th1\th3\th10\tn_queries";

    pub fn hits_at(&self, n: usize) -> Option<f64> {
        match n {
            1 => Some(self.hits_at_1),
            3 => Some(self.hits_at_3),
            10 => Some(self.hits_at_10),
            _ => None,
        }
    }

    /// One TSV data row; MRR scaled by 1000 and hits as percentages, written
    /// at full precision.
    pub fn tsv_row(&self, variant: &str, phase: &str, dim: usize) -> String {
        format!(
            "{variant}\t{phase}\t{dim}\t{}\t{}\t{}\t{}\t{}",
            self.mrr * 1000.0,
            self.hits_at_1 * 100.0,
            self.hits_at_3 * 100.0,
            self.hits_at_10 * 100.0,
            self.n_queries
        )
    }
}

/// Scores of `(anchor, relation, e)` (side = Tail) or `(e, relation, anchor)`
/// (side = Head) for every entity `e`.
///
/// Produces exactly the values [`crate::model::score_triple`] would.
pub fn score_candidates(
    state: &EmbeddingState,
    att: &AttentionState,
    anchor: usize,
    relation: usize,
    side: Side,
    p: NormOrder,
) -> Vec<f64> {
    let weights = att.effective_weights(relation);
    let active: Vec<EgtKind> = EgtKind::ALL
        .into_iter()
        .filter(|k| weights[k.index()] != 0.0)
        .collect();
    let n = state.num_entities;
    let mut scores = vec![0.0; n];
    match side {
        Side::Tail => {
            let h = state.entity(anchor);
            let heads: Vec<(f64, ComplexVector)> = active
                .iter()
                .map(|&kind| {
                    let mut x = ComplexVector::zeros(state.dim);
                    transform_into(state.egt_params(relation, kind), h, &mut x.re, &mut x.im);
                    (weights[kind.index()], x)
                })
                .collect();
            for (e, score) in scores.iter_mut().enumerate() {
                let t = state.entity(e);
                let mut total = 0.0;
                for (w, x) in &heads {
                    total += w * egt_distance(x.as_slice(), t, p);
                }
                *score = -total;
            }
        }
        Side::Head => {
            let t = state.entity(anchor);
            let mut x = ComplexVector::zeros(state.dim);
            for (e, score) in scores.iter_mut().enumerate() {
                let h = state.entity(e);
                let mut total = 0.0;
                for &kind in &active {
                    transform_into(state.egt_params(relation, kind), h, &mut x.re, &mut x.im);
                    total += weights[kind.index()] * egt_distance(x.as_slice(), t, p);
                }
                *score = -total;
            }
        }
    }
    scores
}

/// Filtered rank of the true entity on `side` of `triple`.
///
/// Every entity known true in any split is dropped from the candidate list
/// except the answer itself. With `g` candidates strictly above the answer
/// and `q` tied with it, the rank is `1 + g + ceil(q / 2)`.
pub fn rank_query(
    state: &EmbeddingState,
    att: &AttentionState,
    kg: &KnowledgeGraph,
    triple: &Triple,
    side: Side,
    p: NormOrder,
) -> RankResult {
    let (anchor, answer) = match side {
        Side::Tail => (triple.head, triple.tail),
        Side::Head => (triple.tail, triple.head),
    };
    let scores = score_candidates(state, att, anchor, triple.relation, side, p);
    let known = kg.filtered_candidates(anchor, triple.relation, side);
    let target = scores[answer];
    let mut greater = 0usize;
    let mut equal = 0usize;
    let mut known_iter = known.iter().peekable();
    for (e, &score) in scores.iter().enumerate() {
        while known_iter.next_if(|&&k| k < e).is_some() {}
        if known_iter.peek() == Some(&&e) || e == answer {
            continue;
        }
        if score > target {
            greater += 1;
        } else if score == target {
            equal += 1;
        }
    }
    RankResult {
        triple: *triple,
        side,
        rank: 1 + greater + equal.div_ceil(2),
    }
}

/// Ranks for both the head and the tail query of every triple, in order.
pub fn rank_all(
    state: &EmbeddingState,
    att: &AttentionState,
    kg: &KnowledgeGraph,
    triples: &[Triple],
    p: NormOrder,
) -> Vec<RankResult> {
    triples
        .par_iter()
        .flat_map_iter(|t| Side::BOTH.map(|side| rank_query(state, att, kg, t, side, p)))
        .collect()
}

pub fn compute_metrics(ranks: &[RankResult]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::Data("cannot compute metrics over zero queries".into()));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / n;
    let hits = |k: usize| ranks.iter().filter(|r| r.rank <= k).count() as f64 / n;
    Ok(MetricsReport {
        mrr,
        hits_at_1: hits(1),
        hits_at_3: hits(3),
        hits_at_10: hits(10),
        n_queries: ranks.len(),
    })
}

/// Filtered metrics over `triples`, two queries per triple.
pub fn evaluate(
    state: &EmbeddingState,
    att: &AttentionState,
    kg: &KnowledgeGraph,
    triples: &[Triple],
    p: NormOrder,
) -> Result<MetricsReport> {
    compute_metrics(&rank_all(state, att, kg, triples, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EgtOrder;
    use crate::model::{init_state, score_triple, AttentionMode, ModelConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ranks(values: &[usize]) -> Vec<RankResult> {
        values
            .iter()
            .map(|&rank| RankResult { triple: Triple::new(0, 0, 0), side: Side::Tail, rank })
            .collect()
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&ranks(&[1, 2, 4])).unwrap();
        assert_abs_diff_eq!(m.mrr, 1.75 / 3.0, epsilon = 1e-15);
        assert_eq!((m.mrr * 1000.0).round(), 583.0);
        let m = compute_metrics(&ranks(&[1, 5, 20])).unwrap();
        assert_abs_diff_eq!(m.hits_at_10, 2.0 / 3.0);
        assert_abs_diff_eq!(m.hits_at_1, 1.0 / 3.0);
        let m = compute_metrics(&ranks(&[1, 1, 1])).unwrap();
        assert_eq!((m.mrr, m.hits_at_1, m.hits_at_3, m.hits_at_10), (1.0, 1.0, 1.0, 1.0));
        assert!(compute_metrics(&[]).is_err());
    }

    fn toy() -> (KnowledgeGraph, EmbeddingState, AttentionState) {
        let kg = KnowledgeGraph::from_ids(
            5,
            1,
            vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)],
            vec![Triple::new(3, 0, 4)],
            vec![Triple::new(0, 0, 3)],
        )
        .unwrap();
        let config = ModelConfig { dim: 4, ..Default::default() };
        let (state, att) = init_state(5, 1, &config, &mut ChaCha8Rng::seed_from_u64(3));
        (kg, state, att)
    }

    #[test]
    fn candidate_scores_equal_score_triple() {
        let (_, state, att) = toy();
        for side in Side::BOTH {
            let scores = score_candidates(&state, &att, 2, 0, side, NormOrder::L2);
            for (e, score) in scores.iter().enumerate() {
                let t = match side {
                    Side::Tail => Triple::new(2, 0, e),
                    Side::Head => Triple::new(e, 0, 2),
                };
                assert_eq!(score.to_bits(), score_triple(&state, &att, &t, NormOrder::L2).to_bits());
            }
        }
    }

    #[test]
    fn best_score_ranks_first() {
        let (kg, mut state, att) = toy();
        for e in [1, 2, 4] {
            let far = ComplexVector::new(vec![50.0; 4], vec![50.0; 4]);
            state.set_entity(e, far.as_slice());
        }
        let r = rank_query(&state, &att, &kg, &Triple::new(0, 0, 3), Side::Tail, NormOrder::L2);
        // 0 itself is the only unfiltered competitor
        let s0 = score_triple(&state, &att, &Triple::new(0, 0, 0), NormOrder::L2);
        let s3 = score_triple(&state, &att, &Triple::new(0, 0, 3), NormOrder::L2);
        assert_eq!(r.rank, if s0 > s3 { 2 } else { 1 });
    }

    #[test]
    fn all_tied_candidates() {
        let (kg, mut state, att) = toy();
        let same = ComplexVector::new(vec![0.3; 4], vec![-0.1; 4]);
        for e in 0..5 {
            state.set_entity(e, same.as_slice());
        }
        // tail query (0, 0, ?3): 1 and 2 filtered; candidates {0, 3, 4} -> k = 3
        let r = rank_query(&state, &att, &kg, &Triple::new(0, 0, 3), Side::Tail, NormOrder::L2);
        assert_eq!(r.rank, 2);
        // head query (?0, 0, 3): nothing else filtered; k = 5 -> 1 + ceil(4/2) = 3
        let r = rank_query(&state, &att, &kg, &Triple::new(0, 0, 3), Side::Head, NormOrder::L2);
        assert_eq!(r.rank, 3);
        // single tied competitor rounds half up
        let kg2 = KnowledgeGraph::from_ids(2, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]).unwrap();
        let mut pair = EmbeddingState::zeros(2, 1, 4);
        for e in 0..2 {
            pair.set_entity(e, same.as_slice());
        }
        pair.rot_theta.fill(0.0);
        let r = rank_query(&pair, &att, &kg2, &Triple::new(0, 0, 1), Side::Head, NormOrder::L2);
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn frozen_mode_skips_pruned_egts() {
        let (kg, state, mut att) = toy();
        att.mode = AttentionMode::Frozen;
        att.frozen_mask = vec![[false, false, true, false]];
        att.egt_order = EgtOrder::DEFAULT;
        let m = evaluate(&state, &att, &kg, kg.test(), NormOrder::L1).unwrap();
        assert_eq!(m.n_queries, 2);
    }

    proptest! {
        #[test]
        fn metrics_ignore_order(mut values in prop::collection::vec(1usize..100, 1..40), seed in any::<u64>()) {
            let a = compute_metrics(&ranks(&values)).unwrap();
            use rand::seq::SliceRandom;
            values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = compute_metrics(&ranks(&values)).unwrap();
            prop_assert!((a.mrr - b.mrr).abs() < 1e-12);
            prop_assert_eq!((a.hits_at_1, a.hits_at_3, a.hits_at_10), (b.hits_at_1, b.hits_at_3, b.hits_at_10));
            prop_assert!(a.hits_at_1 <= a.hits_at_3 && a.hits_at_3 <= a.hits_at_10);
        }

        #[test]
        fn improving_the_answer_never_worsens_rank(step in 0.0f64..1.0) {
            let (kg, mut state, att) = toy();
            let q = Triple::new(0, 0, 3);
            let before = rank_query(&state, &att, &kg, &q, Side::Tail, NormOrder::L2).rank;
            // only the answer moves, so every competitor keeps its score
            let target = crate::geometry::apply_translation(
                match state.egt_params(0, EgtKind::Trans) {
                    crate::geometry::EgtParams::Trans(u) => u,
                    _ => unreachable!(),
                },
                state.entity(0),
            );
            let cur = state.entity(3).to_vector();
            let moved = ComplexVector::new(
                cur.re.iter().zip(&target.re).map(|(a, b)| a + step * (b - a)).collect(),
                cur.im.iter().zip(&target.im).map(|(a, b)| a + step * (b - a)).collect(),
            );
            let old_score = score_triple(&state, &att, &q, NormOrder::L2);
            state.set_entity(3, moved.as_slice());
            let new_score = score_triple(&state, &att, &q, NormOrder::L2);
            let after = rank_query(&state, &att, &kg, &q, Side::Tail, NormOrder::L2).rank;
            if new_score >= old_score {
                prop_assert!(after <= before);
            }
        }
    }
}
