use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::sampling::Batch;
use crate::error::{Error, Result};
use crate::geometry::{egt_gradients_into, EgtGradients, EgtKind, NormOrder};
use crate::kgdata::Triple;
use crate::model::{AttentionMode, AttentionState, EmbeddingState, ModelConfig};

/// Positives handled by one parallel work item. Fixed so that the reduction
/// order, and therefore every bit of the result, is independent of the
/// number of threads.
const CHUNK: usize = 8;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x)
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Sparse gradient of the loss, keyed by row.
///
/// Entity and translation rows hold `[re_0..re_{d-1}, im_0..im_{d-1}]`; the
/// angle and scaling rows hold `d` entries. Logit rows use canonical column
/// order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub entity: BTreeMap<usize, Vec<f64>>,
    pub trans: BTreeMap<usize, Vec<f64>>,
    pub rot: BTreeMap<usize, Vec<f64>>,
    pub refl: BTreeMap<usize, Vec<f64>>,
    pub scal: BTreeMap<usize, Vec<f64>>,
    pub logits: BTreeMap<usize, [f64; 4]>,
}

fn row(map: &mut BTreeMap<usize, Vec<f64>>, key: usize, len: usize) -> &mut [f64] {
    map.entry(key).or_insert_with(|| vec![0.0; len])
}

fn merge_map(into: &mut BTreeMap<usize, Vec<f64>>, from: BTreeMap<usize, Vec<f64>>) {
    for (k, v) in from {
        match into.get_mut(&k) {
            Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
            None => {
                into.insert(k, v);
            }
        }
    }
}

impl Gradients {
    /// The bank holding the relation parameters of `kind`.
    pub fn bank(&self, kind: EgtKind) -> &BTreeMap<usize, Vec<f64>> {
        match kind {
            EgtKind::Trans => &self.trans,
            EgtKind::Rot => &self.rot,
            EgtKind::Ref => &self.refl,
            EgtKind::Scal => &self.scal,
        }
    }

    fn bank_mut(&mut self, kind: EgtKind) -> &mut BTreeMap<usize, Vec<f64>> {
        match kind {
            EgtKind::Trans => &mut self.trans,
            EgtKind::Rot => &mut self.rot,
            EgtKind::Ref => &mut self.refl,
            EgtKind::Scal => &mut self.scal,
        }
    }

    /// Add `other` into `self` row by row.
    pub fn merge(&mut self, other: Gradients) {
        merge_map(&mut self.entity, other.entity);
        merge_map(&mut self.trans, other.trans);
        merge_map(&mut self.rot, other.rot);
        merge_map(&mut self.refl, other.refl);
        merge_map(&mut self.scal, other.scal);
        for (k, v) in other.logits {
            let acc = self.logits.entry(k).or_insert([0.0; 4]);
            for c in 0..4 {
                acc[c] += v[c];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.entity, &self.trans, &self.rot, &self.refl, &self.scal]
            .iter()
            .all(|m| m.values().all(|v| v.iter().all(|x| x.is_finite())))
            && self.logits.values().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Per-EGT distances of one triple, zero where the EGT is inactive.
fn distances(
    state: &EmbeddingState,
    weights: &[f64; 4],
    triple: &Triple,
    p: NormOrder,
    buf: &mut [EgtGradients; 4],
) -> [f64; 4] {
    let mut out = [0.0; 4];
    let h = state.entity(triple.head);
    let t = state.entity(triple.tail);
    for kind in EgtKind::ALL {
        let i = kind.index();
        if weights[i] == 0.0 {
            continue;
        }
        egt_gradients_into(state.egt_params(triple.relation, kind), h, t, p, &mut buf[i]);
        out[i] = buf[i].distance;
    }
    out
}

fn combine(weights: &[f64; 4], dist: &[f64; 4]) -> f64 {
    let mut total = 0.0;
    for i in 0..4 {
        if weights[i] != 0.0 {
            total += weights[i] * dist[i];
        }
    }
    -total
}

/// Chain `coef = ∂L/∂Δ` through every active EGT of `triple`. `buf` must hold
/// the per-EGT gradients of this triple.
#[allow(clippy::too_many_arguments)]
fn backprop(
    state: &EmbeddingState,
    weights: &[f64; 4],
    adaptive: bool,
    triple: &Triple,
    dist: &[f64; 4],
    score: f64,
    coef: f64,
    buf: &[EgtGradients; 4],
    grads: &mut Gradients,
) {
    let d = state.dim;
    for kind in EgtKind::ALL {
        let i = kind.index();
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let g = &buf[i];
        let scale = -coef * w;
        let rel = row(grads.bank_mut(kind), triple.relation, g.rel.len());
        rel.iter_mut().zip(&g.rel).for_each(|(a, b)| *a += scale * b);
        for (entity, part) in [(triple.head, &g.h), (triple.tail, &g.t)] {
            let e = row(&mut grads.entity, entity, 2 * d);
            for k in 0..d {
                e[k] += scale * part.re[k];
                e[d + k] += scale * part.im[k];
            }
        }
    }
    if adaptive {
        // ∂Δ/∂l_τ = ω_τ (-D_τ - Δ)
        let acc = grads.logits.entry(triple.relation).or_insert([0.0; 4]);
        for i in 0..4 {
            acc[i] += coef * weights[i] * (-dist[i] - score);
        }
    }
}

/// Loss contribution of one positive and its negatives, accumulating
/// gradients into `grads`.
fn positive_term(
    state: &EmbeddingState,
    att: &AttentionState,
    config: &ModelConfig,
    positive: &Triple,
    negatives: &[Triple],
    scale: f64,
    grads: &mut Gradients,
) -> f64 {
    let d = state.dim;
    let mut buf: [EgtGradients; 4] = std::array::from_fn(|i| {
        EgtGradients::zeros(d, if i == EgtKind::Trans.index() { 2 * d } else { d })
    });
    let weights = att.effective_weights(positive.relation);
    let adaptive = att.mode == AttentionMode::Adaptive;
    let gamma = config.gamma;

    let neg_dist: Vec<[f64; 4]> = negatives
        .iter()
        .map(|n| distances(state, &weights, n, config.norm, &mut buf))
        .collect();
    let neg_score: Vec<f64> = neg_dist.iter().map(|dd| combine(&weights, dd)).collect();

    // Self-adversarial weights p_i = softmax(α Δ_i), held constant.
    let max = neg_score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = neg_score.iter().map(|s| (config.alpha * (s - max)).exp()).collect();
    let total: f64 = raw.iter().sum();

    let mut loss = 0.0;
    for (i, neg) in negatives.iter().enumerate() {
        let p = raw[i] / total;
        let z = neg_score[i] + gamma;
        loss -= p * log_sigmoid(-z);
        let coef = scale * p * sigmoid(z);
        distances(state, &weights, neg, config.norm, &mut buf);
        backprop(state, &weights, adaptive, neg, &neg_dist[i], neg_score[i], coef, &buf, grads);
    }

    let pos_dist = distances(state, &weights, positive, config.norm, &mut buf);
    let pos_score = combine(&weights, &pos_dist);
    let z = gamma + pos_score;
    loss -= log_sigmoid(z);
    let coef = -scale * sigmoid(-z);
    backprop(state, &weights, adaptive, positive, &pos_dist, pos_score, coef, &buf, grads);
    loss * scale
}

/// Add `ρ · mean_v ‖v‖² / d` over the entity and translation rows the batch
/// touches (unit-modulus angles and scaling are not regularized).
fn regularize(state: &EmbeddingState, att: &AttentionState, batch: &Batch, rho: f64, grads: &mut Gradients) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let d = state.dim;
    let mut entities = BTreeSet::new();
    let mut relations = BTreeSet::new();
    for (pos, negs) in batch.positives.iter().zip(&batch.negatives) {
        if att.active(pos.relation)[EgtKind::Trans.index()] {
            relations.insert(pos.relation);
        }
        for t in std::iter::once(pos).chain(negs) {
            entities.insert(t.head);
            entities.insert(t.tail);
        }
    }
    let count = (entities.len() + relations.len()) as f64;
    let coef = rho / (count * d as f64);
    let mut penalty = 0.0;
    let banks = [
        (&entities, &state.entity_re, &state.entity_im, &mut grads.entity),
        (&relations, &state.trans_re, &state.trans_im, &mut grads.trans),
    ];
    for (rows, re, im, out) in banks {
        for &r in rows {
            let g = row(out, r, 2 * d);
            for k in 0..d {
                let (a, b) = (re[r * d + k], im[r * d + k]);
                penalty += a * a + b * b;
                g[k] += 2.0 * coef * a;
                g[d + k] += 2.0 * coef * b;
            }
        }
    }
    coef * penalty
}

/// Mean self-adversarial negative-sampling loss over the batch plus the
/// regularizer, with its gradient.
///
/// Fails with [`Error::Divergence`] if the loss or any gradient entry is not
/// finite.
pub fn self_adversarial_loss(
    state: &EmbeddingState,
    att: &AttentionState,
    batch: &Batch,
    config: &ModelConfig,
) -> Result<(f64, Gradients)> {
    assert_eq!(batch.positives.len(), batch.negatives.len(), "malformed batch");
    if batch.positives.is_empty() {
        return Ok((0.0, Gradients::default()));
    }
    let scale = 1.0 / batch.positives.len() as f64;
    let partials: Vec<(f64, Gradients)> = batch
        .positives
        .par_chunks(CHUNK)
        .zip(batch.negatives.par_chunks(CHUNK))
        .map(|(pos, negs)| {
            let mut grads = Gradients::default();
            let mut loss = 0.0;
            for (p, n) in pos.iter().zip(negs) {
                loss += positive_term(state, att, config, p, n, scale, &mut grads);
            }
            (loss, grads)
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for (l, g) in partials {
        loss += l;
        grads.merge(g);
    }
    loss += regularize(state, att, batch, config.regularization, &mut grads);
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss or gradient (loss = {loss})")));
    }
    Ok((loss, grads))
}
