//! Learnable state, attention weights, scoring and EGT selection.

mod checkpoint;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    egt_distance, transform_into, ComplexSlice, ComplexVector, EgtKind, EgtOrder, EgtParams, NormOrder,
};
use crate::kgdata::Triple;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

/// Smallest magnitude a scaling coefficient may take after an update.
pub const MIN_SCALE: f64 = 0.01;

/// How the attention matrix is frozen at the end of adaptive learning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// One EGT per relation: the row argmax.
    Smart,
    /// One EGT for every relation: the majority of the per-relation argmaxes.
    SmartMajority,
    /// Every EGT whose weight is strictly above the threshold.
    SmartThreshold(f64),
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Smart => "smart",
            Variant::SmartMajority => "smart-m",
            Variant::SmartThreshold(_) => "smart-gt",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::SmartThreshold(eps) => write!(f, "smart-gt({eps})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Step budgets for the training, adaptive-learning and freezing phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseSteps {
    pub training: usize,
    pub adaptive: usize,
    pub freezing: usize,
}

impl Default for PhaseSteps {
    fn default() -> Self {
        Self {
            training: 120_000,
            adaptive: 50_000,
            freezing: 90_000,
        }
    }
}

/// Hyperparameters for one run.
///
/// Defaults follow the best WN18RR configuration at d = 32:
/// γ = 9, β = 1024, α = 0, η = 512, λ = 1e-4, ρ = 0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub norm: NormOrder,
    /// Margin γ.
    pub gamma: f64,
    /// Self-adversarial temperature α.
    pub alpha: f64,
    /// Negatives per positive, η.
    pub negatives: usize,
    /// Positives per batch, β.
    pub batch_size: usize,
    /// Learning rate λ.
    pub learning_rate: f64,
    /// Regularization coefficient ρ.
    pub regularization: f64,
    pub phase_steps: PhaseSteps,
    pub seed: u64,
    pub egt_order: EgtOrder,
    pub variant: Variant,
    /// Steps between validation evaluations inside a phase.
    pub valid_every: usize,
    /// Consecutive non-improving evaluations tolerated before a phase stops.
    pub patience: usize,
    /// Return the best of the phase-end checkpoints instead of the last.
    pub cross_phase_stop: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            norm: NormOrder::L2,
            gamma: 9.0,
            alpha: 0.0,
            negatives: 512,
            batch_size: 1024,
            learning_rate: 1e-4,
            regularization: 0.1,
            phase_steps: PhaseSteps::default(),
            seed: 0,
            egt_order: EgtOrder::DEFAULT,
            variant: Variant::Smart,
            valid_every: 5000,
            patience: 1,
            cross_phase_stop: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if self.negatives == 0 || self.batch_size == 0 {
            return fail("batch size and negatives per positive must be positive".into());
        }
        if self.valid_every == 0 || self.patience == 0 {
            return fail("valid_every and patience must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.gamma.is_finite() && self.alpha.is_finite() && self.alpha >= 0.0) {
            return fail("gamma must be finite and alpha finite and non-negative".into());
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return fail("regularization must be non-negative".into());
        }
        if let Variant::SmartThreshold(eps) = self.variant {
            if !(eps > 0.0 && eps < 1.0) {
                return fail(format!("threshold epsilon must lie in (0, 1), got {eps}"));
            }
        }
        Ok(())
    }
}

/// Entity embeddings and the four per-relation parameter banks, stored as
/// row-major flat arrays (`row * dim + k`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub entity_re: Vec<f64>,
    pub entity_im: Vec<f64>,
    pub trans_re: Vec<f64>,
    pub trans_im: Vec<f64>,
    pub rot_theta: Vec<f64>,
    pub ref_phi: Vec<f64>,
    pub scal_s: Vec<f64>,
}

impl EmbeddingState {
    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize) -> Self {
        let e = num_entities * dim;
        let r = num_relations * dim;
        Self {
            dim,
            num_entities,
            num_relations,
            entity_re: vec![0.0; e],
            entity_im: vec![0.0; e],
            trans_re: vec![0.0; r],
            trans_im: vec![0.0; r],
            rot_theta: vec![0.0; r],
            ref_phi: vec![0.0; r],
            scal_s: vec![1.0; r],
        }
    }

    fn rows(&self, row: usize) -> std::ops::Range<usize> {
        row * self.dim..(row + 1) * self.dim
    }

    pub fn entity(&self, e: usize) -> ComplexSlice<'_> {
        let r = self.rows(e);
        ComplexSlice {
            re: &self.entity_re[r.clone()],
            im: &self.entity_im[r],
        }
    }

    pub fn egt_params(&self, relation: usize, kind: EgtKind) -> EgtParams<'_> {
        let r = self.rows(relation);
        match kind {
            EgtKind::Trans => EgtParams::Trans(ComplexSlice {
                re: &self.trans_re[r.clone()],
                im: &self.trans_im[r],
            }),
            EgtKind::Rot => EgtParams::Rot(&self.rot_theta[r]),
            EgtKind::Ref => EgtParams::Ref(&self.ref_phi[r]),
            EgtKind::Scal => EgtParams::Scal(&self.scal_s[r]),
        }
    }

    /// Overwrite one entity row.
    pub fn set_entity(&mut self, e: usize, value: ComplexSlice) {
        let r = self.rows(e);
        self.entity_re[r.clone()].copy_from_slice(value.re);
        self.entity_im[r].copy_from_slice(value.im);
    }

    /// Enforce `|s| >= MIN_SCALE` on every scaling coefficient.
    pub fn clamp_scaling(&mut self) {
        for s in &mut self.scal_s {
            if s.abs() < MIN_SCALE {
                *s = if *s < 0.0 { -MIN_SCALE } else { MIN_SCALE };
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.entity_re,
            &self.entity_im,
            &self.trans_re,
            &self.trans_im,
            &self.rot_theta,
            &self.ref_phi,
            &self.scal_s,
        ]
        .iter()
        .all(|bank| bank.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    /// Every weight is 0.25.
    Fixed,
    /// Weights are the row softmax of trainable logits.
    Adaptive,
    /// Weights are the normalized binary mask.
    Frozen,
}

impl AttentionMode {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Fixed => "fixed",
            AttentionMode::Adaptive => "adaptive",
            AttentionMode::Frozen => "frozen",
        }
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AttentionMode::Fixed),
            "adaptive" => Ok(AttentionMode::Adaptive),
            "frozen" => Ok(AttentionMode::Frozen),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}

/// Relational attention matrix: one logit row and one mask row per relation,
/// columns in canonical [`EgtKind`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub logits: Vec<[f64; 4]>,
    pub mode: AttentionMode,
    pub frozen_mask: Vec<[bool; 4]>,
    pub egt_order: EgtOrder,
}

impl AttentionState {
    pub fn new(num_relations: usize, egt_order: EgtOrder) -> Self {
        Self {
            logits: vec![[0.0; 4]; num_relations],
            mode: AttentionMode::Fixed,
            frozen_mask: vec![[false; 4]; num_relations],
            egt_order,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.logits.len()
    }

    /// The probability vector over EGTs used by the score for `relation`.
    pub fn effective_weights(&self, relation: usize) -> [f64; 4] {
        match self.mode {
            AttentionMode::Fixed => [0.25; 4],
            AttentionMode::Adaptive => softmax4(&self.logits[relation]),
            AttentionMode::Frozen => {
                let mask = &self.frozen_mask[relation];
                let count = mask.iter().filter(|&&m| m).count() as f64;
                mask.map(|m| if m { 1.0 / count } else { 0.0 })
            }
        }
    }

    /// The EGTs that still contribute to the score of `relation`.
    pub fn active(&self, relation: usize) -> [bool; 4] {
        match self.mode {
            AttentionMode::Frozen => self.frozen_mask[relation],
            _ => [true; 4],
        }
    }

    /// Argmax of the effective weights with ties broken by `egt_order`.
    pub fn select_egt(&self, relation: usize) -> EgtKind {
        self.egt_order.argmax(&self.effective_weights(relation))
    }

    /// The EGT selected by the largest number of relations.
    pub fn majority_vote(&self, relations: impl IntoIterator<Item = usize>) -> EgtKind {
        let selections: Vec<EgtKind> = relations.into_iter().map(|r| self.select_egt(r)).collect();
        majority(&selections, self.egt_order)
    }

    /// EGTs whose weight is strictly greater than `epsilon`; possibly empty.
    pub fn threshold_select(&self, relation: usize, epsilon: f64) -> BTreeSet<EgtKind> {
        threshold(&self.effective_weights(relation), epsilon)
    }

    /// Prune to the selected EGTs and switch to [`AttentionMode::Frozen`].
    pub fn freeze(&self, variant: Variant) -> Result<AttentionState> {
        if self.mode == AttentionMode::Frozen {
            return Err(Error::Config("attention is already frozen".into()));
        }
        let weights: Vec<[f64; 4]> = (0..self.num_relations()).map(|r| self.effective_weights(r)).collect();
        let mut frozen = freeze_weights(&weights, self.egt_order, variant)?;
        frozen.logits = self.logits.clone();
        Ok(frozen)
    }
}

/// Row softmax over four logits.
pub fn softmax4(logits: &[f64; 4]) -> [f64; 4] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.map(|l| (l - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

/// Most frequent EGT in `selections`; ties go to the earliest in `order`.
pub fn majority(selections: &[EgtKind], order: EgtOrder) -> EgtKind {
    let mut counts = [0.0; 4];
    for kind in selections {
        counts[kind.index()] += 1.0;
    }
    order.argmax(&counts)
}

fn threshold(weights: &[f64; 4], epsilon: f64) -> BTreeSet<EgtKind> {
    EgtKind::ALL
        .into_iter()
        .filter(|k| weights[k.index()] > epsilon)
        .collect()
}

/// Build a frozen attention state from per-relation weight rows.
///
/// Used both at the end of adaptive learning and when a saved adherence
/// table stands in for the learned weights.
pub fn freeze_weights(weights: &[[f64; 4]], order: EgtOrder, variant: Variant) -> Result<AttentionState> {
    let one_hot = |kind: EgtKind| {
        let mut row = [false; 4];
        row[kind.index()] = true;
        row
    };
    let frozen_mask: Vec<[bool; 4]> = match variant {
        Variant::Smart => weights.iter().map(|w| one_hot(order.argmax(w))).collect(),
        Variant::SmartMajority => {
            let selections: Vec<EgtKind> = weights.iter().map(|w| order.argmax(w)).collect();
            if selections.is_empty() {
                return Err(Error::Config("majority vote needs at least one relation".into()));
            }
            vec![one_hot(majority(&selections, order)); weights.len()]
        }
        Variant::SmartThreshold(eps) => weights
            .iter()
            .enumerate()
            .map(|(r, w)| {
                let chosen = threshold(w, eps);
                if chosen.is_empty() {
                    return Err(Error::Config(format!(
                        "threshold {eps} selects no EGT for relation {r} (weights {w:?})"
                    )));
                }
                let mut row = [false; 4];
                for kind in chosen {
                    row[kind.index()] = true;
                }
                Ok(row)
            })
            .collect::<Result<_>>()?,
    };
    Ok(AttentionState {
        logits: vec![[0.0; 4]; weights.len()],
        mode: AttentionMode::Frozen,
        frozen_mask,
        egt_order: order,
    })
}

/// Uniform initialization.
///
/// Entity parts and translation parts are drawn from `[-c, c]` with
/// `c = 6 / sqrt(d)`; angles from `(-π, π]`; scaling from `[0.5, 1.5]`.
/// Attention starts in [`AttentionMode::Fixed`] with zero logits.
pub fn init_state<R: Rng + ?Sized>(
    num_entities: usize,
    num_relations: usize,
    config: &ModelConfig,
    rng: &mut R,
) -> (EmbeddingState, AttentionState) {
    let d = config.dim;
    let bound = 6.0 / (d as f64).sqrt();
    let mut state = EmbeddingState::zeros(num_entities, num_relations, d);
    let linear = |bank: &mut Vec<f64>, rng: &mut R| {
        for x in bank.iter_mut() {
            *x = rng.gen_range(-bound..=bound);
        }
    };
    linear(&mut state.entity_re, rng);
    linear(&mut state.entity_im, rng);
    linear(&mut state.trans_re, rng);
    linear(&mut state.trans_im, rng);
    for bank in [&mut state.rot_theta, &mut state.ref_phi] {
        for x in bank.iter_mut() {
            // 1 - u with u in [0, 1) lands in (0, 1], hence (-π, π]
            *x = PI * (2.0 * (1.0 - rng.gen::<f64>()) - 1.0);
        }
    }
    for s in state.scal_s.iter_mut() {
        *s = rng.gen_range(0.5..=1.5);
    }
    (state, AttentionState::new(num_relations, config.egt_order))
}

/// `-Σ_τ ω_{rτ} ‖τ(h) - t‖_p`.
pub fn score_triple(state: &EmbeddingState, att: &AttentionState, triple: &Triple, p: NormOrder) -> f64 {
    let weights = att.effective_weights(triple.relation);
    score_with_weights(state, &weights, triple, p)
}

pub(crate) fn score_with_weights(state: &EmbeddingState, weights: &[f64; 4], triple: &Triple, p: NormOrder) -> f64 {
    let mut scratch = ComplexVector::zeros(state.dim);
    let h = state.entity(triple.head);
    let t = state.entity(triple.tail);
    let mut total = 0.0;
    for kind in EgtKind::ALL {
        let w = weights[kind.index()];
        if w == 0.0 {
            continue;
        }
        transform_into(state.egt_params(triple.relation, kind), h, &mut scratch.re, &mut scratch.im);
        total += w * egt_distance(scratch.as_slice(), t, p);
    }
    -total
}
