use std::collections::BTreeMap;

use super::loss::Gradients;
use crate::geometry::EgtKind;
use crate::model::{AttentionState, EmbeddingState};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, lr: f64, step: u64) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), moments.m.len(), "moment buffer has wrong length");
    assert!(step >= 1, "Adam steps count from 1");
    let c1 = 1.0 - ADAM_BETA1.powf(step as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(step as f64);
    for (((x, &g), m), v) in params.iter_mut().zip(grads).zip(&mut moments.m).zip(&mut moments.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *x -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    }
}

/// Which parameters an optimizer step may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateScope {
    pub logits: bool,
    /// Per relation and EGT (canonical order): may that bank row change?
    /// `None` means every row may.
    pub relation_mask: Option<Vec<[bool; 4]>>,
}

impl UpdateScope {
    pub fn everything() -> Self {
        Self {
            logits: true,
            relation_mask: None,
        }
    }
}

/// A dense parameter bank with its gradient scratch and moments.
#[derive(Debug, Clone)]
struct Slot {
    grad: Vec<f64>,
    moments: Moments,
}

impl Slot {
    fn new(len: usize) -> Self {
        Self {
            grad: vec![0.0; len],
            moments: Moments::zeros(len),
        }
    }

    fn step(&mut self, params: &mut [f64], lr: f64, t: u64, row_len: usize, enabled: &dyn Fn(usize) -> bool) {
        if params.is_empty() {
            return;
        }
        let (c1, c2) = (1.0 - ADAM_BETA1.powf(t as f64), 1.0 - ADAM_BETA2.powf(t as f64));
        for (r, ((x, g), (m, v))) in params
            .chunks_mut(row_len)
            .zip(self.grad.chunks_mut(row_len))
            .zip(self.moments.m.chunks_mut(row_len).zip(self.moments.v.chunks_mut(row_len)))
            .enumerate()
        {
            if !enabled(r) {
                g.fill(0.0);
                continue;
            }
            for k in 0..row_len {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                x[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
            g.fill(0.0);
        }
    }
}

fn scatter_split(map: &BTreeMap<usize, Vec<f64>>, d: usize, re: &mut Slot, im: &mut Slot) {
    for (&r, g) in map {
        re.grad[r * d..(r + 1) * d].copy_from_slice(&g[..d]);
        im.grad[r * d..(r + 1) * d].copy_from_slice(&g[d..]);
    }
}

fn scatter(map: &BTreeMap<usize, Vec<f64>>, d: usize, slot: &mut Slot) {
    for (&r, g) in map {
        slot.grad[r * d..(r + 1) * d].copy_from_slice(g);
    }
}

/// Dense Adam over every parameter bank, fed by sparse gradients.
///
/// Rows without a gradient still decay their moments and move, as in a
/// dense implementation. Rows excluded by the [`UpdateScope`] are left
/// completely untouched, moments included.
#[derive(Debug, Clone)]
pub struct Optimizer {
    learning_rate: f64,
    steps: u64,
    entity_re: Slot,
    entity_im: Slot,
    trans_re: Slot,
    trans_im: Slot,
    rot: Slot,
    refl: Slot,
    scal: Slot,
    logits: Slot,
}

impl Optimizer {
    pub fn new(state: &EmbeddingState, learning_rate: f64) -> Self {
        let e = state.entity_re.len();
        let r = state.trans_re.len();
        Self {
            learning_rate,
            steps: 0,
            entity_re: Slot::new(e),
            entity_im: Slot::new(e),
            trans_re: Slot::new(r),
            trans_im: Slot::new(r),
            rot: Slot::new(r),
            refl: Slot::new(r),
            scal: Slot::new(r),
            logits: Slot::new(4 * state.num_relations),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update and re-clamp the scaling coefficients.
    pub fn apply(&mut self, state: &mut EmbeddingState, att: &mut AttentionState, grads: &Gradients, scope: &UpdateScope) {
        self.steps += 1;
        let (lr, t, d) = (self.learning_rate, self.steps, state.dim);
        scatter_split(&grads.entity, d, &mut self.entity_re, &mut self.entity_im);
        scatter_split(&grads.trans, d, &mut self.trans_re, &mut self.trans_im);
        scatter(&grads.rot, d, &mut self.rot);
        scatter(&grads.refl, d, &mut self.refl);
        scatter(&grads.scal, d, &mut self.scal);

        let all = |_: usize| true;
        self.entity_re.step(&mut state.entity_re, lr, t, d, &all);
        self.entity_im.step(&mut state.entity_im, lr, t, d, &all);

        let mask = scope.relation_mask.as_deref();
        let allowed = |kind: EgtKind| move |r: usize| mask.is_none_or(|m| m[r][kind.index()]);
        let trans = allowed(EgtKind::Trans);
        self.trans_re.step(&mut state.trans_re, lr, t, d, &trans);
        self.trans_im.step(&mut state.trans_im, lr, t, d, &trans);
        self.rot.step(&mut state.rot_theta, lr, t, d, &allowed(EgtKind::Rot));
        self.refl.step(&mut state.ref_phi, lr, t, d, &allowed(EgtKind::Ref));
        self.scal.step(&mut state.scal_s, lr, t, d, &allowed(EgtKind::Scal));

        if scope.logits {
            for (&r, g) in &grads.logits {
                self.logits.grad[4 * r..4 * r + 4].copy_from_slice(g);
            }
            let mut flat: Vec<f64> = att.logits.iter().flatten().copied().collect();
            self.logits.step(&mut flat, lr, t, 4, &all);
            for (row, chunk) in att.logits.iter_mut().zip(flat.chunks_exact(4)) {
                row.copy_from_slice(chunk);
            }
        }
        state.clamp_scaling();
    }
}
