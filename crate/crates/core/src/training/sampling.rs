use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kgdata::{KnowledgeGraph, Side, Triple};

/// Positives with their raw (unfiltered) corruptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub positives: Vec<Triple>,
    /// `negatives[i]` holds the η corruptions of `positives[i]`.
    pub negatives: Vec<Vec<Triple>>,
    pub corrupted_side: Vec<Vec<Side>>,
}

/// η corruptions of `positive`: each picks a side uniformly and replaces
/// that entity with one drawn uniformly from the other `|E| - 1` entities.
pub fn sample_negatives<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    positive: &Triple,
    eta: usize,
    rng: &mut R,
) -> Result<Vec<(Triple, Side)>> {
    let n = kg.num_entities();
    if n < 2 {
        return Err(Error::Data("negative sampling needs at least two entities".into()));
    }
    Ok((0..eta)
        .map(|_| {
            let side = if rng.gen::<bool>() { Side::Head } else { Side::Tail };
            let original = positive.entity(side);
            let mut replacement = rng.gen_range(0..n - 1);
            if replacement >= original {
                replacement += 1;
            }
            (positive.with_entity(side, replacement), side)
        })
        .collect())
}

/// Cycles through shuffled epochs of the training split.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new<R: Rng + ?Sized>(num_train: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..num_train).collect();
        order.shuffle(rng);
        Self { order, cursor: 0 }
    }

    pub fn next_batch<R: Rng + ?Sized>(
        &mut self,
        kg: &KnowledgeGraph,
        batch_size: usize,
        eta: usize,
        rng: &mut R,
    ) -> Result<Batch> {
        let mut batch = Batch {
            positives: Vec::with_capacity(batch_size),
            negatives: Vec::with_capacity(batch_size),
            corrupted_side: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let positive = kg.train()[self.order[self.cursor]];
            self.cursor += 1;
            let (negs, sides) = sample_negatives(kg, &positive, eta, rng)?.into_iter().unzip();
            batch.positives.push(positive);
            batch.negatives.push(negs);
            batch.corrupted_side.push(sides);
        }
        Ok(batch)
    }
}
