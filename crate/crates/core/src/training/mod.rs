//! Negative sampling, the self-adversarial loss, Adam, and the three-phase
//! training pipeline.

mod adam;
mod loss;
mod pipeline;
mod sampling;

pub use adam::{adam_step, Moments, Optimizer, UpdateScope, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{log_sigmoid, self_adversarial_loss, sigmoid, Gradients};
pub use pipeline::{run_phase, run_smart, LogRow, Phase, PhaseReport, SmartOutcome};
pub use sampling::{sample_negatives, Batch, BatchSampler};
