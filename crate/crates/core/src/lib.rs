//! Knowledge graph embeddings with relation-specific geometric transformations.
//!
//! Every relation carries four elementary geometric transformations (EGTs) in
//! complex space: translation, rotation, reflection and scaling. A per-relation
//! attention row weights the distance each transformation produces, and a
//! three-phase schedule (train, adapt, freeze) ends with each relation bound to
//! the transformation(s) it adheres to.
//!
//! Modules, bottom-up:
//!
//! - [`kgdata`]: TSV loading, vocabularies and the filtered-ranking index.
//! - [`geometry`]: the four forward maps, distances, analytic gradients and
//!   the composition table.
//! - [`model`]: learnable state, attention modes, scoring, EGT selection and
//!   the checkpoint format.
//! - [`training`]: negative sampling, the self-adversarial loss, Adam, and the
//!   phase pipeline.
//! - [`evaluation`]: filtered ranks, MRR and Hits@N.
//! - [`analysis`]: adherence tables and relational pattern mining.

pub mod analysis;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod kgdata;
pub mod model;
pub mod training;

pub use analysis::{AdherenceTable, PatternProfile};
pub use error::{Error, Result};
pub use evaluation::{MetricsReport, RankResult};
pub use geometry::{ComplexSlice, ComplexVector, EgtKind, EgtOrder, NormOrder};
pub use kgdata::{KnowledgeGraph, Side, Split, Triple};
pub use model::{AttentionMode, AttentionState, EmbeddingState, ModelConfig, Variant};
pub use training::{Phase, PhaseReport, SmartOutcome};
