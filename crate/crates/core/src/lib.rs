//! Deterministic training-data construction for code language models.
//!
//! The crate covers the full desk-scale pipeline: corpus ingestion and
//! synthesis, a byte-level reference tokenizer with a special-token
//! registry, dataset mixture planning and sampling, the fill-in-the-middle
//! transform, repository-level long-context packing, fixed-length sequence
//! packing with batch accounting, learning-rate schedules for every
//! training stage, a toy reference decoder kernel with parameter/FLOPs
//! arithmetic, and an Evol-Instruct prompt-evolution pipeline.
//!
//! Numeric code (schedules, the reference kernel) is generic over the
//! scalar type via `num_traits::Float`; `Real` is the concrete alias the
//! pipeline and CLI use.

pub mod corpus;
pub mod evol;
pub mod fim;
pub mod mixture;
pub mod pipeline;
pub mod refmodel;
pub mod repopack;
pub mod schedule;
pub mod seqpack;
pub mod tokenizer;

/// Default scalar for pipeline-facing numeric code.
pub type Real = f64;

/// Token id type shared across the pipeline.
pub type TokenId = u32;
