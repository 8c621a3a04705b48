//! End-to-end multi-objective ensemble ranking at desk scale.
//!
//! The pipeline: a synthetic request-log simulator ([`synthlog`]) feeds a
//! set-attention scorer ([`ranknet`]) trained with relative-advantage pairwise
//! supervision and per-objective AUC surrogate losses ([`losses`]) whose
//! weights self-evolve via an advantage evaluator ([`evolve`]). Offline
//! quality is measured with grouped AUC tables and a budget-constrained
//! session replay ([`evalsuite`]), against a tuned fusion-formula baseline
//! ([`baseline`]).

pub mod baseline;
pub mod domain;
pub mod evalsuite;
pub mod evolve;
pub mod features;
pub mod losses;
pub mod plot;
pub mod ranknet;
pub mod synthlog;
pub mod trainer;
