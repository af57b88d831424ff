//! Evaluation engine for knowledge editing on multi-hop questions.
//!
//! The pipeline: load a knowledge graph ([`kg`]), sample constraint-checked
//! fact chains ([`sampler`]), attach counterfactual or snapshot-diff edits to
//! build benchmark instances ([`edits`]), render every natural-language
//! surface form from relation templates ([`templates`]), and score editors
//! with edit-wise / instance-wise / multi-hop metrics ([`metrics`]) against
//! pluggable model backends ([`lm`]). The [`mello`] module implements the
//! memory-guided answering loop that decomposes a question, proposes
//! tentative answers, retrieves the nearest stored edit ([`retrieval`]), and
//! self-checks for contradictions. [`dataset`] owns the JSON instance format
//! and corpus statistics; [`synth`] generates synthetic graphs and corpora
//! for tests and calibration.

pub mod dataset;
pub mod edits;
pub mod error;
pub mod kg;
pub mod lm;
pub mod mello;
pub mod metrics;
pub mod retrieval;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod templates;

#[cfg(test)]
pub(crate) mod testkit;

pub use error::{Error, Result};
