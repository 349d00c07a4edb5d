//! Online multi-party chat disentanglement.
//!
//! An incoming message stream is split into conversation threads by scoring
//! each message against every live thread with language-model perplexity and
//! appending it to the minimum-perplexity thread (or opening a new one when
//! the minimum exceeds a threshold). Threads that grow past a length budget
//! get a compact topic header extracted with TF-IDF + NMF, so generation
//! prompts stay bounded. A keyword-weighted, time-decayed priority queue
//! decides which thread is answered next.
//!
//! The numeric kernels (n-gram scoring, TF-IDF, NMF) are generic over the
//! scalar type via [`num::Real`]; `f64` aliases are exported at the crate
//! root.

pub mod corpus;
pub mod disentangle;
pub mod error;
pub mod evalharness;
pub mod interleave;
pub mod lm_core;
pub mod num;
pub mod pipeline;
pub mod priority;
pub mod remote_lm;
pub mod topic;

pub use error::{Error, Result};

/// Default-precision n-gram model.
pub type NgramModel = lm_core::NgramModel<f64>;
/// Default-precision perplexity score.
pub type PerplexityScore = lm_core::PerplexityScore<f64>;
/// Default-precision document-term matrix.
pub type DocTermMatrix = topic::DocTermMatrix<f64>;
/// Default-precision NMF factorization.
pub type NmfFactors = topic::NmfFactors<f64>;
