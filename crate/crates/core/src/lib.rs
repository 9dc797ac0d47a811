//! Zero-shot transferability estimation from statistical divergence between
//! text domains.
//!
//! Domains are represented by term distributions and pooled word
//! embeddings; a battery of divergence and within-domain measures feeds a
//! gradient-boosted ranker of source domains per target, evaluated by
//! Spearman correlation, NDCG@K and training-budget curves.
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod hash;
pub mod measures;
pub mod ranker;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
