//! Good-Turing backoff n-gram models combined by linear interpolation, count
//! merging or Bayesian interpolation.
//!
//! The pipeline: [`vocab`] and [`counts`] turn corpora into per-domain count
//! tables, [`lm`] estimates Katz backoff models from them, [`interp`] mixes
//! models with history-dependent weights, [`optimize`] fits the component
//! priors on held-out text, [`static_merge`] collapses the mixture into a
//! single backoff model, [`prune`] shrinks it and [`evaluate`] scores text.

pub mod counts;
pub mod error;
pub mod evaluate;
pub mod interp;
pub mod lm;
pub mod optimize;
pub mod prune;
pub mod static_merge;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
