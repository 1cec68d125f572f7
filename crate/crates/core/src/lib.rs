//! Prior-aware memorization auditing.
//!
//! A training sequence `p ‖ s` is *extractable* when a model reproduces the
//! suffix `s` from the prefix `p` with high probability. That alone does not
//! separate memorization from generalization: a suffix that the model
//! produces after almost any prefix is common, not memorized. This crate
//! computes
//!
//! * `log P(s | p)` by teacher forcing ([`likelihood`]),
//! * a Monte-Carlo estimate of the suffix prior `P(s)` over prefixes sampled
//!   from a reference corpus, with an exact oracle for small supports
//!   ([`prior`]),
//! * the relative belief ratio `P(s | p) / P(s)` and the two-threshold
//!   classification with per-model calibration of the ratio threshold
//!   ([`classify`]).
//!
//! Scoring goes through the [`lm::ScoringBackend`] trait, implemented by the
//! built-in add-α n-gram model and by an HTTP client for externally hosted
//! models ([`remote`]). [`harness`] runs the controlled counterfactual
//! experiment that compares the prior-aware score against retraining
//! without the sequence, and [`targets`] builds audit target sets.
//!
//! See `examples/` for one runnable program per capability.

pub mod classify;
pub mod error;
pub mod float17;
pub mod harness;
pub mod likelihood;
pub mod lm;
pub mod prior;
pub mod remote;
pub mod report;
pub mod seed;
pub mod stats;
pub mod targets;

pub use error::{Error, Result};
