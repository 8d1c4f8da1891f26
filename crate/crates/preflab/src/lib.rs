//! A desk-scale laboratory for aligning autoregressive policies with
//! preference data.
//!
//! The crate implements the supervised (SFT), pairwise (DPO), and adaptive
//! (APO) preference objectives with exact gradients over small tabular and
//! feedforward softmax policies, a seeded trainer for the four schedules
//! (sft, dpo, sft-then-dpo, apo), confidence probing that tracks per-role
//! mean log-probabilities over training and detects the squeezing effect,
//! a three-action simplex optimizer that exhibits the gap between the
//! pairwise and likelihood optima, bidirectional solution/test co-ranking
//! over binary pass matrices, and the preference-aware pass@k estimator
//! family.
//!
//! Start with the runnable programs in `examples/`; each one demonstrates a
//! single capability end to end. The `preflab` binary wires the same
//! machinery to config files for scripted runs.

pub mod corank;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod math;
pub mod prefmetrics;
pub mod probe;
pub mod seqmodel;
pub mod simplex;
pub mod trainer;

pub use error::{Error, Result};
