//! Representation-bias auditing for embedding models.
//!
//! Given an embedding matrix and demographic metadata, this crate reproduces
//! a full feature-space and downstream-performance audit:
//!
//! - feature-space inspection via PCA and exact t-SNE with two-sample
//!   Kolmogorov-Smirnov tests across subgroup pairs per PCA mode, adjusted
//!   for multiple testing with the Benjamini-Yekutieli procedure;
//! - probe heads (a linear layer and MLPs) trained on the frozen embeddings
//!   with validation-AUC model selection;
//! - subgroup performance tables (AUC, TPR, FPR, Youden's J at a threshold
//!   calibrated to a whole-sample target FPR) on rebalanced test sets, with
//!   percentile-bootstrap confidence intervals and per-group relative-change
//!   analysis;
//! - a synthetic cohort generator with controllable injected bias that
//!   grounds the whole pipeline against known truth.
//!
//! The `repr-audit` binary exposes the pipeline as `inspect`, `train-probe`,
//! `evaluate`, `synth` and `summarize` subcommands; see the crate README.

pub mod cli;
pub mod cohort;
pub mod config;
pub mod error;
pub mod metrics;
pub mod probes;
pub mod projection;
pub mod sampling;
pub mod stats;
pub mod synth;

pub use cohort::{Cohort, EmbeddingSet, GroupSelector, Sex, Split};
pub use error::{Error, Result};
