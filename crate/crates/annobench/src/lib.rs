//! Benchmarking harness for LLM-based cell type annotation of single-cell
//! omics data.
//!
//! The pipeline: load an expression bundle, select marker genes per cell type
//! by differential expression (Welch's t-test), build zero-shot or two-stage
//! chain-of-thought prompts, send them through a chat-completion gateway
//! (live, recording, or deterministic replay), cleanse the free-form answers,
//! and score them against ontology synonym sets with BLEU / EM / token-F1.
//!
//! Chromatin-accessibility (ATAC) profiles that LLMs cannot read as text are
//! bridged into the same pipeline by the [`align`] module, which trains an
//! adversarial autoencoder pair that translates binary peak vectors into
//! pseudo gene expression.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `annobench` binary for the batch CLI.

pub mod align;
pub mod config;
pub mod dataset;
pub mod deg;
pub mod eval;
pub mod gateway;
pub mod label;
pub mod ontology;
pub mod prompt;
pub mod report;
pub mod run;
pub mod stats;
pub mod synthetic;
