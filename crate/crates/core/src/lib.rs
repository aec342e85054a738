//! Hierarchical JSON representations of scientific sentences.
//!
//! - [`schema`]: the core/hierarchy representation, parsing, serialization and
//!   compression compliance.
//! - [`penalty`]: JSON-validity structure penalty and its line protocol.
//! - [`corpus`]: sentence records, exclusion filters, per-article cap and
//!   seeded stratified splits.
//! - [`metrics`]: BLEU, ROUGE-1 F1, METEOR, embedding cosine and summaries.
//! - [`gateway`]: provider-agnostic chat completion with caching and retries.
//! - [`pipeline`]: resumable staged runs and reports.
//! - [`epoch_log`]: the per-epoch CSV written by the fine-tuning harness.

pub mod corpus;
pub mod epoch_log;
pub mod exec;
pub mod gateway;
pub mod http;
pub mod metrics;
pub mod penalty;
pub mod pipeline;
pub mod schema;

pub use exec::Execution;
