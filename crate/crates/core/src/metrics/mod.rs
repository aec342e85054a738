//! Reconstruction-quality metrics: sentence BLEU, ROUGE-1 F1, METEOR and
//! embedding cosine similarity, plus per-metric summary statistics.
//!
//! Each lexical metric tokenizes with its own scheme (see [`MetricConfig`]).
//! The defaults follow the conventions of the common reference toolkits:
//! whitespace tokens for BLEU and METEOR, alphanumeric words for ROUGE.

mod bleu;
mod embed;
mod meteor;
mod rouge;
mod stats;
mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, bleu_with, BleuConfig};
pub use embed::{
    cosine, fnv1a, EmbedError, EmbeddingProvider, EmbeddingVector, HashedTfEmbedder, RemoteEmbedConfig, RemoteEmbedder,
    OFFLINE_DIM, OFFLINE_PROVIDER_ID,
};
pub use meteor::{align, count_chunks, meteor, score_from_alignment, stem, Alignment};
pub use rouge::rouge1_f1;
pub use stats::{summarize, summarize_with, MetricStat, StdDevConvention, SummaryStats};
pub use tokenize::{tokenize, tokenize_whitespace, tokenize_words, TokenSequence, Tokenization};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("candidate or reference is empty")]
    EmptyInput,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embeddings come from different providers: {0} vs {1}")]
    ProviderMismatch(String, String),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("no scores to summarize")]
    EmptyList,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub cosine: f64,
    pub bleu: f64,
    pub rouge1_f1: f64,
    pub meteor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub bleu_tokens: Tokenization,
    pub rouge_tokens: Tokenization,
    pub meteor_tokens: Tokenization,
    pub bleu_epsilon: f64,
    pub std_dev: StdDevConvention,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            bleu_tokens: Tokenization::Whitespace,
            rouge_tokens: Tokenization::Words,
            meteor_tokens: Tokenization::Whitespace,
            bleu_epsilon: bleu::DEFAULT_EPSILON,
            std_dev: StdDevConvention::Population,
        }
    }
}

impl MetricConfig {
    /// Every metric on the shared punctuation-detaching tokenizer.
    pub fn standard_tokens() -> Self {
        Self {
            bleu_tokens: Tokenization::Standard,
            rouge_tokens: Tokenization::Standard,
            meteor_tokens: Tokenization::Standard,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalScores {
    pub bleu: f64,
    pub rouge1_f1: f64,
    pub meteor: f64,
}

/// BLEU, ROUGE-1 F1 and METEOR of `candidate` against `reference`.
pub fn lexical_scores(candidate: &str, reference: &str, cfg: &MetricConfig) -> Result<LexicalScores, MetricError> {
    let bleu_cfg = BleuConfig {
        epsilon: cfg.bleu_epsilon,
        ..BleuConfig::default()
    };
    Ok(LexicalScores {
        bleu: bleu_with(&cfg.bleu_tokens.apply(candidate), &cfg.bleu_tokens.apply(reference), &bleu_cfg)?,
        rouge1_f1: rouge1_f1(&cfg.rouge_tokens.apply(candidate), &cfg.rouge_tokens.apply(reference))?,
        meteor: meteor(&cfg.meteor_tokens.apply(candidate), &cfg.meteor_tokens.apply(reference))?,
    })
}

/// All four scores for one (reconstruction, original) pair given their embeddings.
pub fn score_pair(
    candidate: &str,
    reference: &str,
    candidate_vec: &EmbeddingVector,
    reference_vec: &EmbeddingVector,
    cfg: &MetricConfig,
) -> Result<EvalScores, MetricError> {
    let lex = lexical_scores(candidate, reference, cfg)?;
    Ok(EvalScores {
        cosine: cosine(candidate_vec, reference_vec)?,
        bleu: lex.bleu,
        rouge1_f1: lex.rouge1_f1,
        meteor: lex.meteor,
    })
}
