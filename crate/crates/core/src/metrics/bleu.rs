use std::collections::HashMap;

use super::{MetricError, TokenSequence};

pub const DEFAULT_MAX_ORDER: usize = 4;
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuConfig {
    pub max_order: usize,
    /// Numerator used in place of a zero n-gram match count.
    pub epsilon: f64,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_order: DEFAULT_MAX_ORDER,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for one order.
pub(crate) fn modified_precision(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len() + 1 - n)
}

pub fn bleu(candidate: &TokenSequence, reference: &TokenSequence) -> Result<f64, MetricError> {
    bleu_with(candidate, reference, &BleuConfig::default())
}

/// Sentence-level BLEU with uniform weights and add-epsilon smoothing of
/// zero-match orders.
///
/// Orders longer than the candidate have no n-grams and are left out of the
/// geometric mean (weights renormalize over the remaining orders), so a
/// candidate identical to its reference always scores exactly 1.
pub fn bleu_with(candidate: &TokenSequence, reference: &TokenSequence, cfg: &BleuConfig) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let (c, r) = (candidate.tokens(), reference.tokens());
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=cfg.max_order {
        let (matches, total) = modified_precision(c, r, n);
        if total == 0 {
            break;
        }
        let numerator = if matches == 0 { cfg.epsilon } else { matches as f64 };
        log_sum += (numerator / total as f64).ln();
        orders += 1;
    }
    Ok((log_sum / orders as f64).exp() * brevity_penalty(c.len(), r.len()))
}

pub(crate) fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}
