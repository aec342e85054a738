use std::collections::HashMap;

use super::{MetricError, TokenSequence};

/// Clipped unigram overlap between two token sequences.
pub(crate) fn unigram_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in b {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut matched = 0;
    for t in a {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    matched
}

/// ROUGE-1 F1: harmonic mean of clipped unigram precision and recall.
pub fn rouge1_f1(candidate: &TokenSequence, reference: &TokenSequence) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let m = unigram_overlap(candidate.tokens(), reference.tokens());
    if m == 0 {
        return Ok(0.0);
    }
    // 2PR/(P+R) with P = m/|c|, R = m/|r| reduces to 2m/(|c|+|r|)
    Ok(2.0 * m as f64 / (candidate.len() + reference.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn partial_overlap() {
        let c = tokenize("the cat");
        let r = tokenize("the cat sat");
        assert!((rouge1_f1(&c, &r).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clipping_and_disjoint() {
        let c = tokenize("the the the");
        let r = tokenize("the cat");
        assert!((rouge1_f1(&c, &r).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(rouge1_f1(&tokenize("a b"), &tokenize("c d")).unwrap(), 0.0);
        assert_eq!(rouge1_f1(&TokenSequence::default(), &r), Err(MetricError::EmptyInput));
    }
}
