use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::artifacts::FailureRow;
use super::PipelineError;
use crate::exec::{self, Execution};
use crate::metrics::{score_pair, EmbeddingProvider, EvalScores, MetricConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    #[serde(flatten)]
    pub scores: EvalScores,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub rows: Vec<ScoreRow>,
    pub failures: Vec<FailureRow>,
}

/// Scores each reconstruction against its original, keyed by id.
///
/// Output follows the order of `originals`. An original without a
/// reconstruction becomes a failure row. A reconstruction whose id has no
/// original, or appears twice, is an [`PipelineError::IdMismatch`].
pub fn compare_pairs(
    originals: &[(String, String)],
    reconstructions: &[(String, String)],
    embedder: &dyn EmbeddingProvider,
    cfg: &MetricConfig,
    exec: Execution,
) -> Result<Comparison, PipelineError> {
    let known: BTreeSet<&str> = originals.iter().map(|(id, _)| id.as_str()).collect();
    let mut recon: HashMap<&str, &str> = HashMap::with_capacity(reconstructions.len());
    let mut unpaired = BTreeSet::new();
    for (id, text) in reconstructions {
        if !known.contains(id.as_str()) || recon.insert(id, text).is_some() {
            unpaired.insert(id.clone());
        }
    }
    if !unpaired.is_empty() {
        return Err(PipelineError::IdMismatch(unpaired.into_iter().collect()));
    }

    let mut out = Comparison::default();
    let mut pairs = Vec::new();
    for (id, original) in originals {
        match recon.get(id.as_str()) {
            Some(r) => pairs.push((id.as_str(), original.as_str(), *r)),
            None => out.failures.push(FailureRow::new(id.clone(), "missing reconstruction")),
        }
    }

    let mut texts = Vec::with_capacity(pairs.len() * 2);
    for (_, original, r) in &pairs {
        texts.push(r.to_string());
        texts.push(original.to_string());
    }
    let vectors = embedder
        .embed_batch(&texts)
        .map_err(|e| PipelineError::stage(super::Stage::Evaluate, e))?;
    if vectors.len() != texts.len() {
        return Err(PipelineError::stage(super::Stage::Evaluate, "embedding count mismatch"));
    }

    let idx: Vec<usize> = (0..pairs.len()).collect();
    let scored = exec::map(&idx, exec, |&k| {
        let (_, original, r) = pairs[k];
        score_pair(r, original, &vectors[2 * k], &vectors[2 * k + 1], cfg)
    });
    let mut failures_by_id: HashMap<String, FailureRow> =
        out.failures.drain(..).map(|f| (f.id.clone(), f)).collect();
    for ((id, _, _), result) in pairs.iter().zip(scored) {
        match result {
            Ok(scores) => out.rows.push(ScoreRow {
                id: id.to_string(),
                scores,
            }),
            Err(e) => {
                failures_by_id.insert(id.to_string(), FailureRow::new(*id, e));
            }
        }
    }
    out.failures = originals
        .iter()
        .filter_map(|(id, _)| failures_by_id.remove(id))
        .collect();
    Ok(out)
}
