use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::compare::ScoreRow;
use super::{PipelineError, Stage};
use crate::metrics::{summarize_with, StdDevConvention, SummaryStats};
use crate::penalty::PenaltyFragment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub valid: usize,
    pub total: usize,
    pub rate: f64,
}

impl From<&PenaltyFragment> for Validity {
    fn from(f: &PenaltyFragment) -> Self {
        Self {
            valid: f.batch_size - f.failures,
            total: f.batch_size,
            rate: f.validity_rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub inputs: usize,
    pub outputs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub validity: Option<Validity>,
    pub summary: Option<SummaryStats>,
    pub stages: BTreeMap<String, StageCounts>,
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

const ROWS: [&str; 4] = ["Cosine Similarity", "BLEU", "ROUGE-1 F1", "METEOR"];

/// Fixed-width table of mean and standard deviation per metric.
pub fn render_summary(summary: &SummaryStats) -> String {
    let stats = [summary.cosine, summary.bleu, summary.rouge1_f1, summary.meteor];
    let mut out = String::new();
    writeln!(out, "Test Set (n = {})", summary.n).unwrap();
    writeln!(out, "{:<20} {:>8} {:>8}", "Metric", "Mean", "Std Dev").unwrap();
    for (name, stat) in ROWS.iter().zip(stats) {
        writeln!(out, "{:<20} {:>8.4} {:>8.4}", name, stat.mean, stat.std_dev).unwrap();
    }
    out
}

fn render_validity(v: &Validity) -> String {
    format!("JSON validity: {}/{} ({:.2}%)\n", v.valid, v.total, 100.0 * v.rate)
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Run: {}", self.run_id)?;
        match &self.summary {
            Some(s) => f.write_str(&render_summary(s))?,
            None => writeln!(f, "No scored pairs.")?,
        }
        if let Some(v) = &self.validity {
            f.write_str(&render_validity(v))?;
        }
        if !self.stages.is_empty() {
            writeln!(f, "{:<12} {:>7} {:>7} {:>8}", "Stage", "In", "Out", "Failed")?;
            // pipeline order, not alphabetical
            let order = |name: &str| Stage::ALL.iter().position(|s| s.name() == name).unwrap_or(usize::MAX);
            let mut rows: Vec<_> = self.stages.iter().collect();
            rows.sort_by_key(|(name, _)| order(name));
            for (name, c) in rows {
                writeln!(f, "{:<12} {:>7} {:>7} {:>8}", name, c.inputs, c.outputs, c.failures)?;
            }
        }
        Ok(())
    }
}

/// Summary table for a standalone scores file (one [`ScoreRow`] per line).
pub fn report_from_scores(rows: &[ScoreRow], convention: StdDevConvention) -> Result<String, PipelineError> {
    let scores: Vec<_> = rows.iter().map(|r| r.scores).collect();
    let summary = summarize_with(&scores, convention).map_err(|e| PipelineError::stage(super::Stage::Report, e))?;
    Ok(render_summary(&summary))
}
