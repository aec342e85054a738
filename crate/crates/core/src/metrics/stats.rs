use serde::{Deserialize, Serialize};

use super::{EvalScores, MetricError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdDevConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1 (0 for a single observation).
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std_dev: f64,
}

impl MetricStat {
    fn of(values: &[f64], convention: StdDevConvention) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let denom = match convention {
            StdDevConvention::Population => n,
            StdDevConvention::Sample => n - 1.0,
        };
        let std_dev = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
        Self { mean, std_dev }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub cosine: MetricStat,
    pub bleu: MetricStat,
    pub rouge1_f1: MetricStat,
    pub meteor: MetricStat,
}

pub fn summarize(scores: &[EvalScores]) -> Result<SummaryStats, MetricError> {
    summarize_with(scores, StdDevConvention::Population)
}

pub fn summarize_with(scores: &[EvalScores], convention: StdDevConvention) -> Result<SummaryStats, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let column = |f: fn(&EvalScores) -> f64| MetricStat::of(&scores.iter().map(f).collect::<Vec<_>>(), convention);
    Ok(SummaryStats {
        n: scores.len(),
        cosine: column(|s| s.cosine),
        bleu: column(|s| s.bleu),
        rouge1_f1: column(|s| s.rouge1_f1),
        meteor: column(|s| s.meteor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(cosine: f64) -> EvalScores {
        EvalScores {
            cosine,
            bleu: 0.5,
            rouge1_f1: 0.5,
            meteor: 0.5,
        }
    }

    #[test]
    fn single_pair_has_zero_spread() {
        let st = summarize(&[s(0.7)]).unwrap();
        assert_eq!(st.n, 1);
        assert_eq!(st.cosine, MetricStat { mean: 0.7, std_dev: 0.0 });
        assert_eq!(summarize_with(&[s(0.7)], StdDevConvention::Sample).unwrap().cosine.std_dev, 0.0);
    }

    #[test]
    fn population_and_sample() {
        let st = summarize(&[s(0.8), s(1.0)]).unwrap();
        assert!((st.cosine.mean - 0.9).abs() < 1e-15);
        assert!((st.cosine.std_dev - 0.1).abs() < 1e-15);
        let sample = summarize_with(&[s(0.8), s(1.0)], StdDevConvention::Sample).unwrap();
        assert!((sample.cosine.std_dev - 0.1 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[]), Err(MetricError::EmptyList));
    }
}
