#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use hiersent_core::corpus::{Domain, SentenceRecord};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_lines(name: &str) -> Vec<serde_json::Value> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// (domain, articles, sentences) per row of the dataset summary table.
pub const DATASET_SUMMARY: [(Domain, usize, usize); 7] = [
    (Domain::Physics, 97, 447),
    (Domain::Cs, 39, 193),
    (Domain::Math, 25, 113),
    (Domain::Econ, 50, 249),
    (Domain::Biology, 51, 256),
    (Domain::Chemistry, 12, 58),
    (Domain::Medicine, 17, 54),
];

const SUBJECTS: [&str; 8] = [
    "The proposed model",
    "This experiment",
    "The survey data",
    "Our analysis",
    "The new method",
    "A follow-up study",
    "The simulation",
    "The field trial",
];

const VERBS: [&str; 6] = ["improves", "explains", "predicts", "reduces", "reveals", "clarifies"];

const OBJECTS: [&str; 7] = [
    "the observed variation",
    "long term outcomes",
    "the main failure modes",
    "regional differences",
    "the measured response",
    "hidden structure",
    "seasonal effects",
];

/// Synthetic corpus with the per-domain article and sentence counts of the
/// dataset summary. Article `a` of a domain with `n` sentences over `k`
/// articles holds `n / k` sentences, plus one for the first `n % k` articles.
pub fn dataset_corpus() -> Vec<SentenceRecord> {
    let mut out = Vec::new();
    for (domain, articles, sentences) in DATASET_SUMMARY {
        let slug = serde_json::to_value(domain).unwrap().as_str().unwrap().to_string();
        for a in 0..articles {
            let per = sentences / articles + usize::from(a < sentences % articles);
            for k in 0..per {
                let n = out.len();
                let text = format!(
                    "{} {} {} in {} article {} sentence {}.",
                    SUBJECTS[n % SUBJECTS.len()],
                    VERBS[(n / 3) % VERBS.len()],
                    OBJECTS[(n / 7) % OBJECTS.len()],
                    domain.display_name().to_lowercase(),
                    a,
                    k
                );
                out.push(SentenceRecord {
                    id: format!("{slug}-{a:03}-{k}"),
                    text,
                    domain,
                    repository: domain.repository(),
                    article_id: format!("{slug}-{a:03}"),
                });
            }
        }
    }
    out
}
