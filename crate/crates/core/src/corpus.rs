//! Sentence corpus: records with provenance, exclusion filters, the
//! per-article cap, seeded train/validation/test splits and count tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};

pub const DEFAULT_ARTICLE_CAP: usize = 6;
pub const DEFAULT_SEED: u64 = 1370;
pub const DEFAULT_SYMBOL_RATIO: f64 = 0.15;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("too few records ({records}) for a split with counts {counts:?}")]
    TooFewRecords { records: usize, counts: (usize, usize, usize) },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios((f64, f64, f64)),
    #[error("article cap must be at least 1")]
    InvalidCap,
    #[error("could not allocate stratified split quotas")]
    Allocation,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Physics,
    Cs,
    Math,
    Econ,
    Biology,
    Chemistry,
    Medicine,
}

impl Domain {
    pub const ALL: [Domain; 7] = [
        Domain::Physics,
        Domain::Cs,
        Domain::Math,
        Domain::Econ,
        Domain::Biology,
        Domain::Chemistry,
        Domain::Medicine,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Domain::Physics => "Physics",
            Domain::Cs => "Computer Science",
            Domain::Math => "Mathematics",
            Domain::Econ => "Economics",
            Domain::Biology => "Biology",
            Domain::Chemistry => "Chemistry",
            Domain::Medicine => "Medicine",
        }
    }

    /// The repository sentences of this domain are drawn from.
    pub fn repository(self) -> Repository {
        match self {
            Domain::Physics | Domain::Cs | Domain::Math | Domain::Econ => Repository::Arxiv,
            Domain::Biology => Repository::Biorxiv,
            Domain::Chemistry => Repository::Chemrxiv,
            Domain::Medicine => Repository::Pubmed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repository {
    Arxiv,
    Biorxiv,
    Chemrxiv,
    Pubmed,
}

impl Repository {
    pub fn display_name(self) -> &'static str {
        match self {
            Repository::Arxiv => "arXiv",
            Repository::Biorxiv => "bioRxiv",
            Repository::Chemrxiv => "ChemRxiv",
            Repository::Pubmed => "PubMed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub domain: Domain,
    pub repository: Repository,
    pub article_id: String,
}

impl SentenceRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("record {}: empty text", self.id));
        }
        if self.text.contains(['\n', '\r']) {
            return Err(format!("record {}: text spans more than one line", self.id));
        }
        if self.domain.repository() != self.repository {
            return Err(format!(
                "record {}: domain {:?} is not collected from {:?}",
                self.id, self.domain, self.repository
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Filtering

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Equation,
    Symbol,
    CitationMarker,
    ArticleCap,
    Incomplete,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::Equation => "equation",
            ExclusionReason::Symbol => "symbol",
            ExclusionReason::CitationMarker => "citation_marker",
            ExclusionReason::ArticleCap => "article_cap",
            ExclusionReason::Incomplete => "incomplete",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub excluded: Vec<Exclusion>,
    pub retained_count: usize,
}

impl FilterReport {
    pub fn count(&self, reason: ExclusionReason) -> usize {
        self.excluded.iter().filter(|e| e.reason == reason).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub article_cap: usize,
    /// Share of non-alphanumeric, non-space characters above which a
    /// sentence is considered symbol-laden.
    pub symbol_ratio: f64,
    /// Ids judged incomplete by a curator.
    pub incomplete_ids: BTreeSet<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            article_cap: DEFAULT_ARTICLE_CAP,
            symbol_ratio: DEFAULT_SYMBOL_RATIO,
            incomplete_ids: BTreeSet::new(),
        }
    }
}

struct Patterns {
    inline_math: Regex,
    latex_command: Regex,
    citation: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        inline_math: Regex::new(r"\$[^$]+\$").unwrap(),
        latex_command: Regex::new(r"\\[A-Za-z]+").unwrap(),
        citation: Regex::new(r"\[\s*\d+(?:\s*[,;\u{2013}-]\s*\d+)*\s*\]|\bet\s+al\.").unwrap(),
    })
}

const MATH_OPERATORS: &[char] = &[
    '≤', '≥', '≠', '≈', '≡', '∑', '∏', '∫', '∂', '∇', '√', '∞', '±', '×', '÷', '∈', '∉', '⊂', '⊆', '∀', '∃', '→', '⇒',
    '^', '<', '>', '|', '~',
];

fn symbol_ratio(text: &str) -> f64 {
    let (mut visible, mut symbols) = (0usize, 0usize);
    for ch in text.chars().filter(|c| !c.is_whitespace()) {
        visible += 1;
        if !ch.is_alphanumeric() {
            symbols += 1;
        }
    }
    if visible == 0 {
        0.0
    } else {
        symbols as f64 / visible as f64
    }
}

/// Content-based exclusion reason for one sentence, if any.
pub fn classify(record: &SentenceRecord, cfg: &FilterConfig) -> Option<ExclusionReason> {
    let text = record.text.as_str();
    let p = patterns();
    if cfg.incomplete_ids.contains(&record.id) {
        return Some(ExclusionReason::Incomplete);
    }
    if text.contains('=') || text.contains("\\frac") || p.inline_math.is_match(text) {
        return Some(ExclusionReason::Equation);
    }
    if p.citation.is_match(text) {
        return Some(ExclusionReason::CitationMarker);
    }
    if p.latex_command.is_match(text) || text.contains(MATH_OPERATORS) || symbol_ratio(text) > cfg.symbol_ratio {
        return Some(ExclusionReason::Symbol);
    }
    None
}

/// Keeps at most `cap` sentences per article, the first ones in input order.
pub fn enforce_article_cap(
    records: Vec<SentenceRecord>,
    cap: usize,
) -> Result<(Vec<SentenceRecord>, Vec<Exclusion>), CorpusError> {
    if cap == 0 {
        return Err(CorpusError::InvalidCap);
    }
    let mut per_article: BTreeMap<String, usize> = BTreeMap::new();
    let mut kept = Vec::with_capacity(records.len());
    let mut excluded = Vec::new();
    for r in records {
        let seen = per_article.entry(r.article_id.clone()).or_insert(0);
        if *seen < cap {
            *seen += 1;
            kept.push(r);
        } else {
            excluded.push(Exclusion {
                id: r.id,
                reason: ExclusionReason::ArticleCap,
            });
        }
    }
    Ok((kept, excluded))
}

pub fn filter_sentences(
    records: Vec<SentenceRecord>,
    cfg: &FilterConfig,
) -> Result<(Vec<SentenceRecord>, FilterReport), CorpusError> {
    filter_sentences_with(records, cfg, Execution::default())
}

pub fn filter_sentences_with(
    records: Vec<SentenceRecord>,
    cfg: &FilterConfig,
    exec: Execution,
) -> Result<(Vec<SentenceRecord>, FilterReport), CorpusError> {
    let reasons = exec::map(&records, exec, |r| classify(r, cfg));
    let mut excluded = Vec::new();
    let mut clean = Vec::with_capacity(records.len());
    for (r, reason) in records.into_iter().zip(reasons) {
        match reason {
            Some(reason) => excluded.push(Exclusion { id: r.id, reason }),
            None => clean.push(r),
        }
    }
    let (kept, capped) = enforce_article_cap(clean, cfg.article_cap)?;
    excluded.extend(capped);
    let report = FilterReport {
        retained_count: kept.len(),
        excluded,
    };
    Ok((kept, report))
}

// ---------------------------------------------------------------------------
// Splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 958 / 138 / 274 out of 1370.
    fn default() -> Self {
        Self {
            train: 958.0 / 1370.0,
            val: 138.0 / 1370.0,
            test: 274.0 / 1370.0,
        }
    }
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let a = self.as_array();
        let ok = a.iter().all(|r| r.is_finite() && *r >= 0.0) && (a.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidRatios((self.train, self.val, self.test)))
        }
    }
}

/// Integer apportionment of `total` by `ratios` with largest remainders.
/// Ties go to the earlier slot.
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| total as f64 * r).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub stratified: bool,
    pub counts: SplitCounts,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_ids,
            Split::Val => &self.val_ids,
            Split::Test => &self.test_ids,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub stratify: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            ratios: SplitRatios::default(),
            stratify: true,
        }
    }
}

/// Per-domain split sizes. Every cell is the floor or ceiling of its
/// proportional quota and the column totals equal the global targets.
fn stratified_allocation(sizes: &[usize], ratios: &[f64; 3], targets: &[usize]) -> Result<Vec<[usize; 3]>, CorpusError> {
    let quota = |d: usize, s: usize| sizes[d] as f64 * ratios[s];
    let mut cells: Vec<[usize; 3]> = (0..sizes.len())
        .map(|d| [0, 1, 2].map(|s| (quota(d, s) + 1e-9).floor() as usize))
        .collect();
    let mut row_need: Vec<usize> = cells.iter().zip(sizes).map(|(c, &n)| n - c.iter().sum::<usize>()).collect();
    let mut col_need: Vec<isize> = (0..3)
        .map(|s| targets[s] as isize - cells.iter().map(|c| c[s] as isize).sum::<isize>())
        .collect();
    if col_need.iter().any(|&c| c < 0) {
        return Err(CorpusError::Allocation);
    }

    let mut rows: Vec<usize> = (0..sizes.len()).collect();
    rows.sort_by(|&a, &b| row_need[b].cmp(&row_need[a]).then(a.cmp(&b)));
    for d in rows {
        let mut cols = [0usize, 1, 2];
        cols.sort_by(|&a, &b| {
            let fa = quota(d, a) - cells[d][a] as f64;
            let fb = quota(d, b) - cells[d][b] as f64;
            col_need[b].cmp(&col_need[a]).then(fb.total_cmp(&fa)).then(a.cmp(&b))
        });
        for &s in cols.iter().take(row_need[d]) {
            if col_need[s] <= 0 {
                return Err(CorpusError::Allocation);
            }
            cells[d][s] += 1;
            col_need[s] -= 1;
        }
        row_need[d] = 0;
    }
    Ok(cells)
}

/// Deterministic seeded split. With `stratify`, each domain is shuffled and
/// cut separately so split proportions track the corpus per domain.
pub fn split_corpus(records: &[SentenceRecord], opts: &SplitOptions) -> Result<SplitManifest, CorpusError> {
    opts.ratios.validate()?;
    let ratios = opts.ratios.as_array();
    let targets = largest_remainder(records.len(), &ratios);
    if targets.contains(&0) {
        return Err(CorpusError::TooFewRecords {
            records: records.len(),
            counts: (targets[0], targets[1], targets[2]),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut buckets: [Vec<String>; 3] = Default::default();

    let mut cut = |mut ids: Vec<String>, sizes: [usize; 3], rng: &mut ChaCha8Rng| {
        ids.sort();
        ids.shuffle(rng);
        let mut it = ids.into_iter();
        for (s, n) in sizes.iter().enumerate() {
            buckets[s].extend(it.by_ref().take(*n));
        }
    };

    if opts.stratify {
        let mut groups: BTreeMap<Domain, Vec<String>> = BTreeMap::new();
        for r in records {
            groups.entry(r.domain).or_default().push(r.id.clone());
        }
        let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
        let cells = stratified_allocation(&sizes, &ratios, &targets)?;
        for (ids, sizes) in groups.into_values().zip(cells) {
            cut(ids, sizes, &mut rng);
        }
    } else {
        let ids = records.iter().map(|r| r.id.clone()).collect();
        cut(ids, [targets[0], targets[1], targets[2]], &mut rng);
    }

    let [mut train_ids, mut val_ids, mut test_ids] = buckets;
    train_ids.sort();
    val_ids.sort();
    test_ids.sort();
    Ok(SplitManifest {
        seed: opts.seed,
        stratified: opts.stratify,
        counts: SplitCounts {
            train: train_ids.len(),
            val: val_ids.len(),
            test: test_ids.len(),
        },
        train_ids,
        val_ids,
        test_ids,
    })
}

// ---------------------------------------------------------------------------
// Files

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<SentenceRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        rec.validate()
            .map_err(|reason| CorpusError::MalformedRecord { line: line_no, reason })?;
        if !ids.insert(rec.id.clone()) {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                reason: format!("duplicate id {}", rec.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<SentenceRecord>, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_corpus(BufReader::new(file))
}

pub fn save_corpus(records: &[SentenceRecord], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn save_manifest(manifest: &SplitManifest, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SplitManifest, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::MalformedManifest(e.to_string()))
}

// ---------------------------------------------------------------------------
// Count table

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub domain: Domain,
    pub repository: Repository,
    pub articles: usize,
    pub sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub rows: Vec<StatsRow>,
    pub repositories: usize,
    pub articles: usize,
    pub sentences: usize,
}

pub fn corpus_stats(records: &[SentenceRecord]) -> CorpusStats {
    let mut groups: BTreeMap<(Domain, Repository), (BTreeSet<&str>, usize)> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.domain, r.repository)).or_default();
        g.0.insert(&r.article_id);
        g.1 += 1;
    }
    let rows: Vec<StatsRow> = groups
        .into_iter()
        .map(|((domain, repository), (articles, sentences))| StatsRow {
            domain,
            repository,
            articles: articles.len(),
            sentences,
        })
        .collect();
    CorpusStats {
        repositories: rows.iter().map(|r| r.repository).collect::<BTreeSet<_>>().len(),
        articles: records.iter().map(|r| (r.domain, r.article_id.as_str())).collect::<BTreeSet<_>>().len(),
        sentences: records.len(),
        rows,
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:<12} {:>8} {:>9}", "Domain", "Repository", "Articles", "Sentences")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:<12} {:>8} {:>9}",
                r.domain.display_name(),
                r.repository.display_name(),
                r.articles,
                r.sentences
            )?;
        }
        writeln!(
            f,
            "{:<18} {:<12} {:>8} {:>9}",
            "Total",
            format!("{} (unique)", self.repositories),
            self.articles,
            self.sentences
        )
    }
}
