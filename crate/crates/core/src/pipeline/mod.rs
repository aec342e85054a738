//! Stage runner for the generate, validate, reconstruct and evaluate loop.
//!
//! Every stage reads the previous stage's artifact from `<output_dir>/<run_id>/`
//! and writes `<stage>.jsonl`, `<stage>.failures.jsonl` and finally
//! `<stage>.meta.json`. A stage whose meta records the same input digest is
//! skipped on `--resume`. Per-id problems become failure rows; only
//! run-level problems (bad credentials, unreadable inputs) stop a stage.

mod artifacts;
mod compare;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{self, CorpusError, FilterConfig, SentenceRecord, Split, SplitOptions, SplitRatios, DEFAULT_SEED};
use crate::exec::Execution;
use crate::gateway::{
    harvest_checked, normalize_reconstruction, Gateway, GatewayError, Payload, PromptTemplate, ProviderConfig,
    ReconstructionRecord, TemplateKind,
};
use crate::http::Transport;
use crate::metrics::{summarize_with, EmbeddingProvider, HashedTfEmbedder, MetricConfig, RemoteEmbedConfig, RemoteEmbedder};
use crate::penalty::{structure_penalty_with, ValidityMode};
use crate::schema::{ComplianceConfig, ComplianceReport, RelationCatalog, StructuredRep};

pub use artifacts::{digest_of, read_jsonl, write_jsonl, FailureRow, StageMeta, StagePaths};
pub use compare::{compare_pairs, Comparison, ScoreRow};
pub use report::{render_summary, report_from_scores, RunReport, StageCounts, Validity};

use artifacts::io_err;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", path.display())]
    Artifact { path: PathBuf, reason: String },
    #[error("stage {stage} needs a completed {needs} stage")]
    MissingPrerequisite { stage: Stage, needs: Stage },
    #[error("stage {stage} failed: {reason}")]
    StageFailure { stage: Stage, reason: String },
    #[error("reconstruction ids without a unique original: {}", .0.join(", "))]
    IdMismatch(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl PipelineError {
    pub(crate) fn stage(stage: Stage, reason: impl ToString) -> Self {
        PipelineError::StageFailure {
            stage,
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Generate,
    Validate,
    Reconstruct,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Generate,
        Stage::Validate,
        Stage::Reconstruct,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Generate => "generate",
            Stage::Validate => "validate",
            Stage::Reconstruct => "reconstruct",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Generate => &[Stage::Ingest],
            Stage::Validate => &[Stage::Ingest, Stage::Generate],
            Stage::Reconstruct => &[Stage::Ingest, Stage::Validate],
            Stage::Evaluate => &[Stage::Ingest, Stage::Reconstruct],
            Stage::Report => &[Stage::Evaluate],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSelection {
    Train,
    Val,
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    /// Existing split manifest. Without one, the split is computed from `seed`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitSelection,
    /// Apply the sentence filters before splitting.
    #[serde(default)]
    pub filter: bool,
    #[serde(default = "yes")]
    pub stratify: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsSection {
    /// Pre-generated model output: JSONL of `{"id", "response"}` or
    /// `{"id", "json"}` rows, or a directory of `<id>.json` files.
    pub generated: Option<PathBuf>,
    /// Pre-computed reconstructions: JSONL of `{"id", "reconstructed_text"}`.
    pub reconstructions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingChoice {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub embedding: EmbeddingChoice,
    pub remote: Option<RemoteEmbedConfig>,
    pub lexical: MetricConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaSection {
    pub relations: Option<PathBuf>,
    #[serde(flatten)]
    pub compliance: ComplianceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub inputs: InputsSection,
    #[serde(default)]
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub schema: SchemaSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl RunConfig {
    /// Parses TOML; relative paths are taken relative to `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if cfg.run_id.trim().is_empty() || cfg.run_id.contains(['/', '\\']) || cfg.run_id.starts_with('.') {
            return Err(PipelineError::Config(format!("run_id {:?} is not a plain name", cfg.run_id)));
        }
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        fix(&mut cfg.output_dir);
        fix(&mut cfg.corpus.path);
        cfg.corpus.manifest.as_mut().map(fix);
        cfg.inputs.generated.as_mut().map(fix);
        cfg.inputs.reconstructions.as_mut().map(fix);
        cfg.schema.relations.as_mut().map(fix);
        if let Some(p) = cfg.provider.as_mut() {
            p.cache_dir.as_mut().map(fix);
            p.prompt_dir.as_mut().map(fix);
        }
        if cfg.metrics.embedding == EmbeddingChoice::Remote && cfg.metrics.remote.is_none() {
            return Err(PipelineError::Config("metrics.embedding = \"remote\" needs [metrics.remote]".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub inputs: usize,
    pub outputs: usize,
    pub failures: usize,
    /// Skipped because a finished artifact with the same input digest exists.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRow {
    pub id: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedRow {
    pub id: String,
    pub structured: StructuredRep,
    pub compliance: ComplianceReport,
}

struct StageOutput<R> {
    rows: Vec<R>,
    failures: Vec<FailureRow>,
    inputs: usize,
    extra: serde_json::Map<String, Value>,
}

impl<R> StageOutput<R> {
    fn new(inputs: usize) -> Self {
        Self {
            rows: Vec::new(),
            failures: Vec::new(),
            inputs,
            extra: serde_json::Map::new(),
        }
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    run_dir: PathBuf,
    exec: Execution,
    transport: Option<Arc<dyn Transport>>,
    embedder: Option<Arc<dyn EmbeddingProvider>>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Self {
            run_dir: cfg.run_dir(),
            cfg,
            exec: Execution::default(),
            transport: None,
            embedder: None,
        }
    }

    pub fn execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Replaces the HTTP transport used for chat completions.
    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = Some(transport);
        self
    }

    /// Replaces the embedding provider chosen by the config.
    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// Runs the selected stages in pipeline order. Stops at the first stage
    /// that fails; earlier artifacts stay on disk.
    pub fn run(&self, stages: &[Stage], resume: bool) -> Result<Vec<StageSummary>, PipelineError> {
        let mut selected = stages.to_vec();
        selected.sort();
        selected.dedup();
        selected.into_iter().map(|s| self.run_stage(s, resume)).collect()
    }

    pub fn run_stage(&self, stage: Stage, resume: bool) -> Result<StageSummary, PipelineError> {
        fs::create_dir_all(&self.run_dir).map_err(io_err(&self.run_dir))?;
        for &needs in stage.prerequisites() {
            if StagePaths::new(&self.run_dir, needs).read_meta().is_none() {
                return Err(PipelineError::MissingPrerequisite { stage, needs });
            }
        }
        let digest = self.input_digest(stage)?;
        let paths = StagePaths::new(&self.run_dir, stage);
        if resume {
            if let Some(meta) = paths.read_meta().filter(|m| m.input_digest == digest && paths.rows.exists()) {
                log::info!("{stage}: reusing finished artifact");
                return Ok(StageSummary {
                    stage,
                    inputs: meta.inputs,
                    outputs: meta.outputs,
                    failures: meta.failures,
                    reused: true,
                });
            }
        }
        let _ = fs::remove_file(&paths.meta);

        let (outputs, failures, inputs, extra) = match stage {
            Stage::Ingest => self.finish(&paths, self.ingest()?)?,
            Stage::Generate => self.finish(&paths, self.generate(&paths)?)?,
            Stage::Validate => self.finish(&paths, self.validate()?)?,
            Stage::Reconstruct => self.finish(&paths, self.reconstruct(&paths)?)?,
            Stage::Evaluate => self.finish(&paths, self.evaluate()?)?,
            Stage::Report => {
                let rows = self.report()?;
                (rows, 0, rows, serde_json::Map::new())
            }
        };
        paths.write_meta(&StageMeta {
            stage,
            inputs,
            outputs,
            failures,
            input_digest: digest,
            extra,
        })?;
        log::info!("{stage}: {inputs} in, {outputs} out, {failures} failed");
        Ok(StageSummary {
            stage,
            inputs,
            outputs,
            failures,
            reused: false,
        })
    }

    fn finish<R: Serialize>(
        &self,
        paths: &StagePaths,
        out: StageOutput<R>,
    ) -> Result<(usize, usize, usize, serde_json::Map<String, Value>), PipelineError> {
        write_jsonl(&paths.rows, &out.rows)?;
        write_jsonl(&paths.failures, &out.failures)?;
        Ok((out.rows.len(), out.failures.len(), out.inputs, out.extra))
    }

    fn artifact_bytes(&self, stage: Stage) -> Result<Vec<u8>, PipelineError> {
        let p = StagePaths::new(&self.run_dir, stage).rows;
        fs::read(&p).map_err(io_err(&p))
    }

    fn input_digest(&self, stage: Stage) -> Result<String, PipelineError> {
        let mut parts: Vec<Vec<u8>> = vec![stage.name().as_bytes().to_vec()];
        let section = match stage {
            Stage::Ingest => json!([self.cfg.seed, self.cfg.corpus]),
            Stage::Generate => json!([self.cfg.inputs.generated, self.cfg.provider]),
            Stage::Validate => json!(self.cfg.schema),
            Stage::Reconstruct => json!([self.cfg.inputs.reconstructions, self.cfg.provider]),
            Stage::Evaluate => json!(self.cfg.metrics),
            Stage::Report => json!(self.cfg),
        };
        parts.push(section.to_string().into_bytes());
        for &needs in stage.prerequisites() {
            parts.push(self.artifact_bytes(needs)?);
        }
        let external = match stage {
            Stage::Ingest => vec![Some(self.cfg.corpus.path.clone()), self.cfg.corpus.manifest.clone()],
            Stage::Generate => vec![self.cfg.inputs.generated.clone()],
            Stage::Reconstruct => vec![self.cfg.inputs.reconstructions.clone()],
            _ => vec![],
        };
        for path in external.into_iter().flatten() {
            parts.push(path_bytes(&path)?);
        }
        let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        Ok(digest_of(&refs))
    }

    fn ingested(&self) -> Result<Vec<SentenceRecord>, PipelineError> {
        read_jsonl(&StagePaths::new(&self.run_dir, Stage::Ingest).rows)
    }

    fn catalog(&self) -> Result<RelationCatalog, PipelineError> {
        match &self.cfg.schema.relations {
            Some(p) => RelationCatalog::load(p).map_err(|e| PipelineError::Config(e.to_string())),
            None => Ok(RelationCatalog::default()),
        }
    }

    fn gateway(&self, stage: Stage) -> Result<(Gateway, PromptTemplate), PipelineError> {
        let provider = self.cfg.provider.clone().ok_or_else(|| {
            PipelineError::Config(format!("stage {stage} needs a [provider] section or a pre-computed input file"))
        })?;
        let kind = match stage {
            Stage::Generate => TemplateKind::GenerateJson,
            _ => TemplateKind::Reconstruct,
        };
        let catalog = self.catalog()?;
        let template = match &provider.prompt_dir {
            Some(dir) => PromptTemplate::load(kind, dir, &catalog).map_err(|e| PipelineError::stage(stage, e))?,
            None => PromptTemplate::builtin(kind, &catalog),
        };
        let gateway = match &self.transport {
            Some(t) => Gateway::with_transport(provider, t.clone()),
            None => Gateway::new(provider),
        }
        .map_err(|e| PipelineError::stage(stage, e))?
        .execution(self.exec);
        Ok((gateway, template))
    }

    /// Sends one request per item and sorts the answers into rows and
    /// failures. Credential and configuration problems abort the stage after
    /// the partial results are written.
    fn complete_all<'a>(
        &self,
        stage: Stage,
        paths: &StagePaths,
        items: Vec<(String, Payload<'a>)>,
    ) -> Result<StageOutput<(String, String)>, PipelineError> {
        let (gateway, template) = self.gateway(stage)?;
        let mut out = StageOutput::new(items.len());
        let mut requests = Vec::with_capacity(items.len());
        for (id, payload) in items {
            match gateway.request(id.clone(), &template, payload) {
                Ok(r) => requests.push(r),
                Err(e) => out.failures.push(FailureRow::new(id, e)),
            }
        }
        let results = gateway.complete_many(&requests).map_err(|e| PipelineError::stage(stage, e))?;
        let mut fatal = None;
        let mut cached = 0usize;
        for (req, result) in requests.iter().zip(results) {
            match result {
                Ok(resp) => {
                    cached += resp.cached as usize;
                    out.rows.push((req.id.clone(), resp.text));
                }
                Err(e) => {
                    if matches!(e, GatewayError::AuthError | GatewayError::Config(_)) {
                        fatal.get_or_insert_with(|| e.to_string());
                    }
                    out.failures.push(FailureRow::new(req.id.clone(), e));
                }
            }
        }
        out.extra.insert("cache_hits".into(), cached.into());
        if let Some(reason) = fatal {
            write_jsonl(&paths.failures, &out.failures)?;
            return Err(PipelineError::stage(stage, reason));
        }
        Ok(out)
    }

    fn ingest(&self) -> Result<StageOutput<SentenceRecord>, PipelineError> {
        let c = &self.cfg.corpus;
        let mut records = corpus::load_corpus(&c.path)?;
        let mut extra = serde_json::Map::new();
        if c.filter {
            let (kept, report) = corpus::filter_sentences_with(records, &FilterConfig::default(), self.exec)?;
            extra.insert("filtered_out".into(), report.excluded.len().into());
            records = kept;
        }
        let split = match c.split {
            SplitSelection::All => {
                let mut out = StageOutput::new(records.len());
                out.rows = records;
                out.extra = extra;
                return Ok(out);
            }
            SplitSelection::Train => Split::Train,
            SplitSelection::Val => Split::Val,
            SplitSelection::Test => Split::Test,
        };
        let manifest = match &c.manifest {
            Some(p) => corpus::load_manifest(p)?,
            None => {
                let m = corpus::split_corpus(
                    &records,
                    &SplitOptions {
                        seed: self.cfg.seed,
                        ratios: SplitRatios::default(),
                        stratify: c.stratify,
                    },
                )?;
                corpus::save_manifest(&m, self.run_dir.join("split.json"))?;
                m
            }
        };
        let by_id: HashMap<&str, &SentenceRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let ids = manifest.ids(split);
        let mut out = StageOutput::new(ids.len());
        for id in ids {
            match by_id.get(id.as_str()) {
                Some(r) => out.rows.push((*r).clone()),
                None => out.failures.push(FailureRow::new(id.clone(), "id not in corpus")),
            }
        }
        out.extra = extra;
        Ok(out)
    }

    fn generate(&self, paths: &StagePaths) -> Result<StageOutput<GeneratedRow>, PipelineError> {
        let records = self.ingested()?;
        if let Some(src) = &self.cfg.inputs.generated {
            let mut given = load_generated(src)?;
            let mut out = StageOutput::new(records.len());
            for r in &records {
                match given.remove(&r.id) {
                    Some(response) => out.rows.push(GeneratedRow {
                        id: r.id.clone(),
                        response,
                    }),
                    None => out.failures.push(FailureRow::new(r.id.clone(), "no generated output")),
                }
            }
            if !given.is_empty() {
                log::warn!("generate: {} supplied outputs match no ingested id", given.len());
            }
            return Ok(out);
        }
        let items = records
            .iter()
            .map(|r| (r.id.clone(), Payload::Sentence(&r.text)))
            .collect();
        let done = self.complete_all(Stage::Generate, paths, items)?;
        Ok(StageOutput {
            rows: done
                .rows
                .into_iter()
                .map(|(id, response)| GeneratedRow { id, response })
                .collect(),
            failures: done.failures,
            inputs: done.inputs,
            extra: done.extra,
        })
    }

    fn validate(&self) -> Result<StageOutput<ValidatedRow>, PipelineError> {
        let originals: HashMap<String, String> = self.ingested()?.into_iter().map(|r| (r.id, r.text)).collect();
        let generated: Vec<GeneratedRow> = read_jsonl(&StagePaths::new(&self.run_dir, Stage::Generate).rows)?;
        let catalog = self.catalog()?;
        let mut out = StageOutput::new(generated.len());
        if !generated.is_empty() {
            let responses: Vec<&str> = generated.iter().map(|g| g.response.as_str()).collect();
            let fragment = structure_penalty_with(&responses, ValidityMode::Strict, self.exec)
                .map_err(|e| PipelineError::stage(Stage::Validate, e))?;
            out.extra.insert("validity".into(), json!(Validity::from(&fragment)));
        }
        for g in generated {
            let original = originals.get(&g.id).map(String::as_str).unwrap_or_default();
            match harvest_checked(&g.response, original, &catalog, &self.cfg.schema.compliance) {
                Ok(h) => out.rows.push(ValidatedRow {
                    id: g.id,
                    structured: h.rep,
                    compliance: h.compliance,
                }),
                Err(e) => out.failures.push(FailureRow::new(g.id, e)),
            }
        }
        let noncompliant = out.rows.iter().filter(|r| !r.compliance.is_clean()).count();
        out.extra.insert("noncompliant".into(), noncompliant.into());
        Ok(out)
    }

    fn reconstruct(&self, paths: &StagePaths) -> Result<StageOutput<ReconstructionRecord>, PipelineError> {
        let originals: HashMap<String, String> = self.ingested()?.into_iter().map(|r| (r.id, r.text)).collect();
        let validated: Vec<ValidatedRow> = read_jsonl(&StagePaths::new(&self.run_dir, Stage::Validate).rows)?;
        let (texts, mut failures, extra) = match &self.cfg.inputs.reconstructions {
            Some(src) => (load_reconstructions(src)?, Vec::new(), serde_json::Map::new()),
            None => {
                let items = validated
                    .iter()
                    .map(|v| (v.id.clone(), Payload::Structured(&v.structured)))
                    .collect();
                let done = self.complete_all(Stage::Reconstruct, paths, items)?;
                (done.rows.into_iter().collect(), done.failures, done.extra)
            }
        };
        let mut out = StageOutput::new(validated.len());
        out.extra = extra;
        let failed: std::collections::HashSet<String> = failures.iter().map(|f| f.id.clone()).collect();
        for v in validated {
            if failed.contains(&v.id) {
                continue;
            }
            let text = texts.get(&v.id).map(|t| normalize_reconstruction(t)).unwrap_or_default();
            if text.is_empty() {
                failures.push(FailureRow::new(v.id, "no reconstruction"));
                continue;
            }
            out.rows.push(ReconstructionRecord {
                original_text: originals.get(&v.id).cloned().unwrap_or_default(),
                id: v.id,
                structured: v.structured,
                reconstructed_text: text,
            });
        }
        out.failures = failures;
        Ok(out)
    }

    fn evaluate(&self) -> Result<StageOutput<ScoreRow>, PipelineError> {
        let originals: Vec<(String, String)> = self.ingested()?.into_iter().map(|r| (r.id, r.text)).collect();
        let recon: Vec<ReconstructionRecord> = read_jsonl(&StagePaths::new(&self.run_dir, Stage::Reconstruct).rows)?;
        let pairs: Vec<(String, String)> = recon.into_iter().map(|r| (r.id, r.reconstructed_text)).collect();
        let embedder: Arc<dyn EmbeddingProvider> = match (&self.embedder, self.cfg.metrics.embedding) {
            (Some(e), _) => e.clone(),
            (None, EmbeddingChoice::Offline) => Arc::new(HashedTfEmbedder),
            (None, EmbeddingChoice::Remote) => {
                let remote = self.cfg.metrics.remote.clone().unwrap_or_default();
                Arc::new(
                    RemoteEmbedder::new(remote)
                        .map_err(|e| PipelineError::stage(Stage::Evaluate, e))?
                        .execution(self.exec),
                )
            }
        };
        let cmp = compare_pairs(&originals, &pairs, embedder.as_ref(), &self.cfg.metrics.lexical, self.exec)?;
        let mut out = StageOutput::new(originals.len());
        out.extra.insert("embedding_provider".into(), embedder.id().into());
        out.rows = cmp.rows;
        out.failures = cmp.failures;
        Ok(out)
    }

    /// Writes `report.json` and `report.txt`; returns the number of scored pairs.
    fn report(&self) -> Result<usize, PipelineError> {
        let rows: Vec<ScoreRow> = read_jsonl(&StagePaths::new(&self.run_dir, Stage::Evaluate).rows)?;
        let report = self.build_report(&rows)?;
        artifacts::write_atomic(&self.run_dir.join("report.json"), report.to_json().as_bytes())?;
        artifacts::write_atomic(&self.run_dir.join("report.txt"), report.to_string().as_bytes())?;
        Ok(rows.len())
    }

    fn build_report(&self, rows: &[ScoreRow]) -> Result<RunReport, PipelineError> {
        let scores: Vec<_> = rows.iter().map(|r| r.scores).collect();
        let summary = if scores.is_empty() {
            None
        } else {
            Some(summarize_with(&scores, self.cfg.metrics.lexical.std_dev).map_err(|e| PipelineError::stage(Stage::Report, e))?)
        };
        let mut stages = BTreeMap::new();
        let mut validity = None;
        for stage in Stage::ALL.into_iter().filter(|s| *s != Stage::Report) {
            if let Some(meta) = StagePaths::new(&self.run_dir, stage).read_meta() {
                if let Some(v) = meta.extra.get("validity") {
                    validity = serde_json::from_value(v.clone()).ok();
                }
                stages.insert(
                    stage.name().to_string(),
                    StageCounts {
                        inputs: meta.inputs,
                        outputs: meta.outputs,
                        failures: meta.failures,
                    },
                );
            }
        }
        Ok(RunReport {
            run_id: self.cfg.run_id.clone(),
            validity,
            summary,
            stages,
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
        })
    }
}

/// Reads a finished run's report without re-running anything.
pub fn load_report(run_dir: &Path) -> Result<RunReport, PipelineError> {
    let p = run_dir.join("report.json");
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: p,
        reason: e.to_string(),
    })
}

fn path_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        names.sort();
        let mut bytes = Vec::new();
        for p in names {
            bytes.extend(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().into_bytes());
            bytes.extend(fs::read(&p).map_err(io_err(&p))?);
        }
        Ok(bytes)
    } else {
        fs::read(path).map_err(io_err(path))
    }
}

fn load_generated(src: &Path) -> Result<HashMap<String, String>, PipelineError> {
    if src.is_dir() {
        let mut map = HashMap::new();
        for entry in fs::read_dir(src).map_err(io_err(src))? {
            let p = entry.map_err(io_err(src))?.path();
            if p.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            map.insert(id, fs::read_to_string(&p).map_err(io_err(&p))?);
        }
        return Ok(map);
    }
    let rows: Vec<Value> = read_jsonl(src)?;
    let mut map = HashMap::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let bad = |reason: &str| PipelineError::Artifact {
            path: src.to_path_buf(),
            reason: format!("row {}: {reason}", i + 1),
        };
        let id = row.get("id").and_then(Value::as_str).ok_or_else(|| bad("missing id"))?.to_string();
        let response = match (row.get("response"), row.get("json")) {
            (Some(Value::String(s)), _) => s.clone(),
            (_, Some(v)) => v.to_string(),
            _ => return Err(bad("needs \"response\" or \"json\"")),
        };
        if map.insert(id.clone(), response).is_some() {
            return Err(bad(&format!("duplicate id {id}")));
        }
    }
    Ok(map)
}

fn load_reconstructions(src: &Path) -> Result<HashMap<String, String>, PipelineError> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        #[serde(alias = "text")]
        reconstructed_text: String,
    }
    let rows: Vec<Row> = read_jsonl(src)?;
    let mut map = HashMap::with_capacity(rows.len());
    for r in rows {
        if map.contains_key(&r.id) {
            return Err(PipelineError::Artifact {
                path: src.to_path_buf(),
                reason: format!("duplicate id {}", r.id),
            });
        }
        map.insert(r.id, r.reconstructed_text);
    }
    Ok(map)
}
