//! Experiment matrix execution: (dataset, document, model, variant) cells
//! driven through the two-stage pipeline with a bounded worker pool,
//! stage-1 analysis reuse, resume from a persisted store, and a request
//! budget that halts cleanly.
//!
//! Matrix iteration order is (dataset, document, model, variant) to maximize
//! prompt-cache locality; a reorder buffer serializes results back into that
//! order before they reach the store, so two executions of the same plan on
//! the mock backend produce byte-identical stores regardless of worker
//! timing. Stage-1 analyses are persisted as first-class artifacts so the
//! persuasion analyses can be recomputed without rerunning models.
//!
//! Plan files are TOML:
//!
//! ```toml
//! output_dir = "runs/demo"
//! parallelism = 2
//! budget = 50000
//! variants = ["baseline-van", "pcot-van"]
//!
//! [[models]]
//! provider = "mock"
//! model_id = "mock-small"
//! max_output_tokens = 2048
//! # knowledge_cutoff = "2023-10-01"
//!
//! [[corpora]]
//! dataset = "multidis"
//! path = "corpus.jsonl"
//! sample_n = 450      # optional
//! sample_seed = 42    # optional
//!
//! [mock]                              # optional
//! rulebook = "rulebook.json"
//!
//! [gateway]                           # optional
//! cache_dir = "cache"
//! ```
//!
//! Relative paths are resolved against the plan file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Document, SourceDataset};
use crate::gateway::{
    CompletionRequest, Gateway, GatewayConfig, GatewayError, GatewayStats, MockBackend, ModelSpec,
};
use crate::label::Credibility;
use crate::metrics::{EvalRecord, RecordFlag};
use crate::parser::{
    parse_analysis, parse_single_strategy, parse_verdict_with, strip_explanations, ParseGrade,
    PersuasionAnalysis,
};
use crate::prompt::{
    render_base_version, render_single_step, render_stage1, render_stage2, Adaptation,
    MethodVariant, PromptError, RenderedPrompt,
};
use crate::store::{self, StoreError, StoreManifest, StoreWriter};
use crate::taxonomy::{all_strategies, strategy, StrategyId};

/// One corpus entry of a plan: where to load documents from and how to
/// sample them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub dataset: SourceDataset,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rulebook: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewaySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_base_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_request_interval_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_timeout_ms: Option<u64>,
}

/// A declarative experiment plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub models: Vec<ModelSpec>,
    pub variants: Vec<MethodVariant>,
    pub corpora: Vec<CorpusSpec>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_budget")]
    pub budget: u64,
    pub output_dir: PathBuf,
    /// Label recorded when a stage-2 parse fails; metrics still score such
    /// records as incorrect.
    #[serde(default = "default_abstain")]
    pub abstain_maps_to: Credibility,
    /// Output-token ceiling for persuasion-analysis calls (applied as the
    /// minimum with each model's own limit).
    #[serde(default = "default_stage1_tokens")]
    pub stage1_max_output_tokens: u32,
    /// Output-token ceiling for verdict calls.
    #[serde(default = "default_stage2_tokens")]
    pub stage2_max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<GatewaySection>,
}

fn default_parallelism() -> usize {
    4
}

fn default_budget() -> u64 {
    50_000
}

fn default_abstain() -> Credibility {
    Credibility::Credible
}

fn default_stage1_tokens() -> u32 {
    2048
}

fn default_stage2_tokens() -> u32 {
    512
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("plan configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("request budget exhausted after {written} record(s); state saved to {}", store_path.display())]
    BudgetExceeded { store_path: PathBuf, written: usize },
    #[error("gateway error: {0}")]
    Gateway(#[from] GatewayError),
    #[error("worker failure: {0}")]
    Worker(String),
    #[error("store at {} was produced by a different plan (hash {found} != {expected}); \
             delete it or point output_dir elsewhere", store_path.display())]
    PlanMismatch { store_path: PathBuf, expected: String, found: String },
}

impl RunPlan {
    /// Parse a TOML plan file, resolving relative paths against its parent
    /// directory.
    pub fn from_toml_file(path: &Path) -> Result<Self, RunnerError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut plan: RunPlan = toml::from_str(&raw)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        plan.resolve_paths(base);
        plan.validate()?;
        Ok(plan)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        self.output_dir = resolve(&self.output_dir);
        for c in &mut self.corpora {
            c.path = resolve(&c.path);
        }
        if let Some(mock) = &mut self.mock {
            if let Some(r) = &mock.rulebook {
                mock.rulebook = Some(resolve(r));
            }
        }
        if let Some(gw) = &mut self.gateway {
            if let Some(dir) = &gw.cache_dir {
                gw.cache_dir = Some(resolve(dir));
            }
        }
    }

    /// Structural validation; returns warnings that do not block execution.
    pub fn validate(&self) -> Result<Vec<String>, RunnerError> {
        if self.models.is_empty() {
            return Err(RunnerError::Config("plan lists no models".into()));
        }
        if self.variants.is_empty() {
            return Err(RunnerError::Config("plan lists no variants".into()));
        }
        if self.corpora.is_empty() {
            return Err(RunnerError::Config("plan lists no corpora".into()));
        }
        if self.parallelism == 0 {
            return Err(RunnerError::Config("parallelism must be >= 1".into()));
        }
        for model in &self.models {
            model.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        }
        let mut seen = BTreeSet::new();
        for v in &self.variants {
            if !seen.insert(v.to_string()) {
                return Err(RunnerError::Config(format!("variant {v} listed twice")));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &self.corpora {
            if !seen.insert(c.dataset) {
                return Err(RunnerError::Config(format!("dataset {} listed twice", c.dataset)));
            }
        }
        let mut warnings = Vec::new();
        for c in &self.corpora {
            if let Some(n) = c.sample_n {
                if !(400..=500).contains(&n) {
                    warnings.push(format!(
                        "corpus {}: sample_n = {n} is outside the standard 400-500 test-set range",
                        c.dataset
                    ));
                }
            }
        }
        Ok(warnings)
    }

    /// Force every model onto the mock provider (CLI `--mock`).
    pub fn force_mock(&mut self) {
        for model in &mut self.models {
            model.provider = crate::gateway::Provider::Mock;
        }
    }

    /// Hash of the matrix-defining parts of the plan (models, variants,
    /// corpora, mock setup, abstain mapping). Budget, parallelism, and
    /// gateway tuning may change between resumed runs without a mismatch.
    pub fn matrix_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Fingerprint<'a> {
            models: &'a [ModelSpec],
            variants: &'a [MethodVariant],
            corpora: &'a [CorpusSpec],
            mock: &'a Option<MockSection>,
            abstain_maps_to: Credibility,
            stage1_max_output_tokens: u32,
            stage2_max_output_tokens: u32,
        }
        let fp = Fingerprint {
            models: &self.models,
            variants: &self.variants,
            corpora: &self.corpora,
            mock: &self.mock,
            abstain_maps_to: self.abstain_maps_to,
            stage1_max_output_tokens: self.stage1_max_output_tokens,
            stage2_max_output_tokens: self.stage2_max_output_tokens,
        };
        let serialized = serde_json::to_string(&fp).expect("plan fingerprint");
        let digest = Sha256::digest(serialized.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn store_path(&self) -> PathBuf {
        self.output_dir.join("records.jsonl")
    }

    pub fn artifacts_path(&self) -> PathBuf {
        self.output_dir.join("analyses.jsonl")
    }
}

/// Build the gateway a plan asks for. Cache directory precedence:
/// `PCOT_CACHE_DIR` env var, then the plan's `[gateway].cache_dir`, then
/// `<output_dir>/cache`.
pub fn build_gateway(plan: &RunPlan) -> Result<Gateway, RunnerError> {
    let section = plan.gateway.clone().unwrap_or_default();
    let cache_dir = std::env::var_os("PCOT_CACHE_DIR")
        .map(PathBuf::from)
        .or(section.cache_dir)
        .unwrap_or_else(|| plan.output_dir.join("cache"));
    let mut config = GatewayConfig {
        cache_dir: Some(cache_dir),
        budget: plan.budget,
        ..GatewayConfig::default()
    };
    if let Some(n) = section.max_retries {
        config.max_retries = n;
    }
    if let Some(ms) = section.retry_base_ms {
        config.retry_base = Duration::from_millis(ms);
    }
    if let Some(ms) = section.min_request_interval_ms {
        config.min_request_interval = Duration::from_millis(ms);
    }
    if let Some(ms) = section.request_timeout_ms {
        config.request_timeout = Duration::from_millis(ms);
    }
    let mut gateway = Gateway::new(config)?;
    if let Some(mock) = &plan.mock {
        let backend = match &mock.rulebook {
            Some(path) => MockBackend::from_file(path)?,
            None => match &mock.fallback {
                Some(fixed) => MockBackend::from_rules(&[], Some(fixed.clone()))?,
                None => MockBackend::synthesized(),
            },
        };
        gateway = gateway.with_mock(backend);
    }
    Ok(gateway)
}

/// Persisted stage-1 output: one artifact per (model, stage-1 kind,
/// document), reusable without rerunning models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisArtifact {
    pub model_id: String,
    pub stage1_key: String,
    pub dataset: SourceDataset,
    pub doc_id: String,
    pub raw_responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<PersuasionAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_form: Option<String>,
}

/// Counters describing one execution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cells_total: usize,
    pub cells_resumed: usize,
    pub records_written: usize,
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub stage1_calls: u64,
    pub stage2_calls: u64,
    pub requeries: u64,
    pub stage1_parse_failures: u64,
    pub stage2_parse_failures: u64,
    pub stage1_repaired: u64,
    pub stage2_repaired: u64,
    pub truncated: u64,
}

impl RunSummary {
    /// Failed stage-2 parses as a fraction of written records.
    pub fn failed_parse_fraction(&self) -> f64 {
        if self.records_written == 0 {
            return 0.0;
        }
        self.stage2_parse_failures as f64 / self.records_written as f64
    }
}

#[derive(Debug)]
pub struct ExecuteOutcome {
    pub store_path: PathBuf,
    pub summary: RunSummary,
    pub stats: GatewayStats,
    pub warnings: Vec<String>,
}

/// Exact call counts for a plan, assuming no cache, plus counts net of the
/// cache entries that already exist.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DryRunEstimate {
    pub stage1_calls: u64,
    pub stage2_calls: u64,
    pub total_calls: u64,
    pub expected_cache_hits: u64,
    pub net_calls: u64,
}

struct Cell {
    dataset: SourceDataset,
    doc: Arc<Document>,
    model: ModelSpec,
    variant: MethodVariant,
}

#[derive(Clone)]
struct CellFailure {
    budget: bool,
    message: String,
}

#[derive(Clone)]
struct Stage1Outcome {
    analysis: Option<PersuasionAnalysis>,
    free_form: Option<String>,
    flags: BTreeSet<RecordFlag>,
}

type Stage1Key = (String, String, SourceDataset, String);
type Stage1Memo = Mutex<BTreeMap<Stage1Key, Arc<OnceLock<Result<Stage1Outcome, CellFailure>>>>>;

#[derive(Default)]
struct Counters {
    stage1_calls: AtomicU64,
    stage2_calls: AtomicU64,
    requeries: AtomicU64,
    stage1_failures: AtomicU64,
    stage2_failures: AtomicU64,
    stage1_repaired: AtomicU64,
    stage2_repaired: AtomicU64,
    truncated: AtomicU64,
}

struct RunContext<'a> {
    gateway: &'a Gateway,
    plan: &'a RunPlan,
    memo: Stage1Memo,
    artifacts: Mutex<BTreeMap<Stage1Key, AnalysisArtifact>>,
    counters: Counters,
    stop: AtomicBool,
}

fn load_corpora(plan: &RunPlan) -> Result<Vec<(SourceDataset, Vec<Document>)>, RunnerError> {
    let mut corpora = Vec::new();
    for spec in &plan.corpora {
        let docs = corpus::read_jsonl(&spec.path)?;
        let docs = match spec.sample_n {
            Some(n) => corpus::sample_test_set(&docs, n, spec.sample_seed.unwrap_or(0))?,
            None => docs,
        };
        for d in &docs {
            if d.source_dataset != spec.dataset {
                return Err(RunnerError::Config(format!(
                    "corpus {} contains a {} document ({})",
                    spec.path.display(),
                    d.source_dataset,
                    d.id
                )));
            }
        }
        corpora.push((spec.dataset, docs));
    }
    Ok(corpora)
}

fn build_cells(plan: &RunPlan, corpora: &[(SourceDataset, Vec<Document>)]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (dataset, docs) in corpora {
        for doc in docs {
            let doc = Arc::new(doc.clone());
            for model in &plan.models {
                for variant in &plan.variants {
                    cells.push(Cell {
                        dataset: *dataset,
                        doc: Arc::clone(&doc),
                        model: model.clone(),
                        variant: *variant,
                    });
                }
            }
        }
    }
    cells
}

/// Run the full matrix. Resumes from an existing store (cells already
/// present are skipped) and halts cleanly with state saved when the budget
/// runs out.
pub fn execute(plan: &RunPlan, gateway: &Gateway) -> Result<ExecuteOutcome, RunnerError> {
    let mut warnings = plan.validate()?;
    std::fs::create_dir_all(&plan.output_dir)
        .map_err(|e| RunnerError::Config(format!("cannot create output dir: {e}")))?;
    let corpora = load_corpora(plan)?;
    let store_path = plan.store_path();
    let fingerprint = plan.matrix_fingerprint();

    // Resume state: records already persisted are skipped.
    let mut completed: BTreeSet<(String, String, SourceDataset, String)> = BTreeSet::new();
    if store_path.exists() {
        if let Some(manifest) = store::read_manifest(&store_path)? {
            if manifest.plan_hash != fingerprint {
                return Err(RunnerError::PlanMismatch {
                    store_path,
                    expected: fingerprint,
                    found: manifest.plan_hash,
                });
            }
        }
        for record in store::read_records(&store_path)? {
            completed.insert(record.key());
        }
    }

    let all_cells = build_cells(plan, &corpora);
    let cells_total = all_cells.len();
    if plan.budget < cells_total as u64 {
        warnings.push(format!(
            "budget {} is below the matrix size {cells_total}; the run may halt early",
            plan.budget
        ));
    }
    let pending: Vec<Cell> = all_cells
        .into_iter()
        .filter(|c| {
            !completed.contains(&(
                c.model.model_id.clone(),
                c.variant.to_string(),
                c.dataset,
                c.doc.id.clone(),
            ))
        })
        .collect();
    let cells_resumed = cells_total - pending.len();

    let mut prior_artifacts: BTreeMap<Stage1Key, AnalysisArtifact> = BTreeMap::new();
    let artifacts_path = plan.artifacts_path();
    if artifacts_path.exists() {
        let raw = std::fs::read_to_string(&artifacts_path)
            .map_err(|e| RunnerError::Config(format!("cannot read artifacts: {e}")))?;
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let artifact: AnalysisArtifact = serde_json::from_str(line)
                .map_err(|e| RunnerError::Config(format!("artifacts file corrupt: {e}")))?;
            let key = (
                artifact.model_id.clone(),
                artifact.stage1_key.clone(),
                artifact.dataset,
                artifact.doc_id.clone(),
            );
            prior_artifacts.insert(key, artifact);
        }
    }

    let stats_before = gateway.stats();
    let ctx = RunContext {
        gateway,
        plan,
        memo: Mutex::new(BTreeMap::new()),
        artifacts: Mutex::new(prior_artifacts),
        counters: Counters::default(),
        stop: AtomicBool::new(false),
    };
    let failure: Mutex<Option<CellFailure>> = Mutex::new(None);

    let mut writer = StoreWriter::append(&store_path)?;
    let next_cell = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, EvalRecord)>();

    std::thread::scope(|scope| {
        let workers = plan.parallelism.min(pending.len().max(1));
        for _ in 0..workers {
            let tx = tx.clone();
            let pending = &pending;
            let ctx = &ctx;
            let next_cell = &next_cell;
            let failure = &failure;
            scope.spawn(move || loop {
                if ctx.stop.load(Ordering::SeqCst) {
                    break;
                }
                let idx = next_cell.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = pending.get(idx) else { break };
                match run_cell(ctx, cell) {
                    Ok(record) => {
                        if tx.send((idx, record)).is_err() {
                            break;
                        }
                    }
                    Err(cell_failure) => {
                        let mut slot = failure.lock().expect("failure slot");
                        if slot.is_none() {
                            *slot = Some(cell_failure);
                        }
                        ctx.stop.store(true, Ordering::SeqCst);
                        break;
                    }
                }
            });
        }
        drop(tx);

        // Reorder buffer: persist strictly in matrix order so the store is
        // byte-stable and a halted run always leaves a clean prefix.
        let mut buffer: BTreeMap<usize, EvalRecord> = BTreeMap::new();
        let mut next_write = 0usize;
        for (idx, record) in rx {
            buffer.insert(idx, record);
            while let Some(record) = buffer.remove(&next_write) {
                if writer.write(&record).is_err() {
                    ctx.stop.store(true, Ordering::SeqCst);
                    break;
                }
                next_write += 1;
            }
        }
    });
    writer.flush()?;
    let records_written = writer.written();

    // Persist stage-1 artifacts sorted by key for determinism.
    {
        let artifacts = ctx.artifacts.lock().expect("artifacts lock");
        let mut out = String::new();
        for artifact in artifacts.values() {
            out.push_str(&serde_json::to_string(artifact).expect("artifact json"));
            out.push('\n');
        }
        std::fs::write(&artifacts_path, out)
            .map_err(|e| RunnerError::Config(format!("cannot write artifacts: {e}")))?;
    }

    let stats_after = gateway.stats();
    let stats = GatewayStats {
        provider_calls: stats_after.provider_calls - stats_before.provider_calls,
        cache_hits: stats_after.cache_hits - stats_before.cache_hits,
        calls_by_tag: {
            let mut by_tag = stats_after.calls_by_tag;
            for (tag, count) in &stats_before.calls_by_tag {
                if let Some(v) = by_tag.get_mut(tag) {
                    *v -= count;
                }
            }
            by_tag.retain(|_, v| *v > 0);
            by_tag
        },
    };
    let summary = RunSummary {
        cells_total,
        cells_resumed,
        records_written,
        provider_calls: stats.provider_calls,
        cache_hits: stats.cache_hits,
        stage1_calls: stats.calls_by_tag.get("stage1").copied().unwrap_or(0),
        stage2_calls: stats.calls_by_tag.get("stage2").copied().unwrap_or(0),
        requeries: ctx.counters.requeries.load(Ordering::SeqCst),
        stage1_parse_failures: ctx.counters.stage1_failures.load(Ordering::SeqCst),
        stage2_parse_failures: ctx.counters.stage2_failures.load(Ordering::SeqCst),
        stage1_repaired: ctx.counters.stage1_repaired.load(Ordering::SeqCst),
        stage2_repaired: ctx.counters.stage2_repaired.load(Ordering::SeqCst),
        truncated: ctx.counters.truncated.load(Ordering::SeqCst),
    };
    let record_count = store::read_records(&store_path)?.len();
    store::write_manifest(
        &store_path,
        &StoreManifest {
            plan_hash: fingerprint,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created: chrono::Utc::now().to_rfc3339(),
            record_count,
            gateway: Some(stats.clone()),
        },
    )?;

    if let Some(cell_failure) = failure.lock().expect("failure slot").take() {
        return Err(if cell_failure.budget {
            RunnerError::BudgetExceeded { store_path, written: records_written }
        } else {
            RunnerError::Worker(cell_failure.message)
        });
    }
    Ok(ExecuteOutcome { store_path, summary, stats, warnings })
}

fn grade_flags(
    grade: ParseGrade,
    failed_flag: RecordFlag,
    repaired_flag: RecordFlag,
    flags: &mut BTreeSet<RecordFlag>,
    failed: &AtomicU64,
    repaired: &AtomicU64,
) {
    match grade {
        ParseGrade::Failed => {
            flags.insert(failed_flag);
            failed.fetch_add(1, Ordering::SeqCst);
        }
        ParseGrade::Repaired => {
            flags.insert(repaired_flag);
            repaired.fetch_add(1, Ordering::SeqCst);
        }
        ParseGrade::Strict => {}
    }
}

/// Per-stage output ceiling: the model's own limit capped by the stage
/// default.
fn stage_model(model: &ModelSpec, stage_cap: u32) -> ModelSpec {
    let mut m = model.clone();
    m.max_output_tokens = m.max_output_tokens.min(stage_cap);
    m
}

fn gateway_failure(e: &GatewayError) -> CellFailure {
    CellFailure {
        budget: matches!(e, GatewayError::BudgetExceeded { .. }),
        message: e.to_string(),
    }
}

fn prompt_failure(e: PromptError) -> CellFailure {
    CellFailure { budget: false, message: e.to_string() }
}

/// Complete with one automatic cache-bypassing re-query when `accept`
/// rejects the first response (transient formatting noise happens even at
/// temperature 0 across providers).
fn complete_with_requery(
    ctx: &RunContext<'_>,
    request: &CompletionRequest,
    accept: impl Fn(&str) -> bool,
) -> Result<(String, bool), CellFailure> {
    let first = ctx.gateway.complete(request).map_err(|e| gateway_failure(&e))?;
    if first.truncated {
        ctx.counters.truncated.fetch_add(1, Ordering::SeqCst);
    }
    if accept(&first.text) {
        return Ok((first.text, first.truncated));
    }
    ctx.counters.requeries.fetch_add(1, Ordering::SeqCst);
    let second = ctx.gateway.complete_fresh(request).map_err(|e| gateway_failure(&e))?;
    if second.truncated {
        ctx.counters.truncated.fetch_add(1, Ordering::SeqCst);
    }
    Ok((second.text, second.truncated))
}

fn stage1_outcome(ctx: &RunContext<'_>, cell: &Cell) -> Result<Stage1Outcome, CellFailure> {
    let Some(stage1_key) = cell.variant.stage1_key() else {
        return Ok(Stage1Outcome { analysis: None, free_form: None, flags: BTreeSet::new() });
    };
    let memo_key: Stage1Key =
        (cell.model.model_id.clone(), stage1_key.clone(), cell.dataset, cell.doc.id.clone());
    let slot = {
        let mut memo = ctx.memo.lock().expect("stage1 memo");
        Arc::clone(memo.entry(memo_key.clone()).or_default())
    };
    slot.get_or_init(|| {
        let (outcome, raw_responses) = compute_stage1(ctx, cell, &stage1_key)?;
        let artifact = AnalysisArtifact {
            model_id: cell.model.model_id.clone(),
            stage1_key: stage1_key.clone(),
            dataset: cell.dataset,
            doc_id: cell.doc.id.clone(),
            raw_responses,
            analysis: outcome.analysis.clone(),
            free_form: outcome.free_form.clone(),
        };
        ctx.artifacts.lock().expect("artifacts lock").insert(memo_key.clone(), artifact);
        Ok(outcome)
    })
    .clone()
}

fn compute_stage1(
    ctx: &RunContext<'_>,
    cell: &Cell,
    stage1_key: &str,
) -> Result<(Stage1Outcome, Vec<String>), CellFailure> {
    let mut flags = BTreeSet::new();
    let mut raw_responses = Vec::new();

    if cell.variant.adaptation() == Adaptation::PCoTBaseVersion {
        let (stage1_prompt, _) = render_base_version(cell.variant.stage2_kind(), &cell.doc, "")
            .map_err(prompt_failure)?;
        let tag = format!("stage1/{}/bv/{}/{}", cell.model.model_id, cell.dataset, cell.doc.id);
        let model = stage_model(&cell.model, ctx.plan.stage1_max_output_tokens);
        let request = CompletionRequest::new(model, stage1_prompt, tag);
        ctx.counters.stage1_calls.fetch_add(1, Ordering::SeqCst);
        // Free-form analyses cannot fail to parse; any text is usable.
        let (text, _) = complete_with_requery(ctx, &request, |_| true)?;
        raw_responses.push(text.clone());
        return Ok((Stage1Outcome { analysis: None, free_form: Some(text), flags }, raw_responses));
    }

    let prompts =
        render_stage1(cell.variant, &cell.doc, all_strategies()).map_err(prompt_failure)?;
    if prompts.len() == 1 {
        let prompt = prompts.into_iter().next().unwrap().prompt;
        let tag = format!(
            "stage1/{}/{stage1_key}/{}/{}",
            cell.model.model_id, cell.dataset, cell.doc.id
        );
        let model = stage_model(&cell.model, ctx.plan.stage1_max_output_tokens);
        let request = CompletionRequest::new(model, prompt, tag);
        ctx.counters.stage1_calls.fetch_add(1, Ordering::SeqCst);
        let (text, _) = complete_with_requery(ctx, &request, |t| {
            parse_analysis(t).parse_grade != ParseGrade::Failed
        })?;
        raw_responses.push(text.clone());
        let analysis = parse_analysis(&text);
        grade_flags(
            analysis.parse_grade,
            RecordFlag::StageOneFailed,
            RecordFlag::StageOneRepaired,
            &mut flags,
            &ctx.counters.stage1_failures,
            &ctx.counters.stage1_repaired,
        );
        return Ok((
            Stage1Outcome { analysis: Some(analysis), free_form: None, flags },
            raw_responses,
        ));
    }

    // One-task-at-a-time family: six per-strategy responses merged into one
    // analysis; the merged grade is the worst of the parts.
    let mut labels = BTreeMap::new();
    let mut explanations = BTreeMap::new();
    let mut worst = ParseGrade::Strict;
    for stage1_prompt in prompts {
        let target = stage1_prompt.target.expect("per-strategy prompt has a target");
        let tag = format!(
            "stage1/{}/{stage1_key}/{}/{}/{}",
            cell.model.model_id,
            cell.dataset,
            cell.doc.id,
            strategy(target).shortcut.to_lowercase()
        );
        let model = stage_model(&cell.model, ctx.plan.stage1_max_output_tokens);
        let request = CompletionRequest::new(model, stage1_prompt.prompt, tag);
        ctx.counters.stage1_calls.fetch_add(1, Ordering::SeqCst);
        let (text, _) = complete_with_requery(ctx, &request, |t| {
            parse_single_strategy(t, target).2 != ParseGrade::Failed
        })?;
        raw_responses.push(text.clone());
        let (label, explanation, grade) = parse_single_strategy(&text, target);
        worst = worst.max(grade);
        labels.insert(target, label);
        explanations.insert(target, explanation);
    }
    grade_flags(
        worst,
        RecordFlag::StageOneFailed,
        RecordFlag::StageOneRepaired,
        &mut flags,
        &ctx.counters.stage1_failures,
        &ctx.counters.stage1_repaired,
    );
    let analysis = if worst == ParseGrade::Failed {
        PersuasionAnalysis::sentinel()
    } else {
        PersuasionAnalysis::new(labels, explanations, worst).expect("six merged strategies")
    };
    Ok((Stage1Outcome { analysis: Some(analysis), free_form: None, flags }, raw_responses))
}

fn stage2_prompt(cell: &Cell, stage1: &Stage1Outcome) -> Result<RenderedPrompt, CellFailure> {
    match cell.variant.adaptation() {
        Adaptation::Baseline => render_stage2(cell.variant, &cell.doc, None),
        Adaptation::PCoT | Adaptation::PCoTNoExplanation => {
            render_stage2(cell.variant, &cell.doc, stage1.analysis.as_ref())
        }
        Adaptation::PCoTSingleStep => {
            render_single_step(cell.variant.stage2_kind(), &cell.doc, all_strategies())
        }
        Adaptation::PCoTBaseVersion => {
            let free = stage1.free_form.as_deref().unwrap_or("");
            render_base_version(cell.variant.stage2_kind(), &cell.doc, free).map(|(_, p)| p)
        }
    }
    .map_err(prompt_failure)
}

fn run_cell(ctx: &RunContext<'_>, cell: &Cell) -> Result<EvalRecord, CellFailure> {
    let stage1 = stage1_outcome(ctx, cell)?;
    let mut flags = stage1.flags.clone();

    let prompt = stage2_prompt(cell, &stage1)?;
    let tag = format!(
        "stage2/{}/{}/{}/{}",
        cell.model.model_id, cell.variant, cell.dataset, cell.doc.id
    );
    // Single-step responses carry a full analysis, so they get the
    // stage-1-sized ceiling.
    let cap = if cell.variant.adaptation() == Adaptation::PCoTSingleStep {
        ctx.plan.stage1_max_output_tokens
    } else {
        ctx.plan.stage2_max_output_tokens
    };
    let request = CompletionRequest::new(stage_model(&cell.model, cap), prompt, tag);
    ctx.counters.stage2_calls.fetch_add(1, Ordering::SeqCst);
    let abstain = ctx.plan.abstain_maps_to;
    let (text, truncated) = complete_with_requery(ctx, &request, |t| {
        parse_verdict_with(t, abstain).parse_grade != ParseGrade::Failed
    })?;
    if truncated {
        flags.insert(RecordFlag::Truncated);
    }
    let verdict = parse_verdict_with(&text, abstain);
    grade_flags(
        verdict.parse_grade,
        RecordFlag::StageTwoFailed,
        RecordFlag::StageTwoRepaired,
        &mut flags,
        &ctx.counters.stage2_failures,
        &ctx.counters.stage2_repaired,
    );

    // The analysis stored on the record is the one stage 2 consumed.
    let analysis = match cell.variant.adaptation() {
        Adaptation::Baseline | Adaptation::PCoTBaseVersion => None,
        Adaptation::PCoT => stage1.analysis,
        Adaptation::PCoTNoExplanation => stage1.analysis.as_ref().map(|a| {
            if a.parse_grade == ParseGrade::Failed {
                a.clone()
            } else {
                strip_explanations(a).expect("non-failed analysis strips")
            }
        }),
        Adaptation::PCoTSingleStep => {
            // The single response is parsed twice: analysis and verdict.
            let analysis = parse_analysis(&text);
            grade_flags(
                analysis.parse_grade,
                RecordFlag::StageOneFailed,
                RecordFlag::StageOneRepaired,
                &mut flags,
                &ctx.counters.stage1_failures,
                &ctx.counters.stage1_repaired,
            );
            Some(analysis)
        }
    };

    Ok(EvalRecord {
        doc_id: cell.doc.id.clone(),
        gold_label: cell.doc.gold_label,
        predicted: verdict.label,
        analysis,
        model_id: cell.model.model_id.clone(),
        method: cell.variant,
        dataset: cell.dataset,
        genre: cell.doc.genre,
        flags,
    })
}

/// Exact call counts for the plan: stage-1 units shared between variants
/// are counted once. Cache hits are probed by rendering the actual prompts;
/// a PCoT stage-2 prompt can only be probed when its stage-1 response is
/// already cached, because the prompt embeds the analysis.
pub fn dry_run(plan: &RunPlan, gateway: &Gateway) -> Result<DryRunEstimate, RunnerError> {
    plan.validate()?;
    let corpora = load_corpora(plan)?;
    let mut estimate = DryRunEstimate::default();
    let mut stage1_seen: BTreeSet<Stage1Key> = BTreeSet::new();

    for (dataset, docs) in &corpora {
        for doc in docs {
            for model in &plan.models {
                for variant in &plan.variants {
                    let mut stage1_texts: Vec<Option<String>> = Vec::new();
                    if let Some(stage1_key) = variant.stage1_key() {
                        let prompts: Vec<RenderedPrompt> =
                            if variant.adaptation() == Adaptation::PCoTBaseVersion {
                                vec![render_base_version(variant.stage2_kind(), doc, "")?.0]
                            } else {
                                render_stage1(*variant, doc, all_strategies())?
                                    .into_iter()
                                    .map(|p| p.prompt)
                                    .collect()
                            };
                        let key =
                            (model.model_id.clone(), stage1_key.clone(), *dataset, doc.id.clone());
                        if stage1_seen.insert(key) {
                            estimate.stage1_calls += prompts.len() as u64;
                            for p in &prompts {
                                if gateway.is_cached(&model.model_id, &p.content_hash) {
                                    estimate.expected_cache_hits += 1;
                                }
                            }
                        }
                        stage1_texts = prompts
                            .iter()
                            .map(|p| gateway.cached_text(&model.model_id, &p.content_hash))
                            .collect();
                    }
                    estimate.stage2_calls += 1;
                    let stage2 = match variant.adaptation() {
                        Adaptation::Baseline => Some(render_stage2(*variant, doc, None)?),
                        Adaptation::PCoTSingleStep => {
                            Some(render_single_step(variant.stage2_kind(), doc, all_strategies())?)
                        }
                        Adaptation::PCoT | Adaptation::PCoTNoExplanation => {
                            cached_analysis(*variant, &stage1_texts)
                                .and_then(|a| render_stage2(*variant, doc, Some(&a)).ok())
                        }
                        Adaptation::PCoTBaseVersion => {
                            stage1_texts.first().cloned().flatten().and_then(|free| {
                                render_base_version(variant.stage2_kind(), doc, &free)
                                    .ok()
                                    .map(|(_, p)| p)
                            })
                        }
                    };
                    if let Some(prompt) = stage2 {
                        if gateway.is_cached(&model.model_id, &prompt.content_hash) {
                            estimate.expected_cache_hits += 1;
                        }
                    }
                }
            }
        }
    }
    estimate.total_calls = estimate.stage1_calls + estimate.stage2_calls;
    estimate.net_calls = estimate.total_calls - estimate.expected_cache_hits;
    Ok(estimate)
}

/// Rebuild the analysis a fully cached stage-1 unit would produce, for cache
/// probing only. `texts` are in taxonomy order for per-strategy kinds.
fn cached_analysis(variant: MethodVariant, texts: &[Option<String>]) -> Option<PersuasionAnalysis> {
    let kind = variant.stage1_kind()?;
    let analysis = if kind.prompts_per_doc() == 1 {
        let text = texts.first()?.as_deref()?;
        let analysis = parse_analysis(text);
        if analysis.parse_grade == ParseGrade::Failed {
            return None;
        }
        analysis
    } else {
        if texts.len() != 6 || texts.iter().any(Option::is_none) {
            return None;
        }
        let mut labels = BTreeMap::new();
        let mut explanations = BTreeMap::new();
        let mut worst = ParseGrade::Strict;
        for (text, &target) in texts.iter().zip(StrategyId::ALL.iter()) {
            let (label, explanation, grade) =
                parse_single_strategy(text.as_deref().unwrap(), target);
            worst = worst.max(grade);
            labels.insert(target, label);
            explanations.insert(target, explanation);
        }
        if worst == ParseGrade::Failed {
            return None;
        }
        PersuasionAnalysis::new(labels, explanations, worst).ok()?
    };
    match variant.adaptation() {
        Adaptation::PCoTNoExplanation if analysis.parse_grade != ParseGrade::Failed => {
            strip_explanations(&analysis).ok()
        }
        _ => Some(analysis),
    }
}
