//! End-to-end orchestration driven by a single config file.

mod config;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

pub use config::{
    read_path_list, validate_config, ConfigError, EmbedderConfig, EndpointsConfig, EvalConfig, FieldViolation,
    GenerationConfig, PipelineConfig, RagConfig, RandomStartConfig, SweepConfig,
};
pub use manifest::{verify_outputs, ArtifactRef, RunManifest, RunStatus, StageEntry, RUN_MANIFEST_FILE};

use crate::client::{ModelClient, PredictionRecord};
use crate::ingest::{ingest_repository, IngestManifest, Language};
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
use crate::metrics::{aggregate_report, evaluate, overall_report, write_report_csv, CategoryReport, EvalInput, EvalRecord};
use crate::pairs::{
    count_pairs, exclude_holdout, generate_pairs, leakage_scan, CompletionPair, Corpus, FilterConfig, LeakageReport,
    PairCounts, PairKind,
};
use crate::rag::{augment_query, index_build, Embedder, VectorIndex};
use crate::scopes::{extract_all, write_scopes_jsonl, Category, FileScopes, ScopeCandidate};
use manifest::{file_ref, tree_ref};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }

    fn stage(stage: &str, source: impl Into<BoxError>) -> Self {
        PipelineError::Stage {
            stage: stage.to_string(),
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunMode {
    RagEval,
    FtExport,
    EvalOnly,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::RagEval => "RAG_EVAL",
            RunMode::FtExport => "FT_EXPORT",
            RunMode::EvalOnly => "EVAL_ONLY",
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "RAG_EVAL" => Ok(RunMode::RagEval),
            "FT_EXPORT" => Ok(RunMode::FtExport),
            "EVAL_ONLY" => Ok(RunMode::EvalOnly),
            _ => Err(format!("unknown mode {s:?}; expected rag_eval, ft_export or eval_only")),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Locations of every artifact under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    eval_dir: Option<PathBuf>,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            eval_dir: None,
        }
    }
    pub fn with_eval_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.eval_dir = Some(dir.into());
        self
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.eval_dir.clone().unwrap_or_else(|| self.root.join("eval"))
    }
    pub fn ingest_dir(&self) -> PathBuf {
        self.root.join("ingest")
    }
    pub fn scopes(&self) -> PathBuf {
        self.root.join("scopes.jsonl")
    }
    pub fn train_pairs(&self) -> PathBuf {
        self.root.join("pairs").join("train.jsonl")
    }
    pub fn test_pairs(&self) -> PathBuf {
        self.root.join("pairs").join("test.jsonl")
    }
    pub fn dataset_card(&self) -> PathBuf {
        self.root.join("dataset_card.json")
    }
    pub fn leakage(&self) -> PathBuf {
        self.root.join("leakage.json")
    }
    pub fn index(&self) -> PathBuf {
        self.root.join("index.bin")
    }
    pub fn prompts(&self) -> PathBuf {
        self.root.join("prompts.jsonl")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
    pub fn eval_records(&self) -> PathBuf {
        self.eval_dir().join("records.jsonl")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.eval_dir().join("report.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.eval_dir().join("report.json")
    }
}

/// Augmented prompt for one test pair, as consumed by `predict`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub test_id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neighbors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCard {
    pub files_ingested: usize,
    pub files_by_language: BTreeMap<Language, usize>,
    pub candidates_total: usize,
    pub candidates_by_category: BTreeMap<Category, usize>,
    pub candidates_kept: usize,
    pub holdout_files: usize,
    pub train: PairCounts,
    pub test: PairCounts,
    pub filter: FilterConfig,
    pub random_starts: usize,
    pub seed: u64,
    pub eot_token: String,
    pub include_closer: bool,
    pub diagnostics: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_scored: usize,
    pub n_failed: usize,
    pub n_missing: usize,
    pub overall: Option<CategoryReport>,
    pub categories: Vec<CategoryReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub card: Option<DatasetCard>,
    pub report: Option<EvalSummary>,
}

/// Ingested corpus, scope candidates and the split pair sets.
pub struct PreparedData {
    pub ingest: IngestManifest,
    pub corpus: Corpus,
    pub scopes: Vec<FileScopes>,
    pub train: Vec<CompletionPair>,
    pub test: Vec<CompletionPair>,
    pub card: DatasetCard,
}

struct Recorder {
    out: PathBuf,
    manifest: RunManifest,
}

impl Recorder {
    fn new(out: &Path, mode: RunMode) -> Self {
        Self {
            out: out.to_path_buf(),
            manifest: RunManifest::new(mode.as_str()),
        }
    }

    /// Appends a manifest entry for the stage and persists the manifest,
    /// whether or not the stage succeeded.
    fn record<T>(
        &mut self,
        stage: &str,
        inputs: Vec<ArtifactRef>,
        outputs: &[PathBuf],
        started: Instant,
        result: Result<(T, serde_json::Value), PipelineError>,
    ) -> Result<T, PipelineError> {
        let outputs: Vec<ArtifactRef> = outputs.iter().map(|p| file_ref(&self.out, p)).collect();
        let (value, entry_err, stats) = match result {
            Ok((v, stats)) => (Some(v), None, stats),
            Err(e) => (None, Some(e), serde_json::Value::Null),
        };
        self.manifest.stages.push(StageEntry {
            stage: stage.to_string(),
            inputs,
            outputs,
            incomplete: entry_err.is_some(),
            error: entry_err.as_ref().map(|e| e.to_string()),
            duration_ms: started.elapsed().as_millis() as u64,
            stats,
        });
        if entry_err.is_some() {
            self.manifest.status = RunStatus::Failed;
            self.manifest.finished_at = Some(Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true));
        }
        self.manifest
            .write(&self.out)
            .map_err(|e| PipelineError::stage("manifest", e))?;
        match (value, entry_err) {
            (Some(v), None) => Ok(v),
            (_, Some(e)) => Err(e),
            _ => unreachable!(),
        }
    }

    fn input(&self, path: &Path) -> ArtifactRef {
        file_ref(&self.out, path)
    }

    fn finish(mut self) -> Result<(RunManifest, PathBuf), PipelineError> {
        self.manifest.status = RunStatus::Complete;
        self.manifest.finished_at = Some(Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true));
        let path = self
            .manifest
            .write(&self.out)
            .map_err(|e| PipelineError::stage("manifest", e))?;
        Ok((self.manifest, path))
    }
}

fn stats(v: impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn jsonl_err(stage: &str) -> impl Fn(JsonlError) -> PipelineError + '_ {
    move |e| PipelineError::stage(stage, e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    fs::write(path, bytes)
}

/// Splits generated pairs into training pairs (holdout files removed) and
/// primary test pairs drawn from the holdout files.
pub fn split_pairs(
    pairs: Vec<CompletionPair>,
    holdout: &[String],
    corpus: &Corpus,
) -> (Vec<CompletionPair>, Vec<CompletionPair>, usize, Vec<String>) {
    let outcome = exclude_holdout(pairs, holdout, corpus);
    let held: std::collections::BTreeSet<&str> = outcome.removed.iter().map(|p| p.file_id.as_str()).collect();
    let n_files = held.len();
    let test = outcome
        .removed
        .into_iter()
        .filter(|p| p.kind == PairKind::Primary)
        .collect();
    (outcome.kept, test, n_files, outcome.unknown_paths)
}

fn dataset_card(
    cfg: &PipelineConfig,
    ingest: &IngestManifest,
    scopes: &[FileScopes],
    candidates_kept: usize,
    holdout_files: usize,
    train: &[CompletionPair],
    test: &[CompletionPair],
    diagnostics: usize,
) -> DatasetCard {
    let mut by_category = BTreeMap::new();
    let mut total = 0;
    for c in scopes.iter().flat_map(|f| &f.candidates) {
        *by_category.entry(c.category).or_default() += 1;
        total += 1;
    }
    DatasetCard {
        files_ingested: ingest.files.len(),
        files_by_language: ingest.counts.clone(),
        candidates_total: total,
        candidates_by_category: by_category,
        candidates_kept,
        holdout_files,
        train: count_pairs(train),
        test: count_pairs(test),
        filter: cfg.filter.clone(),
        random_starts: cfg.random_starts.k,
        seed: cfg.random_starts.seed,
        eot_token: cfg.eot_token.clone(),
        include_closer: cfg.include_closer,
        diagnostics,
    }
}

fn flat_candidates(scopes: &[FileScopes]) -> Vec<ScopeCandidate> {
    scopes.iter().flat_map(|f| f.candidates.iter().cloned()).collect()
}

fn prepare(cfg: &PipelineConfig, layout: &Layout, rec: &mut Recorder) -> Result<PreparedData, PipelineError> {
    let root = cfg.repo_root.clone().expect("validated");

    let t = Instant::now();
    let ingest_dir = layout.ingest_dir();
    let ingest_outputs = [ingest_dir.join("manifest.jsonl"), ingest_dir.join("ingest.json")];
    let res = ingest_repository(&root, &cfg.ingest_options())
        .and_then(|m| m.write_to(&ingest_dir).map(|_| m))
        .map(|m| {
            let s = stats(m.summary());
            (m, s)
        })
        .map_err(|e| PipelineError::stage("ingest", e));
    let root_ref = ArtifactRef {
        path: root.display().to_string(),
        sha256: None,
        tree: true,
    };
    let ingest = rec.record("ingest", vec![root_ref], &ingest_outputs, t, res)?;
    if let Some(first) = rec.manifest.stages.last_mut() {
        first.inputs = vec![tree_ref(&rec.out, &ingest)];
    }

    let t = Instant::now();
    let scopes_path = layout.scopes();
    let scopes = extract_all(&ingest.files, &cfg.logging());
    let res = write_scopes_jsonl(&scopes_path, &scopes)
        .map(|_| {
            let n: usize = scopes.iter().map(|f| f.candidates.len()).sum();
            let unbalanced = scopes.iter().filter(|f| !f.diagnostics.is_balanced()).count();
            (
                (),
                serde_json::json!({ "files": scopes.len(), "candidates": n, "unbalanced_files": unbalanced }),
            )
        })
        .map_err(|e| PipelineError::stage("scopes", e));
    let inputs = vec![rec.input(&ingest_outputs[0])];
    rec.record("scopes", inputs, std::slice::from_ref(&scopes_path), t, res)?;

    let t = Instant::now();
    let corpus = Corpus::from_records(&ingest.files);
    let holdout = cfg
        .holdout_paths()
        .map_err(|e| PipelineError::stage("pairs", e))?;
    let outputs = [layout.train_pairs(), layout.test_pairs(), layout.dataset_card()];
    let res = (|| {
        let set = generate_pairs(&flat_candidates(&scopes), &corpus, &cfg.pair_options())
            .map_err(|e| PipelineError::stage("pairs", e))?;
        for d in &set.diagnostics {
            tracing::debug!("{d}");
        }
        let candidates_kept = set.candidates_kept;
        let n_diag = set.diagnostics.len();
        let (train, test, holdout_files, unknown) = split_pairs(set.pairs, &holdout, &corpus);
        write_jsonl(&outputs[0], &train).map_err(jsonl_err("pairs"))?;
        write_jsonl(&outputs[1], &test).map_err(jsonl_err("pairs"))?;
        let card = dataset_card(cfg, &ingest, &scopes, candidates_kept, holdout_files, &train, &test, n_diag);
        write_json(&outputs[2], &card).map_err(|e| PipelineError::stage("pairs", e))?;
        let s = serde_json::json!({
            "train_pairs": train.len(),
            "test_pairs": test.len(),
            "holdout_files": holdout_files,
            "unknown_holdout_paths": unknown,
        });
        Ok(((train, test, card), s))
    })();
    let inputs = vec![rec.input(&scopes_path), rec.input(&ingest_outputs[0])];
    let (train, test, card) = rec.record("pairs", inputs, &outputs, t, res)?;

    Ok(PreparedData {
        ingest,
        corpus,
        scopes,
        train,
        test,
        card,
    })
}

fn run_leakage(
    cfg: &PipelineConfig,
    layout: &Layout,
    rec: &mut Recorder,
    train: &[CompletionPair],
    test: &[CompletionPair],
) -> Result<LeakageReport, PipelineError> {
    let t = Instant::now();
    let out = layout.leakage();
    let labels: Vec<(String, String)> = test.iter().map(|p| (p.pair_id.clone(), p.label.clone())).collect();
    let report = leakage_scan(train, &labels, &cfg.eot_token);
    if !report.is_clean() {
        tracing::warn!(
            findings = report.findings.len(),
            "test labels found in training data; see {}",
            out.display()
        );
    }
    let res = write_json(&out, &report)
        .map(|_| {
            let s = serde_json::json!({
                "findings": report.findings.len(),
                "leaked_tests": report.leaked_test_ids().len(),
            });
            (report, s)
        })
        .map_err(|e| PipelineError::stage("leak-scan", e));
    let inputs = vec![rec.input(&layout.train_pairs()), rec.input(&layout.test_pairs())];
    rec.record("leak-scan", inputs, std::slice::from_ref(&out), t, res)
}

/// Builds augmented prompts for every test pair against `index`.
pub async fn build_prompts(
    test: &[CompletionPair],
    index: &VectorIndex,
    embedder: &Embedder,
    n_neighbors: usize,
    budget_bytes: usize,
) -> Result<Vec<PromptRecord>, crate::rag::RagError> {
    let queries: Vec<String> = test.iter().map(|p| p.query.clone()).collect();
    let keys = embedder.embed_many(&queries).await?;
    let mut out = Vec::with_capacity(test.len());
    for (p, key) in test.iter().zip(&keys) {
        let prompt = if index.is_empty() {
            PromptRecord {
                test_id: p.pair_id.clone(),
                prompt: p.query.clone(),
                neighbors: Vec::new(),
            }
        } else {
            let nbs = index.knn_search(key, n_neighbors)?;
            let aug = augment_query(&p.query, &nbs, index, n_neighbors.min(nbs.len()), budget_bytes);
            PromptRecord {
                test_id: p.pair_id.clone(),
                prompt: aug.prompt,
                neighbors: aug.used,
            }
        };
        out.push(prompt);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct LooseEvalLine {
    test_id: String,
    #[serde(default)]
    prediction: Option<String>,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    ground_truth: Option<String>,
}

/// Counts alongside the assembled inputs.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub inputs: Vec<EvalInput>,
    pub failed: usize,
    pub missing: usize,
}

/// Joins predictions to test pairs by id. Without `tests`, each prediction
/// line must carry `category` and `ground_truth` itself.
pub fn load_eval_inputs(predictions: &Path, tests: Option<&Path>) -> Result<EvalInputs, BoxError> {
    let lines: Vec<LooseEvalLine> = read_jsonl(predictions)?;
    let mut out = EvalInputs::default();
    match tests {
        Some(tests) => {
            let pairs: Vec<CompletionPair> = read_jsonl(tests)?;
            let preds: HashMap<&str, &LooseEvalLine> = lines.iter().map(|l| (l.test_id.as_str(), l)).collect();
            for p in &pairs {
                match preds.get(p.pair_id.as_str()) {
                    Some(LooseEvalLine {
                        prediction: Some(pred), ..
                    }) => out.inputs.push(EvalInput {
                        test_id: p.pair_id.clone(),
                        category: p.category.as_str().to_string(),
                        prediction: pred.clone(),
                        ground_truth: p.label_without_eot().to_string(),
                    }),
                    Some(_) => out.failed += 1,
                    None => out.missing += 1,
                }
            }
        }
        None => {
            for l in lines {
                match (l.prediction, l.ground_truth) {
                    (Some(prediction), Some(ground_truth)) => out.inputs.push(EvalInput {
                        test_id: l.test_id,
                        category: l.category.unwrap_or_else(|| "unknown".into()),
                        prediction,
                        ground_truth,
                    }),
                    (None, _) => out.failed += 1,
                    (Some(_), None) => {
                        return Err(format!("prediction {} has no ground_truth and no tests file was given", l.test_id).into())
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Scores predictions and writes records, CSV and JSON reports.
pub fn score_and_report(
    inputs: &EvalInputs,
    cfg_eval: &crate::metrics::EvalOptions,
    layout: &Layout,
) -> Result<(Vec<EvalRecord>, EvalSummary), BoxError> {
    let records = evaluate(&inputs.inputs, cfg_eval);
    let categories = aggregate_report(&records);
    let summary = EvalSummary {
        n_scored: records.len(),
        n_failed: inputs.failed,
        n_missing: inputs.missing,
        overall: overall_report(&records),
        categories,
    };
    write_jsonl(&layout.eval_records(), &records)?;
    let mut rows = summary.categories.clone();
    rows.extend(summary.overall.clone());
    write_report_csv(&layout.report_csv(), &rows)?;
    write_json(&layout.report_json(), &summary)?;
    Ok((records, summary))
}

fn run_eval(
    cfg: &PipelineConfig,
    layout: &Layout,
    rec: &mut Recorder,
    predictions: &Path,
    tests: Option<&Path>,
) -> Result<EvalSummary, PipelineError> {
    let t = Instant::now();
    let outputs = [layout.eval_records(), layout.report_csv(), layout.report_json()];
    let res = load_eval_inputs(predictions, tests)
        .and_then(|inputs| {
            if inputs.inputs.is_empty() {
                return Err("no successful predictions to score".into());
            }
            score_and_report(&inputs, &cfg.eval_options(), layout)
        })
        .map(|(_, summary)| {
            let s = serde_json::json!({
                "scored": summary.n_scored,
                "failed": summary.n_failed,
                "missing": summary.n_missing,
            });
            (summary, s)
        })
        .map_err(|e| PipelineError::stage("eval", e));
    let mut inputs = vec![rec.input(predictions)];
    inputs.extend(tests.map(|t| rec.input(t)));
    rec.record("eval", inputs, &outputs, t, res)
}

fn require_mode_fields(cfg: &PipelineConfig, mode: RunMode) -> Result<(), ConfigError> {
    let mut v = Vec::new();
    match mode {
        RunMode::RagEval => {
            if cfg.holdout.is_empty() && cfg.holdout_list.is_none() {
                v.push(FieldViolation {
                    field: "holdout".into(),
                    message: "RAG_EVAL needs holdout files to draw test pairs from".into(),
                });
            }
            if cfg.endpoints.generate.is_none() {
                v.push(FieldViolation {
                    field: "endpoints.generate".into(),
                    message: "RAG_EVAL needs a generate endpoint".into(),
                });
            }
        }
        RunMode::EvalOnly => {
            if cfg.eval.predictions.is_none() {
                v.push(FieldViolation {
                    field: "eval.predictions".into(),
                    message: "EVAL_ONLY needs a predictions file".into(),
                });
            }
        }
        RunMode::FtExport => {}
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(v))
    }
}

/// Runs the stages for `mode`, recording each in `run_manifest.json` under
/// the output directory. Stage failures leave earlier artifacts on disk and
/// the failing stage flagged incomplete.
pub async fn run_pipeline(cfg: &PipelineConfig, mode: RunMode) -> Result<RunOutcome, PipelineError> {
    if mode == RunMode::EvalOnly {
        // Scoring an existing file does not touch the repository.
        let mut v = cfg.violations();
        v.retain(|x| x.field != "repo_root" && x.field != "holdout");
        if !v.is_empty() {
            return Err(ConfigError::Invalid(v).into());
        }
    } else {
        cfg.validate()?;
    }
    require_mode_fields(cfg, mode)?;
    let layout = Layout::new(&cfg.output_dir);
    fs::create_dir_all(&layout.root).map_err(|e| PipelineError::stage("setup", e))?;
    let mut rec = Recorder::new(&layout.root, mode);

    let (card, report) = match mode {
        RunMode::EvalOnly => {
            let preds = cfg.eval.predictions.clone().expect("checked");
            let report = run_eval(cfg, &layout, &mut rec, &preds, cfg.eval.tests.as_deref())?;
            (None, Some(report))
        }
        RunMode::FtExport => {
            let data = prepare(cfg, &layout, &mut rec)?;
            if !data.test.is_empty() {
                run_leakage(cfg, &layout, &mut rec, &data.train, &data.test)?;
            }
            (Some(data.card), None)
        }
        RunMode::RagEval => {
            let data = prepare(cfg, &layout, &mut rec)?;
            if data.test.is_empty() {
                let t = Instant::now();
                let err: Result<((), serde_json::Value), _> =
                    Err(PipelineError::stage("split", "holdout files produced no test pairs"));
                rec.record("split", Vec::new(), &[], t, err)?;
            }
            run_leakage(cfg, &layout, &mut rec, &data.train, &data.test)?;
            let embedder = cfg.embedder().map_err(|e| PipelineError::stage("index", e))?;

            let t = Instant::now();
            let primary: Vec<CompletionPair> = data
                .train
                .iter()
                .filter(|p| p.kind == PairKind::Primary)
                .cloned()
                .collect();
            let res = match index_build(&primary, &embedder).await {
                Ok(index) => index
                    .write(&layout.index())
                    .map(|_| {
                        let s = serde_json::json!({ "entries": index.len(), "embedder": index.embedder_id() });
                        (index, s)
                    })
                    .map_err(|e| PipelineError::stage("index", e)),
                Err(e) => Err(PipelineError::stage("index", e)),
            };
            let inputs = vec![rec.input(&layout.train_pairs())];
            let index = rec.record("index", inputs, &[layout.index()], t, res)?;

            let t = Instant::now();
            let res = match build_prompts(&data.test, &index, &embedder, cfg.rag.n_neighbors, cfg.rag.budget_bytes).await {
                Ok(prompts) => write_jsonl(&layout.prompts(), &prompts)
                    .map(|n| (prompts, serde_json::json!({ "prompts": n })))
                    .map_err(jsonl_err("augment")),
                Err(e) => Err(PipelineError::stage("augment", e)),
            };
            let inputs = vec![rec.input(&layout.test_pairs()), rec.input(&layout.index())];
            let prompts = rec.record("augment", inputs, &[layout.prompts()], t, res)?;

            let t = Instant::now();
            let res = async {
                let mut client = ModelClient::new(cfg.endpoints.generate.as_deref().expect("checked"))
                    .map_err(|e| PipelineError::stage("predict", e))?;
                client.max_in_flight = cfg.generation.max_in_flight;
                client.max_retries = cfg.generation.max_retries;
                let tests: Vec<(String, String)> =
                    prompts.iter().map(|p| (p.test_id.clone(), p.prompt.clone())).collect();
                let results = client.batch_predict(&tests, &cfg.generation_template()).await;
                let records: Vec<PredictionRecord> = results
                    .iter()
                    .map(|(id, r)| PredictionRecord::from_outcome(id.clone(), r))
                    .collect();
                let failed = records.iter().filter(|r| r.error.is_some()).count();
                if failed > 0 {
                    tracing::warn!(failed, total = records.len(), "some generations failed");
                }
                write_jsonl(&layout.predictions(), &records).map_err(jsonl_err("predict"))?;
                Ok(((), serde_json::json!({ "requests": records.len(), "failed": failed })))
            }
            .await;
            let inputs = vec![rec.input(&layout.prompts())];
            rec.record("predict", inputs, &[layout.predictions()], t, res)?;

            let report = run_eval(cfg, &layout, &mut rec, &layout.predictions(), Some(&layout.test_pairs()))?;
            (Some(data.card), Some(report))
        }
    };
    let (manifest, manifest_path) = rec.finish()?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
        card,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub filter: FilterConfig,
    pub random_starts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub card: Option<DatasetCard>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

fn or_base(values: &[usize], base: usize) -> Vec<usize> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Every point of the grid declared in `[sweep]`, in row-major order.
pub fn sweep_grid(cfg: &PipelineConfig) -> Vec<(FilterConfig, usize)> {
    let s = &cfg.sweep;
    let f = &cfg.filter;
    let mut grid = Vec::new();
    for &min_scope in &or_base(&s.min_scope_bytes, f.min_scope_bytes) {
        for &max_scope in &or_base(&s.max_scope_bytes, f.max_scope_bytes) {
            for &min_prefix in &or_base(&s.min_prefix_bytes, f.min_prefix_bytes) {
                for &max_prefix in &or_base(&s.max_prefix_bytes, f.max_prefix_bytes) {
                    for &k in &or_base(&s.random_starts, cfg.random_starts.k) {
                        let filter = FilterConfig {
                            min_scope_bytes: min_scope,
                            max_scope_bytes: max_scope,
                            min_prefix_bytes: min_prefix,
                            max_prefix_bytes: max_prefix,
                            ..f.clone()
                        };
                        grid.push((filter, k));
                    }
                }
            }
        }
    }
    grid
}

/// Ingests and extracts scopes once, then regenerates pairs for every grid
/// point and writes a dataset card per point under `sweep/`.
pub fn run_sweep(cfg: &PipelineConfig) -> Result<Vec<SweepPoint>, PipelineError> {
    cfg.validate()?;
    let root = cfg.repo_root.clone().expect("validated");
    let ingest = ingest_repository(&root, &cfg.ingest_options()).map_err(|e| PipelineError::stage("ingest", e))?;
    let scopes = extract_all(&ingest.files, &cfg.logging());
    let candidates = flat_candidates(&scopes);
    let corpus = Corpus::from_records(&ingest.files);
    let holdout = cfg.holdout_paths().map_err(|e| PipelineError::stage("sweep", e))?;
    let dir = cfg.output_dir.join("sweep");
    let mut points = Vec::new();
    for (index, (filter, k)) in sweep_grid(cfg).into_iter().enumerate() {
        let mut point_cfg = cfg.clone();
        point_cfg.filter = filter.clone();
        point_cfg.random_starts.k = k;
        let mut point = SweepPoint {
            index,
            filter,
            random_starts: k,
            card: None,
            violations: Vec::new(),
        };
        match generate_pairs(&candidates, &corpus, &point_cfg.pair_options()) {
            Ok(set) => {
                let kept = set.candidates_kept;
                let n_diag = set.diagnostics.len();
                let (train, test, held, _) = split_pairs(set.pairs, &holdout, &corpus);
                let card = dataset_card(&point_cfg, &ingest, &scopes, kept, held, &train, &test, n_diag);
                write_json(&dir.join(format!("point-{index:03}")).join("dataset_card.json"), &card)
                    .map_err(|e| PipelineError::stage("sweep", e))?;
                point.card = Some(card);
            }
            Err(crate::pairs::PairError::InvalidConfig(v)) => point.violations = v,
            Err(e) => return Err(PipelineError::stage("sweep", e)),
        }
        points.push(point);
    }
    write_jsonl(&dir.join("summary.jsonl"), &points).map_err(jsonl_err("sweep"))?;
    Ok(points)
}
