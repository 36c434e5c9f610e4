use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::GenerationRequest;
use crate::ingest::{IngestOptions, Language};
use crate::metrics::{EvalOptions, Granularity};
use crate::pairs::{FilterConfig, PairOptions, DEFAULT_EOT_TOKEN};
use crate::rag::{Embedder, RagError, DEFAULT_BUDGET_BYTES, DEFAULT_DIM, DEFAULT_NEIGHBORS};
use crate::scopes::{LoggingPatterns, DEFAULT_LOGGING_PATTERNS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldViolation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config:\n  {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<FieldViolation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[FieldViolation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomStartConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for RandomStartConfig {
    fn default() -> Self {
        Self { k: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    /// `builtin`, `remote` (uses `endpoints.embed`) or `remote:<url>`.
    pub spec: String,
    pub dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            spec: "builtin".into(),
            dim: DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub n_neighbors: usize,
    pub budget_bytes: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            n_neighbors: DEFAULT_NEIGHBORS,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointsConfig {
    pub embed: Option<String>,
    pub generate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub max_retries: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 256,
            temperature: 0.0,
            timeout_secs: 120.0,
            max_in_flight: 4,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub normalize_whitespace: bool,
    pub granularity: Granularity,
    /// Predictions to score in `eval_only` mode.
    pub predictions: Option<PathBuf>,
    /// Test pairs joined to `predictions` by id; without it the predictions
    /// file must carry `category` and `ground_truth` itself.
    pub tests: Option<PathBuf>,
}

/// Value lists to grid over in `sweep`. Empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub min_scope_bytes: Vec<usize>,
    pub max_scope_bytes: Vec<usize>,
    pub min_prefix_bytes: Vec<usize>,
    pub max_prefix_bytes: Vec<usize>,
    pub random_starts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub repo_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub languages: Vec<Language>,
    pub exclude_globs: Vec<String>,
    pub max_file_bytes: u64,
    pub eot_token: String,
    pub include_closer: bool,
    pub logging_patterns: Vec<String>,
    /// Repository-relative paths whose pairs form the test set.
    pub holdout: Vec<String>,
    /// File listing further holdout paths, one per line.
    pub holdout_list: Option<PathBuf>,
    pub filter: FilterConfig,
    pub random_starts: RandomStartConfig,
    pub embedder: EmbedderConfig,
    pub rag: RagConfig,
    pub endpoints: EndpointsConfig,
    pub generation: GenerationConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ingest = IngestOptions::default();
        Self {
            repo_root: None,
            output_dir: PathBuf::from("scopeforge-out"),
            languages: ingest.languages.into_iter().collect(),
            exclude_globs: Vec::new(),
            max_file_bytes: ingest.max_file_bytes,
            eot_token: DEFAULT_EOT_TOKEN.into(),
            include_closer: true,
            logging_patterns: DEFAULT_LOGGING_PATTERNS.iter().map(|s| s.to_string()).collect(),
            holdout: Vec::new(),
            holdout_list: None,
            filter: FilterConfig::default(),
            random_starts: RandomStartConfig::default(),
            embedder: EmbedderConfig::default(),
            rag: RagConfig::default(),
            endpoints: EndpointsConfig::default(),
            generation: GenerationConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses TOML text. Relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, toml::de::Error> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        if let Some(root) = cfg.repo_root.as_mut() {
            resolve(base_dir, root);
        }
        resolve(base_dir, &mut cfg.output_dir);
        for p in [
            cfg.holdout_list.as_mut(),
            cfg.eval.predictions.as_mut(),
            cfg.eval.tests.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base_dir, p);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<FieldViolation> {
        let mut v = Vec::new();
        let mut push = |field: &str, message: String| {
            v.push(FieldViolation {
                field: field.into(),
                message,
            })
        };
        match &self.repo_root {
            None => push("repo_root", "required".into()),
            Some(root) if !root.is_dir() => push("repo_root", format!("{} is not a directory", root.display())),
            Some(_) => {}
        }
        if self.filter.min_scope_bytes > self.filter.max_scope_bytes {
            let msg = format!(
                "min_scope_bytes ({}) > max_scope_bytes ({})",
                self.filter.min_scope_bytes, self.filter.max_scope_bytes
            );
            push("filter.min_scope_bytes", msg.clone());
            push("filter.max_scope_bytes", msg);
        }
        if self.filter.min_prefix_bytes > self.filter.max_prefix_bytes {
            let msg = format!(
                "min_prefix_bytes ({}) > max_prefix_bytes ({})",
                self.filter.min_prefix_bytes, self.filter.max_prefix_bytes
            );
            push("filter.min_prefix_bytes", msg.clone());
            push("filter.max_prefix_bytes", msg);
        }
        if self.languages.is_empty() {
            push("languages", "at least one language is required".into());
        }
        if let Err(e) = LoggingPatterns::new(&self.logging_patterns) {
            push("logging_patterns", e.to_string());
        }
        if let Err(e) = globset_check(&self.exclude_globs) {
            push("exclude_globs", e);
        }
        if self.rag.n_neighbors < 1 {
            push("rag.n_neighbors", "must be at least 1".into());
        }
        if self.embedder.dim == 0 {
            push("embedder.dim", "must be positive".into());
        }
        if let Err(e) = self.embedder_spec() {
            push("embedder.spec", e);
        }
        if self.generation.max_new_tokens == 0 {
            push("generation.max_new_tokens", "must be at least 1".into());
        }
        if !(self.generation.temperature >= 0.0) {
            push("generation.temperature", "must be non-negative".into());
        }
        if !(self.generation.timeout_secs > 0.0) || !self.generation.timeout_secs.is_finite() {
            push("generation.timeout_secs", "must be a positive number".into());
        }
        if self.generation.max_in_flight == 0 {
            push("generation.max_in_flight", "must be at least 1".into());
        }
        if let Some(list) = &self.holdout_list {
            if !list.is_file() {
                push("holdout_list", format!("{} does not exist", list.display()));
            }
        }
        if let Some(root) = self.repo_root.as_ref().filter(|r| r.is_dir()) {
            for p in &self.holdout {
                if !root.join(p).is_file() {
                    push("holdout", format!("{p} does not exist under repo_root"));
                }
            }
        }
        for (field, path) in [("eval.predictions", &self.eval.predictions), ("eval.tests", &self.eval.tests)] {
            if let Some(p) = path {
                if !p.is_file() {
                    push(field, format!("{} does not exist", p.display()));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    fn embedder_spec(&self) -> Result<String, String> {
        let spec = self.embedder.spec.trim();
        if spec == "remote" {
            return match &self.endpoints.embed {
                Some(url) => Ok(format!("remote:{url}")),
                None => Err("`remote` requires endpoints.embed".into()),
            };
        }
        if spec == "builtin" || spec.starts_with("remote:") {
            Ok(spec.to_string())
        } else {
            Err(format!("unknown embedder {spec:?}"))
        }
    }

    pub fn embedder(&self) -> Result<Embedder, RagError> {
        let spec = self.embedder_spec().map_err(RagError::InvalidEmbedderSpec)?;
        Embedder::from_spec(&spec, self.embedder.dim)
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            languages: self.languages.iter().copied().collect::<BTreeSet<_>>(),
            exclude_globs: self.exclude_globs.clone(),
            max_file_bytes: self.max_file_bytes,
            ..IngestOptions::default()
        }
    }

    pub fn pair_options(&self) -> PairOptions {
        PairOptions {
            filter: self.filter.clone(),
            eot_token: self.eot_token.clone(),
            include_closer: self.include_closer,
            random_starts: self.random_starts.k,
            seed: self.random_starts.seed,
        }
    }

    pub fn logging(&self) -> LoggingPatterns {
        LoggingPatterns::new(&self.logging_patterns).expect("validated")
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            normalize_ws: self.eval.normalize_whitespace,
            granularity: self.eval.granularity,
        }
    }

    pub fn generation_template(&self) -> GenerationRequest {
        GenerationRequest {
            prompt: String::new(),
            max_new_tokens: self.generation.max_new_tokens,
            stop_sequences: vec![self.eot_token.clone()],
            temperature: self.generation.temperature,
            timeout: Duration::from_secs_f64(self.generation.timeout_secs),
        }
    }

    /// `holdout` plus the entries of `holdout_list`, blank lines and `#`
    /// comments skipped.
    pub fn holdout_paths(&self) -> std::io::Result<Vec<String>> {
        let mut paths = self.holdout.clone();
        if let Some(list) = &self.holdout_list {
            paths.extend(read_path_list(&fs::read_to_string(list)?));
        }
        Ok(paths)
    }
}

pub fn read_path_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn globset_check(patterns: &[String]) -> Result<(), String> {
    for p in patterns {
        globset::Glob::new(p).map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(())
}

/// Reads, parses and validates a config file, reporting all violations.
pub fn validate_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = PipelineConfig::from_toml_str(&text, base).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    cfg.validate()?;
    Ok(cfg)
}
