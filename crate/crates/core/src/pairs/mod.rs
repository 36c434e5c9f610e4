//! Scope filtering and query/label completion-pair generation.

mod leakage;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use leakage::{leakage_scan, normalize_label, LeakageFinding, LeakageReport, MatchKind};

use crate::ingest::FileRecord;
use crate::scopes::{Category, ScopeCandidate};

pub const DEFAULT_EOT_TOKEN: &str = "<|endoftext|>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("invalid filter config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("scope at byte {scope_start_byte} of {file_id} is too small ({size_bytes} bytes) for random-start pairs")]
    DegenerateScope {
        file_id: String,
        scope_start_byte: usize,
        size_bytes: usize,
    },
    #[error("no content for file {0}")]
    UnknownFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_scope_bytes: usize,
    pub max_scope_bytes: usize,
    pub min_prefix_bytes: usize,
    pub max_prefix_bytes: usize,
    pub max_depth: Option<u32>,
    pub category_allowlist: Option<BTreeSet<Category>>,
    pub exclude_keywords: Vec<String>,
    pub modified_after: Option<DateTime<Utc>>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_scope_bytes: 50,
            max_scope_bytes: 1000,
            min_prefix_bytes: 200,
            max_prefix_bytes: 3072,
            max_depth: None,
            category_allowlist: None,
            exclude_keywords: Vec::new(),
            modified_after: None,
        }
    }
}

impl FilterConfig {
    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.min_scope_bytes > self.max_scope_bytes {
            v.push(format!(
                "min_scope_bytes ({}) > max_scope_bytes ({})",
                self.min_scope_bytes, self.max_scope_bytes
            ));
        }
        if self.min_prefix_bytes > self.max_prefix_bytes {
            v.push(format!(
                "min_prefix_bytes ({}) > max_prefix_bytes ({})",
                self.min_prefix_bytes, self.max_prefix_bytes
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<(), PairError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(PairError::InvalidConfig(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairOptions {
    pub filter: FilterConfig,
    pub eot_token: String,
    /// Append the scope's closing delimiter to the label.
    pub include_closer: bool,
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            eot_token: DEFAULT_EOT_TOKEN.to_string(),
            include_closer: true,
            random_starts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Primary,
    RandomStart,
}

/// One training/evaluation record. `query ++ label_without_eot()` is a
/// verbatim slice of the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionPair {
    pub pair_id: String,
    pub query: String,
    pub label: String,
    /// Bytes of the record (the query) to mask out of the training loss.
    pub mask_len: usize,
    pub kind: PairKind,
    pub start_shift_bytes: usize,
    pub category: Category,
    pub file_id: String,
    pub scope_start_byte: usize,
    pub scope_end_byte: usize,
    pub eot_token: String,
}

impl CompletionPair {
    pub fn label_without_eot(&self) -> &str {
        self.label.strip_suffix(self.eot_token.as_str()).unwrap_or(&self.label)
    }

    /// Offset in the source file where the query starts.
    pub fn query_start_byte(&self) -> usize {
        self.scope_start_byte + self.start_shift_bytes - self.query.len()
    }
}

/// Per-file data needed to materialize pairs, keyed by `file_id`.
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub content: String,
    pub modified_at: DateTime<Utc>,
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    files: HashMap<String, SourceFile>,
}

impl Corpus {
    pub fn from_records(records: &[FileRecord]) -> Self {
        let mut files: HashMap<String, SourceFile> = HashMap::new();
        for r in records {
            files
                .entry(r.file_id.clone())
                .and_modify(|f| {
                    f.paths.push(r.repo_relative_path.clone());
                    f.modified_at = f.modified_at.max(r.modified_at);
                })
                .or_insert_with(|| SourceFile {
                    content: r.content.clone(),
                    modified_at: r.modified_at,
                    paths: vec![r.repo_relative_path.clone()],
                });
        }
        for f in files.values_mut() {
            f.paths.sort();
        }
        Self { files }
    }

    pub fn get(&self, file_id: &str) -> Option<&SourceFile> {
        self.files.get(file_id)
    }

    pub fn content(&self, file_id: &str) -> Option<&str> {
        self.files.get(file_id).map(|f| f.content.as_str())
    }

    pub fn paths(&self, file_id: &str) -> &[String] {
        self.files.get(file_id).map(|f| f.paths.as_slice()).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    fn file_ids_by_path(&self) -> HashMap<&str, &str> {
        self.files
            .iter()
            .flat_map(|(id, f)| f.paths.iter().map(move |p| (p.as_str(), id.as_str())))
            .collect()
    }
}

fn passes(c: &ScopeCandidate, file: &SourceFile, cfg: &FilterConfig) -> bool {
    if c.size_bytes < cfg.min_scope_bytes || c.size_bytes > cfg.max_scope_bytes {
        return false;
    }
    if c.prefix_available_bytes < cfg.min_prefix_bytes {
        return false;
    }
    if cfg.max_depth.is_some_and(|d| c.depth > d) {
        return false;
    }
    if cfg.category_allowlist.as_ref().is_some_and(|a| !a.contains(&c.category)) {
        return false;
    }
    if cfg.modified_after.is_some_and(|t| file.modified_at < t) {
        return false;
    }
    if !cfg.exclude_keywords.is_empty() {
        let text = c.text(&file.content);
        if cfg.exclude_keywords.iter().any(|k| text.contains(k.as_str())) {
            return false;
        }
    }
    true
}

/// Keeps candidates satisfying every bound of `cfg`, preserving order.
/// Candidates whose file is not in the corpus are dropped.
pub fn apply_filters(
    candidates: &[ScopeCandidate],
    corpus: &Corpus,
    cfg: &FilterConfig,
) -> Result<Vec<ScopeCandidate>, PairError> {
    cfg.validate()?;
    Ok(candidates
        .iter()
        .filter(|c| corpus.get(&c.file_id).is_some_and(|f| passes(c, f, cfg)))
        .cloned()
        .collect())
}

fn ceil_char_boundary(s: &str, mut i: usize) -> usize {
    while i < s.len() && !s.is_char_boundary(i) {
        i += 1;
    }
    i
}

fn pair_id(c: &ScopeCandidate, kind: PairKind, shift: usize) -> String {
    let key = format!(
        "{}:{}:{}:{:?}:{}",
        c.file_id, c.start_byte, c.end_byte, kind, shift
    );
    hex::encode(&Sha256::digest(key.as_bytes())[..16])
}

fn build_pair(
    c: &ScopeCandidate,
    content: &str,
    opts: &PairOptions,
    kind: PairKind,
    shift: usize,
) -> CompletionPair {
    let split = c.start_byte + shift;
    let query_start = ceil_char_boundary(content, split.saturating_sub(opts.filter.max_prefix_bytes));
    let query = content[query_start..split].to_string();
    let mut label = String::with_capacity(c.end_byte - split + 1 + opts.eot_token.len());
    label.push_str(&content[split..c.end_byte]);
    if opts.include_closer {
        label.push(c.closer());
    }
    label.push_str(&opts.eot_token);
    CompletionPair {
        pair_id: pair_id(c, kind, shift),
        mask_len: query.len(),
        query,
        label,
        kind,
        start_shift_bytes: shift,
        category: c.category,
        file_id: c.file_id.clone(),
        scope_start_byte: c.start_byte,
        scope_end_byte: c.end_byte,
        eot_token: opts.eot_token.clone(),
    }
}

/// Partition at the scope's start byte: the query is up to
/// `max_prefix_bytes` of preceding content.
pub fn make_primary_pair(candidate: &ScopeCandidate, content: &str, opts: &PairOptions) -> CompletionPair {
    build_pair(candidate, content, opts, PairKind::Primary, 0)
}

fn shift_rng(seed: u64, c: &ScopeCandidate) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(c.file_id.as_bytes());
    h.update((c.start_byte as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Up to `k` pairs whose split point is moved `s` bytes into the scope,
/// `s` uniform over `1..size` (restricted to UTF-8 boundaries). Repeated
/// shifts are dropped, so fewer than `k` pairs may come back.
pub fn make_random_start_pairs(
    candidate: &ScopeCandidate,
    content: &str,
    opts: &PairOptions,
    k: usize,
    seed: u64,
) -> Result<Vec<CompletionPair>, PairError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let degenerate = || PairError::DegenerateScope {
        file_id: candidate.file_id.clone(),
        scope_start_byte: candidate.start_byte,
        size_bytes: candidate.size_bytes,
    };
    if candidate.size_bytes < 2 {
        return Err(degenerate());
    }
    let shifts: Vec<usize> = (1..candidate.size_bytes)
        .filter(|s| content.is_char_boundary(candidate.start_byte + s))
        .collect();
    if shifts.is_empty() {
        return Err(degenerate());
    }
    let mut rng = shift_rng(seed, candidate);
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for _ in 0..k {
        let shift = shifts[rng.random_range(0..shifts.len())];
        if seen.insert(shift) {
            pairs.push(build_pair(candidate, content, opts, PairKind::RandomStart, shift));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub pairs: Vec<CompletionPair>,
    pub candidates_in: usize,
    pub candidates_kept: usize,
    pub diagnostics: Vec<String>,
}

fn sort_key(p: &CompletionPair) -> (&str, usize, PairKind, usize) {
    (p.file_id.as_str(), p.scope_start_byte, p.kind, p.start_shift_bytes)
}

/// Filters `candidates` and emits primary plus random-start pairs, sorted by
/// (file_id, scope_start_byte, kind, start_shift_bytes).
pub fn generate_pairs(
    candidates: &[ScopeCandidate],
    corpus: &Corpus,
    opts: &PairOptions,
) -> Result<PairSet, PairError> {
    let kept = apply_filters(candidates, corpus, &opts.filter)?;
    let results: Vec<(Vec<CompletionPair>, Option<String>)> = kept
        .par_iter()
        .map(|c| {
            let content = corpus.content(&c.file_id).expect("filtered against corpus");
            let mut out = vec![make_primary_pair(c, content, opts)];
            match make_random_start_pairs(c, content, opts, opts.random_starts, opts.seed) {
                Ok(extra) => {
                    out.extend(extra);
                    (out, None)
                }
                Err(e) => (out, Some(e.to_string())),
            }
        })
        .collect();
    let mut set = PairSet {
        candidates_in: candidates.len(),
        candidates_kept: kept.len(),
        ..Default::default()
    };
    for (pairs, diag) in results {
        set.pairs.extend(pairs);
        set.diagnostics.extend(diag);
    }
    set.pairs.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    Ok(set)
}

fn normalize_path(p: &str) -> String {
    let p = p.trim().replace('\\', "/");
    p.trim_start_matches("./").to_string()
}

#[derive(Debug, Clone, Default)]
pub struct HoldoutOutcome {
    pub kept: Vec<CompletionPair>,
    pub removed: Vec<CompletionPair>,
    /// Holdout paths that matched no ingested file.
    pub unknown_paths: Vec<String>,
}

/// Removes every pair drawn from a holdout file. A file_id shared by several
/// paths (identical content) is held out if any of its paths is.
pub fn exclude_holdout<S: AsRef<str>>(
    pairs: Vec<CompletionPair>,
    holdout_paths: &[S],
    corpus: &Corpus,
) -> HoldoutOutcome {
    let by_path = corpus.file_ids_by_path();
    let mut held: HashSet<&str> = HashSet::new();
    let mut unknown_paths = Vec::new();
    for p in holdout_paths {
        let norm = normalize_path(p.as_ref());
        if norm.is_empty() {
            continue;
        }
        match by_path.get(norm.as_str()) {
            Some(id) => {
                held.insert(id);
            }
            None => {
                tracing::warn!(path = %norm, "holdout path matched no ingested file");
                unknown_paths.push(norm);
            }
        }
    }
    let (removed, kept) = pairs
        .into_iter()
        .partition(|p| held.contains(p.file_id.as_str()));
    HoldoutOutcome {
        kept,
        removed,
        unknown_paths,
    }
}

/// Counts per category and kind, for dataset cards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub total: usize,
    pub by_kind: BTreeMap<PairKind, usize>,
    pub by_category: BTreeMap<Category, usize>,
    pub by_category_and_kind: BTreeMap<String, usize>,
}

pub fn count_pairs(pairs: &[CompletionPair]) -> PairCounts {
    let mut counts = PairCounts {
        total: pairs.len(),
        ..Default::default()
    };
    for p in pairs {
        *counts.by_kind.entry(p.kind).or_default() += 1;
        *counts.by_category.entry(p.category).or_default() += 1;
        let kind = match p.kind {
            PairKind::Primary => "primary",
            PairKind::RandomStart => "random_start",
        };
        *counts
            .by_category_and_kind
            .entry(format!("{}/{kind}", p.category))
            .or_default() += 1;
    }
    counts
}
