//! Repository walking, language selection and content-addressed storage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use globset::{Glob, GlobSet, GlobSetBuilder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

/// Default cap on ingested file size (4 MiB).
pub const DEFAULT_MAX_FILE_BYTES: u64 = 4 * 1024 * 1024;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "ingest.json";
pub const CONTENT_DIR: &str = "content";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("repository root not found or not a directory: {0}")]
    RootNotFound(PathBuf),
    #[error("invalid exclude glob {pattern:?}: {source}")]
    InvalidGlob {
        pattern: String,
        #[source]
        source: globset::Error,
    },
    #[error("unknown language {0:?} (expected c_cpp, java)")]
    UnknownLanguage(String),
    #[error("content for file {0} missing from store")]
    MissingContent(String),
    #[error("malformed manifest line {line}: {source}")]
    MalformedManifest {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    CCpp,
    Java,
    Other,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::CCpp => "c_cpp",
            Language::Java => "java",
            Language::Other => "other",
        }
    }
}

impl std::str::FromStr for Language {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c_cpp" | "c" | "cpp" | "c++" => Ok(Language::CCpp),
            "java" => Ok(Language::Java),
            other => Err(IngestError::UnknownLanguage(other.to_string())),
        }
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Extension → language lookup. Keys are lowercase, without the dot.
#[derive(Debug, Clone)]
pub struct LanguageTable {
    by_extension: HashMap<String, Language>,
}

impl Default for LanguageTable {
    fn default() -> Self {
        let mut by_extension = HashMap::new();
        for ext in ["c", "h", "cc", "cpp", "cxx", "hpp", "hh"] {
            by_extension.insert(ext.to_string(), Language::CCpp);
        }
        by_extension.insert("java".to_string(), Language::Java);
        Self { by_extension }
    }
}

impl LanguageTable {
    /// Adds or replaces an extension mapping, e.g. `("ipp", Language::CCpp)`.
    pub fn with_extension(mut self, ext: &str, language: Language) -> Self {
        self.by_extension
            .insert(ext.trim_start_matches('.').to_ascii_lowercase(), language);
        self
    }

    pub fn detect(&self, path: &Path) -> Language {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(|e| self.by_extension.get(&e.to_ascii_lowercase()).copied())
            .unwrap_or(Language::Other)
    }
}

/// Extension-table language detection with the default table.
pub fn detect_language(path: impl AsRef<Path>) -> Language {
    LanguageTable::default().detect(path.as_ref())
}

/// One selected source file. `content` is the (lossily) decoded text; all
/// byte offsets used downstream index into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecord {
    pub file_id: String,
    pub repo_relative_path: String,
    pub language: Language,
    pub content: String,
    pub byte_len: usize,
    pub modified_at: DateTime<Utc>,
    pub lossy_utf8: bool,
}

/// The per-line manifest header; file contents live in the sidecar store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub file_id: String,
    pub path: String,
    pub language: Language,
    pub byte_len: usize,
    #[serde(with = "iso8601")]
    pub modified_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lossy_utf8: bool,
}

impl FileRecord {
    pub fn header(&self) -> FileHeader {
        FileHeader {
            file_id: self.file_id.clone(),
            path: self.repo_relative_path.clone(),
            language: self.language,
            byte_len: self.byte_len,
            modified_at: self.modified_at,
            lossy_utf8: self.lossy_utf8,
        }
    }
}

/// Stable content identifier: first 16 bytes of SHA-256, hex encoded.
pub fn content_id(content: &[u8]) -> String {
    let digest = Sha256::digest(content);
    hex::encode(&digest[..16])
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct IngestWarning {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct IngestManifest {
    pub repo_root: PathBuf,
    pub files: Vec<FileRecord>,
    pub counts: BTreeMap<Language, usize>,
    pub ingested_at: DateTime<Utc>,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub repo_root: String,
    pub file_count: usize,
    pub counts: BTreeMap<Language, usize>,
    #[serde(with = "iso8601")]
    pub ingested_at: DateTime<Utc>,
    pub warnings: Vec<IngestWarning>,
}

impl IngestManifest {
    pub fn summary(&self) -> IngestSummary {
        IngestSummary {
            repo_root: self.repo_root.display().to_string(),
            file_count: self.files.len(),
            counts: self.counts.clone(),
            ingested_at: self.ingested_at,
            warnings: self.warnings.clone(),
        }
    }

    /// Writes `manifest.jsonl`, `ingest.json` and `content/<file_id>` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), IngestError> {
        fs::create_dir_all(dir.join(CONTENT_DIR))?;
        let mut out = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
        for record in &self.files {
            serde_json::to_writer(&mut out, &record.header())?;
            out.write_all(b"\n")?;
            let blob = dir.join(CONTENT_DIR).join(&record.file_id);
            if !blob.exists() {
                fs::write(blob, record.content.as_bytes())?;
            }
        }
        out.flush()?;
        fs::write(
            dir.join(SUMMARY_FILE),
            serde_json::to_vec_pretty(&self.summary())?,
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub languages: BTreeSet<Language>,
    pub exclude_globs: Vec<String>,
    pub max_file_bytes: u64,
    pub table: LanguageTable,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            languages: [Language::CCpp, Language::Java].into_iter().collect(),
            exclude_globs: Vec::new(),
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
            table: LanguageTable::default(),
        }
    }
}

fn build_globset(patterns: &[String]) -> Result<GlobSet, IngestError> {
    let mut builder = GlobSetBuilder::new();
    for pattern in patterns {
        let glob = Glob::new(pattern).map_err(|source| IngestError::InvalidGlob {
            pattern: pattern.clone(),
            source,
        })?;
        builder.add(glob);
    }
    builder.build().map_err(|source| IngestError::InvalidGlob {
        pattern: patterns.join(","),
        source,
    })
}

fn relative_path_string(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn read_record(
    path: &Path,
    rel: String,
    language: Language,
    max_bytes: u64,
) -> Result<FileRecord, String> {
    let meta = fs::metadata(path).map_err(|e| format!("unreadable: {e}"))?;
    if meta.len() > max_bytes {
        return Err(format!(
            "skipped: {} bytes exceeds cap of {max_bytes}",
            meta.len()
        ));
    }
    let bytes = fs::read(path).map_err(|e| format!("unreadable: {e}"))?;
    let (content, lossy_utf8) = match String::from_utf8(bytes) {
        Ok(s) => (s, false),
        Err(e) => (String::from_utf8_lossy(e.as_bytes()).into_owned(), true),
    };
    let modified_at = meta
        .modified()
        .ok()
        .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
        .and_then(|d| DateTime::<Utc>::from_timestamp(d.as_secs() as i64, 0))
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    Ok(FileRecord {
        file_id: content_id(content.as_bytes()),
        repo_relative_path: rel,
        language,
        byte_len: content.len(),
        content,
        modified_at,
        lossy_utf8,
    })
}

/// Walks `root` (symlinks not followed) and returns every selected file,
/// sorted by repository-relative path.
pub fn ingest_repository(root: &Path, opts: &IngestOptions) -> Result<IngestManifest, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::RootNotFound(root.to_path_buf()));
    }
    let excludes = build_globset(&opts.exclude_globs)?;
    let mut warnings = Vec::new();
    let mut selected = Vec::new();

    for entry in WalkDir::new(root).follow_links(false) {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e
                    .path()
                    .map(|p| relative_path_string(root, p))
                    .unwrap_or_default();
                warnings.push(IngestWarning {
                    path,
                    message: format!("unreadable: {e}"),
                });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let language = opts.table.detect(entry.path());
        if language == Language::Other || !opts.languages.contains(&language) {
            continue;
        }
        let rel = relative_path_string(root, entry.path());
        if excludes.is_match(&rel) {
            continue;
        }
        selected.push((entry.into_path(), rel, language));
    }

    let results: Vec<_> = selected
        .into_par_iter()
        .map(|(path, rel, language)| {
            read_record(&path, rel.clone(), language, opts.max_file_bytes).map_err(|message| {
                IngestWarning {
                    path: rel,
                    message,
                }
            })
        })
        .collect();

    let mut files = Vec::with_capacity(results.len());
    for result in results {
        match result {
            Ok(record) => {
                if record.lossy_utf8 {
                    tracing::warn!(path = %record.repo_relative_path, "non-UTF-8 bytes replaced");
                }
                files.push(record);
            }
            Err(w) => {
                tracing::warn!(path = %w.path, "{}", w.message);
                warnings.push(w);
            }
        }
    }
    files.sort_by(|a, b| a.repo_relative_path.cmp(&b.repo_relative_path));
    warnings.sort_by(|a, b| a.path.cmp(&b.path));

    let mut counts = BTreeMap::new();
    for lang in &opts.languages {
        counts.insert(*lang, 0);
    }
    for f in &files {
        *counts.entry(f.language).or_insert(0) += 1;
    }

    Ok(IngestManifest {
        repo_root: root.to_path_buf(),
        files,
        counts,
        ingested_at: Utc::now(),
        warnings,
    })
}

/// Reads `manifest.jsonl` headers.
pub fn read_manifest(path: &Path) -> Result<Vec<FileHeader>, IngestError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut headers = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let header = serde_json::from_str(&line)
            .map_err(|source| IngestError::MalformedManifest { line: i + 1, source })?;
        headers.push(header);
    }
    Ok(headers)
}

/// Rehydrates full records from a manifest directory written by
/// [`IngestManifest::write_to`].
pub fn load_records(dir: &Path) -> Result<Vec<FileRecord>, IngestError> {
    load_records_from(&dir.join(MANIFEST_FILE), &dir.join(CONTENT_DIR))
}

pub fn load_records_from(manifest: &Path, content_dir: &Path) -> Result<Vec<FileRecord>, IngestError> {
    read_manifest(manifest)?
        .into_iter()
        .map(|h| {
            let content = fs::read_to_string(content_dir.join(&h.file_id))
                .map_err(|_| IngestError::MissingContent(h.file_id.clone()))?;
            Ok(FileRecord {
                byte_len: content.len(),
                file_id: h.file_id,
                repo_relative_path: h.path,
                language: h.language,
                content,
                modified_at: h.modified_at,
                lossy_utf8: h.lossy_utf8,
            })
        })
        .collect()
}

pub(crate) mod iso8601 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}
