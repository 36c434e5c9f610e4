//! Semantic-scope candidates: delimiter-bounded bodies and argument lists.

mod classify;
pub mod lexer;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{LoggingPatterns, DEFAULT_LOGGING_PATTERNS};
pub use lexer::{scan_delimiters, ByteClass, Delimiter, DelimiterSpan, LexMode, LexState, ScanDiagnostics, ScanOutput};

use crate::ingest::{FileRecord, Language};

#[derive(Debug, Error)]
pub enum ScopeError {
    #[error("invalid logging pattern {pattern:?}: {source}")]
    InvalidPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("unsupported language {0} for scope extraction")]
    UnsupportedLanguage(Language),
    #[error("malformed scope line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ElseBody,
    ForBody,
    FuncBody,
    IfBody,
    Logging,
    FuncCall,
    Unclassified,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::ElseBody,
        Category::ForBody,
        Category::FuncBody,
        Category::IfBody,
        Category::Logging,
        Category::FuncCall,
        Category::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ElseBody => "else_body",
            Category::ForBody => "for_body",
            Category::FuncBody => "func_body",
            Category::IfBody => "if_body",
            Category::Logging => "logging",
            Category::FuncCall => "func_call",
            Category::Unclassified => "unclassified",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// A scope is the content strictly between a matched opener and closer:
/// `start_byte` is one past the opener, `end_byte` is the closer's offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeCandidate {
    pub file_id: String,
    pub category: Category,
    pub start_byte: usize,
    pub end_byte: usize,
    pub depth: u32,
    pub size_bytes: usize,
    pub prefix_available_bytes: usize,
    pub delimiter: Delimiter,
}

impl ScopeCandidate {
    /// The scope text; a plain byte slice of the file content.
    pub fn text<'c>(&self, content: &'c str) -> &'c str {
        &content[self.start_byte..self.end_byte]
    }

    pub fn closer(&self) -> char {
        self.delimiter.close_byte() as char
    }
}

#[derive(Debug, Clone)]
pub struct FileScopes {
    pub file_id: String,
    pub path: String,
    pub candidates: Vec<ScopeCandidate>,
    pub diagnostics: ScanDiagnostics,
}

/// Classifies one matched span of `record`.
pub fn classify_scope(record: &FileRecord, span: &DelimiterSpan, logging: &LoggingPatterns) -> Category {
    let scan = scan_delimiters(&record.content, record.language);
    let categories = classify::classify_all(&record.content, record.language, &scan, logging);
    scan.spans
        .iter()
        .position(|s| s.open == span.open && s.close == span.close)
        .map(|i| categories[i])
        .unwrap_or(Category::Unclassified)
}

/// One candidate per matched span, sorted by `start_byte`. Nested scopes are
/// all kept.
pub fn extract_scopes(record: &FileRecord, logging: &LoggingPatterns) -> Result<FileScopes, ScopeError> {
    if !matches!(record.language, Language::CCpp | Language::Java) {
        return Err(ScopeError::UnsupportedLanguage(record.language));
    }
    let scan = scan_delimiters(&record.content, record.language);
    let categories = classify::classify_all(&record.content, record.language, &scan, logging);
    let mut candidates: Vec<ScopeCandidate> = scan
        .spans
        .iter()
        .zip(categories)
        .map(|(span, category)| {
            let start_byte = span.open + 1;
            ScopeCandidate {
                file_id: record.file_id.clone(),
                category,
                start_byte,
                end_byte: span.close,
                depth: span.depth,
                size_bytes: span.close - start_byte,
                prefix_available_bytes: start_byte,
                delimiter: span.delimiter,
            }
        })
        .collect();
    candidates.sort_by_key(|c| (c.start_byte, std::cmp::Reverse(c.end_byte)));
    Ok(FileScopes {
        file_id: record.file_id.clone(),
        path: record.repo_relative_path.clone(),
        candidates,
        diagnostics: scan.diagnostics,
    })
}

/// Extracts scopes for every record, once per distinct `file_id`, in
/// manifest order.
pub fn extract_all(records: &[FileRecord], logging: &LoggingPatterns) -> Vec<FileScopes> {
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&FileRecord> = records
        .iter()
        .filter(|r| seen.insert(r.file_id.clone()))
        .collect();
    unique
        .par_iter()
        .filter_map(|r| match extract_scopes(r, logging) {
            Ok(scopes) => {
                if !scopes.diagnostics.is_balanced() {
                    tracing::debug!(
                        path = %r.repo_relative_path,
                        orphans = scopes.diagnostics.orphan_openers.len(),
                        strays = scopes.diagnostics.stray_closers.len(),
                        "unbalanced delimiters"
                    );
                }
                Some(scopes)
            }
            Err(e) => {
                tracing::warn!(path = %r.repo_relative_path, "{e}");
                None
            }
        })
        .collect()
}

pub fn write_scopes_jsonl(path: &Path, scopes: &[FileScopes]) -> Result<(), ScopeError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for candidate in scopes.iter().flat_map(|f| &f.candidates) {
        serde_json::to_writer(&mut out, candidate)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scopes_jsonl(path: &Path) -> Result<Vec<ScopeCandidate>, ScopeError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ScopeError::Malformed { line: i + 1, source })?);
    }
    Ok(out)
}
