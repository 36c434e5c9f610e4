#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use scopeforge::ingest::{ingest_repository, FileRecord, IngestOptions, Language};
use scopeforge::pairs::{CompletionPair, Corpus, FilterConfig, PairKind};
use scopeforge::scopes::{Category, Delimiter, ScopeCandidate};
use serde_json::{json, Value};

pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

pub fn fixture_records() -> Vec<FileRecord> {
    ingest_repository(&fixture_root(), &IngestOptions::default())
        .expect("fixture corpus ingests")
        .files
}

/// A permissively licensed real-world tree with at least 500 C/C++ files.
pub fn real_repo_root() -> Option<PathBuf> {
    let candidates = [
        std::env::var("SCOPEFORGE_REAL_REPO").ok().map(PathBuf::from),
        Some(PathBuf::from("/usr/include/boost/geometry")),
    ];
    candidates.into_iter().flatten().find(|p| p.is_dir())
}

// ---------- annotations ----------

pub struct Annotation {
    pub path: String,
    pub needle: String,
    pub occurrence: usize,
    pub category: Category,
}

pub fn annotations() -> Vec<Annotation> {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/annotations.tsv"))
        .expect("annotations present");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            assert_eq!(cols.len(), 4, "bad annotation line {l:?}");
            Annotation {
                path: cols[0].to_string(),
                needle: cols[1].replace("\\n", "\n"),
                occurrence: cols[2].parse().unwrap(),
                category: cols[3].parse().unwrap(),
            }
        })
        .collect()
}

/// Byte offset of the scope opener an annotation points at.
pub fn annotated_opener(content: &str, a: &Annotation) -> Option<usize> {
    let mut from = 0;
    let mut found = None;
    for _ in 0..a.occurrence {
        let i = content[from..].find(&a.needle)? + from;
        found = Some(i + a.needle.len() - 1);
        from = i + 1;
    }
    found
}

// ---------- independent lexical mask ----------

/// True for bytes outside comments, string/char literals and preprocessor
/// lines. Written separately from the library lexer.
pub fn code_mask(src: &str, lang: Language) -> Vec<bool> {
    let b = src.as_bytes();
    let n = b.len();
    let mut code = vec![true; n];
    let mut i = 0;
    let mut line_start = true;
    let is_ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_';
    while i < n {
        let c = b[i];
        if lang == Language::CCpp && line_start && c == b'#' {
            while i < n && b[i] != b'\n' {
                if b[i] == b'\\' && i + 1 < n && b[i + 1] == b'\n' {
                    code[i] = false;
                    code[i + 1] = false;
                    i += 2;
                    continue;
                }
                if b[i] == b'/' && i + 1 < n && b[i + 1] == b'*' {
                    // block comment inside a directive may span lines
                    code[i] = false;
                    i += 2;
                    while i < n && !(b[i] == b'*' && i + 1 < n && b[i + 1] == b'/') {
                        code[i] = false;
                        i += 1;
                    }
                    for k in i..(i + 2).min(n) {
                        code[k] = false;
                    }
                    i += 2;
                    continue;
                }
                code[i] = false;
                i += 1;
            }
            continue;
        }
        if c == b'\n' {
            line_start = true;
            i += 1;
            continue;
        }
        if !c.is_ascii_whitespace() {
            line_start = false;
        }
        if c == b'/' && i + 1 < n && b[i + 1] == b'/' {
            while i < n && b[i] != b'\n' {
                code[i] = false;
                i += 1;
            }
            continue;
        }
        if c == b'/' && i + 1 < n && b[i + 1] == b'*' {
            code[i] = false;
            code[i + 1] = false;
            i += 2;
            while i < n && !(b[i] == b'*' && i + 1 < n && b[i + 1] == b'/') {
                code[i] = false;
                i += 1;
            }
            for k in i..(i + 2).min(n) {
                code[k] = false;
            }
            i += 2;
            continue;
        }
        if lang == Language::Java && b[i..].starts_with(b"\"\"\"") {
            let end = src[i + 3..].find("\"\"\"").map(|e| i + 3 + e + 3).unwrap_or(n);
            for k in i..end {
                code[k] = false;
            }
            i = end;
            continue;
        }
        if c == b'"' || c == b'\'' {
            if c == b'\'' && i > 0 && b[i - 1].is_ascii_hexdigit() && number_before(b, i) {
                i += 1;
                continue;
            }
            code[i] = false;
            i += 1;
            while i < n && b[i] != c && b[i] != b'\n' {
                if b[i] == b'\\' && i + 1 < n {
                    code[i] = false;
                    i += 1;
                }
                code[i] = false;
                i += 1;
            }
            if i < n && b[i] == c {
                code[i] = false;
                i += 1;
            }
            continue;
        }
        if is_ident(c) {
            while i < n && is_ident(b[i]) {
                i += 1;
            }
            continue;
        }
        i += 1;
    }
    code
}

fn number_before(b: &[u8], i: usize) -> bool {
    let mut j = i;
    while j > 0 && (b[j - 1].is_ascii_alphanumeric() || b[j - 1] == b'\'' || b[j - 1] == b'_') {
        j -= 1;
    }
    b[j].is_ascii_digit()
}

/// Balanced, laminar and reconstructible checks for one file's scopes.
pub fn soundness_violations(content: &str, lang: Language, scopes: &[ScopeCandidate]) -> Vec<String> {
    let mask = code_mask(content, lang);
    let b = content.as_bytes();
    let mut v = Vec::new();
    for s in scopes {
        let (open, close) = match s.delimiter {
            Delimiter::Brace => (b'{', b'}'),
            Delimiter::Paren => (b'(', b')'),
        };
        if s.start_byte == 0 || s.end_byte >= b.len() || s.start_byte > s.end_byte {
            v.push(format!("span {}..{} out of range", s.start_byte, s.end_byte));
            continue;
        }
        if b[s.start_byte - 1] != open || !mask[s.start_byte - 1] {
            v.push(format!("byte before {} is not a code opener", s.start_byte));
        }
        if b[s.end_byte] != close || !mask[s.end_byte] {
            v.push(format!("byte at {} is not a code closer", s.end_byte));
        }
        let mut depth = 0i64;
        for k in s.start_byte..s.end_byte {
            if !mask[k] {
                continue;
            }
            if b[k] == open {
                depth += 1;
            } else if b[k] == close {
                depth -= 1;
                if depth < 0 {
                    break;
                }
            }
        }
        if depth != 0 {
            v.push(format!("span {}..{} unbalanced", s.start_byte, s.end_byte));
        }
        let text = s.text(content);
        let rebuilt = format!("{}{}{}", &content[..s.start_byte], text, &content[s.end_byte..]);
        if rebuilt != content || text.len() != s.size_bytes || s.closer() as u32 != close as u32 {
            v.push(format!("span {}..{} not reconstructible", s.start_byte, s.end_byte));
        }
    }
    for class in [Delimiter::Brace, Delimiter::Paren] {
        let mut spans: Vec<(usize, usize)> = scopes
            .iter()
            .filter(|s| s.delimiter == class)
            .map(|s| (s.start_byte, s.end_byte))
            .collect();
        spans.sort();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for (a, e) in spans {
            while stack.last().is_some_and(|&(_, te)| te < a) {
                stack.pop();
            }
            if let Some(&(_, te)) = stack.last() {
                if e > te {
                    v.push(format!("{class:?} spans cross at {a}..{e}"));
                }
            }
            stack.push((a, e));
        }
    }
    v
}

// ---------- dataset checkers ----------

/// Post-hoc bound check of emitted pairs.
pub fn filter_violations(pairs: &[CompletionPair], cfg: &FilterConfig) -> Vec<String> {
    let mut v = Vec::new();
    for p in pairs {
        let size = p.scope_end_byte - p.scope_start_byte;
        if size < cfg.min_scope_bytes || size > cfg.max_scope_bytes {
            v.push(format!("{}: scope size {size}", p.pair_id));
        }
        if p.scope_start_byte < cfg.min_prefix_bytes {
            v.push(format!("{}: prefix {} bytes", p.pair_id, p.scope_start_byte));
        }
        if p.kind == PairKind::Primary && p.query.len() < cfg.min_prefix_bytes {
            v.push(format!("{}: primary query {} bytes", p.pair_id, p.query.len()));
        }
        if p.query.len() > cfg.max_prefix_bytes {
            v.push(format!("{}: query {} bytes", p.pair_id, p.query.len()));
        }
        if p.mask_len != p.query.len() {
            v.push(format!("{}: mask_len {} != {}", p.pair_id, p.mask_len, p.query.len()));
        }
        if !p.label.ends_with(&p.eot_token) {
            v.push(format!("{}: label lacks end-of-text token", p.pair_id));
        }
    }
    v
}

/// Pairs whose query ++ label (without end-of-text) is not a verbatim slice
/// of the source file.
pub fn contiguity_violations(pairs: &[CompletionPair], corpus: &Corpus) -> Vec<String> {
    let mut v = Vec::new();
    for p in pairs {
        let Some(content) = corpus.content(&p.file_id) else {
            v.push(format!("{}: unknown file", p.pair_id));
            continue;
        };
        let label = p.label.strip_suffix(&p.eot_token).unwrap_or(&p.label);
        let joined = format!("{}{}", p.query, label);
        let start = p.scope_start_byte + p.start_shift_bytes - p.query.len();
        if content.get(start..start + joined.len()) != Some(joined.as_str()) {
            v.push(format!("{}: not a contiguous slice", p.pair_id));
        }
    }
    v
}

// ---------- oracles ----------

/// Levenshtein straight from the recursive definition, memoized.
pub fn lev_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let d = (go(a, b, i - 1, j, memo) + 1)
            .min(go(a, b, i, j - 1, memo) + 1)
            .min(go(a, b, i - 1, j - 1, memo) + cost);
        memo.insert((i, j), d);
        d
    }
    go(a, b, a.len(), b.len(), &mut HashMap::new())
}

pub fn lev_oracle_str(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    lev_oracle(&a, &b)
}

/// Top-n by full sort: similarity descending, pair_id ascending.
pub fn knn_oracle(keys: &[(String, Vec<f32>)], q: &[f32], n: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut all: Vec<(String, f64)> = keys
        .iter()
        .map(|(id, k)| {
            let kn = norm(k);
            let s = if qn == 0.0 || kn == 0.0 {
                0.0
            } else {
                let dot: f64 = k.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum();
                (dot / (qn * kn)).clamp(-1.0, 1.0)
            };
            (id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

// ---------- stub servers ----------

pub enum StubReply {
    Text { text: String, stop_reason: Option<String> },
    Status(u16),
    Delayed(Duration, String),
    Malformed,
}

pub type GenerateFn = Arc<dyn Fn(&Value) -> StubReply + Send + Sync>;

async fn generate_handler(State(f): State<GenerateFn>, Json(body): Json<Value>) -> Response {
    match f(&body) {
        StubReply::Text { text, stop_reason } => Json(json!({ "text": text, "stop_reason": stop_reason })).into_response(),
        StubReply::Status(code) => StatusCode::from_u16(code).unwrap().into_response(),
        StubReply::Delayed(d, text) => {
            tokio::time::sleep(d).await;
            Json(json!({ "text": text })).into_response()
        }
        StubReply::Malformed => (StatusCode::OK, "{not json").into_response(),
    }
}

/// Serves `POST /generate` on an ephemeral port; returns the base URL.
pub async fn spawn_generate(f: GenerateFn) -> String {
    let app = Router::new().route("/generate", post(generate_handler)).with_state(f);
    serve(app).await
}

pub const STUB_DIM: usize = 384;

/// Deterministic stand-in embedding: byte-trigram counts folded into
/// `STUB_DIM` buckets.
pub fn stub_vector(text: &str) -> Vec<f32> {
    let mut v = vec![0f32; STUB_DIM];
    for w in text.as_bytes().windows(3) {
        let h = (w[0] as usize * 31 * 31 + w[1] as usize * 31 + w[2] as usize) % STUB_DIM;
        v[h] += 1.0;
    }
    v
}

async fn embed_handler(State(dim): State<usize>, Json(body): Json<Value>) -> Response {
    let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap_or_default();
    let vectors: Vec<Vec<f32>> = texts
        .iter()
        .map(|t| {
            let mut v = stub_vector(t);
            v.resize(dim, 0.0);
            v
        })
        .collect();
    Json(json!({ "vectors": vectors, "dim": dim })).into_response()
}

/// Serves `POST /embed` reporting dimension `dim`.
pub async fn spawn_embed(dim: usize) -> String {
    let app = Router::new().route("/embed", post(embed_handler)).with_state(dim);
    serve(app).await
}

async fn serve(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    format!("http://{addr}")
}

// ---------- pipeline helpers ----------

use scopeforge::pipeline::{split_pairs, PipelineConfig};

pub fn fixture_config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        repo_root: Some(fixture_root()),
        output_dir: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

/// Test pairs the pipeline will draw for `cfg`, computed through the
/// library stages directly: query -> label without end-of-text.
pub fn expected_test_labels(cfg: &PipelineConfig) -> Vec<(String, String)> {
    let records = ingest_repository(cfg.repo_root.as_ref().unwrap(), &cfg.ingest_options())
        .unwrap()
        .files;
    let scopes = scopeforge::scopes::extract_all(&records, &cfg.logging());
    let cands: Vec<ScopeCandidate> = scopes.into_iter().flat_map(|f| f.candidates).collect();
    let corpus = Corpus::from_records(&records);
    let set = scopeforge::pairs::generate_pairs(&cands, &corpus, &cfg.pair_options()).unwrap();
    let (_, test, _, _) = split_pairs(set.pairs, &cfg.holdout_paths().unwrap(), &corpus);
    test.iter()
        .map(|p| (p.query.clone(), p.label_without_eot().to_string()))
        .collect()
}

/// Generate stub answering with the ground truth of the longest known query
/// that ends the prompt, followed by `junk`.
pub fn oracle_generate(labels: Vec<(String, String)>, junk: &'static str) -> GenerateFn {
    Arc::new(move |body| {
        let prompt = body["prompt"].as_str().unwrap_or_default();
        let best = labels
            .iter()
            .filter(|(q, _)| prompt.ends_with(q.as_str()))
            .max_by_key(|(q, _)| q.len());
        StubReply::Text {
            text: format!("{}{junk}", best.map(|(_, l)| l.as_str()).unwrap_or("")),
            stop_reason: Some("end_of_stream".into()),
        }
    })
}
