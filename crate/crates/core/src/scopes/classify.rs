//! Token-lookbehind classification of delimiter spans.

use std::collections::{HashMap, HashSet};

use regex::Regex;

use super::lexer::{ByteClass, Delimiter, DelimiterSpan, ScanOutput, SpanContext};
use super::{Category, ScopeError};
use crate::ingest::Language;

/// Tokens examined when looking behind an opener before giving up.
const LOOKBEHIND_LIMIT: usize = 48;

/// Callee-name patterns that turn a call into a logging call. A pattern
/// matches if it matches the whole qualified callee or any of its segments
/// (split on `.`, `::` and `->`).
#[derive(Debug, Clone)]
pub struct LoggingPatterns {
    patterns: Vec<Regex>,
}

pub const DEFAULT_LOGGING_PATTERNS: &[&str] = &[
    r"(?i)^(log|logger|logging|logs|trace|tracer|syslog)$",
    r"^(log|Log|LOG|trace|Trace|TRACE)([A-Z_0-9]|$)",
    r"^(pd|PD)_?[A-Z]",
    r"[a-z0-9](Log|Trace)$",
    r"(?i)_(log|trace)$",
];

impl Default for LoggingPatterns {
    fn default() -> Self {
        Self::new(DEFAULT_LOGGING_PATTERNS.iter().copied()).expect("default patterns compile")
    }
}

impl LoggingPatterns {
    pub fn new<I, S>(patterns: I) -> Result<Self, ScopeError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let patterns = patterns
            .into_iter()
            .map(|p| {
                Regex::new(p.as_ref()).map_err(|source| ScopeError::InvalidPattern {
                    pattern: p.as_ref().to_string(),
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn matches_callee(&self, callee: &str) -> bool {
        self.patterns.iter().any(|re| {
            re.is_match(callee)
                || callee
                    .split(['.', ':'])
                    .flat_map(|s| s.split("->"))
                    .filter(|s| !s.is_empty() && *s != callee)
                    .any(|seg| re.is_match(seg))
        })
    }
}

const CONTROL_KEYWORDS: &[&str] = &[
    "if", "for", "while", "switch", "catch", "synchronized", "return", "sizeof", "alignof",
    "decltype", "typeof", "throw", "case", "noexcept", "alignas", "static_assert", "defined",
    "__attribute__", "__declspec", "do", "else", "try", "using", "assert", "_Alignof",
    "_Generic", "__typeof__", "requires", "co_await", "co_return", "co_yield", "delete",
];

const QUALIFIERS: &[&str] = &["const", "noexcept", "override", "final", "volatile", "mutable"];

const TYPE_KEYWORDS: &[&str] = &[
    "class", "struct", "union", "namespace", "interface", "enum", "extern", "record",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Ident(&'a str),
    Punct(u8),
    /// A matched `( … )` group, identified by its open offset.
    Group(usize),
    Literal,
    Start,
}

/// Reads code tokens backwards, skipping whitespace and trivia.
#[derive(Clone, Copy)]
struct Backward<'a> {
    src: &'a [u8],
    classes: &'a [ByteClass],
    paren_open_of_close: &'a HashMap<usize, usize>,
    pos: usize,
    budget: usize,
}

impl<'a> Backward<'a> {
    fn new(ix: &'a ClassifyIndex<'a>, pos: usize) -> Self {
        Self {
            src: ix.src,
            classes: ix.classes,
            paren_open_of_close: &ix.paren_open_of_close,
            pos,
            budget: LOOKBEHIND_LIMIT,
        }
    }

    fn next(&mut self) -> Tok<'a> {
        if self.budget == 0 {
            return Tok::Start;
        }
        self.budget -= 1;
        let mut p = self.pos;
        while p > 0 {
            let c = self.classes[p - 1];
            if c == ByteClass::Trivia || (c == ByteClass::Code && self.src[p - 1].is_ascii_whitespace()) {
                p -= 1;
            } else {
                break;
            }
        }
        if p == 0 {
            self.pos = 0;
            return Tok::Start;
        }
        let b = self.src[p - 1];
        if self.classes[p - 1] == ByteClass::Literal {
            while p > 0 && self.classes[p - 1] == ByteClass::Literal {
                p -= 1;
            }
            self.pos = p;
            return Tok::Literal;
        }
        if is_ident(b) {
            let end = p;
            while p > 0 && self.classes[p - 1] == ByteClass::Code && is_ident(self.src[p - 1]) {
                p -= 1;
            }
            self.pos = p;
            return Tok::Ident(std::str::from_utf8(&self.src[p..end]).unwrap_or(""));
        }
        if b == b')' {
            if let Some(&open) = self.paren_open_of_close.get(&(p - 1)) {
                self.pos = open;
                return Tok::Group(open);
            }
        }
        self.pos = p - 1;
        Tok::Punct(b)
    }

    fn peek(&self) -> Tok<'a> {
        let mut probe = *self;
        probe.next()
    }
}

fn is_ident(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$' || b >= 0x80
}

fn is_keyword(word: &str) -> bool {
    CONTROL_KEYWORDS.contains(&word) || TYPE_KEYWORDS.contains(&word) || QUALIFIERS.contains(&word)
}

pub(crate) struct ClassifyIndex<'a> {
    src: &'a [u8],
    classes: &'a [ByteClass],
    language: Language,
    paren_open_of_close: HashMap<usize, usize>,
    brace_context: HashMap<usize, SpanContext>,
    type_body_cache: std::cell::RefCell<HashMap<usize, bool>>,
}

impl<'a> ClassifyIndex<'a> {
    pub fn new(src: &'a str, language: Language, scan: &'a ScanOutput) -> Self {
        let mut paren_open_of_close = HashMap::new();
        let mut brace_context = HashMap::new();
        for (span, ctx) in scan.spans.iter().zip(&scan.contexts) {
            match span.delimiter {
                Delimiter::Paren => {
                    paren_open_of_close.insert(span.close, span.open);
                }
                Delimiter::Brace => {
                    brace_context.insert(span.open, *ctx);
                }
            }
        }
        Self {
            src: src.as_bytes(),
            classes: &scan.classes,
            language,
            paren_open_of_close,
            brace_context,
            type_body_cache: Default::default(),
        }
    }

    /// True when the brace opened at `open` is a class/struct/namespace/
    /// interface/enum/extern body (or an anonymous class body).
    fn is_type_body(&self, open: usize) -> bool {
        if let Some(&cached) = self.type_body_cache.borrow().get(&open) {
            return cached;
        }
        let mut rd = Backward::new(self, open);
        let mut angle = 0i32;
        let mut result = false;
        loop {
            match rd.next() {
                Tok::Start | Tok::Punct(b';') | Tok::Punct(b'{') | Tok::Punct(b'}') => break,
                Tok::Punct(b'>') => angle += 1,
                Tok::Punct(b'<') => angle -= 1,
                Tok::Ident(w) if angle <= 0 && (TYPE_KEYWORDS.contains(&w) || w == "new") => {
                    result = true;
                    break;
                }
                Tok::Punct(b'=') => break,
                _ => {}
            }
        }
        self.type_body_cache.borrow_mut().insert(open, result);
        result
    }

    /// Declaration level: top level, or directly inside a type body.
    fn at_declaration_level(&self, ctx: &SpanContext) -> bool {
        match ctx.enclosing_brace {
            None => true,
            Some(open) => self.is_type_body(open),
        }
    }

    fn brace_at_declaration_level(&self, open: usize) -> bool {
        self.brace_context
            .get(&open)
            .map(|ctx| !ctx.in_paren && self.at_declaration_level(ctx))
            .unwrap_or(false)
    }

    /// Walks back from the `{` at `open` over qualifiers, `throws` clauses,
    /// trailing return types and constructor initializer lists to the
    /// parameter group, if any.
    fn parameter_group_before_brace(&self, open: usize) -> Option<usize> {
        let mut rd = Backward::new(self, open);
        loop {
            match rd.next() {
                Tok::Group(po) => {
                    // `, member(init)` or `: member(init)` belongs to an init list.
                    let mut probe = Backward::new(self, po);
                    if let Tok::Ident(name) = probe.next() {
                        if !is_keyword(name) {
                            match probe.next() {
                                Tok::Punct(b',') => {
                                    rd = probe;
                                    continue;
                                }
                                Tok::Punct(b':') if probe.peek() != Tok::Punct(b':') => {
                                    rd = probe;
                                    continue;
                                }
                                _ => {}
                            }
                        }
                    }
                    return Some(po);
                }
                Tok::Ident(q) if QUALIFIERS.contains(&q) => continue,
                Tok::Punct(b'&') => continue,
                Tok::Ident(_) if self.language == Language::Java => {
                    // `throws A, b.C`
                    loop {
                        match rd.next() {
                            Tok::Ident("throws") => break,
                            Tok::Ident(_) | Tok::Punct(b'.') | Tok::Punct(b',') => {}
                            _ => return None,
                        }
                    }
                }
                Tok::Ident(_) => {
                    // trailing return type: `-> std::vector<T>`
                    let mut angle = 0i32;
                    loop {
                        match rd.next() {
                            Tok::Punct(b'>') if rd.peek() == Tok::Punct(b'-') && angle == 0 => {
                                rd.next();
                                break;
                            }
                            Tok::Punct(b'>') => angle += 1,
                            Tok::Punct(b'<') => angle -= 1,
                            Tok::Ident(_) | Tok::Punct(b':') | Tok::Punct(b'*') | Tok::Punct(b'&')
                            | Tok::Punct(b',') => {}
                            _ => return None,
                        }
                    }
                }
                _ => return None,
            }
        }
    }

    fn classify_brace(&self, span: &DelimiterSpan) -> (Category, Option<usize>) {
        let mut rd = Backward::new(self, span.open);
        match rd.next() {
            Tok::Ident("else") => return (Category::ElseBody, None),
            Tok::Group(po) => {
                let mut before = Backward::new(self, po);
                match before.next() {
                    Tok::Ident("if") => return (Category::IfBody, None),
                    Tok::Ident("for") => return (Category::ForBody, None),
                    _ => {}
                }
            }
            _ => {}
        }
        let Some(po) = self.parameter_group_before_brace(span.open) else {
            return (Category::Unclassified, None);
        };
        if !self.brace_at_declaration_level(span.open) {
            return (Category::Unclassified, None);
        }
        let mut before = Backward::new(self, po);
        let is_function = match before.next() {
            Tok::Ident(name) if !is_keyword(name) => {
                // `record R(...) {` and `new T(...) {` open type bodies.
                !matches!(before.next(), Tok::Ident("record") | Tok::Ident("new"))
            }
            Tok::Punct(_) => {
                let mut found = false;
                for _ in 0..3 {
                    match before.next() {
                        Tok::Ident("operator") => {
                            found = true;
                            break;
                        }
                        Tok::Punct(_) => {}
                        _ => break,
                    }
                }
                found
            }
            // `operator()(...)`
            Tok::Group(_) => matches!(before.next(), Tok::Ident("operator")),
            _ => false,
        };
        if is_function {
            (Category::FuncBody, Some(po))
        } else {
            (Category::Unclassified, None)
        }
    }

    /// Qualified callee text ending right before `open`, e.g. `log.info`.
    fn callee_before(&'a self, open: usize) -> Option<(String, Tok<'a>, Backward<'a>)> {
        let mut rd = Backward::new(self, open);
        let Tok::Ident(last) = rd.next() else {
            return None;
        };
        if is_keyword(last) || last.as_bytes()[0].is_ascii_digit() {
            return None;
        }
        let mut segments = vec![last];
        let mut separators = Vec::new();
        loop {
            let save = rd;
            let sep = match rd.next() {
                Tok::Punct(b'.') => ".",
                Tok::Punct(b':') if rd.next() == Tok::Punct(b':') => "::",
                Tok::Punct(b'>') if rd.next() == Tok::Punct(b'-') => "->",
                _ => {
                    rd = save;
                    break;
                }
            };
            let save_sep = rd;
            match rd.next() {
                Tok::Ident(seg) => {
                    segments.push(seg);
                    separators.push(sep);
                }
                _ => {
                    rd = save_sep;
                    break;
                }
            }
        }
        let mut callee = String::new();
        for (i, seg) in segments.iter().enumerate().rev() {
            callee.push_str(seg);
            if i > 0 {
                callee.push_str(separators[i - 1]);
            }
        }
        let before = rd.next();
        Some((callee, before, rd))
    }

    fn classify_paren(
        &'a self,
        span: &DelimiterSpan,
        ctx: &SpanContext,
        parameter_groups: &HashSet<usize>,
        logging: &LoggingPatterns,
    ) -> Category {
        if parameter_groups.contains(&span.open) {
            return Category::Unclassified;
        }
        let Some((callee, before, mut rest)) = self.callee_before(span.open) else {
            return Category::Unclassified;
        };
        if before == Tok::Punct(b'@') {
            return Category::Unclassified;
        }
        if !ctx.in_paren && self.at_declaration_level(ctx) {
            let call_context = match before {
                Tok::Punct(b'=') | Tok::Punct(b'(') | Tok::Punct(b',') | Tok::Punct(b'?') => true,
                Tok::Ident("return") | Tok::Ident("new") => true,
                // Member initializer `Ctor(...) : x_(a)`.
                Tok::Punct(b':') => matches!(rest.next(), Tok::Group(_)),
                _ => false,
            };
            if !call_context {
                return Category::Unclassified;
            }
        }
        if logging.matches_callee(&callee) {
            Category::Logging
        } else {
            Category::FuncCall
        }
    }
}

/// Classifies every span of one scan. Brace spans are classified first so
/// that parameter lists of function definitions are known when classifying
/// parenthesis spans.
pub(crate) fn classify_all(
    src: &str,
    language: Language,
    scan: &ScanOutput,
    logging: &LoggingPatterns,
) -> Vec<Category> {
    let ix = ClassifyIndex::new(src, language, scan);
    let mut categories = vec![Category::Unclassified; scan.spans.len()];
    let mut parameter_groups = HashSet::new();
    for (i, span) in scan.spans.iter().enumerate() {
        if span.delimiter == Delimiter::Brace {
            let (cat, params) = ix.classify_brace(span);
            categories[i] = cat;
            if let Some(po) = params {
                parameter_groups.insert(po);
            }
        }
    }
    for (i, (span, ctx)) in scan.spans.iter().zip(&scan.contexts).enumerate() {
        if span.delimiter == Delimiter::Paren {
            categories[i] = ix.classify_paren(span, ctx, &parameter_groups, logging);
        }
    }
    categories
}
