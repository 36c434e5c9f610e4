//! Comment-, literal- and preprocessor-aware delimiter matching for C/C++ and Java.

use serde::{Deserialize, Serialize};

use crate::ingest::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Brace,
    Paren,
}

impl Delimiter {
    pub fn open_byte(self) -> u8 {
        match self {
            Delimiter::Brace => b'{',
            Delimiter::Paren => b'(',
        }
    }

    pub fn close_byte(self) -> u8 {
        match self {
            Delimiter::Brace => b'}',
            Delimiter::Paren => b')',
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            b'{' | b'}' => Some(Delimiter::Brace),
            b'(' | b')' => Some(Delimiter::Paren),
            _ => None,
        }
    }
}

/// A matched delimiter pair; `open` and `close` are the offsets of the
/// delimiter bytes themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelimiterSpan {
    pub open: usize,
    pub close: usize,
    pub delimiter: Delimiter,
    /// Nesting levels of matched delimiters strictly inside; 0 when flat.
    pub depth: u32,
}

impl DelimiterSpan {
    pub fn contains(&self, other: &DelimiterSpan) -> bool {
        self.open < other.open && other.close < self.close
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexMode {
    Code,
    LineComment,
    BlockComment,
    StringLit,
    CharLit,
    Preprocessor,
}

/// Lexical class of each byte, used by the classifier to skip trivia.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteClass {
    Code,
    /// Comments and preprocessor lines.
    Trivia,
    /// String and character literals, including their quotes.
    Literal,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanDiagnostics {
    /// Openers that never found their closer (reported, not matched).
    pub orphan_openers: Vec<usize>,
    /// Closers with no opener of the same class on the stack.
    pub stray_closers: Vec<usize>,
    pub unterminated_literals: Vec<usize>,
    pub unterminated_comment: Option<usize>,
    /// `R"` prefixes; raw strings are lexed as ordinary strings.
    pub suspected_raw_strings: Vec<usize>,
}

impl ScanDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.orphan_openers.is_empty()
            && self.stray_closers.is_empty()
            && self.unterminated_literals.is_empty()
            && self.unterminated_comment.is_none()
            && self.suspected_raw_strings.is_empty()
    }

    pub fn is_balanced(&self) -> bool {
        self.orphan_openers.is_empty() && self.stray_closers.is_empty()
    }
}

/// Context recorded at push time, parallel to `ScanOutput::spans`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SpanContext {
    /// Open offset of the innermost brace enclosing this opener.
    pub enclosing_brace: Option<usize>,
    /// True when some parenthesis was open at push time.
    pub in_paren: bool,
}

#[derive(Debug, Clone)]
pub struct ScanOutput {
    /// Matched spans sorted by `open`.
    pub spans: Vec<DelimiterSpan>,
    pub classes: Vec<ByteClass>,
    pub diagnostics: ScanDiagnostics,
    pub(crate) contexts: Vec<SpanContext>,
}

#[derive(Debug, Clone, Copy)]
struct StackEntry {
    delimiter: Delimiter,
    offset: usize,
    max_child: Option<u32>,
    context: SpanContext,
}

/// Scanner state: byte cursor, lexical mode and the open-delimiter stack.
#[derive(Debug)]
pub struct LexState {
    pub cursor: usize,
    pub mode: LexMode,
    stack: Vec<StackEntry>,
    /// Mode to resume after a comment or literal ends (Code or Preprocessor).
    resume: LexMode,
    /// Whether a non-whitespace byte has been seen on the current line.
    line_has_token: bool,
    /// Whether the current identifier/number token started with a digit.
    token_is_number: bool,
    /// Java `"""` text block.
    text_block: bool,
    literal_start: usize,
}

impl LexState {
    fn new() -> Self {
        Self {
            cursor: 0,
            mode: LexMode::Code,
            stack: Vec::new(),
            resume: LexMode::Code,
            line_has_token: false,
            token_is_number: false,
            text_block: false,
            literal_start: 0,
        }
    }

    pub fn stack_depth(&self) -> usize {
        self.stack.len()
    }

    /// Stack contents as `(delimiter byte, offset)`, bottom first.
    pub fn stack(&self) -> Vec<(char, usize)> {
        self.stack
            .iter()
            .map(|e| (e.delimiter.open_byte() as char, e.offset))
            .collect()
    }
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$' || b >= 0x80
}

struct Scanner<'a> {
    src: &'a [u8],
    language: Language,
    state: LexState,
    classes: Vec<ByteClass>,
    spans: Vec<(DelimiterSpan, SpanContext)>,
    diagnostics: ScanDiagnostics,
}

impl<'a> Scanner<'a> {
    fn peek(&self, offset: usize) -> Option<u8> {
        self.src.get(self.state.cursor + offset).copied()
    }

    fn mark(&mut self, n: usize, class: ByteClass) {
        let start = self.state.cursor;
        let end = (start + n).min(self.src.len());
        for c in &mut self.classes[start..end] {
            *c = class;
        }
        self.state.cursor = end;
    }

    fn push(&mut self, delimiter: Delimiter) {
        let enclosing_brace = self
            .state
            .stack
            .iter()
            .rev()
            .find(|e| e.delimiter == Delimiter::Brace)
            .map(|e| e.offset);
        let in_paren = self.state.stack.iter().any(|e| e.delimiter == Delimiter::Paren);
        self.state.stack.push(StackEntry {
            delimiter,
            offset: self.state.cursor,
            max_child: None,
            context: SpanContext {
                enclosing_brace,
                in_paren,
            },
        });
    }

    fn propagate(&mut self, child_level: Option<u32>) {
        if let (Some(level), Some(top)) = (child_level, self.state.stack.last_mut()) {
            top.max_child = Some(top.max_child.map_or(level, |m| m.max(level)));
        }
    }

    fn close(&mut self, delimiter: Delimiter) {
        let at = self.state.cursor;
        let Some(pos) = self.state.stack.iter().rposition(|e| e.delimiter == delimiter) else {
            self.diagnostics.stray_closers.push(at);
            return;
        };
        // Openers above the match are orphans; their children still count
        // toward the enclosing span's depth.
        while self.state.stack.len() > pos + 1 {
            let orphan = self.state.stack.pop().expect("non-empty");
            self.diagnostics.orphan_openers.push(orphan.offset);
            self.propagate(orphan.max_child);
        }
        let entry = self.state.stack.pop().expect("matched entry");
        let depth = entry.max_child.map_or(0, |m| m + 1);
        self.spans.push((
            DelimiterSpan {
                open: entry.offset,
                close: at,
                delimiter,
                depth,
            },
            entry.context,
        ));
        self.propagate(Some(depth));
    }

    fn raw_string_prefix(&self) -> bool {
        let at = self.state.cursor;
        if at == 0 || self.src[at - 1] != b'R' {
            return false;
        }
        let mut start = at - 1;
        while start > 0 && is_ident_byte(self.src[start - 1]) {
            start -= 1;
        }
        matches!(&self.src[start..at], b"R" | b"u8R" | b"uR" | b"UR" | b"LR")
    }

    fn step_code(&mut self) {
        let b = self.src[self.state.cursor];
        let next = self.peek(1);
        if b == b'\n' {
            self.state.line_has_token = false;
            self.state.token_is_number = false;
            self.mark(1, ByteClass::Code);
            return;
        }
        if b.is_ascii_whitespace() {
            self.state.token_is_number = false;
            self.mark(1, ByteClass::Code);
            return;
        }
        let first_on_line = !self.state.line_has_token;
        self.state.line_has_token = true;

        if b == b'#' && first_on_line && self.language == Language::CCpp {
            self.state.mode = LexMode::Preprocessor;
            self.mark(1, ByteClass::Trivia);
            return;
        }
        if b == b'/' && next == Some(b'/') {
            self.state.resume = LexMode::Code;
            self.state.mode = LexMode::LineComment;
            self.mark(2, ByteClass::Trivia);
            return;
        }
        if b == b'/' && next == Some(b'*') {
            self.begin_block_comment(LexMode::Code);
            return;
        }
        if b == b'"' {
            self.begin_string(LexMode::Code);
            return;
        }
        if b == b'\'' {
            let prev_is_ident = self.state.cursor > 0 && is_ident_byte(self.src[self.state.cursor - 1]);
            if self.language == Language::CCpp && prev_is_ident && self.state.token_is_number {
                // C++14 digit separator.
                self.mark(1, ByteClass::Code);
                return;
            }
            self.state.resume = LexMode::Code;
            self.state.mode = LexMode::CharLit;
            self.state.literal_start = self.state.cursor;
            self.mark(1, ByteClass::Literal);
            return;
        }
        if is_ident_byte(b) {
            let prev_is_ident = self.state.cursor > 0 && is_ident_byte(self.src[self.state.cursor - 1]);
            if !prev_is_ident {
                self.state.token_is_number = b.is_ascii_digit();
            }
        } else {
            self.state.token_is_number = false;
        }
        match b {
            b'{' | b'(' => self.push(Delimiter::from_byte(b).expect("delimiter")),
            b'}' | b')' => self.close(Delimiter::from_byte(b).expect("delimiter")),
            _ => {}
        }
        self.mark(1, ByteClass::Code);
    }

    fn begin_block_comment(&mut self, resume: LexMode) {
        self.state.resume = resume;
        self.state.mode = LexMode::BlockComment;
        self.state.literal_start = self.state.cursor;
        self.mark(2, ByteClass::Trivia);
    }

    fn begin_string(&mut self, resume: LexMode) {
        if self.language == Language::CCpp && self.raw_string_prefix() {
            self.diagnostics.suspected_raw_strings.push(self.state.cursor);
        }
        self.state.resume = resume;
        self.state.mode = LexMode::StringLit;
        self.state.literal_start = self.state.cursor;
        let triple = self.language == Language::Java && self.peek(1) == Some(b'"') && self.peek(2) == Some(b'"');
        self.state.text_block = triple;
        self.mark(if triple { 3 } else { 1 }, ByteClass::Literal);
    }

    fn step_line_comment(&mut self) {
        let b = self.src[self.state.cursor];
        if b == b'\\' && self.language == Language::CCpp {
            let n = self.continuation_len();
            if n > 0 {
                self.mark(n, ByteClass::Trivia);
                return;
            }
        }
        if b == b'\n' {
            self.state.mode = LexMode::Code;
            self.state.line_has_token = false;
            self.mark(1, ByteClass::Code);
            return;
        }
        self.mark(1, ByteClass::Trivia);
    }

    /// Length of a backslash-newline sequence at the cursor, or 0.
    fn continuation_len(&self) -> usize {
        match (self.peek(1), self.peek(2)) {
            (Some(b'\n'), _) => 2,
            (Some(b'\r'), Some(b'\n')) => 3,
            _ => 0,
        }
    }

    fn step_block_comment(&mut self) {
        if self.src[self.state.cursor] == b'*' && self.peek(1) == Some(b'/') {
            self.state.mode = self.state.resume;
            self.mark(2, ByteClass::Trivia);
            return;
        }
        self.mark(1, ByteClass::Trivia);
    }

    fn end_literal_at_newline(&mut self) {
        self.diagnostics.unterminated_literals.push(self.state.literal_start);
        self.state.mode = LexMode::Code;
        self.state.line_has_token = false;
        self.mark(1, ByteClass::Code);
    }

    fn step_string(&mut self) {
        let b = self.src[self.state.cursor];
        match b {
            b'\\' => self.mark(2, ByteClass::Literal),
            b'"' if self.state.text_block => {
                if self.peek(1) == Some(b'"') && self.peek(2) == Some(b'"') {
                    self.state.mode = self.state.resume;
                    self.state.text_block = false;
                    self.mark(3, ByteClass::Literal);
                } else {
                    self.mark(1, ByteClass::Literal);
                }
            }
            b'"' => {
                self.state.mode = self.state.resume;
                self.mark(1, ByteClass::Literal);
            }
            b'\n' if !self.state.text_block => self.end_literal_at_newline(),
            _ => self.mark(1, ByteClass::Literal),
        }
    }

    fn step_char(&mut self) {
        match self.src[self.state.cursor] {
            b'\\' => self.mark(2, ByteClass::Literal),
            b'\'' => {
                self.state.mode = self.state.resume;
                self.mark(1, ByteClass::Literal);
            }
            b'\n' => self.end_literal_at_newline(),
            _ => self.mark(1, ByteClass::Literal),
        }
    }

    fn step_preprocessor(&mut self) {
        let b = self.src[self.state.cursor];
        let next = self.peek(1);
        match b {
            b'\\' => {
                let n = self.continuation_len();
                self.mark(n.max(1), ByteClass::Trivia);
            }
            b'\n' => {
                self.state.mode = LexMode::Code;
                self.state.line_has_token = false;
                self.mark(1, ByteClass::Code);
            }
            b'/' if next == Some(b'/') => {
                self.state.mode = LexMode::LineComment;
                self.mark(2, ByteClass::Trivia);
            }
            b'/' if next == Some(b'*') => self.begin_block_comment(LexMode::Preprocessor),
            b'"' => {
                self.begin_string(LexMode::Preprocessor);
                // Literals inside directives stay opaque trivia to the classifier.
                let start = self.state.literal_start;
                for c in &mut self.classes[start..self.state.cursor] {
                    *c = ByteClass::Trivia;
                }
            }
            _ => self.mark(1, ByteClass::Trivia),
        }
    }

    fn run(mut self) -> ScanOutput {
        while self.state.cursor < self.src.len() {
            let before = self.state.cursor;
            match self.state.mode {
                LexMode::Code => self.step_code(),
                LexMode::LineComment => self.step_line_comment(),
                LexMode::BlockComment => self.step_block_comment(),
                LexMode::StringLit => {
                    self.step_string();
                    if self.state.resume == LexMode::Preprocessor {
                        self.reclass_trivia(before);
                    }
                }
                LexMode::CharLit => self.step_char(),
                LexMode::Preprocessor => self.step_preprocessor(),
            }
            debug_assert!(self.state.cursor > before);
        }
        match self.state.mode {
            LexMode::BlockComment => self.diagnostics.unterminated_comment = Some(self.state.literal_start),
            LexMode::StringLit | LexMode::CharLit => {
                self.diagnostics.unterminated_literals.push(self.state.literal_start)
            }
            _ => {}
        }
        for entry in &self.state.stack {
            self.diagnostics.orphan_openers.push(entry.offset);
        }
        self.diagnostics.orphan_openers.sort_unstable();

        self.spans.sort_by_key(|(s, _)| s.open);
        let (spans, contexts) = self.spans.into_iter().unzip();
        ScanOutput {
            spans,
            classes: self.classes,
            diagnostics: self.diagnostics,
            contexts,
        }
    }

    fn reclass_trivia(&mut self, from: usize) {
        for c in &mut self.classes[from..self.state.cursor] {
            if *c == ByteClass::Literal {
                *c = ByteClass::Trivia;
            }
        }
    }
}

/// Matches every `{…}` and `(…)` pair whose delimiters occur in code (not in
/// comments, literals or preprocessor lines). Mismatched closers pop
/// intervening openers as orphans, so all spans form one laminar family.
pub fn scan_delimiters(content: &str, language: Language) -> ScanOutput {
    let src = content.as_bytes();
    Scanner {
        src,
        language,
        state: LexState::new(),
        classes: vec![ByteClass::Code; src.len()],
        spans: Vec::new(),
        diagnostics: ScanDiagnostics::default(),
    }
    .run()
}
