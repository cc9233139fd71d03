//! Deterministic source normalization for Java-family code: comment removal
//! with string/char-literal awareness, whitespace collapsing, prompt
//! serialization with the `<BOF>`/`<EOF>` markers, and fenced-block patch
//! extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw UTF-8 source text. Plays the role of buggy code, fixed code,
/// predicted patch, or prompt depending on context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceText(pub String);

impl SourceText {
    pub fn new(raw: impl Into<String>) -> Self {
        SourceText(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for SourceText {
    fn from(s: &str) -> Self {
        SourceText(s.to_string())
    }
}

/// Comment-free, whitespace-collapsed line sequence.
///
/// Every line is non-empty, has no leading/trailing whitespace, and internal
/// whitespace runs are a single space. Normalization is idempotent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    lines: Vec<String>,
}

impl NormalizedText {
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// Lines joined by single newlines.
    pub fn flat(&self) -> String {
        self.lines.join("\n")
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// Non-fatal conditions noticed while normalizing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizeWarning {
    /// A `/*` comment with no closing `*/`; treated as running to end of input.
    UnterminatedBlockComment,
    /// A string or char literal left open at end of line.
    UnterminatedLiteral,
}

#[derive(Copy, Clone, PartialEq)]
enum ScanState {
    Code,
    LineComment,
    BlockComment,
    StringLit,
    CharLit,
}

/// Normalize source text: strip Java comments (string/char-literal aware),
/// trim lines, collapse internal whitespace, drop empty lines.
pub fn normalize(text: &SourceText) -> NormalizedText {
    normalize_checked(text).0
}

/// Like [`normalize`] but also reports recoverable warnings.
pub fn normalize_checked(text: &SourceText) -> (NormalizedText, Vec<NormalizeWarning>) {
    let mut warnings = Vec::new();
    let stripped = strip_comments(text.as_str(), &mut warnings);

    let mut lines = Vec::new();
    for raw_line in stripped.split('\n') {
        let collapsed = collapse_whitespace(raw_line);
        if !collapsed.is_empty() {
            lines.push(collapsed);
        }
    }
    (NormalizedText { lines }, warnings)
}

/// Returns the normalized lines verbatim.
pub fn lines(text: &NormalizedText) -> &[String] {
    text.lines()
}

fn collapse_whitespace(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut pending_space = false;
    for ch in line.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Character-level scanner tracking string literals, char literals and escape
/// sequences. Comments are replaced by a single space; newlines inside block
/// comments are kept so line counts stay stable.
fn strip_comments(input: &str, warnings: &mut Vec<NormalizeWarning>) -> String {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len());
    let mut state = ScanState::Code;
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match state {
            ScanState::Code => match c {
                '/' if next == Some('/') => {
                    state = ScanState::LineComment;
                    i += 2;
                }
                '/' if next == Some('*') => {
                    state = ScanState::BlockComment;
                    i += 2;
                }
                '"' => {
                    state = ScanState::StringLit;
                    out.push(c);
                    i += 1;
                }
                '\'' => {
                    state = ScanState::CharLit;
                    out.push(c);
                    i += 1;
                }
                _ => {
                    out.push(c);
                    i += 1;
                }
            },
            ScanState::LineComment => {
                if c == '\n' {
                    out.push('\n');
                    state = ScanState::Code;
                }
                i += 1;
            }
            ScanState::BlockComment => {
                if c == '*' && next == Some('/') {
                    out.push(' ');
                    state = ScanState::Code;
                    i += 2;
                } else {
                    if c == '\n' {
                        out.push('\n');
                    }
                    i += 1;
                }
            }
            ScanState::StringLit | ScanState::CharLit => {
                let closer = if state == ScanState::StringLit { '"' } else { '\'' };
                if c == '\\' {
                    out.push(c);
                    if let Some(n) = next {
                        out.push(n);
                        i += 2;
                    } else {
                        i += 1;
                    }
                } else if c == closer {
                    out.push(c);
                    state = ScanState::Code;
                    i += 1;
                } else if c == '\n' {
                    // Java literals do not span lines; close the state so a
                    // stray quote cannot swallow the rest of the file.
                    warnings.push(NormalizeWarning::UnterminatedLiteral);
                    out.push('\n');
                    state = ScanState::Code;
                    i += 1;
                } else {
                    out.push(c);
                    i += 1;
                }
            }
        }
    }

    match state {
        ScanState::BlockComment => warnings.push(NormalizeWarning::UnterminatedBlockComment),
        ScanState::StringLit | ScanState::CharLit => {
            warnings.push(NormalizeWarning::UnterminatedLiteral)
        }
        _ => {}
    }

    out
}

/// Prompt fields serialized into the fixed repair-request template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEnvelope {
    pub title: Option<String>,
    pub description: Option<String>,
    pub filename: String,
    pub buggy: SourceText,
    pub minimal_change_flag: bool,
}

pub const BOF_MARKER: &str = "<BOF>";
pub const EOF_MARKER: &str = "<EOF>";

/// Serialize a prompt envelope: optional title/description, filename, the
/// buggy code between `<BOF>`/`<EOF>` inside a fenced Java block, the request
/// sentence, and a trailing opening ```` ```java ```` fence.
pub fn serialize_prompt(env: &PromptEnvelope) -> Result<SourceText> {
    if env.filename.is_empty() {
        return Err(Error::InvalidArgument("prompt filename is empty".into()));
    }
    let mut out = String::new();
    if let Some(title) = &env.title {
        out.push_str("Title: ");
        out.push_str(title);
        out.push('\n');
    }
    if let Some(desc) = &env.description {
        out.push_str(desc);
        out.push('\n');
    }
    out.push_str("Filename: ");
    out.push_str(&env.filename);
    out.push('\n');
    out.push_str(BOF_MARKER);
    out.push_str("\n```java\n");
    out.push_str(env.buggy.as_str());
    if !env.buggy.as_str().ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n");
    out.push_str(EOF_MARKER);
    out.push('\n');
    if env.minimal_change_flag {
        out.push_str("Please fix the buggy code above with the minimal change and return the complete repaired program.\n");
    } else {
        out.push_str("Please fix the buggy code above and return the complete repaired program.\n");
    }
    out.push_str("```java\n");
    Ok(SourceText(out))
}

/// Extract the body of the first fenced code block (optional language tag on
/// the opening fence). A missing closing fence takes the block to end of
/// input, which matches truncated generations.
pub fn extract_patch(model_output: &SourceText) -> Result<SourceText> {
    let mut body: Vec<&str> = Vec::new();
    let mut inside = false;
    for line in model_output.as_str().lines() {
        if line.trim_start().starts_with("```") {
            if inside {
                return Ok(SourceText(body.join("\n")));
            }
            inside = true;
            continue;
        }
        if inside {
            body.push(line);
        }
    }
    if inside {
        return Ok(SourceText(body.join("\n")));
    }
    Err(Error::NoFencedBlock)
}

/// Count fenced blocks in a text (used to flag multi-block responses).
pub fn fenced_block_count(text: &SourceText) -> usize {
    let mut count = 0;
    let mut inside = false;
    for line in text.as_str().lines() {
        if line.trim_start().starts_with("```") {
            if inside {
                inside = false;
            } else {
                inside = true;
                count += 1;
            }
        }
    }
    count
}
