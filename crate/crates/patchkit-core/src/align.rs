//! Deterministic token alignment between buggy and fixed code: recursive
//! longest-common-block matching, the copy-worthy position set over the fixed
//! sequence, and its mapping into absolute response positions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::{self, SourceText, BOF_MARKER, EOF_MARKER};

/// Ordered sequence of non-negative token identifiers.
pub type TokenSeq = Vec<u32>;

/// A length-`n` span starting at `i` in the first sequence that equals the
/// span starting at `j` in the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingBlock {
    pub i: usize,
    pub j: usize,
    pub n: usize,
}

/// Matching blocks between buggy and fixed token sequences plus the union of
/// their j-ranges: the fixed-sequence positions considered copy-worthy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreservationMask {
    pub blocks: Vec<MatchingBlock>,
    pub aligned_fixed_positions: Vec<usize>,
}

/// Half-open index interval inside a serialized sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, idx: usize) -> bool {
        idx >= self.start && idx < self.end
    }
}

/// Copy-worthy positions mapped to absolute indices inside the full sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedResponse {
    pub response_span: Span,
    pub aligned_absolute: Vec<usize>,
}

/// Longest contiguous common block in `a[alo..ahi]` x `b[blo..bhi]`.
///
/// Among equal-length maxima the block with the smallest `i`, then the
/// smallest `j`, wins. No junk or popularity heuristics.
fn longest_match(
    a: &[u32],
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
    b_index: &HashMap<u32, Vec<usize>>,
) -> MatchingBlock {
    let mut best = MatchingBlock { i: alo, j: blo, n: 0 };
    // run-length ending at (i, j), keyed by j
    let mut j2len: HashMap<usize, usize> = HashMap::new();
    for i in alo..ahi {
        let mut new_j2len: HashMap<usize, usize> = HashMap::new();
        if let Some(positions) = b_index.get(&a[i]) {
            for &j in positions {
                if j < blo {
                    continue;
                }
                if j >= bhi {
                    break;
                }
                let k = if j > 0 { j2len.get(&(j - 1)).copied().unwrap_or(0) + 1 } else { 1 };
                new_j2len.insert(j, k);
                if k > best.n {
                    best = MatchingBlock { i: i + 1 - k, j: j + 1 - k, n: k };
                }
            }
        }
        j2len = new_j2len;
    }
    best
}

/// Recursive longest-common-block matching: find the longest contiguous
/// common span, then handle the left and right remainders. Implemented with
/// an explicit work queue so file-sized inputs cannot blow the stack.
/// Returned blocks are sorted by `i`.
pub fn matching_blocks(a: &[u32], b: &[u32]) -> Vec<MatchingBlock> {
    let mut b_index: HashMap<u32, Vec<usize>> = HashMap::new();
    for (j, &tok) in b.iter().enumerate() {
        b_index.entry(tok).or_default().push(j);
    }

    let mut queue = vec![(0usize, a.len(), 0usize, b.len())];
    let mut blocks = Vec::new();
    while let Some((alo, ahi, blo, bhi)) = queue.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let m = longest_match(a, alo, ahi, blo, bhi, &b_index);
        if m.n == 0 {
            continue;
        }
        blocks.push(m);
        queue.push((alo, m.i, blo, m.j));
        queue.push((m.i + m.n, ahi, m.j + m.n, bhi));
    }
    blocks.sort_by_key(|blk| blk.i);
    blocks
}

/// Matching blocks plus the union of matched positions in the fixed sequence.
pub fn preservation_mask(buggy: &[u32], fixed: &[u32]) -> PreservationMask {
    let blocks = matching_blocks(buggy, fixed);
    let mut aligned: Vec<usize> = blocks
        .iter()
        .flat_map(|blk| blk.j..blk.j + blk.n)
        .collect();
    // Blocks never overlap in j, but union semantics are kept in case callers
    // compose masks from multiple sources.
    aligned.sort_unstable();
    aligned.dedup();
    PreservationMask { blocks, aligned_fixed_positions: aligned }
}

/// Map fixed-sequence positions into absolute indices of the response span.
pub fn map_to_response(mask: &PreservationMask, response_span: Span) -> Result<AlignedResponse> {
    let span_len = response_span.len();
    if let Some(&max_pos) = mask.aligned_fixed_positions.last() {
        if max_pos >= span_len {
            return Err(Error::SpanTooShort { position: max_pos, span_len });
        }
    }
    let aligned_absolute = mask
        .aligned_fixed_positions
        .iter()
        .map(|&j| response_span.start + j)
        .collect();
    Ok(AlignedResponse { response_span, aligned_absolute })
}

/// Result of stripping prompt wrappers and fences down to the code payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrippedCode {
    pub code: SourceText,
    /// No markers or fences were found; the whole input was returned.
    pub used_fallback: bool,
    /// The input held more than one fenced block; only the first was used.
    pub extra_blocks: usize,
}

/// Strip `<BOF>`/`<EOF>` markers, role tags, and fenced-block delimiters,
/// keeping only the code payload. Falls back to the whole input (with a
/// warning flag) when no markers are present.
pub fn strip_to_code(serialized: &SourceText) -> StrippedCode {
    let text = serialized.as_str();
    let lines: Vec<&str> = text.lines().collect();
    let bof = lines.iter().position(|l| l.trim() == BOF_MARKER);
    let eof = lines.iter().position(|l| l.trim() == EOF_MARKER);

    let payload = match (bof, eof) {
        (Some(b), Some(e)) if b < e => Some(lines[b + 1..e].join("\n")),
        _ => None,
    };

    let candidate = payload.unwrap_or_else(|| text.to_string());
    let candidate_text = SourceText(candidate);
    let block_count = normalize::fenced_block_count(&candidate_text);
    match normalize::extract_patch(&candidate_text) {
        Ok(code) => StrippedCode {
            code,
            used_fallback: false,
            extra_blocks: block_count.saturating_sub(1),
        },
        Err(_) => {
            let used_fallback = bof.is_none() || eof.is_none();
            if used_fallback {
                log::warn!("strip_to_code: no markers or fences found, using whole input");
            }
            StrippedCode { code: candidate_text, used_fallback, extra_blocks: 0 }
        }
    }
}

/// Byte-level reference tokenizer: token id = byte value (vocabulary 256).
pub fn byte_tokens(text: &str) -> TokenSeq {
    text.bytes().map(u32::from).collect()
}

/// Splits text into lexical tokens: identifier/number runs, string and char
/// literals, single punctuation characters. Whitespace separates.
pub fn lexical_split(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$')
            {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c == '"' || c == '\'' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            if i < chars.len() {
                i += 1;
            }
            tokens.push(chars[start..i.min(chars.len())].iter().collect());
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

/// Maps lexical token strings to dense integer ids in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct Interner {
    ids: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.ids.len() as u32;
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn encode(&mut self, tokens: &[String]) -> TokenSeq {
        tokens.iter().map(|t| self.intern(t)).collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.ids.len()
    }
}
