//! Line-diff edit-difficulty proxy, stable ascending training order, and
//! stage summaries.

use serde::{Deserialize, Serialize};

use crate::normalize::NormalizedText;

/// Added/deleted line counts of the buggy -> fixed diff and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffStats {
    pub added_lines: u64,
    pub deleted_lines: u64,
    pub dl: u64,
}

/// LCS length over two slices of comparable items.
fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for item_a in a {
        for (j, item_b) in b.iter().enumerate() {
            curr[j + 1] = if item_a == item_b {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Count added and deleted lines of a standard LCS-based unified diff over
/// normalized lines. Context lines, headers, and hunk markers do not count.
pub fn line_diff(buggy: &NormalizedText, fixed: &NormalizedText) -> DiffStats {
    diff_counts(buggy.lines(), fixed.lines())
}

/// Added/deleted counts for arbitrary comparable sequences (shared by the
/// line- and token-granularity change metrics).
pub fn diff_counts<T: PartialEq>(a: &[T], b: &[T]) -> DiffStats {
    let common = lcs_len(a, b);
    let deleted_lines = (a.len() - common) as u64;
    let added_lines = (b.len() - common) as u64;
    DiffStats { added_lines, deleted_lines, dl: added_lines + deleted_lines }
}

/// Stable ascending sort by dl: returns the permutation of indices; ties
/// keep their original order.
pub fn curriculum_order(dls: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dls.len()).collect();
    order.sort_by_key(|&idx| dls[idx]);
    order
}

const STAGE_RANGES: [(u64, Option<u64>); 3] = [(1, Some(5)), (6, Some(17)), (18, None)];

/// One difficulty bucket of the stage summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBucket {
    pub range_low: u64,
    /// Inclusive upper bound; open-ended for the last stage.
    pub range_high: Option<u64>,
    pub count: usize,
    pub ratio_percent: f64,
    pub mean_dl: f64,
}

/// Per-stage counts/ratios/means with boundaries 1-5, 6-17, >= 18.
/// Instances with dl = 0 carry no edit signal and are reported separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stages: Vec<StageBucket>,
    pub zero_dl_count: usize,
    pub total: usize,
}

pub fn stage_summary(dls: &[u64]) -> StageSummary {
    let mut counts = [0usize; 3];
    let mut sums = [0u64; 3];
    let mut zero_dl_count = 0usize;
    for &dl in dls {
        if dl == 0 {
            zero_dl_count += 1;
            continue;
        }
        let stage = STAGE_RANGES
            .iter()
            .position(|&(low, high)| dl >= low && high.map_or(true, |h| dl <= h))
            .expect("stages cover all dl >= 1");
        counts[stage] += 1;
        sums[stage] += dl;
    }
    let staged_total: usize = counts.iter().sum();
    let stages = STAGE_RANGES
        .iter()
        .enumerate()
        .map(|(k, &(low, high))| StageBucket {
            range_low: low,
            range_high: high,
            count: counts[k],
            ratio_percent: if staged_total > 0 {
                100.0 * counts[k] as f64 / staged_total as f64
            } else {
                0.0
            },
            mean_dl: if counts[k] > 0 { sums[k] as f64 / counts[k] as f64 } else { 0.0 },
        })
        .collect();
    StageSummary { stages, zero_dl_count, total: dls.len() }
}
