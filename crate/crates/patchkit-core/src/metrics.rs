//! Minimal-edit patch metrics: character Levenshtein / AED, CCR, ATCL/ATCT,
//! the unbiased pass@k estimator, and per-task candidate selection.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::align;
use crate::curriculum;
use crate::error::{Error, Result};
use crate::normalize::NormalizedText;

/// Unit-cost insert/delete/substitute edit distance over characters.
pub fn char_levenshtein(a: &str, b: &str) -> u64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len() as u64;
    }
    let mut prev: Vec<u64> = (0..=b.len() as u64).collect();
    let mut curr = vec![0u64; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i as u64 + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + u64::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Mean character edit distance over normalized (buggy, patch) pairs.
pub fn aed(pairs: &[(NormalizedText, NormalizedText)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyMetricInput);
    }
    let total: u64 = pairs
        .iter()
        .map(|(b, p)| char_levenshtein(&b.flat(), &p.flat()))
        .sum();
    Ok(total as f64 / pairs.len() as f64)
}

/// Fraction of patch lines that appear verbatim among the buggy lines.
/// Membership is against the set of buggy lines; each patch occurrence
/// counts. Undefined for an empty patch.
pub fn ccr_instance(buggy: &NormalizedText, patch: &NormalizedText) -> Result<f64> {
    if patch.lines().is_empty() {
        return Err(Error::EmptyPatch);
    }
    let buggy_lines: HashSet<&String> = buggy.lines().iter().collect();
    let hits = patch.lines().iter().filter(|l| buggy_lines.contains(l)).count();
    Ok(hits as f64 / patch.lines().len() as f64)
}

/// Total changed (added + deleted) lines and lexical tokens of the
/// normalized diff between buggy code and patch.
pub fn atcl_atct(buggy: &NormalizedText, patch: &NormalizedText) -> (u64, u64) {
    let lines = curriculum::line_diff(buggy, patch).dl;
    let buggy_tokens = align::lexical_split(&buggy.flat());
    let patch_tokens = align::lexical_split(&patch.flat());
    let tokens = curriculum::diff_counts(&buggy_tokens, &patch_tokens).dl;
    (lines, tokens)
}

/// Inputs of the unbiased pass@k estimator for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassAtKInput {
    /// Total samples drawn for the task.
    pub n: u64,
    /// Plausible samples among them.
    pub c: u64,
    /// Selection cutoff.
    pub k: u64,
}

/// 1 - C(n-c, k) / C(n, k), computed multiplicatively to stay in f64 range.
pub fn pass_at_k(input: PassAtKInput) -> Result<f64> {
    let PassAtKInput { n, c, k } = input;
    if c > n || k < 1 || k > n {
        return Err(Error::InvalidArgument(format!(
            "pass@k requires 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0_f64;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

/// Per-candidate evaluation record for one plausible (or not) patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEvaluation {
    pub task_id: String,
    pub candidate_id: String,
    /// External verdict: compiles and passes the test suite.
    pub plausible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changed_lines: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changed_tokens: Option<u64>,
}

impl PatchEvaluation {
    pub fn non_plausible(task_id: impl Into<String>, candidate_id: impl Into<String>) -> Self {
        PatchEvaluation {
            task_id: task_id.into(),
            candidate_id: candidate_id.into(),
            plausible: false,
            aed: None,
            ccr: None,
            changed_lines: None,
            changed_tokens: None,
        }
    }

    /// Score one plausible candidate against its buggy source.
    pub fn plausible_from(
        task_id: impl Into<String>,
        candidate_id: impl Into<String>,
        buggy: &NormalizedText,
        patch: &NormalizedText,
    ) -> Result<Self> {
        let aed = char_levenshtein(&buggy.flat(), &patch.flat());
        let ccr = ccr_instance(buggy, patch)?;
        let (changed_lines, changed_tokens) = atcl_atct(buggy, patch);
        Ok(PatchEvaluation {
            task_id: task_id.into(),
            candidate_id: candidate_id.into(),
            plausible: true,
            aed: Some(aed),
            ccr: Some(ccr),
            changed_lines: Some(changed_lines),
            changed_tokens: Some(changed_tokens),
        })
    }
}

/// Candidate ids achieving the minimum AED and the maximum CCR for one task.
/// Ties break toward the lowest candidate id.
pub fn select_extreme(candidates: &[PatchEvaluation]) -> Result<(String, String)> {
    let plausible: Vec<&PatchEvaluation> = candidates.iter().filter(|c| c.plausible).collect();
    if plausible.is_empty() {
        return Err(Error::EmptyMetricInput);
    }
    let min_aed = plausible
        .iter()
        .filter(|c| c.aed.is_some())
        .min_by(|x, y| {
            x.aed
                .cmp(&y.aed)
                .then_with(|| x.candidate_id.cmp(&y.candidate_id))
        })
        .ok_or(Error::EmptyMetricInput)?;
    let max_ccr = plausible
        .iter()
        .filter(|c| c.ccr.is_some())
        .max_by(|x, y| {
            x.ccr
                .partial_cmp(&y.ccr)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| y.candidate_id.cmp(&x.candidate_id))
        })
        .ok_or(Error::EmptyMetricInput)?;
    Ok((min_aed.candidate_id.clone(), max_ccr.candidate_id.clone()))
}

/// Lower-middle element of the sorted sample for even counts.
fn median_u64(values: &mut Vec<u64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    Some(values[(values.len() - 1) / 2] as f64)
}

fn median_f64(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(values[(values.len() - 1) / 2])
}

fn mean_u64(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<u64>() as f64 / values.len() as f64)
    }
}

fn mean_f64(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Aggregate metrics over a candidate pool. Edit metrics are present only
/// when at least one plausible candidate exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: usize,
    pub tasks_with_plausible: usize,
    pub plausible_candidates: usize,
    pub pass_at: Vec<(u64, f64)>,
    pub aed_avg: Option<f64>,
    pub aed_median: Option<f64>,
    /// Mean over tasks of the per-task minimum AED.
    pub aed_min_at_k: Option<f64>,
    pub ccr_avg: Option<f64>,
    pub ccr_median: Option<f64>,
    /// Mean over tasks of the per-task maximum CCR.
    pub ccr_max_at_k: Option<f64>,
    pub atcl: Option<f64>,
    pub atct: Option<f64>,
    /// Tasks whose plausible candidates all had empty patches (CCR undefined).
    pub excluded_empty_patches: usize,
}

/// Build the aggregate report: pass@{1,5,10} over all tasks and edit metrics
/// over plausible candidates (per-task extremes averaged over tasks with at
/// least one plausible candidate).
pub fn aggregate_report(evals: &[PatchEvaluation], samples_per_task: u64) -> Result<MetricsReport> {
    // stable grouping by task in first-seen order
    let mut task_order: Vec<&str> = Vec::new();
    for e in evals {
        if !task_order.contains(&e.task_id.as_str()) {
            task_order.push(&e.task_id);
        }
    }

    let mut aed_values = Vec::new();
    let mut ccr_values = Vec::new();
    let mut atcl_values = Vec::new();
    let mut atct_values = Vec::new();
    let mut per_task_min_aed = Vec::new();
    let mut per_task_max_ccr = Vec::new();
    let mut plausible_counts = Vec::new();
    let mut tasks_with_plausible = 0usize;
    let mut plausible_candidates = 0usize;

    for task in &task_order {
        let cands: Vec<&PatchEvaluation> =
            evals.iter().filter(|e| e.task_id == *task).collect();
        let c = cands.iter().filter(|e| e.plausible).count() as u64;
        plausible_counts.push(c);
        if c > 0 {
            tasks_with_plausible += 1;
        }
        let mut task_aeds = Vec::new();
        let mut task_ccrs = Vec::new();
        for cand in cands.iter().filter(|e| e.plausible) {
            plausible_candidates += 1;
            if let Some(a) = cand.aed {
                aed_values.push(a);
                task_aeds.push(a);
            }
            if let Some(r) = cand.ccr {
                ccr_values.push(r);
                task_ccrs.push(r);
            }
            if let Some(l) = cand.changed_lines {
                atcl_values.push(l);
            }
            if let Some(t) = cand.changed_tokens {
                atct_values.push(t);
            }
        }
        if let Some(&min) = task_aeds.iter().min() {
            per_task_min_aed.push(min);
        }
        if let Some(max) = task_ccrs.iter().cloned().reduce(f64::max) {
            per_task_max_ccr.push(max);
        }
    }

    let mut pass_at = Vec::new();
    for k in [1u64, 5, 10] {
        if k > samples_per_task {
            continue;
        }
        let mut sum = 0.0;
        for &c in &plausible_counts {
            sum += pass_at_k(PassAtKInput { n: samples_per_task, c, k })?;
        }
        let mean = if plausible_counts.is_empty() { 0.0 } else { sum / plausible_counts.len() as f64 };
        pass_at.push((k, mean));
    }

    let excluded_empty_patches = evals
        .iter()
        .filter(|e| e.plausible && e.ccr.is_none())
        .count();

    Ok(MetricsReport {
        tasks: task_order.len(),
        tasks_with_plausible,
        plausible_candidates,
        pass_at,
        aed_avg: mean_u64(&aed_values),
        aed_median: median_u64(&mut aed_values),
        aed_min_at_k: mean_u64(&per_task_min_aed),
        ccr_avg: mean_f64(&ccr_values),
        ccr_median: median_f64(&mut ccr_values),
        ccr_max_at_k: mean_f64(&per_task_max_ccr),
        atcl: mean_u64(&atcl_values),
        atct: mean_u64(&atct_values),
        excluded_empty_patches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::{normalize, SourceText};

    fn nt(s: &str) -> NormalizedText {
        normalize(&SourceText::from(s))
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(char_levenshtein("abc", "abc"), 0);
        assert_eq!(char_levenshtein("break", "continue"), 8);
        assert_eq!(char_levenshtein("", "abc"), 3);
        assert_eq!(char_levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn aed_examples() {
        let pairs = vec![(nt("a"), nt("a"))];
        assert_eq!(aed(&pairs).unwrap(), 0.0);
        let pairs = vec![(nt("break"), nt("continue")), (nt("ab"), nt("ab"))];
        assert_eq!(aed(&pairs).unwrap(), 4.0);
        assert!(aed(&[]).is_err());
    }

    #[test]
    fn ccr_examples() {
        let b = nt("a\nb\nc");
        assert_eq!(ccr_instance(&b, &b).unwrap(), 1.0);
        assert_eq!(ccr_instance(&b, &nt("a\nb\nd\nc")).unwrap(), 0.75);
        assert_eq!(ccr_instance(&b, &nt("x\ny")).unwrap(), 0.0);
        assert!(matches!(ccr_instance(&b, &nt("")), Err(Error::EmptyPatch)));
    }

    #[test]
    fn ccr_duplicate_patch_lines_each_count() {
        let b = nt("a\nz");
        assert_eq!(ccr_instance(&b, &nt("a\na\nq\nq")).unwrap(), 0.5);
    }

    #[test]
    fn atcl_atct_examples() {
        let b = nt("x=1;");
        assert_eq!(atcl_atct(&b, &b), (0, 0));
        // one line replaced: 2 changed lines, 2 changed tokens (1 -> 2)
        assert_eq!(atcl_atct(&b, &nt("x=2;")), (2, 2));
        // added one new 3-token line
        assert_eq!(atcl_atct(&nt("a();"), &nt("a();\nint q;")), (1, 3));
    }

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(PassAtKInput { n: 10, c: 10, k: 1 }).unwrap(), 1.0);
        assert!((pass_at_k(PassAtKInput { n: 10, c: 1, k: 1 }).unwrap() - 0.1).abs() < 1e-12);
        let v = pass_at_k(PassAtKInput { n: 10, c: 3, k: 5 }).unwrap();
        assert!((v - (1.0 - 21.0 / 252.0)).abs() < 1e-12);
        assert!(pass_at_k(PassAtKInput { n: 10, c: 11, k: 1 }).is_err());
        assert!(pass_at_k(PassAtKInput { n: 10, c: 0, k: 0 }).is_err());
    }

    #[test]
    fn select_extreme_examples() {
        let mk = |id: &str, aed: u64, ccr: f64| PatchEvaluation {
            task_id: "t".into(),
            candidate_id: id.into(),
            plausible: true,
            aed: Some(aed),
            ccr: Some(ccr),
            changed_lines: None,
            changed_tokens: None,
        };
        let cands = vec![mk("c0", 90, 0.5), mk("c1", 42, 0.9), mk("c2", 77, 0.9)];
        let (min_aed, max_ccr) = select_extreme(&cands).unwrap();
        assert_eq!(min_aed, "c1");
        assert_eq!(max_ccr, "c1"); // tie on CCR broken by lowest id

        let single = vec![mk("only", 5, 0.2)];
        assert_eq!(select_extreme(&single).unwrap(), ("only".into(), "only".into()));

        let none = vec![PatchEvaluation::non_plausible("t", "c")];
        assert!(select_extreme(&none).is_err());
    }

    #[test]
    fn aggregate_no_plausible() {
        let evals = vec![
            PatchEvaluation::non_plausible("t1", "c1"),
            PatchEvaluation::non_plausible("t2", "c1"),
        ];
        let report = aggregate_report(&evals, 10).unwrap();
        assert_eq!(report.pass_at, vec![(1, 0.0), (5, 0.0), (10, 0.0)]);
        assert!(report.aed_avg.is_none());
        assert!(report.ccr_avg.is_none());
    }

    #[test]
    fn aggregate_median_lower_middle() {
        let mk = |task: &str, aed: u64| PatchEvaluation {
            task_id: task.into(),
            candidate_id: "c".into(),
            plausible: true,
            aed: Some(aed),
            ccr: Some(1.0),
            changed_lines: Some(0),
            changed_tokens: Some(0),
        };
        let report = aggregate_report(&[mk("t1", 42), mk("t2", 80)], 1).unwrap();
        assert_eq!(report.aed_median, Some(42.0));
        assert_eq!(report.aed_avg, Some(61.0));
    }

    #[test]
    fn aggregate_constant_distribution() {
        let mk = |task: &str| PatchEvaluation {
            task_id: task.into(),
            candidate_id: "c".into(),
            plausible: true,
            aed: Some(7),
            ccr: Some(0.5),
            changed_lines: Some(2),
            changed_tokens: Some(4),
        };
        let report = aggregate_report(&[mk("a"), mk("b"), mk("c")], 1).unwrap();
        assert_eq!(report.aed_avg, Some(7.0));
        assert_eq!(report.aed_median, Some(7.0));
        assert_eq!(report.aed_min_at_k, Some(7.0));
    }

    #[test]
    fn aed_zero_implies_ccr_one() {
        let b = nt("int x = 1;\nreturn x;");
        let p = nt("int x = 1; // same\nreturn x;");
        assert_eq!(char_levenshtein(&b.flat(), &p.flat()), 0);
        assert_eq!(ccr_instance(&b, &p).unwrap(), 1.0);
    }
}
