//! Inter-annotator and metric-vs-human agreement statistics: Fleiss' kappa,
//! Cohen's kappa, Macro-F1, and the conflict-subset construction used to
//! stress metric/size disagreements.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categorical label; the binary patch-preference protocol uses two of them
/// but the statistics accept any finite category set.
pub type Label = String;

/// Item x rater categorical labels with no missing cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMatrix {
    /// labels[item][rater]
    pub labels: Vec<Vec<Label>>,
}

impl AnnotationMatrix {
    pub fn new(labels: Vec<Vec<Label>>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidArgument("Fleiss' kappa needs >= 2 items".into()));
        }
        let raters = labels[0].len();
        if raters < 2 {
            return Err(Error::InvalidArgument("Fleiss' kappa needs >= 2 raters".into()));
        }
        if labels.iter().any(|row| row.len() != raters) {
            return Err(Error::InvalidArgument("every rater must label every item".into()));
        }
        Ok(AnnotationMatrix { labels })
    }

    pub fn items(&self) -> usize {
        self.labels.len()
    }

    pub fn raters(&self) -> usize {
        self.labels[0].len()
    }

    fn categories(&self) -> BTreeSet<&Label> {
        self.labels.iter().flatten().collect()
    }
}

/// Fleiss' kappa: mean per-item pairwise agreement corrected by squared
/// category marginals.
pub fn fleiss_kappa(matrix: &AnnotationMatrix) -> Result<f64> {
    let categories: Vec<&Label> = matrix.categories().into_iter().collect();
    if categories.len() < 2 {
        return Err(Error::UndefinedStatistic(
            "all labels fall in one category; chance agreement is 1".into(),
        ));
    }
    let n_items = matrix.items() as f64;
    let n_raters = matrix.raters() as f64;

    let mut category_totals = vec![0.0; categories.len()];
    let mut p_bar = 0.0;
    for row in &matrix.labels {
        let mut item_agreement = 0.0;
        for (k, cat) in categories.iter().enumerate() {
            let count = row.iter().filter(|l| *l == *cat).count() as f64;
            category_totals[k] += count;
            item_agreement += count * (count - 1.0);
        }
        p_bar += item_agreement / (n_raters * (n_raters - 1.0));
    }
    p_bar /= n_items;

    let total = n_items * n_raters;
    let p_e: f64 = category_totals.iter().map(|&t| (t / total).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::UndefinedStatistic("expected agreement is 1".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Cohen's kappa between two label vectors, chance from the product of
/// marginals.
pub fn cohen_kappa(a: &[Label], b: &[Label]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(
            "Cohen's kappa needs two equal-length non-empty vectors".into(),
        ));
    }
    let n = a.len() as f64;
    let categories: BTreeSet<&Label> = a.iter().chain(b.iter()).collect();
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut p_e = 0.0;
    for cat in categories {
        let pa = a.iter().filter(|l| *l == cat).count() as f64 / n;
        let pb = b.iter().filter(|l| *l == cat).count() as f64 / n;
        p_e += pa * pb;
    }
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::UndefinedStatistic("expected agreement is 1".into()));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Unweighted mean of per-category F1 over categories present in the truth
/// vector. A category the prediction never emits scores F1 = 0.
pub fn macro_f1(pred: &[Label], truth: &[Label]) -> Result<f64> {
    if truth.is_empty() || pred.len() != truth.len() {
        return Err(Error::InvalidArgument(
            "macro F1 needs two equal-length non-empty vectors".into(),
        ));
    }
    let categories: BTreeSet<&Label> = truth.iter().collect();
    let mut sum = 0.0;
    for cat in &categories {
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| p == cat && t == cat)
            .count() as f64;
        let pred_pos = pred.iter().filter(|p| p == cat).count() as f64;
        let truth_pos = truth.iter().filter(|t| t == cat).count() as f64;
        if pred_pos == 0.0 || tp == 0.0 {
            continue; // F1 = 0 for this category
        }
        let precision = tp / pred_pos;
        let recall = tp / truth_pos;
        sum += 2.0 * precision * recall / (precision + recall);
    }
    Ok(sum / categories.len() as f64)
}

/// Which of the two candidate patches a metric prefers on one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    First,
    Second,
}

/// Metric-induced preferences over an item universe. Items where the metric
/// ties are excluded and counted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricRanking {
    pub preferences: BTreeMap<String, Preference>,
    pub tie_count: usize,
}

impl MetricRanking {
    /// Build from per-item (first, second) metric values. `lower_is_better`
    /// holds for AED/ATCL/ATCT; CCR prefers higher values.
    pub fn from_values<I>(values: I, lower_is_better: bool) -> Self
    where
        I: IntoIterator<Item = (String, f64, f64)>,
    {
        let mut preferences = BTreeMap::new();
        let mut tie_count = 0;
        for (item, first, second) in values {
            if first == second {
                tie_count += 1;
                continue;
            }
            let first_wins = (first < second) == lower_is_better;
            preferences.insert(item, if first_wins { Preference::First } else { Preference::Second });
        }
        MetricRanking { preferences, tie_count }
    }
}

/// Items where the target metric's preferred patch differs from at least one
/// of the size indicators (ATCL/ATCT). Only items where both the target and
/// the indicator are defined can conflict.
pub fn conflict_subset(target: &MetricRanking, size_indicators: &[&MetricRanking]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (item, pref) in &target.preferences {
        let conflicts = size_indicators.iter().any(|ind| {
            ind.preferences
                .get(item)
                .is_some_and(|other| other != pref)
        });
        if conflicts {
            out.insert(item.clone());
        }
    }
    out
}
