//! Batch stages behind the subcommands: dataset preparation, curriculum
//! reporting, the desk-scale training sweep, patch evaluation, agreement
//! statistics, and contamination checks. Every stage is deterministic: fan-out
//! is per record and merges happen in input order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use patchkit_core::agreement::{
    cohen_kappa, conflict_subset, fleiss_kappa, macro_f1, AnnotationMatrix, Label, MetricRanking,
    Preference,
};
use patchkit_core::align::{
    byte_tokens, lexical_split, map_to_response, preservation_mask, strip_to_code, Interner,
};
use patchkit_core::curriculum::{curriculum_order, line_diff, stage_summary, StageSummary};
use patchkit_core::demo::generate_copy_edit_corpus;
use patchkit_core::integrity::{contamination_report, digest, SnippetDigest};
use patchkit_core::metrics::{
    aggregate_report, atcl_atct, char_levenshtein, ccr_instance, select_extreme, MetricsReport,
    PatchEvaluation,
};
use patchkit_core::normalize::{extract_patch, normalize};
use patchkit_core::objective::{corpus_loss, nll_of, position_mean_nll, train, TrainConfig};
use patchkit_core::{MaskingMode, SourceText, Span, WeightedSequence};

use crate::formats::{
    read_jsonl, AnnotationRecord, BuggySourceRecord, CandidateRecord, CorpusRecord,
    MetricTableRecord, PlausibilityRecord, Provenance, SnippetRecord, WeightedRecord,
};

/// Which reference tokenizer turns code into token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    /// Token id = byte value; vocabulary 256.
    Byte,
    /// Identifier/literal/punctuation tokens interned per record.
    Lexical,
}

/// Resolved preparation configuration; embedded verbatim in output headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tokenizer: TokenizerKind,
    pub w_align: f64,
    pub masking_mode: MaskingMode,
    pub curriculum_enabled: bool,
    pub seed: u64,
    /// Execution detail, not semantics: outputs are identical for any worker
    /// count, so it stays out of the provenance header.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tokenizer: TokenizerKind::Byte,
            w_align: 2.0,
            masking_mode: MaskingMode::AssistantOnly,
            curriculum_enabled: true,
            seed: 0,
            workers: 1,
        }
    }
}

/// Optional config file: any subset of the fields; flags override.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct PartialConfig {
    pub tokenizer: Option<TokenizerKind>,
    pub w_align: Option<f64>,
    pub masking_mode: Option<MaskingMode>,
    pub curriculum_enabled: Option<bool>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl PipelineConfig {
    pub fn resolve(file: PartialConfig, flags: PartialConfig) -> Self {
        let defaults = PipelineConfig::default();
        PipelineConfig {
            tokenizer: flags.tokenizer.or(file.tokenizer).unwrap_or(defaults.tokenizer),
            w_align: flags.w_align.or(file.w_align).unwrap_or(defaults.w_align),
            masking_mode: flags
                .masking_mode
                .or(file.masking_mode)
                .unwrap_or(defaults.masking_mode),
            curriculum_enabled: flags
                .curriculum_enabled
                .or(file.curriculum_enabled)
                .unwrap_or(defaults.curriculum_enabled),
            seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
            workers: flags.workers.or(file.workers).unwrap_or(defaults.workers),
        }
    }
}

/// Run `f` on a rayon pool sized by `workers` (0 = rayon default).
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder.build().context("building worker pool")?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordError {
    pub id: String,
    pub error: String,
}

/// Preparation outcome counts plus the per-record flags and failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareReport {
    pub provenance: Provenance,
    pub parsed: usize,
    pub failed: usize,
    /// Records whose fixed code equals the buggy code line for line.
    pub zero_dl: Vec<String>,
    /// Records whose response held more than one fenced block.
    pub extra_fenced_blocks: Vec<String>,
    /// Records whose instruction had no markers or fences; the whole
    /// instruction was treated as the buggy code.
    pub fallback_buggy_extraction: Vec<String>,
    pub errors: Vec<RecordError>,
}

struct PreparedRecord {
    record: WeightedRecord,
    zero_dl: bool,
    extra_blocks: bool,
    fallback_buggy: bool,
}

fn tokenize_segments(kind: TokenizerKind, segments: &[&str]) -> Vec<Vec<u32>> {
    match kind {
        TokenizerKind::Byte => segments.iter().map(|s| byte_tokens(s)).collect(),
        TokenizerKind::Lexical => {
            let mut interner = Interner::new();
            segments
                .iter()
                .map(|s| interner.encode(&lexical_split(s)))
                .collect()
        }
    }
}

fn prepare_one(record: &CorpusRecord, cfg: &PipelineConfig) -> Result<PreparedRecord> {
    if record.instruction.is_empty() || record.response.is_empty() {
        bail!("instruction and response must be non-empty");
    }
    let instruction = SourceText::new(record.instruction.clone());
    let buggy = strip_to_code(&instruction);
    let fixed = extract_patch(&SourceText::new(record.response.clone()))
        .map_err(|e| anyhow!("response: {e}"))?;
    let extra_blocks =
        patchkit_core::normalize::fenced_block_count(&SourceText::new(record.response.clone())) > 1;

    // Full serialized sequence: the instruction, an assistant fence, the
    // fixed code, and the closing fence. The response span covers exactly
    // the fixed-code tokens.
    let prompt_segment = format!("{}\n```java\n", record.instruction);
    let tail_segment = "\n```\n";
    let segments = [
        prompt_segment.as_str(),
        fixed.as_str(),
        tail_segment,
        buggy.code.as_str(),
    ];
    let [prompt_tokens, fixed_tokens, tail_tokens, buggy_tokens] =
        <[Vec<u32>; 4]>::try_from(tokenize_segments(cfg.tokenizer, &segments))
            .expect("four segments in, four token vectors out");

    let span = Span::new(prompt_tokens.len(), prompt_tokens.len() + fixed_tokens.len());
    let mask = preservation_mask(&buggy_tokens, &fixed_tokens);
    let aligned = map_to_response(&mask, span)?;

    let dl = line_diff(&normalize(&buggy.code), &normalize(&fixed)).dl;

    let mut token_ids = prompt_tokens;
    token_ids.extend(fixed_tokens);
    token_ids.extend(tail_tokens);
    let seq = WeightedSequence::build(
        token_ids,
        span,
        aligned.aligned_absolute,
        cfg.masking_mode,
        cfg.w_align,
        dl,
    )?;
    Ok(PreparedRecord {
        record: WeightedRecord::from_sequence(record.id.clone(), &seq),
        zero_dl: dl == 0,
        extra_blocks,
        fallback_buggy: buggy.used_fallback,
    })
}

/// Turn a triplet corpus into weighted sequences. Malformed records become
/// report entries; the batch never aborts. Output order follows input order
/// regardless of worker count.
pub fn prepare(
    corpus_path: &Path,
    cfg: &PipelineConfig,
) -> Result<(Vec<WeightedRecord>, PrepareReport)> {
    let raw = std::fs::read_to_string(corpus_path)
        .with_context(|| format!("reading {}", corpus_path.display()))?;
    let lines: Vec<(usize, &str)> = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();

    let outcomes: Vec<(String, Result<PreparedRecord>)> = with_pool(cfg.workers, || {
        lines
            .par_iter()
            .map(|(lineno, line)| match serde_json::from_str::<CorpusRecord>(line) {
                Ok(record) => {
                    let id = record.id.clone();
                    (id, prepare_one(&record, cfg))
                }
                Err(e) => (format!("line {}", lineno + 1), Err(anyhow!("malformed record: {e}"))),
            })
            .collect()
    })?;

    let provenance = Provenance::new(serde_json::to_value(cfg)?, &[corpus_path])?;
    let mut records = Vec::new();
    let mut report = PrepareReport {
        provenance,
        parsed: 0,
        failed: 0,
        zero_dl: Vec::new(),
        extra_fenced_blocks: Vec::new(),
        fallback_buggy_extraction: Vec::new(),
        errors: Vec::new(),
    };
    for (id, outcome) in outcomes {
        match outcome {
            Ok(prepared) => {
                report.parsed += 1;
                if prepared.zero_dl {
                    report.zero_dl.push(id.clone());
                }
                if prepared.extra_blocks {
                    report.extra_fenced_blocks.push(id.clone());
                }
                if prepared.fallback_buggy {
                    report.fallback_buggy_extraction.push(id);
                }
                records.push(prepared.record);
            }
            Err(e) => {
                report.failed += 1;
                report.errors.push(RecordError { id, error: format!("{e:#}") });
            }
        }
    }
    Ok((records, report))
}

/// Curriculum view of a prepared dataset: the ascending-difficulty order and
/// the stage bucketing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumReport {
    pub provenance: Provenance,
    /// Record ids in training order (ascending dl, stable within ties).
    pub order: Vec<String>,
    pub stage_summary: StageSummary,
    pub zero_dl: Vec<String>,
}

pub fn curriculum_report(dataset_path: &Path, records: &[WeightedRecord]) -> Result<CurriculumReport> {
    let dls: Vec<u64> = records.iter().map(|r| r.dl).collect();
    let order = curriculum_order(&dls)
        .into_iter()
        .map(|idx| records[idx].id.clone())
        .collect();
    let zero_dl = records
        .iter()
        .filter(|r| r.dl == 0)
        .map(|r| r.id.clone())
        .collect();
    Ok(CurriculumReport {
        provenance: Provenance::new(serde_json::json!({}), &[dataset_path])?,
        order,
        stage_summary: stage_summary(&dls),
        zero_dl,
    })
}

/// One row of the weight sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub w_align: f64,
    pub final_loss: f64,
    pub instances_used: usize,
    pub degenerate: usize,
    pub aligned_mean_nll: Option<f64>,
    pub unaligned_mean_nll: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub provenance: Provenance,
    pub vocab_size: usize,
    pub bos: u32,
    pub rows: Vec<SweepRow>,
    pub notes: Vec<String>,
}

/// Source of the sweep dataset: a prepared file or the built-in generator.
pub enum SweepInput<'a> {
    Dataset { path: &'a Path, records: Vec<WeightedRecord> },
    Generated { n: usize, vocab: u32, seed: u64 },
}

/// Train the desk-scale model once per `w_align` value with a shared
/// configuration and report final loss plus the position-class NLL split.
pub fn demo_train(
    input: SweepInput<'_>,
    w_align_values: &[f64],
    base: &TrainConfig,
) -> Result<SweepReport> {
    let (provenance_inputs, mut dataset, vocab_size, bos, config_extra) = match input {
        SweepInput::Dataset { path, records } => {
            let sequences: Vec<WeightedSequence> =
                records.iter().map(WeightedRecord::to_sequence).collect();
            let max_id = sequences
                .iter()
                .flat_map(|s| s.token_ids.iter())
                .copied()
                .max()
                .ok_or_else(|| anyhow!("dataset is empty"))?;
            // Dedicated start-of-sequence id one past the observed vocabulary.
            let vocab = max_id as usize + 2;
            (vec![path.to_path_buf()], sequences, vocab, max_id + 1, serde_json::json!({"input": "dataset"}))
        }
        SweepInput::Generated { n, vocab, seed } => {
            let sequences = generate_copy_edit_corpus(n, vocab, seed)?;
            (
                Vec::new(),
                sequences,
                vocab as usize,
                0,
                serde_json::json!({"input": "generated", "n": n, "vocab": vocab, "generator_seed": seed}),
            )
        }
    };
    if dataset.is_empty() {
        bail!("dataset is empty");
    }

    let mut notes = Vec::new();
    let mut rows = Vec::new();
    for &w_align in w_align_values {
        let cfg = TrainConfig { w_align, vocab_size, bos, ..base.clone() };
        let model = train(&dataset, &cfg)?;
        // Evaluate under the same weights the run trained with.
        for seq in dataset.iter_mut() {
            *seq = seq.reweighted(w_align, cfg.masking_mode)?;
        }
        let items: Vec<_> = dataset
            .iter()
            .map(|seq| Ok((nll_of(&model, seq, bos)?, seq.clone())))
            .collect::<Result<_>>()?;
        let loss = corpus_loss(&items)?;
        let (aligned_mean, unaligned_mean) = match position_mean_nll(&model, &dataset, bos) {
            Ok(split) => (Some(split.aligned_mean), Some(split.unaligned_mean)),
            Err(e) => {
                notes.push(format!("w_align {w_align}: position split undefined: {e}"));
                (None, None)
            }
        };
        rows.push(SweepRow {
            w_align,
            final_loss: loss.mean,
            instances_used: loss.used,
            degenerate: loss.degenerate,
            aligned_mean_nll: aligned_mean,
            unaligned_mean_nll: unaligned_mean,
        });
    }

    let config = serde_json::json!({
        "sweep": config_extra,
        "w_align_values": w_align_values,
        "masking_mode": base.masking_mode,
        "learning_rate": base.learning_rate,
        "steps": base.steps,
        "seed": base.seed,
        "curriculum_enabled": base.curriculum_enabled,
        "batch_mode": base.batch_mode,
    });
    let paths: Vec<&Path> = provenance_inputs.iter().map(|p| p.as_path()).collect();
    Ok(SweepReport {
        provenance: Provenance::new(config, &paths)?,
        vocab_size,
        bos,
        rows,
        notes,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub candidates: usize,
    pub plausible: usize,
    pub min_aed_candidate: Option<String>,
    pub max_ccr_candidate: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub samples_per_task: u64,
    pub metrics: MetricsReport,
    pub per_task: Vec<TaskSummary>,
    pub candidates: Vec<PatchEvaluation>,
    pub notes: Vec<String>,
}

fn evaluate_candidate(
    cand: &CandidateRecord,
    plausible: bool,
    buggy: &HashMap<String, SourceText>,
) -> Result<(PatchEvaluation, Option<String>)> {
    if !plausible {
        return Ok((PatchEvaluation::non_plausible(&cand.task_id, &cand.candidate_id), None));
    }
    let buggy_text = buggy.get(&cand.task_id).ok_or_else(|| {
        anyhow!(
            "no buggy source for task {} (candidate {})",
            cand.task_id,
            cand.candidate_id
        )
    })?;
    let buggy_norm = normalize(buggy_text);
    let patch_norm = normalize(&strip_to_code(&SourceText::new(cand.output_text.clone())).code);
    if patch_norm.is_empty() {
        // Consistency rate is undefined for an empty patch; the other edit
        // metrics still apply.
        let aed = char_levenshtein(&buggy_norm.flat(), "");
        let (changed_lines, changed_tokens) = atcl_atct(&buggy_norm, &patch_norm);
        let eval = PatchEvaluation {
            task_id: cand.task_id.clone(),
            candidate_id: cand.candidate_id.clone(),
            plausible: true,
            aed: Some(aed),
            ccr: None,
            changed_lines: Some(changed_lines),
            changed_tokens: Some(changed_tokens),
        };
        let note = format!(
            "task {} candidate {}: empty patch, consistency rate excluded",
            cand.task_id, cand.candidate_id
        );
        return Ok((eval, Some(note)));
    }
    let aed = char_levenshtein(&buggy_norm.flat(), &patch_norm.flat());
    let ccr = ccr_instance(&buggy_norm, &patch_norm)?;
    let (changed_lines, changed_tokens) = atcl_atct(&buggy_norm, &patch_norm);
    Ok((
        PatchEvaluation {
            task_id: cand.task_id.clone(),
            candidate_id: cand.candidate_id.clone(),
            plausible: true,
            aed: Some(aed),
            ccr: Some(ccr),
            changed_lines: Some(changed_lines),
            changed_tokens: Some(changed_tokens),
        },
        None,
    ))
}

/// Score every candidate against its buggy source and aggregate. Every
/// candidate must carry an external plausibility verdict.
pub fn run_eval(
    candidates_path: &Path,
    plausibility_path: &Path,
    buggy_path: &Path,
    samples_per_task: Option<u64>,
    workers: usize,
) -> Result<EvalReport> {
    let candidates: Vec<CandidateRecord> = read_jsonl(candidates_path)?;
    let verdicts: Vec<PlausibilityRecord> = read_jsonl(plausibility_path)?;
    let buggy_records: Vec<BuggySourceRecord> = read_jsonl(buggy_path)?;

    let verdict_map: HashMap<(String, String), bool> = verdicts
        .into_iter()
        .map(|v| ((v.task_id, v.candidate_id), v.plausible))
        .collect();
    let buggy: HashMap<String, SourceText> = buggy_records
        .into_iter()
        .map(|b| (b.task_id, SourceText::new(b.buggy)))
        .collect();

    for cand in &candidates {
        if !verdict_map.contains_key(&(cand.task_id.clone(), cand.candidate_id.clone())) {
            bail!(
                "missing plausibility verdict for task {} candidate {}",
                cand.task_id,
                cand.candidate_id
            );
        }
    }

    let outcomes: Vec<Result<(PatchEvaluation, Option<String>)>> = with_pool(workers, || {
        candidates
            .par_iter()
            .map(|cand| {
                let plausible =
                    verdict_map[&(cand.task_id.clone(), cand.candidate_id.clone())];
                evaluate_candidate(cand, plausible, &buggy)
            })
            .collect()
    })?;

    let mut evals = Vec::with_capacity(candidates.len());
    let mut notes = Vec::new();
    for outcome in outcomes {
        let (eval, note) = outcome?;
        evals.push(eval);
        notes.extend(note);
    }

    let mut per_task_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &evals {
        *per_task_counts.entry(e.task_id.as_str()).or_insert(0) += 1;
    }
    let inferred = per_task_counts.values().copied().max().unwrap_or(0) as u64;
    let samples_per_task = samples_per_task.unwrap_or(inferred);
    if samples_per_task == 0 {
        bail!("no candidates to evaluate");
    }

    let metrics = aggregate_report(&evals, samples_per_task)?;

    let mut task_order: Vec<&str> = Vec::new();
    for e in &evals {
        if !task_order.contains(&e.task_id.as_str()) {
            task_order.push(&e.task_id);
        }
    }
    let per_task = task_order
        .iter()
        .map(|task| {
            let cands: Vec<PatchEvaluation> = evals
                .iter()
                .filter(|e| e.task_id == *task)
                .cloned()
                .collect();
            let plausible = cands.iter().filter(|e| e.plausible).count();
            let (min_aed, max_ccr) = match select_extreme(&cands) {
                Ok((a, c)) => (Some(a), Some(c)),
                Err(_) => (None, None),
            };
            TaskSummary {
                task_id: task.to_string(),
                candidates: cands.len(),
                plausible,
                min_aed_candidate: min_aed,
                max_ccr_candidate: max_ccr,
            }
        })
        .collect();

    let config = serde_json::json!({
        "samples_per_task": samples_per_task,
    });
    Ok(EvalReport {
        provenance: Provenance::new(config, &[candidates_path, plausibility_path, buggy_path])?,
        samples_per_task,
        metrics,
        per_task,
        candidates: evals,
        notes,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaterAgreement {
    pub rater_id: String,
    pub cohen_kappa: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricAgreement {
    pub metric: String,
    /// Items where the metric ties the two patches (excluded from ranking).
    pub tie_count: usize,
    pub per_rater: Vec<RaterAgreement>,
    /// Items where this metric disagrees with at least one size indicator.
    pub conflict_subset: Vec<String>,
    /// Multi-rater agreement restricted to the conflict subset.
    pub conflict_fleiss_kappa: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementReport {
    pub provenance: Provenance,
    pub items: usize,
    pub raters: usize,
    pub fleiss_kappa: Option<f64>,
    pub metrics: Vec<MetricAgreement>,
    pub notes: Vec<String>,
}

fn preference_label(p: Preference) -> Label {
    match p {
        Preference::First => "first".to_string(),
        Preference::Second => "second".to_string(),
    }
}

/// Relate metric-induced patch preferences to human annotations: Fleiss'
/// kappa over all raters, per-rater Cohen's kappa and Macro-F1 against each
/// metric, and the same statistics on metric-vs-size conflict subsets.
pub fn agreement_report(
    annotations_path: &Path,
    metric_table_path: &Path,
) -> Result<AgreementReport> {
    let annotations: Vec<AnnotationRecord> = read_jsonl(annotations_path)?;
    let table: Vec<MetricTableRecord> = read_jsonl(metric_table_path)?;

    let mut cells: BTreeMap<String, BTreeMap<String, Label>> = BTreeMap::new();
    for a in &annotations {
        if a.choice != "first" && a.choice != "second" {
            bail!(
                "item {} rater {}: choice must be \"first\" or \"second\", got {:?}",
                a.item_id,
                a.rater_id,
                a.choice
            );
        }
        if cells
            .entry(a.item_id.clone())
            .or_default()
            .insert(a.rater_id.clone(), a.choice.clone())
            .is_some()
        {
            bail!("item {} rater {}: duplicate annotation", a.item_id, a.rater_id);
        }
    }
    let items: Vec<String> = cells.keys().cloned().collect();
    let raters: BTreeSet<String> = cells
        .values()
        .flat_map(|row| row.keys().cloned())
        .collect();
    let raters: Vec<String> = raters.into_iter().collect();
    for item in &items {
        for rater in &raters {
            if !cells[item].contains_key(rater) {
                bail!("item {item}: no annotation from rater {rater}");
            }
        }
    }

    let mut notes = Vec::new();
    let matrix_labels: Vec<Vec<Label>> = items
        .iter()
        .map(|item| raters.iter().map(|r| cells[item][r].clone()).collect())
        .collect();
    let overall_fleiss = match AnnotationMatrix::new(matrix_labels).and_then(|m| fleiss_kappa(&m)) {
        Ok(k) => Some(k),
        Err(e) => {
            notes.push(format!("overall Fleiss' kappa undefined: {e}"));
            None
        }
    };

    let ranking_of = |pick: fn(&MetricTableRecord) -> [f64; 2], lower: bool| {
        MetricRanking::from_values(
            table.iter().map(|row| {
                let [a, b] = pick(row);
                (row.item_id.clone(), a, b)
            }),
            lower,
        )
    };
    let aed = ranking_of(|r| r.aed, true);
    let ccr = ranking_of(|r| r.ccr, false);
    let atcl = ranking_of(|r| r.atcl, true);
    let atct = ranking_of(|r| r.atct, true);

    let rater_stats = |ranking: &MetricRanking, restrict: Option<&BTreeSet<String>>| {
        raters
            .iter()
            .map(|rater| {
                let mut pred = Vec::new();
                let mut truth = Vec::new();
                for (item, &p) in &ranking.preferences {
                    if restrict.is_some_and(|subset| !subset.contains(item)) {
                        continue;
                    }
                    if let Some(row) = cells.get(item) {
                        pred.push(preference_label(p));
                        truth.push(row[rater].clone());
                    }
                }
                RaterAgreement {
                    rater_id: rater.clone(),
                    cohen_kappa: cohen_kappa(&pred, &truth).ok(),
                    macro_f1: macro_f1(&pred, &truth).ok(),
                }
            })
            .collect::<Vec<_>>()
    };

    let conflict_fleiss = |subset: &BTreeSet<String>| {
        let rows: Vec<Vec<Label>> = subset
            .iter()
            .filter_map(|item| cells.get(item))
            .map(|row| raters.iter().map(|r| row[r].clone()).collect())
            .collect();
        AnnotationMatrix::new(rows).and_then(|m| fleiss_kappa(&m)).ok()
    };

    let size_indicators = [&atcl, &atct];
    let mut metrics = Vec::new();
    for (name, ranking) in [("aed", &aed), ("ccr", &ccr), ("atcl", &atcl), ("atct", &atct)] {
        let subset = if name == "atcl" || name == "atct" {
            BTreeSet::new()
        } else {
            conflict_subset(ranking, &size_indicators)
        };
        metrics.push(MetricAgreement {
            metric: name.to_string(),
            tie_count: ranking.tie_count,
            per_rater: rater_stats(ranking, None),
            conflict_subset: subset.iter().cloned().collect(),
            conflict_fleiss_kappa: if subset.is_empty() { None } else { conflict_fleiss(&subset) },
        });
    }

    Ok(AgreementReport {
        provenance: Provenance::new(
            serde_json::json!({}),
            &[annotations_path, metric_table_path],
        )?,
        items: items.len(),
        raters: raters.len(),
        fleiss_kappa: overall_fleiss,
        metrics,
        notes,
    })
}

/// How snippet files are interpreted for contamination checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SnippetFormat {
    /// {"id", "code"} lines hashed directly.
    Snippets,
    /// Triplet corpus lines; buggy and fixed code are hashed separately
    /// under "<id>#buggy" / "<id>#fixed".
    Corpus,
}

fn digests_of(path: &Path, format: SnippetFormat) -> Result<Vec<SnippetDigest>> {
    match format {
        SnippetFormat::Snippets => {
            let snippets: Vec<SnippetRecord> = read_jsonl(path)?;
            Ok(snippets
                .iter()
                .map(|s| digest(s.id.clone(), &SourceText::new(s.code.clone())))
                .collect())
        }
        SnippetFormat::Corpus => {
            let corpus: Vec<CorpusRecord> = read_jsonl(path)?;
            let mut out = Vec::with_capacity(corpus.len() * 2);
            for rec in &corpus {
                let buggy = strip_to_code(&SourceText::new(rec.instruction.clone()));
                let fixed = strip_to_code(&SourceText::new(rec.response.clone()));
                out.push(digest(format!("{}#buggy", rec.id), &buggy.code));
                out.push(digest(format!("{}#fixed", rec.id), &fixed.code));
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContaminationOutput {
    pub provenance: Provenance,
    pub clean: bool,
    pub pairs: Vec<(String, String)>,
    pub intra_train_duplicates: Vec<Vec<String>>,
    pub intra_eval_duplicates: Vec<Vec<String>>,
}

/// Exact normalized-hash overlap between a train and an eval file.
pub fn contamination(
    train_path: &Path,
    eval_path: &Path,
    format: SnippetFormat,
) -> Result<ContaminationOutput> {
    let train = digests_of(train_path, format)?;
    let eval = digests_of(eval_path, format)?;
    let report = contamination_report(&train, &eval);
    Ok(ContaminationOutput {
        provenance: Provenance::new(
            serde_json::json!({"format": format}),
            &[train_path, eval_path],
        )?,
        clean: report.clean,
        pairs: report.pairs,
        intra_train_duplicates: report.intra_train_duplicates,
        intra_eval_duplicates: report.intra_eval_duplicates,
    })
}

/// Parse a comma-separated list of sweep weights.
pub fn parse_w_align_list(raw: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let trimmed = part.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: f64 = trimmed
            .parse()
            .with_context(|| format!("invalid w_align value {trimmed:?}"))?;
        if value < 0.0 {
            bail!("w_align must be >= 0, got {value}");
        }
        out.push(value);
    }
    if out.is_empty() {
        bail!("w_align list is empty");
    }
    Ok(out)
}
