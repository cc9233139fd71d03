use std::fmt;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use patchkit_cli::formats::{read_dataset, write_dataset, write_report};
use patchkit_cli::pipeline::{
    agreement_report, contamination, curriculum_report, demo_train, parse_w_align_list, prepare,
    run_eval, PartialConfig, PipelineConfig, SnippetFormat, SweepInput, TokenizerKind,
};
use patchkit_core::metrics::{pass_at_k, PassAtKInput};
use patchkit_core::normalize::{extract_patch, normalize};
use patchkit_core::objective::{BatchMode, MaskingMode, TrainConfig};
use patchkit_core::SourceText;

/// Usage-level failures (bad flag combinations) exit with code 1; everything
/// else that goes wrong while processing data exits with code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskingModeArg {
    AssistantOnly,
    FullSequence,
}

impl From<MaskingModeArg> for MaskingMode {
    fn from(value: MaskingModeArg) -> Self {
        match value {
            MaskingModeArg::AssistantOnly => MaskingMode::AssistantOnly,
            MaskingModeArg::FullSequence => MaskingMode::FullSequence,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BatchModeArg {
    FullBatch,
    PerInstance,
}

impl From<BatchModeArg> for BatchMode {
    fn from(value: BatchModeArg) -> Self {
        match value {
            BatchModeArg::FullBatch => BatchMode::FullBatch,
            BatchModeArg::PerInstance => BatchMode::PerInstance,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "patchkit",
    version,
    about = "Preservation-weighted training data and minimal-edit patch evaluation",
    after_help = "Log verbosity is controlled by the PATCHKIT_LOG environment variable \
                  (error, warn, info, debug, trace)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a triplet corpus (id/instruction/response JSONL) into a weighted
    /// training dataset plus a preparation report.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        /// Weighted dataset JSONL; the first line is a provenance header.
        #[arg(long)]
        output: PathBuf,
        /// Preparation report JSON.
        #[arg(long)]
        report: PathBuf,
        /// Optional JSON config file supplying defaults; flags override.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        tokenizer: Option<TokenizerKind>,
        #[arg(long)]
        w_align: Option<f64>,
        #[arg(long, value_enum)]
        masking_mode: Option<MaskingModeArg>,
        #[arg(long)]
        curriculum_enabled: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the per-record fan-out (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Report the ascending-difficulty training order and stage buckets of a
    /// prepared dataset.
    Curriculum {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Sweep the alignment weight on the desk-scale next-token model and
    /// report final loss plus aligned/unaligned mean NLL per configuration.
    TrainDemo {
        /// Prepared dataset JSONL. Mutually exclusive with --generate.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Generate a synthetic copy-edit corpus of this many instances.
        #[arg(long)]
        generate: Option<usize>,
        /// Vocabulary size for the generated corpus.
        #[arg(long, default_value_t = 32)]
        vocab: u32,
        /// Seed for the generated corpus.
        #[arg(long, default_value_t = 0)]
        gen_seed: u64,
        /// Comma-separated sweep values.
        #[arg(long, default_value = "0,1,2,4")]
        w_align: String,
        #[arg(long, value_enum, default_value_t = MaskingModeArg::FullSequence)]
        masking_mode: MaskingModeArg,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = true)]
        curriculum_enabled: bool,
        #[arg(long, value_enum, default_value_t = BatchModeArg::FullBatch)]
        batch_mode: BatchModeArg,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score candidate patches against buggy sources and aggregate the
    /// minimal-edit metrics.
    Eval {
        /// Candidates JSONL: {"task_id", "candidate_id", "output_text"}.
        #[arg(long)]
        candidates: PathBuf,
        /// Verdicts JSONL: {"task_id", "candidate_id", "plausible"}.
        #[arg(long)]
        plausibility: PathBuf,
        /// Buggy sources JSONL: {"task_id", "buggy"}.
        #[arg(long)]
        buggy_sources: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Samples drawn per task (n of the pass@k estimator). Defaults to
        /// the largest per-task candidate count.
        #[arg(long)]
        samples_per_task: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Print the unbiased pass@k estimate for one (n, c, k) triple.
    PassAtK {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        c: u64,
        #[arg(long)]
        k: u64,
    },
    /// Relate metric-induced patch preferences to human annotations.
    Agreement {
        /// Annotations JSONL: {"item_id", "rater_id", "choice"}.
        #[arg(long)]
        annotations: PathBuf,
        /// Per-item metric table JSONL: {"item_id", "aed":[a,b], "ccr":[a,b],
        /// "atcl":[a,b], "atct":[a,b]}.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check two corpora for exact normalized-hash overlap.
    Contamination {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, value_enum, default_value_t = SnippetFormat::Snippets)]
        format: SnippetFormat,
        #[arg(long)]
        output: PathBuf,
    },
    /// Normalize one source file (strip comments, collapse whitespace) and
    /// print or write the result.
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Extract the first fenced code block from a model response.
    ExtractPatch {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit(output: Option<&PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            input,
            output,
            report,
            config,
            tokenizer,
            w_align,
            masking_mode,
            curriculum_enabled,
            seed,
            workers,
        } => {
            let file_cfg: PartialConfig = match &config {
                Some(path) => {
                    let raw = std::fs::read_to_string(path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    serde_json::from_str(&raw)
                        .with_context(|| format!("parsing config {}", path.display()))?
                }
                None => PartialConfig::default(),
            };
            let flag_cfg = PartialConfig {
                tokenizer,
                w_align,
                masking_mode: masking_mode.map(Into::into),
                curriculum_enabled,
                seed,
                workers,
            };
            let cfg = PipelineConfig::resolve(file_cfg, flag_cfg);
            let (records, prep_report) = prepare(&input, &cfg)?;
            write_dataset(&output, &prep_report.provenance, &records)?;
            write_report(&report, &prep_report)?;
            log::info!(
                "prepared {} records ({} failed) into {}",
                prep_report.parsed,
                prep_report.failed,
                output.display()
            );
        }
        Command::Curriculum { input, output } => {
            let (_, records) = read_dataset(&input)?;
            let report = curriculum_report(&input, &records)?;
            write_report(&output, &report)?;
        }
        Command::TrainDemo {
            input,
            generate,
            vocab,
            gen_seed,
            w_align,
            masking_mode,
            learning_rate,
            steps,
            seed,
            curriculum_enabled,
            batch_mode,
            output,
        } => {
            let sweep_input = match (&input, generate) {
                (Some(path), None) => {
                    let (_, records) = read_dataset(path)?;
                    SweepInput::Dataset { path: path.as_path(), records }
                }
                (None, Some(n)) => SweepInput::Generated { n, vocab, seed: gen_seed },
                _ => {
                    return Err(UsageError(
                        "train-demo needs exactly one of --input or --generate".into(),
                    )
                    .into())
                }
            };
            let weights = parse_w_align_list(&w_align)?;
            let base = TrainConfig {
                w_align: weights[0],
                masking_mode: masking_mode.into(),
                learning_rate,
                steps,
                seed,
                curriculum_enabled,
                batch_mode: batch_mode.into(),
                vocab_size: 0, // set per run from the dataset
                bos: 0,
            };
            let report = demo_train(sweep_input, &weights, &base)?;
            write_report(&output, &report)?;
        }
        Command::Eval {
            candidates,
            plausibility,
            buggy_sources,
            output,
            samples_per_task,
            workers,
        } => {
            let report =
                run_eval(&candidates, &plausibility, &buggy_sources, samples_per_task, workers)?;
            write_report(&output, &report)?;
        }
        Command::PassAtK { n, c, k } => {
            let value = pass_at_k(PassAtKInput { n, c, k })?;
            let line = serde_json::json!({"n": n, "c": c, "k": k, "pass_at_k": value});
            println!("{line}");
        }
        Command::Agreement { annotations, metrics, output } => {
            let report = agreement_report(&annotations, &metrics)?;
            write_report(&output, &report)?;
        }
        Command::Contamination { train, eval, format, output } => {
            let report = contamination(&train, &eval, format)?;
            write_report(&output, &report)?;
        }
        Command::Normalize { input, output } => {
            let raw = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let mut flat = normalize(&SourceText::new(raw)).flat();
            flat.push('\n');
            emit(output.as_ref(), &flat)?;
        }
        Command::ExtractPatch { input, output } => {
            let raw = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let code = extract_patch(&SourceText::new(raw))
                .with_context(|| format!("{}", input.display()))?;
            let mut text = code.as_str().to_string();
            text.push('\n');
            emit(output.as_ref(), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("PATCHKIT_LOG", "warn"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
