//! JSONL record schemas, report provenance headers, and line-oriented I/O.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use patchkit_core::objective::{MaskingMode, WeightedSequence};
use patchkit_core::Span;

/// One training triplet source: the task statement plus buggy program, and
/// the corrected program.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub instruction: String,
    pub response: String,
}

/// One serialized weighted training sequence (one JSONL line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedRecord {
    pub id: String,
    pub token_ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub weights: Vec<f64>,
    pub response_span: [usize; 2],
    pub aligned: Vec<usize>,
    pub masking_mode: MaskingMode,
    pub dl: u64,
}

impl WeightedRecord {
    pub fn from_sequence(id: String, seq: &WeightedSequence) -> Self {
        WeightedRecord {
            id,
            token_ids: seq.token_ids.clone(),
            mask: seq.mask.clone(),
            weights: seq.weights.clone(),
            response_span: [seq.response_span.start, seq.response_span.end],
            aligned: seq.aligned.clone(),
            masking_mode: seq.masking_mode,
            dl: seq.dl,
        }
    }

    pub fn to_sequence(&self) -> WeightedSequence {
        WeightedSequence {
            token_ids: self.token_ids.clone(),
            mask: self.mask.clone(),
            weights: self.weights.clone(),
            response_span: Span::new(self.response_span[0], self.response_span[1]),
            aligned: self.aligned.clone(),
            masking_mode: self.masking_mode,
            dl: self.dl,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub task_id: String,
    pub candidate_id: String,
    pub output_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlausibilityRecord {
    pub task_id: String,
    pub candidate_id: String,
    pub plausible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuggySourceRecord {
    pub task_id: String,
    pub buggy: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub rater_id: String,
    /// "first" or "second"
    pub choice: String,
}

/// Per-item metric values for the two candidate patches under comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricTableRecord {
    pub item_id: String,
    pub aed: [f64; 2],
    pub ccr: [f64; 2],
    pub atcl: [f64; 2],
    pub atct: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnippetRecord {
    pub id: String,
    pub code: String,
}

/// Embedded in every output file: tool version, the fully resolved config,
/// and a digest of each input file (basename -> SHA-256 of the raw bytes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(config: serde_json::Value, input_paths: &[&Path]) -> Result<Self> {
        let mut inputs = BTreeMap::new();
        for path in input_paths {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading input {}", path.display()))?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            inputs.insert(name, hex);
        }
        Ok(Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs,
        })
    }
}

/// First line of a weighted-dataset JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub header: Provenance,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), lineno + 1))?;
        out.push(value);
    }
    Ok(out)
}

/// Read a weighted dataset, returning the header (if present) and records.
pub fn read_dataset(path: &Path) -> Result<(Option<Provenance>, Vec<WeightedRecord>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header = None;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 {
            if let Ok(h) = serde_json::from_str::<DatasetHeader>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        let record: WeightedRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), lineno + 1))?;
        records.push(record);
    }
    Ok((header, records))
}

pub fn write_dataset(
    path: &Path,
    provenance: &Provenance,
    records: &[WeightedRecord],
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, &DatasetHeader { header: provenance.clone() })?;
    writer.write_all(b"\n")?;
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, report)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}
