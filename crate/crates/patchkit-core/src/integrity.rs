//! Train/test contamination checking: exact SHA-256 hashing of normalized
//! snippets and cross-set overlap reporting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::normalize::{normalize, SourceText};

/// SHA-256 of the normalized flat text of one snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetDigest {
    pub source_id: String,
    #[serde(with = "hex_bytes")]
    pub digest: [u8; 32],
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], ser: S) -> Result<S::Ok, S::Error> {
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        ser.serialize_str(&hex)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(de)?;
        if s.len() != 64 {
            return Err(serde::de::Error::custom("expected 64 hex chars"));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16).ok_or_else(|| serde::de::Error::custom("bad hex"))?;
            let lo = (chunk[1] as char).to_digit(16).ok_or_else(|| serde::de::Error::custom("bad hex"))?;
            out[i] = (hi * 16 + lo) as u8;
        }
        Ok(out)
    }
}

/// SHA-256 of `normalize(text).flat()` encoded as UTF-8.
pub fn digest(source_id: impl Into<String>, text: &SourceText) -> SnippetDigest {
    let flat = normalize(text).flat();
    let mut hasher = Sha256::new();
    hasher.update(flat.as_bytes());
    SnippetDigest { source_id: source_id.into(), digest: hasher.finalize().into() }
}

/// Cross-set exact-overlap listing plus intra-set duplicate notes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub clean: bool,
    /// (train_id, eval_id) pairs with equal digests.
    pub pairs: Vec<(String, String)>,
    /// id groups sharing a digest within the train set.
    pub intra_train_duplicates: Vec<Vec<String>>,
    /// id groups sharing a digest within the eval set.
    pub intra_eval_duplicates: Vec<Vec<String>>,
}

fn intra_duplicates(set: &[SnippetDigest]) -> Vec<Vec<String>> {
    let mut by_digest: HashMap<[u8; 32], Vec<String>> = HashMap::new();
    for d in set {
        by_digest.entry(d.digest).or_default().push(d.source_id.clone());
    }
    let mut groups: Vec<Vec<String>> = by_digest.into_values().filter(|g| g.len() > 1).collect();
    groups.sort();
    groups
}

/// All (train_id, eval_id) pairs with equal digests; an empty pair list
/// means the corpora are clean of exact normalized overlap.
pub fn contamination_report(train: &[SnippetDigest], eval: &[SnippetDigest]) -> ContaminationReport {
    let mut train_by_digest: HashMap<[u8; 32], Vec<&str>> = HashMap::new();
    for d in train {
        train_by_digest.entry(d.digest).or_default().push(&d.source_id);
    }
    let mut pairs = Vec::new();
    for e in eval {
        if let Some(train_ids) = train_by_digest.get(&e.digest) {
            for t in train_ids {
                pairs.push((t.to_string(), e.source_id.clone()));
            }
        }
    }
    pairs.sort();
    ContaminationReport {
        clean: pairs.is_empty(),
        pairs,
        intra_train_duplicates: intra_duplicates(train),
        intra_eval_duplicates: intra_duplicates(eval),
    }
}
