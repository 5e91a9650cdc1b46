//! Durable bank format: a `manifest` file plus line-delimited experience
//! records, with a bit-exact save/load round trip.
//!
//! Layout inside the bank directory:
//!
//! * `manifest` - JSON: format version, dimension, provider tag, viewpoint
//!   ids, threshold, experience count, and an FNV-1a 64 checksum (lower-case
//!   hex) over the records file bytes.
//! * `experiences.jsonl` - one JSON object per experience, embeddings as
//!   arrays of decimal-rendered 32-bit reals. Shortest round-trip decimal
//!   rendering makes the vectors bit-exact without a binary format, and
//!   line-delimited records give line-level corruption reports.
//!
//! Saves write temp files and rename, manifest last, so a crashed save never
//! leaves a loadable-but-wrong bank at the target path.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

use crate::abstraction::Experience;
use crate::embed::{EmbedError, Embedding};
use crate::hash::fnv1a64;
use crate::index::{ExperienceBank, IndexError};
use crate::model::{Action, State};
use crate::viewpoint::{registry_ids, ViewpointId};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest";
pub const RECORDS_FILE: &str = "experiences.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bank io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported bank format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("records checksum mismatch: manifest says {expected}, file hashes to {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("manifest is invalid: {0}")]
    InvalidManifest(String),
}

/// Bank directory metadata; counts and checksum must match the records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub format_version: u32,
    pub dim: usize,
    pub provider: String,
    pub viewpoints: Vec<ViewpointId>,
    pub delta: f64,
    pub experience_count: usize,
    /// FNV-1a 64 over the records file bytes, lower-case hex.
    pub checksum: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    trajectory_id: &'a str,
    step: usize,
    state: &'a State,
    action: &'a Action,
    guidance: &'a str,
    q_value: f64,
    source_outcome: bool,
    embeddings: BTreeMap<ViewpointId, &'a [f32]>,
}

#[derive(Deserialize)]
struct RecordIn {
    id: String,
    trajectory_id: String,
    step: usize,
    state: State,
    action: Action,
    guidance: String,
    q_value: f64,
    source_outcome: bool,
    embeddings: BTreeMap<ViewpointId, Vec<f32>>,
}

fn checksum_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes the bank into `dir` (created if absent). Records first, then
/// the manifest as the commit point.
pub fn save(bank: &ExperienceBank, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir)?;

    let mut records = String::new();
    for (row, meta) in bank.experiences().iter().enumerate() {
        let mut embeddings = BTreeMap::new();
        for viewpoint in registry_ids() {
            embeddings.insert(viewpoint, bank.row_vector(viewpoint, row));
        }
        let record = RecordOut {
            id: &meta.id,
            trajectory_id: &meta.trajectory_id,
            step: meta.step,
            state: &meta.state,
            action: &meta.action,
            guidance: &meta.guidance,
            q_value: meta.q_value,
            source_outcome: meta.source_outcome,
            embeddings,
        };
        records.push_str(&serde_json::to_string(&record).expect("record serializes"));
        records.push('\n');
    }

    let manifest = BankManifest {
        format_version: FORMAT_VERSION,
        dim: bank.dim(),
        provider: bank.config().provider.clone(),
        viewpoints: registry_ids().to_vec(),
        delta: bank.config().delta,
        experience_count: bank.len(),
        checksum: checksum_hex(records.as_bytes()),
    };

    write_atomic(&dir.join(RECORDS_FILE), records.as_bytes())?;
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), manifest_json.as_bytes())?;
    Ok(())
}

/// Reads a bank directory back, verifying version, checksum, count,
/// dimensions, and unit norms. Rebuilds the per-viewpoint tables through the
/// same insertion path used online.
pub fn load(dir: &Path) -> Result<ExperienceBank, StoreError> {
    let manifest_bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: BankManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| StoreError::InvalidManifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: manifest.format_version });
    }
    if manifest.viewpoints != registry_ids().to_vec() {
        return Err(StoreError::InvalidManifest(format!(
            "viewpoint registry mismatch: {:?}",
            manifest.viewpoints
        )));
    }

    let records_bytes = fs::read(dir.join(RECORDS_FILE))?;
    let found = checksum_hex(&records_bytes);
    if found != manifest.checksum {
        return Err(StoreError::ChecksumMismatch { expected: manifest.checksum, found });
    }

    let records_text = String::from_utf8(records_bytes)
        .map_err(|e| StoreError::InvalidManifest(format!("records are not UTF-8: {e}")))?;

    let mut bank = ExperienceBank::new(manifest.dim, manifest.provider.clone(), manifest.delta);
    for (idx, line) in records_text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| StoreError::CorruptRecord { line: lineno, reason };
        let record: RecordIn = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        let mut embeddings = BTreeMap::new();
        for (viewpoint, values) in record.embeddings {
            if values.len() != manifest.dim {
                return Err(corrupt(format!(
                    "{viewpoint} vector has {} values, manifest dim is {}",
                    values.len(),
                    manifest.dim
                )));
            }
            let embedding = Embedding::from_values(values).map_err(|e: EmbedError| {
                corrupt(format!("{viewpoint} vector rejected: {e}"))
            })?;
            embeddings.insert(viewpoint, embedding);
        }
        let experience = Experience {
            id: record.id,
            trajectory_id: record.trajectory_id,
            step: record.step,
            state: record.state,
            action: record.action,
            guidance: record.guidance,
            q_value: record.q_value,
            source_outcome: record.source_outcome,
            embeddings,
        };
        bank.insert(experience).map_err(|e: IndexError| corrupt(e.to_string()))?;
    }

    if bank.len() != manifest.experience_count {
        return Err(StoreError::InvalidManifest(format!(
            "manifest says {} experiences, records hold {}",
            manifest.experience_count,
            bank.len()
        )));
    }
    Ok(bank)
}
