//! Append-only JSON Lines trial ledger.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{Counts, F1Calibration, F1Point};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phase1,
    Phase2Base,
    Phase2Negation,
    Phase2Emoji,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Phase1 => "phase1",
            Phase::Phase2Base => "phase2_base",
            Phase::Phase2Negation => "phase2_negation",
            Phase::Phase2Emoji => "phase2_emoji",
        }
    }

    pub fn is_phase2(self) -> bool {
        self != Phase::Phase1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub trial_id: u64,
    pub phase: Phase,
    pub sweep_label: Option<String>,
    pub axis_label: Option<String>,
    /// Level of the perturbed axis for Phase-1 trials.
    pub level_label: Option<String>,
    pub fingerprint: String,
    pub prompt: String,
    pub backend: String,
    pub dataset_id: String,
    pub map_at_50: Option<f64>,
    pub delta_vs_baseline: Option<f64>,
    pub f1_threshold: Option<F1Calibration>,
    pub counts: Option<Counts>,
    pub status: Status,
    pub error: Option<String>,
    pub config_hash: String,
    pub timestamp: String,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok && self.map_at_50.is_some()
    }

    pub fn score(&self) -> Option<f64> {
        if self.status == Status::Ok {
            self.map_at_50
        } else {
            None
        }
    }
}

/// Per-trial F1/PR curve kept next to the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub trial_id: u64,
    pub config_hash: String,
    pub prompt: String,
    pub f1_curve: Vec<F1Point>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let records: Vec<TrialRecord> = read_jsonl(path)?;
    if let Some(r) = records.iter().find(|r| r.schema_version != SCHEMA_VERSION) {
        return Err(Error::parse(
            path,
            format!("unsupported ledger schema version {}", r.schema_version),
        ));
    }
    Ok(records)
}

pub fn read_curves(path: impl AsRef<Path>) -> Result<Vec<CurveRecord>> {
    read_jsonl(path.as_ref())
}

/// Sidecar curve file for a ledger path (`ledger.jsonl` -> `ledger.curves.jsonl`).
pub fn curves_path(ledger: &Path) -> PathBuf {
    let stem = ledger
        .file_stem()
        .map_or_else(|| "ledger".into(), |s| s.to_string_lossy().into_owned());
    ledger.with_file_name(format!("{stem}.curves.jsonl"))
}

/// Single writer appending to the ledger and its curve sidecar.
pub struct LedgerWriter {
    path: PathBuf,
    ledger: File,
    curves: File,
    existing: Vec<TrialRecord>,
    next_id: u64,
}

impl LedgerWriter {
    /// Opens for appending; prior rows are loaded and never rewritten.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let existing = if path.exists() { read_ledger(&path)? } else { Vec::new() };
        let next_id = existing.iter().map(|r| r.trial_id + 1).max().unwrap_or(0);
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))
        };
        let ledger = open(&path)?;
        let curves = open(&curves_path(&path))?;
        Ok(Self {
            path,
            ledger,
            curves,
            existing,
            next_id,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rows present before this writer was opened plus everything appended since.
    pub fn records(&self) -> &[TrialRecord] {
        &self.existing
    }

    pub fn next_trial_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn append(&mut self, record: &TrialRecord, curve: Option<&[F1Point]>) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("trial record serializes");
        line.push('\n');
        self.ledger
            .write_all(line.as_bytes())
            .and_then(|_| self.ledger.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        if let Some(points) = curve {
            let curve = CurveRecord {
                trial_id: record.trial_id,
                config_hash: record.config_hash.clone(),
                prompt: record.prompt.clone(),
                f1_curve: points.to_vec(),
            };
            let mut line = serde_json::to_string(&curve).expect("curve serializes");
            line.push('\n');
            self.curves
                .write_all(line.as_bytes())
                .and_then(|_| self.curves.flush())
                .map_err(|e| Error::io(curves_path(&self.path), e))?;
        }
        self.existing.push(record.clone());
        Ok(())
    }
}

/// Ledger rows with timestamps removed, one canonical JSON string per row.
pub fn canonical_projection(records: &[TrialRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            let mut value = serde_json::to_value(r).expect("trial record serializes");
            if let Some(obj) = value.as_object_mut() {
                obj.remove("timestamp");
            }
            value.to_string()
        })
        .collect()
}

pub fn projection_hash(records: &[TrialRecord]) -> String {
    let mut hasher = Sha256::new();
    for line in canonical_projection(records) {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
