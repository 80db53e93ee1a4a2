//! Append-only per-patient record logs: one JSON line per accepted upload,
//! synced to disk before the upload is acknowledged.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AlertEvent, LocationFix, PatientState, VitalsSample};
use crate::server::SessionUpload;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(String),
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

/// An accepted upload with the outcome the server recorded for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub upload: SessionUpload,
    /// `None` when no model was configured at ingest time.
    pub state: Option<PatientState>,
    /// Set when this upload raised an alert.
    pub alert_ms: Option<u64>,
}

impl RecordEntry {
    pub fn alert(&self) -> Option<AlertEvent> {
        self.alert_ms.map(|created_ms| AlertEvent {
            patient_id: self.upload.patient_id.clone(),
            created_ms,
            state: PatientState::Anomaly,
            triggering_sample: self.upload.sample,
            location: self.upload.location,
        })
    }
}

/// Latest state of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub patient_id: String,
    pub record_len: usize,
    pub last_sequence_no: Option<u64>,
    pub last_sample: Option<VitalsSample>,
    pub state: Option<PatientState>,
    pub location: Option<LocationFix>,
    pub last_alert_ms: Option<u64>,
}

/// In-memory image of one patient's log, plus the open file behind it.
#[derive(Debug)]
pub(crate) struct PatientRecord {
    patient_id: String,
    entries: Vec<RecordEntry>,
    /// Classification edge state; alerts fire on Normal → Anomaly.
    edge: PatientState,
    last_alert_ms: Option<u64>,
    path: Option<PathBuf>,
    file: Option<File>,
}

impl PatientRecord {
    pub(crate) fn new(patient_id: &str, path: Option<PathBuf>) -> Self {
        Self {
            patient_id: patient_id.to_owned(),
            entries: Vec::new(),
            edge: PatientState::Normal,
            last_alert_ms: None,
            path,
            file: None,
        }
    }

    pub(crate) fn high_water(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.upload.sequence_no)
    }

    /// Whether a sample classified as `state` would raise an alert now.
    pub(crate) fn is_rising_edge(&self, state: Option<PatientState>) -> bool {
        state == Some(PatientState::Anomaly) && self.edge == PatientState::Normal
    }

    fn apply(&mut self, entry: RecordEntry) {
        if let Some(s) = entry.state {
            self.edge = s;
        }
        if entry.alert_ms.is_some() {
            self.last_alert_ms = entry.alert_ms;
        }
        self.entries.push(entry);
    }

    /// Writes `entry` durably, then applies it.
    pub(crate) fn append(&mut self, entry: RecordEntry) -> Result<(), StoreError> {
        if let Some(path) = &self.path {
            if self.file.is_none() {
                self.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let f = self.file.as_mut().expect("opened above");
            let mut line = serde_json::to_vec(&entry).map_err(|e| StoreError::Io(e.to_string()))?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.apply(entry);
        Ok(())
    }

    pub(crate) fn entries(&self) -> &[RecordEntry] {
        &self.entries
    }

    pub(crate) fn snapshot(&self) -> Snapshot {
        let last = self.entries.last();
        Snapshot {
            patient_id: self.patient_id.clone(),
            record_len: self.entries.len(),
            last_sequence_no: last.map(|e| e.upload.sequence_no),
            last_sample: last.map(|e| e.upload.sample),
            state: last.and_then(|e| e.state),
            location: last.and_then(|e| e.upload.location),
            last_alert_ms: self.last_alert_ms,
        }
    }
}

pub(crate) fn record_path(dir: &Path, patient_id: &str) -> PathBuf {
    let hex: String = patient_id.bytes().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{hex}.ndjson"))
}

fn patient_from_file_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    if stem.len() % 2 != 0 {
        return None;
    }
    let bytes = (0..stem.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&stem[i..i + 2], 16).ok())
        .collect::<Option<Vec<u8>>>()?;
    String::from_utf8(bytes).ok()
}

/// Rebuilds every patient record under `dir`. A final line without its
/// newline is a write that never completed (and was never acknowledged); it
/// is cut off.
pub(crate) fn replay_dir(dir: &Path) -> Result<HashMap<String, PatientRecord>, StoreError> {
    let mut out = HashMap::new();
    for dirent in fs::read_dir(dir)? {
        let path = dirent?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
            continue;
        }
        let Some(patient_id) = patient_from_file_name(&path) else {
            continue;
        };
        let rec = replay_file(&path, &patient_id)?;
        out.insert(patient_id, rec);
    }
    Ok(out)
}

fn replay_file(path: &Path, patient_id: &str) -> Result<PatientRecord, StoreError> {
    let text = fs::read(path)?;
    let complete = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < text.len() {
        let mut f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
        f.seek(SeekFrom::End(0))?;
        f.sync_data()?;
    }
    let corrupt = |line: usize, message: String| StoreError::Corrupt {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut rec = PatientRecord::new(patient_id, Some(path.to_path_buf()));
    for (i, line) in text[..complete].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let entry: RecordEntry = serde_json::from_slice(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        if entry.upload.patient_id != patient_id {
            return Err(corrupt(i + 1, format!("entry for {}", entry.upload.patient_id)));
        }
        if entry.upload.sequence_no <= rec.high_water() {
            return Err(corrupt(i + 1, "sequence numbers not increasing".into()));
        }
        rec.apply(entry);
    }
    Ok(rec)
}
