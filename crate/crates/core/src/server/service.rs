use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::clock::Clock;
use crate::domain::{AlertEvent, PatientState, VitalsSample};
use crate::engine::{normalize, MlpModel};
use crate::server::alerts::raise_alert;
use crate::server::store::{record_path, replay_dir, PatientRecord};
use crate::server::{AlertLog, AlertSink, RecordEntry, ServerError, SessionUpload, SinkError, Snapshot, StoreError, TokenTable};

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Where record logs and the alert log live; `None` keeps everything in
    /// memory.
    pub data_dir: Option<PathBuf>,
    pub model: Option<MlpModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Accepted {
        state: Option<PatientState>,
        alert: Option<AlertEvent>,
    },
    Duplicate,
}

pub struct MedicalServer {
    tokens: TokenTable,
    model: Option<MlpModel>,
    records_dir: Option<PathBuf>,
    patients: RwLock<HashMap<String, Arc<Mutex<PatientRecord>>>>,
    /// Every alert, ordered by (created_ms, patient_id).
    alerts: Mutex<Vec<AlertEvent>>,
    sinks: Vec<Box<dyn AlertSink>>,
    sink_errors: Mutex<Vec<SinkError>>,
    clock: Arc<dyn Clock>,
}

impl MedicalServer {
    /// Opens the server, replaying any records already under `data_dir`.
    /// Every provisioned patient gets a record, empty until its first upload.
    pub fn open(tokens: TokenTable, cfg: ServerConfig, clock: Arc<dyn Clock>) -> Result<Self, ServerError> {
        if let Some(m) = &cfg.model {
            m.validate().map_err(|e| StoreError::Io(format!("model: {e}")))?;
        }
        let mut sinks: Vec<Box<dyn AlertSink>> = Vec::new();
        let (records_dir, mut records) = match &cfg.data_dir {
            Some(dir) => {
                let rdir = dir.join("records");
                fs::create_dir_all(&rdir).map_err(StoreError::from)?;
                sinks.push(Box::new(AlertLog::open(&dir.join("alerts.ndjson")).map_err(StoreError::from)?));
                let records = replay_dir(&rdir)?;
                (Some(rdir), records)
            }
            None => (None, HashMap::new()),
        };
        for p in tokens.patients() {
            if !records.contains_key(p) {
                let path = records_dir.as_ref().map(|d| record_path(d, p));
                records.insert(p.to_owned(), PatientRecord::new(p, path));
            }
        }
        let mut alerts: Vec<AlertEvent> = records
            .values()
            .flat_map(|r| r.entries().iter().filter_map(RecordEntry::alert))
            .collect();
        alerts.sort_by(|a, b| alert_order(a).cmp(&alert_order(b)));
        Ok(Self {
            tokens,
            model: cfg.model,
            records_dir,
            patients: RwLock::new(records.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect()),
            alerts: Mutex::new(alerts),
            sinks,
            sink_errors: Mutex::new(Vec::new()),
            clock,
        })
    }

    pub fn in_memory(tokens: TokenTable, model: Option<MlpModel>, clock: Arc<dyn Clock>) -> Self {
        Self::open(tokens, ServerConfig { data_dir: None, model }, clock).expect("in-memory server has no storage to fail")
    }

    pub fn add_sink(&mut self, sink: Box<dyn AlertSink>) {
        self.sinks.push(sink);
    }

    pub fn model(&self) -> Option<&MlpModel> {
        self.model.as_ref()
    }

    pub fn authenticate(&self, token: &str) -> Result<&str, ServerError> {
        self.tokens.authenticate(token).ok_or(ServerError::Unauthorized)
    }

    /// What the configured model says about `sample`; `None` without a model.
    pub fn classify(&self, sample: &VitalsSample) -> Option<PatientState> {
        let m = self.model.as_ref()?;
        normalize(sample, m.n_inputs).and_then(|x| m.classify(&x)).ok()
    }

    /// Stores one upload and acknowledges it once it is on disk. Repeated
    /// sequence numbers are acknowledged as duplicates without effect.
    pub fn ingest(&self, token: &str, upload: &SessionUpload) -> Result<IngestOutcome, ServerError> {
        let patient_id = self.authenticate(token)?;
        upload.validate().map_err(ServerError::Validation)?;
        if upload.patient_id != patient_id {
            return Err(ServerError::Unauthorized);
        }
        let record = self.record(patient_id)?;
        let mut rec = record.lock();
        if upload.sequence_no <= rec.high_water() {
            return Ok(IngestOutcome::Duplicate);
        }
        let state = self.classify(&upload.sample);
        let alert_ms = rec
            .is_rising_edge(state)
            .then(|| self.clock.now_ms().max(upload.sample.timestamp_ms));
        let entry = RecordEntry {
            upload: upload.clone(),
            state,
            alert_ms,
        };
        let alert = entry.alert();
        rec.append(entry)?;
        if let Some(ev) = &alert {
            {
                let mut all = self.alerts.lock();
                let at = all.partition_point(|a| alert_order(a) <= alert_order(ev));
                all.insert(at, ev.clone());
            }
            let (_, errors) = raise_alert(ev, &self.sinks);
            self.sink_errors.lock().extend(errors);
        }
        Ok(IngestOutcome::Accepted { state, alert })
    }

    pub fn get_status(&self, patient_id: &str) -> Result<Snapshot, ServerError> {
        Ok(self.record(patient_id)?.lock().snapshot())
    }

    /// Accepted uploads with `from_ms <= timestamp <= to_ms`, in sequence order.
    pub fn query_history(&self, patient_id: &str, from_ms: u64, to_ms: u64) -> Result<Vec<RecordEntry>, ServerError> {
        let record = self.record(patient_id)?;
        let rec = record.lock();
        Ok(rec
            .entries()
            .iter()
            .filter(|e| (from_ms..=to_ms).contains(&e.upload.sample.timestamp_ms))
            .cloned()
            .collect())
    }

    pub fn alerts_since(&self, since_ms: u64) -> Vec<AlertEvent> {
        self.alerts.lock().iter().filter(|a| a.created_ms >= since_ms).cloned().collect()
    }

    pub fn sink_errors(&self) -> Vec<SinkError> {
        self.sink_errors.lock().clone()
    }

    pub fn patients(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.patients.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn is_persistent(&self) -> bool {
        self.records_dir.is_some()
    }

    fn record(&self, patient_id: &str) -> Result<Arc<Mutex<PatientRecord>>, ServerError> {
        self.patients
            .read()
            .get(patient_id)
            .cloned()
            .ok_or_else(|| ServerError::NotFound(patient_id.to_owned()))
    }
}

fn alert_order(a: &AlertEvent) -> (u64, &str, u64) {
    (a.created_ms, a.patient_id.as_str(), a.triggering_sample.timestamp_ms)
}
