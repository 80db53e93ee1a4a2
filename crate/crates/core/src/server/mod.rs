//! The medical server: authenticated ingestion with deduplication, durable
//! per-patient records, classification on arrival and edge-triggered alerts.

mod alerts;
mod auth;
mod service;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{LocationFix, PatientState, VitalsSample};

pub use alerts::{raise_alert, AlertLog, AlertSink, CallbackSink, DeliveryReport, SinkError};
pub use auth::{TokenError, TokenTable};
pub use service::{IngestOutcome, MedicalServer, ServerConfig};
pub use store::{RecordEntry, Snapshot, StoreError};

/// One forwarded sample as the gateway uploads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionUpload {
    pub patient_id: String,
    pub sequence_no: u64,
    pub sample: VitalsSample,
    pub location: Option<LocationFix>,
}

impl SessionUpload {
    pub fn validate(&self) -> Result<(), String> {
        if self.patient_id.is_empty() {
            return Err("patient_id is empty".into());
        }
        if self.sequence_no == 0 {
            return Err("sequence_no must be at least 1".into());
        }
        self.sample.validate().map_err(|v| v.to_string())?;
        if let Some(fix) = &self.location {
            fix.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServerError {
    #[error("unauthorized")]
    Unauthorized,
    #[error("invalid upload: {0}")]
    Validation(String),
    #[error("unknown patient {0}")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Body of a successful ingest response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IngestResponse {
    Duplicate { duplicate: bool },
    /// `state` is null when the server has no model.
    Accepted { state: Option<PatientState> },
}

impl From<&IngestOutcome> for IngestResponse {
    fn from(o: &IngestOutcome) -> Self {
        match o {
            IngestOutcome::Accepted { state, .. } => IngestResponse::Accepted { state: *state },
            IngestOutcome::Duplicate => IngestResponse::Duplicate { duplicate: true },
        }
    }
}

impl From<IngestResponse> for crate::gateway::Ack {
    fn from(r: IngestResponse) -> Self {
        match r {
            IngestResponse::Accepted { state } => crate::gateway::Ack::Accepted(state),
            IngestResponse::Duplicate { .. } => crate::gateway::Ack::Duplicate,
        }
    }
}
