use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use thiserror::Error;
use vitalink::gateway::{Ack, Uplink, UplinkError};
use vitalink::server::{CallbackSink, IngestResponse, RecordEntry, SessionUpload, Snapshot};
use vitalink::sim::RecordSource;
use vitalink::AlertEvent;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("server answered {code}: {message}")]
    Status { code: u16, message: String },
    #[error("decoding response: {0}")]
    Decode(String),
}

/// Blocking client for the medical server API.
#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    http: Client,
}

impl HttpClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_owned(),
            http,
        })
    }

    fn read<T: DeserializeOwned>(resp: reqwest::Result<Response>) -> Result<T, ClientError> {
        let resp = resp.map_err(|e| ClientError::Transport(e.to_string()))?;
        let code = resp.status();
        if !code.is_success() {
            let message = resp.text().unwrap_or_default();
            return Err(ClientError::Status {
                code: code.as_u16(),
                message,
            });
        }
        resp.json().map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn ingest(&self, token: &str, upload: &SessionUpload) -> Result<IngestResponse, ClientError> {
        let url = format!("{}/v1/ingest", self.base);
        Self::read(self.http.post(url).bearer_auth(token).json(upload).send())
    }

    pub fn status(&self, patient_id: &str) -> Result<Snapshot, ClientError> {
        let url = format!("{}/v1/patients/{patient_id}/status", self.base);
        Self::read(self.http.get(url).send())
    }

    pub fn history(&self, patient_id: &str, from_ms: u64, to_ms: u64) -> Result<Vec<RecordEntry>, ClientError> {
        let url = format!("{}/v1/patients/{patient_id}/history", self.base);
        let query = [("from_ms", from_ms), ("to_ms", to_ms)];
        Self::read(self.http.get(url).query(&query).send())
    }

    pub fn alerts(&self, since_ms: u64) -> Result<Vec<AlertEvent>, ClientError> {
        let url = format!("{}/v1/alerts", self.base);
        Self::read(self.http.get(url).query(&[("since_ms", since_ms)]).send())
    }
}

impl RecordSource for HttpClient {
    fn history(&self, patient_id: &str) -> Result<Vec<RecordEntry>, String> {
        HttpClient::history(self, patient_id, 0, u64::MAX).map_err(|e| e.to_string())
    }
}

/// The gateway's uplink over HTTP.
pub struct HttpUplink {
    client: HttpClient,
    token: String,
}

impl HttpUplink {
    pub fn new(client: HttpClient, token: impl Into<String>) -> Self {
        Self {
            client,
            token: token.into(),
        }
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }
}

impl Uplink for HttpUplink {
    fn is_available(&self) -> bool {
        true
    }

    fn upload(&mut self, upload: &SessionUpload) -> Result<Ack, UplinkError> {
        match self.client.ingest(&self.token, upload) {
            Ok(r) => Ok(r.into()),
            Err(ClientError::Status { code, message }) => Err(UplinkError::Rejected { status: code, message }),
            Err(e) => Err(UplinkError::Transport(e.to_string())),
        }
    }
}

/// Alert sink that POSTs each event as JSON to `url`.
pub fn webhook_sink(url: &str) -> Result<CallbackSink, ClientError> {
    let http = Client::builder()
        .timeout(Duration::from_secs(5))
        .build()
        .map_err(|e| ClientError::Transport(e.to_string()))?;
    let url = url.to_owned();
    Ok(CallbackSink::new("webhook", move |event| {
        let resp = http.post(&url).json(event).send().map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("webhook answered {}", resp.status()))
        }
    }))
}
