use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::domain::AlertEvent;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("sink {sink}: {message}")]
pub struct SinkError {
    pub sink: String,
    pub message: String,
}

pub trait AlertSink: Send + Sync {
    fn name(&self) -> &str;
    fn deliver(&self, event: &AlertEvent) -> Result<(), String>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    pub delivered: Vec<String>,
    pub failures: Vec<String>,
}

/// Hands `event` to every sink. A failing sink does not stop the others.
pub fn raise_alert(event: &AlertEvent, sinks: &[Box<dyn AlertSink>]) -> (DeliveryReport, Vec<SinkError>) {
    let mut report = DeliveryReport::default();
    let mut errors = Vec::new();
    for sink in sinks {
        match sink.deliver(event) {
            Ok(()) => report.delivered.push(sink.name().to_owned()),
            Err(message) => {
                report.failures.push(sink.name().to_owned());
                errors.push(SinkError {
                    sink: sink.name().to_owned(),
                    message,
                });
            }
        }
    }
    (report, errors)
}

/// Newline-delimited JSON file, one alert per line.
pub struct AlertLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AlertLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AlertSink for AlertLog {
    fn name(&self) -> &str {
        "alert-log"
    }

    fn deliver(&self, event: &AlertEvent) -> Result<(), String> {
        let mut line = serde_json::to_vec(event).map_err(|e| e.to_string())?;
        line.push(b'\n');
        let mut f = self.file.lock();
        f.write_all(&line).and_then(|_| f.sync_data()).map_err(|e| e.to_string())
    }
}

type Callback = Box<dyn Fn(&AlertEvent) -> Result<(), String> + Send + Sync>;

/// Calls a function for each alert, e.g. to post it to a webhook.
pub struct CallbackSink {
    name: String,
    f: Callback,
}

impl CallbackSink {
    pub fn new(name: impl Into<String>, f: impl Fn(&AlertEvent) -> Result<(), String> + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl AlertSink for CallbackSink {
    fn name(&self) -> &str {
        &self.name
    }

    fn deliver(&self, event: &AlertEvent) -> Result<(), String> {
        (self.f)(event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PatientState, VitalsSample};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn alert() -> AlertEvent {
        AlertEvent {
            patient_id: "p1".into(),
            created_ms: 10,
            state: PatientState::Anomaly,
            triggering_sample: VitalsSample::new(5, 85.0, 72.0, 36.8, 0.1),
            location: None,
        }
    }

    #[test]
    fn failing_sink_does_not_block_others() {
        let dir = tempfile::tempdir().unwrap();
        let log = AlertLog::open(&dir.path().join("alerts.ndjson")).unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        let sinks: Vec<Box<dyn AlertSink>> = vec![
            Box::new(CallbackSink::new("broken", |_| Err("refused".into()))),
            Box::new(log),
            Box::new(CallbackSink::new("count", move |_| {
                h.fetch_add(1, Ordering::SeqCst);
                Ok(())
            })),
        ];
        let (report, errors) = raise_alert(&alert(), &sinks);
        assert_eq!(report.delivered, ["alert-log", "count"]);
        assert_eq!(errors.len(), 1);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        let text = std::fs::read_to_string(dir.path().join("alerts.ndjson")).unwrap();
        let back: AlertEvent = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back, alert());
    }
}
