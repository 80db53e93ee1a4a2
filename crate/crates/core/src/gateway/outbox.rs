use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{LocationFix, PatientState, VitalsSample};
use crate::gateway::ConfigError;
use crate::server::SessionUpload;

pub const DEFAULT_OUTBOX_CAPACITY: usize = 10_000;

/// The server's acknowledgment of one upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ack {
    /// Stored; `None` when the server has no model to classify with.
    Accepted(Option<PatientState>),
    /// Already stored by an earlier delivery.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UplinkError {
    #[error("link unavailable")]
    Unavailable,
    #[error("transport: {0}")]
    Transport(String),
    #[error("server rejected upload ({status}): {message}")]
    Rejected { status: u16, message: String },
}

/// Connection to the medical server's ingestion endpoint.
pub trait Uplink {
    fn is_available(&self) -> bool;
    fn upload(&mut self, upload: &SessionUpload) -> Result<Ack, UplinkError>;
}

impl<U: Uplink + ?Sized> Uplink for Box<U> {
    fn is_available(&self) -> bool {
        (**self).is_available()
    }

    fn upload(&mut self, upload: &SessionUpload) -> Result<Ack, UplinkError> {
        (**self).upload(upload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("link down after {uploaded} uploads: {cause}")]
pub struct LinkDown {
    pub uploaded: usize,
    pub cause: UplinkError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Enqueued {
    Stored(u64),
    /// Stored, but the outbox was full and its oldest entry was evicted.
    Dropped { stored: u64, evicted: SessionUpload },
}

impl Enqueued {
    pub fn sequence_no(&self) -> u64 {
        match self {
            Enqueued::Stored(s) | Enqueued::Dropped { stored: s, .. } => *s,
        }
    }
}

/// Bounded FIFO of uploads awaiting acknowledgment.
#[derive(Debug, Clone)]
pub struct Outbox {
    patient_id: String,
    capacity: usize,
    entries: VecDeque<SessionUpload>,
    next_seq: u64,
}

impl Outbox {
    pub fn new(patient_id: impl Into<String>, capacity: usize) -> Result<Self, ConfigError> {
        Self::starting_at(patient_id, capacity, 1)
    }

    /// An outbox whose first sequence number is `first_seq`, for a gateway
    /// resuming a patient stream the server already holds entries for.
    pub fn starting_at(patient_id: impl Into<String>, capacity: usize, first_seq: u64) -> Result<Self, ConfigError> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(ConfigError::PatientId);
        }
        if capacity == 0 {
            return Err(ConfigError::Capacity);
        }
        Ok(Self {
            patient_id,
            capacity,
            entries: VecDeque::new(),
            next_seq: first_seq.max(1),
        })
    }

    pub fn enqueue(&mut self, sample: VitalsSample, location: Option<LocationFix>) -> Enqueued {
        let seq = self.next_seq;
        self.next_seq += 1;
        let evicted = (self.entries.len() == self.capacity).then(|| self.entries.pop_front()).flatten();
        self.entries.push_back(SessionUpload {
            patient_id: self.patient_id.clone(),
            sequence_no: seq,
            sample,
            location,
        });
        match evicted {
            Some(evicted) => Enqueued::Dropped { stored: seq, evicted },
            None => Enqueued::Stored(seq),
        }
    }

    /// Uploads from the head while the link holds, removing each entry only
    /// once acknowledged. Returns what was delivered and, if the flush
    /// stopped early, why.
    pub fn flush_acked(&mut self, uplink: &mut dyn Uplink) -> (Vec<(u64, Ack)>, Option<LinkDown>) {
        let mut done = Vec::new();
        while let Some(head) = self.entries.front() {
            if !uplink.is_available() {
                let e = LinkDown { uploaded: done.len(), cause: UplinkError::Unavailable };
                return (done, Some(e));
            }
            match uplink.upload(head) {
                Ok(ack) => {
                    done.push((head.sequence_no, ack));
                    self.entries.pop_front();
                }
                Err(cause) => {
                    let e = LinkDown { uploaded: done.len(), cause };
                    return (done, Some(e));
                }
            }
        }
        (done, None)
    }

    pub fn flush(&mut self, uplink: &mut dyn Uplink) -> Result<usize, LinkDown> {
        match self.flush_acked(uplink) {
            (done, None) => Ok(done.len()),
            (_, Some(e)) => Err(e),
        }
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_sequence_no(&self) -> u64 {
        self.next_seq
    }

    pub fn iter(&self) -> impl Iterator<Item = &SessionUpload> {
        self.entries.iter()
    }
}
