//! The personal server between the body sensor and the medical server:
//! sensor registration, change-detection forwarding, store-and-forward
//! buffering and hybrid GPS / cell location.

mod link;
mod locator;
mod outbox;
mod policy;
mod registry;
mod runner;

use thiserror::Error;

pub use link::{LinkScript, LinkState, LinkWindow, ScriptedLink};
pub use locator::{resolve_location, CellDatabase, CellDbError, CellRecord, UnknownCell};
pub use outbox::{Ack, Enqueued, LinkDown, Outbox, Uplink, UplinkError, DEFAULT_OUTBOX_CAPACITY};
pub use policy::{should_forward, ForwardPolicy, DELTA_TOLERANCE};
pub use registry::{Calibration, Registry, SensorRegistration, SensorType, Session};
pub use runner::{
    run_gateway, EventKind, Gateway, GatewayConfig, GatewayEvent, GatewayStats, PositionInput, PositionSource, StaticPosition,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("sampling rate must be positive, got {0}")]
    SamplingRate(f64),
    #[error("invalid forward policy: {0}")]
    Policy(&'static str),
    #[error("outbox capacity must be at least 1")]
    Capacity,
    #[error("patient id must not be empty")]
    PatientId,
    #[error("{0}")]
    Script(String),
}
