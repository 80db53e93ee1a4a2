//! Three-tier vitals monitoring: a simulated body sensor, a store-and-forward
//! personal gateway and a medical record service with a backpropagation
//! anomaly classifier.

pub mod clock;
pub mod domain;
pub mod engine;
pub mod gateway;
pub mod sensor;
pub mod server;
pub mod sim;

pub use domain::{
    AlertEvent, CellIdentity, LocationFix, LocationSource, PatientState, SampleField, Violations,
    VitalsSample,
};
