use crate::domain::{PatientState, VitalsSample};

pub const SPO2_LOW: f64 = 90.0;
pub const HR_LOW: f64 = 50.0;
pub const HR_HIGH: f64 = 120.0;
pub const TEMP_LOW: f64 = 36.0;
pub const TEMP_HIGH: f64 = 38.5;

/// Ground-truth clinical rule used to label synthetic data.
///
/// Bounds are inclusive on the normal side. `activity_level` is ignored.
pub fn label_oracle(s: &VitalsSample) -> PatientState {
    let anomalous = s.spo2_pct < SPO2_LOW
        || s.hr_bpm < HR_LOW
        || s.hr_bpm > HR_HIGH
        || s.temp_c < TEMP_LOW
        || s.temp_c > TEMP_HIGH;
    if anomalous {
        PatientState::Anomaly
    } else {
        PatientState::Normal
    }
}
