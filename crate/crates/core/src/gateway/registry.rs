use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{SampleField, VitalsSample};
use crate::gateway::ConfigError;
use crate::sensor::ReportingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorType {
    PulseOximeter,
    Motion,
    Other,
}

/// Per-field additive offsets applied to every decoded sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub spo2_pct: f64,
    pub hr_bpm: f64,
    pub temp_c: f64,
    pub activity_level: f64,
}

impl Calibration {
    pub fn offset(&self, field: SampleField) -> f64 {
        match field {
            SampleField::SpO2Pct => self.spo2_pct,
            SampleField::HrBpm => self.hr_bpm,
            SampleField::TempC => self.temp_c,
            SampleField::ActivityLevel => self.activity_level,
        }
    }

    pub fn apply(&self, s: &VitalsSample) -> VitalsSample {
        let mut out = *s;
        for f in SampleField::ALL {
            *out.field_mut(f) += self.offset(f);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRegistration {
    pub sensor_id: String,
    pub sensor_type: SensorType,
    pub sampling_hz: f64,
    pub mode: ReportingMode,
    pub calibration: Option<Calibration>,
}

impl SensorRegistration {
    pub fn new(sensor_id: impl Into<String>, sensor_type: SensorType, sampling_hz: f64, mode: ReportingMode) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            sensor_type,
            sampling_hz,
            mode,
            calibration: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sampling_hz > 0.0 && self.sampling_hz.is_finite()) {
            return Err(ConfigError::SamplingRate(self.sampling_hz));
        }
        Ok(())
    }

    pub fn calibrate(&self, s: &VitalsSample) -> VitalsSample {
        self.calibration.map_or(*s, |c| c.apply(s))
    }
}

/// An accepted registration and the stream id issued for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub stream_id: u64,
    pub registration: SensorRegistration,
}

/// Active registrations, one per sensor id.
#[derive(Debug, Default)]
pub struct Registry {
    sessions: BTreeMap<String, Session>,
    next_stream: u64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts `reg`, replacing any earlier registration of the same sensor.
    /// Every registration gets a fresh stream id.
    pub fn register(&mut self, reg: SensorRegistration) -> Result<Session, ConfigError> {
        reg.validate()?;
        self.next_stream += 1;
        let session = Session {
            stream_id: self.next_stream,
            registration: reg,
        };
        self.sessions.insert(session.registration.sensor_id.clone(), session.clone());
        Ok(session)
    }

    pub fn get(&self, sensor_id: &str) -> Option<&Session> {
        self.sessions.get(sensor_id)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oximeter() -> SensorRegistration {
        SensorRegistration::new("nonin-1", SensorType::PulseOximeter, 1.0, ReportingMode::Raw)
    }

    #[test]
    fn registration_issues_stream_id() {
        let mut r = Registry::new();
        let s = r.register(oximeter()).unwrap();
        assert_eq!(s.stream_id, 1);
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn re_registration_replaces() {
        let mut r = Registry::new();
        r.register(oximeter()).unwrap();
        let second = r
            .register(SensorRegistration {
                sampling_hz: 2.0,
                ..oximeter()
            })
            .unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.get("nonin-1"), Some(&second));
        assert_eq!(second.stream_id, 2);
    }

    #[test]
    fn bad_rate_rejected() {
        let mut r = Registry::new();
        for hz in [0.0, -1.0, f64::NAN] {
            let reg = SensorRegistration { sampling_hz: hz, ..oximeter() };
            assert!(matches!(r.register(reg), Err(ConfigError::SamplingRate(_))));
        }
        assert!(r.is_empty());
    }

    #[test]
    fn calibration_is_additive() {
        let reg = SensorRegistration {
            calibration: Some(Calibration { temp_c: 0.3, ..Default::default() }),
            ..oximeter()
        };
        let s = reg.calibrate(&VitalsSample::new(0, 97.0, 72.0, 36.8, 0.2));
        assert!((s.temp_c - 37.1).abs() < 1e-9);
        assert_eq!((s.spo2_pct, s.hr_bpm, s.activity_level), (97.0, 72.0, 0.2));
    }
}
