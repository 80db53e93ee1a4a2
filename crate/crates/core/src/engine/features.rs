use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::domain::VitalsSample;
use crate::engine::EngineError;

/// Clinical windows mapped affinely onto [0, 1].
pub const SPO2_WINDOW: RangeInclusive<f64> = 70.0..=100.0;
pub const HR_WINDOW: RangeInclusive<f64> = 30.0..=200.0;
pub const TEMP_WINDOW: RangeInclusive<f64> = 34.0..=42.0;
pub const ACTIVITY_WINDOW: RangeInclusive<f64> = 0.0..=1.0;

/// Network input: `(spo2, hr, temp[, activity])`, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EngineError> {
        if !(3..=4).contains(&values.len()) {
            return Err(EngineError::InputCount(values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(EngineError::FeatureRange(*v));
        }
        Ok(Self(values))
    }

    /// Skips the [0, 1] and length checks. For hand-built test inputs and
    /// gradient probes.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Keeps the first `n` components.
    pub fn project(&self, n: usize) -> Self {
        Self(self.0[..n.min(self.0.len())].to_vec())
    }
}

fn scale(v: f64, window: RangeInclusive<f64>) -> f64 {
    ((v - window.start()) / (window.end() - window.start())).clamp(0.0, 1.0)
}

pub fn normalize(s: &VitalsSample, n_inputs: usize) -> Result<FeatureVector, EngineError> {
    let all = [
        scale(s.spo2_pct, SPO2_WINDOW),
        scale(s.hr_bpm, HR_WINDOW),
        scale(s.temp_c, TEMP_WINDOW),
        scale(s.activity_level, ACTIVITY_WINDOW),
    ];
    match n_inputs {
        3 | 4 => Ok(FeatureVector(all[..n_inputs].to_vec())),
        n => Err(EngineError::InputCount(n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_spo2(v: f64) -> VitalsSample {
        VitalsSample::new(0, v, 72.0, 36.8, 0.2)
    }

    #[test]
    fn window_endpoints() {
        assert_eq!(normalize(&with_spo2(100.0), 4).unwrap().as_slice()[0], 1.0);
        assert_eq!(normalize(&with_spo2(70.0), 4).unwrap().as_slice()[0], 0.0);
    }

    #[test]
    fn midpoint() {
        assert_eq!(normalize(&with_spo2(85.0), 4).unwrap().as_slice()[0], 0.5);
    }

    #[test]
    fn clipped_below_window() {
        assert_eq!(normalize(&with_spo2(60.0), 4).unwrap().as_slice()[0], 0.0);
    }

    #[test]
    fn three_inputs_drop_activity() {
        let s = VitalsSample::new(0, 85.0, 115.0, 38.0, 0.3);
        let f = normalize(&s, 3).unwrap();
        assert_eq!(f.as_slice(), &[0.5, 0.5, 0.5]);
        assert_eq!(normalize(&s, 4).unwrap().as_slice(), &[0.5, 0.5, 0.5, 0.3]);
        assert!(normalize(&s, 5).is_err());
    }

    #[test]
    fn feature_vector_checks() {
        assert!(FeatureVector::new(vec![0.0, 1.0, 0.5]).is_ok());
        assert!(FeatureVector::new(vec![0.0, 1.0]).is_err());
        assert!(FeatureVector::new(vec![0.0, 1.1, 0.5]).is_err());
    }
}
