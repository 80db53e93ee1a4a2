use serde::{Deserialize, Serialize};

use crate::domain::{SampleField, VitalsSample};
use crate::gateway::ConfigError;

/// Slack for decimal thresholds: 36.9 − 36.8 is 0.0999…96 in binary
/// floating point and must still count as a 0.1 °C change.
pub const DELTA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardPolicy {
    pub delta_spo2: f64,
    pub delta_hr: f64,
    pub delta_temp: f64,
    pub delta_activity: f64,
    pub heartbeat_s: u64,
}

impl Default for ForwardPolicy {
    fn default() -> Self {
        Self {
            delta_spo2: 1.0,
            delta_hr: 2.0,
            delta_temp: 0.1,
            delta_activity: 0.05,
            heartbeat_s: 60,
        }
    }
}

impl ForwardPolicy {
    pub fn delta(&self, field: SampleField) -> f64 {
        match field {
            SampleField::SpO2Pct => self.delta_spo2,
            SampleField::HrBpm => self.delta_hr,
            SampleField::TempC => self.delta_temp,
            SampleField::ActivityLevel => self.delta_activity,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for f in SampleField::ALL {
            let d = self.delta(f);
            if !(d >= 0.0 && d.is_finite()) {
                return Err(ConfigError::Policy("deltas must be finite and non-negative"));
            }
        }
        if self.heartbeat_s == 0 {
            return Err(ConfigError::Policy("heartbeat_s must be positive"));
        }
        Ok(())
    }
}

/// Whether `curr` is worth uploading given the last forwarded sample.
///
/// A field triggers when it moved by a nonzero amount at least its delta, so
/// a zero delta forwards every change but never an identical reading.
pub fn should_forward(prev: Option<&VitalsSample>, curr: &VitalsSample, policy: &ForwardPolicy) -> bool {
    let Some(prev) = prev else {
        return true;
    };
    let changed = SampleField::ALL.iter().any(|&f| {
        let d = (curr.field(f) - prev.field(f)).abs();
        d > 0.0 && d >= policy.delta(f) - DELTA_TOLERANCE
    });
    changed || curr.timestamp_ms.saturating_sub(prev.timestamp_ms) >= policy.heartbeat_s * 1000
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base(t: u64) -> VitalsSample {
        VitalsSample::new(t, 97.0, 72.0, 36.8, 0.2)
    }

    #[test]
    fn first_sample_forwards() {
        assert!(should_forward(None, &base(0), &ForwardPolicy::default()));
    }

    #[test]
    fn unchanged_is_suppressed() {
        assert!(!should_forward(Some(&base(0)), &base(1000), &ForwardPolicy::default()));
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = ForwardPolicy::default();
        let curr = VitalsSample { hr_bpm: 74.0, ..base(1000) };
        assert!(should_forward(Some(&base(0)), &curr, &p));
        let curr = VitalsSample { hr_bpm: 73.9, ..base(1000) };
        assert!(!should_forward(Some(&base(0)), &curr, &p));
        let curr = VitalsSample { temp_c: 36.9, ..base(1000) };
        assert!(should_forward(Some(&base(0)), &curr, &p));
        let curr = VitalsSample { spo2_pct: 96.0, ..base(1000) };
        assert!(should_forward(Some(&base(0)), &curr, &p));
        let curr = VitalsSample { activity_level: 0.25, ..base(1000) };
        assert!(should_forward(Some(&base(0)), &curr, &p));
    }

    #[test]
    fn heartbeat_fires_at_exactly_sixty_seconds() {
        let p = ForwardPolicy::default();
        assert!(!should_forward(Some(&base(0)), &base(59_999), &p));
        assert!(should_forward(Some(&base(0)), &base(60_000), &p));
    }

    #[test]
    fn policy_validation() {
        assert!(ForwardPolicy::default().validate().is_ok());
        assert!(ForwardPolicy { delta_hr: -1.0, ..Default::default() }.validate().is_err());
        assert!(ForwardPolicy { heartbeat_s: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn identical_sample_never_forwards_before_heartbeat(
            spo2 in 0.0..=100.0f64, hr in 0.0..=300.0f64, temp in 25.0..=45.0f64, act in 0.0..=1.0f64,
            d in prop::array::uniform4(0.0..5.0f64), hb in 1u64..1000, t0 in 0u64..1_000_000, dt in 0u64..1000,
        ) {
            let p = ForwardPolicy { delta_spo2: d[0], delta_hr: d[1], delta_temp: d[2], delta_activity: d[3], heartbeat_s: hb };
            prop_assume!(dt < hb * 1000);
            let x = VitalsSample::new(t0, spo2, hr, temp, act);
            let y = VitalsSample { timestamp_ms: t0 + dt, ..x };
            prop_assert!(!should_forward(Some(&x), &y, &p));
        }
    }
}
