//! Shared value types exchanged between the sensor node, the gateway and the
//! medical server.

use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SPO2_RANGE: RangeInclusive<f64> = 0.0..=100.0;
pub const HR_RANGE: RangeInclusive<f64> = 0.0..=300.0;
pub const TEMP_RANGE: RangeInclusive<f64> = 25.0..=45.0;
pub const ACTIVITY_RANGE: RangeInclusive<f64> = 0.0..=1.0;

/// Accuracy attributed to a GPS fix when the receiver reports none. Cell
/// fixes are never allowed to claim a smaller radius than this.
pub const GPS_DEFAULT_ACCURACY_M: f64 = 5.0;

/// One timestamped physiological reading.
///
/// `activity_level` is a normalized motion score. It is the fourth input of
/// the anomaly network; the other three are the pulse-oximeter quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalsSample {
    pub timestamp_ms: u64,
    pub spo2_pct: f64,
    pub hr_bpm: f64,
    pub temp_c: f64,
    pub activity_level: f64,
}

/// A field of [`VitalsSample`] that can fall outside its validity envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleField {
    SpO2Pct,
    HrBpm,
    TempC,
    ActivityLevel,
}

impl SampleField {
    pub const ALL: [SampleField; 4] = [
        SampleField::SpO2Pct,
        SampleField::HrBpm,
        SampleField::TempC,
        SampleField::ActivityLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SampleField::SpO2Pct => "spo2_pct",
            SampleField::HrBpm => "hr_bpm",
            SampleField::TempC => "temp_c",
            SampleField::ActivityLevel => "activity_level",
        }
    }

    pub fn range(self) -> RangeInclusive<f64> {
        match self {
            SampleField::SpO2Pct => SPO2_RANGE,
            SampleField::HrBpm => HR_RANGE,
            SampleField::TempC => TEMP_RANGE,
            SampleField::ActivityLevel => ACTIVITY_RANGE,
        }
    }
}

impl fmt::Display for SampleField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The set of fields that failed validation, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("sample out of range: {}", .0.iter().map(|f| f.name()).collect::<Vec<_>>().join(", "))]
pub struct Violations(pub Vec<SampleField>);

impl Violations {
    pub fn fields(&self) -> &[SampleField] {
        &self.0
    }
}

impl VitalsSample {
    pub fn new(timestamp_ms: u64, spo2_pct: f64, hr_bpm: f64, temp_c: f64, activity_level: f64) -> Self {
        Self {
            timestamp_ms,
            spo2_pct,
            hr_bpm,
            temp_c,
            activity_level,
        }
    }

    pub fn field(&self, field: SampleField) -> f64 {
        match field {
            SampleField::SpO2Pct => self.spo2_pct,
            SampleField::HrBpm => self.hr_bpm,
            SampleField::TempC => self.temp_c,
            SampleField::ActivityLevel => self.activity_level,
        }
    }

    pub fn field_mut(&mut self, field: SampleField) -> &mut f64 {
        match field {
            SampleField::SpO2Pct => &mut self.spo2_pct,
            SampleField::HrBpm => &mut self.hr_bpm,
            SampleField::TempC => &mut self.temp_c,
            SampleField::ActivityLevel => &mut self.activity_level,
        }
    }

    /// Checks every field against its validity envelope and names each one
    /// that falls outside. NaN is never in range.
    pub fn validate(&self) -> Result<(), Violations> {
        let bad: Vec<SampleField> = SampleField::ALL
            .into_iter()
            .filter(|f| !f.range().contains(&self.field(*f)))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Violations(bad))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cell identity out of range: {0}")]
pub struct CellRangeError(pub &'static str);

/// Serving-cell identifiers reported by the phone's radio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIdentity {
    pub mcc: u16,
    pub mnc: u16,
    pub lac: u16,
    pub ci: u32,
}

impl CellIdentity {
    pub const MAX_CODE: u16 = 999;
    pub const MAX_CI: u32 = (1 << 28) - 1;

    pub fn new(mcc: u16, mnc: u16, lac: u16, ci: u32) -> Result<Self, CellRangeError> {
        let cell = Self { mcc, mnc, lac, ci };
        cell.validate()?;
        Ok(cell)
    }

    pub fn validate(&self) -> Result<(), CellRangeError> {
        if self.mcc > Self::MAX_CODE {
            return Err(CellRangeError("mcc"));
        }
        if self.mnc > Self::MAX_CODE {
            return Err(CellRangeError("mnc"));
        }
        if self.ci > Self::MAX_CI {
            return Err(CellRangeError("ci"));
        }
        Ok(())
    }
}

impl fmt::Display for CellIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}-{}", self.mcc, self.mnc, self.lac, self.ci)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocationSource {
    #[serde(rename = "GPS")]
    Gps,
    #[serde(rename = "CELL")]
    Cell,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocationError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("accuracy {0} m must be positive")]
    Accuracy(f64),
    #[error("cell fix claims {0} m, tighter than the GPS default")]
    CellTooPrecise(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationFix {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub source: LocationSource,
    pub accuracy_m: f64,
}

impl LocationFix {
    pub fn validate(&self) -> Result<(), LocationError> {
        if !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(LocationError::Latitude(self.lat_deg));
        }
        if !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(LocationError::Longitude(self.lon_deg));
        }
        if !(self.accuracy_m > 0.0 && self.accuracy_m.is_finite()) {
            return Err(LocationError::Accuracy(self.accuracy_m));
        }
        if self.source == LocationSource::Cell && self.accuracy_m < GPS_DEFAULT_ACCURACY_M {
            return Err(LocationError::CellTooPrecise(self.accuracy_m));
        }
        Ok(())
    }
}

/// Binary outcome of the anomaly classifier. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum PatientState {
    Normal,
    Anomaly,
}

impl From<PatientState> for u8 {
    fn from(state: PatientState) -> u8 {
        match state {
            PatientState::Normal => 0,
            PatientState::Anomaly => 1,
        }
    }
}

impl TryFrom<u8> for PatientState {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(PatientState::Normal),
            1 => Ok(PatientState::Anomaly),
            other => Err(format!("patient state must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for PatientState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatientState::Normal => f.write_str("Normal"),
            PatientState::Anomaly => f.write_str("Anomaly"),
        }
    }
}

/// An anomaly decision joined with who and where.
///
/// `location` is `None` only when the gateway had neither GPS nor a known
/// serving cell at any point before the triggering sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub patient_id: String,
    pub created_ms: u64,
    pub state: PatientState,
    pub triggering_sample: VitalsSample,
    pub location: Option<LocationFix>,
}

impl AlertEvent {
    pub fn is_well_formed(&self) -> bool {
        self.state == PatientState::Anomaly && self.triggering_sample.timestamp_ms <= self.created_ms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mid() -> VitalsSample {
        VitalsSample::new(0, 97.0, 72.0, 36.8, 0.2)
    }

    #[test]
    fn mid_range_sample_is_valid() {
        assert_eq!(mid().validate(), Ok(()));
    }

    #[test]
    fn spo2_above_100_is_named() {
        let s = VitalsSample { spo2_pct: 101.0, ..mid() };
        assert_eq!(s.validate(), Err(Violations(vec![SampleField::SpO2Pct])));
    }

    #[test]
    fn multiple_violations_reported_together() {
        let s = VitalsSample {
            spo2_pct: -1.0,
            hr_bpm: 999.0,
            ..mid()
        };
        assert_eq!(
            s.validate(),
            Err(Violations(vec![SampleField::SpO2Pct, SampleField::HrBpm]))
        );
    }

    #[test]
    fn nan_is_rejected() {
        let s = VitalsSample { temp_c: f64::NAN, ..mid() };
        assert_eq!(s.validate(), Err(Violations(vec![SampleField::TempC])));
    }

    // Sweep every bound by +-eps: inside accepted, outside rejected, and only
    // the perturbed field is named.
    #[test]
    fn boundary_sweep() {
        let eps = 1e-9;
        for field in SampleField::ALL {
            let r = field.range();
            for (v, ok) in [
                (*r.start(), true),
                (*r.end(), true),
                (r.start() + eps, true),
                (r.end() - eps, true),
                (r.start() - eps, false),
                (r.end() + eps, false),
            ] {
                let mut s = mid();
                *s.field_mut(field) = v;
                match s.validate() {
                    Ok(()) => assert!(ok, "{field} = {v} accepted"),
                    Err(Violations(bad)) => {
                        assert!(!ok, "{field} = {v} rejected");
                        assert_eq!(bad, vec![field]);
                    }
                }
            }
        }
    }

    #[test]
    fn patient_state_round_trips_as_integer() {
        for st in [PatientState::Normal, PatientState::Anomaly] {
            let json = serde_json::to_string(&st).unwrap();
            assert_eq!(json, if st == PatientState::Normal { "0" } else { "1" });
            assert_eq!(serde_json::from_str::<PatientState>(&json).unwrap(), st);
        }
        assert!(serde_json::from_str::<PatientState>("2").is_err());
    }

    #[test]
    fn sample_json_uses_canonical_keys() {
        let v: serde_json::Value = serde_json::to_value(mid()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["timestamp_ms", "spo2_pct", "hr_bpm", "temp_c", "activity_level"] {
            assert!(keys.contains(&k));
        }
    }

    #[test]
    fn cell_identity_bounds() {
        assert!(CellIdentity::new(603, 1, 65535, CellIdentity::MAX_CI).is_ok());
        assert!(CellIdentity::new(1000, 1, 1, 1).is_err());
        assert!(CellIdentity::new(1, 1000, 1, 1).is_err());
        assert!(CellIdentity::new(1, 1, 1, 1 << 28).is_err());
    }

    #[test]
    fn location_fix_rules() {
        let gps = LocationFix {
            lat_deg: 34.8828,
            lon_deg: -1.3167,
            source: LocationSource::Gps,
            accuracy_m: 3.0,
        };
        assert!(gps.validate().is_ok());
        let cell = LocationFix {
            source: LocationSource::Cell,
            ..gps
        };
        assert_eq!(cell.validate(), Err(LocationError::CellTooPrecise(3.0)));
        assert!(LocationFix { lat_deg: 91.0, ..gps }.validate().is_err());
        assert!(LocationFix { lon_deg: -181.0, ..gps }.validate().is_err());
        assert!(LocationFix { accuracy_m: 0.0, ..gps }.validate().is_err());
        let json = serde_json::to_string(&cell).unwrap();
        assert!(json.contains("\"CELL\""));
    }
}
