//! Fixed 23-byte wire frame carrying one [`VitalsSample`].
//!
//! ```text
//! off  len  field
//!   0    1  0x7E sync
//!   1    1  message type (0x01 = vitals)
//!   2    8  timestamp_ms, u64 LE
//!  10    2  spo2_pct  x 10,   u16 LE
//!  12    2  hr_bpm    x 10,   u16 LE
//!  14    2  temp_c    x 100,  u16 LE
//!  16    2  activity  x 1000, u16 LE
//!  18    4  reserved, zero
//!  22    1  XOR of bytes 0..=21
//! ```

use thiserror::Error;

use crate::domain::{SampleField, Violations, VitalsSample};

pub const FRAME_LEN: usize = 23;
pub const SYNC: u8 = 0x7E;
pub const MSG_VITALS: u8 = 0x01;

pub const SPO2_SCALE: f64 = 10.0;
pub const HR_SCALE: f64 = 10.0;
pub const TEMP_SCALE: f64 = 100.0;
pub const ACTIVITY_SCALE: f64 = 1000.0;

fn scale(field: SampleField) -> f64 {
    match field {
        SampleField::SpO2Pct => SPO2_SCALE,
        SampleField::HrBpm => HR_SCALE,
        SampleField::TempC => TEMP_SCALE,
        SampleField::ActivityLevel => ACTIVITY_SCALE,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("{field} = {value} does not fit its fixed-point field")]
    Range { field: SampleField, value: f64 },
    #[error("expected {FRAME_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("bad sync byte {0:#04x}")]
    BadSync(u8),
    #[error("checksum mismatch: computed {computed:#04x}, frame carries {carried:#04x}")]
    BadChecksum { computed: u8, carried: u8 },
    #[error("unknown message type {0:#04x}")]
    BadType(u8),
    #[error("decoded sample invalid: {0}")]
    InvalidSample(Violations),
    #[error("skipped {0} bytes while searching for sync")]
    Resync(usize),
}

/// The encoded bytes of one frame. Only produced by [`encode_frame`], so the
/// layout invariants hold for every value of this type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorFrame([u8; FRAME_LEN]);

impl SensorFrame {
    pub fn as_bytes(&self) -> &[u8; FRAME_LEN] {
        &self.0
    }

    pub fn into_bytes(self) -> [u8; FRAME_LEN] {
        self.0
    }

    /// The four fixed-point payload words (spo2, hr, temp, activity).
    pub fn payload_words(&self) -> [u16; 4] {
        let w = |o: usize| u16::from_le_bytes([self.0[o], self.0[o + 1]]);
        [w(10), w(12), w(14), w(16)]
    }
}

pub fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

fn to_word(s: &VitalsSample, field: SampleField) -> Result<u16, FrameError> {
    let value = s.field(field);
    let scaled = (value * scale(field)).round();
    if !field.range().contains(&value) || !(0.0..=u16::MAX as f64).contains(&scaled) {
        return Err(FrameError::Range { field, value });
    }
    Ok(scaled as u16)
}

pub fn encode_frame(s: &VitalsSample) -> Result<SensorFrame, FrameError> {
    let mut b = [0u8; FRAME_LEN];
    b[0] = SYNC;
    b[1] = MSG_VITALS;
    b[2..10].copy_from_slice(&s.timestamp_ms.to_le_bytes());
    for (i, field) in SampleField::ALL.into_iter().enumerate() {
        let off = 10 + 2 * i;
        b[off..off + 2].copy_from_slice(&to_word(s, field)?.to_le_bytes());
    }
    b[22] = checksum(&b[..22]);
    Ok(SensorFrame(b))
}

pub fn decode_frame(bytes: &[u8]) -> Result<VitalsSample, FrameError> {
    if bytes.len() != FRAME_LEN {
        return Err(FrameError::BadLength(bytes.len()));
    }
    if bytes[0] != SYNC {
        return Err(FrameError::BadSync(bytes[0]));
    }
    let computed = checksum(&bytes[..22]);
    if computed != bytes[22] {
        return Err(FrameError::BadChecksum {
            computed,
            carried: bytes[22],
        });
    }
    if bytes[1] != MSG_VITALS {
        return Err(FrameError::BadType(bytes[1]));
    }
    let word = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as f64;
    let mut ts = [0u8; 8];
    ts.copy_from_slice(&bytes[2..10]);
    let sample = VitalsSample {
        timestamp_ms: u64::from_le_bytes(ts),
        spo2_pct: word(10) / SPO2_SCALE,
        hr_bpm: word(12) / HR_SCALE,
        temp_c: word(14) / TEMP_SCALE,
        activity_level: word(16) / ACTIVITY_SCALE,
    };
    sample.validate().map_err(FrameError::InvalidSample)?;
    Ok(sample)
}

/// Snaps every field to the value the wire format can carry.
pub fn quantize(s: &VitalsSample) -> VitalsSample {
    let q = |v: f64, k: f64| (v * k).round() / k;
    VitalsSample {
        timestamp_ms: s.timestamp_ms,
        spo2_pct: q(s.spo2_pct, SPO2_SCALE),
        hr_bpm: q(s.hr_bpm, HR_SCALE),
        temp_c: q(s.temp_c, TEMP_SCALE),
        activity_level: q(s.activity_level, ACTIVITY_SCALE),
    }
}

/// Incremental splitter for a byte stream of back-to-back frames.
///
/// A window starting with the sync byte is always consumed as a whole frame,
/// valid or not; bytes before a sync byte are skipped and reported once as
/// [`FrameError::Resync`]. A corrupted frame therefore yields exactly one error.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn next_frame(&mut self) -> Option<Result<VitalsSample, FrameError>> {
        if self.buf.is_empty() {
            return None;
        }
        if self.buf[0] != SYNC {
            let skip = self.buf.iter().position(|&b| b == SYNC).unwrap_or(self.buf.len());
            self.buf.drain(..skip);
            return Some(Err(FrameError::Resync(skip)));
        }
        if self.buf.len() < FRAME_LEN {
            return None;
        }
        let result = decode_frame(&self.buf[..FRAME_LEN]);
        self.buf.drain(..FRAME_LEN);
        Some(result)
    }
}

impl Iterator for FrameDecoder {
    type Item = Result<VitalsSample, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame()
    }
}
