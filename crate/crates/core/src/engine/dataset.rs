//! Labeled training sets: in-memory form, CSV files, and the synthetic
//! generator built on the sensor simulator.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{PatientState, VitalsSample};
use crate::engine::{normalize, EngineError, FeatureVector};
use crate::sensor::frame::quantize;
use crate::sensor::generator::{observe, EpisodeKind, EpisodeScript, Segment, StreamConfig};
use crate::sensor::label_oracle;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    rows: Vec<(FeatureVector, u8)>,
}

impl LabeledSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(rows: Vec<(FeatureVector, u8)>) -> Result<Self, EngineError> {
        if let Some(first) = rows.first() {
            let n = first.0.len();
            for (i, (x, label)) in rows.iter().enumerate() {
                if x.len() != n {
                    return Err(EngineError::DimensionMismatch { expected: n, got: x.len() });
                }
                if *label > 1 {
                    return Err(EngineError::Parse {
                        line: i + 1,
                        message: format!("label must be 0 or 1, got {label}"),
                    });
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn from_samples(samples: &[LabeledSample], n_inputs: usize) -> Result<Self, EngineError> {
        let rows = samples
            .iter()
            .map(|ls| Ok((normalize(&ls.sample, n_inputs)?, u8::from(ls.state))))
            .collect::<Result<Vec<_>, EngineError>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[(FeatureVector, u8)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Input width, or 0 for an empty set.
    pub fn n_inputs(&self) -> usize {
        self.rows.first().map_or(0, |(x, _)| x.len())
    }

    pub fn anomaly_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|(_, l)| *l == 1).count() as f64 / self.rows.len() as f64
    }
}

/// A raw-unit sample with its ground-truth state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub sample: VitalsSample,
    pub state: PatientState,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    spo2_pct: f64,
    hr_bpm: f64,
    temp_c: f64,
    activity_level: f64,
    label: u8,
}

pub fn write_csv<W: Write>(out: W, samples: &[LabeledSample]) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    for ls in samples {
        w.serialize(CsvRow {
            spo2_pct: ls.sample.spo2_pct,
            hr_bpm: ls.sample.hr_bpm,
            temp_c: ls.sample.temp_c,
            activity_level: ls.sample.activity_level,
            label: ls.state.into(),
        })
        .map_err(|e| EngineError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `spo2_pct,hr_bpm,temp_c,activity_level,label` rows in raw units.
/// Parse errors name the 1-based file line (the header is line 1).
pub fn read_csv<R: Read>(input: R) -> Result<Vec<LabeledSample>, EngineError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| EngineError::Parse {
            line: e.position().map_or(line, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let sample = VitalsSample::new(0, row.spo2_pct, row.hr_bpm, row.temp_c, row.activity_level);
        sample.validate().map_err(|v| EngineError::Parse {
            line,
            message: v.to_string(),
        })?;
        let state = PatientState::try_from(row.label).map_err(|message| EngineError::Parse { line, message })?;
        out.push(LabeledSample { sample, state });
    }
    Ok(out)
}

pub fn load_csv(path: &Path, n_inputs: usize) -> Result<LabeledSet, EngineError> {
    let samples = read_csv(File::open(path)?)?;
    LabeledSet::from_samples(&samples, n_inputs)
}

pub const DEFAULT_SET_SIZE: usize = 540;
pub const DEFAULT_ANOMALY_FRACTION: f64 = 0.3;

/// Seconds between consecutive instances of a synthetic set.
const INSTANCE_SPACING_S: f64 = 5.0;
const SLOT_S: f64 = 100.0;
const EPISODE_MIN_S: f64 = 60.0;
const EPISODE_MAX_S: f64 = 90.0;
/// Expected anomalous seconds per episode: the plateau plus the part of each
/// ramp past the clinical threshold (about 40% of each ramp).
const ANOMALOUS_S_PER_EPISODE: f64 = MEAN_EPISODE_S - 2.0 * 10.0 * 0.6;
const MEAN_EPISODE_S: f64 = (EPISODE_MIN_S + EPISODE_MAX_S) / 2.0;

/// Share of the timeline the patient spends moving about, when probe motion
/// makes the oximeter under-read a clinically normal patient.
pub const MOTION_FRACTION: f64 = 0.1;

/// Builds the episode script for a synthetic set. The timeline is cut into
/// slots; enough slots receive one randomly placed clinical episode (kinds
/// in rotation) to make
/// about `anomaly_fraction` of the time anomalous, and a further
/// [`MOTION_FRACTION`] of the time goes to motion.
pub fn synthetic_script(duration_s: f64, anomaly_fraction: f64, rng: &mut ChaCha8Rng) -> EpisodeScript {
    let slots = (duration_s / SLOT_S).floor() as usize;
    let clinical = (anomaly_fraction.clamp(0.0, 1.0) * duration_s / ANOMALOUS_S_PER_EPISODE).round() as usize;
    let clinical = clinical.min(slots);
    let motion = ((MOTION_FRACTION * duration_s / MEAN_EPISODE_S).round() as usize).min(slots - clinical);
    let mut order: Vec<usize> = (0..slots).collect();
    order.shuffle(rng);
    let clinical_kinds = [EpisodeKind::Hypoxia, EpisodeKind::Tachycardia, EpisodeKind::Fever];
    let mut picked: Vec<(usize, EpisodeKind)> = order
        .into_iter()
        .take(clinical + motion)
        .enumerate()
        .map(|(i, slot)| {
            let kind = if i < clinical {
                clinical_kinds[i % clinical_kinds.len()]
            } else {
                EpisodeKind::Motion
            };
            (slot, kind)
        })
        .collect();
    picked.sort_unstable_by_key(|(slot, _)| *slot);
    let segments = picked
        .into_iter()
        .map(|(slot, kind)| {
            let len = rng.random_range(EPISODE_MIN_S..=EPISODE_MAX_S);
            let start = slot as f64 * SLOT_S + rng.random_range(0.0..=(SLOT_S - len));
            Segment::new(start, start + len, kind)
        })
        .collect();
    EpisodeScript(segments)
}

/// `size` instances of a scripted stream. Each row holds the reading the
/// sensor reported, snapped to the wire lattice, and the [`label_oracle`]
/// verdict on the patient's true physiology at that instant.
pub fn synthetic_samples(size: usize, anomaly_fraction: f64, seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration_s = size as f64 * INSTANCE_SPACING_S;
    let script = synthetic_script(duration_s, anomaly_fraction, &mut rng);
    let cfg = StreamConfig::new(script, 1.0 / INSTANCE_SPACING_S, duration_s, rng.random());
    let observed = observe(&cfg).expect("synthetic script is well formed");
    observed
        .iter()
        .take(size)
        .map(|o| LabeledSample {
            sample: quantize(&o.reported),
            state: label_oracle(&quantize(&o.truth)),
        })
        .collect()
}

/// Seeded shuffle, then the first `train_fraction` of rows go to training.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (items.len() as f64 * train_fraction).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    (pick(&idx[..cut]), pick(&idx[cut..]))
}
