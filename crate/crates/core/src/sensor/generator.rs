//! Seeded vitals stream generator with scripted clinical episodes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{SampleField, VitalsSample};
use crate::sensor::label::label_oracle;

/// Length of the linear onset and offset ramps of every episode.
pub const RAMP_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        // sd is validated non-negative before any draw
        Normal::new(self.mean, self.sd).expect("finite sd").sample(rng)
    }
}

/// Per-patient baseline distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatientProfile {
    pub spo2: Gaussian,
    pub hr: Gaussian,
    pub temp: Gaussian,
    pub activity: Gaussian,
}

impl Default for PatientProfile {
    fn default() -> Self {
        Self {
            spo2: Gaussian::new(97.0, 0.5),
            hr: Gaussian::new(72.0, 3.0),
            temp: Gaussian::new(36.8, 0.15),
            activity: Gaussian::new(0.2, 0.05),
        }
    }
}

impl PatientProfile {
    fn baseline(&self, field: SampleField) -> Gaussian {
        match field {
            SampleField::SpO2Pct => self.spo2,
            SampleField::HrBpm => self.hr,
            SampleField::TempC => self.temp,
            SampleField::ActivityLevel => self.activity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpisodeKind {
    Baseline,
    Hypoxia,
    Tachycardia,
    Fever,
    /// The patient is moving about: clinically normal, but probe motion
    /// makes the oximeter under-read.
    Motion,
}

/// Activity level a patient sinks to during a clinical episode.
pub const EPISODE_ACTIVITY: Gaussian = Gaussian::new(0.05, 0.02);
pub const MOTION_ACTIVITY: Gaussian = Gaussian::new(0.8, 0.05);

/// Activity above which the pulse oximeter starts under-reading SpO2.
pub const MOTION_ONSET: f64 = 0.4;
/// Reported SpO2 loss, in percentage points per unit of activity above
/// [`MOTION_ONSET`].
pub const MOTION_SPO2_LOSS: f64 = 25.0;

impl EpisodeKind {
    /// Fields an episode drives and the level each is driven toward.
    pub fn effects(self) -> &'static [(SampleField, Gaussian)] {
        const HYPOXIA: [(SampleField, Gaussian); 2] = [
            (SampleField::SpO2Pct, Gaussian::new(85.0, 2.0)),
            (SampleField::ActivityLevel, EPISODE_ACTIVITY),
        ];
        const TACHYCARDIA: [(SampleField, Gaussian); 2] = [
            (SampleField::HrBpm, Gaussian::new(150.0, 10.0)),
            (SampleField::ActivityLevel, EPISODE_ACTIVITY),
        ];
        const FEVER: [(SampleField, Gaussian); 2] = [
            (SampleField::TempC, Gaussian::new(39.5, 0.3)),
            (SampleField::ActivityLevel, EPISODE_ACTIVITY),
        ];
        const MOTION: [(SampleField, Gaussian); 1] = [(SampleField::ActivityLevel, MOTION_ACTIVITY)];
        match self {
            EpisodeKind::Baseline => &[],
            EpisodeKind::Hypoxia => &HYPOXIA,
            EpisodeKind::Tachycardia => &TACHYCARDIA,
            EpisodeKind::Fever => &FEVER,
            EpisodeKind::Motion => &MOTION,
        }
    }

    pub fn is_clinical(self) -> bool {
        matches!(self, EpisodeKind::Hypoxia | EpisodeKind::Tachycardia | EpisodeKind::Fever)
    }
}

/// What the oximeter reports for a patient whose true state is `truth`.
pub fn motion_artifact(truth: &VitalsSample) -> VitalsSample {
    let excess = (truth.activity_level - MOTION_ONSET).max(0.0);
    VitalsSample {
        spo2_pct: clip(SampleField::SpO2Pct, truth.spo2_pct - MOTION_SPO2_LOSS * excess),
        ..*truth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: EpisodeKind,
}

impl Segment {
    pub fn new(start_s: f64, end_s: f64, kind: EpisodeKind) -> Self {
        Self { start_s, end_s, kind }
    }

    /// Episode intensity in [0, 1] at `t`: zero outside, linear ramps of
    /// [`RAMP_S`] at both ends inside.
    pub fn weight(&self, t: f64) -> f64 {
        if t < self.start_s || t >= self.end_s {
            return 0.0;
        }
        ((t - self.start_s) / RAMP_S).min((self.end_s - t) / RAMP_S).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpisodeScript(pub Vec<Segment>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScriptError {
    #[error("segment {index} has start {start_s} >= end {end_s}")]
    Empty { index: usize, start_s: f64, end_s: f64 },
    #[error("segment {index} overlaps or precedes the one before it")]
    Overlap { index: usize },
    #[error("sampling rate must be positive, got {0}")]
    Rate(f64),
    #[error("averaging window must be at least 1 s")]
    Window,
    #[error("profile distribution for {0} has a negative or non-finite spread")]
    Profile(SampleField),
}

impl EpisodeScript {
    pub fn baseline() -> Self {
        Self(Vec::new())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        for (index, seg) in self.0.iter().enumerate() {
            if !(seg.start_s < seg.end_s) {
                return Err(ScriptError::Empty {
                    index,
                    start_s: seg.start_s,
                    end_s: seg.end_s,
                });
            }
            if index > 0 && seg.start_s < self.0[index - 1].end_s {
                return Err(ScriptError::Overlap { index });
            }
        }
        Ok(())
    }

    pub fn active_at(&self, t: f64) -> Option<(usize, &Segment)> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, s)| t >= s.start_s && t < s.end_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportingMode {
    /// Every sample.
    Raw,
    /// Only samples where the clinical label changes (plus the first).
    Event,
    /// Arithmetic mean of each complete `window_s` window.
    Averaged { window_s: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub profile: PatientProfile,
    pub script: EpisodeScript,
    pub mode: ReportingMode,
    pub hz: f64,
    pub duration_s: f64,
    pub start_ms: u64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(script: EpisodeScript, hz: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            profile: PatientProfile::default(),
            script,
            mode: ReportingMode::Raw,
            hz,
            duration_s,
            start_ms: 0,
            seed,
        }
    }
}

fn clip(field: SampleField, v: f64) -> f64 {
    let r = field.range();
    v.clamp(*r.start(), *r.end())
}

/// One tick of the simulated patient: the true physiological state and the
/// reading the sensor reports for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub truth: VitalsSample,
    pub reported: VitalsSample,
}

/// Per-tick observations, before the reporting mode is applied.
pub fn observe(cfg: &StreamConfig) -> Result<Vec<Observation>, ScriptError> {
    if !(cfg.hz > 0.0 && cfg.hz.is_finite()) {
        return Err(ScriptError::Rate(cfg.hz));
    }
    for field in SampleField::ALL {
        let g = cfg.profile.baseline(field);
        if !(g.sd >= 0.0 && g.sd.is_finite() && g.mean.is_finite()) {
            return Err(ScriptError::Profile(field));
        }
    }
    cfg.script.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // One level per (episode, driven field), drawn up front.
    let levels: Vec<Vec<f64>> = cfg
        .script
        .segments()
        .iter()
        .map(|seg| seg.kind.effects().iter().map(|(_, g)| g.sample(&mut rng)).collect())
        .collect();

    let n = (cfg.duration_s * cfg.hz).floor().max(0.0) as u64;
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let t = i as f64 / cfg.hz;
        let mut truth = VitalsSample {
            timestamp_ms: cfg.start_ms + (i as f64 * 1000.0 / cfg.hz).round() as u64,
            spo2_pct: 0.0,
            hr_bpm: 0.0,
            temp_c: 0.0,
            activity_level: 0.0,
        };
        for field in SampleField::ALL {
            *truth.field_mut(field) = cfg.profile.baseline(field).sample(&mut rng);
        }
        if let Some((idx, seg)) = cfg.script.active_at(t) {
            let w = seg.weight(t);
            for ((field, _), level) in seg.kind.effects().iter().zip(&levels[idx]) {
                *truth.field_mut(*field) += w * (level - cfg.profile.baseline(*field).mean);
            }
        }
        for field in SampleField::ALL {
            *truth.field_mut(field) = clip(field, truth.field(field));
        }
        out.push(Observation {
            truth,
            reported: motion_artifact(&truth),
        });
    }
    Ok(out)
}

/// Generates the stream a sensor node would report under `cfg`.
/// Output is a pure function of `cfg`.
pub fn generate_stream(cfg: &StreamConfig) -> Result<Vec<VitalsSample>, ScriptError> {
    if let ReportingMode::Averaged { window_s: 0 } = cfg.mode {
        return Err(ScriptError::Window);
    }
    let reported: Vec<VitalsSample> = observe(cfg)?.into_iter().map(|o| o.reported).collect();
    Ok(apply_mode(&reported, cfg.mode, cfg.hz))
}

pub fn apply_mode(raw: &[VitalsSample], mode: ReportingMode, hz: f64) -> Vec<VitalsSample> {
    match mode {
        ReportingMode::Raw => raw.to_vec(),
        ReportingMode::Event => {
            let mut last = None;
            raw.iter()
                .filter(|s| {
                    let label = Some(label_oracle(s));
                    let changed = label != last;
                    last = label;
                    changed
                })
                .copied()
                .collect()
        }
        ReportingMode::Averaged { window_s } => {
            let per_window = ((window_s as f64 * hz).round() as usize).max(1);
            raw.chunks_exact(per_window).map(mean_of).collect()
        }
    }
}

// Running mean, so a window of identical values reproduces that value exactly.
fn mean_of(window: &[VitalsSample]) -> VitalsSample {
    let mut acc = window[0];
    for (k, s) in window.iter().enumerate().skip(1) {
        let n = (k + 1) as f64;
        for field in SampleField::ALL {
            let m = acc.field_mut(field);
            *m += (s.field(field) - *m) / n;
        }
    }
    acc.timestamp_ms = window[window.len() - 1].timestamp_ms;
    acc
}
