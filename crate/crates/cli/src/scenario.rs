//! Flat TOML scenario files for `simulate` and `sensor`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vitalink::gateway::{CellDatabase, ForwardPolicy, LinkScript, DEFAULT_OUTBOX_CAPACITY};
use vitalink::sensor::generator::Gaussian;
use vitalink::sensor::{EpisodeKind, EpisodeScript, PatientProfile, ReportingMode, Segment, StreamConfig};
use vitalink::sim::Scenario;
use vitalink::{CellIdentity, LocationFix, LocationSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub patient_id: String,
    pub duration_s: f64,
    pub sampling_hz: f64,
    /// `raw`, `event` or `averaged`.
    pub mode: String,
    pub average_window_s: u32,
    pub start_ms: u64,
    /// Overrides the global `--seed` when set.
    pub seed: Option<u64>,
    /// `kind:start_s:end_s`, e.g. `hypoxia:120:180`.
    pub episodes: Vec<String>,

    pub spo2_mean: f64,
    pub spo2_sd: f64,
    pub hr_mean: f64,
    pub hr_sd: f64,
    pub temp_mean: f64,
    pub temp_sd: f64,
    pub activity_mean: f64,
    pub activity_sd: f64,

    pub link_script: Option<PathBuf>,
    /// Same format as the link script; `up` means the phone has GPS.
    pub gps_script: Option<PathBuf>,
    pub cells: Option<PathBuf>,
    pub gps_lat: f64,
    pub gps_lon: f64,
    pub gps_accuracy_m: f64,
    /// `mcc-mnc-lac-ci`.
    pub cell: String,

    pub delta_spo2: f64,
    pub delta_hr: f64,
    pub delta_temp: f64,
    pub delta_activity: f64,
    pub heartbeat_s: u64,
    pub outbox_capacity: usize,
    pub drain_s: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let p = PatientProfile::default();
        let f = ForwardPolicy::default();
        Self {
            patient_id: "p1".into(),
            duration_s: 600.0,
            sampling_hz: 1.0,
            mode: "raw".into(),
            average_window_s: 10,
            start_ms: 0,
            seed: None,
            episodes: Vec::new(),
            spo2_mean: p.spo2.mean,
            spo2_sd: p.spo2.sd,
            hr_mean: p.hr.mean,
            hr_sd: p.hr.sd,
            temp_mean: p.temp.mean,
            temp_sd: p.temp.sd,
            activity_mean: p.activity.mean,
            activity_sd: p.activity.sd,
            link_script: None,
            gps_script: None,
            cells: None,
            gps_lat: 34.8828,
            gps_lon: -1.3167,
            gps_accuracy_m: 5.0,
            cell: "603-1-1000-42".into(),
            delta_spo2: f.delta_spo2,
            delta_hr: f.delta_hr,
            delta_temp: f.delta_temp,
            delta_activity: f.delta_activity,
            heartbeat_s: f.heartbeat_s,
            outbox_capacity: DEFAULT_OUTBOX_CAPACITY,
            drain_s: 300,
        }
    }
}

pub fn parse_kind(s: &str) -> Result<EpisodeKind> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "baseline" => EpisodeKind::Baseline,
        "hypoxia" => EpisodeKind::Hypoxia,
        "tachycardia" => EpisodeKind::Tachycardia,
        "fever" => EpisodeKind::Fever,
        "motion" => EpisodeKind::Motion,
        other => bail!("unknown episode kind {other:?}"),
    })
}

pub fn parse_cell(s: &str) -> Result<CellIdentity> {
    let parts: Vec<&str> = s.split(['-', ',']).map(str::trim).collect();
    let [mcc, mnc, lac, ci] = parts.as_slice() else {
        bail!("cell {s:?} should be mcc-mnc-lac-ci");
    };
    Ok(CellIdentity::new(mcc.parse()?, mnc.parse()?, lac.parse()?, ci.parse()?)?)
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn script(&self) -> Result<EpisodeScript> {
        let mut segs = Vec::new();
        for e in &self.episodes {
            let parts: Vec<&str> = e.split(':').collect();
            let [kind, start, end] = parts.as_slice() else {
                bail!("episode {e:?} should be kind:start_s:end_s");
            };
            segs.push(Segment::new(start.trim().parse()?, end.trim().parse()?, parse_kind(kind.trim())?));
        }
        segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        let script = EpisodeScript(segs);
        script.validate()?;
        Ok(script)
    }

    pub fn stream(&self, global_seed: u64) -> Result<StreamConfig> {
        if !(self.duration_s > 0.0) {
            bail!("duration_s must be positive");
        }
        let mode = match self.mode.as_str() {
            "raw" => ReportingMode::Raw,
            "event" => ReportingMode::Event,
            "averaged" => ReportingMode::Averaged {
                window_s: self.average_window_s,
            },
            other => bail!("unknown mode {other:?}"),
        };
        Ok(StreamConfig {
            profile: PatientProfile {
                spo2: Gaussian::new(self.spo2_mean, self.spo2_sd),
                hr: Gaussian::new(self.hr_mean, self.hr_sd),
                temp: Gaussian::new(self.temp_mean, self.temp_sd),
                activity: Gaussian::new(self.activity_mean, self.activity_sd),
            },
            script: self.script()?,
            mode,
            hz: self.sampling_hz,
            duration_s: self.duration_s,
            start_ms: self.start_ms,
            seed: self.seed.unwrap_or(global_seed),
        })
    }

    pub fn policy(&self) -> ForwardPolicy {
        ForwardPolicy {
            delta_spo2: self.delta_spo2,
            delta_hr: self.delta_hr,
            delta_temp: self.delta_temp,
            delta_activity: self.delta_activity,
            heartbeat_s: self.heartbeat_s,
        }
    }

    pub fn gps_fix(&self) -> LocationFix {
        LocationFix {
            lat_deg: self.gps_lat,
            lon_deg: self.gps_lon,
            source: LocationSource::Gps,
            accuracy_m: self.gps_accuracy_m,
        }
    }

    /// Resolves file references relative to `base` (the config's directory).
    pub fn scenario(&self, global_seed: u64, base: &Path) -> Result<Scenario> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let fix = self.gps_fix();
        fix.validate()?;
        let mut sc = Scenario::new(self.patient_id.clone(), self.stream(global_seed)?, fix, parse_cell(&self.cell)?);
        if let Some(p) = &self.link_script {
            sc.link = LinkScript::load(&resolve(p))?;
        }
        if let Some(p) = &self.gps_script {
            sc.gps_coverage = LinkScript::load(&resolve(p))?;
        }
        if let Some(p) = &self.cells {
            sc.cells = CellDatabase::load(&resolve(p))?;
        }
        sc.policy = self.policy();
        sc.policy.validate()?;
        sc.outbox_capacity = self.outbox_capacity;
        sc.drain_s = self.drain_s;
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_file_round_trip() {
        let c: ScenarioConfig = toml::from_str(
            "duration_s = 300\nepisodes = [\"hypoxia:60:120\", \"fever:200:260\"]\nheartbeat_s = 30\ncell = \"603,1,1000,42\"\n",
        )
        .unwrap();
        let sc = c.scenario(4, Path::new(".")).unwrap();
        assert_eq!(sc.stream.script.segments().len(), 2);
        assert_eq!(sc.stream.seed, 4);
        assert_eq!(sc.policy.heartbeat_s, 30);
        assert_eq!(sc.cell.ci, 42);
    }

    #[test]
    fn bad_values() {
        let bad = |text: &str| toml::from_str::<ScenarioConfig>(text).map_err(anyhow::Error::from).and_then(|c| c.scenario(0, Path::new(".")));
        assert!(bad("episodes = [\"zombie:1:2\"]").is_err());
        assert!(bad("episodes = [\"hypoxia:10:5\"]").is_err());
        assert!(bad("duration_s = 0").is_err());
        assert!(bad("cell = \"1-2-3\"").is_err());
        assert!(bad("mode = \"loud\"").is_err());
        assert!(bad("unknown_key = 1").is_err());
        assert!(bad("link_script = \"/nonexistent.csv\"").is_err());
    }
}
