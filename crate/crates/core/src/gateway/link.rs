use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::gateway::{Ack, ConfigError, Uplink, UplinkError};
use crate::server::SessionUpload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkState {
    Up,
    Down,
}

/// `[start_s, end_s)` with a fixed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkWindow {
    pub start_s: f64,
    pub end_s: f64,
    pub state: LinkState,
}

/// Piecewise link availability over scenario time. Time not covered by any
/// window is up.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkScript {
    pub windows: Vec<LinkWindow>,
}

impl LinkScript {
    pub fn always_up() -> Self {
        Self::default()
    }

    pub fn new(mut windows: Vec<LinkWindow>) -> Result<Self, ConfigError> {
        windows.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for w in &windows {
            if !(w.start_s >= 0.0 && w.end_s > w.start_s && w.end_s.is_finite()) {
                return Err(ConfigError::Script(format!("bad window [{}, {})", w.start_s, w.end_s)));
            }
        }
        if let Some(p) = windows.windows(2).find(|p| p[1].start_s < p[0].end_s) {
            return Err(ConfigError::Script(format!(
                "windows starting at {} and {} overlap",
                p[0].start_s, p[1].start_s
            )));
        }
        Ok(Self { windows })
    }

    /// Down between `start_s` and `end_s`, up elsewhere.
    pub fn outage(start_s: f64, end_s: f64) -> Result<Self, ConfigError> {
        Self::new(vec![LinkWindow {
            start_s,
            end_s,
            state: LinkState::Down,
        }])
    }

    /// Reads `start_s,end_s,state` rows with state `up` or `down`.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, ConfigError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let rows = r
            .deserialize::<LinkWindow>()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| ConfigError::Script(format!("line {}: {e}", i + 2))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let f = File::open(path).map_err(|e| ConfigError::Script(format!("{}: {e}", path.display())))?;
        Self::from_csv(f)
    }

    pub fn state_at(&self, t_s: f64) -> LinkState {
        self.windows
            .iter()
            .find(|w| w.start_s <= t_s && t_s < w.end_s)
            .map_or(LinkState::Up, |w| w.state)
    }

    pub fn is_up(&self, t_s: f64) -> bool {
        self.state_at(t_s) == LinkState::Up
    }

    /// Seconds of `[0, duration_s)` spent down.
    pub fn down_time(&self, duration_s: f64) -> f64 {
        self.windows
            .iter()
            .filter(|w| w.state == LinkState::Down)
            .map(|w| (w.end_s.min(duration_s) - w.start_s).max(0.0))
            .sum()
    }
}

/// An uplink that is unavailable whenever the script says the link is down.
/// Scenario time is `clock - origin_ms`.
pub struct ScriptedLink<U> {
    inner: U,
    script: LinkScript,
    clock: Arc<dyn Clock>,
    origin_ms: u64,
}

impl<U> ScriptedLink<U> {
    pub fn new(inner: U, script: LinkScript, clock: Arc<dyn Clock>, origin_ms: u64) -> Self {
        Self {
            inner,
            script,
            clock,
            origin_ms,
        }
    }

    pub fn inner(&self) -> &U {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut U {
        &mut self.inner
    }

    fn scenario_s(&self) -> f64 {
        self.clock.now_ms().saturating_sub(self.origin_ms) as f64 / 1000.0
    }
}

impl<U: Uplink> Uplink for ScriptedLink<U> {
    fn is_available(&self) -> bool {
        self.script.is_up(self.scenario_s()) && self.inner.is_available()
    }

    fn upload(&mut self, upload: &SessionUpload) -> Result<Ack, UplinkError> {
        if !self.script.is_up(self.scenario_s()) {
            return Err(UplinkError::Unavailable);
        }
        self.inner.upload(upload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_script() {
        let s = LinkScript::from_csv("start_s,end_s,state\n60,120,down\n120,130,up\n".as_bytes()).unwrap();
        assert!(s.is_up(59.999));
        assert!(!s.is_up(60.0));
        assert!(!s.is_up(119.9));
        assert!(s.is_up(120.0));
        assert_eq!(s.down_time(600.0), 60.0);
    }

    #[test]
    fn malformed_scripts() {
        assert!(LinkScript::from_csv("start_s,end_s,state\n60,120,sideways\n".as_bytes()).is_err());
        assert!(LinkScript::from_csv("start_s,end_s,state\n60,50,down\n".as_bytes()).is_err());
        assert!(LinkScript::from_csv("start_s,end_s,state\n0,100,down\n50,150,up\n".as_bytes()).is_err());
    }
}
