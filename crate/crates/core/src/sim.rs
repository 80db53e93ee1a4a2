//! Accelerated end-to-end runs: simulated sensor, gateway and medical server
//! on one logical clock, with the cross-tier invariants checked afterwards.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::clock::{Clock, ManualClock};
use crate::domain::{AlertEvent, CellIdentity, LocationFix, PatientState, VitalsSample};
use crate::gateway::{
    Ack, CellDatabase, EventKind, ForwardPolicy, Gateway, GatewayConfig, GatewayEvent, LinkScript, PositionInput,
    PositionSource, ScriptedLink, SensorRegistration, SensorType, Uplink, UplinkError, DEFAULT_OUTBOX_CAPACITY,
};
use crate::sensor::{encode_frame, generate_stream, StreamConfig};
use crate::server::{IngestOutcome, MedicalServer, RecordEntry, ServerError, SessionUpload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Config(String),
    #[error("reading server records: {0}")]
    Records(String),
}

/// Everything one run needs. Scenario time starts at `stream.start_ms`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub patient_id: String,
    pub stream: StreamConfig,
    pub link: LinkScript,
    /// Up while the phone has a GPS fix.
    pub gps_coverage: LinkScript,
    pub gps_fix: LocationFix,
    pub cell: CellIdentity,
    pub cells: CellDatabase,
    pub policy: ForwardPolicy,
    pub outbox_capacity: usize,
    /// After the last sample, keep retrying the backlog once a second for
    /// this long.
    pub drain_s: u64,
    pub first_sequence_no: u64,
}

impl Scenario {
    pub fn new(patient_id: impl Into<String>, stream: StreamConfig, gps_fix: LocationFix, cell: CellIdentity) -> Self {
        Self {
            patient_id: patient_id.into(),
            stream,
            link: LinkScript::always_up(),
            gps_coverage: LinkScript::always_up(),
            gps_fix,
            cell,
            cells: CellDatabase::new(),
            policy: ForwardPolicy::default(),
            outbox_capacity: DEFAULT_OUTBOX_CAPACITY,
            drain_s: 0,
            first_sequence_no: 1,
        }
    }
}

/// Stationary patient whose GPS comes and goes with the coverage script.
pub struct ScriptedPosition {
    coverage: LinkScript,
    fix: LocationFix,
    cell: CellIdentity,
    origin_ms: u64,
}

impl ScriptedPosition {
    pub fn new(coverage: LinkScript, fix: LocationFix, cell: CellIdentity, origin_ms: u64) -> Self {
        Self {
            coverage,
            fix,
            cell,
            origin_ms,
        }
    }
}

impl PositionSource for ScriptedPosition {
    fn position_at(&mut self, timestamp_ms: u64) -> PositionInput {
        let t_s = timestamp_ms.saturating_sub(self.origin_ms) as f64 / 1000.0;
        PositionInput {
            gps: self.coverage.is_up(t_s).then_some(self.fix),
            cell: self.cell,
        }
    }
}

/// Uplink calling straight into an in-process server.
pub struct LocalUplink {
    server: Arc<MedicalServer>,
    token: String,
}

impl LocalUplink {
    pub fn new(server: Arc<MedicalServer>, token: impl Into<String>) -> Self {
        Self {
            server,
            token: token.into(),
        }
    }
}

impl Uplink for LocalUplink {
    fn is_available(&self) -> bool {
        true
    }

    fn upload(&mut self, upload: &SessionUpload) -> Result<Ack, UplinkError> {
        match self.server.ingest(&self.token, upload) {
            Ok(IngestOutcome::Accepted { state, .. }) => Ok(Ack::Accepted(state)),
            Ok(IngestOutcome::Duplicate) => Ok(Ack::Duplicate),
            Err(ServerError::Unauthorized) => Err(UplinkError::Rejected {
                status: 401,
                message: "unauthorized".into(),
            }),
            Err(ServerError::Validation(m)) => Err(UplinkError::Rejected { status: 422, message: m }),
            Err(e) => Err(UplinkError::Transport(e.to_string())),
        }
    }
}

/// Read access to what the server stored, for post-run checks.
pub trait RecordSource {
    fn history(&self, patient_id: &str) -> Result<Vec<RecordEntry>, String>;
}

impl RecordSource for MedicalServer {
    fn history(&self, patient_id: &str) -> Result<Vec<RecordEntry>, String> {
        self.query_history(patient_id, 0, u64::MAX).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub max_ms: u64,
}

impl LatencyStats {
    fn from_samples(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let pick = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            count: v.len(),
            mean_ms: v.iter().sum::<u64>() as f64 / v.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: *v.last().expect("non-empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub patient_id: String,
    pub duration_s: f64,
    pub link_down_s: f64,
    pub frames: usize,
    pub frame_errors: usize,
    pub forward_decisions: usize,
    pub suppressed: usize,
    /// Delivered as soon as they were forwarded.
    pub forwarded: usize,
    /// Had to wait in the outbox.
    pub buffered: usize,
    /// Buffered entries delivered later.
    pub flushed: usize,
    pub dropped: usize,
    pub still_buffered: usize,
    pub uploaded: usize,
    pub duplicates: usize,
    pub unlocated: usize,
    pub stored: usize,
    pub alerts: Vec<AlertEvent>,
    /// From sample time to server acknowledgment, in simulated time.
    pub latency: LatencyStats,
    pub violations: Vec<String>,
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_table(&self) -> String {
        let rows: [(&str, String); 14] = [
            ("frames", self.frames.to_string()),
            ("frame errors", self.frame_errors.to_string()),
            ("forward decisions", self.forward_decisions.to_string()),
            ("suppressed", self.suppressed.to_string()),
            ("forwarded", self.forwarded.to_string()),
            ("buffered", self.buffered.to_string()),
            ("flushed", self.flushed.to_string()),
            ("dropped", self.dropped.to_string()),
            ("still buffered", self.still_buffered.to_string()),
            ("stored by server", self.stored.to_string()),
            ("alerts", self.alerts.len().to_string()),
            ("link down (s)", format!("{:.0}", self.link_down_s)),
            (
                "latency p50/p95/max (ms)",
                format!("{}/{}/{}", self.latency.p50_ms, self.latency.p95_ms, self.latency.max_ms),
            ),
            ("violations", self.violations.len().to_string()),
        ];
        let mut out: String = rows.iter().map(|(k, v)| format!("{k:<26}{v}\n")).collect();
        for v in &self.violations {
            out.push_str(&format!("  violation: {v}\n"));
        }
        out
    }
}

/// A finished run: the report plus the raw material behind it.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub events: Vec<GatewayEvent>,
    /// Server entries written during this run.
    pub records: Vec<RecordEntry>,
}

/// Streams the scenario's frames through a gateway on `uplink`, advancing
/// `clock` to each sample's timestamp, then audits the server's records.
pub fn run_scenario<U: Uplink>(
    sc: &Scenario,
    uplink: U,
    clock: Arc<ManualClock>,
    records: &dyn RecordSource,
) -> Result<RunOutcome, SimError> {
    let samples = generate_stream(&sc.stream).map_err(|e| SimError::Config(e.to_string()))?;
    let origin = sc.stream.start_ms;
    clock.set(origin);
    let dyn_clock: Arc<dyn Clock> = clock.clone();
    let link = ScriptedLink::new(uplink, sc.link.clone(), dyn_clock.clone(), origin);
    let sensor = SensorRegistration::new("sensor-1", SensorType::PulseOximeter, sc.stream.hz, sc.stream.mode);
    let positions = ScriptedPosition::new(sc.gps_coverage.clone(), sc.gps_fix, sc.cell, origin);
    let cfg = GatewayConfig {
        patient_id: sc.patient_id.clone(),
        policy: sc.policy,
        outbox_capacity: sc.outbox_capacity,
        first_sequence_no: sc.first_sequence_no,
    };
    let mut gw = Gateway::new(cfg, sensor, sc.cells.clone(), link, Box::new(positions), dyn_clock)
        .map_err(|e| SimError::Config(e.to_string()))?;

    let mut events = Vec::new();
    for s in &samples {
        clock.set(s.timestamp_ms);
        let frame = encode_frame(s).map_err(|e| SimError::Config(e.to_string()))?;
        events.extend(gw.push_bytes(frame.as_bytes()));
    }
    let end_ms = samples.last().map_or(origin, |s| s.timestamp_ms);
    for k in 0..=sc.drain_s {
        if gw.outbox().is_empty() {
            break;
        }
        clock.set(end_ms + k * 1000);
        events.extend(gw.flush());
    }

    let history = records.history(&sc.patient_id).map_err(SimError::Records)?;
    let report = audit(sc, &gw, &events, &history);
    let records = history
        .into_iter()
        .filter(|e| e.upload.sequence_no >= sc.first_sequence_no)
        .collect();
    Ok(RunOutcome { report, events, records })
}

fn audit<U: Uplink>(sc: &Scenario, gw: &Gateway<U>, events: &[GatewayEvent], history: &[RecordEntry]) -> RunReport {
    let stats = gw.stats();
    let still_buffered = gw.outbox().len();
    let mut violations = Vec::new();

    if stats.forward_decisions != stats.uploaded() + still_buffered + stats.dropped {
        violations.push(format!(
            "forwards {} != uploaded {} + still buffered {} + dropped {}",
            stats.forward_decisions,
            stats.uploaded(),
            still_buffered,
            stats.dropped
        ));
    }
    if stats.buffered != stats.flushed + still_buffered + stats.dropped {
        violations.push(format!(
            "buffered {} != flushed {} + still buffered {} + dropped {}",
            stats.buffered, stats.flushed, still_buffered, stats.dropped
        ));
    }

    // What the gateway sent, and when each sequence number was acknowledged.
    let mut sent: BTreeMap<u64, (VitalsSample, Option<LocationFix>)> = BTreeMap::new();
    let mut acked_at: BTreeMap<u64, u64> = BTreeMap::new();
    for ev in events {
        match &ev.kind {
            EventKind::Forwarded {
                sequence_no,
                sample,
                location,
            } => {
                sent.insert(*sequence_no, (*sample, *location));
                acked_at.insert(*sequence_no, ev.at_ms);
            }
            EventKind::Buffered {
                sequence_no,
                sample,
                location,
            } => {
                sent.insert(*sequence_no, (*sample, *location));
            }
            EventKind::Flushed { sequence_nos } => {
                for s in sequence_nos {
                    acked_at.insert(*s, ev.at_ms);
                }
            }
            _ => {}
        }
    }

    let run: Vec<&RecordEntry> = history
        .iter()
        .filter(|e| e.upload.sequence_no >= sc.first_sequence_no)
        .collect();
    let stored: Vec<u64> = run.iter().map(|e| e.upload.sequence_no).collect();
    let acked: Vec<u64> = acked_at.keys().copied().collect();
    if stored != acked {
        let lost: Vec<&u64> = acked.iter().filter(|s| !stored.contains(s)).collect();
        let extra: Vec<&u64> = stored.iter().filter(|s| !acked.contains(s)).collect();
        violations.push(format!(
            "server record differs from acknowledged uploads: lost {lost:?}, unexpected {extra:?}"
        ));
    }
    if stored.windows(2).any(|w| w[0] >= w[1]) {
        violations.push("server record out of sequence order".into());
    }
    for e in &run {
        match sent.get(&e.upload.sequence_no) {
            Some((s, loc)) if *s == e.upload.sample && *loc == e.upload.location => {}
            _ => violations.push(format!("stored entry {} does not match what was sent", e.upload.sequence_no)),
        }
    }

    let mut prev = PatientState::Normal;
    let mut rises = 0;
    for state in history.iter().filter_map(|e| e.state) {
        if prev == PatientState::Normal && state == PatientState::Anomaly {
            rises += 1;
        }
        prev = state;
    }
    let all_alerts = history.iter().filter(|e| e.alert_ms.is_some()).count();
    if all_alerts != rises {
        violations.push(format!("{all_alerts} alerts for {rises} Normal->Anomaly transitions"));
    }
    let alerts: Vec<AlertEvent> = run.iter().filter_map(|e| e.alert()).collect();
    for a in &alerts {
        if !a.is_well_formed() {
            violations.push(format!("malformed alert {a:?}"));
        }
    }

    let latencies = acked_at
        .iter()
        .filter_map(|(seq, at)| sent.get(seq).map(|(s, _)| at.saturating_sub(s.timestamp_ms)))
        .collect();

    RunReport {
        patient_id: sc.patient_id.clone(),
        duration_s: sc.stream.duration_s,
        link_down_s: sc.link.down_time(sc.stream.duration_s),
        frames: stats.frames,
        frame_errors: stats.frame_errors,
        forward_decisions: stats.forward_decisions,
        suppressed: stats.suppressed,
        forwarded: stats.forwarded,
        buffered: stats.buffered,
        flushed: stats.flushed,
        dropped: stats.dropped,
        still_buffered,
        uploaded: stats.uploaded(),
        duplicates: stats.duplicates,
        unlocated: stats.unlocated,
        stored: stored.len(),
        alerts,
        latency: LatencyStats::from_samples(latencies),
        violations,
    }
}

/// Runs `sc` against a fresh in-memory server sharing the simulation clock.
pub fn run_in_process(sc: &Scenario, model: Option<crate::engine::MlpModel>) -> Result<(RunOutcome, Arc<MedicalServer>), SimError> {
    let clock = Arc::new(ManualClock::new(sc.stream.start_ms));
    let mut tokens = crate::server::TokenTable::new();
    tokens.insert("sim-token", sc.patient_id.clone()).map_err(SimError::Config)?;
    let server = Arc::new(MedicalServer::in_memory(tokens, model, clock.clone()));
    let outcome = run_scenario(sc, LocalUplink::new(server.clone(), "sim-token"), clock, server.as_ref())?;
    Ok((outcome, server))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LocationSource;
    use crate::gateway::{LinkState, LinkWindow};
    use crate::sensor::{EpisodeScript, PatientProfile};
    use crate::sensor::generator::Gaussian;

    fn fix() -> LocationFix {
        LocationFix {
            lat_deg: 34.8828,
            lon_deg: -1.3167,
            source: LocationSource::Gps,
            accuracy_m: 5.0,
        }
    }

    fn scenario(duration_s: f64) -> Scenario {
        let stream = StreamConfig::new(EpisodeScript::baseline(), 1.0, duration_s, 7);
        Scenario::new("p1", stream, fix(), CellIdentity::new(603, 1, 1000, 42).unwrap())
    }

    #[test]
    fn constant_vitals_forward_only_heartbeats() {
        let mut sc = scenario(600.0);
        let flat = |m: f64| Gaussian::new(m, 0.0);
        sc.stream.profile = PatientProfile {
            spo2: flat(97.0),
            hr: flat(72.0),
            temp: flat(36.8),
            activity: flat(0.2),
        };
        let (out, _) = run_in_process(&sc, None).unwrap();
        assert_eq!(out.report.forward_decisions, 10);
        assert_eq!(out.report.suppressed, 590);
        assert!(out.report.is_clean(), "{:?}", out.report.violations);
    }

    #[test]
    fn outage_loses_nothing() {
        let mut sc = scenario(600.0);
        sc.link = LinkScript::new(vec![LinkWindow {
            start_s: 200.0,
            end_s: 400.0,
            state: LinkState::Down,
        }])
        .unwrap();
        let (out, _) = run_in_process(&sc, None).unwrap();
        let r = &out.report;
        assert!(r.buffered > 0);
        assert_eq!(r.flushed, r.buffered);
        assert_eq!(r.stored, r.forward_decisions);
        assert!(r.is_clean(), "{:?}", r.violations);
        assert!(r.latency.max_ms >= 100_000);
    }

    #[test]
    fn tiny_outbox_drops_but_balances() {
        let mut sc = scenario(600.0);
        sc.outbox_capacity = 3;
        sc.link = LinkScript::outage(100.0, 500.0).unwrap();
        let (out, _) = run_in_process(&sc, None).unwrap();
        let r = &out.report;
        assert!(r.dropped > 0);
        assert_eq!(r.stored + r.dropped, r.forward_decisions);
        assert!(r.is_clean(), "{:?}", r.violations);
    }

    #[test]
    fn outage_at_end_needs_drain() {
        let mut sc = scenario(300.0);
        sc.link = LinkScript::outage(250.0, 320.0).unwrap();
        let (out, _) = run_in_process(&sc, None).unwrap();
        assert!(out.report.still_buffered > 0);
        assert!(out.report.is_clean());
        sc.drain_s = 60;
        let (out, _) = run_in_process(&sc, None).unwrap();
        assert_eq!(out.report.still_buffered, 0);
    }

    #[test]
    fn gps_loss_falls_back_to_cell() {
        let mut sc = scenario(300.0);
        sc.gps_coverage = LinkScript::outage(0.0, 300.0).unwrap();
        sc.cells
            .insert(
                sc.cell,
                crate::gateway::CellRecord {
                    lat_deg: 34.9,
                    lon_deg: -1.3,
                    accuracy_m: 800.0,
                },
            )
            .unwrap();
        let (out, _) = run_in_process(&sc, None).unwrap();
        assert!(out
            .records
            .iter()
            .all(|e| e.upload.location.map(|l| l.source) == Some(LocationSource::Cell)));
    }

    #[test]
    fn latency_percentiles() {
        let l = LatencyStats::from_samples(vec![5, 1, 3, 2, 4]);
        assert_eq!((l.count, l.p50_ms, l.p95_ms, l.max_ms), (5, 3, 5, 5));
        assert_eq!(l.mean_ms, 3.0);
    }
}
