use std::io::{self, Read};
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::clock::Clock;
use crate::domain::{CellIdentity, LocationFix, VitalsSample};
use crate::gateway::{
    resolve_location, should_forward, Ack, CellDatabase, ConfigError, Enqueued, ForwardPolicy, Outbox, Registry,
    SensorRegistration, Session, Uplink, DEFAULT_OUTBOX_CAPACITY,
};
use crate::sensor::{FrameDecoder, FrameError};

/// What the phone knows about its position at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionInput {
    pub gps: Option<LocationFix>,
    pub cell: CellIdentity,
}

pub trait PositionSource: Send {
    fn position_at(&mut self, timestamp_ms: u64) -> PositionInput;
}

/// A patient who stays put.
#[derive(Debug, Clone, Copy)]
pub struct StaticPosition(pub PositionInput);

impl PositionSource for StaticPosition {
    fn position_at(&mut self, _: u64) -> PositionInput {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub patient_id: String,
    pub policy: ForwardPolicy,
    pub outbox_capacity: usize,
    pub first_sequence_no: u64,
}

impl GatewayConfig {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            policy: ForwardPolicy::default(),
            outbox_capacity: DEFAULT_OUTBOX_CAPACITY,
            first_sequence_no: 1,
        }
    }
}

fn display<S: Serializer, T: std::fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event")]
pub enum EventKind {
    /// Enqueued and acknowledged by the server straight away.
    Forwarded {
        sequence_no: u64,
        sample: VitalsSample,
        location: Option<LocationFix>,
    },
    /// Enqueued, but the upload has to wait for the link.
    Buffered {
        sequence_no: u64,
        sample: VitalsSample,
        location: Option<LocationFix>,
    },
    Suppressed {
        timestamp_ms: u64,
    },
    /// Earlier buffered entries acknowledged by this flush, in order.
    Flushed {
        sequence_nos: Vec<u64>,
    },
    /// Evicted from a full outbox without ever being delivered.
    Dropped {
        sequence_no: u64,
    },
    FrameError {
        #[serde(serialize_with = "display")]
        error: FrameError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatewayEvent {
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub frames: usize,
    pub frame_errors: usize,
    pub forward_decisions: usize,
    pub suppressed: usize,
    pub forwarded: usize,
    pub buffered: usize,
    pub flushed: usize,
    pub dropped: usize,
    pub duplicates: usize,
    /// Forwards that went out with no location at all.
    pub unlocated: usize,
}

impl GatewayStats {
    pub fn uploaded(&self) -> usize {
        self.forwarded + self.flushed
    }
}

/// Single owner of the gateway state. Each inbound frame runs through
/// decode, calibration, change detection, location, enqueue and flush.
pub struct Gateway<U> {
    policy: ForwardPolicy,
    registry: Registry,
    session: Session,
    db: CellDatabase,
    outbox: Outbox,
    uplink: U,
    positions: Box<dyn PositionSource>,
    clock: Arc<dyn Clock>,
    decoder: FrameDecoder,
    last_forwarded: Option<VitalsSample>,
    last_fix: Option<LocationFix>,
    stats: GatewayStats,
}

impl<U: Uplink> Gateway<U> {
    pub fn new(
        cfg: GatewayConfig,
        sensor: SensorRegistration,
        db: CellDatabase,
        uplink: U,
        positions: Box<dyn PositionSource>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ConfigError> {
        cfg.policy.validate()?;
        let outbox = Outbox::starting_at(cfg.patient_id, cfg.outbox_capacity, cfg.first_sequence_no)?;
        let mut registry = Registry::new();
        let session = registry.register(sensor)?;
        Ok(Self {
            policy: cfg.policy,
            registry,
            session,
            db,
            outbox,
            uplink,
            positions,
            clock,
            decoder: FrameDecoder::new(),
            last_forwarded: None,
            last_fix: None,
            stats: GatewayStats::default(),
        })
    }

    /// Replaces the active sensor; later frames use its calibration.
    pub fn register(&mut self, sensor: SensorRegistration) -> Result<&Session, ConfigError> {
        self.session = self.registry.register(sensor)?;
        Ok(&self.session)
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats
    }

    pub fn outbox(&self) -> &Outbox {
        &self.outbox
    }

    pub fn uplink(&self) -> &U {
        &self.uplink
    }

    pub fn uplink_mut(&mut self) -> &mut U {
        &mut self.uplink
    }

    pub fn last_forwarded(&self) -> Option<&VitalsSample> {
        self.last_forwarded.as_ref()
    }

    /// Feeds raw bytes from the sensor link. Partial frames are held until
    /// the rest arrives.
    pub fn push_bytes(&mut self, bytes: &[u8]) -> Vec<GatewayEvent> {
        self.decoder.push(bytes);
        let mut events = Vec::new();
        while let Some(frame) = self.decoder.next_frame() {
            match frame {
                Ok(sample) => {
                    self.stats.frames += 1;
                    events.extend(self.handle_sample(&sample));
                }
                Err(error) => events.push(self.frame_error(error)),
            }
        }
        events
    }

    /// Processes one decoded sample.
    pub fn handle_sample(&mut self, decoded: &VitalsSample) -> Vec<GatewayEvent> {
        let sample = self.session.registration.calibrate(decoded);
        if let Err(v) = sample.validate() {
            return vec![self.frame_error(FrameError::InvalidSample(v))];
        }
        let mut events = Vec::new();
        if !should_forward(self.last_forwarded.as_ref(), &sample, &self.policy) {
            self.stats.suppressed += 1;
            events.push(self.event(EventKind::Suppressed {
                timestamp_ms: sample.timestamp_ms,
            }));
            if !self.outbox.is_empty() {
                events.extend(self.flush_backlog(None).0);
            }
            return events;
        }
        self.last_forwarded = Some(sample);
        self.stats.forward_decisions += 1;
        let location = self.locate(sample.timestamp_ms);
        let enq = self.outbox.enqueue(sample, location);
        if let Enqueued::Dropped { evicted, .. } = &enq {
            self.stats.dropped += 1;
            events.push(self.event(EventKind::Dropped {
                sequence_no: evicted.sequence_no,
            }));
        }
        let sequence_no = enq.sequence_no();
        let (flushed, delivered) = self.flush_backlog(Some(sequence_no));
        events.extend(flushed);
        let kind = if delivered {
            self.stats.forwarded += 1;
            EventKind::Forwarded {
                sequence_no,
                sample,
                location,
            }
        } else {
            self.stats.buffered += 1;
            EventKind::Buffered {
                sequence_no,
                sample,
                location,
            }
        };
        events.push(self.event(kind));
        events
    }

    /// Retries the backlog without a new sample.
    pub fn flush(&mut self) -> Vec<GatewayEvent> {
        if self.outbox.is_empty() {
            return Vec::new();
        }
        self.flush_backlog(None).0
    }

    /// Flushes the outbox. Entries other than `current` count as backlog and
    /// are reported in one `Flushed` event; the flag says whether `current`
    /// went out too.
    fn flush_backlog(&mut self, current: Option<u64>) -> (Vec<GatewayEvent>, bool) {
        let (done, _) = self.outbox.flush_acked(&mut self.uplink);
        let mut delivered = false;
        let mut backlog = Vec::new();
        for (seq, ack) in done {
            if ack == Ack::Duplicate {
                self.stats.duplicates += 1;
            }
            if Some(seq) == current {
                delivered = true;
            } else {
                backlog.push(seq);
            }
        }
        let mut events = Vec::new();
        if !backlog.is_empty() {
            self.stats.flushed += backlog.len();
            events.push(self.event(EventKind::Flushed { sequence_nos: backlog }));
        }
        (events, delivered)
    }

    /// GPS, else the serving cell, else the last fix we had.
    fn locate(&mut self, timestamp_ms: u64) -> Option<LocationFix> {
        let pos = self.positions.position_at(timestamp_ms);
        match resolve_location(pos.gps.as_ref(), &pos.cell, &self.db) {
            Ok(fix) => {
                self.last_fix = Some(fix);
                Some(fix)
            }
            Err(_) => {
                if self.last_fix.is_none() {
                    self.stats.unlocated += 1;
                }
                self.last_fix
            }
        }
    }

    fn frame_error(&mut self, error: FrameError) -> GatewayEvent {
        self.stats.frame_errors += 1;
        self.event(EventKind::FrameError { error })
    }

    fn event(&self, kind: EventKind) -> GatewayEvent {
        GatewayEvent {
            at_ms: self.clock.now_ms(),
            kind,
        }
    }
}

/// Drives `gw` from a sensor byte stream until it ends, handing each event
/// to `on_event`, then makes a last attempt to flush the backlog.
pub fn run_gateway<R: Read, U: Uplink>(
    mut reader: R,
    gw: &mut Gateway<U>,
    mut on_event: impl FnMut(&GatewayEvent),
) -> io::Result<GatewayStats> {
    let mut buf = [0u8; 4096];
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        for ev in gw.push_bytes(&buf[..n]) {
            on_event(&ev);
        }
    }
    for ev in gw.flush() {
        on_event(&ev);
    }
    Ok(gw.stats())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::domain::{LocationSource, PatientState};
    use crate::gateway::{Calibration, LinkScript, ScriptedLink, SensorType, UplinkError};
    use crate::sensor::{encode_frame, ReportingMode};
    use crate::server::SessionUpload;

    #[derive(Default)]
    struct Recorder(Vec<SessionUpload>);

    impl Uplink for Recorder {
        fn is_available(&self) -> bool {
            true
        }

        fn upload(&mut self, u: &SessionUpload) -> Result<Ack, UplinkError> {
            self.0.push(u.clone());
            Ok(Ack::Accepted(Some(PatientState::Normal)))
        }
    }

    fn home() -> PositionInput {
        PositionInput {
            gps: Some(LocationFix {
                lat_deg: 34.8828,
                lon_deg: -1.3167,
                source: LocationSource::Gps,
                accuracy_m: 5.0,
            }),
            cell: CellIdentity::new(603, 1, 1000, 42).unwrap(),
        }
    }

    fn gateway(link: LinkScript, clock: Arc<ManualClock>) -> Gateway<ScriptedLink<Recorder>> {
        let sensor = SensorRegistration::new("nonin-1", SensorType::PulseOximeter, 1.0, ReportingMode::Raw);
        let up = ScriptedLink::new(Recorder::default(), link, clock.clone(), 0);
        Gateway::new(
            GatewayConfig::new("p1"),
            sensor,
            CellDatabase::new(),
            up,
            Box::new(StaticPosition(home())),
            clock,
        )
        .unwrap()
    }

    fn frame(t_s: u64) -> Vec<u8> {
        encode_frame(&VitalsSample::new(t_s * 1000, 97.0, 72.0, 36.8, 0.2))
            .unwrap()
            .as_bytes()
            .to_vec()
    }

    fn run(gw: &mut Gateway<ScriptedLink<Recorder>>, clock: &ManualClock, secs: u64) -> Vec<GatewayEvent> {
        let mut out = Vec::new();
        for t in 0..secs {
            clock.set(t * 1000);
            out.extend(gw.push_bytes(&frame(t)));
        }
        out
    }

    #[test]
    fn constant_stream_forwards_on_heartbeat_only() {
        let clock = Arc::new(ManualClock::new(0));
        let mut gw = gateway(LinkScript::always_up(), clock.clone());
        let events = run(&mut gw, &clock, 600);
        let forwarded: Vec<u64> = events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Forwarded { sample, .. } => Some(sample.timestamp_ms / 1000),
                _ => None,
            })
            .collect();
        assert_eq!(forwarded, (0..10).map(|k| k * 60).collect::<Vec<_>>());
        assert_eq!(gw.stats().suppressed, 590);
    }

    #[test]
    fn outage_buffers_then_flushes_in_order() {
        let clock = Arc::new(ManualClock::new(0));
        let mut gw = gateway(LinkScript::outage(60.0, 120.0).unwrap(), clock.clone());
        let events = run(&mut gw, &clock, 300);
        let buffered: Vec<u64> = events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Buffered { sequence_no, .. } => Some(*sequence_no),
                _ => None,
            })
            .collect();
        assert_eq!(buffered, [2]);
        let flushes: Vec<&GatewayEvent> = events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Flushed { .. }))
            .collect();
        assert_eq!(flushes.len(), 1);
        assert_eq!(flushes[0].at_ms, 120_000);
        assert_eq!(flushes[0].kind, EventKind::Flushed { sequence_nos: vec![2] });
        let seqs: Vec<u64> = gw.uplink().inner().0.iter().map(|u| u.sequence_no).collect();
        assert_eq!(seqs, [1, 2, 3, 4, 5]);
        let s = gw.stats();
        assert_eq!(s.forward_decisions, s.uploaded() + gw.outbox().len() + s.dropped);
    }

    #[test]
    fn corrupted_frame_is_one_error() {
        let clock = Arc::new(ManualClock::new(0));
        let mut gw = gateway(LinkScript::always_up(), clock);
        let mut bytes = frame(0);
        let mut bad = frame(1);
        bad[12] ^= 0x40;
        bytes.extend(bad);
        bytes.extend(frame(2));
        let events = gw.push_bytes(&bytes);
        let errors = events.iter().filter(|e| matches!(e.kind, EventKind::FrameError { .. })).count();
        assert_eq!(errors, 1);
        assert_eq!(gw.stats().frames, 2);
    }

    #[test]
    fn calibration_applies_before_forwarding() {
        let clock = Arc::new(ManualClock::new(0));
        let mut gw = gateway(LinkScript::always_up(), clock);
        let sensor = SensorRegistration {
            calibration: Some(Calibration { temp_c: 0.3, ..Default::default() }),
            ..SensorRegistration::new("nonin-1", SensorType::PulseOximeter, 1.0, ReportingMode::Raw)
        };
        assert_eq!(gw.register(sensor).unwrap().stream_id, 2);
        gw.push_bytes(&frame(0));
        let up = &gw.uplink().inner().0[0];
        assert!((up.sample.temp_c - 37.1).abs() < 1e-9);
        assert_eq!(up.location, home().gps);
    }

    #[test]
    fn calibration_out_of_range_is_a_frame_error() {
        let clock = Arc::new(ManualClock::new(0));
        let mut gw = gateway(LinkScript::always_up(), clock);
        let sensor = SensorRegistration {
            calibration: Some(Calibration { spo2_pct: 5.0, ..Default::default() }),
            ..SensorRegistration::new("nonin-1", SensorType::PulseOximeter, 1.0, ReportingMode::Raw)
        };
        gw.register(sensor).unwrap();
        let events = gw.push_bytes(&frame(0));
        assert!(matches!(
            events[0].kind,
            EventKind::FrameError {
                error: FrameError::InvalidSample(_)
            }
        ));
    }

    #[test]
    fn unknown_cell_reuses_last_fix() {
        struct LoseGps(u32);
        impl PositionSource for LoseGps {
            fn position_at(&mut self, _: u64) -> PositionInput {
                self.0 += 1;
                PositionInput {
                    gps: (self.0 == 1).then(|| home().gps.unwrap()),
                    cell: home().cell,
                }
            }
        }
        let clock = Arc::new(ManualClock::new(0));
        let sensor = SensorRegistration::new("s", SensorType::PulseOximeter, 1.0, ReportingMode::Raw);
        let mut gw = Gateway::new(
            GatewayConfig::new("p1"),
            sensor,
            CellDatabase::new(),
            Recorder::default(),
            Box::new(LoseGps(0)),
            clock,
        )
        .unwrap();
        gw.handle_sample(&VitalsSample::new(0, 97.0, 72.0, 36.8, 0.2));
        gw.handle_sample(&VitalsSample::new(1000, 90.0, 72.0, 36.8, 0.2));
        let ups = &gw.uplink().0;
        assert_eq!(ups[1].location, home().gps);
        assert_eq!(gw.stats().unlocated, 0);
    }

    #[test]
    fn replay_is_deterministic() {
        let go = || {
            let clock = Arc::new(ManualClock::new(0));
            let mut gw = gateway(LinkScript::outage(100.0, 250.0).unwrap(), clock.clone());
            run(&mut gw, &clock, 400)
        };
        assert_eq!(go(), go());
    }
}
