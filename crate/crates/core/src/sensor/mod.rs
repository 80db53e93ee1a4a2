//! Simulated body-sensor node: vitals generation and the wire frame codec.

pub mod frame;
pub mod generator;
pub mod label;

pub use frame::{decode_frame, encode_frame, FrameDecoder, FrameError, SensorFrame, FRAME_LEN};
pub use generator::{
    generate_stream, EpisodeKind, EpisodeScript, PatientProfile, ReportingMode, ScriptError, Segment,
    StreamConfig,
};
pub use label::label_oracle;
