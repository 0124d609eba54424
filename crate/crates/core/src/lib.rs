//! Grip-force telemetry pipeline for twelve-sensor force gloves.
//!
//! - [`protocol`]: the fixed 41-octet wire frame sent every 20 ms per glove.
//! - [`simulator`]: synthetic four-step pick-and-drop sessions and their transmission.
//! - [`ingest`]: stream reception, gap detection, binary/CSV persistence.
//! - [`profiling`]: windowed per-sensor grip-force profiles and task times.
//! - [`stats`]: cell summaries, F distribution tail and balanced two-way ANOVA.

pub mod ingest;
pub mod profiling;
pub mod protocol;
pub mod simulator;
pub mod stats;

pub use ingest::{
    detect_gaps, load_session, record, save_session, GapReport, IngestError, IngestTally, ReceivedSession,
    Recorder, SessionFormat, SessionMeta, SessionRecording,
};
pub use profiling::{
    sensor_profile, sensor_series, task_time, window_profile, GripForceProfile, PartialPolicy, ProfileError,
    Statistic, TaskTime, WindowOptions,
};
pub use protocol::{
    decode_frame, encode_frame, validate_cadence, CadenceReport, DecodeError, GloveFrame, Hand, SensorId,
};
pub use simulator::{
    calibrate_to_cell, phase_of, stream_session, synthesize_session, Expertise, SessionSpec, SimError, Speed,
    StreamError, TaskScript, UserProfile,
};
pub use stats::{
    f_upper_tail, mean_sem, reconstruct_paper_cells, two_way_anova, AnovaTable, CellSummary, StatsError,
};

/// Any error raised by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
