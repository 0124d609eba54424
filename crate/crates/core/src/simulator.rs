//! Synthetic pick-and-drop sessions and their transmission over a byte stream.
//!
//! A session is modelled as four stationary task steps. Within a step every
//! sensor amplitude is drawn from a Gaussian, clamped to the u16 range and
//! rounded to whole millivolts. Synthesis is a pure function of the
//! [`SessionSpec`], including its seed.

use std::fmt;
use std::io::{self, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::ingest::SessionRecording;
use crate::protocol::{encode_frame, GloveFrame, Hand, SensorId, FRAME_INTERVAL_MS, SENSOR_COUNT};

pub const STEP_COUNT: usize = 4;
pub const MAX_SESSION_INDEX: u32 = 10;
/// Observations per cell implied by an error df of 2880 over a 2x2 design.
pub const DEFAULT_CELL_N: usize = 721;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid task script: {0}")]
    InvalidScript(String),
    #[error("time {t_ms} ms outside session of {duration_ms} ms")]
    OutOfRange { t_ms: u64, duration_ms: u64 },
    #[error("calibration needs n >= 1, got {0}")]
    InvalidN(usize),
    #[error("SEM must be finite and non-negative, got {0}")]
    InvalidSem(f64),
    #[error("session index {0} outside 1..=10")]
    InvalidSessionIndex(u32),
    #[error("session duration must be positive, got {0} s")]
    InvalidDuration(f64),
    #[error("invalid amplitude model for {sensor} step {step}: mean {mean}, sd {sd}")]
    InvalidModel {
        sensor: SensorId,
        step: usize,
        mean: f64,
        sd: f64,
    },
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expertise {
    Expert,
    Trained,
    Novice,
}

impl Expertise {
    pub fn as_str(self) -> &'static str {
        match self {
            Expertise::Expert => "expert",
            Expertise::Trained => "trained",
            Expertise::Novice => "novice",
        }
    }

    pub fn to_octet(self) -> u8 {
        match self {
            Expertise::Expert => 0,
            Expertise::Trained => 1,
            Expertise::Novice => 2,
        }
    }

    pub fn from_octet(b: u8) -> Option<Expertise> {
        match b {
            0 => Some(Expertise::Expert),
            1 => Some(Expertise::Trained),
            2 => Some(Expertise::Novice),
            _ => None,
        }
    }

    /// The expert user is left-handed; the others are taken as right-handed.
    pub fn dominant_hand(self) -> Hand {
        match self {
            Expertise::Expert => Hand::Left,
            Expertise::Trained | Expertise::Novice => Hand::Right,
        }
    }

    /// Reference task time in seconds for the given hand.
    pub fn task_seconds(self, hand: Hand) -> f64 {
        let dominant = hand == self.dominant_hand();
        match (self, dominant) {
            (Expertise::Expert, true) => 8.88,
            (Expertise::Expert, false) => 10.19,
            (Expertise::Trained, true) => 11.90,
            (Expertise::Trained, false) => 13.53,
            (Expertise::Novice, true) => 15.42,
            (Expertise::Novice, false) => 12.99,
        }
    }

    /// S7 (mean mV, SEM mV) of the first and last session on the dominant hand.
    pub fn s7_cells(self) -> (CellTarget, CellTarget) {
        match self {
            Expertise::Novice => (CellTarget::new(98.0, 1.2), CellTarget::new(78.0, 1.6)),
            Expertise::Expert => (CellTarget::new(594.0, 1.8), CellTarget::new(609.0, 2.2)),
            Expertise::Trained => (CellTarget::new(320.0, 1.5), CellTarget::new(360.0, 1.9)),
        }
    }

    fn grip_scale(self) -> f64 {
        match self {
            Expertise::Expert => 1.0,
            Expertise::Trained => 0.75,
            Expertise::Novice => 0.45,
        }
    }
}

impl fmt::Display for Expertise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Expertise {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "expert" => Ok(Expertise::Expert),
            "trained" => Ok(Expertise::Trained),
            "novice" => Ok(Expertise::Novice),
            other => Err(format!(
                "unknown expertise `{other}` (expected expert, trained or novice)"
            )),
        }
    }
}

/// Resolves `left`/`right` or `dominant`/`non-dominant` against a user's handedness.
pub fn resolve_hand(expertise: Expertise, s: &str) -> Result<Hand, String> {
    match s.to_ascii_lowercase().as_str() {
        "dominant" => Ok(expertise.dominant_hand()),
        "non-dominant" | "nondominant" => Ok(expertise.dominant_hand().other()),
        other => other.parse(),
    }
}

/// A published cell mean and standard error, both in mV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub mean: f64,
    pub sem: f64,
}

impl CellTarget {
    pub const fn new(mean: f64, sem: f64) -> Self {
        CellTarget { mean, sem }
    }

    fn lerp(self, other: CellTarget, t: f64) -> CellTarget {
        CellTarget {
            mean: self.mean + t * (other.mean - self.mean),
            sem: self.sem + t * (other.sem - self.sem),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskStep {
    pub index: usize,
    pub description: &'static str,
    pub fraction: f64,
}

/// The four-step pick-and-drop task with the share of session time each step takes.
#[derive(Debug, Clone)]
pub struct TaskScript {
    steps: [TaskStep; STEP_COUNT],
}

const STEP_DESCRIPTIONS: [&str; STEP_COUNT] = [
    "Activate and move tool towards object location",
    "Open and close grippers to grasp and lift object",
    "Move tool with object to target location",
    "Open grippers to drop object in box",
];

pub const DEFAULT_STEP_FRACTIONS: [f64; STEP_COUNT] = [0.30, 0.25, 0.30, 0.15];

impl TaskScript {
    pub fn new(fractions: [f64; STEP_COUNT]) -> Result<Self, SimError> {
        if let Some(f) = fractions.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(SimError::InvalidScript(format!(
                "step fraction {f} is not positive"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidScript(format!(
                "step fractions sum to {sum}, expected 1"
            )));
        }
        let steps = std::array::from_fn(|i| TaskStep {
            index: i + 1,
            description: STEP_DESCRIPTIONS[i],
            fraction: fractions[i],
        });
        Ok(TaskScript { steps })
    }

    pub fn steps(&self) -> &[TaskStep; STEP_COUNT] {
        &self.steps
    }

    pub fn fractions(&self) -> [f64; STEP_COUNT] {
        std::array::from_fn(|i| self.steps[i].fraction)
    }
}

impl Default for TaskScript {
    fn default() -> Self {
        TaskScript::new(DEFAULT_STEP_FRACTIONS).expect("default fractions are valid")
    }
}

/// Task step (1-based) active at `t_ms`. A boundary instant belongs to the later step.
pub fn phase_of(t_ms: u64, script: &TaskScript, duration_ms: u64) -> Result<usize, SimError> {
    if t_ms >= duration_ms {
        return Err(SimError::OutOfRange { t_ms, duration_ms });
    }
    let t = t_ms as f64;
    let mut cumulative = 0.0;
    for step in &script.steps[..STEP_COUNT - 1] {
        cumulative += step.fraction;
        if t < cumulative * duration_ms as f64 {
            return Ok(step.index);
        }
    }
    Ok(STEP_COUNT)
}

/// Gaussian amplitude model for one sensor during one task step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeModel {
    pub mean: f64,
    pub sd: f64,
}

impl AmplitudeModel {
    pub const fn new(mean: f64, sd: f64) -> Self {
        AmplitudeModel { mean, sd }
    }
}

/// Converts a target cell mean/SEM over `n` observations into a sampling model
/// (sd = sem * sqrt(n)).
pub fn calibrate_to_cell(mean_target: f64, sem_target: f64, n: usize) -> Result<AmplitudeModel, SimError> {
    if n < 1 {
        return Err(SimError::InvalidN(n));
    }
    if !(sem_target.is_finite() && sem_target >= 0.0) {
        return Err(SimError::InvalidSem(sem_target));
    }
    Ok(AmplitudeModel {
        mean: mean_target,
        sd: sem_target * (n as f64).sqrt(),
    })
}

#[derive(Debug, Clone)]
pub struct UserProfile {
    pub user_id: String,
    pub expertise: Expertise,
    /// `models[sensor.slot()][step - 1]`
    pub models: [[AmplitudeModel; STEP_COUNT]; SENSOR_COUNT],
}

// Resting grip level (mV) of each sensor for an expert's dominant hand during
// the grasp step. S7 is modelled separately from the cell targets.
const BASE_LEVELS: [f64; SENSOR_COUNT] = [
    420.0, 380.0, 260.0, 340.0, 230.0, 210.0, 0.0, 160.0, 190.0, 300.0, 250.0, 120.0,
];
const STEP_GRIP: [f64; STEP_COUNT] = [0.35, 1.0, 0.85, 0.25];
const NON_DOMINANT_SCALE: f64 = 0.7;
const RELATIVE_SD: f64 = 0.12;

impl UserProfile {
    /// Built-in model for a user of the given expertise on one hand and session.
    ///
    /// S7 is stationary over the whole session at the S7 cell target, linearly
    /// interpolated between the first (index 1) and last (index 10) session and
    /// calibrated with [`DEFAULT_CELL_N`]. The remaining sensors follow a
    /// per-step grip pattern scaled by expertise.
    pub fn preset(
        user_id: impl Into<String>,
        expertise: Expertise,
        hand: Hand,
        session_index: u32,
    ) -> Result<Self, SimError> {
        if !(1..=MAX_SESSION_INDEX).contains(&session_index) {
            return Err(SimError::InvalidSessionIndex(session_index));
        }
        let hand_scale = if hand == expertise.dominant_hand() {
            1.0
        } else {
            NON_DOMINANT_SCALE
        };
        let (first, last) = expertise.s7_cells();
        let t = f64::from(session_index - 1) / f64::from(MAX_SESSION_INDEX - 1);
        let cell = first.lerp(last, t);
        let s7 = calibrate_to_cell(cell.mean * hand_scale, cell.sem, DEFAULT_CELL_N)?;

        let models = std::array::from_fn(|slot| {
            if slot == SensorId::S7.slot() {
                return [s7; STEP_COUNT];
            }
            std::array::from_fn(|step| {
                let mean = BASE_LEVELS[slot] * STEP_GRIP[step] * expertise.grip_scale() * hand_scale;
                AmplitudeModel::new(mean, mean * RELATIVE_SD)
            })
        });
        Ok(UserProfile {
            user_id: user_id.into(),
            expertise,
            models,
        })
    }

    /// Same model `(mean, sd)` for every sensor and step.
    pub fn uniform(user_id: impl Into<String>, expertise: Expertise, model: AmplitudeModel) -> Self {
        UserProfile {
            user_id: user_id.into(),
            expertise,
            models: [[model; STEP_COUNT]; SENSOR_COUNT],
        }
    }

    pub fn model(&self, sensor: SensorId, step: usize) -> AmplitudeModel {
        self.models[sensor.slot()][step - 1]
    }

    fn validate(&self) -> Result<(), SimError> {
        for sensor in SensorId::all() {
            for step in 1..=STEP_COUNT {
                let m = self.model(sensor, step);
                let ok = m.mean.is_finite() && m.mean >= 0.0 && m.sd.is_finite() && m.sd >= 0.0;
                if !ok {
                    return Err(SimError::InvalidModel {
                        sensor,
                        step,
                        mean: m.mean,
                        sd: m.sd,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub user: UserProfile,
    pub hand: Hand,
    pub session_index: u32,
    duration_ms: u64,
    pub seed: u64,
    pub script: TaskScript,
}

impl SessionSpec {
    /// `duration_s` is held at millisecond resolution, so the frame count is
    /// `floor(duration_s * 50)` for any duration given in whole milliseconds.
    pub fn new(
        user: UserProfile,
        hand: Hand,
        session_index: u32,
        duration_s: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        if !(1..=MAX_SESSION_INDEX).contains(&session_index) {
            return Err(SimError::InvalidSessionIndex(session_index));
        }
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(SimError::InvalidDuration(duration_s));
        }
        let duration_ms = (duration_s * 1000.0).round() as u64;
        if duration_ms == 0 {
            return Err(SimError::InvalidDuration(duration_s));
        }
        user.validate()?;
        Ok(SessionSpec {
            user,
            hand,
            session_index,
            duration_ms,
            seed,
            script: TaskScript::default(),
        })
    }

    pub fn with_script(mut self, script: TaskScript) -> Self {
        self.script = script;
        self
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    pub fn frame_count(&self) -> u64 {
        self.duration_ms / FRAME_INTERVAL_MS
    }
}

pub fn synthesize_session(spec: &SessionSpec) -> SessionRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Normal::new only fails on a negative or non-finite sd, which SessionSpec::new rejects.
    let dists: Vec<[Normal<f64>; STEP_COUNT]> = SensorId::all()
        .map(|s| {
            std::array::from_fn(|i| {
                let m = spec.user.model(s, i + 1);
                Normal::new(m.mean, m.sd).expect("validated amplitude model")
            })
        })
        .collect();

    let frames = (0..spec.frame_count())
        .map(|i| {
            let timestamp_ms = i * FRAME_INTERVAL_MS;
            let step = phase_of(timestamp_ms, &spec.script, spec.duration_ms)
                .expect("frame timestamps lie inside the session");
            let amplitudes = std::array::from_fn(|slot| {
                let v: f64 = dists[slot][step - 1].sample(&mut rng);
                v.clamp(0.0, f64::from(u16::MAX)).round() as u16
            });
            GloveFrame {
                hand: spec.hand,
                seq: i as u32,
                timestamp_ms,
                amplitudes,
            }
        })
        .collect();

    SessionRecording {
        user_id: spec.user.user_id.clone(),
        expertise: spec.user.expertise,
        session_index: spec.session_index,
        hand: spec.hand,
        frames,
    }
}

/// Playback rate relative to the nominal 50 Hz cadence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speed(f64);

impl Speed {
    pub const REALTIME: Speed = Speed(1.0);
    /// Send frames as fast as the socket accepts them.
    pub const UNBOUNDED: Speed = Speed(f64::INFINITY);

    pub fn new(factor: f64) -> Result<Speed, String> {
        if factor > 0.0 {
            Ok(Speed(factor))
        } else {
            Err(format!("speed must be positive, got {factor}"))
        }
    }

    pub fn factor(self) -> f64 {
        self.0
    }

    pub fn is_unbounded(self) -> bool {
        self.0.is_infinite()
    }

    fn interval(self) -> Duration {
        Duration::from_secs_f64(FRAME_INTERVAL_MS as f64 / 1000.0 / self.0)
    }
}

impl FromStr for Speed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "inf" | "max" | "unbounded" => Ok(Speed::UNBOUNDED),
            other => {
                let f: f64 = other.parse().map_err(|_| format!("invalid speed `{s}`"))?;
                Speed::new(f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionReport {
    pub frames_sent: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("connection refused by {endpoint}: {source}")]
    ConnectionRefused {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("connection lost after {frames_sent} frames: {source}")]
    ConnectionLost {
        frames_sent: usize,
        #[source]
        source: io::Error,
    },
}

impl StreamError {
    pub fn frames_sent(&self) -> usize {
        match self {
            StreamError::ConnectionRefused { .. } => 0,
            StreamError::ConnectionLost { frames_sent, .. } => *frames_sent,
        }
    }
}

/// Sends every frame of `recording` to `endpoint`, frame `i` no earlier than
/// `i * 20 ms / speed` after the start. In real-time mode the call returns once
/// the last frame's slot has elapsed, so wall time tracks the task time.
pub fn stream_session<A: ToSocketAddrs + fmt::Display>(
    recording: &SessionRecording,
    endpoint: A,
    speed: Speed,
) -> Result<TransmissionReport, StreamError> {
    let stream = TcpStream::connect(&endpoint).map_err(|source| StreamError::ConnectionRefused {
        endpoint: endpoint.to_string(),
        source,
    })?;
    let _ = stream.set_nodelay(true);
    let start = Instant::now();
    let mut sent = 0usize;
    let lost = |frames_sent, source| StreamError::ConnectionLost {
        frames_sent,
        source,
    };

    if speed.is_unbounded() {
        let mut out = BufWriter::new(&stream);
        for frame in &recording.frames {
            out.write_all(&encode_frame(frame)).map_err(|e| lost(sent, e))?;
            sent += 1;
        }
        out.flush().map_err(|e| lost(sent, e))?;
    } else {
        let interval = speed.interval();
        let mut out = &stream;
        for (i, frame) in recording.frames.iter().enumerate() {
            sleep_until(start + interval * i as u32);
            out.write_all(&encode_frame(frame)).map_err(|e| lost(sent, e))?;
            sent += 1;
        }
        sleep_until(start + interval * recording.frames.len() as u32);
    }
    let _ = stream.shutdown(std::net::Shutdown::Write);
    Ok(TransmissionReport {
        frames_sent: sent,
        wall_time: start.elapsed(),
    })
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

/// Key/value session description, read from TOML.
///
/// ```toml
/// user_id = "expert-01"
/// expertise = "expert"
/// hand = "dominant"        # or left / right / non-dominant
/// session = 1
/// duration_s = 8.88        # optional, defaults to the preset task time
/// seed = 42                # optional
/// script = [0.30, 0.25, 0.30, 0.15]
///
/// [[sensor]]
/// id = 7
/// step = 2                 # optional; all steps when absent
/// mean = 594.0
/// sd = 48.3
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub user_id: Option<String>,
    pub expertise: Expertise,
    pub hand: Option<String>,
    pub session: Option<u32>,
    pub duration_s: Option<f64>,
    pub seed: Option<u64>,
    pub script: Option<[f64; STEP_COUNT]>,
    #[serde(default, rename = "sensor")]
    pub sensors: Vec<SensorOverride>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorOverride {
    pub id: u8,
    pub step: Option<usize>,
    pub mean: f64,
    pub sd: f64,
}

impl SessionConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Builds the spec; `fallback_seed` applies when the file names no seed.
    pub fn to_spec(&self, fallback_seed: u64) -> Result<SessionSpec, SimError> {
        let hand = match &self.hand {
            Some(h) => resolve_hand(self.expertise, h).map_err(SimError::Config)?,
            None => self.expertise.dominant_hand(),
        };
        let session = self.session.unwrap_or(1);
        let user_id = self
            .user_id
            .clone()
            .unwrap_or_else(|| self.expertise.as_str().to_string());
        let mut user = UserProfile::preset(user_id, self.expertise, hand, session)?;
        for o in &self.sensors {
            let sensor = SensorId::new(o.id).map_err(|e| SimError::Config(e.to_string()))?;
            let model = AmplitudeModel::new(o.mean, o.sd);
            match o.step {
                Some(step @ 1..=STEP_COUNT) => user.models[sensor.slot()][step - 1] = model,
                Some(step) => {
                    return Err(SimError::Config(format!("step {step} outside 1..=4")));
                }
                None => user.models[sensor.slot()] = [model; STEP_COUNT],
            }
        }
        let duration = self
            .duration_s
            .unwrap_or_else(|| self.expertise.task_seconds(hand));
        let spec = SessionSpec::new(user, hand, session, duration, self.seed.unwrap_or(fallback_seed))?;
        match self.script {
            Some(fractions) => Ok(spec.with_script(TaskScript::new(fractions)?)),
            None => Ok(spec),
        }
    }
}
