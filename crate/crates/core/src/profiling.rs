//! Spatio-temporal grip-force profiles: per-sensor statistics over fixed
//! successive time windows, and session task times.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::ingest::SessionRecording;
use crate::protocol::{SensorId, FRAME_INTERVAL_MS};

pub const DEFAULT_WINDOW_MS: u64 = 2000;
pub const PROFILE_CSV_HEADER: &str = "window_index,start_ms,value_mv,sample_count";

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("recording has no frames")]
    EmptyRecording,
    #[error("series has no samples")]
    EmptySeries,
    #[error("window of {0} ms is not a positive multiple of the 20 ms cadence")]
    BadWindow(u64),
    #[error("series timestamps decrease at sample {0}")]
    Unordered(usize),
    #[error("profile has no windows")]
    EmptyProfile,
    #[error("I/O failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("malformed profile CSV at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub timestamp_ms: u64,
    pub amplitude_mv: u16,
}

pub fn sensor_series(recording: &SessionRecording, sensor: SensorId) -> Result<Vec<Sample>, ProfileError> {
    if recording.frames.is_empty() {
        return Err(ProfileError::EmptyRecording);
    }
    Ok(recording
        .frames
        .iter()
        .map(|f| Sample {
            timestamp_ms: f.timestamp_ms,
            amplitude_mv: f.amplitude(sensor),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Peak,
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Statistic::Mean),
            "peak" | "max" => Ok(Statistic::Peak),
            other => Err(format!("unknown statistic `{other}` (expected mean or peak)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialPolicy {
    /// Keep only windows holding the full `window_ms / 20` samples.
    DropIncomplete,
    /// Keep every non-empty window with its actual count.
    KeepPartial,
}

impl FromStr for PartialPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "drop" | "drop-incomplete" => Ok(PartialPolicy::DropIncomplete),
            "keep" | "keep-partial" => Ok(PartialPolicy::KeepPartial),
            other => Err(format!("unknown partial-window policy `{other}` (expected drop or keep)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileWindow {
    /// Slot number counted from the first sample: the window covers
    /// `[first + index * window_ms, first + (index + 1) * window_ms)`.
    pub index: u64,
    pub start_ms: u64,
    pub value_mv: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GripForceProfile {
    pub sensor: Option<SensorId>,
    pub window_ms: u64,
    pub statistic: Statistic,
    pub windows: Vec<ProfileWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowOptions {
    pub window_ms: u64,
    pub statistic: Statistic,
    pub partial: PartialPolicy,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            window_ms: DEFAULT_WINDOW_MS,
            statistic: Statistic::Mean,
            partial: PartialPolicy::DropIncomplete,
        }
    }
}

pub fn check_window_ms(window_ms: u64) -> Result<u64, ProfileError> {
    if window_ms == 0 || window_ms % FRAME_INTERVAL_MS != 0 {
        return Err(ProfileError::BadWindow(window_ms));
    }
    Ok(window_ms)
}

/// Partitions the series into fixed windows anchored at its first timestamp.
pub fn window_profile(series: &[Sample], options: WindowOptions) -> Result<GripForceProfile, ProfileError> {
    let window_ms = check_window_ms(options.window_ms)?;
    let first = series.first().ok_or(ProfileError::EmptySeries)?.timestamp_ms;
    if let Some(i) = series.windows(2).position(|w| w[1].timestamp_ms < w[0].timestamp_ms) {
        return Err(ProfileError::Unordered(i + 1));
    }
    let full = (window_ms / FRAME_INTERVAL_MS) as usize;

    let mut windows = Vec::new();
    let mut rest = series;
    while let Some(head) = rest.first() {
        let index = (head.timestamp_ms - first) / window_ms;
        let end = first + (index + 1) * window_ms;
        let len = rest.partition_point(|s| s.timestamp_ms < end);
        let (chunk, tail) = rest.split_at(len);
        rest = tail;
        if options.partial == PartialPolicy::DropIncomplete && chunk.len() != full {
            continue;
        }
        let value_mv = match options.statistic {
            Statistic::Mean => {
                chunk.iter().map(|s| f64::from(s.amplitude_mv)).sum::<f64>() / chunk.len() as f64
            }
            Statistic::Peak => f64::from(chunk.iter().map(|s| s.amplitude_mv).max().unwrap_or(0)),
        };
        windows.push(ProfileWindow {
            index,
            start_ms: first + index * window_ms,
            value_mv,
            sample_count: chunk.len(),
        });
    }
    Ok(GripForceProfile {
        sensor: None,
        window_ms,
        statistic: options.statistic,
        windows,
    })
}

/// Profile of one sensor of a recording.
pub fn sensor_profile(
    recording: &SessionRecording,
    sensor: SensorId,
    options: WindowOptions,
) -> Result<GripForceProfile, ProfileError> {
    let series = sensor_series(recording, sensor)?;
    let mut profile = window_profile(&series, options)?;
    profile.sensor = Some(sensor);
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TaskTime {
    pub seconds: f64,
}

/// `(t_last - t_first + 20 ms) / 1000`: the last frame occupies one full slot.
pub fn task_time(recording: &SessionRecording) -> Result<TaskTime, ProfileError> {
    match (recording.frames.first(), recording.frames.last()) {
        (Some(first), Some(last)) => {
            let ms = last.timestamp_ms - first.timestamp_ms + FRAME_INTERVAL_MS;
            Ok(TaskTime {
                seconds: ms as f64 / 1000.0,
            })
        }
        _ => Err(ProfileError::EmptyRecording),
    }
}

/// Formats with two decimals, rounding half away from zero on the shortest
/// decimal representation of `v` (so 0.125 -> "0.13" and 1.005 -> "1.01").
pub fn format_mv(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let repr = format!("{}", v.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((repr.as_str(), ""));
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes().chain(std::iter::repeat(b'0')).take(2))
        .map(|b| b - b'0')
        .collect();
    if frac_part.as_bytes().get(2).is_some_and(|&d| d >= b'5') {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 2;
    let mut out = String::with_capacity(digits.len() + 2);
    if v.is_sign_negative() && digits.iter().any(|&d| d != 0) {
        out.push('-');
    }
    for (i, d) in digits.iter().enumerate() {
        if i == split {
            out.push('.');
        }
        out.push(char::from(b'0' + d));
    }
    out
}

pub fn profile_to_csv(profile: &GripForceProfile) -> String {
    let mut out = String::from(PROFILE_CSV_HEADER);
    out.push('\n');
    for w in &profile.windows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            w.index,
            w.start_ms,
            format_mv(w.value_mv),
            w.sample_count
        );
    }
    out
}

pub fn profile_export(profile: &GripForceProfile, path: &Path) -> Result<(), ProfileError> {
    if profile.windows.is_empty() {
        return Err(ProfileError::EmptyProfile);
    }
    fs::write(path, profile_to_csv(profile))?;
    Ok(())
}

/// Reads back the windows of a profile CSV.
pub fn parse_profile_csv(text: &str) -> Result<Vec<ProfileWindow>, ProfileError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, PROFILE_CSV_HEADER)) => {}
        _ => {
            return Err(ProfileError::Malformed {
                line: 1,
                message: format!("header must be `{PROFILE_CSV_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |message: String| ProfileError::Malformed { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            }
            Ok(ProfileWindow {
                index: fields[0].parse().map_err(|e| bad(format!("window_index: {e}")))?,
                start_ms: fields[1].parse().map_err(|e| bad(format!("start_ms: {e}")))?,
                value_mv: fields[2].parse().map_err(|e| bad(format!("value_mv: {e}")))?,
                sample_count: fields[3].parse().map_err(|e| bad(format!("sample_count: {e}")))?,
            })
        })
        .collect()
}
