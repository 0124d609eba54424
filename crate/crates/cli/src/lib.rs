//! `gripstream` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or processing error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use gripstream_core::ingest::{detect_gaps, load_session, save_session, Recorder, SessionFormat, SessionMeta};
use gripstream_core::profiling::{
    check_window_ms, profile_to_csv, sensor_profile, task_time, PartialPolicy, Statistic, WindowOptions,
};
use gripstream_core::protocol::SensorId;
use gripstream_core::simulator::{
    resolve_hand, stream_session, synthesize_session, Expertise, SessionConfig, SessionSpec, Speed, UserProfile,
};
use gripstream_core::stats::{cell_summaries, reconstruct_paper_cells, two_way_anova, AnovaTable, CellSummary};
use gripstream_core::SessionRecording;

pub const SEED_ENV: &str = "GRIPSTREAM_SEED";

#[derive(Debug, Parser)]
#[command(name = "gripstream", version, about = "Glove grip-force telemetry: simulate, stream, record, analyze, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a session and write it to a file.
    Simulate(SimulateArgs),
    /// Send a recorded session to a listening recorder.
    Stream(StreamArgs),
    /// Receive glove streams and save one session file per connection.
    Record(RecordArgs),
    /// Windowed grip-force profile of one sensor.
    Analyze(AnalyzeArgs),
    /// Cell summaries and two-way ANOVA.
    Compare(CompareArgs),
    /// Convert a session file between binary and CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Expertise preset.
    #[arg(long, value_parser = parse_with::<Expertise>, required_unless_present = "config")]
    user: Option<Expertise>,
    /// User identifier stored in the recording (defaults to the preset name).
    #[arg(long)]
    user_id: Option<String>,
    /// left, right, dominant or non-dominant.
    #[arg(long, default_value = "dominant")]
    hand: String,
    /// Session index, 1 to 10.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=10))]
    session: u32,
    /// Session length in seconds (defaults to the preset task time).
    #[arg(long)]
    duration: Option<f64>,
    /// Falls back to the config file, then $GRIPSTREAM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML session description; replaces the preset flags.
    #[arg(long, conflicts_with_all = ["user", "user_id", "hand", "session", "duration"])]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// bin or csv (defaults from the file extension).
    #[arg(long, value_parser = parse_with::<SessionFormat>)]
    format: Option<SessionFormat>,
}

#[derive(Debug, Args)]
struct StreamArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// host:port of the recorder.
    #[arg(long)]
    to: String,
    /// Playback rate; `inf` sends as fast as possible.
    #[arg(long, default_value = "1", value_parser = parse_with::<Speed>)]
    speed: Speed,
}

#[derive(Debug, Args)]
struct RecordArgs {
    #[arg(long)]
    listen: String,
    /// Number of glove connections to accept before finishing.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    connections: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    user_id: String,
    #[arg(long, value_parser = parse_with::<Expertise>)]
    expertise: Expertise,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=10))]
    session: u32,
    #[arg(long, default_value = "bin", value_parser = parse_with::<SessionFormat>)]
    format: SessionFormat,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "7", value_parser = parse_sensor)]
    sensor: SensorId,
    #[arg(long, default_value_t = 2000, value_parser = parse_window)]
    window_ms: u64,
    #[arg(long, default_value = "mean", value_parser = parse_with::<Statistic>)]
    stat: Statistic,
    /// drop (complete windows only) or keep.
    #[arg(long, default_value = "drop", value_parser = parse_with::<PartialPolicy>)]
    partial: PartialPolicy,
    /// Profile CSV path; written to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Factor {
    Expertise,
    Session,
    Hand,
    User,
    /// Position of the file among the --in arguments.
    File,
    /// First or second half of each recording's frames.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Balance {
    /// Reject designs with unequal cell counts.
    Strict,
    /// Trim every cell to the smallest cell count.
    Truncate,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "cells", "reconstruct_paper"])))]
struct CompareArgs {
    /// Session files; may be repeated.
    #[arg(long = "in")]
    input: Vec<PathBuf>,
    /// CSV of raw observations with header `level_a,level_b,value`.
    #[arg(long)]
    cells: Option<PathBuf>,
    /// Rebuild the S7 novice/expert x first/last cells from their published summaries.
    #[arg(long)]
    reconstruct_paper: bool,
    #[arg(long, default_value_t = 721, value_parser = clap::value_parser!(u64).range(2..))]
    n_per_cell: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "7", value_parser = parse_sensor)]
    sensor: SensorId,
    #[arg(long, value_enum, default_value = "expertise")]
    factor_a: Factor,
    #[arg(long, value_enum, default_value = "session")]
    factor_b: Factor,
    #[arg(long, value_enum, default_value = "strict")]
    balance: Balance,
    /// Also write the ANOVA table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_with::<SessionFormat>)]
    format: Option<SessionFormat>,
}

fn parse_with<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn parse_sensor(s: &str) -> Result<SensorId, String> {
    let index: u8 = s.parse().map_err(|_| format!("`{s}` is not a sensor number"))?;
    SensorId::new(index).map_err(|e| e.to_string())
}

fn parse_window(s: &str) -> Result<u64, String> {
    let ms: u64 = s.parse().map_err(|_| format!("`{s}` is not a whole number of milliseconds"))?;
    check_window_ms(ms).map_err(|_| format!("window must be a positive multiple of 20 ms, got {ms}"))
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// Runs the CLI with `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Stream(a) => stream(a, out),
        Command::Record(a) => record(a, out, err),
        Command::Analyze(a) => analyze(a, out, err),
        Command::Compare(a) => compare(a, out),
        Command::Export(a) => export(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let kind = if e.code() == 1 { "usage" } else { "error" };
            let _ = writeln!(err, "gripstream: {kind}: {e}");
            e.code()
        }
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn format_for(path: &Path, explicit: Option<SessionFormat>) -> SessionFormat {
    explicit.unwrap_or_else(|| SessionFormat::from_path(path))
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg = SessionConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let Some(seed) = a.seed {
            cfg.seed = Some(seed);
        }
        let fallback = env_seed()?.unwrap_or(0);
        cfg.to_spec(fallback).map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        let expertise = a.user.expect("clap requires --user without --config");
        let hand = resolve_hand(expertise, &a.hand).map_err(CliError::Usage)?;
        let seed = match a.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        let user_id = a.user_id.clone().unwrap_or_else(|| expertise.as_str().to_string());
        let user = UserProfile::preset(user_id, expertise, hand, a.session).map_err(|e| CliError::Usage(e.to_string()))?;
        let duration = a.duration.unwrap_or_else(|| expertise.task_seconds(hand));
        SessionSpec::new(user, hand, a.session, duration, seed).map_err(|e| CliError::Usage(e.to_string()))?
    };
    let recording = synthesize_session(&spec);
    save_session(&recording, &a.out, format_for(&a.out, a.format)).map_err(data)?;
    let _ = writeln!(
        out,
        "wrote {} frames ({} {} hand, session {}, seed {}) to {}",
        recording.frames.len(),
        recording.expertise,
        recording.hand,
        recording.session_index,
        spec.seed,
        a.out.display()
    );
    Ok(())
}

fn stream(a: StreamArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let recording = load_session(&a.input).map_err(data)?;
    let report = stream_session(&recording, a.to.as_str(), a.speed).map_err(data)?;
    let _ = writeln!(
        out,
        "sent {} frames in {:.3} s",
        report.frames_sent,
        report.wall_time.as_secs_f64()
    );
    Ok(())
}

fn sanitize(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "session".into()
    } else {
        cleaned
    }
}

fn record(a: RecordArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let recorder = Recorder::bind(a.listen.as_str()).map_err(data)?;
    if let Ok(addr) = recorder.local_addr() {
        let _ = writeln!(err, "listening on {addr}");
    }
    let meta = SessionMeta {
        user_id: a.user_id.clone(),
        expertise: a.expertise,
        session_index: a.session,
    };
    let sessions = recorder.record(a.connections as usize, &meta).map_err(data)?;
    fs::create_dir_all(&a.out_dir).map_err(data)?;
    let ext = match a.format {
        SessionFormat::Binary => "bin",
        SessionFormat::Csv => "csv",
    };
    let mut used = std::collections::HashSet::new();
    for (k, s) in sessions.iter().enumerate() {
        let t = s.tally;
        let Some(rec) = &s.recording else {
            let _ = writeln!(
                out,
                "connection {k}: no frames (decode errors {}, out of order {}, wrong hand {})",
                t.decode_errors, t.out_of_order, t.wrong_hand
            );
            continue;
        };
        let mut stem = format!("{}_{}_s{}", sanitize(&a.user_id), rec.hand, a.session);
        if !used.insert(stem.clone()) {
            stem = format!("{stem}_{k}");
        }
        let path = a.out_dir.join(format!("{stem}.{ext}"));
        save_session(rec, &path, a.format).map_err(data)?;
        let gaps = detect_gaps(rec).map(|g| g.missing_frames()).unwrap_or(0);
        let _ = writeln!(
            out,
            "{}: {} hand, {} frames, {} missing, decode errors {}, out of order {}, wrong hand {}",
            path.display(),
            rec.hand,
            rec.frames.len(),
            gaps,
            t.decode_errors,
            t.out_of_order,
            t.wrong_hand
        );
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let recording = load_session(&a.input).map_err(data)?;
    let options = WindowOptions {
        window_ms: a.window_ms,
        statistic: a.stat,
        partial: a.partial,
    };
    let profile = sensor_profile(&recording, a.sensor, options).map_err(data)?;
    let csv = profile_to_csv(&profile);
    let tt = task_time(&recording).map_err(data)?;
    let summary = format!(
        "{} ({}), {} windows of {} ms, task time {:.2} s",
        a.sensor,
        a.sensor.label(),
        profile.windows.len(),
        profile.window_ms,
        tt.seconds
    );
    match &a.out {
        Some(path) => {
            if profile.windows.is_empty() {
                return Err(CliError::Data("profile has no windows".into()));
            }
            fs::write(path, csv).map_err(data)?;
            let _ = writeln!(out, "{summary}; wrote {}", path.display());
        }
        None => {
            let _ = out.write_all(csv.as_bytes());
            let _ = writeln!(err, "{summary}");
        }
    }
    Ok(())
}

fn factor_level(f: Factor, r: &SessionRecording, file: usize, frame: usize) -> String {
    match f {
        Factor::Expertise => r.expertise.to_string(),
        Factor::Session => format!("session {}", r.session_index),
        Factor::Hand => r.hand.to_string(),
        Factor::User => r.user_id.clone(),
        Factor::File => format!("file {}", file + 1),
        Factor::Half => {
            if frame < r.frames.len() / 2 {
                "first half".into()
            } else {
                "second half".into()
            }
        }
    }
}

fn read_cells_csv(path: &Path) -> Result<Vec<(String, String, f64)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "level_a,level_b,value" => {}
        _ => {
            return Err(CliError::Data(format!(
                "{}: header must be `level_a,level_b,value`",
                path.display()
            )))
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |m: &str| CliError::Data(format!("{} line {}: {m}", path.display(), i + 1));
            if fields.len() != 3 {
                return Err(bad("expected 3 fields"));
            }
            let value: f64 = fields[2].parse().map_err(|_| bad("value is not a number"))?;
            if !value.is_finite() {
                return Err(bad("value is not finite"));
            }
            Ok((fields[0].to_string(), fields[1].to_string(), value))
        })
        .collect()
}

fn balance(obs: Vec<(String, String, f64)>, mode: Balance) -> Vec<(String, String, f64)> {
    if mode == Balance::Strict {
        return obs;
    }
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (a, b, _) in &obs {
        *counts.entry((a.clone(), b.clone())).or_default() += 1;
    }
    let min = counts.values().copied().min().unwrap_or(0);
    let mut taken: BTreeMap<(String, String), usize> = BTreeMap::new();
    obs.into_iter()
        .filter(|(a, b, _)| {
            let k = taken.entry((a.clone(), b.clone())).or_default();
            *k += 1;
            *k <= min
        })
        .collect()
}

fn print_cells<A: fmt::Display, B: fmt::Display>(out: &mut dyn Write, cells: &[(A, B, CellSummary)]) {
    let _ = writeln!(out, "{:<18} {:<18} {:>12} {:>10} {:>7}", "level_a", "level_b", "mean", "sem", "n");
    for (a, b, c) in cells {
        let _ = writeln!(
            out,
            "{:<18} {:<18} {:>12.3} {:>10.3} {:>7}",
            a.to_string(),
            b.to_string(),
            c.mean,
            c.sem,
            c.n
        );
    }
}

fn write_table(out: &mut dyn Write, table: &AnovaTable, csv_path: Option<&Path>) -> Result<(), CliError> {
    let _ = writeln!(out, "\n{table}");
    if let Some(path) = csv_path {
        fs::write(path, table.to_csv()).map_err(data)?;
    }
    Ok(())
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.reconstruct_paper {
        let seed = match a.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        let r = reconstruct_paper_cells(a.n_per_cell as usize, seed).map_err(data)?;
        let _ = writeln!(out, "S7 reference cells (seed {seed}, n = {} per cell)", a.n_per_cell);
        let _ = writeln!(
            out,
            "{:<10} {:<8} {:>12} {:>10} {:>12} {:>10} {:>7}",
            "expertise", "session", "target mean", "target sem", "mean", "sem", "n"
        );
        for c in &r.cells {
            let _ = writeln!(
                out,
                "{:<10} {:<8} {:>12.1} {:>10.2} {:>12.3} {:>10.3} {:>7}",
                c.expertise.to_string(),
                c.session.to_string(),
                c.target.mean,
                c.target.sem,
                c.summary.mean,
                c.summary.sem,
                c.summary.n
            );
        }
        write_table(out, &r.table, a.out.as_deref())?;
        let _ = writeln!(out, "\n{}", r.discrepancy_note());
        return Ok(());
    }

    let (obs, names) = if let Some(path) = &a.cells {
        (read_cells_csv(path)?, ("A".to_string(), "B".to_string()))
    } else {
        if a.factor_a == a.factor_b {
            return Err(CliError::Usage("--factor-a and --factor-b must differ".into()));
        }
        let mut obs = Vec::new();
        for (i, path) in a.input.iter().enumerate() {
            let r = load_session(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            obs.extend(r.frames.iter().enumerate().map(|(k, f)| {
                (
                    factor_level(a.factor_a, &r, i, k),
                    factor_level(a.factor_b, &r, i, k),
                    f64::from(f.amplitude(a.sensor)),
                )
            }));
        }
        let name = |f: Factor| f.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        (obs, (name(a.factor_a), name(a.factor_b)))
    };
    let obs = balance(obs, a.balance);
    let cells = cell_summaries(&obs).map_err(data)?;
    print_cells(out, &cells);
    let table = two_way_anova(&obs).map_err(data)?.with_names(names.0, names.1);
    write_table(out, &table, a.out.as_deref())
}

fn export(a: ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let recording = load_session(&a.input).map_err(data)?;
    let format = format_for(&a.out, a.format);
    save_session(&recording, &a.out, format).map_err(data)?;
    let _ = writeln!(out, "wrote {} frames to {}", recording.frames.len(), a.out.display());
    Ok(())
}
