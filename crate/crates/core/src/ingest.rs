//! Receiving, assembling and persisting glove sessions.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::thread;

use thiserror::Error;

use crate::protocol::{decode_frame, encode_frame, GloveFrame, Hand, FRAME_LEN, MAGIC, SENSOR_COUNT};
use crate::simulator::Expertise;

/// Ordered frames of one user, hand and session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecording {
    pub user_id: String,
    pub expertise: Expertise,
    pub session_index: u32,
    pub hand: Hand,
    pub frames: Vec<GloveFrame>,
}

impl SessionRecording {
    pub fn meta(&self) -> SessionMeta {
        SessionMeta {
            user_id: self.user_id.clone(),
            expertise: self.expertise,
            session_index: self.session_index,
        }
    }

    /// Checks that frames are strictly ordered by seq and all belong to `hand`.
    pub fn check(&self) -> Result<(), String> {
        if let Some(f) = self.frames.iter().find(|f| f.hand != self.hand) {
            return Err(format!(
                "frame seq {} is from the {} hand, recording is {}",
                f.seq, f.hand, self.hand
            ));
        }
        if let Some(w) = self.frames.windows(2).find(|w| w[1].seq <= w[0].seq) {
            return Err(format!("seq {} follows seq {}", w[1].seq, w[0].seq));
        }
        Ok(())
    }
}

/// Session metadata supplied by the operator when recording; the hand comes
/// from the frames themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionMeta {
    pub user_id: String,
    pub expertise: Expertise,
    pub session_index: u32,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot bind {endpoint}: {source}")]
    BindFailure {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("I/O failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("malformed session file at {at}: {message}")]
    MalformedFile { at: FileLocation, message: String },
    #[error("recording has no frames")]
    EmptyRecording,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileLocation {
    Byte(u64),
    Cell { line: u64, column: usize },
}

impl fmt::Display for FileLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileLocation::Byte(offset) => write!(f, "byte offset {offset}"),
            FileLocation::Cell { line, column } => write!(f, "line {line}, column {column}"),
        }
    }
}

fn malformed(at: FileLocation, message: impl Into<String>) -> IngestError {
    IngestError::MalformedFile {
        at,
        message: message.into(),
    }
}

/// Incremental decoder for a back-to-back frame stream.
///
/// Undecodable bytes are skipped until the next valid frame; each run of
/// skipped bytes counts as `ceil(len / 41)` decode errors, so one corrupted
/// frame costs exactly one error.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    skipped: usize,
    errors: usize,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8], mut emit: impl FnMut(GloveFrame)) {
        self.buf.extend_from_slice(bytes);
        let mut pos = 0;
        loop {
            let Some(rel) = self.buf[pos..].iter().position(|&b| b == MAGIC) else {
                self.skipped += self.buf.len() - pos;
                pos = self.buf.len();
                break;
            };
            self.skipped += rel;
            pos += rel;
            if self.buf.len() - pos < FRAME_LEN {
                break;
            }
            match decode_frame(&self.buf[pos..pos + FRAME_LEN]) {
                Ok(frame) => {
                    self.settle_skipped();
                    emit(frame);
                    pos += FRAME_LEN;
                }
                Err(_) => {
                    self.skipped += 1;
                    pos += 1;
                }
            }
        }
        self.buf.drain(..pos);
    }

    fn settle_skipped(&mut self) {
        self.errors += self.skipped.div_ceil(FRAME_LEN);
        self.skipped = 0;
    }

    /// Decode errors so far, including any bytes still waiting to complete a frame.
    pub fn finish(mut self) -> usize {
        self.skipped += self.buf.len();
        self.settle_skipped();
        self.errors
    }
}

/// Counts of inbound frames that did not make it into a recording.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestTally {
    pub decode_errors: usize,
    /// Frames whose seq did not exceed the last accepted seq.
    pub out_of_order: usize,
    /// Frames from a different hand than the first accepted frame.
    pub wrong_hand: usize,
}

/// Builds a recording from decoded frames, dropping late and foreign ones.
#[derive(Debug)]
pub struct SessionAssembler {
    meta: SessionMeta,
    hand: Option<Hand>,
    frames: Vec<GloveFrame>,
    tally: IngestTally,
}

impl SessionAssembler {
    pub fn new(meta: SessionMeta) -> Self {
        SessionAssembler {
            meta,
            hand: None,
            frames: Vec::new(),
            tally: IngestTally::default(),
        }
    }

    pub fn push(&mut self, frame: GloveFrame) {
        let hand = *self.hand.get_or_insert(frame.hand);
        if frame.hand != hand {
            self.tally.wrong_hand += 1;
            return;
        }
        if let Some(last) = self.frames.last() {
            if frame.seq <= last.seq {
                self.tally.out_of_order += 1;
                return;
            }
        }
        self.frames.push(frame);
    }

    pub fn finish(self, decode_errors: usize) -> ReceivedSession {
        let tally = IngestTally {
            decode_errors,
            ..self.tally
        };
        let recording = self.hand.map(|hand| SessionRecording {
            user_id: self.meta.user_id,
            expertise: self.meta.expertise,
            session_index: self.meta.session_index,
            hand,
            frames: self.frames,
        });
        ReceivedSession {
            peer: None,
            recording,
            tally,
        }
    }
}

/// Result of one inbound connection.
#[derive(Debug)]
pub struct ReceivedSession {
    pub peer: Option<SocketAddr>,
    /// `None` when the peer sent no decodable frame.
    pub recording: Option<SessionRecording>,
    pub tally: IngestTally,
}

/// Decodes a whole byte stream until EOF. Read errors end the stream like a disconnect.
pub fn receive_stream<R: Read>(mut reader: R, meta: SessionMeta) -> ReceivedSession {
    let mut decoder = StreamDecoder::new();
    let mut assembler = SessionAssembler::new(meta);
    let mut chunk = [0u8; 4096];
    loop {
        match reader.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => decoder.feed(&chunk[..n], |f| assembler.push(f)),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    assembler.finish(decoder.finish())
}

/// A bound listening endpoint that turns each inbound glove connection into a recording.
#[derive(Debug)]
pub struct Recorder {
    listener: TcpListener,
}

impl Recorder {
    pub fn bind<A: ToSocketAddrs + fmt::Display>(endpoint: A) -> Result<Self, IngestError> {
        TcpListener::bind(&endpoint)
            .map(|listener| Recorder { listener })
            .map_err(|source| IngestError::BindFailure {
                endpoint: endpoint.to_string(),
                source,
            })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts `connections` peers, receiving each on its own thread, and
    /// returns their sessions in accept order once every peer has disconnected.
    pub fn record(&self, connections: usize, meta: &SessionMeta) -> Result<Vec<ReceivedSession>, IngestError> {
        thread::scope(|scope| {
            let mut handles = Vec::with_capacity(connections);
            for _ in 0..connections {
                let (stream, peer) = self.listener.accept()?;
                let meta = meta.clone();
                handles.push(scope.spawn(move || receive_connection(stream, peer, meta)));
            }
            Ok(handles
                .into_iter()
                .map(|h| h.join().expect("receiver thread panicked"))
                .collect())
        })
    }
}

fn receive_connection(stream: TcpStream, peer: SocketAddr, meta: SessionMeta) -> ReceivedSession {
    let mut received = receive_stream(BufReader::new(stream), meta);
    received.peer = Some(peer);
    received
}

/// Binds `endpoint` and records `connections` sessions.
pub fn record<A: ToSocketAddrs + fmt::Display>(
    endpoint: A,
    connections: usize,
    meta: &SessionMeta,
) -> Result<Vec<ReceivedSession>, IngestError> {
    Recorder::bind(endpoint)?.record(connections, meta)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gap {
    pub after_seq: u32,
    pub missing: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapReport {
    pub expected_frames: u64,
    pub received_frames: u64,
    pub gaps: Vec<Gap>,
}

impl GapReport {
    pub fn missing_frames(&self) -> u64 {
        self.gaps.iter().map(|g| g.missing).sum()
    }
}

pub fn detect_gaps(recording: &SessionRecording) -> Result<GapReport, IngestError> {
    let (first, last) = match (recording.frames.first(), recording.frames.last()) {
        (Some(f), Some(l)) => (f.seq, l.seq),
        _ => return Err(IngestError::EmptyRecording),
    };
    let gaps = recording
        .frames
        .windows(2)
        .filter(|w| w[1].seq > w[0].seq + 1)
        .map(|w| Gap {
            after_seq: w[0].seq,
            missing: u64::from(w[1].seq - w[0].seq - 1),
        })
        .collect();
    Ok(GapReport {
        expected_frames: u64::from(last - first) + 1,
        received_frames: recording.frames.len() as u64,
        gaps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionFormat {
    Binary,
    Csv,
}

impl SessionFormat {
    /// `.csv` selects CSV; anything else is binary.
    pub fn from_path(path: &Path) -> SessionFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => SessionFormat::Csv,
            _ => SessionFormat::Binary,
        }
    }
}

impl std::str::FromStr for SessionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bin" | "binary" => Ok(SessionFormat::Binary),
            "csv" => Ok(SessionFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected bin or csv)")),
        }
    }
}

pub const BINARY_MAGIC: &[u8; 4] = b"GFS1";

pub const CSV_HEADER: [&str; 18] = [
    "user_id",
    "expertise",
    "session_index",
    "hand",
    "seq",
    "timestamp_ms",
    "s1",
    "s2",
    "s3",
    "s4",
    "s5",
    "s6",
    "s7",
    "s8",
    "s9",
    "s10",
    "s11",
    "s12",
];

pub fn save_session(recording: &SessionRecording, path: &Path, format: SessionFormat) -> Result<(), IngestError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        SessionFormat::Binary => write_binary(recording, &mut out)?,
        SessionFormat::Csv => write_csv(recording, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

/// Loads either format, recognising binary files by their magic. Files too
/// short to hold the magic are treated as truncated binary files.
pub fn load_session(path: &Path) -> Result<SessionRecording, IngestError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if BINARY_MAGIC.starts_with(&bytes[..bytes.len().min(BINARY_MAGIC.len())]) {
        read_binary(&bytes)
    } else {
        read_csv(&bytes)
    }
}

/// Layout: `GFS1` | user_id length (u16 LE) | user_id UTF-8 | expertise (u8) |
/// session_index (u32 LE) | hand (u8) | frame count (u32 LE) | wire frames.
pub fn write_binary<W: Write>(recording: &SessionRecording, out: &mut W) -> io::Result<()> {
    let user = recording.user_id.as_bytes();
    let user_len = u16::try_from(user.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "user_id longer than 65535 bytes"))?;
    let count = u32::try_from(recording.frames.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many frames"))?;
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&user_len.to_le_bytes())?;
    out.write_all(user)?;
    out.write_all(&[recording.expertise.to_octet()])?;
    out.write_all(&recording.session_index.to_le_bytes())?;
    out.write_all(&[recording.hand.to_octet()])?;
    out.write_all(&count.to_le_bytes())?;
    for frame in &recording.frames {
        out.write_all(&encode_frame(frame))?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IngestError> {
        if self.bytes.len() - self.pos < n {
            return Err(malformed(
                FileLocation::Byte(self.bytes.len() as u64),
                format!("file ends inside {what} starting at byte {}", self.pos),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn at(&self) -> FileLocation {
        FileLocation::Byte(self.pos as u64)
    }
}

pub fn read_binary(bytes: &[u8]) -> Result<SessionRecording, IngestError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != BINARY_MAGIC {
        return Err(malformed(FileLocation::Byte(0), "missing GFS1 magic"));
    }
    let user_len = u16::from_le_bytes(cur.take(2, "user_id length")?.try_into().unwrap());
    let user_at = cur.at();
    let user_id = std::str::from_utf8(cur.take(usize::from(user_len), "user_id")?)
        .map_err(|e| malformed(user_at, format!("user_id is not UTF-8: {e}")))?
        .to_string();
    let exp_at = cur.at();
    let exp = cur.take(1, "expertise")?[0];
    let expertise = Expertise::from_octet(exp)
        .ok_or_else(|| malformed(exp_at, format!("unknown expertise code {exp}")))?;
    let session_index = u32::from_le_bytes(cur.take(4, "session index")?.try_into().unwrap());
    let hand_at = cur.at();
    let hand_code = cur.take(1, "hand")?[0];
    let hand = Hand::from_octet(hand_code)
        .ok_or_else(|| malformed(hand_at, format!("unknown hand code {hand_code}")))?;
    let count = u32::from_le_bytes(cur.take(4, "frame count")?.try_into().unwrap());

    let mut frames = Vec::with_capacity((count as usize).min(bytes.len() / FRAME_LEN + 1));
    for i in 0..count {
        let start = cur.pos;
        let raw = cur.take(FRAME_LEN, &format!("frame {i}"))?;
        let frame = decode_frame(raw).map_err(|e| {
            malformed(
                FileLocation::Byte((start + e.offset()) as u64),
                format!("frame {i}: {e}"),
            )
        })?;
        frames.push(frame);
    }
    if cur.pos != bytes.len() {
        return Err(malformed(
            cur.at(),
            format!("{} trailing bytes after {count} frames", bytes.len() - cur.pos),
        ));
    }
    let recording = SessionRecording {
        user_id,
        expertise,
        session_index,
        hand,
        frames,
    };
    recording
        .check()
        .map_err(|m| malformed(FileLocation::Byte(cur.pos as u64), m))?;
    Ok(recording)
}

pub fn write_csv<W: Write>(recording: &SessionRecording, out: W) -> Result<(), IngestError> {
    if recording.frames.is_empty() {
        return Err(IngestError::EmptyRecording);
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| IngestError::IoFailure(e.into());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let session = recording.session_index.to_string();
    for f in &recording.frames {
        let mut row = vec![
            recording.user_id.clone(),
            recording.expertise.to_string(),
            session.clone(),
            f.hand.to_string(),
            f.seq.to_string(),
            f.timestamp_ms.to_string(),
        ];
        row.extend(f.amplitudes.iter().map(u16::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(bytes: &[u8]) -> Result<SessionRecording, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(|e| csv_malformed(&e, 1))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(malformed(
            FileLocation::Cell { line: 1, column: 1 },
            format!("header must be `{}`", CSV_HEADER.join(",")),
        ));
    }

    let mut meta: Option<(String, Expertise, u32, Hand)> = None;
    let mut frames = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| csv_malformed(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |column: usize| -> &str { record.get(column).unwrap_or("") };
        let bad = |column: usize, msg: String| malformed(FileLocation::Cell { line, column: column + 1 }, msg);

        fn parse<T: std::str::FromStr>(s: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            s.trim().parse::<T>().map_err(|e| format!("`{s}`: {e}"))
        }

        let expertise: Expertise = field(1).parse().map_err(|m| bad(1, m))?;
        let session: u32 = parse(field(2)).map_err(|m| bad(2, m))?;
        let hand: Hand = field(3).parse().map_err(|m| bad(3, m))?;
        let seq: u32 = parse(field(4)).map_err(|m| bad(4, m))?;
        let timestamp_ms: u64 = parse(field(5)).map_err(|m| bad(5, m))?;
        let mut amplitudes = [0u16; SENSOR_COUNT];
        for (i, a) in amplitudes.iter_mut().enumerate() {
            *a = parse(field(6 + i)).map_err(|m| bad(6 + i, m))?;
        }

        match &meta {
            None => meta = Some((field(0).to_string(), expertise, session, hand)),
            Some((user, e, s, h)) => {
                let mismatch = [
                    (0, user.as_str() != field(0)),
                    (1, *e != expertise),
                    (2, *s != session),
                    (3, *h != hand),
                ]
                .into_iter()
                .find(|(_, differs)| *differs);
                if let Some((column, _)) = mismatch {
                    return Err(bad(column, "session metadata differs from the first row".into()));
                }
            }
        }
        if let Some(prev) = frames.last().map(|f: &GloveFrame| f.seq) {
            if seq <= prev {
                return Err(bad(4, format!("seq {seq} does not follow seq {prev}")));
            }
        }
        frames.push(GloveFrame {
            hand,
            seq,
            timestamp_ms,
            amplitudes,
        });
    }

    let (user_id, expertise, session_index, hand) = meta.ok_or_else(|| {
        malformed(
            FileLocation::Cell { line: 2, column: 1 },
            "no data rows; session metadata is unrecoverable",
        )
    })?;
    Ok(SessionRecording {
        user_id,
        expertise,
        session_index,
        hand,
        frames,
    })
}

fn csv_malformed(e: &csv::Error, fallback_line: u64) -> IngestError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    malformed(FileLocation::Cell { line, column: 1 }, e.to_string())
}
