//! Glove wire frames.
//!
//! Each glove transmits one frame every 20 ms carrying all twelve force
//! sensor amplitudes of that hand. On the wire a frame is exactly
//! [`FRAME_LEN`] octets:
//!
//! ```text
//! offset  size  field
//!      0     1  magic 0xA5
//!      1     1  version 0x01
//!      2     1  hand (0 = left, 1 = right)
//!      3     4  seq, little-endian
//!      7     8  timestamp_ms, little-endian
//!     15    24  12 x amplitude (mV), u16 little-endian
//!     39     2  CRC-16/CCITT-FALSE over octets 0..39, little-endian
//! ```
//!
//! Frames are sent back-to-back with no extra framing.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const FRAME_LEN: usize = 41;
pub const MAGIC: u8 = 0xA5;
pub const VERSION: u8 = 0x01;
pub const SENSOR_COUNT: usize = 12;
/// Nominal inter-frame spacing (50 Hz).
pub const FRAME_INTERVAL_MS: u64 = 20;

const HAND_OFFSET: usize = 2;
const SEQ_OFFSET: usize = 3;
const TIMESTAMP_OFFSET: usize = 7;
const AMPLITUDE_OFFSET: usize = 15;
const CRC_OFFSET: usize = 39;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn to_octet(self) -> u8 {
        match self {
            Hand::Left => 0,
            Hand::Right => 1,
        }
    }

    pub fn from_octet(b: u8) -> Option<Hand> {
        match b {
            0 => Some(Hand::Left),
            1 => Some(Hand::Right),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }

    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Hand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Hand::Left),
            "right" | "r" => Ok(Hand::Right),
            other => Err(format!("unknown hand `{other}` (expected left or right)")),
        }
    }
}

const SENSOR_LABELS: [&str; SENSOR_COUNT] = [
    "distal phalanx, thumb",
    "distal phalanx, index finger",
    "middle phalanx, index finger",
    "distal phalanx, middle finger",
    "middle phalanx, middle finger",
    "distal phalanx, ring finger",
    "middle phalanx, small finger",
    "distal phalanx, small finger",
    "middle phalanx, ring finger",
    "thenar eminence",
    "hypothenar eminence",
    "center of palm",
];

/// One of the twelve force sensors of a glove, numbered 1 to 12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SensorId(u8);

impl SensorId {
    /// The small-finger middle phalanx sensor used for precision-grip analysis.
    pub const S7: SensorId = SensorId(7);

    pub fn new(index: u8) -> Result<SensorId, InvalidSensor> {
        if (1..=SENSOR_COUNT as u8).contains(&index) {
            Ok(SensorId(index))
        } else {
            Err(InvalidSensor(index))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Position of this sensor in [`GloveFrame::amplitudes`].
    pub fn slot(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn label(self) -> &'static str {
        SENSOR_LABELS[self.slot()]
    }

    pub fn all() -> impl Iterator<Item = SensorId> {
        (1..=SENSOR_COUNT as u8).map(SensorId)
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sensor index {0} outside 1..=12")]
pub struct InvalidSensor(pub u8);

/// One 20 ms transmission from one glove.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GloveFrame {
    pub hand: Hand,
    pub seq: u32,
    /// Milliseconds since session start.
    pub timestamp_ms: u64,
    /// Millivolts, indexed by [`SensorId::slot`].
    pub amplitudes: [u16; SENSOR_COUNT],
}

impl GloveFrame {
    pub fn amplitude(&self, sensor: SensorId) -> u16 {
        self.amplitudes[sensor.slot()]
    }
}

pub type EncodedFrame = [u8; FRAME_LEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame truncated: got {len} octets, expected {FRAME_LEN} (offset {offset})")]
    Truncated { len: usize, offset: usize },
    #[error("bad magic 0x{found:02X} at offset {offset}")]
    BadMagic { found: u8, offset: usize },
    #[error("unsupported version 0x{found:02X} at offset {offset}")]
    BadVersion { found: u8, offset: usize },
    #[error("invalid hand octet 0x{found:02X} at offset {offset}")]
    BadHand { found: u8, offset: usize },
    #[error("CRC mismatch at offset {offset}: stored 0x{stored:04X}, computed 0x{computed:04X}")]
    CrcMismatch {
        stored: u16,
        computed: u16,
        offset: usize,
    },
}

impl DecodeError {
    /// Offset within the frame of the octet(s) that failed.
    pub fn offset(&self) -> usize {
        match *self {
            DecodeError::Truncated { offset, .. }
            | DecodeError::BadMagic { offset, .. }
            | DecodeError::BadVersion { offset, .. }
            | DecodeError::BadHand { offset, .. }
            | DecodeError::CrcMismatch { offset, .. } => offset,
        }
    }
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16_ccitt_false(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in bytes {
        crc ^= u16::from(b) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

pub fn encode_frame(frame: &GloveFrame) -> EncodedFrame {
    let mut out = [0u8; FRAME_LEN];
    out[0] = MAGIC;
    out[1] = VERSION;
    out[HAND_OFFSET] = frame.hand.to_octet();
    out[SEQ_OFFSET..TIMESTAMP_OFFSET].copy_from_slice(&frame.seq.to_le_bytes());
    out[TIMESTAMP_OFFSET..AMPLITUDE_OFFSET].copy_from_slice(&frame.timestamp_ms.to_le_bytes());
    for (i, a) in frame.amplitudes.iter().enumerate() {
        let at = AMPLITUDE_OFFSET + 2 * i;
        out[at..at + 2].copy_from_slice(&a.to_le_bytes());
    }
    let crc = crc16_ccitt_false(&out[..CRC_OFFSET]);
    out[CRC_OFFSET..].copy_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<GloveFrame, DecodeError> {
    if bytes.len() != FRAME_LEN {
        return Err(DecodeError::Truncated {
            len: bytes.len(),
            offset: bytes.len().min(FRAME_LEN),
        });
    }
    if bytes[0] != MAGIC {
        return Err(DecodeError::BadMagic {
            found: bytes[0],
            offset: 0,
        });
    }
    let stored = u16::from_le_bytes([bytes[CRC_OFFSET], bytes[CRC_OFFSET + 1]]);
    let computed = crc16_ccitt_false(&bytes[..CRC_OFFSET]);
    if stored != computed {
        return Err(DecodeError::CrcMismatch {
            stored,
            computed,
            offset: CRC_OFFSET,
        });
    }
    if bytes[1] != VERSION {
        return Err(DecodeError::BadVersion {
            found: bytes[1],
            offset: 1,
        });
    }
    let hand = Hand::from_octet(bytes[HAND_OFFSET]).ok_or(DecodeError::BadHand {
        found: bytes[HAND_OFFSET],
        offset: HAND_OFFSET,
    })?;
    let seq = u32::from_le_bytes(bytes[SEQ_OFFSET..TIMESTAMP_OFFSET].try_into().unwrap());
    let timestamp_ms =
        u64::from_le_bytes(bytes[TIMESTAMP_OFFSET..AMPLITUDE_OFFSET].try_into().unwrap());
    let mut amplitudes = [0u16; SENSOR_COUNT];
    for (i, a) in amplitudes.iter_mut().enumerate() {
        let at = AMPLITUDE_OFFSET + 2 * i;
        *a = u16::from_le_bytes([bytes[at], bytes[at + 1]]);
    }
    Ok(GloveFrame {
        hand,
        seq,
        timestamp_ms,
        amplitudes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CadenceViolation {
    /// Seq of the frame preceding the offending gap.
    pub after_seq: u32,
    pub gap_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CadenceReport {
    pub nominal_ms: u64,
    pub violations: Vec<CadenceViolation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CadenceError {
    #[error("cadence check needs at least 2 frames, got {0}")]
    EmptyStream(usize),
}

/// Lists every adjacent pair whose timestamp gap is further than
/// `tolerance_ms` from the nominal 20 ms.
pub fn validate_cadence(
    frames: &[GloveFrame],
    tolerance_ms: f64,
) -> Result<CadenceReport, CadenceError> {
    if frames.len() < 2 {
        return Err(CadenceError::EmptyStream(frames.len()));
    }
    let violations = frames
        .windows(2)
        .filter_map(|pair| {
            let gap_ms = pair[1].timestamp_ms.saturating_sub(pair[0].timestamp_ms);
            let deviation = (gap_ms as f64 - FRAME_INTERVAL_MS as f64).abs();
            (deviation > tolerance_ms).then_some(CadenceViolation {
                after_seq: pair[0].seq,
                gap_ms,
            })
        })
        .collect();
    Ok(CadenceReport {
        nominal_ms: FRAME_INTERVAL_MS,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_at(seq: u32, t: u64) -> GloveFrame {
        GloveFrame {
            hand: Hand::Right,
            seq,
            timestamp_ms: t,
            amplitudes: [0; SENSOR_COUNT],
        }
    }

    fn counting_frame() -> GloveFrame {
        let mut amplitudes = [0u16; SENSOR_COUNT];
        for (i, a) in amplitudes.iter_mut().enumerate() {
            *a = i as u16 + 1;
        }
        GloveFrame {
            hand: Hand::Left,
            seq: 17,
            timestamp_ms: 340,
            amplitudes,
        }
    }

    #[test]
    fn zero_frame_header() {
        let enc = encode_frame(&frame_at(0, 0).clone_with_hand(Hand::Left));
        assert_eq!(enc.len(), FRAME_LEN);
        assert_eq!(&enc[..3], &[0xA5, 0x01, 0x00]);
    }

    #[test]
    fn zero_frame_crc_matches_reference() {
        // Frozen from a table-driven CRC-16/CCITT-FALSE run over A5 01 00 + 36 zero octets.
        let enc = encode_frame(&frame_at(0, 0).clone_with_hand(Hand::Left));
        assert_eq!(u16::from_le_bytes([enc[39], enc[40]]), 0x4C05);
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    }

    #[test]
    fn twelve_amplitude_slots() {
        let enc = encode_frame(&counting_frame());
        for i in 0..SENSOR_COUNT {
            let at = 15 + 2 * i;
            assert_eq!(u16::from_le_bytes([enc[at], enc[at + 1]]), i as u16 + 1);
        }
    }

    #[test]
    fn round_trip_counting_frame() {
        let f = counting_frame();
        let enc = encode_frame(&f);
        assert_eq!(decode_frame(&enc).unwrap(), f);
        assert_eq!(encode_frame(&decode_frame(&enc).unwrap()), enc);
        assert_eq!(f.amplitude(SensorId::S7), 7);
    }

    #[test]
    fn last_octet_flip_is_crc_mismatch() {
        let mut enc = encode_frame(&counting_frame());
        enc[40] ^= 0xFF;
        assert!(matches!(
            decode_frame(&enc),
            Err(DecodeError::CrcMismatch { offset: 39, .. })
        ));
    }

    #[test]
    fn only_41_octets_can_decode() {
        let enc = encode_frame(&counting_frame());
        let mut long = enc.to_vec();
        long.extend_from_slice(&[0u8; 20]);
        for len in 0..=60 {
            let r = decode_frame(&long[..len]);
            if len == FRAME_LEN {
                assert!(r.is_ok());
            } else {
                assert!(matches!(r, Err(DecodeError::Truncated { .. })), "len {len}");
            }
        }
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut enc = encode_frame(&counting_frame());
        enc[0] = 0x5A;
        let err = decode_frame(&enc).unwrap_err();
        assert_eq!(err.offset(), 0);
        assert!(matches!(err, DecodeError::BadMagic { found: 0x5A, .. }));
    }

    #[test]
    fn bad_hand_with_valid_crc() {
        let mut enc = encode_frame(&counting_frame());
        enc[2] = 7;
        let crc = crc16_ccitt_false(&enc[..39]);
        enc[39..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_frame(&enc),
            Err(DecodeError::BadHand { found: 7, offset: 2 })
        ));
    }

    #[test]
    fn sensor_ids() {
        assert!(SensorId::new(0).is_err());
        assert!(SensorId::new(13).is_err());
        assert_eq!(SensorId::all().count(), 12);
        assert_eq!(SensorId::S7.label(), "middle phalanx, small finger");
        let labels: std::collections::HashSet<_> = SensorId::all().map(|s| s.label()).collect();
        assert_eq!(labels.len(), 12);
    }

    #[test]
    fn cadence_exact_spacing() {
        let frames: Vec<_> = (0..4).map(|i| frame_at(i, u64::from(i) * 20)).collect();
        let report = validate_cadence(&frames, 1.0).unwrap();
        assert_eq!(report.nominal_ms, 20);
        assert!(report.violations.is_empty());
        assert!(validate_cadence(&frames, 0.0).unwrap().violations.is_empty());
    }

    #[test]
    fn cadence_constructed_gap() {
        let frames = vec![frame_at(0, 0), frame_at(1, 20), frame_at(2, 100)];
        let report = validate_cadence(&frames, 1.0).unwrap();
        assert_eq!(
            report.violations,
            vec![CadenceViolation {
                after_seq: 1,
                gap_ms: 80
            }]
        );
    }

    #[test]
    fn cadence_needs_two_frames() {
        assert_eq!(
            validate_cadence(&[frame_at(0, 0)], 1.0),
            Err(CadenceError::EmptyStream(1))
        );
    }

    #[test]
    fn hundred_frames_fill_one_window() {
        let frames: Vec<_> = (0..100).map(|i| frame_at(i, u64::from(i) * 20)).collect();
        assert!(validate_cadence(&frames, 0.0).unwrap().violations.is_empty());
        let span = frames.last().unwrap().timestamp_ms - frames[0].timestamp_ms + FRAME_INTERVAL_MS;
        assert_eq!(span, 2000);
    }

    impl GloveFrame {
        fn clone_with_hand(mut self, hand: Hand) -> GloveFrame {
            self.hand = hand;
            self
        }
    }
}
