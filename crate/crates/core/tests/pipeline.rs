mod common;

use std::io::Write;
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

use common::random_recording;
use gripstream_core::ingest::{detect_gaps, load_session, save_session, Recorder, SessionFormat};
use gripstream_core::protocol::{encode_frame, validate_cadence, Hand, SensorId};
use gripstream_core::simulator::{
    calibrate_to_cell, stream_session, synthesize_session, Expertise, SessionSpec, Speed, StreamError,
    UserProfile,
};
use gripstream_core::stats::mean_sem;
use gripstream_core::{IngestError, SessionRecording};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn preset_session(expertise: Expertise, hand: Hand, seed: u64) -> SessionRecording {
    let user = UserProfile::preset(expertise.as_str(), expertise, hand, 1).unwrap();
    let spec = SessionSpec::new(user, hand, 1, expertise.task_seconds(hand), seed).unwrap();
    synthesize_session(&spec)
}

#[test]
fn synthesis_is_deterministic_and_on_cadence() {
    let a = preset_session(Expertise::Expert, Hand::Left, 42);
    let b = preset_session(Expertise::Expert, Hand::Left, 42);
    let c = preset_session(Expertise::Expert, Hand::Left, 43);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let bytes = |r: &SessionRecording| r.frames.iter().flat_map(encode_frame).collect::<Vec<u8>>();
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(a.frames.len(), 444);
    assert!(validate_cadence(&a.frames, 0.0).unwrap().violations.is_empty());
    let novice = preset_session(Expertise::Novice, Hand::Right, 1);
    assert_eq!(novice.frames.len(), 771);
}

#[test]
fn calibrated_model_recovers_cell() {
    let n = 10_000;
    for &(m, s, seed) in &[(98.0, 1.2, 1u64), (78.0, 1.6, 2), (594.0, 1.8, 3), (609.0, 2.2, 4)] {
        let model = calibrate_to_cell(m, s, n).unwrap();
        let normal = Normal::new(model.mean, model.sd).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let c = mean_sem(&values).unwrap();
        assert!((c.mean - m).abs() < 4.0 * s, "mean {} vs {m}", c.mean);
        assert!((c.sem - s).abs() < 0.1 * s, "sem {} vs {s}", c.sem);
    }
}

#[test]
fn synthesized_sessions_recover_cell() {
    // Far enough from zero that clamping to the u16 range does not bias the cell.
    let (m, s, n) = (594.0, 1.8, 10_000);
    let model = calibrate_to_cell(m, s, n).unwrap();
    let user = UserProfile::uniform("cal", Expertise::Expert, model);
    // 10 000 frames at 20 ms = 200 s
    let spec = SessionSpec::new(user, Hand::Left, 1, 200.0, 5).unwrap();
    let rec = synthesize_session(&spec);
    let values: Vec<f64> = rec.frames.iter().map(|f| f64::from(f.amplitude(SensorId::S7))).collect();
    assert_eq!(values.len(), n);
    let c = mean_sem(&values).unwrap();
    assert!((c.mean - m).abs() < 4.0 * s, "mean {} vs {m}", c.mean);
    assert!((c.sem - s).abs() < 0.1 * s, "sem {} vs {s}", c.sem);
}

#[test]
fn loopback_reproduces_recording() {
    let original = preset_session(Expertise::Expert, Hand::Left, 7);
    let recorder = Recorder::bind("127.0.0.1:0").unwrap();
    let addr = recorder.local_addr().unwrap();
    let sender = {
        let rec = original.clone();
        thread::spawn(move || stream_session(&rec, addr, Speed::UNBOUNDED).unwrap())
    };
    let got = recorder.record(1, &original.meta()).unwrap();
    let report = sender.join().unwrap();
    assert_eq!(report.frames_sent, 444);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].tally.decode_errors, 0);
    assert_eq!(got[0].recording.as_ref().unwrap(), &original);
}

#[test]
fn two_gloves_at_once() {
    let left = preset_session(Expertise::Expert, Hand::Left, 1);
    let right = preset_session(Expertise::Expert, Hand::Right, 2);
    let recorder = Recorder::bind("127.0.0.1:0").unwrap();
    let addr = recorder.local_addr().unwrap();
    let senders: Vec<_> = [left.clone(), right.clone()]
        .into_iter()
        .map(|rec| thread::spawn(move || stream_session(&rec, addr, Speed::new(20.0).unwrap()).unwrap()))
        .collect();
    let got = recorder.record(2, &left.meta()).unwrap();
    for s in senders {
        s.join().unwrap();
    }
    let mut recs: Vec<SessionRecording> = got.into_iter().map(|r| r.recording.unwrap()).collect();
    recs.sort_by_key(|r| r.hand);
    assert_eq!(recs[0], left);
    // the right-hand frames are relabelled with the recorder's metadata only
    assert_eq!(recs[1].frames, right.frames);
    assert_eq!(recs[1].hand, Hand::Right);
}

#[test]
fn corrupted_frame_is_isolated() {
    let original = preset_session(Expertise::Expert, Hand::Left, 3);
    let recorder = Recorder::bind("127.0.0.1:0").unwrap();
    let addr = recorder.local_addr().unwrap();
    let frames = original.frames.clone();
    let sender = thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        for (i, f) in frames.iter().enumerate() {
            let mut bytes = encode_frame(f);
            if i == 200 {
                bytes[30] ^= 0x04;
            }
            s.write_all(&bytes).unwrap();
        }
    });
    let got = recorder.record(1, &original.meta()).unwrap();
    sender.join().unwrap();
    let rec = got[0].recording.as_ref().unwrap();
    assert_eq!(rec.frames.len(), 443);
    assert_eq!(got[0].tally.decode_errors, 1);
    let gaps = detect_gaps(rec).unwrap();
    assert_eq!(gaps.gaps.len(), 1);
    assert_eq!((gaps.gaps[0].after_seq, gaps.gaps[0].missing), (199, 1));
}

#[test]
fn refused_connection_sends_nothing() {
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let rec = preset_session(Expertise::Novice, Hand::Right, 1);
    let err = stream_session(&rec, addr, Speed::UNBOUNDED).unwrap_err();
    assert!(matches!(err, StreamError::ConnectionRefused { .. }));
    assert_eq!(err.frames_sent(), 0);
}

#[test]
fn lost_connection_reports_progress() {
    let recorder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = recorder.local_addr().unwrap();
    let closer = thread::spawn(move || {
        let (s, _) = recorder.accept().unwrap();
        thread::sleep(Duration::from_millis(100));
        drop(s);
    });
    let rec = preset_session(Expertise::Novice, Hand::Right, 1);
    let err = stream_session(&rec, addr, Speed::new(10.0).unwrap()).unwrap_err();
    closer.join().unwrap();
    match err {
        StreamError::ConnectionLost { frames_sent, .. } => assert!(frames_sent > 0 && frames_sent < 771),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bind_failure() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    assert!(matches!(Recorder::bind(addr), Err(IngestError::BindFailure { .. })));
}

#[test]
fn realtime_stream_tracks_task_time() {
    let rec = preset_session(Expertise::Expert, Hand::Left, 11);
    let recorder = Recorder::bind("127.0.0.1:0").unwrap();
    let addr = recorder.local_addr().unwrap();
    let sender = {
        let rec = rec.clone();
        thread::spawn(move || stream_session(&rec, addr, Speed::REALTIME).unwrap())
    };
    let got = recorder.record(1, &rec.meta()).unwrap();
    let report = sender.join().unwrap();
    assert_eq!(report.frames_sent, 444);
    let secs = report.wall_time.as_secs_f64();
    assert!((8.88..8.88 + 0.5).contains(&secs), "wall time {secs}");
    assert_eq!(got[0].recording.as_ref().unwrap(), &rec);
}

#[test]
fn random_drop_mask_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rec = random_recording(1, 1);
    let template = rec.frames[0].clone();
    let mask: Vec<bool> = (0..1000).map(|i| i == 0 || i == 999 || rng.random::<f64>() >= 0.1).collect();
    rec.frames = (0..1000u32)
        .filter(|&i| mask[i as usize])
        .map(|i| {
            let mut f = template.clone();
            f.seq = i;
            f.timestamp_ms = u64::from(i) * 20;
            f
        })
        .collect();
    let report = detect_gaps(&rec).unwrap();
    let dropped = mask.iter().filter(|k| !**k).count() as u64;
    assert_eq!(report.expected_frames, 1000);
    assert_eq!(report.missing_frames(), dropped);
    assert_eq!(report.received_frames + report.missing_frames(), 1000);
}

#[test]
fn expert_session_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rec = preset_session(Expertise::Expert, Hand::Left, 42);
    for (name, format) in [("s.bin", SessionFormat::Binary), ("s.csv", SessionFormat::Csv)] {
        let path = dir.path().join(name);
        save_session(&rec, &path, format).unwrap();
        assert_eq!(load_session(&path).unwrap(), rec);
    }
    assert!(matches!(
        load_session(&dir.path().join("missing.bin")),
        Err(IngestError::IoFailure(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn persistence_round_trip(seed in any::<u64>()) {
        let rec = random_recording(seed, 60);
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("r.bin", SessionFormat::Binary), ("r.csv", SessionFormat::Csv)] {
            let path = dir.path().join(name);
            save_session(&rec, &path, format).unwrap();
            prop_assert_eq!(&load_session(&path).unwrap(), &rec);
        }
    }
}
