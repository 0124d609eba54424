//! Fixtures shared by the criterion benches.

use gripstream_core::simulator::SessionSpec;
use gripstream_core::{synthesize_session, Expertise, Hand, SessionRecording, UserProfile};

/// A deterministic preset session of `seconds` length.
pub fn fixture_session(expertise: Expertise, seconds: f64) -> SessionRecording {
    let hand: Hand = expertise.dominant_hand();
    let user = UserProfile::preset("bench", expertise, hand, 1).expect("valid preset");
    let spec = SessionSpec::new(user, hand, 1, seconds, 7).expect("valid spec");
    synthesize_session(&spec)
}

/// A balanced 2x2 design with `n` observations per cell.
pub fn fixture_observations(n: usize) -> Vec<(u8, u8, f64)> {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut obs = Vec::with_capacity(4 * n);
    for a in 0..2u8 {
        for b in 0..2u8 {
            for _ in 0..n {
                obs.push((a, b, 100.0 * f64::from(a) + 10.0 * f64::from(b) + next()));
            }
        }
    }
    obs
}
