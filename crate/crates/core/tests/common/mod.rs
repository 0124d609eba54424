//! Reference computations that share no code with the library.

#![allow(dead_code)]

use gripstream_core::protocol::{GloveFrame, Hand};
use gripstream_core::{Expertise, SessionRecording};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sums of squares of a balanced two-way design from raw totals
/// (`sum y^2 - T^2/N` style), independent of the mean-deviation route.
#[derive(Debug, Clone, Copy)]
pub struct OracleAnova {
    pub ss_a: f64,
    pub ss_b: f64,
    pub ss_ab: f64,
    pub ss_e: f64,
    pub df_a: u64,
    pub df_b: u64,
    pub df_ab: u64,
    pub df_e: u64,
}

impl OracleAnova {
    pub fn f(&self, ss: f64, df: u64) -> Option<f64> {
        let ms_e = self.ss_e / self.df_e as f64;
        (ms_e > 0.0).then(|| (ss / df as f64) / ms_e)
    }
}

/// `cells[i][j]` holds the observations of level i of A and level j of B.
pub fn brute_force_anova(cells: &[Vec<Vec<f64>>]) -> OracleAnova {
    let a = cells.len();
    let b = cells[0].len();
    let n = cells[0][0].len();
    let big_n = (a * b * n) as f64;
    let mut total = 0.0;
    let mut sum_sq = 0.0;
    let mut row_totals = vec![0.0; a];
    let mut col_totals = vec![0.0; b];
    let mut cell_term = 0.0;
    for i in 0..a {
        for j in 0..b {
            let t: f64 = cells[i][j].iter().sum();
            total += t;
            row_totals[i] += t;
            col_totals[j] += t;
            cell_term += t * t / n as f64;
            sum_sq += cells[i][j].iter().map(|y| y * y).sum::<f64>();
        }
    }
    let correction = total * total / big_n;
    let ss_t = sum_sq - correction;
    let ss_a = row_totals.iter().map(|t| t * t).sum::<f64>() / (b * n) as f64 - correction;
    let ss_b = col_totals.iter().map(|t| t * t).sum::<f64>() / (a * n) as f64 - correction;
    let ss_cells = cell_term - correction;
    OracleAnova {
        ss_a,
        ss_b,
        ss_ab: ss_cells - ss_a - ss_b,
        ss_e: ss_t - ss_cells,
        df_a: (a - 1) as u64,
        df_b: (b - 1) as u64,
        df_ab: ((a - 1) * (b - 1)) as u64,
        df_e: (a * b * (n - 1)) as u64,
    }
}

/// P(F > f) by quadrature. With t = sin^2(theta) the beta integrand
/// t^(d2/2-1) (1-t)^(d1/2-1) dt becomes 2 sin^(d2-1) cos^(d1-1) d(theta),
/// which is smooth on [0, pi/2] for integer degrees of freedom.
pub fn f_tail_by_quadrature(f: f64, df1: u32, df2: u32) -> f64 {
    if f == 0.0 {
        return 1.0;
    }
    let x = df2 as f64 / (df2 as f64 + df1 as f64 * f);
    let theta_x = x.sqrt().asin();
    let g = |th: f64| th.sin().powi(df2 as i32 - 1) * th.cos().powi(df1 as i32 - 1);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let lower = simpson(g, 0.0, theta_x, 40_000);
    let upper = simpson(g, theta_x, half_pi, 40_000);
    lower / (lower + upper)
}

pub fn simpson(g: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (hi - lo) / m as f64;
    let mut acc = g(lo) + g(hi);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(lo + k as f64 * h);
    }
    acc * h / 3.0
}

pub fn random_frame(rng: &mut impl Rng, hand: Hand, seq: u32, timestamp_ms: u64) -> GloveFrame {
    GloveFrame {
        hand,
        seq,
        timestamp_ms,
        amplitudes: std::array::from_fn(|_| rng.random()),
    }
}

/// A recording with random metadata, 1..=max_frames frames, and random
/// (strictly increasing) seq and timestamps.
pub fn random_recording(seed: u64, max_frames: usize) -> SessionRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hand = if rng.random() { Hand::Left } else { Hand::Right };
    let expertise = [Expertise::Expert, Expertise::Trained, Expertise::Novice][rng.random_range(0..3)];
    let len = rng.random_range(0..24);
    let user_id: String = (0..len)
        .map(|_| *b"abcXYZ019 ,\"'-_\xc3".get(rng.random_range(0..15)).unwrap() as char)
        .collect();
    let n = rng.random_range(1..=max_frames);
    let mut seq = rng.random_range(0..1000u32);
    let mut t = rng.random_range(0..100_000u64);
    let frames = (0..n)
        .map(|_| {
            let f = random_frame(&mut rng, hand, seq, t);
            seq += rng.random_range(1..4);
            t += rng.random_range(0..60);
            f
        })
        .collect();
    SessionRecording {
        user_id,
        expertise,
        session_index: rng.random_range(1..=10),
        hand,
        frames,
    }
}

pub fn rel_close(x: f64, y: f64, tol: f64, floor: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(floor)
}
