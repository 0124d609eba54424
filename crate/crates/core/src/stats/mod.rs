//! Cell summaries, the F distribution upper tail, and balanced two-way
//! fixed-effects ANOVA with interaction.

pub mod special;

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::simulator::{calibrate_to_cell, CellTarget, Expertise, SimError, DEFAULT_CELL_N};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no observations")]
    EmptyInput,
    #[error("factor {factor} has {levels} level(s); at least 2 are required")]
    TooFewLevels { factor: char, levels: usize },
    #[error("cell(s) without observations: {}", .0.join(", "))]
    EmptyCell(Vec<String>),
    #[error("unbalanced design, cell counts: {}", format_counts(.0))]
    UnbalancedDesign(Vec<(String, usize)>),
    #[error("every cell needs at least 2 observations, counts: {}", format_counts(.0))]
    InsufficientReplication(Vec<(String, usize)>),
    #[error("invalid degrees of freedom ({df1}, {df2})")]
    InvalidDf { df1: u64, df2: u64 },
    #[error("F statistic must be finite and non-negative, got {0}")]
    InvalidF(f64),
    #[error("incomplete beta evaluation did not converge")]
    NoConvergence,
    #[error("invalid cell target: {0}")]
    InvalidTarget(String),
}

fn format_counts(counts: &[(String, usize)]) -> String {
    counts
        .iter()
        .map(|(cell, n)| format!("{cell}={n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl From<SimError> for StatsError {
    fn from(e: SimError) -> Self {
        StatsError::InvalidTarget(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    /// Sample standard deviation over sqrt(n); 0 for a single observation.
    pub sem: f64,
    pub n: usize,
    /// Set when n = 1 and the SEM is undefined.
    pub degenerate: bool,
}

pub fn mean_sem(values: &[f64]) -> Result<CellSummary, StatsError> {
    let n = values.len();
    if n == 0 {
        return Err(StatsError::EmptyInput);
    }
    let mean = shifted_mean(values);
    if n == 1 {
        return Ok(CellSummary {
            mean,
            sem: 0.0,
            n,
            degenerate: true,
        });
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let var = ss / (n - 1) as f64;
    Ok(CellSummary {
        mean,
        sem: (var / n as f64).sqrt(),
        n,
        degenerate: false,
    })
}

/// Mean computed relative to the first value, so constant input is reproduced exactly.
fn shifted_mean(values: &[f64]) -> f64 {
    let origin = values[0];
    origin + values.iter().map(|v| v - origin).sum::<f64>() / values.len() as f64
}

/// P(F > f) for F ~ F(df1, df2), via I_x(df2/2, df1/2) at x = df2 / (df2 + df1 f).
///
/// Underflow is clamped to the smallest positive normal so the result stays in (0, 1].
pub fn f_upper_tail(f: f64, df1: u64, df2: u64) -> Result<f64, StatsError> {
    if df1 == 0 || df2 == 0 {
        return Err(StatsError::InvalidDf { df1, df2 });
    }
    if !(f >= 0.0) || f.is_infinite() {
        return Err(StatsError::InvalidF(f));
    }
    if f == 0.0 {
        return Ok(1.0);
    }
    let (d1, d2) = (df1 as f64, df2 as f64);
    let x = d2 / (d2 + d1 * f);
    let p = special::beta_inc(d2 / 2.0, d1 / 2.0, x).ok_or(StatsError::NoConvergence)?;
    Ok(p.max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub ss: f64,
    pub df: u64,
    pub ms: f64,
    /// `None` when the error mean square is zero and F is undefined.
    pub f: Option<f64>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub ss: f64,
    pub df: u64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    pub factor_a: EffectRow,
    pub factor_b: EffectRow,
    pub interaction: EffectRow,
    pub error: ErrorRow,
    pub total_ss: f64,
    pub levels_a: usize,
    pub levels_b: usize,
    pub n_per_cell: usize,
    pub names: [String; 2],
}

impl AnovaTable {
    pub fn total_n(&self) -> usize {
        self.levels_a * self.levels_b * self.n_per_cell
    }

    pub fn with_names(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.names = [a.into(), b.into()];
        self
    }

    fn rows(&self) -> [(String, &EffectRow); 3] {
        [
            (self.names[0].clone(), &self.factor_a),
            (self.names[1].clone(), &self.factor_b),
            (format!("{}:{}", self.names[0], self.names[1]), &self.interaction),
        ]
    }

    /// `effect,ss,df,ms,f,p`; undefined F is written as `NA`, the error row leaves F and p empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("effect,ss,df,ms,f,p\n");
        for (name, row) in self.rows() {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                row.ss,
                row.df,
                row.ms,
                row.f.map_or("NA".to_string(), |f| f.to_string()),
                row.p
            );
        }
        let _ = writeln!(out, "error,{},{},{},,", self.error.ss, self.error.df, self.error.ms);
        out
    }
}

impl Display for AnovaTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>16} {:>6} {:>16} {:>10} {:>12}",
            "effect", "SS", "df", "MS", "F", "p"
        )?;
        for (name, row) in self.rows() {
            let fs = row.f.map_or("NA".to_string(), |v| format!("{v:.2}"));
            writeln!(
                f,
                "{:<22} {:>16.4} {:>6} {:>16.4} {:>10} {:>12.4e}",
                name, row.ss, row.df, row.ms, fs, row.p
            )?;
        }
        writeln!(
            f,
            "{:<22} {:>16.4} {:>6} {:>16.4}",
            "error", self.error.ss, self.error.df, self.error.ms
        )?;
        write!(
            f,
            "{:<22} {:>16.4} {:>6}",
            "total",
            self.total_ss,
            self.total_n() - 1
        )
    }
}

/// Groups observations into cells keyed by `(level_a, level_b)`, levels in sorted order.
fn group<A: Ord + Clone, B: Ord + Clone>(
    observations: &[(A, B, f64)],
) -> (Vec<A>, Vec<B>, BTreeMap<(usize, usize), Vec<f64>>) {
    let levels_a: Vec<A> = observations
        .iter()
        .map(|o| o.0.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let levels_b: Vec<B> = observations
        .iter()
        .map(|o| o.1.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (a, b, y) in observations {
        let i = levels_a.binary_search(a).expect("level collected above");
        let j = levels_b.binary_search(b).expect("level collected above");
        cells.entry((i, j)).or_default().push(*y);
    }
    (levels_a, levels_b, cells)
}

/// Per-cell summaries in `(level_a, level_b)` order.
pub fn cell_summaries<A: Ord + Clone, B: Ord + Clone>(
    observations: &[(A, B, f64)],
) -> Result<Vec<(A, B, CellSummary)>, StatsError> {
    let (levels_a, levels_b, cells) = group(observations);
    cells
        .iter()
        .map(|(&(i, j), ys)| Ok((levels_a[i].clone(), levels_b[j].clone(), mean_sem(ys)?)))
        .collect()
}

/// Balanced two-way fixed-effects ANOVA with interaction.
pub fn two_way_anova<A, B>(observations: &[(A, B, f64)]) -> Result<AnovaTable, StatsError>
where
    A: Ord + Clone + Display,
    B: Ord + Clone + Display,
{
    if observations.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let (levels_a, levels_b, cells) = group(observations);
    let (a, b) = (levels_a.len(), levels_b.len());
    if a < 2 {
        return Err(StatsError::TooFewLevels { factor: 'A', levels: a });
    }
    if b < 2 {
        return Err(StatsError::TooFewLevels { factor: 'B', levels: b });
    }

    let cell_name = |i: usize, j: usize| format!("({}, {})", levels_a[i], levels_b[j]);
    let empty: Vec<String> = (0..a)
        .flat_map(|i| (0..b).map(move |j| (i, j)))
        .filter(|k| !cells.contains_key(k))
        .map(|(i, j)| cell_name(i, j))
        .collect();
    if !empty.is_empty() {
        return Err(StatsError::EmptyCell(empty));
    }
    let counts: Vec<(String, usize)> = cells
        .iter()
        .map(|(&(i, j), ys)| (cell_name(i, j), ys.len()))
        .collect();
    let n = counts[0].1;
    if counts.iter().any(|(_, c)| *c != n) {
        return Err(StatsError::UnbalancedDesign(counts));
    }
    if n < 2 {
        return Err(StatsError::InsufficientReplication(counts));
    }

    // Work relative to one observation: sums of squares are unchanged and
    // constant data produces exact zeros.
    let origin = observations[0].2;
    let cell_means: Vec<Vec<f64>> = (0..a)
        .map(|i| {
            (0..b)
                .map(|j| cells[&(i, j)].iter().map(|y| y - origin).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    let row_means: Vec<f64> = cell_means.iter().map(|r| r.iter().sum::<f64>() / b as f64).collect();
    let col_means: Vec<f64> = (0..b)
        .map(|j| cell_means.iter().map(|r| r[j]).sum::<f64>() / a as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / a as f64;

    let nf = n as f64;
    let ss_a = nf * b as f64 * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = nf * a as f64 * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_ab = nf
        * (0..a)
            .flat_map(|i| (0..b).map(move |j| (i, j)))
            .map(|(i, j)| (cell_means[i][j] - row_means[i] - col_means[j] + grand).powi(2))
            .sum::<f64>();
    let mut ss_e = 0.0;
    let mut ss_t = 0.0;
    for (&(i, j), ys) in &cells {
        for y in ys {
            let y = y - origin;
            ss_e += (y - cell_means[i][j]).powi(2);
            ss_t += (y - grand).powi(2);
        }
    }

    let df_a = (a - 1) as u64;
    let df_b = (b - 1) as u64;
    let df_ab = df_a * df_b;
    let df_e = (a * b * (n - 1)) as u64;
    let ms_e = ss_e / df_e as f64;

    let effect = |ss: f64, df: u64| -> Result<EffectRow, StatsError> {
        let ms = ss / df as f64;
        if ms_e > 0.0 {
            let f = ms / ms_e;
            Ok(EffectRow {
                ss,
                df,
                ms,
                f: Some(f),
                p: f_upper_tail(f, df, df_e)?,
            })
        } else {
            Ok(EffectRow {
                ss,
                df,
                ms,
                f: None,
                p: 1.0,
            })
        }
    };

    Ok(AnovaTable {
        factor_a: effect(ss_a, df_a)?,
        factor_b: effect(ss_b, df_b)?,
        interaction: effect(ss_ab, df_ab)?,
        error: ErrorRow {
            ss: ss_e,
            df: df_e,
            ms: ms_e,
        },
        total_ss: ss_t,
        levels_a: a,
        levels_b: b,
        n_per_cell: n,
        names: ["A".into(), "B".into()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SessionLevel {
    First,
    Last,
}

impl Display for SessionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionLevel::First => "first",
            SessionLevel::Last => "last",
        })
    }
}

/// Interaction F expected for a balanced 2x2 design whose cells exactly hit
/// the given means and SEMs: `SS_AB = n (m11 - m12 - m21 + m22)^2 / 4` over
/// `MS_E = n * mean(sem^2)`.
pub fn closed_form_interaction_f(cells: [[CellTarget; 2]; 2], n: usize) -> f64 {
    let contrast = cells[0][0].mean - cells[0][1].mean - cells[1][0].mean + cells[1][1].mean;
    let nf = n as f64;
    let ss_ab = nf * contrast * contrast / 4.0;
    let ms_e = nf * cells.iter().flatten().map(|c| c.sem * c.sem).sum::<f64>() / 4.0;
    ss_ab / ms_e
}

/// The published S7 grip-force reference interaction statistic, F(1, 2880).
pub const REFERENCE_INTERACTION_F: f64 = 188.53;

#[derive(Debug, Clone)]
pub struct ReconstructedCell {
    pub expertise: Expertise,
    pub session: SessionLevel,
    pub target: CellTarget,
    pub summary: CellSummary,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub table: AnovaTable,
    pub cells: Vec<ReconstructedCell>,
    /// What the interaction F would be if every cell matched its target exactly.
    pub closed_form_f: f64,
}

impl Reconstruction {
    pub fn discrepancy_note(&self) -> String {
        format!(
            "note: the reference interaction F(1, 2880) = {REFERENCE_INTERACTION_F} cannot be \
             recovered from the cell means and SEMs alone; a balanced 2x2 design with n = {} per \
             cell matching them gives F = {:.2} in closed form. Degrees of freedom and significance \
             are reproduced; the F value is not.",
            self.table.n_per_cell, self.closed_form_f
        )
    }
}

/// Synthesizes the novice/expert x first/last S7 cells from their published
/// means and SEMs and runs the two-way ANOVA on the raw samples.
pub fn reconstruct_paper_cells(n_per_cell: usize, seed: u64) -> Result<Reconstruction, StatsError> {
    if n_per_cell < 2 {
        return Err(StatsError::InsufficientReplication(vec![("per cell".into(), n_per_cell)]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::with_capacity(4 * n_per_cell);
    let mut targets = [[CellTarget::new(0.0, 0.0); 2]; 2];
    for (i, expertise) in [Expertise::Novice, Expertise::Expert].into_iter().enumerate() {
        let (first, last) = expertise.s7_cells();
        for (j, (session, target)) in [(SessionLevel::First, first), (SessionLevel::Last, last)]
            .into_iter()
            .enumerate()
        {
            targets[i][j] = target;
            let model = calibrate_to_cell(target.mean, target.sem, n_per_cell)?;
            let normal = Normal::new(model.mean, model.sd)
                .map_err(|e| StatsError::InvalidTarget(e.to_string()))?;
            observations.extend((0..n_per_cell).map(|_| (expertise, session, normal.sample(&mut rng))));
        }
    }
    let table = two_way_anova(&observations)?.with_names("expertise", "session");
    let cells = cell_summaries(&observations)?
        .into_iter()
        .map(|(expertise, session, summary)| {
            let (first, last) = expertise.s7_cells();
            ReconstructedCell {
                expertise,
                session,
                target: if session == SessionLevel::First { first } else { last },
                summary,
            }
        })
        .collect();
    Ok(Reconstruction {
        table,
        cells,
        closed_form_f: closed_form_interaction_f(targets, n_per_cell),
    })
}

/// [`reconstruct_paper_cells`] at the default 721 observations per cell.
pub fn reconstruct_paper_cells_default(seed: u64) -> Result<Reconstruction, StatsError> {
    reconstruct_paper_cells(DEFAULT_CELL_N, seed)
}
