mod common;

use common::{brute_force_anova, f_tail_by_quadrature, rel_close};
use gripstream_core::stats::{f_upper_tail, mean_sem, two_way_anova};
use proptest::prelude::*;

fn design(b: usize) -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    (2usize..=5).prop_flat_map(move |n| {
        proptest::collection::vec(
            proptest::collection::vec(proptest::collection::vec(-20i32..=20, n), b),
            2,
        )
        .prop_map(|cells| {
            cells
                .into_iter()
                .map(|row| row.into_iter().map(|c| c.into_iter().map(f64::from).collect()).collect())
                .collect()
        })
    })
}

fn flatten(cells: &[Vec<Vec<f64>>]) -> Vec<(usize, usize, f64)> {
    let mut obs = Vec::new();
    for (i, row) in cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            obs.extend(cell.iter().map(|&y| (i, j, y)));
        }
    }
    obs
}

proptest! {
    #[test]
    fn matches_definitional_oracle_2x2(cells in design(2)) {
        check_against_oracle(&cells)?;
    }

    #[test]
    fn matches_definitional_oracle_2x3(cells in design(3)) {
        check_against_oracle(&cells)?;
    }

    #[test]
    fn f_tail_is_decreasing(df1 in 1u64..30, df2 in 1u64..300, f in 0.0f64..50.0, step in 0.01f64..5.0) {
        let p1 = f_upper_tail(f, df1, df2).unwrap();
        let p2 = f_upper_tail(f + step, df1, df2).unwrap();
        prop_assert!(p2 < p1 || p1 < 1e-300);
        prop_assert!(p1 > 0.0 && p1 <= 1.0);
    }

    #[test]
    fn sem_is_sd_over_root_n(values in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
        let c = mean_sem(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!(rel_close(c.mean, mean, 1e-12, 1e-9));
        prop_assert!(rel_close(c.sem, (var / n).sqrt(), 1e-9, 1e-12));
    }
}

fn check_against_oracle(cells: &[Vec<Vec<f64>>]) -> Result<(), TestCaseError> {
    let t = two_way_anova(&flatten(cells)).unwrap();
    let o = brute_force_anova(cells);
    let floor = 1e-9 * (t.total_ss.max(1.0));
    for (got, want) in [
        (t.factor_a.ss, o.ss_a),
        (t.factor_b.ss, o.ss_b),
        (t.interaction.ss, o.ss_ab),
        (t.error.ss, o.ss_e),
    ] {
        prop_assert!(rel_close(got, want, 1e-9, floor), "{got} vs {want}");
    }
    prop_assert_eq!(
        (t.factor_a.df, t.factor_b.df, t.interaction.df, t.error.df),
        (o.df_a, o.df_b, o.df_ab, o.df_e)
    );
    if t.error.ss > 0.0 {
        for (row, ss, df) in [(&t.factor_a, o.ss_a, o.df_a), (&t.factor_b, o.ss_b, o.df_b), (&t.interaction, o.ss_ab, o.df_ab)] {
            let f = o.f(ss, df).unwrap();
            prop_assert!(rel_close(row.f.unwrap(), f, 1e-9, 1e-9), "{:?} vs {f}", row.f);
        }
    } else {
        prop_assert!(o.ss_e.abs() < 1e-9);
        prop_assert!(t.interaction.f.is_none());
    }
    Ok(())
}

#[test]
fn f_tail_agrees_with_quadrature_on_grid() {
    let dfs = [(1, 1), (1, 5), (2, 3), (3, 10), (5, 2), (4, 30), (10, 10), (1, 2880), (2, 100), (20, 50)];
    let fs = [0.05, 0.5, 1.0, 2.5, 8.0];
    let mut worst = 0.0f64;
    for &(d1, d2) in &dfs {
        for &f in &fs {
            let got = f_upper_tail(f, d1, d2).unwrap();
            let want = f_tail_by_quadrature(f, d1 as u32, d2 as u32);
            worst = worst.max((got - want).abs());
            assert!((got - want).abs() < 1e-8, "F({d1},{d2}) at {f}: {got} vs {want}");
        }
    }
    assert!(worst < 1e-8);
}

#[test]
fn f_one_one_median() {
    assert!((f_upper_tail(1.0, 1, 1).unwrap() - 0.5).abs() < 1e-8);
    assert!((f_tail_by_quadrature(1.0, 1, 1) - 0.5).abs() < 1e-8);
}
