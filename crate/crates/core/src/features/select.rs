use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Task};
use crate::error::{Error, Result};
use crate::eval::{evaluate_task, fold_indices, pooled_f1_of};
use crate::math::derive_seed;
use crate::sequence::Grid;

/// One-way ANOVA F statistic of each column against a binary label,
/// computed on the listed rows only.
///
/// A column that is constant on those rows scores 0. A column that is
/// constant within each class but differs between them scores `+inf`.
pub fn anova_f_scores(x: &Grid, y: &[Label], rows: &[usize]) -> Result<Vec<f64>> {
    if y.len() != x.rows() {
        return Err(Error::LengthMismatch {
            what: "feature rows vs labels",
            left: x.rows(),
            right: y.len(),
        });
    }
    let n_high = rows.iter().filter(|&&r| y[r].is_high()).count();
    let n_low = rows.len() - n_high;
    if n_high == 0 || n_low == 0 {
        return Err(Error::SingleClass);
    }
    let n = rows.len() as f64;
    let mut scores = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let (mut sum_h, mut sum_l) = (0.0, 0.0);
        for &r in rows {
            if y[r].is_high() {
                sum_h += x[(r, j)];
            } else {
                sum_l += x[(r, j)];
            }
        }
        let mean_h = sum_h / n_high as f64;
        let mean_l = sum_l / n_low as f64;
        let mean = (sum_h + sum_l) / n;
        let mut within = 0.0;
        for &r in rows {
            let m = if y[r].is_high() { mean_h } else { mean_l };
            let d = x[(r, j)] - m;
            within += d * d;
        }
        let between = n_high as f64 * (mean_h - mean) * (mean_h - mean)
            + n_low as f64 * (mean_l - mean) * (mean_l - mean);
        let first = x[(rows[0], j)];
        let constant = rows.iter().all(|&r| x[(r, j)] == first);
        let f = if constant {
            0.0
        } else if within == 0.0 || n <= 2.0 {
            f64::INFINITY
        } else {
            between / (within / (n - 2.0))
        };
        scores.push(f);
    }
    Ok(scores)
}

/// Column indices by descending score; equal scores keep the lower index first.
pub fn rank_features(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// All non-selectable columns plus the `k` best selectable ones, ascending.
pub fn top_k_columns(scores: &[f64], k: usize, selectable: &[bool]) -> Vec<usize> {
    let mut mask: Vec<usize> = (0..scores.len()).filter(|&j| !selectable[j]).collect();
    mask.extend(
        rank_features(scores)
            .into_iter()
            .filter(|&j| selectable[j])
            .take(k),
    );
    mask.sort_unstable();
    mask
}

/// Outcome of choosing K by cross-validation on total-CTRS labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    /// Columns kept when fitting on all rows with the chosen `k`.
    pub mask: Vec<usize>,
    /// Pooled F1 for every grid value, in grid order.
    pub f1_per_k: Vec<(usize, f64)>,
}

/// Runs the fold protocol on `y_total` for every `k` in the grid and keeps the
/// best pooled F1; ties go to the smallest `k`.
pub fn select_k_by_cv(
    x: &Grid,
    selectable: &[bool],
    y_total: &[Label],
    k_grid: &[usize],
    folds: usize,
    seed: u64,
    c: f64,
) -> Result<KSelection> {
    if k_grid.is_empty() {
        return Err(Error::InvalidParameter("K grid is empty".into()));
    }
    let available = selectable.iter().filter(|&&s| s).count();
    if let Some(&k) = k_grid.iter().find(|&&k| k > available) {
        return Err(Error::InvalidParameter(format!(
            "K = {k} exceeds the {available} selectable features"
        )));
    }
    let plan = fold_indices(
        y_total.len(),
        folds,
        derive_seed(seed, Task::Total.stream()),
        Some(y_total),
    )?;
    let mut f1_per_k = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let counts = evaluate_task(x, selectable, y_total, &plan, k, c, seed)?;
        f1_per_k.push((k, pooled_f1_of(&counts)));
    }
    let mut best = f1_per_k[0];
    for &(k, f1) in &f1_per_k[1..] {
        if f1 > best.1 || (f1 == best.1 && k < best.0) {
            best = (k, f1);
        }
    }
    let all: Vec<usize> = (0..x.rows()).collect();
    let scores = anova_f_scores(x, y_total, &all)?;
    Ok(KSelection {
        k: best.0,
        mask: top_k_columns(&scores, best.0, selectable),
        f1_per_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter()
            .map(|&b| if b == 1 { Label::High } else { Label::Low })
            .collect()
    }

    #[test]
    fn hand_anova() {
        let x = Grid::from_rows(&[
            vec![0.0, 5.0, 1.0],
            vec![1.0, 5.0, 1.0],
            vec![2.0, 5.0, 2.0],
            vec![3.0, 5.0, 2.0],
        ])
        .unwrap();
        let y = labels(&[0, 0, 1, 1]);
        let f = anova_f_scores(&x, &y, &[0usize, 1, 2, 3]).unwrap();
        assert!((f[0] - 8.0).abs() < 1e-12);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], f64::INFINITY);
        assert_eq!(rank_features(&f), vec![2, 0, 1]);
        assert!(matches!(
            anova_f_scores(&x, &y, &[0usize, 1]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn top_k_keeps_unselectable() {
        let scores = [1.0, 9.0, 3.0, 0.0, 5.0];
        let sel = [true, true, true, false, true];
        assert_eq!(top_k_columns(&scores, 2, &sel), vec![1, 3, 4]);
        assert_eq!(top_k_columns(&scores, 0, &sel), vec![3]);
    }

    fn planted(seed: u64, n: usize, d: usize, signal: usize) -> (Grid, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<Label> = (0..n)
            .map(|i| if i % 2 == 0 { Label::High } else { Label::Low })
            .collect();
        let mut x = Grid::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                let noise: f64 = rng.gen_range(-1.0..1.0);
                x[(i, j)] = if j < signal {
                    noise + 1.5 * y[i].sign()
                } else {
                    noise
                };
            }
        }
        (x, y)
    }

    #[test]
    fn full_grid_is_identity_and_planted_features_rank_first() {
        let (x, y) = planted(3, 60, 40, 10);
        let sel = vec![true; 40];
        let s = select_k_by_cv(&x, &sel, &y, &[40], 5, 1, 1.0).unwrap();
        assert_eq!(s.mask, (0..40).collect::<Vec<_>>());

        let s = select_k_by_cv(&x, &sel, &y, &[5, 10, 20, 40], 5, 1, 1.0).unwrap();
        assert!(s.k <= 20, "chosen {:?}", s.f1_per_k);
        let f = anova_f_scores(&x, &y, &(0..60).collect::<Vec<_>>()).unwrap();
        let mut top: Vec<usize> = rank_features(&f)[..10].to_vec();
        top.sort_unstable();
        assert_eq!(top, (0..10).collect::<Vec<_>>());
        let again = select_k_by_cv(&x, &sel, &y, &[5, 10, 20, 40], 5, 1, 1.0).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn grid_errors() {
        let (x, y) = planted(1, 10, 3, 1);
        assert!(select_k_by_cv(&x, &[true; 3], &y, &[], 2, 0, 1.0).is_err());
        assert!(select_k_by_cv(&x, &[true; 3], &y, &[4], 2, 0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn ranking_invariant_under_increasing_affine(
            seed in any::<u64>(),
            a in 0.01f64..100.0,
            b in -100.0f64..100.0,
            col in 0usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 16;
            let y: Vec<Label> = (0..n).map(|i| if i < 7 { Label::High } else { Label::Low }).collect();
            let mut x = Grid::zeros(n, 6);
            for i in 0..n {
                for j in 0..6 {
                    // Coarse values keep F scores distinct after rounding.
                    x[(i, j)] = f64::from(rng.gen_range(0..8u8)) + if y[i].is_high() { j as f64 * 0.3 } else { 0.0 };
                }
            }
            let rows: Vec<usize> = (0..n).collect();
            let f = anova_f_scores(&x, &y, &rows).unwrap();
            let mut t = x.clone();
            for i in 0..n {
                t[(i, col)] = a * x[(i, col)] + b;
            }
            let g = anova_f_scores(&t, &y, &rows).unwrap();
            prop_assert!((f[col] - g[col]).abs() <= 1e-8 * f[col].abs().max(1.0) || f[col] == g[col]);
            let gaps_ok = f.iter().enumerate().all(|(i, &u)| i == col
                || (u - f[col]).abs() > 1e-6 * u.abs().max(1.0));
            if gaps_ok {
                prop_assert_eq!(rank_features(&f), rank_features(&g));
            }
        }
    }
}
