//! Linear-chain inference: forward-backward marginals and Viterbi decoding.
//!
//! Scores live in log space. A chain of length `n` over `k` tags is described
//! by an `n x k` emission grid and a `k x k` transition grid where
//! `transitions[(a, b)]` scores moving from tag `a` to tag `b`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp, log_sum_exp};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "grid data",
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    what: "grid row",
                    left: r.len(),
                    right: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Grid {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub log_partition: f64,
    /// `n x k`: probability of each tag at each position.
    pub unary: Grid,
    /// One `k x k` grid per adjacent pair `(t, t + 1)`.
    pub pairwise: Vec<Grid>,
}

fn check_inputs(emissions: &Grid, transitions: &Grid) -> Result<()> {
    if emissions.rows() == 0 {
        return Err(Error::Empty("sequence"));
    }
    let k = emissions.cols();
    if k == 0 {
        return Err(Error::Empty("tag set"));
    }
    if transitions.rows() != k || transitions.cols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: transitions.rows(),
        });
    }
    if !emissions.all_finite() {
        return Err(Error::NonFinite("emission scores"));
    }
    if !transitions.all_finite() {
        return Err(Error::NonFinite("transition scores"));
    }
    Ok(())
}

/// Log-space forward recursion; `alpha[t][y]` is the log-sum of all prefixes ending in `y`.
fn forward(emissions: &Grid, transitions: &Grid) -> Grid {
    let (n, k) = (emissions.rows(), emissions.cols());
    let mut alpha = Grid::zeros(n, k);
    alpha.row_mut(0).copy_from_slice(emissions.row(0));
    let mut scratch = vec![0.0; k];
    for t in 1..n {
        for y in 0..k {
            for (p, s) in scratch.iter_mut().enumerate() {
                *s = alpha[(t - 1, p)] + transitions[(p, y)];
            }
            alpha[(t, y)] = emissions[(t, y)] + log_sum_exp(&scratch);
        }
    }
    alpha
}

fn backward(emissions: &Grid, transitions: &Grid) -> Grid {
    let (n, k) = (emissions.rows(), emissions.cols());
    let mut beta = Grid::zeros(n, k);
    let mut scratch = vec![0.0; k];
    for t in (0..n - 1).rev() {
        for y in 0..k {
            for (q, s) in scratch.iter_mut().enumerate() {
                *s = transitions[(y, q)] + emissions[(t + 1, q)] + beta[(t + 1, q)];
            }
            beta[(t, y)] = log_sum_exp(&scratch);
        }
    }
    beta
}

/// Log partition function only.
pub fn log_partition(emissions: &Grid, transitions: &Grid) -> Result<f64> {
    check_inputs(emissions, transitions)?;
    let alpha = forward(emissions, transitions);
    Ok(log_sum_exp(alpha.row(alpha.rows() - 1)))
}

pub fn forward_backward(emissions: &Grid, transitions: &Grid) -> Result<Marginals> {
    check_inputs(emissions, transitions)?;
    let (n, k) = (emissions.rows(), emissions.cols());
    let alpha = forward(emissions, transitions);
    let beta = backward(emissions, transitions);
    let log_z = log_sum_exp(alpha.row(n - 1));
    if !log_z.is_finite() {
        return Err(Error::Numerical("log partition is not finite".into()));
    }

    let mut unary = Grid::zeros(n, k);
    for t in 0..n {
        for y in 0..k {
            unary[(t, y)] = exp(alpha[(t, y)] + beta[(t, y)] - log_z);
        }
    }
    let mut pairwise = Vec::with_capacity(n.saturating_sub(1));
    for t in 0..n.saturating_sub(1) {
        let mut g = Grid::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                g[(a, b)] = exp(alpha[(t, a)]
                    + transitions[(a, b)]
                    + emissions[(t + 1, b)]
                    + beta[(t + 1, b)]
                    - log_z);
            }
        }
        pairwise.push(g);
    }
    Ok(Marginals {
        log_partition: log_z,
        unary,
        pairwise,
    })
}

/// Best-scoring tag path. Ties go to the lowest tag index, both when picking
/// the final tag and at every back-pointer.
pub fn viterbi(emissions: &Grid, transitions: &Grid) -> Result<Vec<usize>> {
    check_inputs(emissions, transitions)?;
    let (n, k) = (emissions.rows(), emissions.cols());
    let mut delta = Grid::zeros(n, k);
    let mut back = vec![0usize; n * k];
    delta.row_mut(0).copy_from_slice(emissions.row(0));
    for t in 1..n {
        for y in 0..k {
            let mut best = 0;
            let mut best_score = delta[(t - 1, 0)] + transitions[(0, y)];
            for p in 1..k {
                let s = delta[(t - 1, p)] + transitions[(p, y)];
                if s > best_score {
                    best = p;
                    best_score = s;
                }
            }
            delta[(t, y)] = emissions[(t, y)] + best_score;
            back[t * k + y] = best;
        }
    }
    let mut path = vec![0usize; n];
    path[n - 1] = crate::math::argmax(delta.row(n - 1));
    for t in (1..n).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    Ok(path)
}

/// Unnormalized log score of a fixed tag path.
pub fn path_score(emissions: &Grid, transitions: &Grid, path: &[usize]) -> f64 {
    let mut s = 0.0;
    for (t, &y) in path.iter().enumerate() {
        s += emissions[(t, y)];
        if t > 0 {
            s += transitions[(path[t - 1], y)];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ln;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every tag path of length `n` over `k` tags, in lexicographic order.
    fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = vec![0usize; n];
        loop {
            out.push(cur.clone());
            let mut i = n;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                cur[i] += 1;
                if cur[i] < k {
                    break;
                }
                cur[i] = 0;
            }
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Grid, Grid) {
        let e = (0..n * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t = (0..k * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        (
            Grid::from_vec(n, k, e).unwrap(),
            Grid::from_vec(k, k, t).unwrap(),
        )
    }

    #[test]
    fn single_position_symmetric() {
        let e = Grid::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let t = Grid::zeros(2, 2);
        let m = forward_backward(&e, &t).unwrap();
        assert!((m.log_partition - ln(2.0)).abs() < 1e-12);
        assert!((m.unary[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((m.unary[(0, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_transitions_give_softmax() {
        let e = Grid::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 0.3]]).unwrap();
        let m = forward_backward(&e, &Grid::zeros(3, 3)).unwrap();
        for t in 0..2 {
            let z = log_sum_exp(e.row(t));
            for y in 0..3 {
                assert!((m.unary[(t, y)] - exp(e[(t, y)] - z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let e = Grid::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(
            forward_backward(&e, &Grid::zeros(2, 2)),
            Err(Error::NonFinite(_))
        ));
        let e = Grid::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let mut t = Grid::zeros(2, 2);
        t[(0, 1)] = f64::INFINITY;
        assert!(viterbi(&e, &t).is_err());
        assert!(viterbi(&Grid::zeros(0, 2), &Grid::zeros(2, 2)).is_err());
    }

    #[test]
    fn viterbi_trivial_cases() {
        let e = Grid::from_rows(&[vec![0.1, 0.7, 0.3]]).unwrap();
        assert_eq!(viterbi(&e, &Grid::zeros(3, 3)).unwrap(), vec![1]);
        let flat = Grid::zeros(5, 4);
        assert_eq!(viterbi(&flat, &Grid::zeros(4, 4)).unwrap(), vec![0; 5]);
    }

    #[test]
    fn brute_force_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6);
            let k = rng.gen_range(1..=4);
            let (e, t) = random_instance(&mut rng, n, k);
            let paths = all_paths(n, k);
            let scores: Vec<f64> = paths.iter().map(|p| path_score(&e, &t, p)).collect();
            let z = log_sum_exp(&scores);
            let m = forward_backward(&e, &t).unwrap();
            assert!((m.log_partition - z).abs() < 1e-9);
            for pos in 0..n {
                for y in 0..k {
                    let p: f64 = paths
                        .iter()
                        .zip(&scores)
                        .filter(|(p, _)| p[pos] == y)
                        .map(|(_, s)| exp(s - z))
                        .sum();
                    assert!((m.unary[(pos, y)] - p).abs() < 1e-9);
                }
            }
            let best = viterbi(&e, &t).unwrap();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((path_score(&e, &t, &best) - max).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn marginals_normalized_and_consistent(seed in 0u64..10_000, n in 1usize..8, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, t) = random_instance(&mut rng, n, k);
            let m = forward_backward(&e, &t).unwrap();
            for pos in 0..n {
                let s: f64 = m.unary.row(pos).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            for (pos, g) in m.pairwise.iter().enumerate() {
                for a in 0..k {
                    let row: f64 = g.row(a).iter().sum();
                    prop_assert!((row - m.unary[(pos, a)]).abs() < 1e-9);
                }
                for b in 0..k {
                    let col: f64 = (0..k).map(|a| g[(a, b)]).sum();
                    prop_assert!((col - m.unary[(pos + 1, b)]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn shift_invariance(seed in 0u64..10_000, n in 1usize..8, k in 2usize..5, shift in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, t) = random_instance(&mut rng, n, k);
            let pos = (seed as usize) % n;
            let mut shifted = e.clone();
            for v in shifted.row_mut(pos) {
                *v += shift;
            }
            prop_assert_eq!(viterbi(&e, &t).unwrap(), viterbi(&shifted, &t).unwrap());
            let a = forward_backward(&e, &t).unwrap();
            let b = forward_backward(&shifted, &t).unwrap();
            for (x, y) in a.unary.as_slice().iter().zip(b.unary.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
