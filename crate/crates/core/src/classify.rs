//! Class-weighted linear SVM with an unregularized intercept.
//!
//! Training solves the dual
//!
//! ```text
//! min  1/2 a'Qa - sum(a)   s.t.  0 <= a_i <= C * cw(y_i),  sum(y_i a_i) = 0
//! ```
//!
//! with `Q_ij = y_i y_j <x_i, x_j>` by sequential minimal optimization using
//! second-order working-set selection. The Gram matrix is precomputed, which
//! suits the few-hundred-session corpora this crate targets.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::ScalerStats;
use crate::math::dot;
use crate::sequence::Grid;

pub const DEFAULT_C: f64 = 1.0;
/// Maximal KKT violation at which the solver stops.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
const TAU: f64 = 1e-12;

/// Per-class sample weights, `N / (2 * N_class)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub low: f64,
    pub high: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        low: 1.0,
        high: 1.0,
    };

    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Low => self.low,
            Label::High => self.high,
        }
    }
}

pub fn class_weights(labels: &[Label]) -> Result<ClassWeights> {
    let high = labels.iter().filter(|l| l.is_high()).count();
    let low = labels.len() - high;
    if high == 0 || low == 0 {
        return Err(Error::SingleClass);
    }
    let n = labels.len() as f64;
    Ok(ClassWeights {
        low: n / (2.0 * low as f64),
        high: n / (2.0 * high as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub class_weights: ClassWeights,
    pub seed: u64,
    /// Columns of the full feature matrix the weights apply to, ascending.
    pub feature_mask: Vec<usize>,
    /// Scaling applied to the masked columns before the dot product.
    pub scaler: Option<ScalerStats>,
    /// Name of the feature set the model was trained on.
    pub feature_space: String,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Applies the stored mask and scaler to a full feature row, then predicts.
    pub fn predict_full(&self, row: &[f64]) -> Result<Label> {
        let masked: Vec<f64> = self
            .feature_mask
            .iter()
            .map(|&j| {
                row.get(j).copied().ok_or(Error::DimensionMismatch {
                    expected: j + 1,
                    got: row.len(),
                })
            })
            .collect::<Result<_>>()?;
        let scaled = match &self.scaler {
            Some(s) => s.transform_row(&masked)?,
            None => masked,
        };
        predict(self, &scaled)
    }
}

/// `high` iff `w.x + b > 0`; an exact zero is `low`.
pub fn predict(model: &LinearModel, x: &[f64]) -> Result<Label> {
    Ok(if model.decision(x)? > 0.0 {
        Label::High
    } else {
        Label::Low
    })
}

/// Primal objective `1/2 |w|^2 + C * sum_i cw(y_i) * max(0, 1 - y_i (w.x_i + b))`.
pub fn primal_objective(
    weights: &[f64],
    bias: f64,
    x: &[Vec<f64>],
    y: &[Label],
    c: f64,
    cw: ClassWeights,
) -> f64 {
    let reg = 0.5 * dot(weights, weights);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| cw.get(yi) * (1.0 - yi.sign() * (dot(weights, xi) + bias)).max(0.0))
        .sum();
    reg + c * loss
}

/// Trains on the rows of `x`. Labels map low to -1 and high to +1.
pub fn train_svm(
    x: &[Vec<f64>],
    y: &[Label],
    c: f64,
    cw: ClassWeights,
    seed: u64,
) -> Result<LinearModel> {
    train_svm_with(x, y, c, cw, seed, DEFAULT_TOLERANCE)
}

pub fn train_svm_with(
    x: &[Vec<f64>],
    y: &[Label],
    c: f64,
    cw: ClassWeights,
    seed: u64,
    tolerance: f64,
) -> Result<LinearModel> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "samples vs labels",
            left: x.len(),
            right: y.len(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "C must be positive, got {c}"
        )));
    }
    if !y.iter().any(|l| l.is_high()) || y.iter().all(|l| l.is_high()) {
        return Err(Error::SingleClass);
    }
    let d = x[0].len();
    for xi in x {
        if xi.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: xi.len(),
            });
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SVM features"));
        }
    }

    let n = x.len();
    let mut gram = Grid::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = dot(&x[i], &x[j]);
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
    }
    let sign: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let upper: Vec<f64> = y.iter().map(|&l| c * cw.get(l)).collect();
    let sol = smo(&gram, &sign, &upper, tolerance);

    let mut weights = vec![0.0; d];
    for i in 0..n {
        let coef = sol.alpha[i] * sign[i];
        if coef != 0.0 {
            for (w, v) in weights.iter_mut().zip(&x[i]) {
                *w += coef * v;
            }
        }
    }
    Ok(LinearModel {
        weights,
        bias: sol.bias,
        c,
        class_weights: cw,
        seed,
        feature_mask: (0..d).collect(),
        scaler: None,
        feature_space: String::new(),
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

struct DualSolution {
    alpha: Vec<f64>,
    bias: f64,
    iterations: usize,
    converged: bool,
}

fn smo(k: &Grid, y: &[f64], upper: &[f64], eps: f64) -> DualSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    // grad = Q alpha - 1
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    let is_up = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] < upper[t]) || (y[t] < 0.0 && a[t] > 0.0);
    let is_low =
        |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] > 0.0) || (y[t] < 0.0 && a[t] < upper[t]);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if is_up(t, &alpha) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !is_low(t, &alpha) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)];
                if a <= 0.0 {
                    a = TAU;
                }
                let score = -(b * b) / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < eps {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (upper[i], upper[j]);
        let mut quad = k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[(t, i)] * di + y[j] * k[(t, j)] * dj);
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    DualSolution {
        alpha,
        bias: -rho,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_examples() {
        let balanced = [Label::Low, Label::High, Label::High, Label::Low];
        assert_eq!(class_weights(&balanced).unwrap(), ClassWeights::UNIT);
        let mut total = vec![Label::Low; 134];
        total.extend(vec![Label::High; 91]);
        let w = class_weights(&total).unwrap();
        assert!((w.low - 0.8396).abs() < 5e-5);
        assert!((w.high - 1.2363).abs() < 5e-5);
        let doubled: Vec<Label> = total.iter().chain(&total).copied().collect();
        assert_eq!(class_weights(&doubled).unwrap(), w);
        assert_eq!(class_weights(&[Label::Low]), Err(Error::SingleClass));
    }

    #[test]
    fn symmetric_separable_pair() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = [Label::Low, Label::High];
        let m = train_svm(&x, &y, 1e3, ClassWeights::UNIT, 0).unwrap();
        assert!(m.bias.abs() < 1e-9);
        assert!((m.weights[0] - 1.0).abs() < 1e-9);
        assert_eq!(predict(&m, &[-1.0]).unwrap(), Label::Low);
        assert_eq!(predict(&m, &[1.0]).unwrap(), Label::High);
    }

    fn model_with(weights: Vec<f64>, bias: f64) -> LinearModel {
        LinearModel {
            feature_mask: (0..weights.len()).collect(),
            weights,
            bias,
            c: 1.0,
            class_weights: ClassWeights::UNIT,
            seed: 0,
            scaler: None,
            feature_space: String::new(),
            iterations: 0,
            converged: true,
        }
    }

    #[test]
    fn prediction_tie_break_and_dimension() {
        assert_eq!(
            predict(&model_with(vec![1.0, 2.0], 0.5), &[0.0, 0.0]).unwrap(),
            Label::High
        );
        assert_eq!(
            predict(&model_with(vec![1.0, 2.0], 0.0), &[0.0, 0.0]).unwrap(),
            Label::Low
        );
        assert!(predict(&model_with(vec![1.0], 0.0), &[0.0, 0.0]).is_err());
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
        let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut y: Vec<Label> = x
            .iter()
            .map(|xi| {
                let s = dot(&truth, xi) + rng.gen_range(-1.0..1.0);
                if s > 0.0 {
                    Label::High
                } else {
                    Label::Low
                }
            })
            .collect();
        y[0] = Label::High;
        y[1] = Label::Low;
        (x, y)
    }

    #[test]
    fn objective_not_worse_than_zero_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let (x, y) = random_problem(&mut rng, 20, 5);
            let cw = class_weights(&y).unwrap();
            let m = train_svm(&x, &y, 1.0, cw, 3).unwrap();
            assert!(m.converged);
            let at_model = primal_objective(&m.weights, m.bias, &x, &y, 1.0, cw);
            let at_zero = primal_objective(&[0.0; 5], 0.0, &x, &y, 1.0, cw);
            assert!(at_model <= at_zero + 1e-12);
            assert_eq!(train_svm(&x, &y, 1.0, cw, 3).unwrap(), m);
        }
    }

    #[test]
    fn positive_rescaling_keeps_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = random_problem(&mut rng, 30, 4);
        let m = train_svm(&x, &y, 1.0, class_weights(&y).unwrap(), 0).unwrap();
        for scale in [0.01, 3.0, 1e4] {
            let s = model_with(
                m.weights.iter().map(|w| w * scale).collect(),
                m.bias * scale,
            );
            for xi in &x {
                assert_eq!(predict(&m, xi).unwrap(), predict(&s, xi).unwrap());
            }
        }
    }

    #[test]
    fn class_weighting_equals_duplication() {
        // 2 high vs 4 low: class weights equal duplicating the minority once
        // more with unit weights and C scaled by the majority weight.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y = [
            Label::High,
            Label::High,
            Label::Low,
            Label::Low,
            Label::Low,
            Label::Low,
        ];
        let cw = class_weights(&y).unwrap();
        let mut xd = x.clone();
        let mut yd = y.to_vec();
        xd.extend(x[..2].iter().cloned());
        yd.extend([Label::High, Label::High]);
        for _ in 0..10 {
            let w = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let b = rng.gen_range(-1.0..1.0);
            let weighted = primal_objective(&w, b, &x, &y, 1.0, cw);
            let dup = primal_objective(&w, b, &xd, &yd, cw.low, ClassWeights::UNIT);
            assert!((weighted - dup).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let y = [Label::Low, Label::High];
        assert!(train_svm(&[vec![f64::NAN], vec![1.0]], &y, 1.0, ClassWeights::UNIT, 0).is_err());
        assert!(train_svm(
            &[vec![0.0], vec![1.0]],
            &[Label::Low, Label::Low],
            1.0,
            ClassWeights::UNIT,
            0
        )
        .is_err());
        assert!(train_svm(&[vec![0.0], vec![1.0]], &y, 0.0, ClassWeights::UNIT, 0).is_err());
    }
}
