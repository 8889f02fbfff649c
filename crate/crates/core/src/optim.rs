//! Deterministic limited-memory BFGS for smooth unconstrained minimization.
//!
//! Used by every maximum-likelihood trainer in the crate. The line search
//! enforces the strong Wolfe conditions, so accepted objective values never
//! increase.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history: usize,
    /// Stop once the Euclidean gradient norm is at or below this.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 10,
            grad_tol: 1e-4,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No step along the search direction reduced the objective.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub iterations: usize,
    pub stop: StopReason,
    pub objective: f64,
    pub grad_norm: f64,
    /// Objective at the start and after every accepted step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl OptimReport {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_STEPS: usize = 60;

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the objective value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, config: &LbfgsConfig) -> (Vec<f64>, OptimReport)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad);
    let mut trace = vec![value];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history);

    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; config.history.max(1)];

    let mut iterations = 0;
    let stop = loop {
        let gnorm = norm2(&grad);
        if gnorm <= config.grad_tol {
            break StopReason::Converged;
        }
        if iterations >= config.max_iter {
            break StopReason::MaxIterations;
        }

        // Two-loop recursion: dir = -H * grad.
        dir.copy_from_slice(&grad);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[i] = a;
            for (d, yv) in dir.iter_mut().zip(y) {
                *d -= a * yv;
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            let a = alpha_buf[i];
            for (d, sv) in dir.iter_mut().zip(s) {
                *d += (a - b) * sv;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut slope0 = dot(&grad, &dir);
        if slope0 >= 0.0 {
            history.clear();
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
            slope0 = -gnorm * gnorm;
        }
        let first = if history.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let mut eval = |alpha: f64, xs: &mut [f64], gs: &mut [f64]| -> Point {
            for ((xn, xo), d) in xs.iter_mut().zip(&x).zip(&dir) {
                *xn = xo + alpha * d;
            }
            let v = f(xs, gs);
            Point {
                alpha,
                value: v,
                slope: dot(gs, &dir),
            }
        };
        let Some(accepted) =
            wolfe_search(&mut eval, value, slope0, first, &mut x_new, &mut grad_new)
        else {
            break StopReason::LineSearchFailed;
        };
        if accepted.value > value {
            break StopReason::LineSearchFailed;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        core::mem::swap(&mut x, &mut x_new);
        core::mem::swap(&mut grad, &mut grad_new);
        let progressed = accepted.value < value;
        value = accepted.value;
        trace.push(value);
        iterations += 1;

        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if history.len() == config.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        if !progressed && norm2(&grad) > config.grad_tol {
            break StopReason::LineSearchFailed;
        }
    };

    let report = OptimReport {
        iterations,
        stop,
        objective: value,
        grad_norm: norm2(&grad),
        trace,
    };
    (x, report)
}

/// Strong Wolfe line search. On success `xs`/`gs` hold the accepted point.
fn wolfe_search<E>(
    eval: &mut E,
    value0: f64,
    slope0: f64,
    first: f64,
    xs: &mut [f64],
    gs: &mut [f64],
) -> Option<Point>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> Point,
{
    let mut prev = Point {
        alpha: 0.0,
        value: value0,
        slope: slope0,
    };
    let mut alpha = first;
    for i in 0..MAX_LINE_STEPS {
        let cur = eval(alpha, xs, gs);
        if !cur.value.is_finite() {
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if cur.value > value0 + C1 * alpha * slope0 || (i > 0 && cur.value >= prev.value) {
            return zoom(eval, value0, slope0, prev, cur, xs, gs);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(eval, value0, slope0, cur, prev, xs, gs);
        }
        prev = cur;
        alpha *= 2.0;
    }
    None
}

fn zoom<E>(
    eval: &mut E,
    value0: f64,
    slope0: f64,
    mut lo: Point,
    mut hi: Point,
    xs: &mut [f64],
    gs: &mut [f64],
) -> Option<Point>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> Point,
{
    for _ in 0..MAX_LINE_STEPS {
        let width = hi.alpha - lo.alpha;
        // Quadratic through (lo.value, lo.slope, hi.value), kept inside the bracket.
        let denom = hi.value - lo.value - lo.slope * width;
        let mut alpha = if denom > 0.0 {
            lo.alpha - lo.slope * width * width / (2.0 * denom)
        } else {
            lo.alpha + 0.5 * width
        };
        let (a, b) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (a + b);
        }
        if (b - a) <= f64::EPSILON * b.abs().max(1e-300) {
            break;
        }
        let cur = eval(alpha, xs, gs);
        if cur.value > value0 + C1 * alpha * slope0 || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Fall back to the best point with sufficient decrease, if any.
    if lo.alpha > 0.0 && lo.value < value0 {
        let p = eval(lo.alpha, xs, gs);
        return Some(p);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let scales = [1.0, 10.0, 100.0, 0.5];
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                let d = x[i] - (i as f64);
                v += 0.5 * scales[i] * d * d;
                g[i] = scales[i] * d;
            }
            v
        };
        let (x, report) = minimize(f, vec![5.0; 4], &LbfgsConfig::default());
        assert!(report.converged(), "{report:?}");
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - i as f64).abs() < 1e-4);
        }
        assert!(report.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let cfg = LbfgsConfig {
            max_iter: 1000,
            ..Default::default()
        };
        let (x, report) = minimize(f, vec![-1.2, 1.0], &cfg);
        assert!(report.converged(), "{report:?}");
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4);
        assert!(report.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn already_optimal() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        };
        let (_, report) = minimize(f, vec![0.0], &LbfgsConfig::default());
        assert_eq!(report.iterations, 0);
        assert!(report.converged());
    }
}
