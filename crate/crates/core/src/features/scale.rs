use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::sequence::Grid;

/// Per-column mean and population standard deviation from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Z-scores one row; zero-variance columns map to 0.
    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if s > 0.0 { (x - m) / s } else { 0.0 })
            .collect())
    }
}

/// Fits on the listed rows of `x` only.
pub fn fit_scaler(x: &Grid, rows: &[usize]) -> Result<ScalerStats> {
    if rows.is_empty() {
        return Err(Error::Empty("scaler training rows"));
    }
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = alloc::vec![0.0; d];
    let mut std = alloc::vec![0.0; d];
    for j in 0..d {
        let first = x[(rows[0], j)];
        let mut constant = true;
        let mut sum = 0.0;
        for &r in rows {
            let v = x[(r, j)];
            constant &= v == first;
            sum += v;
        }
        if constant {
            mean[j] = first;
            continue;
        }
        let m = sum / n;
        let ss: f64 = rows
            .iter()
            .map(|&r| (x[(r, j)] - m) * (x[(r, j)] - m))
            .sum();
        mean[j] = m;
        std[j] = sqrt(ss / n);
    }
    Ok(ScalerStats { mean, std })
}

pub fn apply_scaler(x: &Grid, stats: &ScalerStats) -> Result<Grid> {
    let mut out = Grid::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let z = stats.transform_row(x.row(r))?;
        out.row_mut(r).copy_from_slice(&z);
    }
    Ok(out)
}
