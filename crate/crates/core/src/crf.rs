//! Linear-chain conditional random field over sparse string attributes.
//!
//! Each position carries a bag of attribute names. An attribute contributes
//! one weight per tag; adjacent tags contribute a transition weight. Training
//! maximizes the L2-penalized conditional log-likelihood with L-BFGS.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, LbfgsConfig, OptimReport};
use crate::sequence::{forward_backward, log_partition, path_score, viterbi, Grid};

/// Attributes per position with gold tag indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub attributes: Vec<Vec<String>>,
    pub tags: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCrf {
    pub labels: Vec<String>,
    /// Sorted, unique attribute names.
    pub attributes: Vec<String>,
    /// `attributes.len() x labels.len()`, attribute-major.
    pub emission: Vec<f64>,
    pub transitions: Grid,
    pub l2: f64,
    pub seed: u64,
}

/// A sequence with attributes resolved to indices; unknown attributes dropped.
#[derive(Debug, Clone)]
pub struct Encoded {
    positions: Vec<Vec<u32>>,
    tags: Vec<usize>,
}

impl ChainCrf {
    /// A model with all weights zero over the given attribute vocabulary.
    pub fn zeros(labels: Vec<String>, attributes: BTreeSet<String>, l2: f64, seed: u64) -> Self {
        let k = labels.len();
        let attributes: Vec<String> = attributes.into_iter().collect();
        ChainCrf {
            emission: vec![0.0; attributes.len() * k],
            transitions: Grid::zeros(k, k),
            labels,
            attributes,
            l2,
            seed,
        }
    }

    pub fn num_tags(&self) -> usize {
        self.labels.len()
    }

    pub fn num_params(&self) -> usize {
        self.emission.len() + self.transitions.as_slice().len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.emission.clone();
        p.extend_from_slice(self.transitions.as_slice());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let split = self.emission.len();
        self.emission.copy_from_slice(&params[..split]);
        self.transitions
            .as_mut_slice()
            .copy_from_slice(&params[split..]);
    }

    pub fn attribute_index(&self, name: &str) -> Option<u32> {
        self.attributes
            .binary_search_by(|a| a.as_str().cmp(name))
            .ok()
            .map(|i| i as u32)
    }

    pub fn encode(&self, attributes: &[Vec<String>], tags: &[usize]) -> Result<Encoded> {
        let k = self.num_tags();
        if let Some(&bad) = tags.iter().find(|&&t| t >= k) {
            return Err(Error::UnknownTag {
                scheme: "chain",
                tag: format!("{bad}"),
            });
        }
        let positions = attributes
            .iter()
            .map(|pos| pos.iter().filter_map(|a| self.attribute_index(a)).collect())
            .collect();
        Ok(Encoded {
            positions,
            tags: tags.to_vec(),
        })
    }

    fn emission_grid(&self, positions: &[Vec<u32>]) -> Grid {
        let k = self.num_tags();
        let mut g = Grid::zeros(positions.len(), k);
        for (t, attrs) in positions.iter().enumerate() {
            let row = g.row_mut(t);
            for &a in attrs {
                let w = &self.emission[a as usize * k..(a as usize + 1) * k];
                for (r, wv) in row.iter_mut().zip(w) {
                    *r += wv;
                }
            }
        }
        g
    }

    /// Emission scores for an unlabeled sequence.
    pub fn emissions(&self, attributes: &[Vec<String>]) -> Grid {
        let positions: Vec<Vec<u32>> = attributes
            .iter()
            .map(|pos| pos.iter().filter_map(|a| self.attribute_index(a)).collect())
            .collect();
        self.emission_grid(&positions)
    }

    pub fn decode(&self, attributes: &[Vec<String>]) -> Result<Vec<usize>> {
        if attributes.is_empty() {
            return Ok(Vec::new());
        }
        viterbi(&self.emissions(attributes), &self.transitions)
    }

    /// Adds observed-minus-expected counts for one sequence into `grad` and
    /// returns its unregularized log-likelihood.
    fn accumulate(&self, seq: &Encoded, grad: &mut [f64]) -> Result<f64> {
        let k = self.num_tags();
        let e = self.emission_grid(&seq.positions);
        let m = forward_backward(&e, &self.transitions)?;
        let loglik = path_score(&e, &self.transitions, &seq.tags) - m.log_partition;
        let split = self.emission.len();
        for (t, attrs) in seq.positions.iter().enumerate() {
            let gold = seq.tags[t];
            for &a in attrs {
                let base = a as usize * k;
                grad[base + gold] += 1.0;
                for y in 0..k {
                    grad[base + y] -= m.unary[(t, y)];
                }
            }
        }
        for (t, pair) in m.pairwise.iter().enumerate() {
            grad[split + seq.tags[t] * k + seq.tags[t + 1]] += 1.0;
            for (g, p) in grad[split..].iter_mut().zip(pair.as_slice()) {
                *g -= p;
            }
        }
        Ok(loglik)
    }

    /// Log-likelihood of one labeled sequence and the gradient of
    /// `loglik - l2/2 * |w|^2` at the current weights.
    pub fn loglik_grad(&self, seq: &LabeledSequence) -> Result<(f64, Vec<f64>)> {
        if seq.attributes.len() != seq.tags.len() {
            return Err(Error::LengthMismatch {
                what: "attributes vs tags",
                left: seq.attributes.len(),
                right: seq.tags.len(),
            });
        }
        let enc = self.encode(&seq.attributes, &seq.tags)?;
        let mut grad = vec![0.0; self.num_params()];
        let ll = self.accumulate(&enc, &mut grad)?;
        for (g, w) in grad.iter_mut().zip(self.params()) {
            *g -= self.l2 * w;
        }
        Ok((ll, grad))
    }

    /// Penalized negative log-likelihood over a dataset.
    pub fn objective(&self, data: &[Encoded]) -> Result<f64> {
        let mut total = 0.0;
        for seq in data {
            let e = self.emission_grid(&seq.positions);
            total += path_score(&e, &self.transitions, &seq.tags)
                - log_partition(&e, &self.transitions)?;
        }
        let reg: f64 = self.params().iter().map(|w| w * w).sum();
        Ok(-total + 0.5 * self.l2 * reg)
    }
}

#[derive(Debug, Clone)]
pub struct CrfFit {
    pub model: ChainCrf,
    pub report: OptimReport,
    pub warnings: Vec<String>,
}

/// Fits a chain CRF from zero weights. Attribute vocabulary is taken from the
/// training data; the result depends only on the data order and settings.
pub fn train(
    labels: Vec<String>,
    data: &[LabeledSequence],
    l2: f64,
    seed: u64,
    config: &LbfgsConfig,
) -> Result<CrfFit> {
    if data.is_empty() {
        return Err(Error::Empty("training sequences"));
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "l2 must be positive, got {l2}"
        )));
    }
    let k = labels.len();
    let mut vocab = BTreeSet::new();
    let mut seen = vec![false; k];
    for seq in data {
        if seq.attributes.is_empty() {
            return Err(Error::Empty("training sequence"));
        }
        if seq.attributes.len() != seq.tags.len() {
            return Err(Error::LengthMismatch {
                what: "attributes vs tags",
                left: seq.attributes.len(),
                right: seq.tags.len(),
            });
        }
        for pos in &seq.attributes {
            vocab.extend(pos.iter().cloned());
        }
        for &t in &seq.tags {
            if t >= k {
                return Err(Error::UnknownTag {
                    scheme: "chain",
                    tag: format!("{t}"),
                });
            }
            seen[t] = true;
        }
    }
    let mut warnings = Vec::new();
    if seen.iter().filter(|&&s| s).count() < 2 {
        warnings.push(String::from(
            "training data contains a single label; the model cannot discriminate",
        ));
    }

    let mut model = ChainCrf::zeros(labels, vocab, l2, seed);
    let encoded: Vec<Encoded> = data
        .iter()
        .map(|s| model.encode(&s.attributes, &s.tags))
        .collect::<Result<_>>()?;

    let mut failure = None;
    let x0 = model.params();
    let mut work = model.clone();
    let (params, report) = optim::minimize(
        |w, grad| {
            work.set_params(w);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut ll = 0.0;
            for seq in &encoded {
                match work.accumulate(seq, grad) {
                    Ok(v) => ll += v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        return f64::INFINITY;
                    }
                }
            }
            let mut reg = 0.0;
            for (g, &wv) in grad.iter_mut().zip(w) {
                *g = -*g + l2 * wv;
                reg += wv * wv;
            }
            -ll + 0.5 * l2 * reg
        },
        x0,
        config,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    model.set_params(&params);
    if !report.converged() {
        warnings.push(format!(
            "optimizer stopped after {} iterations ({:?}) with gradient norm {:.3e}",
            report.iterations, report.stop, report.grad_norm
        ));
    }
    Ok(CrfFit {
        model,
        report,
        warnings,
    })
}
