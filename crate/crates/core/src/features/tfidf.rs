use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Column, FeatureMatrix, Provenance, SparseFeatureVector};
use crate::error::{Error, Result};
use crate::math::ln;

/// A fitted unigram vocabulary with smoothed idf weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub provenance: Provenance,
    /// Sorted, unique terms.
    pub names: Vec<String>,
    /// Number of fitting documents containing each term.
    pub df: Vec<u32>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
    pub max_df: f64,
    pub min_df: f64,
}

impl FeatureSpace {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(term)).ok()
    }

    /// Transforms a batch of documents into a matrix with the given row ids.
    pub fn matrix<S: AsRef<str>>(&self, row_ids: Vec<String>, docs: &[Vec<S>]) -> FeatureMatrix {
        FeatureMatrix {
            provenance: self.provenance,
            row_ids,
            columns: self
                .names
                .iter()
                .map(|n| Column {
                    name: n.clone(),
                    selectable: true,
                })
                .collect(),
            rows: docs.iter().map(|d| transform_tfidf(d, self)).collect(),
        }
    }
}

// Slack for comparing df fractions against bounds such as 0.95 * 20.
const BOUND_EPS: f64 = 1e-9;

/// Fits the vocabulary: terms whose document fraction lies in
/// `[min_df, max_df]` (both inclusive), with `idf = ln((1 + N) / (1 + df)) + 1`.
pub fn fit_tfidf<S: AsRef<str>>(
    documents: &[Vec<S>],
    max_df: f64,
    min_df: f64,
    provenance: Provenance,
) -> Result<FeatureSpace> {
    if documents.is_empty() {
        return Err(Error::Empty("documents"));
    }
    if !(0.0..=1.0).contains(&min_df) || !(0.0..=1.0).contains(&max_df) || min_df >= max_df {
        return Err(Error::InvalidParameter(alloc::format!(
            "document-frequency bounds must satisfy 0 <= min_df < max_df <= 1 (got {min_df}, {max_df})"
        )));
    }
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for doc in documents {
        let uniq: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for term in uniq {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let n = documents.len() as f64;
    let (lo, hi) = (min_df * n - BOUND_EPS * n, max_df * n + BOUND_EPS * n);
    let mut space = FeatureSpace {
        provenance,
        names: Vec::new(),
        df: Vec::new(),
        idf: Vec::new(),
        n_docs: documents.len(),
        max_df,
        min_df,
    };
    for (term, count) in df {
        let c = f64::from(count);
        if c >= lo && c <= hi {
            space.names.push(String::from(term));
            space.df.push(count);
            space.idf.push(ln((1.0 + n) / (1.0 + c)) + 1.0);
        }
    }
    if space.names.is_empty() {
        return Err(Error::EmptyVocabulary { min_df, max_df });
    }
    Ok(space)
}

/// Raw counts times idf, then L2-normalized. Unknown terms are ignored; a
/// document without known terms maps to the zero vector.
pub fn transform_tfidf<S: AsRef<str>>(document: &[S], space: &FeatureSpace) -> SparseFeatureVector {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for term in document {
        if let Some(i) = space.index_of(term.as_ref()) {
            *counts.entry(i).or_insert(0) += 1;
        }
    }
    let mut v = SparseFeatureVector::zeros(space.dim());
    for (i, c) in counts {
        v.indices.push(i as u32);
        v.values.push(f64::from(c) * space.idf[i]);
    }
    let norm = v.norm();
    if norm > 0.0 {
        v.values.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
