//! Session-level feature extraction and preprocessing.
//!
//! All features describe the therapist side of a session. Word-level
//! features are tf-idf vectors over unigrams (optionally over `word|TAG`
//! tokens); utterance-level features are 14-value tag-count blocks. Blocks are
//! combined column-wise with [`fuse_concat`].

mod scale;
mod select;
mod tags;
mod tfidf;

pub use scale::{apply_scaler, fit_scaler, ScalerStats};
pub use select::{anova_f_scores, rank_features, select_k_by_cv, top_k_columns, KSelection};
pub use tags::{
    augment_tokens, strip_augmentation, tag_count_features, TagFeatureBlock, WordNorm,
    TAG_SEPARATOR,
};
pub use tfidf::{fit_tfidf, transform_tfidf, FeatureSpace};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::Grid;

/// Where a block of feature columns came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Tfidf,
    TagCounts,
    AugmentedTfidf,
    Concat,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Tfidf => "tfidf",
            Provenance::TagCounts => "tag_counts",
            Provenance::AugmentedTfidf => "augmented_tfidf",
            Provenance::Concat => "concat",
        }
    }
}

/// Non-zero entries of a feature vector, sorted by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFeatureVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseFeatureVector {
    pub fn zeros(dim: usize) -> Self {
        SparseFeatureVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(index, value)` pairs; zero values are dropped.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        pairs.sort_by_key(|p| p.0);
        let mut v = SparseFeatureVector::zeros(dim);
        for (i, x) in pairs {
            if (i as usize) >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: i as usize + 1,
                });
            }
            if !x.is_finite() {
                return Err(Error::NonFinite("feature value"));
            }
            if v.indices.last() == Some(&i) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate feature index {i}"
                )));
            }
            if x != 0.0 {
                v.indices.push(i);
                v.values.push(x);
            }
        }
        Ok(v)
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let mut v = SparseFeatureVector::zeros(values.len());
        for (i, &x) in values.iter().enumerate() {
            if x != 0.0 {
                v.indices.push(i as u32);
                v.values.push(x);
            }
        }
        v
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = alloc::vec![0.0; self.dim];
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            d[i as usize] = x;
        }
        d
    }

    pub fn norm(&self) -> f64 {
        crate::math::norm2(&self.values)
    }

    /// `self` followed by `other`, with `other`'s indices shifted.
    pub fn concat(&self, other: &SparseFeatureVector) -> SparseFeatureVector {
        let shift = self.dim as u32;
        let mut out = self.clone();
        out.dim += other.dim;
        out.indices.extend(other.indices.iter().map(|i| i + shift));
        out.values.extend_from_slice(&other.values);
        out
    }
}

/// Metadata for one column of a feature matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Whether K-best selection may drop the column. Tag-count blocks are always kept.
    pub selectable: bool,
}

/// Session-by-feature matrix with named rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub provenance: Provenance,
    pub row_ids: Vec<String>,
    pub columns: Vec<Column>,
    pub rows: Vec<SparseFeatureVector>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn selectable(&self) -> Vec<bool> {
        self.columns.iter().map(|c| c.selectable).collect()
    }

    pub fn selectable_count(&self) -> usize {
        self.columns.iter().filter(|c| c.selectable).count()
    }

    /// Prefixes every column name with `prefix:`.
    pub fn with_prefix(mut self, prefix: &str) -> Self {
        for c in &mut self.columns {
            c.name = format!("{prefix}:{}", c.name);
        }
        self
    }

    pub fn to_dense(&self) -> Grid {
        let d = self.dim();
        let mut g = Grid::zeros(self.len(), d);
        for (r, row) in self.rows.iter().enumerate() {
            let dst = g.row_mut(r);
            for (&i, &x) in row.indices.iter().zip(&row.values) {
                dst[i as usize] = x;
            }
        }
        g
    }
}

/// Column-wise concatenation; `a`'s columns come first. Both matrices must
/// describe the same sessions in the same order.
pub fn fuse_concat(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<FeatureMatrix> {
    if a.row_ids != b.row_ids {
        return Err(Error::ProvenanceMismatch);
    }
    let mut columns = a.columns.clone();
    columns.extend(b.columns.iter().cloned());
    Ok(FeatureMatrix {
        provenance: Provenance::Concat,
        row_ids: a.row_ids.clone(),
        columns,
        rows: a
            .rows
            .iter()
            .zip(&b.rows)
            .map(|(x, y)| x.concat(y))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn matrix(ids: &[&str], dim: usize, selectable: bool) -> FeatureMatrix {
        FeatureMatrix {
            provenance: Provenance::Tfidf,
            row_ids: ids.iter().map(|s| s.to_string()).collect(),
            columns: (0..dim)
                .map(|i| Column {
                    name: format!("f{i}"),
                    selectable,
                })
                .collect(),
            rows: ids
                .iter()
                .enumerate()
                .map(|(r, _)| SparseFeatureVector::from_dense(&vec![r as f64 + 1.0; dim]))
                .collect(),
        }
    }

    #[test]
    fn concat_adds_dimensions_and_keeps_values() {
        let a = matrix(&["s1", "s2"], 500, true).with_prefix("tfidf");
        let mut b = matrix(&["s1", "s2"], 14, false).with_prefix("mc");
        for r in &mut b.rows {
            *r = SparseFeatureVector::zeros(14);
        }
        let c = fuse_concat(&a, &b).unwrap();
        assert_eq!(c.dim(), 514);
        assert_eq!(c.columns[0].name, "tfidf:f0");
        assert_eq!(c.columns[500].name, "mc:f0");
        for (orig, fused) in a.rows.iter().zip(&c.rows) {
            assert_eq!(&fused.to_dense()[..500], &orig.to_dense()[..]);
        }
        assert_eq!(fuse_concat(&a, &b).unwrap(), c);
        assert_eq!(c.selectable_count(), 500);
    }

    #[test]
    fn concat_rejects_different_corpora() {
        let a = matrix(&["s1", "s2"], 3, true);
        let b = matrix(&["s1", "s3"], 3, true);
        assert_eq!(fuse_concat(&a, &b), Err(Error::ProvenanceMismatch));
    }

    #[test]
    fn sparse_vector_validation() {
        assert!(SparseFeatureVector::from_pairs(2, vec![(2, 1.0)]).is_err());
        assert!(SparseFeatureVector::from_pairs(2, vec![(0, f64::NAN)]).is_err());
        assert!(SparseFeatureVector::from_pairs(3, vec![(1, 1.0), (1, 2.0)]).is_err());
        let v = SparseFeatureVector::from_pairs(3, vec![(2, 1.0), (0, 0.0), (1, 3.0)]).unwrap();
        assert_eq!(v.indices, [1, 2]);
    }
}
