//! End-to-end chain: segment, tag, featurize, choose K, evaluate.
//!
//! The stages are exposed one by one so that callers can run them in
//! parallel or through files; [`run_end_to_end`] strings them together.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CodeLabels, Label, Role, Session};
use crate::error::{Error, Result};
use crate::eval::{row_labels, run_protocol, EvalReport, ProtocolConfig};
use crate::features::{
    augment_tokens, fit_tfidf, fuse_concat, select_k_by_cv, tag_count_features, Column,
    FeatureMatrix, FeatureSpace, KSelection, Provenance, SparseFeatureVector, TagFeatureBlock,
    WordNorm,
};
use crate::segmenter::{segment_session, BoundaryModel, DEFAULT_PAUSE_S};
use crate::tagger::{tag_da, tag_mc, AnnotatedSession, DaTagger, Scheme, UtteranceClassifier};

/// The seven feature sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    #[serde(rename = "tfidf")]
    Tfidf,
    #[serde(rename = "da")]
    Da,
    #[serde(rename = "mc")]
    Mc,
    #[serde(rename = "tfidf+da")]
    TfidfDa,
    #[serde(rename = "tfidf+mc")]
    TfidfMc,
    #[serde(rename = "da-tfidf")]
    DaTfidf,
    #[serde(rename = "mc-tfidf")]
    McTfidf,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 7] = [
        FeatureSet::Tfidf,
        FeatureSet::Da,
        FeatureSet::Mc,
        FeatureSet::TfidfDa,
        FeatureSet::TfidfMc,
        FeatureSet::DaTfidf,
        FeatureSet::McTfidf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Tfidf => "tfidf",
            FeatureSet::Da => "da",
            FeatureSet::Mc => "mc",
            FeatureSet::TfidfDa => "tfidf+da",
            FeatureSet::TfidfMc => "tfidf+mc",
            FeatureSet::DaTfidf => "da-tfidf",
            FeatureSet::McTfidf => "mc-tfidf",
        }
    }

    /// Tag scheme the set depends on, if any.
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            FeatureSet::Tfidf => None,
            FeatureSet::Da | FeatureSet::TfidfDa | FeatureSet::DaTfidf => Some(Scheme::Da),
            FeatureSet::Mc | FeatureSet::TfidfMc | FeatureSet::McTfidf => Some(Scheme::Mc),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureSet::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown feature set `{s}`")))
    }
}

pub const DEFAULT_K_GRID: [usize; 6] = [10, 20, 50, 100, 200, 500];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pause_s: f64,
    pub feature_set: FeatureSet,
    pub max_df: f64,
    pub min_df: f64,
    pub k_grid: Vec<usize>,
    pub c: f64,
    pub folds: usize,
    pub seed: u64,
    pub segmentation: bool,
    pub word_norm: WordNorm,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pause_s: DEFAULT_PAUSE_S,
            feature_set: FeatureSet::Tfidf,
            max_df: 0.95,
            min_df: 0.05,
            k_grid: DEFAULT_K_GRID.to_vec(),
            c: crate::classify::DEFAULT_C,
            folds: 5,
            seed: 0,
            segmentation: true,
            word_norm: WordNorm::Therapist,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pause_s > 0.0 && self.pause_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pause threshold must be positive, got {}",
                self.pause_s
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.k_grid.is_empty() {
            return Err(Error::InvalidParameter("K grid is empty".into()));
        }
        Ok(())
    }
}

/// Trained models; which ones are needed depends on the feature set.
#[derive(Debug, Clone, Copy, Default)]
pub struct Models<'a> {
    pub boundary: Option<&'a BoundaryModel>,
    pub da: Option<&'a DaTagger>,
    pub mc: Option<&'a UtteranceClassifier>,
}

impl Models<'_> {
    /// Fails with the name of the first model the configuration needs but lacks.
    pub fn check(&self, cfg: &PipelineConfig) -> Result<()> {
        let Some(scheme) = cfg.feature_set.scheme() else {
            return Ok(());
        };
        if cfg.segmentation && self.boundary.is_none() {
            return Err(Error::MissingModel("boundary"));
        }
        match scheme {
            Scheme::Da if self.da.is_none() => Err(Error::MissingModel("DA tagger")),
            Scheme::Mc if self.mc.is_none() => Err(Error::MissingModel("MC tagger")),
            _ => Ok(()),
        }
    }
}

/// Segments (or only pause-splits, when segmentation is off) and tags one session.
pub fn annotate_session(
    session: &Session,
    cfg: &PipelineConfig,
    models: &Models<'_>,
    scheme: Scheme,
) -> Result<AnnotatedSession> {
    let boundary = if cfg.segmentation {
        Some(models.boundary.ok_or(Error::MissingModel("boundary"))?)
    } else {
        None
    };
    let utterances = segment_session(session, boundary, cfg.pause_s)?;
    let mut annotated = AnnotatedSession::new(session.clone(), &utterances);
    match scheme {
        Scheme::Da => tag_da(
            &mut annotated,
            models.da.ok_or(Error::MissingModel("DA tagger"))?,
        )?,
        Scheme::Mc => tag_mc(
            &mut annotated,
            models.mc.ok_or(Error::MissingModel("MC tagger"))?,
        ),
    }
    Ok(annotated)
}

/// A feature matrix plus the tf-idf space it used, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurized {
    pub matrix: FeatureMatrix,
    pub space: Option<FeatureSpace>,
    pub warnings: Vec<String>,
}

fn therapist_docs(sessions: &[&Session]) -> Vec<Vec<String>> {
    sessions
        .iter()
        .map(|s| s.therapist_tokens().map(String::from).collect())
        .collect()
}

fn tag_matrix(
    sessions: &[AnnotatedSession],
    scheme: Scheme,
    norm: WordNorm,
    warnings: &mut Vec<String>,
) -> Result<FeatureMatrix> {
    let mut rows = Vec::with_capacity(sessions.len());
    for s in sessions {
        let block = tag_count_features(s, scheme, norm)?;
        if !s.session.turns.iter().any(|t| t.speaker == Role::Therapist) {
            warnings.push(format!(
                "session {} has no therapist utterances; its tag block is zero",
                s.session.id
            ));
        }
        rows.push(SparseFeatureVector::from_dense(&block.0));
    }
    Ok(FeatureMatrix {
        provenance: Provenance::TagCounts,
        row_ids: sessions.iter().map(|s| s.session.id.clone()).collect(),
        columns: TagFeatureBlock::column_names(scheme)
            .into_iter()
            .map(|name| Column {
                name: format!("{}:{name}", scheme.name().to_lowercase()),
                selectable: false,
            })
            .collect(),
        rows,
    })
}

/// Builds the feature matrix for `set`. Tag-based sets read the tags of the
/// annotated sessions; `tfidf` reads only the raw therapist words.
pub fn featurize(
    sessions: &[AnnotatedSession],
    set: FeatureSet,
    cfg: &PipelineConfig,
) -> Result<Featurized> {
    if sessions.is_empty() {
        return Err(Error::Empty("sessions"));
    }
    let ids: Vec<String> = sessions.iter().map(|s| s.session.id.clone()).collect();
    let raw: Vec<&Session> = sessions.iter().map(|s| &s.session).collect();
    let mut warnings = Vec::new();
    let tfidf = |docs: &[Vec<String>], provenance| -> Result<(FeatureMatrix, FeatureSpace)> {
        let space = fit_tfidf(docs, cfg.max_df, cfg.min_df, provenance)?;
        Ok((space.matrix(ids.clone(), docs), space))
    };
    let (matrix, space) = match set {
        FeatureSet::Tfidf => {
            let (m, s) = tfidf(&therapist_docs(&raw), Provenance::Tfidf)?;
            (m, Some(s))
        }
        FeatureSet::Da | FeatureSet::Mc => {
            let scheme = set.scheme().unwrap_or(Scheme::Mc);
            (
                tag_matrix(sessions, scheme, cfg.word_norm, &mut warnings)?,
                None,
            )
        }
        FeatureSet::TfidfDa | FeatureSet::TfidfMc => {
            let scheme = set.scheme().unwrap_or(Scheme::Mc);
            let (m, s) = tfidf(&therapist_docs(&raw), Provenance::Tfidf)?;
            let tags = tag_matrix(sessions, scheme, cfg.word_norm, &mut warnings)?;
            (fuse_concat(&m.with_prefix("tfidf"), &tags)?, Some(s))
        }
        FeatureSet::DaTfidf | FeatureSet::McTfidf => {
            let scheme = set.scheme().unwrap_or(Scheme::Mc);
            let docs = sessions
                .iter()
                .map(|s| augment_tokens(s, scheme))
                .collect::<Result<Vec<_>>>()?;
            let (m, s) = tfidf(&docs, Provenance::AugmentedTfidf)?;
            (m, Some(s))
        }
    };
    Ok(Featurized {
        matrix,
        space,
        warnings,
    })
}

/// Grid values above the number of selectable columns are clamped to it;
/// duplicates are dropped, keeping first occurrences.
pub fn effective_k_grid(grid: &[usize], selectable: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for &k in grid {
        let k = k.min(selectable);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Chooses K on total-CTRS labels. Matrices without selectable columns use K = 0.
pub fn choose_k(
    matrix: &FeatureMatrix,
    labels: &[CodeLabels],
    cfg: &PipelineConfig,
) -> Result<KSelection> {
    let selectable = matrix.selectable();
    let available = matrix.selectable_count();
    if available == 0 {
        return Ok(KSelection {
            k: 0,
            mask: (0..matrix.dim()).collect(),
            f1_per_k: Vec::new(),
        });
    }
    let y: Vec<Label> = labels.iter().map(|l| l.total).collect();
    let grid = effective_k_grid(&cfg.k_grid, available);
    select_k_by_cv(
        &matrix.to_dense(),
        &selectable,
        &y,
        &grid,
        cfg.folds,
        cfg.seed,
        cfg.c,
    )
}

pub fn protocol_config(cfg: &PipelineConfig, k: usize) -> ProtocolConfig {
    ProtocolConfig {
        folds: cfg.folds,
        k,
        c: cfg.c,
        seed: cfg.seed,
    }
}

/// Everything a full run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: EvalReport,
    pub selection: KSelection,
    pub featurized: Featurized,
}

/// Segments and tags (when the set needs tags), featurizes, chooses K and
/// runs the cross-validation protocol.
pub fn run_end_to_end(
    sessions: &[Session],
    labels: &BTreeMap<String, CodeLabels>,
    cfg: &PipelineConfig,
    models: &Models<'_>,
) -> Result<RunOutput> {
    cfg.validate()?;
    models.check(cfg)?;
    let annotated = match cfg.feature_set.scheme() {
        Some(scheme) => sessions
            .iter()
            .map(|s| annotate_session(s, cfg, models, scheme))
            .collect::<Result<Vec<_>>>()?,
        None => sessions
            .iter()
            .map(|s| AnnotatedSession::new(s.clone(), &[]))
            .collect(),
    };
    evaluate_annotated(&annotated, labels, cfg)
}

/// The stages after tagging.
pub fn evaluate_annotated(
    annotated: &[AnnotatedSession],
    labels: &BTreeMap<String, CodeLabels>,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    let featurized = featurize(annotated, cfg.feature_set, cfg)?;
    let m = &featurized.matrix;
    let ys = row_labels(&m.row_ids, labels)?;
    let selection = choose_k(m, &ys, cfg)?;
    let report = run_protocol(
        &m.to_dense(),
        &m.selectable(),
        &m.row_ids,
        labels,
        &protocol_config(cfg, selection.k),
        cfg.feature_set.name(),
    )?;
    Ok(RunOutput {
        report,
        selection,
        featurized,
    })
}
