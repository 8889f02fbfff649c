//! Training helpers that turn gold-annotated sessions into tagger and
//! segmenter training data.

use ctrs_core::optim::OptimReport;
use ctrs_core::segmenter::{
    make_boundary_training_data, train_boundary_model, BoundaryModel, BoundarySequence,
};
use ctrs_core::tagger::{
    train_da, train_utterance_classifier, AnnotatedSession, DaSequence, DaTagger, LabeledUtterance,
    Scheme, UtteranceClassifier,
};
use ctrs_core::Result;

pub const DEFAULT_L2: f64 = 1.0;

/// One boundary sequence per line of punctuated text.
pub fn boundary_data(lines: &[Vec<String>]) -> Result<Vec<BoundarySequence>> {
    lines
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| make_boundary_training_data(l))
        .collect()
}

pub fn da_data(sessions: &[AnnotatedSession]) -> Result<Vec<DaSequence>> {
    sessions.iter().map(DaSequence::from_annotated).collect()
}

/// Therapist utterances with gold MC tags.
pub fn mc_data(sessions: &[AnnotatedSession]) -> Result<Vec<LabeledUtterance>> {
    let mut out = Vec::new();
    for s in sessions {
        for u in s.therapist_utterances() {
            let tag = u
                .tag(Scheme::Mc)
                .ok_or(ctrs_core::Error::Untagged(u.utterance.index_in_session))?;
            out.push(LabeledUtterance {
                words: s.words(u).into_iter().map(String::from).collect(),
                tag,
            });
        }
    }
    Ok(out)
}

/// A trained model with its optimizer report and warnings.
pub struct Trained<T> {
    pub model: T,
    pub report: OptimReport,
    pub warnings: Vec<String>,
}

pub fn train_segmenter(
    lines: &[Vec<String>],
    l2: f64,
    seed: u64,
) -> Result<Trained<BoundaryModel>> {
    let fit = train_boundary_model(&boundary_data(lines)?, l2, seed)?;
    Ok(Trained {
        model: fit.model,
        report: fit.report,
        warnings: fit.warnings,
    })
}

pub fn train_da_tagger(
    sessions: &[AnnotatedSession],
    l2: f64,
    seed: u64,
) -> Result<Trained<DaTagger>> {
    let fit = train_da(&da_data(sessions)?, l2, seed)?;
    Ok(Trained {
        model: fit.model,
        report: fit.report,
        warnings: fit.warnings,
    })
}

pub fn train_mc_tagger(
    sessions: &[AnnotatedSession],
    l2: f64,
    seed: u64,
) -> Result<Trained<UtteranceClassifier>> {
    let fit = train_utterance_classifier(Scheme::Mc, &mc_data(sessions)?, l2, seed)?;
    Ok(Trained {
        model: fit.model,
        report: fit.report,
        warnings: fit.warnings,
    })
}
