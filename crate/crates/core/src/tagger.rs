//! Utterance tagging.
//!
//! Dialog acts (DA) are decoded jointly over a session's utterance sequence
//! with a chain CRF. MI codes (MC) are predicted one utterance at a time by a
//! multinomial logistic classifier. Both read the same utterance attributes:
//! lowercased unigrams, bigrams and a length bucket.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Role, Session};
use crate::crf::{self, ChainCrf, LabeledSequence};
use crate::error::{Error, Result};
use crate::math::{argmax, exp, log_sum_exp};
use crate::optim::{self, LbfgsConfig, OptimReport};
use crate::segmenter::Utterance;

pub const DA_LABELS: [&str; 7] = [
    "Question",
    "Statement",
    "Agreement",
    "Other",
    "Appreciation",
    "Incomplete",
    "Backchannel",
];

/// MI codes with simple and complex reflections merged into `RE`.
pub const MC_LABELS: [&str; 7] = ["FA", "GI", "RE", "QUC", "QUO", "MIA", "MIN"];

/// The two utterance tag sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "MC")]
    Mc,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Da => "DA",
            Scheme::Mc => "MC",
        }
    }

    pub fn labels(self) -> &'static [&'static str; 7] {
        match self {
            Scheme::Da => &DA_LABELS,
            Scheme::Mc => &MC_LABELS,
        }
    }

    pub fn len(self) -> usize {
        self.labels().len()
    }

    pub fn label(self, index: usize) -> &'static str {
        self.labels()[index]
    }

    pub fn index_of(self, tag: &str) -> Result<usize> {
        self.labels()
            .iter()
            .position(|&l| l == tag)
            .ok_or_else(|| Error::UnknownTag {
                scheme: self.name(),
                tag: tag.to_string(),
            })
    }

    fn owned_labels(self) -> Vec<String> {
        self.labels().iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "da" => Ok(Scheme::Da),
            "mc" => Ok(Scheme::Mc),
            _ => Err(Error::InvalidParameter(format!("unknown tag scheme `{s}`"))),
        }
    }
}

/// An utterance with optional DA and MC tag indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedUtterance {
    pub utterance: Utterance,
    pub da: Option<u8>,
    pub mc: Option<u8>,
}

impl TaggedUtterance {
    pub fn untagged(utterance: Utterance) -> Self {
        TaggedUtterance {
            utterance,
            da: None,
            mc: None,
        }
    }

    pub fn tag(&self, scheme: Scheme) -> Option<usize> {
        match scheme {
            Scheme::Da => self.da,
            Scheme::Mc => self.mc,
        }
        .map(usize::from)
    }

    pub fn set_tag(&mut self, scheme: Scheme, tag: usize) {
        let slot = match scheme {
            Scheme::Da => &mut self.da,
            Scheme::Mc => &mut self.mc,
        };
        *slot = Some(tag as u8);
    }
}

/// A session together with its utterance segmentation and tags.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSession {
    pub session: Session,
    pub utterances: Vec<TaggedUtterance>,
}

impl AnnotatedSession {
    pub fn new(session: Session, utterances: &[Utterance]) -> Self {
        AnnotatedSession {
            session,
            utterances: utterances
                .iter()
                .copied()
                .map(TaggedUtterance::untagged)
                .collect(),
        }
    }

    pub fn words(&self, u: &TaggedUtterance) -> Vec<&str> {
        u.utterance
            .tokens(&self.session)
            .iter()
            .map(|t| t.text.as_str())
            .collect()
    }

    pub fn therapist_utterances(&self) -> impl Iterator<Item = &TaggedUtterance> {
        self.utterances
            .iter()
            .filter(|u| u.utterance.speaker == Role::Therapist)
    }

    /// Checks that utterances partition the session's tokens in order.
    pub fn check_partition(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSession {
            session: self.session.id.clone(),
            reason,
        };
        let (mut turn, mut pos) = (0usize, 0usize);
        for (i, u) in self.utterances.iter().enumerate() {
            let ut = &u.utterance;
            while turn < self.session.turns.len() && pos == self.session.turns[turn].tokens.len() {
                turn += 1;
                pos = 0;
            }
            if ut.turn != turn || ut.start != pos || ut.end <= ut.start {
                return Err(fail(format!(
                    "utterance {i} does not continue the token stream"
                )));
            }
            let t = &self.session.turns[turn];
            if ut.end > t.tokens.len() || ut.speaker != t.speaker {
                return Err(fail(format!("utterance {i} does not fit turn {turn}")));
            }
            pos = ut.end;
        }
        while turn < self.session.turns.len() && pos == self.session.turns[turn].tokens.len() {
            turn += 1;
            pos = 0;
        }
        if turn != self.session.turns.len() {
            return Err(fail("utterances do not cover every token".into()));
        }
        Ok(())
    }
}

fn length_bucket(n: usize) -> &'static str {
    match n {
        0..=2 => "1-2",
        3..=5 => "3-5",
        6..=10 => "6-10",
        11..=20 => "11-20",
        _ => "21+",
    }
}

/// Lowercased unigrams, adjacent bigrams and a length bucket.
pub fn utterance_attributes<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    let lower: Vec<String> = words.iter().map(|w| w.as_ref().to_lowercase()).collect();
    let mut out = Vec::with_capacity(2 * lower.len() + 1);
    out.extend(lower.iter().map(|w| format!("u={w}")));
    out.extend(lower.windows(2).map(|p| format!("b={} {}", p[0], p[1])));
    out.push(format!("len={}", length_bucket(lower.len())));
    out
}

/// Chain-CRF dialog-act tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaTagger {
    pub scheme: Scheme,
    pub crf: ChainCrf,
}

#[derive(Debug, Clone)]
pub struct DaFit {
    pub model: DaTagger,
    pub report: OptimReport,
    pub warnings: Vec<String>,
}

/// One session's utterances (as word lists) with gold DA indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DaSequence {
    pub utterances: Vec<Vec<String>>,
    pub tags: Vec<usize>,
}

impl DaSequence {
    /// All utterances of a session, which must all carry DA tags.
    pub fn from_annotated(session: &AnnotatedSession) -> Result<Self> {
        let mut out = DaSequence {
            utterances: Vec::new(),
            tags: Vec::new(),
        };
        for u in &session.utterances {
            let tag = u
                .tag(Scheme::Da)
                .ok_or(Error::Untagged(u.utterance.index_in_session))?;
            out.utterances
                .push(session.words(u).into_iter().map(String::from).collect());
            out.tags.push(tag);
        }
        Ok(out)
    }
}

pub fn train_da(data: &[DaSequence], l2: f64, seed: u64) -> Result<DaFit> {
    train_da_with(data, l2, seed, &LbfgsConfig::default())
}

pub fn train_da_with(
    data: &[DaSequence],
    l2: f64,
    seed: u64,
    config: &LbfgsConfig,
) -> Result<DaFit> {
    let sequences: Vec<LabeledSequence> = data
        .iter()
        .filter(|s| !s.utterances.is_empty())
        .map(|s| LabeledSequence {
            attributes: s
                .utterances
                .iter()
                .map(|u| utterance_attributes(u))
                .collect(),
            tags: s.tags.clone(),
        })
        .collect();
    for seq in &sequences {
        if let Some(&bad) = seq.tags.iter().find(|&&t| t >= Scheme::Da.len()) {
            return Err(Error::UnknownTag {
                scheme: "DA",
                tag: format!("{bad}"),
            });
        }
    }
    let fit = crf::train(Scheme::Da.owned_labels(), &sequences, l2, seed, config)?;
    Ok(DaFit {
        model: DaTagger {
            scheme: Scheme::Da,
            crf: fit.model,
        },
        report: fit.report,
        warnings: fit.warnings,
    })
}

impl DaTagger {
    /// One DA index per utterance, Viterbi-decoded over the whole sequence.
    pub fn tag<S: AsRef<str>>(&self, utterances: &[Vec<S>]) -> Result<Vec<usize>> {
        let attrs: Vec<Vec<String>> = utterances.iter().map(|u| utterance_attributes(u)).collect();
        self.crf.decode(&attrs)
    }
}

/// Tags every utterance of the session with a DA label.
pub fn tag_da(session: &mut AnnotatedSession, model: &DaTagger) -> Result<()> {
    let words: Vec<Vec<&str>> = session
        .utterances
        .iter()
        .map(|u| session.words(u))
        .collect();
    let tags = model.tag(&words)?;
    for (u, t) in session.utterances.iter_mut().zip(tags) {
        u.set_tag(Scheme::Da, t);
    }
    Ok(())
}

/// Linear multinomial classifier over utterance attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceClassifier {
    pub scheme: Scheme,
    /// Sorted, unique attribute names.
    pub attributes: Vec<String>,
    /// `attributes.len() x classes`, attribute-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub l2: f64,
    pub seed: u64,
}

/// A training example: utterance words and gold class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub words: Vec<String>,
    pub tag: usize,
}

impl UtteranceClassifier {
    pub fn zeros(scheme: Scheme, attributes: BTreeSet<String>, l2: f64, seed: u64) -> Self {
        let k = scheme.len();
        let attributes: Vec<String> = attributes.into_iter().collect();
        UtteranceClassifier {
            scheme,
            weights: vec![0.0; attributes.len() * k],
            bias: vec![0.0; k],
            attributes,
            l2,
            seed,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let split = self.weights.len();
        self.weights.copy_from_slice(&params[..split]);
        self.bias.copy_from_slice(&params[split..]);
    }

    fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        utterance_attributes(words)
            .iter()
            .filter_map(|a| {
                self.attributes
                    .binary_search_by(|x| x.as_str().cmp(a))
                    .ok()
                    .map(|i| i as u32)
            })
            .collect()
    }

    fn scores_encoded(&self, attrs: &[u32]) -> Vec<f64> {
        let k = self.bias.len();
        let mut s = self.bias.clone();
        for &a in attrs {
            let w = &self.weights[a as usize * k..(a as usize + 1) * k];
            for (sv, wv) in s.iter_mut().zip(w) {
                *sv += wv;
            }
        }
        s
    }

    pub fn scores<S: AsRef<str>>(&self, words: &[S]) -> Vec<f64> {
        self.scores_encoded(&self.encode(words))
    }

    /// Highest-scoring class; lowest index on ties.
    pub fn classify<S: AsRef<str>>(&self, words: &[S]) -> usize {
        argmax(&self.scores(words))
    }

    /// Adds `d loglik / d params` into `grad`; returns the unregularized log-likelihood.
    fn accumulate(&self, data: &[(Vec<u32>, usize)], grad: &mut [f64]) -> f64 {
        let k = self.bias.len();
        let split = self.weights.len();
        let mut ll = 0.0;
        for (attrs, gold) in data {
            let s = self.scores_encoded(attrs);
            let z = log_sum_exp(&s);
            ll += s[*gold] - z;
            for y in 0..k {
                let resid = f64::from(u8::from(y == *gold)) - exp(s[y] - z);
                for &a in attrs {
                    grad[a as usize * k + y] += resid;
                }
                grad[split + y] += resid;
            }
        }
        ll
    }

    /// Log-likelihood of `data` and the gradient of `loglik - l2/2 * |W|^2`.
    /// The bias is not penalized.
    pub fn loglik_grad(&self, data: &[LabeledUtterance]) -> (f64, Vec<f64>) {
        let enc: Vec<(Vec<u32>, usize)> = data
            .iter()
            .map(|d| (self.encode(&d.words), d.tag))
            .collect();
        let mut grad = vec![0.0; self.num_params()];
        let ll = self.accumulate(&enc, &mut grad);
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g -= self.l2 * w;
        }
        (ll, grad)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub model: UtteranceClassifier,
    pub report: OptimReport,
    pub warnings: Vec<String>,
}

pub fn train_utterance_classifier(
    scheme: Scheme,
    data: &[LabeledUtterance],
    l2: f64,
    seed: u64,
) -> Result<ClassifierFit> {
    train_utterance_classifier_with(scheme, data, l2, seed, &LbfgsConfig::default())
}

pub fn train_utterance_classifier_with(
    scheme: Scheme,
    data: &[LabeledUtterance],
    l2: f64,
    seed: u64,
    config: &LbfgsConfig,
) -> Result<ClassifierFit> {
    if data.is_empty() {
        return Err(Error::Empty("training utterances"));
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "l2 must be positive, got {l2}"
        )));
    }
    let k = scheme.len();
    let mut seen = vec![false; k];
    let mut vocab = BTreeSet::new();
    for d in data {
        if d.tag >= k {
            return Err(Error::UnknownTag {
                scheme: scheme.name(),
                tag: format!("{}", d.tag),
            });
        }
        seen[d.tag] = true;
        vocab.extend(utterance_attributes(&d.words));
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::AbsentClass(scheme.label(missing).to_string()));
    }

    let mut model = UtteranceClassifier::zeros(scheme, vocab, l2, seed);
    let enc: Vec<(Vec<u32>, usize)> = data
        .iter()
        .map(|d| (model.encode(&d.words), d.tag))
        .collect();
    let split = model.weights.len();
    let mut work = model.clone();
    let (params, report) = optim::minimize(
        |w, grad| {
            work.set_params(w);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let ll = work.accumulate(&enc, grad);
            let mut reg = 0.0;
            for (i, g) in grad.iter_mut().enumerate() {
                *g = -*g;
                if i < split {
                    *g += l2 * w[i];
                    reg += w[i] * w[i];
                }
            }
            -ll + 0.5 * l2 * reg
        },
        model.params(),
        config,
    );
    model.set_params(&params);
    let mut warnings = Vec::new();
    if !report.converged() {
        warnings.push(format!(
            "optimizer stopped after {} iterations ({:?}) with gradient norm {:.3e}",
            report.iterations, report.stop, report.grad_norm
        ));
    }
    Ok(ClassifierFit {
        model,
        report,
        warnings,
    })
}

/// Tags every utterance independently with the classifier's scheme (MC).
pub fn tag_mc(session: &mut AnnotatedSession, model: &UtteranceClassifier) {
    let tags: Vec<usize> = session
        .utterances
        .iter()
        .map(|u| model.classify(&session.words(u)))
        .collect();
    for (u, t) in session.utterances.iter_mut().zip(tags) {
        u.set_tag(model.scheme, t);
    }
}
