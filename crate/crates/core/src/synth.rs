//! Seeded synthetic CBT-like sessions with planted, context-dependent signal.
//!
//! Each session draws a latent competence bit. Every ruled CTRS code gets its
//! own bit, equal to the latent one with probability `coupling`, and its score
//! is drawn from `{4, 5, 6}` when the bit is set and `{1, 2, 3}` otherwise.
//! Unruled codes are uniform on `{2, ..., 5}`.
//!
//! A context rule emits `occurrences` pairs of therapist utterances, one
//! tagged `tag` and one tagged `contrast`, and puts the keyword into exactly
//! one of them. Keyword and tag counts are therefore identical for both
//! classes; only the tag around the keyword carries the code's bit.
//! A proportion rule emits `count` extra utterances tagged `tag` (bit set) or
//! `contrast` (bit clear), which shifts the session's tag distribution.
//! A lexical rule puts its keyword into `count` ordinary therapist utterances
//! when the bit is set and leaves it out otherwise.
//!
//! Words are timed as cumulative durations with occasional long pauses
//! between utterances of the same turn.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Code, CodeScores, Role, Session, Token, Turn};
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::segmenter::Utterance;
use crate::tagger::{AnnotatedSession, Scheme, TaggedUtterance};

/// DA tag of each therapist MC tag.
pub const MC_TO_DA: [(&str, &str); 7] = [
    ("FA", "Backchannel"),
    ("GI", "Statement"),
    ("RE", "Statement"),
    ("QUC", "Question"),
    ("QUO", "Question"),
    ("MIA", "Appreciation"),
    ("MIN", "Other"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRule {
    pub keyword: String,
    /// MC tag that hosts the keyword when the code's bit is set.
    pub tag: String,
    /// MC tag that hosts it otherwise.
    pub contrast: String,
    pub code: String,
    pub strength: f64,
    pub occurrences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRule {
    pub tag: String,
    pub contrast: String,
    pub code: String,
    pub strength: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalRule {
    pub keyword: String,
    pub code: String,
    pub strength: f64,
    pub count: usize,
}

/// Opening phrases for one tag; the rest of an utterance is filler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseTemplate {
    pub openers: Vec<String>,
    /// Relative opener frequencies; uniform when empty.
    #[serde(default)]
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    /// Keyed by MC tag.
    pub therapist: BTreeMap<String, PhraseTemplate>,
    /// Keyed by DA tag.
    pub patient: BTreeMap<String, PhraseTemplate>,
    /// Base frequency of each therapist MC tag.
    pub therapist_weights: BTreeMap<String, f64>,
    /// Base frequency of each patient DA tag.
    pub patient_weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub word_s: (f64, f64),
    pub word_gap_s: (f64, f64),
    /// Probability of a mid-utterance pause longer than the threshold.
    pub mid_pause_prob: f64,
    pub utterance_gap_s: (f64, f64),
    /// Probability of a long pause between utterances of one turn.
    pub long_pause_prob: f64,
    pub long_pause_s: (f64, f64),
    pub turn_gap_s: (f64, f64),
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            word_s: (0.2, 0.5),
            word_gap_s: (0.0, 0.3),
            mid_pause_prob: 0.002,
            utterance_gap_s: (0.1, 0.8),
            long_pause_prob: 0.1,
            long_pause_s: (2.1, 4.0),
            turn_gap_s: (0.3, 1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sessions: usize,
    pub id_prefix: String,
    /// Base therapist utterances per session, before rule utterances.
    pub utterances_per_session: (usize, usize),
    pub utterances_per_turn: (usize, usize),
    pub patient_utterances_per_turn: (usize, usize),
    pub filler_per_utterance: (usize, usize),
    pub vocabulary_size: usize,
    /// Probability that the latent competence bit is set.
    pub high_rate: f64,
    /// Probability that a ruled code's bit equals the latent bit.
    pub coupling: f64,
    pub context_rules: Vec<ContextRule>,
    pub proportion_rules: Vec<ProportionRule>,
    #[serde(default)]
    pub lexical_rules: Vec<LexicalRule>,
    /// Probability of replacing a code score by a uniform draw from 0..=6.
    pub label_noise: f64,
    /// Per-word probability of dropping or substituting a word.
    pub asr_noise: f64,
    pub timing: Timing,
    pub templates: Templates,
}

fn phrases(list: &[&str], weights: &[f64]) -> PhraseTemplate {
    PhraseTemplate {
        openers: list.iter().map(|s| s.to_string()).collect(),
        weights: weights.to_vec(),
    }
}

impl Default for Templates {
    fn default() -> Self {
        let w = [0.5, 0.3, 0.2];
        // Zipf-weighted pools, so rare openers survive the document-frequency cut.
        let zipf: Vec<f64> = (1..=8).map(|r| 1.0 / r as f64).collect();
        let therapist = [
            (
                "FA",
                phrases(
                    &[
                        "okay",
                        "right",
                        "mhm",
                        "alright",
                        "i see",
                        "got it",
                        "fine",
                        "sure thing",
                    ],
                    &zipf,
                ),
            ),
            (
                "GI",
                phrases(
                    &[
                        "research shows",
                        "the plan is",
                        "typically",
                        "studies suggest",
                        "in general",
                        "the idea is",
                        "often people",
                        "evidence says",
                    ],
                    &zipf,
                ),
            ),
            (
                "RE",
                phrases(
                    &[
                        "sounds like",
                        "so you feel",
                        "it seems",
                        "you are saying",
                        "in other words",
                        "you sense",
                        "you noticed",
                        "that felt",
                    ],
                    &zipf,
                ),
            ),
            (
                "QUC",
                phrases(
                    &[
                        "did you",
                        "is it",
                        "do you",
                        "was it",
                        "are you",
                        "have you",
                        "could it",
                        "would you",
                    ],
                    &zipf,
                ),
            ),
            (
                "QUO",
                phrases(
                    &[
                        "what",
                        "how did",
                        "tell me",
                        "why",
                        "describe",
                        "walk me through",
                        "where",
                        "which",
                    ],
                    &zipf,
                ),
            ),
            (
                "MIA",
                phrases(
                    &[
                        "great job",
                        "well done",
                        "i appreciate",
                        "impressive",
                        "nice work",
                        "thank you",
                        "wonderful",
                        "brilliant",
                    ],
                    &zipf,
                ),
            ),
            (
                "MIN",
                phrases(
                    &[
                        "you should",
                        "you must",
                        "stop",
                        "never",
                        "do not",
                        "quit",
                        "avoid",
                        "always",
                    ],
                    &zipf,
                ),
            ),
        ];
        let patient = [
            ("Statement", phrases(&["i think", "my", "we"], &w)),
            ("Agreement", phrases(&["yes", "sure", "exactly"], &w)),
            ("Incomplete", phrases(&["i was", "and then", "but"], &w)),
            ("Backchannel", phrases(&["uh huh", "yeah", "mm"], &w)),
            ("Other", phrases(&["sorry", "hmm", "anyway"], &w)),
        ];
        let tw = [
            ("FA", 1.0),
            ("GI", 1.5),
            ("RE", 1.5),
            ("QUC", 1.5),
            ("QUO", 1.0),
            ("MIA", 0.7),
            ("MIN", 0.8),
        ];
        let pw = [
            ("Statement", 3.0),
            ("Agreement", 1.0),
            ("Incomplete", 0.7),
            ("Backchannel", 1.0),
            ("Other", 0.5),
        ];
        Templates {
            therapist: therapist
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            patient: patient
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            therapist_weights: tw.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            patient_weights: pw.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

fn context(keyword: &str, tag: &str, contrast: &str, code: &str) -> ContextRule {
    ContextRule {
        keyword: keyword.into(),
        tag: tag.into(),
        contrast: contrast.into(),
        code: code.into(),
        strength: 0.9,
        occurrences: 3,
    }
}

fn proportion(tag: &str, contrast: &str, code: &str) -> ProportionRule {
    ProportionRule {
        tag: tag.into(),
        contrast: contrast.into(),
        code: code.into(),
        strength: 0.6,
        count: 4,
    }
}

fn lexical(keyword: &str, code: &str) -> LexicalRule {
    LexicalRule {
        keyword: keyword.into(),
        code: code.into(),
        strength: 0.9,
        count: 3,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_sessions: 300,
            id_prefix: "s".into(),
            utterances_per_session: (24, 40),
            utterances_per_turn: (1, 4),
            patient_utterances_per_turn: (1, 2),
            filler_per_utterance: (3, 8),
            vocabulary_size: 400,
            high_rate: 0.4,
            coupling: 0.85,
            context_rules: vec![
                context("homework", "QUC", "RE", "hw"),
                context("agenda", "QUO", "GI", "ag"),
                context("feedback", "MIA", "MIN", "fb"),
                context("strategy", "GI", "QUC", "sc"),
            ],
            proportion_rules: vec![proportion("RE", "GI", "un"), proportion("QUO", "MIN", "gd")],
            lexical_rules: vec![lexical("thoughts", "un"), lexical("discover", "gd")],
            label_noise: 0.0,
            asr_noise: 0.0,
            timing: Timing::default(),
            templates: Templates::default(),
        }
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize), min: usize) -> Result<()> {
    if lo < min || lo > hi {
        return Err(Error::InvalidParameter(format!(
            "{name} range ({lo}, {hi}) is invalid"
        )));
    }
    Ok(())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!(
            "{name} must lie in [0, 1], got {v}"
        )));
    }
    Ok(())
}

fn check_span(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
        return Err(Error::InvalidParameter(format!(
            "{name} interval ({lo}, {hi}) is invalid"
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("utterances_per_session", self.utterances_per_session, 1)?;
        check_range("utterances_per_turn", self.utterances_per_turn, 1)?;
        check_range(
            "patient_utterances_per_turn",
            self.patient_utterances_per_turn,
            1,
        )?;
        check_range("filler_per_utterance", self.filler_per_utterance, 0)?;
        if self.vocabulary_size == 0 {
            return Err(Error::InvalidParameter(
                "vocabulary_size must be positive".into(),
            ));
        }
        for (name, v) in [
            ("high_rate", self.high_rate),
            ("coupling", self.coupling),
            ("label_noise", self.label_noise),
            ("asr_noise", self.asr_noise),
            ("timing.mid_pause_prob", self.timing.mid_pause_prob),
            ("timing.long_pause_prob", self.timing.long_pause_prob),
        ] {
            check_unit(name, v)?;
        }
        let t = &self.timing;
        for (name, s) in [
            ("timing.word_s", t.word_s),
            ("timing.word_gap_s", t.word_gap_s),
            ("timing.utterance_gap_s", t.utterance_gap_s),
            ("timing.long_pause_s", t.long_pause_s),
            ("timing.turn_gap_s", t.turn_gap_s),
        ] {
            check_span(name, s)?;
        }

        let tpl = &self.templates;
        for tag in Scheme::Mc.labels() {
            if !tpl.therapist.contains_key(*tag) {
                return Err(Error::MissingTemplate {
                    scheme: "MC",
                    tag: tag.to_string(),
                });
            }
        }
        let covered: BTreeSet<&str> = MC_TO_DA
            .iter()
            .map(|&(_, da)| da)
            .chain(tpl.patient.keys().map(String::as_str))
            .collect();
        for tag in Scheme::Da.labels() {
            if !covered.contains(tag) {
                return Err(Error::MissingTemplate {
                    scheme: "DA",
                    tag: tag.to_string(),
                });
            }
        }
        for (name, t) in tpl.therapist.iter().chain(&tpl.patient) {
            if t.openers.is_empty()
                || t.openers
                    .iter()
                    .any(|o| o.split_whitespace().next().is_none())
            {
                return Err(Error::InvalidParameter(format!(
                    "template `{name}` needs non-empty openers"
                )));
            }
            if !t.weights.is_empty() && t.weights.len() != t.openers.len() {
                return Err(Error::InvalidParameter(format!(
                    "template `{name}` has mismatched weights"
                )));
            }
        }
        for tag in tpl.patient.keys() {
            Scheme::Da.index_of(tag)?;
        }
        for tag in tpl.therapist_weights.keys() {
            Scheme::Mc.index_of(tag)?;
        }
        for tag in tpl.patient_weights.keys() {
            if !tpl.patient.contains_key(tag) {
                return Err(Error::MissingTemplate {
                    scheme: "DA",
                    tag: tag.clone(),
                });
            }
        }
        for r in &self.context_rules {
            Scheme::Mc.index_of(&r.tag)?;
            Scheme::Mc.index_of(&r.contrast)?;
            r.code.parse::<Code>()?;
            check_unit("rule strength", r.strength)?;
            if r.keyword.is_empty() || r.keyword.contains(char::is_whitespace) {
                return Err(Error::InvalidParameter(format!(
                    "keyword `{}` must be one word",
                    r.keyword
                )));
            }
        }
        for r in &self.proportion_rules {
            Scheme::Mc.index_of(&r.tag)?;
            Scheme::Mc.index_of(&r.contrast)?;
            r.code.parse::<Code>()?;
            check_unit("rule strength", r.strength)?;
        }
        for r in &self.lexical_rules {
            r.code.parse::<Code>()?;
            check_unit("rule strength", r.strength)?;
            if r.keyword.is_empty() || r.keyword.contains(char::is_whitespace) {
                return Err(Error::InvalidParameter(format!(
                    "keyword `{}` must be one word",
                    r.keyword
                )));
            }
        }
        Ok(())
    }

    /// Copy with every rule strength set to `s`.
    pub fn with_strength(mut self, s: f64) -> Self {
        self.context_rules.iter_mut().for_each(|r| r.strength = s);
        self.proportion_rules
            .iter_mut()
            .for_each(|r| r.strength = s);
        self.lexical_rules.iter_mut().for_each(|r| r.strength = s);
        self
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Deterministic three-syllable pseudo-words that avoid every reserved word.
pub fn filler_vocabulary(size: usize, reserved: &BTreeSet<String>) -> Vec<String> {
    let syllables: Vec<[u8; 2]> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| [c, v]))
        .collect();
    let s = syllables.len();
    let mut out = Vec::with_capacity(size);
    let mut i = 0usize;
    while out.len() < size {
        // Odd stride walks all s^3 combinations without clustering on a prefix.
        let code = (i * 7919) % (s * s * s);
        let mut word = String::with_capacity(6);
        for part in [code % s, (code / s) % s, code / (s * s)] {
            word.push(syllables[part][0] as char);
            word.push(syllables[part][1] as char);
        }
        if !reserved.contains(&word) && !out.contains(&word) {
            out.push(word);
        }
        i += 1;
    }
    out
}

/// A generated corpus with gold utterances, gold DA/MC tags and scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sessions: Vec<AnnotatedSession>,
}

impl SynthCorpus {
    /// Every turn as words with sentence marks attached to utterance-final
    /// words: `?` after questions, `.` otherwise.
    pub fn punctuated_turns(&self) -> Vec<Vec<String>> {
        let q = Scheme::Da.index_of("Question").unwrap_or(0);
        let mut out = Vec::new();
        for s in &self.sessions {
            let mut current: Option<(usize, Vec<String>)> = None;
            for u in &s.utterances {
                let ut = &u.utterance;
                if current.as_ref().map(|c| c.0) != Some(ut.turn) {
                    out.extend(current.take().map(|c| c.1));
                    current = Some((ut.turn, Vec::new()));
                }
                let words = &mut current.as_mut().unwrap().1;
                let toks = ut.tokens(&s.session);
                for (i, t) in toks.iter().enumerate() {
                    if i + 1 == toks.len() {
                        let mark = if u.da == Some(q as u8) { '?' } else { '.' };
                        words.push(format!("{}{mark}", t.text));
                    } else {
                        words.push(t.text.clone());
                    }
                }
            }
            out.extend(current.map(|c| c.1));
        }
        out
    }
}

struct Sampler {
    tags: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Sampler {
    fn new(weights: &BTreeMap<String, f64>) -> Result<Self> {
        let tags: Vec<String> = weights.keys().cloned().collect();
        let dist = WeightedIndex::new(weights.values().copied())
            .map_err(|e| Error::InvalidParameter(format!("tag weights: {e}")))?;
        Ok(Sampler { tags, dist })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> String {
        self.tags[self.dist.sample(rng)].clone()
    }
}

struct Planned {
    speaker: Role,
    da: usize,
    mc: Option<usize>,
    keyword: Option<String>,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    filler: Vec<String>,
    filler_dist: WeightedIndex<f64>,
    therapist: Sampler,
    patient: Sampler,
    mc_to_da: [usize; 7],
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let tpl = &cfg.templates;
        let mut reserved: BTreeSet<String> = tpl
            .therapist
            .values()
            .chain(tpl.patient.values())
            .flat_map(|t| {
                t.openers
                    .iter()
                    .flat_map(|o| o.split_whitespace().map(String::from))
            })
            .collect();
        reserved.extend(cfg.context_rules.iter().map(|r| r.keyword.clone()));
        reserved.extend(cfg.lexical_rules.iter().map(|r| r.keyword.clone()));
        let filler = filler_vocabulary(cfg.vocabulary_size, &reserved);
        // Zipf-like frequencies spread document frequencies across the df bounds.
        let filler_dist = WeightedIndex::new((0..filler.len()).map(|r| 1.0 / (r as f64 + 2.0)))
            .map_err(|e| Error::InvalidParameter(format!("filler weights: {e}")))?;
        let mut mc_to_da = [0; 7];
        for (mc, da) in MC_TO_DA {
            mc_to_da[Scheme::Mc.index_of(mc)?] = Scheme::Da.index_of(da)?;
        }
        let therapist_weights = if tpl.therapist_weights.is_empty() {
            tpl.therapist.keys().map(|k| (k.clone(), 1.0)).collect()
        } else {
            tpl.therapist_weights.clone()
        };
        let patient_weights = if tpl.patient_weights.is_empty() {
            tpl.patient.keys().map(|k| (k.clone(), 1.0)).collect()
        } else {
            tpl.patient_weights.clone()
        };
        Ok(Generator {
            cfg,
            filler,
            filler_dist,
            therapist: Sampler::new(&therapist_weights)?,
            patient: Sampler::new(&patient_weights)?,
            mc_to_da,
        })
    }

    fn therapist_utt(&self, mc_tag: &str, keyword: Option<String>) -> Planned {
        let mc = Scheme::Mc.index_of(mc_tag).unwrap_or(0);
        Planned {
            speaker: Role::Therapist,
            da: self.mc_to_da[mc],
            mc: Some(mc),
            keyword,
        }
    }

    fn scores(&self, rng: &mut ChaCha8Rng, bits: &BTreeMap<Code, bool>) -> Result<CodeScores> {
        let mut values = [0i64; 11];
        for code in Code::ALL {
            let v: i64 = match bits.get(&code) {
                Some(true) => rng.gen_range(4..=6),
                Some(false) => rng.gen_range(1..=3),
                None => rng.gen_range(2..=5),
            };
            values[code.index()] = if rng.gen_bool(self.cfg.label_noise) {
                rng.gen_range(0..=6)
            } else {
                v
            };
        }
        CodeScores::from_values(values)
    }

    fn words(&self, rng: &mut ChaCha8Rng, p: &Planned) -> Vec<String> {
        let tpl = match p.speaker {
            Role::Therapist => &self.cfg.templates.therapist[Scheme::Mc.label(p.mc.unwrap_or(0))],
            Role::Patient => &self.cfg.templates.patient[Scheme::Da.label(p.da)],
        };
        let opener = if tpl.weights.is_empty() {
            &tpl.openers[rng.gen_range(0..tpl.openers.len())]
        } else {
            let d = WeightedIndex::new(&tpl.weights).expect("validated weights");
            &tpl.openers[d.sample(rng)]
        };
        let mut words: Vec<String> = opener.split_whitespace().map(String::from).collect();
        let (lo, hi) = self.cfg.filler_per_utterance;
        let n = rng.gen_range(lo..=hi);
        let mut body: Vec<String> = (0..n)
            .map(|_| self.filler[self.filler_dist.sample(rng)].clone())
            .collect();
        if let Some(k) = &p.keyword {
            let at = rng.gen_range(0..=body.len());
            body.insert(at, k.clone());
        }
        words.extend(body);
        if self.cfg.asr_noise > 0.0 {
            let mut noisy = Vec::with_capacity(words.len());
            for w in words {
                if rng.gen_bool(self.cfg.asr_noise) {
                    if rng.gen_bool(0.5) {
                        noisy.push(self.filler[rng.gen_range(0..self.filler.len())].clone());
                    }
                } else {
                    noisy.push(w);
                }
            }
            if noisy.is_empty() {
                noisy.push(self.filler[0].clone());
            }
            words = noisy;
        }
        words
    }

    fn session(&self, index: usize) -> Result<AnnotatedSession> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
        let latent = rng.gen_bool(cfg.high_rate);
        let mut bits: BTreeMap<Code, bool> = BTreeMap::new();
        let ruled: BTreeSet<Code> = cfg
            .context_rules
            .iter()
            .map(|r| r.code.as_str())
            .chain(cfg.proportion_rules.iter().map(|r| r.code.as_str()))
            .chain(cfg.lexical_rules.iter().map(|r| r.code.as_str()))
            .map(str::parse)
            .collect::<Result<_>>()?;
        for code in ruled {
            let same = rng.gen_bool(cfg.coupling);
            bits.insert(code, if same { latent } else { !latent });
        }
        let scores = self.scores(&mut rng, &bits)?;

        let mut plan = Vec::new();
        let (lo, hi) = cfg.utterances_per_session;
        for _ in 0..rng.gen_range(lo..=hi) {
            let tag = self.therapist.draw(&mut rng);
            plan.push(self.therapist_utt(&tag, None));
        }
        for r in &cfg.lexical_rules {
            let bit = bits[&r.code.parse::<Code>()?];
            let present = if rng.gen_bool(r.strength) {
                bit
            } else {
                rng.gen_bool(0.5)
            };
            if present {
                let free: Vec<usize> = (0..plan.len())
                    .filter(|&i| plan[i].keyword.is_none())
                    .collect();
                for &i in free.choose_multiple(&mut rng, r.count) {
                    plan[i].keyword = Some(r.keyword.clone());
                }
            }
        }
        for r in &cfg.context_rules {
            let bit = bits[&r.code.parse::<Code>()?];
            for _ in 0..r.occurrences {
                let in_tag = if rng.gen_bool(r.strength) {
                    bit
                } else {
                    rng.gen_bool(0.5)
                };
                let kw = || Some(r.keyword.clone());
                plan.push(self.therapist_utt(&r.tag, if in_tag { kw() } else { None }));
                plan.push(self.therapist_utt(&r.contrast, if in_tag { None } else { kw() }));
            }
        }
        for r in &cfg.proportion_rules {
            let bit = bits[&r.code.parse::<Code>()?];
            for _ in 0..r.count {
                let use_tag = if rng.gen_bool(r.strength) {
                    bit
                } else {
                    rng.gen_bool(0.5)
                };
                plan.push(self.therapist_utt(if use_tag { &r.tag } else { &r.contrast }, None));
            }
        }
        plan.shuffle(&mut rng);

        let t = cfg.timing;
        let span =
            |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| if a < b { rng.gen_range(a..b) } else { a };
        let mut turns: Vec<Turn> = Vec::new();
        let mut utterances: Vec<TaggedUtterance> = Vec::new();
        let mut clock = 0.0f64;
        let mut queue = plan.into_iter().peekable();
        while queue.peek().is_some() {
            let (tlo, thi) = cfg.utterances_per_turn;
            let take = rng.gen_range(tlo..=thi);
            let mut group: Vec<Planned> = queue.by_ref().take(take).collect();
            let (plo, phi) = cfg.patient_utterances_per_turn;
            let mut patient: Vec<Planned> = (0..rng.gen_range(plo..=phi))
                .map(|_| {
                    let tag = self.patient.draw(&mut rng);
                    Planned {
                        speaker: Role::Patient,
                        da: Scheme::Da.index_of(&tag).unwrap_or(0),
                        mc: None,
                        keyword: None,
                    }
                })
                .collect();
            for group in [&mut group, &mut patient] {
                let speaker = group[0].speaker;
                let mut tokens: Vec<Token> = Vec::new();
                clock += span(&mut rng, t.turn_gap_s);
                for (ui, p) in group.iter().enumerate() {
                    if ui > 0 {
                        clock += if rng.gen_bool(t.long_pause_prob) {
                            span(&mut rng, t.long_pause_s)
                        } else {
                            span(&mut rng, t.utterance_gap_s)
                        };
                    }
                    let start = tokens.len();
                    for (wi, w) in self.words(&mut rng, p).into_iter().enumerate() {
                        if wi > 0 {
                            clock += if rng.gen_bool(t.mid_pause_prob) {
                                span(&mut rng, t.long_pause_s)
                            } else {
                                span(&mut rng, t.word_gap_s)
                            };
                        }
                        let d = span(&mut rng, t.word_s);
                        tokens.push(Token::new(w, round_ms(clock), round_ms(clock + d)));
                        clock += d;
                    }
                    utterances.push(TaggedUtterance {
                        utterance: Utterance {
                            turn: turns.len(),
                            start,
                            end: tokens.len(),
                            speaker,
                            index_in_session: utterances.len(),
                        },
                        da: Some(p.da as u8),
                        mc: p.mc.map(|m| m as u8),
                    });
                }
                turns.push(Turn { speaker, tokens });
            }
        }
        let session = Session {
            id: format!("{}{index:04}", cfg.id_prefix),
            turns,
            scores: Some(scores),
        };
        session.validate()?;
        Ok(AnnotatedSession {
            session,
            utterances,
        })
    }
}

// Millisecond resolution keeps text round-trips exact.
fn round_ms(t: f64) -> f64 {
    libm::round(t * 1000.0) / 1000.0
}

/// Generates `n_sessions` sessions; session `i` depends only on the seed and `i`.
pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    let g = Generator::new(config)?;
    let sessions = (0..config.n_sessions)
        .map(|i| g.session(i))
        .collect::<Result<_>>()?;
    Ok(SynthCorpus { sessions })
}

/// Generates the sessions with the given indices only.
pub fn generate_sessions(config: &SynthConfig, indices: &[usize]) -> Result<Vec<AnnotatedSession>> {
    let g = Generator::new(config)?;
    indices.iter().map(|&i| g.session(i)).collect()
}
