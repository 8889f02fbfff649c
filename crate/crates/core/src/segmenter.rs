//! Turn segmentation: pause-based splitting followed by a trained
//! sentence-boundary labeler.
//!
//! A turn is first cut wherever the silence between two consecutive words
//! exceeds the pause threshold. Each resulting fragment is then labeled token
//! by token with `INSIDE`/`BOUNDARY` by a two-state chain CRF; an utterance
//! ends after every `BOUNDARY` token and at the end of the fragment.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Role, Session, Token, Turn};
use crate::crf::{self, ChainCrf, LabeledSequence};
use crate::error::{Error, Result};
use crate::optim::{LbfgsConfig, OptimReport};

pub const INSIDE: usize = 0;
pub const BOUNDARY: usize = 1;
pub const DEFAULT_PAUSE_S: f64 = 2.0;
pub const SENTENCE_MARKS: [char; 3] = ['.', '?', '!'];

/// Human-readable description of the window features, stored with the model.
pub const FEATURE_TEMPLATE: &str =
    "bias; w0, w-1, w+1 (lowercased, <s>/</s> padding); pos bucket {0,1,2,3,4-5,6-9,10+}";

/// A pause-delimited run of tokens inside one turn: `tokens[start..end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fragment {
    pub turn: usize,
    pub start: usize,
    pub end: usize,
    pub speaker: Role,
}

impl Fragment {
    pub fn tokens<'a>(&self, session: &'a Session) -> &'a [Token] {
        &session.turns[self.turn].tokens[self.start..self.end]
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// A contiguous token span of one turn, numbered in session order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub turn: usize,
    pub start: usize,
    pub end: usize,
    pub speaker: Role,
    pub index_in_session: usize,
}

impl Utterance {
    pub fn tokens<'a>(&self, session: &'a Session) -> &'a [Token] {
        &session.turns[self.turn].tokens[self.start..self.end]
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Splits a turn wherever `next.start_s - prev.end_s > threshold`.
pub fn pause_split(turn_index: usize, turn: &Turn, threshold: f64) -> Vec<Fragment> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..turn.tokens.len() {
        let gap = turn.tokens[i].start_s - turn.tokens[i - 1].end_s;
        if gap > threshold {
            out.push(Fragment {
                turn: turn_index,
                start,
                end: i,
                speaker: turn.speaker,
            });
            start = i;
        }
    }
    if start < turn.tokens.len() {
        out.push(Fragment {
            turn: turn_index,
            start,
            end: turn.tokens.len(),
            speaker: turn.speaker,
        });
    }
    out
}

/// Token sequence with boundary labels, ready for training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySequence {
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
}

/// Strips sentence-final marks and labels the word before each one as a boundary.
///
/// Marks may stand alone (`"see ."`) or be attached (`"see."`).
pub fn make_boundary_training_data<S: AsRef<str>>(tokens: &[S]) -> Result<BoundarySequence> {
    let mut out = BoundarySequence {
        tokens: Vec::new(),
        labels: Vec::new(),
    };
    for raw in tokens {
        let raw = raw.as_ref();
        let word = raw.trim_end_matches(SENTENCE_MARKS);
        let marked = word.len() != raw.len();
        if !word.is_empty() {
            out.tokens.push(word.to_string());
            out.labels.push(INSIDE);
        }
        if marked {
            if let Some(last) = out.labels.last_mut() {
                *last = BOUNDARY;
            }
        }
    }
    if out.tokens.is_empty() {
        return Err(Error::Empty("boundary training text"));
    }
    Ok(out)
}

fn position_bucket(i: usize) -> &'static str {
    match i {
        0 => "0",
        1 => "1",
        2 => "2",
        3 => "3",
        4..=5 => "4-5",
        6..=9 => "6-9",
        _ => "10+",
    }
}

/// Window attributes for every position of a token sequence.
pub fn window_attributes<S: AsRef<str>>(tokens: &[S]) -> Vec<Vec<String>> {
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    (0..lower.len())
        .map(|i| {
            let prev = if i == 0 { "<s>" } else { lower[i - 1].as_str() };
            let next = lower.get(i + 1).map_or("</s>", String::as_str);
            vec![
                "bias".to_string(),
                format!("w0={}", lower[i]),
                format!("w-1={prev}"),
                format!("w+1={next}"),
                format!("pos={}", position_bucket(i)),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryModel {
    pub template: String,
    pub crf: ChainCrf,
}

impl BoundaryModel {
    pub fn labels<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        self.crf.decode(&window_attributes(tokens))
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryFit {
    pub model: BoundaryModel,
    pub report: OptimReport,
    pub warnings: Vec<String>,
}

pub fn boundary_labels() -> Vec<String> {
    vec!["INSIDE".to_string(), "BOUNDARY".to_string()]
}

pub fn train_boundary_model(data: &[BoundarySequence], l2: f64, seed: u64) -> Result<BoundaryFit> {
    train_boundary_model_with(data, l2, seed, &LbfgsConfig::default())
}

pub fn train_boundary_model_with(
    data: &[BoundarySequence],
    l2: f64,
    seed: u64,
    config: &LbfgsConfig,
) -> Result<BoundaryFit> {
    let sequences: Vec<LabeledSequence> = data
        .iter()
        .map(|s| LabeledSequence {
            attributes: window_attributes(&s.tokens),
            tags: s.labels.clone(),
        })
        .collect();
    let fit = crf::train(boundary_labels(), &sequences, l2, seed, config)?;
    Ok(BoundaryFit {
        model: BoundaryModel {
            template: FEATURE_TEMPLATE.to_string(),
            crf: fit.model,
        },
        report: fit.report,
        warnings: fit.warnings,
    })
}

/// Cuts a label sequence into `[start, end)` spans: a span closes after every
/// boundary and at the end.
pub fn spans_from_labels(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, &l) in labels.iter().enumerate() {
        if l == BOUNDARY || i + 1 == labels.len() {
            spans.push((start, i + 1));
            start = i + 1;
        }
    }
    spans
}

/// Segments one fragment; `index_in_session` is left at 0 for the caller to number.
pub fn segment(
    session: &Session,
    fragment: &Fragment,
    model: &BoundaryModel,
) -> Result<Vec<Utterance>> {
    let words: Vec<&str> = fragment
        .tokens(session)
        .iter()
        .map(|t| t.text.as_str())
        .collect();
    let labels = model.labels(&words)?;
    Ok(spans_from_labels(&labels)
        .into_iter()
        .map(|(s, e)| Utterance {
            turn: fragment.turn,
            start: fragment.start + s,
            end: fragment.start + e,
            speaker: fragment.speaker,
            index_in_session: 0,
        })
        .collect())
}

/// Pause-splits every turn and, when a model is given, segments each
/// fragment. Without a model every fragment becomes one utterance.
pub fn segment_session(
    session: &Session,
    model: Option<&BoundaryModel>,
    pause_s: f64,
) -> Result<Vec<Utterance>> {
    if !(pause_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pause threshold must be positive, got {pause_s}"
        )));
    }
    let mut out = Vec::new();
    for (t, turn) in session.turns.iter().enumerate() {
        for frag in pause_split(t, turn, pause_s) {
            match model {
                Some(m) => out.extend(segment(session, &frag, m)?),
                None => out.push(Utterance {
                    turn: frag.turn,
                    start: frag.start,
                    end: frag.end,
                    speaker: frag.speaker,
                    index_in_session: 0,
                }),
            }
        }
    }
    for (i, u) in out.iter_mut().enumerate() {
        u.index_in_session = i;
    }
    Ok(out)
}

/// F1 of the `BOUNDARY` class over aligned label sequences.
pub fn boundary_f1(predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "sequence count",
            left: predicted.len(),
            right: gold.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, g) in predicted.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                what: "sequence length",
                left: p.len(),
                right: g.len(),
            });
        }
        for (&a, &b) in p.iter().zip(g) {
            match (a == BOUNDARY, b == BOUNDARY) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(crate::eval::f1_from_counts(tp, fp, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{path_score, Grid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn timed_turn(words: &[(&str, f64, f64)]) -> Turn {
        Turn {
            speaker: Role::Therapist,
            tokens: words.iter().map(|&(w, s, e)| Token::new(w, s, e)).collect(),
        }
    }

    #[test]
    fn pause_rule_is_strict() {
        let t = timed_turn(&[("a", 0.0, 0.5), ("b", 3.0, 3.2)]);
        assert_eq!(pause_split(0, &t, 2.0).len(), 2);
        let t = timed_turn(&[("a", 0.0, 0.5), ("b", 2.5, 2.7)]);
        assert_eq!(pause_split(0, &t, 2.0).len(), 1);
        let t = timed_turn(&[("a", 0.0, 0.5)]);
        let f = pause_split(0, &t, 2.0);
        assert_eq!(
            f,
            vec![Fragment {
                turn: 0,
                start: 0,
                end: 1,
                speaker: Role::Therapist
            }]
        );
    }

    #[test]
    fn training_data_examples() {
        let s = make_boundary_training_data(&["i", "see", ".", "ok", "?"]).unwrap();
        assert_eq!(s.tokens, ["i", "see", "ok"]);
        assert_eq!(s.labels, [INSIDE, BOUNDARY, BOUNDARY]);
        let s = make_boundary_training_data(&["no", "marks", "here"]).unwrap();
        assert!(s.labels.iter().all(|&l| l == INSIDE));
        let s = make_boundary_training_data(&["one", "sentence", "only."]).unwrap();
        assert_eq!(s.labels, [INSIDE, INSIDE, BOUNDARY]);
        assert!(make_boundary_training_data::<&str>(&[]).is_err());
        assert!(make_boundary_training_data(&["?"]).is_err());
    }

    #[test]
    fn spans_follow_labels() {
        use super::{BOUNDARY as B, INSIDE as I};
        assert_eq!(spans_from_labels(&[I, B, I, I, B]), vec![(0, 2), (2, 5)]);
        assert_eq!(spans_from_labels(&[I, I, I]), vec![(0, 3)]);
        assert_eq!(spans_from_labels(&[B]), vec![(0, 1)]);
    }

    #[test]
    fn boundary_f1_examples() {
        use super::{BOUNDARY as B, INSIDE as I};
        assert_eq!(boundary_f1(&[vec![I, B]], &[vec![I, B]]).unwrap(), 1.0);
        assert_eq!(boundary_f1(&[vec![I, I]], &[vec![I, B]]).unwrap(), 0.0);
        // TP=2, FP=1, FN=2
        let pred = vec![vec![B, B, B, I, I]];
        let gold = vec![vec![B, B, I, B, B]];
        assert!((boundary_f1(&pred, &gold).unwrap() - 4.0 / 7.0).abs() < 1e-12);
        assert!(boundary_f1(&[vec![I]], &[vec![I, I]]).is_err());
    }

    /// Planted corpus: the word "stop" always ends a sentence.
    fn sentinel_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<BoundarySequence> {
        let filler = [
            "we", "can", "talk", "about", "that", "today", "maybe", "later",
        ];
        (0..n)
            .map(|_| {
                let mut toks = Vec::new();
                for _ in 0..rng.gen_range(1..4) {
                    for _ in 0..rng.gen_range(1..6) {
                        toks.push(filler[rng.gen_range(0..filler.len())].to_string());
                    }
                    toks.push("stop".to_string());
                    toks.push(".".to_string());
                }
                make_boundary_training_data(&toks).unwrap()
            })
            .collect()
    }

    #[test]
    fn learns_planted_sentinel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train = sentinel_corpus(&mut rng, 200);
        let test = sentinel_corpus(&mut rng, 50);
        let fit = train_boundary_model(&train, 1.0, 7).unwrap();
        let pred: Vec<Vec<usize>> = test
            .iter()
            .map(|s| fit.model.labels(&s.tokens).unwrap())
            .collect();
        let gold: Vec<Vec<usize>> = test.iter().map(|s| s.labels.clone()).collect();
        assert!(boundary_f1(&pred, &gold).unwrap() >= 0.99);

        let again = train_boundary_model(&train, 1.0, 7).unwrap();
        assert_eq!(again.model, fit.model);
    }

    #[test]
    fn heavy_regularization_collapses_to_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let train = sentinel_corpus(&mut rng, 50);
        let fit = train_boundary_model(&train, 1e6, 0).unwrap();
        let max_w = fit
            .model
            .crf
            .params()
            .iter()
            .fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(max_w < 1e-3, "{max_w}");
        for s in &train {
            assert!(fit
                .model
                .labels(&s.tokens)
                .unwrap()
                .iter()
                .all(|&l| l == INSIDE));
        }
    }

    #[test]
    fn degenerate_training_warns() {
        let data = vec![make_boundary_training_data(&["no", "marks"]).unwrap()];
        let fit = train_boundary_model(&data, 1.0, 0).unwrap();
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn decoding_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train = sentinel_corpus(&mut rng, 40);
        let model = train_boundary_model(&train, 0.5, 0).unwrap().model;
        let words = [
            "we", "stop", "talk", "later", "stop", "maybe", "can", "that", "today", "about",
        ];
        for n in 1..=10 {
            let toks = &words[..n];
            let e: Grid = model.crf.emissions(&window_attributes(toks));
            let best = model.labels(toks).unwrap();
            let mut max = f64::NEG_INFINITY;
            for mask in 0u32..(1 << n) {
                let path: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
                max = max.max(path_score(&e, &model.crf.transitions, &path));
            }
            assert!((path_score(&e, &model.crf.transitions, &best) - max).abs() < 1e-9);
        }
    }

    fn random_session(seed: u64) -> Session {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut turns = Vec::new();
        let mut clock = 0.0;
        for _ in 0..rng.gen_range(1..5) {
            let mut tokens = Vec::new();
            for _ in 0..rng.gen_range(1..12) {
                clock += if rng.gen_bool(0.2) {
                    rng.gen_range(1.5..3.5)
                } else {
                    rng.gen_range(0.0..0.4)
                };
                let dur = rng.gen_range(0.2..0.5);
                let w = ["stop", "we", "talk", "ok"][rng.gen_range(0..4)];
                tokens.push(Token::new(w, clock, clock + dur));
                clock += dur;
            }
            turns.push(Turn {
                speaker: if rng.gen_bool(0.5) {
                    Role::Therapist
                } else {
                    Role::Patient
                },
                tokens,
            });
        }
        Session {
            id: "s".into(),
            turns,
            scores: None,
        }
    }

    proptest! {
        #[test]
        fn utterances_concatenate_to_session(seed in 0u64..500, pause in 0.5f64..4.0) {
            let session = random_session(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let model = train_boundary_model(&sentinel_corpus(&mut rng, 20), 1.0, 0).unwrap().model;
            for m in [None, Some(&model)] {
                let utts = segment_session(&session, m, pause).unwrap();
                let joined: Vec<&Token> = utts.iter().flat_map(|u| u.tokens(&session)).collect();
                let original: Vec<&Token> = session.turns.iter().flat_map(|t| &t.tokens).collect();
                prop_assert_eq!(joined, original);
                for (i, u) in utts.iter().enumerate() {
                    prop_assert!(!u.is_empty());
                    prop_assert_eq!(u.index_in_session, i);
                }
            }
        }

        #[test]
        fn raising_threshold_never_adds_fragments(seed in 0u64..500, a in 0.1f64..4.0, b in 0.1f64..4.0) {
            let session = random_session(seed);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for (t, turn) in session.turns.iter().enumerate() {
                prop_assert!(pause_split(t, turn, hi).len() <= pause_split(t, turn, lo).len());
            }
        }
    }
}
