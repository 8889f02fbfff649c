//! Transcript data model and CTRS score handling.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speaker role after diarization and role assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Therapist,
    Patient,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Therapist => "therapist",
            Role::Patient => "patient",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "therapist" => Ok(Role::Therapist),
            "patient" => Ok(Role::Patient),
            other => Err(Error::InvalidParameter(format!(
                "unknown speaker role `{other}`"
            ))),
        }
    }
}

/// One recognized word with its time span in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl Token {
    pub fn new(text: impl Into<String>, start_s: f64, end_s: f64) -> Self {
        Token {
            text: text.into(),
            start_s,
            end_s,
        }
    }

    fn check(&self) -> core::result::Result<(), String> {
        if self.text.is_empty() {
            return Err("empty token text".into());
        }
        if self.text.chars().any(char::is_whitespace) {
            return Err(format!("token `{}` contains whitespace", self.text));
        }
        if !self.start_s.is_finite() || !self.end_s.is_finite() {
            return Err(format!("token `{}` has a non-finite time", self.text));
        }
        if self.start_s < 0.0 {
            return Err(format!("token `{}` starts before 0", self.text));
        }
        if self.end_s < self.start_s {
            return Err(format!(
                "token `{}` ends at {} before it starts at {}",
                self.text, self.end_s, self.start_s
            ));
        }
        Ok(())
    }
}

/// A maximal stretch of talk by one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Role,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub turns: Vec<Turn>,
    pub scores: Option<CodeScores>,
}

impl Session {
    /// Checks token, turn and timing invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSession {
            session: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(fail("empty session id".into()));
        }
        for (t, turn) in self.turns.iter().enumerate() {
            if turn.tokens.is_empty() {
                return Err(fail(format!("turn {t} has no tokens")));
            }
            for token in &turn.tokens {
                token.check().map_err(|r| fail(format!("turn {t}: {r}")))?;
            }
            if turn.tokens.windows(2).any(|w| w[1].start_s < w[0].start_s) {
                return Err(fail(format!(
                    "turn {t}: tokens are not ordered by start time"
                )));
            }
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.turns.iter().map(|t| t.tokens.len()).sum()
    }

    /// Therapist words in session order.
    pub fn therapist_tokens(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.speaker == Role::Therapist)
            .flat_map(|t| t.tokens.iter().map(|tok| tok.text.as_str()))
    }

    pub fn labels(&self) -> Result<CodeLabels> {
        self.scores
            .as_ref()
            .map(binarize_scores)
            .ok_or_else(|| Error::MissingScores(self.id.clone()))
    }
}

/// The eleven CTRS items, in the order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Code {
    Ag,
    At,
    Co,
    Fb,
    Gd,
    Hw,
    Ip,
    Cb,
    Pt,
    Sc,
    Un,
}

impl Code {
    pub const ALL: [Code; 11] = [
        Code::Ag,
        Code::At,
        Code::Co,
        Code::Fb,
        Code::Gd,
        Code::Hw,
        Code::Ip,
        Code::Cb,
        Code::Pt,
        Code::Sc,
        Code::Un,
    ];

    pub fn abbr(self) -> &'static str {
        match self {
            Code::Ag => "ag",
            Code::At => "at",
            Code::Co => "co",
            Code::Fb => "fb",
            Code::Gd => "gd",
            Code::Hw => "hw",
            Code::Ip => "ip",
            Code::Cb => "cb",
            Code::Pt => "pt",
            Code::Sc => "sc",
            Code::Un => "un",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbr())
    }
}

impl FromStr for Code {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Code::ALL
            .into_iter()
            .find(|c| c.abbr() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown CTRS code `{s}`")))
    }
}

/// A binary prediction task: one CTRS item or the total score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Code(Code),
    Total,
}

impl Task {
    /// The eleven codes followed by the total.
    pub fn all() -> impl Iterator<Item = Task> {
        Code::ALL
            .into_iter()
            .map(Task::Code)
            .chain(core::iter::once(Task::Total))
    }

    /// Position in [`Task::all`], used to derive per-task seeds.
    pub fn stream(self) -> u64 {
        match self {
            Task::Code(c) => c.index() as u64,
            Task::Total => Code::ALL.len() as u64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Code(c) => c.abbr(),
            Task::Total => "total",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "total" {
            Ok(Task::Total)
        } else {
            s.parse().map(Task::Code)
        }
    }
}

pub const MAX_SCORE: u8 = 6;
/// A code is "high" from this score upward.
pub const CODE_HIGH_THRESHOLD: u8 = 4;
/// The total CTRS is "high" (competent) from this sum upward.
pub const TOTAL_HIGH_THRESHOLD: u32 = 40;

/// All eleven item scores, each on the 0..=6 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodeScores([u8; 11]);

impl CodeScores {
    pub fn new(scores: [u8; 11]) -> Result<Self> {
        for (code, &value) in Code::ALL.iter().zip(&scores) {
            if value > MAX_SCORE {
                return Err(Error::InvalidScore {
                    code: code.abbr(),
                    value: value.into(),
                });
            }
        }
        Ok(CodeScores(scores))
    }

    /// Builds scores from possibly out-of-range integers, e.g. parsed input.
    pub fn from_values(values: [i64; 11]) -> Result<Self> {
        let mut out = [0u8; 11];
        for ((slot, &value), code) in out.iter_mut().zip(&values).zip(Code::ALL) {
            if !(0..=MAX_SCORE as i64).contains(&value) {
                return Err(Error::InvalidScore {
                    code: code.abbr(),
                    value,
                });
            }
            *slot = value as u8;
        }
        Ok(CodeScores(out))
    }

    pub fn uniform(value: u8) -> Result<Self> {
        Self::new([value; 11])
    }

    pub fn get(&self, code: Code) -> u8 {
        self.0[code.index()]
    }

    pub fn as_array(&self) -> &[u8; 11] {
        &self.0
    }
}

pub fn total_ctrs(scores: &CodeScores) -> u32 {
    scores.0.iter().map(|&s| u32::from(s)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Low,
    High,
}

impl Label {
    pub fn is_high(self) -> bool {
        self == Label::High
    }

    /// -1 for low, +1 for high.
    pub fn sign(self) -> f64 {
        match self {
            Label::Low => -1.0,
            Label::High => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Low => "low",
            Label::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodeLabels {
    pub codes: [Label; 11],
    pub total: Label,
}

impl CodeLabels {
    pub fn get(&self, task: Task) -> Label {
        match task {
            Task::Code(c) => self.codes[c.index()],
            Task::Total => self.total,
        }
    }
}

pub fn binarize_scores(scores: &CodeScores) -> CodeLabels {
    let level = |high: bool| if high { Label::High } else { Label::Low };
    CodeLabels {
        codes: scores.0.map(|s| level(s >= CODE_HIGH_THRESHOLD)),
        total: level(total_ctrs(scores) >= TOTAL_HIGH_THRESHOLD),
    }
}

/// Checks that session ids are unique across a corpus.
pub fn check_unique_ids(sessions: &[Session]) -> Result<()> {
    let mut ids: Vec<&str> = sessions.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidSession {
            session: w[0].to_string(),
            reason: "duplicate session id".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn turn(speaker: Role, words: &[(&str, f64, f64)]) -> Turn {
        Turn {
            speaker,
            tokens: words.iter().map(|&(w, s, e)| Token::new(w, s, e)).collect(),
        }
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_ctrs(&CodeScores::uniform(0).unwrap()), 0);
        assert_eq!(total_ctrs(&CodeScores::uniform(4).unwrap()), 44);
        assert_eq!(total_ctrs(&CodeScores::uniform(6).unwrap()), 66);
    }

    #[test]
    fn binarize_examples() {
        let mut s = [0u8; 11];
        s[Code::Ag.index()] = 4;
        let labels = binarize_scores(&CodeScores::new(s).unwrap());
        assert_eq!(labels.get(Task::Code(Code::Ag)), Label::High);
        s[Code::Ag.index()] = 3;
        let labels = binarize_scores(&CodeScores::new(s).unwrap());
        assert_eq!(labels.get(Task::Code(Code::Ag)), Label::Low);

        assert_eq!(
            binarize_scores(&CodeScores::uniform(4).unwrap()).total,
            Label::High
        );
        assert_eq!(
            binarize_scores(&CodeScores::uniform(3).unwrap()).total,
            Label::Low
        );
    }

    #[test]
    fn score_range_checked() {
        assert!(CodeScores::uniform(7).is_err());
        assert!(CodeScores::from_values([0, 0, 0, 0, 0, 0, 0, 0, 0, 0, -1]).is_err());
    }

    #[test]
    fn validation_rejects_reversed_token() {
        let s = Session {
            id: "s1".into(),
            turns: vec![turn(Role::Therapist, &[("ok", 2.0, 1.0)])],
            scores: None,
        };
        assert!(matches!(s.validate(), Err(Error::InvalidSession { .. })));
    }

    #[test]
    fn validation_rejects_unordered_and_whitespace() {
        let unordered = Session {
            id: "s".into(),
            turns: vec![turn(Role::Patient, &[("a", 1.0, 1.2), ("b", 0.5, 0.6)])],
            scores: None,
        };
        assert!(unordered.validate().is_err());
        let spaced = Session {
            id: "s".into(),
            turns: vec![turn(Role::Patient, &[("a b", 0.0, 0.1)])],
            scores: None,
        };
        assert!(spaced.validate().is_err());
        let empty_turn = Session {
            id: "s".into(),
            turns: vec![Turn {
                speaker: Role::Patient,
                tokens: vec![],
            }],
            scores: None,
        };
        assert!(empty_turn.validate().is_err());
    }

    #[test]
    fn roles_and_tasks_parse() {
        assert_eq!("therapist".parse::<Role>().unwrap(), Role::Therapist);
        assert!("doctor".parse::<Role>().is_err());
        assert_eq!("total".parse::<Task>().unwrap(), Task::Total);
        assert_eq!("hw".parse::<Task>().unwrap(), Task::Code(Code::Hw));
        assert_eq!(Task::all().count(), 12);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = Session {
            id: "x".into(),
            turns: vec![],
            scores: None,
        };
        assert!(check_unique_ids(&[s.clone(), s]).is_err());
    }

    proptest! {
        #[test]
        fn total_is_direct_sum(scores in proptest::array::uniform11(0u8..=6)) {
            let cs = CodeScores::new(scores).unwrap();
            let direct: u32 = scores.iter().map(|&v| v as u32).sum();
            prop_assert_eq!(total_ctrs(&cs), direct);
        }

        #[test]
        fn binarize_is_monotone(scores in proptest::array::uniform11(0u8..=5), which in 0usize..11) {
            let before = binarize_scores(&CodeScores::new(scores).unwrap());
            let mut raised = scores;
            raised[which] += 1;
            let after = binarize_scores(&CodeScores::new(raised).unwrap());
            for i in 0..11 {
                prop_assert!(!(before.codes[i] == Label::High && after.codes[i] == Label::Low));
            }
            prop_assert!(!(before.total == Label::High && after.total == Label::Low));
        }
    }
}
