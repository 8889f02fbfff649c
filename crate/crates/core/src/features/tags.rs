use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagger::{AnnotatedSession, Scheme};

pub const TAG_SEPARATOR: char = '|';

/// Denominator for the word-proportion half of a tag block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordNorm {
    /// Therapist words only.
    #[default]
    Therapist,
    /// All words in the session, both speakers.
    Session,
}

/// Seven utterance proportions followed by seven word proportions, in tag-set order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagFeatureBlock(pub [f64; 14]);

impl TagFeatureBlock {
    pub const DIM: usize = 14;

    pub fn utterance_part(&self) -> &[f64] {
        &self.0[..7]
    }

    pub fn word_part(&self) -> &[f64] {
        &self.0[7..]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Builds a block from `(tag, word count)` per utterance.
    pub fn from_counts(utterances: &[(usize, usize)], total_words: usize) -> Self {
        let mut block = [0.0; 14];
        if utterances.is_empty() {
            return TagFeatureBlock(block);
        }
        let mut utt = [0usize; 7];
        let mut words = [0usize; 7];
        for &(tag, n) in utterances {
            utt[tag] += 1;
            words[tag] += n;
        }
        let n_utt = utterances.len() as f64;
        for t in 0..7 {
            block[t] = utt[t] as f64 / n_utt;
            if total_words > 0 {
                block[7 + t] = words[t] as f64 / total_words as f64;
            }
        }
        TagFeatureBlock(block)
    }

    pub fn column_names(scheme: Scheme) -> Vec<String> {
        let labels = scheme.labels();
        labels
            .iter()
            .map(|l| format!("utt:{l}"))
            .chain(labels.iter().map(|l| format!("word:{l}")))
            .collect()
    }
}

/// Tag proportions over the therapist's utterances. A session where the
/// therapist never speaks yields the all-zero block.
pub fn tag_count_features(
    session: &AnnotatedSession,
    scheme: Scheme,
    norm: WordNorm,
) -> Result<TagFeatureBlock> {
    let mut items = Vec::new();
    let mut therapist_words = 0;
    for u in session.therapist_utterances() {
        let tag = u
            .tag(scheme)
            .ok_or(Error::Untagged(u.utterance.index_in_session))?;
        items.push((tag, u.utterance.len()));
        therapist_words += u.utterance.len();
    }
    let total = match norm {
        WordNorm::Therapist => therapist_words,
        WordNorm::Session => session.session.token_count(),
    };
    Ok(TagFeatureBlock::from_counts(&items, total))
}

/// Therapist words rewritten as `word|TAG` using the enclosing utterance's tag.
pub fn augment_tokens(session: &AnnotatedSession, scheme: Scheme) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for u in session.therapist_utterances() {
        let tag = u
            .tag(scheme)
            .ok_or(Error::Untagged(u.utterance.index_in_session))?;
        let label = scheme.label(tag);
        for tok in u.utterance.tokens(&session.session) {
            out.push(format!("{}{TAG_SEPARATOR}{label}", tok.text));
        }
    }
    Ok(out)
}

/// The word part of an augmented token.
pub fn strip_augmentation(token: &str) -> &str {
    token.rsplit_once(TAG_SEPARATOR).map_or(token, |(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Role, Session, Token, Turn};
    use crate::segmenter::Utterance;
    use crate::tagger::TaggedUtterance;
    use alloc::collections::BTreeSet;

    /// One turn per utterance; `tags` are MC label names.
    fn annotated(rows: &[(Role, &str, &str)]) -> AnnotatedSession {
        let mut clock = 0.0;
        let mut turns = Vec::new();
        let mut utts = Vec::new();
        for (i, &(role, text, tag)) in rows.iter().enumerate() {
            let tokens: Vec<Token> = text
                .split(' ')
                .map(|w| {
                    clock += 0.4;
                    Token::new(w, clock, clock + 0.3)
                })
                .collect();
            utts.push(TaggedUtterance {
                utterance: Utterance {
                    turn: i,
                    start: 0,
                    end: tokens.len(),
                    speaker: role,
                    index_in_session: i,
                },
                da: None,
                mc: Some(Scheme::Mc.index_of(tag).unwrap() as u8),
            });
            turns.push(Turn {
                speaker: role,
                tokens,
            });
        }
        AnnotatedSession {
            session: Session {
                id: "s".into(),
                turns,
                scores: None,
            },
            utterances: utts,
        }
    }

    #[test]
    fn hand_counted_block() {
        let t = Role::Therapist;
        let s = annotated(&[
            (t, "did you do it then", "QUC"),
            (t, "sounds like work", "RE"),
            (t, "so tired", "RE"),
            (t, "one two three four five six seven eight nine ten", "FA"),
        ]);
        let b = tag_count_features(&s, Scheme::Mc, WordNorm::Therapist).unwrap();
        let expect_utt = [0.25, 0.0, 0.5, 0.25, 0.0, 0.0, 0.0];
        let expect_word = [10.0 / 20.0, 0.0, 5.0 / 20.0, 5.0 / 20.0, 0.0, 0.0, 0.0];
        for i in 0..7 {
            assert!((b.utterance_part()[i] - expect_utt[i]).abs() < 1e-12);
            assert!((b.word_part()[i] - expect_word[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_tag_and_patient_exclusion() {
        let s = annotated(&[
            (Role::Therapist, "a b", "GI"),
            (Role::Patient, "x y z", "QUO"),
            (Role::Therapist, "c", "GI"),
        ]);
        let b = tag_count_features(&s, Scheme::Mc, WordNorm::Therapist).unwrap();
        assert_eq!(b.utterance_part()[1], 1.0);
        assert_eq!(b.word_part()[1], 1.0);
        assert_eq!(b.utterance_part().iter().sum::<f64>(), 1.0);
        let by_session = tag_count_features(&s, Scheme::Mc, WordNorm::Session).unwrap();
        assert!((by_session.word_part()[1] - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn silent_therapist_gives_zero_block() {
        let s = annotated(&[(Role::Patient, "hello", "FA")]);
        assert!(tag_count_features(&s, Scheme::Mc, WordNorm::Therapist)
            .unwrap()
            .is_zero());
    }

    #[test]
    fn untagged_is_an_error() {
        let mut s = annotated(&[(Role::Therapist, "a", "FA")]);
        assert!(matches!(
            tag_count_features(&s, Scheme::Da, WordNorm::Therapist),
            Err(Error::Untagged(0))
        ));
        s.utterances[0].mc = None;
        assert!(augment_tokens(&s, Scheme::Mc).is_err());
    }

    #[test]
    fn augmentation_example_and_projection() {
        let t = Role::Therapist;
        let s = annotated(&[
            (t, "did you finish the homework", "QUC"),
            (Role::Patient, "not yet", "FA"),
            (t, "so the homework was hard", "RE"),
        ]);
        let aug = augment_tokens(&s, Scheme::Mc).unwrap();
        assert_eq!(aug[4], "homework|QUC");
        assert_eq!(aug[7], "homework|RE");
        let stripped: Vec<&str> = aug.iter().map(|t| strip_augmentation(t)).collect();
        let original: Vec<&str> = s.session.therapist_tokens().collect();
        assert_eq!(stripped, original);
    }

    #[test]
    fn one_tag_keeps_vocabulary_size() {
        let t = Role::Therapist;
        let s = annotated(&[(t, "a b a", "GI"), (t, "c b", "GI")]);
        let aug: BTreeSet<String> = augment_tokens(&s, Scheme::Mc)
            .unwrap()
            .into_iter()
            .collect();
        let base: BTreeSet<&str> = s.session.therapist_tokens().collect();
        assert_eq!(aug.len(), base.len());
        assert_eq!(TagFeatureBlock::column_names(Scheme::Da).len(), 14);
    }
}
