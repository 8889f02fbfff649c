//! On-disk formats: JSONL corpora, CSV labels, JSON model containers,
//! sparse-triplet matrices and evaluation reports.
//!
//! Every artifact carries `format_version` and the writing tool's name and
//! version. No timestamps are written, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ctrs_core::corpus::{
    binarize_scores, Code, CodeLabels, CodeScores, Role, Session, Token, Turn,
};
use ctrs_core::features::{Column, FeatureMatrix, Provenance, SparseFeatureVector};
use ctrs_core::segmenter::Utterance;
use ctrs_core::tagger::{AnnotatedSession, Scheme, TaggedUtterance};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const CREATED_BY: &str = concat!("ctrs ", env!("CARGO_PKG_VERSION"));

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format_version {v}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenRecord {
    text: String,
    start: f64,
    end: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct UtteranceRecord {
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    da: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mc: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    speaker: Role,
    tokens: Vec<TokenRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    utterances: Option<Vec<UtteranceRecord>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionRecord {
    format_version: u32,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<BTreeMap<String, i64>>,
    turns: Vec<TurnRecord>,
}

fn scores_to_map(s: &CodeScores) -> BTreeMap<String, i64> {
    Code::ALL
        .iter()
        .map(|c| (c.abbr().to_string(), i64::from(s.get(*c))))
        .collect()
}

fn scores_from_map(map: &BTreeMap<String, i64>) -> ctrs_core::Result<CodeScores> {
    let mut values = [0i64; 11];
    let missing: Vec<String> = Code::ALL
        .iter()
        .filter(|c| !map.contains_key(c.abbr()))
        .map(|c| c.abbr().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ctrs_core::Error::MissingScores(missing.join(",")));
    }
    for (k, &v) in map {
        let code: Code = k.parse()?;
        values[code.index()] = v;
    }
    CodeScores::from_values(values)
}

fn session_record(s: &AnnotatedSession) -> SessionRecord {
    let mut per_turn: Vec<Vec<UtteranceRecord>> =
        (0..s.session.turns.len()).map(|_| Vec::new()).collect();
    for u in &s.utterances {
        per_turn[u.utterance.turn].push(UtteranceRecord {
            start: u.utterance.start,
            end: u.utterance.end,
            da: u.tag(Scheme::Da).map(|t| Scheme::Da.label(t).to_string()),
            mc: u.tag(Scheme::Mc).map(|t| Scheme::Mc.label(t).to_string()),
        });
    }
    let segmented = !s.utterances.is_empty();
    SessionRecord {
        format_version: FORMAT_VERSION,
        id: s.session.id.clone(),
        scores: s.session.scores.as_ref().map(scores_to_map),
        turns: s
            .session
            .turns
            .iter()
            .zip(per_turn)
            .map(|(t, utts)| TurnRecord {
                speaker: t.speaker,
                tokens: t
                    .tokens
                    .iter()
                    .map(|k| TokenRecord {
                        text: k.text.clone(),
                        start: k.start_s,
                        end: k.end_s,
                    })
                    .collect(),
                utterances: segmented.then_some(utts),
            })
            .collect(),
    }
}

fn session_from_record(r: SessionRecord) -> ctrs_core::Result<AnnotatedSession> {
    let segmented: Vec<bool> = r.turns.iter().map(|t| t.utterances.is_some()).collect();
    if segmented.iter().any(|&b| b) && !segmented.iter().all(|&b| b) {
        return Err(ctrs_core::Error::InvalidSession {
            session: r.id,
            reason: "utterances are given for some turns only".into(),
        });
    }
    let mut turns = Vec::with_capacity(r.turns.len());
    let mut utterances = Vec::new();
    for (ti, t) in r.turns.into_iter().enumerate() {
        for u in t.utterances.unwrap_or_default() {
            let da = u.da.map(|d| Scheme::Da.index_of(&d)).transpose()?;
            let mc = u.mc.map(|m| Scheme::Mc.index_of(&m)).transpose()?;
            utterances.push(TaggedUtterance {
                utterance: Utterance {
                    turn: ti,
                    start: u.start,
                    end: u.end,
                    speaker: t.speaker,
                    index_in_session: utterances.len(),
                },
                da: da.map(|v| v as u8),
                mc: mc.map(|v| v as u8),
            });
        }
        turns.push(Turn {
            speaker: t.speaker,
            tokens: t
                .tokens
                .into_iter()
                .map(|k| Token::new(k.text, k.start, k.end))
                .collect(),
        });
    }
    let session = Session {
        id: r.id,
        turns,
        scores: r.scores.as_ref().map(scores_from_map).transpose()?,
    };
    session.validate()?;
    let annotated = AnnotatedSession {
        session,
        utterances,
    };
    if !annotated.utterances.is_empty() {
        annotated.check_partition()?;
    }
    Ok(annotated)
}

/// One JSON session per line. Sessions without utterance spans come back
/// with an empty utterance list.
pub fn read_corpus(path: &Path) -> Result<Vec<AnnotatedSession>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: SessionRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        check_version(path, rec.format_version)?;
        out.push(session_from_record(rec)?);
    }
    let raw: Vec<Session> = out.iter().map(|s| s.session.clone()).collect();
    ctrs_core::corpus::check_unique_ids(&raw)?;
    Ok(out)
}

pub fn corpus_to_string(sessions: &[AnnotatedSession]) -> String {
    let mut s = String::new();
    for a in sessions {
        s.push_str(&serde_json::to_string(&session_record(a)).expect("corpus records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_corpus(path: &Path, sessions: &[AnnotatedSession]) -> Result<()> {
    write_text(path, &corpus_to_string(sessions))
}

/// Raw sessions without utterance spans.
pub fn plain(sessions: &[Session]) -> Vec<AnnotatedSession> {
    sessions
        .iter()
        .map(|s| AnnotatedSession::new(s.clone(), &[]))
        .collect()
}

pub fn labels_to_string(scores: &BTreeMap<String, CodeScores>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend(Code::ALL.iter().map(|c| c.abbr().to_string()));
    w.write_record(&header).expect("in-memory csv");
    for (id, s) in scores {
        let mut row = vec![id.clone()];
        row.extend(s.as_array().iter().map(u8::to_string));
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn write_labels(path: &Path, scores: &BTreeMap<String, CodeScores>) -> Result<()> {
    write_text(path, &labels_to_string(scores))
}

/// Per-session CTRS scores from a CSV with columns `id` and the eleven codes.
pub fn read_scores(path: &Path) -> Result<BTreeMap<String, CodeScores>> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let id_col = col("id").ok_or_else(|| Error::format(path, "missing `id` column"))?;
    let code_cols = Code::ALL
        .iter()
        .map(|c| {
            col(c.abbr())
                .ok_or_else(|| Error::format(path, format!("missing `{}` column", c.abbr())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let mut values = [0i64; 11];
        for (k, &c) in code_cols.iter().enumerate() {
            values[k] = rec
                .get(c)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| {
                    Error::format(path, format!("row {}: bad score in column {c}", i + 1))
                })?;
        }
        let id = rec.get(id_col).unwrap_or_default().trim().to_string();
        if out
            .insert(id.clone(), CodeScores::from_values(values)?)
            .is_some()
        {
            return Err(Error::format(path, format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, CodeLabels>> {
    Ok(read_scores(path)?
        .into_iter()
        .map(|(id, s)| (id, binarize_scores(&s)))
        .collect())
}

/// Versioned wrapper around a serialized model or feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Container<T> {
    pub format_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    pub created_by: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub model: T,
}

impl<T: Serialize> Container<T> {
    pub fn new(kind: &str, scheme: Option<Scheme>, seed: u64, model: T) -> Self {
        Container {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            scheme,
            created_by: CREATED_BY.to_string(),
            seed,
            notes: Vec::new(),
            model,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("containers serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }
}

/// Loads a container and checks its kind and, when given, its tag scheme.
pub fn load_container<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
    scheme: Option<Scheme>,
) -> Result<Container<T>> {
    let text = read_text(path)?;
    let c: Container<T> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    check_version(path, c.format_version)?;
    if c.kind != kind {
        return Err(Error::format(
            path,
            format!("expected a {kind} file, found {}", c.kind),
        ));
    }
    if scheme.is_some() && c.scheme != scheme {
        return Err(Error::format(
            path,
            format!(
                "model was trained for tag set {}, not {}",
                c.scheme.map_or("none", Scheme::name),
                scheme.map_or("none", Scheme::name)
            ),
        ));
    }
    Ok(c)
}

/// Header data of a matrix file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixMeta {
    pub feature_set: String,
    pub seed: u64,
}

fn provenance_from(name: &str) -> Option<Provenance> {
    [
        Provenance::Tfidf,
        Provenance::TagCounts,
        Provenance::AugmentedTfidf,
        Provenance::Concat,
    ]
    .into_iter()
    .find(|p| p.name() == name)
}

/// Sparse triplets `row col value`, preceded by `%` header lines that name
/// the feature set, map rows to session ids and describe every column.
pub fn matrix_to_string(m: &FeatureMatrix, meta: &MatrixMeta) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "% ctrs-matrix format_version={FORMAT_VERSION} created_by={}",
        CREATED_BY.replace(' ', "/")
    );
    let _ = writeln!(
        s,
        "% feature_set={} provenance={} seed={} rows={} cols={}",
        meta.feature_set,
        m.provenance.name(),
        meta.seed,
        m.len(),
        m.dim()
    );
    for (i, id) in m.row_ids.iter().enumerate() {
        let _ = writeln!(s, "% row {i} {id}");
    }
    for (j, c) in m.columns.iter().enumerate() {
        let _ = writeln!(s, "% col {j} {} {}", u8::from(c.selectable), c.name);
    }
    for (i, row) in m.rows.iter().enumerate() {
        for (&j, &v) in row.indices.iter().zip(&row.values) {
            let _ = writeln!(s, "{i} {j} {v:?}");
        }
    }
    s
}

pub fn write_matrix(path: &Path, m: &FeatureMatrix, meta: &MatrixMeta) -> Result<()> {
    write_text(path, &matrix_to_string(m, meta))
}

pub fn read_matrix(path: &Path) -> Result<(FeatureMatrix, MatrixMeta)> {
    let text = read_text(path)?;
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {}: {msg}", line + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.starts_with("% ctrs-matrix ") => {
            let v = l
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix("format_version="))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(0, "missing format_version"))?;
            check_version(path, v)?;
        }
        _ => return Err(Error::format(path, "not a ctrs matrix file")),
    }
    let (hi, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let fields: BTreeMap<&str, &str> = header
        .trim_start_matches('%')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| bad(hi, &format!("missing {k}")))
    };
    let rows: usize = get("rows")?.parse().map_err(|_| bad(hi, "bad rows"))?;
    let cols: usize = get("cols")?.parse().map_err(|_| bad(hi, "bad cols"))?;
    let meta = MatrixMeta {
        feature_set: get("feature_set")?.to_string(),
        seed: get("seed")?.parse().map_err(|_| bad(hi, "bad seed"))?,
    };
    let provenance =
        provenance_from(get("provenance")?).ok_or_else(|| bad(hi, "unknown provenance"))?;
    let mut row_ids = Vec::with_capacity(rows);
    let mut columns = Vec::with_capacity(cols);
    let mut triplets: Vec<Vec<(u32, f64)>> = vec![Vec::new(); rows];
    for (i, line) in lines {
        if let Some(rest) = line.strip_prefix("% row ") {
            let (idx, id) = rest.split_once(' ').ok_or_else(|| bad(i, "bad row line"))?;
            if idx.parse::<usize>().ok() != Some(row_ids.len()) {
                return Err(bad(i, "rows out of order"));
            }
            row_ids.push(id.to_string());
        } else if let Some(rest) = line.strip_prefix("% col ") {
            let mut parts = rest.splitn(3, ' ');
            let idx = parts.next().and_then(|v| v.parse::<usize>().ok());
            let sel = parts.next();
            let name = parts.next().ok_or_else(|| bad(i, "bad col line"))?;
            if idx != Some(columns.len()) {
                return Err(bad(i, "columns out of order"));
            }
            columns.push(Column {
                name: name.to_string(),
                selectable: sel == Some("1"),
            });
        } else if !line.trim().is_empty() && !line.starts_with('%') {
            let mut p = line.split_whitespace();
            let (r, c, v) = (p.next(), p.next(), p.next());
            let r: usize = r
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| bad(i, "bad row index"))?;
            let c: u32 = c
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| bad(i, "bad column index"))?;
            let v: f64 = v
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| bad(i, "bad value"))?;
            triplets
                .get_mut(r)
                .ok_or_else(|| bad(i, "row index out of range"))?
                .push((c, v));
        }
    }
    if row_ids.len() != rows || columns.len() != cols {
        return Err(Error::format(
            path,
            "row or column map does not match the header",
        ));
    }
    let rows = triplets
        .into_iter()
        .map(|t| SparseFeatureVector::from_pairs(cols, t))
        .collect::<ctrs_core::Result<Vec<_>>>()?;
    Ok((
        FeatureMatrix {
            provenance,
            row_ids,
            columns,
            rows,
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctrs_core::synth::{generate_corpus, SynthConfig};

    #[test]
    fn corpus_round_trip() {
        let c = generate_corpus(&SynthConfig {
            n_sessions: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&p, &c.sessions).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), c.sessions);
        let raw: Vec<Session> = c.sessions.iter().map(|s| s.session.clone()).collect();
        write_corpus(&p, &plain(&raw)).unwrap();
        let back = read_corpus(&p).unwrap();
        assert!(back.iter().all(|s| s.utterances.is_empty()));
        assert_eq!(back[1].session, raw[1]);
    }

    #[test]
    fn labels_round_trip() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), CodeScores::uniform(4).unwrap());
        m.insert("b".to_string(), CodeScores::uniform(2).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_labels(&p, &m).unwrap();
        assert_eq!(read_scores(&p).unwrap(), m);
        std::fs::write(&p, "id,ag\nx,3\n").unwrap();
        assert!(read_scores(&p).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let m = FeatureMatrix {
            provenance: Provenance::Concat,
            row_ids: vec!["s1".into(), "s2".into()],
            columns: vec![
                Column {
                    name: "tfidf:a|QUC".into(),
                    selectable: true,
                },
                Column {
                    name: "mc:utt:FA".into(),
                    selectable: false,
                },
            ],
            rows: vec![
                SparseFeatureVector::from_dense(&[0.1 + 0.2, 0.0]),
                SparseFeatureVector::from_dense(&[0.0, 1.0 / 3.0]),
            ],
        };
        let meta = MatrixMeta {
            feature_set: "tfidf+mc".into(),
            seed: 7,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_matrix(&p, &m, &meta).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), (m, meta));
    }

    #[test]
    fn container_checks_kind_and_scheme() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        Container::new("tagger", Some(Scheme::Da), 1, 5u32)
            .save(&p)
            .unwrap();
        assert!(load_container::<u32>(&p, "tagger", Some(Scheme::Da)).is_ok());
        assert!(load_container::<u32>(&p, "tagger", Some(Scheme::Mc)).is_err());
        assert!(load_container::<u32>(&p, "boundary", None).is_err());
    }
}
