//! Subcommands. Each reads and writes the file formats in [`crate::formats`],
//! so the stages can be chained through files or run at once with `run`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ctrs_core::classify::LinearModel;
use ctrs_core::corpus::{CodeLabels, Label, Session, Task};
use ctrs_core::eval::{
    fit_fold, five_by_two_cv, Candidate, EvalReport, FiveByTwo, FoldModel, F_CRITICAL_10_5,
};
use ctrs_core::features::{FeatureMatrix, FeatureSpace, KSelection, WordNorm};
use ctrs_core::pipeline::{choose_k, featurize, FeatureSet, Models, PipelineConfig};
use ctrs_core::segmenter::BoundaryModel;
use ctrs_core::synth::{generate_corpus, SynthConfig};
use ctrs_core::tagger::{DaTagger, Scheme, UtteranceClassifier};

use crate::error::{Error, Result};
use crate::formats::{self, Container, MatrixMeta};
use crate::runner;
use crate::training;

#[derive(Debug, Parser)]
#[command(
    name = "ctrs",
    version,
    about = "Predict session-level CTRS codes from diarized therapy transcripts"
)]
pub struct Cli {
    /// Root seed; overrides the seed in --config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML configuration: a synth config for `synth`, a pipeline config otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with gold tags, labels and punctuated text.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of sessions; overrides the config.
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Train the sentence-boundary model on punctuated text, one turn per line.
    TrainSegmenter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = training::DEFAULT_L2)]
        l2: f64,
    },
    /// Train a DA or MC tagger on a corpus with gold utterance tags.
    TrainTagger {
        #[arg(long)]
        scheme: Scheme,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = training::DEFAULT_L2)]
        l2: f64,
    },
    /// Split turns into utterances.
    Segment {
        /// Boundary model; without it every pause-delimited fragment is one utterance.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pause: Option<f64>,
    },
    /// Tag every utterance of a segmented corpus.
    Tag {
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a session-by-feature matrix.
    Featurize {
        #[arg(long)]
        set: FeatureSet,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the fitted tf-idf space.
        #[arg(long)]
        space_out: Option<PathBuf>,
        #[command(flatten)]
        tfidf: TfidfArgs,
    },
    /// Train one code's SVM on all sessions of a matrix.
    Train {
        /// ag, at, co, fb, gd, hw, ip, cb, pt, sc, un or total.
        #[arg(long)]
        code: Task,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of selectable features to keep; chosen by cross-validation when absent.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Cross-validate all twelve tasks on a matrix.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Plain-text table output.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Compare two feature matrices with the combined 5x2cv F test on total CTRS.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Print report files side by side, one column per feature set.
    Table {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment, tag, featurize and evaluate in one go.
    Run {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        set: Option<FeatureSet>,
        #[arg(long)]
        segmenter: Option<PathBuf>,
        #[arg(long)]
        da_model: Option<PathBuf>,
        #[arg(long)]
        mc_model: Option<PathBuf>,
        /// Treat every pause-delimited fragment as one utterance.
        #[arg(long)]
        no_segmentation: bool,
        #[arg(long)]
        pause: Option<f64>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        tfidf: TfidfArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TfidfArgs {
    #[arg(long)]
    pub max_df: Option<f64>,
    #[arg(long)]
    pub min_df: Option<f64>,
    /// Denominator of tag word proportions: therapist or session.
    #[arg(long, value_parser = parse_word_norm)]
    pub word_norm: Option<WordNorm>,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub folds: Option<usize>,
    /// SVM regularization parameter.
    #[arg(long)]
    pub c: Option<f64>,
    /// Comma-separated candidate values of K.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
}

fn parse_word_norm(s: &str) -> std::result::Result<WordNorm, String> {
    match s {
        "therapist" => Ok(WordNorm::Therapist),
        "session" => Ok(WordNorm::Session),
        _ => Err(format!("expected `therapist` or `session`, got `{s}`")),
    }
}

impl TfidfArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.max_df {
            cfg.max_df = v;
        }
        if let Some(v) = self.min_df {
            cfg.min_df = v;
        }
        if let Some(v) = self.word_norm {
            cfg.word_norm = v;
        }
    }
}

impl ProtocolArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.c {
            cfg.c = v;
        }
        if let Some(v) = &self.k_grid {
            cfg.k_grid = v.clone();
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&formats::read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(p) => read_toml(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn raw_sessions(path: &Path) -> Result<Vec<Session>> {
    Ok(formats::read_corpus(path)?
        .into_iter()
        .map(|a| a.session)
        .collect())
}

fn load_boundary(path: &Path) -> Result<BoundaryModel> {
    Ok(formats::load_container::<BoundaryModel>(path, "boundary", None)?.model)
}

fn load_da(path: &Path) -> Result<DaTagger> {
    Ok(formats::load_container::<DaTagger>(path, "tagger", Some(Scheme::Da))?.model)
}

fn load_mc(path: &Path) -> Result<UtteranceClassifier> {
    Ok(formats::load_container::<UtteranceClassifier>(path, "tagger", Some(Scheme::Mc))?.model)
}

/// Report file body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub report: EvalReport,
    pub selection: KSelection,
}

/// Comparison file body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareBody {
    pub a: String,
    pub b: String,
    pub k_a: usize,
    pub k_b: usize,
    pub critical_value: f64,
    pub decision: String,
    pub test: FiveByTwo,
}

/// Table of per-code F1 with one column per report, followed by the
/// 11-code average and the total.
pub fn table(reports: &[&EvalReport]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<6}", "code");
    for r in reports {
        let _ = write!(s, " {:>10}", r.feature_set);
    }
    s.push('\n');
    for t in Task::all().filter(|t| *t != Task::Total) {
        let _ = write!(s, "{:<6}", t.name());
        for r in reports {
            let v = r.task(t).map_or(f64::NAN, |x| x.f1_high);
            let _ = write!(s, " {v:>10.4}");
        }
        s.push('\n');
    }
    for (name, get) in [("avg", avg_of as fn(&EvalReport) -> f64), ("tot", total_of)] {
        let _ = write!(s, "{name:<6}");
        for r in reports {
            let _ = write!(s, " {:>10.4}", get(r));
        }
        s.push('\n');
    }
    s
}

fn avg_of(r: &EvalReport) -> f64 {
    r.avg_f1
}

fn total_of(r: &EvalReport) -> f64 {
    r.total_f1
}

/// Per-task counts and both classes' F1 for one report.
pub fn detail_table(r: &EvalReport) -> String {
    let mut s = format!(
        "feature set {} | K = {} | {} folds | C = {} | seed {}\n",
        r.feature_set, r.k, r.folds, r.c, r.seed
    );
    let _ = writeln!(
        s,
        "{:<6} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6}",
        "code", "F1 high", "F1 low", "TP", "FP", "FN", "TN"
    );
    for t in &r.tasks {
        let c = ctrs_core::eval::Confusion::sum(&t.folds);
        let _ = writeln!(
            s,
            "{:<6} {:>8.4} {:>8.4} {:>6} {:>6} {:>6} {:>6}",
            t.task, t.f1_high, t.f1_low, c.tp, c.fp, c.fn_, c.tn
        );
    }
    let _ = writeln!(s, "{:<6} {:>8.4}", "avg", r.avg_f1);
    let _ = writeln!(s, "{:<6} {:>8.4}", "tot", r.total_f1);
    s
}

fn write_report(out: &RunLike, report: &Path, table_path: Option<&Path>) -> Result<()> {
    let body = ReportBody {
        report: out.report.clone(),
        selection: out.selection.clone(),
    };
    Container::new("report", None, out.report.seed, body).save(report)?;
    let text = detail_table(&out.report);
    print!("{text}");
    if let Some(t) = table_path {
        formats::write_text(t, &text)?;
    }
    Ok(())
}

struct RunLike {
    report: EvalReport,
    selection: KSelection,
}

fn labels_for(
    matrix: &FeatureMatrix,
    labels: &BTreeMap<String, CodeLabels>,
) -> Result<Vec<CodeLabels>> {
    Ok(ctrs_core::eval::row_labels(&matrix.row_ids, labels)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    runner::with_threads(threads, move || execute(&cli))
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { out, sessions } => {
            let mut cfg: SynthConfig = match &cli.config {
                Some(p) => read_toml(p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(n) = sessions {
                cfg.n_sessions = *n;
            }
            let corpus = generate_corpus(&cfg)?;
            let raw: Vec<Session> = corpus
                .sessions
                .iter()
                .map(|a| Session {
                    scores: None,
                    ..a.session.clone()
                })
                .collect();
            formats::write_corpus(&out.join("corpus.jsonl"), &formats::plain(&raw))?;
            formats::write_corpus(&out.join("gold.jsonl"), &corpus.sessions)?;
            let scores = corpus
                .sessions
                .iter()
                .filter_map(|a| a.session.scores.map(|s| (a.session.id.clone(), s)))
                .collect();
            formats::write_labels(&out.join("labels.csv"), &scores)?;
            let text: String = corpus
                .punctuated_turns()
                .iter()
                .map(|t| t.join(" ") + "\n")
                .collect();
            formats::write_text(&out.join("boundary.txt"), &text)?;
            let cfg_text = toml::to_string(&cfg).map_err(|e| Error::Usage(e.to_string()))?;
            formats::write_text(&out.join("synth.toml"), &cfg_text)
        }
        Command::TrainSegmenter { input, out, l2 } => {
            let seed = cli.seed.unwrap_or(0);
            let lines: Vec<Vec<String>> = formats::read_text(input)?
                .lines()
                .map(|l| l.split_whitespace().map(String::from).collect())
                .collect();
            let fit = training::train_segmenter(&lines, *l2, seed)?;
            let mut c = Container::new("boundary", None, seed, fit.model);
            c.notes = fit.warnings;
            c.save(out)
        }
        Command::TrainTagger {
            scheme,
            input,
            out,
            l2,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let sessions = formats::read_corpus(input)?;
            match scheme {
                Scheme::Da => {
                    let fit = training::train_da_tagger(&sessions, *l2, seed)?;
                    let mut c = Container::new("tagger", Some(Scheme::Da), seed, fit.model);
                    c.notes = fit.warnings;
                    c.save(out)
                }
                Scheme::Mc => {
                    let fit = training::train_mc_tagger(&sessions, *l2, seed)?;
                    let mut c = Container::new("tagger", Some(Scheme::Mc), seed, fit.model);
                    c.notes = fit.warnings;
                    c.save(out)
                }
            }
        }
        Command::Segment {
            model,
            input,
            out,
            pause,
        } => {
            let cfg = pipeline_config(cli)?;
            let sessions = raw_sessions(input)?;
            let boundary = model.as_deref().map(load_boundary).transpose()?;
            let segmented =
                runner::segment_all(&sessions, boundary.as_ref(), pause.unwrap_or(cfg.pause_s))?;
            formats::write_corpus(out, &segmented)
        }
        Command::Tag {
            scheme,
            model,
            input,
            out,
        } => {
            let mut sessions = formats::read_corpus(input)?;
            if let Some(s) = sessions
                .iter()
                .find(|s| s.utterances.is_empty() && !s.session.turns.is_empty())
            {
                return Err(Error::Usage(format!(
                    "session {} is not segmented; run `segment` first",
                    s.session.id
                )));
            }
            match scheme {
                Scheme::Da => {
                    let m = load_da(model)?;
                    runner::tag_all_da(&mut sessions, &m)?;
                }
                Scheme::Mc => {
                    let m = load_mc(model)?;
                    runner::tag_all_mc(&mut sessions, &m);
                }
            }
            formats::write_corpus(out, &sessions)
        }
        Command::Featurize {
            set,
            input,
            out,
            space_out,
            tfidf,
        } => {
            let mut cfg = pipeline_config(cli)?;
            tfidf.apply(&mut cfg);
            let sessions = formats::read_corpus(input)?;
            let f = featurize(&sessions, *set, &cfg)?;
            for w in &f.warnings {
                eprintln!("warning: {w}");
            }
            formats::write_matrix(
                out,
                &f.matrix,
                &MatrixMeta {
                    feature_set: set.name().to_string(),
                    seed: cfg.seed,
                },
            )?;
            if let (Some(p), Some(space)) = (space_out, f.space) {
                Container::<FeatureSpace>::new("feature_space", set.scheme(), cfg.seed, space)
                    .save(p)?;
            }
            Ok(())
        }
        Command::Train {
            code,
            features,
            labels,
            out,
            k,
            protocol,
        } => {
            let mut cfg = pipeline_config(cli)?;
            protocol.apply(&mut cfg);
            let (matrix, meta) = formats::read_matrix(features)?;
            let ys = labels_for(&matrix, &formats::read_labels(labels)?)?;
            let k = match k {
                Some(k) => *k,
                None => choose_k(&matrix, &ys, &cfg)?.k,
            };
            let y: Vec<Label> = ys.iter().map(|l| l.get(*code)).collect();
            let all: Vec<usize> = (0..matrix.len()).collect();
            let fitted = fit_fold(
                &matrix.to_dense(),
                &matrix.selectable(),
                &y,
                &all,
                k,
                cfg.c,
                cfg.seed,
            )?;
            let mut model: LinearModel = match fitted {
                FoldModel::Linear(m) => m,
                FoldModel::Constant(_) => return Err(ctrs_core::Error::SingleClass.into()),
            };
            model.feature_space = meta.feature_set;
            let mut c = Container::new("svm", None, cfg.seed, model);
            c.notes = vec![format!("task {code}, K = {k}")];
            c.save(out)
        }
        Command::Evaluate {
            features,
            labels,
            report,
            table,
            protocol,
        } => {
            let mut cfg = pipeline_config(cli)?;
            protocol.apply(&mut cfg);
            cfg.validate()?;
            let (matrix, meta) = formats::read_matrix(features)?;
            let labels = formats::read_labels(labels)?;
            let ys = labels_for(&matrix, &labels)?;
            let selection = choose_k(&matrix, &ys, &cfg)?;
            let pc = ctrs_core::pipeline::protocol_config(&cfg, selection.k);
            let rep = runner::protocol(&matrix, &labels, &pc, &meta.feature_set)?;
            write_report(
                &RunLike {
                    report: rep,
                    selection,
                },
                report,
                table.as_deref(),
            )
        }
        Command::Compare {
            a,
            b,
            labels,
            out,
            protocol,
        } => {
            let mut cfg = pipeline_config(cli)?;
            protocol.apply(&mut cfg);
            cfg.validate()?;
            let (ma, meta_a) = formats::read_matrix(a)?;
            let (mb, meta_b) = formats::read_matrix(b)?;
            if ma.row_ids != mb.row_ids {
                return Err(ctrs_core::Error::ProvenanceMismatch.into());
            }
            let labels = formats::read_labels(labels)?;
            let ys = labels_for(&ma, &labels)?;
            let y: Vec<Label> = ys.iter().map(|l| l.total).collect();
            let ka = choose_k(&ma, &ys, &cfg)?.k;
            let kb = choose_k(&mb, &ys, &cfg)?.k;
            let (xa, xb) = (ma.to_dense(), mb.to_dense());
            let (sa, sb) = (ma.selectable(), mb.selectable());
            let test = five_by_two_cv(
                Candidate {
                    x: &xa,
                    selectable: &sa,
                    k: ka,
                },
                Candidate {
                    x: &xb,
                    selectable: &sb,
                    k: kb,
                },
                &y,
                cfg.c,
                cfg.seed,
            )?;
            let decision = if test.no_difference() {
                "no difference"
            } else if test.significant {
                "significant at 0.05"
            } else {
                "not significant at 0.05"
            };
            let body = CompareBody {
                a: meta_a.feature_set,
                b: meta_b.feature_set,
                k_a: ka,
                k_b: kb,
                critical_value: F_CRITICAL_10_5,
                decision: decision.to_string(),
                test,
            };
            Container::new("comparison", None, cfg.seed, body).save(out)
        }
        Command::Table { reports, out } => {
            let bodies = reports
                .iter()
                .map(|p| {
                    Ok(formats::load_container::<ReportBody>(p, "report", None)?
                        .model
                        .report)
                })
                .collect::<Result<Vec<_>>>()?;
            let text = table(&bodies.iter().collect::<Vec<_>>());
            print!("{text}");
            match out {
                Some(p) => formats::write_text(p, &text),
                None => Ok(()),
            }
        }
        Command::Run {
            input,
            labels,
            set,
            segmenter,
            da_model,
            mc_model,
            no_segmentation,
            pause,
            report,
            table,
            tfidf,
            protocol,
        } => {
            let mut cfg = pipeline_config(cli)?;
            tfidf.apply(&mut cfg);
            protocol.apply(&mut cfg);
            if let Some(s) = set {
                cfg.feature_set = *s;
            }
            if *no_segmentation {
                cfg.segmentation = false;
            }
            if let Some(p) = pause {
                cfg.pause_s = *p;
            }
            let sessions = raw_sessions(input)?;
            let labels = formats::read_labels(labels)?;
            let boundary = segmenter.as_deref().map(load_boundary).transpose()?;
            let da = da_model.as_deref().map(load_da).transpose()?;
            let mc = mc_model.as_deref().map(load_mc).transpose()?;
            let models = Models {
                boundary: boundary.as_ref(),
                da: da.as_ref(),
                mc: mc.as_ref(),
            };
            let out = runner::run(&sessions, &labels, &cfg, &models)?;
            for w in &out.featurized.warnings {
                eprintln!("warning: {w}");
            }
            write_report(
                &RunLike {
                    report: out.report,
                    selection: out.selection,
                },
                report,
                table.as_deref(),
            )
        }
    }
}
