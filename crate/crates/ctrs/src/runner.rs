//! Parallel drivers for the pipeline stages. Work is split across sessions
//! and across the twelve tasks; results are collected in input order, so
//! output does not depend on the number of threads.

use std::collections::BTreeMap;

use rayon::prelude::*;

use ctrs_core::corpus::{CodeLabels, Session, Task};
use ctrs_core::eval::{row_labels, task_report, EvalReport, ProtocolConfig};
use ctrs_core::features::FeatureMatrix;
use ctrs_core::pipeline::{
    annotate_session, choose_k, featurize, protocol_config, Models, PipelineConfig, RunOutput,
};
use ctrs_core::segmenter::{segment_session, BoundaryModel};
use ctrs_core::tagger::{tag_da, tag_mc, AnnotatedSession, DaTagger, UtteranceClassifier};
use ctrs_core::Result;

/// Runs `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

pub fn segment_all(
    sessions: &[Session],
    model: Option<&BoundaryModel>,
    pause_s: f64,
) -> Result<Vec<AnnotatedSession>> {
    sessions
        .par_iter()
        .map(|s| {
            Ok(AnnotatedSession::new(
                s.clone(),
                &segment_session(s, model, pause_s)?,
            ))
        })
        .collect()
}

pub fn tag_all_da(sessions: &mut [AnnotatedSession], model: &DaTagger) -> Result<()> {
    sessions.par_iter_mut().try_for_each(|s| tag_da(s, model))
}

pub fn tag_all_mc(sessions: &mut [AnnotatedSession], model: &UtteranceClassifier) {
    sessions.par_iter_mut().for_each(|s| tag_mc(s, model));
}

/// All twelve tasks, one per worker.
pub fn protocol(
    matrix: &FeatureMatrix,
    labels: &BTreeMap<String, CodeLabels>,
    cfg: &ProtocolConfig,
    feature_set: &str,
) -> Result<EvalReport> {
    let ys = row_labels(&matrix.row_ids, labels)?;
    let x = matrix.to_dense();
    let selectable = matrix.selectable();
    let tasks: Vec<Task> = Task::all().collect();
    let reports = tasks
        .par_iter()
        .map(|&t| task_report(&x, &selectable, &ys, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_tasks(feature_set, cfg, matrix.len(), reports)
}

/// Featurizes annotated sessions, chooses K and evaluates.
pub fn evaluate_sessions(
    annotated: &[AnnotatedSession],
    labels: &BTreeMap<String, CodeLabels>,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    let featurized = featurize(annotated, cfg.feature_set, cfg)?;
    let ys = row_labels(&featurized.matrix.row_ids, labels)?;
    let selection = choose_k(&featurized.matrix, &ys, cfg)?;
    let report = protocol(
        &featurized.matrix,
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

/// The full chain with session- and task-level parallelism.
pub fn run(
    sessions: &[Session],
    labels: &BTreeMap<String, CodeLabels>,
    cfg: &PipelineConfig,
    models: &Models<'_>,
) -> Result<RunOutput> {
    cfg.validate()?;
    models.check(cfg)?;
    let annotated: Vec<AnnotatedSession> = match cfg.feature_set.scheme() {
        Some(scheme) => sessions
            .par_iter()
            .map(|s| annotate_session(s, cfg, models, scheme))
            .collect::<Result<_>>()?,
        None => sessions
            .iter()
            .map(|s| AnnotatedSession::new(s.clone(), &[]))
            .collect(),
    };
    evaluate_sessions(&annotated, labels, cfg)
}
