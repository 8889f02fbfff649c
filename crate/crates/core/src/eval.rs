//! Cross-validation protocol, pooled F1 and the combined 5x2cv F test.
//!
//! Every fold fits F-score selection, z-scaling, class weights and the SVM
//! from its training rows alone; held-out rows are only ever predicted.
//! Confusion counts are summed over folds before F1 is taken.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{class_weights, train_svm, LinearModel};
use crate::corpus::{CodeLabels, Label, Task};
use crate::error::{Error, Result};
use crate::features::{anova_f_scores, fit_scaler, top_k_columns};
use crate::math::derive_seed;
use crate::sequence::Grid;

/// Upper 0.05 quantile of the F(10, 5) distribution.
pub const F_CRITICAL_10_5: f64 = 4.73506306969342;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Session ids per fold, in input order within each fold.
    pub folds: Vec<Vec<String>>,
    /// The same folds as row indices into the input id list.
    pub indices: Vec<Vec<usize>>,
}

/// Shuffled partition of `0..n` into `k` folds. With labels, each class is
/// shuffled separately (low first) and dealt round-robin, continuing the deal
/// across classes, so fold sizes and per-fold class counts differ by at most one.
pub fn fold_indices(
    n: usize,
    k: usize,
    seed: u64,
    stratify: Option<&[Label]>,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(alloc::format!(
            "need at least 2 folds, got {k}"
        )));
    }
    if k > n {
        return Err(Error::InvalidParameter(alloc::format!(
            "{k} folds for {n} sessions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    match stratify {
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    what: "sessions vs stratification labels",
                    left: n,
                    right: labels.len(),
                });
            }
            for class in [Label::Low, Label::High] {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                members.shuffle(&mut rng);
                order.extend(members);
            }
        }
        None => {
            order.extend(0..n);
            order.shuffle(&mut rng);
        }
    }
    let mut folds = alloc::vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

pub fn make_folds(
    session_ids: &[String],
    k: usize,
    seed: u64,
    stratify_on: Option<&[Label]>,
) -> Result<FoldPlan> {
    let indices = fold_indices(session_ids.len(), k, seed, stratify_on)?;
    Ok(FoldPlan {
        k,
        seed,
        stratified: stratify_on.is_some(),
        folds: indices
            .iter()
            .map(|f| f.iter().map(|&i| session_ids[i].clone()).collect())
            .collect(),
        indices,
    })
}

/// Binary confusion counts with `high` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::High, Label::High) => self.tp += 1,
            (Label::Low, Label::High) => self.fp += 1,
            (Label::High, Label::Low) => self.fn_ += 1,
            (Label::Low, Label::Low) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn errors(&self) -> u64 {
        self.fp + self.fn_
    }

    pub fn f1_high(&self) -> f64 {
        f1_from_counts(self.tp, self.fp, self.fn_)
    }

    /// F1 with `low` as the positive class.
    pub fn f1_low(&self) -> f64 {
        f1_from_counts(self.tn, self.fn_, self.fp)
    }

    pub fn sum(counts: &[Confusion]) -> Confusion {
        counts.iter().fold(Confusion::default(), |a, c| Confusion {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
            tn: a.tn + c.tn,
        })
    }
}

/// `2PR / (P + R)`; zero when there is no true positive.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 || denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// F1 from `(TP, FP, FN)` summed over folds.
pub fn pooled_f1(per_fold: &[(u64, u64, u64)]) -> f64 {
    let (tp, fp, fn_) = per_fold
        .iter()
        .fold((0, 0, 0), |(a, b, c), &(x, y, z)| (a + x, b + y, c + z));
    f1_from_counts(tp, fp, fn_)
}

pub fn pooled_f1_of(counts: &[Confusion]) -> f64 {
    Confusion::sum(counts).f1_high()
}

/// A classifier fitted on one training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FoldModel {
    Linear(LinearModel),
    /// The training rows held a single class.
    Constant(Label),
}

impl FoldModel {
    pub fn predict_row(&self, row: &[f64]) -> Result<Label> {
        match self {
            FoldModel::Linear(m) => m.predict_full(row),
            FoldModel::Constant(l) => Ok(*l),
        }
    }
}

/// Fits selection, scaling and the SVM on `train` rows of `x` only.
pub fn fit_fold(
    x: &Grid,
    selectable: &[bool],
    y: &[Label],
    train: &[usize],
    k: usize,
    c: f64,
    seed: u64,
) -> Result<FoldModel> {
    if selectable.len() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: selectable.len(),
        });
    }
    let y_train: Vec<Label> = train.iter().map(|&r| y[r]).collect();
    if y_train.is_empty() {
        return Err(Error::Empty("training fold"));
    }
    if y_train.iter().all(|&l| l == y_train[0]) {
        return Ok(FoldModel::Constant(y_train[0]));
    }
    let scores = anova_f_scores(x, y, train)?;
    let mask = top_k_columns(&scores, k, selectable);
    let mut sub = Grid::zeros(train.len(), mask.len());
    for (i, &r) in train.iter().enumerate() {
        for (j, &col) in mask.iter().enumerate() {
            sub[(i, j)] = x[(r, col)];
        }
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let scaler = fit_scaler(&sub, &all)?;
    let rows: Vec<Vec<f64>> = (0..train.len())
        .map(|i| scaler.transform_row(sub.row(i)))
        .collect::<Result<_>>()?;
    let cw = class_weights(&y_train)?;
    let mut model = train_svm(&rows, &y_train, c, cw, seed)?;
    model.feature_mask = mask;
    model.scaler = Some(scaler);
    Ok(FoldModel::Linear(model))
}

/// Complement of fold `f`, ascending.
pub fn training_rows(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != f)
        .flat_map(|(_, rows)| rows.iter().copied())
        .collect();
    rows.sort_unstable();
    rows
}

/// Per-fold confusion counts for one binary task.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_task(
    x: &Grid,
    selectable: &[bool],
    y: &[Label],
    folds: &[Vec<usize>],
    k: usize,
    c: f64,
    seed: u64,
) -> Result<Vec<Confusion>> {
    if y.len() != x.rows() {
        return Err(Error::LengthMismatch {
            what: "feature rows vs labels",
            left: x.rows(),
            right: y.len(),
        });
    }
    let mut out = Vec::with_capacity(folds.len());
    for (f, test) in folds.iter().enumerate() {
        let train = training_rows(folds, f);
        let model = fit_fold(x, selectable, y, &train, k, c, derive_seed(seed, f as u64))?;
        let mut conf = Confusion::default();
        for &r in test {
            conf.record(y[r], model.predict_row(x.row(r))?);
        }
        out.push(conf);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub folds: Vec<Confusion>,
    /// Pooled F1 of the high class.
    pub f1_high: f64,
    /// Pooled F1 of the low class.
    pub f1_low: f64,
}

impl TaskReport {
    pub fn new(task: Task, folds: Vec<Confusion>) -> Self {
        let sum = Confusion::sum(&folds);
        TaskReport {
            task: String::from(task.name()),
            f1_high: sum.f1_high(),
            f1_low: sum.f1_low(),
            folds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub folds: usize,
    /// Number of selectable features kept in each training fold.
    pub k: usize,
    pub c: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub feature_set: String,
    pub seed: u64,
    pub folds: usize,
    pub k: usize,
    pub c: f64,
    pub n_sessions: usize,
    /// Eleven codes followed by the total.
    pub tasks: Vec<TaskReport>,
    /// Mean high-class F1 over the eleven codes.
    pub avg_f1: f64,
    pub total_f1: f64,
}

impl EvalReport {
    pub fn from_tasks(
        feature_set: &str,
        cfg: &ProtocolConfig,
        n_sessions: usize,
        tasks: Vec<TaskReport>,
    ) -> Result<Self> {
        let names: Vec<&str> = Task::all().map(Task::name).collect();
        if tasks.len() != names.len() || tasks.iter().zip(&names).any(|(t, n)| t.task != *n) {
            return Err(Error::InvalidParameter(
                "report needs the eleven codes and the total, in order".into(),
            ));
        }
        let avg_f1 = tasks[..11].iter().map(|t| t.f1_high).sum::<f64>() / 11.0;
        let total_f1 = tasks[11].f1_high;
        Ok(EvalReport {
            feature_set: String::from(feature_set),
            seed: cfg.seed,
            folds: cfg.folds,
            k: cfg.k,
            c: cfg.c,
            n_sessions,
            tasks,
            avg_f1,
            total_f1,
        })
    }

    pub fn task(&self, task: Task) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task.name())
    }
}

/// Labels for each row id, or the list of ids without labels.
pub fn row_labels(
    row_ids: &[String],
    labels: &BTreeMap<String, CodeLabels>,
) -> Result<Vec<CodeLabels>> {
    let missing: Vec<String> = row_ids
        .iter()
        .filter(|id| !labels.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    Ok(row_ids.iter().map(|id| labels[id]).collect())
}

/// Runs one task with folds stratified on that task's labels.
pub fn task_report(
    x: &Grid,
    selectable: &[bool],
    labels: &[CodeLabels],
    task: Task,
    cfg: &ProtocolConfig,
) -> Result<TaskReport> {
    let y: Vec<Label> = labels.iter().map(|l| l.get(task)).collect();
    let stream = derive_seed(cfg.seed, task.stream());
    let folds = fold_indices(y.len(), cfg.folds, stream, Some(&y))?;
    let counts = evaluate_task(x, selectable, &y, &folds, cfg.k, cfg.c, stream)?;
    Ok(TaskReport::new(task, counts))
}

/// Runs all twelve tasks in order.
pub fn run_protocol(
    x: &Grid,
    selectable: &[bool],
    row_ids: &[String],
    labels: &BTreeMap<String, CodeLabels>,
    cfg: &ProtocolConfig,
    feature_set: &str,
) -> Result<EvalReport> {
    if row_ids.len() != x.rows() {
        return Err(Error::LengthMismatch {
            what: "row ids vs feature rows",
            left: row_ids.len(),
            right: x.rows(),
        });
    }
    let ys = row_labels(row_ids, labels)?;
    let tasks = Task::all()
        .map(|t| task_report(x, selectable, &ys, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_tasks(feature_set, cfg, x.rows(), tasks)
}

/// The 5x2cv combined F statistic and its decision at the 0.05 level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveByTwo {
    /// Error-rate difference A - B per replication and fold.
    pub p: [[f64; 2]; 5],
    /// `None` when every difference is zero.
    pub f: Option<f64>,
    /// Every replication had zero variance while some difference was not zero.
    pub degenerate: bool,
    pub significant: bool,
}

impl FiveByTwo {
    pub fn no_difference(&self) -> bool {
        self.f.is_none()
    }
}

pub fn five_by_two_statistic(p: [[f64; 2]; 5]) -> FiveByTwo {
    let num: f64 = p.iter().flatten().map(|v| v * v).sum();
    let den: f64 = p
        .iter()
        .map(|r| {
            let m = (r[0] + r[1]) / 2.0;
            (r[0] - m) * (r[0] - m) + (r[1] - m) * (r[1] - m)
        })
        .sum();
    if num == 0.0 {
        return FiveByTwo {
            p,
            f: None,
            degenerate: false,
            significant: false,
        };
    }
    if den == 0.0 {
        return FiveByTwo {
            p,
            f: Some(f64::INFINITY),
            degenerate: true,
            significant: true,
        };
    }
    let f = num / (2.0 * den);
    FiveByTwo {
        p,
        f: Some(f),
        degenerate: false,
        significant: f > F_CRITICAL_10_5,
    }
}

/// A feature matrix with its selection settings, as compared by the 5x2cv test.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub x: &'a Grid,
    pub selectable: &'a [bool],
    pub k: usize,
}

/// Five replications of stratified 2-fold CV; both candidates see the same
/// folds and the difference of their error rates is taken per fold.
pub fn five_by_two_cv(
    a: Candidate<'_>,
    b: Candidate<'_>,
    y: &[Label],
    c: f64,
    seed: u64,
) -> Result<FiveByTwo> {
    if a.x.rows() != b.x.rows() || a.x.rows() != y.len() {
        return Err(Error::LengthMismatch {
            what: "candidate rows vs labels",
            left: a.x.rows().max(b.x.rows()),
            right: y.len(),
        });
    }
    let mut p = [[0.0; 2]; 5];
    for (i, row) in p.iter_mut().enumerate() {
        let rep_seed = derive_seed(seed, i as u64);
        let folds = fold_indices(y.len(), 2, rep_seed, Some(y))?;
        let ea = evaluate_task(a.x, a.selectable, y, &folds, a.k, c, rep_seed)?;
        let eb = evaluate_task(b.x, b.selectable, y, &folds, b.k, c, rep_seed)?;
        for j in 0..2 {
            let n = ea[j].total() as f64;
            row[j] = (ea[j].errors() as f64 - eb[j].errors() as f64) / n;
        }
    }
    Ok(five_by_two_statistic(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Code;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn folds_partition_and_balance() {
        let plan = make_folds(&ids(10), 5, 7, None).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 2));
        assert_eq!(plan, make_folds(&ids(10), 5, 7, None).unwrap());
        let mut all: Vec<usize> = plan.indices.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(make_folds(&ids(3), 4, 0, None).is_err());
        assert!(make_folds(&ids(3), 1, 0, None).is_err());
    }

    #[test]
    fn stratified_six_four() {
        let y: Vec<Label> = (0..10)
            .map(|i| if i < 6 { Label::High } else { Label::Low })
            .collect();
        for seed in 0..20 {
            let folds = fold_indices(10, 2, seed, Some(&y)).unwrap();
            for f in &folds {
                assert_eq!(f.iter().filter(|&&i| y[i].is_high()).count(), 3);
                assert_eq!(f.len(), 5);
            }
        }
    }

    proptest! {
        #[test]
        fn stratified_ratios_within_one(n in 4usize..60, k in 2usize..6, seed in any::<u64>(), bits in any::<u64>()) {
            prop_assume!(k <= n);
            let y: Vec<Label> = (0..n).map(|i| if (bits >> (i % 64)) & 1 == 1 { Label::High } else { Label::Low }).collect();
            let folds = fold_indices(n, k, seed, Some(&y)).unwrap();
            let highs = y.iter().filter(|l| l.is_high()).count() as f64;
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in &folds {
                let h = f.iter().filter(|&&i| y[i].is_high()).count() as f64;
                prop_assert!((h - highs * f.len() as f64 / n as f64).abs() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn pooled_f1_bounded_and_equal_to_per_fold_when_ratios_match(
            tp in 0u64..20, fp in 0u64..20, fn_ in 0u64..20, m in 1u64..5, folds in 1usize..5,
        ) {
            let per: Vec<(u64, u64, u64)> = (0..folds).map(|_| (tp * m, fp * m, fn_ * m)).collect();
            let f = pooled_f1(&per);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!((f - f1_from_counts(tp, fp, fn_)).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_differs_from_average() {
        let folds = [(1, 0, 9), (9, 1, 1)];
        let pooled = pooled_f1(&folds);
        assert!((pooled - 20.0 / 31.0).abs() < 1e-12);
        let avg = (f1_from_counts(1, 0, 9) + f1_from_counts(9, 1, 1)) / 2.0;
        assert!((avg - 0.5409090909).abs() < 1e-9);
        assert_eq!(pooled_f1(&[(5, 0, 0)]), 1.0);
        assert_eq!(pooled_f1(&[(0, 3, 2), (0, 0, 0)]), 0.0);
    }

    #[test]
    fn five_by_two_examples() {
        let p = [[0.1, 0.2], [0.0, 0.1], [0.1, 0.1], [0.2, 0.0], [0.1, 0.0]];
        let r = five_by_two_statistic(p);
        assert!((r.f.unwrap() - 0.13 / 0.07).abs() < 1e-9);
        assert!(!r.significant);
        let neg = p.map(|r| r.map(|v| -v));
        assert_eq!(five_by_two_statistic(neg).f, r.f);
        assert!(five_by_two_statistic([[0.0; 2]; 5]).no_difference());
        let d = five_by_two_statistic([[0.1, 0.1]; 5]);
        assert!(d.degenerate && d.f == Some(f64::INFINITY));
    }

    fn planted(n: usize, seed: u64) -> (Grid, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<Label> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.4) {
                    Label::High
                } else {
                    Label::Low
                }
            })
            .collect();
        let mut x = Grid::zeros(n, 6);
        for i in 0..n {
            for j in 0..6 {
                x[(i, j)] = rng.gen_range(-1.0..1.0);
            }
            x[(i, 2)] = if y[i].is_high() { 1.0 } else { -1.0 } + 0.01 * x[(i, 2)];
        }
        (x, y)
    }

    #[test]
    fn planted_feature_gives_perfect_f1_for_every_task() {
        let (x, y) = planted(60, 2);
        let row_ids = ids(60);
        let labels: BTreeMap<String, CodeLabels> = row_ids
            .iter()
            .zip(&y)
            .map(|(id, &l)| {
                (
                    id.clone(),
                    CodeLabels {
                        codes: [l; 11],
                        total: l,
                    },
                )
            })
            .collect();
        let cfg = ProtocolConfig {
            folds: 5,
            k: 1,
            c: 1.0,
            seed: 9,
        };
        let report = run_protocol(&x, &[true; 6], &row_ids, &labels, &cfg, "planted").unwrap();
        for t in &report.tasks {
            assert_eq!(t.f1_high, 1.0, "{}", t.task);
            assert_eq!(pooled_f1_of(&t.folds), t.f1_high);
        }
        assert_eq!(report.avg_f1, 1.0);
        assert_eq!(report.task(Task::Code(Code::Ag)).unwrap().f1_low, 1.0);
        assert_eq!(
            report,
            run_protocol(&x, &[true; 6], &row_ids, &labels, &cfg, "planted").unwrap()
        );

        let mut partial = labels.clone();
        partial.remove("s003");
        assert!(matches!(
            run_protocol(&x, &[true; 6], &row_ids, &partial, &cfg, "planted"),
            Err(Error::MissingLabels(v)) if v == vec![String::from("s003")]
        ));
    }

    #[test]
    fn held_out_rows_never_reach_the_fit() {
        let (x, y) = planted(40, 5);
        let folds = fold_indices(40, 5, 1, Some(&y)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for f in 0..5 {
            let train = training_rows(&folds, f);
            let base = fit_fold(&x, &[true; 6], &y, &train, 3, 1.0, 4).unwrap();
            let mut poisoned = x.clone();
            let mut y_poisoned = y.clone();
            for &r in &folds[f] {
                for j in 0..6 {
                    poisoned[(r, j)] = rng.gen_range(-1e3..1e3);
                }
                y_poisoned[r] = if rng.gen_bool(0.5) {
                    Label::High
                } else {
                    Label::Low
                };
            }
            let again = fit_fold(&poisoned, &[true; 6], &y_poisoned, &train, 3, 1.0, 4).unwrap();
            assert_eq!(base, again);
        }
    }

    #[test]
    fn single_class_training_fold_predicts_constant() {
        let x = Grid::zeros(4, 1);
        let y = vec![Label::Low; 4];
        let m = fit_fold(&x, &[true], &y, &[0, 1, 2], 1, 1.0, 0).unwrap();
        assert_eq!(m, FoldModel::Constant(Label::Low));
    }

    #[test]
    fn identical_candidates_show_no_difference() {
        let (x, y) = planted(40, 8);
        let a = Candidate {
            x: &x,
            selectable: &[true; 6],
            k: 2,
        };
        let r = five_by_two_cv(a, a, &y, 1.0, 3).unwrap();
        assert!(r.no_difference() && !r.significant);
    }
}
