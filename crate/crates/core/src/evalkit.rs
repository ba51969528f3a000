//! Classification metrics, confusion matrices, stratified k-fold
//! cross-validation, grid search and train/test gap diagnostics.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::BloomLabel;
use crate::features::{smote_balance, FeatureError, FeatureVector, Origin, SmotePolicy, Vocabulary};
use crate::models::{ModelArtifact, ModelError, ModelSpec};
use crate::seed::{derive_seed, rng_from_seed};

const K: usize = BloomLabel::COUNT;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("y_true has {0} items but y_pred has {1}")]
    LengthMismatch(usize, usize),
    #[error("no items to evaluate")]
    EmptyInput,
    #[error("class {label} has {have} members, fewer than k = {k}")]
    DegenerateClass { label: BloomLabel, have: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("vector {0} carries no label")]
    UnlabeledVector(usize),
    #[error("grid cell {cell}, fold {fold}: {source}")]
    CellModel {
        cell: usize,
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error("grid cell {cell}, fold {fold}: {source}")]
    CellFeatures {
        cell: usize,
        fold: usize,
        #[source]
        source: FeatureError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rows are true labels, columns predicted labels, in canonical order.
/// Items without a prediction are counted per true label in `unassigned`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
    pub unassigned: [u64; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unassigned.iter().sum::<u64>()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, label: BloomLabel) -> u64 {
        let r = label.code();
        self.counts[r].iter().sum::<u64>() + self.unassigned[r]
    }

    /// CSV with a header of predicted labels; an `Unparsed` column is added
    /// only when some item has no prediction.
    pub fn to_csv(&self, row_prefix: Option<&str>) -> String {
        let mut out = String::new();
        self.write_csv(&mut out, row_prefix, true, self.has_unassigned());
        out
    }

    pub fn has_unassigned(&self) -> bool {
        self.unassigned.iter().any(|&u| u > 0)
    }

    fn write_csv(&self, out: &mut String, row_prefix: Option<&str>, header: bool, with_unassigned: bool) {
        if header {
            if row_prefix.is_some() {
                out.push_str("model,");
            }
            out.push_str("true\\pred");
            for l in BloomLabel::ALL {
                let _ = write!(out, ",{l}");
            }
            if with_unassigned {
                out.push_str(",Unparsed");
            }
            out.push('\n');
        }
        for l in BloomLabel::ALL {
            if let Some(p) = row_prefix {
                let _ = write!(out, "{p},");
            }
            out.push_str(l.name());
            for c in self.counts[l.code()] {
                let _ = write!(out, ",{c}");
            }
            if with_unassigned {
                let _ = write!(out, ",{}", self.unassigned[l.code()]);
            }
            out.push('\n');
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: BloomLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a zero denominator forced precision, recall or F1 to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Macro-averaged precision.
    pub precision: f64,
    /// Macro-averaged recall.
    pub recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: u64,
    /// Items with no prediction (counted as wrong).
    pub unassigned: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl MetricsReport {
    /// Derive every metric from a confusion matrix. Macro averages run over
    /// the labels that occur in the truth or in the predictions.
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let total = cm.total();
        let mut per_class = Vec::with_capacity(K);
        let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
        let (mut p_sum, mut r_sum, mut f_sum, mut present) = (0.0, 0.0, 0.0, 0usize);
        for l in BloomLabel::ALL {
            let c = l.code();
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..K).map(|r| cm.counts[r][c]).sum();
            let support = cm.support(l);
            let fp = predicted - tp;
            let fn_ = support - tp;
            tp_all += tp;
            fp_all += fp;
            fn_all += fn_;
            let (precision, zp) = ratio(tp, predicted);
            let (recall, zr) = ratio(tp, support);
            let (f1, zf) = ratio(2 * tp, 2 * tp + fp + fn_);
            if support > 0 || predicted > 0 {
                p_sum += precision;
                r_sum += recall;
                f_sum += f1;
                present += 1;
            }
            per_class.push(ClassMetrics {
                label: l,
                precision,
                recall,
                f1,
                support,
                zero_division: zp || zr || zf,
            });
        }
        let macro_avg = |s: f64| if present == 0 { 0.0 } else { s / present as f64 };
        MetricsReport {
            accuracy: ratio(cm.trace(), total).0,
            precision: macro_avg(p_sum),
            recall: macro_avg(r_sum),
            micro_f1: ratio(2 * tp_all, 2 * tp_all + fp_all + fn_all).0,
            macro_f1: macro_avg(f_sum),
            per_class,
            total,
            unassigned: cm.unassigned.iter().sum(),
        }
    }

    /// The five headline figures in table order.
    pub fn headline(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.micro_f1, self.macro_f1]
    }

    /// `| name | acc | prec | rec | f1-micro | f1-macro |`, two decimals.
    pub fn markdown_row(&self, name: &str) -> String {
        let mut row = format!("| {name} |");
        for v in self.headline() {
            let _ = write!(row, " {v:.2} |");
        }
        row
    }
}

/// Several named matrices in one CSV with a leading `model` column. The
/// `Unparsed` column appears on every row if any matrix needs it.
pub fn confusion_table_csv(rows: &[(&str, &ConfusionMatrix)]) -> String {
    let with_unassigned = rows.iter().any(|(_, cm)| cm.has_unassigned());
    let mut out = String::new();
    for (i, (name, cm)) in rows.iter().enumerate() {
        cm.write_csv(&mut out, Some(name), i == 0, with_unassigned);
    }
    out
}

/// Header and separator for tables of [`MetricsReport::markdown_row`] rows.
pub const MARKDOWN_HEADER: &str =
    "| Model | Accuracy | Precision | Recall | F1-micro | F1-macro |\n|---|---|---|---|---|---|\n";

/// Metrics for single-label predictions, one per item.
pub fn compute_metrics(
    y_true: &[BloomLabel],
    y_pred: &[BloomLabel],
) -> Result<(ConfusionMatrix, MetricsReport), EvalError> {
    let pred: Vec<Option<BloomLabel>> = y_pred.iter().copied().map(Some).collect();
    compute_metrics_partial(y_true, &pred)
}

/// Like [`compute_metrics`], but a `None` prediction counts as a miss for
/// its true class and as a prediction of no class.
pub fn compute_metrics_partial(
    y_true: &[BloomLabel],
    y_pred: &[Option<BloomLabel>],
) -> Result<(ConfusionMatrix, MetricsReport), EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        match p {
            Some(p) => cm.counts[t.code()][p.code()] += 1,
            None => cm.unassigned[t.code()] += 1,
        }
    }
    let report = MetricsReport::from_confusion(&cm);
    Ok((cm, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fit: Vec<usize>,
    pub val: Vec<usize>,
}

/// Per-class shuffled round-robin assignment of indices to `k` folds.
pub fn stratified_kfold(labels: &[BloomLabel], k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidK(k));
    }
    let mut by_class: [Vec<usize>; K] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.code()].push(i);
    }
    for l in BloomLabel::ALL {
        let have = by_class[l.code()].len();
        if have > 0 && have < k {
            return Err(EvalError::DegenerateClass { label: l, have, k });
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (val, fit): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { fit, val }
        })
        .collect())
}

/// Folds over training vectors that may include augmented copies: only
/// non-augmented vectors are assigned to folds, and an augmented copy joins
/// the fit side of every fold whose validation side does not hold its source.
pub fn cv_partitions(train: &[FeatureVector], k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    let mut primary = Vec::new();
    let mut derived = Vec::new();
    for (i, v) in train.iter().enumerate() {
        v.label.ok_or(EvalError::UnlabeledVector(i))?;
        match v.origin {
            Origin::Augmented { source } => derived.push((i, source)),
            _ => primary.push(i),
        }
    }
    let labels: Vec<BloomLabel> = primary.iter().map(|&i| train[i].label.expect("checked")).collect();
    let folds = stratified_kfold(&labels, k, seed)?;
    Ok(folds
        .into_iter()
        .map(|f| {
            let val: Vec<usize> = f.val.iter().map(|&p| primary[p]).collect();
            let val_ids: HashSet<u32> = val.iter().filter_map(|&i| train[i].origin.source_item()).collect();
            let mut fit: Vec<usize> = f.fit.iter().map(|&p| primary[p]).collect();
            fit.extend(derived.iter().filter(|(_, s)| !val_ids.contains(s)).map(|(i, _)| *i));
            fit.sort_unstable();
            Fold { fit, val }
        })
        .collect())
}

/// Corpus ids behind a fit set, following SMOTE parents back into `base`.
pub fn provenance_ids(fit: &[FeatureVector], base: &[FeatureVector]) -> HashSet<u32> {
    let mut ids = HashSet::new();
    for v in fit {
        match v.origin {
            Origin::Synthetic { base: a, neighbor: b } => {
                for p in [a, b] {
                    if let Some(id) = base.get(p as usize).and_then(|v| v.origin.source_item()) {
                        ids.insert(id);
                    }
                }
            }
            o => {
                if let Some(id) = o.source_item() {
                    ids.insert(id);
                }
            }
        }
    }
    ids
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Accuracy,
    MicroF1,
    #[default]
    MacroF1,
}

impl SelectionMetric {
    pub fn score(self, report: &MetricsReport) -> f64 {
        match self {
            SelectionMetric::Accuracy => report.accuracy,
            SelectionMetric::MicroF1 => report.micro_f1,
            SelectionMetric::MacroF1 => report.macro_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    /// Oversampling applied to each fold's fit part.
    pub smote: Option<SmotePolicy>,
    pub metric: SelectionMetric,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            seed: 0,
            smote: Some(SmotePolicy::default()),
            metric: SelectionMetric::MacroF1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub spec: ModelSpec,
    pub hyperparams: std::collections::BTreeMap<String, f64>,
    pub mean_score: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
    pub winner: usize,
    pub selection_metric: SelectionMetric,
}

impl GridResult {
    pub fn winner_spec(&self) -> &ModelSpec {
        &self.cells[self.winner].spec
    }
}

fn cmp_tuple(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Index of the best cell: highest mean score, ties to the smallest
/// hyperparameter tuple.
pub fn select_winner(cells: &[CellResult]) -> usize {
    let mut best = 0;
    for (i, c) in cells.iter().enumerate().skip(1) {
        let b = &cells[best];
        let better = match c.mean_score.total_cmp(&b.mean_score) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => cmp_tuple(&c.spec.tuple(), &b.spec.tuple()) == Ordering::Less,
        };
        if better {
            best = i;
        }
    }
    best
}

/// Score one model specification on one fold.
fn run_fold(
    spec: &ModelSpec,
    train: &[FeatureVector],
    vocab: &Vocabulary,
    fold: &Fold,
    fold_idx: usize,
    cell_idx: usize,
    cfg: &CvConfig,
) -> Result<f64, EvalError> {
    let fit_input: Vec<FeatureVector> = fold.fit.iter().map(|&i| train[i].clone()).collect();
    let fit = match &cfg.smote {
        Some(policy) => {
            let policy = SmotePolicy {
                seed: derive_seed(cfg.seed, &format!("smote/fold{fold_idx}")),
                ..*policy
            };
            smote_balance(&fit_input, &policy).map_err(|source| EvalError::CellFeatures {
                cell: cell_idx,
                fold: fold_idx,
                source,
            })?
        }
        None => fit_input.clone(),
    };
    if cfg!(debug_assertions) {
        let val_ids: HashSet<u32> = fold.val.iter().filter_map(|&i| train[i].origin.source_item()).collect();
        let fit_ids = provenance_ids(&fit, &fit_input);
        assert!(
            fit_ids.is_disjoint(&val_ids),
            "validation items leaked into the fit part of fold {fold_idx}"
        );
    }
    let model_seed = derive_seed(cfg.seed, &format!("model/cell{cell_idx}/fold{fold_idx}"));
    let model = spec
        .fit(&fit, vocab, model_seed)
        .map_err(|source| EvalError::CellModel {
            cell: cell_idx,
            fold: fold_idx,
            source,
        })?;
    let val: Vec<&FeatureVector> = fold.val.iter().map(|&i| &train[i]).collect();
    let y_true: Vec<BloomLabel> = val.iter().map(|v| v.label.expect("labelled")).collect();
    let y_pred = val
        .iter()
        .map(|v| model.predict(v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| EvalError::CellModel {
            cell: cell_idx,
            fold: fold_idx,
            source,
        })?;
    let (_, report) = compute_metrics(&y_true, &y_pred)?;
    Ok(cfg.metric.score(&report))
}

/// k-fold cross-validated score for every grid cell. Cells and folds run in
/// parallel; results are assembled in (cell, fold) order.
pub fn grid_search(
    train: &[FeatureVector],
    vocab: &Vocabulary,
    grid: &[ModelSpec],
    cfg: &CvConfig,
) -> Result<GridResult, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let folds = cv_partitions(train, cfg.k, cfg.seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| run_fold(&grid[c], train, vocab, &folds[f], f, c, cfg))
        .collect::<Result<_, _>>()?;
    let cells: Vec<CellResult> = grid
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let fold_scores = scores[c * folds.len()..(c + 1) * folds.len()].to_vec();
            let mean_score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            CellResult {
                spec: *spec,
                hyperparams: spec.hyperparams(),
                mean_score,
                fold_scores,
            }
        })
        .collect();
    let winner = select_winner(&cells);
    Ok(GridResult {
        cells,
        winner,
        selection_metric: cfg.metric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// `train_accuracy - test_accuracy`.
    pub gap: f64,
}

pub fn accuracy_of(model: &ModelArtifact, data: &[FeatureVector]) -> Result<f64, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut hits = 0usize;
    for (i, v) in data.iter().enumerate() {
        let want = v.label.ok_or(EvalError::UnlabeledVector(i))?;
        if model.predict(v)? == want {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

pub fn fit_diagnostics(
    model: &ModelArtifact,
    train: &[FeatureVector],
    test: &[FeatureVector],
) -> Result<FitDiagnostics, EvalError> {
    let train_accuracy = accuracy_of(model, train)?;
    let test_accuracy = accuracy_of(model, test)?;
    Ok(FitDiagnostics {
        train_accuracy,
        test_accuracy,
        gap: train_accuracy - test_accuracy,
    })
}

/// Count of items per label, canonical order.
pub fn label_counts(labels: impl IntoIterator<Item = BloomLabel>) -> [usize; K] {
    let mut out = [0; K];
    for l in labels {
        out[l.code()] += 1;
    }
    out
}

/// Map from item id to fold index for the validation sides of `folds`.
pub fn validation_owner(train: &[FeatureVector], folds: &[Fold]) -> HashMap<u32, usize> {
    let mut out = HashMap::new();
    for (f, fold) in folds.iter().enumerate() {
        for &i in &fold.val {
            if let Some(id) = train[i].origin.source_item() {
                out.insert(id, f);
            }
        }
    }
    out
}
