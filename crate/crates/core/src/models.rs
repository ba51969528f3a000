//! The three linear classifiers: multinomial Naive Bayes, softmax logistic
//! regression trained by full-batch gradient descent, and a one-vs-rest
//! linear SVM trained with Pegasos stochastic subgradient steps.
//!
//! Parameters are stored class-major: row `c` of a weight matrix is
//! `weights[c * dim..(c + 1) * dim]`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::BloomLabel;
use crate::features::{FeatureVector, Vocabulary, VocabularySpec};
use crate::seed::{derive_seed, rng_from_seed};

const K: usize = BloomLabel::COUNT;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training set has no example of class {0}")]
    MissingClass(BloomLabel),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("training vector {0} carries no label")]
    UnlabeledVector(usize),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("vector fingerprint {got:016x} does not match model vocabulary {want:016x}")]
    FingerprintMismatch { want: u64, got: u64 },
    #[error("artifact i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or corrupt model artifact (expected schema version {expected}): {detail}")]
    Schema { expected: u32, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "NB")]
    NaiveBayes,
    #[serde(rename = "LR")]
    LogisticRegression,
    #[serde(rename = "SVM")]
    LinearSvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::NaiveBayes,
        ModelKind::LogisticRegression,
        ModelKind::LinearSvm,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "NB",
            ModelKind::LogisticRegression => "LR",
            ModelKind::LinearSvm => "SVM",
        }
    }

    /// Row title used in report tables for the baseline configuration.
    pub fn long_name(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "Naïve Bayes (NB)",
            ModelKind::LogisticRegression => "Logistic Regression (LR)",
            ModelKind::LinearSvm => "Support Vector Machine (SVM)",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.short_name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

fn labels_of(train: &[FeatureVector]) -> Result<Vec<usize>, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    train
        .iter()
        .enumerate()
        .map(|(i, v)| v.label.map(BloomLabel::code).ok_or(ModelError::UnlabeledVector(i)))
        .collect()
}

/// Index of the largest score; ties go to the lowest class code.
pub fn argmax(scores: &[f64; K]) -> BloomLabel {
    let mut best = 0;
    for c in 1..K {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    BloomLabel::ALL[best]
}

// ---------------------------------------------------------------- Naive Bayes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesParams {
    pub dim: usize,
    pub alpha: f64,
    pub log_prior: [f64; K],
    /// `K x dim`, log P(feature | class).
    pub log_likelihood: Vec<f64>,
}

/// Multinomial Naive Bayes with additive (Laplace) smoothing `alpha`.
pub fn nb_train(train: &[FeatureVector], dim: usize, alpha: f64) -> Result<NaiveBayesParams, ModelError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ModelError::InvalidHyperparameter(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    let labels = labels_of(train)?;
    let mut class_n = [0usize; K];
    let mut counts = vec![0.0; K * dim];
    for (v, &c) in train.iter().zip(&labels) {
        class_n[c] += 1;
        for (i, x) in v.iter() {
            counts[c * dim + i] += x;
        }
    }
    if let Some(c) = (0..K).find(|&c| class_n[c] == 0) {
        return Err(ModelError::MissingClass(BloomLabel::ALL[c]));
    }
    let n = train.len() as f64;
    let log_prior = std::array::from_fn(|c| (class_n[c] as f64 / n).ln());
    let mut log_likelihood = vec![0.0; K * dim];
    for c in 0..K {
        let row = &counts[c * dim..(c + 1) * dim];
        let denom = (row.iter().sum::<f64>() + alpha * dim as f64).ln();
        for (f, &x) in row.iter().enumerate() {
            log_likelihood[c * dim + f] = (x + alpha).ln() - denom;
        }
    }
    Ok(NaiveBayesParams {
        dim,
        alpha,
        log_prior,
        log_likelihood,
    })
}

impl NaiveBayesParams {
    /// Unnormalized log joint `log P(c) + sum_f x_f log P(f|c)`.
    pub fn log_joint(&self, x: &FeatureVector) -> [f64; K] {
        std::array::from_fn(|c| {
            let row = &self.log_likelihood[c * self.dim..(c + 1) * self.dim];
            self.log_prior[c] + x.iter().map(|(i, v)| v * row[i]).sum::<f64>()
        })
    }

    /// Log posterior over classes.
    pub fn log_posterior(&self, x: &FeatureVector) -> [f64; K] {
        let joint = self.log_joint(x);
        let lse = log_sum_exp(&joint);
        joint.map(|j| j - lse)
    }
}

fn log_sum_exp(v: &[f64; K]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// --------------------------------------------------------- Logistic regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    /// Nominal step size at epoch 0.
    pub learning_rate: f64,
    /// Nominal step at epoch t is `learning_rate / (1 + decay * t)`.
    pub decay: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 0.01,
            epochs: 300,
            learning_rate: 1.0,
            decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegParams {
    pub dim: usize,
    pub config: LogRegConfig,
    /// `K x dim`.
    pub weights: Vec<f64>,
    pub bias: [f64; K],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub params: LogRegParams,
    /// Objective after each accepted step (first entry: the initial point).
    pub loss_trace: Vec<f64>,
}

/// Softmax of a score vector.
pub fn softmax(z: &[f64; K]) -> [f64; K] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Objective value and gradient
/// `mean_i CE(softmax(W x_i + b), y_i) + (l2 / 2) ||W||^2`.
///
/// Returns `(loss, grad_w, grad_b)`; `grad_w` has the layout of `weights`.
pub fn lr_objective(
    weights: &[f64],
    bias: &[f64; K],
    train: &[FeatureVector],
    labels: &[usize],
    dim: usize,
    l2: f64,
) -> (f64, Vec<f64>, [f64; K]) {
    let n = train.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; K * dim];
    let mut gb = [0.0; K];
    for (x, &y) in train.iter().zip(labels) {
        let z: [f64; K] = std::array::from_fn(|c| bias[c] + x.dot(&weights[c * dim..(c + 1) * dim]));
        let lse = log_sum_exp(&z);
        loss += lse - z[y];
        for c in 0..K {
            let p = (z[c] - lse).exp();
            let r = p - if c == y { 1.0 } else { 0.0 };
            gb[c] += r;
            let row = &mut gw[c * dim..(c + 1) * dim];
            for (i, v) in x.iter() {
                row[i] += r * v;
            }
        }
    }
    loss /= n;
    gb.iter_mut().for_each(|g| *g /= n);
    let mut reg = 0.0;
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
        reg += w * w;
    }
    (loss + 0.5 * l2 * reg, gw, gb)
}

const MAX_HALVINGS: usize = 60;
const MONOTONE_TOL: f64 = 1e-8;

/// Full-batch gradient descent on [`lr_objective`]. A step that would raise
/// the objective by more than 1e-8 is halved until it does not.
///
/// Weights start at zero and biases at the log class frequencies.
pub fn lr_train(train: &[FeatureVector], dim: usize, cfg: &LogRegConfig) -> Result<LogRegFit, ModelError> {
    if !(cfg.l2 >= 0.0 && cfg.l2.is_finite()) {
        return Err(ModelError::InvalidHyperparameter(format!(
            "l2 must be >= 0, got {}",
            cfg.l2
        )));
    }
    if cfg.epochs == 0 {
        return Err(ModelError::InvalidHyperparameter("epochs must be >= 1".into()));
    }
    if !(cfg.learning_rate > 0.0) || cfg.decay < 0.0 {
        return Err(ModelError::InvalidHyperparameter(
            "learning rate must be > 0 and decay >= 0".into(),
        ));
    }
    let labels = labels_of(train)?;
    let mut freq = [0.0f64; K];
    for &y in &labels {
        freq[y] += 1.0;
    }
    let n = labels.len() as f64;
    let mut bias: [f64; K] = freq.map(|f| ((f + 1.0) / (n + K as f64)).ln());
    let mut weights = vec![0.0; K * dim];

    let (mut loss, mut gw, mut gb) = lr_objective(&weights, &bias, train, &labels, dim, cfg.l2);
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss(0));
    }
    let mut trace = vec![loss];
    for epoch in 0..cfg.epochs {
        let mut step = cfg.learning_rate / (1.0 + cfg.decay * epoch as f64);
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand_w: Vec<f64> = weights.iter().zip(&gw).map(|(w, g)| w - step * g).collect();
            let cand_b: [f64; K] = std::array::from_fn(|c| bias[c] - step * gb[c]);
            let (cl, cgw, cgb) = lr_objective(&cand_w, &cand_b, train, &labels, dim, cfg.l2);
            if cl.is_finite() && cl <= loss + MONOTONE_TOL {
                weights = cand_w;
                bias = cand_b;
                loss = cl;
                gw = cgw;
                gb = cgb;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss(epoch));
            }
            // No descent step exists at float precision: converged.
            break;
        }
        trace.push(loss);
    }
    if weights.iter().chain(bias.iter()).any(|w| !w.is_finite()) {
        return Err(ModelError::NonFiniteLoss(cfg.epochs));
    }
    Ok(LogRegFit {
        params: LogRegParams {
            dim,
            config: *cfg,
            weights,
            bias,
        },
        loss_trace: trace,
    })
}

impl LogRegParams {
    pub fn logits(&self, x: &FeatureVector) -> [f64; K] {
        std::array::from_fn(|c| self.bias[c] + x.dot(&self.weights[c * self.dim..(c + 1) * self.dim]))
    }

    pub fn probabilities(&self, x: &FeatureVector) -> [f64; K] {
        softmax(&self.logits(x))
    }
}

// ----------------------------------------------------------------- Linear SVM

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            epochs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmParams {
    pub dim: usize,
    pub config: SvmConfig,
    pub seed: u64,
    /// `K x dim`, one one-vs-rest head per class.
    pub weights: Vec<f64>,
    pub bias: [f64; K],
}

/// Reported after every projection step of a Pegasos head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionEvent {
    pub class: BloomLabel,
    pub step: usize,
    /// Norm of the full head (weights and bias) after projection.
    pub norm: f64,
}

/// One-vs-rest Pegasos. Heads run in parallel, each on its own stream
/// derived from `seed`.
pub fn svm_train(
    train: &[FeatureVector],
    dim: usize,
    cfg: &SvmConfig,
    seed: u64,
) -> Result<LinearSvmParams, ModelError> {
    validate_svm(cfg)?;
    let labels = labels_of(train)?;
    let heads: Vec<(Vec<f64>, f64)> = (0..K)
        .into_par_iter()
        .map(|c| pegasos_head(train, &labels, dim, cfg, c, seed, None))
        .collect();
    Ok(assemble_svm(heads, dim, cfg, seed))
}

/// Sequential variant of [`svm_train`] that reports every projection step.
/// Produces parameters identical to [`svm_train`].
pub fn svm_train_observed(
    train: &[FeatureVector],
    dim: usize,
    cfg: &SvmConfig,
    seed: u64,
    observer: &mut dyn FnMut(ProjectionEvent),
) -> Result<LinearSvmParams, ModelError> {
    validate_svm(cfg)?;
    let labels = labels_of(train)?;
    let heads = (0..K)
        .map(|c| pegasos_head(train, &labels, dim, cfg, c, seed, Some(&mut *observer)))
        .collect();
    Ok(assemble_svm(heads, dim, cfg, seed))
}

fn validate_svm(cfg: &SvmConfig) -> Result<(), ModelError> {
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(ModelError::InvalidHyperparameter(format!(
            "lambda must be > 0, got {}",
            cfg.lambda
        )));
    }
    if cfg.epochs == 0 {
        return Err(ModelError::InvalidHyperparameter("epochs must be >= 1".into()));
    }
    Ok(())
}

fn assemble_svm(heads: Vec<(Vec<f64>, f64)>, dim: usize, cfg: &SvmConfig, seed: u64) -> LinearSvmParams {
    let mut weights = Vec::with_capacity(K * dim);
    let mut bias = [0.0; K];
    for (c, (w, b)) in heads.into_iter().enumerate() {
        weights.extend(w);
        bias[c] = b;
    }
    LinearSvmParams {
        dim,
        config: *cfg,
        seed,
        weights,
        bias,
    }
}

/// One binary Pegasos run for `class` vs the rest. The bias is learned as the
/// weight of a constant feature of value 1, so it is regularized and
/// projected with the rest of the head.
///
/// The head is kept as `scale * v` so the shrink step is O(1).
fn pegasos_head(
    train: &[FeatureVector],
    labels: &[usize],
    dim: usize,
    cfg: &SvmConfig,
    class: usize,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(ProjectionEvent)>,
) -> (Vec<f64>, f64) {
    let lambda = cfg.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut rng = rng_from_seed(derive_seed(seed, &format!("svm-head/{class}")));
    let mut v = vec![0.0; dim + 1];
    let mut scale = 1.0;
    let mut v_sq = 0.0;
    let x_sq: Vec<f64> = train
        .iter()
        .map(|x| x.values.iter().map(|a| a * a).sum::<f64>() + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &train[i];
            let y = if labels[i] == class { 1.0 } else { -1.0 };
            let vx = x.dot(&v[..dim]) + v[dim];
            let margin = y * scale * vx;

            // w <- (1 - 1/t) w
            if t == 1 {
                v.iter_mut().for_each(|a| *a = 0.0);
                scale = 1.0;
                v_sq = 0.0;
            } else {
                scale *= 1.0 - 1.0 / t as f64;
            }
            if margin < 1.0 {
                // w <- w + eta y x, i.e. v <- v + (eta y / scale) x
                let a = eta * y / scale;
                let vx_now = if t == 1 { 0.0 } else { vx };
                for (j, val) in x.iter() {
                    v[j] += a * val;
                }
                v[dim] += a;
                v_sq += 2.0 * a * vx_now + a * a * x_sq[i];
            }
            let norm = scale * v_sq.max(0.0).sqrt();
            if norm > radius {
                scale *= radius / norm;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|a| *a *= scale);
                v_sq = v.iter().map(|a| a * a).sum();
                scale = 1.0;
            }
            if let Some(obs) = observer.as_mut() {
                obs(ProjectionEvent {
                    class: BloomLabel::ALL[class],
                    step: t,
                    norm: scale * v.iter().map(|a| a * a).sum::<f64>().sqrt(),
                });
            }
        }
        // Drop accumulated rounding in the incremental norm.
        v_sq = v.iter().map(|a| a * a).sum();
    }
    let w: Vec<f64> = v[..dim].iter().map(|a| a * scale).collect();
    (w, v[dim] * scale)
}

impl LinearSvmParams {
    pub fn margins(&self, x: &FeatureVector) -> [f64; K] {
        std::array::from_fn(|c| self.bias[c] + x.dot(&self.weights[c * self.dim..(c + 1) * self.dim]))
    }

    pub fn head_norm(&self, class: BloomLabel) -> f64 {
        let c = class.code();
        let w = &self.weights[c * self.dim..(c + 1) * self.dim];
        (w.iter().map(|a| a * a).sum::<f64>() + self.bias[c] * self.bias[c]).sqrt()
    }
}

// ------------------------------------------------------------------ Artifacts

/// A model specification: kind plus hyperparameters. One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ModelSpec {
    #[serde(rename = "NB")]
    NaiveBayes { alpha: f64 },
    #[serde(rename = "LR")]
    LogisticRegression(LogRegConfig),
    #[serde(rename = "SVM")]
    LinearSvm(SvmConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::NaiveBayes { .. } => ModelKind::NaiveBayes,
            ModelSpec::LogisticRegression(_) => ModelKind::LogisticRegression,
            ModelSpec::LinearSvm(_) => ModelKind::LinearSvm,
        }
    }

    /// Hyperparameters by name, sorted by name.
    pub fn hyperparams(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match self {
            ModelSpec::NaiveBayes { alpha } => vec![("alpha", *alpha)],
            ModelSpec::LogisticRegression(c) => vec![
                ("decay", c.decay),
                ("epochs", c.epochs as f64),
                ("l2", c.l2),
                ("learning_rate", c.learning_rate),
            ],
            ModelSpec::LinearSvm(c) => vec![("epochs", c.epochs as f64), ("lambda", c.lambda)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Hyperparameter values in name order; grid ties resolve to the
    /// lexicographically smallest tuple.
    pub fn tuple(&self) -> Vec<f64> {
        self.hyperparams().into_values().collect()
    }

    /// Train on labelled vectors from `vocab`.
    pub fn fit(&self, train: &[FeatureVector], vocab: &Vocabulary, seed: u64) -> Result<ModelArtifact, ModelError> {
        let want = vocab.fingerprint();
        if let Some(v) = train.iter().find(|v| v.fingerprint != want) {
            return Err(ModelError::FingerprintMismatch {
                want,
                got: v.fingerprint,
            });
        }
        let dim = vocab.dim();
        let params = match self {
            ModelSpec::NaiveBayes { alpha } => ModelParams::NaiveBayes(nb_train(train, dim, *alpha)?),
            ModelSpec::LogisticRegression(cfg) => ModelParams::LogisticRegression(lr_train(train, dim, cfg)?.params),
            ModelSpec::LinearSvm(cfg) => ModelParams::LinearSvm(svm_train(train, dim, cfg, seed)?),
        };
        Ok(ModelArtifact {
            kind: self.kind(),
            params,
            vocab_fingerprint: want,
            vocabulary: vocab.spec(),
            label_order: BloomLabel::ALL.to_vec(),
            hyperparams: self.hyperparams(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    NaiveBayes(NaiveBayesParams),
    LogisticRegression(LogRegParams),
    LinearSvm(LinearSvmParams),
}

/// A trained model with everything needed to score vectors from the same
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    pub params: ModelParams,
    pub vocab_fingerprint: u64,
    pub vocabulary: VocabularySpec,
    pub label_order: Vec<BloomLabel>,
    pub hyperparams: BTreeMap<String, f64>,
}

impl ModelArtifact {
    fn check(&self, x: &FeatureVector) -> Result<(), ModelError> {
        if x.fingerprint != self.vocab_fingerprint {
            return Err(ModelError::FingerprintMismatch {
                want: self.vocab_fingerprint,
                got: x.fingerprint,
            });
        }
        Ok(())
    }

    /// NB: log posterior; LR: softmax probabilities; SVM: margins.
    pub fn predict_scores(&self, x: &FeatureVector) -> Result<[f64; K], ModelError> {
        self.check(x)?;
        Ok(match &self.params {
            ModelParams::NaiveBayes(p) => p.log_posterior(x),
            ModelParams::LogisticRegression(p) => p.probabilities(x),
            ModelParams::LinearSvm(p) => p.margins(x),
        })
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<BloomLabel, ModelError> {
        Ok(argmax(&self.predict_scores(x)?))
    }

    pub fn predict_all(&self, xs: &[FeatureVector]) -> Result<Vec<BloomLabel>, ModelError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn dim(&self) -> usize {
        match &self.params {
            ModelParams::NaiveBayes(p) => p.dim,
            ModelParams::LogisticRegression(p) => p.dim,
            ModelParams::LinearSvm(p) => p.dim,
        }
    }

    /// Per-class feature weights used for ranking features: NB log
    /// likelihoods, LR/SVM weights.
    pub fn class_weights(&self, class: BloomLabel) -> &[f64] {
        let (w, dim) = match &self.params {
            ModelParams::NaiveBayes(p) => (&p.log_likelihood, p.dim),
            ModelParams::LogisticRegression(p) => (&p.weights, p.dim),
            ModelParams::LinearSvm(p) => (&p.weights, p.dim),
        };
        let c = class.code();
        &w[c * dim..(c + 1) * dim]
    }

    /// The `n` columns with the largest weight for `class`, ties by column.
    pub fn top_features(&self, class: BloomLabel, n: usize) -> Vec<(String, f64)> {
        let w = self.class_weights(class);
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        let names = VocabularyNames(&self.vocabulary);
        idx.into_iter().take(n).map(|i| (names.name(i), w[i])).collect()
    }

    fn blocks(&self) -> Vec<(&'static str, Vec<f64>)> {
        match &self.params {
            ModelParams::NaiveBayes(p) => vec![
                ("log_prior", p.log_prior.to_vec()),
                ("log_likelihood", p.log_likelihood.clone()),
            ],
            ModelParams::LogisticRegression(p) => vec![("weights", p.weights.clone()), ("bias", p.bias.to_vec())],
            ModelParams::LinearSvm(p) => vec![("weights", p.weights.clone()), ("bias", p.bias.to_vec())],
        }
    }

    /// Write `<stem>.json` (metadata) and `<stem>.bin` (little-endian f64).
    /// Returns the two paths.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), ModelError> {
        let json_path = dir.join(format!("{stem}.json"));
        let bin_path = dir.join(format!("{stem}.bin"));
        let (meta, bin) = self.to_parts(&format!("{stem}.bin"));
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ModelError::Io { path, source }
        };
        fs::write(&bin_path, bin).map_err(io(&bin_path))?;
        let json = serde_json::to_string_pretty(&meta).expect("artifact metadata serializes");
        fs::write(&json_path, json + "\n").map_err(io(&json_path))?;
        Ok((json_path, bin_path))
    }

    /// Load from the metadata file; the binary is resolved next to it.
    pub fn load(json_path: &Path) -> Result<Self, ModelError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ModelError::Io { path, source }
        };
        let text = fs::read_to_string(json_path).map_err(io(json_path))?;
        let meta = parse_meta(&text)?;
        let bin_path = json_path.parent().unwrap_or(Path::new(".")).join(&meta.weights_file);
        let bin = fs::read(&bin_path).map_err(io(&bin_path))?;
        Self::from_parts(meta, &bin)
    }

    pub fn to_parts(&self, weights_file: &str) -> (ArtifactMeta, Vec<u8>) {
        let mut bin = Vec::new();
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (name, values) in self.blocks() {
            for v in &values {
                bin.extend_from_slice(&v.to_le_bytes());
            }
            blocks.push(BlockMeta {
                name: name.to_string(),
                offset,
                len: values.len(),
            });
            offset += values.len();
        }
        let (seed, config) = match &self.params {
            ModelParams::NaiveBayes(_) => (None, None),
            ModelParams::LogisticRegression(p) => (None, Some(ModelSpec::LogisticRegression(p.config))),
            ModelParams::LinearSvm(p) => (Some(p.seed), Some(ModelSpec::LinearSvm(p.config))),
        };
        let config = match (&self.params, config) {
            (ModelParams::NaiveBayes(p), _) => ModelSpec::NaiveBayes { alpha: p.alpha },
            (_, Some(c)) => c,
            _ => unreachable!(),
        };
        let meta = ArtifactMeta {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            kind: self.kind,
            dim: self.dim(),
            vocab_fingerprint: format!("{:016x}", self.vocab_fingerprint),
            label_order: self.label_order.clone(),
            hyperparams: self.hyperparams.clone(),
            config,
            seed,
            vocabulary: self.vocabulary.clone(),
            weights_file: weights_file.to_string(),
            blocks,
        };
        (meta, bin)
    }

    pub fn from_parts(meta: ArtifactMeta, bin: &[u8]) -> Result<Self, ModelError> {
        let schema = |detail: String| ModelError::Schema {
            expected: ARTIFACT_SCHEMA_VERSION,
            detail,
        };
        if bin.len() % 8 != 0 {
            return Err(schema(format!(
                "weights file length {} is not a multiple of 8",
                bin.len()
            )));
        }
        let floats: Vec<f64> = bin
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let block = |name: &str, want: usize| -> Result<Vec<f64>, ModelError> {
            let b = meta
                .blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| schema(format!("missing block `{name}`")))?;
            if b.len != want || b.offset + b.len > floats.len() {
                return Err(schema(format!("block `{name}` has bad extent")));
            }
            Ok(floats[b.offset..b.offset + b.len].to_vec())
        };
        let fixed = |v: Vec<f64>| -> [f64; K] { v.try_into().expect("length checked") };
        let dim = meta.dim;
        let params = match (meta.kind, meta.config) {
            (ModelKind::NaiveBayes, ModelSpec::NaiveBayes { alpha }) => ModelParams::NaiveBayes(NaiveBayesParams {
                dim,
                alpha,
                log_prior: fixed(block("log_prior", K)?),
                log_likelihood: block("log_likelihood", K * dim)?,
            }),
            (ModelKind::LogisticRegression, ModelSpec::LogisticRegression(config)) => {
                ModelParams::LogisticRegression(LogRegParams {
                    dim,
                    config,
                    weights: block("weights", K * dim)?,
                    bias: fixed(block("bias", K)?),
                })
            }
            (ModelKind::LinearSvm, ModelSpec::LinearSvm(config)) => ModelParams::LinearSvm(LinearSvmParams {
                dim,
                config,
                seed: meta.seed.unwrap_or(0),
                weights: block("weights", K * dim)?,
                bias: fixed(block("bias", K)?),
            }),
            (kind, _) => return Err(schema(format!("config does not match model kind {kind}"))),
        };
        let vocab_fingerprint = u64::from_str_radix(&meta.vocab_fingerprint, 16)
            .map_err(|_| schema(format!("bad fingerprint `{}`", meta.vocab_fingerprint)))?;
        if meta.label_order != BloomLabel::ALL {
            return Err(schema("label order differs from the canonical order".into()));
        }
        Ok(ModelArtifact {
            kind: meta.kind,
            params,
            vocab_fingerprint,
            vocabulary: meta.vocabulary,
            label_order: meta.label_order,
            hyperparams: meta.hyperparams,
        })
    }
}

struct VocabularyNames<'a>(&'a VocabularySpec);

impl VocabularyNames<'_> {
    fn name(&self, col: usize) -> String {
        let tokens = &self.0.tokens;
        if col < tokens.len() {
            tokens[col].clone()
        } else {
            format!("POS:{}", crate::textprep::PosTag::ALL[col - tokens.len()])
        }
    }
}

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// JSON side of a saved artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub dim: usize,
    pub vocab_fingerprint: String,
    pub label_order: Vec<BloomLabel>,
    pub hyperparams: BTreeMap<String, f64>,
    pub config: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub vocabulary: VocabularySpec,
    pub weights_file: String,
    pub blocks: Vec<BlockMeta>,
}

/// Parse artifact metadata, checking the schema version before anything else.
pub fn parse_meta(text: &str) -> Result<ArtifactMeta, ModelError> {
    let schema = |detail: String| ModelError::Schema {
        expected: ARTIFACT_SCHEMA_VERSION,
        detail,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| schema(format!("not JSON: {e}")))?;
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(ARTIFACT_SCHEMA_VERSION) => {}
        Some(v) => return Err(schema(format!("found schema version {v}"))),
        None => return Err(schema("no schema_version field".into())),
    }
    serde_json::from_value(value).map_err(|e| schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;

    fn vec_of(values: &[f64], label: BloomLabel) -> FeatureVector {
        FeatureVector::from_pairs(values.iter().enumerate().map(|(i, v)| (i as u32, *v)), 0).with_label(label)
    }

    /// One sample per class, each with a private feature.
    fn one_hot_set() -> Vec<FeatureVector> {
        BloomLabel::ALL
            .into_iter()
            .map(|l| {
                let mut v = [0.0; K];
                v[l.code()] = 3.0;
                vec_of(&v, l)
            })
            .collect()
    }

    #[test]
    fn nb_self_consistent_on_singletons() {
        let train = one_hot_set();
        let p = nb_train(&train, K, 1.0).unwrap();
        for x in &train {
            assert_eq!(argmax(&p.log_joint(x)), x.label.unwrap());
        }
        let prior_sum: f64 = p.log_prior.iter().map(|l| l.exp()).sum();
        assert!((prior_sum - 1.0).abs() < 1e-9);
        for c in 0..K {
            let row: f64 = p.log_likelihood[c * K..(c + 1) * K].iter().map(|l| l.exp()).sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nb_laplace_by_hand() {
        // Class Knowledge has counts (u:3, v:1); alpha = 1 -> P(u|K) = 4/6.
        let mut train = vec![vec_of(&[3.0, 1.0], BloomLabel::Knowledge)];
        for l in &BloomLabel::ALL[1..] {
            train.push(vec_of(&[1.0, 1.0], *l));
        }
        let p = nb_train(&train, 2, 1.0).unwrap();
        assert!((p.log_likelihood[0].exp() - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.log_likelihood[1].exp() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nb_uniform_counts_give_prior() {
        let mut train = Vec::new();
        for (i, l) in BloomLabel::ALL.into_iter().enumerate() {
            for _ in 0..=i {
                train.push(vec_of(&[2.0, 2.0, 2.0], l));
            }
        }
        let p = nb_train(&train, 3, 0.5).unwrap();
        let post = p.log_posterior(&vec_of(&[5.0, 0.0, 1.0], BloomLabel::Knowledge));
        for c in 0..K {
            assert!((post[c] - p.log_prior[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn nb_missing_class() {
        let train = one_hot_set()[..5].to_vec();
        assert!(matches!(
            nb_train(&train, K, 1.0),
            Err(ModelError::MissingClass(BloomLabel::Evaluation))
        ));
        assert!(matches!(
            nb_train(&one_hot_set(), K, 0.0),
            Err(ModelError::InvalidHyperparameter(_))
        ));
    }

    #[test]
    fn lr_separates_two_points() {
        let train = vec![
            vec_of(&[1.0, 0.0], BloomLabel::Knowledge),
            vec_of(&[0.0, 1.0], BloomLabel::Analysis),
        ];
        let fit = lr_train(
            &train,
            2,
            &LogRegConfig {
                l2: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(argmax(&fit.params.logits(&train[0])), BloomLabel::Knowledge);
        assert_eq!(argmax(&fit.params.logits(&train[1])), BloomLabel::Analysis);
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8);
        }
    }

    #[test]
    fn lr_heavy_l2_falls_back_to_prior() {
        let mut train = Vec::new();
        for (i, l) in BloomLabel::ALL.into_iter().enumerate() {
            for _ in 0..(if l == BloomLabel::Synthesis { 9 } else { 2 }) {
                let mut v = [0.0; K];
                v[i] = 1.0;
                train.push(vec_of(&v, l));
            }
        }
        let cfg = LogRegConfig {
            l2: 1e6,
            ..Default::default()
        };
        let fit = lr_train(&train, K, &cfg).unwrap();
        assert!(fit.params.weights.iter().all(|w| w.abs() < 1e-4));
        for x in &train {
            assert_eq!(argmax(&fit.params.logits(x)), BloomLabel::Synthesis);
        }
    }

    #[test]
    fn lr_probabilities_sum_to_one() {
        let train = one_hot_set();
        let fit = lr_train(&train, K, &LogRegConfig::default()).unwrap();
        let p = fit.params.probabilities(&train[2]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn svm_one_dimensional() {
        // x = 1 -> Knowledge, x = -1 encoded as a second column -> rest.
        let mut train = vec![
            vec_of(&[1.0, 0.0], BloomLabel::Knowledge),
            vec_of(&[0.0, 1.0], BloomLabel::Comprehension),
        ];
        for l in &BloomLabel::ALL[2..] {
            train.push(vec_of(&[0.0, 1.0], *l));
        }
        let p = svm_train(
            &train,
            2,
            &SvmConfig {
                lambda: 0.01,
                epochs: 50,
            },
            1,
        )
        .unwrap();
        assert!(p.margins(&train[0])[0] > 0.0);
        assert!(p.margins(&train[1])[0] < 0.0);
    }

    #[test]
    fn svm_norm_bound_and_determinism() {
        let train = one_hot_set();
        let cfg = SvmConfig {
            lambda: 0.1,
            epochs: 20,
        };
        let radius = 1.0 / cfg.lambda.sqrt();
        let mut steps = 0;
        let observed = svm_train_observed(&train, K, &cfg, 5, &mut |e| {
            steps += 1;
            assert!(e.norm <= radius + 1e-6, "{e:?}");
        })
        .unwrap();
        assert_eq!(steps, K * cfg.epochs * train.len());
        let a = svm_train(&train, K, &cfg, 5).unwrap();
        let b = svm_train(&train, K, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, observed);
        for l in BloomLabel::ALL {
            assert!(a.head_norm(l) <= radius + 1e-6);
        }
        for x in &train {
            assert_eq!(argmax(&a.margins(x)), x.label.unwrap());
        }
    }

    #[test]
    fn argmax_ties_prefer_lowest_code() {
        assert_eq!(argmax(&[0.5; K]), BloomLabel::Knowledge);
        assert_eq!(argmax(&[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]), BloomLabel::Comprehension);
        let m = [0.3, -1.0, 2.0, 0.1, 2.0, -0.5];
        assert_eq!(argmax(&m), argmax(&m.map(|v| v + 17.0)));
    }

    #[test]
    fn fingerprint_is_checked() {
        use crate::features::build_vocab;
        use crate::textprep::TokenDoc;
        let docs: Vec<TokenDoc> = BloomLabel::ALL
            .iter()
            .map(|l| TokenDoc::new(vec![format!("tok{}", l.code())]))
            .collect();
        let vocab = build_vocab(&docs, false, 1).unwrap();
        let train: Vec<FeatureVector> = docs
            .iter()
            .zip(BloomLabel::ALL)
            .map(|(d, l)| crate::features::vectorize(d, &vocab).unwrap().with_label(l))
            .collect();
        let model = ModelSpec::NaiveBayes { alpha: 1.0 }.fit(&train, &vocab, 0).unwrap();
        assert_eq!(model.predict(&train[3]).unwrap(), BloomLabel::Analysis);
        let mut foreign = train[3].clone();
        foreign.fingerprint ^= 1;
        assert!(matches!(
            model.predict(&foreign),
            Err(ModelError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn spec_tuples_follow_name_order() {
        let s = ModelSpec::LinearSvm(SvmConfig {
            lambda: 0.01,
            epochs: 30,
        });
        assert_eq!(s.tuple(), vec![30.0, 0.01]);
        assert_eq!(ModelKind::parse("svm"), Some(ModelKind::LinearSvm));
    }

    #[test]
    fn parse_meta_rejects_bad_versions() {
        assert!(matches!(parse_meta("{ not json"), Err(ModelError::Schema { .. })));
        assert!(matches!(
            parse_meta("{\"schema_version\": 99}"),
            Err(ModelError::Schema { .. })
        ));
        assert!(matches!(parse_meta("{}"), Err(ModelError::Schema { .. })));
    }
}
