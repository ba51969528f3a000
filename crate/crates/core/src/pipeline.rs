//! Experiment orchestration: run configuration, the end-to-end classical
//! pipeline, the zero-shot runner, and the files both leave behind.
//!
//! Every random stage draws from a seed derived from the single root seed
//! under a fixed label (`split`, `augment`, `cv`, `smote/final`,
//! `model/final/<KIND>`), so stages can be re-seeded independently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_corpus, AugmentError, AugmentPolicy, SynonymLexicon};
use crate::corpus::{load_csv, stratified_split, BloomLabel, CorpusError, LabeledSentence};
use crate::evalkit::{
    compute_metrics, confusion_table_csv, fit_diagnostics, grid_search, ConfusionMatrix, CvConfig, EvalError,
    FitDiagnostics, GridResult, MetricsReport, SelectionMetric, MARKDOWN_HEADER,
};
use crate::features::{
    build_vocab, smote_balance, vectorize, FeatureError, FeatureVector, Origin, SmotePolicy, Vocabulary,
};
use crate::llm::{classify_zero_shot, LlmError, LlmVerdict, PromptTemplate, ProviderConfig, ZeroShotReport};
use crate::models::{LogRegConfig, ModelArtifact, ModelError, ModelKind, ModelSpec, SvmConfig};
use crate::seed::derive_seed;
use crate::textprep::{normalize, prep_corpus, tag_pos, PrepError, PrepResources, PreppedItem, TokenDoc};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Coarse error classes, one per CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Config,
    Data,
    Provider,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Provider => 4,
        }
    }
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config(_) => ErrorClass::Config,
            PipelineError::Llm(e) => match e {
                LlmError::AuthMissing(_) | LlmError::Config(_) | LlmError::Template(_) => ErrorClass::Config,
                LlmError::ProviderUnavailable { .. } => ErrorClass::Provider,
                _ => ErrorClass::Data,
            },
            PipelineError::Eval(EvalError::InvalidK(_) | EvalError::EmptyGrid) => ErrorClass::Config,
            PipelineError::Model(ModelError::InvalidHyperparameter(_)) => ErrorClass::Config,
            PipelineError::Corpus(CorpusError::InvalidFraction(_)) => ErrorClass::Config,
            PipelineError::Augment(AugmentError::InvalidRate(_)) => ErrorClass::Config,
            PipelineError::Features(FeatureError::InvalidNeighbors) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.display().to_string();
    move |source| PipelineError::Io { path, source }
}

// ------------------------------------------------------------------- Config

/// Optional replacements for the bundled word lists and prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourcePaths {
    pub stopwords: Option<PathBuf>,
    pub lemmas: Option<PathBuf>,
    pub pos_lexicon: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub enabled: bool,
    pub rate: f64,
    pub min_word_len: usize,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let p = AugmentPolicy::default();
        AugmentSettings {
            enabled: false,
            rate: p.rate,
            min_word_len: p.min_word_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteSettings {
    pub enabled: bool,
    pub k_neighbors: usize,
}

impl Default for SmoteSettings {
    fn default() -> Self {
        SmoteSettings {
            enabled: true,
            k_neighbors: SmotePolicy::default().k_neighbors,
        }
    }
}

/// Hyperparameter grids; one grid cell per listed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub nb_alpha: Vec<f64>,
    pub lr_l2: Vec<f64>,
    pub lr_epochs: usize,
    pub lr_learning_rate: f64,
    pub svm_lambda: Vec<f64>,
    pub svm_epochs: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        let lr = LogRegConfig::default();
        GridSettings {
            nb_alpha: vec![0.1, 0.5, 1.0],
            lr_l2: vec![0.0, 0.01, 0.1, 1.0],
            lr_epochs: lr.epochs,
            lr_learning_rate: lr.learning_rate,
            svm_lambda: vec![1e-4, 1e-3, 1e-2, 1e-1],
            svm_epochs: SvmConfig::default().epochs,
        }
    }
}

impl GridSettings {
    pub fn specs(&self, kind: ModelKind) -> Vec<ModelSpec> {
        match kind {
            ModelKind::NaiveBayes => self
                .nb_alpha
                .iter()
                .map(|&alpha| ModelSpec::NaiveBayes { alpha })
                .collect(),
            ModelKind::LogisticRegression => self
                .lr_l2
                .iter()
                .map(|&l2| {
                    ModelSpec::LogisticRegression(LogRegConfig {
                        l2,
                        epochs: self.lr_epochs,
                        learning_rate: self.lr_learning_rate,
                        decay: 0.0,
                    })
                })
                .collect(),
            ModelKind::LinearSvm => self
                .svm_lambda
                .iter()
                .map(|&lambda| {
                    ModelSpec::LinearSvm(SvmConfig {
                        lambda,
                        epochs: self.svm_epochs,
                    })
                })
                .collect(),
        }
    }
}

/// Everything that determines an experiment. Serializes to one JSON
/// document; missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub resources: ResourcePaths,
    pub seed: u64,
    pub test_frac: f64,
    pub augment: AugmentSettings,
    pub smote: SmoteSettings,
    pub with_pos: bool,
    pub min_df: usize,
    pub models: Vec<ModelKind>,
    pub grids: GridSettings,
    pub k: usize,
    pub selection_metric: SelectionMetric,
    pub providers: Vec<ProviderConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            output_dir: None,
            resources: ResourcePaths::default(),
            seed: 0,
            test_frac: 0.2,
            augment: AugmentSettings::default(),
            smote: SmoteSettings::default(),
            with_pos: false,
            min_df: 1,
            models: ModelKind::ALL.to_vec(),
            grids: GridSettings::default(),
            k: 5,
            selection_metric: SelectionMetric::MacroF1,
            providers: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the config with the output directory removed, so the same
    /// experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Checks for the classical pipeline.
    pub fn validate_run(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.corpus.is_none() {
            return bad("no corpus given".into());
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return bad(format!("test_frac must be in (0, 1), got {}", self.test_frac));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if self.models.is_empty() {
            return bad("no models selected".into());
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return bad("a model is listed twice".into());
        }
        for &kind in &self.models {
            if self.grids.specs(kind).is_empty() {
                return bad(format!("grid for {kind} is empty"));
            }
        }
        if self.augment.enabled && !(0.0..=1.0).contains(&self.augment.rate) {
            return bad(format!("augment.rate must be in [0, 1], got {}", self.augment.rate));
        }
        if self.smote.enabled && self.smote.k_neighbors == 0 {
            return bad("smote.k_neighbors must be at least 1".into());
        }
        let r = &self.resources;
        let n_prep = [&r.stopwords, &r.lemmas, &r.pos_lexicon]
            .iter()
            .filter(|p| p.is_some())
            .count();
        if n_prep != 0 && n_prep != 3 {
            return bad("resources.stopwords, lemmas and pos_lexicon must be given together".into());
        }
        Ok(())
    }

    /// Checks for the zero-shot runner.
    pub fn validate_zeroshot(&self) -> Result<(), PipelineError> {
        if self.corpus.is_none() {
            return Err(PipelineError::Config("no corpus given".into()));
        }
        if self.providers.is_empty() {
            return Err(PipelineError::Config("no providers configured".into()));
        }
        let mut names: Vec<&str> = self.providers.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::Config("provider names must be unique".into()));
        }
        for p in &self.providers {
            p.validate()?;
        }
        Ok(())
    }

    fn prep_resources(&self) -> Result<PrepResources, PipelineError> {
        let r = &self.resources;
        match (&r.stopwords, &r.lemmas, &r.pos_lexicon) {
            (Some(s), Some(l), Some(p)) => Ok(PrepResources::load(s, l, p)?),
            _ => Ok(PrepResources::bundled()),
        }
    }

    fn synonyms(&self) -> Result<SynonymLexicon, PipelineError> {
        match &self.resources.synonyms {
            Some(p) => Ok(SynonymLexicon::load(p)?),
            None => Ok(SynonymLexicon::bundled()),
        }
    }

    pub fn prompt(&self) -> Result<PromptTemplate, PipelineError> {
        match &self.resources.prompt {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                Ok(PromptTemplate::parse(&text)?)
            }
            None => Ok(PromptTemplate::bundled()),
        }
    }

    fn input_paths(&self) -> Vec<(&'static str, &PathBuf)> {
        let r = &self.resources;
        [
            ("corpus", &self.corpus),
            ("stopwords", &r.stopwords),
            ("lemmas", &r.lemmas),
            ("pos_lexicon", &r.pos_lexicon),
            ("synonyms", &r.synonyms),
            ("prompt", &r.prompt),
        ]
        .into_iter()
        .filter_map(|(name, p)| p.as_ref().map(|p| (name, p)))
        .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Report row title in the layout of the classical results table.
pub fn row_name(kind: ModelKind, with_pos: bool, augmented: bool) -> String {
    match (with_pos, augmented) {
        (false, false) => kind.long_name().to_string(),
        (true, false) => format!("{} w/ POS", kind.short_name()),
        (false, true) => format!("{} w/ Augmentation", kind.short_name()),
        (true, true) => format!("{} w/ POS + Augmentation", kind.short_name()),
    }
}

// -------------------------------------------------------------- Classical run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
    /// Training sentences with no tokens left after preprocessing.
    pub dropped_empty_train: usize,
    /// Test sentences with no tokens left; they are still scored.
    pub empty_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub target: usize,
    pub appended: usize,
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabSummary {
    pub dim: usize,
    pub tokens: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: ModelKind,
    pub row: String,
    pub selected: BTreeMap<String, f64>,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub diagnostics: FitDiagnostics,
    pub grid: GridResult,
}

/// The deterministic content of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub split: SplitSummary,
    pub augmentation: Option<AugmentSummary>,
    pub vocabulary: VocabSummary,
    pub models: Vec<ModelOutcome>,
}

/// In-memory result of [`evaluate`].
#[derive(Debug, Clone)]
pub struct RunResults {
    pub metrics: RunMetrics,
    pub artifacts: Vec<ModelArtifact>,
    pub vocabulary: Vocabulary,
    /// Vectors of the original (non-augmented) training sentences.
    pub train_vectors: Vec<FeatureVector>,
    /// Training vectors including augmented copies, before balancing.
    pub fit_vectors: Vec<FeatureVector>,
    pub test_vectors: Vec<FeatureVector>,
    pub timings_ms: BTreeMap<String, u64>,
}

fn vectors_of<'a>(
    docs: impl IntoIterator<Item = (&'a TokenDoc, BloomLabel, Origin)>,
    vocab: &Vocabulary,
) -> Result<Vec<FeatureVector>, FeatureError> {
    docs.into_iter()
        .map(|(d, l, o)| Ok(vectorize(d, vocab)?.with_label(l).with_origin(o)))
        .collect()
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

/// Run split, preprocessing, augmentation, featurization, grid search, final
/// fit and test evaluation over an in-memory corpus.
pub fn evaluate(cfg: &RunConfig, corpus: &[LabeledSentence]) -> Result<RunResults, PipelineError> {
    let mut timings = BTreeMap::new();
    let res = cfg.prep_resources()?;

    let t = Instant::now();
    let split = stratified_split(corpus, cfg.test_frac, derive_seed(cfg.seed, "split"))?;
    let train = prep_corpus(&split.train, &res, cfg.with_pos)?;
    let test: Vec<PreppedItem> = split
        .test
        .iter()
        .map(|s| {
            let doc = normalize(&s.text, &res);
            let doc = if cfg.with_pos { tag_pos(&doc, &res) } else { doc };
            PreppedItem {
                id: s.id,
                doc,
                label: s.label,
            }
        })
        .collect();
    timings.insert("prep".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let (augmented, augmentation) = if cfg.augment.enabled {
        let policy = AugmentPolicy {
            rate: cfg.augment.rate,
            min_word_len: cfg.augment.min_word_len,
            seed: derive_seed(cfg.seed, "augment"),
        };
        let out = augment_corpus(&train.items, &cfg.synonyms()?, res.stopwords(), &policy)?;
        let summary = AugmentSummary {
            target: out.target(policy.rate),
            appended: out.augmented.len(),
            shortfall: out.shortfall,
        };
        (out.augmented, Some(summary))
    } else {
        (Vec::new(), None)
    };
    timings.insert("augment".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let docs = train
        .items
        .iter()
        .map(|i| &i.doc)
        .chain(augmented.iter().map(|a| &a.doc));
    let vocab = build_vocab(docs, cfg.with_pos, cfg.min_df)?;
    let train_vectors = vectors_of(
        train.items.iter().map(|i| (&i.doc, i.label, Origin::Item(i.id))),
        &vocab,
    )?;
    let aug_vectors = vectors_of(
        augmented
            .iter()
            .map(|a| (&a.doc, a.label, Origin::Augmented { source: a.source_id })),
        &vocab,
    )?;
    let test_vectors = vectors_of(test.iter().map(|i| (&i.doc, i.label, Origin::Item(i.id))), &vocab)?;
    let mut fit_vectors = train_vectors.clone();
    fit_vectors.extend(aug_vectors);
    timings.insert("vectorize".to_string(), elapsed_ms(t));

    let smote = cfg.smote.enabled.then(|| SmotePolicy {
        k_neighbors: cfg.smote.k_neighbors,
        seed: derive_seed(cfg.seed, "smote/final"),
    });
    let balanced = match &smote {
        Some(p) => smote_balance(&fit_vectors, p)?,
        None => fit_vectors.clone(),
    };
    let cv = CvConfig {
        k: cfg.k,
        seed: derive_seed(cfg.seed, "cv"),
        smote,
        metric: cfg.selection_metric,
    };

    let y_true: Vec<BloomLabel> = test.iter().map(|i| i.label).collect();
    let mut outcomes = Vec::new();
    let mut artifacts = Vec::new();
    for &kind in &cfg.models {
        let t = Instant::now();
        let grid = grid_search(&fit_vectors, &vocab, &cfg.grids.specs(kind), &cv)?;
        let spec = *grid.winner_spec();
        let model = spec.fit(&balanced, &vocab, derive_seed(cfg.seed, &format!("model/final/{kind}")))?;
        let y_pred = model.predict_all(&test_vectors)?;
        let (confusion, metrics) = compute_metrics(&y_true, &y_pred)?;
        let diagnostics = fit_diagnostics(&model, &train_vectors, &test_vectors)?;
        timings.insert(format!("model/{kind}"), elapsed_ms(t));
        outcomes.push(ModelOutcome {
            model: kind,
            row: row_name(kind, cfg.with_pos, cfg.augment.enabled),
            selected: spec.hyperparams(),
            metrics,
            confusion,
            diagnostics,
            grid,
        });
        artifacts.push(model);
    }

    Ok(RunResults {
        metrics: RunMetrics {
            config_hash: cfg.hash(),
            split: SplitSummary {
                train: split.train.len(),
                test: split.test.len(),
                dropped_empty_train: train.dropped_empty,
                empty_test: test.iter().filter(|i| i.doc.is_empty()).count(),
            },
            augmentation,
            vocabulary: VocabSummary {
                dim: vocab.dim(),
                tokens: vocab.n_tokens(),
                fingerprint: format!("{:016x}", vocab.fingerprint()),
            },
            models: outcomes,
        },
        artifacts,
        vocabulary: vocab,
        train_vectors,
        fit_vectors,
        test_vectors,
        timings_ms: timings,
    })
}

fn fmt_hyper(h: &BTreeMap<String, f64>) -> String {
    h.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}

/// Markdown report for a classical run.
pub fn render_run_report(m: &RunMetrics) -> String {
    let mut out = String::from("# Classical models\n\n");
    out.push_str(MARKDOWN_HEADER);
    for o in &m.models {
        out.push_str(&o.metrics.markdown_row(&o.row));
        out.push('\n');
    }
    out.push_str("\n## Train/test gap\n\n| Model | Train accuracy | Test accuracy | Gap |\n|---|---|---|---|\n");
    for o in &m.models {
        let d = &o.diagnostics;
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} | {:.2} |",
            o.row, d.train_accuracy, d.test_accuracy, d.gap
        );
    }
    let metric = serde_json::to_value(m.models.first().map(|o| o.grid.selection_metric).unwrap_or_default())
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let _ = write!(
        out,
        "\n## Selected hyperparameters\n\n| Model | Hyperparameters | CV {metric} |\n|---|---|---|\n"
    );
    for o in &m.models {
        let cell = &o.grid.cells[o.grid.winner];
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} |",
            o.row,
            fmt_hyper(&o.selected),
            cell.mean_score
        );
    }
    let _ = write!(
        out,
        "\n## Data\n\n- train: {} sentences ({} empty after preprocessing)\n- test: {} sentences\n- vocabulary: {} columns\n",
        m.split.train, m.split.dropped_empty_train, m.split.test, m.vocabulary.dim
    );
    if let Some(a) = &m.augmentation {
        let _ = writeln!(
            out,
            "- augmentation: {} of {} items appended ({} shortfall)",
            a.appended, a.target, a.shortfall
        );
    }
    out
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    /// SHA-256 of every input file named in the config.
    pub inputs: BTreeMap<String, String>,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub timings_ms: BTreeMap<String, u64>,
}

fn input_hashes(cfg: &RunConfig) -> Result<BTreeMap<String, String>, PipelineError> {
    cfg.input_paths()
        .into_iter()
        .map(|(name, p)| {
            let bytes = fs::read(p).map_err(io_err(p))?;
            Ok((name.to_string(), sha256_hex(&bytes)))
        })
        .collect()
}

fn write_file(dir: &Path, name: &str, content: &str, written: &mut Vec<String>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(io_err(&path))?;
    written.push(name.to_string());
    Ok(())
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, PipelineError> {
    let dir = cfg
        .output_dir
        .as_deref()
        .ok_or_else(|| PipelineError::Config("no output directory given".into()))?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir)
}

fn load_corpus(cfg: &RunConfig) -> Result<Vec<LabeledSentence>, PipelineError> {
    let path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| PipelineError::Config("no corpus given".into()))?;
    Ok(load_csv(path)?.sentences)
}

/// Full classical experiment: read the corpus, [`evaluate`], and write
/// `config.json`, `metrics.json`, `confusion.csv`, `report.md`, one model
/// artifact per model under `models/`, and `manifest.json`.
pub fn run_experiment(cfg: &RunConfig) -> Result<(RunResults, RunManifest), PipelineError> {
    cfg.validate_run()?;
    let start = Instant::now();
    let dir = output_dir(cfg)?;
    let inputs = input_hashes(cfg)?;
    let corpus = load_corpus(cfg)?;
    let mut results = evaluate(cfg, &corpus)?;

    let mut written = Vec::new();
    write_file(dir, "config.json", &cfg.to_json(), &mut written)?;
    let metrics = serde_json::to_string_pretty(&results.metrics).expect("metrics serialize") + "\n";
    write_file(dir, "metrics.json", &metrics, &mut written)?;
    let rows: Vec<(&str, &ConfusionMatrix)> = results
        .metrics
        .models
        .iter()
        .map(|o| (o.model.short_name(), &o.confusion))
        .collect();
    write_file(dir, "confusion.csv", &confusion_table_csv(&rows), &mut written)?;
    write_file(dir, "report.md", &render_run_report(&results.metrics), &mut written)?;
    let models_dir = dir.join("models");
    fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
    for a in &results.artifacts {
        let stem = a.kind.short_name().to_ascii_lowercase();
        a.save(&models_dir, &stem)?;
        written.push(format!("models/{stem}.json"));
        written.push(format!("models/{stem}.bin"));
    }
    results.timings_ms.insert("total".to_string(), elapsed_ms(start));

    written.push("manifest.json".to_string());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "run".to_string(),
        config_hash: cfg.hash(),
        inputs,
        artifacts: written.clone(),
        timings_ms: results.timings_ms.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(dir, "manifest.json", &text, &mut Vec::new())?;
    Ok((results, manifest))
}

// ---------------------------------------------------------------- Zero-shot

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotMetrics {
    pub config_hash: String,
    pub sentences: usize,
    /// One report per provider, sorted by provider name.
    pub providers: Vec<ZeroShotReport>,
}

/// Markdown table with one row per provider; parse failures count as
/// misclassifications in the headline figures.
pub fn render_zeroshot_report(m: &ZeroShotMetrics) -> String {
    let mut out = String::from("# Zero-shot classification\n\n");
    out.push_str(MARKDOWN_HEADER);
    for r in &m.providers {
        out.push_str(&r.headline.markdown_row(&r.provider));
        out.push('\n');
    }
    out.push_str(
        "\n## Parse failures\n\n| Provider | Model | Failures | Accuracy (parseable only) |\n|---|---|---|---|\n",
    );
    for r in &m.providers {
        let parseable = r
            .parseable_only
            .as_ref()
            .map(|p| format!("{:.2}", p.accuracy))
            .unwrap_or_else(|| "n/a".to_string());
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.provider, r.model, r.parse_failures, parseable
        );
    }
    if let Some(r) = m.providers.first() {
        let _ = writeln!(out, "\nPrompt version {} (sha256 {}).", r.prompt_version, r.prompt_hash);
    }
    out
}

/// Verdicts per provider name.
pub type ProviderVerdicts = Vec<(String, Vec<LlmVerdict>)>;

/// Classify a corpus with every configured provider, in provider-name order.
pub fn zeroshot_evaluate(
    cfg: &RunConfig,
    corpus: &[LabeledSentence],
) -> Result<(ProviderVerdicts, ZeroShotMetrics), PipelineError> {
    cfg.validate_zeroshot()?;
    let tmpl = cfg.prompt()?;
    let mut providers: Vec<&ProviderConfig> = cfg.providers.iter().collect();
    providers.sort_by(|a, b| a.name.cmp(&b.name));
    // Resolve every provider (and its token) before sending anything.
    let built = providers.iter().map(|p| p.build()).collect::<Result<Vec<_>, _>>()?;
    let mut verdicts = Vec::new();
    let mut reports = Vec::new();
    for (p, client) in providers.iter().zip(&built) {
        let (v, r) = classify_zero_shot(corpus, &tmpl, client.as_ref(), p)?;
        verdicts.push((p.name.clone(), v));
        reports.push(r);
    }
    Ok((
        verdicts,
        ZeroShotMetrics {
            config_hash: cfg.hash(),
            sentences: corpus.len(),
            providers: reports,
        },
    ))
}

/// Zero-shot experiment over the whole corpus, writing `config.json`,
/// `verdicts.jsonl`, `metrics.json`, `confusion.csv`, `report.md` and
/// `manifest.json`.
pub fn run_zeroshot(cfg: &RunConfig) -> Result<(ZeroShotMetrics, RunManifest), PipelineError> {
    cfg.validate_zeroshot()?;
    let start = Instant::now();
    let dir = output_dir(cfg)?;
    let inputs = input_hashes(cfg)?;
    let corpus = load_corpus(cfg)?;
    let (verdicts, metrics) = zeroshot_evaluate(cfg, &corpus)?;

    let mut written = Vec::new();
    write_file(dir, "config.json", &cfg.to_json(), &mut written)?;
    let mut lines = String::new();
    for (name, vs) in &verdicts {
        for v in vs {
            lines.push_str(&v.to_json_line(Some(name)));
            lines.push('\n');
        }
    }
    write_file(dir, "verdicts.jsonl", &lines, &mut written)?;
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n";
    write_file(dir, "metrics.json", &text, &mut written)?;
    let rows: Vec<(&str, &ConfusionMatrix)> = metrics
        .providers
        .iter()
        .map(|r| (r.provider.as_str(), &r.confusion))
        .collect();
    write_file(dir, "confusion.csv", &confusion_table_csv(&rows), &mut written)?;
    write_file(dir, "report.md", &render_zeroshot_report(&metrics), &mut written)?;

    written.push("manifest.json".to_string());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "zeroshot".to_string(),
        config_hash: cfg.hash(),
        inputs,
        artifacts: written,
        timings_ms: BTreeMap::from([("total".to_string(), elapsed_ms(start))]),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(dir, "manifest.json", &text, &mut Vec::new())?;
    Ok((metrics, manifest))
}
