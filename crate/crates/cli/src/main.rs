use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bloomtax_core::corpus::{generate_synthetic, write_csv, VerbLexicons};
use bloomtax_core::evalkit::{compute_metrics_partial, MARKDOWN_HEADER};
use bloomtax_core::llm::{ProviderConfig, ProviderKind};
use bloomtax_core::pipeline::{render_run_report, render_zeroshot_report, run_experiment, run_zeroshot};
use bloomtax_core::{BloomLabel, ErrorClass, ModelArtifact, ModelKind, PipelineError, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "bloomtax", version, about = "Bloom's-taxonomy classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the classical models.
    Run(RunArgs),
    /// Classify a corpus with chat-model providers.
    Zeroshot(ZeroshotArgs),
    /// Write a synthetic labelled corpus as CSV.
    Gensynth(GensynthArgs),
    /// Print a model artifact's metadata and top-weighted features.
    Inspect(InspectArgs),
    /// Score a file of predictions against a file of true labels.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration. Flags may only repeat values it already has.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus CSV with `Sentence,Label` columns.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model to train; repeat for several.
    #[arg(long = "model", value_enum)]
    models: Vec<ModelArg>,
    /// Append synonym-replaced copies of training sentences.
    #[arg(long)]
    augment: bool,
    /// Add part-of-speech count features.
    #[arg(long)]
    pos: bool,
    /// Train without SMOTE oversampling.
    #[arg(long)]
    no_smote: bool,
    #[arg(long)]
    test_frac: Option<f64>,
    /// Number of cross-validation folds.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct ZeroshotArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Offline provider to add; repeat for several. Live providers are
    /// configured in the config file.
    #[arg(long = "provider", value_enum)]
    providers: Vec<ProviderArg>,
}

#[derive(Args)]
struct GensynthArgs {
    /// Sentences per Bloom level.
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Artifact metadata file (`<stem>.json`).
    artifact: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct MetricsArgs {
    /// True labels, one per line.
    #[arg(long)]
    y_true: PathBuf,
    /// Predicted labels, one per line; unrecognized lines count as misses.
    #[arg(long)]
    y_pred: PathBuf,
    /// Print a Markdown table row with this name instead of JSON.
    #[arg(long)]
    markdown: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Nb,
    Lr,
    Svm,
}

impl ModelArg {
    fn kind(self) -> ModelKind {
        match self {
            ModelArg::Nb => ModelKind::NaiveBayes,
            ModelArg::Lr => ModelKind::LogisticRegression,
            ModelArg::Svm => ModelKind::LinearSvm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    MockUnparseable,
}

struct Failure {
    class: ErrorClass,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

fn config_err(message: impl Into<String>) -> Failure {
    Failure {
        class: ErrorClass::Config,
        message: message.into(),
    }
}

fn data_err(message: impl Into<String>) -> Failure {
    Failure {
        class: ErrorClass::Data,
        message: message.into(),
    }
}

/// One flag's contribution to the config, addressed by key path.
type Override = (Vec<&'static str>, Value);

/// Start from the config file (if any), then apply flag values. A flag may
/// restate a value the file already holds; a different value is an error.
fn resolve_config(config: Option<&Path>, overrides: Vec<Override>) -> Result<RunConfig, Failure> {
    let mut doc = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    for (path, value) in overrides {
        let (last, parents) = path.split_last().expect("non-empty key path");
        let mut node = &mut doc;
        for key in parents {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| config_err(format!("config key `{key}` is not an object")))?;
            node = obj.entry(*key).or_insert_with(|| Value::Object(Map::new()));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("config key `{}` is not an object", path.join("."))))?;
        match obj.get(*last) {
            Some(existing) if existing != &value => {
                return Err(config_err(format!(
                    "flag for `{}` conflicts with the config file ({existing} vs {value})",
                    path.join(".")
                )));
            }
            _ => {
                obj.insert(last.to_string(), value);
            }
        }
    }
    serde_json::from_value(doc).map_err(|e| config_err(e.to_string()))
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn common_overrides(c: &CommonArgs) -> Vec<Override> {
    let mut o = Vec::new();
    if let Some(p) = &c.corpus {
        o.push((vec!["corpus"], path_value(p)));
    }
    if let Some(p) = &c.out {
        o.push((vec!["output_dir"], path_value(p)));
    }
    if let Some(s) = c.seed {
        o.push((vec!["seed"], json!(s)));
    }
    o
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut o = common_overrides(&args.common);
    if !args.models.is_empty() {
        let names: Vec<&str> = args.models.iter().map(|m| m.kind().short_name()).collect();
        o.push((vec!["models"], json!(names)));
    }
    if args.augment {
        o.push((vec!["augment", "enabled"], json!(true)));
    }
    if args.pos {
        o.push((vec!["with_pos"], json!(true)));
    }
    if args.no_smote {
        o.push((vec!["smote", "enabled"], json!(false)));
    }
    if let Some(f) = args.test_frac {
        o.push((vec!["test_frac"], json!(f)));
    }
    if let Some(k) = args.k {
        o.push((vec!["k"], json!(k)));
    }
    let cfg = resolve_config(args.common.config.as_deref(), o)?;
    let (results, _) = run_experiment(&cfg)?;
    emit(&render_run_report(&results.metrics));
    Ok(())
}

fn cmd_zeroshot(args: ZeroshotArgs) -> Result<(), Failure> {
    let mut o = common_overrides(&args.common);
    if !args.providers.is_empty() {
        let providers: Vec<ProviderConfig> = args
            .providers
            .iter()
            .map(|p| match p {
                ProviderArg::Mock => ProviderConfig::mock("mock"),
                ProviderArg::MockUnparseable => ProviderConfig {
                    kind: ProviderKind::MockUnparseable,
                    ..ProviderConfig::mock("mock_unparseable")
                },
            })
            .collect();
        o.push((
            vec!["providers"],
            serde_json::to_value(providers).expect("providers serialize"),
        ));
    }
    let cfg = resolve_config(args.common.config.as_deref(), o)?;
    let (metrics, _) = run_zeroshot(&cfg)?;
    emit(&render_zeroshot_report(&metrics));
    Ok(())
}

fn cmd_gensynth(args: GensynthArgs) -> Result<(), Failure> {
    let corpus = generate_synthetic(args.per_class, args.seed, &VerbLexicons::bundled())
        .map_err(|e| config_err(e.to_string()))?;
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| data_err(format!("{}: {e}", dir.display())))?;
            }
            let file = fs::File::create(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
            write_csv(file, &corpus).map_err(|e| data_err(e.to_string()))
        }
        None => write_csv(std::io::stdout().lock(), &corpus).map_err(|e| data_err(e.to_string())),
    }
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Failure> {
    let model = ModelArtifact::load(&args.artifact).map_err(|e| data_err(e.to_string()))?;
    let top: Vec<Value> = BloomLabel::ALL
        .iter()
        .map(|&l| {
            let features: Vec<Value> = model
                .top_features(l, args.top)
                .into_iter()
                .map(|(name, weight)| json!({"feature": name, "weight": weight}))
                .collect();
            json!({"label": l.name(), "features": features})
        })
        .collect();
    let out = json!({
        "kind": model.kind.short_name(),
        "dim": model.dim(),
        "vocab_fingerprint": format!("{:016x}", model.vocab_fingerprint),
        "label_order": model.label_order.iter().map(|l| l.name()).collect::<Vec<_>>(),
        "hyperparams": model.hyperparams,
        "top_features": top,
    });
    emit(&(serde_json::to_string_pretty(&out).expect("json") + "\n"));
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(|l| l.trim().to_string()).collect())
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), Failure> {
    let y_true = read_lines(&args.y_true)?
        .iter()
        .enumerate()
        .map(|(i, l)| BloomLabel::from_name(l).ok_or_else(|| data_err(format!("line {}: unknown label {l:?}", i + 1))))
        .collect::<Result<Vec<_>, _>>()?;
    let y_pred: Vec<Option<BloomLabel>> = read_lines(&args.y_pred)?
        .iter()
        .map(|l| BloomLabel::from_name(l))
        .collect();
    let (cm, report) = compute_metrics_partial(&y_true, &y_pred).map_err(|e| data_err(e.to_string()))?;
    match &args.markdown {
        Some(name) => emit(&format!("{MARKDOWN_HEADER}{}\n", report.markdown_row(name))),
        None => {
            let out = json!({"metrics": report, "confusion": cm});
            emit(&(serde_json::to_string_pretty(&out).expect("json") + "\n"));
        }
    }
    Ok(())
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Zeroshot(a) => cmd_zeroshot(a),
        Command::Gensynth(a) => cmd_gensynth(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.class.exit_code();
            let body = json!({"error": {"class": f.class, "exit_code": code, "message": f.message}});
            let _ = writeln!(std::io::stderr(), "{body}");
            ExitCode::from(code as u8)
        }
    }
}
