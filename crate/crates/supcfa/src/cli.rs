//! Command-line interface: dataset synthesis, training, prediction,
//! cross-validation, and convergence-trace emission.
//!
//! Exit codes: 0 on success; 2 for usage problems (bad flags, unreadable
//! or malformed inputs, invalid configuration); 1 for runtime failures
//! inside the numerics. Progress goes to stderr; data only to files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::cfa::{fit_supervised, load_model, save_model, Hyperparams, Init, SavedModel};
use crate::classify::{predict, Modality};
use crate::dataset::{
    generate_synthetic, load_dataset, save_dataset, DatasetFormat, GeneratorSpec, Standardizer,
};
use crate::error::{Error, Result};
use crate::harness::{
    emit_boxplot_data, emit_convergence, load_experiment_config, rates_companion_path, run_cv,
    Method,
};

#[derive(Parser)]
#[command(
    name = "supcfa",
    version,
    about = "Supervised cross-modal factor analysis: shared projections plus a max-margin predictor"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-modality dataset as JSONL.
    Synth(SynthArgs),
    /// Fit the supervised model; write the model file and a convergence trace.
    Train(TrainArgs),
    /// Score feature vectors of one modality with a saved model.
    Predict(PredictArgs),
    /// Run k-fold cross-validation from a config file and emit report CSVs.
    Cv(CvArgs),
    /// Fit once and emit only the convergence trace.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with the generator parameters.
    #[arg(long)]
    spec: PathBuf,
    /// Output JSONL dataset path (parent directory must exist).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset path.
    #[arg(long)]
    data: PathBuf,
    /// Dataset format: jsonl or csv-pair.
    #[arg(long, default_value = "jsonl")]
    format: DatasetFormat,
    /// JSON file with hyperparameters (shared_dim required, the rest default).
    #[arg(long)]
    hyper: PathBuf,
    /// Projection initialization: unsupervised or random.
    #[arg(long, default_value = "unsupervised")]
    init: InitKind,
    /// Seed used when --init random.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardize features to zero mean and unit variance before training;
    /// the transform is stored in the model and re-applied at prediction.
    #[arg(long)]
    standardize: bool,
    /// Output model path.
    #[arg(long)]
    model_out: PathBuf,
    /// Output convergence CSV path.
    #[arg(long)]
    trace_out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model path.
    #[arg(long)]
    model: PathBuf,
    /// Which modality the input vectors belong to: image or text.
    #[arg(long)]
    modality: Modality,
    /// JSONL input; each line carries at least the requested modality's vector.
    #[arg(long)]
    input: PathBuf,
    /// Output predictions CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    /// Experiment config JSON path.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report CSVs; created if missing.
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated override of the config's method list.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Dataset path.
    #[arg(long)]
    data: PathBuf,
    /// Dataset format: jsonl or csv-pair.
    #[arg(long, default_value = "jsonl")]
    format: DatasetFormat,
    /// JSON file with hyperparameters (shared_dim required, the rest default).
    #[arg(long)]
    hyper: PathBuf,
    /// Projection initialization: unsupervised or random.
    #[arg(long, default_value = "unsupervised")]
    init: InitKind,
    /// Seed used when --init random.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output convergence CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// The `--init` flag; pairs with `--seed` to form [`Init`].
#[derive(Debug, Clone, Copy)]
enum InitKind {
    Unsupervised,
    Random,
}

impl InitKind {
    fn resolve(self, seed: u64) -> Init {
        match self {
            InitKind::Unsupervised => Init::Unsupervised,
            InitKind::Random => Init::Random { seed },
        }
    }
}

impl std::str::FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unsupervised" => Ok(InitKind::Unsupervised),
            "random" => Ok(InitKind::Random),
            other => Err(format!(
                "unknown init {other:?} (expected unsupervised or random)"
            )),
        }
    }
}

struct CliFailure {
    code: i32,
    message: String,
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        // Bad inputs are the caller's problem (2); failures of the
        // numerics on valid inputs are ours (1).
        let code = match &e {
            Error::SvdNonConvergence { .. }
            | Error::NonFinite { .. }
            | Error::ShapeMismatch { .. } => 1,
            _ => 2,
        };
        CliFailure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), CliFailure>;

/// Parses the process arguments, dispatches, and returns the exit code.
/// Flag-level errors (unknown flag, missing required flag) exit 2 before
/// dispatch.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Convergence(args) => cmd_convergence(args),
    };
    match result {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let body = std::fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let spec: GeneratorSpec =
        serde_json::from_str(&body).map_err(|e| Error::parse(&args.spec, e.to_string()))?;
    let dataset = generate_synthetic(&spec)?;
    save_dataset(&dataset, &args.out, DatasetFormat::Jsonl)?;
    eprintln!(
        "wrote {} documents (d_image={}, d_text={}, classes={}) to {}",
        dataset.len(),
        dataset.d_image(),
        dataset.d_text(),
        dataset.num_classes(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let raw = load_dataset(&args.data, args.format)?;
    let hp = read_hyperparams(&args.hyper)?;
    let standardization = args.standardize.then(|| Standardizer::fit(&raw));
    let dataset = match &standardization {
        Some(s) => s.apply(&raw)?,
        None => raw,
    };
    hp.validate(dataset.d_image(), dataset.d_text())?;
    let fit = fit_supervised(&dataset, &hp, args.init.resolve(args.seed))?;
    let saved = SavedModel::from_trained(&fit.params, &hp, standardization);
    save_model(&saved, &args.model_out)?;
    emit_convergence(&fit.trace, &args.trace_out)?;
    // A freshly written model that cannot be read back and re-validated is
    // a bug in this build, not a usage mistake.
    load_model(&args.model_out)
        .and_then(|m| m.to_params())
        .map_err(|e| CliFailure {
            code: 1,
            message: format!("model failed reload validation: {e}"),
        })?;
    eprintln!(
        "trained {} iterations; final objective {}; model {}; trace {}",
        fit.trace.len(),
        fit.trace
            .records()
            .last()
            .map(|r| r.primal_objective.to_string())
            .unwrap_or_else(|| "n/a".into()),
        args.model_out.display(),
        args.trace_out.display()
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> CmdResult {
    let saved = load_model(&args.model)?;
    let params = saved.to_params()?;
    let vectors = load_modality_vectors(&args.input, args.modality)?;
    let mut writer =
        csv::Writer::from_path(&args.out).map_err(|e| Error::parse(&args.out, e.to_string()))?;
    let mut header = vec!["index".to_string(), "predicted_class".to_string()];
    header.extend((0..params.num_classes()).map(|c| format!("score_{c}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::parse(&args.out, e.to_string()))?;
    for (index, features) in vectors.iter().enumerate() {
        let features = match (&saved.standardization, args.modality) {
            (Some(s), Modality::Image) => s.apply_image(features)?,
            (Some(s), Modality::Text) => s.apply_text(features)?,
            (None, _) => features.clone(),
        };
        let prediction = predict(&features, args.modality, &params)?;
        let mut row = vec![index.to_string(), prediction.predicted_class.to_string()];
        row.extend(prediction.scores.iter().map(|s| s.to_string()));
        writer
            .write_record(&row)
            .map_err(|e| Error::parse(&args.out, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(&args.out, e))?;
    eprintln!(
        "wrote {} predictions to {}",
        vectors.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> CmdResult {
    let mut config = load_experiment_config(&args.config)?;
    if let Some(methods) = &args.methods {
        config.methods = methods.clone();
        config.validate()?;
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let report = run_cv(&config)?;
    let boxplot = args.out_dir.join("boxplot.csv");
    emit_boxplot_data(&report, &boxplot)?;
    for (fold, trace) in report.supcfa_traces.iter().enumerate() {
        let path = args.out_dir.join(format!("convergence_fold_{fold}.csv"));
        emit_convergence(trace, &path)?;
    }
    for result in &report.results {
        eprintln!(
            "{}: median rate {} over {} folds",
            result.method,
            result.summary.median,
            result.fold_rates.len()
        );
    }
    eprintln!(
        "summary {}; raw rates {}",
        boxplot.display(),
        rates_companion_path(&boxplot).display()
    );
    Ok(())
}

fn cmd_convergence(args: &ConvergenceArgs) -> CmdResult {
    let dataset = load_dataset(&args.data, args.format)?;
    let hp = read_hyperparams(&args.hyper)?;
    hp.validate(dataset.d_image(), dataset.d_text())?;
    let fit = fit_supervised(&dataset, &hp, args.init.resolve(args.seed))?;
    emit_convergence(&fit.trace, &args.out)?;
    eprintln!(
        "wrote {} iterations to {}",
        fit.trace.len(),
        args.out.display()
    );
    Ok(())
}

fn read_hyperparams(path: &Path) -> Result<Hyperparams> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::parse(path, e.to_string()))
}

/// Reads the requested modality's vectors from a JSONL file whose lines
/// may carry extra fields (full dataset records work as-is).
fn load_modality_vectors(path: &Path, modality: Modality) -> Result<Vec<Vec<f64>>> {
    #[derive(Deserialize)]
    struct LooseRecord {
        #[serde(default)]
        image: Option<Vec<f64>>,
        #[serde(default)]
        text: Option<Vec<f64>>,
    }

    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vectors = Vec::new();
    for (index, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LooseRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            index,
            message: e.to_string(),
        })?;
        let features = match modality {
            Modality::Image => record.image,
            Modality::Text => record.text,
        }
        .ok_or_else(|| Error::Record {
            index,
            message: format!("missing {modality} feature vector"),
        })?;
        if let Some(bad) = features.iter().find(|x| !x.is_finite()) {
            return Err(Error::Record {
                index,
                message: format!("non-finite feature value {bad}"),
            });
        }
        vectors.push(features);
    }
    if vectors.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no feature vectors in {}",
            path.display()
        )));
    }
    Ok(vectors)
}
