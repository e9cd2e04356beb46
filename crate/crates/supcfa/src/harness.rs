//! The experiment harness: k-fold cross-validation comparing the
//! supervised method against the unsupervised-projection baseline, plus
//! CSV emission of convergence curves and boxplot summaries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cfa::{
    fit_supervised, fit_unsupervised_cfa, recover_w, Hyperparams, Init, ModelParams, TrainTrace,
};
use crate::classify::{classification_rate, predict, Modality, Prediction};
use crate::dataset::{
    generate_synthetic, load_dataset, make_folds, Dataset, DatasetFormat, GeneratorSpec,
    Standardizer,
};
use crate::error::{Error, Result};
use crate::qp::{build_qp, solve_qp};

/// Where the experiment's documents come from: a file on disk or the
/// synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(GeneratorSpec),
    File {
        path: PathBuf,
        format: DatasetFormat,
    },
}

impl DatasetSource {
    pub fn realize(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(spec) => generate_synthetic(spec),
            DatasetSource::File { path, format } => load_dataset(path, *format),
        }
    }
}

/// The two comparable training methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Supcfa,
    CfaBaseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Supcfa => "supcfa",
            Method::CfaBaseline => "cfa_baseline",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "supcfa" => Ok(Method::Supcfa),
            "cfa_baseline" => Ok(Method::CfaBaseline),
            other => Err(format!(
                "unknown method {other:?} (expected supcfa or cfa_baseline)"
            )),
        }
    }
}

/// A full cross-validation experiment, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub hyperparams: Hyperparams,
    pub num_folds: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Standardize features per fold using training-split statistics only.
    #[serde(default)]
    pub standardize: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_folds must be at least 2, got {}",
                self.num_folds
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods must not be empty".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::InvalidArgument(format!("duplicate method {m}")));
            }
        }
        Ok(())
    }
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig =
        serde_json::from_str(&body).map_err(|e| Error::parse(path, e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Five-number summary with quartiles by linear interpolation between
/// order statistics (the "type 7" convention), so the numbers are
/// reproducible bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxplotSummary {
    pub fn from_rates(rates: &[f64]) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidArgument("summary of zero rates".into()));
        }
        let mut sorted = rates.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("rates are finite"));
        Ok(Self {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One method's cross-validation outcome: per-fold rates in fold order
/// plus their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub fold_rates: Vec<f64>,
    pub summary: BoxplotSummary,
}

/// Everything a cross-validation run produces. `supcfa_traces` holds one
/// training trace per fold when the supervised method ran.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub fold_test_sizes: Vec<usize>,
    pub results: Vec<MethodResult>,
    pub supcfa_traces: Vec<TrainTrace>,
}

impl ExperimentReport {
    pub fn result_for(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

/// Classification rate of a model on a test set, counting each document as
/// two events: its image and its text, predicted independently.
pub fn evaluate_rate(params: &ModelParams, test: &Dataset) -> Result<f64> {
    let mut predictions: Vec<Prediction> = Vec::with_capacity(2 * test.len());
    let mut truths = Vec::with_capacity(2 * test.len());
    for doc in test.documents() {
        predictions.push(predict(&doc.image, Modality::Image, params)?);
        truths.push(doc.class);
        predictions.push(predict(&doc.text, Modality::Text, params)?);
        truths.push(doc.class);
    }
    classification_rate(&predictions, &truths)
}

/// The baseline: unsupervised projections, then one max-margin QP solve at
/// those fixed projections for the predictor. Returns the test rate.
pub fn run_baseline_cfa(train: &Dataset, test: &Dataset, hp: &Hyperparams) -> Result<f64> {
    hp.validate(train.d_image(), train.d_text())?;
    train.check_class_coverage()?;
    let (omega_image, omega_text) = fit_unsupervised_cfa(train, hp.shared_dim)?;
    let projected_images = train.images_matrix().matmul(&omega_image)?;
    let projected_texts = train.texts_matrix().matmul(&omega_text)?;
    let problem = build_qp(
        &projected_images,
        &projected_texts,
        &train.label_matrix(),
        hp.h,
        hp.c1,
    )?;
    let solution = solve_qp(&problem, None, hp.qp_tol, 10 * train.len())?;
    let w = recover_w(train, &solution.duals, &omega_image, &omega_text)?;
    let params = ModelParams::new(omega_image, omega_text, w)?;
    evaluate_rate(&params, test)
}

/// Runs the full protocol: deterministic folds, every listed method
/// trained on each k−1 split and scored on the held-out fold. Fails up
/// front if any training split is missing a class.
pub fn run_cv(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let dataset = config.dataset.realize()?;
    let folds = make_folds(&dataset, config.num_folds, config.seed)?;

    // Vet class coverage across all splits before any training time is
    // spent.
    for fold in 0..config.num_folds {
        let train = dataset.subset(&folds.train_indices(fold))?;
        if let Err(Error::MissingClass { class }) = train.check_class_coverage() {
            return Err(Error::InvalidArgument(format!(
                "class {class} has no training documents when fold {fold} is held out; \
                 try a different seed or fewer folds"
            )));
        }
    }

    let mut fold_test_sizes = Vec::with_capacity(config.num_folds);
    let mut rates: Vec<Vec<f64>> = vec![Vec::new(); config.methods.len()];
    let mut supcfa_traces = Vec::new();
    for fold in 0..config.num_folds {
        let mut train = dataset.subset(&folds.train_indices(fold))?;
        let mut test = dataset.subset(&folds.test_indices(fold))?;
        if config.standardize {
            let standardizer = Standardizer::fit(&train);
            train = standardizer.apply(&train)?;
            test = standardizer.apply(&test)?;
        }
        fold_test_sizes.push(test.len());
        for (slot, method) in config.methods.iter().enumerate() {
            match method {
                Method::Supcfa => {
                    let fit = fit_supervised(&train, &config.hyperparams, Init::Unsupervised)?;
                    rates[slot].push(evaluate_rate(&fit.params, &test)?);
                    supcfa_traces.push(fit.trace);
                }
                Method::CfaBaseline => {
                    rates[slot].push(run_baseline_cfa(&train, &test, &config.hyperparams)?);
                }
            }
        }
    }

    let results = config
        .methods
        .iter()
        .zip(rates)
        .map(|(&method, fold_rates)| {
            Ok(MethodResult {
                method,
                summary: BoxplotSummary::from_rates(&fold_rates)?,
                fold_rates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        fold_test_sizes,
        results,
        supcfa_traces,
    })
}

/// Writes one CSV row per completed training iteration:
/// `iteration,primal_objective,qp_dual_objective`.
pub fn emit_convergence(trace: &TrainTrace, path: &Path) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument(
            "convergence trace has no iterations".into(),
        ));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    writer
        .write_record(["iteration", "primal_objective", "qp_dual_objective"])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    for record in trace.records() {
        writer
            .write_record([
                record.iteration.to_string(),
                record.primal_objective.to_string(),
                record.qp_dual_objective.to_string(),
            ])
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Companion file of [`emit_boxplot_data`] holding raw per-fold rates.
pub fn rates_companion_path(path: &Path) -> PathBuf {
    path.with_extension("rates.csv")
}

/// Writes the five-number summary per method
/// (`method,min,q1,median,q3,max`) plus a long-format companion CSV of raw
/// per-fold rates next to it (`method,fold,rate`).
pub fn emit_boxplot_data(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    writer
        .write_record(["method", "min", "q1", "median", "q3", "max"])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    for result in &report.results {
        let s = &result.summary;
        writer
            .write_record([
                result.method.to_string(),
                s.min.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.q3.to_string(),
                s.max.to_string(),
            ])
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let companion = rates_companion_path(path);
    let mut writer =
        csv::Writer::from_path(&companion).map_err(|e| Error::parse(&companion, e.to_string()))?;
    writer
        .write_record(["method", "fold", "rate"])
        .map_err(|e| Error::parse(&companion, e.to_string()))?;
    for result in &report.results {
        for (fold, rate) in result.fold_rates.iter().enumerate() {
            writer
                .write_record([
                    result.method.to_string(),
                    fold.to_string(),
                    rate.to_string(),
                ])
                .map_err(|e| Error::parse(&companion, e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| Error::io(&companion, e))
}
