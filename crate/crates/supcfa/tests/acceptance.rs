//! Acceptance gate: ten end-to-end criteria covering solver correctness,
//! numerical invariants, benchmark behavior, and reproducibility.
//!
//! Runs as a plain binary (no capturing harness) so every criterion prints
//! exactly one `ACCEPTANCE <name>: PASS|FAIL (<detail>)` line. The process
//! exits nonzero if any criterion fails, which fails `cargo test`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use supcfa::{
    brute_force_qp, build_qp, classification_rate, fit_supervised, fit_unsupervised_cfa,
    load_experiment_config, random_orthonormal, run_cv, solve_qp, svd, update_omegas,
    DatasetSource, Error, Init, Matrix, Method, Prediction, QpProblem, Result, SupCfaFit,
};

// Pinned tolerances and budgets, one block per criterion.
const QP_ORACLE_GAP_TOL: f64 = 1e-6;
const QP_ORACLE_BUDGET: Duration = Duration::from_secs(5);
const PSD_SHIFT_REL: f64 = 1e-8;
const PROCRUSTES_MARGIN_FLOOR: f64 = -1e-9;
const ORTHONORMALITY_CEILING: f64 = 1e-8;
const REDUCTION_GAP_TOL: f64 = 1e-6;
const SVD_RECONSTRUCTION_REL_TOL: f64 = 1e-10;
const SVD_BUDGET: Duration = Duration::from_secs(10);
const TAIL_WINDOW: usize = 10;
const TAIL_REL_CHANGE_TOL: f64 = 1e-3;
const TRAIN_BUDGET: Duration = Duration::from_secs(60);
const NOISELESS_MEAN_FLOOR: f64 = 0.95;
const CV_BUDGET: Duration = Duration::from_secs(600);

#[derive(Default)]
struct Gate {
    total: usize,
    failures: Vec<String>,
}

impl Gate {
    fn check(&mut self, name: &str, pass: bool, detail: &str) {
        self.total += 1;
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("ACCEPTANCE {name}: {verdict} ({detail})");
        if !pass {
            self.failures.push(name.to_string());
        }
    }

    fn criterion<F>(&mut self, name: &str, body: F)
    where
        F: FnOnce() -> Result<(bool, String)>,
    {
        match body() {
            Ok((pass, detail)) => self.check(name, pass, &detail),
            Err(e) => self.check(name, false, &format!("errored: {e}")),
        }
    }
}

fn main() {
    let mut gate = Gate::default();

    gate.criterion("qp-oracle-equivalence", qp_oracle_equivalence);
    gate.criterion("psd-invariant", psd_invariant);
    gate.criterion("procrustes-optimality", procrustes_optimality);

    let bench = train_benchmark();
    match &bench {
        Ok(bench) => gate.criterion("orthonormality", || orthonormality(bench)),
        Err(e) => gate.check(
            "orthonormality",
            false,
            &format!("benchmark training failed: {e}"),
        ),
    }

    gate.criterion("unsupervised-reduction", unsupervised_reduction);
    gate.criterion("svd-reconstruction", svd_reconstruction);

    match &bench {
        Ok(bench) => gate.criterion("convergence-stability", || convergence_stability(bench)),
        Err(e) => gate.check(
            "convergence-stability",
            false,
            &format!("benchmark training failed: {e}"),
        ),
    }

    gate.criterion("cv-comparison", cv_comparison);
    gate.criterion("rate-exactness", rate_exactness);
    gate.criterion("determinism", determinism);

    if gate.failures.is_empty() {
        println!(
            "ACCEPTANCE SUMMARY: {}/{} criteria passed",
            gate.total, gate.total
        );
    } else {
        println!(
            "ACCEPTANCE SUMMARY: {}/{} criteria failed: {}",
            gate.failures.len(),
            gate.total,
            gate.failures.join(", ")
        );
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Shared helpers.

fn benchmark_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json")
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("dimensions match the data length")
}

/// One-of-m sign labels: +1 in the drawn class column, -1 elsewhere.
fn random_labels(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Matrix {
    let mut data = vec![-1.0; n * m];
    for i in 0..n {
        let class = rng.random_range(0..m);
        data[i * m + class] = 1.0;
    }
    Matrix::from_vec(n, m, data).expect("dimensions match the data length")
}

/// `tr(L' Z R)` — the alignment a projection pair extracts from coupling Z.
fn coupling_trace(z: &Matrix, left: &Matrix, right: &Matrix) -> Result<f64> {
    let through = left.transpose().matmul(z)?.matmul(right)?;
    let k = through.rows().min(through.cols());
    Ok((0..k).map(|i| through.get(i, i)).sum())
}

// ---------------------------------------------------------------------------
// Criterion 1: the sweep solver matches an exhaustive small-instance oracle.

fn qp_oracle_equivalence() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut worst_gap = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + seed);
        let n = 1 + (seed as usize % 3);
        let m = 2 + (seed as usize % 3);
        let d = 1 + ((seed as usize / 3) % 3);
        let images = random_matrix(&mut rng, n, d);
        let texts = random_matrix(&mut rng, n, d);
        let labels = random_labels(&mut rng, n, m);
        let h = 0.5 + rng.random::<f64>();
        let c1 = 0.4 + rng.random::<f64>();
        let problem = build_qp(&images, &texts, &labels, h, c1)?;
        let solved = solve_qp(&problem, None, 1e-10, 4_000)?;
        let oracle = brute_force_qp(&problem, 8)?;
        let gap = (problem.objective(&oracle) - solved.objective).abs();
        worst_gap = worst_gap.max(gap);
    }
    let elapsed = start.elapsed();
    let pass = worst_gap <= QP_ORACLE_GAP_TOL && elapsed <= QP_ORACLE_BUDGET;
    Ok((
        pass,
        format!(
            "worst objective gap {worst_gap:.2e} over 20 instances in {:.2}s",
            elapsed.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 2: stacked gram systems are positive semidefinite.

/// Cholesky with positive pivots; succeeding on `M + shift*I` certifies
/// that the minimum eigenvalue of `M` is at least `-shift`.
fn cholesky_succeeds(m: &Matrix) -> bool {
    let n = m.rows();
    let mut factor = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m.get(i, j);
            for k in 0..j {
                sum -= factor[i * n + k] * factor[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                factor[i * n + i] = sum.sqrt();
            } else {
                factor[i * n + j] = sum / factor[j * n + j];
            }
        }
    }
    true
}

/// Stacks the three gram blocks as `[[A, sign*B], [sign*B', G]]`.
fn stack_grams(problem: &QpProblem, sign: f64) -> Result<Matrix> {
    let n = problem.n();
    let (a, b, g) = (problem.gram_ii(), problem.gram_it(), problem.gram_tt());
    let mut data = Vec::with_capacity(4 * n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(a.get(i, j));
        }
        for j in 0..n {
            data.push(sign * b.get(i, j));
        }
    }
    for i in 0..n {
        for j in 0..n {
            data.push(sign * b.get(j, i));
        }
        for j in 0..n {
            data.push(g.get(i, j));
        }
    }
    Matrix::from_vec(2 * n, 2 * n, data)
}

fn psd_invariant() -> Result<(bool, String)> {
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11_000 + seed);
        let n = 2 + (seed as usize % 11);
        let m = 2 + (seed as usize % 4);
        let d = 1 + (seed as usize % 5);
        let images = random_matrix(&mut rng, n, d);
        let texts = random_matrix(&mut rng, n, d);
        let labels = random_labels(&mut rng, n, m);
        let problem = build_qp(&images, &texts, &labels, 1.0, 1.0)?;
        // Both stackings of the cross block must be PSD; they are similar
        // via conjugation with diag(I, -I).
        for sign in [1.0, -1.0] {
            let stacked = stack_grams(&problem, sign)?;
            let shift = PSD_SHIFT_REL * stacked.frobenius_norm();
            let n2 = stacked.rows();
            let shifted_data: Vec<f64> = (0..n2 * n2)
                .map(|idx| {
                    let (i, j) = (idx / n2, idx % n2);
                    stacked.get(i, j) + if i == j { shift } else { 0.0 }
                })
                .collect();
            let shifted = Matrix::from_vec(n2, n2, shifted_data)?;
            if !cholesky_succeeds(&shifted) {
                return Ok((
                    false,
                    format!(
                        "instance seed {seed} (n={n}): minimum eigenvalue below -{PSD_SHIFT_REL:.0e}*norm"
                    ),
                ));
            }
            checked += 1;
        }
    }
    Ok((
        true,
        format!("{checked} stacked systems certified PSD via shifted Cholesky"),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3: the SVD projection update beats random orthonormal pairs.

fn procrustes_optimality() -> Result<(bool, String)> {
    let mut worst_margin = f64::INFINITY;
    for z_seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + z_seed);
        let p = 5 + (z_seed as usize % 4);
        let q = 4 + (z_seed as usize % 3);
        let d = 2 + (z_seed as usize % 2);
        let z = random_matrix(&mut rng, p, q);
        let (omega_image, omega_text) = update_omegas(&z, d)?;
        let best = coupling_trace(&z, &omega_image, &omega_text)?;
        for pair in 0..100u64 {
            let left = random_orthonormal(p, d, 7_000 + z_seed * 100 + pair)?;
            let right = random_orthonormal(q, d, 8_000 + z_seed * 100 + pair)?;
            let rival = coupling_trace(&z, &left, &right)?;
            worst_margin = worst_margin.min(best - rival);
        }
    }
    let pass = worst_margin >= PROCRUSTES_MARGIN_FLOOR;
    Ok((
        pass,
        format!("worst margin over 10x100 comparisons {worst_margin:.3e}"),
    ))
}

// ---------------------------------------------------------------------------
// Criteria 4 and 7 share one full training run on the benchmark config.

struct BenchmarkRun {
    fit: SupCfaFit,
    train_time: Duration,
}

fn train_benchmark() -> Result<BenchmarkRun> {
    let config = load_experiment_config(&benchmark_config_path())?;
    let dataset = config.dataset.realize()?;
    let start = Instant::now();
    let fit = fit_supervised(&dataset, &config.hyperparams, Init::Unsupervised)?;
    let train_time = start.elapsed();
    Ok(BenchmarkRun { fit, train_time })
}

fn orthonormality(bench: &BenchmarkRun) -> Result<(bool, String)> {
    let worst = bench
        .fit
        .trace
        .records()
        .iter()
        .map(|r| r.ortho_error)
        .fold(0.0f64, f64::max);
    let pass = !bench.fit.trace.is_empty() && worst <= ORTHONORMALITY_CEILING;
    Ok((
        pass,
        format!(
            "worst deviation {worst:.2e} across {} iterations",
            bench.fit.trace.len()
        ),
    ))
}

fn convergence_stability(bench: &BenchmarkRun) -> Result<(bool, String)> {
    let records = bench.fit.trace.records();
    if records.len() < TAIL_WINDOW {
        return Ok((
            false,
            format!("trace has only {} iterations", records.len()),
        ));
    }
    let tail = &records[records.len() - TAIL_WINDOW..];
    let max = tail
        .iter()
        .map(|r| r.primal_objective)
        .fold(f64::MIN, f64::max);
    let min = tail
        .iter()
        .map(|r| r.primal_objective)
        .fold(f64::MAX, f64::min);
    let last = records.last().expect("trace is non-empty").primal_objective;
    let relative = (max - min) / last.abs().max(1.0);
    let pass = relative < TAIL_REL_CHANGE_TOL && bench.train_time <= TRAIN_BUDGET;
    Ok((
        pass,
        format!(
            "relative change {relative:.2e} over final {TAIL_WINDOW} of {} iterations; trained in {:.2}s",
            records.len(),
            bench.train_time.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5: a vanishing hinge weight recovers the unsupervised solution.

fn unsupervised_reduction() -> Result<(bool, String)> {
    let config = load_experiment_config(&benchmark_config_path())?;
    let dataset = config.dataset.realize()?;
    let mut hp = config.hyperparams.clone();
    hp.c1 = 1e-12;
    let fit = fit_supervised(&dataset, &hp, Init::Unsupervised)?;
    let coupling = dataset
        .images_matrix()
        .transpose()
        .matmul(&dataset.texts_matrix())?;
    let supervised = coupling_trace(&coupling, fit.params.omega_image(), fit.params.omega_text())?;
    let (omega_image, omega_text) = fit_unsupervised_cfa(&dataset, hp.shared_dim)?;
    let unsupervised = coupling_trace(&coupling, &omega_image, &omega_text)?;
    let gap = (supervised - unsupervised).abs();
    Ok((
        gap <= REDUCTION_GAP_TOL,
        format!("coupling trace gap {gap:.2e} (supervised {supervised:.6}, unsupervised {unsupervised:.6})"),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6: SVD reconstructs random matrices to near machine precision.

fn svd_reconstruction() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut worst_rel = 0.0f64;
    for (idx, (rows, cols)) in [(200, 200), (200, 120), (120, 200), (50, 50)]
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + idx as u64);
        let a = random_matrix(&mut rng, rows, cols);
        let result = svd(&a)?;
        let k = result.singular_values.len();
        let mut sigma = vec![0.0f64; k * k];
        for (i, value) in result.singular_values.iter().enumerate() {
            sigma[i * k + i] = *value;
        }
        let sigma = Matrix::from_vec(k, k, sigma)?;
        let reconstructed = result.u.matmul(&sigma)?.matmul(&result.vt)?;
        let rel = reconstructed.sub(&a)?.frobenius_norm() / a.frobenius_norm();
        worst_rel = worst_rel.max(rel);
    }
    let elapsed = start.elapsed();
    let pass = worst_rel <= SVD_RECONSTRUCTION_REL_TOL && elapsed <= SVD_BUDGET;
    Ok((
        pass,
        format!(
            "worst relative error {worst_rel:.2e} over 4 sizes up to 200x200 in {:.2}s",
            elapsed.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 8: cross-validation comparison on the benchmark config.

fn cv_comparison() -> Result<(bool, String)> {
    let config = load_experiment_config(&benchmark_config_path())?;
    let start = Instant::now();
    let report = run_cv(&config)?;
    let supervised = report
        .result_for(Method::Supcfa)
        .ok_or_else(|| Error::InvalidArgument("benchmark config must include supcfa".into()))?;
    let baseline = report.result_for(Method::CfaBaseline).ok_or_else(|| {
        Error::InvalidArgument("benchmark config must include cfa_baseline".into())
    })?;
    let median_ok = supervised.summary.median >= baseline.summary.median;

    let mut noiseless = config.clone();
    match &mut noiseless.dataset {
        DatasetSource::Synthetic(spec) => spec.noise_sigma = 0.0,
        DatasetSource::File { .. } => {
            return Err(Error::InvalidArgument(
                "benchmark config must use a synthetic dataset".into(),
            ))
        }
    }
    let noiseless_report = run_cv(&noiseless)?;
    let noiseless_rates = &noiseless_report
        .result_for(Method::Supcfa)
        .ok_or_else(|| Error::InvalidArgument("noiseless run must include supcfa".into()))?
        .fold_rates;
    let noiseless_mean = noiseless_rates.iter().sum::<f64>() / noiseless_rates.len() as f64;
    let elapsed = start.elapsed();

    let pass = median_ok && noiseless_mean >= NOISELESS_MEAN_FLOOR && elapsed <= CV_BUDGET;
    Ok((
        pass,
        format!(
            "medians {:.4} vs baseline {:.4}; noiseless mean {:.4}; both runs in {:.1}s",
            supervised.summary.median,
            baseline.summary.median,
            noiseless_mean,
            elapsed.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 9: classification rates on tiny hand-computed cases are exact.

fn rate_exactness() -> Result<(bool, String)> {
    fn preds(classes: &[usize]) -> Vec<Prediction> {
        classes
            .iter()
            .map(|&predicted_class| Prediction {
                scores: vec![0.0; 4],
                predicted_class,
            })
            .collect()
    }
    let cases: [(&[usize], &[usize], f64); 5] = [
        (&[0, 1, 2, 3], &[0, 1, 2, 3], 1.0),
        (&[2, 0, 1, 1], &[2, 0, 1, 0], 0.75),
        (&[0, 1, 2, 3], &[0, 1, 0, 0], 0.5),
        (&[1, 1, 1, 1], &[0, 1, 0, 0], 0.25),
        (&[0, 0, 0, 1], &[1, 1, 1, 0], 0.0),
    ];
    for (predicted, truth, expected) in cases {
        let rate = classification_rate(&preds(predicted), truth)?;
        if rate != expected {
            return Ok((
                false,
                format!(
                    "predicted {predicted:?} against {truth:?} gave {rate}, expected {expected}"
                ),
            ));
        }
    }
    Ok((true, "5 four-event rates matched exactly".into()))
}

// ---------------------------------------------------------------------------
// Criterion 10: every seeded command produces byte-identical output twice.

const GEN_SPEC_JSON: &str = r#"{"n": 24, "d_image": 6, "d_text": 5, "num_classes": 3, "shared_dim": 2, "noise_sigma": 0.2, "seed": 5}"#;
const HYPER_JSON: &str = r#"{"shared_dim": 2, "max_iters": 6, "outer_tol": 0.0}"#;
const CV_CONFIG_JSON: &str = r#"{
  "dataset": {"synthetic": {"n": 24, "d_image": 6, "d_text": 5, "num_classes": 3, "shared_dim": 2, "noise_sigma": 0.2, "seed": 5}},
  "hyperparams": {"shared_dim": 2, "max_iters": 3},
  "num_folds": 3,
  "seed": 11,
  "methods": ["supcfa", "cfa_baseline"]
}"#;

fn run_cli(dir: &Path, args: &[&str]) -> Result<()> {
    let output = Command::new(env!("CARGO_BIN_EXE_supcfa"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| Error::InvalidArgument(format!("failed to launch CLI: {e}")))?;
    if !output.status.success() {
        return Err(Error::InvalidArgument(format!(
            "CLI {} exited with {:?}: {}",
            args.first().unwrap_or(&"<none>"),
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        )));
    }
    Ok(())
}

/// Runs one full seeded command sequence in a fresh directory and collects
/// the bytes of every artifact it produced.
fn seeded_artifacts() -> Result<Vec<(String, Vec<u8>)>> {
    let dir = tempfile::tempdir()
        .map_err(|e| Error::InvalidArgument(format!("failed to create temp dir: {e}")))?;
    let root = dir.path();
    let write = |name: &str, contents: &str| -> Result<()> {
        fs::write(root.join(name), contents).map_err(|e| Error::Io {
            path: root.join(name),
            source: e,
        })
    };
    write("gen.json", GEN_SPEC_JSON)?;
    write("hyper.json", HYPER_JSON)?;
    write("cv.json", CV_CONFIG_JSON)?;

    run_cli(
        root,
        &["synth", "--spec", "gen.json", "--out", "data.jsonl"],
    )?;
    run_cli(
        root,
        &[
            "train",
            "--data",
            "data.jsonl",
            "--hyper",
            "hyper.json",
            "--model-out",
            "model.json",
            "--trace-out",
            "trace.csv",
        ],
    )?;
    run_cli(
        root,
        &[
            "predict",
            "--model",
            "model.json",
            "--modality",
            "image",
            "--input",
            "data.jsonl",
            "--out",
            "pred.csv",
        ],
    )?;
    run_cli(root, &["cv", "--config", "cv.json", "--out-dir", "cvout"])?;
    run_cli(
        root,
        &[
            "convergence",
            "--data",
            "data.jsonl",
            "--hyper",
            "hyper.json",
            "--init",
            "random",
            "--seed",
            "9",
            "--out",
            "conv.csv",
        ],
    )?;

    let mut artifacts = Vec::new();
    for name in [
        "data.jsonl",
        "model.json",
        "trace.csv",
        "pred.csv",
        "cvout/boxplot.csv",
        "cvout/boxplot.rates.csv",
        "cvout/convergence_fold_0.csv",
        "conv.csv",
    ] {
        let bytes = fs::read(root.join(name)).map_err(|e| Error::Io {
            path: root.join(name),
            source: e,
        })?;
        artifacts.push((name.to_string(), bytes));
    }
    Ok(artifacts)
}

fn determinism() -> Result<(bool, String)> {
    let first = seeded_artifacts()?;
    let second = seeded_artifacts()?;
    let mut mismatches = String::new();
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(second.iter()) {
        assert_eq!(name_a, name_b);
        if bytes_a != bytes_b {
            let _ = write!(mismatches, " {name_a}");
        }
    }
    if mismatches.is_empty() {
        Ok((
            true,
            format!(
                "{} seeded artifacts byte-identical across independent runs",
                first.len()
            ),
        ))
    } else {
        Ok((false, format!("artifacts differ between runs:{mismatches}")))
    }
}
