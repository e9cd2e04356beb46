//! The core method: unsupervised cross-modal factor analysis, the
//! supervised alternating trainer, objective evaluation, predictor
//! recovery, and the model file format.
//!
//! Training minimizes, over orthonormal projections `omega_image`,
//! `omega_text` and a linear predictor `w`,
//!
//! ```text
//! 1/2 ‖w‖² + C1 Σ (xi_i + eps_i) + C2 Σ ‖I_i·omega_image − T_i·omega_text‖²
//! ```
//!
//! where the slacks absorb aggregate hinge violations
//! `h − (I_i·omega_image)·w·y_i' ≤ xi_i` (and the text analogue). The
//! alternation solves the box QP over the hinge duals exactly (module
//! [`crate::qp`]), then refreshes the projections by a trace-maximizing
//! SVD step, warm-starting the duals across iterations.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::qp::{build_qp, solve_qp, DualState};
use crate::tensor::{dot, random_orthonormal, svd, Matrix};

/// Max-norm deviation from `omega'·omega = I` tolerated in a valid model.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Training knobs. `c1` trades off hinge slack, `c2` the cross-modal
/// coupling, `h` is the hinge margin, `shared_dim` the dimension of the
/// shared space, `max_iters` the outer iteration cap, `qp_tol` the
/// projected-gradient tolerance of the inner QP, and `outer_tol` the
/// relative objective change that triggers early stopping (zero disables
/// it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(default = "defaults::c1")]
    pub c1: f64,
    #[serde(default = "defaults::c2")]
    pub c2: f64,
    #[serde(default = "defaults::h")]
    pub h: f64,
    pub shared_dim: usize,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::qp_tol")]
    pub qp_tol: f64,
    #[serde(default = "defaults::outer_tol")]
    pub outer_tol: f64,
}

mod defaults {
    pub fn c1() -> f64 {
        1.0
    }
    pub fn c2() -> f64 {
        1.0
    }
    pub fn h() -> f64 {
        1.0
    }
    pub fn max_iters() -> usize {
        100
    }
    pub fn qp_tol() -> f64 {
        1e-8
    }
    pub fn outer_tol() -> f64 {
        1e-4
    }
}

impl Hyperparams {
    /// All-default knobs for the given shared dimension.
    pub fn new(shared_dim: usize) -> Self {
        Self {
            c1: defaults::c1(),
            c2: defaults::c2(),
            h: defaults::h(),
            shared_dim,
            max_iters: defaults::max_iters(),
            qp_tol: defaults::qp_tol(),
            outer_tol: defaults::outer_tol(),
        }
    }

    pub fn validate(&self, d_image: usize, d_text: usize) -> Result<()> {
        for (name, value) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("h", self.h),
            ("qp_tol", self.qp_tol),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {name} must be positive and finite, got {value}"
                )));
            }
        }
        if !self.outer_tol.is_finite() || self.outer_tol < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "outer_tol must be finite and non-negative, got {}",
                self.outer_tol
            )));
        }
        let limit = d_image.min(d_text);
        if self.shared_dim == 0 || self.shared_dim > limit {
            return Err(Error::InvalidArgument(format!(
                "shared_dim {} must lie in 1..={limit} for {d_image}-dim images and {d_text}-dim texts",
                self.shared_dim
            )));
        }
        Ok(())
    }
}

/// A trained model: the two orthonormal projections and the shared-space
/// predictor. Construction validates orthonormality and finiteness, so a
/// value of this type is always usable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    omega_image: Matrix,
    omega_text: Matrix,
    w: Matrix,
}

impl ModelParams {
    pub fn new(omega_image: Matrix, omega_text: Matrix, w: Matrix) -> Result<Self> {
        let d = omega_image.cols();
        if omega_text.cols() != d || w.rows() != d {
            return Err(Error::InvalidArgument(format!(
                "shared dimensions disagree: omega_image has {d}, omega_text has {}, w has {}",
                omega_text.cols(),
                w.rows()
            )));
        }
        if w.cols() == 0 {
            return Err(Error::InvalidArgument(
                "predictor needs at least one class".into(),
            ));
        }
        for (name, m) in [
            ("omega_image", &omega_image),
            ("omega_text", &omega_text),
            ("w", &w),
        ] {
            if !m.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} contains non-finite entries"
                )));
            }
        }
        for (name, m) in [("omega_image", &omega_image), ("omega_text", &omega_text)] {
            let err = m.orthonormality_error();
            if err > ORTHONORMALITY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "{name} columns are not orthonormal (max deviation {err:.3e})"
                )));
            }
        }
        Ok(Self {
            omega_image,
            omega_text,
            w,
        })
    }

    pub fn omega_image(&self) -> &Matrix {
        &self.omega_image
    }

    pub fn omega_text(&self) -> &Matrix {
        &self.omega_text
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn shared_dim(&self) -> usize {
        self.omega_image.cols()
    }

    pub fn d_image(&self) -> usize {
        self.omega_image.rows()
    }

    pub fn d_text(&self) -> usize {
        self.omega_text.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.w.cols()
    }
}

/// One completed outer iteration of the trainer.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based outer iteration number.
    pub iteration: usize,
    pub primal_objective: f64,
    pub qp_dual_objective: f64,
    pub qp_converged: bool,
    pub qp_sweeps: usize,
    /// Worst orthonormality deviation of the refreshed projections.
    pub ortho_error: f64,
    /// Monotonic time since training started; never serialized into
    /// deterministic outputs.
    pub elapsed_secs: f64,
}

/// Per-iteration history of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    records: Vec<IterationRecord>,
}

impl TrainTrace {
    #[cfg(test)]
    pub(crate) fn from_records(records: Vec<IterationRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// How the projections start: from the unsupervised solution, or from
/// seeded random orthonormal matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Unsupervised,
    Random { seed: u64 },
}

/// Everything a supervised fit produces: the model, its per-iteration
/// trace, and the final dual variables (the model's `w` is exactly
/// [`recover_w`] evaluated at those duals and projections).
#[derive(Debug, Clone)]
pub struct SupCfaFit {
    pub params: ModelParams,
    pub trace: TrainTrace,
    pub duals: DualState,
}

/// The unsupervised solution: projections maximizing the trace coupling
/// `tr(Ω_I'·C·Ω_T)` under orthonormality, read off a single SVD of the
/// coupling matrix `C = Σ I_i'·T_i`.
pub fn fit_unsupervised_cfa(dataset: &Dataset, d: usize) -> Result<(Matrix, Matrix)> {
    let coupling = dataset
        .images_matrix()
        .transpose()
        .matmul(&dataset.texts_matrix())?;
    update_omegas(&coupling, d)
}

/// The matrix whose trace maximization drives the projection update:
/// `2·c2·Σ I_i'·T_i + Σ_ij alpha_i·gamma_j·(y_i·y_j)·I_i'·T_j`. The first
/// term pulls the projections toward the unsupervised coupling; the second
/// reinforces cross-modal alignment between same-class documents whose
/// margins are active. With all duals zero this is the unsupervised
/// coupling matrix scaled by `2·c2`.
pub fn compute_z(dataset: &Dataset, duals: &DualState, c2: f64) -> Result<Matrix> {
    compute_z_parts(
        &dataset.images_matrix(),
        &dataset.texts_matrix(),
        &dataset.label_matrix(),
        duals,
        c2,
    )
}

fn compute_z_parts(
    images: &Matrix,
    texts: &Matrix,
    labels: &Matrix,
    duals: &DualState,
    c2: f64,
) -> Result<Matrix> {
    let n = images.rows();
    check_dual_len(duals, n)?;
    let coupling = images.transpose().matmul(texts)?;
    // The double sum factors: Σ_ij a_i·g_j·(y_i·y_j)·I_i'T_j
    //   = (I'·diag(alpha)·Y) · (T'·diag(gamma)·Y)'.
    let weighted_i = images
        .transpose()
        .matmul(&scale_rows(labels, &duals.alpha))?;
    let weighted_t = texts
        .transpose()
        .matmul(&scale_rows(labels, &duals.gamma))?;
    coupling
        .scaled(2.0 * c2)
        .add(&weighted_i.matmul(&weighted_t.transpose())?)
}

/// Rows of `labels` scaled by the matching weight.
fn scale_rows(labels: &Matrix, weights: &[f64]) -> Matrix {
    let m = labels.cols();
    let mut data = Vec::with_capacity(labels.rows() * m);
    for (i, &w) in weights.iter().enumerate() {
        data.extend(labels.row(i).iter().map(|&y| w * y));
    }
    Matrix::from_vec_unchecked(labels.rows(), m, data)
}

fn check_dual_len(duals: &DualState, n: usize) -> Result<()> {
    if duals.alpha.len() != n || duals.gamma.len() != n {
        return Err(Error::DimensionMismatch {
            context: "dual variables".into(),
            expected: n,
            got: duals.alpha.len().max(duals.gamma.len()),
        });
    }
    Ok(())
}

/// Orthonormal pair maximizing `Tr(omega_image'·z·omega_text)`: the top-d
/// left and right singular vectors of `z`. The achieved trace equals the
/// sum of the top d singular values; zero singular directions come from
/// the factorization's completed basis, so the result is orthonormal at
/// any requested `d`.
pub fn update_omegas(z: &Matrix, d: usize) -> Result<(Matrix, Matrix)> {
    let limit = z.rows().min(z.cols());
    if d == 0 || d > limit {
        return Err(Error::InvalidArgument(format!(
            "shared_dim {d} must lie in 1..={limit} for a {}x{} coupling matrix",
            z.rows(),
            z.cols()
        )));
    }
    let f = svd(z)?;
    Ok((f.u.take_columns(d), f.vt.transpose().take_columns(d)))
}

/// The predictor implied by the duals at fixed projections:
/// `w = Σ alpha_i·u_i'·y_i + Σ gamma_i·v_i'·y_i` with `u_i`, `v_i` the
/// projected features. Linear in the duals.
pub fn recover_w(
    dataset: &Dataset,
    duals: &DualState,
    omega_image: &Matrix,
    omega_text: &Matrix,
) -> Result<Matrix> {
    recover_w_parts(
        &dataset.images_matrix(),
        &dataset.texts_matrix(),
        &dataset.label_matrix(),
        duals,
        omega_image,
        omega_text,
    )
}

fn recover_w_parts(
    images: &Matrix,
    texts: &Matrix,
    labels: &Matrix,
    duals: &DualState,
    omega_image: &Matrix,
    omega_text: &Matrix,
) -> Result<Matrix> {
    check_dual_len(duals, images.rows())?;
    let u = images.matmul(omega_image)?;
    let v = texts.matmul(omega_text)?;
    let from_images = u.transpose().matmul(&scale_rows(labels, &duals.alpha))?;
    let from_texts = v.transpose().matmul(&scale_rows(labels, &duals.gamma))?;
    from_images.add(&from_texts)
}

/// The training objective at the given model: predictor norm, aggregate
/// hinge slacks at their minimal feasible values, and the cross-modal
/// coupling distance.
pub fn primal_objective(dataset: &Dataset, params: &ModelParams, hp: &Hyperparams) -> Result<f64> {
    if params.d_image() != dataset.d_image() {
        return Err(Error::DimensionMismatch {
            context: "primal objective image features".into(),
            expected: params.d_image(),
            got: dataset.d_image(),
        });
    }
    if params.d_text() != dataset.d_text() {
        return Err(Error::DimensionMismatch {
            context: "primal objective text features".into(),
            expected: params.d_text(),
            got: dataset.d_text(),
        });
    }
    if params.num_classes() != dataset.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "primal objective classes".into(),
            expected: params.num_classes(),
            got: dataset.num_classes(),
        });
    }
    let u = dataset.images_matrix().matmul(params.omega_image())?;
    let v = dataset.texts_matrix().matmul(params.omega_text())?;
    let image_scores = u.matmul(params.w())?;
    let text_scores = v.matmul(params.w())?;
    let labels = dataset.label_matrix();
    let mut hinge = 0.0;
    let mut coupling = 0.0;
    for i in 0..dataset.len() {
        let y = labels.row(i);
        hinge += (hp.h - dot(image_scores.row(i), y)).max(0.0);
        hinge += (hp.h - dot(text_scores.row(i), y)).max(0.0);
        coupling += u
            .row(i)
            .iter()
            .zip(v.row(i))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let w_norm = params.w().frobenius_norm();
    Ok(0.5 * w_norm * w_norm + hp.c1 * hinge + hp.c2 * coupling)
}

/// Alternating trainer. Each outer iteration solves the dual QP at the
/// current projections (warm-started from the previous duals), then
/// refreshes the projections from the dual-dependent coupling matrix.
/// After the loop — capped at `max_iters`, or cut short when the recorded
/// objective's relative change drops below `outer_tol` — one more QP solve
/// at the final projections yields the returned predictor.
///
/// QP non-convergence within its sweep budget is recorded in the trace,
/// not treated as a failure.
pub fn fit_supervised(dataset: &Dataset, hp: &Hyperparams, init: Init) -> Result<SupCfaFit> {
    hp.validate(dataset.d_image(), dataset.d_text())?;
    dataset.check_class_coverage()?;
    let started = Instant::now();
    let n = dataset.len();
    let images = dataset.images_matrix();
    let texts = dataset.texts_matrix();
    let labels = dataset.label_matrix();
    let d = hp.shared_dim;
    let max_sweeps = 10 * n;

    let (mut omega_image, mut omega_text) = match init {
        Init::Unsupervised => fit_unsupervised_cfa(dataset, d)?,
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (
                random_orthonormal(dataset.d_image(), d, rng.random())?,
                random_orthonormal(dataset.d_text(), d, rng.random())?,
            )
        }
    };
    let mut duals = DualState::zeros(n);
    let mut trace = TrainTrace::default();

    for iteration in 1..=hp.max_iters {
        let projected_images = images.matmul(&omega_image)?;
        let projected_texts = texts.matmul(&omega_text)?;
        let problem = build_qp(&projected_images, &projected_texts, &labels, hp.h, hp.c1)?;
        let solution = solve_qp(&problem, Some(&duals), hp.qp_tol, max_sweeps)?;
        duals = solution.duals;

        let z = compute_z_parts(&images, &texts, &labels, &duals, hp.c2)?;
        (omega_image, omega_text) = update_omegas(&z, d)?;

        let ortho_error = omega_image
            .orthonormality_error()
            .max(omega_text.orthonormality_error());
        let w = recover_w_parts(&images, &texts, &labels, &duals, &omega_image, &omega_text)?;
        let snapshot = ModelParams::new(omega_image.clone(), omega_text.clone(), w)?;
        let primal = primal_objective(dataset, &snapshot, hp)?;
        trace.records.push(IterationRecord {
            iteration,
            primal_objective: primal,
            qp_dual_objective: solution.objective,
            qp_converged: solution.converged,
            qp_sweeps: solution.sweeps,
            ortho_error,
            elapsed_secs: started.elapsed().as_secs_f64(),
        });

        if trace.records.len() >= 2 {
            let prev = trace.records[trace.records.len() - 2].primal_objective;
            let relative = (primal - prev).abs() / prev.abs().max(1.0);
            if relative < hp.outer_tol {
                break;
            }
        }
    }

    // Final predictor: duals re-solved at the final projections, then the
    // closed-form recovery.
    let projected_images = images.matmul(&omega_image)?;
    let projected_texts = texts.matmul(&omega_text)?;
    let problem = build_qp(&projected_images, &projected_texts, &labels, hp.h, hp.c1)?;
    let solution = solve_qp(&problem, Some(&duals), hp.qp_tol, max_sweeps)?;
    duals = solution.duals;
    let w = recover_w_parts(&images, &texts, &labels, &duals, &omega_image, &omega_text)?;
    let params = ModelParams::new(omega_image, omega_text, w)?;
    Ok(SupCfaFit {
        params,
        trace,
        duals,
    })
}

/// Row vector into the shared space: `features · omega`.
pub fn project(features: &[f64], omega: &Matrix) -> Result<Vec<f64>> {
    if features.len() != omega.rows() {
        return Err(Error::DimensionMismatch {
            context: "projection input".into(),
            expected: omega.rows(),
            got: features.len(),
        });
    }
    let mut out = vec![0.0; omega.cols()];
    for (k, &x) in features.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(omega.row(k)) {
            *o += x * w;
        }
    }
    Ok(out)
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// Serialized model: dimensions, the hyperparameters that produced it, an
/// optional feature standardizer, and the three parameter matrices as
/// nested row-major arrays. JSON round-trips are exact because floats are
/// written in shortest-round-trip decimal form.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SavedModel {
    pub format_version: u32,
    pub d_image: usize,
    pub d_text: usize,
    pub shared_dim: usize,
    pub num_classes: usize,
    pub hyperparams: Hyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardizer>,
    pub omega_image: Vec<Vec<f64>>,
    pub omega_text: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

impl SavedModel {
    pub fn from_trained(
        params: &ModelParams,
        hp: &Hyperparams,
        standardization: Option<Standardizer>,
    ) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            d_image: params.d_image(),
            d_text: params.d_text(),
            shared_dim: params.shared_dim(),
            num_classes: params.num_classes(),
            hyperparams: hp.clone(),
            standardization,
            omega_image: params.omega_image().to_rows(),
            omega_text: params.omega_text().to_rows(),
            w: params.w().to_rows(),
        }
    }

    /// Rebuilds validated parameters, cross-checking the declared
    /// dimensions against the stored matrices.
    pub fn to_params(&self) -> Result<ModelParams> {
        let omega_image = Matrix::from_rows(&self.omega_image)?;
        let omega_text = Matrix::from_rows(&self.omega_text)?;
        let w = Matrix::from_rows(&self.w)?;
        for (name, m, rows, cols) in [
            ("omega_image", &omega_image, self.d_image, self.shared_dim),
            ("omega_text", &omega_text, self.d_text, self.shared_dim),
            ("w", &w, self.shared_dim, self.num_classes),
        ] {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::InvalidArgument(format!(
                    "model declares {name} as {rows}x{cols} but stores {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        ModelParams::new(omega_image, omega_text, w)
    }
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<()> {
    let mut body = serde_json::to_string_pretty(model).expect("plain finite floats always encode");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: SavedModel =
        serde_json::from_str(&body).map_err(|e| Error::parse(path, e.to_string()))?;
    if model.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::parse(
            path,
            format!(
                "unsupported model format version {} (this build reads {MODEL_FORMAT_VERSION})",
                model.format_version
            ),
        ));
    }
    Ok(model)
}
