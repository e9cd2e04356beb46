//! Supervised cross-modal factor analysis.
//!
//! Documents arrive as paired feature vectors from two modalities (called
//! "image" and "text" throughout) with a class label. Training jointly
//! learns two orthonormal projections into a shared d-dimensional space
//! and a linear multi-class predictor there, by alternating two exact
//! subproblems:
//!
//! - a box-constrained concave quadratic program over dual variables,
//!   solved by exact coordinate ascent (one closed-form clipped update per
//!   coordinate), which yields the predictor for fixed projections; and
//! - an orthonormal-Procrustes step: the projections maximizing a trace
//!   coupling objective for fixed duals, read off the top singular vectors
//!   of a d_image × d_text matrix.
//!
//! The unsupervised special case (duals pinned to zero) reduces to
//! classical cross-modal factor analysis: the SVD of the feature coupling
//! matrix. A cross-validation harness compares the supervised model
//! against that baseline by classification rate, counting each test
//! document as two independent events (its image and its text).
//!
//! Everything is deterministic given seeds: the linear algebra is
//! implemented in-crate (one-sided Jacobi SVD), all randomness flows
//! through explicitly seeded generators, and emitted files use
//! shortest-round-trip decimal floats.

pub mod cfa;
pub mod classify;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod qp;
pub mod tensor;

pub use cfa::{
    compute_z, fit_supervised, fit_unsupervised_cfa, load_model, primal_objective, project,
    recover_w, save_model, update_omegas, Hyperparams, Init, IterationRecord, ModelParams,
    SavedModel, SupCfaFit, TrainTrace, ORTHONORMALITY_TOL,
};
pub use classify::{classification_rate, predict, Modality, Prediction};
pub use dataset::{
    generate_synthetic, load_dataset, make_folds, save_dataset, Dataset, DatasetFormat, Document,
    FoldPlan, GeneratorSpec, Standardizer,
};
pub use error::{Error, Result};
pub use harness::{
    emit_boxplot_data, emit_convergence, evaluate_rate, load_experiment_config,
    rates_companion_path, run_baseline_cfa, run_cv, BoxplotSummary, DatasetSource,
    ExperimentConfig, ExperimentReport, Method, MethodResult,
};
pub use qp::{brute_force_qp, build_qp, solve_qp, DualState, QpProblem, QpSolution};
pub use tensor::{random_orthonormal, svd, Matrix, SvdResult};
