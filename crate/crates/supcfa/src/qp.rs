//! The box-constrained concave quadratic maximization over the dual
//! variables of the hinge constraints, solved by projected exact coordinate
//! ascent, plus a brute-force oracle for tiny instances.
//!
//! The objective over feasible `(alpha, gamma)` in `[0, C1]^{2n}` is
//!
//! ```text
//! f(alpha, gamma) = -1/2 alpha'A alpha - alpha'B gamma - 1/2 gamma'G gamma
//!                   + h * sum(alpha_i + gamma_i)
//! ```
//!
//! which is the margin reward minus half the squared norm of the predictor
//! the duals induce: `f = h·sum(x) − ½‖U'(alpha⊙Y) + V'(gamma⊙Y)‖²`. The
//! gram matrices A, B, G pair the sign labels with projected image/text
//! features (see [`build_qp`]). The stacked matrix `[[A, B], [B', G]]` is
//! a Gram matrix and hence positive semidefinite, which makes `f` concave;
//! the sign-conjugated stack `[[A, -B], [-B', G]]` shares its spectrum.

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// The assembled dual problem: three n×n gram matrices plus the margin and
/// box parameters.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// A with `A_ij = (y_i·y_j)(u_i·u_j)`.
    gram_ii: Matrix,
    /// B with `B_ij = (y_i·y_j)(u_i·v_j)`.
    gram_it: Matrix,
    /// G with `G_ij = (y_i·y_j)(v_i·v_j)`.
    gram_tt: Matrix,
    margin_h: f64,
    box_c1: f64,
}

impl QpProblem {
    /// Validates shapes, symmetry of A and G, and parameter signs.
    pub fn new(
        gram_ii: Matrix,
        gram_it: Matrix,
        gram_tt: Matrix,
        margin_h: f64,
        box_c1: f64,
    ) -> Result<Self> {
        let n = gram_ii.rows();
        for (name, m) in [("A", &gram_ii), ("B", &gram_it), ("G", &gram_tt)] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::InvalidArgument(format!(
                    "gram matrix {name} must be {n}x{n}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for (name, m) in [("A", &gram_ii), ("G", &gram_tt)] {
            for i in 0..n {
                for j in (i + 1)..n {
                    if (m.get(i, j) - m.get(j, i)).abs() > 1e-10 {
                        return Err(Error::InvalidArgument(format!(
                            "gram matrix {name} is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        if !box_c1.is_finite() || box_c1 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "box bound C1 must be positive and finite, got {box_c1}"
            )));
        }
        if !margin_h.is_finite() {
            return Err(Error::InvalidArgument("margin h must be finite".into()));
        }
        Ok(Self {
            gram_ii,
            gram_it,
            gram_tt,
            margin_h,
            box_c1,
        })
    }

    pub fn n(&self) -> usize {
        self.gram_ii.rows()
    }

    pub fn gram_ii(&self) -> &Matrix {
        &self.gram_ii
    }

    pub fn gram_it(&self) -> &Matrix {
        &self.gram_it
    }

    pub fn gram_tt(&self) -> &Matrix {
        &self.gram_tt
    }

    pub fn margin_h(&self) -> f64 {
        self.margin_h
    }

    pub fn box_c1(&self) -> f64 {
        self.box_c1
    }

    /// Direct evaluation of the dual objective.
    pub fn objective(&self, duals: &DualState) -> f64 {
        let n = self.n();
        let (alpha, gamma) = (&duals.alpha, &duals.gamma);
        let mut quad = 0.0;
        for i in 0..n {
            let a_row = self.gram_ii.row(i);
            let b_row = self.gram_it.row(i);
            let g_row = self.gram_tt.row(i);
            quad += -0.5 * alpha[i] * dot(a_row, alpha)
                - alpha[i] * dot(b_row, gamma)
                - 0.5 * gamma[i] * dot(g_row, gamma);
        }
        let linear: f64 = alpha.iter().chain(gamma.iter()).sum();
        quad + self.margin_h * linear
    }

    /// Worst violation of the box-KKT conditions at `duals`: for each
    /// coordinate, how much the gradient points into the feasible region
    /// (up at the lower bound, down at the upper bound, either way in the
    /// interior). Zero at an exact maximizer.
    pub fn kkt_violation(&self, duals: &DualState) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let ga = self.margin_h
                - dot(self.gram_ii.row(i), &duals.alpha)
                - dot(self.gram_it.row(i), &duals.gamma);
            worst = worst.max(bound_violation(duals.alpha[i], ga, self.box_c1));
        }
        for i in 0..n {
            let mut bta = 0.0;
            for j in 0..n {
                bta += self.gram_it.get(j, i) * duals.alpha[j];
            }
            let gg = self.margin_h - bta - dot(self.gram_tt.row(i), &duals.gamma);
            worst = worst.max(bound_violation(duals.gamma[i], gg, self.box_c1));
        }
        worst
    }
}

fn bound_violation(x: f64, gradient: f64, c1: f64) -> f64 {
    if x <= 0.0 {
        gradient.max(0.0)
    } else if x >= c1 {
        (-gradient).max(0.0)
    } else {
        gradient.abs()
    }
}

/// Feasible dual variables: both vectors confined to `[0, C1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl DualState {
    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
            gamma: vec![0.0; n],
        }
    }
}

/// Outcome of a solve: the final duals, whether the KKT tolerance was met
/// within the sweep budget, and the objective after each sweep (index 0 is
/// the starting value).
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub duals: DualState,
    pub converged: bool,
    pub sweeps: usize,
    pub objective: f64,
    pub objective_by_sweep: Vec<f64>,
}

/// Assembles the dual problem from projected features and sign labels:
/// `A_ij = (y_i·y_j)(u_i·u_j)` and so on, with rows of `projected_images`
/// as `u_i`, rows of `projected_texts` as `v_i`, rows of `labels` as `y_i`.
pub fn build_qp(
    projected_images: &Matrix,
    projected_texts: &Matrix,
    labels: &Matrix,
    h: f64,
    c1: f64,
) -> Result<QpProblem> {
    let n = projected_images.rows();
    if projected_texts.rows() != n || labels.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "build_qp document counts".into(),
            expected: n,
            got: if projected_texts.rows() != n {
                projected_texts.rows()
            } else {
                labels.rows()
            },
        });
    }
    if projected_images.cols() != projected_texts.cols() {
        return Err(Error::ShapeMismatch {
            op: "build_qp shared-space dims",
            lhs: (projected_images.rows(), projected_images.cols()),
            rhs: (projected_texts.rows(), projected_texts.cols()),
        });
    }
    let label_gram = labels.matmul(&labels.transpose())?;
    let uu = projected_images.matmul(&projected_images.transpose())?;
    let uv = projected_images.matmul(&projected_texts.transpose())?;
    let vv = projected_texts.matmul(&projected_texts.transpose())?;
    QpProblem::new(
        hadamard(&label_gram, &uu),
        hadamard(&label_gram, &uv),
        hadamard(&label_gram, &vv),
        h,
        c1,
    )
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec_unchecked(a.rows(), a.cols(), data)
}

/// Projected exact coordinate ascent: every `alpha_i` (then `gamma_i`)
/// update solves its scalar concave quadratic in closed form and clips to
/// the box, so each sweep is feasible and never decreases the objective.
/// Sweep order is fixed (`alpha_1..alpha_n`, `gamma_1..gamma_n`) for
/// reproducibility.
///
/// Stops when the worst projected-gradient violation drops to `tol`
/// (checked before the first sweep, so an already-optimal warm start does
/// no work). If `max_sweeps` runs out first, the best-so-far state is
/// returned with `converged` false.
pub fn solve_qp(
    problem: &QpProblem,
    warm_start: Option<&DualState>,
    tol: f64,
    max_sweeps: usize,
) -> Result<QpSolution> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "QP tolerance must be finite and positive, got {tol}"
        )));
    }
    let n = problem.n();
    let c1 = problem.box_c1;
    let mut state = match warm_start {
        Some(ws) => {
            if ws.alpha.len() != n || ws.gamma.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "QP warm start".into(),
                    expected: n,
                    got: ws.alpha.len().max(ws.gamma.len()),
                });
            }
            let mut ws = ws.clone();
            // Clamp defensively; a warm start from a previous solve is
            // already feasible.
            for x in ws.alpha.iter_mut().chain(ws.gamma.iter_mut()) {
                *x = x.clamp(0.0, c1);
            }
            ws
        }
        None => DualState::zeros(n),
    };

    // B' is materialized once so gamma updates touch contiguous rows.
    let bt = problem.gram_it.transpose();

    // Maintained gradients: grad_a = h·1 − A·alpha − B·gamma,
    // grad_g = h·1 − B'·alpha − G·gamma.
    let mut grad_a = vec![0.0; n];
    let mut grad_g = vec![0.0; n];
    for i in 0..n {
        grad_a[i] = problem.margin_h
            - dot(problem.gram_ii.row(i), &state.alpha)
            - dot(problem.gram_it.row(i), &state.gamma);
        grad_g[i] = problem.margin_h
            - dot(bt.row(i), &state.alpha)
            - dot(problem.gram_tt.row(i), &state.gamma);
    }

    let mut objective = problem.objective(&state);
    let mut history = vec![objective];
    let mut sweeps = 0;
    let converged = loop {
        let violation = state
            .alpha
            .iter()
            .zip(&grad_a)
            .chain(state.gamma.iter().zip(&grad_g))
            .fold(0.0f64, |w, (&x, &g)| w.max(bound_violation(x, g, c1)));
        if violation <= tol {
            break true;
        }
        if sweeps >= max_sweeps {
            break false;
        }

        for i in 0..n {
            let delta = coordinate_step(state.alpha[i], grad_a[i], problem.gram_ii.get(i, i), c1);
            if delta != 0.0 {
                // The increment of a clipped exact maximizer is provably
                // non-negative; the floor absorbs rounding in its evaluation.
                objective +=
                    (grad_a[i] * delta - 0.5 * problem.gram_ii.get(i, i) * delta * delta).max(0.0);
                state.alpha[i] += delta;
                let a_row = problem.gram_ii.row(i);
                let b_row = problem.gram_it.row(i);
                for j in 0..n {
                    grad_a[j] -= a_row[j] * delta;
                    grad_g[j] -= b_row[j] * delta;
                }
            }
        }
        for i in 0..n {
            let delta = coordinate_step(state.gamma[i], grad_g[i], problem.gram_tt.get(i, i), c1);
            if delta != 0.0 {
                objective +=
                    (grad_g[i] * delta - 0.5 * problem.gram_tt.get(i, i) * delta * delta).max(0.0);
                state.gamma[i] += delta;
                let bt_row = bt.row(i);
                let g_row = problem.gram_tt.row(i);
                for j in 0..n {
                    grad_a[j] -= bt_row[j] * delta;
                    grad_g[j] -= g_row[j] * delta;
                }
            }
        }
        sweeps += 1;
        history.push(objective);
    };

    Ok(QpSolution {
        duals: state,
        converged,
        sweeps,
        objective: *history.last().expect("history starts nonempty"),
        objective_by_sweep: history,
    })
}

/// Step for one coordinate at value `x` with partial gradient `g` and
/// curvature `lambda >= 0`: the clipped maximizer of the scalar quadratic.
/// A degenerate coordinate (zero curvature, zero gradient) stays put.
fn coordinate_step(x: f64, g: f64, lambda: f64, c1: f64) -> f64 {
    let target = if lambda > 0.0 {
        (x + g / lambda).clamp(0.0, c1)
    } else if g > 0.0 {
        c1
    } else if g < 0.0 {
        0.0
    } else {
        x
    };
    target - x
}

/// Exhaustive oracle for tiny instances: evaluates the objective on the
/// full grid `{0, C1/g, …, C1}^{2n}`, then polishes the best grid point
/// with exact per-coordinate line maximization until it stops improving.
/// The grid certifies the basin; the polish reaches the optimum to high
/// precision without sharing any code with [`solve_qp`]'s incremental
/// machinery.
pub fn brute_force_qp(problem: &QpProblem, grid_steps: usize) -> Result<DualState> {
    let n = problem.n();
    if 2 * n > 6 {
        return Err(Error::InvalidArgument(format!(
            "brute force is limited to 2n <= 6 dual variables, got {}",
            2 * n
        )));
    }
    if grid_steps == 0 {
        return Err(Error::InvalidArgument(
            "grid_steps must be at least 1".into(),
        ));
    }
    let c1 = problem.box_c1;
    let vars = 2 * n;
    let points = grid_steps + 1;
    let total = points.pow(vars as u32);
    let mut best = DualState::zeros(n);
    let mut best_objective = f64::NEG_INFINITY;
    let mut current = DualState::zeros(n);
    for code in 0..total {
        let mut rem = code;
        for v in 0..vars {
            let level = rem % points;
            rem /= points;
            let value = c1 * level as f64 / grid_steps as f64;
            if v < n {
                current.alpha[v] = value;
            } else {
                current.gamma[v - n] = value;
            }
        }
        let objective = problem.objective(&current);
        if objective > best_objective {
            best_objective = objective;
            best = current.clone();
        }
    }

    // Polish with exact coordinate maximization; gradients are recomputed
    // directly each step (cheap at this size).
    for _ in 0..1000 {
        for i in 0..n {
            let g = problem.margin_h
                - dot(problem.gram_ii.row(i), &best.alpha)
                - dot(problem.gram_it.row(i), &best.gamma);
            best.alpha[i] += coordinate_step(best.alpha[i], g, problem.gram_ii.get(i, i), c1);
        }
        for i in 0..n {
            let mut bta = 0.0;
            for j in 0..n {
                bta += problem.gram_it.get(j, i) * best.alpha[j];
            }
            let g = problem.margin_h - bta - dot(problem.gram_tt.row(i), &best.gamma);
            best.gamma[i] += coordinate_step(best.gamma[i], g, problem.gram_tt.get(i, i), c1);
        }
        let objective = problem.objective(&best);
        if objective - best_objective <= 1e-14 * (1.0 + objective.abs()) {
            break;
        }
        best_objective = objective;
    }
    Ok(best)
}
