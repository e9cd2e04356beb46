//! Dense row-major matrices plus the two factorizations the trainer needs:
//! a thin SVD (one-sided Jacobi) and seeded orthonormal-basis generation.
//!
//! Everything here is plain `f64`; values are immutable after construction
//! and safe to share across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense row-major matrix. Entries are validated to be finite when the
/// matrix is built from raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: format!("matrix data for {rows}x{cols}"),
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let c = cols.max(1);
            return Err(Error::NonFinite {
                row: pos / c,
                col: pos % c,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    context: format!("row {i}"),
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    /// Internal constructor for arithmetic results already known to be valid.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// Borrow one row as a slice.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: (self.rows, self.cols),
                rhs: (other.rows, other.cols),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_vec_unchecked(m, n, out))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_vec_unchecked(self.cols, self.rows, out)
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "sub",
                lhs: (self.rows, self.cols),
                rhs: (other.rows, other.cols),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: (self.rows, self.cols),
                rhs: (other.rows, other.cols),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max-norm deviation of `selfᵀ·self` from the identity; zero for a
    /// matrix with orthonormal columns.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.cols {
            for b in a..self.cols {
                let mut acc = 0.0;
                for r in 0..self.rows {
                    acc += self.data[r * self.cols + a] * self.data[r * self.cols + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// First `k` columns as a new matrix.
    pub fn take_columns(&self, k: usize) -> Matrix {
        assert!(k <= self.cols, "take_columns past the last column");
        let mut data = Vec::with_capacity(self.rows * k);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[..k]);
        }
        Matrix::from_vec_unchecked(self.rows, k, data)
    }

    /// First `k` rows as a new matrix.
    pub fn take_rows(&self, k: usize) -> Matrix {
        assert!(k <= self.rows, "take_rows past the last row");
        Matrix::from_vec_unchecked(k, self.cols, self.data[..k * self.cols].to_vec())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin SVD `a = u · diag(s) · vt` with `u` of shape rows×min, `vt` of shape
/// min×cols and `s` sorted descending.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

/// Thin SVD via one-sided Jacobi rotations.
///
/// Column signs are canonicalized so the largest-magnitude entry of each
/// left singular vector is positive, which makes repeated factorizations of
/// the same matrix reproducible.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::InvalidArgument(
            "svd requires a nonempty matrix".into(),
        ));
    }
    if !a.is_finite() {
        let pos = a.data.iter().position(|v| !v.is_finite()).unwrap();
        return Err(Error::NonFinite {
            row: pos / a.cols,
            col: pos % a.cols,
        });
    }
    let mut result = if a.rows >= a.cols {
        jacobi_svd(a)?
    } else {
        // Factor the transpose and swap the roles of u and v.
        let f = jacobi_svd(&a.transpose())?;
        SvdResult {
            u: f.vt.transpose(),
            singular_values: f.singular_values,
            vt: f.u.transpose(),
        }
    };
    canonicalize_signs(&mut result);
    Ok(result)
}

const SVD_MAX_SWEEPS: usize = 64;

/// One-sided Jacobi on a tall matrix (rows >= cols): rotate pairs of columns
/// until they are mutually orthogonal, then read off norms as singular
/// values.
fn jacobi_svd(a: &Matrix) -> Result<SvdResult> {
    let m = a.rows;
    let n = a.cols;
    debug_assert!(m >= n);

    // Work column-major so rotations touch contiguous memory.
    let mut b: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = m as f64 * f64::EPSILON;
    let mut sweeps = 0;
    loop {
        let mut worst: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let app = dot(&b[p], &b[p]);
                let aqq = dot(&b[q], &b[q]);
                let apq = dot(&b[p], &b[q]);
                if apq == 0.0 {
                    continue;
                }
                let denom = (app * aqq).sqrt();
                if denom == 0.0 {
                    continue;
                }
                let cosine = apq.abs() / denom;
                worst = worst.max(cosine);
                if cosine <= tol {
                    continue;
                }
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_pair(&mut b, p, q, cs, sn);
                rotate_pair(&mut v, p, q, cs, sn);
            }
        }
        if worst <= tol {
            break;
        }
        sweeps += 1;
        if sweeps >= SVD_MAX_SWEEPS {
            return Err(Error::SvdNonConvergence {
                max_sweeps: SVD_MAX_SWEEPS,
                residual: worst,
            });
        }
    }

    let mut norms: Vec<f64> = b.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut singular_values = Vec::with_capacity(n);
    let mut pending_zero = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        singular_values.push(s);
        v_cols.push(std::mem::take(&mut v[j]));
        if s > 0.0 {
            u_cols.push(b[j].iter().map(|x| x / s).collect());
        } else {
            // Placeholder; filled with an orthonormal completion below.
            u_cols.push(vec![0.0; m]);
            pending_zero.push(k);
        }
    }
    norms.clear();
    for k in pending_zero {
        let fill = orthonormal_completion(&u_cols, k, m);
        u_cols[k] = fill;
    }

    Ok(SvdResult {
        u: pack_columns(&u_cols, m),
        singular_values,
        vt: pack_columns(&v_cols, n).transpose(),
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, cs: f64, sn: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = cs * xp - sn * xq;
        *y = sn * xp + cs * xq;
    }
}

fn pack_columns(cols: &[Vec<f64>], rows: usize) -> Matrix {
    let n = cols.len();
    let mut data = vec![0.0; rows * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            data[i * n + j] = x;
        }
    }
    Matrix::from_vec_unchecked(rows, n, data)
}

/// Unit vector orthogonal to every column of `cols` except index `skip`,
/// built from the best-conditioned canonical basis vector.
fn orthonormal_completion(cols: &[Vec<f64>], skip: usize, len: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..len {
        let mut cand = vec![0.0; len];
        cand[k] = 1.0;
        project_out(&mut cand, cols, skip);
        let norm = dot(&cand, &cand).sqrt();
        if best.as_ref().is_none_or(|(b, _)| norm > *b) {
            best = Some((norm, cand));
        }
        if norm > 0.9 {
            break;
        }
    }
    let (_, mut out) = best.expect("nonempty candidate set");
    // Second pass tightens orthogonality before normalizing.
    project_out(&mut out, cols, skip);
    let norm = dot(&out, &out).sqrt();
    for x in &mut out {
        *x /= norm;
    }
    out
}

fn project_out(vec: &mut [f64], cols: &[Vec<f64>], skip: usize) {
    for (j, col) in cols.iter().enumerate() {
        if j == skip {
            continue;
        }
        let r = dot(vec, col);
        if r != 0.0 {
            for (x, &c) in vec.iter_mut().zip(col) {
                *x -= r * c;
            }
        }
    }
}

/// Flip column signs of `u` (and the paired rows of `vt`) so each left
/// singular vector's largest-magnitude entry is positive.
fn canonicalize_signs(result: &mut SvdResult) {
    let m = result.u.rows;
    let k = result.u.cols;
    for j in 0..k {
        let mut lead = 0;
        let mut lead_abs = 0.0;
        for i in 0..m {
            let a = result.u.get(i, j).abs();
            if a > lead_abs {
                lead_abs = a;
                lead = i;
            }
        }
        if result.u.get(lead, j) < 0.0 {
            for i in 0..m {
                let x = result.u.get(i, j);
                result.u.set(i, j, -x);
            }
            for c in 0..result.vt.cols {
                let x = result.vt.get(j, c);
                result.vt.set(j, c, -x);
            }
        }
    }
}

/// Seeded matrix with orthonormal columns: Gram-Schmidt over a standard
/// normal draw. Deterministic for a fixed seed.
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> Result<Matrix> {
    if cols > rows {
        return Err(Error::InvalidArgument(format!(
            "random_orthonormal needs cols <= rows, got {rows}x{cols}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(
            "random_orthonormal requires positive dimensions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols_v: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..cols {
        // Two orthogonalization passes keep the Gram matrix at machine
        // precision even for nearly dependent draws.
        for _ in 0..2 {
            let (done, rest) = cols_v.split_at_mut(j);
            let current = &mut rest[0];
            for prev in done.iter() {
                let r = dot(current, prev);
                for (x, &p) in current.iter_mut().zip(prev) {
                    *x -= r * p;
                }
            }
        }
        let norm = dot(&cols_v[j], &cols_v[j]).sqrt();
        if norm < 1e-8 {
            // A vanishing draw is practically impossible; fall back to a
            // canonical completion so the contract still holds.
            let fill = orthonormal_completion(&cols_v[..j], j, rows);
            cols_v[j] = fill;
        } else {
            for x in &mut cols_v[j] {
                *x /= norm;
            }
        }
    }
    Ok(pack_columns(&cols_v, rows))
}
