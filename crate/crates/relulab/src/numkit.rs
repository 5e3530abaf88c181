//! Dense row-major matrices, seeded Gaussian sampling and a one-sided Jacobi SVD.
//!
//! Everything is `f64`. Matrices reject NaN/Inf at construction; in-place
//! updates (`axpy`) do not re-check, callers use [`Matrix::all_finite`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the pseudo-random generator recorded in every output file.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha)";
/// Name of the Gaussian sampling method recorded in every output file.
pub const GAUSSIAN_METHOD: &str = "ziggurat (rand_distr::StandardNormal)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = NumError;
    fn try_from(raw: RawMatrix) -> Result<Self, NumError> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite(i));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// No finiteness check; for hot paths whose output is guarded downstream.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Result<Self, NumError> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Matrix::new(n, n, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumError::Shape("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    /// 1×n matrix.
    pub fn row_vector(v: &[f64]) -> Result<Self, NumError> {
        Matrix::new(1, v.len(), v.to_vec())
    }

    /// n×1 matrix.
    pub fn col_vector(v: &[f64]) -> Result<Self, NumError> {
        Matrix::new(v.len(), 1, v.to_vec())
    }

    pub fn outer(u: &[f64], v: &[f64]) -> Result<Self, NumError> {
        let data = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        Matrix::new(u.len(), v.len(), data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, NumError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, b: &Matrix) -> Result<Matrix, NumError> {
        if self.cols != b.rows {
            return Err(NumError::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (oj, bj) in o.iter_mut().zip(b.row(k)) {
                    *oj += a * bj;
                }
            }
        }
        Ok(out)
    }

    /// `self · bᵀ` without materializing the transpose.
    pub fn matmul_t(&self, b: &Matrix) -> Result<Matrix, NumError> {
        if self.cols != b.cols {
            return Err(NumError::Shape(format!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = dot(a, b.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b` without materializing the transpose.
    pub fn t_matmul(&self, b: &Matrix) -> Result<Matrix, NumError> {
        if self.rows != b.rows {
            return Err(NumError::Shape(format!(
                "t_matmul ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let bk = b.row(k);
            for (i, a) in self.row(k).iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (oj, bj) in o.iter_mut().zip(bk) {
                    *oj += a * bj;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, NumError> {
        if self.cols != v.len() {
            return Err(NumError::Shape(format!(
                "matvec {}x{} by length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `vᵀ · self` as a vector.
    pub fn vecmat(&self, v: &[f64]) -> Result<Vec<f64>, NumError> {
        if self.rows != v.len() {
            return Err(NumError::Shape(format!(
                "vecmat length {} by {}x{}",
                v.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, a) in v.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.row(i)) {
                *o += a * b;
            }
        }
        Ok(out)
    }

    pub fn add(&self, b: &Matrix) -> Result<Matrix, NumError> {
        self.zip_with(b, |x, y| x + y)
    }

    pub fn sub(&self, b: &Matrix) -> Result<Matrix, NumError> {
        self.zip_with(b, |x, y| x - y)
    }

    fn zip_with(&self, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, NumError> {
        if self.shape() != b.shape() {
            return Err(NumError::Shape(format!(
                "elementwise {}x{} with {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let data = self.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, a: f64) -> Matrix {
        self.map(|v| v * a)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    /// `self += a · b`.
    pub fn axpy(&mut self, a: f64, b: &Matrix) -> Result<(), NumError> {
        if self.shape() != b.shape() {
            return Err(NumError::Shape(format!(
                "axpy {}x{} with {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        for (x, y) in self.data.iter_mut().zip(&b.data) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, b: &Matrix) -> f64 {
        self.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Submatrix picking the given rows and columns in order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                data.push(self.get(i, j));
            }
        }
        Matrix { rows: rows.len(), cols: cols.len(), data }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Singular values in descending order, `min(rows, cols)` of them.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    jacobi_svd(a).0
}

/// Unit right singular vector for the largest singular value, `None` for a zero matrix.
pub fn top_right_singular_vector(a: &Matrix) -> Option<Vec<f64>> {
    let (s, v) = jacobi_svd(a);
    if s.first().is_none_or(|s0| *s0 == 0.0) {
        return None;
    }
    Some(v)
}

/// One-sided (Hestenes) Jacobi. Returns descending singular values and the
/// top right singular vector.
fn jacobi_svd(a: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let tall = a.rows >= a.cols;
    // Columns of `b` are orthogonalized; `b` has at least as many rows as columns.
    let b = if tall { a.clone() } else { a.transpose() };
    let (m, n) = b.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| b.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let x = cols[p][k];
                    let y = cols[q][k];
                    cols[p][k] = c * x - s * y;
                    cols[q][k] = s * x + c * y;
                }
                for k in 0..n {
                    let x = v[p][k];
                    let y = v[q][k];
                    v[p][k] = c * x - s * y;
                    v[q][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|i, j| norms[*j].total_cmp(&norms[*i]));
    let values: Vec<f64> = order.iter().take(m.min(n)).map(|&i| norms[i]).collect();
    let top = order[0];
    let top_vec = if tall {
        v[top].clone()
    } else if norms[top] > 0.0 {
        cols[top].iter().map(|x| x / norms[top]).collect()
    } else {
        vec![0.0; m]
    };
    (values, top_vec)
}

/// Lower-triangular `l` with `l lᵀ = a` for symmetric positive definite `a`.
pub fn cholesky(a: &Matrix) -> Result<Matrix, NumError> {
    let n = a.rows;
    if a.cols != n {
        return Err(NumError::Shape(format!("cholesky of {}x{}", a.rows, a.cols)));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(NumError::NotPositiveDefinite(i));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(Matrix { rows: n, cols: n, data: l })
}

/// Solves `l y = b` for lower-triangular `l`.
pub fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l.get(i, k) * y[k]).sum();
        y[i] = (b[i] - s) / l.get(i, i);
    }
    y
}

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumError> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(NumError::Shape(format!(
            "solve_spd {}x{} with rhs length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    let l = cholesky(a)?;
    let y = forward_substitute(&l, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l.get(k, i) * x[k]).sum();
        x[i] = (y[i] - s) / l.get(i, i);
    }
    Ok(x)
}

/// Deterministic generator: identical seed gives an identical stream.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for sweep point `offset`.
    pub fn derive(&self, offset: u64) -> SeededRng {
        SeededRng::new(self.seed.wrapping_add(offset.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }
}

pub fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| std * rng.gaussian()).collect();
    Matrix { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.data[i * b.cols() + j] = s;
            }
        }
        out
    }

    /// Cyclic Jacobi eigenvalues of a symmetric matrix, used as an independent SVD oracle.
    fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (x, y) = (m[k][p], m[k][q]);
                        m[k][p] = c * x - s * y;
                        m[k][q] = s * x + c * y;
                    }
                    for k in 0..n {
                        let (x, y) = (m[p][k], m[q][k]);
                        m[p][k] = c * x - s * y;
                        m[q][k] = s * x + c * y;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let v = Matrix::col_vector(&[0.0, 5.0]).unwrap();
        assert_eq!(p.matmul(&v).unwrap(), Matrix::zeros(2, 1));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(3);
        let a = gaussian_matrix(&mut rng, 3, 4, 1.0);
        let b = gaussian_matrix(&mut rng, 4, 2, 1.0);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(NumError::Shape(_))));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(Matrix::new(2, 2, vec![1.0; 3]), Err(NumError::Shape(_))));
        assert_eq!(Matrix::new(1, 2, vec![1.0, f64::NAN]), Err(NumError::NonFinite(1)));
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":1,"cols":2,"data":[1.0]}"#).is_err());
    }

    #[test]
    fn singular_values_simple_cases() {
        let d = Matrix::diag(&[3.0, 1.0]).unwrap();
        let s = singular_values(&d);
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
        let u = [2.0, 0.0, 0.0];
        let v = [0.0, 3.0, 4.0];
        let s = singular_values(&Matrix::outer(&u, &v).unwrap());
        assert!((s[0] - 10.0).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
    }

    #[test]
    fn singular_values_match_eigen_oracle() {
        let mut rng = SeededRng::new(11);
        let a = gaussian_matrix(&mut rng, 4, 3, 1.0);
        let s = singular_values(&a);
        let ev = sym_eigenvalues(&a.t_matmul(&a).unwrap());
        for (si, ei) in s.iter().zip(&ev) {
            assert!((si - ei.sqrt()).abs() / ei.sqrt() < 1e-8);
        }
    }

    #[test]
    fn top_right_vector_of_outer_product() {
        let a = Matrix::outer(&[1.0, -2.0, 0.5, 3.0], &[0.6, 0.8]).unwrap();
        let v = top_right_singular_vector(&a).unwrap();
        assert!((dot(&v, &[0.6, 0.8]).abs() - 1.0).abs() < 1e-12);
        let v = top_right_singular_vector(&a.transpose()).unwrap();
        let u = [1.0, -2.0, 0.5, 3.0].map(|x| x / 14.25f64.sqrt());
        assert!((dot(&v, &u).abs() - 1.0).abs() < 1e-12);
        assert!(top_right_singular_vector(&Matrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn spd_solve_residual() {
        let mut rng = SeededRng::new(5);
        let g = gaussian_matrix(&mut rng, 6, 6, 1.0);
        let a = g.t_matmul(&g).unwrap().add(&Matrix::identity(6)).unwrap();
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let x = solve_spd(&a, &b).unwrap();
        let r = a.matvec(&x).unwrap();
        assert!(r.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
        let neg = Matrix::diag(&[1.0, -1.0]).unwrap();
        assert_eq!(solve_spd(&neg, &[1.0, 1.0]), Err(NumError::NotPositiveDefinite(1)));
    }

    #[test]
    fn gaussian_matrix_properties() {
        let mut rng = SeededRng::new(1);
        assert_eq!(gaussian_matrix(&mut rng, 3, 3, 0.0), Matrix::zeros(3, 3));
        let a = gaussian_matrix(&mut SeededRng::new(9), 4, 5, 1.0);
        let b = gaussian_matrix(&mut SeededRng::new(9), 4, 5, 1.0);
        assert_eq!(a, b);
        let big = gaussian_matrix(&mut SeededRng::new(2), 1, 100_000, 1.0);
        let n = big.data().len() as f64;
        let mean = big.data().iter().sum::<f64>() / n;
        let var = big.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.03);
    }

    #[test]
    fn derived_streams_differ() {
        let base = SeededRng::new(4);
        let mut a = base.derive(1);
        let mut b = base.derive(2);
        assert_ne!(a.gaussian(), b.gaussian());
        assert_eq!(base.derive(1).gaussian(), base.derive(1).gaussian());
    }
}
