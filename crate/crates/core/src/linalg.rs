//! Small dense linear algebra: vectors, square matrices, LU inversion,
//! cofactors, and the vector/matrix norms used by the certificates.
//!
//! Everything here is sized for desk-scale systems (a handful of unknowns).
//! Matrices are stored row-major.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative pivot threshold below which a matrix is declared singular.
pub const SINGULAR_RELATIVE_TOLERANCE: f64 = 1e-14;
/// Convergence tolerance for power iteration on `m * m^T`.
pub const POWER_ITERATION_TOLERANCE: f64 = 1e-12;
/// Iteration cap for a single power-iteration attempt.
pub const POWER_ITERATION_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is singular: pivot {pivot:e} below threshold {threshold:e}")]
    SingularMatrix { pivot: f64, threshold: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry at position {index}")]
    NonFinite { index: usize },
    #[error("dimension must be at least 1")]
    Empty,
    #[error("index ({row}, {col}) out of bounds for a {n}x{n} matrix")]
    IndexOutOfBounds { row: usize, col: usize, n: usize },
    #[error("power iteration did not converge after {iterations} iterations")]
    PowerIterationStall { iterations: usize },
}

/// Vector norms on R^n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorNorm {
    /// `max_i |x_i|`
    #[default]
    Max,
    /// `sqrt(sum x_i^2)`
    Euclidean,
}

impl VectorNorm {
    pub fn name(self) -> &'static str {
        match self {
            VectorNorm::Max => "max",
            VectorNorm::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for VectorNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VectorNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(VectorNorm::Max),
            "euclidean" => Ok(VectorNorm::Euclidean),
            other => Err(format!(
                "unknown norm '{other}' (expected max or euclidean)"
            )),
        }
    }
}

/// Matrix norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixNorm {
    /// Largest singular value, `sqrt(lambda_max(m m^T))`.
    Spectral,
    Frobenius,
    /// Operator norm induced by the max vector norm.
    MaxRowSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.is_empty() {
            return Err(LinalgError::Empty);
        }
        if let Some(index) = entries.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(DenseVector(entries))
    }

    pub fn zeros(n: usize) -> Self {
        DenseVector(vec![0.0; n])
    }

    /// Builds a vector without checking finiteness. Used for intermediate
    /// results whose finiteness is checked by the caller.
    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        DenseVector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self, kind: VectorNorm) -> f64 {
        vector_norm(self, kind)
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        assert_eq!(self.dim(), other.dim(), "vector dimension mismatch");
        DenseVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &DenseVector) -> DenseVector {
        assert_eq!(self.dim(), other.dim(), "vector dimension mismatch");
        DenseVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        let n = rows.len();
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(LinalgError::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            data.extend(row);
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(DenseMatrix { n, data })
    }

    pub(crate) fn from_row_major_unchecked(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        DenseMatrix { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n, "matrix dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &DenseVector) -> DenseVector {
        assert_eq!(self.n, v.dim(), "matrix/vector dimension mismatch");
        DenseVector(
            (0..self.n)
                .map(|i| self.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum())
                .collect(),
        )
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n, "matrix dimension mismatch");
        DenseMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        DenseMatrix {
            n: self.n,
            data: self.data.iter().map(|a| a * factor).collect(),
        }
    }

    /// `c * I - self`
    pub fn shifted_negation(&self, c: f64) -> DenseMatrix {
        let mut out = self.scale(-1.0);
        for i in 0..self.n {
            out[(i, i)] += c;
        }
        out
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.sub(other).max_abs()
    }

    pub fn norm(&self, kind: MatrixNorm) -> Result<f64, LinalgError> {
        matrix_norm(self, kind)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// LU factorization with partial pivoting, `P m = L U`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: DenseMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl LuFactorization {
    pub fn new(m: &DenseMatrix) -> Result<Self, LinalgError> {
        let n = m.dim();
        let threshold = SINGULAR_RELATIVE_TOLERANCE * m.max_abs();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;

        for col in 0..n {
            let (pivot_row, pivot) = (col..n)
                .map(|r| (r, lu[(r, col)]))
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("non-empty pivot range");
            if pivot == 0.0 || pivot.abs() < threshold {
                return Err(LinalgError::SingularMatrix { pivot, threshold });
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.data.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
                sign = -sign;
            }
            for r in col + 1..n {
                let factor = lu[(r, col)] / pivot;
                lu[(r, col)] = factor;
                if factor != 0.0 {
                    for j in col + 1..n {
                        lu[(r, j)] -= factor * lu[(col, j)];
                    }
                }
            }
        }
        Ok(LuFactorization { lu, perm, sign })
    }

    /// Product of the pivots, with the permutation sign.
    pub fn determinant(&self) -> f64 {
        (0..self.lu.dim()).fold(self.sign, |acc, i| acc * self.lu[(i, i)])
    }

    pub fn solve(&self, b: &DenseVector) -> DenseVector {
        let n = self.lu.dim();
        assert_eq!(n, b.dim(), "right-hand side dimension mismatch");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        DenseVector(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseResult {
    pub inverse: DenseMatrix,
    pub determinant: f64,
}

/// Inverts `m` through an LU factorization with partial pivoting.
pub fn invert(m: &DenseMatrix) -> Result<InverseResult, LinalgError> {
    let lu = LuFactorization::new(m)?;
    let n = m.dim();
    let mut inverse = DenseMatrix::zeros(n);
    let mut unit = DenseVector::zeros(n);
    for j in 0..n {
        unit[j] = 1.0;
        let col = lu.solve(&unit);
        unit[j] = 0.0;
        for i in 0..n {
            inverse[(i, j)] = col[i];
        }
    }
    Ok(InverseResult {
        inverse,
        determinant: lu.determinant(),
    })
}

/// Determinant; zero for matrices the LU factorization rejects as singular.
pub fn determinant(m: &DenseMatrix) -> f64 {
    match m.dim() {
        1..=4 => laplace_determinant(m),
        _ => LuFactorization::new(m).map_or(0.0, |lu| lu.determinant()),
    }
}

fn laplace_determinant(m: &DenseMatrix) -> f64 {
    let n = m.dim();
    match n {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => (0..n)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * laplace_determinant(&minor(m, 0, j))
            })
            .sum(),
    }
}

fn minor(m: &DenseMatrix, row: usize, col: usize) -> DenseMatrix {
    let n = m.dim();
    let data = (0..n)
        .filter(|&i| i != row)
        .flat_map(|i| (0..n).filter(move |&j| j != col).map(move |j| m[(i, j)]))
        .collect();
    DenseMatrix::from_row_major_unchecked(n - 1, data)
}

/// Signed minor `(-1)^(i+k) det(M_ik)`, with zero-based indices.
/// A 1x1 matrix has the single cofactor 1.
pub fn cofactor(m: &DenseMatrix, i: usize, k: usize) -> Result<f64, LinalgError> {
    let n = m.dim();
    if i >= n || k >= n {
        return Err(LinalgError::IndexOutOfBounds { row: i, col: k, n });
    }
    if n == 1 {
        return Ok(1.0);
    }
    let sign = if (i + k) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * determinant(&minor(m, i, k)))
}

/// All cofactors `A_ik` as a matrix. Minor expansion up to 4x4; above that
/// the adjugate is recovered from the LU inverse when `m` is regular.
pub fn cofactor_matrix(m: &DenseMatrix) -> DenseMatrix {
    let n = m.dim();
    if n > 4 {
        if let Ok(inv) = invert(m) {
            return inv.inverse.transpose().scale(inv.determinant);
        }
    }
    let mut out = DenseMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            out[(i, k)] = cofactor(m, i, k).expect("indices in range");
        }
    }
    out
}

pub fn vector_norm(v: &DenseVector, kind: VectorNorm) -> f64 {
    match kind {
        VectorNorm::Max => v.iter().fold(0.0, |acc, x| acc.max(x.abs())),
        VectorNorm::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// `spectral` is closed form for n <= 2 and power iteration otherwise; a
/// stall surfaces as [`LinalgError::PowerIterationStall`] so the caller can
/// fall back to the Frobenius bound.
pub fn matrix_norm(m: &DenseMatrix, kind: MatrixNorm) -> Result<f64, LinalgError> {
    match kind {
        MatrixNorm::Frobenius => Ok(m.data.iter().map(|x| x * x).sum::<f64>().sqrt()),
        MatrixNorm::MaxRowSum => Ok((0..m.dim())
            .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        MatrixNorm::Spectral => {
            if m.dim() <= 2 {
                Ok(gram_eigenvalues_closed_form(m)[0].max(0.0).sqrt())
            } else {
                spectral_norm_power(m)
            }
        }
    }
}

/// `m * m^T`
pub fn gram(m: &DenseMatrix) -> DenseMatrix {
    m.matmul(&m.transpose())
}

/// Eigenvalues of `m m^T` for n <= 2, largest first, from the characteristic
/// quadratic.
pub fn gram_eigenvalues_closed_form(m: &DenseMatrix) -> Vec<f64> {
    let g = gram(m);
    match m.dim() {
        1 => vec![g[(0, 0)]],
        2 => {
            let (a, b, c) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
            let mean = 0.5 * (a + c);
            let radius = (0.5 * (a - c)).hypot(b);
            vec![mean + radius, mean - radius]
        }
        n => panic!("closed-form eigenvalues only for n <= 2, got {n}"),
    }
}

/// Spectral norm through power iteration on `m m^T`, seeded with the
/// all-ones vector and re-seeded once with a pseudo-random vector.
pub fn spectral_norm_power(m: &DenseMatrix) -> Result<f64, LinalgError> {
    let g = gram(m);
    let n = m.dim();
    if g.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let ones = DenseVector(vec![1.0; n]);
    if let Some(lambda) = power_iterate(&g, ones) {
        return Ok(lambda.max(0.0).sqrt());
    }
    let mut rng = StdRng::seed_from_u64(0x5eed_1234);
    let seed = DenseVector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    power_iterate(&g, seed)
        .map(|lambda| lambda.max(0.0).sqrt())
        .ok_or(LinalgError::PowerIterationStall {
            iterations: POWER_ITERATION_MAX_ITERATIONS,
        })
}

fn power_iterate(g: &DenseMatrix, seed: DenseVector) -> Option<f64> {
    let mut v = seed;
    let norm = vector_norm(&v, VectorNorm::Euclidean);
    if norm == 0.0 {
        return None;
    }
    v = DenseVector(v.iter().map(|x| x / norm).collect());
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_MAX_ITERATIONS {
        let w = g.matvec(&v);
        let next = vector_norm(&w, VectorNorm::Euclidean);
        if next == 0.0 {
            return None;
        }
        v = DenseVector(w.iter().map(|x| x / next).collect());
        if (next - lambda).abs() <= POWER_ITERATION_TOLERANCE * next {
            return Some(next);
        }
        lambda = next;
    }
    None
}
