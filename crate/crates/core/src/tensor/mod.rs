//! Dense row-major `f64` tensors and the small set of linear-algebra
//! kernels the rest of the crate is built on.

mod io;
mod linalg;
mod rng;

pub use io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, TENSOR_MAGIC};
pub use linalg::{
    cholesky, inverse, logdet, lower_triangular_inverse, solve_lower, sym_eigen, sym_inv_sqrt, sym_sqrt, EIGEN_FLOOR,
    SYMMETRY_TOL,
};
pub use rng::{sample_std_normal, Rng};

use crate::error::{Error, Result};

/// Dense tensor: `shape` plus a flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} holds {n} elements but buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!("row {i} has length {} but row 0 has {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { shape: vec![rows.len(), cols], data })
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in d.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Self { shape: vec![n, n], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn is_square(&self) -> bool {
        self.is_matrix() && self.shape[0] == self.shape[1]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 0,
            1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn require_matrix(&self, what: &str) -> Result<()> {
        if !self.is_matrix() {
            return Err(Error::DimensionMismatch(format!("{what}: expected a matrix, got shape {:?}", self.shape)));
        }
        Ok(())
    }

    pub(crate) fn require_square(&self, what: &str) -> Result<usize> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: expected a square matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.shape[0])
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor { shape: vec![c, r], data: out }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.require_matrix("matmul lhs")?;
        other.require_matrix("matmul rhs")?;
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::DimensionMismatch(format!("matmul: {n}x{k} times {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    /// `self · v` for a matrix `self`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.require_matrix("matvec")?;
        let c = self.cols();
        crate::error::check_len("matvec operand", v.len(), c)?;
        Ok((0..self.rows()).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.require_matrix("tr_matvec")?;
        crate::error::check_len("tr_matvec operand", v.len(), self.rows())?;
        let c = self.cols();
        let mut out = vec![0.0; c];
        for (i, vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| v * k).collect() }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch(format!(
                "elementwise op on shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let n = self.rows();
        (0..n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// `(a + aᵀ) / 2`.
    pub fn symmetrize(&self) -> Tensor {
        let n = self.rows();
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (self.get(i, j) + self.get(j, i));
                out.set(i, j, m);
                out.set(j, i, m);
            }
        }
        out
    }

    /// Column means and unbiased (1/(N-1)) sample covariance of an N×M matrix.
    pub fn sample_moments(&self) -> Result<(Vec<f64>, Tensor)> {
        self.require_matrix("sample_moments")?;
        let (n, m) = (self.rows(), self.cols());
        if n < 2 {
            return Err(Error::DegenerateData(format!("need at least 2 samples, got {n}")));
        }
        let mut mean = vec![0.0; m];
        for i in 0..n {
            for (mu, x) in mean.iter_mut().zip(self.row(i)) {
                *mu += x;
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= n as f64);
        let mut cov = vec![0.0; m * m];
        let mut centered = vec![0.0; m];
        for i in 0..n {
            for ((c, x), mu) in centered.iter_mut().zip(self.row(i)).zip(&mean) {
                *c = x - mu;
            }
            for a in 0..m {
                let ca = centered[a];
                for b in a..m {
                    cov[a * m + b] += ca * centered[b];
                }
            }
        }
        let denom = (n - 1) as f64;
        for a in 0..m {
            for b in a..m {
                let v = cov[a * m + b] / denom;
                cov[a * m + b] = v;
                cov[b * m + a] = v;
            }
        }
        Ok((mean, Tensor { shape: vec![m, m], data: cov }))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
