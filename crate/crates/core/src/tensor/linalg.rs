use nalgebra::{DMatrix, SymmetricEigen};

use super::Tensor;
use crate::error::{Error, Result};

/// Inputs to the symmetric factorizations must be symmetric to this absolute tolerance.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues in `(0, EIGEN_FLOOR)` are raised to the floor before
/// taking (inverse) square roots.
pub const EIGEN_FLOOR: f64 = 1e-8;

fn require_symmetric(a: &Tensor, what: &str) -> Result<Tensor> {
    a.require_square(what)?;
    if !a.is_finite() {
        return Err(Error::NotPositiveDefinite(format!("{what}: non-finite entries")));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::NotPositiveDefinite(format!("{what}: matrix is not symmetric")));
    }
    Ok(a.symmetrize())
}

/// Lower-triangular `L` with positive diagonal such that `L·Lᵀ = a`.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let a = require_symmetric(a, "cholesky")?;
    let n = a.rows();
    let mut l = Tensor::zeros(&[n, n]);
    for j in 0..n {
        let mut pivot = a.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("cholesky: pivot {j} is {pivot:e}")));
        }
        let d = pivot.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// `log det a` for positive-definite `a`, via `2 Σ log Lᵢᵢ`.
pub fn logdet(a: &Tensor) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * (0..l.rows()).map(|i| l.get(i, i).ln()).sum::<f64>())
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues ascending and
/// the matching eigenvectors as columns.
pub fn sym_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let a = require_symmetric(a, "sym_eigen")?;
    let n = a.rows();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, a.data()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, eig.eigenvectors[(row, src)]);
        }
    }
    Ok((values, vectors))
}

fn spectral_map(a: &Tensor, what: &str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let (values, v) = sym_eigen(a)?;
    if let Some(min) = values.first() {
        if *min <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!("{what}: smallest eigenvalue is {min:e}")));
        }
    }
    let n = values.len();
    let mapped: Vec<f64> = values.iter().map(|&l| f(l.max(EIGEN_FLOOR))).collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..n).map(|k| v.get(i, k) * mapped[k] * v.get(j, k)).sum();
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    Ok(out)
}

/// Symmetric inverse square root `a^{-1/2}` (the ZCA whitening matrix).
/// The result is exactly symmetric.
pub fn sym_inv_sqrt(a: &Tensor) -> Result<Tensor> {
    spectral_map(a, "sym_inv_sqrt", |l| 1.0 / l.sqrt())
}

/// Symmetric square root `a^{1/2}`.
pub fn sym_sqrt(a: &Tensor) -> Result<Tensor> {
    spectral_map(a, "sym_sqrt", f64::sqrt)
}

/// General inverse by LU with partial pivoting.
pub fn inverse(a: &Tensor) -> Result<Tensor> {
    let n = a.require_square("inverse")?;
    let m = DMatrix::from_row_slice(n, n, a.data());
    let inv = m.try_inverse().ok_or_else(|| Error::SingularScale(0.0))?;
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, inv[(i, j)]);
        }
    }
    Ok(out)
}

/// Solves `L x = b` by forward substitution.
pub fn solve_lower(l: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.require_square("solve_lower")?;
    crate::error::check_len("solve_lower rhs", b.len(), n)?;
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    Ok(x)
}

/// Inverse of a lower-triangular matrix; entries above the diagonal are exactly zero.
pub fn lower_triangular_inverse(l: &Tensor) -> Result<Tensor> {
    let n = l.require_square("lower_triangular_inverse")?;
    let mut inv = Tensor::zeros(&[n, n]);
    for j in 0..n {
        let d = l.get(j, j);
        if d == 0.0 {
            return Err(Error::SingularScale(0.0));
        }
        inv.set(j, j, 1.0 / d);
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l.get(i, k) * inv.get(k, j);
            }
            inv.set(i, j, s / l.get(i, i));
        }
    }
    Ok(inv)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    fn close(a: &Tensor, b: &Tensor, tol: f64) {
        assert!(a.max_abs_diff(b) <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&Tensor::from_rows(&[vec![4.0]]).unwrap()).unwrap();
        assert_eq!(l.data(), &[2.0]);
        close(&cholesky(&Tensor::identity(2)).unwrap(), &Tensor::identity(2), 0.0);
        let a = Tensor::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        // hand factorization: l21 = 0.5, l22 = sqrt(1 - 0.25)
        let expect = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.75f64.sqrt()]]).unwrap();
        close(&l, &expect, 1e-12);
        assert!((l.get(1, 1) - 0.866025).abs() < 1e-6);
        close(&l.matmul(&l.transpose()).unwrap(), &a, 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite(_))));
        let b = Tensor::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&b), Err(Error::NotPositiveDefinite(_))));
        assert!(cholesky(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn sym_inv_sqrt_examples() {
        close(&sym_inv_sqrt(&Tensor::identity(2)).unwrap(), &Tensor::identity(2), 1e-12);
        close(&sym_inv_sqrt(&Tensor::diag(&[4.0, 0.25])).unwrap(), &Tensor::diag(&[0.5, 2.0]), 1e-12);
        let w = sym_inv_sqrt(&Tensor::diag(&[2.0, 0.5])).unwrap();
        close(&w, &Tensor::diag(&[0.7071068, 1.4142136]), 1e-7);
        assert!(matches!(sym_inv_sqrt(&Tensor::diag(&[1.0, -1.0])), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(logdet(&Tensor::identity(3)).unwrap(), 0.0);
        assert!((logdet(&Tensor::diag(&[2.0, 2.0])).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((logdet(&Tensor::diag(&[2.0, 3.0])).unwrap() - 1.791759).abs() < 1e-6);
        assert!(logdet(&Tensor::diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn triangular_helpers() {
        let l = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 4.0]]).unwrap();
        let inv = lower_triangular_inverse(&l).unwrap();
        assert_eq!(inv.get(0, 1), 0.0);
        close(&l.matmul(&inv).unwrap(), &Tensor::identity(2), 1e-15);
        let x = solve_lower(&l, &[2.0, 9.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        close(&inverse(&l).unwrap(), &inv, 1e-15);
    }
}
