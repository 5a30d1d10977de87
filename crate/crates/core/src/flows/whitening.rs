//! Linear whitening fitted from data. The returned flow maps white noise
//! to data (`x = μ + B·u`); its inverse direction whitens.

use super::ConstantAffine;
use crate::error::{Error, Result};
use crate::tensor::{cholesky, lower_triangular_inverse, sym_eigen, sym_inv_sqrt, sym_sqrt, Tensor, EIGEN_FLOOR};

fn moments_checked(data: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    data.require_matrix("whitening data")?;
    let (n, m) = (data.rows(), data.cols());
    if n <= m {
        return Err(Error::DegenerateData(format!("need more samples than dims, got {n}x{m}")));
    }
    if !data.is_finite() {
        return Err(Error::DegenerateData("data has non-finite entries".into()));
    }
    let (mean, cov) = data.sample_moments()?;
    let (values, _) = sym_eigen(&cov)?;
    let max = values.last().copied().unwrap_or(0.0);
    let min = values.first().copied().unwrap_or(0.0);
    if max <= 0.0 || min <= EIGEN_FLOOR * max {
        return Err(Error::DegenerateData(format!(
            "sample covariance is rank deficient (eigenvalues {min:e}..{max:e})"
        )));
    }
    Ok((mean, cov))
}

/// ZCA: symmetric whitening matrix `Σ^{-1/2}`.
pub fn fit_zca(data: &Tensor) -> Result<ConstantAffine> {
    let (mean, cov) = moments_checked(data)?;
    let scale = sym_sqrt(&cov)?;
    let whitening = sym_inv_sqrt(&cov)?;
    ConstantAffine::with_inverse(mean, scale, whitening)
}

/// Cholesky whitening: lower-triangular whitening matrix `L⁻¹`, `Σ = L·Lᵀ`.
pub fn fit_cholesky_whitening(data: &Tensor) -> Result<ConstantAffine> {
    let (mean, cov) = moments_checked(data)?;
    let l = cholesky(&cov).map_err(|e| Error::DegenerateData(e.to_string()))?;
    let whitening = lower_triangular_inverse(&l)?;
    ConstantAffine::with_inverse(mean, l, whitening)
}
