//! Gaussian densities, reparameterized sampling and closed-form KL.

use crate::error::{check_len, Error, Result};
use crate::tensor::{cholesky, solve_lower, Rng, Tensor};

/// Lower clamp on every standard deviation.
pub const MIN_STD: f64 = 1e-6;

/// `½ log 2π`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian with the scale stored as `log σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Partial derivatives of a scalar w.r.t. a diagonal Gaussian's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGrad {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGrad {
    pub fn zeros(n: usize) -> Self {
        Self { mean: vec![0.0; n], log_std: vec![0.0; n] }
    }
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        check_len("log_std", log_std.len(), mean.len())?;
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("Gaussian parameters must be finite".into()));
        }
        Ok(Self { mean, log_std })
    }

    pub fn from_std(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("standard deviations must be positive".into()));
        }
        Self::new(mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn standard(n: usize) -> Self {
        Self { mean: vec![0.0; n], log_std: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| clamp_std(l.exp())).collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_len("diag_log_prob input", x.len(), self.dim())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(self.std())
            .map(|((x, m), s)| {
                let r = (x - m) / s;
                -HALF_LN_2PI - s.ln() - 0.5 * r * r
            })
            .sum())
    }

    /// Gradient of `log_prob(x)` w.r.t. `x` and w.r.t. the parameters.
    pub fn log_prob_grad(&self, x: &[f64]) -> Result<(Vec<f64>, DiagGrad)> {
        check_len("diag_log_prob input", x.len(), self.dim())?;
        let n = self.dim();
        let mut gx = vec![0.0; n];
        let mut g = DiagGrad::zeros(n);
        for (i, s) in self.std().into_iter().enumerate() {
            let r = (x[i] - self.mean[i]) / s;
            gx[i] = -r / s;
            g.mean[i] = r / s;
            g.log_std[i] = r * r - 1.0;
        }
        Ok((gx, g))
    }

    /// `μ + σ ⊙ ε`.
    pub fn reparam_sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        check_len("reparam noise", eps.len(), self.dim())?;
        Ok(self.mean.iter().zip(self.std()).zip(eps).map(|((m, s), e)| m + s * e).collect())
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim());
        self.reparam_sample(&eps).expect("noise sized to dim")
    }

    /// Differential entropy.
    pub fn entropy(&self) -> f64 {
        self.std().iter().map(|s| 0.5 + HALF_LN_2PI + s.ln()).sum()
    }
}

#[inline]
fn clamp_std(s: f64) -> f64 {
    s.max(MIN_STD)
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_diag_diag(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    check_len("KL operands", q.dim(), p.dim())?;
    Ok(q.std()
        .iter()
        .zip(p.std())
        .zip(q.mean.iter().zip(&p.mean))
        .map(|((sq, sp), (mq, mp))| {
            let d = mq - mp;
            sp.ln() - sq.ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5
        })
        .sum())
}

/// Gradients of `KL(q ‖ p)` w.r.t. the parameters of `q` and of `p`.
pub fn kl_diag_diag_grad(q: &DiagGaussian, p: &DiagGaussian) -> Result<(DiagGrad, DiagGrad)> {
    check_len("KL operands", q.dim(), p.dim())?;
    let n = q.dim();
    let (sq, sp) = (q.std(), p.std());
    let mut gq = DiagGrad::zeros(n);
    let mut gp = DiagGrad::zeros(n);
    for i in 0..n {
        let d = q.mean[i] - p.mean[i];
        let vp = sp[i] * sp[i];
        let ratio = sq[i] * sq[i] / vp;
        gq.mean[i] = d / vp;
        gq.log_std[i] = ratio - 1.0;
        gp.mean[i] = -d / vp;
        gp.log_std[i] = 1.0 - ratio - d * d / vp;
    }
    Ok((gq, gp))
}

/// Monte-Carlo `E_q[log q − log p]` with its standard error, for any target density.
pub fn kl_monte_carlo(
    q: &DiagGaussian,
    log_p: impl Fn(&[f64]) -> f64,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let z = q.sample(rng);
        let v = q.log_prob(&z)? - log_p(&z);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Gaussian with a full covariance, kept alongside its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    mean: Vec<f64>,
    covariance: Tensor,
    chol: Tensor,
}

impl FullGaussian {
    pub fn new(mean: Vec<f64>, covariance: Tensor) -> Result<Self> {
        let n = covariance.require_square("covariance")?;
        check_len("mean", mean.len(), n)?;
        let chol = cholesky(&covariance)?;
        Ok(Self { mean, covariance: covariance.symmetrize(), chol })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Tensor {
        &self.covariance
    }

    pub fn cholesky_factor(&self) -> &Tensor {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_len("full_log_prob input", x.len(), self.dim())?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let white = solve_lower(&self.chol, &centered)?;
        let half_logdet: f64 = (0..self.dim()).map(|i| self.chol.get(i, i).ln()).sum();
        let quad: f64 = white.iter().map(|v| v * v).sum();
        Ok(-(self.dim() as f64) * HALF_LN_2PI - half_logdet - 0.5 * quad)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim());
        let mut out = self.chol.matvec(&eps).expect("factor is square");
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
        out
    }

    /// Diagonal Gaussian with the same marginal means and variances.
    pub fn marginals(&self) -> DiagGaussian {
        let log_std = (0..self.dim()).map(|i| 0.5 * self.covariance.get(i, i).ln()).collect();
        DiagGaussian { mean: self.mean.clone(), log_std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), var.iter().map(|v| 0.5 * v.ln()).collect()).unwrap()
    }

    #[test]
    fn diag_log_prob_examples() {
        assert!((g(&[0.0], &[1.0]).log_prob(&[0.0]).unwrap() + 0.918939).abs() < 1e-6);
        assert!((g(&[0.0], &[1.0]).log_prob(&[1.0]).unwrap() + 1.418939).abs() < 1e-6);
        // -log 2π - ½ log 4 - ½(1 + 1/4)
        let v = g(&[0.0, 0.0], &[1.0, 4.0]).log_prob(&[1.0, 2.0]).unwrap();
        let oracle = -2.0 * HALF_LN_2PI - 0.5 * 4f64.ln() - 0.5 * (1.0 + 1.0);
        assert!((v - oracle).abs() < 1e-12);
        assert!((v + 3.531024).abs() < 1e-6);
        assert!(g(&[0.0], &[1.0]).log_prob(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn full_log_prob_examples() {
        let f = FullGaussian::new(vec![0.0, 0.0], Tensor::identity(2)).unwrap();
        assert!((f.log_prob(&[0.0, 0.0]).unwrap() + 1.837877).abs() < 1e-6);
        let f = FullGaussian::new(vec![0.0, 0.0], Tensor::diag(&[1.0, 4.0])).unwrap();
        assert!((f.log_prob(&[1.0, 2.0]).unwrap() + 3.531024).abs() < 1e-6);
        let c = Tensor::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let f = FullGaussian::new(vec![0.3, -0.2], c).unwrap();
        let oracle = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 0.75f64.ln();
        assert!((f.log_prob(&[0.3, -0.2]).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle + 1.694036).abs() < 1e-6);
        assert!(matches!(
            FullGaussian::new(vec![0.0, 0.0], Tensor::diag(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn reparam_examples() {
        let d = g(&[1.0], &[4.0]);
        assert_eq!(d.reparam_sample(&[0.0]).unwrap(), vec![1.0]);
        assert_eq!(d.reparam_sample(&[0.5]).unwrap(), vec![2.0]);
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)[0]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var / 4.0 - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn kl_examples() {
        let p = g(&[0.0], &[1.0]);
        assert_eq!(kl_diag_diag(&p, &p).unwrap(), 0.0);
        assert!((kl_diag_diag(&g(&[1.0], &[1.0]), &p).unwrap() - 0.5).abs() < 1e-15);
        let v = kl_diag_diag(&g(&[0.0], &[4.0]), &p).unwrap();
        assert!((v - 0.5 * (4.0 - 1.0 - 4f64.ln())).abs() < 1e-15);
        assert!((v - 0.806853).abs() < 1e-6);
    }

    #[test]
    fn kl_gradient_matches_differences() {
        let q = DiagGaussian::new(vec![0.3, -1.0], vec![0.2, -0.4]).unwrap();
        let p = DiagGaussian::new(vec![-0.5, 0.1], vec![0.1, 0.3]).unwrap();
        let (gq, gp) = kl_diag_diag_grad(&q, &p).unwrap();
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> (DiagGaussian, DiagGaussian)| {
            let (a, b) = f(h);
            let (c, d) = f(-h);
            (kl_diag_diag(&a, &b).unwrap() - kl_diag_diag(&c, &d).unwrap()) / (2.0 * h)
        };
        for i in 0..2 {
            let d = fd(&|e| {
                let mut q2 = q.clone();
                q2.mean[i] += e;
                (q2, p.clone())
            });
            assert!((d - gq.mean[i]).abs() < 1e-8);
            let d = fd(&|e| {
                let mut q2 = q.clone();
                q2.log_std[i] += e;
                (q2, p.clone())
            });
            assert!((d - gq.log_std[i]).abs() < 1e-8);
            let d = fd(&|e| {
                let mut p2 = p.clone();
                p2.mean[i] += e;
                (q.clone(), p2)
            });
            assert!((d - gp.mean[i]).abs() < 1e-8);
            let d = fd(&|e| {
                let mut p2 = p.clone();
                p2.log_std[i] += e;
                (q.clone(), p2)
            });
            assert!((d - gp.log_std[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn log_prob_gradient_matches_differences() {
        let d = DiagGaussian::new(vec![0.5, -0.3], vec![0.1, -0.7]).unwrap();
        let x = [1.2, 0.4];
        let (gx, gp) = d.log_prob_grad(&x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut a = x;
            let mut b = x;
            a[i] += h;
            b[i] -= h;
            let fd = (d.log_prob(&a).unwrap() - d.log_prob(&b).unwrap()) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7);
            let mut dp = d.clone();
            dp.log_std[i] += h;
            let mut dm = d.clone();
            dm.log_std[i] -= h;
            let fd = (dp.log_prob(&x).unwrap() - dm.log_prob(&x).unwrap()) / (2.0 * h);
            assert!((fd - gp.log_std[i]).abs() < 1e-7);
            assert!((gp.mean[i] + gx[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn std_is_clamped() {
        let d = DiagGaussian::new(vec![0.0], vec![-100.0]).unwrap();
        assert_eq!(d.std(), vec![MIN_STD]);
        assert!(d.log_prob(&[0.0]).unwrap().is_finite());
    }
}
