use nalgebra::DMatrix;

use crate::distributions::{DiagGaussian, MIN_STD};
use crate::error::{check_len, Error, Result};
use crate::nn::{softplus, Activation, Mlp};
use crate::tensor::{inverse, lower_triangular_inverse, Tensor};

/// Scale matrices with `|det|` below this are treated as singular.
const SINGULAR_DET: f64 = 1e-300;

/// `v = α + B·u` with constant `α` and `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantAffine {
    shift: Vec<f64>,
    scale: Tensor,
    inverse_scale: Tensor,
    logdet: f64,
}

fn is_lower_triangular(m: &Tensor) -> bool {
    let n = m.rows();
    (0..n).all(|i| ((i + 1)..n).all(|j| m.get(i, j) == 0.0))
}

/// `log |det m|` from an LU factorization.
fn log_abs_det(m: &Tensor) -> Result<f64> {
    let n = m.rows();
    let lu = DMatrix::from_row_slice(n, n, m.data()).lu();
    let u = lu.u();
    let mut s = 0.0;
    for i in 0..n {
        s += u[(i, i)].abs().ln();
    }
    if !s.is_finite() || s < SINGULAR_DET.ln() {
        return Err(Error::SingularScale(s.exp()));
    }
    Ok(s)
}

impl ConstantAffine {
    pub fn new(shift: Vec<f64>, scale: Tensor) -> Result<Self> {
        let n = scale.require_square("flow scale")?;
        check_len("flow shift", shift.len(), n)?;
        let logdet = log_abs_det(&scale)?;
        let inverse_scale =
            if is_lower_triangular(&scale) { lower_triangular_inverse(&scale)? } else { inverse(&scale)? };
        Ok(Self { shift, scale, inverse_scale, logdet })
    }

    /// Builds the flow from a scale matrix and an inverse computed elsewhere
    /// (e.g. a spectral inverse square root).
    pub(crate) fn with_inverse(shift: Vec<f64>, scale: Tensor, inverse_scale: Tensor) -> Result<Self> {
        let n = scale.require_square("flow scale")?;
        check_len("flow shift", shift.len(), n)?;
        if inverse_scale.shape() != scale.shape() {
            return Err(Error::DimensionMismatch("inverse scale shape".into()));
        }
        let logdet = log_abs_det(&scale)?;
        Ok(Self { shift, scale, inverse_scale, logdet })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(vec![0.0; n], Tensor::identity(n)).expect("identity is invertible")
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &Tensor {
        &self.scale
    }

    /// `B⁻¹`; for a fitted whitening flow this is the whitening matrix.
    pub fn inverse_scale(&self) -> &Tensor {
        &self.inverse_scale
    }

    /// `log |det B|`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn forward(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len("flow input", u.len(), self.dim())?;
        let mut v = self.scale.matvec(u)?;
        for (vi, a) in v.iter_mut().zip(&self.shift) {
            *vi += a;
        }
        Ok((v, self.logdet))
    }

    pub fn inverse(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len("flow input", v.len(), self.dim())?;
        let centered: Vec<f64> = v.iter().zip(&self.shift).map(|(a, b)| a - b).collect();
        Ok((self.inverse_scale.matvec(&centered)?, -self.logdet))
    }
}

/// Affine step whose shift and scale are produced by networks of a
/// conditioning input. The scale is lower-triangular with a softplus
/// diagonal, so it is invertible for every input and `log|det|` is the sum
/// of the log-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedAffine {
    dim: usize,
    shift_net: Mlp,
    /// Outputs `dim` raw diagonal entries then the strict lower triangle row by row.
    scale_net: Mlp,
}

impl ConditionedAffine {
    pub fn new(dim: usize, shift_net: Mlp, scale_net: Mlp) -> Result<Self> {
        check_len("shift net output", shift_net.output_dim(), dim)?;
        check_len("scale net output", scale_net.output_dim(), dim + dim * (dim - 1) / 2)?;
        check_len("scale net input", scale_net.input_dim(), shift_net.input_dim())?;
        if scale_net.layers().last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::InvalidArgument("scale net must end in an identity layer".into()));
        }
        Ok(Self { dim, shift_net, scale_net })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_dim(&self) -> usize {
        self.shift_net.input_dim()
    }

    pub fn shift_net(&self) -> &Mlp {
        &self.shift_net
    }

    pub fn scale_net(&self) -> &Mlp {
        &self.scale_net
    }

    /// The constant affine step this flow applies for `context`.
    pub fn at(&self, context: &[f64]) -> Result<ConstantAffine> {
        let shift = self.shift_net.forward(context)?;
        let raw = self.scale_net.forward(context)?;
        let n = self.dim;
        let mut b = Tensor::zeros(&[n, n]);
        for i in 0..n {
            b.set(i, i, softplus(raw[i]).max(MIN_STD));
        }
        let mut k = n;
        for i in 0..n {
            for j in 0..i {
                b.set(i, j, raw[k]);
                k += 1;
            }
        }
        ConstantAffine::new(shift, b)
    }
}

/// One step of a flow stack.
#[derive(Debug, Clone, PartialEq)]
pub enum AffineFlow {
    Constant(ConstantAffine),
    Conditioned(ConditionedAffine),
}

impl From<ConstantAffine> for AffineFlow {
    fn from(f: ConstantAffine) -> Self {
        AffineFlow::Constant(f)
    }
}

impl AffineFlow {
    pub fn constant(shift: Vec<f64>, scale: Tensor) -> Result<Self> {
        Ok(AffineFlow::Constant(ConstantAffine::new(shift, scale)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            AffineFlow::Constant(f) => f.dim(),
            AffineFlow::Conditioned(f) => f.dim(),
        }
    }

    pub fn as_constant(&self) -> Option<&ConstantAffine> {
        match self {
            AffineFlow::Constant(f) => Some(f),
            AffineFlow::Conditioned(_) => None,
        }
    }

    fn resolve(&self, context: &[f64]) -> Result<std::borrow::Cow<'_, ConstantAffine>> {
        match self {
            AffineFlow::Constant(f) => Ok(std::borrow::Cow::Borrowed(f)),
            AffineFlow::Conditioned(f) => Ok(std::borrow::Cow::Owned(f.at(context)?)),
        }
    }

    /// `(α + B·u, log|det B|)`. Conditioned steps read `context`; constant steps ignore it.
    pub fn forward_with(&self, u: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.resolve(context)?.forward(u)
    }

    /// `(B⁻¹(v − α), −log|det B|)`.
    pub fn inverse_with(&self, v: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.resolve(context)?.inverse(v)
    }

    pub fn forward(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.forward_with(u, &[])
    }

    pub fn inverse(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.inverse_with(v, &[])
    }
}

/// Base Gaussian pushed through an ordered list of affine steps:
/// `v = f_n(… f_1(u))`, `u ~ base`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    steps: Vec<AffineFlow>,
    base: DiagGaussian,
}

impl FlowStack {
    pub fn new(steps: Vec<AffineFlow>, base: DiagGaussian) -> Result<Self> {
        for (i, s) in steps.iter().enumerate() {
            check_len(&format!("flow step {i} dimension"), s.dim(), base.dim())?;
        }
        Ok(Self { steps, base })
    }

    pub fn steps(&self) -> &[AffineFlow] {
        &self.steps
    }

    pub fn base(&self) -> &DiagGaussian {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Maps an observation back to the base space; returns `u` and the summed
    /// inverse log-determinants.
    pub fn normalize_with(&self, v: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut u = v.to_vec();
        let mut total = 0.0;
        for step in self.steps.iter().rev() {
            let (next, ld) = step.inverse_with(&u, context)?;
            u = next;
            total += ld;
        }
        Ok((u, total))
    }

    pub fn push_forward_with(&self, u: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut v = u.to_vec();
        let mut total = 0.0;
        for step in &self.steps {
            let (next, ld) = step.forward_with(&v, context)?;
            v = next;
            total += ld;
        }
        Ok((v, total))
    }

    /// Change of variables: `log p(v) = log p_base(u) − Σ log|det B_k|`.
    pub fn log_prob_with(&self, v: &[f64], context: &[f64]) -> Result<f64> {
        let (u, inv_logdet) = self.normalize_with(v, context)?;
        Ok(self.base.log_prob(&u)? + inv_logdet)
    }

    pub fn log_prob(&self, v: &[f64]) -> Result<f64> {
        self.log_prob_with(v, &[])
    }

    pub fn sample(&self, rng: &mut crate::tensor::Rng) -> Result<Vec<f64>> {
        let u = self.base.sample(rng);
        Ok(self.push_forward_with(&u, &[])?.0)
    }
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::distributions::FullGaussian;
    use crate::tensor::Rng;

    #[test]
    fn forward_examples() {
        let f = ConstantAffine::new(vec![1.0, 2.0], Tensor::identity(2)).unwrap();
        assert_eq!(f.forward(&[0.0, 0.0]).unwrap(), (vec![1.0, 2.0], 0.0));
        let f = ConstantAffine::new(vec![0.0, 0.0], Tensor::diag(&[2.0, 2.0])).unwrap();
        assert!((f.forward(&[0.0, 0.0]).unwrap().1 - 1.386294).abs() < 1e-6);
        let f = ConstantAffine::new(vec![1.0], Tensor::diag(&[2.0])).unwrap();
        let (v, ld) = f.forward(&[3.0]).unwrap();
        assert_eq!(v, vec![7.0]);
        assert!((ld - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn inverse_examples() {
        let f = ConstantAffine::new(vec![1.0], Tensor::diag(&[2.0])).unwrap();
        let (u, ld) = f.inverse(&[7.0]).unwrap();
        assert_eq!(u, vec![3.0]);
        assert!((ld + 2f64.ln()).abs() < 1e-15);
        let id = ConstantAffine::identity(3);
        assert_eq!(id.inverse(&[1.0, -2.0, 3.0]).unwrap(), (vec![1.0, -2.0, 3.0], 0.0));

        let mut rng = Rng::new(9);
        let b = Tensor::matrix(3, 3, rng.normal_vec(9)).unwrap().add(&Tensor::identity(3).scale(3.0)).unwrap();
        let f = ConstantAffine::new(rng.normal_vec(3), b).unwrap();
        let u = rng.normal_vec(3);
        let (v, ld) = f.forward(&u).unwrap();
        let (back, ild) = f.inverse(&v).unwrap();
        assert!(u.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
        assert_eq!(ld, -ild);
    }

    #[test]
    fn singular_scale_is_rejected() {
        let s = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(ConstantAffine::new(vec![0.0, 0.0], s), Err(Error::SingularScale(_))));
        assert!(matches!(ConstantAffine::new(vec![0.0], Tensor::diag(&[1e-320])), Err(Error::SingularScale(_))));
    }

    #[test]
    fn stack_log_prob_examples() {
        let base = DiagGaussian::standard(1);
        let id = FlowStack::new(vec![ConstantAffine::identity(1).into()], base.clone()).unwrap();
        assert!((id.log_prob(&[0.0]).unwrap() + 0.918939).abs() < 1e-6);

        let s =
            FlowStack::new(vec![AffineFlow::constant(vec![1.0], Tensor::diag(&[2.0])).unwrap()], base.clone()).unwrap();
        // v = 2u + 1 at v = 1 means u = 0
        let lp = s.log_prob(&[1.0]).unwrap();
        assert!((lp - (-0.918938533204672 - 2f64.ln())).abs() < 1e-12);
        assert!((lp + 1.612086).abs() < 1e-6);

        let shift =
            FlowStack::new(vec![AffineFlow::constant(vec![0.7], Tensor::identity(1)).unwrap()], base.clone()).unwrap();
        for v in [-1.0, 0.0, 2.5] {
            assert_eq!(shift.log_prob(&[v]).unwrap(), base.log_prob(&[v - 0.7]).unwrap());
        }
    }

    #[test]
    fn constant_flow_is_a_full_gaussian() {
        let alpha = vec![0.5, -1.0];
        let b = Tensor::from_rows(&[vec![1.5, 0.3], vec![-0.4, 0.8]]).unwrap();
        let stack =
            FlowStack::new(vec![AffineFlow::constant(alpha.clone(), b.clone()).unwrap()], DiagGaussian::standard(2))
                .unwrap();
        let full = FullGaussian::new(alpha, b.matmul(&b.transpose()).unwrap()).unwrap();
        for v in [[0.0, 0.0], [1.0, -2.0], [0.5, -1.0]] {
            assert!((stack.log_prob(&v).unwrap() - full.log_prob(&v).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn conditioned_flow_is_always_invertible() {
        let mut rng = Rng::new(4);
        let shift = Mlp::random(&[2, 4, 3], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let scale = Mlp::random(&[2, 4, 6], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let f = AffineFlow::Conditioned(ConditionedAffine::new(3, shift, scale).unwrap());
        for _ in 0..20 {
            let ctx = rng.normal_vec(2);
            let u = rng.normal_vec(3);
            let (v, ld) = f.forward_with(&u, &ctx).unwrap();
            let (back, ild) = f.inverse_with(&v, &ctx).unwrap();
            assert!(u.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
            assert!((ld + ild).abs() < 1e-15);
            let c = f.as_constant();
            assert!(c.is_none());
        }
        assert!(f.forward_with(&[0.0; 3], &[0.0]).is_err());
    }

    #[test]
    fn dimension_chain_is_checked() {
        let r = FlowStack::new(vec![ConstantAffine::identity(2).into()], DiagGaussian::standard(3));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }
}
