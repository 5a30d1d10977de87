//! Autoregressive normalization of sequences:
//! `y_t = (x_t − μ(x_<t)) / σ(x_<t)` and its sequential inverse.

use crate::distributions::MIN_STD;
use crate::error::{check_len, Error, Result};
use crate::nn::Mlp;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum TemporalPredictor {
    /// Fixed mean and scale, no context.
    Constant { mean: Vec<f64>, std: Vec<f64> },
    /// `μ = x_{t-1}` with a fixed scale; with unit scale `y_t = Δx_t`.
    PreviousFrame { std: Vec<f64> },
    /// Networks over the last `context` frames, flattened oldest first.
    /// The scale network's outputs are used directly, clamped at the
    /// minimum standard deviation, so it should end in a positive activation.
    Learned { mean_net: Mlp, scale_net: Mlp, context: usize },
}

impl TemporalPredictor {
    pub fn previous_frame(dim: usize) -> Self {
        TemporalPredictor::PreviousFrame { std: vec![1.0; dim] }
    }

    pub fn context_len(&self) -> usize {
        match self {
            TemporalPredictor::Constant { .. } => 0,
            TemporalPredictor::PreviousFrame { .. } => 1,
            TemporalPredictor::Learned { context, .. } => *context,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TemporalPredictor::Constant { mean, .. } => mean.len(),
            TemporalPredictor::PreviousFrame { std } => std.len(),
            TemporalPredictor::Learned { mean_net, .. } => mean_net.output_dim(),
        }
    }

    /// Mean and scale for the next frame given the preceding `context_len()` frames.
    pub fn predict(&self, history: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("predictor history", history.len(), self.context_len())?;
        let (mean, std) = match self {
            TemporalPredictor::Constant { mean, std } => (mean.clone(), std.clone()),
            TemporalPredictor::PreviousFrame { std } => (history[0].to_vec(), std.clone()),
            TemporalPredictor::Learned { mean_net, scale_net, .. } => {
                let flat: Vec<f64> = history.iter().flat_map(|f| f.iter().copied()).collect();
                (mean_net.forward(&flat)?, scale_net.forward(&flat)?)
            }
        };
        check_len("predicted mean", mean.len(), self.dim())?;
        check_len("predicted scale", std.len(), self.dim())?;
        Ok((mean, std.into_iter().map(|s| s.max(MIN_STD)).collect()))
    }

    fn check_frames(&self, seq: &Tensor, what: &str) -> Result<()> {
        seq.require_matrix(what)?;
        check_len(&format!("{what} frame width"), seq.cols(), self.dim())
    }

    /// Normalizes a `T × M` sequence; returns the `(T − k) × M` weighted
    /// prediction errors for every frame after the first `k`.
    pub fn normalize(&self, x_seq: &Tensor) -> Result<Tensor> {
        self.check_frames(x_seq, "sequence")?;
        let k = self.context_len();
        let t = x_seq.rows();
        if t <= k {
            return Err(Error::DimensionMismatch(format!("sequence length {t} must exceed context length {k}")));
        }
        let m = self.dim();
        let mut out = Vec::with_capacity((t - k) * m);
        for step in k..t {
            let history: Vec<&[f64]> = (step - k..step).map(|i| x_seq.row(i)).collect();
            let (mean, std) = self.predict(&history)?;
            out.extend(x_seq.row(step).iter().zip(&mean).zip(&std).map(|((x, mu), s)| (x - mu) / s));
        }
        Tensor::matrix(t - k, m, out)
    }

    /// Rebuilds the full sequence from the `k`-frame prefix and the
    /// normalized frames: `x_t = μ(x_<t) + σ(x_<t) ⊙ y_t`.
    pub fn denormalize(&self, y_seq: &Tensor, x_prefix: &Tensor) -> Result<Tensor> {
        self.check_frames(y_seq, "normalized sequence")?;
        let k = self.context_len();
        let m = self.dim();
        if k > 0 {
            self.check_frames(x_prefix, "prefix")?;
        }
        check_len("prefix length", if k > 0 { x_prefix.rows() } else { 0 }, k)?;
        let mut frames: Vec<Vec<f64>> = (0..k).map(|i| x_prefix.row(i).to_vec()).collect();
        for step in 0..y_seq.rows() {
            let n = frames.len();
            let history: Vec<&[f64]> = frames[n - k..].iter().map(Vec::as_slice).collect();
            let (mean, std) = self.predict(&history)?;
            let x = y_seq.row(step).iter().zip(&mean).zip(&std).map(|((y, mu), s)| mu + s * y).collect();
            frames.push(x);
        }
        Tensor::matrix(frames.len(), m, frames.concat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::tensor::Rng;

    fn column(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn previous_frame_gives_differences() {
        let p = TemporalPredictor::previous_frame(1);
        assert_eq!(p.normalize(&column(&[1.0, 2.0, 3.0])).unwrap().data(), &[1.0, 1.0]);
        assert!(p.normalize(&column(&[4.0; 6])).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(p.normalize(&column(&[4.0])).is_err());
    }

    #[test]
    fn denormalize_examples() {
        let p = TemporalPredictor::previous_frame(1);
        let x = p.denormalize(&column(&[0.0; 4]), &column(&[5.0])).unwrap();
        assert_eq!(x.data(), &[5.0; 5]);
        let x = p.denormalize(&column(&[1.0, 1.0]), &column(&[1.0])).unwrap();
        assert_eq!(x.data(), &[1.0, 2.0, 3.0]);
        assert!(p.denormalize(&column(&[1.0]), &column(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn roundtrip_for_every_predictor() {
        let mut rng = Rng::new(21);
        let m = 3;
        let x = Tensor::matrix(12, m, rng.normal_vec(36)).unwrap();
        let learned = TemporalPredictor::Learned {
            mean_net: Mlp::random(&[2 * m, 5, m], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap(),
            scale_net: Mlp::random(&[2 * m, 5, m], &[Activation::Tanh, Activation::Softplus], &mut rng).unwrap(),
            context: 2,
        };
        let predictors = [
            TemporalPredictor::Constant { mean: vec![0.1, -0.2, 0.3], std: vec![2.0, 0.5, 1.0] },
            TemporalPredictor::PreviousFrame { std: vec![0.5, 1.5, 1.0] },
            learned,
        ];
        for p in &predictors {
            let k = p.context_len();
            let y = p.normalize(&x).unwrap();
            assert_eq!(y.rows(), 12 - k);
            let prefix = Tensor::matrix(k, m, x.data()[..k * m].to_vec()).unwrap();
            let back = p.denormalize(&y, &prefix).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-10, "{p:?}");
        }
    }

    #[test]
    fn frame_width_is_checked() {
        let p = TemporalPredictor::previous_frame(2);
        assert!(matches!(p.normalize(&column(&[1.0, 2.0])), Err(Error::DimensionMismatch(_))));
    }
}
