//! Feed-forward networks with exact reverse-mode gradients.
//!
//! Each layer computes `y = act(W·x + b)` with `W` stored `out × in`.
//! The backward pass walks the layers in reverse:
//!
//! ```text
//! δ_pre = δ_out ⊙ act'(pre)        (elementwise activation rule)
//! ∂W    = δ_pre ⊗ x_in             (outer product with the layer input)
//! ∂b    = δ_pre
//! δ_in  = Wᵀ · δ_pre               (transposed weights carry the error down)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Logistic,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Identity => a,
            Activation::Tanh => a.tanh(),
            Activation::Logistic => logistic(a),
            Activation::Softplus => softplus(a),
        }
    }

    /// Derivative, given the pre-activation `a` and output `y = apply(a)`.
    #[inline]
    pub fn derivative(self, a: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Logistic => y * (1.0 - y),
            Activation::Softplus => logistic(a),
        }
    }
}

#[inline]
pub fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer parameter gradients plus the gradient w.r.t. the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Tensor::zeros(l.weight.shape())).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    /// `self += k · other` over parameters and input gradient.
    pub fn add_scaled(&mut self, other: &GradientBundle, k: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += k * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += k * y;
        }
    }

    /// Parameter gradients flattened in the same order as [`Mlp::params`].
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

struct ForwardTrace {
    /// inputs[l] is the input to layer l; the final entry is the network output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an Mlp needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.weight.require_matrix("layer weight")?;
            check_len(&format!("layer {i} bias"), l.bias.len(), l.weight.rows())?;
            if i > 0 {
                check_len(&format!("layer {i} input"), l.input_dim(), layers[i - 1].output_dim())?;
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized network; weights uniform in ±1/√fan_in, biases zero.
    /// `sizes` lists every width including input and output.
    pub fn random(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let s = 1.0 / (fan_in.max(1) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-s, s)).collect();
                Layer {
                    weight: Tensor::matrix(fan_out, fan_in, data).expect("sized buffer"),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    /// Single identity-activation layer computing `W·x + b`.
    pub fn affine(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        Self::new(vec![Layer { weight, bias, activation: Activation::Identity }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_len("mlp input", x.len(), self.input_dim())?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for layer in &self.layers {
            let input = inputs.last().expect("seeded with x");
            let mut a = layer.weight.matvec(input)?;
            for (ai, bi) in a.iter_mut().zip(&layer.bias) {
                *ai += bi;
            }
            let y = a.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(a);
            inputs.push(y);
        }
        Ok(ForwardTrace { inputs, pre })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.trace(x)?;
        Ok(t.inputs.pop().expect("non-empty trace"))
    }

    /// Vector-Jacobian product: gradients of `upstream · forward(x)`
    /// w.r.t. every parameter and `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientBundle> {
        check_len("mlp upstream", upstream.len(), self.output_dim())?;
        let t = self.trace(x)?;
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &t.inputs[l + 1];
            for ((d, a), y) in delta.iter_mut().zip(&t.pre[l]).zip(out) {
                *d *= layer.activation.derivative(*a, *y);
            }
            let input = &t.inputs[l];
            let mut gw = Tensor::zeros(layer.weight.shape());
            let cols = input.len();
            for (i, di) in delta.iter().enumerate() {
                for (g, xj) in gw.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(input) {
                    *g = di * xj;
                }
            }
            let next = layer.weight.tr_matvec(&delta)?;
            weights.push(gw);
            biases.push(std::mem::replace(&mut delta, next));
        }
        weights.reverse();
        biases.reverse();
        Ok(GradientBundle { weights, biases, input: delta })
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameters", flat.len(), self.num_params())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

/// Adam over a flat parameter vector; the optimizer ascends when given
/// gradients of an objective to maximize via [`Adam::ascend`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub learn_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learn_rate: f64) -> Self {
        Self { learn_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One step of gradient ascent on `params`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p += self.learn_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Worst relative error between [`Mlp::backward`] and central differences
/// of the scalar loss `½‖forward(x)‖²`, over every parameter and input
/// coordinate. Relative error is `|a − n| / max(1, |a|, |n|)`.
pub fn finite_diff_check(net: &Mlp, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let loss = |n: &Mlp, x: &[f64]| -> Result<f64> { Ok(0.5 * n.forward(x)?.iter().map(|y| y * y).sum::<f64>()) };
    let out = net.forward(x)?;
    let analytic = net.backward(x, &out)?;
    let rel = |a: f64, n: f64| (a - n).abs() / 1f64.max(a.abs()).max(n.abs());

    let mut worst: f64 = 0.0;
    let base = net.params();
    let grads = analytic.flat_params();
    let mut probe = net.clone();
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + h;
        probe.set_params(&p)?;
        let up = loss(&probe, x)?;
        p[i] = base[i] - h;
        probe.set_params(&p)?;
        let down = loss(&probe, x)?;
        p[i] = base[i];
        worst = worst.max(rel(grads[i], (up - down) / (2.0 * h)));
    }
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = loss(net, &xp)?;
        xp[i] = x[i] - h;
        let down = loss(net, &xp)?;
        xp[i] = x[i];
        worst = worst.max(rel(analytic.input[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}
