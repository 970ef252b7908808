//! Small fully connected networks used as basis functions, with exact
//! reverse-mode gradients.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix of
//! shape `out x in` in row-major order followed by the bias vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(z),
            Activation::Linear => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Linear => 1.0,
        }
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`]; `-inf` for zero.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, output_activation: Activation) -> Result<Self> {
        let spec = Self { input_dim, hidden, output_dim, output_activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!("all layer widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    /// `(rows, cols)` of each weight matrix.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|p| (p[1], p[0])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    fn activation(&self, layer: usize, layers: usize) -> Activation {
        if layer + 1 == layers {
            self.output_activation
        } else {
            Activation::Softplus
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self { values: vec![0.0; spec.num_params()] }
    }

    fn offsets(spec: &MlpSpec) -> Vec<usize> {
        let mut out = vec![0];
        for (r, c) in spec.layer_shapes() {
            let last = *out.last().unwrap();
            out.push(last + r * c + r);
        }
        out
    }

    /// Row-major weight matrix of `layer`.
    pub fn weight<'a>(&'a self, spec: &MlpSpec, layer: usize) -> &'a [f64] {
        let off = Self::offsets(spec)[layer];
        let (r, c) = spec.layer_shapes()[layer];
        &self.values[off..off + r * c]
    }

    pub fn bias<'a>(&'a self, spec: &MlpSpec, layer: usize) -> &'a [f64] {
        let off = Self::offsets(spec)[layer];
        let (r, c) = spec.layer_shapes()[layer];
        &self.values[off + r * c..off + r * c + r]
    }

    pub fn weight_mut<'a>(&'a mut self, spec: &MlpSpec, layer: usize) -> &'a mut [f64] {
        let off = Self::offsets(spec)[layer];
        let (r, c) = spec.layer_shapes()[layer];
        &mut self.values[off..off + r * c]
    }

    pub fn bias_mut<'a>(&'a mut self, spec: &MlpSpec, layer: usize) -> &'a mut [f64] {
        let off = Self::offsets(spec)[layer];
        let (r, c) = spec.layer_shapes()[layer];
        &mut self.values[off + r * c..off + r * c + r]
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(spec);
    for (layer, (rows, cols)) in spec.layer_shapes().into_iter().enumerate() {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        for w in params.weight_mut(spec, layer) {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    params
}

/// A network together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

/// Pre-activations and activations of every layer for one input.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[k + 1]` the output of layer `k`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(spec: MlpSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Self { spec, params }
    }

    pub fn from_params(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        if params.values.len() != spec.num_params() {
            return Err(Error::DimensionMismatch { expected: spec.num_params(), got: params.values.len() });
        }
        Ok(Self { spec, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.values.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_trace(x).acts.pop().unwrap_or_default())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.input_dim, got: x.len() });
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate value. Input length is not
    /// checked.
    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let shapes = self.spec.layer_shapes();
        let n_layers = shapes.len();
        let mut trace = Trace { acts: Vec::with_capacity(n_layers + 1), pre: Vec::with_capacity(n_layers) };
        trace.acts.push(x.to_vec());
        let mut off = 0;
        for (k, &(rows, cols)) in shapes.iter().enumerate() {
            let w = &self.params.values[off..off + rows * cols];
            let b = &self.params.values[off + rows * cols..off + rows * cols + rows];
            off += rows * cols + rows;
            let input = &trace.acts[k];
            let z: Vec<f64> = (0..rows)
                .map(|i| {
                    let row = &w[i * cols..(i + 1) * cols];
                    b[i] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let act = self.spec.activation(k, n_layers);
            trace.acts.push(z.iter().map(|&v| act.apply(v)).collect());
            trace.pre.push(z);
        }
        trace
    }

    /// First output for a scalar-valued basis.
    #[inline]
    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        self.forward_trace(x).output()[0]
    }

    /// Adds the gradient of `upstream . f(x)` with respect to the parameters
    /// into `grad_params` and returns the gradient with respect to `x`.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let shapes = self.spec.layer_shapes();
        let n_layers = shapes.len();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for &(r, c) in &shapes {
            offsets.push(off);
            off += r * c + r;
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for k in (0..n_layers).rev() {
            let (rows, cols) = shapes[k];
            let act = self.spec.activation(k, n_layers);
            for (d, &z) in delta.iter_mut().zip(&trace.pre[k]) {
                *d *= act.derivative(z);
            }
            let off = offsets[k];
            let input = &trace.acts[k];
            {
                let (gw, gb) = grad_params[off..off + rows * cols + rows].split_at_mut(rows * cols);
                for i in 0..rows {
                    let di = delta[i];
                    if di == 0.0 {
                        continue;
                    }
                    gb[i] += di;
                    for (g, &a) in gw[i * cols..(i + 1) * cols].iter_mut().zip(input) {
                        *g += di * a;
                    }
                }
            }
            let w = &self.params.values[off..off + rows * cols];
            let mut next = vec![0.0; cols];
            for i in 0..rows {
                let di = delta[i];
                if di == 0.0 {
                    continue;
                }
                for (n, &wij) in next.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                    *n += di * wij;
                }
            }
            delta = next;
        }
        delta
    }

    /// Accumulates `upstream * d f(x) / d params` for a scalar-output network.
    #[inline]
    pub fn accumulate_scalar_grad(&self, x: &[f64], upstream: f64, grad_params: &mut [f64]) {
        if upstream == 0.0 {
            return;
        }
        let trace = self.forward_trace(x);
        self.backward(&trace, &[upstream], grad_params);
    }
}

/// Evaluates the network; fails on a wrong input dimension.
pub fn mlp_forward(mlp: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    mlp.forward(x)
}

/// Gradient of `upstream . mlp(x)` with respect to the parameters and the input.
pub fn mlp_gradient(mlp: &Mlp, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    mlp.check_input(x)?;
    if upstream.len() != mlp.spec.output_dim {
        return Err(Error::DimensionMismatch { expected: mlp.spec.output_dim, got: upstream.len() });
    }
    let trace = mlp.forward_trace(x);
    let mut grad = vec![0.0; mlp.num_params()];
    let gx = mlp.backward(&trace, upstream, &mut grad);
    Ok((grad, gx))
}
