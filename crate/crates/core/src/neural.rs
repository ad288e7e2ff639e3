//! A small feed-forward network engine: 1-D convolutions, max pooling, dense
//! layers and ReLU, with hand-written reverse-mode gradients, Adam and soft
//! parameter blending.
//!
//! Parameters live in one flat list of tensors so that optimizer state,
//! gradients and snapshots all share the same indexing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major array of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Output length of a convolution or pooling window sweep.
pub fn window_output_len(len: usize, kernel: usize, stride: usize) -> usize {
    if len < kernel {
        0
    } else {
        (len - kernel) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        weight: usize,
        bias: usize,
    },
    Relu,
    /// Non-overlapping max pooling (stride equals the window).
    MaxPool1d {
        size: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
        weight: usize,
        bias: usize,
    },
}

/// Builder description of a layer, before parameters are allocated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv1d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool1d(usize),
    Flatten,
    Dense(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_channels: usize,
    input_len: usize,
    layers: Vec<Layer>,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Per-layer values saved on the forward pass for the backward pass.
struct Trace {
    inputs: Vec<Vec<f64>>,
    shapes: Vec<(usize, usize)>,
    argmax: Vec<Vec<usize>>,
}

impl Network {
    /// Allocates a network of the given layers with zero parameters.
    pub fn new(input_channels: usize, input_len: usize, specs: &[LayerSpec]) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut names = Vec::new();
        let mut params = Vec::new();
        let (mut channels, mut len) = (input_channels, input_len);
        let mut flat = false;
        let (mut n_conv, mut n_dense) = (0, 0);
        for spec in specs {
            match *spec {
                LayerSpec::Conv1d {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if flat {
                        return Err(Error::Shape("convolution after flatten".into()));
                    }
                    let out_len = window_output_len(len, kernel, stride);
                    if out_len == 0 || stride == 0 {
                        return Err(Error::Shape(format!(
                            "kernel {kernel} stride {stride} does not fit length {len}"
                        )));
                    }
                    n_conv += 1;
                    names.push(format!("conv{n_conv}.weight"));
                    names.push(format!("conv{n_conv}.bias"));
                    params.push(Tensor::zeros(&[out_channels, channels, kernel]));
                    params.push(Tensor::zeros(&[out_channels]));
                    layers.push(Layer::Conv1d {
                        in_channels: channels,
                        out_channels,
                        kernel,
                        stride,
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    });
                    channels = out_channels;
                    len = out_len;
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::MaxPool1d(size) => {
                    if flat || size == 0 || len < size {
                        return Err(Error::Shape(format!("pool {size} does not fit length {len}")));
                    }
                    len = window_output_len(len, size, size);
                    layers.push(Layer::MaxPool1d { size });
                }
                LayerSpec::Flatten => {
                    flat = true;
                    len *= channels;
                    channels = 1;
                    layers.push(Layer::Flatten);
                }
                LayerSpec::Dense(outputs) => {
                    let inputs = channels * len;
                    n_dense += 1;
                    names.push(format!("dense{n_dense}.weight"));
                    names.push(format!("dense{n_dense}.bias"));
                    params.push(Tensor::zeros(&[outputs, inputs]));
                    params.push(Tensor::zeros(&[outputs]));
                    layers.push(Layer::Dense {
                        inputs,
                        outputs,
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    });
                    flat = true;
                    channels = 1;
                    len = outputs;
                }
            }
        }
        Ok(Self {
            input_channels,
            input_len,
            layers,
            names,
            params,
        })
    }

    /// Q-network over a 512-tick price window with one output per action.
    pub fn q_network() -> Self {
        Self::new(
            1,
            Q_INPUT_LEN,
            &[
                LayerSpec::Conv1d {
                    out_channels: 16,
                    kernel: 8,
                    stride: 4,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool1d(4),
                LayerSpec::Conv1d {
                    out_channels: 32,
                    kernel: 4,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool1d(2),
                LayerSpec::Flatten,
                LayerSpec::Dense(256),
                LayerSpec::Relu,
                LayerSpec::Dense(128),
                LayerSpec::Relu,
                LayerSpec::Dense(64),
                LayerSpec::Relu,
                LayerSpec::Dense(Q_OUTPUTS),
            ],
        )
        .expect("Q-network layer stack is consistent")
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &self.layers {
            let (w, fan_in, fan_out) = match *layer {
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    weight,
                    ..
                } => (weight, in_channels * kernel, out_channels * kernel),
                Layer::Dense {
                    inputs,
                    outputs,
                    weight,
                    ..
                } => (weight, inputs, outputs),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut self.params[w].data {
                *x = rng.random_range(-limit..limit);
            }
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_len
    }

    pub fn output_len(&self) -> usize {
        match self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense { outputs, .. } => Some(*outputs),
            _ => None,
        }) {
            Some(n) => n,
            None => self.shapes().last().map(|(c, l)| c * l).unwrap_or(0),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Activation shape `(channels, length)` after each layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut shape = (self.input_channels, self.input_len);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = match *layer {
                Layer::Conv1d {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => (out_channels, window_output_len(shape.1, kernel, stride)),
                Layer::Relu => shape,
                Layer::MaxPool1d { size } => (shape.0, window_output_len(shape.1, size, size)),
                Layer::Flatten => (1, shape.0 * shape.1),
                Layer::Dense { outputs, .. } => (1, outputs),
            };
            out.push(shape);
        }
        out
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "expected input of length {}, got {}",
                self.input_len(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input, None))
    }

    fn run(&self, input: &[f64], mut trace: Option<&mut Trace>) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut shape = (self.input_channels, self.input_len);
        for layer in &self.layers {
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(x.clone());
                t.shapes.push(shape);
            }
            let (y, next_shape) = match *layer {
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    weight,
                    bias,
                } => {
                    let len = shape.1;
                    let out_len = window_output_len(len, kernel, stride);
                    let w = &self.params[weight].data;
                    let b = &self.params[bias].data;
                    let mut y = vec![0.0; out_channels * out_len];
                    for o in 0..out_channels {
                        let row = &mut y[o * out_len..(o + 1) * out_len];
                        row.iter_mut().for_each(|v| *v = b[o]);
                        for i in 0..in_channels {
                            let wk = &w[(o * in_channels + i) * kernel..][..kernel];
                            let xi = &x[i * len..(i + 1) * len];
                            for (t, out) in row.iter_mut().enumerate() {
                                let window = &xi[t * stride..t * stride + kernel];
                                *out += dot(wk, window);
                            }
                        }
                    }
                    (y, (out_channels, out_len))
                }
                Layer::Relu => {
                    let y = x.iter().map(|&v| v.max(0.0)).collect();
                    (y, shape)
                }
                Layer::MaxPool1d { size } => {
                    let (c, len) = shape;
                    let out_len = len / size;
                    let mut y = vec![0.0; c * out_len];
                    let mut arg = vec![0usize; c * out_len];
                    for ch in 0..c {
                        for t in 0..out_len {
                            let start = ch * len + t * size;
                            let mut best = start;
                            for j in start + 1..start + size {
                                if x[j] > x[best] {
                                    best = j;
                                }
                            }
                            y[ch * out_len + t] = x[best];
                            arg[ch * out_len + t] = best;
                        }
                    }
                    if let Some(t) = trace.as_deref_mut() {
                        t.argmax.push(arg);
                    }
                    (y, (c, out_len))
                }
                Layer::Flatten => {
                    let n = x.len();
                    (std::mem::take(&mut x), (1, n))
                }
                Layer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => {
                    let w = &self.params[weight].data;
                    let b = &self.params[bias].data;
                    let y = (0..outputs)
                        .map(|o| b[o] + dot(&w[o * inputs..(o + 1) * inputs], &x))
                        .collect();
                    (y, (1, outputs))
                }
            };
            x = y;
            shape = next_shape;
        }
        x
    }

    /// Adds to `grads` the gradient of `weight * (q[action] - target)^2` and
    /// returns the unweighted squared error.
    pub fn accumulate_gradient(
        &self,
        input: &[f64],
        action: usize,
        target: f64,
        weight: f64,
        grads: &mut [Tensor],
    ) -> Result<f64> {
        self.check_input(input)?;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            shapes: Vec::with_capacity(self.layers.len()),
            argmax: Vec::new(),
        };
        let q = self.run(input, Some(&mut trace));
        if action >= q.len() {
            return Err(Error::Shape(format!("action {action} out of {} outputs", q.len())));
        }
        let residual = q[action] - target;
        let mut dy = vec![0.0; q.len()];
        dy[action] = 2.0 * weight * residual;
        self.backprop(&trace, dy, grads);
        Ok(residual * residual)
    }

    /// Gradient of `sum_k upstream[k] * output[k]` with respect to every
    /// parameter.
    pub fn vector_jacobian(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        let mut trace = Trace {
            inputs: Vec::new(),
            shapes: Vec::new(),
            argmax: Vec::new(),
        };
        let out = self.run(input, Some(&mut trace));
        if upstream.len() != out.len() {
            return Err(Error::Shape("upstream gradient length".into()));
        }
        let mut grads = self.zero_grads();
        self.backprop(&trace, upstream.to_vec(), &mut grads);
        Ok(grads)
    }

    fn backprop(&self, trace: &Trace, mut dy: Vec<f64>, grads: &mut [Tensor]) {
        let mut pool_idx = trace.argmax.len();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[li];
            let shape = trace.shapes[li];
            dy = match *layer {
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    weight,
                    bias,
                } => {
                    let len = shape.1;
                    let out_len = window_output_len(len, kernel, stride);
                    let w = &self.params[weight].data;
                    let mut dx = vec![0.0; in_channels * len];
                    for o in 0..out_channels {
                        let g = &dy[o * out_len..(o + 1) * out_len];
                        grads[bias].data[o] += g.iter().sum::<f64>();
                        for i in 0..in_channels {
                            let base = (o * in_channels + i) * kernel;
                            let xi = &x[i * len..(i + 1) * len];
                            let dxi = &mut dx[i * len..(i + 1) * len];
                            let wk = &w[base..base + kernel];
                            let gw = &mut grads[weight].data[base..base + kernel];
                            for (t, &gt) in g.iter().enumerate() {
                                if gt == 0.0 {
                                    continue;
                                }
                                let s = t * stride;
                                for k in 0..kernel {
                                    gw[k] += gt * xi[s + k];
                                    dxi[s + k] += gt * wk[k];
                                }
                            }
                        }
                    }
                    dx
                }
                Layer::Relu => dy.iter().zip(x).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect(),
                Layer::MaxPool1d { .. } => {
                    pool_idx -= 1;
                    let mut dx = vec![0.0; x.len()];
                    for (g, &j) in dy.iter().zip(&trace.argmax[pool_idx]) {
                        dx[j] += g;
                    }
                    dx
                }
                Layer::Flatten => dy,
                Layer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => {
                    let w = &self.params[weight].data;
                    let mut dx = vec![0.0; inputs];
                    for o in 0..outputs {
                        let g = dy[o];
                        grads[bias].data[o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        let row = &w[o * inputs..(o + 1) * inputs];
                        let grow = &mut grads[weight].data[o * inputs..(o + 1) * inputs];
                        for i in 0..inputs {
                            grow[i] += g * x[i];
                            dx[i] += g * row[i];
                        }
                    }
                    dx
                }
            };
        }
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(&p.shape)).collect()
    }

    /// Mean-squared error over a batch on the chosen action outputs, with its
    /// gradient.
    pub fn batch_gradient(&self, inputs: &[&[f64]], actions: &[usize], targets: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        if inputs.len() != actions.len() || inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::Shape("batch components differ in length".into()));
        }
        let weight = 1.0 / inputs.len() as f64;
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for ((x, &a), &y) in inputs.iter().zip(actions).zip(targets) {
            loss += self.accumulate_gradient(x, a, y, weight, &mut grads)?;
        }
        Ok((loss * weight, grads))
    }

    /// `self <- tau * online + (1 - tau) * self`, elementwise.
    pub fn soft_update(&mut self, online: &Network, tau: f64) -> Result<()> {
        self.check_same_shape(online)?;
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            for (a, &b) in t.data.iter_mut().zip(&o.data) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Network) -> Result<()> {
        if self.params.len() != other.params.len()
            || self.params.iter().zip(&other.params).any(|(a, b)| a.shape != b.shape)
        {
            return Err(Error::Shape("networks have different parameter shapes".into()));
        }
        Ok(())
    }

    /// All parameters concatenated in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn snapshot(&self) -> WeightSnapshot {
        WeightSnapshot {
            layers: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    values: t.data.clone(),
                })
                .collect(),
        }
    }

    /// Overwrites the parameters from a snapshot with matching names and shapes.
    pub fn load_snapshot(&mut self, snapshot: &WeightSnapshot) -> Result<()> {
        if snapshot.layers.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "snapshot has {} tensors, network has {}",
                snapshot.layers.len(),
                self.params.len()
            )));
        }
        for ((name, param), layer) in self.names.iter().zip(&self.params).zip(&snapshot.layers) {
            if *name != layer.name || param.shape != layer.shape || layer.values.len() != param.len() {
                return Err(Error::Shape(format!(
                    "snapshot tensor `{}` {:?} does not match `{name}` {:?}",
                    layer.name, layer.shape, param.shape
                )));
            }
        }
        for (param, layer) in self.params.iter_mut().zip(&snapshot.layers) {
            param.data.copy_from_slice(&layer.values);
        }
        Ok(())
    }
}

pub const Q_INPUT_LEN: usize = 512;
pub const Q_OUTPUTS: usize = 7;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Portable weight dump: one entry per parameter tensor, row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub layers: Vec<NamedTensor>,
}

impl WeightSnapshot {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values.iter().copied()).collect()
    }
}

/// Adam optimizer state with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(network: &Network, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: network.zero_grads(),
            second: network.zero_grads(),
        }
    }

    pub fn apply(&mut self, network: &mut Network, grads: &[Tensor]) -> Result<()> {
        self.apply_to(network.params_mut(), grads)
    }

    pub fn apply_to(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len()
            || params.len() != self.first.len()
            || params
                .iter()
                .zip(grads)
                .zip(&self.first)
                .any(|((p, g), m)| p.shape != g.shape || p.shape != m.shape)
        {
            return Err(Error::Shape("optimizer, parameter and gradient shapes differ".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Network {
        let mut net = Network::new(
            1,
            13,
            &[
                LayerSpec::Conv1d {
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool1d(2),
                LayerSpec::Flatten,
                LayerSpec::Dense(4),
                LayerSpec::Relu,
                LayerSpec::Dense(3),
            ],
        )
        .unwrap();
        net.init_uniform(&mut ChaCha8Rng::seed_from_u64(9));
        net
    }

    #[test]
    fn q_network_shape_algebra() {
        let net = Network::q_network();
        let shapes = net.shapes();
        assert_eq!(shapes[0], (16, 127));
        assert_eq!(shapes[2], (16, 31));
        assert_eq!(shapes[3], (32, 14));
        assert_eq!(shapes[5], (32, 7));
        assert_eq!(shapes[6], (1, 224));
        assert_eq!(*shapes.last().unwrap(), (1, 7));
        assert_eq!(net.input_len(), 512);
        assert_eq!(net.output_len(), 7);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::q_network();
        let input: Vec<f64> = (0..512).map(|i| (i as f64).sin()).collect();
        assert_eq!(net.forward(&input).unwrap(), vec![0.0; 7]);
    }

    #[test]
    fn wrong_input_length_rejected() {
        let net = Network::q_network();
        assert!(matches!(net.forward(&[0.0; 511]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let net = tiny();
        let x: Vec<f64> = (0..13).map(|i| i as f64 * 0.1 - 0.4).collect();
        let q = net.forward(&x).unwrap();
        let mut grads = net.zero_grads();
        let loss = net.accumulate_gradient(&x, 1, q[1], 1.0, &mut grads).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradient_scales_with_residual() {
        let net = tiny();
        let x: Vec<f64> = (0..13).map(|i| (i as f64 * 0.7).cos()).collect();
        let q = net.forward(&x).unwrap();
        let mut g1 = net.zero_grads();
        let mut g3 = net.zero_grads();
        net.accumulate_gradient(&x, 0, q[0] - 0.5, 1.0, &mut g1).unwrap();
        net.accumulate_gradient(&x, 0, q[0] - 1.5, 1.0, &mut g3).unwrap();
        for (a, b) in g1.iter().zip(&g3) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((3.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_update_blends() {
        let mut target = tiny();
        let mut online = tiny();
        target.params_mut()[0].fill(2.0);
        online.params_mut()[0].fill(4.0);
        let mut half = target.clone();
        half.soft_update(&online, 0.5).unwrap();
        assert!(half.params()[0].data.iter().all(|&v| v == 3.0));
        let mut none = target.clone();
        none.soft_update(&online, 0.0).unwrap();
        assert_eq!(none, target);
        let mut full = target.clone();
        full.soft_update(&online, 1.0).unwrap();
        assert_eq!(full.params(), online.params());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut net = tiny();
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-3);
        let zeros = net.zero_grads();
        adam.apply(&mut net, &zeros).unwrap();
        assert_eq!(net.params(), before.params());
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_constant_gradient_closed_form() {
        // With bias correction m_hat = g and v_hat = g^2 exactly, so every step
        // moves the parameter by lr * g / (|g| + eps).
        let mut p = vec![Tensor::from_vec(&[1], vec![1.0]).unwrap()];
        let g = vec![Tensor::from_vec(&[1], vec![0.3]).unwrap()];
        let lr = 1e-3;
        let mut adam = AdamState {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![Tensor::zeros(&[1])],
            second: vec![Tensor::zeros(&[1])],
        };
        let mut expected = 1.0;
        for _ in 0..2000 {
            let before = p[0].data[0];
            adam.apply_to(&mut p, &g).unwrap();
            let step = before - p[0].data[0];
            expected -= lr * 0.3 / (0.3 + 1e-8);
            assert!((step - lr).abs() < 1e-9, "step {step}");
        }
        assert!((p[0].data[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn snapshot_round_trip() {
        let net = tiny();
        let json = serde_json::to_string(&net.snapshot()).unwrap();
        let snap: WeightSnapshot = serde_json::from_str(&json).unwrap();
        let mut other = Network::new(
            1,
            13,
            &[
                LayerSpec::Conv1d {
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool1d(2),
                LayerSpec::Flatten,
                LayerSpec::Dense(4),
                LayerSpec::Relu,
                LayerSpec::Dense(3),
            ],
        )
        .unwrap();
        other.load_snapshot(&snap).unwrap();
        assert_eq!(other.params(), net.params());
        assert!(Network::q_network().load_snapshot(&snap).is_err());
    }
}
