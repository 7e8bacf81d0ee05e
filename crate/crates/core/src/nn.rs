//! Minimal feed-forward networks with hand-written backpropagation.
//!
//! All trainable parameters live in one flat vector; each layer owns a
//! contiguous slice of it. Convolution tensors are channel-major (CHW) and
//! always square.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Fully connected, weights row-major `[outputs][inputs]` then biases.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// 3x3 convolution with zero padding 1; weights `[out][in][3][3]` then biases.
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        size: usize,
        stride: usize,
    },
    Tanh {
        len: usize,
    },
    Sigmoid {
        len: usize,
    },
}

impl LayerSpec {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv3x3 { in_ch, size, .. } => in_ch * size * size,
            LayerSpec::Tanh { len } | LayerSpec::Sigmoid { len } => len,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv3x3 { out_ch, size, stride, .. } => {
                let o = conv_out_size(size, stride);
                out_ch * o * o
            }
            LayerSpec::Tanh { len } | LayerSpec::Sigmoid { len } => len,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv3x3 { in_ch, out_ch, .. } => out_ch * in_ch * 9 + out_ch,
            LayerSpec::Tanh { .. } | LayerSpec::Sigmoid { .. } => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv3x3 { in_ch, .. } => in_ch * 9,
            _ => 1,
        }
    }

    fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs,
            LayerSpec::Conv3x3 { in_ch, out_ch, .. } => out_ch * in_ch * 9,
            _ => 0,
        }
    }
}

pub fn conv_out_size(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass; `values[0]` is the input and
/// `values[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Trace {
    pub values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace always holds the input")
    }
}

impl Network {
    /// Zero-initialized network. Fails if consecutive layer shapes do not chain.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::arg("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::arg(format!("layer shapes do not chain: {:?} -> {:?}", pair[0], pair[1])));
            }
        }
        for l in &layers {
            if let LayerSpec::Conv3x3 { stride, size, in_ch, out_ch } = *l {
                if stride == 0 || size == 0 || in_ch == 0 || out_ch == 0 {
                    return Err(Error::arg(format!("degenerate conv layer {l:?}")));
                }
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        Ok(Network { layers, offsets, params: vec![0.0; total] })
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        if params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "network expects {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            for p in &mut self.params[off..off + l.weight_count()] {
                *p = rng.random_range(-bound..bound);
            }
            for p in &mut self.params[off + l.weight_count()..off + l.param_count()] {
                *p = 0.0;
            }
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(LayerSpec::output_len).unwrap_or(0)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for i in 0..self.layers.len() {
            x = self.layer_forward(i, &x);
        }
        x
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for i in 0..self.layers.len() {
            let next = self.layer_forward(i, &values[i]);
            values.push(next);
        }
        Trace { values }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut g = grad_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            g = self.layer_backward(i, &trace.values[i], &trace.values[i + 1], &g, grads);
        }
        g
    }

    fn layer_params(&self, i: usize) -> &[f64] {
        let off = self.offsets[i];
        &self.params[off..off + self.layers[i].param_count()]
    }

    fn layer_forward(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let p = self.layer_params(i);
        match self.layers[i] {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = p.split_at(inputs * outputs);
                (0..outputs)
                    .map(|o| {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                    })
                    .collect()
            }
            LayerSpec::Conv3x3 { in_ch, out_ch, size, stride } => conv_forward(p, x, in_ch, out_ch, size, stride),
            LayerSpec::Tanh { .. } => x.iter().map(|v| v.tanh()).collect(),
            LayerSpec::Sigmoid { .. } => x.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    fn layer_backward(&self, i: usize, x: &[f64], y: &[f64], g: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let off = self.offsets[i];
        let spec = self.layers[i];
        let p = self.layer_params(i);
        let gp = &mut grads[off..off + spec.param_count()];
        match spec {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = p.split_at(inputs * outputs);
                let (gw, gb) = gp.split_at_mut(inputs * outputs);
                let mut gx = vec![0.0; inputs];
                for o in 0..outputs {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for k in 0..inputs {
                        grow[k] += go * x[k];
                        gx[k] += go * row[k];
                    }
                }
                gx
            }
            LayerSpec::Conv3x3 { in_ch, out_ch, size, stride } => {
                conv_backward(p, gp, x, g, in_ch, out_ch, size, stride)
            }
            LayerSpec::Tanh { .. } => g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect(),
            LayerSpec::Sigmoid { .. } => g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect(),
        }
    }
}

fn conv_forward(p: &[f64], x: &[f64], in_ch: usize, out_ch: usize, size: usize, stride: usize) -> Vec<f64> {
    let os = conv_out_size(size, stride);
    let (w, b) = p.split_at(out_ch * in_ch * 9);
    let mut out = vec![0.0; out_ch * os * os];
    for o in 0..out_ch {
        for oy in 0..os {
            for ox in 0..os {
                let mut acc = b[o];
                for c in 0..in_ch {
                    let kbase = (o * in_ch + c) * 9;
                    let xbase = c * size * size;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= size as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= size as isize {
                                continue;
                            }
                            acc += w[kbase + ky * 3 + kx] * x[xbase + iy as usize * size + ix as usize];
                        }
                    }
                }
                out[(o * os + oy) * os + ox] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    p: &[f64],
    gp: &mut [f64],
    x: &[f64],
    g: &[f64],
    in_ch: usize,
    out_ch: usize,
    size: usize,
    stride: usize,
) -> Vec<f64> {
    let os = conv_out_size(size, stride);
    let nw = out_ch * in_ch * 9;
    let w = &p[..nw];
    let (gw, gb) = gp.split_at_mut(nw);
    let mut gx = vec![0.0; in_ch * size * size];
    for o in 0..out_ch {
        for oy in 0..os {
            for ox in 0..os {
                let go = g[(o * os + oy) * os + ox];
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                for c in 0..in_ch {
                    let kbase = (o * in_ch + c) * 9;
                    let xbase = c * size * size;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= size as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= size as isize {
                                continue;
                            }
                            let xi = xbase + iy as usize * size + ix as usize;
                            gw[kbase + ky * 3 + kx] += go * x[xi];
                            gx[xi] += go * w[kbase + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    gx
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(v))`, stable for large `|v|`.
#[inline]
pub fn log_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

/// One plain SGD step: `params -= lr * grads`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// Relative error used by the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
