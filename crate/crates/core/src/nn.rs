//! Small dense feed-forward networks with hand-written backpropagation.
//!
//! Both the diffusion noise predictor and the DDPG actor/critic are plain
//! multilayer perceptrons, so one implementation serves all of them. Inputs
//! are row-major batches (`batch × features`).

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Silu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Silu => z * sigmoid(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer, `y = x·W + b` with `W` stored `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, limit: f64, rng: &mut Rng) -> Self {
        let weights = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..=limit));
        Dense {
            weights,
            bias: Array1::zeros(outputs),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Intermediate values kept by [`Mlp::forward_trace`] for backpropagation.
pub struct Trace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Parameter-shaped gradient (or optimizer moment) storage.
#[derive(Clone, Debug)]
pub struct Grads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|x| x * k);
            b.mapv_inplace(|x| x * k);
        }
    }

    /// Flattened view in the same order as [`Mlp::param`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

impl Mlp {
    /// Xavier-uniform initialisation with zero biases. When `final_scale` is
    /// given the last layer is drawn from `U(-final_scale, final_scale)`.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        final_scale: Option<f64>,
        rng: &mut Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let limit = match final_scale {
                    Some(s) if i + 1 == n => s,
                    _ => (6.0 / (io[0] + io[1]) as f64).sqrt(),
                };
                Dense::init(io[0], io[1], limit, rng)
            })
            .collect();
        Mlp {
            layers,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(i);
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            h = z;
        }
        h
    }

    pub fn forward_trace(&self, x: &Array2<f64>) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(i);
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = out;
        }
        Trace {
            inputs,
            pre,
            output: h,
        }
    }

    /// Backpropagate `grad_output` (d loss / d output, same shape as the
    /// output batch). Returns parameter gradients and d loss / d input.
    pub fn backward(&self, trace: &Trace, grad_output: &Array2<f64>) -> (Grads, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation_for(i);
            Zip::from(&mut delta)
                .and(&trace.pre[i])
                .for_each(|d, &z| *d *= act.derivative(z));
            let gw = trace.inputs[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[i].weights.t());
            grads.push((gw, gb));
            delta = next;
        }
        grads.reverse();
        (Grads { layers: grads }, delta)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            let nw = l.weights.len();
            if index < nw {
                let cols = l.weights.ncols();
                return (li, Some((index / cols, index % cols)), 0);
            }
            index -= nw;
            if index < l.bias.len() {
                return (li, None, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access: each layer's weights (row-major) then its bias.
    pub fn param(&self, index: usize) -> f64 {
        match self.locate(index) {
            (li, Some((r, c)), _) => self.layers[li].weights[[r, c]],
            (li, None, b) => self.layers[li].bias[b],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        match self.locate(index) {
            (li, Some((r, c)), _) => self.layers[li].weights[[r, c]] = value,
            (li, None, b) => self.layers[li].bias[b] = value,
        }
    }

    /// `self ← τ·online + (1−τ)·self`, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<(), ShapeMismatch> {
        if self.shapes() != online.shapes() {
            return Err(ShapeMismatch {
                expected: self.shapes(),
                found: online.shapes(),
            });
        }
        if tau == 1.0 {
            for (t, o) in self.layers.iter_mut().zip(&online.layers) {
                t.weights.assign(&o.weights);
                t.bias.assign(&o.bias);
            }
            return Ok(());
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weights)
                .and(&o.weights)
                .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
            Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("layer shapes differ: expected {expected:?}, found {found:?}")]
pub struct ShapeMismatch {
    pub expected: Vec<(usize, usize)>,
    pub found: Vec<(usize, usize)>,
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    /// Descend along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut())
            .zip(self.v.layers.iter_mut())
        {
            Zip::from(&mut layer.weights)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Serialized form of one layer: shape plus row-major weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub hidden: Activation,
    pub output: Activation,
    pub layers: Vec<LayerRecord>,
}

impl From<&Mlp> for MlpRecord {
    fn from(net: &Mlp) -> Self {
        MlpRecord {
            hidden: net.hidden,
            output: net.output,
            layers: net
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = String;

    fn try_from(rec: MlpRecord) -> Result<Self, Self::Error> {
        if rec.layers.is_empty() {
            return Err("network has no layers".into());
        }
        let mut layers = Vec::with_capacity(rec.layers.len());
        let mut prev: Option<usize> = None;
        for (i, l) in rec.layers.into_iter().enumerate() {
            if let Some(p) = prev {
                if p != l.rows {
                    return Err(format!("layer {i} expects {} inputs, previous emits {p}", l.rows));
                }
            }
            if l.bias.len() != l.cols {
                return Err(format!("layer {i} bias has {} entries, expected {}", l.bias.len(), l.cols));
            }
            let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                .map_err(|e| format!("layer {i}: {e}"))?;
            prev = Some(l.cols);
            layers.push(Dense {
                weights,
                bias: Array1::from(l.bias),
            });
        }
        Ok(Mlp {
            layers,
            hidden: rec.hidden,
            output: rec.output,
        })
    }
}
