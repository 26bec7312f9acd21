//! Dense layers, tanh MLPs and an Adam optimizer, all in f64.

use rand::Rng;

use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out_dim: usize,
    pub in_dim: usize,
    /// Row-major `[out_dim, in_dim]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform Glorot initialization, zero bias.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut Stream) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(out_dim, in_dim);
        for w in &mut layer.weight {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        y.copy_from_slice(&self.bias);
        // Observations are mostly zeros; iterate column-wise and skip them.
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += self.weight[j * self.in_dim + k] * xk;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_dim];
        self.forward(x, &mut y);
        y
    }

    /// Accumulates parameter gradients for one sample and returns dL/dx.
    pub fn backward(&self, x: &[f64], grad_y: &[f64], grads: &mut Linear) -> Vec<f64> {
        let mut grad_x = vec![0.0; self.in_dim];
        for (j, &g) in grad_y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[j] += g;
            let row = j * self.in_dim;
            for (k, &xk) in x.iter().enumerate() {
                grads.weight[row + k] += g * xk;
                grad_x[k] += g * self.weight[row + k];
            }
        }
        grad_x
    }

    pub fn params(&self) -> [&[f64]; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Stack of linear layers with tanh between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn init(dims: &[usize], rng: &mut Stream) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[1], w[0], rng))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.out_dim, l.in_dim))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.apply(&a);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = h;
        }
        a
    }

    pub fn forward_traced(&self, x: &[f64]) -> MlpTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.apply(&a);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut a, h));
        }
        MlpTrace { inputs, output: a }
    }

    /// Backpropagates `grad_out` through a traced pass, accumulating into `grads`.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&trace.inputs[i], &g, &mut grads.layers[i]);
            if i > 0 {
                // Input to layer i is tanh of layer i-1's pre-activation.
                for (gk, &ak) in g.iter_mut().zip(&trace.inputs[i]) {
                    *gk *= 1.0 - ak * ak;
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}
