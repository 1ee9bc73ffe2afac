//! Two-layer ReLU regression network and Adam.
//!
//! `out = w2 · relu(W1 x + b1) + b2`. Parameters live in one flat vector laid
//! out as `[W1 (row-major, hidden x input), b1, w2, b2]` so gradients and
//! optimizer state share the indexing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::normalize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    params: Vec<f64>,
}

/// Intermediate values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: f64,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            params: vec![0.0; hidden * input + 2 * hidden + 1],
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every layer.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden);
        let a1 = 1.0 / (input.max(1) as f64).sqrt();
        let a2 = 1.0 / (hidden.max(1) as f64).sqrt();
        let split = hidden * input + hidden;
        for (i, p) in net.params.iter_mut().enumerate() {
            let a = if i < split { a1 } else { a2 };
            *p = rng.random_range(-a..=a);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w2_offset(&self) -> usize {
        self.hidden * self.input + self.hidden
    }

    pub fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn forward_full(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input {
            return Err(Error::Shape {
                expected: self.input,
                actual: x.len(),
            });
        }
        let (w1, rest) = self.params.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden);
        let mut pre = Vec::with_capacity(self.hidden);
        let mut hidden = Vec::with_capacity(self.hidden);
        let mut out = b2[0];
        for j in 0..self.hidden {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let z = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let h = z.max(0.0);
            out += w2[j] * h;
            pre.push(z);
            hidden.push(h);
        }
        Ok(Forward { pre, hidden, out })
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_full(x)?.out)
    }

    /// Gradient of the output with respect to every parameter, scaled by
    /// `upstream` (the loss gradient at the output).
    pub fn backward(&self, x: &[f64], upstream: f64) -> Result<Vec<f64>> {
        let f = self.forward_full(x)?;
        let mut g = vec![0.0; self.params.len()];
        let w2o = self.w2_offset();
        for j in 0..self.hidden {
            g[w2o + j] = upstream * f.hidden[j];
            if f.pre[j] > 0.0 {
                let d = upstream * self.params[w2o + j];
                g[self.hidden * self.input + j] = d;
                let row = &mut g[j * self.input..(j + 1) * self.input];
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi = d * xi;
                }
            }
        }
        *g.last_mut().expect("non-empty") = upstream;
        Ok(g)
    }

    /// Gradient of the output with respect to the last layer `[w2, b2]`,
    /// i.e. `[relu(W1 x + b1), 1]`, scaled to unit length. Has
    /// `hidden + 1` entries.
    pub fn grad_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.last_layer_grad(x)?;
        normalize(&mut v);
        Ok(v)
    }

    /// Unnormalized `[relu(W1 x + b1), 1]`.
    pub fn last_layer_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.forward_full(x)?.hidden;
        v.push(1.0);
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
