//! Fully connected network with tanh hidden units and a linear output layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;
use crate::SimRng;

/// Layer sizes and a flat parameter vector. Each layer stores its weights
/// row-major (`out x in`) followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Dropout applied to hidden activations.
pub enum Dropout<'a> {
    Off,
    /// Draw fresh inverted-dropout masks.
    Sample { rate: f64, rng: &'a mut SimRng },
    /// Reuse masks, one per hidden layer, already scaled by `1 / (1 - rate)`.
    Fixed(&'a [Vec<f64>]),
}

/// Activations recorded by a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// Input to each layer (after dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// tanh outputs of each hidden layer before dropout.
    hidden: Vec<Vec<f64>>,
    /// Dropout masks applied to hidden layers; empty when off.
    pub masks: Vec<Vec<f64>>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Uniform fan-in initialization in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn new(sizes: &[usize], rng: &mut SimRng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[1] * w[0] + w[1] {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self, NeuralError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NeuralError::Checkpoint("invalid layer sizes".into()));
        }
        let expected = sizes
            .windows(2)
            .try_fold(0usize, |acc, w| w[1].checked_mul(w[0] + 1).and_then(|n| acc.checked_add(n)))
            .ok_or_else(|| NeuralError::Checkpoint("layer sizes overflow".into()))?;
        if expected != params.len() {
            return Err(NeuralError::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn hidden_layers(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn forward(&self, x: &[f64], mut dropout: Dropout<'_>) -> Result<(Vec<f64>, Tape), NeuralError> {
        if x.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut tape = Tape::default();
        let mut cur = x.to_vec();
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_out * n_in];
            let bias = &self.params[offset + n_out * n_in..offset + n_out * n_in + n_out];
            offset += n_out * n_in + n_out;
            let mut z: Vec<f64> = bias.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
            }
            tape.inputs.push(std::mem::take(&mut cur));
            if l == last {
                return Ok((z, tape));
            }
            let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
            let mask = match &mut dropout {
                Dropout::Off => None,
                Dropout::Sample { rate, rng } => {
                    let keep = 1.0 - *rate;
                    Some(
                        (0..n_out)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect::<Vec<f64>>(),
                    )
                }
                Dropout::Fixed(masks) => Some(
                    masks
                        .get(l)
                        .filter(|m| m.len() == n_out)
                        .ok_or(NeuralError::DimensionMismatch {
                            expected: n_out,
                            found: masks.get(l).map_or(0, |m| m.len()),
                        })?
                        .clone(),
                ),
            };
            cur = match &mask {
                Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => h.clone(),
            };
            tape.hidden.push(h);
            if let Some(m) = mask {
                tape.masks.push(m);
            }
        }
        unreachable!("loop returns at the output layer")
    }

    /// Forward pass without dropout.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.forward(x, Dropout::Off).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients of `sum(grad_out * output)` into
    /// `grads` and returns the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut delta = grad_out.to_vec();
        let mut offset = self.params.len();
        let n_layers = self.sizes.len() - 1;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_out * n_in + n_out;
            let input = &tape.inputs[l];
            let (gw, gb) = grads[offset..offset + n_out * n_in + n_out].split_at_mut(n_out * n_in);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let weights = &self.params[offset..offset + n_out * n_in];
            let mut down = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (g, w) in down.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *g += d * w;
                }
            }
            if l > 0 {
                let h = &tape.hidden[l - 1];
                let mask = tape.masks.get(l - 1);
                for (i, g) in down.iter_mut().enumerate() {
                    if let Some(m) = mask {
                        *g *= m[i];
                    }
                    *g *= 1.0 - h[i] * h[i];
                }
            }
            delta = down;
        }
        debug_assert_eq!(offset, 0);
        delta
    }

    /// Draws dropout masks for every hidden layer.
    pub fn sample_masks(&self, rate: f64, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let keep = 1.0 - rate;
        (0..self.hidden_layers())
            .map(|l| {
                (0..self.sizes[l + 1])
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        assert_eq!(self.sizes, online.sizes, "soft update needs equal shapes");
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

/// Adaptive moment estimation over a flat parameter vector.
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

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Largest relative difference between analytic and central-difference
/// gradients of `loss` over the parameter indices `which`.
pub fn max_relative_error<F>(params: &mut [f64], analytic: &[f64], which: &[usize], step: f64, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst = 0.0f64;
    for &i in which {
        let orig = params[i];
        params[i] = orig + step;
        let up = loss(params);
        params[i] = orig - step;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    worst
}
