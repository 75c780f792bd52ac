//! Minimal dense network used by the policy trainers: tanh hidden layers,
//! linear output, manual reverse-mode gradients, Adam. Everything is f64
//! and deterministic given the rng stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network. `weights[l]` is row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output layers");
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            // Xavier-uniform keeps tanh pre-activations in range.
            let scale = (6.0 / (n_in + n_out) as f64).sqrt();
            weights.push(
                (0..n_in * n_out)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                    .collect(),
            );
            biases.push(vec![0.0; n_out]);
        }
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_full(x).pop().unwrap()
    }

    /// Per-layer activations: index 0 is the input, the last entry the
    /// linear output. Hidden entries are post-tanh.
    pub fn forward_full(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.sizes[0], "input dimension mismatch");
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.weights.len() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = acts.last().unwrap();
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = 0.0;
                for i in 0..n_in {
                    acc += row[i] * prev[i];
                }
                z[o] += acc;
            }
            if l + 1 < self.weights.len() {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Accumulate dL/dparams into `grads` given dL/d(output) for the
    /// activations returned by [`Mlp::forward_full`].
    pub fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grads: &mut Grads) {
        let n_layers = self.weights.len();
        let mut delta = dout.to_vec(); // dL/dz at the current layer
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let a_prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                grads.biases[l][o] += d;
                let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row[i] += d * a_prev[i];
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut prev_delta = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        prev_delta[i] += d * row[i];
                    }
                }
                // a_prev is post-tanh here, so tanh' = 1 - a².
                for (pd, a) in prev_delta.iter_mut().zip(a_prev) {
                    *pd *= 1.0 - a * a;
                }
                delta = prev_delta;
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// FNV-1a over the exact parameter bit patterns.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for s in &self.sizes {
            eat(*s as u64);
        }
        for layer in self.weights.iter().chain(self.biases.iter()) {
            for v in layer {
                eat(v.to_bits());
            }
        }
        h
    }

    fn params_flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
    }
}

/// Gradient buffer shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for v in self.flat_mut() {
            *v = 0.0;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.flat_mut() {
            *v *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|layer| layer.iter().all(|v| v.is_finite()))
    }

    fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
    }

    fn flat(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|v| v.iter())
    }
}

/// Adam with bias correction; `step` descends along the supplied gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; net.n_params()],
            v: vec![0.0; net.n_params()],
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in net
            .params_flat_mut()
            .zip(grads.flat())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(11, &[0]);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = [0.3, -0.7, 1.1];
        // Loss = Σ c_k · out_k for fixed random c.
        let c = [0.9, -1.3];
        let acts = net.forward_full(&x);
        let mut grads = Grads::zeros_like(&net);
        net.backward(&acts, &c, &mut grads);

        let eps = 1e-6;
        let loss = |n: &Mlp| -> f64 {
            let out = n.forward(&x);
            c.iter().zip(&out).map(|(ci, oi)| ci * oi).sum()
        };
        for layer in 0..net.weights.len() {
            for idx in 0..net.weights[layer].len() {
                let mut plus = net.clone();
                plus.weights[layer][idx] += eps;
                let mut minus = net.clone();
                minus.weights[layer][idx] -= eps;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let analytic = grads.weights[layer][idx];
                assert!(
                    (numeric - analytic).abs() < 1e-6,
                    "layer {layer} idx {idx}: {numeric} vs {analytic}"
                );
            }
            for idx in 0..net.biases[layer].len() {
                let mut plus = net.clone();
                plus.biases[layer][idx] += eps;
                let mut minus = net.clone();
                minus.biases[layer][idx] -= eps;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                assert!((numeric - grads.biases[layer][idx]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adam_fits_a_small_regression() {
        let mut rng = stream(12, &[0]);
        let mut net = Mlp::new(&[2, 16, 1], &mut rng);
        let mut opt = Adam::new(&net, 1e-2);
        let data: Vec<([f64; 2], f64)> = vec![
            ([0.0, 0.0], 0.0),
            ([0.0, 1.0], 1.0),
            ([1.0, 0.0], 1.0),
            ([1.0, 1.0], 0.0),
        ];
        let mut grads = Grads::zeros_like(&net);
        for _ in 0..2000 {
            grads.reset();
            for (x, y) in &data {
                let acts = net.forward_full(x);
                let out = acts.last().unwrap()[0];
                net.backward(&acts, &[out - y], &mut grads);
            }
            grads.scale(1.0 / data.len() as f64);
            opt.step(&mut net, &grads);
        }
        let mse: f64 = data
            .iter()
            .map(|(x, y)| (net.forward(x)[0] - y).powi(2))
            .sum::<f64>()
            / data.len() as f64;
        assert!(mse < 1e-3, "xor regression failed to fit: mse {mse}");
    }

    #[test]
    fn serde_round_trip_preserves_outputs_and_digest() {
        let mut rng = stream(13, &[0]);
        let net = Mlp::new(&[4, 8, 3], &mut rng);
        let json = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
        assert_eq!(net.digest(), back.digest());
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(net.forward(&x), back.forward(&x));
    }
}
