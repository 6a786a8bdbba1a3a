//! Dense feedforward network with relu hidden layers and an identity output
//! layer. All arithmetic is f64; weights are row-major `(out, in)` per layer.

use crate::error::{Error, Result};
use crate::seeding::TaskRng;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// weights[l] has layer_sizes[l+1] * layer_sizes[l] entries, row-major.
    weights: Vec<Vec<f64>>,
    /// biases[l] has layer_sizes[l+1] entries.
    biases: Vec<Vec<f64>>,
}

/// Per-parameter gradient accumulators mirroring an [`Mlp`]'s shape.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Add this buffer's entries into a flat slice, layer by layer
    /// (weights then biases), starting at `offset`. Returns the number of
    /// entries consumed.
    pub fn add_into_flat(&self, out: &mut [f64], offset: usize) -> usize {
        let mut k = offset;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for &g in w {
                out[k] += g;
                k += 1;
            }
            for &g in b {
                out[k] += g;
                k += 1;
            }
        }
        k - offset
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// All-zero network (forward returns the output bias for any input).
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Xavier (Glorot) uniform initialization: weights drawn from
    /// [-b, b] with b = sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn xavier(layer_sizes: &[usize], rng: &mut TaskRng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in net.weights[l].iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Width of the last hidden layer (input width of the output layer).
    pub fn last_hidden_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn layer_biases(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn layer_weights_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.weights[l]
    }

    pub fn layer_biases_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.biases[l]
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Parameters of the output layer only (weights + biases).
    pub fn last_layer_param_count(&self) -> usize {
        self.output_dim() * self.last_hidden_dim() + self.output_dim()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "mlp forward input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Forward pass. Hidden activations are max(0, .), output is linear.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        for l in 0..self.num_layers() {
            cur = self.apply_layer(l, &cur, l + 1 < self.num_layers());
        }
        Ok(cur)
    }

    /// Forward pass keeping every post-activation: result[0] is the input,
    /// result[l + 1] the output of layer l.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(input.to_vec());
        for l in 0..self.num_layers() {
            let next = self.apply_layer(l, acts.last().unwrap(), l + 1 < self.num_layers());
            acts.push(next);
        }
        Ok(acts)
    }

    fn apply_layer(&self, l: usize, input: &[f64], relu: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.weights[l];
        let mut out = self.biases[l].clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = 0.0;
            for (x, wv) in input.iter().zip(row) {
                acc += x * wv;
            }
            *out_v += acc;
            if relu && *out_v < 0.0 {
                *out_v = 0.0;
            }
        }
        debug_assert_eq!(out.len(), n_out);
        out
    }

    /// Backpropagate `output_grad` (dL/d output) through the network.
    /// Returns per-parameter gradients and the gradient with respect to the
    /// input. The relu subgradient at exactly 0 is 0.
    pub fn backward(
        &self,
        input: &[f64],
        output_grad: &[f64],
    ) -> Result<(GradientBuffer, Vec<f64>)> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape {
                context: "mlp backward output_grad",
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        let acts = self.forward_trace(input)?;
        let mut grads = GradientBuffer::zeros_like(self);
        let mut g = output_grad.to_vec();
        for l in (0..self.num_layers()).rev() {
            let n_in = self.layer_sizes[l];
            let a_in = &acts[l];
            for (o, &go) in g.iter().enumerate() {
                grads.biases[l][o] += go;
                let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for (gw, &x) in row.iter_mut().zip(a_in) {
                    *gw += go * x;
                }
            }
            // dL/d a_in = W^T g, masked by the relu derivative when a_in is
            // itself a hidden activation (l > 0).
            let mut g_in = vec![0.0; n_in];
            let w = &self.weights[l];
            for (o, &go) in g.iter().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                for (gi, &wv) in g_in.iter_mut().zip(row) {
                    *gi += go * wv;
                }
            }
            if l > 0 {
                for (gi, &a) in g_in.iter_mut().zip(a_in) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = g_in;
        }
        Ok((grads, g))
    }

    /// Append all parameters (per layer: weights row-major, then biases).
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    /// Read parameters back in [`Mlp::write_params`] order. Returns the
    /// number of entries consumed.
    pub fn read_params(&mut self, params: &[f64]) -> usize {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let nw = w.len();
            w.copy_from_slice(&params[k..k + nw]);
            k += nw;
            let nb = b.len();
            b.copy_from_slice(&params[k..k + nb]);
            k += nb;
        }
        k
    }
}
