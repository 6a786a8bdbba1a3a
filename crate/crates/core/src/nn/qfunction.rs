//! Uniform interface over every trainable Q-value architecture, plus a
//! finite-difference gradient oracle.
//!
//! Trainable parameters are exposed as one flat vector so the optimizer,
//! the trainer, and the gradient checker treat scratch networks, fine-tuned
//! heads, and attention composites identically. Frozen parameters (source
//! networks) simply never appear in the flat vector.

use super::Mlp;
use crate::nn::LinearTransform;

/// A state -> disturbance-values function with trainable parameters.
///
/// `q_values` and `accumulate_grad` treat shape mismatches as programmer
/// error (dimensions are validated when architectures and trainers are
/// built) and panic via debug assertions on the hot path.
pub trait QFunction {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Q(s, .) for all disturbances at once.
    fn q_values(&self, state: &[f64]) -> Vec<f64>;

    /// Number of trainable parameters.
    fn param_count(&self) -> usize;

    /// Gather trainable parameters into a flat vector.
    fn params(&self) -> Vec<f64>;

    /// Scatter a flat vector back into the trainable parameters.
    fn set_params(&mut self, params: &[f64]);

    /// Accumulate d(out_grad . Q(s)) / d theta into `grads` (len
    /// `param_count`), for trainable parameters only.
    fn accumulate_grad(&self, state: &[f64], out_grad: &[f64], grads: &mut [f64]);
}

impl QFunction for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Mlp::output_dim(self)
    }

    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.forward(state)
            .expect("state dim checked at build time")
    }

    fn param_count(&self) -> usize {
        Mlp::param_count(self)
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Mlp::param_count(self));
        self.write_params(&mut out);
        out
    }

    fn set_params(&mut self, params: &[f64]) {
        let used = self.read_params(params);
        debug_assert_eq!(used, params.len());
    }

    fn accumulate_grad(&self, state: &[f64], out_grad: &[f64], grads: &mut [f64]) {
        let (buf, _) = self
            .backward(state, out_grad)
            .expect("dims checked at build time");
        let used = buf.add_into_flat(grads, 0);
        debug_assert_eq!(used, grads.len());
    }
}

impl QFunction for LinearTransform {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        self.dim()
    }

    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.apply(state)
    }

    fn param_count(&self) -> usize {
        LinearTransform::param_count(self)
    }

    fn params(&self) -> Vec<f64> {
        self.matrix().to_vec()
    }

    fn set_params(&mut self, params: &[f64]) {
        let used = self.read_params(params);
        debug_assert_eq!(used, params.len());
    }

    fn accumulate_grad(&self, state: &[f64], out_grad: &[f64], grads: &mut [f64]) {
        LinearTransform::accumulate_matrix_grad(out_grad, state, grads, 0);
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Default finite-difference step for [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Compare analytic gradients against central finite differences of the
/// scalar loss `coeffs . Q(state)`.
///
/// Returns the max over parameters of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
pub fn gradient_check<Q: QFunction + Clone>(q: &Q, state: &[f64], coeffs: &[f64], h: f64) -> f64 {
    assert_eq!(coeffs.len(), q.output_dim());
    let mut analytic = vec![0.0; q.param_count()];
    q.accumulate_grad(state, coeffs, &mut analytic);

    let base = q.params();
    let mut probe = q.clone();
    let mut worst = 0.0_f64;
    let mut scratch = base.clone();
    for i in 0..base.len() {
        scratch[i] = base[i] + h;
        probe.set_params(&scratch);
        let up: f64 = dot(coeffs, &probe.q_values(state));
        scratch[i] = base[i] - h;
        probe.set_params(&scratch);
        let down: f64 = dot(coeffs, &probe.q_values(state));
        scratch[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
