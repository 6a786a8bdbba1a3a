//! Q-architectures for transfer across tasks: scratch networks, fine-tuned
//! heads, and attention-weighted mixtures of frozen source solutions with
//! optional learned per-source state/value transformations.
//!
//! The mixture output is
//!     Q(s) = w0(s) Qbase(s) + sum_i wi(s) Ti(s)
//! where w is the softmax of a small attention network over the raw encoded
//! state, Ti(s) = Qi(s) for the plain variant and
//! Ti(s) = Gx_i Qi(Gs_i s) for the transformed variant. Source networks are
//! frozen: only the base, the attention net, and the transforms train.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, LinearTransform, Mlp, QFunction};
use crate::seeding::TaskRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Scratch,
    FineTune,
    A2t,
    A2tSavt,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        ArchKind::Scratch,
        ArchKind::FineTune,
        ArchKind::A2t,
        ArchKind::A2tSavt,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchKind::Scratch => "scratch",
            ArchKind::FineTune => "fine_tune",
            ArchKind::A2t => "a2t",
            ArchKind::A2tSavt => "a2t_savt",
        }
    }

    pub fn needs_sources(&self) -> bool {
        !matches!(self, ArchKind::Scratch)
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(ArchKind::Scratch),
            "fine_tune" => Ok(ArchKind::FineTune),
            "a2t" => Ok(ArchKind::A2t),
            "a2t_savt" => Ok(ArchKind::A2tSavt),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture {other:?}"
            ))),
        }
    }
}

/// Network shape knobs, shared by every architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub base_hidden: Vec<usize>,
    pub attention_hidden: Vec<usize>,
    /// Uniform noise added to identity-initialized transforms.
    pub transform_noise: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_hidden: vec![64, 32, 16],
            attention_hidden: vec![16],
            transform_noise: 1e-3,
        }
    }
}

fn layer_spec(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Per-source linear transformations: `state` ahead of the source network,
/// `value` behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTransforms {
    pub state: LinearTransform,
    pub value: LinearTransform,
}

/// Composite Q-function mixing a trainable base network with frozen source
/// solutions through state-dependent attention weights.
#[derive(Clone)]
pub struct A2tNetwork {
    base: Mlp,
    attention: Mlp,
    sources: Vec<Arc<Mlp>>,
    transforms: Option<Vec<SourceTransforms>>,
}

impl A2tNetwork {
    pub fn new(
        base: Mlp,
        attention: Mlp,
        sources: Vec<Arc<Mlp>>,
        transforms: Option<Vec<SourceTransforms>>,
    ) -> Result<Self> {
        let n = base.input_dim();
        let m = base.output_dim();
        if attention.input_dim() != n {
            return Err(Error::Shape {
                context: "attention input dim",
                expected: n,
                got: attention.input_dim(),
            });
        }
        if attention.output_dim() != sources.len() + 1 {
            return Err(Error::Shape {
                context: "attention output dim (k + 1)",
                expected: sources.len() + 1,
                got: attention.output_dim(),
            });
        }
        for s in &sources {
            if s.input_dim() != n || s.output_dim() != m {
                return Err(Error::Shape {
                    context: "source network dims",
                    expected: n,
                    got: s.input_dim(),
                });
            }
        }
        if let Some(ts) = &transforms {
            if ts.len() != sources.len() {
                return Err(Error::Shape {
                    context: "transform count",
                    expected: sources.len(),
                    got: ts.len(),
                });
            }
            for t in ts {
                if t.state.dim() != n || t.value.dim() != m {
                    return Err(Error::Shape {
                        context: "transform dims",
                        expected: n,
                        got: t.state.dim(),
                    });
                }
            }
        }
        Ok(Self {
            base,
            attention,
            sources,
            transforms,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn has_transforms(&self) -> bool {
        self.transforms.is_some()
    }

    pub fn base(&self) -> &Mlp {
        &self.base
    }

    pub fn attention(&self) -> &Mlp {
        &self.attention
    }

    pub fn sources(&self) -> &[Arc<Mlp>] {
        &self.sources
    }

    pub fn transforms(&self) -> Option<&[SourceTransforms]> {
        self.transforms.as_deref()
    }

    /// Softmax attention weights [w0, w1, .., wk] for a state.
    pub fn attention_weights(&self, state: &[f64]) -> Vec<f64> {
        let logits = self
            .attention
            .forward(state)
            .expect("attention dims checked at construction");
        softmax(&logits)
    }

    /// The i-th source's contribution, with transforms when configured.
    fn source_output(&self, i: usize, state: &[f64]) -> Vec<f64> {
        match &self.transforms {
            Some(ts) => {
                let u = ts[i].state.apply(state);
                let z = self.sources[i]
                    .forward(&u)
                    .expect("source dims checked at construction");
                ts[i].value.apply(&z)
            }
            None => self.sources[i]
                .forward(state)
                .expect("source dims checked at construction"),
        }
    }

    fn mix(&self, state: &[f64]) -> Vec<f64> {
        let w = self.attention_weights(state);
        let mut out = self
            .base
            .forward(state)
            .expect("base dims checked at construction");
        for v in out.iter_mut() {
            *v *= w[0];
        }
        for i in 0..self.sources.len() {
            let y = self.source_output(i, state);
            for (o, yv) in out.iter_mut().zip(&y) {
                *o += w[i + 1] * yv;
            }
        }
        out
    }
}

impl QFunction for A2tNetwork {
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.base.output_dim()
    }

    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.mix(state)
    }

    fn param_count(&self) -> usize {
        let mut n = self.base.param_count() + self.attention.param_count();
        if let Some(ts) = &self.transforms {
            n += ts
                .iter()
                .map(|t| t.state.param_count() + t.value.param_count())
                .sum::<usize>();
        }
        n
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.base.write_params(&mut out);
        self.attention.write_params(&mut out);
        if let Some(ts) = &self.transforms {
            for t in ts {
                t.state.write_params(&mut out);
                t.value.write_params(&mut out);
            }
        }
        out
    }

    fn set_params(&mut self, params: &[f64]) {
        let mut k = self.base.read_params(params);
        k += self.attention.read_params(&params[k..]);
        if let Some(ts) = &mut self.transforms {
            for t in ts {
                k += t.state.read_params(&params[k..]);
                k += t.value.read_params(&params[k..]);
            }
        }
        debug_assert_eq!(k, params.len());
    }

    fn accumulate_grad(&self, state: &[f64], out_grad: &[f64], grads: &mut [f64]) {
        let w = self.attention_weights(state);
        let base_out = self
            .base
            .forward(state)
            .expect("base dims checked at construction");

        // Per-source intermediates for the backward pass.
        let k = self.sources.len();
        let mut transformed_inputs = Vec::with_capacity(k);
        let mut source_outputs = Vec::with_capacity(k);
        let mut mixed_outputs = Vec::with_capacity(k);
        for i in 0..k {
            match &self.transforms {
                Some(ts) => {
                    let u = ts[i].state.apply(state);
                    let z = self.sources[i].forward(&u).expect("source dims checked");
                    let y = ts[i].value.apply(&z);
                    transformed_inputs.push(u);
                    source_outputs.push(z);
                    mixed_outputs.push(y);
                }
                None => {
                    let z = self.sources[i].forward(state).expect("source dims checked");
                    transformed_inputs.push(Vec::new());
                    source_outputs.push(z.clone());
                    mixed_outputs.push(z);
                }
            }
        }

        // dL/dw_j, then back through the softmax into the attention logits.
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut dw = Vec::with_capacity(k + 1);
        dw.push(dot(out_grad, &base_out));
        for y in &mixed_outputs {
            dw.push(dot(out_grad, y));
        }
        let inner: f64 = dw.iter().zip(&w).map(|(d, wi)| d * wi).sum();
        let dlogits: Vec<f64> = dw.iter().zip(&w).map(|(d, wi)| wi * (d - inner)).collect();

        // Base network region.
        let base_grad: Vec<f64> = out_grad.iter().map(|g| w[0] * g).collect();
        let (buf, _) = self
            .base
            .backward(state, &base_grad)
            .expect("base dims checked");
        let mut offset = buf.add_into_flat(grads, 0);

        // Attention region.
        let (attn_buf, _) = self
            .attention
            .backward(state, &dlogits)
            .expect("attention dims checked");
        offset += attn_buf.add_into_flat(grads, offset);

        // Transform regions; gradients reach the state transform through
        // the frozen source's input gradient.
        if let Some(ts) = &self.transforms {
            for i in 0..k {
                let gy: Vec<f64> = out_grad.iter().map(|g| w[i + 1] * g).collect();
                let n2 = ts[i].state.param_count();
                let m2 = ts[i].value.param_count();
                let dz = ts[i].value.input_grad(&gy);
                let (_, du) = self.sources[i]
                    .backward(&transformed_inputs[i], &dz)
                    .expect("source dims checked");
                LinearTransform::accumulate_matrix_grad(&du, state, grads, offset);
                LinearTransform::accumulate_matrix_grad(
                    &gy,
                    &source_outputs[i],
                    grads,
                    offset + n2,
                );
                offset += n2 + m2;
            }
        }
        debug_assert_eq!(offset, grads.len());
    }
}

/// A copy of a previous task's network with every layer frozen except the
/// output layer.
#[derive(Clone)]
pub struct FineTuneNetwork {
    net: Mlp,
}

impl FineTuneNetwork {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    fn frozen_prefix_len(&self) -> usize {
        self.net.param_count() - self.net.last_layer_param_count()
    }
}

impl QFunction for FineTuneNetwork {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.net
            .forward(state)
            .expect("dims checked at construction")
    }

    fn param_count(&self) -> usize {
        self.net.last_layer_param_count()
    }

    fn params(&self) -> Vec<f64> {
        let mut all = Vec::with_capacity(self.net.param_count());
        self.net.write_params(&mut all);
        all.split_off(self.frozen_prefix_len())
    }

    fn set_params(&mut self, params: &[f64]) {
        let mut all = Vec::with_capacity(self.net.param_count());
        self.net.write_params(&mut all);
        let start = self.frozen_prefix_len();
        all[start..].copy_from_slice(params);
        self.net.read_params(&all);
    }

    fn accumulate_grad(&self, state: &[f64], out_grad: &[f64], grads: &mut [f64]) {
        let (buf, _) = self
            .net
            .backward(state, out_grad)
            .expect("dims checked at construction");
        let last = self.net.num_layers() - 1;
        let mut k = 0;
        for &g in &buf.weights[last] {
            grads[k] += g;
            k += 1;
        }
        for &g in &buf.biases[last] {
            grads[k] += g;
            k += 1;
        }
        debug_assert_eq!(k, grads.len());
    }
}

/// One trainable architecture of any kind.
#[derive(Clone)]
pub enum Architecture {
    Scratch(Mlp),
    FineTune(FineTuneNetwork),
    A2t(A2tNetwork),
}

impl Architecture {
    pub fn kind(&self) -> ArchKind {
        match self {
            Architecture::Scratch(_) => ArchKind::Scratch,
            Architecture::FineTune(_) => ArchKind::FineTune,
            Architecture::A2t(net) => {
                if net.has_transforms() {
                    ArchKind::A2tSavt
                } else {
                    ArchKind::A2t
                }
            }
        }
    }

    pub fn as_scratch(&self) -> Option<&Mlp> {
        match self {
            Architecture::Scratch(net) => Some(net),
            _ => None,
        }
    }

    pub fn as_a2t(&self) -> Option<&A2tNetwork> {
        match self {
            Architecture::A2t(net) => Some(net),
            _ => None,
        }
    }

    pub fn as_fine_tune(&self) -> Option<&FineTuneNetwork> {
        match self {
            Architecture::FineTune(net) => Some(net),
            _ => None,
        }
    }
}

macro_rules! delegate {
    ($self:ident, $net:ident => $body:expr) => {
        match $self {
            Architecture::Scratch($net) => $body,
            Architecture::FineTune($net) => $body,
            Architecture::A2t($net) => $body,
        }
    };
}

impl QFunction for Architecture {
    fn input_dim(&self) -> usize {
        delegate!(self, net => net.input_dim())
    }

    fn output_dim(&self) -> usize {
        delegate!(self, net => net.output_dim())
    }

    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        delegate!(self, net => net.q_values(state))
    }

    fn param_count(&self) -> usize {
        delegate!(self, net => net.param_count())
    }

    fn params(&self) -> Vec<f64> {
        delegate!(self, net => net.params())
    }

    fn set_params(&mut self, params: &[f64]) {
        delegate!(self, net => net.set_params(params))
    }

    fn accumulate_grad(&self, state: &[f64], out_grad: &[f64], grads: &mut [f64]) {
        delegate!(self, net => net.accumulate_grad(state, out_grad, grads))
    }
}

/// Build an architecture for a task with `sources` holding the previous
/// tasks' scratch solutions (oldest first). Fine-tuning copies the most
/// recent source; the mixture variants attend over all of them.
pub fn build_architecture(
    kind: ArchKind,
    cfg: &ArchConfig,
    sources: &[Arc<Mlp>],
    input_dim: usize,
    output_dim: usize,
    rng: &mut TaskRng,
) -> Result<Architecture> {
    if kind.needs_sources() && sources.is_empty() {
        return Err(Error::MissingSources(format!(
            "{kind} requires at least one source solution"
        )));
    }
    for s in sources {
        if s.input_dim() != input_dim || s.output_dim() != output_dim {
            return Err(Error::Shape {
                context: "source dims vs task dims",
                expected: input_dim,
                got: s.input_dim(),
            });
        }
    }
    match kind {
        ArchKind::Scratch => {
            let net = Mlp::xavier(&layer_spec(input_dim, &cfg.base_hidden, output_dim), rng)?;
            Ok(Architecture::Scratch(net))
        }
        ArchKind::FineTune => {
            let net = sources.last().unwrap().as_ref().clone();
            Ok(Architecture::FineTune(FineTuneNetwork::new(net)))
        }
        ArchKind::A2t | ArchKind::A2tSavt => {
            let base = Mlp::xavier(&layer_spec(input_dim, &cfg.base_hidden, output_dim), rng)?;
            let attention = Mlp::xavier(
                &layer_spec(input_dim, &cfg.attention_hidden, sources.len() + 1),
                rng,
            )?;
            let transforms = if kind == ArchKind::A2tSavt {
                Some(
                    sources
                        .iter()
                        .map(|_| SourceTransforms {
                            state: LinearTransform::identity_with_noise(
                                input_dim,
                                cfg.transform_noise,
                                rng,
                            ),
                            value: LinearTransform::identity_with_noise(
                                output_dim,
                                cfg.transform_noise,
                                rng,
                            ),
                        })
                        .collect(),
                )
            } else {
                None
            };
            Ok(Architecture::A2t(A2tNetwork::new(
                base,
                attention,
                sources.to_vec(),
                transforms,
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, FD_STEP};
    use crate::seeding::rng_from_seed;
    use rand::Rng;

    /// Build a constant-output net: zero weights, chosen output biases.
    fn const_net(input: usize, biases: &[f64]) -> Mlp {
        let mut net = Mlp::zeros(&[input, biases.len()]).unwrap();
        net.layer_biases_mut(0).copy_from_slice(biases);
        net
    }

    fn a2t_with_logits(base_biases: &[f64], source_biases: &[f64], logits: &[f64]) -> A2tNetwork {
        let n = 2;
        let base = const_net(n, base_biases);
        let attention = const_net(n, logits);
        let source = Arc::new(const_net(n, source_biases));
        A2tNetwork::new(base, attention, vec![source], None).unwrap()
    }

    #[test]
    fn equal_logits_give_uniform_weights() {
        let mut rng = rng_from_seed(0);
        let base = Mlp::xavier(&[3, 4, 2], &mut rng).unwrap();
        let attention = Mlp::zeros(&[3, 3]).unwrap(); // zero net: equal logits
        let sources = vec![
            Arc::new(Mlp::xavier(&[3, 2], &mut rng).unwrap()),
            Arc::new(Mlp::xavier(&[3, 2], &mut rng).unwrap()),
        ];
        let net = A2tNetwork::new(base, attention, sources, None).unwrap();
        let w = net.attention_weights(&[0.1, 0.2, 0.3]);
        assert_eq!(w.len(), 3);
        for wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_logits_recover_exact_weights() {
        let net = a2t_with_logits(&[0.0, 0.0], &[0.0, 0.0], &[2.0_f64.ln(), 0.0]);
        let w = net.attention_weights(&[0.0, 0.0]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let net = a2t_with_logits(&[1.0, 2.0], &[3.0, 0.0], &[1000.0, 0.0]);
        let w = net.attention_weights(&[0.0, 0.0]);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!(w[1] >= 0.0 && w[1] < 1e-12);
    }

    #[test]
    fn no_sources_degenerates_to_base() {
        let mut rng = rng_from_seed(1);
        let base = Mlp::xavier(&[3, 5, 2], &mut rng).unwrap();
        let attention = Mlp::xavier(&[3, 1], &mut rng).unwrap();
        let net = A2tNetwork::new(base.clone(), attention, Vec::new(), None).unwrap();
        let s = [0.2, -0.4, 0.6];
        assert_eq!(net.q_values(&s), base.forward(&s).unwrap());
    }

    #[test]
    fn forced_weights_mix_linearly() {
        // w = [0.25, 0.75], base = [1, 2], source = [3, 0] -> [2.5, 0.5]
        let net = a2t_with_logits(&[1.0, 2.0], &[3.0, 0.0], &[0.25_f64.ln(), 0.75_f64.ln()]);
        let out = net.q_values(&[0.0, 0.0]);
        assert!((out[0] - 2.5).abs() < 1e-12);
        assert!((out[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn saturated_base_weight_ignores_sources() {
        let net = a2t_with_logits(&[1.0, 2.0], &[100.0, -100.0], &[1000.0, 0.0]);
        let out = net.q_values(&[0.0, 0.0]);
        assert!((out[0] - 1.0).abs() < 1e-9);
        assert!((out[1] - 2.0).abs() < 1e-9);
    }

    fn random_a2t(seed: u64, n: usize, m: usize, k: usize, transforms: bool) -> A2tNetwork {
        let mut rng = rng_from_seed(seed);
        let kind = if transforms {
            ArchKind::A2tSavt
        } else {
            ArchKind::A2t
        };
        let cfg = ArchConfig {
            base_hidden: vec![6, 5],
            attention_hidden: vec![4],
            transform_noise: if transforms { 0.3 } else { 0.0 },
        };
        let sources: Vec<Arc<Mlp>> = (0..k)
            .map(|_| Arc::new(Mlp::xavier(&[n, 5, m], &mut rng).unwrap()))
            .collect();
        match build_architecture(kind, &cfg, &sources, n, m, &mut rng).unwrap() {
            Architecture::A2t(net) => net,
            _ => unreachable!(),
        }
    }

    #[test]
    fn identity_transforms_match_plain_a2t_bitwise() {
        let plain = random_a2t(5, 3, 2, 2, false);
        let with_id = A2tNetwork::new(
            plain.base().clone(),
            plain.attention().clone(),
            plain.sources().to_vec(),
            Some(
                (0..2)
                    .map(|_| SourceTransforms {
                        state: LinearTransform::identity(3),
                        value: LinearTransform::identity(2),
                    })
                    .collect(),
            ),
        )
        .unwrap();
        let mut rng = rng_from_seed(8);
        for _ in 0..100 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(plain.q_values(&s), with_id.q_values(&s));
        }
    }

    #[test]
    fn value_transform_permutation_swaps_outputs() {
        // w1 ~ 1, identity state transform, value transform swapping the
        // two outputs: the mixture must be the swapped source output.
        let n = 2;
        let base = const_net(n, &[5.0, 7.0]);
        let attention = const_net(n, &[-1000.0, 0.0]); // w ~ [0, 1]
        let mut rng = rng_from_seed(2);
        let source = Arc::new(Mlp::xavier(&[n, 4, 2], &mut rng).unwrap());
        let swap = LinearTransform::from_matrix(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let net = A2tNetwork::new(
            base,
            attention,
            vec![source.clone()],
            Some(vec![SourceTransforms {
                state: LinearTransform::identity(n),
                value: swap,
            }]),
        )
        .unwrap();
        let s = [0.3, -0.6];
        let src = source.forward(&s).unwrap();
        let out = net.q_values(&s);
        assert!((out[0] - src[1]).abs() < 1e-9);
        assert!((out[1] - src[0]).abs() < 1e-9);
    }

    #[test]
    fn state_transform_reflection_reencodes_the_state() {
        // Coordinate-swap reflection on a gridworld encoding
        // [bx, by, ox, oy] -> [by, bx, oy, ox]: evaluating the source through
        // the transform equals evaluating it at the manually reflected
        // encoding.
        let reflect = LinearTransform::from_matrix(
            4,
            vec![
                0.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        let mut rng = rng_from_seed(3);
        let source = Arc::new(Mlp::xavier(&[4, 6, 3], &mut rng).unwrap());
        let base = const_net(4, &[0.0, 0.0, 0.0]);
        let attention = const_net(4, &[-1000.0, 0.0]);
        let net = A2tNetwork::new(
            base,
            attention,
            vec![source.clone()],
            Some(vec![SourceTransforms {
                state: reflect,
                value: LinearTransform::identity(3),
            }]),
        )
        .unwrap();
        let s = [0.1, 0.7, 0.4, 0.9];
        let reflected = [0.7, 0.1, 0.9, 0.4];
        let expected = source.forward(&reflected).unwrap();
        let got = net.q_values(&s);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_sum_to_one_everywhere() {
        let net = random_a2t(7, 4, 3, 3, true);
        let mut rng = rng_from_seed(70);
        for _ in 0..1000 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = net.attention_weights(&s);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn plain_mixture_respects_convexity_bounds() {
        let net = random_a2t(9, 3, 4, 2, false);
        let mut rng = rng_from_seed(90);
        for _ in 0..500 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let out = net.q_values(&s);
            let mut lows = net.base().forward(&s).unwrap();
            let mut highs = lows.clone();
            for src in net.sources() {
                for (j, v) in src.forward(&s).unwrap().into_iter().enumerate() {
                    lows[j] = lows[j].min(v);
                    highs[j] = highs[j].max(v);
                }
            }
            for j in 0..out.len() {
                assert!(
                    out[j] >= lows[j] - 1e-9 && out[j] <= highs[j] + 1e-9,
                    "component {j} out of bounds"
                );
            }
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        for seed in 0..6 {
            for &transforms in &[false, true] {
                let net = random_a2t(100 + seed, 4, 3, 2, transforms);
                let mut rng = rng_from_seed(200 + seed);
                let s: Vec<f64> = (0..4).map(|_| rng.random_range(-0.9..0.9)).collect();
                let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let err = gradient_check(&net, &s, &c, FD_STEP);
                assert!(
                    err < 1e-4,
                    "seed {seed} transforms {transforms}: rel err {err}"
                );
            }
        }
    }

    #[test]
    fn fine_tune_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(55);
        let net = FineTuneNetwork::new(Mlp::xavier(&[3, 6, 4, 2], &mut rng).unwrap());
        let s = [0.3, -0.5, 0.8];
        let err = gradient_check(&net, &s, &[1.0, -0.7], FD_STEP);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn fine_tune_trains_exactly_the_output_layer() {
        let mut rng = rng_from_seed(12);
        let source = Mlp::xavier(&[4, 8, 5, 3], &mut rng).unwrap();
        let ft = FineTuneNetwork::new(source.clone());
        // m*h + m with h the last hidden width
        assert_eq!(ft.param_count(), 3 * 5 + 3);
        // copy semantics: initial outputs equal the source's
        for _ in 0..50 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(ft.q_values(&s), source.forward(&s).unwrap());
        }
        // mutating trainable params touches only the last layer
        let mut moved = ft.clone();
        let mut p = moved.params();
        for v in p.iter_mut() {
            *v += 1.0;
        }
        moved.set_params(&p);
        for l in 0..source.num_layers() - 1 {
            assert_eq!(moved.network().layer_weights(l), source.layer_weights(l));
            assert_eq!(moved.network().layer_biases(l), source.layer_biases(l));
        }
        assert_ne!(
            moved.network().layer_weights(source.num_layers() - 1),
            source.layer_weights(source.num_layers() - 1)
        );
    }

    #[test]
    fn build_architecture_rules() {
        let mut rng = rng_from_seed(77);
        let cfg = ArchConfig {
            base_hidden: vec![8],
            attention_hidden: vec![4],
            transform_noise: 1e-3,
        };
        // transfer kinds require sources
        for kind in [ArchKind::FineTune, ArchKind::A2t, ArchKind::A2tSavt] {
            assert!(matches!(
                build_architecture(kind, &cfg, &[], 3, 2, &mut rng),
                Err(Error::MissingSources(_))
            ));
        }
        let sources = vec![Arc::new(Mlp::xavier(&[3, 4, 2], &mut rng).unwrap())];
        // savt transforms initialize within the noise band of identity
        let savt = build_architecture(ArchKind::A2tSavt, &cfg, &sources, 3, 2, &mut rng).unwrap();
        let net = savt.as_a2t().unwrap();
        let ts = net.transforms().unwrap();
        for (t, dim) in [(&ts[0].state, 3), (&ts[0].value, 2)] {
            let id = LinearTransform::identity(dim);
            for (a, b) in t.matrix().iter().zip(id.matrix()) {
                assert!((a - b).abs() <= 1e-3);
            }
        }
        // zero transform noise: savt output identical to a2t with the same
        // base/attention parameters
        let zero_cfg = ArchConfig {
            transform_noise: 0.0,
            ..cfg.clone()
        };
        let savt0 =
            build_architecture(ArchKind::A2tSavt, &zero_cfg, &sources, 3, 2, &mut rng).unwrap();
        let savt0 = savt0.as_a2t().unwrap();
        let plain = A2tNetwork::new(
            savt0.base().clone(),
            savt0.attention().clone(),
            savt0.sources().to_vec(),
            None,
        )
        .unwrap();
        for i in 0..100 {
            let s: Vec<f64> = vec![i as f64 / 50.0 - 1.0, 0.3, -0.2];
            assert_eq!(savt0.q_values(&s), plain.q_values(&s));
        }
        // fine-tune copies the most recent source
        let ft = build_architecture(ArchKind::FineTune, &cfg, &sources, 3, 2, &mut rng).unwrap();
        let s = [0.5, -0.5, 0.25];
        assert_eq!(
            ft.q_values(&s),
            sources.last().unwrap().forward(&s).unwrap()
        );
    }
}
