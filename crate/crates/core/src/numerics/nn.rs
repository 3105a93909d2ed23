//! Layers shared by every tower: linear maps, layer norm, attention, FFN and
//! the post-norm transformer encoder layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{layer_norm, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// A named trainable tensor. Names are dot-separated paths and double as
/// checkpoint keys.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Anything that owns parameters.
pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>);

    fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn tensors(&self) -> Vec<Tensor> {
        self.parameters().into_iter().map(|p| p.tensor).collect()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push(out: &mut Vec<Parameter>, prefix: &str, name: &str, t: &Tensor) {
    out.push(Parameter { name: join(prefix, name), tensor: t.clone() });
}

/// Stops gradient flow into every parameter of `m`.
pub fn freeze<M: Module + ?Sized>(m: &M) {
    for p in m.parameters() {
        p.tensor.set_requires_grad(false);
        p.tensor.zero_grad();
    }
}

pub fn unfreeze<M: Module + ?Sized>(m: &M) {
    for p in m.parameters() {
        p.tensor.set_requires_grad(true);
    }
}

pub fn is_frozen<M: Module + ?Sized>(m: &M) -> bool {
    m.parameters().iter().all(|p| !p.tensor.requires_grad())
}

pub fn zero_grads<M: Module + ?Sized>(m: &M) {
    for p in m.parameters() {
        p.tensor.zero_grad();
    }
}

/// Copies parameter values between two modules of identical structure.
pub fn copy_params<M: Module + ?Sized>(dst: &M, src: &M) -> Result<()> {
    let (d, s) = (dst.parameters(), src.parameters());
    if d.len() != s.len() {
        return Err(Error::contract(format!("parameter counts differ: {} vs {}", d.len(), s.len())));
    }
    for (d, s) in d.iter().zip(&s) {
        if d.tensor.shape() != s.tensor.shape() {
            return Err(Error::contract(format!(
                "{}: shape {:?} vs {:?}",
                d.name,
                d.tensor.shape(),
                s.tensor.shape()
            )));
        }
        let values = s.tensor.to_vec();
        d.tensor.update(|v| v.copy_from_slice(&values));
    }
    Ok(())
}

/// Glorot-uniform `[fan_in×fan_out]` weights.
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect()
}

#[derive(Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Linear {
        Linear {
            weight: Tensor::param(glorot(rng, input, output), &[input, output]).expect("valid shape"),
            bias: Tensor::param(vec![0.0; output], &[output]).expect("valid shape"),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_bias(&self.bias)
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        push(out, prefix, "weight", &self.weight);
        push(out, prefix, "bias", &self.bias);
    }
}

#[derive(Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(width: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param(vec![1.0; width], &[width]).expect("valid shape"),
            beta: Tensor::param(vec![0.0; width], &[width]).expect("valid shape"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta, LAYER_NORM_EPS)
    }
}

impl Module for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        push(out, prefix, "gamma", &self.gamma);
        push(out, prefix, "beta", &self.beta);
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp { fc1: Linear::new(rng, input, hidden), fc2: Linear::new(rng, hidden, output) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.relu())
    }
}

impl Module for Mlp {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        self.fc1.collect_params(&join(prefix, "fc1"), out);
        self.fc2.collect_params(&join(prefix, "fc2"), out);
    }
}

/// Position-wise feed-forward block, hidden width `4c` by default.
pub type FeedForward = Mlp;

/// Scaled dot-product self-attention with `heads` heads.
#[derive(Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut ChaCha8Rng, width: usize, heads: usize) -> Result<MultiHeadAttention> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config(format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(rng, width, width),
            key: Linear::new(rng, width, width),
            value: Linear::new(rng, width, width),
            output: Linear::new(rng, width, width),
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_weights(x)?.0)
    }

    /// Also returns the per-head `[N×N]` attention matrices.
    pub fn forward_with_weights(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (_, width) = x.dims2()?;
        if width != self.query.in_dim() {
            return Err(Error::dim(format!(
                "attention expects width {}, got {:?}",
                self.query.in_dim(),
                x.shape()
            )));
        }
        let head_dim = width / self.heads;
        let scale = 1.0 / (head_dim as f32).sqrt();
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_dim;
            let qh = q.narrow_cols(start, head_dim)?;
            let kh = k.narrow_cols(start, head_dim)?;
            let vh = v.narrow_cols(start, head_dim)?;
            let att = qh.matmul(&kh.transpose()?)?.scale(scale).softmax(1)?;
            outs.push(att.matmul(&vh)?);
            weights.push(att);
        }
        let merged = if outs.len() == 1 { outs.pop().expect("one head") } else { Tensor::concat(&outs, 1)? };
        Ok((self.output.forward(&merged)?, weights))
    }
}

impl Module for MultiHeadAttention {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        self.query.collect_params(&join(prefix, "query"), out);
        self.key.collect_params(&join(prefix, "key"), out);
        self.value.collect_params(&join(prefix, "value"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}

/// Post-norm encoder layer:
/// `S' = LN(S + MHA(S))`, then `S = LN(S' + FFN(S'))`.
#[derive(Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(rng: &mut ChaCha8Rng, width: usize, heads: usize) -> Result<EncoderLayer> {
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(rng, width, heads)?,
            norm1: LayerNorm::new(width),
            ffn: Mlp::new(rng, width, 4 * width, width),
            norm2: LayerNorm::new(width),
        })
    }

    pub fn forward(&self, s: &Tensor) -> Result<Tensor> {
        let s1 = self.norm1.forward(&s.add(&self.attention.forward(s)?)?)?;
        self.norm2.forward(&s1.add(&self.ffn.forward(&s1)?)?)
    }
}

impl Module for EncoderLayer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        self.attention.collect_params(&join(prefix, "attention"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.ffn.collect_params(&join(prefix, "ffn"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
    }
}

/// Cosine similarity of two plain vectors with the shared norm floor.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f32>().sqrt().max(super::NORM_FLOOR);
    let nb = b.iter().map(|v| v * v).sum::<f32>().sqrt().max(super::NORM_FLOOR);
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
