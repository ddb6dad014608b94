//! Reusable layers: linear, layer norm, feed-forward, dropout, multi-head
//! scaled dot-product attention, and cross-entropy loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor, TensorError};

/// Per-forward state threaded through the model: the training flag, the
/// run's RNG stream (augmentation choices and dropout masks), and counters
/// for attention score-matrix elements.
pub struct ForwardCtx {
    pub training: bool,
    pub rng: ChaCha8Rng,
    /// Total score-matrix elements (query x key pairs) across attention calls.
    pub pair_count: u64,
    /// Largest single score matrix seen, a peak-memory proxy.
    pub pair_peak: u64,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            pair_count: 0,
            pair_peak: 0,
        }
    }

    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pair_count: 0,
            pair_peak: 0,
        }
    }

    fn count_pairs(&mut self, nq: usize, nk: usize) {
        let pairs = (nq as u64) * (nk as u64);
        self.pair_count += pairs;
        self.pair_peak = self.pair_peak.max(pairs);
    }
}

pub(crate) fn uniform_init<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::cast_from(rng.gen_range(-bound..bound)))
        .collect()
}

/// Affine map `x W + b`. Weights initialized uniform in ±1/sqrt(fan_in).
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(in_dim, out_dim, true, rng)
    }

    /// Pure projection without bias (patch embedding projections).
    pub fn new_no_bias(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init(in_dim, out_dim, false, rng)
    }

    fn init(in_dim: usize, out_dim: usize, with_bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Tensor::param(uniform_init(rng, in_dim * out_dim, bound), vec![in_dim, out_dim])
            .expect("linear weight shape");
        let bias = with_bias.then(|| {
            Tensor::param(uniform_init(rng, out_dim, bound), vec![1, out_dim])
                .expect("linear bias shape")
        });
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add_row_broadcast(b),
            None => Ok(y),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = vec![self.weight.clone()];
        if let Some(b) = &self.bias {
            p.push(b.clone());
        }
        p
    }
}

/// Layer normalization over the feature axis with learnable affine.
pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::param(vec![T::one(); dim], vec![dim]).expect("layernorm gamma"),
            beta: Tensor::param(vec![T::zero(); dim], vec![dim]).expect("layernorm beta"),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        vec![self.gamma.clone(), self.beta.clone()]
    }
}

/// Zero each element with probability `rate` in training and scale survivors
/// by 1/(1-rate); exact identity in eval mode.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    ctx: &mut ForwardCtx,
) -> Result<Tensor<T>, TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::Invalid {
            op: "dropout",
            msg: format!("rate {} outside [0, 1)", rate),
        });
    }
    if !ctx.training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::cast_from(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| {
            if ctx.rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = Tensor::new(mask, x.shape())?;
    x.mul(&mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Relu => x.relu(),
        }
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation '{}' (expected gelu|relu)", other)),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        })
    }
}

/// Position-wise feed-forward block `D -> F -> D` with dropout after the
/// activation.
pub struct FeedForward<T: Scalar> {
    pub expand: Linear<T>,
    pub contract: Linear<T>,
    pub activation: Activation,
    pub dropout: f64,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(
        dim: usize,
        hidden: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FeedForward {
            expand: Linear::new(dim, hidden, rng),
            contract: Linear::new(hidden, dim, rng),
            activation,
            dropout,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>, TensorError> {
        let h = self.activation.apply(&self.expand.forward(x)?);
        let h = dropout(&h, self.dropout, ctx)?;
        self.contract.forward(&h)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = self.expand.params();
        p.extend(self.contract.params());
        p
    }
}

/// Multi-head scaled dot-product attention with composite D->D projections.
pub struct AttentionBlock<T: Scalar> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    heads: usize,
    dim: usize,
}

impl<T: Scalar> AttentionBlock<T> {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self, TensorError> {
        if heads == 0 || dim % heads != 0 {
            return Err(TensorError::Invalid {
                op: "attention",
                msg: format!("head count {} must divide model dim {}", heads, dim),
            });
        }
        Ok(AttentionBlock {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per head: softmax(Q Kᵀ / sqrt(D/H)) V; heads concatenated and
    /// output-projected. Counts Nq·Nk score elements once per call.
    pub fn forward(
        &self,
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>, TensorError> {
        let nq = q.rows();
        let nk = k.rows();
        if q.cols() != self.dim || k.cols() != self.dim || v.cols() != self.dim {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: q.shape(),
                rhs: vec![self.dim, self.dim],
            });
        }
        if k.rows() != v.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: k.shape(),
                rhs: v.shape(),
            });
        }
        ctx.count_pairs(nq, nk);

        let qp = self.query.forward(q)?;
        let kp = self.key.forward(k)?;
        let vp = self.value.forward(v)?;

        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let lo = h * head_dim;
            let hi = lo + head_dim;
            let qh = qp.slice_cols(lo, hi)?;
            let kh = kp.slice_cols(lo, hi)?;
            let vh = vp.slice_cols(lo, hi)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            let weights = scores.softmax(1)?;
            head_outputs.push(weights.matmul(&vh)?);
        }
        let merged = Tensor::concat(&head_outputs, 1)?;
        self.output.forward(&merged)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = self.query.params();
        p.extend(self.key.params());
        p.extend(self.value.params());
        p.extend(self.output.params());
        p
    }

    /// Drop gradient tracking on all projections (bench workloads).
    pub fn freeze(&self) {
        for p in self.params() {
            p.freeze();
        }
    }
}

/// Mean over the batch of -log softmax(logits)[label].
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>, TensorError> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("expected rank-2 logits, got {:?}", shape),
        });
    }
    let (batch, classes) = (shape[0], shape[1]);
    if labels.len() != batch {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("{} labels for batch of {}", labels.len(), batch),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("label {} out of range for {} classes", bad, classes),
        });
    }

    let (loss_value, probs) = logits.with_data(|d| {
        let mut probs = vec![T::zero(); batch * classes];
        let mut total = 0.0f64;
        for b in 0..batch {
            let row = &d[b * classes..(b + 1) * classes];
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut denom = T::zero();
            for j in 0..classes {
                let e = (row[j] - max).exp();
                probs[b * classes + j] = e;
                denom = denom + e;
            }
            for j in 0..classes {
                probs[b * classes + j] = probs[b * classes + j] / denom;
            }
            let lse = max.cast_f64() + denom.cast_f64().ln();
            total += lse - row[labels[b]].cast_f64();
        }
        (total / batch as f64, probs)
    });

    let labels = labels.to_vec();
    let parent = logits.clone();
    let inv_batch = T::cast_from(1.0 / batch as f64);
    Ok(Tensor::from_op(
        vec![T::cast_from(loss_value)],
        vec![1],
        vec![logits.clone()],
        move |g| {
            // dlogits = (softmax - onehot) / B
            let mut dl = vec![T::zero(); batch * classes];
            for b in 0..batch {
                for j in 0..classes {
                    let indicator = if labels[b] == j { T::one() } else { T::zero() };
                    dl[b * classes + j] = g[0] * (probs[b * classes + j] - indicator) * inv_batch;
                }
            }
            parent.accum_grad(&dl);
        },
    ))
}
