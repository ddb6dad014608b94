//! Two-stage multi-granularity self-attention encoder.
//!
//! Stage one runs dense self-attention inside each granularity over that
//! branch's patch tokens plus its router; stage two runs self-attention over
//! the routers only, so granularities exchange information at n^2 cost
//! instead of (sum N_i)^2. One intra block is shared by all branches; the
//! inter stage has its own parameters. Routers are created once at embedding
//! time and threaded through every layer.

use rand_chacha::ChaCha8Rng;

use crate::embed::GranularitySpec;
use crate::nn::{dropout, Activation, AttentionBlock, FeedForward, ForwardCtx, LayerNorm};
use crate::tensor::{Scalar, Tensor, TensorError};

/// One granularity branch: patch tokens `[N_i, D]` and its router `[1, D]`.
pub struct Branch<T: Scalar> {
    pub tokens: Tensor<T>,
    pub router: Tensor<T>,
}

/// Per-granularity token state threaded through the encoder. Branch order is
/// the patch-length list order and is preserved by every layer.
pub struct TokenState<T: Scalar> {
    pub branches: Vec<Branch<T>>,
}

impl<T: Scalar> TokenState<T> {
    pub fn token_counts(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.tokens.rows()).collect()
    }

    pub fn routers(&self) -> Vec<Tensor<T>> {
        self.branches.iter().map(|b| b.router.clone()).collect()
    }
}

/// One encoder layer: shared intra-granularity attention, router-only
/// inter-granularity attention (absent in the no-inter ablation), and a
/// shared feed-forward block, each with residual + post-norm.
pub struct MedformerLayer<T: Scalar> {
    pub intra: AttentionBlock<T>,
    pub inter: Option<AttentionBlock<T>>,
    norm_intra: LayerNorm<T>,
    norm_inter: Option<LayerNorm<T>>,
    ffn: FeedForward<T>,
    norm_ffn: LayerNorm<T>,
    dropout: f64,
}

impl<T: Scalar> MedformerLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        dropout: f64,
        activation: Activation,
        with_inter: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TensorError> {
        let intra = AttentionBlock::new(dim, heads, rng)?;
        let inter = if with_inter {
            Some(AttentionBlock::new(dim, heads, rng)?)
        } else {
            None
        };
        Ok(MedformerLayer {
            intra,
            inter,
            norm_intra: LayerNorm::new(dim),
            norm_inter: with_inter.then(|| LayerNorm::new(dim)),
            ffn: FeedForward::new(dim, ffn_dim, activation, dropout, rng),
            norm_ffn: LayerNorm::new(dim),
            dropout,
        })
    }

    /// The intra-granularity attention update alone: self-attention over
    /// z = [tokens ‖ router], both outputs taken from the same pre-update z.
    /// This is exactly dense attention over the (N_i + 1)-token sequence.
    pub fn intra_attention(
        &self,
        branch: &Branch<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Branch<T>, TensorError> {
        let n = branch.tokens.rows();
        let z = Tensor::concat(&[branch.tokens.clone(), branch.router.clone()], 0)?;
        let out = self.intra.forward(&z, &z, &z, ctx)?;
        Ok(Branch {
            tokens: out.slice_rows(0, n)?,
            router: out.slice_rows(n, n + 1)?,
        })
    }

    /// The inter-granularity attention update alone: self-attention over the
    /// concatenated routers, all queries against the pre-update U.
    pub fn inter_attention(
        &self,
        routers: &[Tensor<T>],
        ctx: &mut ForwardCtx,
    ) -> Result<Vec<Tensor<T>>, TensorError> {
        let inter = self.inter.as_ref().ok_or(TensorError::Invalid {
            op: "inter_attention",
            msg: "layer built without inter-granularity attention".into(),
        })?;
        let u = Tensor::concat(routers, 0)?;
        let out = inter.forward(&u, &u, &u, ctx)?;
        (0..routers.len()).map(|i| out.slice_rows(i, i + 1)).collect()
    }

    /// Full layer: intra attention with residual + norm per branch, inter
    /// attention with residual + norm over routers, then the shared FFN with
    /// residual + norm on every token, routers included.
    pub fn forward(
        &self,
        state: &TokenState<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<TokenState<T>, TensorError> {
        let mut mid = Vec::with_capacity(state.branches.len());
        for branch in &state.branches {
            let att = self.intra_attention(branch, ctx)?;
            let tokens = branch
                .tokens
                .add(&dropout(&att.tokens, self.dropout, ctx)?)?;
            let router = branch
                .router
                .add(&dropout(&att.router, self.dropout, ctx)?)?;
            mid.push(Branch {
                tokens: self.norm_intra.forward(&tokens)?,
                router: self.norm_intra.forward(&router)?,
            });
        }

        if let Some(norm) = &self.norm_inter {
            let routers: Vec<Tensor<T>> = mid.iter().map(|b| b.router.clone()).collect();
            let updated = self.inter_attention(&routers, ctx)?;
            for (branch, new_router) in mid.iter_mut().zip(updated) {
                let res = branch
                    .router
                    .add(&dropout(&new_router, self.dropout, ctx)?)?;
                branch.router = norm.forward(&res)?;
            }
        }

        let mut out = Vec::with_capacity(mid.len());
        for branch in mid {
            let n = branch.tokens.rows();
            let z = Tensor::concat(&[branch.tokens, branch.router], 0)?;
            let f = self.ffn.forward(&z, ctx)?;
            let normed = self.norm_ffn.forward(&z.add(&f)?)?;
            out.push(Branch {
                tokens: normed.slice_rows(0, n)?,
                router: normed.slice_rows(n, n + 1)?,
            });
        }
        Ok(TokenState { branches: out })
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = self.intra.params();
        if let Some(inter) = &self.inter {
            p.extend(inter.params());
        }
        p.extend(self.norm_intra.params());
        if let Some(norm) = &self.norm_inter {
            p.extend(norm.params());
        }
        p.extend(self.ffn.params());
        p.extend(self.norm_ffn.params());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        let linear = |out: &mut Vec<(String, Tensor<T>)>, name: String, l: &crate::nn::Linear<T>| {
            out.push((format!("{name}.weight"), l.weight.clone()));
            if let Some(b) = &l.bias {
                out.push((format!("{name}.bias"), b.clone()));
            }
        };
        let attn = |out: &mut Vec<(String, Tensor<T>)>, name: String, a: &AttentionBlock<T>| {
            linear(out, format!("{name}.query"), &a.query);
            linear(out, format!("{name}.key"), &a.key);
            linear(out, format!("{name}.value"), &a.value);
            linear(out, format!("{name}.output"), &a.output);
        };
        let norm = |out: &mut Vec<(String, Tensor<T>)>, name: String, n: &LayerNorm<T>| {
            out.push((format!("{name}.gamma"), n.gamma.clone()));
            out.push((format!("{name}.beta"), n.beta.clone()));
        };
        attn(&mut out, format!("{prefix}.intra"), &self.intra);
        if let Some(inter) = &self.inter {
            attn(&mut out, format!("{prefix}.inter"), inter);
        }
        norm(&mut out, format!("{prefix}.norm_intra"), &self.norm_intra);
        if let Some(n) = &self.norm_inter {
            norm(&mut out, format!("{prefix}.norm_inter"), n);
        }
        linear(&mut out, format!("{prefix}.ffn.expand"), &self.ffn.expand);
        linear(&mut out, format!("{prefix}.ffn.contract"), &self.ffn.contract);
        norm(&mut out, format!("{prefix}.norm_ffn"), &self.norm_ffn);
        out
    }
}

/// M stacked layers.
pub struct EncoderStack<T: Scalar> {
    pub layers: Vec<MedformerLayer<T>>,
}

impl<T: Scalar> EncoderStack<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_layers: usize,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        dropout: f64,
        activation: Activation,
        with_inter: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TensorError> {
        let layers = (0..num_layers)
            .map(|_| MedformerLayer::new(dim, heads, ffn_dim, dropout, activation, with_inter, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EncoderStack { layers })
    }

    pub fn forward(
        &self,
        state: TokenState<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<TokenState<T>, TensorError> {
        let mut state = state;
        for layer in &self.layers {
            state = layer.forward(&state, ctx)?;
        }
        Ok(state)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.named_params(&format!("layers.{i}")))
            .collect()
    }
}

/// Which analytic attention-pair formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairCountMode {
    /// Dense attention over the full concatenation: (sum N_i)^2.
    Naive,
    /// Idealized two-stage count, routers excluded: sum N_i^2 + n^2.
    TwoStage,
    /// Two-stage count with routers included: sum (N_i + 1)^2 + n^2.
    /// This is what an instrumented forward pass measures per layer.
    TwoStageExact,
}

/// Score-matrix elements per encoder layer under `mode`.
pub fn attention_pair_count(spec: &GranularitySpec, mode: PairCountMode) -> u64 {
    let counts = spec.patch_counts();
    let n = counts.len() as u64;
    match mode {
        PairCountMode::Naive => {
            let total: u64 = counts.iter().map(|&c| c as u64).sum();
            total * total
        }
        PairCountMode::TwoStage => {
            counts.iter().map(|&c| (c as u64) * (c as u64)).sum::<u64>() + n * n
        }
        PairCountMode::TwoStageExact => {
            counts.iter().map(|&c| (c as u64 + 1) * (c as u64 + 1)).sum::<u64>() + n * n
        }
    }
}
