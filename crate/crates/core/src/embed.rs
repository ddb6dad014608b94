//! Cross-channel multi-granularity patch embedding.
//!
//! For each configured patch length L_i the input series (T timestamps, C
//! channels) is cut into N_i = ceil(T / L_i) non-overlapping cross-channel
//! patches, zero-padded at the end. Each patch is flattened timestamp-major
//! (all C channel values of a timestamp stay adjacent) and linearly projected
//! to the model dimension; an augmentation drawn per branch per forward pass
//! is applied to the projected embedding in training mode. Fixed sinusoidal
//! position rows and a learnable per-branch granularity row are added, and a
//! router token is initialized from position row N_i (0-indexed) plus the
//! granularity row.
//!
//! The flattened projection is algebraically identical to a conv over
//! (L_i x C) windows with stride L_i; the flattened form keeps the autodiff
//! path simple, and the equivalence is unit-tested below.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::encoder::{Branch, TokenState};
use crate::nn::{ForwardCtx, Linear};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// The patch-length list and the series length it segments.
/// Duplicate lengths are allowed; each entry is an independent branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GranularitySpec {
    patch_lengths: Vec<usize>,
    series_len: usize,
}

impl GranularitySpec {
    pub fn new(patch_lengths: Vec<usize>, series_len: usize) -> Result<Self, ConfigError> {
        if patch_lengths.is_empty() {
            return Err(ConfigError("patch length list is empty".into()));
        }
        if series_len == 0 {
            return Err(ConfigError("series length must be positive".into()));
        }
        if let Some(&bad) = patch_lengths.iter().find(|&&l| l == 0) {
            return Err(ConfigError(format!("patch length {} must be positive", bad)));
        }
        Ok(GranularitySpec { patch_lengths, series_len })
    }

    /// Number of granularity branches.
    pub fn num_branches(&self) -> usize {
        self.patch_lengths.len()
    }

    pub fn patch_lengths(&self) -> &[usize] {
        &self.patch_lengths
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    /// N_i = ceil(T / L_i)
    pub fn patch_count(&self, branch: usize) -> usize {
        let l = self.patch_lengths[branch];
        self.series_len.div_ceil(l)
    }

    pub fn patch_counts(&self) -> Vec<usize> {
        (0..self.num_branches()).map(|i| self.patch_count(i)).collect()
    }

    /// Series length after end-padding to a multiple of L_i.
    pub fn padded_len(&self, branch: usize) -> usize {
        self.patch_count(branch) * self.patch_lengths[branch]
    }
}

/// One entry of the augmentation bank. Magnitudes follow the config grammar
/// `none | mask<p> | jitter<sigma> | scale<sigma>`, e.g. `mask0.35`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    None,
    /// Zero each element with probability p (no rescaling).
    Mask(f64),
    /// Add N(0, sigma^2) noise to each element.
    Jitter(f64),
    /// Multiply each element by a draw from N(1, sigma^2).
    Scale(f64),
}

impl Augmentation {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            Augmentation::None => Ok(()),
            Augmentation::Mask(p) if (0.0..=1.0).contains(&p) => Ok(()),
            Augmentation::Mask(p) => Err(ConfigError(format!("mask probability {} outside [0, 1]", p))),
            Augmentation::Jitter(s) | Augmentation::Scale(s) if s >= 0.0 => Ok(()),
            Augmentation::Jitter(s) => Err(ConfigError(format!("jitter magnitude {} negative", s))),
            Augmentation::Scale(s) => Err(ConfigError(format!("scale magnitude {} negative", s))),
        }
    }
}

impl FromStr for Augmentation {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let parse_magnitude = |rest: &str, what: &str| -> Result<f64, ConfigError> {
            rest.parse::<f64>()
                .map_err(|_| ConfigError(format!("bad {} magnitude in '{}'", what, s)))
        };
        let aug = if s == "none" {
            Augmentation::None
        } else if let Some(rest) = s.strip_prefix("mask") {
            Augmentation::Mask(parse_magnitude(rest, "mask")?)
        } else if let Some(rest) = s.strip_prefix("jitter") {
            Augmentation::Jitter(parse_magnitude(rest, "jitter")?)
        } else if let Some(rest) = s.strip_prefix("scale") {
            Augmentation::Scale(parse_magnitude(rest, "scale")?)
        } else {
            return Err(ConfigError(format!(
                "unknown augmentation '{}' (expected none|mask<p>|jitter<s>|scale<s>)",
                s
            )));
        };
        aug.validate()?;
        Ok(aug)
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::None => write!(f, "none"),
            Augmentation::Mask(p) => write!(f, "mask{}", p),
            Augmentation::Jitter(s) => write!(f, "jitter{}", s),
            Augmentation::Scale(s) => write!(f, "scale{}", s),
        }
    }
}

/// The options one augmentation is drawn from, uniformly, per branch per
/// training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationBank {
    options: Vec<Augmentation>,
}

impl AugmentationBank {
    pub fn new(options: Vec<Augmentation>) -> Result<Self, ConfigError> {
        if options.is_empty() {
            return Err(ConfigError("augmentation bank is empty".into()));
        }
        for o in &options {
            o.validate()?;
        }
        Ok(AugmentationBank { options })
    }

    pub fn identity() -> Self {
        AugmentationBank { options: vec![Augmentation::None] }
    }

    pub fn parse_list(items: &[&str]) -> Result<Self, ConfigError> {
        let options = items
            .iter()
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(options)
    }

    pub fn options(&self) -> &[Augmentation] {
        &self.options
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Augmentation {
        self.options[rng.gen_range(0..self.options.len())]
    }
}

/// Fixed sinusoidal position table with `capacity` rows.
pub fn sinusoidal_positional_table<T: Scalar>(capacity: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(capacity * dim);
    for pos in 0..capacity {
        for j in 0..dim {
            let exponent = (2 * (j / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            data.push(T::cast_from(v));
        }
    }
    Tensor::new(data, vec![capacity, dim]).expect("positional table shape")
}

/// End-pad with zero timestamps and flatten each run of `patch_len`
/// timestamps across all channels into one row of length `patch_len * C`.
/// Rows are timestamp-major, so with time-major input each patch is a
/// contiguous span of the padded series.
pub fn segment_cross_channel<T: Scalar>(
    series: &[T],
    series_len: usize,
    channels: usize,
    patch_len: usize,
) -> Vec<T> {
    debug_assert_eq!(series.len(), series_len * channels);
    let patches = series_len.div_ceil(patch_len);
    let mut out = vec![T::zero(); patches * patch_len * channels];
    out[..series_len * channels].copy_from_slice(series);
    out
}

/// Per-channel segmentation for the single-channel-patching variant: each
/// channel independently yields N_i rows of length `patch_len`; rows are
/// ordered channel-major (all of channel 0's patches, then channel 1's, ...).
pub fn segment_per_channel<T: Scalar>(
    series: &[T],
    series_len: usize,
    channels: usize,
    patch_len: usize,
) -> Vec<T> {
    debug_assert_eq!(series.len(), series_len * channels);
    let patches = series_len.div_ceil(patch_len);
    let mut out = vec![T::zero(); channels * patches * patch_len];
    for ch in 0..channels {
        for p in 0..patches {
            for t in 0..patch_len {
                let src_t = p * patch_len + t;
                if src_t < series_len {
                    out[(ch * patches + p) * patch_len + t] = series[src_t * channels + ch];
                }
            }
        }
    }
    out
}

/// Apply one drawn augmentation to a projected embedding. Gradients flow
/// through (mask and scale are element-wise products with constants, jitter
/// is a constant add).
pub fn apply_augmentation<T: Scalar>(
    x: &Tensor<T>,
    aug: Augmentation,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>, TensorError> {
    let n = x.numel();
    match aug {
        Augmentation::None => Ok(x.clone()),
        Augmentation::Mask(p) => {
            if p == 0.0 {
                return Ok(x.clone());
            }
            let mask: Vec<T> = (0..n)
                .map(|_| if rng.gen::<f64>() < p { T::zero() } else { T::one() })
                .collect();
            x.mul(&Tensor::new(mask, x.shape())?)
        }
        Augmentation::Jitter(sigma) => {
            if sigma == 0.0 {
                return Ok(x.clone());
            }
            let normal = Normal::new(0.0, sigma).expect("finite jitter sigma");
            let noise: Vec<T> = (0..n).map(|_| T::cast_from(normal.sample(rng))).collect();
            x.add(&Tensor::new(noise, x.shape())?)
        }
        Augmentation::Scale(sigma) => {
            if sigma == 0.0 {
                return Ok(x.clone());
            }
            let normal = Normal::new(1.0, sigma).expect("finite scale sigma");
            let factors: Vec<T> = (0..n).map(|_| T::cast_from(normal.sample(rng))).collect();
            x.mul(&Tensor::new(factors, x.shape())?)
        }
    }
}

/// Per-branch embedding pipeline: segment -> project -> augment -> add
/// position rows -> add granularity row; plus router initialization.
pub struct PatchEmbedder<T: Scalar> {
    spec: GranularitySpec,
    channels: usize,
    model_dim: usize,
    projections: Vec<Linear<T>>,
    granularity: Tensor<T>,
    positional: Tensor<T>,
    bank: AugmentationBank,
    single_channel: bool,
    augment_enabled: bool,
}

impl<T: Scalar> PatchEmbedder<T> {
    pub fn new(
        spec: GranularitySpec,
        channels: usize,
        model_dim: usize,
        bank: AugmentationBank,
        single_channel: bool,
        augment_enabled: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let projections = spec
            .patch_lengths()
            .iter()
            .map(|&l| {
                let in_dim = if single_channel { l } else { l * channels };
                Linear::new_no_bias(in_dim, model_dim, rng)
            })
            .collect();
        let n = spec.num_branches();
        let bound = 1.0 / (model_dim as f64).sqrt();
        let granularity =
            Tensor::param(crate::nn::uniform_init(rng, n * model_dim, bound), vec![n, model_dim])
                .expect("granularity embedding shape");
        // Router for branch i reads position row N_i; capacity T+2 covers
        // every N_i (N_i <= T) with headroom.
        let positional = sinusoidal_positional_table(spec.series_len() + 2, model_dim);
        PatchEmbedder {
            spec,
            channels,
            model_dim,
            projections,
            granularity,
            positional,
            bank,
            single_channel,
            augment_enabled,
        }
    }

    pub fn spec(&self) -> &GranularitySpec {
        &self.spec
    }

    /// Patch tokens produced per branch (C * N_i under single-channel patching).
    pub fn token_count(&self, branch: usize) -> usize {
        let n = self.spec.patch_count(branch);
        if self.single_channel {
            n * self.channels
        } else {
            n
        }
    }

    pub fn token_counts(&self) -> Vec<usize> {
        (0..self.spec.num_branches()).map(|i| self.token_count(i)).collect()
    }

    pub fn positional(&self) -> &Tensor<T> {
        &self.positional
    }

    pub fn granularity(&self) -> &Tensor<T> {
        &self.granularity
    }

    pub fn projection(&self, branch: usize) -> &Linear<T> {
        &self.projections[branch]
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p: Vec<Tensor<T>> = self.projections.iter().flat_map(|l| l.params()).collect();
        p.push(self.granularity.clone());
        p
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .projections
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("embed.proj{}.weight", i), l.weight.clone()))
            .collect();
        out.push(("embed.granularity".into(), self.granularity.clone()));
        out
    }

    /// Embed one branch. `aug` is the pre-drawn augmentation for this forward
    /// pass (`Augmentation::None` outside training).
    pub fn embed_branch(
        &self,
        series: &[T],
        branch: usize,
        aug: Augmentation,
        ctx: &mut ForwardCtx,
    ) -> Result<Branch<T>, TensorError> {
        let t_len = self.spec.series_len();
        let patch_len = self.spec.patch_lengths()[branch];
        let patch_count = self.spec.patch_count(branch);
        let tokens = self.token_count(branch);
        if patch_count + 1 > self.positional.rows() {
            return Err(TensorError::Invalid {
                op: "embed",
                msg: format!(
                    "positional capacity {} exceeded: branch {} needs row {}",
                    self.positional.rows(),
                    branch,
                    patch_count
                ),
            });
        }

        let (seg, row_len) = if self.single_channel {
            (segment_per_channel(series, t_len, self.channels, patch_len), patch_len)
        } else {
            (
                segment_cross_channel(series, t_len, self.channels, patch_len),
                patch_len * self.channels,
            )
        };
        let patches = Tensor::new(seg, vec![tokens, row_len])?;
        let mut embedded = self.projections[branch].forward(&patches)?;
        embedded = apply_augmentation(&embedded, aug, &mut ctx.rng)?;

        // Position rows 0..N_i, tiled per channel under single-channel patching.
        let pos = if self.single_channel {
            let one = self.positional.slice_rows(0, patch_count)?;
            Tensor::concat(&vec![one; self.channels], 0)?
        } else {
            self.positional.slice_rows(0, patch_count)?
        };
        let gr_row = self.granularity.slice_rows(branch, branch + 1)?;
        let tokens = embedded.add(&pos)?.add_row_broadcast(&gr_row)?;

        let router = self
            .positional
            .slice_rows(patch_count, patch_count + 1)?
            .add(&gr_row)?;
        Ok(Branch { tokens, router })
    }

    /// Embed all branches in patch-length list order. Augmentation choices
    /// are pre-drawn in list order so branch evaluation order cannot change
    /// the stream.
    pub fn forward_sample(
        &self,
        series: &[T],
        ctx: &mut ForwardCtx,
    ) -> Result<TokenState<T>, TensorError> {
        let expected = self.spec.series_len() * self.channels;
        if series.len() != expected {
            return Err(TensorError::Invalid {
                op: "embed",
                msg: format!("sample has {} values, config wants {}", series.len(), expected),
            });
        }
        let n = self.spec.num_branches();
        let choices: Vec<Augmentation> = if ctx.training && self.augment_enabled {
            (0..n).map(|_| self.bank.draw(&mut ctx.rng)).collect()
        } else {
            vec![Augmentation::None; n]
        };
        let branches = (0..n)
            .map(|i| self.embed_branch(series, i, choices[i], ctx))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenState { branches })
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }
}
