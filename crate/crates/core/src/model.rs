//! The end-to-end classifier: patch embedding, M encoder layers, final
//! representation h (flattened concatenation of all patch tokens, routers
//! excluded), and a linear classification head. Ablation variants rewire the
//! same parts: no inter-granularity attention, no augmentation, or
//! single-channel patching.
//!
//! ## Checkpoint format
//!
//! Little-endian binary: `{magic "MEDF", version u32, dtype u8, config_len
//! u32, config utf-8 key=value block, config_digest u64 (FNV-1a of the config
//! bytes), n_arrays u32}` then per array `{name_len u16, name, numel u64,
//! values}`. Values are stored in the model's element type so a save/load
//! round trip is bitwise lossless.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::embed::{Augmentation, AugmentationBank, ConfigError, GranularitySpec, PatchEmbedder};
use crate::encoder::{EncoderStack, TokenState};
use crate::nn::{Activation, ForwardCtx, Linear};
use crate::tensor::{Scalar, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MEDF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(ConfigError(format!("unknown precision '{}' (expected f32|f64)", other))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Ablation wiring of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Routers still exist and absorb intra-granularity information but the
    /// router-exchange stage is removed.
    NoInterAttention,
    /// Augmentation is the identity even in training.
    NoAugmentation,
    /// Patches cover one channel each; every granularity yields C token sets
    /// concatenated along the token axis.
    SingleChannelPatching,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoInterAttention,
        Variant::NoAugmentation,
        Variant::SingleChannelPatching,
    ];
}

impl FromStr for Variant {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "full" => Ok(Variant::Full),
            "no_inter_attention" => Ok(Variant::NoInterAttention),
            "no_augmentation" => Ok(Variant::NoAugmentation),
            "single_channel_patching" => Ok(Variant::SingleChannelPatching),
            other => Err(ConfigError(format!("unknown variant '{}'", other))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoInterAttention => "no_inter_attention",
            Variant::NoAugmentation => "no_augmentation",
            Variant::SingleChannelPatching => "single_channel_patching",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub series_len: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub patch_lengths: Vec<usize>,
    pub augmentations: Vec<Augmentation>,
    pub precision: Precision,
    pub variant: Variant,
    pub activation: Activation,
    /// Mean-pool patch tokens into a D-dim representation instead of
    /// flattening; off by default.
    pub mean_pool: bool,
}

impl ModelConfig {
    /// Defaults: D=128, 6 layers, FFN 256, 8 heads, dropout 0.1, GELU.
    pub fn new(series_len: usize, channels: usize, num_classes: usize, patch_lengths: Vec<usize>) -> Self {
        ModelConfig {
            series_len,
            channels,
            num_classes,
            model_dim: 128,
            layers: 6,
            ffn_dim: 256,
            heads: 8,
            dropout: 0.1,
            patch_lengths,
            augmentations: vec![Augmentation::None],
            precision: Precision::F32,
            variant: Variant::Full,
            activation: Activation::Gelu,
            mean_pool: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.series_len == 0 || self.channels == 0 {
            return Err(ConfigError("series_len and channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ConfigError("num_classes must be >= 2".into()));
        }
        if self.model_dim == 0 || self.layers == 0 || self.ffn_dim == 0 {
            return Err(ConfigError("model_dim, layers, ffn_dim must be positive".into()));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(ConfigError(format!(
                "heads {} must divide model_dim {}",
                self.heads, self.model_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        GranularitySpec::new(self.patch_lengths.clone(), self.series_len)?;
        AugmentationBank::new(self.augmentations.clone())?;
        Ok(())
    }

    pub fn granularity_spec(&self) -> Result<GranularitySpec, ConfigError> {
        GranularitySpec::new(self.patch_lengths.clone(), self.series_len)
    }

    /// Patch tokens per branch under this config's variant.
    pub fn token_counts(&self) -> Vec<usize> {
        let factor = if self.variant == Variant::SingleChannelPatching {
            self.channels
        } else {
            1
        };
        self.patch_lengths
            .iter()
            .map(|&l| self.series_len.div_ceil(l) * factor)
            .collect()
    }

    /// Width of the final representation h fed to the head.
    pub fn repr_dim(&self) -> usize {
        if self.mean_pool {
            self.model_dim
        } else {
            self.token_counts().iter().sum::<usize>() * self.model_dim
        }
    }

    /// Learnable scalar count as a closed-form function of the config:
    /// projections sum(in_i * D), granularity n*D, per layer
    /// 4(D^2+D) per attention block, D*F + F + F*D + D for the FFN and 2D per
    /// norm (two blocks and three norms in full wiring, one block and two
    /// norms without inter attention), head repr*K + K.
    pub fn expected_param_count(&self) -> usize {
        let d = self.model_dim;
        let f = self.ffn_dim;
        let n = self.patch_lengths.len();
        let proj: usize = self
            .patch_lengths
            .iter()
            .map(|&l| {
                let in_dim = if self.variant == Variant::SingleChannelPatching {
                    l
                } else {
                    l * self.channels
                };
                in_dim * d
            })
            .sum();
        let attn = 4 * (d * d + d);
        let ffn = d * f + f + f * d + d;
        let norm = 2 * d;
        let with_inter = self.variant != Variant::NoInterAttention;
        let per_layer = attn + ffn + 2 * norm + if with_inter { attn + norm } else { 0 };
        let head = self.repr_dim() * self.num_classes + self.num_classes;
        proj + n * d + self.layers * per_layer + head
    }

    /// key=value serialization embedded in checkpoints.
    pub fn to_key_values(&self) -> String {
        let lens: Vec<String> = self.patch_lengths.iter().map(|l| l.to_string()).collect();
        let augs: Vec<String> = self.augmentations.iter().map(|a| a.to_string()).collect();
        format!(
            "series_len={}\nchannels={}\nnum_classes={}\nmodel_dim={}\nlayers={}\nffn_dim={}\n\
             heads={}\ndropout={}\npatch_lengths={}\naugmentations={}\nprecision={}\nvariant={}\n\
             activation={}\nmean_pool={}\n",
            self.series_len,
            self.channels,
            self.num_classes,
            self.model_dim,
            self.layers,
            self.ffn_dim,
            self.heads,
            self.dropout,
            lens.join(","),
            augs.join(","),
            self.precision,
            self.variant,
            self.activation,
            self.mean_pool,
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ModelConfig::new(1, 1, 2, vec![1]);
        let mut seen = std::collections::HashSet::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("bad config line '{}'", line)))?;
            let (key, value) = (key.trim(), value.trim());
            seen.insert(key.to_string());
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| ConfigError(format!("bad integer '{}' for {}", v, key)))
            };
            match key {
                "series_len" => cfg.series_len = parse_usize(value)?,
                "channels" => cfg.channels = parse_usize(value)?,
                "num_classes" => cfg.num_classes = parse_usize(value)?,
                "model_dim" => cfg.model_dim = parse_usize(value)?,
                "layers" => cfg.layers = parse_usize(value)?,
                "ffn_dim" => cfg.ffn_dim = parse_usize(value)?,
                "heads" => cfg.heads = parse_usize(value)?,
                "dropout" => {
                    cfg.dropout = value
                        .parse()
                        .map_err(|_| ConfigError(format!("bad dropout '{}'", value)))?
                }
                "patch_lengths" => {
                    cfg.patch_lengths = value
                        .split(',')
                        .map(|v| parse_usize(v.trim()))
                        .collect::<Result<_, _>>()?
                }
                "augmentations" => {
                    cfg.augmentations = value
                        .split(',')
                        .map(|v| v.trim().parse())
                        .collect::<Result<_, _>>()?
                }
                "precision" => cfg.precision = value.parse()?,
                "variant" => cfg.variant = value.parse()?,
                "activation" => {
                    cfg.activation = value.parse().map_err(ConfigError)?;
                }
                "mean_pool" => {
                    cfg.mean_pool = value
                        .parse()
                        .map_err(|_| ConfigError(format!("bad bool '{}'", value)))?
                }
                other => return Err(ConfigError(format!("unknown config key '{}'", other))),
            }
        }
        for required in ["series_len", "channels", "num_classes", "patch_lengths"] {
            if !seen.contains(required) {
                return Err(ConfigError(format!("missing config key '{}'", required)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// FNV-1a 64-bit digest; used for config digests in file headers and for
/// deterministic run ids.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Element-type tag of a checkpoint file without parsing the whole file.
pub fn checkpoint_dtype(path: &Path) -> Result<u8, ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    Ok(bytes[8])
}

pub struct Medformer<T: Scalar> {
    cfg: ModelConfig,
    embed: PatchEmbedder<T>,
    encoder: EncoderStack<T>,
    head: Linear<T>,
}

impl<T: Scalar> Medformer<T> {
    pub fn new(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        if cfg.precision.to_string() != T::DTYPE_NAME {
            return Err(ModelError::ConfigMismatch(format!(
                "config precision {} but element type is {}",
                cfg.precision,
                T::DTYPE_NAME
            )));
        }
        let spec = cfg.granularity_spec()?;
        let bank = AugmentationBank::new(cfg.augmentations.clone())?;
        let embed = PatchEmbedder::new(
            spec,
            cfg.channels,
            cfg.model_dim,
            bank,
            cfg.variant == Variant::SingleChannelPatching,
            cfg.variant != Variant::NoAugmentation,
            rng,
        );
        let encoder = EncoderStack::new(
            cfg.layers,
            cfg.model_dim,
            cfg.heads,
            cfg.ffn_dim,
            cfg.dropout,
            cfg.activation,
            cfg.variant != Variant::NoInterAttention,
            rng,
        )?;
        let head = Linear::new(cfg.repr_dim(), cfg.num_classes, rng);
        Ok(Medformer { cfg, embed, encoder, head })
    }

    /// Deterministic construction from a seed.
    pub fn seeded(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn embedder(&self) -> &PatchEmbedder<T> {
        &self.embed
    }

    pub fn encoder(&self) -> &EncoderStack<T> {
        &self.encoder
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = self.embed.params();
        p.extend(self.encoder.params());
        p.extend(self.head.params());
        p
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = self.embed.named_params();
        out.extend(self.encoder.named_params());
        out.push(("head.weight".into(), self.head.weight.clone()));
        if let Some(b) = &self.head.bias {
            out.push(("head.bias".into(), b.clone()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn representation(&self, state: &TokenState<T>) -> Result<Tensor<T>, TensorError> {
        let tokens: Vec<Tensor<T>> = state.branches.iter().map(|b| b.tokens.clone()).collect();
        let all = Tensor::concat(&tokens, 0)?;
        if self.cfg.mean_pool {
            let n = all.rows();
            let pool = Tensor::full(vec![1, n], T::cast_from(1.0 / n as f64));
            pool.matmul(&all)
        } else {
            let numel = all.numel();
            all.reshape(vec![1, numel])
        }
    }

    /// Logits for one sample (`[1, K]`). `series` is T*C values, time-major.
    pub fn forward_sample(&self, series: &[T], ctx: &mut ForwardCtx) -> Result<Tensor<T>, ModelError> {
        let state = self.embed.forward_sample(series, ctx)?;
        let state = self.encoder.forward(state, ctx)?;
        let h = self.representation(&state)?;
        Ok(self.head.forward(&h)?)
    }

    /// Logits for a batch (`[B, K]`). Samples are processed independently,
    /// so permuting the batch permutes the rows and nothing else.
    pub fn forward_batch(&self, batch: &[Vec<T>], ctx: &mut ForwardCtx) -> Result<Tensor<T>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Checkpoint("empty batch".into()));
        }
        let rows = batch
            .iter()
            .map(|s| self.forward_sample(s, ctx))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::concat(&rows, 0)?)
    }

    /// Eval-mode class probabilities for one sample.
    pub fn predict_proba(&self, series: &[T]) -> Result<Vec<f64>, ModelError> {
        let mut ctx = ForwardCtx::eval();
        let logits = self.forward_sample(series, &mut ctx)?;
        let probs = logits.softmax(1)?;
        Ok(probs.to_vec().iter().map(|v| v.cast_f64()).collect())
    }

    /// Snapshot of all parameter buffers, in `params()` order.
    pub fn param_snapshot(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| p.to_vec()).collect()
    }

    pub fn restore_snapshot(&self, snapshot: &[Vec<T>]) {
        for (p, s) in self.params().iter().zip(snapshot) {
            p.set_data(s.clone()).expect("snapshot shape");
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let config_text = self.cfg.to_key_values();
        let config_bytes = config_text.as_bytes();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::DTYPE);
        out.extend_from_slice(&(config_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(config_bytes);
        out.extend_from_slice(&fnv1a(config_bytes).to_le_bytes());
        let named = self.named_params();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, tensor) in &named {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.extend_from_slice(&(tensor.numel() as u64).to_le_bytes());
            tensor.with_data(|d| {
                for &v in d {
                    v.write_le(&mut out);
                }
            });
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Build a model from a checkpoint, using the embedded config.
    pub fn load_checkpoint(path: &Path) -> Result<Self, ModelError> {
        let (cfg, arrays) = read_checkpoint::<T>(path)?;
        Self::from_arrays(cfg, arrays)
    }

    /// Build from a checkpoint, requiring its embedded config to equal
    /// `expected` (e.g. rejects a K=2 checkpoint under a K=3 config).
    pub fn load_checkpoint_with_config(path: &Path, expected: &ModelConfig) -> Result<Self, ModelError> {
        let (cfg, arrays) = read_checkpoint::<T>(path)?;
        if &cfg != expected {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint config does not match: checkpoint {{{}}} vs expected {{{}}}",
                cfg.to_key_values().replace('\n', " ").trim(),
                expected.to_key_values().replace('\n', " ").trim(),
            )));
        }
        Self::from_arrays(cfg, arrays)
    }

    fn from_arrays(cfg: ModelConfig, arrays: NamedArrays<T>) -> Result<Self, ModelError> {
        let model = Self::seeded(cfg, 0)?;
        let named = model.named_params();
        if named.len() != arrays.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} arrays, model wants {}",
                arrays.len(),
                named.len()
            )));
        }
        for ((expect_name, tensor), (name, values)) in named.iter().zip(arrays) {
            if expect_name != &name {
                return Err(ModelError::Checkpoint(format!(
                    "array order mismatch: found '{}', expected '{}'",
                    name, expect_name
                )));
            }
            if values.len() != tensor.numel() {
                return Err(ModelError::Checkpoint(format!(
                    "array '{}' has {} values, model wants {}",
                    name,
                    values.len(),
                    tensor.numel()
                )));
            }
            tensor.set_data(values)?;
        }
        Ok(model)
    }
}

/// Named parameter arrays in checkpoint order.
pub type NamedArrays<T> = Vec<(String, Vec<T>)>;

/// Parse a checkpoint file into its embedded config and named arrays.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelConfig, NamedArrays<T>), ModelError> {
    let bytes = fs::read(path)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        if *cursor + n > bytes.len() {
            return Err(ModelError::Checkpoint("unexpected end of file".into()));
        }
        let s = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };

    if take(&mut cursor, 4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {}", version)));
    }
    let dtype = take(&mut cursor, 1)?[0];
    if dtype != T::DTYPE {
        return Err(ModelError::Checkpoint(format!(
            "element type tag {} does not match {}",
            dtype,
            T::DTYPE_NAME
        )));
    }
    let config_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let config_bytes = take(&mut cursor, config_len)?.to_vec();
    let digest = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    if digest != fnv1a(&config_bytes) {
        return Err(ModelError::Checkpoint("config digest mismatch".into()));
    }
    let config_text = String::from_utf8(config_bytes)
        .map_err(|_| ModelError::Checkpoint("config block is not utf-8".into()))?;
    let cfg = ModelConfig::from_key_values(&config_text)?;

    let n_arrays = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let name_len = u16::from_le_bytes(take(&mut cursor, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("array name is not utf-8".into()))?;
        let numel = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let raw = take(&mut cursor, numel * T::WIDTH)?;
        let values: Vec<T> = raw.chunks_exact(T::WIDTH).map(T::read_le).collect();
        arrays.push((name, values));
    }
    if cursor != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes after arrays".into()));
    }
    Ok((cfg, arrays))
}
