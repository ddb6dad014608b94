//! Medformer: a multi-granularity patching transformer for multivariate
//! time-series classification, built on a small reverse-mode autodiff core.
//!
//! The pipeline: cross-channel patches at several temporal granularities are
//! projected into a shared latent space, each granularity carries a router
//! token, and every encoder layer runs attention in two stages — dense
//! self-attention inside each granularity, then attention among the routers
//! only — so cross-scale information flows at `n^2` cost instead of
//! `(sum N_i)^2`. A training harness (Adam, early stopping on validation F1),
//! subject-aware dataset splitting, six macro metrics, and an attention-cost
//! benchmark complete the library.

pub mod complexity;
pub mod data;
pub mod embed;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use complexity::{power_series_patch_lengths, run_complexity_sweep, AttnMode, BenchPoint};
pub use data::{Dataset, DatasetMeta, SampleRecord, SplitMode, SplitPlan, SynthConfig};
pub use embed::{Augmentation, AugmentationBank, GranularitySpec, PatchEmbedder};
pub use encoder::{attention_pair_count, Branch, EncoderStack, MedformerLayer, PairCountMode, TokenState};
pub use metrics::{compute_metrics, MetricsReport};
pub use model::{Medformer, ModelConfig, ModelError, Precision, Variant};
pub use nn::{cross_entropy, Activation, AttentionBlock, FeedForward, ForwardCtx, LayerNorm, Linear};
pub use tensor::{Scalar, Tensor, TensorError};
pub use train::{evaluate, run_ablation, train, AblationRow, RunLog, TrainConfig, TrainError};

#[cfg(test)]
pub(crate) mod testutil;
