//! Empirical validation of the attention-cost analysis: analytic pair
//! counts, instrumented counts, and wall-clock comparison of the two-stage
//! layout against dense attention over the full token concatenation.
//!
//! Counts are the primary signal; wall-clock is hardware-dependent and
//! reported as the median of repeated single-threaded runs after warmups.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::embed::GranularitySpec;
use crate::encoder::{attention_pair_count, PairCountMode};
use crate::nn::{AttentionBlock, ForwardCtx};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("bench: {0}")]
    Invalid(String),
    #[error("naive attention refused: {tokens} tokens exceed the cap of {cap}")]
    TokenCap { tokens: usize, cap: usize },
}

/// Attention workload layout being measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMode {
    /// Dense self-attention over the concatenation of all patch tokens.
    Naive,
    /// Intra-granularity attention per branch (router included) plus
    /// router-only inter-granularity attention.
    TwoStage,
}

impl std::fmt::Display for AttnMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttnMode::Naive => "naive",
            AttnMode::TwoStage => "two_stage",
        })
    }
}

impl std::str::FromStr for AttnMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(AttnMode::Naive),
            "two_stage" => Ok(AttnMode::TwoStage),
            other => Err(format!("unknown attention mode '{}' (expected naive|two_stage)", other)),
        }
    }
}

/// One measured sweep point.
#[derive(Debug, Clone)]
pub struct BenchPoint {
    pub series_len: usize,
    pub mode: AttnMode,
    pub patch_lengths: Vec<usize>,
    pub model_dim: usize,
    /// Idealized count from the cost analysis (routers excluded for the
    /// two-stage mode): naive (sum N_i)^2, two-stage sum N_i^2 + n^2.
    pub pair_count_paper: u64,
    /// Exact analytic count of what the workload executes (routers included
    /// in the two-stage mode). Must equal `pair_count_measured`.
    pub pair_count_formula: u64,
    pub pair_count_measured: u64,
    /// Largest single score matrix, a peak-memory proxy.
    pub peak_score_elems: u64,
    pub wall_time_ns_median: u128,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub model_dim: usize,
    pub heads: usize,
    /// Timed repetitions; the median is reported.
    pub repeats: usize,
    pub warmups: usize,
    /// `Naive` refuses workloads above this many tokens.
    pub naive_token_cap: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model_dim: 64,
            heads: 4,
            repeats: 9,
            warmups: 2,
            naive_token_cap: 8192,
            seed: 7,
        }
    }
}

/// Patch lengths 2, 4, 8, ... while 2^i < t.
pub fn power_series_patch_lengths(t: usize) -> Vec<usize> {
    (1..)
        .map(|i| 1usize << i)
        .take_while(|&l| l < t)
        .collect()
}

/// Frozen random tokens for every branch of a spec.
fn build_tokens<T: Scalar>(
    spec: &GranularitySpec,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Tensor<T>>, Vec<Tensor<T>>) {
    use rand::Rng;
    let mut rand_tensor = |rows: usize| {
        let data: Vec<T> = (0..rows * dim)
            .map(|_| T::cast_from(rng.gen_range(-1.0..1.0)))
            .collect();
        Tensor::new(data, vec![rows, dim]).expect("token shape")
    };
    let tokens = spec.patch_counts().iter().map(|&n| rand_tensor(n)).collect();
    let routers = (0..spec.num_branches()).map(|_| rand_tensor(1)).collect();
    (tokens, routers)
}

/// Dense self-attention over the concatenation of all patch tokens (routers
/// excluded): the rejected baseline, kept as a cost and correctness
/// reference.
pub fn naive_concat_attention<T: Scalar>(
    tokens: &[Tensor<T>],
    block: &AttentionBlock<T>,
    cap: usize,
    ctx: &mut ForwardCtx,
) -> Result<Tensor<T>, BenchError> {
    let total: usize = tokens.iter().map(|t| t.rows()).sum();
    if total > cap {
        return Err(BenchError::TokenCap { tokens: total, cap });
    }
    let x = Tensor::concat(tokens, 0)?;
    Ok(block.forward(&x, &x, &x, ctx)?)
}

/// One layer of the two-stage attention workload: per-branch attention over
/// [tokens ‖ router], then attention over the routers.
pub fn two_stage_attention<T: Scalar>(
    tokens: &[Tensor<T>],
    routers: &[Tensor<T>],
    intra: &AttentionBlock<T>,
    inter: &AttentionBlock<T>,
    ctx: &mut ForwardCtx,
) -> Result<Vec<Tensor<T>>, BenchError> {
    let mut outputs = Vec::with_capacity(tokens.len());
    for (x, u) in tokens.iter().zip(routers) {
        let z = Tensor::concat(&[x.clone(), u.clone()], 0)?;
        outputs.push(intra.forward(&z, &z, &z, ctx)?);
    }
    let u = Tensor::concat(routers, 0)?;
    outputs.push(inter.forward(&u, &u, &u, ctx)?);
    Ok(outputs)
}

fn median_ns(mut samples: Vec<u128>) -> u128 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Measure one (T, mode) point with f32 workloads and frozen weights.
pub fn measure_point(
    series_len: usize,
    patch_lengths: Vec<usize>,
    mode: AttnMode,
    cfg: &SweepConfig,
) -> Result<BenchPoint, BenchError> {
    let spec = GranularitySpec::new(patch_lengths.clone(), series_len)
        .map_err(|e| BenchError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let intra = AttentionBlock::<f32>::new(cfg.model_dim, cfg.heads, &mut rng)?;
    let inter = AttentionBlock::<f32>::new(cfg.model_dim, cfg.heads, &mut rng)?;
    intra.freeze();
    inter.freeze();
    let (tokens, routers) = build_tokens::<f32>(&spec, cfg.model_dim, &mut rng);

    let run = |ctx: &mut ForwardCtx| -> Result<(), BenchError> {
        match mode {
            AttnMode::Naive => {
                naive_concat_attention(&tokens, &intra, cfg.naive_token_cap, ctx)?;
            }
            AttnMode::TwoStage => {
                two_stage_attention(&tokens, &routers, &intra, &inter, ctx)?;
            }
        }
        Ok(())
    };

    let mut count_ctx = ForwardCtx::eval();
    run(&mut count_ctx)?;
    for _ in 0..cfg.warmups {
        let mut ctx = ForwardCtx::eval();
        run(&mut ctx)?;
    }
    let mut times = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats.max(1) {
        let mut ctx = ForwardCtx::eval();
        let start = Instant::now();
        run(&mut ctx)?;
        times.push(start.elapsed().as_nanos());
    }

    let (paper_mode, formula_mode) = match mode {
        AttnMode::Naive => (PairCountMode::Naive, PairCountMode::Naive),
        AttnMode::TwoStage => (PairCountMode::TwoStage, PairCountMode::TwoStageExact),
    };
    Ok(BenchPoint {
        series_len,
        mode,
        patch_lengths,
        model_dim: cfg.model_dim,
        pair_count_paper: attention_pair_count(&spec, paper_mode),
        pair_count_formula: attention_pair_count(&spec, formula_mode),
        pair_count_measured: count_ctx.pair_count,
        peak_score_elems: count_ctx.pair_peak,
        wall_time_ns_median: median_ns(times),
    })
}

/// Sweep every (T, mode) combination. `T` values must be sorted ascending.
pub fn run_complexity_sweep(
    t_values: &[usize],
    patch_list_builder: &dyn Fn(usize) -> Vec<usize>,
    modes: &[AttnMode],
    cfg: &SweepConfig,
) -> Result<Vec<BenchPoint>, BenchError> {
    if t_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Invalid("T values must be sorted ascending".into()));
    }
    let mut points = Vec::new();
    for &t in t_values {
        let lens = patch_list_builder(t);
        for &mode in modes {
            points.push(measure_point(t, lens.clone(), mode, cfg)?);
        }
    }
    Ok(points)
}

/// CSV with one row per bench point.
pub fn bench_csv(points: &[BenchPoint]) -> String {
    let mut out = String::from(
        "T,mode,pair_count_formula,pair_count_measured,wall_time_ns_median,pair_count_paper,peak_score_elems\n",
    );
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.series_len,
            p.mode,
            p.pair_count_formula,
            p.pair_count_measured,
            p.wall_time_ns_median,
            p.pair_count_paper,
            p.peak_score_elems
        ));
    }
    out
}
