//! Benchmark-only crate; see `benches/attention.rs`. The measured workloads
//! come from `medformer_core::complexity`, which the CLI `bench` subcommand
//! and the acceptance suite also use.

pub use medformer_core::complexity::{
    naive_concat_attention, power_series_patch_lengths, two_stage_attention, AttnMode,
};
