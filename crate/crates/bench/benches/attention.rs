//! Wall-clock comparison of the two attention layouts on power-series patch
//! lists: dense attention over the full token concatenation vs per-branch
//! attention plus router-only exchange. Counts predict roughly a 3x gap in
//! score-matrix work at T=256 and the gap widens with T.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use medformer_core::complexity::{
    naive_concat_attention, power_series_patch_lengths, two_stage_attention,
};
use medformer_core::embed::GranularitySpec;
use medformer_core::nn::{AttentionBlock, ForwardCtx};
use medformer_core::tensor::Tensor;

const DIM: usize = 64;
const HEADS: usize = 4;

struct Workload {
    tokens: Vec<Tensor<f32>>,
    routers: Vec<Tensor<f32>>,
    intra: AttentionBlock<f32>,
    inter: AttentionBlock<f32>,
}

fn build_workload(t: usize) -> Workload {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = GranularitySpec::new(power_series_patch_lengths(t), t).unwrap();
    let intra = AttentionBlock::new(DIM, HEADS, &mut rng).unwrap();
    let inter = AttentionBlock::new(DIM, HEADS, &mut rng).unwrap();
    intra.freeze();
    inter.freeze();
    let mut rand_tensor = |rows: usize| {
        let data: Vec<f32> = (0..rows * DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(data, vec![rows, DIM]).unwrap()
    };
    let tokens: Vec<Tensor<f32>> = spec.patch_counts().iter().map(|&n| rand_tensor(n)).collect();
    let routers: Vec<Tensor<f32>> = (0..spec.num_branches()).map(|_| rand_tensor(1)).collect();
    Workload { tokens, routers, intra, inter }
}

fn bench_attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for t in [128usize, 256, 512] {
        let w = build_workload(t);
        group.bench_with_input(BenchmarkId::new("naive", t), &w, |b, w| {
            b.iter(|| {
                let mut ctx = ForwardCtx::eval();
                naive_concat_attention(&w.tokens, &w.intra, usize::MAX, &mut ctx).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("two_stage", t), &w, |b, w| {
            b.iter(|| {
                let mut ctx = ForwardCtx::eval();
                two_stage_attention(&w.tokens, &w.routers, &w.intra, &w.inter, &mut ctx).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_attention);
criterion_main!(benches);
