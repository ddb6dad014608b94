//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (`--nocapture` to see them).
//!
//! Oracles here are written from scratch against raw slices so they share no
//! code with the library paths they check.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use medformer_core::complexity::{power_series_patch_lengths, run_complexity_sweep, AttnMode, SweepConfig};
use medformer_core::data::{
    split, synth_generate, SplitMode, SplitPlan, SynthConfig,
};
use medformer_core::embed::{apply_augmentation, Augmentation, GranularitySpec};
use medformer_core::encoder::{attention_pair_count, Branch, PairCountMode, TokenState};
use medformer_core::metrics::{argmax, compute_metrics};
use medformer_core::model::{Medformer, ModelConfig, Precision, Variant};
use medformer_core::nn::{cross_entropy, ForwardCtx};
use medformer_core::tensor::Tensor;
use medformer_core::train::{evaluate, run_ablation, train, ablation_csv, EarlyStopper, TrainConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Independent multi-head attention: plain loops over raw slices.
#[allow(clippy::too_many_arguments)]
fn oracle_attention(
    q: &[f64],
    kv: &[f64],
    nq: usize,
    nk: usize,
    dim: usize,
    heads: usize,
    weights: &[(Vec<f64>, Vec<f64>)], // (W, b) for query, key, value, output
) -> Vec<f64> {
    let project = |x: &[f64], n: usize, w: &[f64], b: &[f64]| {
        let mut out = vec![0.0; n * dim];
        for i in 0..n {
            for j in 0..dim {
                let mut s = b[j];
                for t in 0..dim {
                    s += x[i * dim + t] * w[t * dim + j];
                }
                out[i * dim + j] = s;
            }
        }
        out
    };
    let qp = project(q, nq, &weights[0].0, &weights[0].1);
    let kp = project(kv, nk, &weights[1].0, &weights[1].1);
    let vp = project(kv, nk, &weights[2].0, &weights[2].1);
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut merged = vec![0.0; nq * dim];
    for h in 0..heads {
        let off = h * head_dim;
        for i in 0..nq {
            let mut scores = vec![0.0; nk];
            for j in 0..nk {
                let mut s = 0.0;
                for t in 0..head_dim {
                    s += qp[i * dim + off + t] * kp[j * dim + off + t];
                }
                scores[j] = s * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for t in 0..head_dim {
                let mut acc = 0.0;
                for j in 0..nk {
                    acc += (scores[j] - max).exp() / denom * vp[j * dim + off + t];
                }
                merged[i * dim + off + t] = acc;
            }
        }
    }
    project(&merged, nq, &weights[3].0, &weights[3].1)
}

fn block_weights(b: &medformer_core::nn::AttentionBlock<f64>) -> Vec<(Vec<f64>, Vec<f64>)> {
    [&b.query, &b.key, &b.value, &b.output]
        .iter()
        .map(|l| (l.weight.to_vec(), l.bias.as_ref().unwrap().to_vec()))
        .collect()
}

fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(16, 2, 2, vec![2, 4]);
    cfg.model_dim = 8;
    cfg.layers = 1;
    cfg.ffn_dim = 16;
    cfg.heads = 2;
    cfg.dropout = 0.1;
    cfg.precision = Precision::F64;
    cfg
}

#[test]
fn criterion_01_gradient_correctness() {
    let started = Instant::now();
    let cfg = tiny_config();
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let model = Medformer::<f64>::seeded(cfg.clone(), 100 + seed).unwrap();
        let mut r = rng(200 + seed);
        let batch: Vec<Vec<f64>> = (0..2)
            .map(|_| rand_vec(&mut r, cfg.series_len * cfg.channels, -1.0, 1.0))
            .collect();
        let labels = vec![0usize, 1];
        let params = model.params();

        // training-mode loss with a fixed ctx seed: augmentation and dropout
        // masks are identical on every call, so the loss is a deterministic
        // function of the parameters
        let loss_fn = || {
            let mut ctx = ForwardCtx::train(999 + seed);
            let logits = model.forward_batch(&batch, &mut ctx).unwrap();
            cross_entropy(&logits, &labels).unwrap()
        };

        for p in &params {
            p.zero_grad();
        }
        let loss = loss_fn();
        loss.backward().unwrap();
        let analytic: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();

        let eps = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            for j in 0..p.numel() {
                let orig = p.with_data(|d| d[j]);
                p.with_data_mut(|d| d[j] = orig + eps);
                let up = loss_fn().item();
                p.with_data_mut(|d| d[j] = orig - eps);
                let down = loss_fn().item();
                p.with_data_mut(|d| d[j] = orig);
                let fd = (up - down) / (2.0 * eps);
                let a = analytic[pi][j];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(worst < 1e-4, "max relative error {}", worst);
    assert!(elapsed < 60.0, "gradient check took {:.1}s", elapsed);
    println!(
        "criterion 1 (gradient correctness): PASS — max rel err {:.2e} over 5 seeds in {:.1}s",
        worst, elapsed
    );
}

#[test]
fn criterion_02_attention_oracle_equivalence() {
    let mut worst = 0.0f64;
    let mut configs = 0;
    for seed in 0..20u64 {
        let mut r = rng(300 + seed);
        let dim = [8, 16][r.gen_range(0..2)];
        let heads = [2, 4][r.gen_range(0..2)];
        let n_branches = r.gen_range(2..6);
        let layer = medformer_core::encoder::MedformerLayer::<f64>::new(
            dim,
            heads,
            dim * 2,
            0.0,
            medformer_core::nn::Activation::Gelu,
            true,
            &mut r,
        )
        .unwrap();

        // intra stage vs dense attention over [x ‖ u]
        for _ in 0..n_branches {
            let n = r.gen_range(1..9);
            let branch = Branch {
                tokens: Tensor::new(rand_vec(&mut r, n * dim, -1.0, 1.0), vec![n, dim]).unwrap(),
                router: Tensor::new(rand_vec(&mut r, dim, -1.0, 1.0), vec![1, dim]).unwrap(),
            };
            let mut ctx = ForwardCtx::eval();
            let got = layer.intra_attention(&branch, &mut ctx).unwrap();
            let mut z = branch.tokens.to_vec();
            z.extend(branch.router.to_vec());
            let expected =
                oracle_attention(&z, &z, n + 1, n + 1, dim, heads, &block_weights(&layer.intra));
            let got_flat: Vec<f64> = got
                .tokens
                .to_vec()
                .into_iter()
                .chain(got.router.to_vec())
                .collect();
            for (a, b) in got_flat.iter().zip(&expected) {
                worst = worst.max((a - b).abs());
            }
        }

        // inter stage vs dense attention over U
        let routers: Vec<Tensor<f64>> = (0..n_branches)
            .map(|_| Tensor::new(rand_vec(&mut r, dim, -1.0, 1.0), vec![1, dim]).unwrap())
            .collect();
        let mut ctx = ForwardCtx::eval();
        let got = layer.inter_attention(&routers, &mut ctx).unwrap();
        let mut u = Vec::new();
        for router in &routers {
            u.extend(router.to_vec());
        }
        let expected = oracle_attention(
            &u,
            &u,
            n_branches,
            n_branches,
            dim,
            heads,
            &block_weights(layer.inter.as_ref().unwrap()),
        );
        for (i, router) in got.iter().enumerate() {
            for (a, b) in router.to_vec().iter().zip(&expected[i * dim..(i + 1) * dim]) {
                worst = worst.max((a - b).abs());
            }
        }
        configs += 1;
    }
    assert!(worst < 1e-6, "max abs deviation {}", worst);
    println!(
        "criterion 2 (attention oracle equivalence): PASS — max abs dev {:.2e} over {} configs",
        worst, configs
    );
}

#[test]
fn criterion_03_complexity_counts_and_walltime() {
    // instrumented counts == sum (N_i + 1)^2 + n^2, 10 random patch lists
    let mut r = rng(400);
    for round in 0..10 {
        let dim = 8;
        let t = r.gen_range(16..64);
        let n_branches = r.gen_range(1..5);
        let lens: Vec<usize> = (0..n_branches).map(|_| r.gen_range(1..=t)).collect();
        let spec = GranularitySpec::new(lens, t).unwrap();
        let layer = medformer_core::encoder::MedformerLayer::<f64>::new(
            dim,
            2,
            16,
            0.0,
            medformer_core::nn::Activation::Gelu,
            true,
            &mut r,
        )
        .unwrap();
        let branches: Vec<Branch<f64>> = spec
            .patch_counts()
            .iter()
            .map(|&n| Branch {
                tokens: Tensor::new(rand_vec(&mut r, n * dim, -1.0, 1.0), vec![n, dim]).unwrap(),
                router: Tensor::new(rand_vec(&mut r, dim, -1.0, 1.0), vec![1, dim]).unwrap(),
            })
            .collect();
        let mut ctx = ForwardCtx::eval();
        layer.forward(&TokenState { branches }, &mut ctx).unwrap();
        let expected = attention_pair_count(&spec, PairCountMode::TwoStageExact);
        assert_eq!(ctx.pair_count, expected, "round {}", round);
    }

    // power-series inequality for every tested T
    for t in [64usize, 128, 256, 512, 1024] {
        let spec = GranularitySpec::new(power_series_patch_lengths(t), t).unwrap();
        let sum_sq: u64 = spec.patch_counts().iter().map(|&c| (c * c) as u64).sum();
        let bound = (t * t) as f64 / 3.0 + 2.0 * t as f64 + (t as f64).log2();
        assert!(
            (sum_sq as f64) <= bound,
            "T={}: sum N_i^2 = {} exceeds {}",
            t,
            sum_sq,
            bound
        );
    }

    // two-stage beats naive wall-time at T >= 256
    let sweep = SweepConfig::default();
    let points = run_complexity_sweep(
        &[64, 128, 256, 512, 1024],
        &power_series_patch_lengths,
        &[AttnMode::Naive, AttnMode::TwoStage],
        &sweep,
    )
    .unwrap();
    for p in &points {
        assert_eq!(
            p.pair_count_measured, p.pair_count_formula,
            "instrumented count mismatch at T={} {}",
            p.series_len, p.mode
        );
    }
    let mut ratios = Vec::new();
    for t in [256usize, 512, 1024] {
        let naive = points
            .iter()
            .find(|p| p.series_len == t && p.mode == AttnMode::Naive)
            .unwrap();
        let two = points
            .iter()
            .find(|p| p.series_len == t && p.mode == AttnMode::TwoStage)
            .unwrap();
        assert!(
            two.wall_time_ns_median < naive.wall_time_ns_median,
            "T={}: two-stage {}ns not faster than naive {}ns",
            t,
            two.wall_time_ns_median,
            naive.wall_time_ns_median
        );
        ratios.push(naive.wall_time_ns_median as f64 / two.wall_time_ns_median as f64);
    }
    println!(
        "criterion 3 (complexity counts + wall-time): PASS — naive/two-stage time ratios at T=256/512/1024: {:.2}/{:.2}/{:.2}",
        ratios[0], ratios[1], ratios[2]
    );
}

#[test]
fn criterion_04_routing_isolation() {
    // six layers without inter attention: zero cross-branch Jacobian
    let mut cfg = tiny_config();
    cfg.layers = 6;
    cfg.dropout = 0.0;
    cfg.variant = Variant::NoInterAttention;
    let ablated = Medformer::<f64>::seeded(cfg.clone(), 500).unwrap();
    let mut r = rng(501);
    let series = rand_vec(&mut r, cfg.series_len * cfg.channels, -1.0, 1.0);

    let perturb_state = |model: &Medformer<f64>, delta: f64| {
        let mut ctx = ForwardCtx::eval();
        let state = model.embedder().forward_sample(&series, &mut ctx).unwrap();
        let perturbed = TokenState {
            branches: state
                .branches
                .iter()
                .enumerate()
                .map(|(i, b)| Branch {
                    tokens: if i == 1 { b.tokens.add_scalar(delta) } else { b.tokens.clone() },
                    router: b.router.clone(),
                })
                .collect(),
        };
        let out = model.encoder().forward(perturbed, &mut ctx).unwrap();
        (
            out.branches[0].tokens.to_vec(),
            out.branches[0].router.to_vec(),
            out.branches[1].tokens.to_vec(),
        )
    };

    let (base_tokens, base_router, base_other) = perturb_state(&ablated, 0.0);
    let (pert_tokens, pert_router, pert_other) = perturb_state(&ablated, 0.25);
    assert_eq!(base_tokens, pert_tokens, "ablated cross-branch Jacobian must be exactly zero");
    assert_eq!(base_router, pert_router);
    assert_ne!(base_other, pert_other, "the perturbed branch itself must change");

    // enabled inter stage: the perturbation crosses branches after one layer
    // (via the routers) and reaches the other branch's patch tokens by two
    let mut cfg = tiny_config();
    cfg.dropout = 0.0;
    cfg.layers = 1;
    let one_layer = Medformer::<f64>::seeded(cfg.clone(), 502).unwrap();
    let (_, router_a, _) = perturb_state(&one_layer, 0.0);
    let (_, router_b, _) = perturb_state(&one_layer, 0.25);
    let router_delta = router_a
        .iter()
        .zip(&router_b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(router_delta > 1e-8, "router delta {}", router_delta);

    cfg.layers = 2;
    let two_layers = Medformer::<f64>::seeded(cfg, 502).unwrap();
    let (tokens_a, _, _) = perturb_state(&two_layers, 0.0);
    let (tokens_b, _, _) = perturb_state(&two_layers, 0.25);
    let token_delta = tokens_a
        .iter()
        .zip(&tokens_b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(token_delta > 1e-8, "token delta {}", token_delta);
    println!(
        "criterion 4 (routing isolation): PASS — ablated delta 0, enabled router delta {:.2e}, token delta {:.2e}",
        router_delta, token_delta
    );
}

#[test]
fn criterion_05_split_leakage() {
    let ds = synth_generate(&SynthConfig {
        n_subjects: 10,
        samples_per_subject: 10,
        series_len: 8,
        channels: 1,
        num_classes: 2,
        difficulty: 0.1,
        seed: 600,
    })
    .unwrap();

    for seed in 0..1000u64 {
        let plan = SplitPlan::ratios(SplitMode::SubjectIndependent, 0.6, 0.2, 0.2, seed).unwrap();
        let (train_set, val_set, test_set) = split(&ds, &plan).unwrap();
        let a = train_set.subject_ids();
        let b = val_set.subject_ids();
        let c = test_set.subject_ids();
        let overlap = |x: &[u32], y: &[u32]| x.iter().any(|v| y.contains(v));
        assert!(
            !overlap(&a, &b) && !overlap(&a, &c) && !overlap(&b, &c),
            "subject overlap at seed {}",
            seed
        );
        assert_eq!(train_set.len() + val_set.len() + test_set.len(), ds.len());
    }

    let plan = SplitPlan::ratios(SplitMode::SubjectDependent, 0.6, 0.2, 0.2, 1).unwrap();
    let (train_set, val_set, test_set) = split(&ds, &plan).unwrap();
    assert_eq!((train_set.len(), val_set.len(), test_set.len()), (60, 20, 20));
    println!("criterion 5 (split leakage): PASS — 1000 independent splits leak-free, dependent split 60/20/20");
}

#[test]
fn criterion_06_metrics_oracle() {
    // perfect classifier scores 1.0 on all six
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let probs: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..3).map(|k| if k == l { 0.9 } else { 0.05 }).collect())
        .collect();
    let m = compute_metrics(&probs, &labels, 3).unwrap();
    assert_eq!(m.values(), [1.0; 6]);

    let pairwise_auroc = |scores: &[f64], positive: &[bool]| -> Option<f64> {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            if !positive[i] {
                continue;
            }
            for j in 0..scores.len() {
                if positive[j] {
                    continue;
                }
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        (pairs > 0.0).then(|| wins / pairs)
    };
    let recount_ap = |scores: &[f64], positive: &[bool]| -> Option<f64> {
        let total_pos = positive.iter().filter(|&&p| p).count();
        if total_pos == 0 {
            return None;
        }
        let mut thresholds = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let (mut ap, mut prev_recall) = (0.0, 0.0);
        for &t in &thresholds {
            let (mut tp, mut fp) = (0.0, 0.0);
            for (i, &s) in scores.iter().enumerate() {
                if s >= t {
                    if positive[i] {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / total_pos as f64;
            ap += (recall - prev_recall) * (tp / (tp + fp));
            prev_recall = recall;
        }
        Some(ap)
    };

    let mut r = rng(700);
    let mut checked = 0;
    for round in 0..110 {
        let classes = 2 + round % 3;
        let n = 6 + r.gen_range(0..25);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..classes).map(|_| r.gen_range(0..25) as f64 / 25.0).collect())
            .collect();
        let m = compute_metrics(&probs, &labels, classes).unwrap();

        let (mut auroc_sum, mut auroc_n, mut ap_sum, mut ap_n) = (0.0, 0, 0.0, 0);
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        let preds: Vec<usize> = probs.iter().map(|row| argmax(row)).collect();
        for k in 0..classes {
            let scores: Vec<f64> = probs.iter().map(|row| row[k]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            if let Some(a) = pairwise_auroc(&scores, &positive) {
                auroc_sum += a;
                auroc_n += 1;
            }
            if let Some(a) = recount_ap(&scores, &positive) {
                ap_sum += a;
                ap_n += 1;
            }
            let tp = preds.iter().zip(&labels).filter(|&(&p, &l)| p == k && l == k).count() as f64;
            let pk = preds.iter().filter(|&&p| p == k).count() as f64;
            let ak = labels.iter().filter(|&&l| l == k).count() as f64;
            let prec = if pk > 0.0 { tp / pk } else { 0.0 };
            let rec = if ak > 0.0 { tp / ak } else { 0.0 };
            p_sum += prec;
            r_sum += rec;
            f_sum += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        }
        let k = classes as f64;
        assert!((m.precision - p_sum / k).abs() < 1e-9);
        assert!((m.recall - r_sum / k).abs() < 1e-9);
        assert!((m.f1 - f_sum / k).abs() < 1e-9);
        if auroc_n > 0 {
            assert!((m.auroc - auroc_sum / auroc_n as f64).abs() < 1e-9);
        }
        if ap_n > 0 {
            assert!((m.auprc - ap_sum / ap_n as f64).abs() < 1e-9);
        }
        checked += 1;
    }
    println!(
        "criterion 6 (metrics oracle): PASS — {} random prediction sets within 1e-9, perfect case all 1.0",
        checked
    );
}

#[test]
fn criterion_07_augmentation_statistics() {
    let n = 100_000;

    // mask zero fraction
    let mut r = rng(800);
    let x = Tensor::<f64>::full(vec![1, n], 1.0);
    let masked = apply_augmentation(&x, Augmentation::Mask(0.35), &mut r).unwrap();
    let zero_fraction = masked.to_vec().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
    assert!((zero_fraction - 0.35).abs() < 0.01, "zero fraction {}", zero_fraction);

    // jitter residual std
    let jittered = apply_augmentation(&x, Augmentation::Jitter(0.2), &mut r).unwrap();
    let residuals: Vec<f64> = jittered.to_vec().iter().map(|v| v - 1.0).collect();
    let mean: f64 = residuals.iter().sum::<f64>() / n as f64;
    let std = (residuals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    assert!((std - 0.2).abs() < 0.2 * 0.02, "jitter std {}", std);

    // scale factor std
    let scaled = apply_augmentation(&x, Augmentation::Scale(0.2), &mut r).unwrap();
    let factors = scaled.to_vec();
    let fmean: f64 = factors.iter().sum::<f64>() / n as f64;
    let fstd = (factors.iter().map(|v| (v - fmean) * (v - fmean)).sum::<f64>() / n as f64).sqrt();
    assert!((fstd - 0.2).abs() < 0.2 * 0.02, "scale std {}", fstd);

    // eval mode is the exact identity: a model with an aggressive bank and
    // its no-augmentation twin (same seed, same weights) agree bitwise
    let mut cfg = tiny_config();
    cfg.augmentations = vec![Augmentation::Mask(0.9), Augmentation::Jitter(2.0)];
    let full = Medformer::<f64>::seeded(cfg.clone(), 801).unwrap();
    cfg.variant = Variant::NoAugmentation;
    let twin = Medformer::<f64>::seeded(cfg.clone(), 801).unwrap();
    let mut r = rng(802);
    let series = rand_vec(&mut r, cfg.series_len * cfg.channels, -1.0, 1.0);
    let mut ctx = ForwardCtx::eval();
    let a = full.forward_sample(&series, &mut ctx).unwrap().to_vec();
    let b = twin.forward_sample(&series, &mut ctx).unwrap().to_vec();
    assert_eq!(a, b, "eval-mode augmentation must be the exact identity");

    println!(
        "criterion 7 (augmentation statistics): PASS — mask {:.4}, jitter std {:.4}, scale std {:.4}, eval identity exact",
        zero_fraction, std, fstd
    );
}

#[test]
fn criterion_08_desk_scale_learning() {
    let started = Instant::now();
    let ds = synth_generate(&SynthConfig {
        n_subjects: 10,
        samples_per_subject: 100,
        series_len: 128,
        channels: 4,
        num_classes: 2,
        difficulty: 0.2,
        seed: 900,
    })
    .unwrap();
    let plan = SplitPlan::ratios(SplitMode::SubjectIndependent, 0.6, 0.2, 0.2, 0).unwrap();
    let (train_set, val_set, test_set) = split(&ds, &plan).unwrap();
    assert_eq!(train_set.subject_ids().len(), 6);
    assert_eq!(val_set.subject_ids().len(), 2);
    assert_eq!(test_set.subject_ids().len(), 2);

    let mut cfg = ModelConfig::new(128, 4, 2, vec![4, 8, 16]);
    cfg.model_dim = 64;
    cfg.layers = 2;
    cfg.ffn_dim = 128;
    cfg.heads = 4;
    cfg.dropout = 0.1;
    cfg.augmentations = vec![Augmentation::None, Augmentation::Mask(0.25)];
    let model = Medformer::<f32>::seeded(cfg.clone(), 41).unwrap();
    let tc = TrainConfig {
        lr: 1e-3,
        batch_size: 32,
        max_epochs: 50,
        patience: 10,
        seed: 41,
        ..TrainConfig::default()
    };
    let log = train(&model, &train_set.records, &val_set.records, &tc).unwrap();
    let report = evaluate(&model, &test_set.records).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        report.accuracy >= 0.95,
        "test accuracy {:.4} after {} epochs",
        report.accuracy,
        log.epochs.len()
    );
    assert!(elapsed < 600.0, "desk-scale run took {:.0}s", elapsed);

    // ablation harness: all four variants complete and emit the 4x6 table
    let ablate_tc = TrainConfig {
        lr: 1e-3,
        batch_size: 32,
        max_epochs: 2,
        patience: 2,
        seed: 41,
        ..TrainConfig::default()
    };
    let rows = run_ablation::<f32>(&cfg, &train_set, &val_set, &test_set, &ablate_tc, &[41]).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = ablation_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0].split(',').count(), 13); // variant + 6 means + 6 stds
    for (line, variant) in lines[1..].iter().zip(Variant::ALL) {
        assert!(line.starts_with(&variant.to_string()));
        assert_eq!(line.split(',').count(), 13);
    }

    println!(
        "criterion 8 (desk-scale learning): PASS — test acc {:.4} in {} epochs, total {:.0}s; ablation 4x6 table emitted",
        report.accuracy,
        log.epochs.len(),
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(&SynthConfig {
        n_subjects: 5,
        samples_per_subject: 8,
        series_len: 32,
        channels: 2,
        num_classes: 2,
        difficulty: 0.2,
        seed: 1000,
    })
    .unwrap();
    let plan = SplitPlan::ratios(SplitMode::SubjectIndependent, 0.6, 0.2, 0.2, 0).unwrap();
    let (train_set, val_set, _) = split(&ds, &plan).unwrap();

    let mut cfg = ModelConfig::new(32, 2, 2, vec![4, 8]);
    cfg.model_dim = 16;
    cfg.layers = 1;
    cfg.ffn_dim = 32;
    cfg.heads = 2;
    cfg.augmentations = vec![Augmentation::Mask(0.25)];
    let tc = TrainConfig { lr: 1e-3, max_epochs: 3, patience: 3, seed: 41, ..TrainConfig::default() };

    let mut outputs = Vec::new();
    for invocation in 0..2 {
        let model = Medformer::<f32>::seeded(cfg.clone(), 41).unwrap();
        let log = train(&model, &train_set.records, &val_set.records, &tc).unwrap();
        let path = dir.path().join(format!("ck{}.bin", invocation));
        model.save_checkpoint(&path).unwrap();
        outputs.push((std::fs::read(&path).unwrap(), log.to_csv()));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "checkpoints must be bitwise identical");
    assert_eq!(outputs[0].1, outputs[1].1, "run logs must be identical");
    println!(
        "criterion 9 (determinism): PASS — {} byte checkpoints and {} log lines identical across invocations",
        outputs[0].0.len(),
        outputs[0].1.lines().count()
    );
}

#[test]
fn criterion_10_protocol_fidelity() {
    // scripted metric sequence: patience 10, worsening from epoch 1
    let mut stopper = EarlyStopper::new(10);
    let mut stopped_at = 0;
    for epoch in 1..=100 {
        stopper.update(epoch, 1.0 - epoch as f64 * 0.01);
        if stopper.should_stop() {
            stopped_at = epoch;
            break;
        }
    }
    assert_eq!(stopped_at, 11, "stop after exactly `patience` non-improving epochs");
    assert_eq!(stopper.best_epoch(), 1);

    // scripted sequence with a late best: 0.5, 0.6, 0.55, 0.7, then flat
    let mut stopper = EarlyStopper::new(3);
    let seq = [0.5, 0.6, 0.55, 0.7, 0.7, 0.7, 0.7];
    let mut stopped_at = 0;
    for (i, &f1) in seq.iter().enumerate() {
        stopper.update(i + 1, f1);
        if stopper.should_stop() {
            stopped_at = i + 1;
            break;
        }
    }
    assert_eq!(stopped_at, 7, "three stale epochs after the epoch-4 best");
    assert_eq!(stopper.best_epoch(), 4);

    // the returned checkpoint corresponds to the best validation F1 epoch
    let ds = synth_generate(&SynthConfig {
        n_subjects: 5,
        samples_per_subject: 8,
        series_len: 32,
        channels: 2,
        num_classes: 2,
        difficulty: 0.4,
        seed: 1100,
    })
    .unwrap();
    let plan = SplitPlan::ratios(SplitMode::SubjectIndependent, 0.6, 0.2, 0.2, 0).unwrap();
    let (train_set, val_set, _) = split(&ds, &plan).unwrap();
    let mut cfg = ModelConfig::new(32, 2, 2, vec![4, 8]);
    cfg.model_dim = 16;
    cfg.layers = 1;
    cfg.ffn_dim = 32;
    cfg.heads = 2;
    let model = Medformer::<f32>::seeded(cfg, 41).unwrap();
    let tc = TrainConfig { lr: 1e-3, max_epochs: 6, patience: 6, seed: 41, ..TrainConfig::default() };
    let log = train(&model, &train_set.records, &val_set.records, &tc).unwrap();
    let best_logged = log.epochs.iter().map(|e| e.val.f1).fold(f64::NEG_INFINITY, f64::max);
    let restored = evaluate(&model, &val_set.records).unwrap();
    assert_eq!(restored.f1, best_logged, "restored params must reproduce the best F1");
    assert_eq!(log.epochs[log.best_epoch - 1].val.f1, best_logged);

    println!("criterion 10 (protocol fidelity): PASS — stop at patience, best-epoch checkpoint verified");
}
