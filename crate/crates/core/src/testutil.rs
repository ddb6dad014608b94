//! Shared test oracles: central finite differences and a plain-loop attention
//! reference. These deliberately avoid the `Tensor` op implementations they
//! are used to check.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Relative error with a floor so near-zero pairs do not blow up.
pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite-difference check of every element of every parameter.
/// `loss_fn` must rebuild the graph from the parameters' current data on
/// each call. Returns the maximum relative error across all elements.
pub(crate) fn max_fd_rel_err(
    params: &[Tensor<f64>],
    loss_fn: &dyn Fn() -> Tensor<f64>,
    eps: f64,
) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    loss.backward().expect("backward in finite-difference check");
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let orig = p.with_data(|d| d[j]);
            p.with_data_mut(|d| d[j] = orig + eps);
            let up = loss_fn().item();
            p.with_data_mut(|d| d[j] = orig - eps);
            let down = loss_fn().item();
            p.with_data_mut(|d| d[j] = orig);
            let fd = (up - down) / (2.0 * eps);
            let e = rel_err(analytic[pi][j], fd);
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

/// Multi-head scaled dot-product attention computed with plain loops on raw
/// slices; the oracle for the `Tensor`-based implementation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn naive_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    nq: usize,
    nk: usize,
    dim: usize,
    heads: usize,
    wq: &[f64],
    bq: &[f64],
    wk: &[f64],
    bk: &[f64],
    wv: &[f64],
    bv: &[f64],
    wo: &[f64],
    bo: &[f64],
) -> Vec<f64> {
    let project = |x: &[f64], n: usize, w: &[f64], b: &[f64]| -> Vec<f64> {
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
    let qp = project(q, nq, wq, bq);
    let kp = project(k, nk, wk, bk);
    let vp = project(v, nk, wv, bv);

    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads_out = vec![0.0; nq * dim];
    for h in 0..heads {
        let off = h * head_dim;
        for i in 0..nq {
            let mut scores = vec![0.0; nk];
            for jj in 0..nk {
                let mut s = 0.0;
                for t in 0..head_dim {
                    s += qp[i * dim + off + t] * kp[jj * dim + off + t];
                }
                scores[jj] = s * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                denom += *s;
            }
            for t in 0..head_dim {
                let mut acc = 0.0;
                for jj in 0..nk {
                    acc += scores[jj] / denom * vp[jj * dim + off + t];
                }
                heads_out[i * dim + off + t] = acc;
            }
        }
    }

    let mut out = vec![0.0; nq * dim];
    for i in 0..nq {
        for j in 0..dim {
            let mut s = bo[j];
            for t in 0..dim {
                s += heads_out[i * dim + t] * wo[t * dim + j];
            }
            out[i * dim + j] = s;
        }
    }
    out
}
