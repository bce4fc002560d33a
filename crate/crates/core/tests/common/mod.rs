//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use mate_core::ssd::SsdParams;
use mate_core::tesa::TesaWeights;
use mate_core::{Shape3, TokenSeq, TokenTensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape3, dim: usize) -> TokenTensor {
    TokenTensor::from_vec(shape, dim, normal_vec(rng, shape.n_tokens() * dim, 1.0)).unwrap()
}

pub fn random_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> TokenSeq {
    TokenSeq::from_vec(len, dim, normal_vec(rng, len * dim, 1.0)).unwrap()
}

/// Decays in `[lo, 1)`, unit-scale B and C.
pub fn random_ssd_params(
    rng: &mut ChaCha8Rng,
    n: usize,
    state_dim: usize,
    head_dim: usize,
    lo: f64,
) -> SsdParams {
    let decay = (0..n).map(|_| rng.random_range(lo..1.0)).collect();
    let s = 1.0 / (state_dim as f64).sqrt();
    SsdParams::new(
        decay,
        normal_vec(rng, n * state_dim, s),
        normal_vec(rng, n * state_dim, s),
        state_dim,
        head_dim,
    )
    .unwrap()
}

pub fn random_tesa_weights(rng: &mut ChaCha8Rng, dim: usize) -> TesaWeights {
    let s = 1.0 / (dim as f64).sqrt();
    TesaWeights {
        dim,
        wq: normal_vec(rng, dim * dim, s),
        wk: normal_vec(rng, dim * dim, s),
        wv: normal_vec(rng, dim * dim, s),
        wo: normal_vec(rng, dim * dim, s),
    }
}

/// `max|a − b| / max(max|a|, max|b|)`, or the absolute gap when both are ~0.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `Σ a_i b_i`.
pub fn weighted_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y_i = Σ_{j≤i} (C_i·B_j) (∏_{k=j+1..i} a_k) x_j`, built entry by entry.
pub fn dense_ssd(x: &TokenSeq, p: &SsdParams) -> Vec<f64> {
    let n = x.len();
    let dh = x.dim();
    let mut y = vec![0.0; n * dh];
    for i in 0..n {
        // ∏_{k=j+1..i} a_k, grown leftwards from the diagonal
        let mut decay = 1.0;
        for j in (0..=i).rev() {
            let cb: f64 = p.c(i).iter().zip(p.b(j)).map(|(c, b)| c * b).sum();
            for c in 0..dh {
                y[i * dh + c] += cb * decay * x.token(j)[c];
            }
            decay *= p.decay()[j];
        }
    }
    y
}

fn project(w: &[f64], dim: usize, x: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|r| (0..dim).map(|c| w[r * dim + c] * x[c]).sum())
        .collect()
}

/// Global multi-head softmax attention over every token of `x`.
pub fn dense_attention(x: &TokenTensor, heads: usize, w: &TesaWeights) -> Vec<f64> {
    let n = x.n_tokens();
    let d = x.dim();
    let dh = d / heads;
    let q: Vec<Vec<f64>> = (0..n).map(|i| project(&w.wq, d, x.token(i))).collect();
    let k: Vec<Vec<f64>> = (0..n).map(|i| project(&w.wk, d, x.token(i))).collect();
    let v: Vec<Vec<f64>> = (0..n).map(|i| project(&w.wv, d, x.token(i))).collect();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let mut z = vec![0.0; d];
        for h in 0..heads {
            let ch = h * dh..(h + 1) * dh;
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    q[i][ch.clone()].iter().zip(&k[j][ch.clone()]).map(|(a, b)| a * b).sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..n {
                for c in ch.clone() {
                    z[c] += e[j] / s * v[j][c];
                }
            }
        }
        out[i * d..(i + 1) * d].copy_from_slice(&project(&w.wo, d, &z));
    }
    out
}

/// Sequence position of `(t, y, x)` in the layer-`l` rotary-major scan,
/// written directly from the four nestings.
pub fn rms_position(shape: Shape3, layer: usize, (t, y, x): (usize, usize, usize)) -> usize {
    let (tl, h, w) = (shape.t_len, shape.h_len, shape.w_len);
    match layer % 4 {
        0 => t * h * w + y * w + x,
        1 => t * h * w + x * h + y,
        2 => y * tl * w + x * tl + t,
        _ => x * tl * h + y * tl + t,
    }
}

/// d_k by brute force: every grid point paired with each unit-offset
/// neighbour lying in the same aligned 2×2×2 cell, given per-layer position
/// maps indexed by storage order.
pub fn brute_force_d_k(shape: Shape3, positions: &[Vec<usize>]) -> f64 {
    let dims = shape.dims();
    let in_full_cell = |c: [usize; 3]| (0..3).all(|a| dims[a] == 1 || c[a] < 2 * (dims[a] / 2));
    let (mut sum, mut count) = (0u64, 0u64);
    for a in 0..shape.n_tokens() {
        let (t, y, x) = shape.coord(a);
        let ca = [t, y, x];
        for axis in 0..3 {
            let mut cb = ca;
            cb[axis] += 1;
            if cb[axis] >= dims[axis] || ca[axis] / 2 != cb[axis] / 2 {
                continue;
            }
            if !in_full_cell(ca) || !in_full_cell(cb) {
                continue;
            }
            let b = shape.linear((cb[0], cb[1], cb[2]));
            let m = positions.iter().map(|p| p[a].abs_diff(p[b])).min().unwrap();
            sum += m as u64;
            count += 1;
        }
    }
    sum as f64 / count as f64
}
