//! Temporal shifted-window attention.
//!
//! The grid is tiled into `T_w × S_w × S_w` windows and multi-head softmax
//! attention runs independently inside each window. Odd layers shift the
//! tiling by half a window along every axis; windows that would cross the
//! grid boundary are clipped rather than wrapped, so every token lands in
//! exactly one window for either parity.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, matvec, matvec_t_acc, outer_acc};
use crate::tensor::{Shape3, TokenTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftParity {
    Unshifted,
    Shifted,
}

impl ShiftParity {
    pub fn for_layer(layer: usize) -> Self {
        if layer.is_multiple_of(2) {
            ShiftParity::Unshifted
        } else {
            ShiftParity::Shifted
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TesaConfig {
    pub t_window: usize,
    pub s_window: usize,
    pub heads: usize,
    pub shift: ShiftParity,
}

impl Default for TesaConfig {
    fn default() -> Self {
        TesaConfig {
            t_window: 8,
            s_window: 4,
            heads: 1,
            shift: ShiftParity::Unshifted,
        }
    }
}

impl TesaConfig {
    /// Tokens in a full window, `N_w = T_w · S_w · S_w`.
    pub fn window_volume(&self) -> usize {
        self.t_window * self.s_window * self.s_window
    }

    pub fn with_shift(self, shift: ShiftParity) -> Self {
        TesaConfig { shift, ..self }
    }

    /// Half-window offsets used by the shifted parity.
    pub fn shift_offsets(&self) -> [usize; 3] {
        match self.shift {
            ShiftParity::Unshifted => [0; 3],
            ShiftParity::Shifted => [self.t_window / 2, self.s_window / 2, self.s_window / 2],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.t_window == 0 || self.s_window == 0 {
            return Err(Error::domain("window sizes must be >= 1"));
        }
        if self.heads == 0 || !dim.is_multiple_of(self.heads) {
            return Err(Error::domain(format!(
                "{} heads do not divide token dim {dim}",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Windows over a grid. `windows[w]` lists storage indices in t-major
/// order; `padding_mask[w]` has `N_w` slots flagging which positions of the
/// nominal full window fall inside the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPartition {
    pub windows: Vec<Vec<usize>>,
    pub padding_mask: Vec<Vec<bool>>,
}

impl WindowPartition {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// `(nominal_start, lo, hi)` per window along one axis.
fn segments(len: usize, window: usize, offset: usize) -> Vec<(isize, usize, usize)> {
    let mut out = Vec::new();
    let mut nominal = if offset == 0 {
        0
    } else {
        offset as isize - window as isize
    };
    while nominal < len as isize {
        let lo = nominal.max(0) as usize;
        let hi = ((nominal + window as isize) as usize).min(len);
        if lo < hi {
            out.push((nominal, lo, hi));
        }
        nominal += window as isize;
    }
    out
}

pub fn partition_windows(shape: Shape3, cfg: &TesaConfig) -> Result<WindowPartition> {
    if cfg.t_window == 0 || cfg.s_window == 0 {
        return Err(Error::domain("window sizes must be >= 1"));
    }
    let [ot, oy, ox] = cfg.shift_offsets();
    let segs_t = segments(shape.t_len, cfg.t_window, ot);
    let segs_y = segments(shape.h_len, cfg.s_window, oy);
    let segs_x = segments(shape.w_len, cfg.s_window, ox);
    let mut windows = Vec::with_capacity(segs_t.len() * segs_y.len() * segs_x.len());
    let mut padding_mask = Vec::with_capacity(windows.capacity());
    for &(nt, t0, t1) in &segs_t {
        for &(ny, y0, y1) in &segs_y {
            for &(nx, x0, x1) in &segs_x {
                let mut idx = Vec::with_capacity((t1 - t0) * (y1 - y0) * (x1 - x0));
                for t in t0..t1 {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            idx.push(shape.linear((t, y, x)));
                        }
                    }
                }
                let mut mask = Vec::with_capacity(cfg.window_volume());
                for dt in 0..cfg.t_window as isize {
                    for dy in 0..cfg.s_window as isize {
                        for dx in 0..cfg.s_window as isize {
                            let inside = |n: isize, d: isize, lo: usize, hi: usize| {
                                let c = n + d;
                                c >= lo as isize && c < hi as isize
                            };
                            mask.push(
                                inside(nt, dt, t0, t1)
                                    && inside(ny, dy, y0, y1)
                                    && inside(nx, dx, x0, x1),
                            );
                        }
                    }
                }
                windows.push(idx);
                padding_mask.push(mask);
            }
        }
    }
    Ok(WindowPartition {
        windows,
        padding_mask,
    })
}

/// Query, key, value and output projections, each `d × d` row-major.
/// Head `h` owns channels `h·d/heads .. (h+1)·d/heads` of q, k, v.
#[derive(Debug, Clone, PartialEq)]
pub struct TesaWeights {
    pub dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl TesaWeights {
    pub fn zeros(dim: usize) -> Self {
        TesaWeights {
            dim,
            wq: vec![0.0; dim * dim],
            wk: vec![0.0; dim * dim],
            wv: vec![0.0; dim * dim],
            wo: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = Self::zeros(dim);
        for i in 0..dim {
            w.wq[i * dim + i] = 1.0;
            w.wk[i * dim + i] = 1.0;
            w.wv[i * dim + i] = 1.0;
            w.wo[i * dim + i] = 1.0;
        }
        w
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::domain(format!(
                "weights for dim {} applied to dim {dim}",
                self.dim
            )));
        }
        for (name, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if m.len() != dim * dim {
                return Err(Error::domain(format!("{name} must be {dim} x {dim}")));
            }
            if let Some(i) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    stage: name,
                    index: i,
                });
            }
        }
        Ok(())
    }
}

/// Intermediates of a forward pass.
#[derive(Debug, Clone)]
pub struct TesaCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    z: Vec<f64>,
    /// `probs[w][h]` is the `n × n` attention matrix of head `h` in window `w`.
    pub probs: Vec<Vec<Vec<f64>>>,
}

fn project_all(x: &TokenTensor, w: &[f64]) -> Vec<f64> {
    let d = x.dim();
    let mut out = vec![0.0; x.n_tokens() * d];
    for i in 0..x.n_tokens() {
        matvec(w, d, d, x.token(i), &mut out[i * d..(i + 1) * d]);
    }
    out
}

/// Attention over an explicit partition. Every storage index must appear in
/// exactly one window.
pub fn tesa_forward_with_partition(
    tensor: &TokenTensor,
    partition: &WindowPartition,
    heads: usize,
    weights: &TesaWeights,
) -> Result<(TokenTensor, TesaCache)> {
    let d = tensor.dim();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::domain("heads must divide token dim"));
    }
    weights.check(d)?;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let q = project_all(tensor, &weights.wq);
    let k = project_all(tensor, &weights.wk);
    let v = project_all(tensor, &weights.wv);
    let mut z = vec![0.0; tensor.n_tokens() * d];
    let mut probs = Vec::with_capacity(partition.len());
    for idx in &partition.windows {
        let n = idx.len();
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = vec![0.0; n * n];
            for (a, &ia) in idx.iter().enumerate() {
                let qa = &q[ia * d..][cols.clone()];
                let row = &mut p[a * n..(a + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for (b, &ib) in idx.iter().enumerate() {
                    let s = dot(qa, &k[ib * d..][cols.clone()]) * scale;
                    row[b] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = libm::exp(*r - max);
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
                let za = &mut z[ia * d..][cols.clone()];
                for (b, &ib) in idx.iter().enumerate() {
                    let w = row[b];
                    for (zv, &vv) in za.iter_mut().zip(&v[ib * d..][cols.clone()]) {
                        *zv += w * vv;
                    }
                }
            }
            per_head.push(p);
        }
        probs.push(per_head);
    }
    let mut out = TokenTensor::zeros(tensor.shape(), d);
    for i in 0..tensor.n_tokens() {
        matvec(&weights.wo, d, d, &z[i * d..(i + 1) * d], out.token_mut(i));
    }
    if let Some(i) = out.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "tesa output",
            index: i,
        });
    }
    Ok((out, TesaCache { q, k, v, z, probs }))
}

pub fn tesa_forward_cached(
    tensor: &TokenTensor,
    cfg: &TesaConfig,
    weights: &TesaWeights,
) -> Result<(TokenTensor, TesaCache)> {
    cfg.validate(tensor.dim())?;
    let partition = partition_windows(tensor.shape(), cfg)?;
    tesa_forward_with_partition(tensor, &partition, cfg.heads, weights)
}

pub fn tesa_forward(tensor: &TokenTensor, cfg: &TesaConfig, weights: &TesaWeights) -> Result<TokenTensor> {
    tesa_forward_cached(tensor, cfg, weights).map(|(out, _)| out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TesaGrads {
    pub input: TokenTensor,
    pub weights: TesaWeights,
}

/// Reverse-mode gradients of [`tesa_forward`] given `∂L/∂out`.
pub fn tesa_backward(
    tensor: &TokenTensor,
    cfg: &TesaConfig,
    weights: &TesaWeights,
    upstream: &TokenTensor,
) -> Result<TesaGrads> {
    cfg.validate(tensor.dim())?;
    let partition = partition_windows(tensor.shape(), cfg)?;
    let (_, cache) = tesa_forward_with_partition(tensor, &partition, cfg.heads, weights)?;
    tesa_backward_with_cache(tensor, &partition, cfg.heads, weights, &cache, upstream)
}

pub fn tesa_backward_with_cache(
    tensor: &TokenTensor,
    partition: &WindowPartition,
    heads: usize,
    weights: &TesaWeights,
    cache: &TesaCache,
    upstream: &TokenTensor,
) -> Result<TesaGrads> {
    let d = tensor.dim();
    if upstream.shape() != tensor.shape() || upstream.dim() != d {
        return Err(Error::domain("upstream gradient shape mismatch"));
    }
    if let Some(i) = upstream.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "tesa upstream gradient",
            index: i,
        });
    }
    let n_tok = tensor.n_tokens();
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut gw = TesaWeights::zeros(d);

    let mut dz = vec![0.0; n_tok * d];
    for i in 0..n_tok {
        let go = upstream.token(i);
        outer_acc(&mut gw.wo, d, d, go, &cache.z[i * d..(i + 1) * d]);
        matvec_t_acc(&weights.wo, d, d, go, &mut dz[i * d..(i + 1) * d]);
    }

    let mut dq = vec![0.0; n_tok * d];
    let mut dk = vec![0.0; n_tok * d];
    let mut dv = vec![0.0; n_tok * d];
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    for (w, idx) in partition.windows.iter().enumerate() {
        let n = idx.len();
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &cache.probs[w][h];
            let mut dp = vec![0.0; n];
            for (a, &ia) in idx.iter().enumerate() {
                let dza = &dz[ia * d..][cols.clone()];
                let row = &p[a * n..(a + 1) * n];
                for (b, &ib) in idx.iter().enumerate() {
                    dp[b] = dot(dza, &v[ib * d..][cols.clone()]);
                    let dvb = &mut dv[ib * d..][cols.clone()];
                    for (g, &zv) in dvb.iter_mut().zip(dza) {
                        *g += row[b] * zv;
                    }
                }
                let centre = dot(row, &dp);
                for (b, &ib) in idx.iter().enumerate() {
                    let ds = row[b] * (dp[b] - centre) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in cols.clone() {
                        dq[ia * d + c] += ds * k[ib * d + c];
                        dk[ib * d + c] += ds * q[ia * d + c];
                    }
                }
            }
        }
    }

    let mut dx = TokenTensor::zeros(tensor.shape(), d);
    for i in 0..n_tok {
        let x = tensor.token(i);
        let (gq, gk, gv) = (
            &dq[i * d..(i + 1) * d],
            &dk[i * d..(i + 1) * d],
            &dv[i * d..(i + 1) * d],
        );
        outer_acc(&mut gw.wq, d, d, gq, x);
        outer_acc(&mut gw.wk, d, d, gk, x);
        outer_acc(&mut gw.wv, d, d, gv, x);
        let dxi = dx.token_mut(i);
        matvec_t_acc(&weights.wq, d, d, gq, dxi);
        matvec_t_acc(&weights.wk, d, d, gk, dxi);
        matvec_t_acc(&weights.wv, d, d, gv, dxi);
    }
    Ok(TesaGrads {
        input: dx,
        weights: gw,
    })
}

/// Global softmax attention over all `N` tokens, `O(N²)`. Verification
/// reference for [`tesa_forward`] with a window covering the whole grid.
pub fn dense_attention_oracle(
    tensor: &TokenTensor,
    heads: usize,
    weights: &TesaWeights,
) -> Result<TokenTensor> {
    let d = tensor.dim();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::domain("heads must divide token dim"));
    }
    weights.check(d)?;
    let n = tensor.n_tokens();
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let q = project_all(tensor, &weights.wq);
    let k = project_all(tensor, &weights.wk);
    let v = project_all(tensor, &weights.wv);
    let mut out = TokenTensor::zeros(tensor.shape(), d);
    let mut z = vec![0.0; d];
    let mut logits = vec![0.0; n];
    for i in 0..n {
        z.fill(0.0);
        for h in 0..heads {
            let c = h * dh;
            for (j, l) in logits.iter_mut().enumerate() {
                *l = scale * dot(&q[i * d + c..i * d + c + dh], &k[j * d + c..j * d + c + dh]);
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = libm::exp(*l - m);
                total += *l;
            }
            for (j, &p) in logits.iter().enumerate() {
                for e in 0..dh {
                    z[c + e] += p / total * v[j * d + c + e];
                }
            }
        }
        matvec(&weights.wo, d, d, &z, out.token_mut(i));
    }
    Ok(out)
}
