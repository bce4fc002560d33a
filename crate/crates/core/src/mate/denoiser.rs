use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::block::{mate_block_backward, mate_block_forward_cached, BlockCache, MateBlockWeights};
use super::{MateConfig, Parameters};
use crate::error::{Error, Result};
use crate::linalg::{matvec, matvec_t_acc, outer_acc};
use crate::tensor::TokenTensor;

/// `[sin(π·1·t), cos(π·1·t), sin(π·2·t), cos(π·2·t), …]`
pub fn time_features(t: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count / 2 {
        let w = core::f64::consts::PI * (k + 1) as f64;
        out.push(libm::sin(w * t));
        out.push(libm::cos(w * t));
    }
    out
}

/// Time embedding, a stack of MATE blocks and a linear velocity head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserWeights {
    pub config: MateConfig,
    /// `d × time_features`
    pub time_w: Vec<f64>,
    pub time_b: Vec<f64>,
    pub blocks: Vec<MateBlockWeights>,
    /// `d × d`
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl DenoiserWeights {
    pub fn zeros(config: &MateConfig) -> Self {
        let d = config.d;
        DenoiserWeights {
            config: *config,
            time_w: vec![0.0; d * config.time_features],
            time_b: vec![0.0; d],
            blocks: (0..config.layers).map(|_| MateBlockWeights::zeros(config)).collect(),
            head_w: vec![0.0; d * d],
            head_b: vec![0.0; d],
        }
    }

    pub fn init(config: &MateConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        fn normal(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
                .collect()
        }
        let time_w = normal(rng, d * config.time_features, 0.1);
        let head_w = normal(rng, d * d, 1.0 / libm::sqrt(d as f64));
        let blocks = (0..config.layers)
            .map(|_| MateBlockWeights::init(config, rng))
            .collect();
        Ok(DenoiserWeights {
            config: *config,
            time_w,
            time_b: vec![0.0; d],
            blocks,
            head_w,
            head_b: vec![0.0; d],
        })
    }

    /// Zero-valued weights with the same layout, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }
}

impl Parameters for DenoiserWeights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [f64])) {
        f(&self.time_w);
        f(&self.time_b);
        for b in &self.blocks {
            b.visit(f);
        }
        f(&self.head_w);
        f(&self.head_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.time_w);
        f(&mut self.time_b);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        f(&mut self.head_w);
        f(&mut self.head_b);
    }
}

pub struct DenoiserCache {
    features: Vec<f64>,
    blocks: Vec<BlockCache>,
    last: TokenTensor,
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// Predicted velocity at `(x_t, t)`.
pub fn denoiser_forward(x_t: &TokenTensor, t: f64, weights: &DenoiserWeights) -> Result<TokenTensor> {
    denoiser_forward_cached(x_t, t, weights).map(|(v, _)| v)
}

pub fn denoiser_forward_cached(
    x_t: &TokenTensor,
    t: f64,
    weights: &DenoiserWeights,
) -> Result<(TokenTensor, DenoiserCache)> {
    check_time(t)?;
    let cfg = &weights.config;
    let d = cfg.d;
    if x_t.dim() != d {
        return Err(Error::domain(format!(
            "tensor dim {} does not match config d = {d}",
            x_t.dim()
        )));
    }
    let features = time_features(t, cfg.time_features);
    let mut emb = weights.time_b.clone();
    let mut tmp = vec![0.0; d];
    matvec(&weights.time_w, d, cfg.time_features, &features, &mut tmp);
    for (e, v) in emb.iter_mut().zip(&tmp) {
        *e += v;
    }
    let mut h = x_t.clone();
    for i in 0..h.n_tokens() {
        for (hv, e) in h.token_mut(i).iter_mut().zip(&emb) {
            *hv += e;
        }
    }
    let mut caches = Vec::with_capacity(weights.blocks.len());
    for (layer, bw) in weights.blocks.iter().enumerate() {
        let (next, cache) = mate_block_forward_cached(&h, bw, cfg, layer)?;
        caches.push(cache);
        h = next;
    }
    let mut v = TokenTensor::zeros(h.shape(), d);
    for i in 0..h.n_tokens() {
        let out = v.token_mut(i);
        matvec(&weights.head_w, d, d, h.token(i), out);
        for (o, b) in out.iter_mut().zip(&weights.head_b) {
            *o += b;
        }
    }
    Ok((
        v,
        DenoiserCache {
            features,
            blocks: caches,
            last: h,
        },
    ))
}

/// Gradients of all weights and of the input given `∂L/∂v`.
pub fn denoiser_backward(
    cache: &DenoiserCache,
    weights: &DenoiserWeights,
    dv: &TokenTensor,
) -> Result<(DenoiserWeights, TokenTensor)> {
    let cfg = &weights.config;
    let d = cfg.d;
    if dv.shape() != cache.last.shape() || dv.dim() != d {
        return Err(Error::domain("velocity gradient shape mismatch"));
    }
    let mut grads = weights.zeros_like();
    let mut dh = TokenTensor::zeros(dv.shape(), d);
    for i in 0..dv.n_tokens() {
        let g = dv.token(i);
        outer_acc(&mut grads.head_w, d, d, g, cache.last.token(i));
        for (b, v) in grads.head_b.iter_mut().zip(g) {
            *b += v;
        }
        matvec_t_acc(&weights.head_w, d, d, g, dh.token_mut(i));
    }
    for (layer, bw) in weights.blocks.iter().enumerate().rev() {
        dh = mate_block_backward(&cache.blocks[layer], bw, cfg, &dh, &mut grads.blocks[layer])?;
    }
    let mut demb = vec![0.0; d];
    for i in 0..dh.n_tokens() {
        for (a, v) in demb.iter_mut().zip(dh.token(i)) {
            *a += v;
        }
    }
    outer_acc(&mut grads.time_w, d, cfg.time_features, &demb, &cache.features);
    for (b, v) in grads.time_b.iter_mut().zip(&demb) {
        *b += v;
    }
    Ok((grads, dh))
}
