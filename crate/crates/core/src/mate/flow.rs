//! Flow-matching objective, a synthetic video source, the toy trainer and an
//! Euler sampler.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::denoiser::{denoiser_backward, denoiser_forward, denoiser_forward_cached, DenoiserWeights};
use super::{MateConfig, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{Shape3, TokenTensor};

/// One point on the straight path from noise `x0` to data `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatchSample {
    pub x0: TokenTensor,
    pub x1: TokenTensor,
    pub t: f64,
    /// `(1 − t)·x0 + t·x1`
    pub x_t: TokenTensor,
    /// `x1 − x0`
    pub velocity: TokenTensor,
}

impl FlowMatchSample {
    pub fn new(x0: TokenTensor, x1: TokenTensor, t: f64) -> Result<Self> {
        if x0.shape() != x1.shape() || x0.dim() != x1.dim() {
            return Err(Error::domain("noise and data tensors differ in shape"));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain(format!("t = {t} outside [0, 1]")));
        }
        let mut x_t = x0.clone();
        let mut velocity = x0.clone();
        for ((xt, v), (&a, &b)) in x_t
            .as_mut_slice()
            .iter_mut()
            .zip(velocity.as_mut_slice())
            .zip(x0.as_slice().iter().zip(x1.as_slice()))
        {
            *xt = (1.0 - t) * a + t * b;
            *v = b - a;
        }
        Ok(FlowMatchSample {
            x0,
            x1,
            t,
            x_t,
            velocity,
        })
    }
}

fn standard_normal(rng: &mut impl Rng, shape: Shape3, dim: usize) -> TokenTensor {
    let data = (0..shape.n_tokens() * dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    TokenTensor::from_vec(shape, dim, data).expect("sized by construction")
}

fn squared_error(pred: &TokenTensor, target: &TokenTensor) -> f64 {
    pred.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.as_slice().len() as f64
}

/// Mean squared velocity error of an arbitrary predictor.
pub fn velocity_mse<F>(batch: &[FlowMatchSample], mut predict: F) -> Result<f64>
where
    F: FnMut(&TokenTensor, f64) -> Result<TokenTensor>,
{
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let mut total = 0.0;
    for s in batch {
        let pred = predict(&s.x_t, s.t)?;
        total += squared_error(&pred, &s.velocity);
    }
    Ok(total / batch.len() as f64)
}

/// Mean over the batch of the per-element squared velocity error, and its
/// gradient with respect to every weight.
pub fn flow_match_loss(
    batch: &[FlowMatchSample],
    weights: &DenoiserWeights,
) -> Result<(f64, DenoiserWeights)> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let mut grads = weights.zeros_like();
    let mut loss = 0.0;
    let b = batch.len() as f64;
    for s in batch {
        let (pred, cache) = denoiser_forward_cached(&s.x_t, s.t, weights)?;
        loss += squared_error(&pred, &s.velocity) / b;
        let scale = 2.0 / (pred.as_slice().len() as f64 * b);
        let mut dv = pred;
        for (g, &v) in dv.as_mut_slice().iter_mut().zip(s.velocity.as_slice()) {
            *g = scale * (*g - v);
        }
        let (g, _) = denoiser_backward(&cache, weights, &dv)?;
        let mut acc = grads.flatten();
        for (a, v) in acc.iter_mut().zip(g.flatten()) {
            *a += v;
        }
        grads.load_flat(&acc)?;
    }
    Ok((loss, grads))
}

/// A procedural source of data tensors.
pub trait VideoSource {
    fn shape(&self) -> Shape3;
    fn dim(&self) -> usize;
    fn sample(&mut self, rng: &mut ChaCha8Rng) -> TokenTensor;
}

/// A bright square translating at constant velocity over a dark background,
/// wrapping at the borders. Pixel intensity is spread over the channels with
/// fixed foreground and background palettes.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingSquares {
    pub shape: Shape3,
    pub dim: usize,
    pub side: usize,
}

impl MovingSquares {
    pub fn new(shape: Shape3, dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || side == 0 || side > shape.h_len || side > shape.w_len {
            return Err(Error::domain("square must fit in the frame and dim must be >= 1"));
        }
        Ok(MovingSquares { shape, dim, side })
    }

    fn palette(&self, c: usize) -> (f64, f64) {
        let c = c as f64;
        (-0.8 + 0.2 * libm::cos(c), 0.8 + 0.2 * libm::sin(c + 1.0))
    }

    /// Average of `x²` over the distribution (exact, from the palettes).
    pub fn expected_energy(&self) -> f64 {
        let frac = (self.side * self.side) as f64 / (self.shape.h_len * self.shape.w_len) as f64;
        (0..self.dim)
            .map(|c| {
                let (bg, fg) = self.palette(c);
                frac * fg * fg + (1.0 - frac) * bg * bg
            })
            .sum::<f64>()
            / self.dim as f64
    }
}

impl VideoSource for MovingSquares {
    fn shape(&self) -> Shape3 {
        self.shape
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng) -> TokenTensor {
        let Shape3 { t_len, h_len, w_len } = self.shape;
        let y0 = rng.random_range(0..h_len);
        let x0 = rng.random_range(0..w_len);
        let vy = rng.random_range(-1i64..=1);
        let vx = rng.random_range(-1i64..=1);
        let mut out = TokenTensor::zeros(self.shape, self.dim);
        for t in 0..t_len {
            let cy = (y0 as i64 + vy * t as i64).rem_euclid(h_len as i64) as usize;
            let cx = (x0 as i64 + vx * t as i64).rem_euclid(w_len as i64) as usize;
            for y in 0..h_len {
                for x in 0..w_len {
                    let inside = (y + h_len - cy) % h_len < self.side
                        && (x + w_len - cx) % w_len < self.side;
                    let tok = out.token_mut(self.shape.linear((t, y, x)));
                    for (c, v) in tok.iter_mut().enumerate() {
                        let (bg, fg) = self.palette(c);
                        *v = if inside { fg } else { bg };
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum.
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub model: MateConfig,
    pub shape: Shape3,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; `0` disables.
    pub grad_clip: f64,
    /// Window of the moving average used for smoothed losses.
    pub smoothing_window: usize,
    pub square_side: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: MateConfig::toy(),
            shape: Shape3 {
                t_len: 4,
                h_len: 8,
                w_len: 8,
            },
            batch: 4,
            lr: 3e-3,
            optimizer: OptimizerKind::adam(),
            grad_clip: 1.0,
            smoothing_window: 20,
            square_side: 3,
        }
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub window: usize,
}

impl TrainLog {
    fn window_mean(&self, from_end: bool) -> f64 {
        let w = self.window.clamp(1, self.losses.len().max(1));
        let slice = if from_end {
            &self.losses[self.losses.len() - w..]
        } else {
            &self.losses[..w]
        };
        slice.iter().sum::<f64>() / w as f64
    }

    /// Mean of the first `window` losses.
    pub fn initial_smoothed(&self) -> f64 {
        self.window_mean(false)
    }

    /// Mean of the last `window` losses.
    pub fn final_smoothed(&self) -> f64 {
        self.window_mean(true)
    }

    /// Versioned CSV: a `#` header line, `step,loss`, then one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# mate train-toy loss log v1\nstep,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{l:e}");
        }
        s
    }
}

pub struct TrainOutcome {
    pub weights: DenoiserWeights,
    pub log: TrainLog,
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Optimizer {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Momentum { momentum } => {
                for ((p, g), m) in params.iter_mut().zip(grads).zip(self.m.iter_mut()) {
                    *m = momentum * *m + g;
                    *p -= self.lr * *m;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - libm::pow(beta1, self.step as f64);
                let c2 = 1.0 - libm::pow(beta2, self.step as f64);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + eps);
                }
            }
        }
    }
}

/// Trains a fresh denoiser on `source` for `steps` optimizer steps.
///
/// Weight init, data, noise and times are all drawn from one ChaCha8 stream
/// seeded with `seed`, so equal arguments give bit-identical results.
pub fn train_toy(
    source: &mut dyn VideoSource,
    config: &TrainConfig,
    steps: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    if steps == 0 {
        return Err(Error::domain("steps must be >= 1"));
    }
    if config.batch == 0 {
        return Err(Error::domain("batch must be >= 1"));
    }
    if source.dim() != config.model.d {
        return Err(Error::domain("source dim does not match model d"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = DenoiserWeights::init(&config.model, &mut rng)?;
    let mut flat = weights.flatten();
    let mut opt = Optimizer::new(config.optimizer, config.lr, flat.len());
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut batch = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let x1 = source.sample(&mut rng);
            let x0 = standard_normal(&mut rng, source.shape(), source.dim());
            let t: f64 = rng.random();
            batch.push(FlowMatchSample::new(x0, x1, t)?);
        }
        let (loss, grads) = match flow_match_loss(&batch, &weights) {
            Ok(v) => v,
            Err(e) if e.is_numeric() => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let mut g = grads.flatten();
        if config.grad_clip > 0.0 {
            let norm = libm::sqrt(g.iter().map(|v| v * v).sum::<f64>());
            if norm > config.grad_clip {
                let s = config.grad_clip / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        opt.update(&mut flat, &g);
        weights.load_flat(&flat)?;
        if !weights.all_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);
    }
    Ok(TrainOutcome {
        weights,
        log: TrainLog {
            losses,
            window: config.smoothing_window,
        },
    })
}

/// Integrates the learned velocity from noise at `t = 0` to `t = 1` with
/// `steps` forward-Euler steps.
pub fn euler_sample(
    weights: &DenoiserWeights,
    steps: usize,
    shape: Shape3,
    seed: u64,
) -> Result<TokenTensor> {
    if steps == 0 {
        return Err(Error::domain("steps must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = standard_normal(&mut rng, shape, weights.config.d);
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = i as f64 * dt;
        let v = denoiser_forward(&x, t, weights)?;
        for (xv, vv) in x.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *xv += dt * vv;
        }
    }
    Ok(x)
}

/// Mean of `x²` over all entries.
pub fn mean_energy(x: &TokenTensor) -> f64 {
    x.as_slice().iter().map(|v| v * v).sum::<f64>() / x.as_slice().len() as f64
}
