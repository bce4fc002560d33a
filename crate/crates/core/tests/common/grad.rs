//! Gradient-check harnesses: hand-written backward passes against central
//! finite differences.

use super::*;
use mate_core::mate::{
    denoiser_backward, denoiser_forward, denoiser_forward_cached, DenoiserWeights, MateConfig,
    Parameters,
};
use mate_core::review::ReviewConfig;
use mate_core::ssd::{ssd_backward, ssd_scan_forward, SsdParams, SsdState};
use mate_core::tesa::{tesa_backward, tesa_forward, ShiftParity, TesaConfig, TesaWeights};
use mate_core::{Shape3, TokenSeq, TokenTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;

/// Worst relative error over the SSD gradient blocks (x, decay, B, C, init).
pub fn ssd_grad_error(seed: u64, n: usize, ds: usize, dh: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_ssd_params(&mut rng, n, ds, dh, 0.5);
    let x = random_seq(&mut rng, n, dh);
    let init = SsdState::from_vec(ds, dh, normal_vec(&mut rng, ds * dh, 1.0)).unwrap();
    let r = normal_vec(&mut rng, n * dh, 1.0);
    let upstream = TokenSeq::from_vec(n, dh, r.clone()).unwrap();
    let g = ssd_backward(&x, &p, &init, &upstream).unwrap();

    let loss = |x: &TokenSeq, p: &SsdParams, init: &SsdState| {
        weighted_sum(ssd_scan_forward(x, p, init).unwrap().0.as_slice(), &r)
    };
    let rebuild = |decay: &[f64], b: &[f64], c: &[f64]| {
        SsdParams::new(decay.to_vec(), b.to_vec(), c.to_vec(), ds, dh).unwrap()
    };
    let fx = central_diff(x.as_slice(), |v| {
        loss(&TokenSeq::from_vec(n, dh, v.to_vec()).unwrap(), &p, &init)
    });
    let fa = central_diff(p.decay(), |v| {
        loss(&x, &rebuild(v, p.input_proj(), p.output_proj()), &init)
    });
    let fb = central_diff(p.input_proj(), |v| {
        loss(&x, &rebuild(p.decay(), v, p.output_proj()), &init)
    });
    let fc = central_diff(p.output_proj(), |v| {
        loss(&x, &rebuild(p.decay(), p.input_proj(), v), &init)
    });
    let fh = central_diff(init.hidden(), |v| {
        loss(&x, &p, &SsdState::from_vec(ds, dh, v.to_vec()).unwrap())
    });
    [
        rel_err(g.x.as_slice(), &fx),
        rel_err(&g.decay, &fa),
        rel_err(&g.input_proj, &fb),
        rel_err(&g.output_proj, &fc),
        rel_err(g.init.hidden(), &fh),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn pick(w: &mut TesaWeights, m: usize) -> &mut Vec<f64> {
    match m {
        0 => &mut w.wq,
        1 => &mut w.wk,
        2 => &mut w.wv,
        _ => &mut w.wo,
    }
}

/// Worst relative error over input and the four projection gradients.
pub fn tesa_grad_error(seed: u64, shape: Shape3, dim: usize, cfg: &TesaConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, shape, dim);
    let w = random_tesa_weights(&mut rng, dim);
    let r = normal_vec(&mut rng, shape.n_tokens() * dim, 1.0);
    let upstream = TokenTensor::from_vec(shape, dim, r.clone()).unwrap();
    let g = tesa_backward(&x, cfg, &w, &upstream).unwrap();
    let loss = |x: &TokenTensor, w: &TesaWeights| weighted_sum(tesa_forward(x, cfg, w).unwrap().as_slice(), &r);

    let fx = central_diff(x.as_slice(), |v| {
        loss(&TokenTensor::from_vec(shape, dim, v.to_vec()).unwrap(), &w)
    });
    let mut worst = rel_err(g.input.as_slice(), &fx);
    for m in 0..4 {
        let mut probe = w.clone();
        let base = pick(&mut probe, m).clone();
        let fd = central_diff(&base, |v| {
            pick(&mut probe, m).copy_from_slice(v);
            loss(&x, &probe)
        });
        let mut gw = g.weights.clone();
        worst = worst.max(rel_err(pick(&mut gw, m), &fd));
    }
    worst
}

pub fn mini_config() -> MateConfig {
    MateConfig {
        d: 8,
        expand: 2,
        d_state: 4,
        d_head: 4,
        conv_kernel: 4,
        layers: 2,
        tesa: TesaConfig {
            t_window: 2,
            s_window: 2,
            heads: 2,
            shift: ShiftParity::Unshifted,
        },
        review: ReviewConfig {
            p_t: 1,
            p_y: 2,
            p_x: 2,
            ..ReviewConfig::default()
        },
        combine: Default::default(),
        time_features: 4,
    }
}

/// End-to-end denoiser: worst per-buffer relative error over every weight
/// buffer and the input, with non-zero branch gates.
pub fn denoiser_grad_error(seed: u64) -> f64 {
    let cfg = mini_config();
    let shape = Shape3::new(2, 4, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DenoiserWeights::init(&cfg, &mut rng).unwrap();
    for b in &mut w.blocks {
        b.gate_ma = 0.7;
        b.gate_te = -0.6;
        b.norm_ma = normal_vec(&mut rng, cfg.d, 0.3).iter().map(|v| 1.0 + v).collect();
        b.norm_te = normal_vec(&mut rng, cfg.d, 0.3).iter().map(|v| 1.0 + v).collect();
    }
    w.time_b = normal_vec(&mut rng, cfg.d, 0.1);
    w.head_b = normal_vec(&mut rng, cfg.d, 0.1);
    let x = random_tensor(&mut rng, shape, cfg.d);
    let t = 0.37;
    let r = normal_vec(&mut rng, shape.n_tokens() * cfg.d, 1.0);

    let (_, cache) = denoiser_forward_cached(&x, t, &w).unwrap();
    let dv = TokenTensor::from_vec(shape, cfg.d, r.clone()).unwrap();
    let (grads, dx) = denoiser_backward(&cache, &w, &dv).unwrap();

    let fx = central_diff(x.as_slice(), |v| {
        let xv = TokenTensor::from_vec(shape, cfg.d, v.to_vec()).unwrap();
        weighted_sum(denoiser_forward(&xv, t, &w).unwrap().as_slice(), &r)
    });
    let mut worst = rel_err(dx.as_slice(), &fx);

    let flat = w.flatten();
    let mut probe = w.clone();
    let fd = central_diff(&flat, |v| {
        probe.load_flat(v).unwrap();
        weighted_sum(denoiser_forward(&x, t, &probe).unwrap().as_slice(), &r)
    });
    let analytic = grads.flatten();
    let mut at = 0;
    let mut lens = Vec::new();
    w.visit(&mut |s| lens.push(s.len()));
    for len in lens {
        worst = worst.max(rel_err(&analytic[at..at + len], &fd[at..at + len]));
        at += len;
    }
    worst
}

