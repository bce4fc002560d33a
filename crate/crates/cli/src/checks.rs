//! `mate ssd-check` and `mate tesa-check`: kernels against dense oracles.
//!
//! Cases run in parallel on the rayon pool but are collected in input order,
//! so the report does not depend on the thread count.

use mate_core::ssd::{ssd_backward, ssd_dense_oracle, ssd_scan_forward, SsdParams, SsdState};
use mate_core::tesa::{
    dense_attention_oracle, partition_windows, tesa_forward_cached, ShiftParity, TesaConfig,
    TesaWeights,
};
use mate_core::{Shape3, TokenSeq, TokenTensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{emit, header};
use crate::{SsdCheckArgs, TesaCheckArgs};

/// Scan vs. oracle, relative to the largest output magnitude.
pub const SSD_DEV_TOL: f64 = 1e-10;
/// Finite-difference vs. analytic gradient, relative per parameter block.
pub const GRAD_TOL: f64 = 1e-4;
pub const DENSE_TOL: f64 = 1e-10;
pub const ROW_SUM_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;

fn normals(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            std * z
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Serialize)]
pub struct SsdCase {
    pub seed: u64,
    pub n: usize,
    pub d_state: usize,
    pub d_head: usize,
    /// Largest |scan − oracle| entry.
    pub max_dev: f64,
    /// Worst per-block relative gradient error.
    pub grad_rel_err: f64,
    pub pass: bool,
}

/// Which input a finite-difference probe perturbs.
#[derive(Clone, Copy)]
enum Block {
    X,
    Decay,
    B,
    C,
}

fn perturbed(x: &TokenSeq, p: &SsdParams, block: Block, i: usize, delta: f64) -> mate_core::Result<(TokenSeq, SsdParams)> {
    let mut x = x.clone();
    let (mut a, mut b, mut c) = (p.decay().to_vec(), p.input_proj().to_vec(), p.output_proj().to_vec());
    match block {
        Block::X => x.as_mut_slice()[i] += delta,
        Block::Decay => a[i] += delta,
        Block::B => b[i] += delta,
        Block::C => c[i] += delta,
    }
    Ok((x, SsdParams::new(a, b, c, p.state_dim(), p.head_dim())?))
}

pub fn ssd_case(seed: u64, args: &SsdCheckArgs) -> Result<SsdCase, CliError> {
    let (n, ds, dh) = (args.n, args.dstate, args.dhead);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = TokenSeq::from_vec(n, dh, normals(&mut rng, n * dh, 1.0))?;
    // decays kept clear of 1 so the +h probe stays inside (0, 1]
    let decay: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..0.99)).collect();
    let scale = 1.0 / (ds as f64).sqrt();
    let b = normals(&mut rng, n * ds, scale);
    let c = normals(&mut rng, n * ds, scale);
    let params = SsdParams::new(decay, b, c, ds, dh)?;
    let init = SsdState::zeros(ds, dh);

    let (y, _) = ssd_scan_forward(&x, &params, &init)?;
    let oracle = ssd_dense_oracle(&x, &params)?;
    let max_dev = max_abs_diff(y.as_slice(), oracle.as_slice());
    let dev_scale = max_abs(oracle.as_slice()).max(1.0);

    let upstream = TokenSeq::from_vec(n, dh, normals(&mut rng, n * dh, 1.0))?;
    let grads = ssd_backward(&x, &params, &init, &upstream)?;
    let loss = |x: &TokenSeq, p: &SsdParams| -> mate_core::Result<f64> {
        let (y, _) = ssd_scan_forward(x, p, &init)?;
        Ok(y.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum())
    };
    let mut grad_rel_err: f64 = 0.0;
    for (block, analytic) in [
        (Block::X, grads.x.as_slice()),
        (Block::Decay, grads.decay.as_slice()),
        (Block::B, grads.input_proj.as_slice()),
        (Block::C, grads.output_proj.as_slice()),
    ] {
        let probes = sample(&mut rng, analytic.len(), args.grad_samples.min(analytic.len())).into_vec();
        let mut worst: f64 = 0.0;
        let mut reference: f64 = 0.0;
        for i in probes {
            let (xp, pp) = perturbed(&x, &params, block, i, FD_STEP)?;
            let (xm, pm) = perturbed(&x, &params, block, i, -FD_STEP)?;
            let fd = (loss(&xp, &pp)? - loss(&xm, &pm)?) / (2.0 * FD_STEP);
            worst = worst.max((fd - analytic[i]).abs());
            reference = reference.max(fd.abs()).max(analytic[i].abs());
        }
        let rel = if reference < 1e-12 { worst } else { worst / reference };
        grad_rel_err = grad_rel_err.max(rel);
    }
    Ok(SsdCase {
        seed,
        n,
        d_state: ds,
        d_head: dh,
        max_dev,
        grad_rel_err,
        pass: max_dev <= SSD_DEV_TOL * dev_scale && grad_rel_err <= GRAD_TOL,
    })
}

fn json_lines<T: Serialize>(command: &str, rows: &[T]) -> String {
    let mut text = header(command);
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("plain structs serialize"));
        text.push('\n');
    }
    text
}

pub fn ssd_check(args: &SsdCheckArgs) -> Result<(), CliError> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    let cases: Vec<SsdCase> = (0..args.seeds)
        .into_par_iter()
        .map(|i| ssd_case(args.seed.wrapping_add(i), args))
        .collect::<Result<_, _>>()?;
    emit(args.out.as_deref(), &json_lines("ssd-check", &cases))?;
    let failed: Vec<u64> = cases.iter().filter(|c| !c.pass).map(|c| c.seed).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("ssd-check failed for seeds {failed:?}")))
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum TesaLine {
    /// One window spanning the grid vs. global attention.
    DenseOracle { shape: String, heads: usize, max_dev: f64, pass: bool },
    /// Exact-once coverage and softmax row sums of one parity.
    Coverage {
        shape: String,
        tw: usize,
        sw: usize,
        shifted: bool,
        windows: usize,
        exact_once: bool,
        row_sum_err: f64,
        pass: bool,
    },
    /// Face-adjacent pairs that share a window in at least one parity.
    ShiftAdjacency { shape: String, pairs: u64, covered: u64, pass: bool },
}

fn owners(shape: Shape3, cfg: &TesaConfig) -> Result<(Vec<usize>, bool, usize), CliError> {
    let part = partition_windows(shape, cfg)?;
    let mut owner = vec![usize::MAX; shape.n_tokens()];
    let mut exact_once = true;
    for (w, idx) in part.windows.iter().enumerate() {
        for &i in idx {
            exact_once &= owner[i] == usize::MAX;
            owner[i] = w;
        }
    }
    exact_once &= owner.iter().all(|&o| o != usize::MAX);
    Ok((owner, exact_once, part.len()))
}

fn row_sum_error(probs: &[Vec<Vec<f64>>]) -> f64 {
    let mut worst: f64 = 0.0;
    for head in probs.iter().flatten() {
        let n = (head.len() as f64).sqrt().round() as usize;
        for row in head.chunks(n.max(1)) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            if row.iter().any(|&p| p < 0.0) {
                return f64::INFINITY;
            }
        }
    }
    worst
}

pub fn tesa_lines(args: &TesaCheckArgs) -> Result<Vec<TesaLine>, CliError> {
    let shape = args.shape.0;
    let dim = args.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x = TokenTensor::from_vec(shape, dim, normals(&mut rng, shape.n_tokens() * dim, 1.0))?;
    let std = 1.0 / (dim as f64).sqrt();
    let weights = TesaWeights {
        dim,
        wq: normals(&mut rng, dim * dim, std),
        wk: normals(&mut rng, dim * dim, std),
        wv: normals(&mut rng, dim * dim, std),
        wo: normals(&mut rng, dim * dim, std),
    };
    let base = TesaConfig {
        t_window: args.tw,
        s_window: args.sw,
        heads: args.heads,
        shift: ShiftParity::Unshifted,
    };
    base.validate(dim)?;
    let label = args.shape.to_string();

    let whole = TesaConfig {
        t_window: shape.t_len,
        s_window: shape.h_len.max(shape.w_len),
        ..base
    };
    let (y, _) = tesa_forward_cached(&x, &whole, &weights)?;
    let dense = dense_attention_oracle(&x, args.heads, &weights)?;
    let max_dev = max_abs_diff(y.as_slice(), dense.as_slice());
    let mut lines = vec![TesaLine::DenseOracle {
        shape: label.clone(),
        heads: args.heads,
        max_dev,
        pass: max_dev <= DENSE_TOL,
    }];

    let parities = [ShiftParity::Unshifted, ShiftParity::Shifted];
    let mut owner_maps = Vec::new();
    for shift in parities {
        let cfg = base.with_shift(shift);
        let (owner, exact_once, windows) = owners(shape, &cfg)?;
        let (_, cache) = tesa_forward_cached(&x, &cfg, &weights)?;
        let row_sum_err = row_sum_error(&cache.probs);
        lines.push(TesaLine::Coverage {
            shape: label.clone(),
            tw: args.tw,
            sw: args.sw,
            shifted: shift == ShiftParity::Shifted,
            windows,
            exact_once,
            row_sum_err,
            pass: exact_once && row_sum_err <= ROW_SUM_TOL,
        });
        owner_maps.push(owner);
    }

    let (mut pairs, mut covered) = (0u64, 0u64);
    for i in 0..shape.n_tokens() {
        let (t, y, x) = shape.coord(i);
        for n in [(t + 1, y, x), (t, y + 1, x), (t, y, x + 1)] {
            if !shape.contains(n) {
                continue;
            }
            let j = shape.linear(n);
            pairs += 1;
            if owner_maps.iter().any(|o| o[i] == o[j]) {
                covered += 1;
            }
        }
    }
    lines.push(TesaLine::ShiftAdjacency {
        shape: label,
        pairs,
        covered,
        pass: covered == pairs,
    });
    Ok(lines)
}

pub fn tesa_check(args: &TesaCheckArgs) -> Result<(), CliError> {
    let lines = tesa_lines(args)?;
    emit(args.out.as_deref(), &json_lines("tesa-check", &lines))?;
    let failed = lines.iter().any(|l| match l {
        TesaLine::DenseOracle { pass, .. }
        | TesaLine::Coverage { pass, .. }
        | TesaLine::ShiftAdjacency { pass, .. } => !pass,
    });
    if failed {
        Err(CliError::CheckFailed("tesa-check: see report".into()))
    } else {
        Ok(())
    }
}
