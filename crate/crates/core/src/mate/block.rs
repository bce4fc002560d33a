use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{MateConfig, Parameters};
use crate::error::{Error, Result};
use crate::linalg::{
    matvec, matvec_t_acc, outer_acc, rms_norm, rms_norm_backward, sigmoid, silu, silu_grad, softplus,
};
use crate::review::{pool_overview, pool_overview_backward};
use crate::scan::{build_permutation, Direction, Permutation, ScanSchedule};
use crate::ssd::{ssd_backward, ssd_scan_forward, SsdParams, SsdState};
use crate::tensor::{Shape3, TokenSeq, TokenTensor};
use crate::tesa::{
    partition_windows, tesa_backward_with_cache, tesa_forward_with_partition, ShiftParity, TesaCache,
    TesaWeights, WindowPartition,
};

/// SSD parameter generators for one scan direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionWeights {
    /// `d_s × d`
    pub w_b: Vec<f64>,
    /// `d_s × d`
    pub w_c: Vec<f64>,
    /// `heads × d`
    pub w_dt: Vec<f64>,
    /// `heads`
    pub b_dt: Vec<f64>,
}

impl DirectionWeights {
    fn zeros(cfg: &MateConfig) -> Self {
        DirectionWeights {
            w_b: vec![0.0; cfg.d_state * cfg.d],
            w_c: vec![0.0; cfg.d_state * cfg.d],
            w_dt: vec![0.0; cfg.ssd_heads() * cfg.d],
            b_dt: vec![0.0; cfg.ssd_heads()],
        }
    }
}

/// Weights of one MATE block.
#[derive(Debug, Clone, PartialEq)]
pub struct MateBlockWeights {
    pub norm_ma: Vec<f64>,
    /// `E·d × d`
    pub w_in: Vec<f64>,
    /// `E·d × d`
    pub w_gate: Vec<f64>,
    pub fwd: DirectionWeights,
    pub bwd: DirectionWeights,
    /// `d × E·d`
    pub w_out: Vec<f64>,
    pub gate_ma: f64,
    pub norm_te: Vec<f64>,
    pub tesa: TesaWeights,
    pub gate_te: f64,
}

fn gaussian(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

impl MateBlockWeights {
    pub fn zeros(cfg: &MateConfig) -> Self {
        let d = cfg.d;
        let inner = cfg.inner();
        MateBlockWeights {
            norm_ma: vec![0.0; d],
            w_in: vec![0.0; inner * d],
            w_gate: vec![0.0; inner * d],
            fwd: DirectionWeights::zeros(cfg),
            bwd: DirectionWeights::zeros(cfg),
            w_out: vec![0.0; d * inner],
            gate_ma: 0.0,
            norm_te: vec![0.0; d],
            tesa: TesaWeights::zeros(d),
            gate_te: 0.0,
        }
    }

    /// Random projections, unit norm scales and zero branch gates.
    pub fn init(cfg: &MateConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        let inner = cfg.inner();
        let heads = cfg.ssd_heads();
        let s_in = 1.0 / libm::sqrt(d as f64);
        let s_inner = 1.0 / libm::sqrt(inner as f64);
        let dir = |rng: &mut _| DirectionWeights {
            w_b: gaussian(rng, cfg.d_state * d, s_in),
            w_c: gaussian(rng, cfg.d_state * d, s_in),
            w_dt: gaussian(rng, heads * d, 0.1 * s_in),
            // decays between exp(-softplus(-4)) ≈ 0.98 and exp(-softplus(-1)) ≈ 0.73
            b_dt: (0..heads)
                .map(|h| -4.0 + 3.0 * h as f64 / (heads.max(2) - 1) as f64)
                .collect(),
        };
        let fwd = dir(rng);
        let bwd = dir(rng);
        MateBlockWeights {
            norm_ma: vec![1.0; d],
            w_in: gaussian(rng, inner * d, s_in),
            w_gate: gaussian(rng, inner * d, s_in),
            fwd,
            bwd,
            w_out: gaussian(rng, d * inner, s_inner),
            gate_ma: 0.0,
            norm_te: vec![1.0; d],
            tesa: TesaWeights {
                dim: d,
                wq: gaussian(rng, d * d, s_in),
                wk: gaussian(rng, d * d, s_in),
                wv: gaussian(rng, d * d, s_in),
                wo: gaussian(rng, d * d, s_in),
            },
            gate_te: 0.0,
        }
    }
}

impl Parameters for DirectionWeights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [f64])) {
        f(&self.w_b);
        f(&self.w_c);
        f(&self.w_dt);
        f(&self.b_dt);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.w_b);
        f(&mut self.w_c);
        f(&mut self.w_dt);
        f(&mut self.b_dt);
    }
}

impl Parameters for MateBlockWeights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [f64])) {
        f(&self.norm_ma);
        f(&self.w_in);
        f(&self.w_gate);
        self.fwd.visit(f);
        self.bwd.visit(f);
        f(&self.w_out);
        f(core::slice::from_ref(&self.gate_ma));
        f(&self.norm_te);
        f(&self.tesa.wq);
        f(&self.tesa.wk);
        f(&self.tesa.wv);
        f(&self.tesa.wo);
        f(core::slice::from_ref(&self.gate_te));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.norm_ma);
        f(&mut self.w_in);
        f(&mut self.w_gate);
        self.fwd.visit_mut(f);
        self.bwd.visit_mut(f);
        f(&mut self.w_out);
        f(core::slice::from_mut(&mut self.gate_ma));
        f(&mut self.norm_te);
        f(&mut self.tesa.wq);
        f(&mut self.tesa.wk);
        f(&mut self.tesa.wv);
        f(&mut self.tesa.wo);
        f(core::slice::from_mut(&mut self.gate_te));
    }
}

fn project(seq: &TokenSeq, w: &[f64], rows: usize) -> TokenSeq {
    let cols = seq.dim();
    let mut out = TokenSeq::zeros(seq.len(), rows);
    for i in 0..seq.len() {
        matvec(w, rows, cols, seq.token(i), out.token_mut(i));
    }
    out
}

fn norm_tokens(x: &[f64], n: usize, d: usize, scale: &[f64]) -> (TokenSeq, Vec<f64>) {
    let mut out = TokenSeq::zeros(n, d);
    let mut inv = Vec::with_capacity(n);
    for i in 0..n {
        inv.push(rms_norm(&x[i * d..(i + 1) * d], scale, out.token_mut(i)));
    }
    (out, inv)
}

fn add_into(dst: &mut TokenSeq, src: &TokenSeq) {
    for (a, b) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *a += b;
    }
}

struct DirCache {
    seq: TokenSeq,
    u: TokenSeq,
    raw: Vec<f64>,
    params: Vec<SsdParams>,
}

fn direction_forward(
    seq: TokenSeq,
    w_in: &[f64],
    dw: &DirectionWeights,
    cfg: &MateConfig,
) -> Result<(DirCache, TokenSeq)> {
    let heads = cfg.ssd_heads();
    let (ds, dh) = (cfg.d_state, cfg.d_head);
    let len = seq.len();
    let u = project(&seq, w_in, cfg.inner());
    let b = project(&seq, &dw.w_b, ds).into_vec();
    let c = project(&seq, &dw.w_c, ds).into_vec();
    let mut raw = project(&seq, &dw.w_dt, heads).into_vec();
    for t in 0..len {
        for h in 0..heads {
            raw[t * heads + h] += dw.b_dt[h];
        }
    }
    let mut y = TokenSeq::zeros(len, cfg.inner());
    let mut params = Vec::with_capacity(heads);
    for h in 0..heads {
        let decay: Vec<f64> = (0..len)
            .map(|t| libm::exp(-softplus(raw[t * heads + h])).max(f64::MIN_POSITIVE))
            .collect();
        if decay.iter().any(|a| a.is_nan()) {
            return Err(Error::NonFinite {
                stage: "ssd decay",
                index: h,
            });
        }
        let p = SsdParams::new(decay, b.clone(), c.clone(), ds, dh)?;
        let (yh, _) = ssd_scan_forward(&u.channels(h * dh, dh), &p, &SsdState::zeros(ds, dh))?;
        y.set_channels(h * dh, &yh);
        params.push(p);
    }
    Ok((DirCache { seq, u, raw, params }, y))
}

fn direction_backward(
    cache: &DirCache,
    dy: &TokenSeq,
    w_in: &[f64],
    g_in: &mut [f64],
    dw: &DirectionWeights,
    g_dir: &mut DirectionWeights,
    cfg: &MateConfig,
) -> Result<TokenSeq> {
    let heads = cfg.ssd_heads();
    let (d, ds, dh, inner) = (cfg.d, cfg.d_state, cfg.d_head, cfg.inner());
    let len = cache.seq.len();
    let mut du = TokenSeq::zeros(len, inner);
    let mut db = vec![0.0; len * ds];
    let mut dc = vec![0.0; len * ds];
    let mut draw = vec![0.0; len * heads];
    for (h, p) in cache.params.iter().enumerate() {
        let g = ssd_backward(
            &cache.u.channels(h * dh, dh),
            p,
            &SsdState::zeros(ds, dh),
            &dy.channels(h * dh, dh),
        )?;
        du.set_channels(h * dh, &g.x);
        for (a, v) in db.iter_mut().zip(&g.input_proj) {
            *a += v;
        }
        for (a, v) in dc.iter_mut().zip(&g.output_proj) {
            *a += v;
        }
        for t in 0..len {
            let r = cache.raw[t * heads + h];
            draw[t * heads + h] = g.decay[t] * (-p.decay()[t] * sigmoid(r));
        }
    }
    let mut dseq = TokenSeq::zeros(len, d);
    for t in 0..len {
        let a = cache.seq.token(t);
        let (gu, gb, gc, gr) = (
            du.token(t),
            &db[t * ds..(t + 1) * ds],
            &dc[t * ds..(t + 1) * ds],
            &draw[t * heads..(t + 1) * heads],
        );
        outer_acc(g_in, inner, d, gu, a);
        outer_acc(&mut g_dir.w_b, ds, d, gb, a);
        outer_acc(&mut g_dir.w_c, ds, d, gc, a);
        outer_acc(&mut g_dir.w_dt, heads, d, gr, a);
        for (acc, v) in g_dir.b_dt.iter_mut().zip(gr) {
            *acc += v;
        }
        let out = dseq.token_mut(t);
        matvec_t_acc(w_in, inner, d, gu, out);
        matvec_t_acc(&dw.w_b, ds, d, gb, out);
        matvec_t_acc(&dw.w_c, ds, d, gc, out);
        matvec_t_acc(&dw.w_dt, heads, d, gr, out);
    }
    Ok(dseq)
}

struct ReviewCache {
    pooled_shape: Shape3,
    perm: Permutation,
}

/// Intermediates of [`mate_block_forward_cached`] needed by the backward pass.
pub struct BlockCache {
    layer: usize,
    x: TokenTensor,
    nrm: TokenSeq,
    inv_rms: Vec<f64>,
    perm: Permutation,
    review: Option<ReviewCache>,
    review_len: usize,
    dirs: [DirCache; 2],
    ys: TokenSeq,
    gate_pre: TokenSeq,
    m: TokenSeq,
    ma_out: TokenSeq,
    nrm_te: TokenTensor,
    inv_rms_te: Vec<f64>,
    partition: WindowPartition,
    tesa: TesaCache,
    te_out: TokenTensor,
}

impl BlockCache {
    pub fn layer(&self) -> usize {
        self.layer
    }

    /// Length of the review prefix used by the MA-branch.
    pub fn review_len(&self) -> usize {
        self.review_len
    }

    /// Storage-order permutation applied by the MA-branch.
    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    /// Window partition used by the TE-branch.
    pub fn partition(&self) -> &WindowPartition {
        &self.partition
    }
}

pub fn mate_block_forward(
    x: &TokenTensor,
    w: &MateBlockWeights,
    cfg: &MateConfig,
    layer: usize,
) -> Result<TokenTensor> {
    mate_block_forward_cached(x, w, cfg, layer).map(|(out, _)| out)
}

pub fn mate_block_forward_cached(
    x: &TokenTensor,
    w: &MateBlockWeights,
    cfg: &MateConfig,
    layer: usize,
) -> Result<(TokenTensor, BlockCache)> {
    cfg.validate()?;
    if x.dim() != cfg.d {
        return Err(Error::Domain(alloc::format!(
            "tensor dim {} does not match config d = {}",
            x.dim(),
            cfg.d
        )));
    }
    let shape = x.shape();
    let (n, d, inner) = (x.n_tokens(), cfg.d, cfg.inner());

    // MA-branch
    let (nrm, inv_rms) = norm_tokens(x.as_slice(), n, d, &w.norm_ma);
    let perm = build_permutation(shape, ScanSchedule::rms(layer, Direction::Forward));
    let body_f = perm.permute(&nrm)?;
    // the flipped schedule visits the forward scan backwards
    let body_b = body_f.reversed();
    let (review, rev_f) = if cfg.review.active_for(n) {
        let pooled = pool_overview(&TokenTensor::from_seq(shape, nrm.clone())?, &cfg.review)?;
        let pperm = build_permutation(pooled.shape(), ScanSchedule::rms(layer, Direction::Forward));
        let seq = pperm.permute(&pooled.to_seq())?;
        (
            Some(ReviewCache {
                pooled_shape: pooled.shape(),
                perm: pperm,
            }),
            seq,
        )
    } else {
        (None, TokenSeq::zeros(0, d))
    };
    let review_len = rev_f.len();
    let seq_f = rev_f.concat(&body_f)?;
    let seq_b = rev_f.reversed().concat(&body_b)?;
    let (cache_f, y_f) = direction_forward(seq_f, &w.w_in, &w.fwd, cfg)?;
    let (cache_b, y_b) = direction_forward(seq_b, &w.w_in, &w.bwd, cfg)?;
    let mut ysum = y_f.slice(review_len, n);
    add_into(&mut ysum, &y_b.slice(review_len, n).reversed());
    let ys = perm.unpermute(&ysum)?;
    let gate_pre = project(&nrm, &w.w_gate, inner);
    let mut m = TokenSeq::zeros(n, inner);
    for ((mv, &y), &g) in m
        .as_mut_slice()
        .iter_mut()
        .zip(ys.as_slice())
        .zip(gate_pre.as_slice())
    {
        *mv = y * silu(g);
    }
    let ma_out = project(&m, &w.w_out, d);

    // TE-branch
    let (nrm_te, inv_rms_te) = norm_tokens(x.as_slice(), n, d, &w.norm_te);
    let nrm_te = TokenTensor::from_seq(shape, nrm_te)?;
    let te_cfg = cfg.tesa.with_shift(ShiftParity::for_layer(layer));
    let partition = partition_windows(shape, &te_cfg)?;
    let (te_out, tesa) = tesa_forward_with_partition(&nrm_te, &partition, te_cfg.heads, &w.tesa)?;

    let mut out = x.clone();
    for ((o, &a), &b) in out
        .as_mut_slice()
        .iter_mut()
        .zip(ma_out.as_slice())
        .zip(te_out.as_slice())
    {
        *o += w.gate_ma * a + w.gate_te * b;
    }
    if let Some(i) = out.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "mate block output",
            index: i,
        });
    }
    let cache = BlockCache {
        layer,
        x: x.clone(),
        nrm,
        inv_rms,
        perm,
        review,
        review_len,
        dirs: [cache_f, cache_b],
        ys,
        gate_pre,
        m,
        ma_out,
        nrm_te,
        inv_rms_te,
        partition,
        tesa,
        te_out,
    };
    Ok((out, cache))
}

/// Backpropagates `dout` through one block, accumulating weight gradients
/// into `grads` and returning `∂L/∂x`.
pub fn mate_block_backward(
    cache: &BlockCache,
    w: &MateBlockWeights,
    cfg: &MateConfig,
    dout: &TokenTensor,
    grads: &mut MateBlockWeights,
) -> Result<TokenTensor> {
    let x = &cache.x;
    if dout.shape() != x.shape() || dout.dim() != x.dim() {
        return Err(Error::domain("upstream gradient shape mismatch"));
    }
    let (n, d, inner) = (x.n_tokens(), cfg.d, cfg.inner());
    let g = dout.as_slice();
    let mut dx = dout.clone();

    grads.gate_ma += g.iter().zip(cache.ma_out.as_slice()).map(|(a, b)| a * b).sum::<f64>();
    grads.gate_te += g.iter().zip(cache.te_out.as_slice()).map(|(a, b)| a * b).sum::<f64>();

    // TE-branch
    if w.gate_te != 0.0 {
        let mut d_te = dout.clone();
        d_te.as_mut_slice().iter_mut().for_each(|v| *v *= w.gate_te);
        let tg = tesa_backward_with_cache(
            &cache.nrm_te,
            &cache.partition,
            cfg.tesa.heads,
            &w.tesa,
            &cache.tesa,
            &d_te,
        )?;
        for (dst, src) in [
            (&mut grads.tesa.wq, &tg.weights.wq),
            (&mut grads.tesa.wk, &tg.weights.wk),
            (&mut grads.tesa.wv, &tg.weights.wv),
            (&mut grads.tesa.wo, &tg.weights.wo),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        for i in 0..n {
            rms_norm_backward(
                x.token(i),
                &w.norm_te,
                cache.inv_rms_te[i],
                tg.input.token(i),
                dx.token_mut(i),
                &mut grads.norm_te,
            );
        }
    }

    // MA-branch
    if w.gate_ma != 0.0 {
        let mut dnrm = TokenSeq::zeros(n, d);
        let mut dys = TokenSeq::zeros(n, inner);
        let mut dm = vec![0.0; inner];
        let mut dgp = vec![0.0; inner];
        for i in 0..n {
            let d_ma: Vec<f64> = dout.token(i).iter().map(|v| v * w.gate_ma).collect();
            outer_acc(&mut grads.w_out, d, inner, &d_ma, cache.m.token(i));
            dm.fill(0.0);
            matvec_t_acc(&w.w_out, d, inner, &d_ma, &mut dm);
            let gp = cache.gate_pre.token(i);
            let ys = cache.ys.token(i);
            let dyi = dys.token_mut(i);
            for c in 0..inner {
                dyi[c] = dm[c] * silu(gp[c]);
                dgp[c] = dm[c] * ys[c] * silu_grad(gp[c]);
            }
            outer_acc(&mut grads.w_gate, inner, d, &dgp, cache.nrm.token(i));
            matvec_t_acc(&w.w_gate, inner, d, &dgp, dnrm.token_mut(i));
        }
        let dysum = cache.perm.permute(&dys)?;
        let r = cache.review_len;
        let body_grad = |body: TokenSeq| -> Result<TokenSeq> {
            TokenSeq::zeros(r, inner).concat(&body)
        };
        let dy_f = body_grad(dysum.clone())?;
        let dy_b = body_grad(dysum.reversed())?;
        let dseq_f = direction_backward(&cache.dirs[0], &dy_f, &w.w_in, &mut grads.w_in, &w.fwd, &mut grads.fwd, cfg)?;
        let dseq_b = direction_backward(&cache.dirs[1], &dy_b, &w.w_in, &mut grads.w_in, &w.bwd, &mut grads.bwd, cfg)?;
        let mut dbody = dseq_f.slice(r, n);
        add_into(&mut dbody, &dseq_b.slice(r, n).reversed());
        add_into(&mut dnrm, &cache.perm.unpermute(&dbody)?);
        if let Some(rc) = &cache.review {
            let mut drev = dseq_f.slice(0, r);
            add_into(&mut drev, &dseq_b.slice(0, r).reversed());
            let dpooled = TokenTensor::from_seq(rc.pooled_shape, rc.perm.unpermute(&drev)?)?;
            let spread = pool_overview_backward(x.shape(), &cfg.review, &dpooled)?;
            for (a, b) in dnrm.as_mut_slice().iter_mut().zip(spread.as_slice()) {
                *a += b;
            }
        }
        for i in 0..n {
            rms_norm_backward(
                x.token(i),
                &w.norm_ma,
                cache.inv_rms[i],
                dnrm.token(i),
                dx.token_mut(i),
                &mut grads.norm_ma,
            );
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Shape3, d: usize, seed: u64) -> TokenTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TokenTensor::from_vec(shape, d, gaussian(&mut rng, shape.n_tokens() * d, 1.0)).unwrap()
    }

    fn cfg() -> MateConfig {
        let mut c = MateConfig::toy();
        c.d = 8;
        c.d_state = 4;
        c.d_head = 4;
        c.review.p_t = 2;
        c.review.p_y = 2;
        c.review.p_x = 2;
        c
    }

    #[test]
    fn zero_gates_are_identity() {
        let c = cfg();
        let w = MateBlockWeights::init(&c, &mut ChaCha8Rng::seed_from_u64(1));
        let x = random_tensor(Shape3::new(2, 4, 4).unwrap(), 8, 2);
        for layer in 0..4 {
            assert_eq!(mate_block_forward(&x, &w, &c, layer).unwrap(), x);
        }
    }

    #[test]
    fn shape_preserved_and_deterministic() {
        let c = cfg();
        let mut w = MateBlockWeights::init(&c, &mut ChaCha8Rng::seed_from_u64(3));
        w.gate_ma = 0.7;
        w.gate_te = -0.4;
        let x = random_tensor(Shape3::new(3, 2, 5).unwrap(), 8, 4);
        let a = mate_block_forward(&x, &w, &c, 5).unwrap();
        let b = mate_block_forward(&x, &w, &c, 5).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a.dim(), 8);
        assert_eq!(a, b);
        assert_ne!(a, x);
    }

    #[test]
    fn reversed_body_is_flipped_schedule() {
        let shape = Shape3::new(3, 4, 2).unwrap();
        let x = random_tensor(shape, 2, 9).to_seq();
        for layer in 0..4 {
            let f = build_permutation(shape, ScanSchedule::rms(layer, Direction::Forward));
            let b = build_permutation(shape, ScanSchedule::rms(layer, Direction::Flipped));
            assert_eq!(f.permute(&x).unwrap().reversed(), b.permute(&x).unwrap());
        }
    }

    #[test]
    fn rotation_period_four() {
        let c = cfg();
        let mut w = MateBlockWeights::init(&c, &mut ChaCha8Rng::seed_from_u64(5));
        w.gate_ma = 1.0;
        w.gate_te = 1.0;
        let x = random_tensor(Shape3::new(2, 4, 4).unwrap(), 8, 6);
        let (_, c1) = mate_block_forward_cached(&x, &w, &c, 1).unwrap();
        let (_, c5) = mate_block_forward_cached(&x, &w, &c, 5).unwrap();
        let (_, c2) = mate_block_forward_cached(&x, &w, &c, 2).unwrap();
        assert_eq!(c1.permutation(), c5.permutation());
        assert_ne!(c1.permutation(), c2.permutation());
        let (_, c3) = mate_block_forward_cached(&x, &w, &c, 3).unwrap();
        assert_eq!(c1.partition(), c3.partition());
        assert_ne!(c1.partition(), c2.partition());
        assert_eq!(c1.review_len(), 4);
    }

    #[test]
    fn wrong_dim_rejected() {
        let c = cfg();
        let w = MateBlockWeights::zeros(&c);
        let x = TokenTensor::zeros(Shape3::new(1, 2, 2).unwrap(), 4);
        assert!(mate_block_forward(&x, &w, &c, 0).is_err());
    }
}
