//! Analytic FLOPs model for one MATE block and a global-attention baseline.
//!
//! Counts are exact rationals over `u128`: the review-token cost evaluates
//! the bidirectional Mamba2 cost at `N / (p_t·p_y·p_x)` tokens, which is not
//! an integer for arbitrary `N`. Every other count is integral.
//!
//! Per direction, the Mamba2 block costs
//!
//! ```text
//! (6 + 2/d_h)·E·N·d² + 4·N·d_s·d + C_conv + C_SSM
//! C_conv = 2·E·K·(N + K − 1)·d
//! C_SSM  = 4·E·N·d_s·d + 2·E·N·d
//! ```
//!
//! and the bidirectional block doubles it. Windowed attention costs
//! `(8·N_w·d² + 4·N_w²·d) · ⌈T/T_w⌉·⌈H/S_w⌉·⌈W/S_w⌉`; the baseline is the
//! same expression with a single window holding all `N` tokens.

use alloc::format;
use alloc::vec::Vec;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::mate::MateConfig;
use crate::tensor::Shape3;

pub type Flops = Ratio<u128>;

fn int(v: u128) -> Flops {
    Ratio::from_integer(v)
}

/// Lossy conversion for reporting.
pub fn to_f64(v: &Flops) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

/// Per-direction Mamba2 cost split into its terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BimambaTerms {
    /// `(6 + 2/d_h)·E·N·d²`
    pub projections: Flops,
    /// `4·N·d_s·d`
    pub state: Flops,
    pub conv: Flops,
    pub ssm: Flops,
}

impl BimambaTerms {
    pub fn total(&self) -> Flops {
        self.projections + self.state + self.conv + self.ssm
    }

    /// Terms proportional to `N`; drops the `2·E·K·(K−1)·d` constant.
    pub fn n_linear(&self, cfg: &MateConfig) -> Flops {
        self.total() - int(conv_constant(cfg))
    }
}

fn conv_constant(cfg: &MateConfig) -> u128 {
    let (e, k, d) = (cfg.expand as u128, cfg.conv_kernel as u128, cfg.d as u128);
    2 * e * k * (k.saturating_sub(1)) * d
}

/// One direction of the Mamba2 block at a (possibly fractional) token count.
pub fn bimamba_terms(n: Flops, cfg: &MateConfig) -> BimambaTerms {
    let e = cfg.expand as u128;
    let d = cfg.d as u128;
    let ds = cfg.d_state as u128;
    let dh = cfg.d_head as u128;
    let k = cfg.conv_kernel as u128;
    let projections = n * Ratio::new(6 * dh + 2, dh) * int(e * d * d);
    let state = n * int(4 * ds * d);
    let conv = int(2 * e * k * d) * (n + int(k) - int(1));
    let ssm = n * int(4 * e * ds * d + 2 * e * d);
    BimambaTerms {
        projections,
        state,
        conv,
        ssm,
    }
}

pub fn cost_bimamba_unidirectional(n: u64, cfg: &MateConfig) -> Flops {
    bimamba_terms(int(n as u128), cfg).total()
}

/// Bidirectional Mamba2 block: twice the per-direction cost.
pub fn cost_bimamba(n: u64, cfg: &MateConfig) -> Flops {
    cost_bimamba_unidirectional(n, cfg) * int(2)
}

/// Review-token overhead: the bidirectional block evaluated at
/// `N / (p_t·p_y·p_x)` tokens. Zero when review tokens are disabled.
pub fn cost_review(n: u64, cfg: &MateConfig) -> Flops {
    if !cfg.review.active_for(n as usize) {
        return int(0);
    }
    let pool = (cfg.review.p_t * cfg.review.p_y * cfg.review.p_x) as u128;
    bimamba_terms(Ratio::new(n as u128, pool), cfg).total() * int(2)
}

/// Review-token overhead using the actual pooled token count of `shape`.
pub fn cost_review_shape(shape: Shape3, cfg: &MateConfig) -> Flops {
    let r = cfg.review.review_len(shape);
    if r == 0 {
        return int(0);
    }
    cost_bimamba(r as u64, cfg)
}

fn window_cost(n_w: u128, d: u128) -> u128 {
    8 * n_w * d * d + 4 * n_w * n_w * d
}

/// Windowed attention on a concrete grid with the ceiling window count.
pub fn cost_tesa(shape: Shape3, cfg: &MateConfig) -> Flops {
    let tw = cfg.tesa.t_window;
    let sw = cfg.tesa.s_window;
    let windows = (shape.t_len.div_ceil(tw) * shape.h_len.div_ceil(sw) * shape.w_len.div_ceil(sw)) as u128;
    int(window_cost(cfg.tesa.window_volume() as u128, cfg.d as u128) * windows)
}

/// Windowed attention as a function of `N` alone: `N / N_w` full windows.
pub fn cost_tesa_tokens(n: u64, cfg: &MateConfig) -> Flops {
    let n_w = cfg.tesa.window_volume() as u128;
    let d = cfg.d as u128;
    int(n as u128 * (8 * d * d + 4 * n_w * d))
}

/// Global self-attention over `N` tokens: `8·N·d² + 4·N²·d`.
pub fn cost_dit_baseline(n: u64, d: usize) -> Flops {
    int(window_cost(n as u128, d as u128))
}

/// Whether the Mamba2 term counts both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostOptions {
    pub double_bidirectional: bool,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            double_bidirectional: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub shape: Option<Shape3>,
    pub n_tokens: u64,
    /// Mamba2 block cost used in the total (doubled unless disabled).
    pub c_bimamba: Flops,
    pub c_bimamba_unidirectional: Flops,
    /// Convolution share of `c_bimamba`, same doubling.
    pub c_conv: Flops,
    /// SSM share of `c_bimamba`, same doubling.
    pub c_ssm: Flops,
    pub c_review: Flops,
    pub c_tesa: Flops,
    pub c_dense_baseline: Flops,
}

impl CostReport {
    /// `c_bimamba + c_review + c_tesa`; conv and SSM are already inside
    /// `c_bimamba`.
    pub fn mate_total(&self) -> Flops {
        self.c_bimamba + self.c_review + self.c_tesa
    }

    pub fn speedup(&self) -> f64 {
        to_f64(&self.c_dense_baseline) / to_f64(&self.mate_total())
    }
}

fn report(
    n: u64,
    shape: Option<Shape3>,
    c_review: Flops,
    c_tesa: Flops,
    cfg: &MateConfig,
    opts: CostOptions,
) -> CostReport {
    let terms = bimamba_terms(int(n as u128), cfg);
    let mult = int(if opts.double_bidirectional { 2 } else { 1 });
    let review_mult = if opts.double_bidirectional {
        int(1)
    } else {
        Ratio::new(1, 2)
    };
    CostReport {
        shape,
        n_tokens: n,
        c_bimamba: terms.total() * mult,
        c_bimamba_unidirectional: terms.total(),
        c_conv: terms.conv * mult,
        c_ssm: terms.ssm * mult,
        c_review: c_review * review_mult,
        c_tesa,
        c_dense_baseline: cost_dit_baseline(n, cfg.d),
    }
}

/// Cost of one block as a function of `N` alone (affine in `N`).
pub fn cost_report_tokens(n: u64, cfg: &MateConfig, opts: CostOptions) -> CostReport {
    report(n, None, cost_review(n, cfg), cost_tesa_tokens(n, cfg), cfg, opts)
}

/// Cost of one block on a concrete grid (ceiling window and pooling counts).
pub fn cost_report_shape(shape: Shape3, cfg: &MateConfig, opts: CostOptions) -> CostReport {
    let n = shape.n_tokens() as u64;
    report(
        n,
        Some(shape),
        cost_review_shape(shape, cfg),
        cost_tesa(shape, cfg),
        cfg,
        opts,
    )
}

/// Per-`N` rows of [`cost_report_tokens`], validated for ascending `N`.
pub fn scaling_audit(cfg: &MateConfig, n_list: &[u64], opts: CostOptions) -> Result<Vec<CostReport>> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("n_list must be strictly ascending"));
    }
    Ok(n_list
        .iter()
        .map(|&n| cost_report_tokens(n, cfg, opts))
        .collect())
}

/// Second difference `f(n+h) − 2f(n) + f(n−h)` of the block total.
pub fn second_difference(cfg: &MateConfig, n: u64, h: u64, opts: CostOptions) -> Result<Ratio<i128>> {
    if h == 0 || n < h {
        return Err(Error::domain("need n >= h >= 1"));
    }
    let f = |m: u64| {
        let v = cost_report_tokens(m, cfg, opts).mate_total();
        Ratio::new(*v.numer() as i128, *v.denom() as i128)
    };
    Ok(f(n + h) - f(n) * Ratio::from_integer(2) + f(n - h))
}

/// Smallest `N ≥ 1` where the baseline exceeds the MATE block cost.
pub fn crossover(cfg: &MateConfig, opts: CostOptions) -> u64 {
    let gap = |n: u64| {
        let r = cost_report_tokens(n, cfg, opts);
        r.c_dense_baseline > r.mate_total()
    };
    // baseline − mate is a convex quadratic in N that is negative at N = 0
    // (the conv constant), so it has a single positive root and the
    // predicate is monotone.
    let mut hi = 1u64;
    while !gap(hi) {
        hi *= 2;
    }
    let mut lo = 0u64;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if gap(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// A video length expressed as latent tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPreset {
    pub label: &'static str,
    pub seconds: u32,
    pub fps: u32,
    pub height_px: u32,
    pub width_px: u32,
    /// Published FLOPs speed-up over the global-attention model.
    pub reported_speedup: f64,
}

impl VideoPreset {
    /// Latent grid after 8× temporal, 8×8 spatial compression and 2×2
    /// spatial patchification.
    pub fn latent_shape(&self) -> Result<Shape3> {
        let frames = (self.seconds * self.fps) as usize;
        Shape3::new(
            (frames / 8).max(1),
            (self.height_px as usize / 16).max(1),
            (self.width_px as usize / 16).max(1),
        )
    }
}

/// 17 s, 34 s and 68 s at 16 fps, 512×512 pixels.
pub fn default_presets() -> Vec<VideoPreset> {
    [(17, 5.0), (34, 8.0), (68, 15.0)]
        .into_iter()
        .map(|(seconds, reported)| VideoPreset {
            label: match seconds {
                17 => "17s",
                34 => "34s",
                _ => "68s",
            },
            seconds,
            fps: 16,
            height_px: 512,
            width_px: 512,
            reported_speedup: reported,
        })
        .collect()
}

/// Validates configuration values the formulas rely on.
pub fn check_config(cfg: &MateConfig) -> Result<()> {
    if cfg.d == 0 || cfg.expand == 0 || cfg.d_state == 0 || cfg.d_head == 0 || cfg.conv_kernel == 0 {
        return Err(Error::domain(format!("cost model needs positive dims, got {cfg:?}")));
    }
    cfg.review.validate()?;
    if cfg.tesa.t_window == 0 || cfg.tesa.s_window == 0 {
        return Err(Error::domain("window sizes must be >= 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::review::ReviewConfig;

    fn cfg64() -> MateConfig {
        MateConfig {
            d: 64,
            expand: 2,
            d_state: 128,
            d_head: 64,
            conv_kernel: 4,
            ..MateConfig::default()
        }
    }

    #[test]
    fn bimamba_leading_terms() {
        let t = bimamba_terms(int(1024), &cfg64());
        assert_eq!(t.projections, int(50_593_792));
        assert_eq!(t.state, int(33_554_432));
        assert_eq!(t.projections + t.state, int(84_148_224));
    }

    #[test]
    fn zero_tokens_leave_conv_constant() {
        let c = cfg64();
        assert_eq!(cost_bimamba_unidirectional(0, &c), int(2 * 2 * 4 * 3 * 64));
        assert_eq!(cost_bimamba(0, &c), int(2 * 2 * 2 * 4 * 3 * 64));
    }

    #[test]
    fn doubling_rule() {
        let c = cfg64();
        for n in [1, 17, 4096, 100_003] {
            assert_eq!(cost_bimamba(n, &c), cost_bimamba_unidirectional(n, &c) * int(2));
        }
    }

    #[test]
    fn review_ratio_and_edges() {
        let c = cfg64();
        let n = 128 * 40;
        let ratio = (cost_review(n, &c) - int(2 * conv_constant(&c)))
            / (cost_bimamba(n, &c) - int(2 * conv_constant(&c)));
        assert_eq!(ratio, Ratio::new(1, 128));

        let unit = MateConfig {
            review: ReviewConfig { p_t: 1, p_y: 1, p_x: 1, ..ReviewConfig::default() },
            ..cfg64()
        };
        assert_eq!(cost_review(999, &unit), cost_bimamba(999, &unit));

        let off = MateConfig { review: ReviewConfig::disabled(), ..cfg64() };
        assert_eq!(cost_review(999, &off), int(0));
    }

    #[test]
    fn tesa_examples() {
        let mut c = cfg64();
        c.tesa.t_window = 4;
        c.tesa.s_window = 4;
        let sh = Shape3::new(4, 8, 8).unwrap();
        assert_eq!(cost_tesa(sh, &c), int(12_582_912));
        let wide = Shape3::new(4, 8, 16).unwrap();
        assert_eq!(cost_tesa(wide, &c), int(2 * 12_582_912));

        // a single window spanning the grid is the baseline
        let whole = Shape3::new(4, 4, 4).unwrap();
        assert_eq!(cost_tesa(whole, &c), cost_dit_baseline(64, 64));
    }

    #[test]
    fn baseline_small_cases() {
        assert_eq!(cost_dit_baseline(1, 64), int(8 * 4096 + 4 * 64));
        let r = to_f64(&cost_dit_baseline(200_000, 64)) / to_f64(&cost_dit_baseline(100_000, 64));
        assert!((3.9..4.0).contains(&r));
    }

    #[test]
    fn audit_rejects_unsorted() {
        assert!(scaling_audit(&cfg64(), &[10, 5], CostOptions::default()).is_err());
        assert!(scaling_audit(&cfg64(), &[5, 5], CostOptions::default()).is_err());
    }

    #[test]
    fn presets_token_counts() {
        let p = default_presets();
        let n: Vec<usize> = p.iter().map(|v| v.latent_shape().unwrap().n_tokens()).collect();
        assert_eq!(n, [34 * 32 * 32, 68 * 32 * 32, 136 * 32 * 32]);
    }
}
