//! Scalar-decay selective state-space scan (the Mamba2 SSD core).
//!
//! For a sequence of `d_h`-vectors `x_t` the recurrence is
//!
//! ```text
//! h_t = a_t · h_{t-1} + B_t ⊗ x_t        (h_t is d_s × d_h)
//! y_t = C_tᵀ h_t
//! ```
//!
//! which is the same linear map as the masked attention matrix
//! `M_ij = C_iᵀ B_j · a_{j+1} ⋯ a_i` for `j ≤ i`. [`ssd_scan_forward`] runs the
//! O(N) recurrence; [`ssd_dense_oracle`] materializes `M` and is only meant
//! for verification.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::TokenSeq;

pub const DEFAULT_STATE_DIM: usize = 128;
pub const DEFAULT_HEAD_DIM: usize = 64;
/// Largest sequence [`ssd_dense_oracle`] accepts.
pub const DEFAULT_ORACLE_CAP: usize = 512;

/// Per-position parameters of one scan pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdParams {
    decay: Vec<f64>,
    input_proj: Vec<f64>,
    output_proj: Vec<f64>,
    state_dim: usize,
    head_dim: usize,
}

impl SsdParams {
    /// `input_proj` and `output_proj` are `N × state_dim`, row-major.
    pub fn new(
        decay: Vec<f64>,
        input_proj: Vec<f64>,
        output_proj: Vec<f64>,
        state_dim: usize,
        head_dim: usize,
    ) -> Result<Self> {
        let n = decay.len();
        if state_dim == 0 || head_dim == 0 {
            return Err(Error::domain("state_dim and head_dim must be >= 1"));
        }
        if input_proj.len() != n * state_dim || output_proj.len() != n * state_dim {
            return Err(Error::domain(format!(
                "B/C must hold {n} x {state_dim} values, got {} and {}",
                input_proj.len(),
                output_proj.len()
            )));
        }
        if let Some(i) = decay.iter().position(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::domain(format!(
                "decay[{i}] = {} outside (0, 1]",
                decay[i]
            )));
        }
        Ok(SsdParams {
            decay,
            input_proj,
            output_proj,
            state_dim,
            head_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.decay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decay.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    #[inline]
    pub fn b(&self, t: usize) -> &[f64] {
        &self.input_proj[t * self.state_dim..(t + 1) * self.state_dim]
    }

    #[inline]
    pub fn c(&self, t: usize) -> &[f64] {
        &self.output_proj[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn input_proj(&self) -> &[f64] {
        &self.input_proj
    }

    pub fn output_proj(&self) -> &[f64] {
        &self.output_proj
    }

    fn check_input(&self, x: &TokenSeq) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::domain(format!(
                "sequence length {} does not match params length {}",
                x.len(),
                self.len()
            )));
        }
        if x.dim() != self.head_dim {
            return Err(Error::domain(format!(
                "token dim {} does not match head_dim {}",
                x.dim(),
                self.head_dim
            )));
        }
        if let Some(i) = x.first_non_finite() {
            return Err(Error::NonFinite {
                stage: "ssd input",
                index: i,
            });
        }
        Ok(())
    }
}

/// Running hidden state `h` (`state_dim × head_dim`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SsdState {
    state_dim: usize,
    head_dim: usize,
    hidden: Vec<f64>,
}

impl SsdState {
    pub fn zeros(state_dim: usize, head_dim: usize) -> Self {
        SsdState {
            state_dim,
            head_dim,
            hidden: vec![0.0; state_dim * head_dim],
        }
    }

    pub fn from_vec(state_dim: usize, head_dim: usize, hidden: Vec<f64>) -> Result<Self> {
        if hidden.len() != state_dim * head_dim {
            return Err(Error::domain("hidden state has the wrong size"));
        }
        Ok(SsdState {
            state_dim,
            head_dim,
            hidden,
        })
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    fn check(&self, params: &SsdParams) -> Result<()> {
        if self.state_dim != params.state_dim || self.head_dim != params.head_dim {
            return Err(Error::domain("initial state dims do not match params"));
        }
        Ok(())
    }
}

#[inline]
fn step(h: &mut [f64], a: f64, b: &[f64], x: &[f64], dh: usize) {
    for (s, &bs) in b.iter().enumerate() {
        let row = &mut h[s * dh..(s + 1) * dh];
        for (hv, &xv) in row.iter_mut().zip(x) {
            *hv = a * *hv + bs * xv;
        }
    }
}

#[inline]
fn readout(h: &[f64], c: &[f64], dh: usize, y: &mut [f64]) {
    y.fill(0.0);
    for (s, &cs) in c.iter().enumerate() {
        let row = &h[s * dh..(s + 1) * dh];
        for (yv, &hv) in y.iter_mut().zip(row) {
            *yv += cs * hv;
        }
    }
}

/// Causal left-to-right scan. Returns the outputs and the final state.
pub fn ssd_scan_forward(
    x: &TokenSeq,
    params: &SsdParams,
    init: &SsdState,
) -> Result<(TokenSeq, SsdState)> {
    params.check_input(x)?;
    init.check(params)?;
    let dh = params.head_dim;
    let mut h = init.hidden.clone();
    let mut y = TokenSeq::zeros(x.len(), dh);
    for t in 0..x.len() {
        step(&mut h, params.decay[t], params.b(t), x.token(t), dh);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "ssd state",
                index: t,
            });
        }
        readout(&h, params.c(t), dh, y.token_mut(t));
    }
    Ok((
        y,
        SsdState {
            state_dim: params.state_dim,
            head_dim: dh,
            hidden: h,
        },
    ))
}

/// The `N × N` lower-triangular mixing matrix `M` (row-major).
pub fn ssd_matrix(params: &SsdParams) -> Vec<f64> {
    let n = params.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        let ci = params.c(i);
        let mut decay = 1.0;
        for j in (0..=i).rev() {
            m[i * n + j] = decay * crate::linalg::dot(ci, params.b(j));
            decay *= params.decay[j];
        }
    }
    m
}

/// Quadratic reference `y = M x` with the default cap.
pub fn ssd_dense_oracle(x: &TokenSeq, params: &SsdParams) -> Result<TokenSeq> {
    ssd_dense_oracle_capped(x, params, DEFAULT_ORACLE_CAP)
}

pub fn ssd_dense_oracle_capped(x: &TokenSeq, params: &SsdParams, cap: usize) -> Result<TokenSeq> {
    if params.len() > cap {
        return Err(Error::domain(format!(
            "dense oracle refused: N = {} exceeds cap {cap}",
            params.len()
        )));
    }
    params.check_input(x)?;
    let n = params.len();
    let dh = params.head_dim;
    let m = ssd_matrix(params);
    let mut y = TokenSeq::zeros(n, dh);
    for i in 0..n {
        let yi = y.token_mut(i);
        for j in 0..=i {
            let w = m[i * n + j];
            for (yv, &xv) in yi.iter_mut().zip(x.token(j)) {
                *yv += w * xv;
            }
        }
    }
    Ok(y)
}

/// How the two scan directions are merged.
#[derive(Debug, Clone, PartialEq)]
pub enum Combine {
    /// Elementwise sum.
    Sum,
    /// `y = W [y_fwd; y_bwd]` with `W` of shape `d_h × 2·d_h`.
    ConcatProject { weight: Vec<f64> },
}

/// Forward scan of `x` combined with the reversed-direction scan.
///
/// `params_bwd` is indexed in the scan order of the reversed sequence:
/// `params_bwd` position 0 pairs with the last token of `x`.
pub fn bidirectional_ssd(
    x: &TokenSeq,
    params_fwd: &SsdParams,
    params_bwd: &SsdParams,
    combine: &Combine,
) -> Result<TokenSeq> {
    let init = SsdState::zeros(params_fwd.state_dim, params_fwd.head_dim);
    let (y_fwd, _) = ssd_scan_forward(x, params_fwd, &init)?;
    let init = SsdState::zeros(params_bwd.state_dim, params_bwd.head_dim);
    let (y_bwd_rev, _) = ssd_scan_forward(&x.reversed(), params_bwd, &init)?;
    let y_bwd = y_bwd_rev.reversed();
    let dh = x.dim();
    match combine {
        Combine::Sum => {
            let mut y = y_fwd;
            for (a, b) in y.as_mut_slice().iter_mut().zip(y_bwd.as_slice()) {
                *a += b;
            }
            Ok(y)
        }
        Combine::ConcatProject { weight } => {
            if weight.len() != dh * 2 * dh {
                return Err(Error::domain("concat projection must be d_h x 2d_h"));
            }
            let mut y = TokenSeq::zeros(x.len(), dh);
            let mut cat = vec![0.0; 2 * dh];
            for t in 0..x.len() {
                cat[..dh].copy_from_slice(y_fwd.token(t));
                cat[dh..].copy_from_slice(y_bwd.token(t));
                crate::linalg::matvec(weight, dh, 2 * dh, &cat, y.token_mut(t));
            }
            Ok(y)
        }
    }
}

/// Gradients of a scalar loss with respect to every scan input.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdGrads {
    pub x: TokenSeq,
    pub decay: Vec<f64>,
    pub input_proj: Vec<f64>,
    pub output_proj: Vec<f64>,
    pub init: SsdState,
}

/// Reverse-mode gradients of [`ssd_scan_forward`] given `∂L/∂y`.
///
/// The forward states are recomputed and cached; memory is
/// `O(N · d_s · d_h)`.
pub fn ssd_backward(
    x: &TokenSeq,
    params: &SsdParams,
    init: &SsdState,
    upstream: &TokenSeq,
) -> Result<SsdGrads> {
    params.check_input(x)?;
    init.check(params)?;
    if upstream.len() != x.len() || upstream.dim() != x.dim() {
        return Err(Error::domain("upstream gradient shape mismatch"));
    }
    if let Some(i) = upstream.first_non_finite() {
        return Err(Error::NonFinite {
            stage: "ssd upstream gradient",
            index: i,
        });
    }
    let n = x.len();
    let ds = params.state_dim;
    let dh = params.head_dim;
    let sz = ds * dh;

    // states[t] = h_{t-1}; states[n] = h_{n-1}
    let mut states = vec![0.0; (n + 1) * sz];
    states[..sz].copy_from_slice(&init.hidden);
    for t in 0..n {
        let (prev, next) = states.split_at_mut((t + 1) * sz);
        let cur = &mut next[..sz];
        cur.copy_from_slice(&prev[t * sz..]);
        step(cur, params.decay[t], params.b(t), x.token(t), dh);
    }

    let mut gx = TokenSeq::zeros(n, dh);
    let mut g_decay = vec![0.0; n];
    let mut g_b = vec![0.0; n * ds];
    let mut g_c = vec![0.0; n * ds];
    // running ∂L/∂h_t
    let mut g_h = vec![0.0; sz];
    for t in (0..n).rev() {
        let h_t = &states[(t + 1) * sz..(t + 2) * sz];
        let h_prev = &states[t * sz..(t + 1) * sz];
        let dy = upstream.token(t);
        let c = params.c(t);
        for s in 0..ds {
            let row = &mut g_h[s * dh..(s + 1) * dh];
            let h_row = &h_t[s * dh..(s + 1) * dh];
            let mut gc = 0.0;
            for p in 0..dh {
                row[p] += c[s] * dy[p];
                gc += h_row[p] * dy[p];
            }
            g_c[t * ds + s] = gc;
        }
        g_decay[t] = crate::linalg::dot(&g_h, h_prev);
        let b = params.b(t);
        let xt = x.token(t);
        let gxt = gx.token_mut(t);
        for s in 0..ds {
            let row = &g_h[s * dh..(s + 1) * dh];
            g_b[t * ds + s] = crate::linalg::dot(row, xt);
            for p in 0..dh {
                gxt[p] += row[p] * b[s];
            }
        }
        let a = params.decay[t];
        for v in g_h.iter_mut() {
            *v *= a;
        }
    }
    Ok(SsdGrads {
        x: gx,
        decay: g_decay,
        input_proj: g_b,
        output_proj: g_c,
        init: SsdState {
            state_dim: ds,
            head_dim: dh,
            hidden: g_h,
        },
    })
}
