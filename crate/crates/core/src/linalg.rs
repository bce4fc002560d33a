//! Small dense helpers shared by the layers. Matrices are row-major
//! `rows × cols` slices; `y = W x` maps a `cols` vector to `rows`.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x`.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += Wᵀ g`.
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for (r, &gr) in g.iter().enumerate().take(rows) {
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * gr;
        }
    }
}

/// `dw += g xᵀ`.
pub fn outer_acc(dw: &mut [f64], rows: usize, cols: usize, g: &[f64], x: &[f64]) {
    for (r, &gr) in g.iter().enumerate().take(rows) {
        if gr == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, &xv) in row.iter_mut().zip(x) {
            *d += gr * xv;
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        libm::log1p(libm::exp(v))
    }
}

#[inline]
pub fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

#[inline]
pub fn silu_grad(v: f64) -> f64 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

pub const RMS_EPS: f64 = 1e-6;

/// Root-mean-square normalization with a learned per-channel scale.
/// Returns the reciprocal RMS used, for the backward pass.
pub fn rms_norm(x: &[f64], scale: &[f64], out: &mut [f64]) -> f64 {
    let ms = dot(x, x) / x.len() as f64;
    let r = 1.0 / libm::sqrt(ms + RMS_EPS);
    for ((o, &xv), &g) in out.iter_mut().zip(x).zip(scale) {
        *o = xv * r * g;
    }
    r
}

/// Backward of [`rms_norm`]; accumulates into `dx` and `dscale`.
pub fn rms_norm_backward(
    x: &[f64],
    scale: &[f64],
    inv_rms: f64,
    dout: &[f64],
    dx: &mut [f64],
    dscale: &mut [f64],
) {
    let n = x.len() as f64;
    let mut proj = 0.0;
    for i in 0..x.len() {
        let xhat = x[i] * inv_rms;
        dscale[i] += dout[i] * xhat;
        proj += dout[i] * scale[i] * xhat;
    }
    proj /= n;
    for i in 0..x.len() {
        let xhat = x[i] * inv_rms;
        dx[i] += inv_rms * (dout[i] * scale[i] - xhat * proj);
    }
}
