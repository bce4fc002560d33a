//! Review tokens: an average-pooled overview of the grid, scanned with the
//! layer's schedule and prepended to the body sequence so the state-space
//! scan starts from a warmed hidden state.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::scan::{build_permutation, Permutation, ScanSchedule};
use crate::tensor::{Shape3, TokenSeq, TokenTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReviewConfig {
    pub enabled: bool,
    pub p_t: usize,
    pub p_y: usize,
    pub p_x: usize,
    /// Review tokens are only added when the body has at least this many
    /// tokens. `0` means always.
    pub min_len: usize,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig {
            enabled: true,
            p_t: 8,
            p_y: 4,
            p_x: 4,
            min_len: 0,
        }
    }
}

impl ReviewConfig {
    pub fn disabled() -> Self {
        ReviewConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_t == 0 || self.p_y == 0 || self.p_x == 0 {
            return Err(Error::domain("pooling ranges must be >= 1"));
        }
        Ok(())
    }

    /// Whether a body of `n_tokens` gets review tokens.
    pub fn active_for(&self, n_tokens: usize) -> bool {
        self.enabled && n_tokens >= self.min_len
    }

    /// Shape of the pooled grid: `⌈T/p_t⌉ × ⌈H/p_y⌉ × ⌈W/p_x⌉`.
    pub fn pooled_shape(&self, shape: Shape3) -> Shape3 {
        Shape3 {
            t_len: shape.t_len.div_ceil(self.p_t),
            h_len: shape.h_len.div_ceil(self.p_y),
            w_len: shape.w_len.div_ceil(self.p_x),
        }
    }

    /// Number of review tokens prepended for `shape` (0 when inactive).
    pub fn review_len(&self, shape: Shape3) -> usize {
        if self.active_for(shape.n_tokens()) {
            self.pooled_shape(shape).n_tokens()
        } else {
            0
        }
    }
}

/// Non-overlapping window means. Edge windows that run past the grid average
/// over the tokens they actually contain.
pub fn pool_overview(tensor: &TokenTensor, cfg: &ReviewConfig) -> Result<TokenTensor> {
    cfg.validate()?;
    let shape = tensor.shape();
    let pooled_shape = cfg.pooled_shape(shape);
    let d = tensor.dim();
    let mut pooled = TokenTensor::zeros(pooled_shape, d);
    let mut counts = vec![0usize; pooled_shape.n_tokens()];
    for i in 0..shape.n_tokens() {
        let (t, y, x) = shape.coord(i);
        let j = pooled_shape.linear((t / cfg.p_t, y / cfg.p_y, x / cfg.p_x));
        counts[j] += 1;
        for (acc, &v) in pooled.token_mut(j).iter_mut().zip(tensor.token(i)) {
            *acc += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c as f64;
        for v in pooled.token_mut(j) {
            *v *= inv;
        }
    }
    Ok(pooled)
}

/// Adjoint of [`pool_overview`]: spreads pooled gradients back onto the grid.
pub fn pool_overview_backward(
    shape: Shape3,
    cfg: &ReviewConfig,
    d_pooled: &TokenTensor,
) -> Result<TokenTensor> {
    cfg.validate()?;
    let pooled_shape = cfg.pooled_shape(shape);
    if d_pooled.shape() != pooled_shape {
        return Err(Error::domain("pooled gradient has the wrong shape"));
    }
    let mut counts = vec![0usize; pooled_shape.n_tokens()];
    for i in 0..shape.n_tokens() {
        let (t, y, x) = shape.coord(i);
        counts[pooled_shape.linear((t / cfg.p_t, y / cfg.p_y, x / cfg.p_x))] += 1;
    }
    let d = d_pooled.dim();
    let mut out = TokenTensor::zeros(shape, d);
    for i in 0..shape.n_tokens() {
        let (t, y, x) = shape.coord(i);
        let j = pooled_shape.linear((t / cfg.p_t, y / cfg.p_y, x / cfg.p_x));
        let inv = 1.0 / counts[j] as f64;
        for (o, &g) in out.token_mut(i).iter_mut().zip(d_pooled.token(j)) {
            *o = g * inv;
        }
    }
    Ok(out)
}

/// Review tokens followed by the scanned body.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSequence {
    pub review_len: usize,
    pub body_len: usize,
    pub tokens: TokenSeq,
}

/// Scan order of the pooled grid under `schedule`.
pub fn pooled_permutation(pooled_shape: Shape3, schedule: ScanSchedule) -> Permutation {
    build_permutation(pooled_shape, schedule)
}

/// Prepends `pooled`, scanned with the same schedule (and direction) as
/// `body`. Pass `None` to run without review tokens.
pub fn augment_sequence(
    body: &TokenSeq,
    pooled: Option<&TokenTensor>,
    schedule: ScanSchedule,
) -> Result<AugmentedSequence> {
    let Some(pooled) = pooled else {
        return Ok(AugmentedSequence {
            review_len: 0,
            body_len: body.len(),
            tokens: body.clone(),
        });
    };
    if pooled.dim() != body.dim() {
        return Err(Error::domain(format!(
            "pooled dim {} does not match body dim {}",
            pooled.dim(),
            body.dim()
        )));
    }
    let perm = pooled_permutation(pooled.shape(), schedule);
    let review = perm.permute(&pooled.to_seq())?;
    Ok(AugmentedSequence {
        review_len: review.len(),
        body_len: body.len(),
        tokens: review.concat(body)?,
    })
}

/// Drops the review prefix.
pub fn strip_review(seq: &AugmentedSequence) -> Result<TokenSeq> {
    if seq.tokens.len() != seq.review_len + seq.body_len {
        return Err(Error::domain(format!(
            "augmented sequence holds {} tokens, expected {} + {}",
            seq.tokens.len(),
            seq.review_len,
            seq.body_len
        )));
    }
    Ok(seq.tokens.slice(seq.review_len, seq.body_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{Direction, ScanSchedule};
    use alloc::vec::Vec;

    fn s(t: usize, h: usize, w: usize) -> Shape3 {
        Shape3::new(t, h, w).unwrap()
    }

    fn cfg(p_t: usize, p_y: usize, p_x: usize) -> ReviewConfig {
        ReviewConfig {
            p_t,
            p_y,
            p_x,
            ..ReviewConfig::default()
        }
    }

    #[test]
    fn pool_examples() {
        let t = TokenTensor::from_vec(s(3, 2, 5), 2, vec![1.25; 60]).unwrap();
        let p = pool_overview(&t, &cfg(2, 2, 2)).unwrap();
        assert_eq!(p.shape(), s(2, 1, 3));
        assert!(p.as_slice().iter().all(|&v| v == 1.25));

        let vals: Vec<f64> = (0..128).map(|v| v as f64).collect();
        let t = TokenTensor::from_vec(s(8, 4, 4), 1, vals).unwrap();
        let p = pool_overview(&t, &ReviewConfig::default()).unwrap();
        assert_eq!(p.shape(), s(1, 1, 1));
        assert_eq!(p.as_slice(), &[63.5]);

        let t = TokenTensor::from_vec(s(2, 1, 1), 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(pool_overview(&t, &cfg(2, 1, 1)).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn ragged_windows_use_actual_extent() {
        let t = TokenTensor::from_vec(s(1, 1, 3), 1, vec![1.0, 3.0, 8.0]).unwrap();
        let p = pool_overview(&t, &cfg(1, 1, 2)).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 8.0]);
    }

    #[test]
    fn review_len_counts() {
        assert_eq!(ReviewConfig::default().review_len(s(17, 32, 32)), 192);
        assert_eq!(ReviewConfig::disabled().review_len(s(17, 32, 32)), 0);
        let gated = ReviewConfig {
            min_len: 1000,
            ..ReviewConfig::default()
        };
        assert_eq!(gated.review_len(s(8, 4, 4)), 0);
        assert!(cfg(0, 1, 1).validate().is_err());
    }

    #[test]
    fn augment_and_strip() {
        let shape = s(8, 4, 4);
        let vals: Vec<f64> = (0..128).map(|v| (v as f64).sin()).collect();
        let t = TokenTensor::from_vec(shape, 1, vals).unwrap();
        let sched = ScanSchedule::rms(1, Direction::Forward);
        let body = crate::scan::apply_permutation(&t, &build_permutation(shape, sched)).unwrap();
        let pooled = pool_overview(&t, &ReviewConfig::default()).unwrap();
        let aug = augment_sequence(&body, Some(&pooled), sched).unwrap();
        assert_eq!(aug.tokens.len(), 129);
        let mean: f64 = t.as_slice().iter().sum::<f64>() / 128.0;
        assert!((aug.tokens.token(0)[0] - mean).abs() < 1e-15);
        assert_eq!(strip_review(&aug).unwrap(), body);

        let plain = augment_sequence(&body, None, sched).unwrap();
        assert_eq!(plain.tokens, body);

        let mut broken = aug.clone();
        broken.body_len = 127;
        assert!(strip_review(&broken).is_err());

        let wrong_dim = TokenTensor::zeros(s(1, 1, 1), 3);
        assert!(augment_sequence(&body, Some(&wrong_dim), sched).is_err());
    }

    #[test]
    fn pool_backward_is_adjoint() {
        let shape = s(3, 5, 2);
        let c = cfg(2, 2, 2);
        let vals: Vec<f64> = (0..60).map(|v| ((v * 7 % 11) as f64) - 5.0).collect();
        let t = TokenTensor::from_vec(shape, 2, vals).unwrap();
        let p = pool_overview(&t, &c).unwrap();
        let g_vals: Vec<f64> = (0..p.as_slice().len()).map(|v| v as f64 * 0.5 - 1.0).collect();
        let g = TokenTensor::from_vec(p.shape(), 2, g_vals).unwrap();
        let back = pool_overview_backward(shape, &c, &g).unwrap();
        let lhs: f64 = p.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum();
        let rhs: f64 = t.as_slice().iter().zip(back.as_slice()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
