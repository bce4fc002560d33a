//! Dense token containers.
//!
//! A [`TokenTensor`] stores a `T×H×W` grid of `d`-dimensional tokens in
//! t-major order: the token at `(t, y, x)` lives at linear index
//! `t·H·W + y·W + x`, channels contiguous. A [`TokenSeq`] is the 1-D
//! counterpart produced by a scan.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Extent of a latent token grid: frames × rows × columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub t_len: usize,
    pub h_len: usize,
    pub w_len: usize,
}

impl Shape3 {
    pub fn new(t_len: usize, h_len: usize, w_len: usize) -> Result<Self> {
        if t_len == 0 || h_len == 0 || w_len == 0 {
            return Err(Error::domain(format!(
                "shape dims must be >= 1, got {t_len}x{h_len}x{w_len}"
            )));
        }
        t_len
            .checked_mul(h_len)
            .and_then(|v| v.checked_mul(w_len))
            .ok_or_else(|| Error::domain("token count overflows usize"))?;
        Ok(Shape3 { t_len, h_len, w_len })
    }

    /// Total token count `N = T·H·W`.
    pub fn n_tokens(&self) -> usize {
        self.t_len * self.h_len * self.w_len
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.t_len, self.h_len, self.w_len]
    }

    pub fn contains(&self, (t, y, x): (usize, usize, usize)) -> bool {
        t < self.t_len && y < self.h_len && x < self.w_len
    }

    /// Linear t-major index of a coordinate. Caller guarantees bounds.
    #[inline]
    pub fn linear(&self, (t, y, x): (usize, usize, usize)) -> usize {
        (t * self.h_len + y) * self.w_len + x
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.w_len;
        let rest = idx / self.w_len;
        (rest / self.h_len, rest % self.h_len, x)
    }
}

impl core::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.t_len, self.h_len, self.w_len)
    }
}

/// Rank-4 `(T, H, W, d)` array of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    shape: Shape3,
    dim: usize,
    data: Vec<f64>,
}

impl TokenTensor {
    pub fn zeros(shape: Shape3, dim: usize) -> Self {
        TokenTensor {
            shape,
            dim,
            data: vec![0.0; shape.n_tokens() * dim],
        }
    }

    pub fn from_vec(shape: Shape3, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("token dim must be >= 1"));
        }
        if data.len() != shape.n_tokens() * dim {
            return Err(Error::domain(format!(
                "tensor data has {} values, shape {shape} x {dim} needs {}",
                data.len(),
                shape.n_tokens() * dim
            )));
        }
        Ok(TokenTensor { shape, dim, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_tokens(&self) -> usize {
        self.shape.n_tokens()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn token(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn token_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Flattened t-major sequence view (no reordering).
    pub fn to_seq(&self) -> TokenSeq {
        TokenSeq {
            len: self.n_tokens(),
            dim: self.dim,
            data: self.data.clone(),
        }
    }

    pub fn from_seq(shape: Shape3, seq: TokenSeq) -> Result<Self> {
        TokenTensor::from_vec(shape, seq.dim, seq.data)
    }
}

/// A sequence of `len` tokens of dimension `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TokenSeq {
    pub fn zeros(len: usize, dim: usize) -> Self {
        TokenSeq {
            len,
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_vec(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * dim {
            return Err(Error::domain(format!(
                "sequence data has {} values, expected {len} x {dim}",
                data.len()
            )));
        }
        Ok(TokenSeq { len, dim, data })
    }

    /// Builds a `len × 1` sequence from scalars.
    pub fn from_scalars(values: &[f64]) -> Self {
        TokenSeq {
            len: values.len(),
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn token_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Token order reversed.
    pub fn reversed(&self) -> TokenSeq {
        let mut out = TokenSeq::zeros(self.len, self.dim);
        for i in 0..self.len {
            out.token_mut(self.len - 1 - i).copy_from_slice(self.token(i));
        }
        out
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &TokenSeq) -> Result<TokenSeq> {
        if self.dim != other.dim && !self.is_empty() && !other.is_empty() {
            return Err(Error::domain(format!(
                "cannot concatenate dims {} and {}",
                self.dim, other.dim
            )));
        }
        let dim = if self.is_empty() { other.dim } else { self.dim };
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(TokenSeq {
            len: self.len + other.len,
            dim,
            data,
        })
    }

    /// Tokens `start..start+len`.
    pub fn slice(&self, start: usize, len: usize) -> TokenSeq {
        TokenSeq {
            len,
            dim: self.dim,
            data: self.data[start * self.dim..(start + len) * self.dim].to_vec(),
        }
    }

    /// Channels `start..start+width` of every token.
    pub fn channels(&self, start: usize, width: usize) -> TokenSeq {
        let mut out = TokenSeq::zeros(self.len, width);
        for i in 0..self.len {
            out.token_mut(i)
                .copy_from_slice(&self.token(i)[start..start + width]);
        }
        out
    }

    /// Writes `src` into channels `start..start+src.dim()` of every token.
    pub fn set_channels(&mut self, start: usize, src: &TokenSeq) {
        let width = src.dim;
        for i in 0..self.len {
            self.token_mut(i)[start..start + width].copy_from_slice(src.token(i));
        }
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}
