//! Linear-complexity video denoiser building blocks.
//!
//! The crate implements the pieces of a MATE block and the tooling used to
//! audit them:
//!
//! * [`scan`]: rotary-major and zigzag token scan orders over `T×H×W` grids,
//!   plus the adjacency-preservation metric `d_k`.
//! * [`ssd`]: scalar-decay selective state-space scan, its dense
//!   lower-triangular dual, a bidirectional wrapper and exact gradients.
//! * [`review`]: average-pooled review tokens prepended to a scan.
//! * [`tesa`]: temporal shifted-window attention with exact gradients.
//! * [`mate`]: the residual MATE block, a toy flow-matching denoiser, trainer
//!   and Euler sampler.
//! * [`cost`]: exact-rational FLOPs model and a global-attention baseline.
//!
//! Everything is `no_std` + `alloc`, deterministic and single-threaded.

#![no_std]

extern crate alloc;

pub mod cost;
pub mod error;
pub mod linalg;
pub mod mate;
pub mod review;
pub mod scan;
pub mod ssd;
pub mod tensor;
pub mod tesa;

pub use error::{Error, Result};
pub use tensor::{Shape3, TokenSeq, TokenTensor};
