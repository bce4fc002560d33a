//! The MATE block and a toy flow-matching denoiser built from it.
//!
//! A block adds two gated residual branches to its input:
//!
//! * **MA**: RMS-normalize, scan the grid with the layer's rotary-major
//!   order, prepend review tokens, run a bidirectional multi-head SSD scan,
//!   gate with SwiGLU and project back;
//! * **TE**: RMS-normalize and apply shifted-window attention with parity
//!   `layer mod 2`.
//!
//! Both branch gates start at zero, so a freshly initialized block is the
//! identity.

mod block;
mod denoiser;
mod flow;
mod params;

pub use block::{
    mate_block_backward, mate_block_forward, mate_block_forward_cached, BlockCache,
    DirectionWeights, MateBlockWeights,
};
pub use denoiser::{
    denoiser_backward, denoiser_forward, denoiser_forward_cached, time_features, DenoiserCache,
    DenoiserWeights,
};
pub use flow::{
    euler_sample, flow_match_loss, mean_energy, train_toy, FlowMatchSample, MovingSquares,
    velocity_mse, OptimizerKind, TrainConfig, TrainLog, TrainOutcome, VideoSource,
};
pub use params::Parameters;

use alloc::format;

use crate::error::{Error, Result};
use crate::review::ReviewConfig;
use crate::tesa::TesaConfig;

/// How the MA and TE branches are merged into the residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchCombine {
    /// `x + g_ma·MA(x) + g_te·TE(x)` with learned scalar gates.
    #[default]
    GatedSum,
}

/// Hyperparameters of a MATE stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MateConfig {
    /// Token embedding dimension `d`.
    pub d: usize,
    /// Expansion factor `E` of the MA-branch inner width.
    pub expand: usize,
    /// SSD state size `d_s`.
    pub d_state: usize,
    /// SSD head dimension `d_h`.
    pub d_head: usize,
    /// 1-D convolution kernel `K`; only used by the cost model.
    pub conv_kernel: usize,
    pub layers: usize,
    pub tesa: TesaConfig,
    pub review: ReviewConfig,
    pub combine: BranchCombine,
    /// Number of sinusoidal time features (even).
    pub time_features: usize,
}

impl Default for MateConfig {
    /// The 4B-scale block: `d = 2560`, 32 layers, 20 attention heads.
    fn default() -> Self {
        MateConfig {
            d: 2560,
            expand: 2,
            d_state: 128,
            d_head: 64,
            conv_kernel: 4,
            layers: 32,
            tesa: TesaConfig {
                heads: 20,
                ..TesaConfig::default()
            },
            review: ReviewConfig::default(),
            combine: BranchCombine::GatedSum,
            time_features: 16,
        }
    }
}

impl MateConfig {
    /// Small configuration for desk-scale training on `(·,·,·,16)` tokens.
    pub fn toy() -> Self {
        MateConfig {
            d: 16,
            expand: 2,
            d_state: 8,
            d_head: 8,
            conv_kernel: 4,
            layers: 2,
            tesa: TesaConfig {
                t_window: 2,
                s_window: 4,
                heads: 2,
                ..TesaConfig::default()
            },
            review: ReviewConfig::default(),
            combine: BranchCombine::GatedSum,
            time_features: 8,
        }
    }

    /// Inner width `E·d`.
    pub fn inner(&self) -> usize {
        self.expand * self.d
    }

    /// Number of SSD heads, `E·d / d_h`.
    pub fn ssd_heads(&self) -> usize {
        self.inner() / self.d_head
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("expand", self.expand),
            ("d_state", self.d_state),
            ("d_head", self.d_head),
            ("conv_kernel", self.conv_kernel),
            ("tesa.heads", self.tesa.heads),
            ("tesa.tw", self.tesa.t_window),
            ("tesa.sw", self.tesa.s_window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::domain(format!("{name} must be >= 1")));
        }
        if !self.d.is_multiple_of(self.tesa.heads) {
            return Err(Error::domain(format!(
                "d = {} not divisible by tesa.heads = {}",
                self.d, self.tesa.heads
            )));
        }
        if !self.d.is_multiple_of(self.d_head) {
            return Err(Error::domain(format!(
                "d = {} not divisible by d_head = {}",
                self.d, self.d_head
            )));
        }
        if self.time_features == 0 || !self.time_features.is_multiple_of(2) {
            return Err(Error::domain("time_features must be a positive even number"));
        }
        self.review.validate()
    }
}
