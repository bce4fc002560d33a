//! `run.toml`: every knob of a run in one sectioned file.
//!
//! Unknown keys are rejected and every key has a default, so an empty file is
//! a valid configuration (the desk-scale toy model). Serializing and parsing
//! again yields an identical value.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mate_core::mate::{MateConfig, OptimizerKind, TrainConfig};
use mate_core::review::ReviewConfig;
use mate_core::tesa::{ShiftParity, TesaConfig};
use mate_core::Shape3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub review: ReviewSection,
    pub tesa: TesaSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub cost: CostSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunSection {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    pub expand: usize,
    pub d_state: usize,
    pub d_head: usize,
    pub conv_kernel: usize,
    pub layers: usize,
    pub time_features: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = MateConfig::toy();
        ModelSection {
            d: m.d,
            expand: m.expand,
            d_state: m.d_state,
            d_head: m.d_head,
            conv_kernel: m.conv_kernel,
            layers: m.layers,
            time_features: m.time_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewSection {
    pub enabled: bool,
    pub pt: usize,
    pub py: usize,
    pub px: usize,
    /// Body length below which no review tokens are added; 0 = always.
    pub min_len: usize,
}

impl Default for ReviewSection {
    fn default() -> Self {
        let r = ReviewConfig::default();
        ReviewSection {
            enabled: r.enabled,
            pt: r.p_t,
            py: r.p_y,
            px: r.p_x,
            min_len: r.min_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TesaSection {
    pub tw: usize,
    pub sw: usize,
    pub heads: usize,
}

impl Default for TesaSection {
    fn default() -> Self {
        let t = MateConfig::toy().tesa;
        TesaSection {
            tw: t.t_window,
            sw: t.s_window,
            heads: t.heads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerName,
    /// Heavy-ball coefficient for `optimizer = "momentum"`.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub smoothing_window: usize,
    pub shape: ShapeSpec,
    pub square_side: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            steps: 200,
            batch: t.batch,
            lr: t.lr,
            optimizer: OptimizerName::Adam,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: t.grad_clip,
            smoothing_window: t.smoothing_window,
            shape: ShapeSpec(t.shape),
            square_side: t.square_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub steps: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { steps: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    /// Count both scan directions in the Mamba2 term.
    pub double_bidirectional: bool,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            double_bidirectional: true,
        }
    }
}

/// A grid written as `TxHxW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeSpec(pub Shape3);

impl FromStr for ShapeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        let [t, h, w] = parts.as_slice() else {
            return Err(format!("shape `{s}` is not of the form TxHxW"));
        };
        let dim = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("shape `{s}`: `{v}` is not a positive integer"))
        };
        Shape3::new(dim(t)?, dim(h)?, dim(w)?)
            .map(ShapeSpec)
            .map_err(|e| format!("shape `{s}`: {e}"))
    }
}

impl fmt::Display for ShapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for ShapeSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ShapeSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.mate_config()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("every field is representable in TOML")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn mate_config(&self) -> Result<MateConfig, CliError> {
        let m = &self.model;
        let cfg = MateConfig {
            d: m.d,
            expand: m.expand,
            d_state: m.d_state,
            d_head: m.d_head,
            conv_kernel: m.conv_kernel,
            layers: m.layers,
            tesa: TesaConfig {
                t_window: self.tesa.tw,
                s_window: self.tesa.sw,
                heads: self.tesa.heads,
                shift: ShiftParity::Unshifted,
            },
            review: ReviewConfig {
                enabled: self.review.enabled,
                p_t: self.review.pt,
                p_y: self.review.py,
                p_x: self.review.px,
                min_len: self.review.min_len,
            },
            combine: Default::default(),
            time_features: m.time_features,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let optimizer = match t.optimizer {
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            OptimizerName::Momentum => OptimizerKind::Momentum {
                momentum: t.momentum,
            },
        };
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(CliError::Config(format!("train.lr = {} must be positive", t.lr)));
        }
        Ok(TrainConfig {
            model: self.mate_config()?,
            shape: t.shape.0,
            batch: t.batch,
            lr: t.lr,
            optimizer,
            grad_clip: t.grad_clip,
            smoothing_window: t.smoothing_window,
            square_side: t.square_side,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn roundtrip_default_and_custom() {
        let mut cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.run.seed = u32::MAX as u64 + 7;
        cfg.run.log = Some("out/loss.csv".into());
        cfg.train.lr = 0.1 + 0.2;
        cfg.train.eps = 1e-300;
        cfg.train.shape = "3x5x7".parse().unwrap();
        cfg.train.optimizer = OptimizerName::Momentum;
        cfg.review.enabled = false;
        cfg.tesa.heads = 4;
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[tesa]\nwindow = 3\n").is_err());
        assert!(RunConfig::from_toml("[extra]\n").is_err());
        assert!(RunConfig::from_toml("seed = 3\n").is_err());
    }

    #[test]
    fn keys_map_onto_model() {
        let cfg = RunConfig::from_toml(
            "[review]\nenabled = false\npt = 2\npy = 1\npx = 1\n[tesa]\ntw = 4\nsw = 2\nheads = 4\n",
        )
        .unwrap();
        let m = cfg.mate_config().unwrap();
        assert!(!m.review.enabled);
        assert_eq!((m.review.p_t, m.review.p_y), (2, 1));
        assert_eq!((m.tesa.t_window, m.tesa.s_window, m.tesa.heads), (4, 2, 4));
        assert!(RunConfig::from_toml("[tesa]\nheads = 3\n").is_err());
    }

    #[test]
    fn shape_syntax() {
        assert_eq!("4x8x8".parse::<ShapeSpec>().unwrap().0, Shape3::new(4, 8, 8).unwrap());
        assert!("4x8".parse::<ShapeSpec>().is_err());
        assert!("0x8x8".parse::<ShapeSpec>().is_err());
        assert!("ax8x8".parse::<ShapeSpec>().is_err());
    }
}
