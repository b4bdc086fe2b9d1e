//! The temporal-windowed MLP.
//!
//! The trunk projects the current `T×54` window to `T×D`, runs `L` residual
//! MLP blocks and projects each frame to 132 rotation values. Every past
//! window is compressed by its own window block into a single `1×D` token;
//! after each fusion block the tokens are appended to the trunk as extra time
//! rows and a learned `(T+K)→T` time map folds them back in.

mod checkpoint;
mod cost;
mod forward;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FEATURE_DIM;
use crate::kinematics::JOINT_COUNT;
use crate::tensor::{Real, Tensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use cost::{count_cost, CostReport, LayerCost};
pub use forward::{
    base_forward, forward, fuse_latents, mlp_block_forward, predict, predict_with_tokens, trunk_forward,
    window_block_forward, window_frame_activations, BaseMlp,
};
pub use params::{init_params, layout, Block, ModelParams, ParamKind, ParamSpec, Params, WindowBlock};

pub const OUTPUT_DIM: usize = JOINT_COUNT * 6;
pub const INPUT_DIM: usize = FEATURE_DIM;

/// Shape of the learned time-mixing map inside each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMap {
    /// Dense `T×T` map.
    Full,
    /// Only entries with `|i − j| <= width` are used.
    Banded { width: usize },
    /// Output frame `i` only sees input frames `j <= i`.
    Causal,
}

/// How window tokens are merged into the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Tokens become extra time rows, then a `T×(T+K)` time map.
    Time,
    /// Tokens are broadcast and appended as extra features, then a
    /// `D(K+1)×D` projection.
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames per window (T).
    pub window: usize,
    /// Past windows (K).
    pub past_windows: usize,
    /// MLP blocks (L).
    pub blocks: usize,
    /// Latent width (D).
    pub width: usize,
    /// 1-based block indices after which tokens are fused.
    pub fusion_layers: Vec<usize>,
    pub temporal_map: TemporalMap,
    pub fusion: FusionMode,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(41, 2, 10, 512)
    }
}

impl ModelConfig {
    /// Dense temporal map, time-axis fusion after every odd block.
    pub fn new(window: usize, past_windows: usize, blocks: usize, width: usize) -> Self {
        Self {
            window,
            past_windows,
            blocks,
            width,
            fusion_layers: (1..=blocks).step_by(2).collect(),
            temporal_map: TemporalMap::Full,
            fusion: FusionMode::Time,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!("window must be >= 2, got {}", self.window)));
        }
        if self.blocks == 0 {
            return Err(Error::Config("need at least one block".into()));
        }
        if self.width < 2 {
            return Err(Error::Config(format!("width must be >= 2, got {}", self.width)));
        }
        if let Some(bad) = self.fusion_layers.iter().find(|&&l| l == 0 || l > self.blocks) {
            return Err(Error::Config(format!("fusion layer {bad} outside 1..={}", self.blocks)));
        }
        let mut sorted = self.fusion_layers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.fusion_layers {
            return Err(Error::Config("fusion layers must be strictly increasing".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    /// Fusion happens only when there are past windows to fuse.
    pub fn active_fusion_layers(&self) -> &[usize] {
        if self.past_windows == 0 {
            &[]
        } else {
            &self.fusion_layers
        }
    }

    /// Frames of history needed before the first prediction.
    pub fn history_len(&self) -> usize {
        self.window * (self.past_windows + 1)
    }

    /// Constant mask applied to every block's time map, `None` when dense.
    pub fn time_mask<F: Real>(&self) -> Option<Tensor<F>> {
        let t = self.window;
        match self.temporal_map {
            TemporalMap::Full => None,
            TemporalMap::Banded { width } => Some(Tensor::from_fn(t, t, |i, j| {
                if i.abs_diff(j) <= width {
                    F::one()
                } else {
                    F::zero()
                }
            })),
            TemporalMap::Causal => Some(Tensor::from_fn(t, t, |i, j| if j <= i { F::one() } else { F::zero() })),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fuse_after_odd_blocks() {
        let c = ModelConfig::default();
        assert_eq!(c.blocks, 10);
        assert_eq!(c.width, 512);
        assert_eq!(c.fusion_layers, vec![1, 3, 5, 7, 9]);
        c.validate().unwrap();
        assert_eq!(OUTPUT_DIM, 132);
        assert_eq!(INPUT_DIM, 54);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = ModelConfig::new(8, 1, 4, 16);
        c.fusion_layers = vec![0];
        assert!(c.validate().is_err());
        c.fusion_layers = vec![5];
        assert!(c.validate().is_err());
        c.fusion_layers = vec![3, 1];
        assert!(c.validate().is_err());
        assert!(ModelConfig::new(1, 0, 2, 16).validate().is_err());
    }

    #[test]
    fn masks() {
        let mut c = ModelConfig::new(4, 0, 1, 4);
        assert!(c.time_mask::<f64>().is_none());
        c.temporal_map = TemporalMap::Causal;
        let m = c.time_mask::<f64>().unwrap();
        assert_eq!(m.row(1), &[1.0, 1.0, 0.0, 0.0]);
        c.temporal_map = TemporalMap::Banded { width: 1 };
        let m = c.time_mask::<f64>().unwrap();
        assert_eq!(m.row(0), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.row(2), &[0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn config_json_round_trip() {
        let mut c = ModelConfig::new(16, 2, 4, 64);
        c.temporal_map = TemporalMap::Banded { width: 3 };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<ModelConfig>(&s.replace("\"width\":64", "\"width\":64,\"bogus\":1")).is_err());
    }
}
