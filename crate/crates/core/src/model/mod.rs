//! The audio-visual quality network: latitude-band video branch, log-mel audio
//! branch, transformer fusion, regression head, training and inference.

mod input;
mod net;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use input::{
    area_resize, load_sample, prepare_audio, prepare_video, sample_frame_indices, SampleInput, BAND_INPUT,
};
pub use net::{Network, Output};
pub use train::{train, Model, TrainSample, TrainSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Self-attention blocks over video tokens, cross-attention to audio on
    /// every second block.
    #[default]
    Transformer,
    /// Concatenate pooled video and audio features.
    Cat,
    /// Add pooled video and audio features.
    Add,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "transformer" => Ok(FusionMode::Transformer),
            "cat" => Ok(FusionMode::Cat),
            "add" => Ok(FusionMode::Add),
            other => Err(Error::Invalid(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Architecture and training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latitude bands M.
    pub bands: usize,
    pub band_channels: Vec<usize>,
    pub d_model: usize,
    /// Fusion blocks N.
    pub fusion_blocks: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward sublayers as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub audio_channels: Vec<usize>,
    /// Frames T sampled per clip.
    pub frames_per_clip: usize,
    pub fusion_mode: FusionMode,
    pub temporal_encoding: bool,
    pub audio_positional_encoding: bool,
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            bands: 4,
            band_channels: vec![8, 16, 32],
            d_model: 64,
            fusion_blocks: 4,
            heads: 4,
            ffn_mult: 2,
            audio_channels: vec![8, 16, 32, 64],
            frames_per_clip: 8,
            fusion_mode: FusionMode::Transformer,
            temporal_encoding: true,
            audio_positional_encoding: false,
            seed: 0,
            lr: 1e-3,
            epochs: 300,
            batch_size: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.bands == 0 {
            return bad("bands must be >= 1".into());
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.fusion_blocks < 2 || !self.fusion_blocks.is_multiple_of(2) {
            return bad(format!(
                "fusion_blocks must be even and >= 2, got {}",
                self.fusion_blocks
            ));
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be >= 1".into());
        }
        if self.band_channels.is_empty() || self.band_channels.contains(&0) {
            return bad("band_channels must be non-empty and positive".into());
        }
        // pools follow every band stage but the last
        let pools = self.band_channels.len() - 1;
        if !BAND_INPUT.0.is_multiple_of(1 << pools) || !BAND_INPUT.1.is_multiple_of(1 << pools) {
            return bad(format!(
                "{} band stages pool the {:?} input below 1 pixel",
                pools + 1,
                BAND_INPUT
            ));
        }
        if self.audio_channels.len() != 4 || self.audio_channels.contains(&0) {
            return bad("audio_channels must list 4 positive stage widths".into());
        }
        if self.frames_per_clip == 0 {
            return bad("frames_per_clip must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }

    /// Fusion blocks that carry cross-attention (0-based).
    pub fn cross_attention_blocks(&self) -> Vec<usize> {
        (1..self.fusion_blocks).step_by(2).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().cross_attention_blocks(), vec![1, 3]);
    }

    #[test]
    fn invariants_enforced() {
        let base = ModelConfig::default();
        for cfg in [
            ModelConfig {
                heads: 3,
                ..base.clone()
            },
            ModelConfig {
                fusion_blocks: 3,
                ..base.clone()
            },
            ModelConfig {
                fusion_blocks: 0,
                ..base.clone()
            },
            ModelConfig {
                bands: 0,
                ..base.clone()
            },
            ModelConfig {
                band_channels: vec![4; 6],
                ..base.clone()
            },
            ModelConfig {
                audio_channels: vec![4; 3],
                ..base.clone()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn fusion_mode_parses() {
        assert_eq!("cat".parse::<FusionMode>().unwrap(), FusionMode::Cat);
        assert!("concat".parse::<FusionMode>().is_err());
        let json = serde_json::to_string(&ModelConfig::default()).unwrap();
        assert!(json.contains("\"fusion_mode\":\"transformer\""));
    }
}
