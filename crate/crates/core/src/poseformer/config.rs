use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::keypoints::{DEFAULT_SEQUENCE_LEN, FRAME_CHANNELS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub layers: usize,
    pub kernel: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEmbeddingConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub layers: usize,
    pub heads: usize,
}

/// Blocks replaced by an identity mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    #[serde(default)]
    pub no_input_conv: bool,
    #[serde(default)]
    pub no_frame_embedding: bool,
    #[serde(default)]
    pub no_intermediate_conv: bool,
}

impl Ablation {
    pub const NONE: Ablation =
        Ablation { no_input_conv: false, no_frame_embedding: false, no_intermediate_conv: false };
    pub const ALL: Ablation =
        Ablation { no_input_conv: true, no_frame_embedding: true, no_intermediate_conv: true };

    /// The three single-block ablations, by name.
    pub fn variants() -> [(&'static str, Ablation); 3] {
        [
            ("no_input_conv", Ablation { no_input_conv: true, ..Ablation::NONE }),
            ("no_frame_embedding", Ablation { no_frame_embedding: true, ..Ablation::NONE }),
            ("no_intermediate_conv", Ablation { no_intermediate_conv: true, ..Ablation::NONE }),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEncoding {
    None,
    #[default]
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sequence_len: usize,
    pub input_channels: usize,
    pub input_conv: ConvBlockConfig,
    pub frame_embedding: FrameEmbeddingConfig,
    pub intermediate_conv: ConvBlockConfig,
    pub attention: AttentionConfig,
    pub representation_size: usize,
    pub dropout: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub positional_encoding: PositionalEncoding,
}

/// Width of the feed-forward sublayer inside each attention block, relative
/// to the representation size.
pub const FEED_FORWARD_MULTIPLIER: usize = 2;

impl ModelConfig {
    /// Hyperparameters used for the ASL Citizen pretraining run.
    pub fn asl(num_classes: usize) -> Self {
        Self::published(160, num_classes)
    }

    /// Hyperparameters used for the VGT pretraining run.
    pub fn vgt(num_classes: usize) -> Self {
        Self::published(192, num_classes)
    }

    fn published(representation_size: usize, num_classes: usize) -> Self {
        ModelConfig {
            sequence_len: DEFAULT_SEQUENCE_LEN,
            input_channels: FRAME_CHANNELS,
            input_conv: ConvBlockConfig { layers: 1, kernel: 5, channels: FRAME_CHANNELS },
            frame_embedding: FrameEmbeddingConfig { hidden: vec![256, 256] },
            intermediate_conv: ConvBlockConfig { layers: 1, kernel: 5, channels: representation_size },
            attention: AttentionConfig { layers: 4, heads: 8 },
            representation_size,
            dropout: 0.2,
            num_classes,
            ablation: Ablation::NONE,
            positional_encoding: PositionalEncoding::Sinusoidal,
        }
    }

    /// Desk-scale configuration that trains in minutes on a CPU.
    pub fn small(num_classes: usize) -> Self {
        ModelConfig {
            sequence_len: 32,
            input_channels: FRAME_CHANNELS,
            input_conv: ConvBlockConfig { layers: 1, kernel: 5, channels: 64 },
            frame_embedding: FrameEmbeddingConfig { hidden: vec![128, 128] },
            intermediate_conv: ConvBlockConfig { layers: 1, kernel: 5, channels: 64 },
            attention: AttentionConfig { layers: 2, heads: 4 },
            representation_size: 64,
            dropout: 0.2,
            num_classes,
            ablation: Ablation::NONE,
            positional_encoding: PositionalEncoding::Sinusoidal,
        }
    }

    /// The gradient-check configuration: 8 frames, width 16, 2 attention layers of 2 heads.
    pub fn tiny(num_classes: usize) -> Self {
        ModelConfig {
            sequence_len: 8,
            input_channels: FRAME_CHANNELS,
            input_conv: ConvBlockConfig { layers: 1, kernel: 3, channels: 8 },
            frame_embedding: FrameEmbeddingConfig { hidden: vec![16] },
            intermediate_conv: ConvBlockConfig { layers: 1, kernel: 3, channels: 16 },
            attention: AttentionConfig { layers: 2, heads: 2 },
            representation_size: 16,
            dropout: 0.2,
            num_classes,
            ablation: Ablation::NONE,
            positional_encoding: PositionalEncoding::Sinusoidal,
        }
    }

    /// Looks up a named preset (`asl`, `vgt`, `small`, `tiny`).
    pub fn preset(name: &str, num_classes: usize) -> Option<Self> {
        match name {
            "asl" => Some(Self::asl(num_classes)),
            "vgt" => Some(Self::vgt(num_classes)),
            "small" => Some(Self::small(num_classes)),
            "tiny" => Some(Self::tiny(num_classes)),
            _ => None,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.representation_size / self.attention.heads
    }

    pub fn feed_forward_width(&self) -> usize {
        FEED_FORWARD_MULTIPLIER * self.representation_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        let positive = [
            ("sequence_len", self.sequence_len),
            ("input_channels", self.input_channels),
            ("input_conv.layers", self.input_conv.layers),
            ("input_conv.channels", self.input_conv.channels),
            ("intermediate_conv.layers", self.intermediate_conv.layers),
            ("intermediate_conv.channels", self.intermediate_conv.channels),
            ("attention.layers", self.attention.layers),
            ("attention.heads", self.attention.heads),
            ("representation_size", self.representation_size),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.frame_embedding.hidden.is_empty() || self.frame_embedding.hidden.contains(&0) {
            return fail("frame_embedding.hidden must list positive widths".into());
        }
        for (name, k) in [("input_conv", self.input_conv.kernel), ("intermediate_conv", self.intermediate_conv.kernel)] {
            if k == 0 || k % 2 == 0 {
                return fail(format!("{name}.kernel must be odd, got {k}"));
            }
        }
        if self.representation_size % self.attention.heads != 0 {
            return fail(format!(
                "representation_size {} is not divisible by {} heads",
                self.representation_size, self.attention.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without held-out improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Per-class fraction of examples held out for early stopping.
    #[serde(default)]
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn asl() -> Self {
        TrainConfig { batch_size: 64, learning_rate: 3e-4, epochs: 100, seed: 0, patience: 10, validation_fraction: 0.1 }
    }

    pub fn vgt() -> Self {
        TrainConfig { batch_size: 128, ..Self::asl() }
    }

    /// Desk-scale schedule paired with [`ModelConfig::small`].
    pub fn small() -> Self {
        TrainConfig { epochs: 20, patience: 5, ..Self::asl() }
    }

    /// Looks up a named preset (`asl`, `vgt`, `small`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "asl" => Some(Self::asl()),
            "vgt" => Some(Self::vgt()),
            "small" | "tiny" => Some(Self::small()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(
                "batch_size, epochs and learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(ModelError::InvalidConfig("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::asl()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_hyperparameters() {
        let asl = ModelConfig::asl(2731);
        assert_eq!(asl.representation_size, 160);
        assert_eq!(asl.attention, AttentionConfig { layers: 4, heads: 8 });
        assert_eq!(asl.head_dim(), 20);
        assert_eq!(asl.dropout, 0.2);
        assert_eq!(ModelConfig::vgt(10).representation_size, 192);
        assert_eq!(TrainConfig::asl().batch_size, 64);
        assert_eq!(TrainConfig::vgt().batch_size, 128);
        assert_eq!(TrainConfig::asl().learning_rate, 0.0003);
        for name in ["asl", "vgt", "small", "tiny"] {
            ModelConfig::preset(name, 5).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::small(3);
        c.attention.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::small(3);
        c.input_conv.kernel = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::small(3);
        c.num_classes = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::small(3);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_keys_match_field_names() {
        let v = serde_json::to_value(ModelConfig::tiny(2)).unwrap();
        for key in ["sequence_len", "input_conv", "frame_embedding", "attention", "representation_size", "ablation", "positional_encoding"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["positional_encoding"], "sinusoidal");
        let back: ModelConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, ModelConfig::tiny(2));
    }
}
