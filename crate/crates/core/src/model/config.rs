use serde::{Deserialize, Serialize};

use super::layers::Activation;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationPlacement {
    /// After the first and second convolutions and after the residual sum.
    AllPositions,
    /// Only between the second and the third convolution.
    SecondThirdOnly,
}

/// Backbone variants of the block/activation ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// (3,4,6,3) blocks, stride-1 last stage, ReLU everywhere.
    A,
    /// (3,3,9,3) blocks, ReLU everywhere.
    B,
    /// (3,3,9,3) blocks, GELU everywhere.
    C,
    /// (3,3,9,3) blocks, GELU between the second and third layers only.
    D,
    #[serde(rename = "custom")]
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub variant: Variant,
    pub stage_channels: [usize; 4],
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    /// Bottleneck width is `channels / bottleneck_ratio` (at least 1).
    pub bottleneck_ratio: usize,
    pub se_reduction: usize,
    /// Only with `variant = "custom"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_blocks: Option<[usize; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_stage_stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_placement: Option<ActivationPlacement>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            variant: Variant::D,
            stage_channels: [256, 512, 1024, 2048],
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            bottleneck_ratio: 4,
            se_reduction: 16,
            stage_blocks: None,
            last_stage_stride: None,
            activation: None,
            activation_placement: None,
        }
    }
}

/// Backbone settings with the variant expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedBackbone {
    pub stage_blocks: [usize; 4],
    pub stage_channels: [usize; 4],
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub bottleneck_ratio: usize,
    pub se_reduction: usize,
    pub last_stage_stride: usize,
    pub activation: Activation,
    pub placement: ActivationPlacement,
}

impl BackboneConfig {
    pub fn resolve(&self) -> Result<ResolvedBackbone> {
        use ActivationPlacement::*;
        let fixed = match self.variant {
            Variant::A => Some(([3, 4, 6, 3], 1, Activation::Relu, AllPositions)),
            Variant::B => Some(([3, 3, 9, 3], 1, Activation::Relu, AllPositions)),
            Variant::C => Some(([3, 3, 9, 3], 1, Activation::Gelu, AllPositions)),
            Variant::D => Some(([3, 3, 9, 3], 1, Activation::Gelu, SecondThirdOnly)),
            Variant::Custom => None,
        };
        let (stage_blocks, last_stage_stride, activation, placement) = match fixed {
            Some(f) => {
                let overridden = [
                    ("stage_blocks", self.stage_blocks.is_some()),
                    ("last_stage_stride", self.last_stage_stride.is_some()),
                    ("activation", self.activation.is_some()),
                    ("activation_placement", self.activation_placement.is_some()),
                ];
                if let Some((key, _)) = overridden.iter().find(|(_, set)| *set) {
                    return Err(Error::config(format!(
                        "model.backbone.{key} is fixed by variant {:?}; use variant = \"custom\"",
                        self.variant
                    )));
                }
                f
            }
            None => (
                self.stage_blocks.unwrap_or([3, 3, 9, 3]),
                self.last_stage_stride.unwrap_or(1),
                self.activation.unwrap_or(Activation::Gelu),
                self.activation_placement.unwrap_or(SecondThirdOnly),
            ),
        };
        let r = ResolvedBackbone {
            stage_blocks,
            stage_channels: self.stage_channels,
            stem_channels: self.stem_channels,
            stem_kernel: self.stem_kernel,
            stem_stride: self.stem_stride,
            stem_pool: self.stem_pool,
            bottleneck_ratio: self.bottleneck_ratio,
            se_reduction: self.se_reduction,
            last_stage_stride,
            activation,
            placement,
        };
        r.validate()?;
        Ok(r)
    }
}

impl ResolvedBackbone {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("stage_blocks", self.stage_blocks.iter().all(|&b| b >= 1)),
            ("stage_channels", self.stage_channels.iter().all(|&c| c >= 1)),
            ("stem_channels", self.stem_channels >= 1),
            ("stem_kernel", self.stem_kernel >= 1),
            ("stem_stride", self.stem_stride >= 1),
            ("bottleneck_ratio", self.bottleneck_ratio >= 1),
            ("se_reduction", self.se_reduction >= 1),
            ("last_stage_stride", self.last_stage_stride >= 1),
        ];
        match positive.iter().find(|(_, ok)| !ok) {
            Some((key, _)) => Err(Error::config(format!("model.backbone.{key} must be at least 1"))),
            None => Ok(()),
        }
    }

    pub fn stage_strides(&self) -> [usize; 4] {
        [1, 2, 2, self.last_stage_stride]
    }

    /// Output spatial extent for a square input of side `s`.
    pub fn output_extent(&self, s: usize) -> Option<usize> {
        let k = self.stem_kernel;
        let pad = k / 2;
        if s + 2 * pad < k {
            return None;
        }
        let mut e = (s + 2 * pad - k) / self.stem_stride + 1;
        if self.stem_pool {
            e = (e + 2 - 3) / 2 + 1;
        }
        for stride in self.stage_strides() {
            e = (e - 1) / stride + 1;
        }
        Some(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    /// Per-channel `q_i·k_i/√d`, softmax across channels, broadcast spatially.
    Diagonal,
    /// `softmax(QKᵀ/√d)` row-wise, applied as a channel-mixing product on `V`.
    FullMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub similarity: Similarity,
    /// Descriptor length per channel.
    pub descriptor_dim: usize,
    pub tau_main: f64,
    pub tau_aux: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { similarity: Similarity::Diagonal, descriptor_dim: 16, tau_main: 1.0, tau_aux: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WdmConfig {
    pub blocks: usize,
    pub heads: usize,
    pub token_dim: usize,
    pub mlp_ratio: f64,
}

impl Default for WdmConfig {
    fn default() -> Self {
        WdmConfig { blocks: 4, heads: 8, token_dim: 256, mlp_ratio: 4.0 }
    }
}

impl WdmConfig {
    pub fn mlp_dim(&self) -> usize {
        ((self.token_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub views: usize,
    pub backbone: BackboneConfig,
    pub fusion: FusionConfig,
    pub wdm: WdmConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            views: 2,
            backbone: BackboneConfig::default(),
            fusion: FusionConfig::default(),
            wdm: WdmConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small two-view network for 32×32 inputs with an 8×8 feature map.
    pub fn tiny() -> Self {
        ModelConfig {
            views: 2,
            backbone: BackboneConfig {
                variant: Variant::D,
                stage_channels: [8, 16, 16, 16],
                stem_channels: 8,
                stem_kernel: 3,
                stem_stride: 1,
                stem_pool: false,
                bottleneck_ratio: 2,
                se_reduction: 4,
                ..BackboneConfig::default()
            },
            fusion: FusionConfig { descriptor_dim: 8, ..FusionConfig::default() },
            wdm: WdmConfig { blocks: 1, heads: 1, token_dim: 32, mlp_ratio: 2.0 },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "default" => Ok(Self::default()),
            other => Err(Error::config(format!("unknown model preset {other:?} (tiny, default)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.resolve()?;
        if self.views != 2 {
            return Err(Error::config(format!("model.views must be 2, got {}", self.views)));
        }
        let w = &self.wdm;
        if w.blocks < 1 {
            return Err(Error::config("model.wdm.blocks must be at least 1"));
        }
        if w.heads < 1 || w.token_dim % w.heads != 0 {
            return Err(Error::config(format!(
                "model.wdm.token_dim ({}) must be divisible by model.wdm.heads ({})",
                w.token_dim, w.heads
            )));
        }
        if !(w.mlp_ratio > 0.0) {
            return Err(Error::config("model.wdm.mlp_ratio must be positive"));
        }
        if self.fusion.descriptor_dim < 1 {
            return Err(Error::config("model.fusion.descriptor_dim must be at least 1"));
        }
        Ok(())
    }
}
