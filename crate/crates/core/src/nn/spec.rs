//! Architecture descriptions and exact parameter counting.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::models;
use super::params::ParamDef;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NetworkKind {
    Resnet1dEncoder,
    ConvAe,
    ConvVae,
    TransformerMad,
    Unet1d,
    Glow1d,
    Resnet1dClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    /// Unbounded activations keep Deep SVDD away from trivial constant maps.
    pub fn is_unbounded(self) -> bool {
        !matches!(self, Activation::Tanh)
    }
}

/// One convolution stage: output channels, odd kernel width, stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvStage {
    pub const fn new(filters: usize, kernel: usize, stride: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Architecture {
    /// Residual 1-D encoder mapping a window to a latent vector (Deep SVDD).
    Resnet1dEncoder {
        stem: ConvStage,
        blocks: Vec<ConvStage>,
        latent_dim: usize,
    },
    ConvAe {
        layers: Vec<ConvStage>,
        latent_dim: usize,
    },
    ConvVae {
        layers: Vec<ConvStage>,
        latent_dim: usize,
    },
    /// Patch-embedding transformer for masked infilling.
    TransformerMad {
        patch_size: usize,
        patch_overlap: usize,
        hidden_dim: usize,
        heads: usize,
        ff_dim: usize,
        blocks: usize,
    },
    /// Denoising U-Net; one entry of `filters` per resolution level.
    Unet1d {
        filters: Vec<usize>,
        kernel: usize,
        attention_heads: usize,
        time_dim: usize,
    },
    /// Multiscale Glow: `levels` of squeeze, `steps_per_level` flow steps, split.
    Glow1d {
        levels: usize,
        steps_per_level: usize,
        hidden_filters: usize,
        hidden_layers: usize,
        kernel: usize,
        squeeze_factor: usize,
        split_fraction: f64,
    },
    Resnet1dClassifier {
        stem: ConvStage,
        blocks: Vec<ConvStage>,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub length: usize,
    pub use_bias: bool,
    pub activation: Activation,
    pub arch: Architecture,
}

impl NetworkSpec {
    pub fn kind(&self) -> NetworkKind {
        match self.arch {
            Architecture::Resnet1dEncoder { .. } => NetworkKind::Resnet1dEncoder,
            Architecture::ConvAe { .. } => NetworkKind::ConvAe,
            Architecture::ConvVae { .. } => NetworkKind::ConvVae,
            Architecture::TransformerMad { .. } => NetworkKind::TransformerMad,
            Architecture::Unet1d { .. } => NetworkKind::Unet1d,
            Architecture::Glow1d { .. } => NetworkKind::Glow1d,
            Architecture::Resnet1dClassifier { .. } => NetworkKind::Resnet1dClassifier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.length == 0 {
            return Err(Error::Config("channels and length must be positive".into()));
        }
        let check_stage = |s: &ConvStage| -> Result<()> {
            if s.filters == 0 || s.stride == 0 || s.kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "conv stage {s:?}: filters and stride must be positive and kernel odd"
                )));
            }
            Ok(())
        };
        match &self.arch {
            Architecture::Resnet1dEncoder { stem, blocks, latent_dim }
            | Architecture::Resnet1dClassifier {
                stem,
                blocks,
                classes: latent_dim,
            } => {
                check_stage(stem)?;
                blocks.iter().try_for_each(check_stage)?;
                if *latent_dim == 0 {
                    return Err(Error::Config("output dimension must be positive".into()));
                }
            }
            Architecture::ConvAe { layers, latent_dim } | Architecture::ConvVae { layers, latent_dim } => {
                if layers.is_empty() || *latent_dim == 0 {
                    return Err(Error::Config("autoencoder needs layers and a latent".into()));
                }
                layers.iter().try_for_each(check_stage)?;
                let total: usize = layers.iter().map(|l| l.stride).product();
                if self.length % total != 0 {
                    return Err(Error::Config(format!(
                        "length {} not divisible by total stride {total}",
                        self.length
                    )));
                }
            }
            Architecture::TransformerMad {
                patch_size,
                patch_overlap,
                hidden_dim,
                heads,
                ff_dim,
                blocks,
            } => {
                if *patch_size == 0 || patch_overlap >= patch_size || *patch_size > self.length {
                    return Err(Error::Config("patch overlap must be below patch size".into()));
                }
                let stride = patch_size - patch_overlap;
                if (self.length - patch_size) % stride != 0 {
                    return Err(Error::Config(format!(
                        "patches of {patch_size} with stride {stride} do not tile length {}",
                        self.length
                    )));
                }
                if *heads == 0 || *hidden_dim == 0 || hidden_dim % heads != 0 {
                    return Err(Error::Config("hidden dim must be a multiple of heads".into()));
                }
                if *ff_dim == 0 || *blocks == 0 {
                    return Err(Error::Config("transformer needs blocks and a feed-forward width".into()));
                }
            }
            Architecture::Unet1d {
                filters,
                kernel,
                attention_heads,
                time_dim,
            } => {
                if filters.is_empty() || filters.contains(&0) || kernel % 2 == 0 || *time_dim == 0 {
                    return Err(Error::Config("invalid U-Net widths or kernel".into()));
                }
                let down = 1usize << (filters.len() - 1);
                if self.length % down != 0 {
                    return Err(Error::Config(format!(
                        "length {} not divisible by 2^{}",
                        self.length,
                        filters.len() - 1
                    )));
                }
                let last = *filters.last().unwrap();
                if *attention_heads > 0 && last % attention_heads != 0 {
                    return Err(Error::Config("bottleneck width must be a multiple of heads".into()));
                }
            }
            Architecture::Glow1d {
                levels,
                steps_per_level,
                hidden_filters,
                hidden_layers,
                kernel,
                squeeze_factor,
                split_fraction,
            } => {
                if *levels == 0 || *steps_per_level == 0 || *hidden_filters == 0 || *hidden_layers == 0 {
                    return Err(Error::Config("glow needs levels, steps and a coupling net".into()));
                }
                if kernel % 2 == 0 || *squeeze_factor < 2 {
                    return Err(Error::Config("glow kernel must be odd and squeeze at least 2".into()));
                }
                if !(*split_fraction > 0.0 && *split_fraction < 1.0) {
                    return Err(Error::Config("split fraction must lie in (0, 1)".into()));
                }
                let mut len = self.length;
                for _ in 0..*levels {
                    if len % squeeze_factor != 0 {
                        return Err(Error::Config(format!(
                            "length {} not divisible by squeeze factor {squeeze_factor}^{levels}",
                            self.length
                        )));
                    }
                    len /= squeeze_factor;
                }
            }
        }
        Ok(())
    }

    /// Every trainable tensor, in a fixed order.
    pub fn param_defs(&self) -> Result<Vec<ParamDef>> {
        Ok(models::Network::build(self)?.1)
    }
}

/// Exact number of trainable scalars described by `spec`.
pub fn count_params(spec: &NetworkSpec) -> Result<usize> {
    Ok(spec.param_defs()?.iter().map(ParamDef::numel).sum())
}
