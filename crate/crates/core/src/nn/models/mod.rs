//! Concrete networks for every architecture kind.

mod autoencoder;
mod glow;
mod resnet;
mod transformer;
mod unet;

pub use autoencoder::{ConvAutoencoder, Encoded};
pub use glow::{squeeze, unsqueeze, FlowOutput, Glow1d, MAX_LOG_SCALE};
pub use resnet::ResNet1d;
pub use transformer::MaskedTransformer;
pub use unet::{sinusoidal_embedding, Unet1d};

use alloc::vec::Vec;

use super::params::{LayoutBuilder, ParamDef};
use super::spec::{Architecture, NetworkSpec};
use crate::error::Result;

#[derive(Debug, Clone)]
pub enum Network {
    ResNet(ResNet1d),
    Autoencoder(ConvAutoencoder),
    Transformer(MaskedTransformer),
    Unet(Unet1d),
    Glow(Glow1d),
}

impl Network {
    /// Validates `spec` and assembles the network with its parameter layout.
    pub fn build(spec: &NetworkSpec) -> Result<(Network, Vec<ParamDef>)> {
        spec.validate()?;
        let mut lb = LayoutBuilder::default();
        let (c, l, bias, act) = (spec.in_channels, spec.length, spec.use_bias, spec.activation);
        let net = match &spec.arch {
            Architecture::Resnet1dEncoder {
                stem,
                blocks,
                latent_dim,
            } => Network::ResNet(ResNet1d::new(&mut lb, c, stem, blocks, *latent_dim, bias, act)),
            Architecture::Resnet1dClassifier { stem, blocks, classes } => {
                Network::ResNet(ResNet1d::new(&mut lb, c, stem, blocks, *classes, bias, act))
            }
            Architecture::ConvAe { layers, latent_dim } => Network::Autoencoder(ConvAutoencoder::new(
                &mut lb,
                c,
                l,
                layers,
                *latent_dim,
                false,
                bias,
                act,
            )),
            Architecture::ConvVae { layers, latent_dim } => Network::Autoencoder(ConvAutoencoder::new(
                &mut lb,
                c,
                l,
                layers,
                *latent_dim,
                true,
                bias,
                act,
            )),
            Architecture::TransformerMad {
                patch_size,
                patch_overlap,
                hidden_dim,
                heads,
                ff_dim,
                blocks,
            } => Network::Transformer(MaskedTransformer::new(
                &mut lb,
                c,
                l,
                *patch_size,
                *patch_overlap,
                *hidden_dim,
                *heads,
                *ff_dim,
                *blocks,
                bias,
                act,
            )),
            Architecture::Unet1d {
                filters,
                kernel,
                attention_heads,
                time_dim,
            } => Network::Unet(Unet1d::new(
                &mut lb,
                c,
                filters,
                *kernel,
                *attention_heads,
                *time_dim,
                bias,
                act,
            )),
            Architecture::Glow1d {
                levels,
                steps_per_level,
                hidden_filters,
                hidden_layers,
                kernel,
                squeeze_factor,
                split_fraction,
            } => Network::Glow(Glow1d::new(
                &mut lb,
                c,
                l,
                *levels,
                *steps_per_level,
                *hidden_filters,
                *hidden_layers,
                *kernel,
                *squeeze_factor,
                *split_fraction,
                bias,
                act,
            )),
        };
        Ok((net, lb.finish()))
    }
}
