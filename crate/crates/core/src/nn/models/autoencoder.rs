use alloc::format;
use alloc::vec::Vec;

use crate::nn::graph::{Graph, Var};
use crate::nn::layers::{activate, upsample, Conv, Dense};
use crate::nn::params::LayoutBuilder;
use crate::nn::spec::{Activation, ConvStage};

/// Stacked-convolution encoder/decoder with a dense bottleneck.
///
/// With `variational` set the encoder emits a mean and a log-variance.
#[derive(Debug, Clone)]
pub struct ConvAutoencoder {
    enc: Vec<Conv>,
    to_latent: Dense,
    to_logvar: Option<Dense>,
    from_latent: Dense,
    dec: Vec<(usize, Conv)>,
    out: Conv,
    act: Activation,
    bottleneck: (usize, usize),
    pub latent_dim: usize,
}

pub struct Encoded {
    pub mean: Var,
    pub logvar: Option<Var>,
}

impl ConvAutoencoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lb: &mut LayoutBuilder,
        in_channels: usize,
        length: usize,
        layers: &[ConvStage],
        latent_dim: usize,
        variational: bool,
        bias: bool,
        act: Activation,
    ) -> Self {
        let mut enc = Vec::with_capacity(layers.len());
        let mut cin = in_channels;
        let mut len = length;
        for (i, l) in layers.iter().enumerate() {
            let c = Conv::new(lb, &format!("enc{i}"), cin, l.filters, l.kernel, l.stride, bias);
            len = c.out_len(len, l.kernel);
            enc.push(c);
            cin = l.filters;
        }
        let flat = cin * len;
        let to_latent = Dense::new(lb, "latent_mean", flat, latent_dim, bias);
        let to_logvar = variational.then(|| Dense::new(lb, "latent_logvar", flat, latent_dim, bias));
        let from_latent = Dense::new(lb, "from_latent", latent_dim, flat, bias);
        let mut dec = Vec::with_capacity(layers.len());
        for i in (0..layers.len()).rev() {
            let target = if i == 0 { layers[0].filters } else { layers[i - 1].filters };
            let c = Conv::new(lb, &format!("dec{i}"), layers[i].filters, target, layers[i].kernel, 1, bias);
            dec.push((layers[i].stride, c));
        }
        let out = Conv::new(lb, "out", layers[0].filters, in_channels, layers[0].kernel, 1, bias);
        Self {
            enc,
            to_latent,
            to_logvar,
            from_latent,
            dec,
            out,
            act,
            bottleneck: (cin, len),
            latent_dim,
        }
    }

    pub fn encode(&self, g: &mut Graph, p: &[Var], x: Var) -> Encoded {
        let b = g.shape(x)[0];
        let mut h = x;
        for c in &self.enc {
            h = c.forward(g, p, h);
            h = activate(g, self.act, h);
        }
        let flat = g.reshape(h, alloc::vec![b, self.bottleneck.0 * self.bottleneck.1]);
        let mean = self.to_latent.forward(g, p, flat);
        let logvar = self.to_logvar.as_ref().map(|d| d.forward(g, p, flat));
        Encoded { mean, logvar }
    }

    pub fn decode(&self, g: &mut Graph, p: &[Var], z: Var) -> Var {
        let b = g.shape(z)[0];
        let mut h = self.from_latent.forward(g, p, z);
        h = activate(g, self.act, h);
        h = g.reshape(h, alloc::vec![b, self.bottleneck.0, self.bottleneck.1]);
        for (stride, c) in &self.dec {
            h = upsample(g, h, *stride);
            h = c.forward(g, p, h);
            h = activate(g, self.act, h);
        }
        self.out.forward(g, p, h)
    }
}
