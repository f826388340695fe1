use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::graph::{Graph, Var};
use crate::nn::layers::{activate, expand_channels, transpose12, upsample, Attention, Conv, Dense, LayerNorm};
use crate::nn::params::LayoutBuilder;
use crate::nn::spec::Activation;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
struct TimeResBlock {
    conv1: Conv,
    time: Dense,
    conv2: Conv,
    shortcut: Option<Conv>,
}

impl TimeResBlock {
    fn new(lb: &mut LayoutBuilder, name: &str, cin: usize, cout: usize, k: usize, tdim: usize, bias: bool) -> Self {
        Self {
            conv1: Conv::new(lb, &format!("{name}.conv1"), cin, cout, k, 1, bias),
            time: Dense::new(lb, &format!("{name}.time"), tdim, cout, bias),
            conv2: Conv::new(lb, &format!("{name}.conv2"), cout, cout, k, 1, bias),
            shortcut: (cin != cout).then(|| Conv::new(lb, &format!("{name}.shortcut"), cin, cout, 1, 1, bias)),
        }
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var, temb: Var, act: Activation) -> Var {
        let s = g.shape(x).to_vec();
        let mut h = self.conv1.forward(g, p, x);
        h = activate(g, act, h);
        let t = self.time.forward(g, p, temb);
        let t = expand_channels(g, t, s[0], s[2]);
        h = g.add(h, t);
        h = self.conv2.forward(g, p, h);
        h = activate(g, act, h);
        let skip = match &self.shortcut {
            Some(c) => c.forward(g, p, x),
            None => x,
        };
        g.add(h, skip)
    }
}

#[derive(Debug, Clone)]
struct AttnBlock {
    norm: LayerNorm,
    attn: Attention,
}

/// 1-D U-Net conditioned on the diffusion step through sinusoidal embeddings.
#[derive(Debug, Clone)]
pub struct Unet1d {
    time_dim: usize,
    time1: Dense,
    time2: Dense,
    init: Conv,
    down: Vec<TimeResBlock>,
    downsample: Vec<Conv>,
    mid: TimeResBlock,
    mid_attn: Option<AttnBlock>,
    up_conv: Vec<Conv>,
    up: Vec<TimeResBlock>,
    out: Conv,
    act: Activation,
}

impl Unet1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lb: &mut LayoutBuilder,
        channels: usize,
        filters: &[usize],
        k: usize,
        heads: usize,
        time_dim: usize,
        bias: bool,
        act: Activation,
    ) -> Self {
        let time1 = Dense::new(lb, "time1", time_dim, time_dim, bias);
        let time2 = Dense::new(lb, "time2", time_dim, time_dim, bias);
        let init = Conv::new(lb, "init", channels, filters[0], k, 1, bias);
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut cin = filters[0];
        for (i, &f) in filters.iter().enumerate() {
            down.push(TimeResBlock::new(lb, &format!("down{i}"), cin, f, k, time_dim, bias));
            if i + 1 < filters.len() {
                downsample.push(Conv::new(lb, &format!("downsample{i}"), f, f, k, 2, bias));
            }
            cin = f;
        }
        let last = *filters.last().unwrap();
        let mid = TimeResBlock::new(lb, "mid", last, last, k, time_dim, bias);
        let mid_attn = (heads > 0).then(|| AttnBlock {
            norm: LayerNorm::new(lb, "mid_attn.norm", last),
            attn: Attention::new(lb, "mid_attn", last, heads, bias),
        });
        let mut up_conv = Vec::new();
        let mut up = Vec::new();
        for i in (0..filters.len() - 1).rev() {
            up_conv.push(Conv::new(lb, &format!("upconv{i}"), filters[i + 1], filters[i], k, 1, bias));
            up.push(TimeResBlock::new(lb, &format!("up{i}"), 2 * filters[i], filters[i], k, time_dim, bias));
        }
        let out = Conv::new(lb, "out", filters[0], channels, k, 1, bias);
        Self {
            time_dim,
            time1,
            time2,
            init,
            down,
            downsample,
            mid,
            mid_attn,
            up_conv,
            up,
            out,
            act,
        }
    }

    /// Sinusoidal embedding of integer diffusion steps: `[B, time_dim]`.
    pub fn time_embedding(&self, steps: &[usize]) -> Tensor {
        sinusoidal_embedding(steps, self.time_dim)
    }

    /// Predicts the configured diffusion target for `x_t: [B, C, T]` at `steps`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, steps: &[usize]) -> Var {
        let emb = g.input(self.time_embedding(steps));
        let mut temb = self.time1.forward(g, p, emb);
        temb = activate(g, self.act, temb);
        temb = self.time2.forward(g, p, temb);

        let mut h = self.init.forward(g, p, x);
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, blk) in self.down.iter().enumerate() {
            h = blk.forward(g, p, h, temb, self.act);
            skips.push(h);
            if let Some(ds) = self.downsample.get(i) {
                h = ds.forward(g, p, h);
            }
        }
        // the deepest level feeds the bottleneck directly, no skip needed
        skips.pop();
        h = self.mid.forward(g, p, h, temb, self.act);
        if let Some(a) = &self.mid_attn {
            let tokens = transpose12(g, h);
            let n = a.norm.forward(g, p, tokens);
            let att = a.attn.forward(g, p, n);
            let tokens = g.add(tokens, att);
            h = transpose12(g, tokens);
        }
        for (conv, blk) in self.up_conv.iter().zip(&self.up) {
            h = upsample(g, h, 2);
            h = conv.forward(g, p, h);
            let skip = skips.pop().expect("skip per level");
            h = g.concat_channels(&[h, skip]);
            h = blk.forward(g, p, h, temb, self.act);
        }
        self.out.forward(g, p, h)
    }
}

pub fn sinusoidal_embedding(steps: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; steps.len() * dim];
    for (r, &t) in steps.iter().enumerate() {
        for i in 0..half {
            let freq = libm::exp(-libm::log(10_000.0) * i as f64 / half.max(1) as f64);
            let arg = t as f64 * freq;
            data[r * dim + i] = libm::sin(arg);
            data[r * dim + half + i] = libm::cos(arg);
        }
    }
    Tensor::new(vec![steps.len(), dim], data)
}
