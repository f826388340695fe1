use alloc::format;
use alloc::vec::Vec;

use crate::nn::graph::{Graph, Var};
use crate::nn::layers::{activate, global_avg_pool, Conv, Dense};
use crate::nn::params::LayoutBuilder;
use crate::nn::spec::{Activation, ConvStage};

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

/// Residual 1-D convolutional network ending in global average pooling and
/// a dense head. Serves both as the Deep SVDD encoder and as the diagnostic
/// classifier backbone.
#[derive(Debug, Clone)]
pub struct ResNet1d {
    stem: Conv,
    blocks: Vec<ResBlock>,
    head: Dense,
    act: Activation,
}

impl ResNet1d {
    pub fn new(
        lb: &mut LayoutBuilder,
        in_channels: usize,
        stem: &ConvStage,
        blocks: &[ConvStage],
        out_dim: usize,
        bias: bool,
        act: Activation,
    ) -> Self {
        let stem_conv = Conv::new(lb, "stem", in_channels, stem.filters, stem.kernel, stem.stride, bias);
        let mut cin = stem.filters;
        let mut res = Vec::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            let conv1 = Conv::new(lb, &format!("block{i}.conv1"), cin, b.filters, b.kernel, b.stride, bias);
            let conv2 = Conv::new(lb, &format!("block{i}.conv2"), b.filters, b.filters, b.kernel, 1, bias);
            let shortcut = (cin != b.filters || b.stride != 1)
                .then(|| Conv::new(lb, &format!("block{i}.shortcut"), cin, b.filters, 1, b.stride, bias));
            res.push(ResBlock {
                conv1,
                conv2,
                shortcut,
            });
            cin = b.filters;
        }
        let head = Dense::new(lb, "head", cin, out_dim, bias);
        Self {
            stem: stem_conv,
            blocks: res,
            head,
            act,
        }
    }

    /// `[B, C, T] -> [B, out_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let mut h = self.stem.forward(g, p, x);
        h = activate(g, self.act, h);
        for b in &self.blocks {
            let mut r = b.conv1.forward(g, p, h);
            r = activate(g, self.act, r);
            r = b.conv2.forward(g, p, r);
            let skip = match &b.shortcut {
                Some(s) => s.forward(g, p, h),
                None => h,
            };
            let sum = g.add(r, skip);
            h = activate(g, self.act, sum);
        }
        let pooled = global_avg_pool(g, h);
        self.head.forward(g, p, pooled)
    }
}
