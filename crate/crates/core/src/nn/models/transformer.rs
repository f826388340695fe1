use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::graph::{Graph, SparseMap, Var};
use crate::nn::layers::{activate, expand_batch, Attention, Dense, LayerNorm};
use crate::nn::params::{Init, LayoutBuilder};
use crate::nn::spec::Activation;

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff1: Dense,
    ff2: Dense,
}

/// Pre-norm transformer over overlapping patches, reconstructing every
/// timestep by overlap-averaging the per-patch outputs.
#[derive(Debug, Clone)]
pub struct MaskedTransformer {
    channels: usize,
    length: usize,
    patch: usize,
    stride: usize,
    patches: usize,
    dim: usize,
    embed: Dense,
    pos: usize,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    head: Dense,
    act: Activation,
}

impl MaskedTransformer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lb: &mut LayoutBuilder,
        channels: usize,
        length: usize,
        patch: usize,
        overlap: usize,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        blocks: usize,
        bias: bool,
        act: Activation,
    ) -> Self {
        let stride = patch - overlap;
        let patches = (length - patch) / stride + 1;
        let embed = Dense::new(lb, "patch_embed", channels * patch, dim, bias);
        let pos = lb.add("pos_embed", vec![patches, dim], Init::Normal { std: 0.02 });
        let blocks = (0..blocks)
            .map(|i| Block {
                ln1: LayerNorm::new(lb, &format!("block{i}.ln1"), dim),
                attn: Attention::new(lb, &format!("block{i}.attn"), dim, heads, bias),
                ln2: LayerNorm::new(lb, &format!("block{i}.ln2"), dim),
                ff1: Dense::new(lb, &format!("block{i}.ff1"), dim, ff_dim, bias),
                ff2: Dense::new(lb, &format!("block{i}.ff2"), ff_dim, dim, bias),
            })
            .collect();
        let ln_out = LayerNorm::new(lb, "ln_out", dim);
        let head = Dense::new(lb, "head", dim, channels * patch, bias);
        Self {
            channels,
            length,
            patch,
            stride,
            patches,
            dim,
            embed,
            pos,
            blocks,
            ln_out,
            head,
            act,
        }
    }

    fn patchify(&self, b: usize) -> SparseMap {
        let (c, l, p, n) = (self.channels, self.length, self.patch, self.patches);
        let mut idx = Vec::with_capacity(b * n * c * p);
        for bi in 0..b {
            for ni in 0..n {
                for ci in 0..c {
                    for j in 0..p {
                        idx.push((bi * c + ci) * l + ni * self.stride + j);
                    }
                }
            }
        }
        SparseMap::gather(b * c * l, vec![b, n, c * p], idx)
    }

    fn fold(&self, b: usize) -> SparseMap {
        let (c, l, p, n) = (self.channels, self.length, self.patch, self.patches);
        let mut rows = Vec::with_capacity(b * c * l);
        for bi in 0..b {
            for ci in 0..c {
                for t in 0..l {
                    let first = if t + 1 > p { (t + 1 - p).div_ceil(self.stride) } else { 0 };
                    let last = (t / self.stride).min(n - 1);
                    let cover: Vec<usize> = (first..=last).collect();
                    let w = 1.0 / cover.len() as f64;
                    rows.push(
                        cover
                            .into_iter()
                            .map(|ni| (((bi * n + ni) * c + ci) * p + (t - ni * self.stride), w))
                            .collect(),
                    );
                }
            }
        }
        SparseMap::weighted(b * n * c * p, vec![b, c, l], rows)
    }

    /// `[B, C, L] -> [B, C, L]` reconstruction.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let b = g.shape(x)[0];
        let patches = g.map(x, Rc::new(self.patchify(b)));
        let mut h = self.embed.forward(g, p, patches);
        let pos = expand_batch(g, p[self.pos], b);
        let pos = g.reshape(pos, vec![b, self.patches, self.dim]);
        h = g.add(h, pos);
        for blk in &self.blocks {
            let n1 = blk.ln1.forward(g, p, h);
            let a = blk.attn.forward(g, p, n1);
            h = g.add(h, a);
            let n2 = blk.ln2.forward(g, p, h);
            let f = blk.ff1.forward(g, p, n2);
            let f = activate(g, self.act, f);
            let f = blk.ff2.forward(g, p, f);
            h = g.add(h, f);
        }
        let h = self.ln_out.forward(g, p, h);
        let out = self.head.forward(g, p, h);
        g.map(out, Rc::new(self.fold(b)))
    }
}
