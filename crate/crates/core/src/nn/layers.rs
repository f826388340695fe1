//! Parameterised building blocks shared by the model zoo.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, SparseMap, Var};
use super::params::{Init, LayoutBuilder};
use super::spec::Activation;

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn activate(g: &mut Graph, act: Activation, x: Var) -> Var {
    match act {
        Activation::Relu => g.relu(x),
        Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
        Activation::Tanh => g.tanh(x),
    }
}

/// `[B, C, T]` convolution with same-style padding `kernel / 2`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: usize,
    pub b: Option<usize>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(lb: &mut LayoutBuilder, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool) -> Self {
        let w = lb.add(
            &format!("{name}.weight"),
            vec![cout, cin, kernel],
            Init::Kaiming { fan_in: cin * kernel },
        );
        let b = bias.then(|| lb.add(&format!("{name}.bias"), vec![cout], Init::Zeros));
        Self {
            w,
            b,
            stride,
            pad: kernel / 2,
        }
    }

    /// Same as [`Conv::new`] but weights and bias start at zero.
    pub fn zeroed(lb: &mut LayoutBuilder, name: &str, cin: usize, cout: usize, kernel: usize, bias: bool) -> Self {
        let w = lb.add(&format!("{name}.weight"), vec![cout, cin, kernel], Init::Zeros);
        let b = bias.then(|| lb.add(&format!("{name}.bias"), vec![cout], Init::Zeros));
        Self {
            w,
            b,
            stride: 1,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        g.conv1d(x, p[self.w], self.b.map(|b| p[b]), self.stride, self.pad)
    }

    pub fn out_len(&self, len: usize, kernel: usize) -> usize {
        (len + 2 * self.pad - kernel) / self.stride + 1
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: usize,
    pub b: Option<usize>,
}

impl Dense {
    pub fn new(lb: &mut LayoutBuilder, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        let w = lb.add(
            &format!("{name}.weight"),
            vec![dout, din],
            Init::Kaiming { fan_in: din },
        );
        let b = bias.then(|| lb.add(&format!("{name}.bias"), vec![dout], Init::Zeros));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        g.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNorm {
    pub fn new(lb: &mut LayoutBuilder, name: &str, dim: usize) -> Self {
        Self {
            gain: lb.add(&format!("{name}.gain"), vec![dim], Init::Ones),
            bias: lb.add(&format!("{name}.bias"), vec![dim], Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        g.layer_norm(x, p[self.gain], p[self.bias], 1e-5)
    }
}

/// Multi-head self-attention over `[B, N, D]` tokens.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub heads: usize,
}

impl Attention {
    pub fn new(lb: &mut LayoutBuilder, name: &str, dim: usize, heads: usize, bias: bool) -> Self {
        Self {
            q: Dense::new(lb, &format!("{name}.q"), dim, dim, bias),
            k: Dense::new(lb, &format!("{name}.k"), dim, dim, bias),
            v: Dense::new(lb, &format!("{name}.v"), dim, dim, bias),
            o: Dense::new(lb, &format!("{name}.o"), dim, dim, bias),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let dh = d / h;
        let split = Rc::new(split_heads_map(b, n, h, dh));
        let q = self.q.forward(g, p, x);
        let k = self.k.forward(g, p, x);
        let v = self.v.forward(g, p, x);
        let q = g.map(q, split.clone());
        let k = g.map(k, split.clone());
        let v = g.map(v, split);
        let scores = g.batch_matmul(q, k, true);
        let scores = g.scale(scores, 1.0 / libm::sqrt(dh as f64));
        let att = g.softmax(scores);
        let ctx = g.batch_matmul(att, v, false);
        let merged = g.map(ctx, Rc::new(merge_heads_map(b, n, h, dh)));
        self.o.forward(g, p, merged)
    }
}

/// `[B, N, H*dh] -> [B*H, N, dh]`.
fn split_heads_map(b: usize, n: usize, h: usize, dh: usize) -> SparseMap {
    let mut idx = Vec::with_capacity(b * n * h * dh);
    for bi in 0..b {
        for hi in 0..h {
            for ni in 0..n {
                for j in 0..dh {
                    idx.push((bi * n + ni) * h * dh + hi * dh + j);
                }
            }
        }
    }
    SparseMap::gather(b * n * h * dh, vec![b * h, n, dh], idx)
}

/// `[B*H, N, dh] -> [B, N, H*dh]`.
fn merge_heads_map(b: usize, n: usize, h: usize, dh: usize) -> SparseMap {
    let mut idx = Vec::with_capacity(b * n * h * dh);
    for bi in 0..b {
        for ni in 0..n {
            for hi in 0..h {
                for j in 0..dh {
                    idx.push(((bi * h + hi) * n + ni) * dh + j);
                }
            }
        }
    }
    SparseMap::gather(b * n * h * dh, vec![b, n, h * dh], idx)
}

/// `[A, B, C] -> [A, C, B]`.
pub fn transpose12(g: &mut Graph, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let (a, b, c) = (s[0], s[1], s[2]);
    let mut idx = Vec::with_capacity(a * b * c);
    for ai in 0..a {
        for ci in 0..c {
            for bi in 0..b {
                idx.push((ai * b + bi) * c + ci);
            }
        }
    }
    g.map(x, Rc::new(SparseMap::gather(a * b * c, vec![a, c, b], idx)))
}

/// Mean over time: `[B, C, T] -> [B, C]`.
pub fn global_avg_pool(g: &mut Graph, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let (b, c, t) = (s[0], s[1], s[2]);
    let w = 1.0 / t as f64;
    let rows = (0..b * c)
        .map(|r| (0..t).map(|k| (r * t + k, w)).collect())
        .collect();
    g.map(x, Rc::new(SparseMap::weighted(b * c * t, vec![b, c], rows)))
}

/// Nearest-neighbour upsampling along time.
pub fn upsample(g: &mut Graph, x: Var, factor: usize) -> Var {
    if factor == 1 {
        return x;
    }
    let s = g.shape(x).to_vec();
    let (b, c, t) = (s[0], s[1], s[2]);
    let idx = (0..b * c)
        .flat_map(|r| (0..t * factor).map(move |k| r * t + k / factor))
        .collect();
    g.map(x, Rc::new(SparseMap::gather(b * c * t, vec![b, c, t * factor], idx)))
}

/// Broadcasts `[Bv, C]` (with `Bv` either 1 or `b`) to `[b, C, t]`.
pub fn expand_channels(g: &mut Graph, v: Var, b: usize, t: usize) -> Var {
    let s = g.shape(v).to_vec();
    let (bv, c) = if s.len() == 1 { (1, s[0]) } else { (s[0], s[1]) };
    debug_assert!(bv == 1 || bv == b);
    let mut idx = Vec::with_capacity(b * c * t);
    for bi in 0..b {
        let src = if bv == 1 { 0 } else { bi };
        for ci in 0..c {
            for _ in 0..t {
                idx.push(src * c + ci);
            }
        }
    }
    g.map(v, Rc::new(SparseMap::gather(bv * c, vec![b, c, t], idx)))
}

/// Repeats a `[n]` (or `[1]`) tensor over a leading batch: `-> [b, n]`.
pub fn expand_batch(g: &mut Graph, v: Var, b: usize) -> Var {
    let n = g.value(v).len();
    let shape = if n == 1 { vec![b] } else { vec![b, n] };
    let idx = (0..b).flat_map(|_| 0..n).collect();
    g.map(v, Rc::new(SparseMap::gather(n, shape, idx)))
}

/// Channels `start..start+len` of a `[B, C, T]` tensor.
pub fn slice_channels(g: &mut Graph, x: Var, start: usize, len: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (b, c, t) = (s[0], s[1], s[2]);
    let mut idx = Vec::with_capacity(b * len * t);
    for bi in 0..b {
        for ci in start..start + len {
            for k in 0..t {
                idx.push((bi * c + ci) * t + k);
            }
        }
    }
    g.map(x, Rc::new(SparseMap::gather(b * c * t, vec![b, len, t], idx)))
}
