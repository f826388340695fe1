use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;
use crate::nn::graph::{Graph, SparseMap, Var};
use crate::nn::layers::{activate, expand_batch, expand_channels, slice_channels, Conv};
use crate::nn::params::{Init, LayoutBuilder, ParamStore};
use crate::nn::spec::Activation;
use crate::nn::tensor::Tensor;

/// Largest magnitude of a coupling log-scale.
pub const MAX_LOG_SCALE: f64 = 2.0;

#[derive(Debug, Clone)]
struct Coupling {
    keep: usize,
    hidden: Vec<Conv>,
    out: Conv,
}

#[derive(Debug, Clone)]
struct FlowStep {
    an_logs: usize,
    an_bias: usize,
    mix: usize,
    coupling: Coupling,
}

#[derive(Debug, Clone)]
struct Level {
    channels: usize,
    length: usize,
    steps: Vec<FlowStep>,
    split: usize,
}

/// Multiscale Glow over `[B, C, T]` windows: each level squeezes time into
/// channels, applies actnorm, an invertible 1x1 convolution and an affine
/// coupling per step, then factors out part of the channels.
#[derive(Debug, Clone)]
pub struct Glow1d {
    squeeze: usize,
    levels: Vec<Level>,
    act: Activation,
    dims: usize,
}

/// Output of the forward flow: latent pieces and per-sample `log|det J|`.
pub struct FlowOutput {
    pub z: Vec<Var>,
    pub log_det: Var,
}

impl Glow1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lb: &mut LayoutBuilder,
        channels: usize,
        length: usize,
        levels: usize,
        steps: usize,
        hidden: usize,
        hidden_layers: usize,
        kernel: usize,
        squeeze: usize,
        split_fraction: f64,
        bias: bool,
        act: Activation,
    ) -> Self {
        let mut c = channels;
        let mut t = length;
        let mut out = Vec::with_capacity(levels);
        for l in 0..levels {
            c *= squeeze;
            t /= squeeze;
            let mut st = Vec::with_capacity(steps);
            for s in 0..steps {
                let name = format!("level{l}.step{s}");
                let an_logs = lb.add(&format!("{name}.actnorm.logs"), vec![c], Init::Zeros);
                let an_bias = lb.add(&format!("{name}.actnorm.bias"), vec![c], Init::Zeros);
                let mix = lb.add(&format!("{name}.invconv.weight"), vec![c, c], Init::Orthogonal);
                let keep = c / 2;
                let change = c - keep;
                let mut hid = Vec::with_capacity(hidden_layers);
                let mut cin = keep;
                for h in 0..hidden_layers {
                    hid.push(Conv::new(lb, &format!("{name}.coupling.hidden{h}"), cin, hidden, kernel, 1, bias));
                    cin = hidden;
                }
                let outc = Conv::zeroed(lb, &format!("{name}.coupling.out"), cin, 2 * change, kernel, bias);
                st.push(FlowStep {
                    an_logs,
                    an_bias,
                    mix,
                    coupling: Coupling {
                        keep,
                        hidden: hid,
                        out: outc,
                    },
                });
            }
            let split = if l + 1 < levels {
                let k = libm::round(c as f64 * split_fraction) as usize;
                k.clamp(1, c - 1)
            } else {
                0
            };
            out.push(Level {
                channels: c,
                length: t,
                steps: st,
                split,
            });
            c -= split;
        }
        Self {
            squeeze,
            levels: out,
            act,
            dims: channels * length,
        }
    }

    /// Number of scalar dimensions of one input window.
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> FlowOutput {
        self.forward_impl(g, p, x, None)
    }

    /// Data-dependent actnorm initialisation: each actnorm is set so that
    /// its output has zero mean and unit variance per channel on `batch`.
    pub fn init_actnorm(&self, store: &mut ParamStore, batch: &Tensor) {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(batch.clone());
        self.forward_impl(&mut g, &p, x, Some(store));
    }

    fn forward_impl(&self, g: &mut Graph, p: &[Var], x: Var, mut init: Option<&mut ParamStore>) -> FlowOutput {
        let b = g.shape(x)[0];
        let mut h = x;
        let mut z = Vec::new();
        let mut terms: Vec<Var> = Vec::new();
        for level in &self.levels {
            h = squeeze(g, h, self.squeeze);
            let (c, t) = (level.channels, level.length);
            for step in &level.steps {
                let (logs, bias) = match init.as_deref_mut() {
                    Some(store) => {
                        let (mean, std) = channel_stats(g.value(h), b, c, t);
                        store.tensors[step.an_bias].data = mean.iter().map(|m| -m).collect();
                        store.tensors[step.an_logs].data =
                            std.iter().map(|s| -libm::log(s + 1e-6)).collect();
                        (
                            g.param(step.an_logs, &store.tensors[step.an_logs]),
                            g.param(step.an_bias, &store.tensors[step.an_bias]),
                        )
                    }
                    None => (p[step.an_logs], p[step.an_bias]),
                };
                // actnorm: (h + bias) * exp(logs)
                let eb = expand_channels(g, bias, b, t);
                let scale = g.exp(logs);
                let es = expand_channels(g, scale, b, t);
                let shifted = g.add(h, eb);
                h = g.mul(shifted, es);
                let ld = g.sum(logs);
                let ld = g.scale(ld, t as f64);
                terms.push(expand_batch(g, ld, b));

                // invertible 1x1 convolution
                let w3 = g.reshape(p[step.mix], vec![c, c, 1]);
                h = g.conv1d(h, w3, None, 1, 0);
                let lad = g.log_abs_det(p[step.mix]);
                let lad = g.scale(lad, t as f64);
                terms.push(expand_batch(g, lad, b));

                // affine coupling
                let cp = &step.coupling;
                let change = c - cp.keep;
                let xa = slice_channels(g, h, 0, cp.keep);
                let xb = slice_channels(g, h, cp.keep, change);
                let (log_s, shift) = self.coupling_params(g, p, cp, xa, change);
                let es = g.exp(log_s);
                let yb = g.mul(xb, es);
                let yb = g.add(yb, shift);
                h = g.concat_channels(&[xa, yb]);
                terms.push(g.row_sum(log_s));
            }
            if level.split > 0 {
                let keep = level.channels - level.split;
                z.push(slice_channels(g, h, keep, level.split));
                h = slice_channels(g, h, 0, keep);
            }
        }
        z.push(h);
        let mut log_det = terms[0];
        for t in &terms[1..] {
            log_det = g.add(log_det, *t);
        }
        FlowOutput { z, log_det }
    }

    fn coupling_params(&self, g: &mut Graph, p: &[Var], cp: &Coupling, xa: Var, change: usize) -> (Var, Var) {
        let mut a = xa;
        for conv in &cp.hidden {
            a = conv.forward(g, p, a);
            a = activate(g, self.act, a);
        }
        let st = cp.out.forward(g, p, a);
        let raw = slice_channels(g, st, 0, change);
        let shift = slice_channels(g, st, change, change);
        let bounded = g.tanh(raw);
        (g.scale(bounded, MAX_LOG_SCALE), shift)
    }

    /// Per-sample `log p(x)` under a standard-normal base distribution.
    pub fn log_prob(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let out = self.forward(g, p, x);
        let mut total = out.log_det;
        for z in out.z {
            let sq = g.square(z);
            let s = g.row_sum(sq);
            let s = g.scale(s, -0.5);
            total = g.add(total, s);
        }
        g.offset(total, -0.5 * self.dims as f64 * libm::log(2.0 * core::f64::consts::PI))
    }

    /// Reconstructs inputs from the latent pieces produced by [`Glow1d::forward`].
    pub fn inverse(&self, store: &ParamStore, z: &[Tensor]) -> Tensor {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let mut pieces: Vec<Var> = z.iter().map(|t| g.input(t.clone())).collect();
        let mut h = pieces.pop().expect("at least one latent piece");
        let b = g.shape(h)[0];
        for level in self.levels.iter().rev() {
            if level.split > 0 {
                let zl = pieces.pop().expect("latent piece per split");
                h = g.concat_channels(&[h, zl]);
            }
            let (c, t) = (level.channels, level.length);
            for step in level.steps.iter().rev() {
                let cp = &step.coupling;
                let change = c - cp.keep;
                let ya = slice_channels(&mut g, h, 0, cp.keep);
                let yb = slice_channels(&mut g, h, cp.keep, change);
                let (log_s, shift) = self.coupling_params(&mut g, &p, cp, ya, change);
                let diff = g.sub(yb, shift);
                let neg = g.scale(log_s, -1.0);
                let inv = g.exp(neg);
                let xb = g.mul(diff, inv);
                h = g.concat_channels(&[ya, xb]);

                let w = &store.tensors[step.mix].data;
                let winv = linalg::inverse(w, c).expect("invertible 1x1 convolution");
                let winv = g.input(Tensor::new(vec![c, c, 1], winv));
                h = g.conv1d(h, winv, None, 1, 0);

                let inv_scale: Vec<f64> = store.tensors[step.an_logs]
                    .data
                    .iter()
                    .map(|l| libm::exp(-l))
                    .collect();
                let inv_scale = g.input(Tensor::new(vec![c], inv_scale));
                let es = expand_channels(&mut g, inv_scale, b, t);
                let neg_bias = g.scale(p[step.an_bias], -1.0);
                let eb = expand_channels(&mut g, neg_bias, b, t);
                let scaled = g.mul(h, es);
                h = g.add(scaled, eb);
            }
            h = unsqueeze(&mut g, h, self.squeeze);
        }
        g.tensor(h)
    }
}

fn channel_stats(v: &[f64], b: usize, c: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    let n = (b * t) as f64;
    for ci in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            s += v[(bi * c + ci) * t..(bi * c + ci + 1) * t].iter().sum::<f64>();
        }
        let m = s / n;
        let mut ss = 0.0;
        for bi in 0..b {
            ss += v[(bi * c + ci) * t..(bi * c + ci + 1) * t]
                .iter()
                .map(|x| (x - m) * (x - m))
                .sum::<f64>();
        }
        mean[ci] = m;
        std[ci] = libm::sqrt(ss / n);
    }
    (mean, std)
}

/// `[B, C, T] -> [B, C*q, T/q]`, `out[b, c*q + j, t] = in[b, c, t*q + j]`.
pub fn squeeze(g: &mut Graph, x: Var, q: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (b, c, t) = (s[0], s[1], s[2]);
    let to = t / q;
    let mut idx = Vec::with_capacity(b * c * t);
    for bi in 0..b {
        for ci in 0..c {
            for j in 0..q {
                for k in 0..to {
                    idx.push((bi * c + ci) * t + k * q + j);
                }
            }
        }
    }
    g.map(x, Rc::new(SparseMap::gather(b * c * t, vec![b, c * q, to], idx)))
}

pub fn unsqueeze(g: &mut Graph, x: Var, q: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (b, cq, to) = (s[0], s[1], s[2]);
    let c = cq / q;
    let t = to * q;
    let mut idx = Vec::with_capacity(b * cq * to);
    for bi in 0..b {
        for ci in 0..c {
            for k in 0..t {
                let (kk, j) = (k / q, k % q);
                idx.push((bi * cq + ci * q + j) * to + kk);
            }
        }
    }
    g.map(x, Rc::new(SparseMap::gather(b * cq * to, vec![b, c, t], idx)))
}
