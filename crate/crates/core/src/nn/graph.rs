//! Reverse-mode automatic differentiation over a flat tape.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! node is created, and [`Graph::backward`] walks the tape in reverse to
//! accumulate gradients. Parameters enter the tape through [`Graph::param`]
//! and keep their index into the owning [`ParamStore`](super::ParamStore), so
//! gradients can be routed back without any name lookups.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant linear map `out[r] = sum_k w_k * in[c_k]` stored as CSR rows.
///
/// Gathers, transposes, nearest upsampling, pooling and overlap-add folds are
/// all expressed with it.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub in_len: usize,
    pub out_shape: Vec<usize>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    weights: Option<Vec<f64>>,
}

impl SparseMap {
    /// Pure gather: `out[i] = in[index[i]]`.
    pub fn gather(in_len: usize, out_shape: Vec<usize>, index: Vec<usize>) -> Self {
        debug_assert_eq!(out_shape.iter().product::<usize>(), index.len());
        debug_assert!(index.iter().all(|&i| i < in_len));
        let row_start = (0..=index.len()).collect();
        Self {
            in_len,
            out_shape,
            row_start,
            cols: index,
            weights: None,
        }
    }

    /// Weighted rows, one `Vec<(col, weight)>` per output element.
    pub fn weighted(in_len: usize, out_shape: Vec<usize>, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert_eq!(out_shape.iter().product::<usize>(), rows.len());
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_start.push(0);
        for row in rows {
            for (c, w) in row {
                debug_assert!(c < in_len);
                cols.push(c);
                weights.push(w);
            }
            row_start.push(cols.len());
        }
        Self {
            in_len,
            out_shape,
            row_start,
            cols,
            weights: Some(weights),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.row_start.len() - 1;
        let mut out = vec![0.0; n];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_start[r]..self.row_start[r + 1] {
                let w = self.weights.as_ref().map_or(1.0, |w| w[k]);
                acc += w * x[self.cols[k]];
            }
            *o = acc;
        }
        out
    }

    fn apply_transpose(&self, dy: &[f64], dx: &mut [f64]) {
        for (r, g) in dy.iter().enumerate() {
            for k in self.row_start[r]..self.row_start[r + 1] {
                let w = self.weights.as_ref().map_or(1.0, |w| w[k]);
                dx[self.cols[k]] += w * g;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softplus(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Map(Var, Rc<SparseMap>),
    Concat1(Vec<Var>),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    RowSum(Var),
    Reshape(Var),
    LogAbsDet(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Input)
    }

    pub fn constant(&mut self, shape: Vec<usize>, fill: f64) -> Var {
        let n = numel(&shape);
        self.push(shape, vec![fill; n], Op::Input)
    }

    /// Leaf bound to parameter `index` of a parameter store.
    pub fn param(&mut self, index: usize, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Param(index))
    }

    pub fn param_index(&self, v: Var) -> Option<usize> {
        match self.nodes[v.0].op {
            Op::Param(i) => Some(i),
            _ => None,
        }
    }

    fn same_shape(&self, a: Var, b: Var) {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "elementwise operands differ in shape"
        );
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        self.same_shape(a, b);
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(self.nodes[a.0].shape.clone(), value, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(self.nodes[a.0].shape.clone(), value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, libm::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, libm::exp, Op::Exp(a))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// 1-D convolution of `x: [B, Cin, T]` with `w: [Cout, Cin, K]`, zero padding `pad`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        assert_eq!(xs.len(), 3, "conv1d input must be [B, C, T]");
        assert_eq!(ws.len(), 3, "conv1d weight must be [Cout, Cin, K]");
        let (bn, cin, t) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(cin, wcin, "conv1d channel mismatch");
        assert!(t + 2 * pad >= k, "conv1d kernel wider than padded input");
        let tout = (t + 2 * pad - k) / stride + 1;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![0.0; bn * cout * tout];
        for bi in 0..bn {
            for co in 0..cout {
                let o = &mut out[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                if let Some(bv) = b {
                    let bias = self.nodes[bv.0].value[co];
                    o.iter_mut().for_each(|v| *v = bias);
                }
                for ci in 0..cin {
                    let xrow = &xv[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                    for kk in 0..k {
                        let wk = wv[(co * cin + ci) * k + kk];
                        if wk == 0.0 {
                            continue;
                        }
                        let (lo, hi) = conv_range(t, tout, stride, pad, kk);
                        if stride == 1 {
                            let off = lo + kk - pad;
                            for (ov, xv) in o[lo..hi].iter_mut().zip(&xrow[off..off + hi - lo]) {
                                *ov += wk * xv;
                            }
                        } else {
                            for (oi, ov) in o.iter_mut().enumerate().take(hi).skip(lo) {
                                *ov += wk * xrow[oi * stride + kk - pad];
                            }
                        }
                    }
                }
            }
        }
        self.push(
            vec![bn, cout, tout],
            out,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Dense layer over the last axis: `x: [.., In]`, `w: [Out, In]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.nodes[x.0].shape.clone();
        let ws = &self.nodes[w.0].shape;
        let (dout, din) = (ws[0], ws[1]);
        assert_eq!(*xs.last().unwrap(), din, "linear input width mismatch");
        let rows = numel(&xs) / din;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![0.0; rows * dout];
        for r in 0..rows {
            let xr = &xv[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &wv[o * din..(o + 1) * din];
                let mut acc = match b {
                    Some(bv) => self.nodes[bv.0].value[o],
                    None => 0.0,
                };
                acc += xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                out[r * dout + o] = acc;
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        self.push(shape, out, Op::Linear { x, w, b })
    }

    pub fn map(&mut self, x: Var, m: Rc<SparseMap>) -> Var {
        assert_eq!(self.nodes[x.0].value.len(), m.in_len, "sparse map input size");
        let out = m.apply(&self.nodes[x.0].value);
        self.push(m.out_shape.clone(), out, Op::Map(x, m))
    }

    /// Concatenates `[B, Ci, T]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let first = self.nodes[parts[0].0].shape.clone();
        let (bn, t) = (first[0], first[2]);
        let total: usize = parts
            .iter()
            .map(|p| {
                let s = &self.nodes[p.0].shape;
                assert!(s[0] == bn && s[2] == t, "concat shape mismatch");
                s[1]
            })
            .sum();
        let mut out = Vec::with_capacity(bn * total * t);
        for bi in 0..bn {
            for p in parts {
                let c = self.nodes[p.0].shape[1];
                out.extend_from_slice(&self.nodes[p.0].value[bi * c * t..(bi + 1) * c * t]);
            }
        }
        self.push(vec![bn, total, t], out, Op::Concat1(parts.to_vec()))
    }

    /// Batched matrix product `[G, M, K] x [G, K, N]`, or `x [G, N, K]^T`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Var {
        let as_ = &self.nodes[a.0].shape;
        let bs = &self.nodes[b.0].shape;
        let (g, m, k) = (as_[0], as_[1], as_[2]);
        let n = if transpose_b { bs[1] } else { bs[2] };
        assert_eq!(bs[0], g);
        assert_eq!(if transpose_b { bs[2] } else { bs[1] }, k, "matmul inner dim");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            let ab = &av[gi * m * k..(gi + 1) * m * k];
            let bb = &bv[gi * k * n..(gi + 1) * k * n];
            let ob = &mut out[gi * m * n..(gi + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for l in 0..k {
                        let bval = if transpose_b { bb[j * k + l] } else { bb[l * n + j] };
                        acc += ab[i * k + l] * bval;
                    }
                    ob[i * n + j] = acc;
                }
            }
        }
        self.push(vec![g, m, n], out, Op::BatchMatMul { a, b, transpose_b })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().unwrap();
        let mut out = self.nodes[x.0].value.clone();
        for row in out.chunks_mut(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - m);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(shape, out, Op::Softmax(x))
    }

    /// Layer normalisation over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().unwrap();
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gain.0].value;
        let bv = &self.nodes[bias.0].value;
        let rows = xv.len() / d;
        let mut out = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = is;
            for j in 0..d {
                out[r * d + j] = (row[j] - mu) * is * gv[j] + bv[j];
            }
        }
        self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                inv_std,
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums all axes but the first: `[N, ...] -> [N]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let shape = &self.nodes[x.0].shape;
        let n = shape[0];
        let d = numel(&shape[1..]);
        let out = self.nodes[x.0]
            .value
            .chunks(d)
            .map(|c| c.iter().sum())
            .collect();
        self.push(vec![n], out, Op::RowSum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        assert_eq!(numel(&shape), self.nodes[x.0].value.len(), "reshape size");
        let v = self.nodes[x.0].value.clone();
        self.push(shape, v, Op::Reshape(x))
    }

    /// `log |det W|` of a square matrix.
    pub fn log_abs_det(&mut self, w: Var) -> Var {
        let s = &self.nodes[w.0].shape;
        assert!(s.len() == 2 && s[0] == s[1], "log_abs_det needs a square matrix");
        let n = s[0];
        let wv = &self.nodes[w.0].value;
        let lad = crate::linalg::log_abs_det(wv, n);
        let inv_t = crate::linalg::inverse(wv, n)
            .map(|inv| crate::linalg::transpose(&inv, n))
            .unwrap_or_else(|| vec![f64::NAN; n * n]);
        self.push(vec![1], vec![lad], Op::LogAbsDet(w, inv_t))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                accumulate(grads, self, *a, |g| add_into(g, gy));
                accumulate(grads, self, *b, |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                accumulate(grads, self, *a, |g| add_into(g, gy));
                accumulate(grads, self, *b, |g| {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                accumulate(grads, self, *a, |g| {
                    for ((g, d), y) in g.iter_mut().zip(gy).zip(bv) {
                        *g += d * y;
                    }
                });
                accumulate(grads, self, *b, |g| {
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(av) {
                        *g += d * x;
                    }
                });
            }
            Op::Scale(a, s) => accumulate(grads, self, *a, |g| {
                g.iter_mut().zip(gy).for_each(|(g, d)| *g += s * d)
            }),
            Op::Offset(a) | Op::Reshape(a) => accumulate(grads, self, *a, |g| add_into(g, gy)),
            Op::Relu(a) => {
                let av = val(*a);
                accumulate(grads, self, *a, |g| {
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(av) {
                        if *x > 0.0 {
                            *g += d;
                        }
                    }
                })
            }
            Op::LeakyRelu(a, slope) => {
                let av = val(*a);
                accumulate(grads, self, *a, |g| {
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(av) {
                        *g += if *x > 0.0 { *d } else { slope * d };
                    }
                })
            }
            Op::Tanh(a) => accumulate(grads, self, *a, |g| {
                for ((g, d), y) in g.iter_mut().zip(gy).zip(&node.value) {
                    *g += d * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => accumulate(grads, self, *a, |g| {
                for ((g, d), y) in g.iter_mut().zip(gy).zip(&node.value) {
                    *g += d * y * (1.0 - y);
                }
            }),
            Op::Exp(a) => accumulate(grads, self, *a, |g| {
                for ((g, d), y) in g.iter_mut().zip(gy).zip(&node.value) {
                    *g += d * y;
                }
            }),
            Op::Softplus(a) => {
                let av = val(*a);
                accumulate(grads, self, *a, |g| {
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(av) {
                        *g += d * sigmoid(*x);
                    }
                })
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            } => self.conv1d_backward(*x, *w, *b, *stride, *pad, &node.shape, gy, grads),
            Op::Linear { x, w, b } => {
                let ws = &self.nodes[w.0].shape;
                let (dout, din) = (ws[0], ws[1]);
                let xv = val(*x);
                let wv = val(*w);
                let rows = xv.len() / din;
                accumulate(grads, self, *x, |g| {
                    for r in 0..rows {
                        let gr = &mut g[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let d = gy[r * dout + o];
                            if d == 0.0 {
                                continue;
                            }
                            for (gi, wi) in gr.iter_mut().zip(&wv[o * din..(o + 1) * din]) {
                                *gi += d * wi;
                            }
                        }
                    }
                });
                accumulate(grads, self, *w, |g| {
                    for r in 0..rows {
                        let xr = &xv[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let d = gy[r * dout + o];
                            if d == 0.0 {
                                continue;
                            }
                            for (gi, xi) in g[o * din..(o + 1) * din].iter_mut().zip(xr) {
                                *gi += d * xi;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    accumulate(grads, self, *b, |g| {
                        for r in 0..rows {
                            for o in 0..dout {
                                g[o] += gy[r * dout + o];
                            }
                        }
                    });
                }
            }
            Op::Map(x, m) => accumulate(grads, self, *x, |g| m.apply_transpose(gy, g)),
            Op::Concat1(parts) => {
                let (bn, total, t) = (node.shape[0], node.shape[1], node.shape[2]);
                let mut offset = 0;
                for p in parts {
                    let c = self.nodes[p.0].shape[1];
                    accumulate(grads, self, *p, |g| {
                        for bi in 0..bn {
                            let src = &gy[(bi * total + offset) * t..(bi * total + offset + c) * t];
                            add_into(&mut g[bi * c * t..(bi + 1) * c * t], src);
                        }
                    });
                    offset += c;
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let as_ = &self.nodes[a.0].shape;
                let (gn, m, k) = (as_[0], as_[1], as_[2]);
                let n = node.shape[2];
                let (av, bv) = (val(*a), val(*b));
                let tb = *transpose_b;
                let bidx = |j: usize, l: usize| if tb { j * k + l } else { l * n + j };
                accumulate(grads, self, *a, |g| {
                    for gi in 0..gn {
                        for i in 0..m {
                            for l in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += gy[gi * m * n + i * n + j] * bv[gi * k * n + bidx(j, l)];
                                }
                                g[gi * m * k + i * k + l] += acc;
                            }
                        }
                    }
                });
                accumulate(grads, self, *b, |g| {
                    for gi in 0..gn {
                        for i in 0..m {
                            for j in 0..n {
                                let d = gy[gi * m * n + i * n + j];
                                if d == 0.0 {
                                    continue;
                                }
                                for l in 0..k {
                                    g[gi * k * n + bidx(j, l)] += d * av[gi * m * k + i * k + l];
                                }
                            }
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let d = *node.shape.last().unwrap();
                accumulate(grads, self, *x, |g| {
                    for ((gr, yr), dr) in g.chunks_mut(d).zip(node.value.chunks(d)).zip(gy.chunks(d)) {
                        let dot: f64 = yr.iter().zip(dr).map(|(y, d)| y * d).sum();
                        for ((gi, y), di) in gr.iter_mut().zip(yr).zip(dr) {
                            *gi += y * (di - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                inv_std,
            } => {
                let d = *node.shape.last().unwrap();
                let xv = val(*x);
                let gv = val(*gain);
                let rows = xv.len() / d;
                let mut xhat = vec![0.0; xv.len()];
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let mu = row.iter().sum::<f64>() / d as f64;
                    for j in 0..d {
                        xhat[r * d + j] = (row[j] - mu) * inv_std[r];
                    }
                }
                accumulate(grads, self, *gain, |g| {
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += gy[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                accumulate(grads, self, *bias, |g| {
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += gy[r * d + j];
                        }
                    }
                });
                accumulate(grads, self, *x, |g| {
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..d {
                            let dxh = gy[r * d + j] * gv[j];
                            mean_d += dxh;
                            mean_dx += dxh * xhat[r * d + j];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for j in 0..d {
                            let dxh = gy[r * d + j] * gv[j];
                            g[r * d + j] += inv_std[r] * (dxh - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                });
            }
            Op::Sum(x) => accumulate(grads, self, *x, |g| g.iter_mut().for_each(|v| *v += gy[0])),
            Op::RowSum(x) => {
                let n = node.shape[0];
                accumulate(grads, self, *x, |g| {
                    let d = g.len() / n;
                    for (r, chunk) in g.chunks_mut(d).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += gy[r]);
                    }
                })
            }
            Op::LogAbsDet(w, inv_t) => accumulate(grads, self, *w, |g| {
                for (gi, it) in g.iter_mut().zip(inv_t) {
                    *gi += gy[0] * it;
                }
            }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_shape: &[usize],
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        let (bn, cin, t) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let tout = out_shape[2];
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        accumulate(grads, self, x, |g| {
            for bi in 0..bn {
                for co in 0..cout {
                    let dy = &gy[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                    for ci in 0..cin {
                        let gx = &mut g[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                        for kk in 0..k {
                            let wk = wv[(co * cin + ci) * k + kk];
                            let (lo, hi) = conv_range(t, tout, stride, pad, kk);
                            for oi in lo..hi {
                                gx[oi * stride + kk - pad] += wk * dy[oi];
                            }
                        }
                    }
                }
            }
        });
        accumulate(grads, self, w, |g| {
            for bi in 0..bn {
                for co in 0..cout {
                    let dy = &gy[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                    for ci in 0..cin {
                        let xrow = &xv[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                        for kk in 0..k {
                            let (lo, hi) = conv_range(t, tout, stride, pad, kk);
                            let mut acc = 0.0;
                            for oi in lo..hi {
                                acc += dy[oi] * xrow[oi * stride + kk - pad];
                            }
                            g[(co * cin + ci) * k + kk] += acc;
                        }
                    }
                }
            }
        });
        if let Some(b) = b {
            accumulate(grads, self, b, |g| {
                for bi in 0..bn {
                    for co in 0..cout {
                        g[co] += gy[(bi * cout + co) * tout..(bi * cout + co + 1) * tout]
                            .iter()
                            .sum::<f64>();
                    }
                }
            });
        }
    }
}

/// Output indices `lo..hi` whose tap `kk` lands inside the unpadded input.
fn conv_range(t: usize, tout: usize, stride: usize, pad: usize, kk: usize) -> (usize, usize) {
    // need pad <= o*stride + kk < t + pad
    let lo = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    let hi = if t + pad > kk {
        ((t + pad - kk - 1) / stride + 1).min(tout)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn accumulate(grads: &mut [Option<Vec<f64>>], g: &Graph, v: Var, f: impl FnOnce(&mut [f64])) {
    let slot = &mut grads[v.0];
    let buf = slot.get_or_insert_with(|| vec![0.0; g.nodes[v.0].value.len()]);
    f(buf);
}

fn add_into(g: &mut [f64], d: &[f64]) {
    g.iter_mut().zip(d).for_each(|(g, d)| *g += d);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Graph, Var) -> Var, x0: Tensor) {
        let mut g = Graph::new();
        let x = g.param(0, &x0);
        let y = build(&mut g, x);
        let grads = g.backward(y);
        let analytic = grads.get(x).unwrap().to_vec();
        let h = 1e-6;
        for i in 0..x0.numel() {
            let mut xp = x0.clone();
            xp.data[i] += h;
            let mut xm = x0.clone();
            xm.data[i] -= h;
            let mut gp = Graph::new();
            let v = gp.param(0, &xp);
            let yp = build(&mut gp, v);
            let mut gm = Graph::new();
            let v = gm.param(0, &xm);
            let ym = build(&mut gm, v);
            let fd = (gp.scalar(yp) - gm.scalar(ym)) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                "grad {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    fn ramp(shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| libm::sin(i as f64 * 1.7 + 0.3) * 0.8).collect();
        Tensor::new(shape, data)
    }

    #[test]
    fn conv1d_matches_hand_computation() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.input(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]));
        let y = g.conv1d(x, w, None, 1, 1);
        // padded input 0 1 2 3 4 0
        assert_eq!(g.value(y), &[-2.0, -2.0, -2.0, 3.0]);
        let y2 = g.conv1d(x, w, None, 2, 1);
        assert_eq!(g.value(y2), &[-2.0, -2.0]);
    }

    #[test]
    fn conv1d_gradients() {
        let w0 = ramp(vec![3, 2, 5]);
        fd_check(
            |g, x| {
                let w = g.input(w0.clone());
                let y = g.conv1d(x, w, None, 2, 2);
                let y2 = g.square(y);
                g.sum(y2)
            },
            ramp(vec![2, 2, 9]),
        );
        let x0 = ramp(vec![2, 2, 8]);
        fd_check(
            |g, w| {
                let x = g.input(x0.clone());
                let y = g.conv1d(x, w, None, 1, 1);
                let y2 = g.square(y);
                g.sum(y2)
            },
            ramp(vec![3, 2, 3]),
        );
    }

    #[test]
    fn linear_softmax_layernorm_gradients() {
        let w0 = ramp(vec![4, 3]);
        fd_check(
            |g, x| {
                let w = g.input(w0.clone());
                let y = g.linear(x, w, None);
                let s = g.softmax(y);
                let t = g.input(ramp(vec![2, 4]));
                let p = g.mul(s, t);
                g.sum(p)
            },
            ramp(vec![2, 3]),
        );
        fd_check(
            |g, x| {
                let gain = g.input(Tensor::new(vec![3], vec![1.0, 0.5, -2.0]));
                let bias = g.input(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]));
                let y = g.layer_norm(x, gain, bias, 1e-5);
                let t = g.input(ramp(vec![2, 3]));
                let p = g.mul(y, t);
                g.sum(p)
            },
            ramp(vec![2, 3]),
        );
    }

    #[test]
    fn matmul_and_det_gradients() {
        let b0 = ramp(vec![2, 3, 2]);
        fd_check(
            |g, a| {
                let b = g.input(b0.clone());
                let y = g.batch_matmul(a, b, true);
                let y2 = g.square(y);
                g.sum(y2)
            },
            ramp(vec![2, 2, 2]),
        );
        fd_check(
            |g, w| g.log_abs_det(w),
            Tensor::new(vec![3, 3], vec![2.0, 0.3, 0.1, -0.4, 1.5, 0.2, 0.3, 0.1, -1.2]),
        );
    }

    #[test]
    fn elementwise_gradients() {
        fd_check(
            |g, x| {
                let a = g.tanh(x);
                let b = g.sigmoid(x);
                let c = g.softplus(x);
                let d = g.exp(x);
                let e = g.leaky_relu(x, 0.1);
                let ab = g.mul(a, b);
                let cd = g.add(c, d);
                let s = g.sub(ab, cd);
                let s = g.add(s, e);
                let r = g.row_sum(s);
                let r2 = g.square(r);
                g.sum(r2)
            },
            ramp(vec![2, 5]),
        );
    }

    #[test]
    fn concat_and_map_gradients() {
        fd_check(
            |g, x| {
                let y = g.input(ramp(vec![2, 1, 3]));
                let c = g.concat_channels(&[x, y, x]);
                let m = Rc::new(SparseMap::gather(
                    12 + 6,
                    vec![3, 2],
                    alloc::vec![0, 5, 5, 17, 3, 9],
                ));
                let p = g.map(c, m);
                let p2 = g.square(p);
                g.sum(p2)
            },
            ramp(vec![2, 1, 3]),
        );
    }

    #[test]
    fn conv_range_covers_valid_taps() {
        for t in 1..12 {
            for k in 1..6 {
                for stride in 1..4 {
                    for pad in 0..4 {
                        if t + 2 * pad < k {
                            continue;
                        }
                        let tout = (t + 2 * pad - k) / stride + 1;
                        for kk in 0..k {
                            let (lo, hi) = conv_range(t, tout, stride, pad, kk);
                            for o in 0..tout {
                                let pos = (o * stride + kk) as isize - pad as isize;
                                let valid = pos >= 0 && (pos as usize) < t;
                                assert_eq!(valid, o >= lo && o < hi, "t{t} k{k} s{stride} p{pad}");
                            }
                        }
                    }
                }
            }
        }
    }
}
