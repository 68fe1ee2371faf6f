//! Tape-based reverse-mode differentiation over rank-2 tensors.

use std::sync::Arc;

use super::sparse::SparseRows;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Negative-side slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Half-open row ranges that partition the rows of a tensor.
pub type Segments = Arc<Vec<(usize, usize)>>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<SparseRows>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Concat(Vec<Var>, usize),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var, usize),
    Transpose(Var),
    Slice { x: Var, axis: usize, start: usize },
    GatherRows(Var, Arc<Vec<usize>>),
    SegmentMean(Var, Segments),
    GraphAttention {
        h: Var,
        a: Var,
        heads: usize,
        segments: Segments,
        cache: Box<AttentionCache>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Bce {
        p: Var,
        labels: Vec<f64>,
        pos_weight: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn axis_err(op: &'static str, t: &Tensor, axis: usize) -> Error {
    Error::Shape {
        op,
        left: t.shape().to_vec(),
        right: vec![axis],
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_rank2(t: &Tensor) -> Result<()> {
        t.dims2("leaf").map(|_| ())
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        Self::check_rank2(&value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        Self::check_rank2(&value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Saved attention weights when `v` is a graph-attention node.
    pub fn attention_cache(&self, v: Var) -> Option<&AttentionCache> {
        match &self.nodes[v.0].op {
            Op::GraphAttention { cache, .. } => Some(cache),
            _ => None,
        }
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Product of a constant sparse matrix and `w`.
    pub fn sparse_matmul(&mut self, x: Arc<SparseRows>, w: Var) -> Result<Var> {
        let tw = self.value(w);
        let (k, n) = tw.dims2("sparse_matmul")?;
        if x.cols() != k {
            return Err(Error::Shape {
                op: "sparse_matmul",
                left: vec![x.rows(), x.cols()],
                right: tw.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; x.rows() * n];
        x.matmul_into(tw.data(), n, &mut out);
        let value = Tensor::matrix(x.rows(), n, out)?;
        let rg = self.needs(&[w]);
        Ok(self.push(value, Op::SparseMatMul(x, w), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Adds the `1×c` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (r, c) = ta.dims2("add_bias")?;
        if tb.shape() != [1, c] {
            return Err(shape_err("add_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for i in 0..r {
            for (x, b) in data[i * c..(i + 1) * c].iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let rg = self.needs(&[a, bias]);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddBias(a, bias), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (mut r, mut c) = self.value(*first).dims2("concat")?;
        for p in &parts[1..] {
            let t = self.value(*p);
            let (pr, pc) = t.dims2("concat")?;
            match axis {
                0 if pc == c => r += pr,
                1 if pr == r => c += pc,
                0 | 1 => return Err(shape_err("concat", self.value(*first), t)),
                _ => return Err(axis_err("concat", t, axis)),
            }
        }
        let mut data = Vec::with_capacity(r * c);
        if axis == 0 {
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
        } else {
            for i in 0..r {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row_slice(i));
                }
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("reduce")?;
        let value = match axis {
            None => {
                let s = t.sum();
                Tensor::scalar(if mean { s / (r * c) as f64 } else { s })
            }
            Some(0) => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, x) in out.iter_mut().zip(t.row_slice(i)) {
                        *o += x;
                    }
                }
                if mean {
                    out.iter_mut().for_each(|o| *o /= r as f64);
                }
                Tensor::row(out)
            }
            Some(1) => {
                let out = (0..r)
                    .map(|i| {
                        let s: f64 = t.row_slice(i).iter().sum();
                        if mean {
                            s / c as f64
                        } else {
                            s
                        }
                    })
                    .collect();
                Tensor::matrix(r, 1, out)?
            }
            Some(ax) => return Err(axis_err("reduce", t, ax)),
        };
        let rg = self.needs(&[a]);
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        Ok(self.push(value, op, rg))
    }

    /// Sum over `axis`, or over everything when `None` (giving `1×1`).
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("softmax")?;
        let mut data = t.data().to_vec();
        match axis {
            1 => (0..r).for_each(|i| softmax_strided(&mut data, i * c, 1, c)),
            0 => (0..c).for_each(|j| softmax_strided(&mut data, j, c, r)),
            _ => return Err(axis_err("softmax", t, axis)),
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Softmax(a, axis), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("slice")?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(axis_err("slice", t, axis)),
        };
        if start + len > extent || len == 0 {
            return Err(Error::Shape {
                op: "slice",
                left: t.shape().to_vec(),
                right: vec![axis, start, len],
            });
        }
        let value = if axis == 0 {
            Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec())?
        } else {
            let mut d = Vec::with_capacity(r * len);
            for i in 0..r {
                d.extend_from_slice(&t.row_slice(i)[start..start + len]);
            }
            Tensor::matrix(r, len, d)?
        };
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Slice { x: a, axis, start }, rg))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("gather_rows")?;
        let mut d = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= r {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: t.shape().to_vec(),
                    right: vec![i],
                });
            }
            d.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(index.len(), c, d)?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::GatherRows(a, index), rg))
    }

    /// Mean of each row segment, one output row per segment.
    pub fn segment_mean(&mut self, a: Var, segments: Segments) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("segment_mean")?;
        check_segments(&segments, r)?;
        let mut d = vec![0.0; segments.len() * c];
        for (s, &(lo, hi)) in segments.iter().enumerate() {
            let out = &mut d[s * c..(s + 1) * c];
            for i in lo..hi {
                for (o, x) in out.iter_mut().zip(t.row_slice(i)) {
                    *o += x;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::matrix(segments.len(), c, d)?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SegmentMean(a, segments), rg))
    }

    /// Multi-head graph attention over complete graphs with self loops.
    ///
    /// `h` holds projected node features (`R × heads·n`), one row per node;
    /// each segment of rows is one graph. Row `k` of `a` (`heads × 2n`) is the
    /// attention vector of head `k`. Output row `i`, head block `k`, is
    /// `Σ_j α_ij h_j` with `α_i· = softmax_j LeakyReLU(a_k · [h_i ‖ h_j])`.
    pub fn graph_attention(&mut self, h: Var, a: Var, heads: usize, segments: Segments) -> Result<Var> {
        let (out, cache) = attention_forward(self.value(h), self.value(a), heads, &segments)?;
        let rg = self.needs(&[h, a]);
        Ok(self.push(
            out,
            Op::GraphAttention {
                h,
                a,
                heads,
                segments,
                cache: Box::new(cache),
            },
            rg,
        ))
    }

    /// Row-wise layer normalization with learned `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2("layer_norm")?;
        for p in [gain, bias] {
            if self.value(p).shape() != [1, c] {
                return Err(shape_err("layer_norm", t, self.value(p)));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = t.row_slice(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let xh = (row[j] - mu) * inv;
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * g[j] + b[j];
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            Tensor::matrix(r, c, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: Tensor::matrix(r, c, xhat)?,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 `labels`.
    ///
    /// Probabilities are clamped to `[1e-7, 1 − 1e-7]`; positives carry
    /// weight `pos_weight`. The mean is over samples.
    pub fn bce(&mut self, p: Var, labels: &[f64], pos_weight: f64) -> Result<Var> {
        let t = self.value(p);
        if t.len() != labels.len() || labels.is_empty() {
            return Err(Error::Shape {
                op: "bce",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let loss = bce_value(t.data(), labels, pos_weight);
        let rg = self.needs(&[p]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                labels: labels.to_vec(),
                pos_weight,
            },
            rg,
        ))
    }

    /// Accumulates gradients of the scalar `loss` into every node that
    /// depends on a parameter.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: lt.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads)?;
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2("matmul")?;
                let n = tb.cols();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g.data(), tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(ta.data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::SparseMatMul(x, w) => {
                let (k, n) = self.value(*w).dims2("sparse_matmul")?;
                let mut dw = vec![0.0; k * n];
                x.t_matmul_into(g.data(), n, &mut dw);
                self.accumulate(grads, *w, Tensor::matrix(k, n, dw)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = zip(g, tb, |x, y| x * y);
                let gb = zip(g, ta, |x, y| x * y);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let (r, c) = g.dims2("add_bias")?;
                let mut db = vec![0.0; c];
                for i in 0..r {
                    for (o, x) in db.iter_mut().zip(g.row_slice(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *b, Tensor::row(db));
            }
            Op::Concat(parts, axis) => {
                let c = g.cols();
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.value(*p).dims2("concat")?;
                    let part = if *axis == 0 {
                        Tensor::matrix(pr, pc, g.data()[offset * c..(offset + pr) * c].to_vec())?
                    } else {
                        let mut d = Vec::with_capacity(pr * pc);
                        for i in 0..pr {
                            d.extend_from_slice(&g.row_slice(i)[offset..offset + pc]);
                        }
                        Tensor::matrix(pr, pc, d)?
                    };
                    offset += if *axis == 0 { pr } else { pc };
                    self.accumulate(grads, *p, part);
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let t = self.value(*a);
                let (r, c) = t.dims2("reduce")?;
                let is_mean = matches!(node.op, Op::Mean(..));
                let count = match axis {
                    None => r * c,
                    Some(0) => r,
                    _ => c,
                } as f64;
                let k = if is_mean { 1.0 / count } else { 1.0 };
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let gv = match axis {
                            None => g.data()[0],
                            Some(0) => g.data()[j],
                            _ => g.data()[i],
                        };
                        d[i * c + j] = gv * k;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, d)?);
            }
            Op::Relu(a) => {
                let ga = zip(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let ga = zip(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { slope * gv });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip(g, y, |gv, s| gv * s * (1.0 - s))),
            Op::Log(a) => self.accumulate(grads, *a, zip(g, self.value(*a), |gv, x| gv / x)),
            Op::Softmax(a, axis) => {
                let (r, c) = y.dims2("softmax")?;
                let mut d = vec![0.0; r * c];
                let (groups, len, stride, step) = if *axis == 1 { (r, c, 1, c) } else { (c, r, c, 1) };
                for gi in 0..groups {
                    let base = gi * step;
                    let dot: f64 = (0..len)
                        .map(|k| g.data()[base + k * stride] * y.data()[base + k * stride])
                        .sum();
                    for k in 0..len {
                        let idx = base + k * stride;
                        d[idx] = y.data()[idx] * (g.data()[idx] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, d)?);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Slice { x, axis, start } => {
                let t = self.value(*x);
                let (r, c) = t.dims2("slice")?;
                let mut d = vec![0.0; r * c];
                let (gr, gc) = g.dims2("slice")?;
                for i in 0..gr {
                    for j in 0..gc {
                        let (ti, tj) = if *axis == 0 { (i + start, j) } else { (i, j + start) };
                        d[ti * c + tj] = g.at(i, j);
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, d)?);
            }
            Op::GatherRows(a, index) => {
                let (r, c) = self.value(*a).dims2("gather_rows")?;
                let mut d = vec![0.0; r * c];
                for (k, &i) in index.iter().enumerate() {
                    for (o, x) in d[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, d)?);
            }
            Op::SegmentMean(a, segments) => {
                let (r, c) = self.value(*a).dims2("segment_mean")?;
                let mut d = vec![0.0; r * c];
                for (s, &(lo, hi)) in segments.iter().enumerate() {
                    let inv = 1.0 / (hi - lo) as f64;
                    for i in lo..hi {
                        for (o, x) in d[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(s)) {
                            *o = x * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, d)?);
            }
            Op::GraphAttention {
                h,
                a,
                heads,
                segments,
                cache,
            } => {
                let (dh, da) = attention_backward(self.value(*h), self.value(*a), *heads, segments, cache, g)?;
                self.accumulate(grads, *h, dh);
                self.accumulate(grads, *a, da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = g.dims2("layer_norm")?;
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let gr = g.row_slice(i);
                    let xr = xhat.row_slice(i);
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        dg[j] += gr[j] * xr[j];
                        db[j] += gr[j];
                        let dxh = gr[j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xr[j];
                    }
                    let k = inv_std[i] / c as f64;
                    for j in 0..c {
                        let dxh = gr[j] * gv[j];
                        dx[i * c + j] = k * (c as f64 * dxh - s1 - xr[j] * s2);
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, dx)?);
                self.accumulate(grads, *gain, Tensor::row(dg));
                self.accumulate(grads, *bias, Tensor::row(db));
            }
            Op::Bce { p, labels, pos_weight } => {
                let t = self.value(*p);
                let n = labels.len() as f64;
                let scale = g.data()[0] / n;
                let d = t
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&pv, &yv)| {
                        if pv < PROB_CLAMP || pv > 1.0 - PROB_CLAMP {
                            0.0
                        } else {
                            scale * (-pos_weight * yv / pv + (1.0 - yv) / (1.0 - pv))
                        }
                    })
                    .collect();
                self.accumulate(grads, *p, Tensor::new(t.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_strided(data: &mut [f64], base: usize, stride: usize, len: usize) {
    let mut max = f64::NEG_INFINITY;
    for k in 0..len {
        max = max.max(data[base + k * stride]);
    }
    let mut total = 0.0;
    for k in 0..len {
        let e = (data[base + k * stride] - max).exp();
        data[base + k * stride] = e;
        total += e;
    }
    for k in 0..len {
        data[base + k * stride] /= total;
    }
}

/// In-place max-shifted softmax of a slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let len = v.len();
    softmax_strided(v, 0, 1, len);
}

pub fn bce_value(p: &[f64], labels: &[f64], pos_weight: f64) -> f64 {
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(&pv, &y)| {
            let pc = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(pos_weight * y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
        })
        .sum();
    total / labels.len() as f64
}

fn check_segments(segments: &[(usize, usize)], rows: usize) -> Result<()> {
    let mut next = 0;
    for &(lo, hi) in segments {
        if lo != next || hi <= lo {
            return Err(Error::invalid(format!(
                "segments must be nonempty and tile 0..{rows} in order, got ({lo}, {hi}) after {next}"
            )));
        }
        next = hi;
    }
    if next != rows {
        return Err(Error::invalid(format!("segments cover {next} of {rows} rows")));
    }
    Ok(())
}

/// Saved forward quantities of a graph-attention node.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// Per segment, `heads` row-major `m×m` attention matrices.
    pub alpha: Vec<f64>,
    /// Start of each segment's block in `alpha`.
    pub offsets: Vec<usize>,
    /// Pre-activation logits `s_src[i] + s_dst[j]`, laid out like `alpha`.
    logits: Vec<f64>,
}

impl AttentionCache {
    /// Attention matrix of `head` in segment `seg`, row-major `m×m`.
    pub fn alpha_block(&self, seg: usize, head: usize, m: usize) -> &[f64] {
        let base = self.offsets[seg] + head * m * m;
        &self.alpha[base..base + m * m]
    }
}

/// Forward kernel of [`Graph::graph_attention`]; also used for inspection.
pub fn attention_forward(
    h: &Tensor,
    a: &Tensor,
    heads: usize,
    segments: &[(usize, usize)],
) -> Result<(Tensor, AttentionCache)> {
    let (r, width) = h.dims2("graph_attention")?;
    let (ar, ac) = a.dims2("graph_attention")?;
    if heads == 0 || width % heads != 0 || ar != heads || ac != 2 * (width / heads) {
        return Err(shape_err("graph_attention", h, a));
    }
    check_segments(segments, r)?;
    let n = width / heads;
    let mut out = vec![0.0; r * width];
    let mut offsets = Vec::with_capacity(segments.len());
    let total: usize = segments.iter().map(|(lo, hi)| heads * (hi - lo) * (hi - lo)).sum();
    let mut alpha = Vec::with_capacity(total);
    let mut logits = Vec::with_capacity(total);
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for &(lo, hi) in segments {
        let m = hi - lo;
        offsets.push(alpha.len());
        for k in 0..heads {
            let (asrc, adst) = a.row_slice(k).split_at(n);
            src.clear();
            dst.clear();
            for i in lo..hi {
                let hk = &h.row_slice(i)[k * n..(k + 1) * n];
                src.push(dot(asrc, hk));
                dst.push(dot(adst, hk));
            }
            for i in 0..m {
                let start = alpha.len();
                for j in 0..m {
                    let z = src[i] + dst[j];
                    logits.push(z);
                    alpha.push(if z > 0.0 { z } else { LEAKY_SLOPE * z });
                }
                softmax_in_place(&mut alpha[start..start + m]);
                let orow = &mut out[(lo + i) * width + k * n..(lo + i) * width + (k + 1) * n];
                for j in 0..m {
                    let w = alpha[start + j];
                    let hj = &h.row_slice(lo + j)[k * n..(k + 1) * n];
                    for (o, x) in orow.iter_mut().zip(hj) {
                        *o += w * x;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::matrix(r, width, out)?,
        AttentionCache {
            alpha,
            offsets,
            logits,
        },
    ))
}

fn attention_backward(
    h: &Tensor,
    a: &Tensor,
    heads: usize,
    segments: &[(usize, usize)],
    cache: &AttentionCache,
    g: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (r, width) = h.dims2("graph_attention")?;
    let n = width / heads;
    let mut dh = vec![0.0; r * width];
    let mut da = vec![0.0; heads * 2 * n];
    let mut dz = Vec::new();
    let mut dalpha = Vec::new();
    for (s, &(lo, hi)) in segments.iter().enumerate() {
        let m = hi - lo;
        for k in 0..heads {
            let alpha = cache.alpha_block(s, k, m);
            let base = cache.offsets[s] + k * m * m;
            let logits = &cache.logits[base..base + m * m];
            let col = k * n..(k + 1) * n;
            dz.clear();
            dz.resize(m * m, 0.0);
            for i in 0..m {
                let gi = &g.row_slice(lo + i)[col.clone()];
                dalpha.clear();
                for j in 0..m {
                    let hj = &h.row_slice(lo + j)[col.clone()];
                    dalpha.push(dot(gi, hj));
                    let w = alpha[i * m + j];
                    let dhj = &mut dh[(lo + j) * width + k * n..(lo + j) * width + (k + 1) * n];
                    for (o, x) in dhj.iter_mut().zip(gi) {
                        *o += w * x;
                    }
                }
                let mix: f64 = (0..m).map(|j| alpha[i * m + j] * dalpha[j]).sum();
                for j in 0..m {
                    let de = alpha[i * m + j] * (dalpha[j] - mix);
                    let slope = if logits[i * m + j] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                    dz[i * m + j] = de * slope;
                }
            }
            let (asrc, adst) = a.row_slice(k).split_at(n);
            for i in 0..m {
                let ds_src: f64 = (0..m).map(|j| dz[i * m + j]).sum();
                let ds_dst: f64 = (0..m).map(|j| dz[j * m + i]).sum();
                let row = lo + i;
                let hk = &h.row_slice(row)[col.clone()];
                let dhi = &mut dh[row * width + k * n..row * width + (k + 1) * n];
                for c in 0..n {
                    dhi[c] += ds_src * asrc[c] + ds_dst * adst[c];
                }
                let dak = &mut da[k * 2 * n..(k + 1) * 2 * n];
                for c in 0..n {
                    dak[c] += ds_src * hk[c];
                    dak[n + c] += ds_dst * hk[c];
                }
            }
        }
    }
    Ok((Tensor::matrix(r, width, dh)?, Tensor::matrix(heads, 2 * n, da)?))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
