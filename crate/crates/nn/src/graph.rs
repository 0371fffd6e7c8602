//! Reverse-mode tape. Every op records its inputs and whatever it needs for
//! the backward pass; `backward` walks the tape once in reverse.
//!
//! Batched layouts: a batch of `g` sequences of `s` tokens with width `d`
//! is a `[g*s, d]` tensor, sequences stacked row-wise.

use crate::params::ParamStore;
use crate::tensor::{gemm, Tensor, View};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
}

pub const KERNEL: usize = 3;

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - KERNEL) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - KERNEL) / self.stride + 1
    }
    fn patch(&self) -> usize {
        self.cin * KERNEL * KERNEL
    }
}

enum Op {
    Leaf,
    Param(usize),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Gelu { a: Var, deriv: Vec<f64> },
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, inv: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, groups: usize, heads: usize, probs: Vec<f64> },
    Transpose { a: Var, groups: usize },
    ConcatCols(Var, Var),
    RepeatRows { a: Var, times: usize },
    MeanGroups { a: Var, groups: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<f64> },
    ChannelMean { a: Var, channels: usize },
    MirrorUpper { a: Var, n: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Mse { a: Var, target: Vec<f64> },
    Bezier { ctrl: Var, target: Vec<f64>, weights: [f64; 5] },
    MaskedMse { a: Var, target: Vec<f64>, mask: Vec<bool> },
    Sum(Vec<Var>),
    DotConst { a: Var, r: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Linear { x, w, b } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
            Op::Add(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::LayerNorm { x, g, b, .. } | Op::Conv2d { x, w: g, b, .. } => vec![*x, *g, *b],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Sum(terms) => terms.clone(),
            Op::AddConst(a)
            | Op::Scale(a, _)
            | Op::Gelu { a, .. }
            | Op::Transpose { a, .. }
            | Op::RepeatRows { a, .. }
            | Op::MeanGroups { a, .. }
            | Op::Reshape(a)
            | Op::ChannelMean { a, .. }
            | Op::MirrorUpper { a, .. }
            | Op::CrossEntropy { logits: a, .. }
            | Op::Mse { a, .. }
            | Op::Bezier { ctrl: a, .. }
            | Op::MaskedMse { a, .. }
            | Op::DotConst { a, .. } => vec![*a],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param(_) => "param",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::AddConst(_) => "add_const",
            Op::Scale(..) => "scale",
            Op::Gelu { .. } => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::Transpose { .. } => "transpose",
            Op::ConcatCols(..) => "concat",
            Op::RepeatRows { .. } => "repeat_rows",
            Op::MeanGroups { .. } => "mean_groups",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::ChannelMean { .. } => "channel_mean",
            Op::MirrorUpper { .. } => "mirror_upper",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
            Op::Bezier { .. } => "bezier_loss",
            Op::MaskedMse { .. } => "masked_mse",
            Op::Sum(_) => "sum",
            Op::DotConst { .. } => "dot_const",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// Some parameter feeds this node.
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// One tensor per parameter of `store`; zeros for parameters that
    /// did not reach the loss.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        for &(id, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                for (o, v) in out[id].data.iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    // exp-based tanh is noticeably cheaper than libm tanh
    let t = 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

pub const LN_EPS: f64 = 1e-5;

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// First op that produced a non-finite value.
    pub fn check_finite(&self) -> Result<(), NnError> {
        match self.non_finite {
            Some(op) => Err(NnError::NonFinite(op)),
            None => Ok(()),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf nodes for every parameter of the store, in id order.
    pub fn bind(&mut self, store: &ParamStore) -> Vec<Var> {
        store.values.iter().enumerate().map(|(i, t)| self.push(t.clone(), Op::Param(i))).collect()
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// `x[n, din] * w[din, dout] + b[1, dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let [n, din] = self.shape(x);
        let [wi, dout] = self.shape(w);
        if wi != din {
            return Err(shape_err(format!("linear: input width {din}, weight {wi}x{dout}")));
        }
        let mut out = Tensor::zeros(n, dout);
        if let Some(b) = b {
            if self.shape(b) != [1, dout] {
                return Err(shape_err(format!("linear: bias {:?} for width {dout}", self.shape(b))));
            }
            let bias = &self.nodes[b.0].value.data;
            for r in 0..n {
                out.data[r * dout..(r + 1) * dout].copy_from_slice(bias);
            }
        }
        let (xv, wv) = (&self.nodes[x.0].value.data, &self.nodes[w.0].value.data);
        gemm(n, din, dout, 1.0, View::rows(xv, din), View::rows(wv, dout), 1.0, &mut out.data, dout);
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a constant; the gradient passes straight through.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var, NnError> {
        if self.shape(a) != c.shape() {
            return Err(shape_err(format!("add_const: {:?} vs {:?}", self.shape(a), c.shape())));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&c.data) {
            *o += v;
        }
        Ok(self.push(out, Op::AddConst(a)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let mut deriv = vec![0.0; out.len()];
        for (v, d) in out.data.iter_mut().zip(&mut deriv) {
            (*v, *d) = gelu_parts(*v);
        }
        self.push(out, Op::Gelu { a, deriv })
    }

    /// Row-wise layer norm with affine `g`, `b` of shape `[1, d]`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var, NnError> {
        let [n, d] = self.shape(x);
        if self.shape(g) != [1, d] || self.shape(b) != [1, d] {
            return Err(shape_err(format!("layer_norm: width {d}, affine {:?}", self.shape(g))));
        }
        let xv = &self.nodes[x.0].value.data;
        let (gv, bv) = (&self.nodes[g.0].value.data, &self.nodes[b.0].value.data);
        let mut xhat = vec![0.0; n * d];
        let mut inv = vec![0.0; n];
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let iv = 1.0 / (var + LN_EPS).sqrt();
            inv[r] = iv;
            for c in 0..d {
                let h = (row[c] - mean) * iv;
                xhat[r * d + c] = h;
                out.data[r * d + c] = gv[c] * h + bv[c];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, g, b, xhat, inv }))
    }

    /// Multi-head scaled dot-product self-attention over `groups` sequences.
    /// `q`, `k`, `v` are `[groups*s, d]`, heads split `d` evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Result<Var, NnError> {
        let [n, d] = self.shape(q);
        if self.shape(k) != [n, d] || self.shape(v) != [n, d] {
            return Err(shape_err("attention: q, k, v shapes differ".into()));
        }
        if groups == 0 || n % groups != 0 || heads == 0 || d % heads != 0 {
            return Err(shape_err(format!("attention: {n}x{d} into {groups} groups, {heads} heads")));
        }
        let s = n / groups;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (&self.nodes[q.0].value.data, &self.nodes[k.0].value.data, &self.nodes[v.0].value.data);
        let mut probs = vec![0.0; groups * heads * s * s];
        let mut out = Tensor::zeros(n, d);
        for g in 0..groups {
            for h in 0..heads {
                let off = g * s * d + h * dh;
                let p = &mut probs[(g * heads + h) * s * s..(g * heads + h + 1) * s * s];
                gemm(s, dh, s, scale, View { data: &qv[off..], rs: d, cs: 1 }, View { data: &kv[off..], rs: 1, cs: d }, 0.0, p, s);
                for row in p.chunks_exact_mut(s) {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for e in row.iter_mut() {
                        *e = (*e - m).exp();
                        z += *e;
                    }
                    row.iter_mut().for_each(|e| *e /= z);
                }
                gemm(s, s, dh, 1.0, View::rows(p, s), View { data: &vv[off..], rs: d, cs: 1 }, 0.0, &mut out.data[off..], d);
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, groups, heads, probs }))
    }

    /// Attention weights of an attention node, `[group][head][query][key]`
    /// flattened.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Per-group transpose: `[groups*r, c]` becomes `[groups*c, r]`.
    pub fn transpose(&mut self, a: Var, groups: usize) -> Result<Var, NnError> {
        let [n, c] = self.shape(a);
        if groups == 0 || n % groups != 0 {
            return Err(shape_err(format!("transpose: {n} rows into {groups} groups")));
        }
        let r = n / groups;
        let av = &self.nodes[a.0].value.data;
        let mut out = Tensor::zeros(groups * c, r);
        for g in 0..groups {
            let base = g * r * c;
            for i in 0..r {
                for j in 0..c {
                    out.data[base + j * r + i] = av[base + i * c + j];
                }
            }
        }
        Ok(self.push(out, Op::Transpose { a, groups }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let ([n, ca], [nb, cb]) = (self.shape(a), self.shape(b));
        if n != nb {
            return Err(shape_err(format!("concat: {n} vs {nb} rows")));
        }
        let mut out = Tensor::zeros(n, ca + cb);
        for r in 0..n {
            out.data[r * (ca + cb)..r * (ca + cb) + ca].copy_from_slice(self.value(a).row(r));
            out.data[r * (ca + cb) + ca..(r + 1) * (ca + cb)].copy_from_slice(self.value(b).row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Each row repeated `times` times in place: `[g, c]` to `[g*times, c]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let [n, c] = self.shape(a);
        let mut out = Tensor::zeros(n * times, c);
        for r in 0..n {
            for t in 0..times {
                out.data[(r * times + t) * c..(r * times + t + 1) * c].copy_from_slice(self.value(a).row(r));
            }
        }
        self.push(out, Op::RepeatRows { a, times })
    }

    /// Mean over the rows of each group: `[groups*s, c]` to `[groups, c]`.
    pub fn mean_groups(&mut self, a: Var, groups: usize) -> Result<Var, NnError> {
        let [n, c] = self.shape(a);
        if groups == 0 || n % groups != 0 {
            return Err(shape_err(format!("mean_groups: {n} rows into {groups} groups")));
        }
        let s = n / groups;
        let av = &self.nodes[a.0].value.data;
        let mut out = Tensor::zeros(groups, c);
        for g in 0..groups {
            for i in 0..s {
                for j in 0..c {
                    out.data[g * c + j] += av[(g * s + i) * c + j];
                }
            }
        }
        out.data.iter_mut().for_each(|v| *v /= s as f64);
        Ok(self.push(out, Op::MeanGroups { a, groups }))
    }

    /// Same data, new row/column split.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(shape_err(format!("reshape: {:?} to {rows}x{cols}", t.shape())));
        }
        let out = Tensor { rows, cols, data: t.data.clone() };
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// 3x3 convolution. `x` is `[batch, cin*h*w]` channel-major, `w` is
    /// `[cout, cin*9]`, `b` is `[1, cout]`; output `[batch, cout*oh*ow]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var, NnError> {
        let [batch, len] = self.shape(x);
        if len != geom.cin * geom.h * geom.w {
            return Err(shape_err(format!("conv2d: input width {len} for {geom:?}")));
        }
        if self.shape(w) != [geom.cout, geom.patch()] || self.shape(b) != [1, geom.cout] {
            return Err(shape_err(format!("conv2d: kernel {:?} for {geom:?}", self.shape(w))));
        }
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let npos = oh * ow;
        let patch = geom.patch();
        let xv = &self.nodes[x.0].value.data;
        let (wv, bv) = (&self.nodes[w.0].value.data, &self.nodes[b.0].value.data);
        let mut cols = vec![0.0; batch * patch * npos];
        let mut out = Tensor::zeros(batch, geom.cout * npos);
        for n in 0..batch {
            let img = &xv[n * len..(n + 1) * len];
            let col = &mut cols[n * patch * npos..(n + 1) * patch * npos];
            im2col(img, geom, col);
            let o = &mut out.data[n * geom.cout * npos..(n + 1) * geom.cout * npos];
            for (c, chunk) in o.chunks_exact_mut(npos).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bv[c]);
            }
            gemm(geom.cout, patch, npos, 1.0, View::rows(wv, patch), View::rows(col, npos), 1.0, o, npos);
        }
        Ok(self.push(out, Op::Conv2d { x, w, b, geom, cols }))
    }

    /// Mean over spatial positions per channel: `[batch, c*hw]` to `[batch, c]`.
    pub fn channel_mean(&mut self, a: Var, channels: usize) -> Result<Var, NnError> {
        let [batch, len] = self.shape(a);
        if channels == 0 || len % channels != 0 {
            return Err(shape_err(format!("channel_mean: width {len} into {channels} channels")));
        }
        let hw = len / channels;
        let av = &self.nodes[a.0].value.data;
        let mut out = Tensor::zeros(batch, channels);
        for n in 0..batch {
            for c in 0..channels {
                let s: f64 = av[n * len + c * hw..n * len + (c + 1) * hw].iter().sum();
                out.data[n * channels + c] = s / hw as f64;
            }
        }
        Ok(self.push(out, Op::ChannelMean { a, channels }))
    }

    /// Strict upper triangle `[batch, n(n-1)/2]` (row-major over `i < j`)
    /// to a symmetric `[batch, n*n]` matrix with zero diagonal.
    pub fn mirror_upper(&mut self, a: Var, n: usize) -> Result<Var, NnError> {
        let [batch, m] = self.shape(a);
        if m != n * (n - 1) / 2 {
            return Err(shape_err(format!("mirror_upper: {m} entries for n = {n}")));
        }
        let av = &self.nodes[a.0].value.data;
        let mut out = Tensor::zeros(batch, n * n);
        for bi in 0..batch {
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let v = av[bi * m + k];
                    out.data[bi * n * n + i * n + j] = v;
                    out.data[bi * n * n + j * n + i] = v;
                    k += 1;
                }
            }
        }
        Ok(self.push(out, Op::MirrorUpper { a, n }))
    }

    /// Mean cross-entropy of rows of `logits` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let [n, c] = self.shape(logits);
        if targets.len() != n || targets.iter().any(|&t| t >= c) {
            return Err(shape_err(format!("cross_entropy: {} targets for {n}x{c} logits", targets.len())));
        }
        let lv = &self.nodes[logits.0].value.data;
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &lv[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[r]];
        }
        let out = Tensor::scalar(loss / n as f64);
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }))
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, a: Var, target: &Tensor) -> Result<Var, NnError> {
        if self.shape(a) != target.shape() {
            return Err(shape_err(format!("mse: {:?} vs {:?}", self.shape(a), target.shape())));
        }
        let av = &self.nodes[a.0].value.data;
        let s: f64 = av.iter().zip(&target.data).map(|(p, t)| (p - t) * (p - t)).sum();
        let out = Tensor::scalar(s / av.len().max(1) as f64);
        Ok(self.push(out, Op::Mse { a, target: target.data.clone() }))
    }

    /// Weighted future-point loss. `ctrl` is `[batch, 8]` control points
    /// C1..C4 (C0 at the origin); `target` is `[batch, 10]` points
    /// `x0 y0 .. x4 y4`. Mean over batch and points of `w_i |p_i - p^_i|^2`.
    pub fn bezier_loss(&mut self, ctrl: Var, target: &Tensor, weights: [f64; 5]) -> Result<Var, NnError> {
        let [batch, c] = self.shape(ctrl);
        if c != 8 || target.shape() != [batch, 10] {
            return Err(shape_err(format!("bezier_loss: ctrl {batch}x{c}, target {:?}", target.shape())));
        }
        let a = osha_core::bezier::future_design_matrix();
        let cv = &self.nodes[ctrl.0].value.data;
        let mut loss = 0.0;
        for n in 0..batch {
            for (i, row) in a.iter().enumerate() {
                let (mut px, mut py) = (0.0, 0.0);
                for k in 0..4 {
                    px += row[k] * cv[n * 8 + 2 * k];
                    py += row[k] * cv[n * 8 + 2 * k + 1];
                }
                let (tx, ty) = (target.data[n * 10 + 2 * i], target.data[n * 10 + 2 * i + 1]);
                loss += weights[i] * ((px - tx).powi(2) + (py - ty).powi(2));
            }
        }
        let out = Tensor::scalar(loss / (5 * batch.max(1)) as f64);
        Ok(self.push(out, Op::Bezier { ctrl, target: target.data.clone(), weights }))
    }

    /// Per-row mean squared error over unmasked entries (rows with no
    /// unmasked entry contribute 0), averaged over rows.
    pub fn masked_mse(&mut self, a: Var, target: &Tensor, mask: &[bool]) -> Result<Var, NnError> {
        let [n, m] = self.shape(a);
        if target.shape() != [n, m] || mask.len() != n * m {
            return Err(shape_err(format!("masked_mse: {n}x{m} vs target {:?}", target.shape())));
        }
        let av = &self.nodes[a.0].value.data;
        let mut loss = 0.0;
        for r in 0..n {
            let idx = r * m..(r + 1) * m;
            let count = mask[idx.clone()].iter().filter(|&&b| b).count();
            if count == 0 {
                continue;
            }
            let s: f64 = idx.filter(|&i| mask[i]).map(|i| (av[i] - target.data[i]).powi(2)).sum();
            loss += s / count as f64;
        }
        let out = Tensor::scalar(loss / n.max(1) as f64);
        Ok(self.push(out, Op::MaskedMse { a, target: target.data.clone(), mask: mask.to_vec() }))
    }

    /// Sum of scalars.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var, NnError> {
        let mut s = 0.0;
        for &t in terms {
            if self.shape(t) != [1, 1] {
                return Err(shape_err("sum: non-scalar term".into()));
            }
            s += self.value(t).item();
        }
        Ok(self.push(Tensor::scalar(s), Op::Sum(terms.to_vec())))
    }

    /// `sum(a * r)` for a constant `r`: a random linear probe of `a`.
    pub fn dot_const(&mut self, a: Var, r: &Tensor) -> Result<Var, NnError> {
        if self.shape(a) != r.shape() {
            return Err(shape_err("dot_const: shape mismatch".into()));
        }
        let s = self.value(a).data.iter().zip(&r.data).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::DotConst { a, r: r.data.clone() }))
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        self.check_finite()?;
        if self.shape(loss) != [1, 1] {
            return Err(shape_err("backward: loss is not a scalar".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                let len = self.nodes[v.0].value.len();
                let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(g);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.push((*id, Var(i))),
                Op::Linear { x, w, b } => {
                    let [n, din] = self.shape(*x);
                    let dout = node.value.cols;
                    let (xv, wv) = (&self.nodes[x.0].value.data, &self.nodes[w.0].value.data);
                    acc(*x, &mut |g| gemm(n, dout, din, 1.0, View::rows(&dy, dout), View::t(wv, dout), 1.0, g, din));
                    acc(*w, &mut |g| gemm(din, n, dout, 1.0, View::t(xv, din), View::rows(&dy, dout), 1.0, g, dout));
                    if let Some(b) = b {
                        acc(*b, &mut |g| {
                            for row in dy.chunks_exact(dout) {
                                g.iter_mut().zip(row).for_each(|(a, d)| *a += d);
                            }
                        });
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |g| g.iter_mut().zip(&dy).for_each(|(x, d)| *x += d));
                    acc(*b, &mut |g| g.iter_mut().zip(&dy).for_each(|(x, d)| *x += d));
                }
                Op::AddConst(a) | Op::Reshape(a) => acc(*a, &mut |g| g.iter_mut().zip(&dy).for_each(|(x, d)| *x += d)),
                Op::Scale(a, s) => acc(*a, &mut |g| g.iter_mut().zip(&dy).for_each(|(x, d)| *x += s * d)),
                Op::Gelu { a, deriv } => {
                    acc(*a, &mut |g| {
                        for ((x, d), v) in g.iter_mut().zip(&dy).zip(deriv) {
                            *x += d * v;
                        }
                    });
                }
                Op::LayerNorm { x, g: gp, b, xhat, inv } => {
                    let [n, d] = node.value.shape();
                    let gv = &self.nodes[gp.0].value.data;
                    acc(*gp, &mut |gg| {
                        for r in 0..n {
                            for c in 0..d {
                                gg[c] += dy[r * d + c] * xhat[r * d + c];
                            }
                        }
                    });
                    acc(*b, &mut |gb| {
                        for row in dy.chunks_exact(d) {
                            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    });
                    acc(*x, &mut |gx| {
                        let mut dxh = vec![0.0; d];
                        for r in 0..n {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for c in 0..d {
                                dxh[c] = dy[r * d + c] * gv[c];
                                s1 += dxh[c];
                                s2 += dxh[c] * xhat[r * d + c];
                            }
                            for c in 0..d {
                                gx[r * d + c] += inv[r] / d as f64 * (d as f64 * dxh[c] - s1 - xhat[r * d + c] * s2);
                            }
                        }
                    });
                }
                Op::Attention { q, k, v, groups, heads, probs } => {
                    let [n, d] = node.value.shape();
                    let s = n / groups;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (qv, kv, vv) =
                        (&self.nodes[q.0].value.data, &self.nodes[k.0].value.data, &self.nodes[v.0].value.data);
                    let mut dq = vec![0.0; n * d];
                    let mut dk = vec![0.0; n * d];
                    let mut dv = vec![0.0; n * d];
                    let mut ds = vec![0.0; s * s];
                    for g in 0..*groups {
                        for h in 0..*heads {
                            let off = g * s * d + h * dh;
                            let p = &probs[(g * heads + h) * s * s..(g * heads + h + 1) * s * s];
                            let dout = View { data: &dy[off..], rs: d, cs: 1 };
                            // dP = dO V^T
                            gemm(s, dh, s, 1.0, dout, View { data: &vv[off..], rs: 1, cs: d }, 0.0, &mut ds, s);
                            // dV += P^T dO
                            gemm(s, s, dh, 1.0, View::t(p, s), dout, 1.0, &mut dv[off..], d);
                            for r in 0..s {
                                let row = &mut ds[r * s..(r + 1) * s];
                                let pr = &p[r * s..(r + 1) * s];
                                let dot: f64 = row.iter().zip(pr).map(|(a, b)| a * b).sum();
                                row.iter_mut().zip(pr).for_each(|(a, b)| *a = b * (*a - dot));
                            }
                            gemm(s, s, dh, scale, View::rows(&ds, s), View { data: &kv[off..], rs: d, cs: 1 }, 1.0, &mut dq[off..], d);
                            gemm(s, s, dh, scale, View::t(&ds, s), View { data: &qv[off..], rs: d, cs: 1 }, 1.0, &mut dk[off..], d);
                        }
                    }
                    acc(*q, &mut |g| g.iter_mut().zip(&dq).for_each(|(a, b)| *a += b));
                    acc(*k, &mut |g| g.iter_mut().zip(&dk).for_each(|(a, b)| *a += b));
                    acc(*v, &mut |g| g.iter_mut().zip(&dv).for_each(|(a, b)| *a += b));
                }
                Op::Transpose { a, groups } => {
                    let [n, c] = self.shape(*a);
                    let r = n / groups;
                    acc(*a, &mut |g| {
                        for gi in 0..*groups {
                            let base = gi * r * c;
                            for i in 0..r {
                                for j in 0..c {
                                    g[base + i * c + j] += dy[base + j * r + i];
                                }
                            }
                        }
                    });
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a)[1];
                    let cb = self.shape(*b)[1];
                    acc(*a, &mut |g| {
                        for (gr, dr) in g.chunks_exact_mut(ca).zip(dy.chunks_exact(ca + cb)) {
                            gr.iter_mut().zip(&dr[..ca]).for_each(|(x, d)| *x += d);
                        }
                    });
                    acc(*b, &mut |g| {
                        for (gr, dr) in g.chunks_exact_mut(cb).zip(dy.chunks_exact(ca + cb)) {
                            gr.iter_mut().zip(&dr[ca..]).for_each(|(x, d)| *x += d);
                        }
                    });
                }
                Op::RepeatRows { a, times } => {
                    let c = node.value.cols;
                    acc(*a, &mut |g| {
                        for (r, gr) in g.chunks_exact_mut(c).enumerate() {
                            for t in 0..*times {
                                let dr = &dy[(r * times + t) * c..(r * times + t + 1) * c];
                                gr.iter_mut().zip(dr).for_each(|(x, d)| *x += d);
                            }
                        }
                    });
                }
                Op::MeanGroups { a, groups } => {
                    let [n, c] = self.shape(*a);
                    let s = n / groups;
                    acc(*a, &mut |g| {
                        for (r, gr) in g.chunks_exact_mut(c).enumerate() {
                            let dr = &dy[(r / s) * c..(r / s + 1) * c];
                            gr.iter_mut().zip(dr).for_each(|(x, d)| *x += d / s as f64);
                        }
                    });
                }
                Op::Conv2d { x, w, b, geom, cols } => {
                    let batch = node.value.rows;
                    let npos = geom.out_h() * geom.out_w();
                    let patch = geom.patch();
                    let len = geom.cin * geom.h * geom.w;
                    let wv = &self.nodes[w.0].value.data;
                    acc(*b, &mut |g| {
                        for n in 0..batch {
                            for c in 0..geom.cout {
                                let o = (n * geom.cout + c) * npos;
                                g[c] += dy[o..o + npos].iter().sum::<f64>();
                            }
                        }
                    });
                    acc(*w, &mut |g| {
                        for n in 0..batch {
                            let d = &dy[n * geom.cout * npos..(n + 1) * geom.cout * npos];
                            let col = &cols[n * patch * npos..(n + 1) * patch * npos];
                            gemm(geom.cout, npos, patch, 1.0, View::rows(d, npos), View::t(col, npos), 1.0, g, patch);
                        }
                    });
                    acc(*x, &mut |g| {
                        let mut dcol = vec![0.0; patch * npos];
                        for n in 0..batch {
                            let d = &dy[n * geom.cout * npos..(n + 1) * geom.cout * npos];
                            gemm(patch, geom.cout, npos, 1.0, View::t(wv, patch), View::rows(d, npos), 0.0, &mut dcol, npos);
                            col2im(&dcol, *geom, &mut g[n * len..(n + 1) * len]);
                        }
                    });
                }
                Op::ChannelMean { a, channels } => {
                    let [batch, len] = self.shape(*a);
                    let hw = len / channels;
                    acc(*a, &mut |g| {
                        for n in 0..batch {
                            for c in 0..*channels {
                                let d = dy[n * channels + c] / hw as f64;
                                g[n * len + c * hw..n * len + (c + 1) * hw].iter_mut().for_each(|x| *x += d);
                            }
                        }
                    });
                }
                Op::MirrorUpper { a, n } => {
                    let [batch, m] = self.shape(*a);
                    acc(*a, &mut |g| {
                        for bi in 0..batch {
                            let mut k = 0;
                            for i in 0..*n {
                                for j in i + 1..*n {
                                    g[bi * m + k] += dy[bi * n * n + i * n + j] + dy[bi * n * n + j * n + i];
                                    k += 1;
                                }
                            }
                        }
                    });
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let c = self.shape(*logits)[1];
                    let n = targets.len() as f64;
                    acc(*logits, &mut |g| {
                        for (r, &t) in targets.iter().enumerate() {
                            for j in 0..c {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                g[r * c + j] += dy[0] * (probs[r * c + j] - onehot) / n;
                            }
                        }
                    });
                }
                Op::Mse { a, target } => {
                    let av = &self.nodes[a.0].value.data;
                    let scale = 2.0 * dy[0] / av.len().max(1) as f64;
                    acc(*a, &mut |g| {
                        for ((x, p), t) in g.iter_mut().zip(av).zip(target) {
                            *x += scale * (p - t);
                        }
                    });
                }
                Op::Bezier { ctrl, target, weights } => {
                    let batch = self.shape(*ctrl)[0];
                    let a = osha_core::bezier::future_design_matrix();
                    let cv = &self.nodes[ctrl.0].value.data;
                    let scale = 2.0 * dy[0] / (5 * batch.max(1)) as f64;
                    acc(*ctrl, &mut |g| {
                        for n in 0..batch {
                            for (i, row) in a.iter().enumerate() {
                                let (mut px, mut py) = (0.0, 0.0);
                                for k in 0..4 {
                                    px += row[k] * cv[n * 8 + 2 * k];
                                    py += row[k] * cv[n * 8 + 2 * k + 1];
                                }
                                let ex = weights[i] * (px - target[n * 10 + 2 * i]);
                                let ey = weights[i] * (py - target[n * 10 + 2 * i + 1]);
                                for k in 0..4 {
                                    g[n * 8 + 2 * k] += scale * ex * row[k];
                                    g[n * 8 + 2 * k + 1] += scale * ey * row[k];
                                }
                            }
                        }
                    });
                }
                Op::MaskedMse { a, target, mask } => {
                    let [n, m] = self.shape(*a);
                    let av = &self.nodes[a.0].value.data;
                    acc(*a, &mut |g| {
                        for r in 0..n {
                            let count = mask[r * m..(r + 1) * m].iter().filter(|&&b| b).count();
                            if count == 0 {
                                continue;
                            }
                            let scale = 2.0 * dy[0] / (count * n) as f64;
                            for i in r * m..(r + 1) * m {
                                if mask[i] {
                                    g[i] += scale * (av[i] - target[i]);
                                }
                            }
                        }
                    });
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        acc(t, &mut |g| g[0] += dy[0]);
                    }
                }
                Op::DotConst { a, r } => acc(*a, &mut |g| g.iter_mut().zip(r).for_each(|(x, rv)| *x += dy[0] * rv)),
            }
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads, params })
    }
}

fn im2col(img: &[f64], g: ConvGeom, col: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npos = oh * ow;
    for c in 0..g.cin {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut col[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            img[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: ConvGeom, img: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npos = oh * ow;
    for c in 0..g.cin {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &col[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            img[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}
