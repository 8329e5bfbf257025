//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the tape, so node order is already a
//! topological order. [`Graph::backward`] walks the tape once in reverse,
//! keeping intermediate adjoints in a scratch buffer and accumulating only
//! leaf gradients into persistent storage.

use super::kernels::{self, ConvGeom};
use super::{split_axis, Real, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise nonlinearities with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    /// Exact erf form `x·Φ(x)`.
    Gelu,
    Sigmoid,
    /// Normalized Huber: `0.5x²/β` for `|x| < β`, else `|x| − 0.5β`.
    SmoothL1 { beta: Real },
    /// The two-branch form taken verbatim: `0.5x²` for `|x| < β`, else `x − 0.5`.
    SmoothL1Literal { beta: Real },
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Gelu => "gelu",
            Unary::Sigmoid => "sigmoid",
            Unary::SmoothL1 { .. } => "smooth_l1",
            Unary::SmoothL1Literal { .. } => "smooth_l1_literal",
        }
    }

    pub fn eval(self, x: Real) -> Real {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Gelu => x * std_normal_cdf(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::SmoothL1 { beta } => {
                let a = x.abs();
                if a < beta {
                    0.5 * x * x / beta
                } else {
                    a - 0.5 * beta
                }
            }
            Unary::SmoothL1Literal { beta } => {
                if x.abs() < beta {
                    0.5 * x * x
                } else {
                    x - 0.5
                }
            }
        }
    }

    /// Derivative at `x`, given the forward output `y`.
    pub fn derivative(self, x: Real, y: Real) -> Real {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::SmoothL1 { beta } => {
                if x.abs() < beta {
                    x / beta
                } else {
                    x.signum()
                }
            }
            Unary::SmoothL1Literal { beta } => {
                if x.abs() < beta {
                    x
                } else {
                    1.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn std_normal_cdf(x: Real) -> Real {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: Real) -> Real {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    AddScalar(Var),
    Unary(Var, Unary),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    SumAxis(Var, usize),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        axis: usize,
        xhat: Vec<Real>,
        inv_std: Vec<Real>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<Real>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        geom: ConvGeom,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` expressed over `out` indices; broadcast axes get stride 0.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        let oi = i + rank - src.len();
        strides[oi] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    strides
}

fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
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

    /// Adds an input tensor. Leaves with `requires_grad` receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(Real, Real) -> Real) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            Error::dim(name, format!("cannot broadcast {:?} with {:?}", ta.shape(), tb.shape()))
        })?;
        let sa = broadcast_strides(ta.shape(), &out_shape);
        let sb = broadcast_strides(tb.shape(), &out_shape);
        let n: usize = out_shape.iter().product();
        let mut out = vec![0.0; n];
        let (da, db) = (ta.data(), tb.data());
        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| out[o] = f(da[ia], db[ib]));
        Tensor::new(&out_shape, out)
    }

    /// Element-wise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Result<Var> {
        let t = Tensor::from_fn(self.shape(x), |i| c * self.value(x).data()[i]);
        self.push("scale", t, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: Real) -> Result<Var> {
        let t = Tensor::from_fn(self.shape(x), |i| c + self.value(x).data()[i]);
        self.push("add_scalar", t, Op::AddScalar(x), &[x])
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let t = Tensor::from_fn(self.shape(x), |i| f.eval(self.value(x).data()[i]));
        self.push(f.name(), t, Op::Unary(x, f), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    /// `[m,k] · [k,n] → [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("expected rank 2, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(x).data();
        let t = Tensor::from_fn(&[n, m], |i| src[(i % m) * n + i / m]);
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self
            .value(x)
            .reshaped(shape)
            .map_err(|_| Error::dim("reshape", format!("{:?} → {shape:?}", self.shape(x))))?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        self.push("sum", t, Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as Real;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let t = Tensor::new(&out_shape, out)?;
        self.push("sum_axis", t, Op::SumAxis(x, axis), &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::dim("mean_axis", format!("axis {axis}")))? as Real;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n)
    }

    /// `[c,h,w] → [c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("global_avg_pool", format!("expected [c,h,w], got {s:?}")));
        }
        let flat = self.reshape(x, &[s[0], s[1] * s[2]])?;
        self.mean_axis(flat, 1)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len().max(1) {
            return Err(Error::dim("softmax", format!("axis {axis} for {shape:?}")));
        }
        let (outer, n, inner) = if shape.is_empty() { (1, 1, 1) } else { split_axis(&shape, axis) };
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let max = (0..n).map(|a| src[at(a)]).fold(Real::NEG_INFINITY, Real::max);
                let mut z = 0.0;
                for a in 0..n {
                    let e = (src[at(a)] - max).exp();
                    out[at(a)] = e;
                    z += e;
                }
                for a in 0..n {
                    out[at(a)] /= z;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        self.push("softmax", t, Op::Softmax(x, axis), &[x])
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance, then
    /// applies the per-position `gain` and `bias` (both shaped `[shape[axis]]`).
    pub fn layer_norm(&mut self, x: Var, axis: usize, gain: Var, bias: Var, eps: Real) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("layer_norm", format!("axis {axis} for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::dim(
                "layer_norm",
                format!("gain {:?} / bias {:?} vs extent {n}", self.shape(gain), self.shape(bias)),
            ));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let mean = (0..n).map(|a| src[at(a)]).sum::<Real>() / n as Real;
                let var = (0..n).map(|a| (src[at(a)] - mean).powi(2)).sum::<Real>() / n as Real;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = inv;
                for a in 0..n {
                    let h = (src[at(a)] - mean) * inv;
                    xhat[at(a)] = h;
                    out[at(a)] = h * g[a] + b[a];
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm { x, gain, bias, axis, xhat, inv_std },
            &[x, gain, bias],
        )
    }

    /// Cross-correlation `[c,h,w] ⋆ [o,c,kh,kw] → [o,h',w']`, optional bias `[o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] {
            return Err(Error::dim("conv2d", format!("input {xs:?}, kernels {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::dim("conv2d", format!("bias {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], ws[2], ws[3], stride, pad).ok_or_else(|| {
            Error::dim("conv2d", format!("empty output for input {xs:?}, kernel {ws:?}, stride {stride}, pad {pad}"))
        })?;
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let (o, ck, l) = (ws[0], geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; o * l];
        if let Some(b) = b {
            for (oc, &bv) in self.value(b).data().iter().enumerate() {
                out[oc * l..(oc + 1) * l].fill(bv);
            }
        }
        kernels::gemm_acc(self.value(w).data(), &cols, &mut out, o, ck, l);
        let t = Tensor::new(&[o, geom.out_h, geom.out_w], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("conv2d", t, Op::Conv2d { x, w, b, geom, cols }, &inputs)
    }

    /// Transposed convolution `[i,h,w]` with kernels `[i,o,kh,kw]`, no padding.
    /// Output extent is `(h−1)·stride + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] || stride == 0 {
            return Err(Error::dim("conv_transpose2d", format!("input {xs:?}, kernels {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[1]] {
                return Err(Error::dim("conv_transpose2d", format!("bias {:?}", self.shape(b))));
            }
        }
        let (ci, co, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let oh = (xs[1] - 1) * stride + kh;
        let ow = (xs[2] - 1) * stride + kw;
        let geom = ConvGeom::new(co, oh, ow, kh, kw, stride, 0).expect("valid by construction");
        debug_assert_eq!((geom.out_h, geom.out_w), (xs[1], xs[2]));
        let (ok, l) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; ok * l];
        kernels::gemm_at_b_acc(self.value(w).data(), self.value(x).data(), &mut cols, ci, ok, l);
        let mut out = vec![0.0; co * oh * ow];
        if let Some(b) = b {
            for (oc, &bv) in self.value(b).data().iter().enumerate() {
                out[oc * oh * ow..(oc + 1) * oh * ow].fill(bv);
            }
        }
        kernels::col2im_acc(&cols, &geom, &mut out);
        let t = Tensor::new(&[co, oh, ow], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("conv_transpose2d", t, Op::ConvTranspose2d { x, w, b, geom }, &inputs)
    }

    /// Max pooling over `[c,h,w]`; padded cells never win.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || pad >= k {
            return Err(Error::dim("max_pool2d", format!("input {xs:?}, k {k}, pad {pad}")));
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], k, k, stride, pad)
            .ok_or_else(|| Error::dim("max_pool2d", format!("empty output for {xs:?}")))?;
        let src = self.value(x).data();
        let (oh, ow) = (geom.out_h, geom.out_w);
        let mut out = vec![Real::NEG_INFINITY; xs[0] * oh * ow];
        let mut argmax = vec![usize::MAX; out.len()];
        for c in 0..xs[0] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (c * oh + oy) * ow + ox;
                    for ki in 0..k {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= xs[1] as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix < 0 || ix >= xs[2] as isize {
                                continue;
                            }
                            let i = (c * xs[1] + iy as usize) * xs[2] + ix as usize;
                            if src[i] > out[o] {
                                out[o] = src[i];
                                argmax[o] = i;
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(&[xs[0], oh, ow], out)?;
        self.push("max_pool2d", t, Op::MaxPool { x, argmax }, &[x])
    }

    /// Average pooling over `[c,h,w]` without padding.
    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim("avg_pool2d", format!("input {xs:?}")));
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], k, k, stride, 0)
            .ok_or_else(|| Error::dim("avg_pool2d", format!("empty output for {xs:?}")))?;
        let src = self.value(x).data();
        let (oh, ow) = (geom.out_h, geom.out_w);
        let norm = 1.0 / (k * k) as Real;
        let t = Tensor::from_fn(&[xs[0], oh, ow], |o| {
            let (c, oy, ox) = (o / (oh * ow), (o / ow) % oh, o % ow);
            let mut s = 0.0;
            for ki in 0..k {
                for kj in 0..k {
                    s += src[(c * xs[1] + oy * stride + ki) * xs[2] + ox * stride + kj];
                }
            }
            s * norm
        });
        self.push("avg_pool2d", t, Op::AvgPool { x, geom }, &[x])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let t = Tensor::new(&out_shape, out)?;
        self.push("concat", t, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim("narrow", format!("{shape:?} axis {axis} [{start}, {})", start + len)));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, out)?;
        self.push("narrow", t, Op::Narrow { x, axis, start }, &[x])
    }

    /// Back-propagates from a scalar root, accumulating into leaf gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = Accum { adj: &mut adj, nodes: &self.nodes };
            let gd = g.data();
            match &node.op {
                Op::Leaf => {
                    match &mut self.grads[i] {
                        Some(existing) => existing.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let out = node.value.shape();
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let sa = broadcast_strides(ta.shape(), out);
                    let sb = broadcast_strides(tb.shape(), out);
                    let mut ga = vec![0.0; ta.numel()];
                    let mut gb = vec![0.0; tb.numel()];
                    for_each_broadcast(out, &sa, &sb, |o, ia, ib| {
                        ga[ia] += gd[o];
                        gb[ib] += sign * gd[o];
                    });
                    acc.add(*a, ga);
                    acc.add(*b, gb);
                }
                Op::Mul(a, b) => {
                    let out = node.value.shape();
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let sa = broadcast_strides(ta.shape(), out);
                    let sb = broadcast_strides(tb.shape(), out);
                    let (da, db) = (ta.data(), tb.data());
                    let mut ga = vec![0.0; ta.numel()];
                    let mut gb = vec![0.0; tb.numel()];
                    for_each_broadcast(out, &sa, &sb, |o, ia, ib| {
                        ga[ia] += gd[o] * db[ib];
                        gb[ib] += gd[o] * da[ia];
                    });
                    acc.add(*a, ga);
                    acc.add(*b, gb);
                }
                Op::Scale(x, c) => acc.add(*x, gd.iter().map(|v| v * c).collect()),
                Op::AddScalar(x) | Op::Reshape(x) => acc.add(*x, gd.to_vec()),
                Op::Unary(x, f) => {
                    let xd = self.nodes[x.0].value.data();
                    let yd = node.value.data();
                    let gx = (0..gd.len()).map(|k| gd[k] * f.derivative(xd[k], yd[k])).collect();
                    acc.add(*x, gx);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm_a_bt_acc(gd, tb.data(), &mut ga, m, k, n);
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm_at_b_acc(ta.data(), gd, &mut gb, m, k, n);
                    acc.add(*a, ga);
                    acc.add(*b, gb);
                }
                Op::Transpose(x) => {
                    // out is [n,m]; input [m,n]
                    let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
                    let gx = (0..m * n).map(|k| gd[(k % n) * m + k / n]).collect();
                    acc.add(*x, gx);
                }
                Op::SumAll(x) => {
                    let n = self.nodes[x.0].value.numel();
                    acc.add(*x, vec![gd[0]; n]);
                }
                Op::SumAxis(x, axis) => {
                    let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                    let mut gx = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        for a in 0..n {
                            for i in 0..inner {
                                gx[(o * n + a) * inner + i] = gd[o * inner + i];
                            }
                        }
                    }
                    acc.add(*x, gx);
                }
                Op::Softmax(x, axis) => {
                    let shape = node.value.shape();
                    let (outer, n, inner) = if shape.is_empty() { (1, 1, 1) } else { split_axis(shape, *axis) };
                    let y = node.value.data();
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let dot: Real = (0..n).map(|a| gd[at(a)] * y[at(a)]).sum();
                            for a in 0..n {
                                gx[at(a)] = y[at(a)] * (gd[at(a)] - dot);
                            }
                        }
                    }
                    acc.add(*x, gx);
                }
                Op::LayerNorm { x, gain, bias, axis, xhat, inv_std } => {
                    let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                    let gv = self.nodes[gain.0].value.data();
                    let mut gx = vec![0.0; xhat.len()];
                    let mut ggain = vec![0.0; n];
                    let mut gbias = vec![0.0; n];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let inv = inv_std[o * inner + i];
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for a in 0..n {
                                let d = gd[at(a)] * gv[a];
                                s1 += d;
                                s2 += d * xhat[at(a)];
                                ggain[a] += gd[at(a)] * xhat[at(a)];
                                gbias[a] += gd[at(a)];
                            }
                            let nf = n as Real;
                            for a in 0..n {
                                let d = gd[at(a)] * gv[a];
                                gx[at(a)] = inv / nf * (nf * d - s1 - xhat[at(a)] * s2);
                            }
                        }
                    }
                    acc.add(*x, gx);
                    acc.add(*gain, ggain);
                    acc.add(*bias, gbias);
                }
                Op::Conv2d { x, w, b, geom, cols } => {
                    let ws = self.nodes[w.0].value.shape();
                    let (o, ck, l) = (ws[0], geom.col_rows(), geom.col_cols());
                    if acc.wants(*w) {
                        let mut gw = vec![0.0; o * ck];
                        kernels::gemm_a_bt_acc(gd, cols, &mut gw, o, ck, l);
                        acc.add(*w, gw);
                    }
                    if acc.wants(*x) {
                        let mut gcols = vec![0.0; ck * l];
                        kernels::gemm_at_b_acc(self.nodes[w.0].value.data(), gd, &mut gcols, o, ck, l);
                        let mut gx = vec![0.0; self.nodes[x.0].value.numel()];
                        kernels::col2im_acc(&gcols, geom, &mut gx);
                        acc.add(*x, gx);
                    }
                    if let Some(b) = b {
                        acc.add(*b, (0..o).map(|oc| gd[oc * l..(oc + 1) * l].iter().sum()).collect());
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    let ws = self.nodes[w.0].value.shape();
                    let (ci, co) = (ws[0], ws[1]);
                    let (ok, l) = (geom.col_rows(), geom.col_cols());
                    let gcols = kernels::im2col(gd, geom);
                    if acc.wants(*x) {
                        let mut gx = vec![0.0; ci * l];
                        kernels::gemm_acc(self.nodes[w.0].value.data(), &gcols, &mut gx, ci, ok, l);
                        acc.add(*x, gx);
                    }
                    if acc.wants(*w) {
                        let mut gw = vec![0.0; ci * ok];
                        kernels::gemm_a_bt_acc(self.nodes[x.0].value.data(), &gcols, &mut gw, ci, ok, l);
                        acc.add(*w, gw);
                    }
                    if let Some(b) = b {
                        let plane = geom.height * geom.width;
                        acc.add(*b, (0..co).map(|oc| gd[oc * plane..(oc + 1) * plane].iter().sum()).collect());
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let mut gx = vec![0.0; self.nodes[x.0].value.numel()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += gd[o];
                    }
                    acc.add(*x, gx);
                }
                Op::AvgPool { x, geom } => {
                    let (oh, ow, k, s) = (geom.out_h, geom.out_w, geom.kh, geom.stride);
                    let norm = 1.0 / (k * k) as Real;
                    let mut gx = vec![0.0; self.nodes[x.0].value.numel()];
                    for (o, &gv) in gd.iter().enumerate() {
                        let (c, oy, ox) = (o / (oh * ow), (o / ow) % oh, o % ow);
                        for ki in 0..k {
                            for kj in 0..k {
                                gx[(c * geom.height + oy * s + ki) * geom.width + ox * s + kj] += gv * norm;
                            }
                        }
                    }
                    acc.add(*x, gx);
                }
                Op::Concat { inputs, axis } => {
                    let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &v in inputs {
                        let n = self.nodes[v.0].value.shape()[*axis];
                        let mut gv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&gd[base..base + n * inner]);
                        }
                        offset += n;
                        acc.add(v, gv);
                    }
                }
                Op::Narrow { x, axis, start } => {
                    let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                    let len = node.value.shape()[*axis];
                    let mut gx = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                    }
                    acc.add(*x, gx);
                }
            }
        }
        Ok(())
    }
}

struct Accum<'a> {
    adj: &'a mut [Option<Tensor>],
    nodes: &'a [Node],
}

impl Accum<'_> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, g: Vec<Real>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.adj[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&g) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.nodes[v.0].value.shape();
                *slot = Some(Tensor::new(shape, g).expect("gradient matches value shape"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[Real]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    /// Straight triple loop, independent of the gemm kernels.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                out.set(&[i, j], s);
            }
        }
        out
    }

    /// Direct six-loop convolution with explicit zero padding.
    fn conv_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[o, oh, ow]);
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    s += x.at(&[ic, y as usize, xx as usize]) * w.at(&[oc, ic, i, j]);
                                }
                            }
                        }
                    }
                    out.set(&[oc, oy, ox], s);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let mut g = Graph::new();
        let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let ia = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        assert!(g.value(c).max_abs_diff(&matmul_oracle(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { op: "matmul", .. })));
    }

    #[test]
    fn conv_trivial_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 3, 3]));
        let k = g.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let y = g.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 2.0));

        let ramp = g.constant(Tensor::from_fn(&[1, 3, 3], |i| i as Real));
        let avg = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0));
        let m = g.conv2d(ramp, avg, None, 1, 0).unwrap();
        assert_eq!(g.shape(m), &[1, 1, 1]);
        assert!((g.value(m).item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::randn(&[2, 8, 8], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 2, 3, 3], 1.0, &mut rng);
        let mut g = Graph::new();
        let (vx, vw) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv2d(vx, vw, None, 2, 1).unwrap();
        let expect = conv_oracle(&x, &w, 2, 1);
        assert_eq!(g.shape(y), expect.shape());
        assert!(g.value(y).max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn conv_empty_output_is_dimension_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 2, 2]));
        let k = g.constant(Tensor::ones(&[1, 1, 5, 5]));
        assert!(matches!(g.conv2d(x, k, None, 1, 0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(&[4], 3.7));
        let s = g.softmax(c, 0).unwrap();
        assert!(g.value(s).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let x = g.constant(t(&[2], &[0.0, 2f64.ln()]));
        let s = g.softmax(x, 0).unwrap();
        assert!((g.value(s).data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((g.value(s).data()[1] - 2.0 / 3.0).abs() < 1e-12);

        let big = g.constant(t(&[2], &[1000.0, 0.0]));
        let s = g.softmax(big, 0).unwrap();
        assert!((g.value(s).data()[0] - 1.0).abs() < 1e-12);
        assert!(g.value(s).data()[1].abs() < 1e-12);
    }

    #[test]
    fn gelu_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0.0, -10.0]));
        let y = g.gelu(x).unwrap();
        assert_eq!(g.value(y).data()[0], 0.0);
        assert!(g.value(y).data()[1].abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        let f = Unary::Gelu;
        let x = 0.5;
        let h = 1e-5;
        let numeric = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
        let analytic = f.derivative(x, f.eval(x));
        assert!(((numeric - analytic) / analytic).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let gain = g.constant(Tensor::ones(&[3]));
        let bias = g.constant(Tensor::zeros(&[3]));
        let x = g.constant(Tensor::full(&[3], 4.2));
        let y = g.layer_norm(x, 0, gain, bias, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let gain = g.constant(Tensor::ones(&[2]));
        let bias = g.constant(Tensor::zeros(&[2]));
        let x = g.constant(t(&[2], &[1.0, 3.0]));
        let y = g.layer_norm(x, 0, gain, bias, 1e-5).unwrap();
        assert!((g.value(y).data()[0] + 1.0).abs() < 1e-4);
        assert!((g.value(y).data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn backward_linear_and_square() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, -1.0]));
        let y = g.scale(x, 3.0).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0, 6.0]);
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_forward_is_reported_with_op_name() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[Real::MAX]));
        let err = g.scale(x, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "scale" }));
    }

    #[test]
    fn broadcasting_rules() {
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]), Some(vec![4, 5, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(&[2, 3], |i| i as Real));
        let b = g.constant(t(&[3], &[10.0, 20.0, 30.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
    }

    #[test]
    fn conv_transpose_with_kernel_equal_stride_tiles_blocks() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.conv_transpose2d(x, w, None, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 4]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 2.0, 4.0, 3.0, 4.0, 6.0, 8.0]);
    }
}
