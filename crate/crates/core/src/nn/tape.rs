//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` walks it once in reverse.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use super::{softplus, LEAKY_SLOPE};
use crate::error::{Result, SagaError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh(Var),
    Softplus(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    MapToTokens(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    Modulate {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    SmoothL1 {
        x: Var,
        target: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    RowJacobian {
        x: Var,
        jac: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward pass over a borrowed parameter store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.store.get(id).value,
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(SagaError::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Tensor::zeros(&[0]),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter looked up by name.
    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| SagaError::config(format!("missing parameter {name}")))?;
        Ok(self.param(id))
    }

    /// `y = x·W + b` for `x: [n×d_in]`, `W: [d_in×d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.affine(x, w, Some(b))
    }

    /// `y = x·W` without bias.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.affine(x, w, None)
    }

    fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, din) = self.value(x).dims2("linear")?;
        let (wi, dout) = self.value(w).dims2("linear")?;
        if wi != din || b.is_some_and(|b| self.value(b).len() != dout) {
            return Err(SagaError::shape(
                "linear",
                format!("x {:?}, W {:?}", self.value(x).shape(), self.value(w).shape()),
            ));
        }
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for r in 0..n {
                out[r * dout..(r + 1) * dout].copy_from_slice(bias);
            }
        }
        gemm(n, din, dout, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        let t = Tensor::new(vec![n, dout], out)?;
        self.push("linear", t, Op::Linear { x, w, b })
    }

    /// Cross-correlation of `x: [C_in×H×W]` with `k: [C_out×C_in×kh×kw]`,
    /// zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        let (ci, h, w) = match xs.as_slice() {
            [c, h, w] => (*c, *h, *w),
            s => return Err(SagaError::shape("conv2d", format!("input must be C×H×W, got {s:?}"))),
        };
        let (co, kci, kh, kw) = match ks.as_slice() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => return Err(SagaError::shape("conv2d", format!("kernel must be rank 4, got {s:?}"))),
        };
        if kci != ci || self.value(b).len() != co || stride == 0 {
            return Err(SagaError::shape(
                "conv2d",
                format!("input {xs:?}, kernel {ks:?}, bias {:?}", self.value(b).shape()),
            ));
        }
        if h < 2 || w < 2 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(SagaError::shape("conv2d", format!("input {xs:?} too small")));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let cols = im2col(self.value(x).data(), ci, h, w, kh, kw, stride, pad, ho, wo);
        let npix = ho * wo;
        let mut out = vec![0.0; co * npix];
        for (c, chunk) in out.chunks_exact_mut(npix).enumerate() {
            chunk.fill(self.value(b).data()[c]);
        }
        gemm(co, ci * kh * kw, npix, self.value(k).data(), false, &cols, false, 1.0, &mut out);
        let t = Tensor::new(vec![co, ho, wo], out)?;
        self.push(
            "conv2d",
            t,
            Op::Conv2d {
                x,
                k,
                b,
                stride,
                pad,
                cols,
            },
        )
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu_with(x, LEAKY_SLOPE)
    }

    pub fn leaky_relu_with(&mut self, x: Var, slope: f64) -> Result<Var> {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        self.push("leaky_relu", t, Op::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push("tanh", t, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = softplus(*v));
        self.push("softplus", t, Op::Softplus(x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(SagaError::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        self.push("add", t, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut t = self.value(a).clone();
        for (x, y) in t.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        self.push("mul", t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push("scale", t, Op::Scale(x, c))
    }

    /// Per-row normalization (population variance) followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.value(x).dims2("layer_norm")?;
        if d == 0 || self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(SagaError::shape("layer_norm", format!("row width {d}")));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let bb = self.value(bias).data();
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * g[c] + bb[c];
            }
        }
        let t = Tensor::new(vec![n, d], out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Scaled dot-product attention over projected `q, k, v: [N×d]`, split
    /// into `heads` contiguous column blocks; heads are concatenated back.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (n, d) = self.value(q).dims2("attention")?;
        if self.value(k).shape() != [n, d] || self.value(v).shape() != [n, d] {
            return Err(SagaError::shape("attention", "q, k, v must share shape"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(SagaError::config(format!(
                "attention width {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &qv[i * d + off..i * d + off + dh];
                for (j, pj) in p.iter_mut().enumerate() {
                    let kj = &kv[j * d + off..j * d + off + dh];
                    *pj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for pj in p.iter_mut() {
                    *pj = (*pj - m).exp();
                    z += *pj;
                }
                for pj in p.iter_mut() {
                    *pj /= z;
                }
                let oi = &mut out[i * d + off..i * d + off + dh];
                for (j, pj) in p.iter().enumerate() {
                    let vj = &vv[j * d + off..j * d + off + dh];
                    for (o, x) in oi.iter_mut().zip(vj) {
                        *o += pj * x;
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, d], out)?;
        self.push(
            "attention",
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Softmax probabilities of an attention node, `[heads][N][N]` flattened.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `[C×H×W]` feature map to `[H·W × C]` tokens, cells in row-major order.
    pub fn map_to_tokens(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        let (c, hw) = match s.as_slice() {
            [c, h, w] => (*c, h * w),
            _ => return Err(SagaError::shape("map_to_tokens", format!("got {s:?}"))),
        };
        let src = self.value(x).data();
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            for p in 0..hw {
                out[p * c + ch] = src[ch * hw + p];
            }
        }
        let t = Tensor::new(vec![hw, c], out)?;
        self.push("map_to_tokens", t, Op::MapToTokens(x))
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2("slice_cols")?;
        if start + len > d {
            return Err(SagaError::shape("slice_cols", format!("{start}+{len} > {d}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let t = Tensor::new(vec![n, len], out)?;
        self.push("slice_cols", t, Op::SliceCols { x, start })
    }

    /// `x ⊙ (1 + tanh γ) + β` with `γ, β` of width `d` shared by all rows.
    pub fn modulate(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2("modulate")?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(SagaError::shape("modulate", format!("row width {d}")));
        }
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut t = self.value(x).clone();
        for r in 0..n {
            for c in 0..d {
                let v = &mut t.data_mut()[r * d + c];
                *v = *v * (1.0 + g[c].tanh()) + bt[c];
            }
        }
        self.push("modulate", t, Op::Modulate { x, gamma, beta })
    }

    /// Elementwise Smooth-L1 against constant targets (no gradient to them).
    pub fn smooth_l1(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        if self.value(x).len() != target.len() {
            return Err(SagaError::shape("smooth_l1", "prediction/target length"));
        }
        let mut t = self.value(x).clone();
        for (v, y) in t.data_mut().iter_mut().zip(target) {
            *v = super::smooth_l1(*v, *y);
        }
        self.push(
            "smooth_l1",
            t,
            Op::SmoothL1 {
                x,
                target: target.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(SagaError::shape("mean", "empty tensor"));
        }
        let s = self.value(x).data().iter().sum::<f64>() / n as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", t, Op::Reshape(x))
    }

    /// Externally evaluated row function `y_i = f(x_i)` for `x: [n×k]`, with
    /// values `[n]` and Jacobian rows `∂y_i/∂x_i` supplied by the caller.
    pub fn row_function(&mut self, x: Var, values: Vec<f64>, jac: Vec<f64>) -> Result<Var> {
        let (n, k) = self.value(x).dims2("row_function")?;
        if values.len() != n || jac.len() != n * k {
            return Err(SagaError::shape("row_function", "values/jacobian size"));
        }
        let t = Tensor::new(vec![n], values)?;
        if !jac.iter().all(|j| j.is_finite()) {
            return Err(SagaError::NonFinite("row_function jacobian".into()));
        }
        self.push("row_function", t, Op::RowJacobian { x, jac })
    }

    /// Reverse sweep from scalar `loss`; returns gradients per parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(SagaError::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Gradients(vec![None; self.store.len()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            let gd = g.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.0[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::Linear { x, w, b } => {
                    let (n, din) = self.value(*x).dims2("linear")?;
                    let dout = self.value(*w).shape()[1];
                    let mut dx = vec![0.0; n * din];
                    gemm(n, dout, din, gd, false, self.value(*w).data(), true, 0.0, &mut dx);
                    let mut dw = vec![0.0; din * dout];
                    gemm(din, n, dout, self.value(*x).data(), true, gd, false, 0.0, &mut dw);
                    accum(&mut grads, *x, self.value(*x).shape(), dx);
                    accum(&mut grads, *w, self.value(*w).shape(), dw);
                    if let Some(b) = b {
                        let mut db = vec![0.0; dout];
                        for r in 0..n {
                            for (c, v) in db.iter_mut().enumerate() {
                                *v += gd[r * dout + c];
                            }
                        }
                        accum(&mut grads, *b, self.value(*b).shape(), db);
                    }
                }
                Op::Conv2d {
                    x,
                    k,
                    b,
                    stride,
                    pad,
                    cols,
                } => {
                    let xs = self.value(*x).shape();
                    let ks = self.value(*k).shape();
                    let (ci, h, w) = (xs[0], xs[1], xs[2]);
                    let (co, kh, kw) = (ks[0], ks[2], ks[3]);
                    let (ho, wo) = (y.shape()[1], y.shape()[2]);
                    let npix = ho * wo;
                    let kk = ci * kh * kw;
                    let mut dk = vec![0.0; co * kk];
                    gemm(co, npix, kk, gd, false, cols, true, 0.0, &mut dk);
                    let mut dcols = vec![0.0; kk * npix];
                    gemm(kk, co, npix, self.value(*k).data(), true, gd, false, 0.0, &mut dcols);
                    let dx = col2im(&dcols, ci, h, w, kh, kw, *stride, *pad, ho, wo);
                    let db: Vec<f64> = gd.chunks_exact(npix).map(|c| c.iter().sum()).collect();
                    accum(&mut grads, *x, xs, dx);
                    accum(&mut grads, *k, ks, dk);
                    accum(&mut grads, *b, self.value(*b).shape(), db);
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x).data();
                    let dx = gd
                        .iter()
                        .zip(xv)
                        .map(|(g, v)| if *v < 0.0 { g * slope } else { *g })
                        .collect();
                    accum(&mut grads, *x, y.shape(), dx);
                }
                Op::Tanh(x) => {
                    let dx = gd
                        .iter()
                        .zip(y.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    accum(&mut grads, *x, y.shape(), dx);
                }
                Op::Softplus(x) => {
                    let dx = gd
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, v)| g * sigmoid(*v))
                        .collect();
                    accum(&mut grads, *x, y.shape(), dx);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, y.shape(), gd.to_vec());
                    accum(&mut grads, *b, y.shape(), gd.to_vec());
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da = gd.iter().zip(bv).map(|(g, v)| g * v).collect();
                    let db = gd.iter().zip(av).map(|(g, v)| g * v).collect();
                    accum(&mut grads, *a, y.shape(), da);
                    accum(&mut grads, *b, y.shape(), db);
                }
                Op::Scale(x, c) => {
                    accum(&mut grads, *x, y.shape(), gd.iter().map(|g| g * c).collect());
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (n, d) = y.dims2("layer_norm")?;
                    let gv = self.value(*gain).data();
                    let mut dx = vec![0.0; n * d];
                    let mut dg = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    let mut dxh = vec![0.0; d];
                    for r in 0..n {
                        let row = r * d;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..d {
                            let gy = gd[row + c];
                            dg[c] += gy * xhat[row + c];
                            dbias[c] += gy;
                            dxh[c] = gy * gv[c];
                            s1 += dxh[c];
                            s2 += dxh[c] * xhat[row + c];
                        }
                        let k = inv_std[r] / d as f64;
                        for c in 0..d {
                            dx[row + c] = k * (d as f64 * dxh[c] - s1 - xhat[row + c] * s2);
                        }
                    }
                    accum(&mut grads, *x, y.shape(), dx);
                    accum(&mut grads, *gain, self.value(*gain).shape(), dg);
                    accum(&mut grads, *bias, self.value(*bias).shape(), dbias);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (n, d) = y.dims2("attention")?;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (qv, kv, vv) = (
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                    );
                    let mut dq = vec![0.0; n * d];
                    let mut dk = vec![0.0; n * d];
                    let mut dv = vec![0.0; n * d];
                    let mut dp = vec![0.0; n];
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..n {
                            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
                            let go = &gd[i * d + off..i * d + off + dh];
                            let mut dot = 0.0;
                            for j in 0..n {
                                let vj = &vv[j * d + off..j * d + off + dh];
                                dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                dot += p[j] * dp[j];
                                let dvj = &mut dv[j * d + off..j * d + off + dh];
                                for (o, g) in dvj.iter_mut().zip(go) {
                                    *o += p[j] * g;
                                }
                            }
                            for j in 0..n {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[i * d + off + c] += ds * kv[j * d + off + c];
                                    dk[j * d + off + c] += ds * qv[i * d + off + c];
                                }
                            }
                        }
                    }
                    accum(&mut grads, *q, y.shape(), dq);
                    accum(&mut grads, *k, y.shape(), dk);
                    accum(&mut grads, *v, y.shape(), dv);
                }
                Op::MapToTokens(x) => {
                    let xs = self.value(*x).shape();
                    let (c, hw) = (xs[0], xs[1] * xs[2]);
                    let mut dx = vec![0.0; c * hw];
                    for ch in 0..c {
                        for p in 0..hw {
                            dx[ch * hw + p] = gd[p * c + ch];
                        }
                    }
                    accum(&mut grads, *x, xs, dx);
                }
                Op::SliceCols { x, start } => {
                    let (n, d) = self.value(*x).dims2("slice_cols")?;
                    let len = y.shape()[1];
                    let mut dx = vec![0.0; n * d];
                    for r in 0..n {
                        dx[r * d + start..r * d + start + len]
                            .copy_from_slice(&gd[r * len..(r + 1) * len]);
                    }
                    accum(&mut grads, *x, self.value(*x).shape(), dx);
                }
                Op::Modulate { x, gamma, beta } => {
                    let (n, d) = y.dims2("modulate")?;
                    let xv = self.value(*x).data();
                    let gv = self.value(*gamma).data();
                    let mut dx = vec![0.0; n * d];
                    let mut dgam = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for c in 0..d {
                        let t = gv[c].tanh();
                        let mut acc = 0.0;
                        for r in 0..n {
                            let g = gd[r * d + c];
                            dx[r * d + c] = g * (1.0 + t);
                            acc += g * xv[r * d + c];
                            dbeta[c] += g;
                        }
                        dgam[c] = acc * (1.0 - t * t);
                    }
                    accum(&mut grads, *x, y.shape(), dx);
                    accum(&mut grads, *gamma, self.value(*gamma).shape(), dgam);
                    accum(&mut grads, *beta, self.value(*beta).shape(), dbeta);
                }
                Op::SmoothL1 { x, target } => {
                    let dx = gd
                        .iter()
                        .zip(self.value(*x).data().iter().zip(target))
                        .map(|(g, (p, t))| {
                            let d = p - t;
                            g * if d.abs() < 1.0 { d } else { d.signum() }
                        })
                        .collect();
                    accum(&mut grads, *x, y.shape(), dx);
                }
                Op::Sum(x) => {
                    let xs = self.value(*x).shape();
                    accum(&mut grads, *x, xs, vec![gd[0]; self.value(*x).len()]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let xs = self.value(*x).shape();
                    accum(&mut grads, *x, xs, vec![gd[0] / n as f64; n]);
                }
                Op::Reshape(x) => {
                    accum(&mut grads, *x, self.value(*x).shape(), gd.to_vec());
                }
                Op::RowJacobian { x, jac } => {
                    let (n, k) = self.value(*x).dims2("row_function")?;
                    let mut dx = vec![0.0; n * k];
                    for r in 0..n {
                        for c in 0..k {
                            dx[r * k + c] = gd[r] * jac[r * k + c];
                        }
                    }
                    accum(&mut grads, *x, self.value(*x).shape(), dx);
                }
            }
        }
        Ok(out)
    }
}

fn accum(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        slot => *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape")),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let npix = ho * wo;
    let mut cols = vec![0.0; ci * kh * kw * npix];
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let npix = ho * wo;
    let mut x = vec![0.0; ci * h * w];
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[(c * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(entries: &[(&str, Tensor)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, t) in entries {
            s.add(n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn linear_examples() {
        let s = store_with(&[
            ("W", Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap()),
            ("b", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()),
        ]);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap()).unwrap();
        let w = t.param_named("W").unwrap();
        let b = t.param_named("b").unwrap();
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 6.0]);
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(s.id("b").unwrap()).unwrap().data(), &[1.0, 1.0]);

        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::zeros(&[1, 3])).unwrap();
        let w = t.param_named("W").unwrap();
        let b = t.param_named("b").unwrap();
        assert!(matches!(t.linear(x, w, b), Err(SagaError::Shape { .. })));
    }

    #[test]
    fn conv_of_ones_touches_four_cells() {
        let s = store_with(&[
            ("k", Tensor::filled(&[1, 1, 3, 3], 1.0)),
            ("b", Tensor::zeros(&[1])),
        ]);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::filled(&[1, 2, 2], 1.0)).unwrap();
        let k = t.param_named("k").unwrap();
        let b = t.param_named("b").unwrap();
        let y = t.conv2d(x, k, b, 2, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 1]);
        assert_eq!(t.value(y).data(), &[4.0]);
    }

    #[test]
    fn conv_output_extents_halve() {
        let s = store_with(&[
            ("k", Tensor::filled(&[3, 2, 3, 3], 0.1)),
            ("b", Tensor::zeros(&[3])),
        ]);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::zeros(&[2, 7, 10])).unwrap();
        let k = t.param_named("k").unwrap();
        let b = t.param_named("b").unwrap();
        let y = t.conv2d(x, k, b, 2, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[3, 4, 5]);
        assert!(t.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_row() {
        let s = store_with(&[("g", Tensor::filled(&[3], 1.0)), ("b", Tensor::zeros(&[3]))]);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]]).unwrap()).unwrap();
        let g = t.param_named("g").unwrap();
        let b = t.param_named("b").unwrap();
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        let v = t.value(y).data();
        for (a, e) in v[..3].iter().zip([-1.22474, 0.0, 1.22474]) {
            assert!((a - e).abs() < 1e-4);
        }
        assert!(v[3..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn square_gradient_and_non_scalar_error() {
        let s = store_with(&[("x", Tensor::scalar(3.0))]);
        let mut t = Tape::new(&s);
        let x = t.param_named("x").unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[6.0]);

        let s = store_with(&[("x", Tensor::zeros(&[2]))]);
        let mut t = Tape::new(&s);
        let x = t.param_named("x").unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let s = store_with(&[("x", Tensor::scalar(3.0)), ("unused", Tensor::scalar(1.0))]);
        let mut t = Tape::new(&s);
        let x = t.param_named("x").unwrap();
        let y = t.scale(x, 2.0).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(ParamId(1)).is_none());
        let mut acc = s.clone();
        acc.accumulate(&g);
        acc.accumulate(&g);
        assert_eq!(acc.get(ParamId(0)).grad.data(), &[4.0]);
        assert_eq!(acc.get(ParamId(1)).grad.data(), &[0.0]);
    }

    #[test]
    fn non_finite_trips() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        assert!(matches!(
            t.constant(Tensor::scalar(f64::NAN)),
            Err(SagaError::NonFinite(_))
        ));
        let x = t.constant(Tensor::scalar(1e300)).unwrap();
        assert!(matches!(t.mul(x, x), Err(SagaError::NonFinite(_))));
    }

    #[test]
    fn attention_single_token_and_divisibility() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let q = t.constant(Tensor::from_rows(&[&[0.3, -1.0, 2.0, 0.5]]).unwrap()).unwrap();
        let v = t.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]).unwrap()).unwrap();
        let y = t.attention(q, q, v, 2).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(t.attention(q, q, v, 3), Err(SagaError::Config(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let data: Vec<f64> = (0..24).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.7).collect();
        let x = t.constant(Tensor::new(vec![6, 4], data).unwrap()).unwrap();
        let y = t.attention(x, x, x, 2).unwrap();
        let p = t.attention_probs(y).unwrap();
        for row in p.chunks_exact(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn map_to_tokens_is_row_major() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let data: Vec<f64> = (0..2 * 3 * 5).map(|i| i as f64).collect();
        let x = t.constant(Tensor::new(vec![2, 3, 5], data).unwrap()).unwrap();
        let y = t.map_to_tokens(x).unwrap();
        assert_eq!(t.value(y).shape(), &[15, 2]);
        // cell (1, 2) is token 7; channel 1 lives 15 values later
        assert_eq!(t.value(y).row(7), &[7.0, 22.0]);
    }
}
