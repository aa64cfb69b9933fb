use super::kernels::{col2im, im2col, ConvGeom};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::optim::loss::{cross_entropy_loss, mse_loss, ClassWeights};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<T> {
    Leaf,
    Param {
        store: u64,
        id: ParamId,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    Relu {
        x: usize,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    Tanh {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    LogSigmoid {
        x: usize,
    },
    MaxPool2d {
        x: usize,
        argmax: Vec<usize>,
    },
    AvgPool2d {
        x: usize,
        k: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    MinibatchStd {
        x: usize,
        mean: Vec<T>,
        std: Vec<T>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Reshape {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    Sum {
        x: usize,
    },
    Softmax {
        x: usize,
    },
    Loss {
        x: usize,
        grad: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so that [`Graph::backward`] can replay it
/// in reverse.
///
/// Nodes are appended in evaluation order, which is already a topological
/// order; backward walks them from the loss down to index 0 exactly once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    kink: u64,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.node(v.0)
    }

    pub(crate) fn node(&self, i: usize) -> Option<&Tensor<T>> {
        self.grads.get(i).and_then(Option::as_ref)
    }
}

/// Lazily allocated accumulator for node `j`, or None if `j` needs no gradient.
fn grad_slot<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    j: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[j].requires_grad {
        return None;
    }
    Some(grads[j].get_or_insert_with(|| vec![T::zero(); nodes[j].value.numel()]))
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0000_0100_0000_01b3)
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink: 0xcbf2_9ce4_8422_2325,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every piecewise-linear branch taken so far (relu signs,
    /// max-pool winners). Two evaluations with the same signature lie on the
    /// same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kink
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::get`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a parameter. When `track` is false, or the parameter is
    /// frozen, it enters the graph as a constant.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId, track: bool) -> Var {
        let p = store.get(id);
        let rg = track && p.requires_grad;
        self.push(
            p.tensor.clone(),
            Op::Param {
                store: store.uid(),
                id,
            },
            rg,
        )
    }

    /// Copies `v` into a new constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.input(t)
    }

    pub(crate) fn param_leaves(&self, uid: u64) -> impl Iterator<Item = (usize, ParamId)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(move |(i, n)| match n.op {
                Op::Param { store, id } if store == uid && n.requires_grad => Some((i, id)),
                _ => None,
            })
    }

    /// `x [N, in] · wᵀ [in, out] + b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", &xs, &ws));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(shape_err("linear bias", self.shape(b), &[dout]));
            }
        }
        let mut out = vec![T::zero(); n * dout];
        T::gemm(
            n,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(bv).for_each(|(o, b)| *o += *b);
            }
        }
        let rg = self.rg(x.0) || self.rg(w.0) || b.is_some_and(|b| self.rg(b.0));
        let t = Tensor::new(&[n, dout], out)?;
        Ok(self.push(
            t,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            rg,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_geom(
        &self,
        op: &str,
        x: Var,
        c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom> {
        let xs = self.shape(x);
        if xs.len() != 4 || xs[1] != c {
            return Err(Error::Shape(format!(
                "{op}: input {xs:?} does not have {c} channels in NCHW layout"
            )));
        }
        ConvGeom::new(c, xs[2], xs[3], kh, kw, stride, pad).ok_or_else(|| {
            Error::Shape(format!(
                "{op}: kernel {kh}x{kw} stride {stride} pad {pad} does not fit input {xs:?}"
            ))
        })
    }

    /// Cross-correlation with weight `[out, in, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 {
            return Err(shape_err("conv2d weight", &ws, &[0, 0, 0, 0]));
        }
        let (o, c, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let geom = self.conv_geom("conv2d", x, c, kh, kw, stride, pad)?;
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(shape_err("conv2d bias", self.shape(b), &[o]));
            }
        }
        let n = self.shape(x)[0];
        let (rows, ohw) = (geom.col_rows(), geom.col_cols());
        let in_sz = c * geom.h * geom.w;
        let mut out = vec![T::zero(); n * o * ohw];
        let mut cols = vec![T::zero(); if geom.is_pointwise() { 0 } else { rows * ohw }];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for i in 0..n {
                let xi = &xv[i * in_sz..(i + 1) * in_sz];
                let src = if geom.is_pointwise() {
                    xi
                } else {
                    im2col(xi, &geom, &mut cols);
                    &cols
                };
                T::gemm(
                    o,
                    rows,
                    ohw,
                    wv,
                    false,
                    src,
                    false,
                    &mut out[i * o * ohw..(i + 1) * o * ohw],
                    false,
                );
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (j, plane) in out.chunks_mut(ohw).enumerate() {
                    let bj = bv[j % o];
                    plane.iter_mut().for_each(|v| *v += bj);
                }
            }
        }
        let rg = self.rg(x.0) || self.rg(w.0) || b.is_some_and(|b| self.rg(b.0));
        let t = Tensor::new(&[n, o, geom.oh, geom.ow], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                geom,
            },
            rg,
        ))
    }

    /// Transposed convolution with weight `[in, out, kh, kw]`; output extent
    /// is `(h − 1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(shape_err("conv_transpose2d", &xs, &ws));
        }
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        let oh = ((h - 1) * stride + kh)
            .checked_sub(2 * pad)
            .filter(|v| *v > 0);
        let ow = ((wd - 1) * stride + kw)
            .checked_sub(2 * pad)
            .filter(|v| *v > 0);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(shape_err("conv_transpose2d", &xs, &ws));
        };
        // Geometry of the forward convolution whose adjoint this is.
        let geom = ConvGeom::new(cout, oh, ow, kh, kw, stride, pad)
            .filter(|g| g.oh == h && g.ow == wd)
            .ok_or_else(|| shape_err("conv_transpose2d", &xs, &ws))?;
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv_transpose2d bias", self.shape(b), &[cout]));
            }
        }
        let (rows, hw) = (geom.col_rows(), geom.col_cols());
        let out_sz = cout * oh * ow;
        let mut out = vec![T::zero(); n * out_sz];
        let mut cols = vec![T::zero(); rows * hw];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for i in 0..n {
                let xi = &xv[i * cin * hw..(i + 1) * cin * hw];
                T::gemm(rows, cin, hw, wv, true, xi, false, &mut cols, false);
                col2im(&cols, &geom, &mut out[i * out_sz..(i + 1) * out_sz]);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (j, plane) in out.chunks_mut(oh * ow).enumerate() {
                    let bj = bv[j % cout];
                    plane.iter_mut().for_each(|v| *v += bj);
                }
            }
        }
        let rg = self.rg(x.0) || self.rg(w.0) || b.is_some_and(|b| self.rg(b.0));
        let t = Tensor::new(&[n, cout, oh, ow], out)?;
        Ok(self.push(
            t,
            Op::ConvTranspose2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                geom,
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let t = Tensor::new(src.shape(), src.data().iter().map(|v| f(*v)).collect())
            .expect("same shape");
        let rg = self.rg(x.0);
        self.push(t, op, rg)
    }

    fn record_signs(&mut self, x: Var) {
        let mut h = self.kink;
        for v in self.value(x).data() {
            h = mix(h, (*v > T::zero()) as u64);
        }
        self.kink = h;
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.record_signs(x);
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            Op::Relu { x: x.0 },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.record_signs(x);
        let s = T::lit(slope);
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu { x: x.0, slope: s },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x: x.0 })
    }

    /// `ln σ(x)`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.min(T::zero()) - (-v.abs()).exp().ln_1p(),
            Op::LogSigmoid { x: x.0 },
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v * c, Op::Scale { x: x.0, c })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Max pooling over `k×k` windows; padded cells never win.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || pad >= k {
            return Err(Error::Shape(format!(
                "max_pool2d: input {xs:?} kernel {k} pad {pad}"
            )));
        }
        let c = xs[1];
        let geom = self.conv_geom("max_pool2d", x, c, k, k, stride, pad)?;
        let (n, h, w, oh, ow) = (xs[0], geom.h, geom.w, geom.oh, geom.ow);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let mut kink = self.kink;
        {
            let xv = self.value(x).data();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best: Option<(usize, T)> = None;
                        for ki in 0..k {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = base + iy as usize * w + ix as usize;
                                if best.is_none_or(|(_, b)| xv[idx] > b) {
                                    best = Some((idx, xv[idx]));
                                }
                            }
                        }
                        let (idx, v) = best.expect("pad < k leaves a real cell in every window");
                        kink = mix(kink, idx as u64);
                        out.push(v);
                        argmax.push(idx);
                    }
                }
            }
        }
        self.kink = kink;
        let rg = self.rg(x.0);
        let t = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(t, Op::MaxPool2d { x: x.0, argmax }, rg))
    }

    /// Non-overlapping `k×k` average pooling; trailing rows/columns that do
    /// not fill a window are dropped.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || k == 0 || xs[2] < k || xs[3] < k {
            return Err(Error::Shape(format!("avg_pool2d: input {xs:?} kernel {k}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / k, w / k);
        let inv = T::one() / T::lit((k * k) as f64);
        let mut out = vec![T::zero(); n * c * oh * ow];
        {
            let xv = self.value(x).data();
            for plane in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = T::zero();
                        for ki in 0..k {
                            let row = plane * h * w + (oy * k + ki) * w + ox * k;
                            for v in &xv[row..row + k] {
                                s += *v;
                            }
                        }
                        out[(plane * oh + oy) * ow + ox] = s * inv;
                    }
                }
            }
        }
        let rg = self.rg(x.0);
        let t = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(t, Op::AvgPool2d { x: x.0, k }, rg))
    }

    /// `[N, C, H, W] → [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::Shape(format!(
                "global_avg_pool: expected NCHW, got {xs:?}"
            )));
        }
        let hw = xs[2] * xs[3];
        let inv = T::one() / T::lit(hw as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(x.0);
        let t = Tensor::new(&xs[..2], out)?;
        Ok(self.push(t, Op::GlobalAvgPool { x: x.0 }, rg))
    }

    /// Appends one channel holding the batch's average per-feature standard
    /// deviation, `mean_f sqrt(var_n(x[n, f]) + eps)`, to `[N, C, H, W]`.
    pub fn minibatch_std(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::Shape(format!(
                "minibatch_std: expected NCHW, got {xs:?}"
            )));
        }
        let (n, hw) = (xs[0], xs[2] * xs[3]);
        let feat = xs[1] * hw;
        let xv = self.value(x).data();
        let inv_n = T::one() / T::lit(n as f64);
        let mut mean = vec![T::zero(); feat];
        for row in xv.chunks(feat) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += *v * inv_n);
        }
        let mut var = vec![T::zero(); feat];
        for row in xv.chunks(feat) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (*v - *m) * (*v - *m) * inv_n;
            }
        }
        let std: Vec<T> = var.iter().map(|v| (*v + T::lit(eps)).sqrt()).collect();
        let stat = std.iter().copied().sum::<T>() / T::lit(feat as f64);
        let mut out = Vec::with_capacity(n * (feat + hw));
        for row in xv.chunks(feat) {
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(stat, hw));
        }
        let rg = self.rg(x.0);
        let t = Tensor::new(&[n, xs[1] + 1, xs[2], xs[3]], out)?;
        Ok(self.push(t, Op::MinibatchStd { x: x.0, mean, std }, rg))
    }

    /// Per-channel batch normalization over `[N, C, ...]`.
    ///
    /// In train mode the batch statistics normalize the input and the running
    /// estimates move by `momentum` (running variance uses the unbiased batch
    /// variance). In eval mode the running estimates are used, which makes
    /// the op a fixed affine map.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        train: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::Shape(format!(
                "batch_norm2d: input {xs:?} has no channel axis"
            )));
        }
        let (n, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        for (what, s) in [
            ("gamma", self.shape(gamma)),
            ("beta", self.shape(beta)),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ] {
            if s != [c] {
                return Err(Error::Shape(format!(
                    "batch_norm2d: {what} {s:?} for {c} channels"
                )));
            }
        }
        let m = n * spatial;
        if train && m < 1 {
            return Err(Error::Shape("batch_norm2d: empty batch".into()));
        }
        let eps = T::lit(eps);
        let mom = T::lit(momentum);
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let idx = |s: usize, j: usize| (s * c + ch) * spatial + j;
            let (mean, var) = if train {
                let mf = T::lit(m as f64);
                let mut sum = T::zero();
                for s in 0..n {
                    for j in 0..spatial {
                        sum += xv[idx(s, j)];
                    }
                }
                let mean = sum / mf;
                let mut sq = T::zero();
                for s in 0..n {
                    for j in 0..spatial {
                        let d = xv[idx(s, j)] - mean;
                        sq += d * d;
                    }
                }
                let var = sq / mf;
                let unbiased = if m > 1 {
                    sq / T::lit((m - 1) as f64)
                } else {
                    var
                };
                let rm = &mut running_mean.data_mut()[ch];
                *rm = (T::one() - mom) * *rm + mom * mean;
                let rv = &mut running_var.data_mut()[ch];
                *rv = (T::one() - mom) * *rv + mom * unbiased;
                (mean, var)
            } else {
                (running_mean.data()[ch], running_var.data()[ch])
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for s in 0..n {
                for j in 0..spatial {
                    let i = idx(s, j);
                    let xh = (xv[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = gv[ch] * xh + bv[ch];
                }
            }
        }
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        let t = Tensor::new(&xs, out)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                train,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x.0);
        Ok(self.push(t, Op::Reshape { x: x.0 }, rg))
    }

    /// `[N, ...] → [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let n = xs[0];
        let rest = xs[1..].iter().product::<usize>();
        self.reshape(x, &[n, rest])
    }

    fn binary(&mut self, op: &str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        let av = self.value(a);
        let bv = self.value(b);
        Tensor::new(
            av.shape(),
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| f(*x, *y))
                .collect(),
        )
    }

    /// Elementwise sum of equal shapes (the residual connection).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn residual_add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add(a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row-wise softmax over the last axis of a `[N, K]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[1] == 0 {
            return Err(Error::Shape(format!(
                "softmax: expected [N, K], got {xs:?}"
            )));
        }
        let k = xs[1];
        let mut out = Vec::with_capacity(xs[0] * k);
        for row in self.value(x).data().chunks(k) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|v| (*v - mx).exp()).collect();
            let z: T = e.iter().copied().sum();
            out.extend(e.into_iter().map(|v| v / z));
        }
        let rg = self.rg(x.0);
        let t = Tensor::new(&xs, out)?;
        Ok(self.push(t, Op::Softmax { x: x.0 }, rg))
    }

    /// Mean squared error against constant targets; `pred` may be `[N]` or
    /// `[N, 1]`.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let out = mse_loss(self.value(pred).data(), target)?;
        let rg = self.rg(pred.0);
        Ok(self.push(
            Tensor::scalar(out.value),
            Op::Loss {
                x: pred.0,
                grad: out.grad,
            },
            rg,
        ))
    }

    /// Weighted cross-entropy of `[N, K]` logits against class indices.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        classes: &[usize],
        weights: &ClassWeights,
    ) -> Result<Var> {
        let xs = self.shape(logits).to_vec();
        if xs.len() != 2 {
            return Err(Error::Shape(format!(
                "cross_entropy: expected [N, K] logits, got {xs:?}"
            )));
        }
        let out = cross_entropy_loss(self.value(logits).data(), xs[1], classes, weights)?;
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(out.value),
            Op::Loss {
                x: logits.0,
                grad: out.grad,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite(format!("loss value {}", lv.item())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape(), g).expect("gradient has node shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |j: usize| nodes[j].value.data();
        macro_rules! slot {
            ($j:expr) => {
                grad_slot(nodes, grads, $j)
            };
        }
        let y = val(i);
        match &nodes[i].op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Linear { x, w, b } => {
                let xs = nodes[*x].value.shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = nodes[*w].value.shape()[0];
                if let Some(dx) = slot!(*x) {
                    T::gemm(n, dout, din, g, false, val(*w), false, dx, true);
                }
                if let Some(dw) = slot!(*w) {
                    T::gemm(dout, n, din, g, true, val(*x), false, dw, true);
                }
                if let Some(b) = b {
                    if let Some(db) = slot!(*b) {
                        for row in g.chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(d, r)| *d += *r);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let n = nodes[*x].value.shape()[0];
                let o = nodes[*w].value.shape()[0];
                let (rows, ohw) = (geom.col_rows(), geom.col_cols());
                let in_sz = geom.c * geom.h * geom.w;
                let need_w = nodes[*w].requires_grad;
                let need_x = nodes[*x].requires_grad;
                let mut cols = vec![T::zero(); rows * ohw];
                if need_w {
                    let xv = val(*x);
                    let dw = slot!(*w).expect("checked");
                    for s in 0..n {
                        let xi = &xv[s * in_sz..(s + 1) * in_sz];
                        let src: &[T] = if geom.is_pointwise() {
                            xi
                        } else {
                            im2col(xi, geom, &mut cols);
                            &cols
                        };
                        T::gemm(
                            o,
                            ohw,
                            rows,
                            &g[s * o * ohw..(s + 1) * o * ohw],
                            false,
                            src,
                            true,
                            dw,
                            true,
                        );
                    }
                }
                if need_x {
                    let wv = val(*w);
                    let dx = slot!(*x).expect("checked");
                    for s in 0..n {
                        let gs = &g[s * o * ohw..(s + 1) * o * ohw];
                        let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
                        if geom.is_pointwise() {
                            T::gemm(rows, o, ohw, wv, true, gs, false, dxs, true);
                        } else {
                            T::gemm(rows, o, ohw, wv, true, gs, false, &mut cols, false);
                            col2im(&cols, geom, dxs);
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = slot!(*b) {
                        for (j, plane) in g.chunks(ohw).enumerate() {
                            db[j % o] += plane.iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let xs = nodes[*x].value.shape();
                let (n, cin) = (xs[0], xs[1]);
                let (rows, hw) = (geom.col_rows(), geom.col_cols());
                let out_sz = geom.c * geom.h * geom.w;
                let mut cols = vec![T::zero(); rows * hw];
                let need_w = nodes[*w].requires_grad;
                let need_x = nodes[*x].requires_grad;
                for s in 0..n {
                    if !(need_w || need_x) {
                        break;
                    }
                    im2col(&g[s * out_sz..(s + 1) * out_sz], geom, &mut cols);
                    if need_x {
                        let dx = slot!(*x).expect("checked");
                        T::gemm(
                            cin,
                            rows,
                            hw,
                            val(*w),
                            false,
                            &cols,
                            false,
                            &mut dx[s * cin * hw..(s + 1) * cin * hw],
                            true,
                        );
                    }
                    if need_w {
                        let xi = &val(*x)[s * cin * hw..(s + 1) * cin * hw];
                        let dw = slot!(*w).expect("checked");
                        T::gemm(cin, hw, rows, xi, false, &cols, true, dw, true);
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = slot!(*b) {
                        let cout = geom.c;
                        for (j, plane) in g.chunks(geom.h * geom.w).enumerate() {
                            db[j % cout] += plane.iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = val(*x);
                if let Some(dx) = slot!(*x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > T::zero() {
                            *d += *gi;
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = val(*x);
                if let Some(dx) = slot!(*x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if *xi > T::zero() { *gi } else { *gi * *slope };
                    }
                }
            }
            Op::Tanh { x } => {
                if let Some(dx) = slot!(*x) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += *gi * (T::one() - *yi * *yi);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if let Some(dx) = slot!(*x) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += *gi * *yi * (T::one() - *yi);
                    }
                }
            }
            Op::LogSigmoid { x } => {
                let xv = val(*x);
                if let Some(dx) = slot!(*x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += *gi * sigmoid(-*xi);
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += *gi * *c);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(dx) = slot!(*x) {
                    for (gi, &src) in g.iter().zip(argmax) {
                        dx[src] += *gi;
                    }
                }
            }
            Op::AvgPool2d { x, k } => {
                let xs = nodes[*x].value.shape();
                let (h, w) = (xs[2], xs[3]);
                let (oh, ow) = (h / k, w / k);
                let inv = T::one() / T::lit((k * k) as f64);
                if let Some(dx) = slot!(*x) {
                    for plane in 0..xs[0] * xs[1] {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(plane * oh + oy) * ow + ox] * inv;
                                for ki in 0..*k {
                                    let row = plane * h * w + (oy * k + ki) * w + ox * k;
                                    dx[row..row + k].iter_mut().for_each(|d| *d += gv);
                                }
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                let xs = nodes[*x].value.shape();
                let hw = xs[2] * xs[3];
                let inv = T::one() / T::lit(hw as f64);
                if let Some(dx) = slot!(*x) {
                    for (plane, gi) in dx.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|d| *d += *gi * inv);
                    }
                }
            }
            Op::MinibatchStd { x, mean, std } => {
                let feat = mean.len();
                let n = nodes[*x].value.shape()[0];
                let out_row = g.len() / n;
                let gs: T = g.chunks(out_row).flat_map(|r| &r[feat..]).copied().sum();
                let scale = gs / T::lit((n * feat) as f64);
                let xv = val(*x);
                if let Some(dx) = slot!(*x) {
                    for ((drow, grow), xrow) in dx
                        .chunks_mut(feat)
                        .zip(g.chunks(out_row))
                        .zip(xv.chunks(feat))
                    {
                        for f in 0..feat {
                            drow[f] += grow[f] + scale * (xrow[f] - mean[f]) / std[f];
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = nodes[*x].value.shape();
                let (n, c) = (xs[0], xs[1]);
                let spatial: usize = xs[2..].iter().product();
                let m = T::lit((n * spatial) as f64);
                let gv = val(*gamma).to_vec();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * spatial;
                        for j in base..base + spatial {
                            sum_g[ch] += g[j];
                            sum_gx[ch] += g[j] * xhat[j];
                        }
                    }
                }
                if let Some(dg) = slot!(*gamma) {
                    dg.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += *v);
                }
                if let Some(db) = slot!(*beta) {
                    db.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += *v);
                }
                if let Some(dx) = slot!(*x) {
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * spatial;
                            let scale = gv[ch] * inv_std[ch];
                            for j in base..base + spatial {
                                dx[j] += if *train {
                                    scale * (g[j] - sum_g[ch] / m - xhat[j] * sum_gx[ch] / m)
                                } else {
                                    scale * g[j]
                                };
                            }
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += *gi);
                }
            }
            Op::Add { a, b } => {
                for j in [*a, *b] {
                    if let Some(d) = slot!(j) {
                        d.iter_mut().zip(g).for_each(|(d, gi)| *d += *gi);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(da) = slot!(*a) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += *gi * *bi;
                    }
                }
                if let Some(db) = slot!(*b) {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += *gi * *ai;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Softmax { x } => {
                let k = nodes[*x].value.shape()[1];
                if let Some(dx) = slot!(*x) {
                    for ((drow, grow), yrow) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let dot: T = grow.iter().zip(yrow).map(|(a, b)| *a * *b).sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += *yi * (*gi - dot);
                        }
                    }
                }
            }
            Op::Loss { x, grad } => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().zip(grad).for_each(|(d, v)| *d += g[0] * *v);
                }
            }
        }
    }
}
