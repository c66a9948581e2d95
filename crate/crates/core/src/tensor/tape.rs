//! Reverse-mode autodiff tape.
//!
//! Every op appends one node holding its output value. Nodes are created in
//! dependency order, so a single reverse sweep over the node list is a valid
//! topological traversal. Values are never mutated after creation.

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax normalization direction over the last two dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Each row (last axis) sums to one.
    Rows,
    /// Each column (second-to-last axis) sums to one.
    Cols,
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Reshape { a: Var },
    Softmax { a: Var, axis: SoftmaxAxis },
    Conv2d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    Relu { a: Var },
    Sigmoid { a: Var },
    AddConst { a: Var },
    Scale { a: Var, c: T },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    GlobalAvgPool { a: Var },
    Upsample { a: Var },
    MaxPool { a: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, inv_std: Vec<T>, xhat: Vec<T> },
    Affine { x: Var, gamma: Var, beta: Var, inv_std: Vec<T>, xhat: Vec<T> },
    Sum { a: Var },
    Mean { a: Var },
    BceWithLogits { z: Var, target: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-channel statistics measured by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (`n − 1`) variance, as used for running estimates.
    pub var: Vec<T>,
}

/// The tape: an append-only list of nodes plus gradients from the last
/// [`Graph::backward`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass. `None` when `v` does not require
    /// gradients; zeros when it does but was not on the loss path.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        if !self.rg(v) {
            return None;
        }
        let shape = self.shape(v);
        Some(match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_vec(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        })
    }

    // ---------------------------------------------------------------- linear algebra

    /// Matrix product. Supports `[m,k]·[k,n]`, `[B,m,k]·[B,k,n]` and
    /// `[B,m,k]·[k,n]` (right operand shared across the batch).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n, b_batched) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (1, sa[0], sa[1], sb[1], false),
            (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => (sa[0], sa[1], sa[2], sb[2], true),
            (3, 2) if sa[2] == sb[0] => (sa[0], sa[1], sa[2], sb[1], false),
            _ => return Err(shape_err!("matmul: incompatible shapes {sa:?} and {sb:?}")),
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let boff = if b_batched { bi * k * n } else { 0 };
            kernels::gemm_nn(&av[bi * m * k..], &bv[boff..], &mut out[bi * m * n..], m, k, n);
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::MatMul { a, b }, rg))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(shape_err!("transpose needs rank >= 2, got {s:?}"));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = s.iter().product::<usize>() / (r * c);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(src.len());
        for bi in 0..batch {
            out.extend(kernels::transpose(&src[bi * r * c..(bi + 1) * r * c], r, c));
        }
        let mut shape = s.clone();
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Transpose { a }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Max-subtracted softmax over rows or columns of the last two dimensions.
    pub fn softmax(&mut self, a: Var, axis: SoftmaxAxis) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(shape_err!("softmax needs rank >= 2, got {s:?}"));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let mut out = self.value(a).data().to_vec();
        for mat in out.chunks_mut(m * n) {
            for_each_slice(m, n, axis, |idx| {
                let mx = idx.clone().map(|i| mat[i]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for i in idx.clone() {
                    let e = (mat[i] - mx).exp();
                    mat[i] = e;
                    total += e;
                }
                for i in idx {
                    mat[i] /= total;
                }
            });
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&s, out)?, Op::Softmax { a, axis }, rg))
    }

    // ---------------------------------------------------------------- convolution & pooling

    /// 2-D cross-correlation (the kernel is not flipped) with zero padding.
    /// `x: [B,C,H,W]`, `w: [O,C,kh,kw]`, optional `bias: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(shape_err!("conv2d: input {sx:?} incompatible with kernel {sw:?}"));
        }
        if stride == 0 {
            return Err(arg_err!("conv2d: stride must be positive"));
        }
        let (bsz, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(shape_err!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{} (input {sx:?})",
                h + 2 * pad,
                wd + 2 * pad
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(shape_err!("conv2d: bias {:?} does not match {o} output channels", self.shape(b)));
            }
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let (rows, hw) = (geom.col_rows(), geom.col_cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); bsz * o * hw];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * hw] };
        for bi in 0..bsz {
            let img = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
            let dst = &mut out[bi * o * hw..(bi + 1) * o * hw];
            if geom.is_pointwise() {
                kernels::gemm_nn(wv, img, dst, o, rows, hw);
            } else {
                kernels::im2col(img, &geom, &mut cols);
                kernels::gemm_nn(wv, &cols, dst, o, rows, hw);
            }
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (oc, plane) in dst.chunks_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bv[oc]);
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|b| self.rg(b));
        let t = Tensor::from_vec(&[bsz, o, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, bias, geom }, rg))
    }

    /// Max pooling with implicit `-inf` padding. Ties resolve to the first
    /// maximal element in scan order.
    pub fn max_pool2d(&mut self, a: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || k == 0 || stride == 0 || pad >= k {
            return Err(arg_err!("max_pool2d: bad arguments k={k} stride={stride} pad={pad} for {s:?}"));
        }
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(shape_err!("max_pool2d: window {k} larger than padded input {s:?}"));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(bc * ho * wo);
        let mut argmax = Vec::with_capacity(bc * ho * wo);
        for p in 0..bc {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut at = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if at == usize::MAX || src[idx] > best {
                                best = src[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(at);
                }
            }
        }
        let rg = self.rg(a);
        let t = Tensor::from_vec(&[s[0], s[1], ho, wo], out)?;
        Ok(self.push(t, Op::MaxPool { a, argmax }, rg))
    }

    /// Mean over the spatial dimensions: `[B,C,H,W] → [B,C,1,1]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(shape_err!("global_avg_pool expects [B,C,H,W], got {s:?}"));
        }
        let hw = s[2] * s[3];
        let inv = T::one() / T::of(hw as f64);
        let out = self.value(a).data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(a);
        let t = Tensor::from_vec(&[s[0], s[1], 1, 1], out)?;
        Ok(self.push(t, Op::GlobalAvgPool { a }, rg))
    }

    /// Bilinear resize of `[B,C,h,w]` to `[B,C,out_h,out_w]` with half-pixel
    /// centers (align-corners = false), edge-clamped.
    pub fn bilinear_upsample(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if out_h == 0 || out_w == 0 {
            return Err(arg_err!("bilinear_upsample: target {out_h}x{out_w} must be positive"));
        }
        if s.len() != 4 {
            return Err(shape_err!("bilinear_upsample expects [B,C,H,W], got {s:?}"));
        }
        let (h, w) = (s[2], s[3]);
        if out_h < h || out_w < w {
            return Err(arg_err!("bilinear_upsample: target {out_h}x{out_w} smaller than input {h}x{w}"));
        }
        let ty = kernels::bilinear_taps(h, out_h);
        let tx = kernels::bilinear_taps(w, out_w);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(s[0] * s[1] * out_h * out_w);
        for plane in src.chunks(h * w) {
            for &(y0, y1, fy) in &ty {
                let fy = T::of(fy);
                for &(x0, x1, fx) in &tx {
                    let fx = T::of(fx);
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
        let rg = self.rg(a);
        let t = Tensor::from_vec(&[s[0], s[1], out_h, out_w], out)?;
        Ok(self.push(t, Op::Upsample { a }, rg))
    }

    // ---------------------------------------------------------------- pointwise

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(T::zero()));
        let rg = self.rg(a);
        self.push(t, Op::Relu { a }, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid { a }, rg)
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(t, Op::AddConst { a }, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(t, Op::Scale { a, c }, rg)
    }

    // ---------------------------------------------------------------- combination

    /// Elementwise sum. Operands have equal rank; a dimension of size 1 on
    /// either side broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, |x, y| x + y, "add")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, |x, y| x * y, "mul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| arg_err!("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    fn broadcast_binary(&self, a: Var, b: Var, f: impl Fn(T, T) -> T, what: &str) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::from_vec(ta.shape(), data);
        }
        let plan = Broadcast::new(ta.shape(), tb.shape())
            .ok_or_else(|| shape_err!("{what}: shapes {:?} and {:?} do not match", ta.shape(), tb.shape()))?;
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = Vec::with_capacity(plan.numel());
        plan.for_each(|_, ia, ib| out.push(f(ad[ia], bd[ib])));
        Tensor::from_vec(&plan.out, out)
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| arg_err!("concat of an empty list"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err!("concat: axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let same =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(shape_err!("concat on axis {axis}: {first:?} vs {s:?}"));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// The sub-range `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(shape_err!("slice {start}..{} on axis {axis} of {s:?}", start + len));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Slice { a, axis, start }, rg))
    }

    // ---------------------------------------------------------------- normalization

    /// Batch normalization from the statistics of `x` itself (training mode).
    /// Normalizes each channel (dim 1) over all other dimensions.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let (c, inner, outer) = self.channel_layout(x, gamma, beta)?;
        let n = inner * outer;
        let xv = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for o in 0..outer {
                s += xv[(o * c + ch) * inner..(o * c + ch + 1) * inner].iter().copied().sum::<T>();
            }
            mean[ch] = s / T::of(n as f64);
            let mut ss = T::zero();
            for o in 0..outer {
                for &v in &xv[(o * c + ch) * inner..(o * c + ch + 1) * inner] {
                    let d = v - mean[ch];
                    ss += d * d;
                }
            }
            var[ch] = ss / T::of(n as f64);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| (v + T::of(eps)).sqrt().recip()).collect();
        let unbiased = var.iter().map(|&v| if n > 1 { v * T::of(n as f64 / (n - 1) as f64) } else { v }).collect();
        let (out, xhat) = self.normalize_affine(x, gamma, beta, &mean, &inv_std, c, inner, outer);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        let v = self.push(Tensor::from_vec(&shape, out)?, Op::BatchNorm { x, gamma, beta, inv_std, xhat }, rg);
        Ok((v, BatchStats { mean, var: unbiased }))
    }

    /// Batch normalization from fixed running statistics (inference mode).
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (c, inner, outer) = self.channel_layout(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err!("batch_norm_infer: running stats do not have {c} channels"));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| (v + T::of(eps)).sqrt().recip()).collect();
        let (out, xhat) = self.normalize_affine(x, gamma, beta, running_mean, &inv_std, c, inner, outer);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Affine { x, gamma, beta, inv_std, xhat }, rg))
    }

    fn channel_layout(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(shape_err!("batch norm needs rank >= 2, got {s:?}"));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err!(
                "batch norm: scale {:?} / shift {:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        Ok((c, s[2..].iter().product(), s[0]))
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize_affine(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        c: usize,
        inner: usize,
        outer: usize,
    ) -> (Vec<T>, Vec<T>) {
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(xv.len());
        let mut xhat = Vec::with_capacity(xv.len());
        for o in 0..outer {
            for ch in 0..c {
                for &v in &xv[(o * c + ch) * inner..(o * c + ch + 1) * inner] {
                    let h = (v - mean[ch]) * inv_std[ch];
                    xhat.push(h);
                    out.push(gv[ch] * h + bv[ch]);
                }
            }
        }
        (out, xhat)
    }

    // ---------------------------------------------------------------- reductions & losses

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean { a }, rg)
    }

    /// Mean binary cross-entropy on logits, in the overflow-free form
    /// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, z: Var, target: &Tensor<T>) -> Result<Var> {
        let zt = self.value(z);
        if zt.numel() != target.numel() {
            return Err(shape_err!("bce: logits {:?} vs target {:?}", zt.shape(), target.shape()));
        }
        let n = T::of(zt.numel() as f64);
        let total: T = zt
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let rg = self.rg(z);
        Ok(self.push(Tensor::scalar(total / n), Op::BceWithLogits { z, target: target.data().to_vec() }, rg))
    }

    // ---------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across every
    /// use of a value; the previous backward's gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(arg_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut updates: Vec<(Var, Vec<T>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k) = if sa.len() == 2 { (1, sa[0], sa[1]) } else { (sa[0], sa[1], sa[2]) };
                let n = *sb.last().unwrap();
                let b_batched = sb.len() == 3;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        let boff = if b_batched { bi * k * n } else { 0 };
                        kernels::gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bv[boff..boff + k * n],
                            &mut da[bi * m * k..],
                            m,
                            n,
                            k,
                        );
                    }
                    updates.push((*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); self.value(*b).numel()];
                    for bi in 0..batch {
                        let boff = if b_batched { bi * k * n } else { 0 };
                        kernels::gemm_tn(
                            &av[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut db[boff..],
                            k,
                            m,
                            n,
                        );
                    }
                    updates.push((*b, db));
                }
            }
            Op::Transpose { a } => {
                let s = out.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let mut d = Vec::with_capacity(g.len());
                for chunk in g.chunks(r * c) {
                    d.extend(kernels::transpose(chunk, r, c));
                }
                updates.push((*a, d));
            }
            Op::Reshape { a } => updates.push((*a, g.to_vec())),
            Op::Softmax { a, axis } => {
                let s = out.shape();
                let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                let y = out.data();
                let mut d = vec![T::zero(); y.len()];
                for (mi, dmat) in d.chunks_mut(m * n).enumerate() {
                    let base = mi * m * n;
                    for_each_slice(m, n, *axis, |idx| {
                        let dot: T = idx.clone().map(|j| g[base + j] * y[base + j]).sum();
                        for j in idx {
                            dmat[j] = y[base + j] * (g[base + j] - dot);
                        }
                    });
                }
                updates.push((*a, d));
            }
            Op::Conv2d { x, w, bias, geom } => {
                let o = self.shape(*w)[0];
                let bsz = self.shape(*x)[0];
                let (rows, hw) = (geom.col_rows(), geom.col_cols());
                let chw = geom.c * geom.h * geom.w;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut cols = vec![T::zero(); rows * hw];
                let mut dw = self.rg(*w).then(|| vec![T::zero(); o * rows]);
                let mut dx = self.rg(*x).then(|| vec![T::zero(); bsz * chw]);
                for bi in 0..bsz {
                    let gy = &g[bi * o * hw..(bi + 1) * o * hw];
                    if let Some(dw) = dw.as_mut() {
                        let img = &xv[bi * chw..(bi + 1) * chw];
                        if geom.is_pointwise() {
                            kernels::gemm_nt(gy, img, dw, o, hw, rows);
                        } else {
                            kernels::im2col(img, geom, &mut cols);
                            kernels::gemm_nt(gy, &cols, dw, o, hw, rows);
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dst = &mut dx[bi * chw..(bi + 1) * chw];
                        if geom.is_pointwise() {
                            kernels::gemm_tn(wv, gy, dst, rows, o, hw);
                        } else {
                            cols.iter_mut().for_each(|v| *v = T::zero());
                            kernels::gemm_tn(wv, gy, &mut cols, rows, o, hw);
                            kernels::col2im(&cols, geom, dst);
                        }
                    }
                }
                if let Some(b) = bias {
                    if self.rg(*b) {
                        let mut db = vec![T::zero(); o];
                        for bi in 0..bsz {
                            for (oc, plane) in g[bi * o * hw..(bi + 1) * o * hw].chunks(hw).enumerate() {
                                db[oc] += plane.iter().copied().sum::<T>();
                            }
                        }
                        updates.push((*b, db));
                    }
                }
                if let Some(dw) = dw {
                    updates.push((*w, dw));
                }
                if let Some(dx) = dx {
                    updates.push((*x, dx));
                }
            }
            Op::Relu { a } => {
                let xv = self.value(*a).data();
                let d = g.iter().zip(xv).map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() }).collect();
                updates.push((*a, d));
            }
            Op::Sigmoid { a } => {
                let d = g.iter().zip(out.data()).map(|(&gv, &y)| gv * y * (T::one() - y)).collect();
                updates.push((*a, d));
            }
            Op::AddConst { a } => updates.push((*a, g.to_vec())),
            Op::Scale { a, c } => updates.push((*a, g.iter().map(|&v| v * *c).collect())),
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        updates.push((v, self.reduce_to(out.shape(), v, g, |_| T::one())));
                    }
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.rg(v) {
                        updates.push((v, self.mul_grad(out.shape(), v, other, g)));
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis] * inner;
                    if self.rg(x) {
                        let mut d = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let base = o * s[*axis] * inner + offset;
                            d.extend_from_slice(&g[base..base + len]);
                        }
                        updates.push((x, d));
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let s = self.shape(*a);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let len = out.shape()[*axis] * inner;
                let mut d = vec![T::zero(); self.value(*a).numel()];
                for o in 0..outer {
                    let base = (o * s[*axis] + start) * inner;
                    d[base..base + len].copy_from_slice(&g[o * len..(o + 1) * len]);
                }
                updates.push((*a, d));
            }
            Op::GlobalAvgPool { a } => {
                let s = self.shape(*a);
                let hw = s[2] * s[3];
                let inv = T::one() / T::of(hw as f64);
                let mut d = Vec::with_capacity(self.value(*a).numel());
                for &gv in g {
                    d.extend(std::iter::repeat(gv * inv).take(hw));
                }
                updates.push((*a, d));
            }
            Op::Upsample { a } => {
                let s = self.shape(*a);
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (out.shape()[2], out.shape()[3]);
                let ty = kernels::bilinear_taps(h, oh);
                let tx = kernels::bilinear_taps(w, ow);
                let mut d = vec![T::zero(); self.value(*a).numel()];
                for (p, plane) in d.chunks_mut(h * w).enumerate() {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        let fy = T::of(fy);
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let fx = T::of(fx);
                            let gv = gp[oy * ow + ox];
                            let (top, bot) = (gv * (T::one() - fy), gv * fy);
                            plane[y0 * w + x0] += top * (T::one() - fx);
                            plane[y0 * w + x1] += top * fx;
                            plane[y1 * w + x0] += bot * (T::one() - fx);
                            plane[y1 * w + x1] += bot * fx;
                        }
                    }
                }
                updates.push((*a, d));
            }
            Op::MaxPool { a, argmax } => {
                let mut d = vec![T::zero(); self.value(*a).numel()];
                for (&gv, &idx) in g.iter().zip(argmax) {
                    d[idx] += gv;
                }
                updates.push((*a, d));
            }
            Op::BatchNorm { x, gamma, beta, inv_std, xhat } => {
                let (c, inner, outer) = self.channel_layout(*x, *gamma, *beta)?;
                let gv = self.value(*gamma).data();
                let (dgamma, dbeta) = affine_param_grads(g, xhat, c, inner, outer);
                if self.rg(*x) {
                    // dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), dxhat = g·γ
                    let n = T::of((inner * outer) as f64);
                    let mut dx = vec![T::zero(); g.len()];
                    for ch in 0..c {
                        let k = inv_std[ch] / n;
                        let (sum_d, sum_dx) = (dbeta[ch] * gv[ch], dgamma[ch] * gv[ch]);
                        for o in 0..outer {
                            let r = (o * c + ch) * inner..(o * c + ch + 1) * inner;
                            for j in r {
                                dx[j] = k * (n * g[j] * gv[ch] - sum_d - xhat[j] * sum_dx);
                            }
                        }
                    }
                    updates.push((*x, dx));
                }
                updates.push((*gamma, dgamma));
                updates.push((*beta, dbeta));
            }
            Op::Affine { x, gamma, beta, inv_std, xhat } => {
                let (c, inner, outer) = self.channel_layout(*x, *gamma, *beta)?;
                let gv = self.value(*gamma).data();
                let (dgamma, dbeta) = affine_param_grads(g, xhat, c, inner, outer);
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for o in 0..outer {
                        for ch in 0..c {
                            let k = gv[ch] * inv_std[ch];
                            for j in (o * c + ch) * inner..(o * c + ch + 1) * inner {
                                dx[j] = g[j] * k;
                            }
                        }
                    }
                    updates.push((*x, dx));
                }
                updates.push((*gamma, dgamma));
                updates.push((*beta, dbeta));
            }
            Op::Sum { a } => updates.push((*a, vec![g[0]; self.value(*a).numel()])),
            Op::Mean { a } => {
                let n = self.value(*a).numel();
                updates.push((*a, vec![g[0] / T::of(n as f64); n]));
            }
            Op::BceWithLogits { z, target } => {
                let zv = self.value(*z).data();
                let scale = g[0] / T::of(zv.len() as f64);
                let d = zv.iter().zip(target).map(|(&z, &y)| (sigmoid(z) - y) * scale).collect();
                updates.push((*z, d));
            }
        }
        for (v, d) in updates {
            self.accumulate(v, d);
        }
        Ok(())
    }

    /// Sums `g` (shaped `out`) down to the shape of `v`, weighting each term.
    fn reduce_to(&self, out: &[usize], v: Var, g: &[T], weight: impl Fn(usize) -> T) -> Vec<T> {
        let target = self.shape(v);
        if target == out {
            return g.iter().enumerate().map(|(i, &x)| x * weight(i)).collect();
        }
        let plan = Broadcast::new(target, out).expect("broadcast-compatible");
        let mut d = vec![T::zero(); self.value(v).numel()];
        plan.for_each(|o, ia, _| d[ia] += g[o] * weight(o));
        d
    }

    fn mul_grad(&self, out: &[usize], v: Var, other: Var, g: &[T]) -> Vec<T> {
        let (sv, so) = (self.shape(v), self.shape(other));
        let ov = self.value(other).data();
        if sv == so {
            return g.iter().zip(ov).map(|(&a, &b)| a * b).collect();
        }
        // Index of `other` for each output position.
        let plan = Broadcast::new(so, out).expect("broadcast-compatible");
        let mut other_at = Vec::with_capacity(g.len());
        plan.for_each(|_, io, _| other_at.push(io));
        self.reduce_to(out, v, g, |o| ov[other_at[o]])
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn affine_param_grads<T: Real>(g: &[T], xhat: &[T], c: usize, inner: usize, outer: usize) -> (Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for o in 0..outer {
        for ch in 0..c {
            for j in (o * c + ch) * inner..(o * c + ch + 1) * inner {
                dgamma[ch] += g[j] * xhat[j];
                dbeta[ch] += g[j];
            }
        }
    }
    (dgamma, dbeta)
}

/// Calls `f` with the flat indices of each softmax slice of an `m×n` matrix.
fn for_each_slice(m: usize, n: usize, axis: SoftmaxAxis, mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>)) {
    match axis {
        SoftmaxAxis::Rows => (0..m).for_each(|r| f((r * n..(r + 1) * n).step_by(1))),
        SoftmaxAxis::Cols => (0..n).for_each(|c| f((c..m * n).step_by(n))),
    }
}

/// Index plan for equal-rank broadcasting where size-1 dims stretch.
struct Broadcast {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Option<Self> {
        if a.len() != b.len() {
            return None;
        }
        let mut out = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            if x != y && x != 1 && y != 1 {
                return None;
            }
            out.push(x.max(y));
        }
        Some(Broadcast { sa: strides(a, &out), sb: strides(b, &out), out })
    }

    fn numel(&self) -> usize {
        self.out.iter().product()
    }

    /// Visits `(flat_out, flat_a, flat_b)` for every output element in order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out.len();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..self.numel() {
            f(o, ia, ib);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ia += self.sa[d];
                ib += self.sb[d];
                if idx[d] < self.out[d] {
                    break;
                }
                ia -= self.sa[d] * self.out[d];
                ib -= self.sb[d] * self.out[d];
                idx[d] = 0;
            }
        }
    }
}

/// Row-major strides of `shape` as seen from `out`, zero on broadcast dims.
fn strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        s[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let mut g = Graph::<f64>::new();
        let i2 = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1., 2., 3., 4.]);

        let z = g.constant(Tensor::zeros(&[2, 3]));
        let any = g.constant(t(&[3, 4], &(0..12).map(f64::from).collect::<Vec<_>>()));
        let p = g.matmul(z, any).unwrap();
        assert_eq!(g.shape(p), &[2, 4]);
        assert!(g.value(p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_closed_form() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[0., 0., 2f64.ln(), 0.]));
        let s = g.softmax(a, SoftmaxAxis::Rows).unwrap();
        let want = [0.5, 0.5, 2. / 3., 1. / 3.];
        for (x, w) in g.value(s).data().iter().zip(want) {
            assert!((x - w).abs() < 1e-12);
        }
        // One element along the axis gives ones.
        let col = g.constant(t(&[3, 1], &[5., -2., 9.]));
        let s = g.softmax(col, SoftmaxAxis::Rows).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 1.0));
        let row = g.constant(t(&[1, 3], &[5., -2., 9.]));
        let s = g.softmax(row, SoftmaxAxis::Cols).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_f64(&[1, 3], &[1e30, 1e30, -1e30]).unwrap());
        let s = g.softmax(a, SoftmaxAxis::Rows).unwrap();
        assert!(g.value(s).is_finite());
    }

    #[test]
    fn conv_trivial_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 3, 3], &(1..=9).map(f64::from).collect::<Vec<_>>()));
        let one = g.constant(t(&[1, 1, 1, 1], &[1.]));
        let y = g.conv2d(x, one, None, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let ones = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = g.conv2d(ones, k, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_kernel_larger_than_input_is_shape_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let k = g.constant(Tensor::ones(&[1, 1, 5, 5]));
        assert!(matches!(g.conv2d(x, k, None, 1, 1), Err(crate::Error::Shape(_))));
        assert!(g.conv2d(x, k, None, 1, 2).is_ok());
    }

    #[test]
    fn pointwise_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[-1., 0., 2.]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0., 0., 2.]);
        let z = g.constant(t(&[1], &[0.]));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).data(), &[0.5]);
        let a = g.add_const(x, 1.5);
        assert_eq!(g.value(a).data(), &[0.5, 1.5, 3.5]);
        let sc = g.scale(x, -2.0);
        assert_eq!(g.value(sc).data(), &[2., 0., -4.]);
    }

    #[test]
    fn combine_add_concat() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let z = g.constant(Tensor::zeros(&[2, 3]));
        let s = g.add(x, z).unwrap();
        assert_eq!(g.value(s), g.value(x));

        let y = g.constant(t(&[2, 5], &(0..10).map(f64::from).collect::<Vec<_>>()));
        let c = g.concat(&[x, y], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 8]);
        assert_eq!(&g.value(c).data()[..3], &[1., 2., 3.]);
        assert_eq!(&g.value(c).data()[8..11], &[4., 5., 6.]);
        assert!(g.add(x, y).is_err());
        assert!(g.concat(&[x, y], 0).is_err());
    }

    #[test]
    fn broadcast_mul_channel_gate() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 2, 2, 2]));
        let gate = g.constant(t(&[1, 2, 1, 1], &[2., 3.]));
        let y = g.mul(x, gate).unwrap();
        assert_eq!(g.value(y).data(), &[2., 2., 2., 2., 3., 3., 3., 3.]);
    }

    #[test]
    fn gap_mean() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).data(), &[2.5]);
        let c = g.constant(Tensor::full(&[2, 3, 4, 5], 7.0));
        let p = g.global_avg_pool(c).unwrap();
        assert!(g.value(p).data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn upsample_identity_and_constant() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]));
        let same = g.bilinear_upsample(x, 2, 3).unwrap();
        assert_eq!(g.value(same), g.value(x));
        let c = g.constant(Tensor::full(&[1, 2, 3, 3], 0.25));
        let up = g.bilinear_upsample(c, 7, 11).unwrap();
        assert!(g.value(up).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!(g.bilinear_upsample(x, 0, 4).is_err());
        assert!(g.bilinear_upsample(x, 1, 4).is_err());
    }

    #[test]
    fn backward_basic_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2, 2], &[1., -2., 3., 0.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.; 4]);

        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1., -2., 3.]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        g.backward(half).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1., -2., 3.]);
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2, 3]));
        let xx = g.add(x, x).unwrap();
        let s = g.sum(xx);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.; 6]);
    }

    #[test]
    fn off_path_leaf_gets_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2]));
        let unused = g.param(Tensor::ones(&[3]));
        let c = g.constant(Tensor::ones(&[2]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).unwrap().data(), &[0.; 3]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(crate::Error::Argument(_))));
    }

    #[test]
    fn batch_norm_degenerate_and_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 1, 2, 2], 3.0));
        let gamma = g.constant(Tensor::ones(&[1]));
        let beta = g.constant(Tensor::full(&[1], 0.75));
        let (y, stats) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.75).abs() < 1e-12));
        assert_eq!(stats.mean, vec![3.0]);

        // Already standardized input comes back unchanged.
        let v = [-1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0];
        let x = g.constant(t(&[2, 1, 2, 2], &v));
        let beta0 = g.constant(Tensor::zeros(&[1]));
        let (y, _) = g.batch_norm_train(x, gamma, beta0, 1e-5).unwrap();
        for (a, b) in g.value(y).data().iter().zip(v) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn bce_values() {
        let mut g = Graph::<f64>::new();
        let z = g.param(Tensor::zeros(&[4]));
        let y = t(&[4], &[0., 1., 1., 0.]);
        let l = g.bce_with_logits(z, &y).unwrap();
        assert!((g.value(l).data()[0] - 2f64.ln()).abs() < 1e-12);

        let z = g.param(Tensor::full(&[1], 20.0));
        let l = g.bce_with_logits(z, &t(&[1], &[1.])).unwrap();
        assert!(g.value(l).data()[0] < 1e-8);
        let z = g.param(Tensor::full(&[1], -800.0));
        let l = g.bce_with_logits(z, &t(&[1], &[1.])).unwrap();
        assert!((g.value(l).data()[0] - 800.0).abs() < 1e-9);
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1, 1, 2, 2], &[1., 4., 3., 2.]));
        let p = g.max_pool2d(x, 2, 2, 0).unwrap();
        assert_eq!(g.value(p).data(), &[4.]);
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0., 1., 0., 0.]);
    }
}
