use std::collections::HashMap;
use std::rc::Rc;

use super::ops::{col2im, conv_forward, from_rows, to_rows, ConvGeom};
use super::{gemm, MatRef, Real, Tensor};
use crate::error::{shape_err, Result};
use crate::resample::AxisWeights;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Option<Vec<T>> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddChannel { x: Var, v: Var },
    MulChannel { x: Var, v: Var },
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Silu(Var),
    Abs(Var),
    Sqr(Var),
    Sqrt(Var),
    Concat(Vec<(Var, usize)>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    Resample { x: Var, ry: Rc<AxisWeights>, rx: Rc<AxisWeights> },
    GatherRows { x: Var, index: Rc<Vec<usize>> },
    ToRows(Var),
    FromRows(Var),
    MulConst { x: Var, k: Tensor<T> },
    L1 { pred: Var, target: Tensor<T> },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A tape of tensor operations supporting reverse-mode differentiation.
///
/// With gradients disabled the tape only records values, which is what the
/// sampler uses at inference time.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    pub(crate) params: HashMap<usize, Var>,
}

/// Outer/channel/inner split of a tensor around axis 1.
fn axis1(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err(format!("expected rank >= 2, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true, params: HashMap::new() }
    }

    /// A tape that records values only.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
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

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf value. Gradients are tracked for it when `requires_grad` is set.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// 2-D convolution, `x: [B, Cin, H, W]`, `w: [Cout, Cin, k, k]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (batch, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, k, k2) = self.value(w).dims4()?;
        if wcin != cin || k != k2 {
            return Err(shape_err(format!(
                "conv weight {:?} for input {:?}",
                self.shape(w),
                self.shape(x)
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err(format!("conv bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(cin, h, wd, k, stride, pad)
            .ok_or_else(|| shape_err(format!("input {h}x{wd} too small for kernel {k}")))?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let keep = rg && self.grad_enabled && self.rg(w);
        let (out, cols) = conv_forward(
            self.value(x).data(),
            batch,
            self.value(w).data(),
            cout,
            b.map(|b| self.value(b).data()),
            &geom,
            keep,
        );
        let value = Tensor::new(&[batch, cout, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom, cols }, rg))
    }

    /// `y = x @ w^T + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear {xs:?} x {ws:?}^T")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * dout];
        let mut beta = T::zero();
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [dout] {
                return Err(shape_err(format!("linear bias {:?} for {dout} outputs", bv.shape())));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv.data());
            }
            beta = T::one();
        }
        gemm(
            MatRef::new(self.value(x).data(), n, din),
            MatRef::transposed(self.value(w).data(), din, dout),
            &mut out,
            beta,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[n, dout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.value(a).check_same(self.value(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Per-channel broadcast of `v: [C]` or `[B, C]` over `x: [B, C, ...]`.
    fn channel_op(&mut self, x: Var, v: Var, mul: bool) -> Result<Var> {
        let (b, c, inner) = axis1(self.shape(x))?;
        let vs = self.shape(v);
        let per_batch = match vs {
            [n] if *n == c => false,
            [1, n] if *n == c => false,
            [bb, n] if *bb == b && *n == c => true,
            _ => return Err(shape_err(format!("channel vector {vs:?} for {:?}", self.shape(x)))),
        };
        let xv = self.value(x).data();
        let vv = self.value(v).data();
        let mut out = Vec::with_capacity(xv.len());
        for bi in 0..b {
            for ci in 0..c {
                let s = vv[if per_batch { bi * c + ci } else { ci }];
                let src = &xv[(bi * c + ci) * inner..(bi * c + ci + 1) * inner];
                if mul {
                    out.extend(src.iter().map(|&a| a * s));
                } else {
                    out.extend(src.iter().map(|&a| a + s));
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x) || self.rg(v);
        let op = if mul { Op::MulChannel { x, v } } else { Op::AddChannel { x, v } };
        Ok(self.push(value, op, rg))
    }

    pub fn add_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        self.channel_op(x, v, false)
    }

    pub fn mul_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        self.channel_op(x, v, true)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |a| a * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        self.unary(x, |a| a + k, Op::AddScalar(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, |a| if a > T::zero() { a } else { a * slope }, Op::LeakyRelu(x, slope))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a / (T::one() + (-a).exp()), Op::Silu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.abs(), Op::Abs(x))
    }

    pub fn sqr(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * a, Op::Sqr(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.sqrt(), Op::Sqrt(x))
    }

    /// Multiplies by a constant tensor of the same shape (dropout masks, projections).
    pub fn mul_const(&mut self, x: Var, k: Tensor<T>) -> Result<Var> {
        self.value(x).check_same(&k)?;
        let data = self.value(x).data().iter().zip(k.data()).map(|(&a, &b)| a * b).collect();
        let value = Tensor::new(self.shape(x), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MulConst { x, k }, rg))
    }

    /// Concatenation along axis 1 (channels for images, columns for rows).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let (outer, _, inner) = axis1(self.shape(first))?;
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let (o, c, i) = axis1(s)?;
            if o != outer || i != inner || s.len() != self.shape(first).len() || s[2..] != self.shape(first)[2..] {
                return Err(shape_err(format!("concat {:?} with {s:?}", self.shape(first))));
            }
            sizes.push((p, c));
        }
        let total: usize = sizes.iter().map(|&(_, c)| c).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, c) in &sizes {
                out.extend_from_slice(&self.value(p).data()[o * c * inner..(o + 1) * c * inner]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        shape[1] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat(sizes), rg))
    }

    /// Axis-1 slice `[start, start + len)`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (outer, c, inner) = axis1(self.shape(x))?;
        if start + len > c {
            return Err(shape_err(format!("slice {start}+{len} of {c} channels")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * c + start) * inner..(o * c + start + len) * inner]);
        }
        let mut shape = self.shape(x).to_vec();
        shape[1] = len;
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Separable resampling of the two trailing axes of `[B, C, H, W]`.
    pub fn resample(&mut self, x: Var, ry: Rc<AxisWeights>, rx: Rc<AxisWeights>) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if ry.in_len() != h || rx.in_len() != w {
            return Err(shape_err(format!(
                "resampler {}x{} for input {h}x{w}",
                ry.in_len(),
                rx.in_len()
            )));
        }
        let tmp = rx.apply(self.value(x).data(), b * c * h, 1);
        let out = ry.apply(&tmp, b * c, rx.out_len());
        let value = Tensor::new(&[b, c, ry.out_len(), rx.out_len()], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Resample { x, ry, rx }, rg))
    }

    /// Row gather: `out[i] = x[index[i]]` for `x: [N, C]`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<Vec<usize>>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err(format!("gather_rows on {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err(format!("row index {bad} out of {n}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(&[index.len(), c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherRows { x, index }, rg))
    }

    /// `[B, C, H, W]` to per-pixel rows `[B*H*W, C]`.
    pub fn to_rows(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let value = Tensor::new(&[b * h * w, c], to_rows(self.value(x).data(), b, c, h * w))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ToRows(x), rg))
    }

    /// Inverse of [`to_rows`](Self::to_rows).
    pub fn from_rows(&mut self, x: Var, b: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != b * h * w {
            return Err(shape_err(format!("from_rows {s:?} into {b}x?x{h}x{w}")));
        }
        let c = s[1];
        let value = Tensor::new(&[b, c, h, w], from_rows(self.value(x).data(), b, c, h * w))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::FromRows(x), rg))
    }

    /// Mean absolute error against a constant target, as a 1-element tensor.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        self.value(pred).check_same(target)?;
        let n = T::from_f64c(target.len() as f64);
        let total: T = self.value(pred).data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(total / n), Op::L1 { pred, target: target.clone() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &Tensor<T>, f: impl Fn(usize, T) -> T) {
        if !self.rg(v) {
            return;
        }
        let data = g.data().iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
        self.acc(grads, v, Tensor::new(self.shape(v), data).expect("shape preserved"));
    }

    fn backprop(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, cols } => {
                let (batch, cout, ho, wo) = g.dims4()?;
                let p = ho * wo;
                let kk = geom.col_rows();
                let in_len = geom.cin * geom.h * geom.w;
                let gd = g.data();
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![T::zero(); cout];
                        for bi in 0..batch {
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += gd[(bi * cout + o) * p..(bi * cout + o + 1) * p].iter().copied().sum();
                            }
                        }
                        self.acc(grads, *b, Tensor::new(&[cout], db)?);
                    }
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); cout * kk];
                    for bi in 0..batch {
                        let cb: &[T] = if geom.is_pointwise() {
                            &self.value(*x).data()[bi * in_len..(bi + 1) * in_len]
                        } else {
                            let c = cols.as_ref().expect("columns kept for weight gradient");
                            &c[bi * geom.col_len()..(bi + 1) * geom.col_len()]
                        };
                        gemm(
                            MatRef::new(&gd[bi * cout * p..(bi + 1) * cout * p], cout, p),
                            MatRef::transposed(cb, p, kk),
                            &mut dw,
                            T::one(),
                        );
                    }
                    self.acc(grads, *w, Tensor::new(self.shape(*w), dw)?);
                }
                if self.rg(*x) {
                    let wv = self.value(*w).data();
                    let mut dx = vec![T::zero(); batch * in_len];
                    let mut dcols = vec![T::zero(); kk * p];
                    for bi in 0..batch {
                        let gb = &gd[bi * cout * p..(bi + 1) * cout * p];
                        let dxb = &mut dx[bi * in_len..(bi + 1) * in_len];
                        if geom.is_pointwise() {
                            gemm(MatRef::transposed(wv, kk, cout), MatRef::new(gb, cout, p), dxb, T::zero());
                        } else {
                            gemm(MatRef::transposed(wv, kk, cout), MatRef::new(gb, cout, p), &mut dcols, T::zero());
                            col2im(&dcols, geom, dxb);
                        }
                    }
                    self.acc(grads, *x, Tensor::new(self.shape(*x), dx)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, dout) = (g.shape()[0], g.shape()[1]);
                let din = self.shape(*x)[1];
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![T::zero(); dout];
                        for row in g.data().chunks(dout) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        self.acc(grads, *b, Tensor::new(&[dout], db)?);
                    }
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    gemm(
                        MatRef::transposed(g.data(), dout, n),
                        MatRef::new(self.value(*x).data(), n, din),
                        &mut dw,
                        T::zero(),
                    );
                    self.acc(grads, *w, Tensor::new(&[dout, din], dw)?);
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    gemm(
                        MatRef::new(g.data(), n, dout),
                        MatRef::new(self.value(*w).data(), dout, din),
                        &mut dx,
                        T::zero(),
                    );
                    self.acc(grads, *x, Tensor::new(&[n, din], dx)?);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc_with(grads, *b, g, |_, v| -v);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_with(grads, *a, g, |i, v| v * bv[i]);
                self.acc_with(grads, *b, g, |i, v| v * av[i]);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_with(grads, *a, g, |i, v| v / bv[i]);
                self.acc_with(grads, *b, g, |i, v| -v * av[i] / (bv[i] * bv[i]));
            }
            Op::AddChannel { x, v } | Op::MulChannel { x, v } => {
                let mul = matches!(node.op, Op::MulChannel { .. });
                let (b, c, inner) = axis1(self.shape(*x))?;
                let per_batch = self.shape(*v).len() == 2 && self.shape(*v)[0] == b && b > 1;
                let vv = self.value(*v).data();
                let xv = self.value(*x).data();
                let gd = g.data();
                if self.rg(*x) {
                    if mul {
                        self.acc_with(grads, *x, g, |i, gi| {
                            let (bi, ci) = (i / (c * inner), (i / inner) % c);
                            gi * vv[if per_batch { bi * c + ci } else { ci }]
                        });
                    } else {
                        self.acc(grads, *x, g.clone());
                    }
                }
                if self.rg(*v) {
                    let mut dv = vec![T::zero(); vv.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let r = (bi * c + ci) * inner..(bi * c + ci + 1) * inner;
                            let s: T = if mul {
                                gd[r.clone()].iter().zip(&xv[r]).map(|(&a, &bb)| a * bb).sum()
                            } else {
                                gd[r].iter().copied().sum()
                            };
                            dv[if per_batch { bi * c + ci } else { ci }] += s;
                        }
                    }
                    self.acc(grads, *v, Tensor::new(self.shape(*v), dv)?);
                }
            }
            Op::Scale(x, k) => self.acc_with(grads, *x, g, |_, v| v * *k),
            Op::AddScalar(x) | Op::Reshape(x) => self.acc_with(grads, *x, g, |_, v| v),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                self.acc_with(grads, *x, g, |i, v| if xv[i] > T::zero() { v } else { v * *slope });
            }
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                self.acc_with(grads, *x, g, |i, v| {
                    let s = T::one() / (T::one() + (-xv[i]).exp());
                    v * s * (T::one() + xv[i] * (T::one() - s))
                });
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.acc_with(grads, *x, g, |i, v| {
                    if xv[i] > T::zero() {
                        v
                    } else if xv[i] < T::zero() {
                        -v
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Sqr(x) => {
                let xv = self.value(*x).data();
                let two = T::from_f64c(2.0);
                self.acc_with(grads, *x, g, |i, v| v * two * xv[i]);
            }
            Op::Sqrt(x) => {
                let yv = node.value.data();
                let half = T::from_f64c(0.5);
                self.acc_with(grads, *x, g, |i, v| v * half / yv[i]);
            }
            Op::MulConst { x, k } => {
                let kv = k.data();
                self.acc_with(grads, *x, g, |i, v| v * kv[i]);
            }
            Op::Concat(parts) => {
                let (outer, total, inner) = axis1(g.shape())?;
                let gd = g.data();
                let mut start = 0;
                for &(p, c) in parts {
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(outer * c * inner);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[(o * total + start) * inner..(o * total + start + c) * inner]);
                        }
                        self.acc(grads, p, Tensor::new(self.shape(p), d)?);
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let (outer, c, inner) = axis1(self.shape(*x))?;
                let len = g.shape()[1];
                let mut d = vec![T::zero(); outer * c * inner];
                for o in 0..outer {
                    d[(o * c + start) * inner..(o * c + start + len) * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.acc(grads, *x, Tensor::new(self.shape(*x), d)?);
            }
            Op::Resample { x, ry, rx } => {
                let (b, c, _, _) = self.value(*x).dims4()?;
                let tmp = ry.apply_transpose(g.data(), b * c, rx.out_len());
                let d = rx.apply_transpose(&tmp, b * c * ry.in_len(), 1);
                self.acc(grads, *x, Tensor::new(self.shape(*x), d)?);
            }
            Op::GatherRows { x, index } => {
                let c = self.shape(*x)[1];
                let mut d = vec![T::zero(); self.value(*x).len()];
                for (r, &i) in index.iter().enumerate() {
                    for (a, &v) in d[i * c..(i + 1) * c].iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                        *a += v;
                    }
                }
                self.acc(grads, *x, Tensor::new(self.shape(*x), d)?);
            }
            Op::ToRows(x) => {
                let (b, c, h, w) = self.value(*x).dims4()?;
                self.acc(grads, *x, Tensor::new(self.shape(*x), from_rows(g.data(), b, c, h * w))?);
            }
            Op::FromRows(x) => {
                let (b, c, h, w) = g.dims4()?;
                self.acc(grads, *x, Tensor::new(self.shape(*x), to_rows(g.data(), b, c, h * w))?);
            }
            Op::L1 { pred, target } => {
                let scale = g.data()[0] / T::from_f64c(target.len() as f64);
                let pv = self.value(*pred).data();
                let tv = target.data();
                self.acc_with(grads, *pred, &Tensor::zeros(self.shape(*pred)), |i, _| {
                    let d = pv[i] - tv[i];
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                self.acc(grads, *x, Tensor::full(self.shape(*x), s));
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<usize, Var>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of the parameter with store index `id`, if it took part in the graph.
    pub fn param(&self, id: usize) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }

    /// Moves a parameter gradient out, leaving `None` behind.
    pub fn take_param(&mut self, id: usize) -> Option<Tensor<T>> {
        let v = *self.params.get(&id)?;
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
