//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! returns gradients for the trainable parameters that fed the loss.
//! Nodes that do not depend on a trainable parameter are never visited.

use std::rc::Rc;

use crate::params::{Gradients, ParamId, ParamStore};
use crate::real::gemm;
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Clone, Copy, Debug)]
struct MatGeom {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    BroadcastSpatial(Var),
    MulSpatial(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        g: MatGeom,
    },
    AddBias(Var, Var),
    Softmax(Var),
    Gather(Var, Rc<Vec<usize>>),
    Reshape(Var),
    Upsample2x(Var),
    Cosine {
        a: Var,
        b: Var,
        norms_a: Vec<T>,
        norms_b: Vec<T>,
    },
    SpatialKl {
        logits: Var,
        target_probs: Vec<T>,
        pred_probs: Vec<T>,
        channels: usize,
        reverse: bool,
    },
    Mse {
        pred: Var,
        target: Tensor<T>,
    },
    MeanDim0(Var),
    SumAll(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Epsilon added inside logarithms of the KL operation.
pub const KL_EPS: f64 = 1e-12;

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    track: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// Graph that records gradients for trainable parameters.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            track: true,
        }
    }

    /// Graph that never records gradients.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            track: false,
        }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.track,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a stored parameter; differentiable iff the parameter is trainable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    /// Leaf for a stored parameter that is never differentiated.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    /// 2-D convolution of a `[Ci, H, W]` input with `[Co, Ci, k, k]` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.len(), 3, "conv2d input must be [C,H,W], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be [Co,Ci,k,k], got {ws:?}");
        assert_eq!(xs[0], ws[1], "conv2d channel mismatch {xs:?} vs {ws:?}");
        assert_eq!(ws[2], ws[3], "conv2d kernels must be square");
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let (co, k) = (ws[0], ws[2]);
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d kernel larger than input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let g = ConvGeom {
            ci,
            h,
            w: wd,
            co,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let n = ho * wo;
        let kk = ci * k * k;
        let mut out = vec![T::zero(); co * n];
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        if is_pointwise(&g) {
            gemm(co, kk, n, wdat, false, xd, false, &mut out, false);
        } else {
            let cols = im2col(xd, &g);
            gemm(co, kk, n, wdat, false, &cols, false, &mut out, false);
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            assert_eq!(bd.len(), co, "conv2d bias length");
            for (c, row) in out.chunks_mut(n).enumerate() {
                let bc = bd[c];
                row.iter_mut().for_each(|v| *v += bc);
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        self.push(Tensor::from_vec(&[co, ho, wo], out), Op::Conv2d { x, w, b, g }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(va.shape(), data);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let t = Tensor::from_vec(va.shape(), data);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::from_vec(va.shape(), data);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    /// Concatenate along the leading dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(&s[1..], &tail[..], "concat trailing shape mismatch");
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        self.push(Tensor::from_vec(&shape, data), Op::Concat(parts.to_vec()), rg)
    }

    /// `[C]` vector repeated over an `h x w` grid.
    pub fn broadcast_spatial(&mut self, v: Var, h: usize, w: usize) -> Var {
        let vd = self.value(v).data();
        let c = vd.len();
        let mut data = Vec::with_capacity(c * h * w);
        for &x in vd {
            data.extend(std::iter::repeat(x).take(h * w));
        }
        let rg = self.rg(&[v]);
        self.push(Tensor::from_vec(&[c, h, w], data), Op::BroadcastSpatial(v), rg)
    }

    /// `[C,H,W] * [1,H,W]`, broadcasting over channels.
    pub fn mul_spatial(&mut self, x: Var, s: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ss = self.shape(s);
        assert_eq!(xs.len(), 3);
        assert_eq!(ss, [1, xs[1], xs[2]], "mul_spatial gate shape");
        let hw = xs[1] * xs[2];
        let sd = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .flat_map(|row| row.iter().zip(sd).map(|(&a, &b)| a * b))
            .collect();
        let rg = self.rg(&[x, s]);
        self.push(Tensor::from_vec(&xs, data), Op::MulSpatial(x, s), rg)
    }

    /// Matrix product of 2-D operands, or batched product of 3-D operands.
    ///
    /// `ta`/`tb` transpose the last two axes of the stored operand.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert_eq!(sa.len(), sb.len(), "matmul rank mismatch");
        let (batch, ra, ca, rb, cb) = match sa.len() {
            2 => (1, sa[0], sa[1], sb[0], sb[1]),
            3 => {
                assert_eq!(sa[0], sb[0], "matmul batch mismatch");
                (sa[0], sa[1], sa[2], sb[1], sb[2])
            }
            r => panic!("matmul on rank {r}"),
        };
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        assert_eq!(k, k2, "matmul inner dims {sa:?} x {sb:?} (ta={ta}, tb={tb})");
        let g = MatGeom {
            batch,
            m,
            k,
            n,
            ta,
            tb,
        };
        let mut out = vec![T::zero(); batch * m * n];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                ta,
                &bd[i * k * n..(i + 1) * k * n],
                tb,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_vec(&shape, out), Op::MatMul { a, b, g }, rg)
    }

    /// Add a `[N]` bias along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let n = *self.shape(x).last().expect("add_bias on scalar");
        assert_eq!(self.shape(b), [n], "add_bias length");
        let bd = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(&bd) {
                *v += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        self.push(t, Op::AddBias(x, b), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().expect("softmax on scalar");
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    /// `out.flat[i] = x.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> Var {
        let xd = self.value(x).data();
        let data = index.iter().map(|&i| xd[i]).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_vec(shape, data), Op::Gather(x, index), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        let rg = self.rg(&[x]);
        self.push(t, Op::Reshape(x), rg)
    }

    /// Bilinear 2x upsampling of `[C,H,W]` with half-pixel centers.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "upsample2x expects [C,H,W]");
        let (c, h, w) = (s[0], s[1], s[2]);
        let ty = upsample_taps::<T>(h);
        let tx = upsample_taps::<T>(w);
        let xd = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            let src = &xd[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out[ch * h2 * w2..(ch + 1) * h2 * w2];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    dst[oy * w2 + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                        + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::from_vec(&[c, h2, w2], out), Op::Upsample2x(x), rg)
    }

    /// Cosine similarity over the channel axis at every spatial position.
    ///
    /// Returns `[1,H,W]` clamped to `[-1,1]`; positions where either vector
    /// has zero norm yield 0.
    pub fn cosine_channels(&mut self, a: Var, b: Var) -> Var {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 3, "cosine_channels expects [C,H,W]");
        assert_eq!(self.shape(b), &s[..], "cosine_channels shape mismatch");
        let (c, hw) = (s[0], s[1] * s[2]);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut dot = vec![T::zero(); hw];
        let mut na = vec![T::zero(); hw];
        let mut nb = vec![T::zero(); hw];
        for ch in 0..c {
            let ar = &ad[ch * hw..(ch + 1) * hw];
            let br = &bd[ch * hw..(ch + 1) * hw];
            for p in 0..hw {
                dot[p] += ar[p] * br[p];
                na[p] += ar[p] * ar[p];
                nb[p] += br[p] * br[p];
            }
        }
        let na: Vec<T> = na.into_iter().map(|x| x.sqrt()).collect();
        let nb: Vec<T> = nb.into_iter().map(|x| x.sqrt()).collect();
        let out = (0..hw)
            .map(|p| {
                let d = na[p] * nb[p];
                if d > T::zero() {
                    (dot[p] / d).max(-T::one()).min(T::one())
                } else {
                    T::zero()
                }
            })
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::from_vec(&[1, s[1], s[2]], out),
            Op::Cosine {
                a,
                b,
                norms_a: na,
                norms_b: nb,
            },
            rg,
        )
    }

    /// Mean over channels of `KL(softmax(target_c) || softmax(logits_c))`,
    /// each softmax taken over the flattened spatial positions of channel `c`.
    pub fn spatial_kl(&mut self, target: &Tensor<T>, logits: Var) -> Var {
        self.spatial_kl_dir(target, logits, false)
    }

    /// [`Graph::spatial_kl`] with the arguments of the divergence swapped:
    /// `KL(softmax(logits_c) || softmax(target_c))`.
    pub fn spatial_kl_reverse(&mut self, target: &Tensor<T>, logits: Var) -> Var {
        self.spatial_kl_dir(target, logits, true)
    }

    fn spatial_kl_dir(&mut self, target: &Tensor<T>, logits: Var, reverse: bool) -> Var {
        let s = self.shape(logits).to_vec();
        assert_eq!(target.shape(), &s[..], "spatial_kl shape mismatch");
        let c = s[0];
        let hw: usize = s[1..].iter().product();
        let mut tp = target.data().to_vec();
        let mut pp = self.value(logits).data().to_vec();
        let eps = T::of(KL_EPS);
        let mut total = T::zero();
        for ch in 0..c {
            let tr = &mut tp[ch * hw..(ch + 1) * hw];
            let pr = &mut pp[ch * hw..(ch + 1) * hw];
            softmax_in_place(tr);
            softmax_in_place(pr);
            let (a, b) = if reverse { (&*pr, &*tr) } else { (&*tr, &*pr) };
            let mut kl = T::zero();
            for (&x, &y) in a.iter().zip(b) {
                kl += x * ((x + eps).ln() - (y + eps).ln());
            }
            total += kl;
        }
        let value = total / T::of(c as f64);
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(value),
            Op::SpatialKl {
                logits,
                target_probs: tp,
                pred_probs: pp,
                channels: c,
                reverse,
            },
            rg,
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse shape mismatch");
        let n = T::of(p.numel() as f64);
        let s: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(&[pred]);
        self.push(
            Tensor::scalar(s / n),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        )
    }

    /// Mean over the leading axis.
    pub fn mean_dim0(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let lead = s[0];
        let rest: usize = s[1..].iter().product();
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); rest];
        for row in xd.chunks(rest) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(lead as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let shape = if s.len() > 1 { s[1..].to_vec() } else { vec![1] };
        let rg = self.rg(&[x]);
        self.push(Tensor::from_vec(&shape, out), Op::MeanDim0(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Gradients of the scalar `loss` with respect to every trainable parameter it depends on.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward from non-scalar");
        let mut out = Gradients::new(0);
        if !self.nodes[loss.0].requires_grad {
            return out;
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, g, &mut grads, &mut out);
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        i: usize,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
    ) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(*id, g),
            Op::Conv2d { x, w, b, g: geom } => {
                let n = geom.ho * geom.wo;
                let kk = geom.ci * geom.k * geom.k;
                let gd = g.data();
                if let Some(b) = b {
                    if self.needs(*b) {
                        let db: Vec<T> = gd.chunks(n).map(|r| r.iter().copied().sum()).collect();
                        self.accumulate(grads, *b, Tensor::from_vec(&[geom.co], db));
                    }
                }
                let xd = self.value(*x).data();
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); geom.co * kk];
                    if is_pointwise(geom) {
                        gemm(geom.co, n, kk, gd, false, xd, true, &mut dw, false);
                    } else {
                        let cols = im2col(xd, geom);
                        gemm(geom.co, n, kk, gd, false, &cols, true, &mut dw, false);
                    }
                    let ws = self.shape(*w).to_vec();
                    self.accumulate(grads, *w, Tensor::from_vec(&ws, dw));
                }
                if self.needs(*x) {
                    let wd = self.value(*w).data();
                    let mut dcols = vec![T::zero(); kk * n];
                    gemm(kk, geom.co, n, wd, true, gd, false, &mut dcols, false);
                    let dx = if is_pointwise(geom) { dcols } else { col2im(&dcols, geom) };
                    self.accumulate(grads, *x, Tensor::from_vec(&[geom.ci, geom.h, geom.w], dx));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = zip_map(&g, self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = zip_map(&g, self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Relu(a) => {
                let d = zip_map(&g, self.value(*a), |gv, x| if x > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(&g, &node.value, |gv, y| gv * y * (T::one() - y));
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let n: usize = shape.iter().product();
                    if self.needs(p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        self.accumulate(grads, p, Tensor::from_vec(&shape, d));
                    }
                    offset += n;
                }
            }
            Op::BroadcastSpatial(v) => {
                let c = self.value(*v).numel();
                let hw = g.numel() / c;
                let d: Vec<T> = g.data().chunks(hw).map(|r| r.iter().copied().sum()).collect();
                let shape = self.shape(*v).to_vec();
                self.accumulate(grads, *v, Tensor::from_vec(&shape, d));
            }
            Op::MulSpatial(x, s) => {
                let hw = self.value(*s).numel();
                let sd = self.value(*s).data();
                if self.needs(*x) {
                    let d = g
                        .data()
                        .chunks(hw)
                        .flat_map(|r| r.iter().zip(sd).map(|(&a, &b)| a * b))
                        .collect();
                    let shape = self.shape(*x).to_vec();
                    self.accumulate(grads, *x, Tensor::from_vec(&shape, d));
                }
                if self.needs(*s) {
                    let xd = self.value(*x).data();
                    let mut ds = vec![T::zero(); hw];
                    for (gr, xr) in g.data().chunks(hw).zip(xd.chunks(hw)) {
                        for p in 0..hw {
                            ds[p] += gr[p] * xr[p];
                        }
                    }
                    let shape = self.shape(*s).to_vec();
                    self.accumulate(grads, *s, Tensor::from_vec(&shape, ds));
                }
            }
            Op::MatMul { a, b, g: mg } => {
                let MatGeom {
                    batch,
                    m,
                    k,
                    n,
                    ta,
                    tb,
                } = *mg;
                let gd = g.data();
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if self.needs(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        let gc = &gd[i * m * n..(i + 1) * m * n];
                        let bb = &bd[i * k * n..(i + 1) * k * n];
                        let dst = &mut da[i * m * k..(i + 1) * m * k];
                        if ta {
                            gemm(k, n, m, bb, tb, gc, true, dst, false);
                        } else {
                            gemm(m, n, k, gc, false, bb, !tb, dst, false);
                        }
                    }
                    let shape = self.shape(*a).to_vec();
                    self.accumulate(grads, *a, Tensor::from_vec(&shape, da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        let gc = &gd[i * m * n..(i + 1) * m * n];
                        let aa = &ad[i * m * k..(i + 1) * m * k];
                        let dst = &mut db[i * k * n..(i + 1) * k * n];
                        if tb {
                            gemm(n, m, k, gc, true, aa, ta, dst, false);
                        } else {
                            gemm(k, m, n, aa, !ta, gc, false, dst, false);
                        }
                    }
                    let shape = self.shape(*b).to_vec();
                    self.accumulate(grads, *b, Tensor::from_vec(&shape, db));
                }
            }
            Op::AddBias(x, b) => {
                if self.needs(*b) {
                    let n = self.value(*b).numel();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[n], db));
                }
                self.accumulate(grads, *x, g);
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut d = g.clone();
                for (dr, yr) in d.data_mut().chunks_mut(n).zip(node.value.data().chunks(n)) {
                    let dot: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for (dv, &y) in dr.iter_mut().zip(yr) {
                        *dv = y * (*dv - dot);
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Gather(x, index) => {
                let shape = self.shape(*x).to_vec();
                let mut d = vec![T::zero(); self.value(*x).numel()];
                for (&src, &gv) in index.iter().zip(g.data()) {
                    d[src] += gv;
                }
                self.accumulate(grads, *x, Tensor::from_vec(&shape, d));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, g.reshaped(&shape));
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x).to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let ty = upsample_taps::<T>(h);
                let tx = upsample_taps::<T>(w);
                let (h2, w2) = (2 * h, 2 * w);
                let mut d = vec![T::zero(); c * h * w];
                let gd = g.data();
                for ch in 0..c {
                    let src = &gd[ch * h2 * w2..(ch + 1) * h2 * w2];
                    let dst = &mut d[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let gv = src[oy * w2 + ox];
                            dst[y0 * w + x0] += wy0 * wx0 * gv;
                            dst[y0 * w + x1] += wy0 * wx1 * gv;
                            dst[y1 * w + x0] += wy1 * wx0 * gv;
                            dst[y1 * w + x1] += wy1 * wx1 * gv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&s, d));
            }
            Op::Cosine {
                a,
                b,
                norms_a,
                norms_b,
            } => {
                let s = self.shape(*a).to_vec();
                let (c, hw) = (s[0], s[1] * s[2]);
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let sim = node.value.data();
                let gd = g.data();
                let mut da = vec![T::zero(); c * hw];
                let mut db = vec![T::zero(); c * hw];
                for p in 0..hw {
                    let (na, nb) = (norms_a[p], norms_b[p]);
                    if na <= T::zero() || nb <= T::zero() {
                        continue;
                    }
                    let inv = T::one() / (na * nb);
                    let sa = sim[p] / (na * na);
                    let sb = sim[p] / (nb * nb);
                    for ch in 0..c {
                        let q = ch * hw + p;
                        da[q] = gd[p] * (bd[q] * inv - sa * ad[q]);
                        db[q] = gd[p] * (ad[q] * inv - sb * bd[q]);
                    }
                }
                if self.needs(*a) {
                    self.accumulate(grads, *a, Tensor::from_vec(&s, da));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, Tensor::from_vec(&s, db));
                }
            }
            Op::SpatialKl {
                logits,
                target_probs,
                pred_probs,
                channels,
                reverse,
            } => {
                let shape = self.shape(*logits).to_vec();
                let hw = pred_probs.len() / channels;
                let eps = T::of(KL_EPS);
                let scale = g.item() / T::of(*channels as f64);
                // dKL/dp_i, pushed through the softmax Jacobian below.
                let dp = |t: T, p: T| {
                    if *reverse {
                        (p + eps).ln() - (t + eps).ln() + p / (p + eps)
                    } else {
                        -t / (p + eps)
                    }
                };
                let mut d = vec![T::zero(); pred_probs.len()];
                for ch in 0..*channels {
                    let tr = &target_probs[ch * hw..(ch + 1) * hw];
                    let pr = &pred_probs[ch * hw..(ch + 1) * hw];
                    let dr = &mut d[ch * hw..(ch + 1) * hw];
                    let mut inner = T::zero();
                    for (&t, &p) in tr.iter().zip(pr) {
                        inner += p * dp(t, p);
                    }
                    for ((dv, &t), &p) in dr.iter_mut().zip(tr).zip(pr) {
                        *dv = scale * p * (dp(t, p) - inner);
                    }
                }
                self.accumulate(grads, *logits, Tensor::from_vec(&shape, d));
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let c = g.item() * T::of(2.0 / p.numel() as f64);
                let d = zip_map(p, target, |a, b| c * (a - b));
                self.accumulate(grads, *pred, d);
            }
            Op::MeanDim0(x) => {
                let s = self.shape(*x).to_vec();
                let lead = s[0];
                let inv = T::one() / T::of(lead as f64);
                let mut d = Vec::with_capacity(self.value(*x).numel());
                for _ in 0..lead {
                    d.extend(g.data().iter().map(|&v| v * inv));
                }
                self.accumulate(grads, *x, Tensor::from_vec(&s, d));
            }
            Op::SumAll(x) => {
                let s = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::full(&s, g.item()));
            }
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.ho * g.wo;
    let mut cols = vec![T::zero(); g.ci * g.k * g.k * n];
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.ho * g.wo;
    let mut x = vec![T::zero(); g.ci * g.h * g.w];
    for c in 0..g.ci {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Source taps `(i0, i1, w0, w1)` for each output index of a 2x bilinear resize.
fn upsample_taps<T: Real>(n: usize) -> Vec<(usize, usize, T, T)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let l1 = src - i0 as f64;
            (i0, i1, T::of(1.0 - l1), T::of(l1))
        })
        .collect()
}
