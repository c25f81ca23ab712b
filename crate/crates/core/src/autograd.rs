//! Dynamic reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in execution order, which is already a
//! topological order of the graph, so [`Tape::backward`] walks the nodes once
//! from the loss down to the leaves. A fresh tape is built for every forward
//! pass.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::error::dim_err;
use crate::kernels::attention::{self, AttnDims, AttnGrads, Pattern};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::kernels::{layout, norm, Counters};
use crate::params::{ParamId, ParamStore, StatUpdate};
use crate::tensor::{channel_dims, dims4};
use crate::{Error, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Std,
}

#[derive(Debug, Clone)]
enum AttnKind {
    CrissCross,
    Dense(Option<Vec<bool>>),
}

impl AttnKind {
    fn pattern(&self) -> Pattern<'_> {
        match self {
            AttnKind::CrissCross => Pattern::CrissCross,
            AttnKind::Dense(mask) => Pattern::Dense { mask: mask.as_deref() },
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Sum(Var),
    SumLast(Var),
    StackLast(Vec<Var>),
    Matmul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        out_channels: usize,
    },
    Depthwise {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    GlobalMean(Var),
    GlobalStd {
        x: Var,
        mean: Vec<T>,
    },
    Softmax {
        x: Var,
        outer: usize,
        axis: usize,
        inner: usize,
    },
    BlurPool(Var),
    SpaceToDepth {
        x: Var,
        block: usize,
    },
    ChannelScale {
        x: Var,
        g: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        r: Var,
        attn: Vec<T>,
        dims: AttnDims,
        kind: AttnKind,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation recorder.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    counters: Counters,
    relu_signs: Option<Vec<bool>>,
}

/// Gradients of the leaves that required them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.slots.get_mut(v.0).and_then(|s| s.take())
    }

    /// Adds the gradients of another backward pass over the same tape.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            match (mine, theirs) {
                (Some(a), Some(b)) => a.add_assign(b),
                (slot @ None, Some(b)) => *slot = Some(b.clone()),
                _ => {}
            }
        }
    }
}

struct Slots<'n, T> {
    grads: Vec<Option<Tensor<T>>>,
    nodes: &'n [Node<T>],
}

impl<T: Scalar> Slots<'_, T> {
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    fn put(&mut self, v: Var, t: Tensor<T>) {
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    /// Runs `f` on the gradient buffer of `v` when `v` needs one.
    fn with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if self.needs(v) {
            let mut g = self.take(v);
            f(g.data_mut());
            self.put(v, g);
        }
    }
}

/// Index maps for a broadcast binary op.
struct Broadcast {
    shape: Vec<usize>,
    a: Vec<usize>,
    b: Vec<usize>,
}

fn broadcast(sa: &[usize], sb: &[usize]) -> Result<Option<Broadcast>> {
    if sa == sb {
        return Ok(None);
    }
    let rank = sa.len().max(sb.len());
    let pad = |s: &[usize]| {
        let mut p = vec![1; rank - s.len()];
        p.extend_from_slice(s);
        p
    };
    let (pa, pb) = (pad(sa), pad(sb));
    let mut shape = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x != y && x != 1 && y != 1 {
            return Err(dim_err!("shapes {:?} and {:?} do not broadcast", sa, sb));
        }
        shape.push(x.max(y));
    }
    let strides = |p: &[usize]| {
        let mut st = vec![0; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            st[d] = if p[d] == 1 { 0 } else { acc };
            acc *= p[d];
        }
        st
    };
    let (st_a, st_b) = (strides(&pa), strides(&pb));
    let n: usize = shape.iter().product();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut idx = vec![0; rank];
    for _ in 0..n {
        a.push(idx.iter().zip(&st_a).map(|(i, s)| i * s).sum());
        b.push(idx.iter().zip(&st_b).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Some(Broadcast { shape, a, b }))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            counters: Counters::default(),
            relu_signs: None,
        }
    }

    /// Starts recording, for every later relu, which inputs are positive.
    /// Two forwards with equal patterns sit on the same linear piece of
    /// every relu.
    pub fn record_relu_signs(&mut self) {
        self.relu_signs = Some(Vec::new());
    }

    pub fn relu_signs(&self) -> Option<&[bool]> {
        self.relu_signs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = Counters::default();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, mul: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = match broadcast(va.shape(), vb.shape())? {
            None => {
                let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(va.shape(), data)?
            }
            Some(bc) => {
                let data =
                    bc.a.iter()
                        .zip(&bc.b)
                        .map(|(&i, &j)| f(va.data()[i], vb.data()[j]))
                        .collect();
                Tensor::new(&bc.shape, data)?
            }
        };
        let op = if mul { Op::Mul(a, b) } else { Op::Add(a, b) };
        Ok(self.push(out, op, &[a, b]))
    }

    /// Elementwise sum with broadcasting over size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, false)
    }

    /// Elementwise product with broadcasting over size-1 axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, true)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let input = &self.nodes[x.0].value;
        if let Some(signs) = &mut self.relu_signs {
            signs.extend(input.data().iter().map(|&v| v > T::zero()));
        }
        let out = input.map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Sums over the trailing axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        if shape.len() < 2 {
            return Err(dim_err!("sum_last needs rank >= 2, got {:?}", shape));
        }
        let last = shape[shape.len() - 1];
        let data = v.data().chunks(last).map(|c| c.iter().copied().sum()).collect();
        let out = Tensor::new(&shape[..shape.len() - 1], data)?;
        Ok(self.push(out, Op::SumLast(x), &[x]))
    }

    /// Stacks equally shaped tensors along a new trailing axis.
    pub fn stack_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| dim_err!("stack_last of nothing"))?;
        let shape = self.shape(first).to_vec();
        let n = self.value(first).len();
        let mut data = vec![T::zero(); n * xs.len()];
        for (s, &x) in xs.iter().enumerate() {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(dim_err!("stack_last: {:?} vs {:?}", v.shape(), shape));
            }
            for (i, &e) in v.data().iter().enumerate() {
                data[i * xs.len() + s] = e;
            }
        }
        let mut out_shape = shape;
        out_shape.push(xs.len());
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::StackLast(xs.to_vec()), xs))
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, k2, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            _ => return Err(dim_err!("matmul needs two matrices, got {:?} and {:?}", sa, sb)),
        };
        if k != k2 {
            return Err(dim_err!("matmul inner extents differ: {:?} · {:?}", sa, sb));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::Matmul(a, b), &[a, b]))
    }

    /// `x[B×I] · w[O×I]ᵀ (+ b[O])`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let (bn, i, o) = match (sx, sw) {
            (&[bn, i], &[o, i2]) if i == i2 => (bn, i, o),
            _ => return Err(dim_err!("linear: input {:?} vs weight {:?}", sx, sw)),
        };
        let mut out = vec![T::zero(); bn * o];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != [o] {
                return Err(dim_err!("linear bias {:?} for {} outputs", bias.shape(), o));
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm_nt(bn, i, o, self.value(x).data(), self.value(w).data(), &mut out);
        let out = Tensor::new(&[bn, o], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Dense 2-D convolution, `w` is `O×C×k×k`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (b, c, h, wd) = dims4(self.shape(x))?;
        let (o, c2, k, k2) = dims4(self.shape(w))?;
        if c != c2 || k != k2 {
            return Err(dim_err!(
                "conv2d: input {:?} incompatible with kernel {:?}",
                self.shape(x),
                self.shape(w)
            ));
        }
        let geom = ConvGeom {
            batch: b,
            in_channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let (out, ho, wo) = conv::conv2d_forward(self.value(x).data(), self.value(w).data(), o, &geom)?;
        let out = Tensor::new(&[b, o, ho, wo], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                geom,
                out_channels: o,
            },
            &[x, w],
        ))
    }

    /// Per-channel convolution, `w` is `C×1×k×k`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (b, c, h, wd) = dims4(self.shape(x))?;
        let (c2, one, k, k2) = dims4(self.shape(w))?;
        if c != c2 || one != 1 || k != k2 {
            return Err(dim_err!(
                "depthwise: input {:?} needs a {}×1×k×k kernel, got {:?}",
                self.shape(x),
                c,
                self.shape(w)
            ));
        }
        let geom = ConvGeom {
            batch: b,
            in_channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let (out, ho, wo) = conv::depthwise_forward(self.value(x).data(), self.value(w).data(), &geom)?;
        let out = Tensor::new(&[b, c, ho, wo], out)?;
        Ok(self.push(out, Op::Depthwise { x, w, geom }, &[x, w]))
    }

    /// Depthwise `k×k` filtering ("same" padding) followed by 1×1 mixing.
    pub fn depthwise_separable(&mut self, x: Var, w_depth: Var, w_point: Var) -> Result<Var> {
        let k = self.shape(w_depth).get(2).copied().unwrap_or(1);
        let d = self.depthwise_conv2d(x, w_depth, 1, k / 2)?;
        self.conv2d(d, w_point, 1, 0)
    }

    fn check_affine(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let dims = channel_dims(self.shape(x))?;
        if self.shape(gamma) != [dims.1] || self.shape(beta) != [dims.1] {
            return Err(dim_err!(
                "batch norm affine {:?}/{:?} for {} channels",
                self.shape(gamma),
                self.shape(beta),
                dims.1
            ));
        }
        Ok(dims)
    }

    /// Batch norm with batch statistics. Returns the output and
    /// `(batch mean, unbiased batch variance)` for running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<T>, Vec<T>)> {
        let dims = self.check_affine(x, gamma, beta)?;
        let n = dims.0 * dims.2;
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let (y, xhat, stats) = norm::batch_norm_train(
            self.value(x).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let out = Tensor::new(self.shape(x), y)?;
        let correction = T::of(n as f64 / (n - 1) as f64);
        let unbiased = stats.var.iter().map(|&v| v * correction).collect();
        let var = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: stats.inv_std,
                batch_stats: true,
            },
            &[x, gamma, beta],
        );
        Ok((var, stats.mean, unbiased))
    }

    /// Batch norm with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
    ) -> Result<Var> {
        let dims = self.check_affine(x, gamma, beta)?;
        let (y, xhat, inv_std) = norm::batch_norm_eval(
            self.value(x).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean.data(),
            running_var.data(),
        );
        let out = Tensor::new(self.shape(x), y)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            &[x, gamma, beta],
        ))
    }

    /// Spatial mean or standard deviation: `B×C×H×W → B×C`.
    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (b, c, h, w) = dims4(self.shape(x))?;
        let data = self.value(x).data();
        let (out, op) = match kind {
            PoolKind::Mean => (norm::global_mean(data, b * c, h * w), Op::GlobalMean(x)),
            PoolKind::Std => {
                let (std, mean) = norm::global_std(data, b * c, h * w);
                (std, Op::GlobalStd { x, mean })
            }
        };
        let out = Tensor::new(&[b, c], out)?;
        Ok(self.push(out, op, &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(dim_err!("softmax axis {} out of range for {:?}", axis, shape));
        }
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let y = norm::softmax(self.value(x).data(), outer, n, inner);
        let out = Tensor::new(shape, y)?;
        Ok(self.push(
            out,
            Op::Softmax {
                x,
                outer,
                axis: n,
                inner,
            },
            &[x],
        ))
    }

    /// Anti-aliased stride-2 downsampling.
    pub fn blur_pool(&mut self, x: Var) -> Result<Var> {
        let dims = dims4(self.shape(x))?;
        if dims.2 < 2 || dims.3 < 2 {
            return Err(dim_err!("blur pool needs H, W >= 2, got {:?}", self.shape(x)));
        }
        let (ho, wo) = layout::blur_out_extent(dims.2, dims.3);
        let out = layout::blur_pool(self.value(x).data(), dims);
        let out = Tensor::new(&[dims.0, dims.1, ho, wo], out)?;
        Ok(self.push(out, Op::BlurPool(x), &[x]))
    }

    pub fn space_to_depth(&mut self, x: Var, block: usize) -> Result<Var> {
        let dims = dims4(self.shape(x))?;
        if block == 0 || dims.2 % block != 0 || dims.3 % block != 0 {
            return Err(dim_err!(
                "space_to_depth: {}x{} not divisible by block {}",
                dims.2,
                dims.3,
                block
            ));
        }
        let out = layout::space_to_depth(self.value(x).data(), dims, block);
        let out = Tensor::new(&[dims.0, dims.1 * block * block, dims.2 / block, dims.3 / block], out)?;
        Ok(self.push(out, Op::SpaceToDepth { x, block }, &[x]))
    }

    /// `x[B×C×H×W] ⊙ g[B×C]` broadcast over the spatial axes.
    pub fn channel_scale(&mut self, x: Var, g: Var) -> Result<Var> {
        let (b, c, h, w) = dims4(self.shape(x))?;
        if self.shape(g) != [b, c] {
            return Err(dim_err!(
                "channel gate {:?} does not match input {:?}",
                self.shape(g),
                self.shape(x)
            ));
        }
        let s = h * w;
        let gate = self.value(g).data();
        let mut out = self.value(x).data().to_vec();
        for (r, row) in out.chunks_mut(s).enumerate() {
            for v in row {
                *v = *v * gate[r];
            }
        }
        let out = Tensor::new(&[b, c, h, w], out)?;
        Ok(self.push(out, Op::ChannelScale { x, g }, &[x, g]))
    }

    fn attention(&mut self, q: Var, k: Var, v: Var, r: Var, kind: AttnKind) -> Result<Var> {
        let (b, cq, h, w) = dims4(self.shape(q))?;
        let (b_v, c, h_v, w_v) = dims4(self.shape(v))?;
        if self.shape(k) != self.shape(q) || self.shape(r) != self.shape(v) || (b, h, w) != (b_v, h_v, w_v) {
            return Err(dim_err!(
                "attention operand shapes q{:?} k{:?} v{:?} r{:?}",
                self.shape(q),
                self.shape(k),
                self.shape(v),
                self.shape(r)
            ));
        }
        if let AttnKind::Dense(Some(mask)) = &kind {
            if mask.len() != (h * w) * (h * w) {
                return Err(dim_err!("attention mask needs {} entries", (h * w) * (h * w)));
            }
        }
        let dims = AttnDims {
            batch: b,
            qk_channels: cq,
            channels: c,
            height: h,
            width: w,
        };
        let mut counters = self.counters;
        let (out, attn) = attention::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            self.value(r).data(),
            &dims,
            kind.pattern(),
            &mut counters,
        );
        self.counters = counters;
        let out = Tensor::new(&[b, c, h, w], out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                r,
                attn,
                dims,
                kind,
            },
            &[q, k, v, r],
        ))
    }

    /// One criss-cross aggregation: `r + Σ softmax(q·k) v` over each
    /// position's row and column.
    pub fn criss_cross(&mut self, q: Var, k: Var, v: Var, r: Var) -> Result<Var> {
        self.attention(q, k, v, r, AttnKind::CrissCross)
    }

    /// Dense attention over all positions, optionally masked
    /// (`mask[query·HW + key]`, `true` keeps the pair).
    pub fn dense_attention(&mut self, q: Var, k: Var, v: Var, r: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        self.attention(q, k, v, r, AttnKind::Dense(mask))
    }

    /// Attention weights saved by an attention op, laid out `B×slots×H×W`.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { attn, .. } => Some(attn),
            _ => None,
        }
    }

    /// Mean softmax cross-entropy of `logits[B×K]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = match *self.shape(logits) {
            [b, k] => (b, k),
            _ => return Err(dim_err!("logits must be B×K, got {:?}", self.shape(logits))),
        };
        if labels.len() != b {
            return Err(dim_err!("{} labels for batch of {}", labels.len(), b));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(alloc::format!("label {bad} out of range for {k} classes")));
        }
        let (loss, probs) = norm::cross_entropy(self.value(logits).data(), labels, k);
        let out = Tensor::scalar(loss);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Contract(
                "loss does not depend on any leaf that requires grad".into(),
            ));
        }
        let mut slots = Slots {
            grads: vec![None; self.nodes.len()],
            nodes: &self.nodes,
        };
        slots.grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = slots.grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut slots)?;
        }
        Ok(Gradients { slots: slots.grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, s: &mut Slots<'_, T>) -> Result<()> {
        let gd = g.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Mul(a, b) => {
                let is_mul = matches!(node.op, Op::Mul(..));
                let bc = broadcast(self.shape(*a), self.shape(*b))?;
                let (va, vb) = (val(*a), val(*b));
                let n = gd.len();
                let ia = |i: usize| bc.as_ref().map_or(i, |m| m.a[i]);
                let ib = |i: usize| bc.as_ref().map_or(i, |m| m.b[i]);
                s.with(*a, |ga| {
                    for i in 0..n {
                        let d = if is_mul { gd[i] * vb[ib(i)] } else { gd[i] };
                        ga[ia(i)] = ga[ia(i)] + d;
                    }
                });
                s.with(*b, |gb| {
                    for i in 0..n {
                        let d = if is_mul { gd[i] * va[ia(i)] } else { gd[i] };
                        gb[ib(i)] = gb[ib(i)] + d;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                s.with(*x, |gx| {
                    for i in 0..gd.len() {
                        if xv[i] > T::zero() {
                            gx[i] = gx[i] + gd[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                s.with(*x, |gx| {
                    for i in 0..gd.len() {
                        gx[i] = gx[i] + gd[i] * y[i] * (T::one() - y[i]);
                    }
                });
            }
            Op::Reshape(x) => s.with(*x, |gx| {
                for (a, &b) in gx.iter_mut().zip(gd) {
                    *a = *a + b;
                }
            }),
            Op::Sum(x) => {
                let g0 = gd[0];
                s.with(*x, |gx| {
                    for a in gx.iter_mut() {
                        *a = *a + g0;
                    }
                });
            }
            Op::SumLast(x) => {
                let last = *self.shape(*x).last().unwrap_or(&1);
                s.with(*x, |gx| {
                    for (i, a) in gx.iter_mut().enumerate() {
                        *a = *a + gd[i / last];
                    }
                });
            }
            Op::StackLast(xs) => {
                let n = xs.len();
                for (slot, &x) in xs.iter().enumerate() {
                    s.with(x, |gx| {
                        for (i, a) in gx.iter_mut().enumerate() {
                            *a = *a + gd[i * n + slot];
                        }
                    });
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (va, vb) = (val(*a), val(*b));
                s.with(*a, |ga| gemm_nt(m, n, k, gd, vb, ga));
                s.with(*b, |gb| gemm_tn(k, m, n, va, gd, gb));
            }
            Op::Linear { x, w, b } => {
                let (bn, i) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                let (vx, vw) = (val(*x), val(*w));
                s.with(*x, |gx| gemm_nn(bn, o, i, gd, vw, gx));
                s.with(*w, |gw| gemm_tn(o, bn, i, gd, vx, gw));
                if let Some(b) = b {
                    s.with(*b, |gb| {
                        for row in gd.chunks(o) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a = *a + v;
                            }
                        }
                    });
                }
            }
            Op::Conv2d {
                x,
                w,
                geom,
                out_channels,
            } => {
                let mut gx = s.needs(*x).then(|| s.take(*x));
                let mut gw = s.needs(*w).then(|| s.take(*w));
                conv::conv2d_backward(
                    val(*x),
                    val(*w),
                    *out_channels,
                    geom,
                    gd,
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                )?;
                if let Some(t) = gx {
                    s.put(*x, t);
                }
                if let Some(t) = gw {
                    s.put(*w, t);
                }
            }
            Op::Depthwise { x, w, geom } => {
                let mut gx = s.needs(*x).then(|| s.take(*x));
                let mut gw = s.needs(*w).then(|| s.take(*w));
                conv::depthwise_backward(
                    val(*x),
                    val(*w),
                    geom,
                    gd,
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                )?;
                if let Some(t) = gx {
                    s.put(*x, t);
                }
                if let Some(t) = gw {
                    s.put(*w, t);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let dims = channel_dims(self.shape(*x))?;
                let mut gx = s.needs(*x).then(|| s.take(*x));
                let mut gg = s.needs(*gamma).then(|| s.take(*gamma));
                let mut gb = s.needs(*beta).then(|| s.take(*beta));
                norm::batch_norm_backward(
                    gd,
                    xhat,
                    inv_std,
                    val(*gamma),
                    dims,
                    *batch_stats,
                    gx.as_mut().map(|t| t.data_mut()),
                    gg.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                for (v, t) in [(*x, gx), (*gamma, gg), (*beta, gb)] {
                    if let Some(t) = t {
                        s.put(v, t);
                    }
                }
            }
            Op::GlobalMean(x) => {
                let (_, _, h, w) = dims4(self.shape(*x))?;
                let inv = T::one() / T::of((h * w) as f64);
                s.with(*x, |gx| {
                    for (i, a) in gx.iter_mut().enumerate() {
                        *a = *a + gd[i / (h * w)] * inv;
                    }
                });
            }
            Op::GlobalStd { x, mean } => {
                let (_, _, h, w) = dims4(self.shape(*x))?;
                let n = h * w;
                let std = node.value.data();
                let xv = val(*x);
                let nn = T::of(n as f64);
                s.with(*x, |gx| {
                    for (i, a) in gx.iter_mut().enumerate() {
                        let r = i / n;
                        *a = *a + gd[r] * (xv[i] - mean[r]) / (nn * std[r]);
                    }
                });
            }
            Op::Softmax { x, outer, axis, inner } => {
                let y = node.value.data();
                s.with(*x, |gx| norm::softmax_backward(y, gd, *outer, *axis, *inner, gx));
            }
            Op::BlurPool(x) => {
                let dims = dims4(self.shape(*x))?;
                s.with(*x, |gx| layout::blur_pool_backward(gd, dims, gx));
            }
            Op::SpaceToDepth { x, block } => {
                let dims = dims4(self.shape(*x))?;
                let back = layout::depth_to_space(gd, dims, *block);
                s.with(*x, |gx| {
                    for (a, &b) in gx.iter_mut().zip(&back) {
                        *a = *a + b;
                    }
                });
            }
            Op::ChannelScale { x, g: gate } => {
                let (_, _, h, w) = dims4(self.shape(*x))?;
                let sp = h * w;
                let (xv, gv) = (val(*x), val(*gate));
                s.with(*x, |gx| {
                    for (i, a) in gx.iter_mut().enumerate() {
                        *a = *a + gd[i] * gv[i / sp];
                    }
                });
                s.with(*gate, |gg| {
                    for (r, a) in gg.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for i in r * sp..(r + 1) * sp {
                            acc = acc + gd[i] * xv[i];
                        }
                        *a = *a + acc;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                r,
                attn,
                dims,
                kind,
            } => {
                let mut bufs: [Option<Tensor<T>>; 4] = [*q, *k, *v, *r].map(|x| s.needs(x).then(|| s.take(x)));
                {
                    let [gq, gk, gv, gr] = &mut bufs;
                    attention::attention_backward(
                        val(*q),
                        val(*k),
                        val(*v),
                        attn,
                        dims,
                        kind.pattern(),
                        gd,
                        AttnGrads {
                            q: gq.as_mut().map(|t| t.data_mut()),
                            k: gk.as_mut().map(|t| t.data_mut()),
                            v: gv.as_mut().map(|t| t.data_mut()),
                            r: gr.as_mut().map(|t| t.data_mut()),
                        },
                    );
                }
                for (x, t) in [*q, *k, *v, *r].into_iter().zip(bufs) {
                    if let Some(t) = t {
                        s.put(x, t);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let scale = gd[0] / T::of(labels.len() as f64);
                s.with(*logits, |gl| {
                    for (b, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            gl[b * k + j] = gl[b * k + j] + scale * (probs[b * k + j] - onehot);
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Whether batch norm uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameter ids of one batch-norm layer.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// A tape bound to a parameter store for one forward/backward pass.
///
/// Parameters are read from the store when first used and cached, so a
/// parameter used twice (shared weights) is a single leaf whose gradient
/// collects both uses. The store is never mutated here; running-statistics
/// updates are queued and applied by the caller.
pub struct Session<'s, T> {
    tape: Tape<T>,
    store: &'s ParamStore<T>,
    mode: Mode,
    bound: Vec<Option<Var>>,
    stats: Vec<StatUpdate<T>>,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Session {
            tape: Tape::new(),
            store,
            mode,
            bound: vec![None; store.len()],
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.tape.leaf(p.value.clone(), p.kind.trainable());
        self.bound[id.index()] = Some(v);
        v
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.leaf(value, false)
    }

    /// Input leaf whose gradient is wanted.
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.tape.leaf(value, true)
    }

    pub fn batch_norm(&mut self, x: Var, ids: &BatchNormIds) -> Result<Var> {
        let gamma = self.param(ids.gamma);
        let beta = self.param(ids.beta);
        match self.mode {
            Mode::Train => {
                let (y, mean, var) = self.tape.batch_norm_train(x, gamma, beta)?;
                self.stats.push(StatUpdate {
                    running_mean: ids.running_mean,
                    running_var: ids.running_var,
                    batch_mean: mean,
                    batch_var: var,
                });
                Ok(y)
            }
            Mode::Eval => {
                let store = self.store;
                self.tape.batch_norm_eval(
                    x,
                    gamma,
                    beta,
                    store.value(ids.running_mean),
                    store.value(ids.running_var),
                )
            }
        }
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                grads.get(v).map(|g| (ParamId(i), g.clone()))
            })
            .collect()
    }

    pub fn stat_updates(&self) -> &[StatUpdate<T>] {
        &self.stats
    }

    pub fn into_stat_updates(self) -> Vec<StatUpdate<T>> {
        self.stats
    }
}

impl<T> Deref for Session<'_, T> {
    type Target = Tape<T>;

    fn deref(&self) -> &Tape<T> {
        &self.tape
    }
}

impl<T> DerefMut for Session<'_, T> {
    fn deref_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }
}
