//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! The primitive set is closed: circular 2-d convolution (plus its adjoint
//! and kernel-gradient companions), ELU and its first two derivatives,
//! elementwise add/sub/mul/scale, global and spatial sums with their
//! broadcast adjoints, factor-2 down/upsampling, and reshape. Extending the
//! set means adding a forward rule, a node-emitting backward rule, and a
//! finite-difference test.
//!
//! Backward rules emit ordinary tape nodes, so the gradient returned by
//! [`Tape::vjp`] is itself a recorded, differentiable value: sweeping the
//! extended tape a second time yields exact second-order products
//! (Hessian-vector and mixed parameter/input derivatives). This is the
//! mechanism behind the regularizer's weight-gradient products.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub enum Op {
    /// Leaf holding an externally supplied value.
    Input,
    /// Circular 2-d cross-correlation: `[ci,h,w] x [co,ci,kh,kw] -> [co,h,w]`.
    Conv2d,
    /// Exact adjoint of [`Op::Conv2d`] in its image argument:
    /// `[co,h,w] x [co,ci,kh,kw] -> [ci,h,w]`.
    ConvT2d,
    /// Kernel gradient of [`Op::Conv2d`]:
    /// image `[ci,h,w]` x cotangent `[co,h,w] -> [co,ci,kh,kw]`.
    ConvKGrad { kshape: [usize; 4] },
    /// Add a per-channel bias: `[c,h,w] + [c]`.
    AddBias,
    /// Sum over the spatial axes: `[c,h,w] -> [c]`.
    SumSpatial,
    /// Replicate over spatial axes: `[c] -> [c,h,w]`.
    BroadcastSpatial { hw: (usize, usize) },
    /// `z` for `z > 0`, `exp(z) - 1` otherwise (alpha = 1).
    Elu,
    /// First derivative of [`Op::Elu`].
    EluDeriv,
    /// Second derivative of [`Op::Elu`] (`exp(z)` below zero, else 0).
    EluCurv,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Multiply by a compile-time constant (not a differentiable input).
    Scale(f64),
    /// Sum of all entries, as a `[1]` tensor.
    SumAll,
    /// Replicate a `[1]` scalar to an arbitrary shape.
    BroadcastAll { shape: Vec<usize> },
    /// Keep every second pixel: `[c,h,w] -> [c,h/2,w/2]`.
    Downsample2,
    /// Zero-fill upsample, exact adjoint of [`Op::Downsample2`].
    UpsampleZero2,
    Reshape { shape: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    ins: Vec<NodeId>,
}

/// Append-only record of a primitive computation. Nodes are immutable once
/// pushed; `vjp` only ever extends the tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
}

// ---- raw convolution kernels -------------------------------------------------
//
// All three share the index convention: output pixel (oy, ox) reads input
// pixel ((oy + dy - kh/2) mod h, (ox + dx - kw/2) mod w) for kernel tap
// (dy, dx). `adj_input` is the exact transpose of `raw` in the image
// argument; `kgrad` is the derivative of `raw` in the kernel argument.

fn wrap_table(n: usize, taps: usize, off: usize, sign_forward: bool) -> Vec<usize> {
    // sign_forward: source = (i + d - off) mod n; else source = (i - d + off) mod n
    let mut t = Vec::with_capacity(taps * n);
    for d in 0..taps {
        for i in 0..n {
            let idx = if sign_forward { i + d + n - off } else { i + n + off - d };
            t.push(idx % n);
        }
    }
    t
}

pub(crate) fn conv2d_raw(x: &Tensor, k: &Tensor) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ywrap = wrap_table(h, kh, kh / 2, true);
    let xwrap = wrap_table(w, kw, kw / 2, true);
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; co * h * w];
    for c_o in 0..co {
        let obase = c_o * h * w;
        for c_i in 0..ci {
            let xbase = c_i * h * w;
            let kbase = (c_o * ci + c_i) * kh * kw;
            for dy in 0..kh {
                let yrow = &ywrap[dy * h..(dy + 1) * h];
                for dx in 0..kw {
                    let kv = kd[kbase + dy * kw + dx];
                    let xcol = &xwrap[dx * w..(dx + 1) * w];
                    for oy in 0..h {
                        let xrow = xbase + yrow[oy] * w;
                        let orow = obase + oy * w;
                        for ox in 0..w {
                            out[orow + ox] += kv * xd[xrow + xcol[ox]];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[co, h, w], out).unwrap()
}

pub(crate) fn conv2d_adj_input(gy: &Tensor, k: &Tensor) -> Tensor {
    let (co, h, w) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
    let (ci, kh, kw) = (k.shape()[1], k.shape()[2], k.shape()[3]);
    let ywrap = wrap_table(h, kh, kh / 2, false);
    let xwrap = wrap_table(w, kw, kw / 2, false);
    let (gd, kd) = (gy.data(), k.data());
    let mut out = vec![0.0; ci * h * w];
    for c_i in 0..ci {
        let obase = c_i * h * w;
        for c_o in 0..co {
            let gbase = c_o * h * w;
            let kbase = (c_o * ci + c_i) * kh * kw;
            for dy in 0..kh {
                let yrow = &ywrap[dy * h..(dy + 1) * h];
                for dx in 0..kw {
                    let kv = kd[kbase + dy * kw + dx];
                    let xcol = &xwrap[dx * w..(dx + 1) * w];
                    for iy in 0..h {
                        let grow = gbase + yrow[iy] * w;
                        let orow = obase + iy * w;
                        for ix in 0..w {
                            out[orow + ix] += kv * gd[grow + xcol[ix]];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[ci, h, w], out).unwrap()
}

pub(crate) fn conv2d_kgrad(x: &Tensor, gy: &Tensor, kshape: [usize; 4]) -> Tensor {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let [co, ci, kh, kw] = kshape;
    let ywrap = wrap_table(h, kh, kh / 2, true);
    let xwrap = wrap_table(w, kw, kw / 2, true);
    let (xd, gd) = (x.data(), gy.data());
    let mut out = vec![0.0; co * ci * kh * kw];
    for c_o in 0..co {
        let gbase = c_o * h * w;
        for c_i in 0..ci {
            let xbase = c_i * h * w;
            let kbase = (c_o * ci + c_i) * kh * kw;
            for dy in 0..kh {
                let yrow = &ywrap[dy * h..(dy + 1) * h];
                for dx in 0..kw {
                    let xcol = &xwrap[dx * w..(dx + 1) * w];
                    let mut acc = 0.0;
                    for oy in 0..h {
                        let xrow = xbase + yrow[oy] * w;
                        let grow = gbase + oy * w;
                        for ox in 0..w {
                            acc += xd[xrow + xcol[ox]] * gd[grow + ox];
                        }
                    }
                    out[kbase + dy * kw + dx] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[co, ci, kh, kw], out).unwrap()
}

fn elu(z: f64) -> f64 {
    if z > 0.0 { z } else { z.exp() - 1.0 }
}
fn elu_d(z: f64) -> f64 {
    if z > 0.0 { 1.0 } else { z.exp() }
}
fn elu_dd(z: f64) -> f64 {
    if z > 0.0 { 0.0 } else { z.exp() }
}

/// Forward rule shared by the builder methods and [`Tape::replay`].
fn eval(op: &Op, ins: &[&Tensor]) -> Tensor {
    match op {
        Op::Input => ins[0].clone(),
        Op::Conv2d => conv2d_raw(ins[0], ins[1]),
        Op::ConvT2d => conv2d_adj_input(ins[0], ins[1]),
        Op::ConvKGrad { kshape } => conv2d_kgrad(ins[0], ins[1], *kshape),
        Op::AddBias => {
            let (c, h, w) = (ins[0].shape()[0], ins[0].shape()[1], ins[0].shape()[2]);
            let mut out = ins[0].clone();
            let b = ins[1].data();
            for cc in 0..c {
                for v in &mut out.data_mut()[cc * h * w..(cc + 1) * h * w] {
                    *v += b[cc];
                }
            }
            out
        }
        Op::SumSpatial => {
            let (c, h, w) = (ins[0].shape()[0], ins[0].shape()[1], ins[0].shape()[2]);
            let d = ins[0].data();
            let out = (0..c).map(|cc| d[cc * h * w..(cc + 1) * h * w].iter().sum()).collect();
            Tensor::from_vec(&[c], out).unwrap()
        }
        Op::BroadcastSpatial { hw } => {
            let c = ins[0].shape()[0];
            let (h, w) = *hw;
            let b = ins[0].data();
            let mut out = vec![0.0; c * h * w];
            for cc in 0..c {
                for v in &mut out[cc * h * w..(cc + 1) * h * w] {
                    *v = b[cc];
                }
            }
            Tensor::from_vec(&[c, h, w], out).unwrap()
        }
        Op::Elu => ins[0].map(elu),
        Op::EluDeriv => ins[0].map(elu_d),
        Op::EluCurv => ins[0].map(elu_dd),
        Op::Add => ins[0].add(ins[1]),
        Op::Sub => ins[0].sub(ins[1]),
        Op::Mul => ins[0].mul(ins[1]),
        Op::Scale(c) => ins[0].scale(*c),
        Op::SumAll => Tensor::scalar(ins[0].sum()),
        Op::BroadcastAll { shape } => Tensor::full(shape, ins[0].data()[0]),
        Op::Downsample2 => {
            let (c, h, w) = (ins[0].shape()[0], ins[0].shape()[1], ins[0].shape()[2]);
            let d = ins[0].data();
            let (h2, w2) = (h / 2, w / 2);
            let mut out = vec![0.0; c * h2 * w2];
            for cc in 0..c {
                for y in 0..h2 {
                    for x in 0..w2 {
                        out[(cc * h2 + y) * w2 + x] = d[(cc * h + 2 * y) * w + 2 * x];
                    }
                }
            }
            Tensor::from_vec(&[c, h2, w2], out).unwrap()
        }
        Op::UpsampleZero2 => {
            let (c, h, w) = (ins[0].shape()[0], ins[0].shape()[1], ins[0].shape()[2]);
            let d = ins[0].data();
            let (h2, w2) = (2 * h, 2 * w);
            let mut out = vec![0.0; c * h2 * w2];
            for cc in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out[(cc * h2 + 2 * y) * w2 + 2 * x] = d[(cc * h + y) * w + x];
                    }
                }
            }
            Tensor::from_vec(&[c, h2, w2], out).unwrap()
        }
        Op::Reshape { shape } => ins[0].reshape(shape).unwrap(),
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        self.values[id].shape()
    }

    fn push(&mut self, op: Op, ins: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, ins });
        self.values.push(value);
        self.nodes.len() - 1
    }

    fn push_eval(&mut self, op: Op, ins: Vec<NodeId>) -> NodeId {
        let refs: Vec<&Tensor> = ins.iter().map(|&i| &self.values[i]).collect();
        let value = eval(&op, &refs);
        self.push(op, ins, value)
    }

    /// New leaf holding `value`.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, vec![], value)
    }

    fn require_3d(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize)> {
        let s = self.shape_of(id);
        if s.len() != 3 {
            return Err(Error::shape(format!("{what}: expected [c,h,w], got {s:?}")));
        }
        Ok((s[0], s[1], s[2]))
    }

    fn require_kernel(&self, id: NodeId) -> Result<[usize; 4]> {
        let s = self.shape_of(id);
        if s.len() != 4 {
            return Err(Error::shape(format!("kernel: expected [co,ci,kh,kw], got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId) -> Result<NodeId> {
        let (ci, _, _) = self.require_3d(x, "conv2d input")?;
        let ks = self.require_kernel(k)?;
        if ks[1] != ci {
            return Err(Error::shape(format!(
                "conv2d: kernel expects {} input channels, image has {ci}",
                ks[1]
            )));
        }
        Ok(self.push_eval(Op::Conv2d, vec![x, k]))
    }

    pub fn conv_t2d(&mut self, g: NodeId, k: NodeId) -> Result<NodeId> {
        let (co, _, _) = self.require_3d(g, "conv_t2d input")?;
        let ks = self.require_kernel(k)?;
        if ks[0] != co {
            return Err(Error::shape(format!(
                "conv_t2d: kernel expects {} output channels, image has {co}",
                ks[0]
            )));
        }
        Ok(self.push_eval(Op::ConvT2d, vec![g, k]))
    }

    pub fn conv_kgrad(&mut self, x: NodeId, gy: NodeId, kshape: [usize; 4]) -> Result<NodeId> {
        let (ci, h, w) = self.require_3d(x, "conv_kgrad image")?;
        let (co, gh, gw) = self.require_3d(gy, "conv_kgrad cotangent")?;
        if ci != kshape[1] || co != kshape[0] || (h, w) != (gh, gw) {
            return Err(Error::shape(format!(
                "conv_kgrad: incompatible [{ci},{h},{w}] x [{co},{gh},{gw}] for kernel {kshape:?}"
            )));
        }
        Ok(self.push_eval(Op::ConvKGrad { kshape }, vec![x, gy]))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (c, _, _) = self.require_3d(x, "add_bias input")?;
        if self.shape_of(b) != [c] {
            return Err(Error::shape(format!(
                "add_bias: bias {:?} vs {c} channels",
                self.shape_of(b)
            )));
        }
        Ok(self.push_eval(Op::AddBias, vec![x, b]))
    }

    pub fn sum_spatial(&mut self, x: NodeId) -> Result<NodeId> {
        self.require_3d(x, "sum_spatial input")?;
        Ok(self.push_eval(Op::SumSpatial, vec![x]))
    }

    pub fn broadcast_spatial(&mut self, b: NodeId, hw: (usize, usize)) -> Result<NodeId> {
        if self.shape_of(b).len() != 1 {
            return Err(Error::shape("broadcast_spatial: expected [c]"));
        }
        Ok(self.push_eval(Op::BroadcastSpatial { hw }, vec![b]))
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        self.push_eval(Op::Elu, vec![x])
    }

    pub fn elu_deriv(&mut self, x: NodeId) -> NodeId {
        self.push_eval(Op::EluDeriv, vec![x])
    }

    pub fn elu_curv(&mut self, x: NodeId) -> NodeId {
        self.push_eval(Op::EluCurv, vec![x])
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::shape(format!(
                "{op:?}: shape {:?} vs {:?}",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        Ok(self.push_eval(op, vec![a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, a, b)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push_eval(Op::Scale(c), vec![x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.push_eval(Op::SumAll, vec![x])
    }

    pub fn broadcast_all(&mut self, s: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape_of(s) != [1] {
            return Err(Error::shape("broadcast_all: expected [1] scalar"));
        }
        Ok(self.push_eval(Op::BroadcastAll { shape: shape.to_vec() }, vec![s]))
    }

    pub fn downsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, h, w) = self.require_3d(x, "downsample2 input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("downsample2: odd extents {h}x{w}")));
        }
        Ok(self.push_eval(Op::Downsample2, vec![x]))
    }

    pub fn upsample_zero2(&mut self, x: NodeId) -> Result<NodeId> {
        self.require_3d(x, "upsample_zero2 input")?;
        Ok(self.push_eval(Op::UpsampleZero2, vec![x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.values[x].numel() {
            return Err(Error::shape(format!(
                "reshape: {:?} to {shape:?}",
                self.shape_of(x)
            )));
        }
        Ok(self.push_eval(Op::Reshape { shape: shape.to_vec() }, vec![x]))
    }

    /// Vector-Jacobian products of `outputs` with respect to `wrt`, seeded by
    /// `cotangents` (one per output, matching shapes). The adjoint sweep
    /// emits new nodes, so the returned gradients can be differentiated again
    /// by a later `vjp` over the extended tape. Nodes `wrt` never reached by
    /// the sweep get zero gradients.
    pub fn vjp(
        &mut self,
        outputs: &[NodeId],
        cotangents: &[NodeId],
        wrt: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        if outputs.len() != cotangents.len() {
            return Err(Error::shape(format!(
                "vjp: {} outputs but {} cotangents",
                outputs.len(),
                cotangents.len()
            )));
        }
        for (&o, &c) in outputs.iter().zip(cotangents) {
            if self.shape_of(o) != self.shape_of(c) {
                return Err(Error::shape(format!(
                    "vjp: cotangent {:?} vs output {:?}",
                    self.shape_of(c),
                    self.shape_of(o)
                )));
            }
        }
        let frontier = self.nodes.len();
        let mut adj: Vec<Option<NodeId>> = vec![None; frontier];
        for (&o, &c) in outputs.iter().zip(cotangents) {
            Self::accumulate(self, &mut adj, o, c);
        }
        for id in (0..frontier).rev() {
            let g = match adj[id] {
                Some(g) => g,
                None => continue,
            };
            let Node { op, ins } = self.nodes[id].clone();
            match op {
                Op::Input => {}
                Op::Conv2d => {
                    let ks = self.require_kernel(ins[1])?;
                    let gx = self.conv_t2d(g, ins[1])?;
                    let gk = self.conv_kgrad(ins[0], g, ks)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                    Self::accumulate(self, &mut adj, ins[1], gk);
                }
                Op::ConvT2d => {
                    let ks = self.require_kernel(ins[1])?;
                    let gz = self.conv2d(g, ins[1])?;
                    let gk = self.conv_kgrad(g, ins[0], ks)?;
                    Self::accumulate(self, &mut adj, ins[0], gz);
                    Self::accumulate(self, &mut adj, ins[1], gk);
                }
                Op::ConvKGrad { .. } => {
                    let gx = self.conv_t2d(ins[1], g)?;
                    let ggy = self.conv2d(ins[0], g)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                    Self::accumulate(self, &mut adj, ins[1], ggy);
                }
                Op::AddBias => {
                    let gb = self.sum_spatial(g)?;
                    Self::accumulate(self, &mut adj, ins[0], g);
                    Self::accumulate(self, &mut adj, ins[1], gb);
                }
                Op::SumSpatial => {
                    let s = self.shape_of(ins[0]);
                    let hw = (s[1], s[2]);
                    let gx = self.broadcast_spatial(g, hw)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
                Op::BroadcastSpatial { .. } => {
                    let gb = self.sum_spatial(g)?;
                    Self::accumulate(self, &mut adj, ins[0], gb);
                }
                Op::Elu => {
                    let d = self.elu_deriv(ins[0]);
                    let gx = self.mul(g, d)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
                Op::EluDeriv | Op::EluCurv => {
                    let d = self.elu_curv(ins[0]);
                    let gx = self.mul(g, d)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
                Op::Add => {
                    Self::accumulate(self, &mut adj, ins[0], g);
                    Self::accumulate(self, &mut adj, ins[1], g);
                }
                Op::Sub => {
                    let gneg = self.scale(g, -1.0);
                    Self::accumulate(self, &mut adj, ins[0], g);
                    Self::accumulate(self, &mut adj, ins[1], gneg);
                }
                Op::Mul => {
                    let ga = self.mul(g, ins[1])?;
                    let gb = self.mul(g, ins[0])?;
                    Self::accumulate(self, &mut adj, ins[0], ga);
                    Self::accumulate(self, &mut adj, ins[1], gb);
                }
                Op::Scale(c) => {
                    let gx = self.scale(g, c);
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
                Op::SumAll => {
                    let shape = self.shape_of(ins[0]).to_vec();
                    let gx = self.broadcast_all(g, &shape)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
                Op::BroadcastAll { .. } => {
                    let gs = self.sum_all(g);
                    Self::accumulate(self, &mut adj, ins[0], gs);
                }
                Op::Downsample2 => {
                    let gx = self.upsample_zero2(g)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
                Op::UpsampleZero2 => {
                    let gx = self.downsample2(g)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
                Op::Reshape { .. } => {
                    let shape = self.shape_of(ins[0]).to_vec();
                    let gx = self.reshape(g, &shape)?;
                    Self::accumulate(self, &mut adj, ins[0], gx);
                }
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for &t in wrt {
            match adj.get(t).copied().flatten() {
                Some(g) => out.push(g),
                None => {
                    let z = Tensor::zeros(self.shape_of(t));
                    out.push(self.input(z));
                }
            }
        }
        Ok(out)
    }

    fn accumulate(tape: &mut Tape, adj: &mut [Option<NodeId>], target: NodeId, g: NodeId) {
        if target >= adj.len() {
            // Node created during this sweep; its adjoint is not tracked.
            return;
        }
        adj[target] = match adj[target] {
            None => Some(g),
            Some(prev) => Some(tape.add(prev, g).expect("adjoint accumulation shape")),
        };
    }

    /// Recompute every node from its recorded inputs and check the stored
    /// values are reproduced bit-for-bit.
    pub fn replay(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Input) {
                continue;
            }
            let refs: Vec<&Tensor> = node.ins.iter().map(|&i| &self.values[i]).collect();
            let v = eval(&node.op, &refs);
            if v != self.values[id] {
                return Err(Error::numeric(format!("replay mismatch at node {id}")));
            }
        }
        Ok(())
    }
}

/// A finished forward recording: the tape plus which nodes are the program's
/// inputs and outputs.
pub struct Recording {
    pub tape: Tape,
    pub input_ids: Vec<NodeId>,
    pub output_ids: Vec<NodeId>,
}

/// Run `program` over fresh leaves holding `inputs`, recording every
/// primitive application. Returns the output values and the recording.
pub fn record_forward<F>(program: F, inputs: &[Tensor]) -> Result<(Vec<Tensor>, Recording)>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<Vec<NodeId>>,
{
    for t in inputs {
        if !t.is_finite() {
            return Err(Error::numeric("record_forward: non-finite input"));
        }
    }
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let output_ids = program(&mut tape, &ids)?;
    let outputs = output_ids.iter().map(|&o| tape.value(o).clone()).collect();
    Ok((outputs, Recording { tape, input_ids: ids, output_ids }))
}

impl Recording {
    /// Gradients of the recorded outputs with respect to every program input,
    /// seeded by `cotangents`.
    pub fn vjp(&mut self, cotangents: &[Tensor]) -> Result<Vec<Tensor>> {
        let c_ids: Vec<NodeId> =
            cotangents.iter().map(|t| self.tape.input(t.clone())).collect();
        let wrt = self.input_ids.clone();
        let g = self.tape.vjp(&self.output_ids.clone(), &c_ids, &wrt)?;
        Ok(g.into_iter().map(|id| self.tape.value(id).clone()).collect())
    }

    pub fn outputs(&self) -> Vec<Tensor> {
        self.output_ids.iter().map(|&o| self.tape.value(o).clone()).collect()
    }
}

/// Central finite differences of a scalar-valued function, entry by entry.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut g = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let x0 = x.data()[i];
        probe.data_mut()[i] = x0 + step;
        let fp = f(&probe)?;
        probe.data_mut()[i] = x0 - step;
        let fm = f(&probe)?;
        probe.data_mut()[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numeric(format!(
                "finite differences: non-finite evaluation at entry {i}"
            )));
        }
        g.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}
