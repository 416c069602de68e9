//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its value and enough information to
//! run its backward rule. Nodes are stored in creation order, which is a
//! topological order, so a backward pass is a single reverse sweep.
//!
//! Gradient gating happens when gradients are *accumulated* into a
//! [`ParamStore`], never by cutting the graph: a parameter outside the gate
//! still conducts gradient to everything upstream of it.

use super::gemm::gemm;
use super::params::{GroupSet, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{GraspError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; also the index into [`Tape::gradients`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn ck(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn out_px(&self) -> usize {
        self.ho * self.wo
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        g: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LeakyRelu(Var, f64),
    Softmax(Var),
    Log(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Crop3x3 {
        x: Var,
        centers: Vec<(usize, usize)>,
    },
    Reshape(Var),
    Gather {
        x: Var,
        index: Vec<Option<usize>>,
    },
    Sum(Var),
    SmoothL1(Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> GraspError {
    GraspError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let px = g.out_px();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * px..(row + 1) * px];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * g.h + ii as usize) * g.w..(ci * g.h + ii as usize + 1) * g.w];
                    for (oj, out) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *out = if jj < 0 || jj >= g.w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let px = g.out_px();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * px..(row + 1) * px];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dx[base + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input that is not a parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// An input that never needs a gradient (images, masks).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Loads the current value of a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).value.clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 2-D convolution of `x: [N][C][H][W]` with `k: [F][C][KH][KW]` and
    /// optional `b: [F]`, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || stride == 0 {
            return Err(shape_err("conv2d", &xs, &ks));
        }
        if let Some(b) = b {
            if self.shape(b) != [ks[0]] {
                return Err(shape_err("conv2d bias", self.shape(b), &ks));
            }
        }
        let (h, w) = (xs[2] + 2 * pad, xs[3] + 2 * pad);
        if h < ks[2] || w < ks[3] {
            return Err(shape_err("conv2d", &xs, &ks));
        }
        let g = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            f: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
            ho: (h - ks[2]) / stride + 1,
            wo: (w - ks[3]) / stride + 1,
        };
        let (px, ck) = (g.out_px(), g.ck());
        let mut out = vec![0.0; g.n * g.f * px];
        let mut cols = vec![0.0; ck * px];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        for n in 0..g.n {
            im2col(&xd[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w], &g, &mut cols);
            let o = &mut out[n * g.f * px..(n + 1) * g.f * px];
            if let Some(b) = b {
                let bd = self.value(b).data();
                for f in 0..g.f {
                    o[f * px..(f + 1) * px].fill(bd[f]);
                }
            }
            gemm(g.f, ck, px, kd, false, &cols, false, 1.0, o);
        }
        let t = Tensor::new(&[g.n, g.f, g.ho, g.wo], out)?;
        let mut deps = vec![x, k];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(t, Op::Conv2d { x, k, b, g }, rg))
    }

    /// `x: [N][I]`, `w: [O][I]`, `b: [O]` → `x wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", &xs, &ws));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * o];
        if let Some(b) = b {
            let bd = self.value(b).data();
            if bd.len() != o {
                return Err(shape_err("linear bias", self.shape(b), &ws));
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bd);
            }
        }
        gemm(
            n,
            i,
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            1.0,
            &mut out,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new(&[n, o], out)?, Op::Linear { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn smooth_l1(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 },
            Op::SmoothL1(x),
        )
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let last = *xs.shape().last().ok_or_else(|| shape_err("softmax", &[], &[]))?;
        let mut out = xs.data().to_vec();
        for row in out.chunks_mut(last) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let t = Tensor::new(xs.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or(GraspError::Empty("concat inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != first[d]) {
                return Err(shape_err("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.numel() / outer.max(1);
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let t = Tensor::new(&out_shape, out)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Extracts the 3×3 neighbourhood of each `(row, col)` of a `[C][H][W]`
    /// (or `[1][C][H][W]`) map, zero-padded at the borders: `[N][C][3][3]`.
    pub fn crop3x3(&mut self, x: Var, centers: &[(usize, usize)]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (c, h, w) = match s.as_slice() {
            [c, h, w] | [1, c, h, w] => (*c, *h, *w),
            _ => return Err(shape_err("crop3x3", &s, &[3, 3])),
        };
        if let Some(&(i, j)) = centers.iter().find(|&&(i, j)| i >= h || j >= w) {
            return Err(shape_err("crop3x3 center", &s, &[i, j]));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; centers.len() * c * 9];
        for (n, &(i, j)) in centers.iter().enumerate() {
            for ch in 0..c {
                for di in 0..3 {
                    let ii = i as isize + di as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in 0..3 {
                        let jj = j as isize + dj as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        out[((n * c + ch) * 3 + di) * 3 + dj] = xd[(ch * h + ii as usize) * w + jj as usize];
                    }
                }
            }
        }
        let t = Tensor::new(&[centers.len(), c, 3, 3], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::Crop3x3 {
                x,
                centers: centers.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Collapses all axes after the first: `[N][...]` → `[N][rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s.first().copied().unwrap_or(1);
        let rest = self.value(x).numel() / n.max(1);
        self.reshape(x, &[n, rest])
    }

    /// Builds a tensor of `shape` whose entries are `x[index[i]]`, or zero
    /// where the index is `None`.
    pub fn gather(&mut self, x: Var, index: Vec<Option<usize>>, shape: &[usize]) -> Result<Var> {
        let xd = self.value(x).data();
        if index.len() != shape.iter().product::<usize>() {
            return Err(shape_err("gather", shape, &[index.len()]));
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= xd.len()) {
            return Err(shape_err("gather index", self.shape(x), &[*bad]));
        }
        let data = index.iter().map(|i| i.map_or(0.0, |i| xd[i])).collect();
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Gather { x, index }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Adjoints of every node with respect to the scalar `loss`, seeded with `seed`.
    pub fn gradients(&self, loss: Var, seed: f64) -> Result<Vec<Option<Tensor>>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(shape_err("backward (loss must be scalar)", lt.shape(), &[1]));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(lt.shape(), seed));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backprop(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(adj)
    }

    /// Backward from `loss`, accumulating into parameters whose group is in `gate`.
    pub fn backward(&self, loss: Var, gate: GroupSet, store: &mut ParamStore) -> Result<()> {
        self.backward_scaled(loss, 1.0, gate, store)
    }

    pub fn backward_scaled(&self, loss: Var, scale: f64, gate: GroupSet, store: &mut ParamStore) -> Result<()> {
        let adj = self.gradients(loss, scale)?;
        for (node, g) in self.nodes.iter().zip(adj) {
            if let (Some(id), Some(g)) = (node.param, g) {
                let p = store.get_mut(id);
                if gate.contains(p.group) {
                    p.grad.add_assign(&g);
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        if !node.requires_grad {
            return;
        }
        let gd = g.data();
        let elementwise = |x: Var, f: &dyn Fn(usize, f64) -> f64| -> Tensor {
            let xv = self.value(x);
            let data = gd.iter().enumerate().map(|(j, &gj)| f(j, gj)).collect();
            Tensor::new(xv.shape(), data).expect("elementwise gradient shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, g: geo } => self.conv_backward(*x, *k, *b, geo, gd, adj),
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, inp) = (xs[0], xs[1]);
                let o = self.shape(*w)[0];
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * inp];
                    gemm(n, o, inp, gd, false, self.value(*w).data(), false, 0.0, &mut dx);
                    accumulate(adj, *x, Tensor::new(&[n, inp], dx).unwrap());
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; o * inp];
                    gemm(o, n, inp, gd, true, self.value(*x).data(), false, 0.0, &mut dw);
                    accumulate(adj, *w, Tensor::new(&[o, inp], dw).unwrap());
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![0.0; o];
                    for row in gd.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    accumulate(adj, b, Tensor::new(&[o], db).unwrap());
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xd = self.value(*x).data();
                let t = elementwise(*x, &|j, gj| if xd[j] > 0.0 { gj } else { slope * gj });
                accumulate(adj, *x, t);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let last = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(last).zip(gd.chunks(last)).zip(dx.chunks_mut(last)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..last {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(adj, *x, Tensor::new(node.value.shape(), dx).unwrap());
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                accumulate(adj, *x, elementwise(*x, &|j, gj| gj / xd[j]));
            }
            Op::Exp(x) => {
                let y = node.value.data();
                accumulate(adj, *x, elementwise(*x, &|j, gj| gj * y[j]));
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                accumulate(adj, *a, elementwise(*a, &|j, gj| gj * bd[j]));
                accumulate(adj, *b, elementwise(*b, &|j, gj| gj * ad[j]));
            }
            Op::Scale(x, c) => accumulate(adj, *x, g.map(|v| c * v)),
            Op::AddScalar(x) => accumulate(adj, *x, g.clone()),
            Op::Concat { inputs, axis } => {
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|v| Vec::with_capacity(self.value(*v).numel()))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (v, part) in inputs.iter().zip(parts.iter_mut()) {
                        let block = self.value(*v).numel() / outer.max(1);
                        part.extend_from_slice(&gd[off..off + block]);
                        off += block;
                    }
                }
                for (v, part) in inputs.iter().zip(parts) {
                    accumulate(adj, *v, Tensor::new(self.shape(*v), part).unwrap());
                }
            }
            Op::Crop3x3 { x, centers } => {
                let s = self.shape(*x);
                let (c, h, w) = match s {
                    [c, h, w] | [1, c, h, w] => (*c, *h, *w),
                    _ => unreachable!(),
                };
                let mut dx = vec![0.0; c * h * w];
                for (n, &(i, j)) in centers.iter().enumerate() {
                    for ch in 0..c {
                        for di in 0..3 {
                            let ii = i as isize + di as isize - 1;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for dj in 0..3 {
                                let jj = j as isize + dj as isize - 1;
                                if jj >= 0 && jj < w as isize {
                                    dx[(ch * h + ii as usize) * w + jj as usize] +=
                                        gd[((n * c + ch) * 3 + di) * 3 + dj];
                                }
                            }
                        }
                    }
                }
                accumulate(adj, *x, Tensor::new(s, dx).unwrap());
            }
            Op::Reshape(x) => {
                accumulate(adj, *x, g.clone().reshaped(self.shape(*x)).unwrap());
            }
            Op::Gather { x, index } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let d = dx.data_mut();
                for (gi, idx) in gd.iter().zip(index) {
                    if let Some(j) = idx {
                        d[*j] += gi;
                    }
                }
                accumulate(adj, *x, dx);
            }
            Op::Sum(x) => {
                accumulate(adj, *x, Tensor::full(self.shape(*x), gd[0]));
            }
            Op::SmoothL1(x) => {
                let xd = self.value(*x).data();
                accumulate(
                    adj,
                    *x,
                    elementwise(*x, &|j, gj| {
                        let v = xd[j];
                        gj * if v.abs() < 1.0 { v } else { v.signum() }
                    }),
                );
            }
            Op::Clamp(x, lo, hi) => {
                let xd = self.value(*x).data();
                accumulate(
                    adj,
                    *x,
                    elementwise(*x, &|j, gj| if xd[j] > *lo && xd[j] < *hi { gj } else { 0.0 }),
                );
            }
        }
    }

    fn conv_backward(&self, x: Var, k: Var, b: Option<Var>, g: &ConvGeom, gd: &[f64], adj: &mut [Option<Tensor>]) {
        let (px, ck) = (g.out_px(), g.ck());
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let (need_x, need_k) = (self.needs(x), self.needs(k));
        let mut dk = vec![0.0; g.f * ck];
        let mut dx = if need_x { vec![0.0; xd.len()] } else { Vec::new() };
        let mut cols = vec![0.0; ck * px];
        let mut dcols = vec![0.0; ck * px];
        let in_sz = g.c * g.h * g.w;
        for n in 0..g.n {
            let go = &gd[n * g.f * px..(n + 1) * g.f * px];
            if need_k {
                im2col(&xd[n * in_sz..(n + 1) * in_sz], g, &mut cols);
                gemm(g.f, px, ck, go, false, &cols, true, 1.0, &mut dk);
            }
            if need_x {
                gemm(ck, g.f, px, kd, true, go, false, 0.0, &mut dcols);
                col2im(&dcols, g, &mut dx[n * in_sz..(n + 1) * in_sz]);
            }
        }
        if need_k {
            accumulate(adj, k, Tensor::new(self.shape(k), dk).unwrap());
        }
        if need_x {
            accumulate(adj, x, Tensor::new(self.shape(x), dx).unwrap());
        }
        if let Some(b) = b.filter(|b| self.needs(*b)) {
            let mut db = vec![0.0; g.f];
            for n in 0..g.n {
                for (f, d) in db.iter_mut().enumerate() {
                    let o = (n * g.f + f) * px;
                    *d += gd[o..o + px].iter().sum::<f64>();
                }
            }
            accumulate(adj, b, Tensor::new(&[g.f], db).unwrap());
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}
