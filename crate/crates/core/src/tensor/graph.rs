use matrixmultiply::sgemm;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{contract, dim_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, f32),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    MaxConst(Var, f32),
    MinConst(Var, f32),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward sweep is a single reverse pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn finite(op: &'static str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// `(outer, axis_len, inner)` decomposition around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Row-major `c = a·b` with optional transposes expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    // a is stored as [m,k] (or [k,m] when a_t), b as [k,n] (or [n,k] when b_t)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: slice lengths match the dimensions and strides above.
    unsafe {
        sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f32>, needs_grad: bool) -> Var {
        let value = Tensor {
            shape,
            data,
            requires_grad: needs_grad,
            grad: None,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. It is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let ng = t.requires_grad;
        self.push(Op::Leaf, t.shape, t.data, ng)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t.shape, t.data, false)
    }

    /// Records a parameter leaf whose gradient is routed back into `store`
    /// by [`Graph::backward_into`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(Op::Param(id), t.shape.clone(), t.data.clone(), true)
    }

    fn unary(
        &mut self,
        x: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f32) -> f32,
    ) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let data: Vec<f32> = t.data.iter().map(|&v| f(v)).collect();
        finite(name, &data)?;
        let shape = t.shape.clone();
        let ng = self.ng(x);
        Ok(self.push(op, shape, data, ng))
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(name, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data: Vec<f32> = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        finite(name, &data)?;
        let shape = ta.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(op, shape, data, ng))
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value.data,
            false,
            &self.nodes[b.0].value.data,
            false,
            &mut out,
            false,
        );
        finite("matmul", &out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), vec![m, n], out, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a rank-1 `bias` of length `cols(x)` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || *sx.last().unwrap() != sb[0] {
            return Err(dim_err("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let n = sb[0];
        let b = &self.nodes[bias.0].value.data;
        let data: Vec<f32> = self.nodes[x.0]
            .value
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        finite("add_bias", &data)?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Op::AddBias(x, bias), sx, data, ng))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Result<Var> {
        self.unary(x, "affine", Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 0.0)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| dim_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_err("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(dim_err("concat", format!("{base:?} with {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = &self.nodes[x.0].value;
                let block = t.shape[axis] * inner;
                out.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(Op::Concat(xs.to_vec(), axis), shape, out, ng))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(dim_err(
                "slice",
                format!("[{start}..{}] on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let t = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&t.data[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let ng = self.ng(x);
        Ok(self.push(Op::Slice { x, axis, start }, shape, out, ng))
    }

    /// Slice along the last axis.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let axis = self.shape(x).len() - 1;
        self.slice(x, axis, start, len)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "tanh", Op::Tanh(x), f32::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "exp", Op::Exp(x), f32::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "log", Op::Log(x), f32::ln)
    }

    /// Elementwise `max(x, c)`.
    pub fn max_const(&mut self, x: Var, c: f32) -> Result<Var> {
        self.unary(x, "max_const", Op::MaxConst(x, c), |v| v.max(c))
    }

    /// Elementwise `min(x, c)`.
    pub fn min_const(&mut self, x: Var, c: f32) -> Result<Var> {
        self.unary(x, "min_const", Op::MinConst(x, c), |v| v.min(c))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.max_const(x, 0.0)
    }

    fn row_op(
        &mut self,
        x: Var,
        name: &'static str,
        op: Op,
        keep_cols: bool,
        f: impl Fn(&[f32], &mut Vec<f32>),
    ) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let cols = t.cols();
        let mut out = Vec::with_capacity(if keep_cols { t.numel() } else { t.rows() });
        for row in t.data.chunks_exact(cols) {
            f(row, &mut out);
        }
        finite(name, &out)?;
        let mut shape = t.shape.clone();
        if !keep_cols {
            *shape.last_mut().unwrap() = 1;
        }
        let ng = self.ng(x);
        Ok(self.push(op, shape, out, ng))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.row_op(x, "softmax", Op::Softmax(x), true, |row, out| {
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let start = out.len();
            let mut z = 0.0;
            for &v in row {
                let e = (v - m).exp();
                z += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e /= z);
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.row_op(x, "log_softmax", Op::LogSoftmax(x), true, |row, out| {
            let lse = logsumexp(row);
            out.extend(row.iter().map(|v| v - lse));
        })
    }

    /// Log-sum-exp over the last axis; the last axis collapses to 1.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        self.row_op(x, "logsumexp", Op::LogSumExp(x), false, |row, out| {
            out.push(logsumexp(row))
        })
    }

    /// Sum over the last axis; the last axis collapses to 1.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        self.row_op(x, "sum_last", Op::SumLast(x), false, |row, out| {
            out.push(row.iter().sum())
        })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f32 = self.nodes[x.0].value.data.iter().sum();
        finite("sum", &[s])?;
        let ng = self.ng(x);
        Ok(self.push(Op::SumAll(x), vec![1], vec![s], ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let s = t.data.iter().sum::<f32>() / t.numel() as f32;
        finite("mean", &[s])?;
        let ng = self.ng(x);
        Ok(self.push(Op::MeanAll(x), vec![1], vec![s], ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Leaf | Op::Param(_));
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// [`Graph::backward`], then adds every parameter gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.get_mut(*id).accumulate_grad(g);
            }
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let y = &node.value.data;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, delta: Vec<f32>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, &tb.data, true, &mut da, false);
                    send(*a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, &ta.data, true, g, false, &mut db, false);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                send(*a, g.iter().zip(&tb.data).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(&ta.data).map(|(g, x)| g * x).collect());
            }
            Op::AddBias(x, bias) => {
                let n = val(*bias).numel();
                let mut db = vec![0.0; n];
                for (j, v) in g.iter().enumerate() {
                    db[j % n] += v;
                }
                send(*x, g.to_vec());
                send(*bias, db);
            }
            Op::Affine(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(&node.value.shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let width = val(x).shape[*axis] * inner;
                    let mut dx = Vec::with_capacity(outer * width);
                    for o in 0..outer {
                        let base = o * total * inner + offset;
                        dx.extend_from_slice(&g[base..base + width]);
                    }
                    offset += width;
                    send(x, dx);
                }
            }
            Op::Slice { x, axis, start } => {
                let tx = val(*x);
                let (outer, n, inner) = split_axis(&tx.shape, *axis);
                let len = node.value.shape[*axis];
                let mut dx = vec![0.0; tx.numel()];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    let src = o * len * inner;
                    dx[base..base + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                send(*x, dx);
            }
            Op::Sigmoid(x) => send(
                *x,
                g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect(),
            ),
            Op::Tanh(x) => send(*x, g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect()),
            Op::Exp(x) => send(*x, g.iter().zip(y).map(|(g, e)| g * e).collect()),
            Op::Log(x) => send(
                *x,
                g.iter().zip(&val(*x).data).map(|(g, v)| g / v).collect(),
            ),
            Op::Softmax(x) => {
                let cols = node.value.cols();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(cols).zip(y.chunks_exact(cols)) {
                    let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                send(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let cols = node.value.cols();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(cols).zip(y.chunks_exact(cols)) {
                    let total: f32 = gr.iter().sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, ly)| g - ly.exp() * total));
                }
                send(*x, dx);
            }
            Op::LogSumExp(x) => {
                let tx = val(*x);
                let cols = tx.cols();
                let mut dx = Vec::with_capacity(tx.numel());
                for (r, row) in tx.data.chunks_exact(cols).enumerate() {
                    dx.extend(row.iter().map(|v| g[r] * (v - y[r]).exp()));
                }
                send(*x, dx);
            }
            Op::SumLast(x) => {
                let cols = val(*x).cols();
                send(
                    *x,
                    g.iter().flat_map(|&v| std::iter::repeat(v).take(cols)).collect(),
                );
            }
            Op::SumAll(x) => send(*x, vec![g[0]; val(*x).numel()]),
            Op::MeanAll(x) => {
                let n = val(*x).numel();
                send(*x, vec![g[0] / n as f32; n]);
            }
            Op::MaxConst(x, c) => send(
                *x,
                g.iter()
                    .zip(&val(*x).data)
                    .map(|(g, v)| if v > c { *g } else { 0.0 })
                    .collect(),
            ),
            Op::MinConst(x, c) => send(
                *x,
                g.iter()
                    .zip(&val(*x).data)
                    .map(|(g, v)| if v < c { *g } else { 0.0 })
                    .collect(),
            ),
        }
    }
}

fn logsumexp(row: &[f32]) -> f32 {
    let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f32>().ln()
}
