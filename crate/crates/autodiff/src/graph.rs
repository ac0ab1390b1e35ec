//! Append-only computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes only refer
//! to earlier nodes, so a reverse sweep over the append order is a valid
//! topological order for the backward pass.

use crate::error::{shape_err, AutodiffError, Result};
use crate::tensor::{dims2, numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds, as accepted by [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Sum,
    Mean,
    SumLast,
    Square,
    Elu,
    Tanh,
    Softplus,
    Softmax { tau: f64 },
    Exp,
    Log,
    Concat,
    Slice { start: usize, len: usize },
    SliceRows { start: usize, len: usize },
    RepeatRows(usize),
    Reshape(Vec<usize>),
    StopGradient,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    Same,
    Scalar,
    Row,
    Col,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Scale(usize, f64),
    AddScalar(usize),
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    Square(usize),
    Elu(usize),
    Tanh(usize),
    Softplus(usize),
    Softmax(usize, f64),
    Exp(usize),
    Log(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    SliceRows(usize, usize),
    RepeatRows(usize, usize),
    Reshape(usize),
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default, Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to the graph's leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens[v.0]],
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c (m,n) += a (m,k) · b (k,n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views lying entirely inside the slices;
    // callers derive them from the shapes the slices were allocated with.
    unsafe {
        matrixmultiply::dgemm(
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

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<(usize, usize, usize, Vec<usize>)> {
    let (m, k, a_vec) = match sa.len() {
        1 => (1, sa[0], true),
        2 => (sa[0], sa[1], false),
        _ => return shape_err("matmul", format!("lhs must be rank 1 or 2, got {sa:?}")),
    };
    let (k2, n, b_vec) = match sb.len() {
        1 => (sb[0], 1, true),
        2 => (sb[0], sb[1], false),
        _ => return shape_err("matmul", format!("rhs must be rank 1 or 2, got {sb:?}")),
    };
    if k != k2 {
        return shape_err("matmul", format!("inner dimensions differ: {sa:?} x {sb:?}"));
    }
    let out = match (a_vec, b_vec) {
        (false, false) => vec![m, n],
        (true, false) => vec![n],
        (false, true) => vec![m],
        (true, true) => vec![],
    };
    Ok((m, k, n, out))
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Leaf that receives gradients (parameters and differentiable inputs).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Constant, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(AutodiffError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(self.push(shape, data, Op::Constant, false))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![], vec![v], Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Generic dispatcher over [`OpKind`].
    pub fn apply(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                shape_err("apply", format!("{kind:?} expects {n} inputs, got {}", inputs.len()))
            }
        };
        match kind {
            OpKind::Concat => return self.concat(inputs),
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => arity(2)?,
            _ => arity(1)?,
        }
        let a = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(a, inputs[1]),
            OpKind::Add => self.add(a, inputs[1]),
            OpKind::Sub => self.sub(a, inputs[1]),
            OpKind::Mul => self.mul(a, inputs[1]),
            OpKind::Scale(c) => Ok(self.scale(a, *c)),
            OpKind::AddScalar(c) => Ok(self.add_scalar(a, *c)),
            OpKind::Sum => Ok(self.sum(a)),
            OpKind::Mean => Ok(self.mean(a)),
            OpKind::SumLast => Ok(self.sum_last(a)),
            OpKind::Square => Ok(self.square(a)),
            OpKind::Elu => Ok(self.elu(a)),
            OpKind::Tanh => Ok(self.tanh(a)),
            OpKind::Softplus => Ok(self.softplus(a)),
            OpKind::Softmax { tau } => self.softmax(a, *tau),
            OpKind::Exp => Ok(self.exp(a)),
            OpKind::Log => Ok(self.log(a)),
            OpKind::Slice { start, len } => self.slice(a, *start, *len),
            OpKind::SliceRows { start, len } => self.slice_rows(a, *start, *len),
            OpKind::RepeatRows(k) => self.repeat_rows(a, *k),
            OpKind::Reshape(s) => self.reshape(a, s.clone()),
            OpKind::StopGradient => Ok(self.stop_gradient(a)),
            OpKind::Concat => unreachable!(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n, out_shape) = matmul_dims(&self.nodes[a.0].shape, &self.nodes[b.0].shape)?;
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].data,
            k as isize,
            1,
            &self.nodes[b.0].data,
            n as isize,
            1,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out_shape, out, Op::MatMul(a.0, b.0), rg))
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        if sa == sb {
            return Ok(Bcast::Same);
        }
        let nb = numel(sb);
        if nb == 1 {
            return Ok(Bcast::Scalar);
        }
        let (rows, cols) = dims2(sa);
        let (rb, cb) = dims2(sb);
        if rb == 1 && cb == cols && sb.len() <= 2 {
            return Ok(Bcast::Row);
        }
        if cb == 1 && rb == rows && sb.len() == 2 && sa.len() == 2 {
            return Ok(Bcast::Col);
        }
        shape_err(op, format!("cannot broadcast {sb:?} onto {sa:?}"))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(usize, usize, Bcast) -> Op,
    ) -> Result<Var> {
        let mode = self.bcast(op, a, b)?;
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let (_, cols) = dims2(&self.nodes[a.0].shape);
        let out: Vec<f64> = match mode {
            Bcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => da.iter().map(|&x| f(x, db[0])).collect(),
            Bcast::Row => da
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[i % cols]))
                .collect(),
            Bcast::Col => da
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[i / cols]))
                .collect(),
        };
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(shape, out, mk(a.0, b.0, mode), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, elu, Op::Elu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].data.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![], vec![s], Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = &self.nodes[a.0].data;
        let s = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![], vec![s], Op::Mean(a.0), rg)
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let (rows, cols) = dims2(&shape);
        let d = &self.nodes[a.0].data;
        let out: Vec<f64> = (0..rows)
            .map(|r| d[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let mut out_shape = shape;
        if let Some(last) = out_shape.last_mut() {
            *last = 1;
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out_shape, out, Op::SumLast(a.0), rg)
    }

    /// Row-wise `softmax(x / tau)` along the last axis.
    pub fn softmax(&mut self, a: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return shape_err("softmax", format!("temperature must be positive, got {tau}"));
        }
        let shape = self.nodes[a.0].shape.clone();
        let (rows, cols) = dims2(&shape);
        let d = &self.nodes[a.0].data;
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let scaled: Vec<f64> = row.iter().map(|&x| x / tau).collect();
            let mx = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, &s) in scaled.iter().enumerate() {
                let e = (s - mx).exp();
                out[r * cols + c] = e;
                z += e;
            }
            for o in &mut out[r * cols..(r + 1) * cols] {
                *o /= z;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, out, Op::Softmax(a.0, tau), rg))
    }

    /// Concatenate along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat", "no inputs");
        }
        let first = self.nodes[parts[0].0].shape.clone();
        let (rows, _) = dims2(&first);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = &self.nodes[p.0].shape;
            let (r, c) = dims2(s);
            if r != rows || s.len() != first.len() || s.is_empty() {
                return shape_err("concat", format!("incompatible shapes {first:?} and {s:?}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first;
        *shape.last_mut().unwrap() = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(shape, out, Op::Concat(ids), rg))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        let (rows, cols) = dims2(&shape);
        if shape.is_empty() || start + len > cols {
            return shape_err("slice", format!("range {start}..{} out of {shape:?}", start + len));
        }
        let d = &self.nodes[a.0].data;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&d[r * cols + start..r * cols + start + len]);
        }
        let mut s = shape;
        *s.last_mut().unwrap() = len;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(s, out, Op::Slice(a.0, start), rg))
    }

    /// Rows `start..start+len` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 || start + len > shape[0] {
            return shape_err(
                "slice_rows",
                format!("rows {start}..{} out of {shape:?}", start + len),
            );
        }
        let cols = shape[1];
        let out = self.nodes[a.0].data[start * cols..(start + len) * cols].to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![len, cols], out, Op::SliceRows(a.0, start), rg))
    }

    /// Repeat every row `k` times consecutively: `(r, c) -> (r*k, c)`.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 || k == 0 {
            return shape_err("repeat_rows", format!("need rank-2 input and k>0, got {shape:?}, k={k}"));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let d = &self.nodes[a.0].data;
        let mut out = Vec::with_capacity(rows * k * cols);
        for r in 0..rows {
            for _ in 0..k {
                out.extend_from_slice(&d[r * cols..(r + 1) * cols]);
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![rows * k, cols], out, Op::RepeatRows(a.0, k), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.nodes[a.0].data.len() {
            return shape_err(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.nodes[a.0].shape),
            );
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, data, Op::Reshape(a.0), rg))
    }

    /// Same value, no backward contribution.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let n = &self.nodes[a.0];
        let (shape, data) = (n.shape.clone(), n.data.clone());
        self.push(shape, data, Op::Constant, false)
    }

    /// Index of the maximum along the last axis for every row (ties: lowest).
    pub fn argmax_last(&self, a: Var) -> Vec<usize> {
        let (rows, cols) = dims2(&self.nodes[a.0].shape);
        let d = &self.nodes[a.0].data;
        (0..rows)
            .map(|r| {
                let row = &d[r * cols..(r + 1) * cols];
                let mut best = 0;
                for (i, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = &self.nodes[root.0];
        if root_node.data.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_node.shape.clone()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.data.len()).collect();
        if !root_node.requires_grad {
            return Ok(Gradients { grads, lens });
        }
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads, lens })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |i: usize| nodes[i].requires_grad;
        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], i: usize, len: usize) -> &'a mut Vec<f64> {
            grads[i].get_or_insert_with(|| vec![0.0; len])
        }
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k, n, _) =
                    matmul_dims(&nodes[*a].shape, &nodes[*b].shape).expect("validated at forward");
                if needs(*a) {
                    let ga = acc(grads, *a, m * k);
                    // dA = dC (m,n) · Bᵀ (n,k)
                    gemm(m, n, k, g, n as isize, 1, &nodes[*b].data, 1, n as isize, ga, 1.0);
                }
                if needs(*b) {
                    let gb = acc(grads, *b, k * n);
                    // dB = Aᵀ (k,m) · dC (m,n)
                    gemm(k, m, n, &nodes[*a].data, 1, k as isize, g, n as isize, 1, gb, 1.0);
                }
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(*a) {
                    let ga = acc(grads, *a, g.len());
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if needs(*b) {
                    let (_, cols) = dims2(&nodes[*a].shape);
                    let lb = nodes[*b].data.len();
                    let gb = acc(grads, *b, lb);
                    reduce_bcast(*mode, cols, g, |i, v| gb[i] += sign * v);
                }
            }
            Op::Mul(a, b, mode) => {
                let (_, cols) = dims2(&nodes[*a].shape);
                let da = &nodes[*a].data;
                let db = &nodes[*b].data;
                let bidx = |i: usize| match mode {
                    Bcast::Same => i,
                    Bcast::Scalar => 0,
                    Bcast::Row => i % cols,
                    Bcast::Col => i / cols,
                };
                if needs(*a) {
                    let ga = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * db[bidx(i)];
                    }
                }
                if needs(*b) {
                    let gb = acc(grads, *b, db.len());
                    for i in 0..g.len() {
                        gb[bidx(i)] += g[i] * da[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = acc(grads, *a, g.len());
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += c * y;
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let ga = acc(grads, *a, g.len());
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let len = nodes[*a].data.len();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    1.0 / len.max(1) as f64
                } else {
                    1.0
                };
                let ga = acc(grads, *a, len);
                for x in ga.iter_mut() {
                    *x += g[0] * scale;
                }
            }
            Op::SumLast(a) => {
                let (_, cols) = dims2(&nodes[*a].shape);
                let len = nodes[*a].data.len();
                let ga = acc(grads, *a, len);
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i / cols];
                }
            }
            Op::Square(a) => {
                let da = &nodes[*a].data;
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += 2.0 * da[i] * g[i];
                }
            }
            Op::Elu(a) => {
                let da = &nodes[*a].data;
                let y = &node.data;
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    let d = if da[i] > 0.0 { 1.0 } else { y[i] + 1.0 };
                    ga[i] += d * g[i];
                }
            }
            Op::Tanh(a) => {
                let y = &node.data;
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += (1.0 - y[i] * y[i]) * g[i];
                }
            }
            Op::Softplus(a) => {
                let da = &nodes[*a].data;
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += sigmoid(da[i]) * g[i];
                }
            }
            Op::Exp(a) => {
                let y = &node.data;
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += y[i] * g[i];
                }
            }
            Op::Log(a) => {
                let da = &nodes[*a].data;
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] / da[i];
                }
            }
            Op::Softmax(a, tau) => {
                let (rows, cols) = dims2(&node.shape);
                let y = &node.data;
                let ga = acc(grads, *a, g.len());
                for r in 0..rows {
                    let o = r * cols;
                    let dot: f64 = (0..cols).map(|c| y[o + c] * g[o + c]).sum();
                    for c in 0..cols {
                        ga[o + c] += y[o + c] * (g[o + c] - dot) / tau;
                    }
                }
            }
            Op::Concat(ids) => {
                let (rows, total) = dims2(&node.shape);
                let mut offset = 0;
                for &p in ids {
                    let (_, w) = dims2(&nodes[p].shape);
                    if needs(p) {
                        let gp = acc(grads, p, rows * w);
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(a, start) => {
                let (rows, cols) = dims2(&nodes[*a].shape);
                let (_, w) = dims2(&node.shape);
                let ga = acc(grads, *a, rows * cols);
                for r in 0..rows {
                    for c in 0..w {
                        ga[r * cols + start + c] += g[r * w + c];
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let len = nodes[*a].data.len();
                let cols = nodes[*a].shape[1];
                let ga = acc(grads, *a, len);
                for (i, &y) in g.iter().enumerate() {
                    ga[start * cols + i] += y;
                }
            }
            Op::RepeatRows(a, k) => {
                let (rows, cols) = dims2(&nodes[*a].shape);
                let ga = acc(grads, *a, rows * cols);
                for r in 0..rows {
                    for j in 0..*k {
                        let src = (r * k + j) * cols;
                        for c in 0..cols {
                            ga[r * cols + c] += g[src + c];
                        }
                    }
                }
            }
        }
    }
}

fn reduce_bcast(mode: Bcast, cols: usize, g: &[f64], mut add: impl FnMut(usize, f64)) {
    for (i, &v) in g.iter().enumerate() {
        let j = match mode {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Row => i % cols,
            Bcast::Col => i / cols,
        };
        add(j, v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::scalar(0.0));
        let y = g.tanh(x);
        assert_eq!(g.item(y), 0.0);
    }

    #[test]
    fn softmax_exact_values() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::vector(vec![0.0, 3f64.ln()]));
        let y = g.softmax(x, 1.0).unwrap();
        let v = g.value(y);
        assert!((v[0] - 0.25).abs() < 1e-15);
        assert!((v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_positive_temperature() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::vector(vec![0.0, 1.0]));
        assert!(g.softmax(x, 0.0).is_err());
    }

    #[test]
    fn concat_vectors() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = g.constant(&Tensor::vector(vec![4.0, 5.0]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[5]);
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn concat_rejects_row_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(&t(vec![2, 2], vec![0.0; 4]));
        let b = g.constant(&t(vec![3, 1], vec![0.0; 3]));
        let err = g.concat(&[a, b]).unwrap_err();
        assert!(matches!(err, AutodiffError::Shape { op: "concat", .. }));
    }

    #[test]
    fn matmul_shape_mismatch_is_diagnosed() {
        let mut g = Graph::new();
        let a = g.constant(&t(vec![2, 3], vec![0.0; 6]));
        let b = g.constant(&t(vec![2, 3], vec![0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("inner dimensions"));
    }

    #[test]
    fn matmul_matrix_vector() {
        let mut g = Graph::new();
        let w = g.constant(&t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let x = g.constant(&Tensor::vector(vec![1.0, 0.0, -1.0]));
        let y = g.matmul(w, x).unwrap();
        assert_eq!(g.shape(y), &[2]);
        assert_eq!(g.value(y), &[-2.0, -2.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::vector(vec![0.3, -1.0, 2.0, 5.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x), vec![1.0; 4]);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let y = g.square(x);
        let y = g.stop_gradient(y);
        let z = g.leaf(&Tensor::vector(vec![3.0, 4.0]));
        let p = g.mul(y, z).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x), vec![0.0, 0.0]);
        assert_eq!(grads.wrt(z), vec![1.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let y = g.leaf(&Tensor::vector(vec![1.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(y).is_none());
        assert_eq!(grads.wrt(y), vec![0.0]);
    }

    #[test]
    fn row_and_column_broadcast() {
        let mut g = Graph::new();
        let a = g.leaf(&t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let row = g.leaf(&Tensor::vector(vec![10.0, 20.0, 30.0]));
        let col = g.leaf(&t(vec![2, 1], vec![2.0, 3.0]));
        let b = g.add(a, row).unwrap();
        assert_eq!(g.value(b), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let c = g.mul(b, col).unwrap();
        assert_eq!(g.value(c)[3], 42.0);
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(row), vec![5.0, 5.0, 5.0]);
        assert_eq!(grads.wrt(col), vec![66.0, 75.0]);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let mut g = Graph::new();
        let x = g.constant(&t(vec![2, 3], vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0]));
        assert_eq!(g.argmax_last(x), vec![1, 0]);
    }

    #[test]
    fn repeat_and_slice_rows() {
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let r = g.repeat_rows(x, 2).unwrap();
        assert_eq!(g.value(r), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        let s = g.slice_rows(r, 1, 2).unwrap();
        assert_eq!(g.value(s), &[1.0, 2.0, 3.0, 4.0]);
        let total = g.sum(s);
        let grads = g.backward(total).unwrap();
        assert_eq!(grads.wrt(x), vec![1.0, 1.0, 1.0, 1.0]);
    }
}
