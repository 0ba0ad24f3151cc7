//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is a define-by-run arena: every operation appends a node holding
//! its result, its inputs' node ids, and whatever the backward pass needs.
//! [`Var`] is a cheap handle (tape reference plus node id). Graphs are built
//! fresh for every training step and dropped afterwards.
//!
//! [`Tape::backward`] seeds the chosen scalar root with 1 and walks node ids
//! in reverse creation order, which is a topological order by construction.
//! Gradient accumulation is additive: a second `backward` call adds into the
//! stored gradients, and callers zero them between passes with
//! [`Tape::zero_grads`]. Because traversal order is fixed by construction
//! order, repeated backward passes over freshly built graphs of the same
//! computation produce bitwise-identical gradients.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { a: usize },
    AddRow { a: usize, v: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddScalar { a: usize },
    Scale { a: usize, c: f64 },
    Neg { a: usize },
    Log { a: usize },
    Exp { a: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    Softmax { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    L2Norm { a: usize },
    Gather { a: usize, idx: Vec<usize> },
    Concat { parts: Vec<usize> },
    Reshape { a: usize },
    CeRows { logits: usize, targets: Vec<usize> },
    EmbedMeanPool { table: usize, ids: Vec<u32>, spans: Vec<(usize, usize)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Arena holding one computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    /// Record a tensor as a graph input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Concatenate 1-D tensors in order.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        let mut ids = Vec::with_capacity(parts.len());
        for p in parts {
            if !self.same_tape(&p.tape) {
                return Err(Error::Contract("concat across tapes".into()));
            }
            let v = p.value();
            if v.ndim() != 1 {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: v.shape().to_vec(),
                    rhs: vec![],
                });
            }
            data.extend_from_slice(v.data());
            ids.push(p.id);
        }
        let t = Tensor::from_vec(data)?;
        Ok(self.push(t, Op::Concat { parts: ids }))
    }

    /// Gradient of the most recent backward passes for `v`, if any reached it.
    pub fn grad(&self, v: &Var) -> Option<Tensor> {
        let inner = self.inner.borrow();
        let node = &inner.nodes[v.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Sum of squared gradient entries for `v` (0 when no gradient reached
    /// it). Avoids cloning large buffers when only norms are needed.
    pub fn grad_sq_sum(&self, v: &Var) -> f64 {
        let inner = self.inner.borrow();
        match &inner.nodes[v.id].grad {
            Some(g) => g.iter().map(|x| x * x).sum(),
            None => 0.0,
        }
    }

    /// Clear all accumulated gradients.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for node in &mut inner.nodes {
            node.grad = None;
        }
    }

    /// Reverse-mode sweep from a scalar root, adding into stored gradients.
    pub fn backward(&self, root: &Var) -> Result<()> {
        if !self.same_tape(&root.tape) {
            return Err(Error::Contract("backward root from another tape".into()));
        }
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        let root_len = inner.nodes[root.id].value.len();
        if root_len != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                inner.nodes[root.id].value.shape()
            )));
        }
        let n = root.id + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[root.id] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(g) = adj[id].take() else { continue };
            propagate(&inner.nodes, id, &g, &mut adj)?;
            let node = &mut inner.nodes[id];
            match &mut node.grad {
                Some(buf) => {
                    for (b, gi) in buf.iter_mut().zip(&g) {
                        *b += gi;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

/// Add `f`'s output into the adjoint buffer of node `id`.
fn with_adj(
    adj: &mut [Option<Vec<f64>>],
    id: usize,
    len: usize,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = adj[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k) = (ta.rows(), ta.cols());
            let n = tb.cols();
            let (da, db) = (ta.data(), tb.data());
            with_adj(adj, *a, m * k, |out| {
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * db[p * n + j];
                        }
                        out[i * k + p] += acc;
                    }
                }
            });
            with_adj(adj, *b, k * n, |out| {
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += da[i * k + p] * g[i * n + j];
                        }
                        out[p * n + j] += acc;
                    }
                }
            });
        }
        Op::Transpose { a } => {
            let ta = val(*a);
            let (m, n) = (ta.rows(), ta.cols());
            with_adj(adj, *a, m * n, |out| {
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] += g[j * m + i];
                    }
                }
            });
        }
        Op::AddRow { a, v } => {
            let ta = val(*a);
            let (m, n) = (ta.rows(), ta.cols());
            with_adj(adj, *a, m * n, |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += gi;
                }
            });
            with_adj(adj, *v, n, |out| {
                for i in 0..m {
                    for j in 0..n {
                        out[j] += g[i * n + j];
                    }
                }
            });
        }
        Op::Add { a, b } => {
            let len = g.len();
            with_adj(adj, *a, len, |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += gi;
                }
            });
            with_adj(adj, *b, len, |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += gi;
                }
            });
        }
        Op::Sub { a, b } => {
            let len = g.len();
            with_adj(adj, *a, len, |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += gi;
                }
            });
            with_adj(adj, *b, len, |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o -= gi;
                }
            });
        }
        Op::Mul { a, b } => {
            let (da, db) = (val(*a).data(), val(*b).data());
            let len = g.len();
            with_adj(adj, *a, len, |out| {
                for i in 0..len {
                    out[i] += g[i] * db[i];
                }
            });
            with_adj(adj, *b, len, |out| {
                for i in 0..len {
                    out[i] += g[i] * da[i];
                }
            });
        }
        Op::AddScalar { a } => {
            with_adj(adj, *a, g.len(), |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += gi;
                }
            });
        }
        Op::Scale { a, c } => {
            let c = *c;
            with_adj(adj, *a, g.len(), |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += c * gi;
                }
            });
        }
        Op::Neg { a } => {
            with_adj(adj, *a, g.len(), |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o -= gi;
                }
            });
        }
        Op::Log { a } => {
            let da = val(*a).data();
            with_adj(adj, *a, g.len(), |out| {
                for i in 0..g.len() {
                    out[i] += g[i] / da[i];
                }
            });
        }
        Op::Exp { a } => {
            let out_val = nodes[id].value.data();
            with_adj(adj, *a, g.len(), |out| {
                for i in 0..g.len() {
                    out[i] += g[i] * out_val[i];
                }
            });
        }
        Op::Sigmoid { a } => {
            let s = nodes[id].value.data();
            with_adj(adj, *a, g.len(), |out| {
                for i in 0..g.len() {
                    out[i] += g[i] * s[i] * (1.0 - s[i]);
                }
            });
        }
        Op::Tanh { a } => {
            let t = nodes[id].value.data();
            with_adj(adj, *a, g.len(), |out| {
                for i in 0..g.len() {
                    out[i] += g[i] * (1.0 - t[i] * t[i]);
                }
            });
        }
        Op::Relu { a } => {
            let da = val(*a).data();
            with_adj(adj, *a, g.len(), |out| {
                for i in 0..g.len() {
                    if da[i] > 0.0 {
                        out[i] += g[i];
                    }
                }
            });
        }
        Op::Softmax { a } => {
            let s = nodes[id].value.data();
            let dot: f64 = g.iter().zip(s).map(|(gi, si)| gi * si).sum();
            with_adj(adj, *a, g.len(), |out| {
                for i in 0..g.len() {
                    out[i] += s[i] * (g[i] - dot);
                }
            });
        }
        Op::Sum { a } => {
            let len = val(*a).len();
            with_adj(adj, *a, len, |out| {
                for o in out.iter_mut() {
                    *o += g[0];
                }
            });
        }
        Op::Mean { a } => {
            let len = val(*a).len();
            let share = g[0] / len as f64;
            with_adj(adj, *a, len, |out| {
                for o in out.iter_mut() {
                    *o += share;
                }
            });
        }
        Op::L2Norm { a } => {
            let da = val(*a).data();
            let norm = nodes[id].value.data()[0];
            if norm > 0.0 {
                with_adj(adj, *a, da.len(), |out| {
                    for i in 0..da.len() {
                        out[i] += g[0] * da[i] / norm;
                    }
                });
            }
        }
        Op::Gather { a, idx } => {
            let len = val(*a).len();
            with_adj(adj, *a, len, |out| {
                for (j, &i) in idx.iter().enumerate() {
                    out[i] += g[j];
                }
            });
        }
        Op::Concat { parts } => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).len();
                let seg = &g[offset..offset + len];
                with_adj(adj, p, len, |out| {
                    for (o, gi) in out.iter_mut().zip(seg) {
                        *o += gi;
                    }
                });
                offset += len;
            }
        }
        Op::Reshape { a } => {
            with_adj(adj, *a, g.len(), |out| {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += gi;
                }
            });
        }
        Op::CeRows { logits, targets } => {
            let tl = val(*logits);
            let (n, k) = (tl.rows(), tl.cols());
            let dl = tl.data();
            with_adj(adj, *logits, n * k, |out| {
                for i in 0..n {
                    let row = &dl[i * k..(i + 1) * k];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0;
                    for &x in row {
                        denom += math::exp(x - max);
                    }
                    for j in 0..k {
                        let soft = math::exp(row[j] - max) / denom;
                        let indicator = if j == targets[i] { 1.0 } else { 0.0 };
                        out[i * k + j] += g[i] * (soft - indicator);
                    }
                }
            });
        }
        Op::EmbedMeanPool { table, ids, spans } => {
            let tt = val(*table);
            let (rows, d) = (tt.rows(), tt.cols());
            with_adj(adj, *table, rows * d, |out| {
                for (i, &(start, len)) in spans.iter().enumerate() {
                    let share = 1.0 / len as f64;
                    for &tok in &ids[start..start + len] {
                        let row = tok as usize * d;
                        for c in 0..d {
                            out[row + c] += g[i * d + c] * share;
                        }
                    }
                }
            });
        }
    }
    Ok(())
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Clone of the node's value.
    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id]
            .value
            .shape()
            .to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    fn binary_check(&self, other: &Var, op: &'static str) -> Result<(Tensor, Tensor)> {
        if !self.tape.same_tape(&other.tape) {
            return Err(Error::Contract(format!("{op} across tapes")));
        }
        Ok((self.value(), other.value()))
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (ta, tb) = self.binary_check(other, "matmul")?;
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * db[p * n + j];
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.tape.push(
            t,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Var> {
        let ta = self.value();
        if ta.ndim() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let da = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = da[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.tape.push(t, Op::Transpose { a: self.id }))
    }

    /// Add a length-`n` vector to every row of an `(m, n)` tensor.
    pub fn add_row(&self, v: &Var) -> Result<Var> {
        let (ta, tv) = self.binary_check(v, "add_row")?;
        if ta.ndim() != 2 || tv.ndim() != 1 || ta.cols() != tv.len() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let (da, dv) = (ta.data(), tv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = da[i * n + j] + dv[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.tape.push(
            t,
            Op::AddRow {
                a: self.id,
                v: v.id,
            },
        ))
    }

    fn elementwise(&self, other: &Var, op: &'static str) -> Result<(Tensor, Tensor)> {
        let (ta, tb) = self.binary_check(other, op)?;
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok((ta, tb))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let (ta, tb) = self.elementwise(other, "add")?;
        let data = ta.data().iter().zip(tb.data()).map(|(a, b)| a + b).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.tape.push(
            t,
            Op::Add {
                a: self.id,
                b: other.id,
            },
        ))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let (ta, tb) = self.elementwise(other, "sub")?;
        let data = ta.data().iter().zip(tb.data()).map(|(a, b)| a - b).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.tape.push(
            t,
            Op::Sub {
                a: self.id,
                b: other.id,
            },
        ))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        let (ta, tb) = self.elementwise(other, "mul")?;
        let data = ta.data().iter().zip(tb.data()).map(|(a, b)| a * b).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.tape.push(
            t,
            Op::Mul {
                a: self.id,
                b: other.id,
            },
        ))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        let ta = self.value();
        let data = ta.data().iter().map(|a| a + c).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.tape.push(t, Op::AddScalar { a: self.id })
    }

    pub fn scale(&self, c: f64) -> Var {
        let ta = self.value();
        let data = ta.data().iter().map(|a| a * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.tape.push(t, Op::Scale { a: self.id, c })
    }

    pub fn neg(&self) -> Var {
        let ta = self.value();
        let data = ta.data().iter().map(|a| -a).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.tape.push(t, Op::Neg { a: self.id })
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Var> {
        let ta = self.value();
        if let Some(bad) = ta.data().iter().find(|x| **x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let data = ta.data().iter().map(|a| math::ln(*a)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.tape.push(t, Op::Log { a: self.id }))
    }

    pub fn exp(&self) -> Var {
        let ta = self.value();
        let data = ta.data().iter().map(|a| math::exp(*a)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.tape.push(t, Op::Exp { a: self.id })
    }

    pub fn sigmoid(&self) -> Var {
        let ta = self.value();
        let data = ta
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + math::exp(-x))
                } else {
                    let e = math::exp(x);
                    e / (1.0 + e)
                }
            })
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.tape.push(t, Op::Sigmoid { a: self.id })
    }

    pub fn tanh(&self) -> Var {
        let ta = self.value();
        let data = ta.data().iter().map(|a| math::tanh(*a)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.tape.push(t, Op::Tanh { a: self.id })
    }

    pub fn relu(&self) -> Var {
        let ta = self.value();
        let data = ta.data().iter().map(|a| a.max(0.0)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.tape.push(t, Op::Relu { a: self.id })
    }

    /// Max-shifted softmax over a 1-D tensor.
    pub fn softmax(&self) -> Result<Var> {
        let ta = self.value();
        if ta.ndim() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        if ta.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax of NaN input".into()));
        }
        let max = ta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = ta.data().iter().map(|&x| math::exp(x - max)).collect();
        let denom: f64 = exps.iter().sum();
        let data = exps.into_iter().map(|e| e / denom).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.tape.push(t, Op::Softmax { a: self.id }))
    }

    pub fn sum(&self) -> Var {
        let total: f64 = self.value().data().iter().sum();
        self.tape.push(Tensor::scalar(total), Op::Sum { a: self.id })
    }

    pub fn mean(&self) -> Var {
        let ta = self.value();
        let total: f64 = ta.data().iter().sum();
        self.tape.push(
            Tensor::scalar(total / ta.len() as f64),
            Op::Mean { a: self.id },
        )
    }

    /// Euclidean norm of all entries; gradient is zero at the origin.
    pub fn l2_norm(&self) -> Var {
        let sq: f64 = self.value().data().iter().map(|x| x * x).sum();
        self.tape
            .push(Tensor::scalar(math::sqrt(sq)), Op::L2Norm { a: self.id })
    }

    /// View with a new shape of the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var> {
        let ta = self.value();
        let want: usize = shape.iter().product();
        if want != ta.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape,
            });
        }
        let t = Tensor::new(shape, ta.data().to_vec())?;
        Ok(self.tape.push(t, Op::Reshape { a: self.id }))
    }

    /// Pick entries of a 1-D tensor by index.
    pub fn gather(&self, idx: &[usize]) -> Result<Var> {
        let ta = self.value();
        if ta.ndim() != 1 {
            return Err(Error::Shape {
                op: "gather",
                lhs: ta.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        if idx.is_empty() {
            return Err(Error::Contract("gather with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.len()) {
            return Err(Error::Contract(format!(
                "gather index {bad} out of range for length {}",
                ta.len()
            )));
        }
        let data = idx.iter().map(|&i| ta.data()[i]).collect();
        let t = Tensor::from_vec(data)?;
        Ok(self.tape.push(
            t,
            Op::Gather {
                a: self.id,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Per-row cross entropy of `(n, k)` logits against integer targets,
    /// stabilized with log-sum-exp. Returns a length-`n` vector of losses.
    pub fn cross_entropy_rows(&self, targets: &[usize]) -> Result<Var> {
        let ta = self.value();
        if ta.ndim() != 2 || ta.rows() != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if !ta.is_finite() {
            return Err(Error::Numeric("cross entropy of non-finite logits".into()));
        }
        let (n, k) = (ta.rows(), ta.cols());
        if let Some(&bad) = targets.iter().find(|&&z| z >= k) {
            return Err(Error::Contract(format!(
                "target class {bad} out of range for {k} classes"
            )));
        }
        let d = ta.data();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &d[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &x in row {
                denom += math::exp(x - max);
            }
            let lse = max + math::ln(denom);
            out.push(lse - row[targets[i]]);
        }
        let t = Tensor::from_vec(out)?;
        Ok(self.tape.push(
            t,
            Op::CeRows {
                logits: self.id,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean-pool embedding rows for a batch of token sequences: output row
    /// `i` is the average of the table rows picked by `rows[i]`. Sequences
    /// must be non-empty; the table is `(vocab, d)`.
    pub fn embed_mean_pool(&self, rows: &[Vec<u32>]) -> Result<Var> {
        let tt = self.value();
        if tt.ndim() != 2 {
            return Err(Error::Shape {
                op: "embed_mean_pool",
                lhs: tt.shape().to_vec(),
                rhs: vec![],
            });
        }
        if rows.is_empty() {
            return Err(Error::Contract("embed_mean_pool of empty batch".into()));
        }
        let (vocab, d) = (tt.rows(), tt.cols());
        let td = tt.data();
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(rows.len());
        let mut out = vec![0.0; rows.len() * d];
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::Contract(format!("empty token sequence at row {i}")));
            }
            if let Some(&bad) = row.iter().find(|&&t| t as usize >= vocab) {
                return Err(Error::Contract(format!(
                    "token id {bad} out of range for vocab {vocab}"
                )));
            }
            let start = ids.len();
            ids.extend_from_slice(row);
            spans.push((start, row.len()));
            let share = 1.0 / row.len() as f64;
            for &tok in row {
                let base = tok as usize * d;
                for c in 0..d {
                    out[i * d + c] += td[base + c] * share;
                }
            }
        }
        let t = Tensor::new(vec![rows.len(), d], out)?;
        Ok(self.tape.push(
            t,
            Op::EmbedMeanPool {
                table: self.id,
                ids,
                spans,
            },
        ))
    }
}
