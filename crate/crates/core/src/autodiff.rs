//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation is evaluated by [`forward_op`]. Model code is written once
//! against the [`Graph`] trait and can then run either on [`Eager`] (plain
//! evaluation, nothing recorded) or on a [`Tape`] that records each node so
//! that [`Tape::backward`] can propagate gradients from a scalar root.
//!
//! Broadcasting is limited to adding (or subtracting) a `1 x cols` row
//! vector to every row of a matrix.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Operation kinds understood by the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    MatMul,
    Add,
    Sub,
    Hadamard,
    Scale(f64),
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    /// `ln σ(x)`, finite for any finite input.
    LogSigmoid,
    Exp,
    Log,
    Abs,
    SumAll,
    /// Sums each row, producing a `rows x 1` column.
    SumRows,
    ConcatCols,
    /// Column slice `[start, end)`.
    SplitCols { start: usize, end: usize },
}

impl Op {
    fn arity(&self) -> Option<usize> {
        match self {
            Op::MatMul | Op::Add | Op::Sub | Op::Hadamard => Some(2),
            Op::ConcatCols => None,
            _ => Some(1),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn broadcast_ok(a: &Tensor2, b: &Tensor2) -> bool {
    a.shape() == b.shape() || (b.rows() == 1 && b.cols() == a.cols())
}

fn zip_broadcast(a: &Tensor2, b: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
    let mut out = a.clone();
    let cols = a.cols();
    if b.rows() == a.rows() {
        for (o, &y) in out.data_mut().iter_mut().zip(b.data()) {
            *o = f(*o, y);
        }
    } else {
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, &y) in row.iter_mut().zip(b.data()) {
                *o = f(*o, y);
            }
        }
    }
    out
}

fn matmul(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    let (n, k) = a.shape();
    let m = b.cols();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = a.row(i);
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    Tensor2::new(n, m, out).expect("matmul shape")
}

fn matmul_at_b(a: &Tensor2, g: &Tensor2) -> Tensor2 {
    // aᵀ · g
    let (n, k) = a.shape();
    let m = g.cols();
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = g.row(i);
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in out[p * m..(p + 1) * m].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    Tensor2::new(k, m, out).expect("matmul shape")
}

fn matmul_a_bt(g: &Tensor2, b: &Tensor2) -> Tensor2 {
    // g · bᵀ
    let n = g.rows();
    let k = b.rows();
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = g.row(i);
        for p in 0..k {
            out[i * k + p] = grow.iter().zip(b.row(p)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor2::new(n, k, out).expect("matmul shape")
}

/// Evaluates a single operation.
pub fn forward_op(op: Op, inputs: &[&Tensor2]) -> Result<Tensor2> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::Contract(format!(
                "{op:?} takes {n} inputs, got {}",
                inputs.len()
            )));
        }
    } else if inputs.is_empty() {
        return Err(Error::Contract(format!("{op:?} needs at least one input")));
    }
    let x = inputs[0];
    let out = match op {
        Op::MatMul => {
            let b = inputs[1];
            if x.cols() != b.rows() {
                return Err(Error::Dimension(format!(
                    "matmul {:?} x {:?}",
                    x.shape(),
                    b.shape()
                )));
            }
            matmul(x, b)
        }
        Op::Add | Op::Sub => {
            let b = inputs[1];
            if !broadcast_ok(x, b) {
                return Err(Error::Dimension(format!(
                    "{op:?} {:?} with {:?}",
                    x.shape(),
                    b.shape()
                )));
            }
            if op == Op::Add {
                zip_broadcast(x, b, |p, q| p + q)
            } else {
                zip_broadcast(x, b, |p, q| p - q)
            }
        }
        Op::Hadamard => {
            let b = inputs[1];
            if x.shape() != b.shape() {
                return Err(Error::Dimension(format!(
                    "hadamard {:?} with {:?}",
                    x.shape(),
                    b.shape()
                )));
            }
            zip_broadcast(x, b, |p, q| p * q)
        }
        Op::Scale(c) => x.map(|v| c * v),
        Op::LeakyRelu(s) => x.map(|v| leaky(v, s)),
        Op::Tanh => x.map(f64::tanh),
        Op::Sigmoid => x.map(sigmoid),
        Op::LogSigmoid => x.map(log_sigmoid),
        Op::Exp => x.map(f64::exp),
        Op::Log => {
            if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain(format!("log of non-positive entry {bad}")));
            }
            x.map(f64::ln)
        }
        Op::Abs => x.map(f64::abs),
        Op::SumAll => Tensor2::scalar(x.data().iter().sum()),
        Op::SumRows => {
            let sums: Vec<f64> = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
            Tensor2::column_vector(&sums)
        }
        Op::ConcatCols => {
            let rows = x.rows();
            if let Some(bad) = inputs.iter().find(|t| t.rows() != rows) {
                return Err(Error::Dimension(format!(
                    "concat_cols: {} rows vs {rows}",
                    bad.rows()
                )));
            }
            let cols: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor2::new(rows, cols, data)?
        }
        Op::SplitCols { start, end } => {
            if start > end || end > x.cols() {
                return Err(Error::Dimension(format!(
                    "split_cols [{start}, {end}) of {} columns",
                    x.cols()
                )));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(x.rows() * w);
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row(r)[start..end]);
            }
            Tensor2::new(x.rows(), w, data)?
        }
    };
    Ok(out)
}

/// Reduces a gradient of the broadcast shape back to a `1 x cols` row.
fn unbroadcast(g: &Tensor2, target: &Tensor2) -> Tensor2 {
    if g.shape() == target.shape() {
        return g.clone();
    }
    let mut out = Tensor2::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Vector-Jacobian products of `op` for each input.
fn backward_op(op: Op, inputs: &[&Tensor2], output: &Tensor2, g: &Tensor2) -> Vec<Tensor2> {
    let x = inputs[0];
    let pointwise = |f: &dyn Fn(usize) -> f64| {
        let mut out = g.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= f(i);
        }
        out
    };
    match op {
        Op::MatMul => vec![matmul_a_bt(g, inputs[1]), matmul_at_b(x, g)],
        Op::Add => vec![g.clone(), unbroadcast(g, inputs[1])],
        Op::Sub => vec![g.clone(), unbroadcast(&g.map(|v| -v), inputs[1])],
        Op::Hadamard => {
            let b = inputs[1];
            vec![
                pointwise(&|i| b.data()[i]),
                pointwise(&|i| x.data()[i]),
            ]
        }
        Op::Scale(c) => vec![g.map(|v| c * v)],
        Op::LeakyRelu(s) => vec![pointwise(&|i| if x.data()[i] > 0.0 { 1.0 } else { s })],
        Op::Tanh => {
            let y = output.data();
            vec![pointwise(&|i| 1.0 - y[i] * y[i])]
        }
        Op::Sigmoid => {
            let y = output.data();
            vec![pointwise(&|i| y[i] * (1.0 - y[i]))]
        }
        Op::LogSigmoid => vec![pointwise(&|i| sigmoid(-x.data()[i]))],
        Op::Exp => {
            let y = output.data();
            vec![pointwise(&|i| y[i])]
        }
        Op::Log => vec![pointwise(&|i| 1.0 / x.data()[i])],
        Op::Abs => vec![pointwise(&|i| {
            let v = x.data()[i];
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })],
        Op::SumAll => vec![Tensor2::filled(x.rows(), x.cols(), g.get(0, 0))],
        Op::SumRows => {
            let mut out = Tensor2::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let v = g.get(r, 0);
                out.row_mut(r).iter_mut().for_each(|o| *o = v);
            }
            vec![out]
        }
        Op::ConcatCols => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|t| {
                    let part = forward_op(
                        Op::SplitCols {
                            start: offset,
                            end: offset + t.cols(),
                        },
                        &[g],
                    )
                    .expect("concat backward slice");
                    offset += t.cols();
                    part
                })
                .collect()
        }
        Op::SplitCols { start, .. } => {
            let mut out = Tensor2::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                out.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
            }
            vec![out]
        }
    }
}

/// A computation backend: either plain evaluation or a recording tape.
pub trait Graph {
    type Node: Clone;

    /// Introduces a value that never receives gradients.
    fn constant(&mut self, value: Tensor2) -> Self::Node;
    fn apply(&mut self, op: Op, inputs: &[&Self::Node]) -> Result<Self::Node>;
    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor2;

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::MatMul, &[a, b])
    }
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Sub, &[a, b])
    }
    fn hadamard(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Hadamard, &[a, b])
    }
    fn scale(&mut self, a: &Self::Node, c: f64) -> Result<Self::Node> {
        self.apply(Op::Scale(c), &[a])
    }
    fn leaky_relu(&mut self, a: &Self::Node, slope: f64) -> Result<Self::Node> {
        self.apply(Op::LeakyRelu(slope), &[a])
    }
    fn tanh(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Tanh, &[a])
    }
    fn sigmoid(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Sigmoid, &[a])
    }
    fn log_sigmoid(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::LogSigmoid, &[a])
    }
    fn exp(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Exp, &[a])
    }
    fn log(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Log, &[a])
    }
    fn abs(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Abs, &[a])
    }
    fn sum_all(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::SumAll, &[a])
    }
    fn sum_rows(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::SumRows, &[a])
    }
    fn concat_cols(&mut self, parts: &[&Self::Node]) -> Result<Self::Node> {
        self.apply(Op::ConcatCols, parts)
    }
    fn split_cols(&mut self, a: &Self::Node, start: usize, end: usize) -> Result<Self::Node> {
        self.apply(Op::SplitCols { start, end }, &[a])
    }
}

/// Evaluates operations immediately without recording anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Node = Tensor2;

    fn constant(&mut self, value: Tensor2) -> Tensor2 {
        value
    }

    fn apply(&mut self, op: Op, inputs: &[&Tensor2]) -> Result<Tensor2> {
        forward_op(op, inputs)
    }

    fn value<'a>(&'a self, node: &'a Tensor2) -> &'a Tensor2 {
        node
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct TapeNode {
    op: Option<Op>,
    parents: Vec<usize>,
    value: Tensor2,
    needs_grad: bool,
}

/// Records a computation graph for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Introduces a leaf that receives gradients.
    pub fn parameter(&mut self, value: Tensor2) -> Var {
        self.push(None, Vec::new(), value, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Option<Op>, parents: Vec<usize>, value: Tensor2, needs_grad: bool) -> Var {
        self.nodes.push(TapeNode {
            op,
            parents,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates gradients from a scalar root to every node that depends on
    /// a parameter. Accumulators start at zero on every call.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::Contract(format!("unknown node {}", root.0)))?;
        if root_node.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward root must be 1x1, got {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor2::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor2> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parts = backward_op(op, &inputs, &node.value, &g);
            grads[idx] = Some(g);
            for (&p, part) in node.parents.iter().zip(parts) {
                if !self.nodes[p].needs_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(part.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(part),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl Graph for Tape {
    type Node = Var;

    fn constant(&mut self, value: Tensor2) -> Var {
        self.push(None, Vec::new(), value, false)
    }

    fn apply(&mut self, op: Op, inputs: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor2> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward_op(op, &values)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let parents = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(Some(op), parents, out, needs_grad))
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor2 {
        &self.nodes[node.0].value
    }
}

/// Gradients of a scalar root with respect to recorded nodes.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor2> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}
