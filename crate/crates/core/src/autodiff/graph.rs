use super::kernels::{gemm, Trans};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operation kinds.
///
/// Elementwise binary kinds accept equal shapes, or a rank-2 `[m, n]`
/// operand paired with a rank-1 `[n]` operand (row broadcast). Anything
/// richer goes through [`OpKind::BroadcastTo`] first.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Subtract,
    Multiply,
    Divide,
    Negate,
    Exp,
    Square,
    MatMul,
    Sum,
    Mean,
    Relu,
    /// Numpy-style expansion of size-1 (or missing leading) dims, rank <= 2.
    BroadcastTo(Vec<usize>),
    /// Rank-1 inputs join end to end; rank-2 inputs join along columns.
    Concat,
    Transpose,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::Multiply => "multiply",
            OpKind::Divide => "divide",
            OpKind::Negate => "negate",
            OpKind::Exp => "exp",
            OpKind::Square => "square",
            OpKind::MatMul => "matmul",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Relu => "relu",
            OpKind::BroadcastTo(_) => "broadcast_to",
            OpKind::Concat => "concat",
            OpKind::Transpose => "transpose",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::Divide | OpKind::MatMul => {
                Some(2)
            }
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowBroadcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Apply(OpKind, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Tape of operations, appended in evaluation order.
///
/// A graph supports a single [`Graph::backward`] call; a second call is an
/// error so gradients never silently accumulate across steps.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass. `None` for nodes that do not
    /// require a gradient; zeros for leaves the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(Error::Contract(format!(
                    "{} takes {n} inputs, got {}",
                    kind.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::Contract(format!("{} needs inputs", kind.name())));
        }
        let value = self.evaluate(&kind, inputs)?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Op::Apply(kind, inputs.to_vec()), value, requires_grad))
    }

    fn shapes(&self, inputs: &[Var]) -> Vec<Vec<usize>> {
        inputs.iter().map(|v| self.value(*v).shape().to_vec()).collect()
    }

    fn mismatch(&self, kind: &OpKind, inputs: &[Var]) -> Error {
        Error::ShapeMismatch {
            op: kind.name(),
            shapes: self.shapes(inputs),
        }
    }

    fn row_broadcast(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, RowBroadcast)> {
        if a == b {
            Some((a.to_vec(), RowBroadcast::None))
        } else if a.len() == 2 && b.len() == 1 && a[1] == b[0] {
            Some((a.to_vec(), RowBroadcast::Rhs))
        } else if a.len() == 1 && b.len() == 2 && b[1] == a[0] {
            Some((b.to_vec(), RowBroadcast::Lhs))
        } else {
            None
        }
    }

    fn evaluate(&self, kind: &OpKind, inputs: &[Var]) -> Result<Tensor> {
        let x = self.value(inputs[0]);
        match kind {
            OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::Divide => {
                let y = self.value(inputs[1]);
                let (shape, bc) = Self::row_broadcast(x.shape(), y.shape())
                    .ok_or_else(|| self.mismatch(kind, inputs))?;
                if *kind == OpKind::Divide && y.data().contains(&0.0) {
                    return Err(Error::DivideByZero);
                }
                let f: fn(f64, f64) -> f64 = match kind {
                    OpKind::Add => |a, b| a + b,
                    OpKind::Subtract => |a, b| a - b,
                    OpKind::Multiply => |a, b| a * b,
                    _ => |a, b| a / b,
                };
                Ok(Tensor::from_parts(shape, zip_broadcast(x, y, bc, f)))
            }
            OpKind::Negate => Ok(map(x, |v| -v)),
            OpKind::Exp => Ok(map(x, f64::exp)),
            OpKind::Square => Ok(map(x, |v| v * v)),
            OpKind::Relu => Ok(map(x, |v| if v > 0.0 { v } else { 0.0 })),
            OpKind::Sum => Ok(Tensor::scalar(x.data().iter().sum())),
            OpKind::Mean => Ok(Tensor::scalar(
                x.data().iter().sum::<f64>() / x.len() as f64,
            )),
            OpKind::MatMul => {
                let y = self.value(inputs[1]);
                if x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows() {
                    return Err(self.mismatch(kind, inputs));
                }
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, x.data(), Trans::No, y.data(), Trans::No, &mut out, 0.0);
                Ok(Tensor::from_parts(vec![m, n], out))
            }
            OpKind::Transpose => {
                if x.rank() != 2 {
                    return Err(self.mismatch(kind, inputs));
                }
                Ok(Tensor::from_parts(
                    vec![x.cols(), x.rows()],
                    transpose(x.data(), x.rows(), x.cols()),
                ))
            }
            OpKind::BroadcastTo(target) => {
                let plan = BroadcastPlan::new(x.shape(), target)
                    .ok_or_else(|| self.mismatch(kind, inputs))?;
                Ok(Tensor::from_parts(target.clone(), plan.expand(x.data())))
            }
            OpKind::Concat => {
                let parts: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                concat(&parts).ok_or_else(|| self.mismatch(kind, inputs))
            }
        }
    }

    /// Reverse pass from a scalar `loss`. Fills gradients for every leaf
    /// that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardAlreadyRun);
        }
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.backward_done = true;

        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = pending[i].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Apply(kind, inputs) => {
                    self.propagate(kind, inputs, &node.value, g, &mut pending);
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                match &grads[i] {
                    None => grads[i] = Some(Tensor::zeros(node.value.shape())),
                    Some(g) if !g.all_finite() => {
                        return Err(Error::NonFinite { op: "backward" });
                    }
                    Some(_) => {}
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(
        &self,
        kind: &OpKind,
        inputs: &[Var],
        out: &Tensor,
        g: Vec<f64>,
        pending: &mut [Option<Vec<f64>>],
    ) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let x = self.value(inputs[0]);
        match kind {
            OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::Divide => {
                let y = self.value(inputs[1]);
                let (_, bc) = Self::row_broadcast(x.shape(), y.shape()).expect("checked forward");
                let n = out.cols();
                let xi = |i: usize| if bc == RowBroadcast::Lhs { x.data()[i % n] } else { x.data()[i] };
                let yi = |i: usize| if bc == RowBroadcast::Rhs { y.data()[i % n] } else { y.data()[i] };
                if needs(inputs[0]) {
                    let local: Vec<f64> = match kind {
                        OpKind::Add | OpKind::Subtract => g.clone(),
                        OpKind::Multiply => g.iter().enumerate().map(|(i, gi)| gi * yi(i)).collect(),
                        _ => g.iter().enumerate().map(|(i, gi)| gi / yi(i)).collect(),
                    };
                    let reduced = if bc == RowBroadcast::Lhs { sum_rows(&local, n) } else { local };
                    accumulate(pending, inputs[0], reduced);
                }
                if needs(inputs[1]) {
                    let local: Vec<f64> = match kind {
                        OpKind::Add => g.clone(),
                        OpKind::Subtract => g.iter().map(|gi| -gi).collect(),
                        OpKind::Multiply => g.iter().enumerate().map(|(i, gi)| gi * xi(i)).collect(),
                        _ => g
                            .iter()
                            .enumerate()
                            .map(|(i, gi)| {
                                let d = yi(i);
                                -gi * xi(i) / (d * d)
                            })
                            .collect(),
                    };
                    let reduced = if bc == RowBroadcast::Rhs { sum_rows(&local, n) } else { local };
                    accumulate(pending, inputs[1], reduced);
                }
            }
            OpKind::Negate => accumulate(pending, inputs[0], g.iter().map(|v| -v).collect()),
            OpKind::Exp => accumulate(
                pending,
                inputs[0],
                g.iter().zip(out.data()).map(|(gi, o)| gi * o).collect(),
            ),
            OpKind::Square => accumulate(
                pending,
                inputs[0],
                g.iter().zip(x.data()).map(|(gi, xv)| 2.0 * gi * xv).collect(),
            ),
            OpKind::Relu => accumulate(
                pending,
                inputs[0],
                g.iter()
                    .zip(x.data())
                    .map(|(gi, xv)| if *xv > 0.0 { *gi } else { 0.0 })
                    .collect(),
            ),
            OpKind::Sum => accumulate(pending, inputs[0], vec![g[0]; x.len()]),
            OpKind::Mean => accumulate(pending, inputs[0], vec![g[0] / x.len() as f64; x.len()]),
            OpKind::MatMul => {
                let y = self.value(inputs[1]);
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if needs(inputs[0]) {
                    // dX = G Y^T
                    let mut dx = vec![0.0; m * k];
                    gemm(m, n, k, &g, Trans::No, y.data(), Trans::Yes, &mut dx, 0.0);
                    accumulate(pending, inputs[0], dx);
                }
                if needs(inputs[1]) {
                    // dY = X^T G
                    let mut dy = vec![0.0; k * n];
                    gemm(k, m, n, x.data(), Trans::Yes, &g, Trans::No, &mut dy, 0.0);
                    accumulate(pending, inputs[1], dy);
                }
            }
            OpKind::Transpose => {
                accumulate(pending, inputs[0], transpose(&g, x.cols(), x.rows()));
            }
            OpKind::BroadcastTo(target) => {
                let plan = BroadcastPlan::new(x.shape(), target).expect("checked forward");
                accumulate(pending, inputs[0], plan.reduce(&g, x.len()));
            }
            OpKind::Concat => {
                let parts: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                for (input, piece) in inputs.iter().zip(split_concat(&g, &parts, out)) {
                    if needs(*input) {
                        accumulate(pending, *input, piece);
                    }
                }
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Subtract, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Multiply, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Divide, &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Negate, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Exp, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Square, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::MatMul, &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Mean, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Relu, &[a])
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.forward_op(OpKind::BroadcastTo(shape.to_vec()), &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.forward_op(OpKind::Concat, parts)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Transpose, &[a])
    }
}

fn accumulate(pending: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut pending[v.0] {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contribution),
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip_broadcast(x: &Tensor, y: &Tensor, bc: RowBroadcast, f: fn(f64, f64) -> f64) -> Vec<f64> {
    match bc {
        RowBroadcast::None => x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect(),
        RowBroadcast::Rhs => x
            .data()
            .chunks_exact(y.len())
            .flat_map(|row| row.iter().zip(y.data()).map(|(&a, &b)| f(a, b)))
            .collect(),
        RowBroadcast::Lhs => y
            .data()
            .chunks_exact(x.len())
            .flat_map(|row| x.data().iter().zip(row).map(|(&a, &b)| f(a, b)))
            .collect(),
    }
}

fn sum_rows(values: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in values.chunks_exact(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    out
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Source-to-target index mapping for `BroadcastTo`, rank <= 2.
struct BroadcastPlan {
    rows: usize,
    cols: usize,
    src_rows: usize,
    src_cols: usize,
}

impl BroadcastPlan {
    fn new(src: &[usize], target: &[usize]) -> Option<Self> {
        if target.is_empty() || target.len() > 2 || src.len() > target.len() {
            return None;
        }
        let pad = |s: &[usize]| -> (usize, usize) {
            match s.len() {
                1 => (1, s[0]),
                _ => (s[0], s[1]),
            }
        };
        let (rows, cols) = pad(target);
        let (src_rows, src_cols) = if src.len() < target.len() { (1, src[0]) } else { pad(src) };
        let ok = |s: usize, t: usize| s == t || s == 1;
        (ok(src_rows, rows) && ok(src_cols, cols) && rows > 0 && cols > 0).then_some(Self {
            rows,
            cols,
            src_rows,
            src_cols,
        })
    }

    fn source_index(&self, r: usize, c: usize) -> usize {
        let sr = if self.src_rows == 1 { 0 } else { r };
        let sc = if self.src_cols == 1 { 0 } else { c };
        sr * self.src_cols + sc
    }

    fn expand(&self, src: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(src[self.source_index(r, c)]);
            }
        }
        out
    }

    fn reduce(&self, g: &[f64], src_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; src_len];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[self.source_index(r, c)] += g[r * self.cols + c];
            }
        }
        out
    }
}

fn concat(parts: &[&Tensor]) -> Option<Tensor> {
    let rank = parts[0].rank();
    if parts.iter().any(|p| p.rank() != rank) {
        return None;
    }
    match rank {
        1 => {
            let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
            Some(Tensor::from_parts(vec![data.len()], data))
        }
        2 => {
            let rows = parts[0].rows();
            if parts.iter().any(|p| p.rows() != rows) {
                return None;
            }
            let cols: usize = parts.iter().map(|p| p.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            Some(Tensor::from_parts(vec![rows, cols], data))
        }
        _ => None,
    }
}

fn split_concat(g: &[f64], parts: &[&Tensor], out: &Tensor) -> Vec<Vec<f64>> {
    if out.rank() == 1 {
        let mut offset = 0;
        return parts
            .iter()
            .map(|p| {
                let piece = g[offset..offset + p.len()].to_vec();
                offset += p.len();
                piece
            })
            .collect();
    }
    let total = out.cols();
    let mut offset = 0;
    parts
        .iter()
        .map(|p| {
            let c = p.cols();
            let piece = g
                .chunks_exact(total)
                .flat_map(|row| row[offset..offset + c].iter().copied())
                .collect();
            offset += c;
            piece
        })
        .collect()
}
