//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in construction order, so node ids are already a
//! topological order: every input id precedes its consumer. `backward`
//! walks the ids in reverse and accumulates gradients in that fixed order,
//! which makes training runs bit-reproducible.
//!
//! Op outputs are checked for non-finite values as they are produced; a NaN
//! or Inf raises a numeric error naming the op instead of propagating.

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::numeric::tensor::Tensor;

/// Input to `Graph::log` is clamped at this value before taking the log.
pub const LOG_EPS: f64 = 1e-12;
/// Rows with an L2 norm below this cannot be normalized.
const NORM_EPS: f64 = 1e-150;
const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    AddBias,
    MatMul,
    Transpose,
    Reshape,
    ConcatRows,
    SliceRows { start: usize, len: usize },
    SliceCols { start: usize, len: usize },
    Sum,
    Mean,
    Softmax,
    RowLogSumExp,
    LayerNorm { eps: f64 },
    Gelu,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Sqrt,
    Square,
    L2NormalizeRows,
    Scale { c: f64 },
    AddConst { c: f64 },
    BceWithLogits,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddBias => "add_bias",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::ConcatRows => "concat",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Softmax => "softmax",
            Op::RowLogSumExp => "row_logsumexp",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu => "gelu",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Square => "square",
            Op::L2NormalizeRows => "l2_normalize",
            Op::Scale { .. } => "scale",
            Op::AddConst { .. } => "add_const",
            Op::BceWithLogits => "bce_with_logits",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// ── dense matmul kernels ────────────────────────────────────────────────
// ikj order with contiguous row access; `*_acc` variants add into `out`.

fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += A[m×n] · B[k×n]ᵀ
fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * n..(j + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            *o += dot;
        }
    }
}

/// out[k×n] += A[m×k]ᵀ · G[m×n]
fn matmul_tn_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu_value(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| CoreError::contract(format!("node id {} out of range", id.0)))
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(CoreError::numeric(
                op.name(),
                "non-finite value in op output",
            ));
        }
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => inputs.iter().any(|&i| self.nodes[i.0].requires_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(id)
    }

    /// Insert a leaf; `tensor.requires_grad()` decides whether gradients
    /// are tracked for it. Non-finite values are rejected here.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<NodeId> {
        if !tensor.is_finite() {
            return Err(CoreError::numeric(
                "leaf",
                "non-finite value entering graph",
            ));
        }
        self.push(Op::Leaf, vec![], tensor)
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Result<NodeId> {
        if tensor.requires_grad() {
            tensor = Tensor::new(tensor.shape().to_vec(), tensor.into_data())?;
        }
        self.leaf(tensor)
    }

    pub fn param(&mut self, tensor: Tensor) -> Result<NodeId> {
        self.leaf(tensor.with_grad())
    }

    // ── elementwise binary ──────────────────────────────────────────────

    fn binary_elementwise(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(CoreError::contract(format!(
                "{}: shape mismatch {:?} vs {:?}",
                op.name(),
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, vec![a, b], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Mul, a, b, |x, y| x * y)
    }

    /// Row-broadcast bias add: x is R×C, bias is a length-C vector.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let tx = &self.node(x)?.value;
        let tb = &self.node(bias)?.value;
        let (rows, cols) = tx.as_matrix_dims()?;
        if tb.shape() != [cols] {
            return Err(CoreError::contract(format!(
                "add_bias: bias shape {:?} does not match {cols} columns",
                tb.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (v, b) in tx.data()[r * cols..(r + 1) * cols].iter().zip(tb.data()) {
                data.push(v + b);
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(Op::AddBias, vec![x, bias], value)
    }

    // ── structural ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ta = &self.node(a)?.value;
        let tb = &self.node(b)?.value;
        let (m, ka) = ta.as_matrix_dims()?;
        let (kb, n) = tb.as_matrix_dims()?;
        if ka != kb {
            return Err(CoreError::contract(format!(
                "matmul: inner dims {ka} vs {kb} (shapes {:?} x {:?})",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), m, ka, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul, vec![a, b], value)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let (rows, cols) = t.as_matrix_dims()?;
        let src = t.data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], out)?;
        self.push(Op::Transpose, vec![x], value)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let numel: usize = shape.iter().product();
        if numel != t.numel() || shape.contains(&0) || shape.is_empty() {
            return Err(CoreError::contract(format!(
                "reshape: {:?} -> {:?} changes element count",
                t.shape(),
                shape
            )));
        }
        let value = Tensor::new(shape, t.data().to_vec())?;
        self.push(Op::Reshape, vec![x], value)
    }

    /// Stack 2-D inputs with equal column counts on top of each other.
    pub fn concat_rows(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(CoreError::contract("concat: no inputs"));
        }
        let (_, cols) = self.node(inputs[0])?.value.as_matrix_dims()?;
        let mut total_rows = 0;
        for &id in inputs {
            let (r, c) = self.node(id)?.value.as_matrix_dims()?;
            if c != cols {
                return Err(CoreError::contract(format!(
                    "concat: column mismatch {c} vs {cols}"
                )));
            }
            total_rows += r;
        }
        let mut data = Vec::with_capacity(total_rows * cols);
        for &id in inputs {
            data.extend_from_slice(self.nodes[id.0].value.data());
        }
        let value = Tensor::new(vec![total_rows, cols], data)?;
        self.push(Op::ConcatRows, inputs.to_vec(), value)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let (rows, cols) = t.as_matrix_dims()?;
        if len == 0 || start + len > rows {
            return Err(CoreError::contract(format!(
                "slice_rows: [{start}, {start}+{len}) out of {rows} rows"
            )));
        }
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(vec![len, cols], data)?;
        self.push(Op::SliceRows { start, len }, vec![x], value)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let (rows, cols) = t.as_matrix_dims()?;
        if len == 0 || start + len > cols {
            return Err(CoreError::contract(format!(
                "slice_cols: [{start}, {start}+{len}) out of {cols} cols"
            )));
        }
        let src = t.data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let value = Tensor::new(vec![rows, len], data)?;
        self.push(Op::SliceCols { start, len }, vec![x], value)
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.node(x)?.value.data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean, vec![x], Tensor::scalar(s))
    }

    // ── row-wise ────────────────────────────────────────────────────────

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let (rows, cols) = t.as_matrix_dims()?;
        let src = t.data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut denom = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - m).exp();
                denom += *o;
            }
            for o in out.iter_mut() {
                *o /= denom;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(Op::Softmax, vec![x], value)
    }

    /// Per-row log(sum(exp(x))) with max subtraction; output is R×1.
    pub fn row_logsumexp(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let (rows, cols) = t.as_matrix_dims()?;
        let src = t.data();
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            data[r] = m + s.ln();
        }
        let value = Tensor::new(vec![rows, 1], data)?;
        self.push(Op::RowLogSumExp, vec![x], value)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let (rows, cols) = t.as_matrix_dims()?;
        let tg = &self.node(gain)?.value;
        let tb = &self.node(bias)?.value;
        if tg.shape() != [cols] || tb.shape() != [cols] {
            return Err(CoreError::contract(format!(
                "layer_norm: gain/bias must be length {cols}, got {:?}/{:?}",
                tg.shape(),
                tb.shape()
            )));
        }
        let src = t.data();
        let g = tg.data();
        let b = tb.data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mu: f64 = row.iter().sum::<f64>() / cols as f64;
            let var: f64 = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let out = &mut data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                out[c] = (row[c] - mu) * inv * g[c] + b[c];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(Op::LayerNorm { eps }, vec![x, gain, bias], value)
    }

    /// Row-wise L2 normalization; errors on a zero-norm row.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let (rows, cols) = t.as_matrix_dims()?;
        let src = t.data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if norm < NORM_EPS {
                return Err(CoreError::numeric(
                    "l2_normalize",
                    format!("zero-norm row {r}"),
                ));
            }
            for c in 0..cols {
                data[r * cols + c] = row[c] / norm;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(Op::L2NormalizeRows, vec![x], value)
    }

    // ── elementwise unary ───────────────────────────────────────────────

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let t = &self.node(x)?.value;
        let data: Vec<f64> = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(op, vec![x], value)
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Gelu, x, gelu_value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sigmoid, x, stable_sigmoid)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu, x, |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Exp, x, f64::exp)
    }

    /// Natural log with the input clamped at `LOG_EPS`.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Log, x, |v| v.max(LOG_EPS).ln())
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sqrt, x, f64::sqrt)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Square, x, |v| v * v)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(Op::Scale { c }, x, |v| v * c)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(Op::AddConst { c }, x, |v| v + c)
    }

    // ── fused losses ────────────────────────────────────────────────────

    /// Numerically stable binary cross-entropy with logits, averaged over
    /// all elements. Targets must be exactly 0 or 1 and are not
    /// differentiated through.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let tl = &self.node(logits)?.value;
        let tt = &self.node(targets)?.value;
        if tl.shape() != tt.shape() {
            return Err(CoreError::contract(format!(
                "bce_with_logits: shape mismatch {:?} vs {:?}",
                tl.shape(),
                tt.shape()
            )));
        }
        if let Some(bad) = tt.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(CoreError::validation(format!(
                "bce_with_logits: target {bad} outside {{0, 1}}"
            )));
        }
        if self.nodes[targets.0].requires_grad {
            return Err(CoreError::contract(
                "bce_with_logits: targets must not require grad",
            ));
        }
        let n = tl.numel() as f64;
        let total: f64 = tl
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        self.push(
            Op::BceWithLogits,
            vec![logits, targets],
            Tensor::scalar(total / n),
        )
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// `requires_grad` leaf. Leaves the loss does not depend on get zero
    /// gradients.
    pub fn backward(&self, loss: NodeId) -> Result<HashMap<NodeId, Tensor>> {
        let loss_node = self.node(loss)?;
        if !loss_node.value.is_scalar() {
            return Err(CoreError::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(grad); // keep leaf gradients for the result map
                continue;
            }
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::numeric(
                    node.op.name(),
                    "non-finite gradient encountered",
                ));
            }
            self.distribute(node, &grad, &mut grads)?;
        }

        let mut out = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let tensor = match grads[i].take() {
                    Some(g) => Tensor::new(node.value.shape().to_vec(), g)?,
                    None => Tensor::zeros(node.value.shape().to_vec()),
                };
                out.insert(NodeId(i), tensor);
            }
        }
        Ok(out)
    }

    /// Gradients for an explicit list of parameter leaves, in that order.
    pub fn backward_for(&self, loss: NodeId, params: &[NodeId]) -> Result<Vec<Tensor>> {
        let mut map = self.backward(loss)?;
        params
            .iter()
            .map(|id| {
                map.remove(id).ok_or_else(|| {
                    CoreError::contract(format!("node {} is not a requires_grad leaf", id.0))
                })
            })
            .collect()
    }

    fn distribute(&self, node: &Node, grad: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        // Allocates the input's gradient buffer on first touch, then lets the
        // op add its contribution in place.
        macro_rules! into {
            ($input:expr, $body:expr) => {{
                let inp: NodeId = $input;
                if self.nodes[inp.0].requires_grad {
                    let numel = self.nodes[inp.0].value.numel();
                    let slot = &mut grads[inp.0];
                    if slot.is_none() {
                        *slot = Some(vec![0.0; numel]);
                    }
                    let buf: &mut [f64] = slot.as_mut().unwrap();
                    #[allow(clippy::redundant_closure_call)]
                    ($body)(buf);
                }
            }};
        }

        let in_val = |i: usize| self.nodes[node.inputs[i].0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                into!(node.inputs[0], |buf: &mut [f64]| add_assign(buf, grad));
                into!(node.inputs[1], |buf: &mut [f64]| add_assign(buf, grad));
            }
            Op::Sub => {
                into!(node.inputs[0], |buf: &mut [f64]| add_assign(buf, grad));
                into!(node.inputs[1], |buf: &mut [f64]| {
                    for (o, &g) in buf.iter_mut().zip(grad) {
                        *o -= g;
                    }
                });
            }
            Op::Mul => {
                let (a, b) = (in_val(0), in_val(1));
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * b[i];
                    }
                });
                into!(node.inputs[1], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * a[i];
                    }
                });
            }
            Op::AddBias => {
                let cols = self.nodes[node.inputs[1].0].value.numel();
                into!(node.inputs[0], |buf: &mut [f64]| add_assign(buf, grad));
                into!(node.inputs[1], |buf: &mut [f64]| {
                    for chunk in grad.chunks_exact(cols) {
                        add_assign(buf, chunk);
                    }
                });
            }
            Op::MatMul => {
                let (a, b) = (in_val(0), in_val(1));
                let (m, k) = self.nodes[node.inputs[0].0].value.as_matrix_dims()?;
                let (_, n) = self.nodes[node.inputs[1].0].value.as_matrix_dims()?;
                into!(node.inputs[0], |buf: &mut [f64]| {
                    matmul_nt_acc(grad, b, m, n, k, buf)
                });
                into!(node.inputs[1], |buf: &mut [f64]| {
                    matmul_tn_acc(a, grad, m, k, n, buf)
                });
            }
            Op::Transpose => {
                let (rows, cols) = self.nodes[node.inputs[0].0].value.as_matrix_dims()?;
                into!(node.inputs[0], |buf: &mut [f64]| {
                    // grad has shape cols×rows
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[r * cols + c] += grad[c * rows + r];
                        }
                    }
                });
            }
            Op::Reshape => {
                into!(node.inputs[0], |buf: &mut [f64]| add_assign(buf, grad));
            }
            Op::ConcatRows => {
                let mut offset = 0;
                for &inp in &node.inputs {
                    let numel = self.nodes[inp.0].value.numel();
                    let part = &grad[offset..offset + numel];
                    into!(inp, |buf: &mut [f64]| add_assign(buf, part));
                    offset += numel;
                }
            }
            Op::SliceRows { start, len } => {
                let (_, cols) = self.nodes[node.inputs[0].0].value.as_matrix_dims()?;
                let (start, len) = (*start, *len);
                into!(node.inputs[0], |buf: &mut [f64]| {
                    add_assign(&mut buf[start * cols..(start + len) * cols], grad);
                });
            }
            Op::SliceCols { start, len } => {
                let (rows, cols) = self.nodes[node.inputs[0].0].value.as_matrix_dims()?;
                let (start, len) = (*start, *len);
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for r in 0..rows {
                        let g_row = &grad[r * len..(r + 1) * len];
                        add_assign(&mut buf[r * cols + start..r * cols + start + len], g_row);
                    }
                });
            }
            Op::Sum => {
                let g = grad[0];
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for o in buf.iter_mut() {
                        *o += g;
                    }
                });
            }
            Op::Mean => {
                let n = self.nodes[node.inputs[0].0].value.numel() as f64;
                let g = grad[0] / n;
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for o in buf.iter_mut() {
                        *o += g;
                    }
                });
            }
            Op::Softmax => {
                let s = node.value.data();
                let (rows, cols) = node.value.as_matrix_dims()?;
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for r in 0..rows {
                        let s_row = &s[r * cols..(r + 1) * cols];
                        let g_row = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = s_row.iter().zip(g_row).map(|(x, y)| x * y).sum();
                        let out = &mut buf[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            out[c] += s_row[c] * (g_row[c] - dot);
                        }
                    }
                });
            }
            Op::RowLogSumExp => {
                let x = in_val(0);
                let (rows, cols) = self.nodes[node.inputs[0].0].value.as_matrix_dims()?;
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for r in 0..rows {
                        let row = &x[r * cols..(r + 1) * cols];
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                        let out = &mut buf[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            out[c] += grad[r] * (row[c] - m).exp() / denom;
                        }
                    }
                });
            }
            Op::LayerNorm { eps } => {
                let x = in_val(0);
                let g = in_val(1);
                let (rows, cols) = self.nodes[node.inputs[0].0].value.as_matrix_dims()?;
                let ncols = cols as f64;
                // Per-row statistics are cheap to recompute.
                let mut stats = Vec::with_capacity(rows);
                for r in 0..rows {
                    let row = &x[r * cols..(r + 1) * cols];
                    let mu: f64 = row.iter().sum::<f64>() / ncols;
                    let var: f64 = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / ncols;
                    stats.push((mu, 1.0 / (var + eps).sqrt()));
                }
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for r in 0..rows {
                        let (mu, inv) = stats[r];
                        let row = &x[r * cols..(r + 1) * cols];
                        let g_row = &grad[r * cols..(r + 1) * cols];
                        // dxhat = grad * gain
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for c in 0..cols {
                            let xhat = (row[c] - mu) * inv;
                            let dxhat = g_row[c] * g[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        let out = &mut buf[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            let xhat = (row[c] - mu) * inv;
                            let dxhat = g_row[c] * g[c];
                            out[c] +=
                                inv * (dxhat - sum_dxhat / ncols - xhat * sum_dxhat_xhat / ncols);
                        }
                    }
                });
                into!(node.inputs[1], |buf: &mut [f64]| {
                    for r in 0..rows {
                        let (mu, inv) = stats[r];
                        let row = &x[r * cols..(r + 1) * cols];
                        let g_row = &grad[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            buf[c] += g_row[c] * (row[c] - mu) * inv;
                        }
                    }
                });
                into!(node.inputs[2], |buf: &mut [f64]| {
                    for chunk in grad.chunks_exact(cols) {
                        add_assign(buf, chunk);
                    }
                });
            }
            Op::Gelu => {
                let x = in_val(0);
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * gelu_derivative(x[i]);
                    }
                });
            }
            Op::Sigmoid => {
                let s = node.value.data();
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * s[i] * (1.0 - s[i]);
                    }
                });
            }
            Op::Relu => {
                let x = in_val(0);
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        if x[i] > 0.0 {
                            buf[i] += grad[i];
                        }
                    }
                });
            }
            Op::Exp => {
                let y = node.value.data();
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * y[i];
                    }
                });
            }
            Op::Log => {
                let x = in_val(0);
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] / x[i].max(LOG_EPS);
                    }
                });
            }
            Op::Sqrt => {
                let y = node.value.data();
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * 0.5 / y[i].max(LOG_EPS);
                    }
                });
            }
            Op::Square => {
                let x = in_val(0);
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += grad[i] * 2.0 * x[i];
                    }
                });
            }
            Op::L2NormalizeRows => {
                let x = in_val(0);
                let y = node.value.data();
                let (rows, cols) = node.value.as_matrix_dims()?;
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for r in 0..rows {
                        let x_row = &x[r * cols..(r + 1) * cols];
                        let y_row = &y[r * cols..(r + 1) * cols];
                        let g_row = &grad[r * cols..(r + 1) * cols];
                        let norm = x_row.iter().map(|&v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                        let out = &mut buf[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            out[c] += (g_row[c] - y_row[c] * dot) / norm;
                        }
                    }
                });
            }
            Op::Scale { c } => {
                let c = *c;
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for (o, &g) in buf.iter_mut().zip(grad) {
                        *o += g * c;
                    }
                });
            }
            Op::AddConst { .. } => {
                into!(node.inputs[0], |buf: &mut [f64]| add_assign(buf, grad));
            }
            Op::BceWithLogits => {
                let x = in_val(0);
                let t = in_val(1);
                let n = x.len() as f64;
                let g = grad[0];
                into!(node.inputs[0], |buf: &mut [f64]| {
                    for i in 0..buf.len() {
                        buf[i] += g * (stable_sigmoid(x[i]) - t[i]) / n;
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}
