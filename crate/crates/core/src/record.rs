//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`DiffRecord`] is an append-only tape: every operation pushes one node
//! holding the operation kind, parent indices, and the cached forward value.
//! Parents always precede children, so a single reverse sweep from a scalar
//! root accumulates `dL/dx` into every node that requires gradients.
//!
//! The op set is intentionally small: exactly what a Chebyshev graph
//! convolution stack with gradient-based channel attention needs. Broadcasting
//! is limited to one pattern, a `1×n` row combined elementwise with every row
//! of an `m×n` tensor; its backward is a column-sum onto the row operand.
//!
//! A record and its tensors form a single-writer unit; independent records
//! may live on separate threads.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`DiffRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Which axis a reduction collapses. `Rows` collapses the row axis and yields
/// `1×cols` (one value per column); `Cols` yields `rows×1`; `All` yields `1×1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
    All,
}

/// Floor used whenever a logarithm of a probability-like value is taken.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Elem { a: usize, b: usize, kind: ElemKind, broadcast: bool },
    Relu(usize),
    SoftmaxRow(usize),
    Reduce { a: usize, kind: ReduceKind, axis: Axis },
    RowMask { a: usize, mask: Vec<bool> },
    Transpose(usize),
    Reshape(usize),
    ConcatCols(Vec<usize>),
    Pick { a: usize, r: usize, c: usize },
    LogClamped(usize),
    Scale { a: usize, k: f64 },
    ScaleByScalar { a: usize, s: usize },
    MinMaxNormalize(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
}

/// Append-only record of tensor operations with gradient slots.
#[derive(Debug, Default)]
pub struct DiffRecord {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl DiffRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Enter a tensor; it participates in gradients iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push_unchecked(Op::Leaf, t, needs)
    }

    /// Enter a tensor that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push_unchecked(Op::Constant, t, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated at `id` by the last `backward` call.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, grad: None, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, what: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(self.push_unchecked(op, value, needs_grad))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- recorded operations -------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a.0, b.0), value, needs, "matmul")
    }

    /// Elementwise combination; `b` may be a `1×n` row broadcast over the
    /// rows of an `m×n` `a`.
    pub fn elementwise(&mut self, a: NodeId, b: NodeId, kind: ElemKind) -> Result<NodeId> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        let broadcast = br == 1 && ac == bc && ar > 1;
        if !broadcast && (ar, ac) != (br, bc) {
            return Err(Error::Shape(format!(
                "elementwise: shapes {ar}x{ac} and {br}x{bc} are neither equal nor row-broadcastable"
            )));
        }
        let f = |x: f64, y: f64| match kind {
            ElemKind::Add => x + y,
            ElemKind::Sub => x - y,
            ElemKind::Mul => x * y,
        };
        let mut data = Vec::with_capacity(ar * ac);
        {
            let av = &self.value(a).data;
            let bv = &self.value(b).data;
            for r in 0..ar {
                for c in 0..ac {
                    let y = if broadcast { bv[c] } else { bv[r * ac + c] };
                    data.push(f(av[r * ac + c], y));
                }
            }
        }
        let value = Tensor { rows: ar, cols: ac, data, requires_grad: false };
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Elem { a: a.0, b: b.0, kind, broadcast }, value, needs, "elementwise")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, ElemKind::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, ElemKind::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, ElemKind::Mul)
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let needs = self.needs(a);
        self.push(Op::Relu(a.0), value, needs, "relu")
    }

    /// Numerically stabilized softmax over a `1×n` row.
    pub fn softmax_row(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rows != 1 {
            return Err(Error::Shape(format!(
                "softmax_row requires a 1xn tensor, got {}x{}",
                t.rows, t.cols
            )));
        }
        let max = t.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data.iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let value = Tensor::row(&exps.iter().map(|&e| e / sum).collect::<Vec<_>>());
        let needs = self.needs(a);
        self.push(Op::SoftmaxRow(a.0), value, needs, "softmax_row")
    }

    pub fn reduce(&mut self, a: NodeId, kind: ReduceKind, axis: Axis) -> Result<NodeId> {
        let t = self.value(a);
        let (m, n) = t.shape();
        let value = match axis {
            Axis::All => {
                let s: f64 = t.data.iter().sum();
                Tensor::scalar(match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / (m * n) as f64,
                })
            }
            Axis::Rows => {
                let mut out = vec![0.0; n];
                for r in 0..m {
                    for c in 0..n {
                        out[c] += t.data[r * n + c];
                    }
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= m as f64);
                }
                Tensor::row(&out)
            }
            Axis::Cols => {
                let mut out = vec![0.0; m];
                for r in 0..m {
                    for c in 0..n {
                        out[r] += t.data[r * n + c];
                    }
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= n as f64);
                }
                Tensor { rows: m, cols: 1, data: out, requires_grad: false }
            }
        };
        let needs = self.needs(a);
        self.push(Op::Reduce { a: a.0, kind, axis }, value, needs, "reduce")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(a, ReduceKind::Sum, Axis::All)
    }

    /// Zero whole rows of `a`; gradients pass straight through kept rows only.
    pub fn row_mask(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        let t = self.value(a);
        if mask.len() != t.rows {
            return Err(Error::Shape(format!(
                "row_mask: mask length {} does not match {} rows",
                mask.len(),
                t.rows
            )));
        }
        let mut value = t.clone();
        value.requires_grad = false;
        for (r, &keep) in mask.iter().enumerate() {
            if !keep {
                value.data[r * t.cols..(r + 1) * t.cols].fill(0.0);
            }
        }
        let needs = self.needs(a);
        self.push(Op::RowMask { a: a.0, mask: mask.to_vec() }, value, needs, "row_mask")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(Op::Transpose(a.0), value, needs, "transpose")
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let t = self.value(a);
        if rows * cols != t.len() {
            return Err(Error::Shape(format!(
                "reshape: {}x{} cannot become {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        let value = Tensor { rows, cols, data: t.data.clone(), requires_grad: false };
        let needs = self.needs(a);
        self.push(Op::Reshape(a.0), value, needs, "reshape")
    }

    /// Flatten to a single `1×(rows·cols)` row (row-major order).
    pub fn flatten_row(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        self.reshape(a, 1, n)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), value, needs, "concat_cols")
    }

    /// Select a single entry as a `1×1` tensor.
    pub fn pick(&mut self, a: NodeId, r: usize, c: usize) -> Result<NodeId> {
        let t = self.value(a);
        if r >= t.rows || c >= t.cols {
            return Err(Error::Contract(format!(
                "pick ({r},{c}) out of bounds for {}x{}",
                t.rows, t.cols
            )));
        }
        let value = Tensor::scalar(t.at(r, c));
        let needs = self.needs(a);
        self.push(Op::Pick { a: a.0, r, c }, value, needs, "pick")
    }

    /// `ln(max(x, 1e-12))` per entry.
    pub fn log_clamped(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| x.max(LOG_CLAMP).ln());
        let needs = self.needs(a);
        self.push(Op::LogClamped(a.0), value, needs, "log_clamped")
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let value = self.value(a).scale(k);
        let needs = self.needs(a);
        self.push(Op::Scale { a: a.0, k }, value, needs, "scale")
    }

    /// Multiply every entry of `a` by the `1×1` tensor `s`.
    pub fn scale_by_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).item()?;
        let value = self.value(a).scale(sv);
        let needs = self.needs(a) || self.needs(s);
        self.push(Op::ScaleByScalar { a: a.0, s: s.0 }, value, needs, "scale_by_scalar")
    }

    /// Min-max rescaling of a `1×n` row to `[0, 1]`. A near-constant input
    /// (range below 1e-12) maps to all ones and passes no gradient.
    pub fn minmax_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rows != 1 {
            return Err(Error::Shape(format!(
                "minmax_normalize requires a 1xn tensor, got {}x{}",
                t.rows, t.cols
            )));
        }
        let min = t.data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = t.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let value = if max - min < 1e-12 {
            Tensor::ones(1, t.cols)
        } else {
            Tensor::row(&t.data.iter().map(|&x| (x - min) / (max - min)).collect::<Vec<_>>())
        };
        let needs = self.needs(a);
        self.push(Op::MinMaxNormalize(a.0), value, needs, "minmax_normalize")
    }

    // ---- backward --------------------------------------------------------

    /// Accumulate `d root / d node` into every node reachable from `root`.
    /// `root` must be a `1×1` result recorded on this record; calling twice
    /// without [`DiffRecord::reset_gradients`] is an error.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice without reset_gradients".into(),
            ));
        }
        let root_node = &self.nodes[root.0];
        if root_node.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward root must be 1x1, got {}x{}",
                root_node.value.rows, root_node.value.cols
            )));
        }
        if !root_node.needs_grad {
            return Err(Error::Contract(
                "backward root is detached: no differentiable leaf feeds it".into(),
            ));
        }
        self.nodes[root.0].grad = Some(Tensor::ones(1, 1));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            self.propagate(idx);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Clear all gradient slots so a fresh backward pass can run.
    pub fn reset_gradients(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn accumulate(&mut self, target: usize, contribution: Tensor) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut self.nodes[target].grad {
            Some(g) => {
                for (gv, cv) in g.data.iter_mut().zip(&contribution.data) {
                    *gv += cv;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, idx: usize) {
        let g = self.nodes[idx].grad.clone().expect("grad present");
        match &self.nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.matmul(&self.nodes[b].value.transpose()).expect("matmul grad");
                let gb = self.nodes[a].value.transpose().matmul(&g).expect("matmul grad");
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Elem { a, b, kind, broadcast } => {
                let (a, b, kind, broadcast) = (*a, *b, *kind, *broadcast);
                let (m, n) = self.nodes[idx].value.shape();
                let ga = match kind {
                    ElemKind::Add | ElemKind::Sub => g.clone(),
                    ElemKind::Mul => {
                        let bv = &self.nodes[b].value;
                        let mut out = g.clone();
                        for r in 0..m {
                            for c in 0..n {
                                let y = if broadcast { bv.data[c] } else { bv.at(r, c) };
                                out.data[r * n + c] *= y;
                            }
                        }
                        out
                    }
                };
                self.accumulate(a, ga);
                // Broadcast backward is a column-sum onto the 1×n operand.
                let gb_full = |g: &Tensor, sign: f64, with_a: Option<&Tensor>| -> Tensor {
                    let mut out = if broadcast { Tensor::zeros(1, n) } else { Tensor::zeros(m, n) };
                    for r in 0..m {
                        for c in 0..n {
                            let mut v = sign * g.at(r, c);
                            if let Some(av) = with_a {
                                v *= av.at(r, c);
                            }
                            if broadcast {
                                out.data[c] += v;
                            } else {
                                out.data[r * n + c] += v;
                            }
                        }
                    }
                    out
                };
                let gb = match kind {
                    ElemKind::Add => gb_full(&g, 1.0, None),
                    ElemKind::Sub => gb_full(&g, -1.0, None),
                    ElemKind::Mul => {
                        let av = self.nodes[a].value.clone();
                        gb_full(&g, 1.0, Some(&av))
                    }
                };
                self.accumulate(b, gb);
            }
            Op::Relu(a) => {
                let a = *a;
                let mut out = g.clone();
                for (o, &x) in out.data.iter_mut().zip(&self.nodes[a].value.data) {
                    if x <= 0.0 {
                        *o = 0.0;
                    }
                }
                self.accumulate(a, out);
            }
            Op::SoftmaxRow(a) => {
                let a = *a;
                let y = &self.nodes[idx].value;
                let dot: f64 = g.data.iter().zip(&y.data).map(|(gi, yi)| gi * yi).sum();
                let out = Tensor::row(
                    &y.data
                        .iter()
                        .zip(&g.data)
                        .map(|(&yi, &gi)| yi * (gi - dot))
                        .collect::<Vec<_>>(),
                );
                self.accumulate(a, out);
            }
            Op::Reduce { a, kind, axis } => {
                let (a, kind, axis) = (*a, *kind, *axis);
                let (m, n) = self.nodes[a].value.shape();
                let mut out = Tensor::zeros(m, n);
                for r in 0..m {
                    for c in 0..n {
                        let (gv, count) = match axis {
                            Axis::All => (g.data[0], (m * n) as f64),
                            Axis::Rows => (g.data[c], m as f64),
                            Axis::Cols => (g.data[r], n as f64),
                        };
                        out.data[r * n + c] = match kind {
                            ReduceKind::Sum => gv,
                            ReduceKind::Mean => gv / count,
                        };
                    }
                }
                self.accumulate(a, out);
            }
            Op::RowMask { a, mask } => {
                let a = *a;
                let mask = mask.clone();
                let mut out = g.clone();
                let n = out.cols;
                for (r, keep) in mask.iter().enumerate() {
                    if !keep {
                        out.data[r * n..(r + 1) * n].fill(0.0);
                    }
                }
                self.accumulate(a, out);
            }
            Op::Transpose(a) => {
                let a = *a;
                self.accumulate(a, g.transpose());
            }
            Op::Reshape(a) => {
                let a = *a;
                let (m, n) = self.nodes[a].value.shape();
                let out = Tensor { rows: m, cols: n, data: g.data.clone(), requires_grad: false };
                self.accumulate(a, out);
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let rows = self.nodes[idx].value.rows;
                let total = self.nodes[idx].value.cols;
                let mut off = 0;
                for p in parts {
                    let pc = self.nodes[p].value.cols;
                    let mut out = Tensor::zeros(rows, pc);
                    for r in 0..rows {
                        out.data[r * pc..(r + 1) * pc]
                            .copy_from_slice(&g.data[r * total + off..r * total + off + pc]);
                    }
                    self.accumulate(p, out);
                    off += pc;
                }
            }
            Op::Pick { a, r, c } => {
                let (a, r, c) = (*a, *r, *c);
                let (m, n) = self.nodes[a].value.shape();
                let mut out = Tensor::zeros(m, n);
                out.data[r * n + c] = g.data[0];
                self.accumulate(a, out);
            }
            Op::LogClamped(a) => {
                let a = *a;
                let out = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g
                        .data
                        .iter()
                        .zip(&self.nodes[a].value.data)
                        .map(|(&gv, &x)| if x > LOG_CLAMP { gv / x } else { 0.0 })
                        .collect(),
                    requires_grad: false,
                };
                self.accumulate(a, out);
            }
            Op::Scale { a, k } => {
                let (a, k) = (*a, *k);
                self.accumulate(a, g.scale(k));
            }
            Op::ScaleByScalar { a, s } => {
                let (a, s) = (*a, *s);
                let sv = self.nodes[s].value.data[0];
                let ga = g.scale(sv);
                let gs: f64 = g
                    .data
                    .iter()
                    .zip(&self.nodes[a].value.data)
                    .map(|(gv, av)| gv * av)
                    .sum();
                self.accumulate(a, ga);
                self.accumulate(s, Tensor::scalar(gs));
            }
            Op::MinMaxNormalize(a) => {
                let a = *a;
                let x = &self.nodes[a].value;
                let n = x.cols;
                let mut jmin = 0;
                let mut jmax = 0;
                for j in 1..n {
                    if x.data[j] < x.data[jmin] {
                        jmin = j;
                    }
                    if x.data[j] > x.data[jmax] {
                        jmax = j;
                    }
                }
                let range = x.data[jmax] - x.data[jmin];
                if range < 1e-12 {
                    return; // degenerate branch emitted a constant
                }
                let y = &self.nodes[idx].value;
                let g_sum: f64 = g.data.iter().sum();
                let gy_sum: f64 = g.data.iter().zip(&y.data).map(|(gi, yi)| gi * yi).sum();
                let mut out = Tensor::zeros(1, n);
                for j in 0..n {
                    let mut v = g.data[j] / range;
                    if j == jmin {
                        v -= g_sum / range;
                        v += gy_sum / range;
                    }
                    if j == jmax {
                        v -= gy_sum / range;
                    }
                    out.data[j] = v;
                }
                self.accumulate(a, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::row(v)
    }

    #[test]
    fn relu_sign_cases() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(row(&[-1.0, 0.0, 2.0]));
        let r = rec.relu(a).unwrap();
        assert_eq!(rec.value(r).data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_all_negative_blocks_gradient() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(row(&[-3.0, -0.5]).with_grad());
        let r = rec.relu(a).unwrap();
        let loss = rec.sum_all(r).unwrap();
        rec.backward(loss).unwrap();
        assert_eq!(rec.value(r).data, vec![0.0, 0.0]);
        assert_eq!(rec.grad(a).unwrap().data, vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_uniform_and_overflow() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(row(&[5.0, 5.0, 5.0]));
        let s = rec.softmax_row(a).unwrap();
        for &v in &rec.value(s).data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = rec.leaf(row(&[1000.0, 0.0]));
        let sb = rec.softmax_row(b).unwrap();
        let out = &rec.value(sb).data;
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out[0] - 1.0).abs() < 1e-12 && out[1] < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut rec = DiffRecord::new();
        let logits = [0.3, -1.2, 2.4, 0.0, 0.7];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        let a = rec.leaf(row(&logits));
        let b = rec.leaf(row(&shifted));
        let sa = rec.softmax_row(a).unwrap();
        let sb = rec.softmax_row(b).unwrap();
        let sum: f64 = rec.value(sa).data.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for (x, y) in rec.value(sa).data.iter().zip(&rec.value(sb).data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reductions_hand_cases() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mean_all = rec.reduce(a, ReduceKind::Mean, Axis::All).unwrap();
        assert_eq!(rec.value(mean_all).data, vec![2.5]);
        let col_mean = rec.reduce(a, ReduceKind::Mean, Axis::Rows).unwrap();
        assert_eq!(rec.value(col_mean).data, vec![2.0, 3.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(Tensor::new(2, 3, vec![1.0; 6]).unwrap().with_grad());
        let s = rec.sum_all(a).unwrap();
        rec.backward(s).unwrap();
        assert_eq!(rec.grad(a).unwrap().data, vec![1.0; 6]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut rec = DiffRecord::new();
        let theta = row(&[1.5, -2.0, 0.25]).with_grad();
        let a = rec.leaf(theta);
        let sq = rec.mul(a, a).unwrap();
        let s = rec.sum_all(sq).unwrap();
        rec.backward(s).unwrap();
        assert_eq!(rec.grad(a).unwrap().data, vec![3.0, -4.0, 0.5]);
    }

    #[test]
    fn product_rule_gradient_equals_other_factor() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(row(&[2.0, -1.0, 0.5]).with_grad());
        let b = rec.leaf(row(&[3.0, 4.0, -2.0]));
        let p = rec.mul(a, b).unwrap();
        let s = rec.sum_all(p).unwrap();
        rec.backward(s).unwrap();
        assert_eq!(rec.grad(a).unwrap().data, rec.value(b).data);
    }

    #[test]
    fn elementwise_identities() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(row(&[1.0, -2.0, 3.0]));
        let zero = rec.leaf(Tensor::zeros(1, 3));
        let one = rec.leaf(Tensor::ones(1, 3));
        let add = rec.add(a, zero).unwrap();
        let mul = rec.mul(a, one).unwrap();
        assert_eq!(rec.value(add).data, rec.value(a).data);
        assert_eq!(rec.value(mul).data, rec.value(a).data);
    }

    #[test]
    fn broadcast_backward_is_column_sum() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(Tensor::new(3, 2, vec![1.0; 6]).unwrap());
        let b = rec.leaf(row(&[10.0, 20.0]).with_grad());
        let out = rec.add(a, b).unwrap();
        assert_eq!(rec.value(out).data, vec![11.0, 21.0, 11.0, 21.0, 11.0, 21.0]);
        let s = rec.sum_all(out).unwrap();
        rec.backward(s).unwrap();
        assert_eq!(rec.grad(b).unwrap().data, vec![3.0, 3.0]);
    }

    #[test]
    fn elementwise_shape_error() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(Tensor::zeros(2, 3));
        let b = rec.leaf(Tensor::zeros(2, 2));
        assert!(matches!(rec.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn row_mask_cases() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let keep_all = rec.row_mask(a, &[true, true, true]).unwrap();
        assert_eq!(rec.value(keep_all).data, rec.value(a).data);
        let drop_all = rec.row_mask(a, &[false, false, false]).unwrap();
        assert_eq!(rec.value(drop_all).data, vec![0.0; 6]);
        let mid = rec.row_mask(a, &[true, false, true]).unwrap();
        assert_eq!(rec.value(mid).data, vec![1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
        // idempotent
        let twice = rec.row_mask(mid, &[true, false, true]).unwrap();
        assert_eq!(rec.value(twice).data, rec.value(mid).data);
        assert!(matches!(rec.row_mask(a, &[true, false]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_contract_errors() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(row(&[1.0, 2.0]).with_grad());
        let s = rec.sum_all(a).unwrap();
        assert!(matches!(rec.backward(a), Err(Error::Contract(_)))); // non-scalar
        rec.backward(s).unwrap();
        assert!(matches!(rec.backward(s), Err(Error::Contract(_)))); // repeat without reset
        rec.reset_gradients();
        rec.backward(s).unwrap();

        let mut rec2 = DiffRecord::new();
        let c = rec2.constant(Tensor::scalar(4.0));
        assert!(matches!(rec2.backward(c), Err(Error::Contract(_)))); // detached root
    }

    #[test]
    fn fanout_accumulates() {
        // z = x + x, dz/dx = 2
        let mut rec = DiffRecord::new();
        let x = rec.leaf(Tensor::scalar(3.0).with_grad());
        let z = rec.add(x, x).unwrap();
        rec.backward(z).unwrap();
        assert_eq!(rec.grad(x).unwrap().data, vec![2.0]);
    }

    #[test]
    fn pick_and_log_clamped() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(Tensor::new(2, 2, vec![0.7, 0.2, 0.0, 0.1]).unwrap().with_grad());
        let p = rec.pick(a, 0, 0).unwrap();
        let l = rec.log_clamped(p).unwrap();
        assert!((rec.value(l).data[0] - 0.7f64.ln()).abs() < 1e-15);
        rec.backward(l).unwrap();
        let g = rec.grad(a).unwrap();
        assert!((g.at(0, 0) - 1.0 / 0.7).abs() < 1e-12);
        assert_eq!(g.at(1, 1), 0.0);
        // clamped region passes no gradient
        let mut rec2 = DiffRecord::new();
        let b = rec2.leaf(Tensor::scalar(0.0).with_grad());
        let l2 = rec2.log_clamped(b).unwrap();
        assert!(rec2.value(l2).data[0].is_finite());
        rec2.backward(l2).unwrap();
        assert_eq!(rec2.grad(b).unwrap().data, vec![0.0]);
        assert!(matches!(rec.pick(a, 2, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn minmax_normalize_cases() {
        let mut rec = DiffRecord::new();
        let a = rec.leaf(row(&[2.0, 4.0, 6.0]));
        let n = rec.minmax_normalize(a).unwrap();
        assert_eq!(rec.value(n).data, vec![0.0, 0.5, 1.0]);
        let c = rec.leaf(row(&[3.0, 3.0, 3.0]));
        let nc = rec.minmax_normalize(c).unwrap();
        assert_eq!(rec.value(nc).data, vec![1.0, 1.0, 1.0]);
        let already = rec.leaf(row(&[0.0, 1.0]));
        let na = rec.minmax_normalize(already).unwrap();
        assert_eq!(rec.value(na).data, vec![0.0, 1.0]);
    }

    #[test]
    fn determinism_bitwise() {
        let run = || {
            let mut rec = DiffRecord::new();
            let a = rec.leaf(row(&[0.1, 0.2, 0.3]).with_grad());
            let b = rec.leaf(row(&[-1.0, 2.0, 0.5]));
            let m = rec.mul(a, b).unwrap();
            let s = rec.softmax_row(m).unwrap();
            let l = rec.log_clamped(s).unwrap();
            let out = rec.sum_all(l).unwrap();
            rec.backward(out).unwrap();
            (rec.value(out).data.clone(), rec.grad(a).unwrap().data.clone())
        };
        assert_eq!(run(), run());
    }
}
