//! Wengert tape recording primitive operations during the forward pass,
//! replayed in reverse to accumulate adjoints.
//!
//! Tapes are immutable once built and reusable: `backward` borrows the
//! tape and may be called any number of times, each call recomputing
//! adjoints from scratch. Identical inputs reproduce identical values
//! bit-for-bit because every operation is a fixed sequential loop.

use std::rc::Rc;

use crate::error::{Error, Result, DIV_GUARD};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    Powf(NodeId, f64),
    SoftmaxLast(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    NormalizeLast(NodeId),
    Permute(NodeId, Rc<Vec<usize>>),
    Reshape(NodeId),
    ConcatRows(Vec<NodeId>),
    Transpose(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Record of primitive operations with their input/output handles and
/// forward values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `true` when `small` can broadcast against the trailing dimensions of
/// `big` (leading-dimension batch broadcast; all other shape mixing is
/// an explicit reshape).
fn suffix_broadcast(big: &[usize], small: &[usize]) -> bool {
    small.len() < big.len() && big[big.len() - small.len()..] == *small
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn push_checked(&mut self, op_name: &'static str, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        Ok(self.push(op, Tensor { shape, data }))
    }

    /// Registers a differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Registers a leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    fn binary_shapes(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        allow_broadcast: bool,
    ) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb || (allow_broadcast && suffix_broadcast(sa, sb)) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                expected: format!("{sa:?}"),
                got: format!("{sb:?}"),
            })
        }
    }

    /// Elementwise sum. `b` may broadcast against the trailing
    /// dimensions of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("add", a, b, true)?;
        let (va, vb) = (self.value(a), self.value(b));
        let blen = vb.numel();
        let data: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + vb.data()[i % blen])
            .collect();
        let shape = va.shape().to_vec();
        self.push_checked("add", Op::Add(a, b), shape, data)
    }

    /// Elementwise difference, same broadcast rule as [`Tape::add`].
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("sub", a, b, true)?;
        let (va, vb) = (self.value(a), self.value(b));
        let blen = vb.numel();
        let data: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x - vb.data()[i % blen])
            .collect();
        let shape = va.shape().to_vec();
        self.push_checked("sub", Op::Sub(a, b), shape, data)
    }

    /// Elementwise product (shapes must match exactly).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("mul", a, b, false)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = va.shape().to_vec();
        self.push_checked("mul", Op::Mul(a, b), shape, data)
    }

    /// Elementwise quotient. Errors when any denominator magnitude is
    /// below [`DIV_GUARD`].
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("div", a, b, false)?;
        if self.value(b).data().iter().any(|v| v.abs() < DIV_GUARD) {
            return Err(Error::DivisionGuard { op: "div" });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x / y)
            .collect();
        let shape = va.shape().to_vec();
        self.push_checked("div", Op::Div(a, b), shape, data)
    }

    /// Matrix product of two rank-2 tensors `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: "[m,k] x [k,n]".to_string(),
                got: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        self.push_checked("matmul", Op::Matmul(a, b), vec![m, n], out)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("scale", Op::Scale(a, c), shape, data)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x + c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("offset", Op::Offset(a), shape, data)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("relu", Op::Relu(a), shape, data)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("tanh", Op::Tanh(a), shape, data)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("sigmoid", Op::Sigmoid(a), shape, data)
    }

    /// Natural logarithm; non-positive inputs surface as a non-finite
    /// error.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.ln()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("ln", Op::Ln(a), shape, data)
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.powf(p)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked("powf", Op::Powf(a, p), shape, data)
    }

    /// Softmax over the last axis, computed with max-subtraction.
    pub fn softmax_last(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let d = *va.shape().last().ok_or(Error::ShapeMismatch {
            op: "softmax_last",
            expected: "rank >= 1".to_string(),
            got: "rank 0".to_string(),
        })?;
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = va.shape().to_vec();
        self.push_checked("softmax_last", Op::SoftmaxLast(a), shape, data)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push_checked("sum", Op::Sum(a), vec![1], vec![s])
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push_checked("mean", Op::Mean(a), vec![1], vec![s / n])
    }

    /// Sum over the last axis: `[.., d] -> [..]` (a 1-D input reduces to
    /// `[1]`).
    pub fn sum_last(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let d = *va.shape().last().ok_or(Error::ShapeMismatch {
            op: "sum_last",
            expected: "rank >= 1".to_string(),
            got: "rank 0".to_string(),
        })?;
        let data: Vec<f64> = va.data().chunks(d).map(|row| row.iter().sum()).collect();
        let shape = if va.shape().len() == 1 {
            vec![1]
        } else {
            va.shape()[..va.shape().len() - 1].to_vec()
        };
        self.push_checked("sum_last", Op::SumLast(a), shape, data)
    }

    /// L2-normalizes each row of the last axis. Errors when any row norm
    /// falls below [`DIV_GUARD`] (degenerate feature).
    pub fn normalize_last(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let d = *va.shape().last().ok_or(Error::ShapeMismatch {
            op: "normalize_last",
            expected: "rank >= 1".to_string(),
            got: "rank 0".to_string(),
        })?;
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < DIV_GUARD {
                return Err(Error::DegenerateNorm {
                    op: "normalize_last",
                });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let shape = va.shape().to_vec();
        self.push_checked("normalize_last", Op::NormalizeLast(a), shape, data)
    }

    /// Rearranges elements: `out[i] = a[indices[i]]`. `indices` must be
    /// a permutation of `0..numel` so the backward pass is a plain
    /// scatter (used for patch extraction).
    pub fn permute(&mut self, a: NodeId, indices: Rc<Vec<usize>>, out_shape: Vec<usize>) -> Result<NodeId> {
        let va = self.value(a);
        let numel: usize = out_shape.iter().product();
        if numel != va.numel() || indices.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "permute",
                expected: format!("{} indices", va.numel()),
                got: format!("{} indices -> {:?}", indices.len(), out_shape),
            });
        }
        debug_assert!({
            let mut seen = vec![false; numel];
            indices.iter().all(|&i| {
                i < numel && !std::mem::replace(&mut seen[i], true)
            })
        });
        let data: Vec<f64> = indices.iter().map(|&i| va.data()[i]).collect();
        self.push_checked("permute", Op::Permute(a, indices), out_shape, data)
    }

    /// Stacks rank-2 tensors with identical column counts along rows.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument(
                "concat_rows needs at least one part".to_string(),
            ));
        }
        let first = self.value(parts[0]).shape();
        if first.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                expected: "rank 2".to_string(),
                got: format!("{first:?}"),
            });
        }
        let cols = first[1];
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[1] != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    expected: format!("[_, {cols}]"),
                    got: format!("{s:?}"),
                });
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push_checked(
            "concat_rows",
            Op::ConcatRows(parts.to_vec()),
            vec![rows, cols],
            data,
        )
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let s = va.shape();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                expected: "rank 2".to_string(),
                got: format!("{s:?}"),
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = va.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        self.push_checked("transpose", Op::Transpose(a), vec![n, m], data)
    }

    /// Reinterprets the shape without moving data.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let va = self.value(a);
        if shape.iter().product::<usize>() != va.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                expected: format!("{} elements", va.numel()),
                got: format!("{shape:?}"),
            });
        }
        let data = va.data().to_vec();
        self.push_checked("reshape", Op::Reshape(a), shape, data)
    }

    /// Reverse sweep from a scalar loss. Every node reachable from the
    /// loss receives a fully accumulated adjoint; unreachable nodes read
    /// back as zero. The tape itself is untouched and may be swept again.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NodeNotOnTape);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::NotScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adjoints[i].take() else {
                continue;
            };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.propagate(i, &g, &mut adjoints)?;
            adjoints[i] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            adjoints,
        })
    }

    /// Adds this node's contribution to its inputs' adjoints.
    fn propagate(&self, i: usize, g: &[f64], adjoints: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let acc = |adjoints: &mut [Option<Vec<f64>>], id: NodeId, contrib: &mut dyn FnMut(&mut Vec<f64>)| {
            let slot = adjoints[id.0]
                .get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.numel()]);
            contrib(slot);
        };

        match &node.op {
            Op::Input | Op::Constant => {}
            Op::Add(a, b) => {
                acc(adjoints, *a, &mut |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                let blen = self.nodes[b.0].value.numel();
                acc(adjoints, *b, &mut |db| {
                    for (j, gv) in g.iter().enumerate() {
                        db[j % blen] += gv;
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(adjoints, *a, &mut |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                let blen = self.nodes[b.0].value.numel();
                acc(adjoints, *b, &mut |db| {
                    for (j, gv) in g.iter().enumerate() {
                        db[j % blen] -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                acc(adjoints, *a, &mut |da| {
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(vb) {
                        *d += gv * y;
                    }
                });
                acc(adjoints, *b, &mut |db| {
                    for ((d, gv), x) in db.iter_mut().zip(g).zip(va) {
                        *d += gv * x;
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                acc(adjoints, *a, &mut |da| {
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(vb) {
                        *d += gv / y;
                    }
                });
                acc(adjoints, *b, &mut |db| {
                    for (j, d) in db.iter_mut().enumerate() {
                        *d -= g[j] * va[j] / (vb[j] * vb[j]);
                    }
                });
            }
            Op::Matmul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                // dA = g . B^T
                acc(adjoints, *a, &mut |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * vb[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                // dB = A^T . g
                acc(adjoints, *b, &mut |db| {
                    for p in 0..k {
                        for i in 0..m {
                            let aip = va[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(adjoints, *a, &mut |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                });
            }
            Op::Offset(a) => {
                acc(adjoints, *a, &mut |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.nodes[a.0].value.data();
                acc(adjoints, *a, &mut |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(va) {
                        if *x > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let vy = node.value.data();
                acc(adjoints, *a, &mut |da| {
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(vy) {
                        *d += gv * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let vy = node.value.data();
                acc(adjoints, *a, &mut |da| {
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(vy) {
                        *d += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Ln(a) => {
                let va = self.nodes[a.0].value.data();
                acc(adjoints, *a, &mut |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(va) {
                        *d += gv / x;
                    }
                });
            }
            Op::Powf(a, p) => {
                let p = *p;
                let va = self.nodes[a.0].value.data();
                acc(adjoints, *a, &mut |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(va) {
                        *d += gv * p * x.powf(p - 1.0);
                    }
                });
            }
            Op::SoftmaxLast(a) => {
                let vy = node.value.data();
                let d_axis = *node.value.shape().last().unwrap();
                acc(adjoints, *a, &mut |da| {
                    for (row_idx, row_y) in vy.chunks(d_axis).enumerate() {
                        let base = row_idx * d_axis;
                        let row_g = &g[base..base + d_axis];
                        let dot: f64 = row_g.iter().zip(row_y).map(|(gv, y)| gv * y).sum();
                        for j in 0..d_axis {
                            da[base + j] += row_y[j] * (row_g[j] - dot);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                acc(adjoints, *a, &mut |da| {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel() as f64;
                acc(adjoints, *a, &mut |da| {
                    for d in da.iter_mut() {
                        *d += g[0] / n;
                    }
                });
            }
            Op::SumLast(a) => {
                let d_axis = *self.nodes[a.0].value.shape().last().unwrap();
                acc(adjoints, *a, &mut |da| {
                    for (j, d) in da.iter_mut().enumerate() {
                        *d += g[j / d_axis];
                    }
                });
            }
            Op::NormalizeLast(a) => {
                let vx = self.nodes[a.0].value.data();
                let vy = node.value.data();
                let d_axis = *node.value.shape().last().unwrap();
                acc(adjoints, *a, &mut |da| {
                    for row_idx in 0..vx.len() / d_axis {
                        let base = row_idx * d_axis;
                        let row_x = &vx[base..base + d_axis];
                        let row_y = &vy[base..base + d_axis];
                        let row_g = &g[base..base + d_axis];
                        let norm = row_x.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = row_g.iter().zip(row_y).map(|(gv, y)| gv * y).sum();
                        for j in 0..d_axis {
                            da[base + j] += (row_g[j] - row_y[j] * dot) / norm;
                        }
                    }
                });
            }
            Op::Permute(a, indices) => {
                let indices = Rc::clone(indices);
                acc(adjoints, *a, &mut |da| {
                    for (j, &src) in indices.iter().enumerate() {
                        da[src] += g[j];
                    }
                });
            }
            Op::Reshape(a) => {
                acc(adjoints, *a, &mut |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut start = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.numel();
                    let slice = &g[start..start + len];
                    acc(adjoints, p, &mut |dp| {
                        for (d, gv) in dp.iter_mut().zip(slice) {
                            *d += gv;
                        }
                    });
                    start += len;
                }
            }
            Op::Transpose(a) => {
                let s = self.nodes[a.0].value.shape();
                let (m, n) = (s[0], s[1]);
                acc(adjoints, *a, &mut |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

/// Adjoints produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`. Nodes unreachable from
    /// the loss have zero gradient.
    pub fn wrt(&self, id: NodeId) -> Result<Tensor> {
        let shape = self
            .shapes
            .get(id.0)
            .ok_or(Error::NodeNotOnTape)?
            .clone();
        let data = match &self.adjoints[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; shape.iter().product()],
        };
        Tensor::new(shape, data)
    }
}
