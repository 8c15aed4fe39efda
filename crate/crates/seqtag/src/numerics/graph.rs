//! Define-by-run reverse-mode automatic differentiation over dense f64
//! tensors.
//!
//! A [`Graph`] is a tape: every operation appends a slot holding the forward
//! value and enough context to run its backward rule. Graphs are rebuilt for
//! each forward pass, so variable-length inputs need no special casing.
//! Tape order is a topological order, and [`Graph::backward`] walks it in
//! reverse, visiting each node exactly once.
//!
//! Every forward op validates that its output is finite and fails with
//! [`Error::NonFinite`] otherwise.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

/// Handle to a value on the tape. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

#[derive(Debug, Clone)]
enum Data {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl Data {
    fn as_slice(&self) -> &[f64] {
        match self {
            Data::Owned(v) => v,
            Data::Shared(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EwKind {
    Add,
    Sub,
    Mul,
}

/// Element strides for the restricted broadcast: everything is viewed as a
/// rows x cols grid; a stride of zero repeats the operand along that axis.
#[derive(Debug, Clone, Copy)]
struct EwPlan {
    rows: usize,
    cols: usize,
    a_rs: usize,
    a_cs: usize,
    b_rs: usize,
    b_cs: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Ew { a: usize, b: usize, kind: EwKind, plan: EwPlan },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Softmax { a: usize },
    LogSoftmax { a: usize },
    LogSumExp { a: usize },
    Concat { a: usize, b: usize, axis: usize },
    MeanAxis0 { a: usize },
    Lookup { table: usize, ids: Vec<usize> },
    Dropout { a: usize, mask: Vec<f64> },
    Reshape { a: usize },
    Transpose { a: usize },
    Sum { a: usize },
    Scale { a: usize, c: f64 },
    Gather { a: usize, idx: usize },
    Narrow { a: usize, start: usize, len: usize },
}

#[derive(Debug, Clone)]
struct Slot {
    shape: Vec<usize>,
    data: Data,
    grad: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph {
    slots: Vec<Slot>,
}

fn view2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => unreachable!("elementwise ops are rank <= 2"),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { slots: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn shape(&self, n: Node) -> &[usize] {
        &self.slots[n.0].shape
    }

    pub fn value(&self, n: Node) -> &[f64] {
        self.slots[n.0].data.as_slice()
    }

    pub fn scalar_value(&self, n: Node) -> f64 {
        debug_assert_eq!(self.value(n).len(), 1);
        self.value(n)[0]
    }

    /// Gradient accumulated so far; `None` before any backward pass reached
    /// this node.
    pub fn grad(&self, n: Node) -> Option<&[f64]> {
        self.slots[n.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad = None;
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, op_name: &'static str) -> Result<Node> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            other => self.op_parents(other).iter().any(|&p| self.slots[p].needs_grad),
        };
        self.slots.push(Slot {
            shape,
            data: Data::Owned(data),
            grad: None,
            op,
            needs_grad,
            param: None,
        });
        Ok(Node(self.slots.len() - 1))
    }

    fn op_parents(&self, op: &Op) -> Vec<usize> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Ew { a, b, .. } | Op::Concat { a, b, .. } => vec![*a, *b],
            Op::Lookup { table, .. } => vec![*table],
            Op::Sigmoid { a }
            | Op::Tanh { a }
            | Op::Softmax { a }
            | Op::LogSoftmax { a }
            | Op::LogSumExp { a }
            | Op::MeanAxis0 { a }
            | Op::Dropout { a, .. }
            | Op::Reshape { a }
            | Op::Transpose { a }
            | Op::Sum { a }
            | Op::Scale { a, .. }
            | Op::Gather { a, .. }
            | Op::Narrow { a, .. } => vec![*a],
        }
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Node {
        let (shape, data) = value.into_parts();
        self.slots.push(Slot {
            shape,
            data: Data::Owned(data),
            grad: None,
            op: Op::Leaf,
            needs_grad: requires_grad,
            param: None,
        });
        Node(self.slots.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Node {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Node {
        self.leaf(Tensor::scalar(v), false)
    }

    /// Bind a stored parameter as a leaf. The value is shared, not copied;
    /// gradients flow back to the store via [`Graph::flush_param_grads`].
    pub fn bind(&mut self, store: &ParamStore, id: ParamId) -> Node {
        let p = store.param(id);
        self.slots.push(Slot {
            shape: p.shape.clone(),
            data: Data::Shared(store.shared_value(id)),
            grad: None,
            op: Op::Leaf,
            needs_grad: p.trainable,
            param: Some(id),
        });
        Node(self.slots.len() - 1)
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Node, b: Node) -> Result<Node> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                let row = &bv[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += x * row[j];
                }
            }
        }
        self.push(vec![m, n], out, Op::MatMul { a: a.0, b: b.0 }, "matmul")
    }

    fn elementwise(&mut self, a: Node, b: Node, kind: EwKind) -> Result<Node> {
        let op_name = match kind {
            EwKind::Add => "add",
            EwKind::Sub => "sub",
            EwKind::Mul => "mul",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() > 2 || sb.len() > 2 {
            return Err(Error::shape(op_name, format!("{sa:?} vs {sb:?}")));
        }
        let (ra, ca) = view2(&sa);
        let (rb, cb) = view2(&sb);
        let row_ok = ra == rb || ra == 1 || rb == 1;
        let col_ok = ca == cb || ca == 1 || cb == 1;
        let mismatches = usize::from(ra != rb) + usize::from(ca != cb);
        if !row_ok || !col_ok || mismatches > 1 {
            return Err(Error::shape(
                op_name,
                format!("{sa:?} vs {sb:?}: only a single leading or trailing singleton may broadcast"),
            ));
        }
        let rows = ra.max(rb);
        let cols = ca.max(cb);
        let plan = EwPlan {
            rows,
            cols,
            a_rs: if ra == rows { ca } else { 0 },
            a_cs: if ca == cols { 1 } else { 0 },
            b_rs: if rb == rows { cb } else { 0 },
            b_cs: if cb == cols { 1 } else { 0 },
        };
        let out_shape = if sa.len() == 1 && sb.len() == 1 {
            vec![cols]
        } else {
            vec![rows, cols]
        };
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let x = av[r * plan.a_rs + c * plan.a_cs];
                let y = bv[r * plan.b_rs + c * plan.b_cs];
                out[r * cols + c] = match kind {
                    EwKind::Add => x + y,
                    EwKind::Sub => x - y,
                    EwKind::Mul => x * y,
                };
            }
        }
        self.push(
            out_shape,
            out,
            Op::Ew {
                a: a.0,
                b: b.0,
                kind,
                plan,
            },
            op_name,
        )
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        self.elementwise(a, b, EwKind::Add)
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Result<Node> {
        self.elementwise(a, b, EwKind::Sub)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Result<Node> {
        self.elementwise(a, b, EwKind::Mul)
    }

    pub fn sigmoid(&mut self, a: Node) -> Result<Node> {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        self.push(self.shape(a).to_vec(), out, Op::Sigmoid { a: a.0 }, "sigmoid")
    }

    pub fn tanh(&mut self, a: Node) -> Result<Node> {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.push(self.shape(a).to_vec(), out, Op::Tanh { a: a.0 }, "tanh")
    }

    fn rows_of(&self, a: Node, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(a) {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("{s:?}"))),
        }
    }

    /// Row-wise softmax (max-subtracted).
    pub fn softmax(&mut self, a: Node) -> Result<Node> {
        let (rows, cols) = self.rows_of(a, "softmax")?;
        let av = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        self.push(self.shape(a).to_vec(), out, Op::Softmax { a: a.0 }, "softmax")
    }

    /// Row-wise log-softmax (max-subtracted).
    pub fn log_softmax(&mut self, a: Node) -> Result<Node> {
        let (rows, cols) = self.rows_of(a, "log_softmax")?;
        let av = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            let lz = max + z.ln();
            for (d, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *d = x - lz;
            }
        }
        self.push(self.shape(a).to_vec(), out, Op::LogSoftmax { a: a.0 }, "log_softmax")
    }

    /// log(sum(exp(a))) of a vector, as a scalar node.
    pub fn logsumexp(&mut self, a: Node) -> Result<Node> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape("logsumexp", format!("{:?}", self.shape(a))));
        }
        let av = self.value(a);
        let max = av.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = av.iter().map(|&x| (x - max).exp()).sum();
        let out = vec![max + z.ln()];
        self.push(vec![1], out, Op::LogSumExp { a: a.0 }, "logsumexp")
    }

    pub fn concat(&mut self, a: Node, b: Node, axis: usize) -> Result<Node> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (shape, out) = match (sa.as_slice(), sb.as_slice(), axis) {
            ([n], [m], 0) => {
                let mut v = Vec::with_capacity(n + m);
                v.extend_from_slice(self.value(a));
                v.extend_from_slice(self.value(b));
                (vec![n + m], v)
            }
            ([r1, c1], [r2, c2], 0) if c1 == c2 => {
                let mut v = Vec::with_capacity((r1 + r2) * c1);
                v.extend_from_slice(self.value(a));
                v.extend_from_slice(self.value(b));
                (vec![r1 + r2, *c1], v)
            }
            ([r1, c1], [r2, c2], 1) if r1 == r2 => {
                let mut v = Vec::with_capacity(r1 * (c1 + c2));
                let (av, bv) = (self.value(a), self.value(b));
                for r in 0..*r1 {
                    v.extend_from_slice(&av[r * c1..(r + 1) * c1]);
                    v.extend_from_slice(&bv[r * c2..(r + 1) * c2]);
                }
                (vec![*r1, c1 + c2], v)
            }
            _ => return Err(Error::shape("concat", format!("{sa:?} + {sb:?} on axis {axis}"))),
        };
        self.push(shape, out, Op::Concat { a: a.0, b: b.0, axis }, "concat")
    }

    pub fn concat_many(&mut self, nodes: &[Node], axis: usize) -> Result<Node> {
        let mut it = nodes.iter();
        let first = *it.next().ok_or_else(|| Error::shape("concat", "empty input"))?;
        it.try_fold(first, |acc, &n| self.concat(acc, n, axis))
    }

    /// Column means of a matrix: [n, d] -> [d].
    pub fn mean_axis0(&mut self, a: Node) -> Result<Node> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("mean_axis0", format!("{s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                out[c] += av[r * d + c];
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        self.push(vec![d], out, Op::MeanAxis0 { a: a.0 }, "mean_axis0")
    }

    /// Row gather from a matrix: out[i] = table[ids[i]]. Backward scatters
    /// gradients into the selected rows only.
    pub fn lookup(&mut self, table: Node, ids: &[usize]) -> Result<Node> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("lookup", format!("table shape {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("lookup", format!("id {bad} out of range (rows: {v})")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        self.push(
            vec![ids.len(), d],
            out,
            Op::Lookup {
                table: table.0,
                ids: ids.to_vec(),
            },
            "lookup",
        )
    }

    /// Inverted dropout: during training each element is zeroed with
    /// probability `p` and survivors are scaled by 1/(1-p). Identity at
    /// inference or when p = 0.
    pub fn dropout(&mut self, a: Node, p: f64, rng: &mut Rng, training: bool) -> Result<Node> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::shape("dropout", format!("rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.next_f64() >= p { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.push(self.shape(a).to_vec(), out, Op::Dropout { a: a.0, mask }, "dropout")
    }

    pub fn reshape(&mut self, a: Node, shape: Vec<usize>) -> Result<Node> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != self.value(a).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let out = self.value(a).to_vec();
        self.push(shape, out, Op::Reshape { a: a.0 }, "reshape")
    }

    pub fn transpose(&mut self, a: Node) -> Result<Node> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("{s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose { a: a.0 }, "transpose")
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: Node) -> Result<Node> {
        let out = vec![self.value(a).iter().sum()];
        self.push(vec![1], out, Op::Sum { a: a.0 }, "sum")
    }

    /// Multiply by a compile-time constant (not a graph value).
    pub fn scale(&mut self, a: Node, c: f64) -> Result<Node> {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale { a: a.0, c }, "scale")
    }

    /// Pick one element of a vector, as a scalar node.
    pub fn gather(&mut self, a: Node, idx: usize) -> Result<Node> {
        if self.shape(a).len() != 1 || idx >= self.value(a).len() {
            return Err(Error::shape(
                "gather",
                format!("index {idx} in {:?}", self.shape(a)),
            ));
        }
        let out = vec![self.value(a)[idx]];
        self.push(vec![1], out, Op::Gather { a: a.0, idx }, "gather")
    }

    /// Contiguous range along axis 0: rows of a matrix or a slice of a
    /// vector.
    pub fn narrow(&mut self, a: Node, start: usize, len: usize) -> Result<Node> {
        let s = self.shape(a).to_vec();
        let (shape, out) = match s.as_slice() {
            [n] if start + len <= *n => (vec![len], self.value(a)[start..start + len].to_vec()),
            [r, c] if start + len <= *r => (
                vec![len, *c],
                self.value(a)[start * c..(start + len) * c].to_vec(),
            ),
            _ => return Err(Error::shape("narrow", format!("{s:?} [{start}..{}]", start + len))),
        };
        self.push(shape, out, Op::Narrow { a: a.0, start, len }, "narrow")
    }

    // ── Convenience compositions ────────────────────────────────────────

    /// Row `i` of a matrix, as a vector node.
    pub fn row(&mut self, a: Node, i: usize) -> Result<Node> {
        let cols = match self.shape(a) {
            [_, c] => *c,
            s => return Err(Error::shape("row", format!("{s:?}"))),
        };
        let r = self.narrow(a, i, 1)?;
        self.reshape(r, vec![cols])
    }

    /// Vector-matrix product: [k] x [k, n] -> [n].
    pub fn vec_mat(&mut self, v: Node, m: Node) -> Result<Node> {
        let k = match self.shape(v) {
            [k] => *k,
            s => return Err(Error::shape("vec_mat", format!("vector {s:?}"))),
        };
        let n = match self.shape(m) {
            [_, n] => *n,
            s => return Err(Error::shape("vec_mat", format!("matrix {s:?}"))),
        };
        let v2 = self.reshape(v, vec![1, k])?;
        let p = self.matmul(v2, m)?;
        self.reshape(p, vec![n])
    }

    /// x W + b for a vector x.
    pub fn affine(&mut self, x: Node, w: Node, b: Node) -> Result<Node> {
        let p = self.vec_mat(x, w)?;
        self.add(p, b)
    }

    /// Dot product of two vectors, as a scalar node.
    pub fn dot(&mut self, a: Node, b: Node) -> Result<Node> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    // ── Backward ────────────────────────────────────────────────────────

    fn grad_buf(&mut self, idx: usize) -> &mut Vec<f64> {
        let numel = self.slots[idx].data.as_slice().len();
        self.slots[idx].grad.get_or_insert_with(|| vec![0.0; numel])
    }

    /// Reverse accumulation from a scalar loss. Leaf gradients add into
    /// whatever is already stored, so calls without [`Graph::zero_grads`] in
    /// between accumulate; intermediate gradients are scratch state and are
    /// reset on every call.
    pub fn backward(&mut self, loss: Node) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        for s in &mut self.slots {
            if !matches!(s.op, Op::Leaf) {
                s.grad = None;
            }
        }
        self.grad_buf(loss.0)[0] += 1.0;
        for idx in (0..=loss.0).rev() {
            if !self.slots[idx].needs_grad || self.slots[idx].grad.is_none() {
                continue;
            }
            if matches!(self.slots[idx].op, Op::Leaf) {
                continue;
            }
            let contributions = self.local_grads(idx);
            for (parent, contrib) in contributions {
                if !self.slots[parent].needs_grad {
                    continue;
                }
                let buf = self.grad_buf(parent);
                for (g, c) in buf.iter_mut().zip(&contrib) {
                    *g += c;
                }
            }
        }
        Ok(())
    }

    /// Per-parent gradient contributions for the node at `idx`. The output
    /// gradient of `idx` is already populated when this runs.
    fn local_grads(&self, idx: usize) -> Vec<(usize, Vec<f64>)> {
        let slot = &self.slots[idx];
        let gout = slot.grad.as_ref().expect("output grad present");
        let val = slot.data.as_slice();
        match &slot.op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = &self.slots[*a].shape;
                    (s[0], s[1])
                };
                let n = self.slots[*b].shape[1];
                let av = self.slots[*a].data.as_slice();
                let bv = self.slots[*b].data.as_slice();
                // dA = dC B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = gout[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
                // dB = A^T dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += x * gout[i * n + j];
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Ew { a, b, kind, plan } => {
                let av = self.slots[*a].data.as_slice();
                let bv = self.slots[*b].data.as_slice();
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for r in 0..plan.rows {
                    for c in 0..plan.cols {
                        let g = gout[r * plan.cols + c];
                        let ai = r * plan.a_rs + c * plan.a_cs;
                        let bi = r * plan.b_rs + c * plan.b_cs;
                        match kind {
                            EwKind::Add => {
                                da[ai] += g;
                                db[bi] += g;
                            }
                            EwKind::Sub => {
                                da[ai] += g;
                                db[bi] -= g;
                            }
                            EwKind::Mul => {
                                da[ai] += g * bv[bi];
                                db[bi] += g * av[ai];
                            }
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Sigmoid { a } => {
                let da = gout
                    .iter()
                    .zip(val)
                    .map(|(&g, &y)| g * y * (1.0 - y))
                    .collect();
                vec![(*a, da)]
            }
            Op::Tanh { a } => {
                let da = gout.iter().zip(val).map(|(&g, &y)| g * (1.0 - y * y)).collect();
                vec![(*a, da)]
            }
            Op::Softmax { a } => {
                let (rows, cols) = view2(&slot.shape);
                let mut da = vec![0.0; val.len()];
                for r in 0..rows {
                    let y = &val[r * cols..(r + 1) * cols];
                    let g = &gout[r * cols..(r + 1) * cols];
                    let s: f64 = y.iter().zip(g).map(|(&yi, &gi)| yi * gi).sum();
                    for c in 0..cols {
                        da[r * cols + c] = y[c] * (g[c] - s);
                    }
                }
                vec![(*a, da)]
            }
            Op::LogSoftmax { a } => {
                let (rows, cols) = view2(&slot.shape);
                let mut da = vec![0.0; val.len()];
                for r in 0..rows {
                    let y = &val[r * cols..(r + 1) * cols];
                    let g = &gout[r * cols..(r + 1) * cols];
                    let s: f64 = g.iter().sum();
                    for c in 0..cols {
                        da[r * cols + c] = g[c] - y[c].exp() * s;
                    }
                }
                vec![(*a, da)]
            }
            Op::LogSumExp { a } => {
                let av = self.slots[*a].data.as_slice();
                let lse = val[0];
                let g = gout[0];
                let da = av.iter().map(|&x| g * (x - lse).exp()).collect();
                vec![(*a, da)]
            }
            Op::Concat { a, b, axis } => {
                let sa = &self.slots[*a].shape;
                let sb = &self.slots[*b].shape;
                let (na, nb) = (
                    self.slots[*a].data.as_slice().len(),
                    self.slots[*b].data.as_slice().len(),
                );
                let mut da = vec![0.0; na];
                let mut db = vec![0.0; nb];
                if *axis == 0 || sa.len() == 1 {
                    da.copy_from_slice(&gout[..na]);
                    db.copy_from_slice(&gout[na..]);
                } else {
                    let (r, c1) = (sa[0], sa[1]);
                    let c2 = sb[1];
                    for i in 0..r {
                        da[i * c1..(i + 1) * c1]
                            .copy_from_slice(&gout[i * (c1 + c2)..i * (c1 + c2) + c1]);
                        db[i * c2..(i + 1) * c2]
                            .copy_from_slice(&gout[i * (c1 + c2) + c1..(i + 1) * (c1 + c2)]);
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::MeanAxis0 { a } => {
                let s = &self.slots[*a].shape;
                let (n, d) = (s[0], s[1]);
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        da[r * d + c] = gout[c] / n as f64;
                    }
                }
                vec![(*a, da)]
            }
            Op::Lookup { table, ids } => {
                let s = &self.slots[*table].shape;
                let (v, d) = (s[0], s[1]);
                let mut dt = vec![0.0; v * d];
                for (r, &i) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[i * d + c] += gout[r * d + c];
                    }
                }
                vec![(*table, dt)]
            }
            Op::Dropout { a, mask } => {
                let da = gout.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                vec![(*a, da)]
            }
            Op::Reshape { a } => vec![(*a, gout.clone())],
            Op::Transpose { a } => {
                let (c, r) = (slot.shape[0], slot.shape[1]); // out is [c, r]
                let mut da = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        da[j * c + i] = gout[i * r + j];
                    }
                }
                vec![(*a, da)]
            }
            Op::Sum { a } => {
                let n = self.slots[*a].data.as_slice().len();
                vec![(*a, vec![gout[0]; n])]
            }
            Op::Scale { a, c } => {
                let da = gout.iter().map(|&g| g * c).collect();
                vec![(*a, da)]
            }
            Op::Gather { a, idx } => {
                let n = self.slots[*a].data.as_slice().len();
                let mut da = vec![0.0; n];
                da[*idx] = gout[0];
                vec![(*a, da)]
            }
            Op::Narrow { a, start, len } => {
                let sa = &self.slots[*a].shape;
                let n = self.slots[*a].data.as_slice().len();
                let mut da = vec![0.0; n];
                let stride = if sa.len() == 2 { sa[1] } else { 1 };
                let lo = start * stride;
                let hi = (start + len) * stride;
                da[lo..hi].copy_from_slice(gout);
                vec![(*a, da)]
            }
        }
    }

    /// Add the gradients of every bound parameter leaf into the store.
    pub fn flush_param_grads(&self, store: &mut ParamStore) {
        for slot in &self.slots {
            if let (Some(id), Some(grad)) = (slot.param, slot.grad.as_ref()) {
                let dst = store.grad_mut(id);
                for (d, g) in dst.iter_mut().zip(grad) {
                    *d += g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.constant(t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let a = g.constant(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let p = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(p), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_product() {
        let mut g = Graph::new();
        let a = g.constant(t(vec![1, 2], vec![1.0, 2.0]));
        let b = g.constant(t(vec![2, 1], vec![3.0, 4.0]));
        let p = g.matmul(a, b).unwrap();
        assert_eq!(g.value(p), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let a = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut rng);
        let err = grad_check(
            |g, params| {
                let p = g.matmul(params[0], params[1])?;
                g.sum(p)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let s = g.add(a, z).unwrap();
        assert_eq!(g.value(s), &[1.0, 2.0]);

        let x = g.constant(Tensor::vector(vec![2.0, 3.0]));
        let y = g.constant(Tensor::vector(vec![4.0, 5.0]));
        let m = g.mul(x, y).unwrap();
        assert_eq!(g.value(m), &[8.0, 15.0]);
    }

    #[test]
    fn elementwise_broadcast_rules() {
        let mut g = Graph::new();
        let m = g.constant(t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let row = g.constant(Tensor::vector(vec![10.0, 20.0, 30.0]));
        let s = g.add(m, row).unwrap();
        assert_eq!(g.value(s), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);

        let col = g.constant(t(vec![2, 1], vec![100.0, 200.0]));
        let s2 = g.add(m, col).unwrap();
        assert_eq!(g.value(s2), &[101.0, 102.0, 103.0, 204.0, 205.0, 206.0]);

        let scalar = g.constant(Tensor::scalar(2.0));
        let v = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = g.mul(scalar, v).unwrap();
        assert_eq!(g.value(p), &[2.0, 4.0]);

        // Two mismatched axes are rejected.
        let outer_a = g.constant(t(vec![1, 3], vec![1.0; 3]));
        let outer_b = g.constant(t(vec![2, 1], vec![1.0; 2]));
        assert!(g.add(outer_a, outer_b).is_err());
    }

    #[test]
    fn mul_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let a = Tensor::uniform(vec![5], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(vec![5], -1.0, 1.0, &mut rng);
        let err = grad_check(
            |g, params| {
                let p = g.mul(params[0], params[1])?;
                g.sum(p)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn activations_at_zero() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![0.0]));
        let s = g.sigmoid(z).unwrap();
        let th = g.tanh(z).unwrap();
        assert_eq!(g.value(s), &[0.5]);
        assert_eq!(g.value(th), &[0.0]);
    }

    #[test]
    fn sigmoid_gradient_at_one() {
        let err = grad_check(
            |g, params| {
                let s = g.sigmoid(params[0])?;
                g.sum(s)
            },
            &[Tensor::vector(vec![1.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let s = g.softmax(a).unwrap();
        assert_eq!(g.value(s), &[0.5, 0.5]);

        let big = g.constant(Tensor::vector(vec![1000.0, 1000.0, 1000.0]));
        let sb = g.softmax(big).unwrap();
        for &v in g.value(sb) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_nll_gradient() {
        let mut rng = Rng::new(13);
        let logits = Tensor::uniform(vec![6], -2.0, 2.0, &mut rng);
        let err = grad_check(
            |g, params| {
                let lp = g.log_softmax(params[0])?;
                let picked = g.gather(lp, 2)?;
                g.scale(picked, -1.0)
            },
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn concat_and_mean() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0]));
        let b = g.constant(Tensor::vector(vec![2.0]));
        let c = g.concat(a, b, 0).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0]);

        let m = g.constant(t(vec![2, 2], vec![2.0, 4.0, 4.0, 8.0]));
        let mean = g.mean_axis0(m).unwrap();
        assert_eq!(g.value(mean), &[3.0, 6.0]);
    }

    #[test]
    fn lookup_gradient_matches_one_hot_matmul() {
        // Independent route: selecting rows equals one-hot x table, so the
        // gradients w.r.t. the table must match.
        let mut rng = Rng::new(14);
        let table = Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng);
        let ids = [2usize, 0, 2];

        let mut g1 = Graph::new();
        let t1 = g1.leaf(table.clone(), true);
        let sel = g1.lookup(t1, &ids).unwrap();
        let loss1 = g1.sum(sel).unwrap();
        g1.backward(loss1).unwrap();
        let grad_lookup = g1.grad(t1).unwrap().to_vec();

        let mut onehot = vec![0.0; ids.len() * 4];
        for (r, &i) in ids.iter().enumerate() {
            onehot[r * 4 + i] = 1.0;
        }
        let mut g2 = Graph::new();
        let t2 = g2.leaf(table, true);
        let oh = g2.constant(t(vec![ids.len(), 4], onehot));
        let sel2 = g2.matmul(oh, t2).unwrap();
        let loss2 = g2.sum(sel2).unwrap();
        g2.backward(loss2).unwrap();
        let grad_dense = g2.grad(t2).unwrap().to_vec();

        assert_eq!(grad_lookup, grad_dense);
        // Untouched rows stay zero.
        assert!(grad_lookup[1 * 3..2 * 3].iter().all(|&v| v == 0.0));
        assert!(grad_lookup[3 * 3..4 * 3].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lookup_rejects_out_of_range() {
        let mut g = Graph::new();
        let table = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(g.lookup(table, &[3]).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut g = Graph::new();
        let mut rng = Rng::new(15);
        let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let d0 = g.dropout(a, 0.0, &mut rng, true).unwrap();
        assert_eq!(d0, a);
        let d1 = g.dropout(a, 0.5, &mut rng, false).unwrap();
        assert_eq!(d1, a);
        assert!(g.dropout(a, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_preserves_mean_at_scale() {
        let mut g = Graph::new();
        let mut rng = Rng::new(16);
        let n = 100_000;
        let a = g.constant(Tensor::from_vec(vec![n], vec![1.0; n]).unwrap());
        let d = g.dropout(a, 0.5, &mut rng, true).unwrap();
        let mean: f64 = g.value(d).iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn backward_identity_and_analytic() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        g.backward(x).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_accumulates_without_zeroing() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[8.0]); // 2 * dy/dx

        g.zero_grads();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::vector(vec![0.3, -0.4, 0.9]), true);
            let s = g.sigmoid(x).unwrap();
            let sm = g.softmax(s).unwrap();
            let l = g.logsumexp(sm).unwrap();
            g.backward(l).unwrap();
            g.grad(x).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1e308]));
        let b = g.constant(Tensor::vector(vec![1e308]));
        let r = g.mul(a, b);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn narrow_transpose_gather_round_trip() {
        let mut g = Graph::new();
        let m = g.leaf(t(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let tr = g.transpose(m).unwrap(); // [2, 3]
        assert_eq!(g.value(tr), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        let r1 = g.row(tr, 1).unwrap(); // column 1 of m
        assert_eq!(g.value(r1), &[2.0, 4.0, 6.0]);
        let picked = g.gather(r1, 2).unwrap();
        let loss = g.scale(picked, 2.0).unwrap();
        g.backward(loss).unwrap();
        let gm = g.grad(m).unwrap();
        assert_eq!(gm, &[0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }
}
