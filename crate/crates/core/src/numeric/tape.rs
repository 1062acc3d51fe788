use std::sync::Arc;

use super::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use super::NumericError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRowVector(Var, Var),
    MulRows(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Broadcast(Var),
    Concat(Vec<Var>, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Extreme(Var, usize),
    DotRows(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in evaluation order so that `backward` can
/// replay their adjoints in reverse.
///
/// Each node is a tensor value plus a `requires_grad` flag; a node requires a
/// gradient when it is a flagged leaf or any of its inputs requires one.
/// Gradients are only kept for leaves and accumulate across `backward`
/// calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
    track_branches: bool,
    branch_signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn mismatch(op: &'static str, detail: String) -> NumericError {
    NumericError::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            branch_signature: FNV_OFFSET,
            ..Default::default()
        }
    }

    /// Makes relu and min/max fold their branch decisions into
    /// [`Tape::branch_signature`], which gradient checking uses to detect
    /// perturbations that cross a kink.
    pub fn set_track_branches(&mut self, on: bool) {
        self.track_branches = on;
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_signature
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn mix(&mut self, word: u64) {
        if self.track_branches {
            self.branch_signature = (self.branch_signature ^ word).wrapping_mul(FNV_PRIME);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumericError> {
        let t = self.val(v);
        if t.ndim() != 2 {
            return Err(mismatch(op, format!("expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (n, k) = self.matrix_dims(a, "matmul")?;
        let (k2, m) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(self.val(a).data(), self.val(b).data(), n, k, m, &mut out);
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        self.matrix_dims(a, "transpose")?;
        let value = self.val(a).transpose();
        Ok(self.derived(value, Op::Transpose(a), &[a]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), NumericError> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.val(a).shape(), self.val(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var, NumericError> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.derived(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip_with(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// Adds a length-`m` vector to every row of an `n×m` matrix.
    pub fn add_row_vector(&mut self, x: Var, bias: Var) -> Result<Var, NumericError> {
        let (n, m) = self.matrix_dims(x, "add_row_vector")?;
        if self.val(bias).len() != m {
            return Err(mismatch("add_row_vector", format!("{n}x{m} + {:?}", self.val(bias).shape())));
        }
        let b = self.val(bias).data();
        let mut data = self.val(x).data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::matrix(n, m, data)?;
        Ok(self.derived(value, Op::AddRowVector(x, bias), &[x, bias]))
    }

    /// Multiplies row `r` of `x` by `weights[r]`.
    pub fn mul_rows(&mut self, x: Var, weights: Var) -> Result<Var, NumericError> {
        let tx = self.val(x);
        let tw = self.val(weights);
        if tx.ndim() == 0 || tw.len() != tx.rows() {
            return Err(mismatch("mul_rows", format!("{:?} by {:?}", tx.shape(), tw.shape())));
        }
        let m = tx.cols();
        let mut data = tx.data().to_vec();
        for (row, &w) in data.chunks_mut(m).zip(tw.data()) {
            for v in row {
                *v *= w;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::MulRows(x, weights), &[x, weights]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.val(x).map(|v| v * factor);
        self.derived(value, Op::Scale(x, factor), &[x])
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let value = self.val(x).map(|v| v + c);
        self.derived(value, Op::AddConst(x), &[x])
    }

    /// Repeats a one-element tensor into `shape`.
    pub fn broadcast(&mut self, s: Var, shape: &[usize]) -> Result<Var, NumericError> {
        if self.val(s).len() != 1 {
            return Err(mismatch("broadcast", format!("source shape {:?}", self.val(s).shape())));
        }
        let value = Tensor::full(shape, self.val(s).item());
        Ok(self.derived(value, Op::Broadcast(s), &[s]))
    }

    /// Concatenates along axis 0 (rows, or elements of vectors) or axis 1
    /// (columns of matrices).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericError> {
        if parts.is_empty() {
            return Err(mismatch("concat", "no inputs".into()));
        }
        let first = self.val(parts[0]).shape().to_vec();
        let value = match (axis, first.len()) {
            (0, 1) | (0, 2) => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.val(p);
                    if t.ndim() != first.len() || t.shape()[1..] != first[1..] {
                        return Err(mismatch("concat", format!("{:?} vs {:?}", first, t.shape())));
                    }
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                let mut shape = first.clone();
                shape[0] = rows;
                Tensor::new(shape, data)?
            }
            (1, 2) => {
                let n = first[0];
                let mut total = 0;
                for &p in parts {
                    let t = self.val(p);
                    if t.ndim() != 2 || t.shape()[0] != n {
                        return Err(mismatch("concat", format!("{:?} vs {:?}", first, t.shape())));
                    }
                    total += t.shape()[1];
                }
                let mut data = Vec::with_capacity(n * total);
                for r in 0..n {
                    for &p in parts {
                        data.extend_from_slice(self.val(p).row(r));
                    }
                }
                Tensor::matrix(n, total, data)?
            }
            _ => {
                return Err(mismatch("concat", format!("axis {axis} on shape {:?}", first)));
            }
        };
        Ok(self.derived(value, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Selects rows (or vector elements) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var, NumericError> {
        let t = self.val(x);
        if t.ndim() == 0 {
            return Err(mismatch("gather_rows", "scalar input".into()));
        }
        let (n, m) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            if i >= n {
                return Err(NumericError::IndexOutOfBounds { op: "gather_rows", index: i, len: n });
            }
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::GatherRows(x, index), &[x]))
    }

    /// Sums row `e` of `x` into output row `index[e]`; the output has
    /// `out_rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, out_rows: usize) -> Result<Var, NumericError> {
        let t = self.val(x);
        if t.ndim() == 0 || t.rows() != index.len() {
            return Err(mismatch(
                "scatter_add_rows",
                format!("{:?} rows vs {} indices", t.shape(), index.len()),
            ));
        }
        let m = t.cols();
        let mut data = vec![0.0; out_rows * m];
        for (e, &dst) in index.iter().enumerate() {
            if dst >= out_rows {
                return Err(NumericError::IndexOutOfBounds { op: "scatter_add_rows", index: dst, len: out_rows });
            }
            for (o, v) in data[dst * m..(dst + 1) * m].iter_mut().zip(t.row(e)) {
                *o += v;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = out_rows;
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::ScatterAddRows(x, index), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.val(x).map(|v| v.max(0.0));
        if self.track_branches {
            let words: Vec<u64> = self
                .val(x)
                .data()
                .chunks(64)
                .map(|c| c.iter().enumerate().fold(0u64, |w, (i, &v)| w | (((v > 0.0) as u64) << i)))
                .collect();
            for w in words {
                self.mix(w);
            }
        }
        self.derived(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.val(x).map(sigmoid);
        self.derived(value, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.val(x).map(f64::exp);
        self.derived(value, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.val(x).map(f64::ln);
        self.derived(value, Op::Log(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericError> {
        let (n, m) = self.matrix_dims(x, "softmax_rows")?;
        let mut data = self.val(x).data().to_vec();
        for row in data.chunks_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::matrix(n, m, data)?;
        Ok(self.derived(value, Op::SoftmaxRows(x), &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var, NumericError> {
        let (n, m) = self.matrix_dims(x, "log_softmax_rows")?;
        let mut data = self.val(x).data().to_vec();
        for row in data.chunks_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::matrix(n, m, data)?;
        Ok(self.derived(value, Op::LogSoftmaxRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.val(x).data().iter().sum());
        self.derived(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericError> {
        let t = self.val(x);
        if t.is_empty() {
            return Err(mismatch("mean", "empty input".into()));
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.derived(value, Op::Mean(x), &[x]))
    }

    fn extreme(&mut self, x: Var, pick_max: bool) -> Result<Var, NumericError> {
        let t = self.val(x);
        if t.is_empty() {
            return Err(mismatch(if pick_max { "max" } else { "min" }, "empty input".into()));
        }
        // Strict comparison keeps the lowest index on ties.
        let mut arg = 0;
        for (i, &v) in t.data().iter().enumerate() {
            let better = if pick_max { v > t.data()[arg] } else { v < t.data()[arg] };
            if better {
                arg = i;
            }
        }
        let value = Tensor::scalar(t.data()[arg]);
        self.mix(arg as u64 ^ ((pick_max as u64) << 63));
        Ok(self.derived(value, Op::Extreme(x, arg), &[x]))
    }

    /// Minimum over all elements; the subgradient goes to the first argmin.
    pub fn min(&mut self, x: Var) -> Result<Var, NumericError> {
        self.extreme(x, false)
    }

    /// Maximum over all elements; the subgradient goes to the first argmax.
    pub fn max(&mut self, x: Var) -> Result<Var, NumericError> {
        self.extreme(x, true)
    }

    /// Row-wise inner products of two equally shaped matrices.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape(a, b, "dot_rows")?;
        let (n, _) = self.matrix_dims(a, "dot_rows")?;
        let (ta, tb) = (self.val(a), self.val(b));
        let data = (0..n).map(|r| dot(ta.row(r), tb.row(r))).collect();
        let value = Tensor::vector(data);
        Ok(self.derived(value, Op::DotRows(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericError> {
        let value = self.val(x).clone().reshaped(shape.to_vec())?;
        Ok(self.derived(value, Op::Reshape(x), &[x]))
    }

    /// Propagates d`loss`/d(node) back to every leaf that requires a
    /// gradient, adding into the leaf accumulators.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericError> {
        let shape = self.val(loss).shape().to_vec();
        if self.val(loss).len() != 1 {
            return Err(NumericError::NonScalarLoss { shape });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(&shape, 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let out = &nodes[id].value;
        // Lazily materialises the adjoint slot of `v` and hands it to `f`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
            f(slot.data_mut());
        };
        let gd = g.data();
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |d| matmul_nt_acc(gd, tb.data(), n, m, k, d));
                acc(*b, &mut |d| matmul_tn_acc(ta.data(), gd, n, k, m, d));
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                acc(*a, &mut |d| add_into(d, gt.data()));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, gd));
                acc(*b, &mut |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, gd));
                acc(*b, &mut |d| {
                    for (x, y) in d.iter_mut().zip(gd) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |d| {
                    for ((x, gv), bv) in d.iter_mut().zip(gd).zip(tb) {
                        *x += gv * bv;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, gv), av) in d.iter_mut().zip(gd).zip(ta) {
                        *x += gv * av;
                    }
                });
            }
            Op::Div(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |d| {
                    for ((x, gv), bv) in d.iter_mut().zip(gd).zip(tb) {
                        *x += gv / bv;
                    }
                });
                acc(*b, &mut |d| {
                    for (((x, gv), av), bv) in d.iter_mut().zip(gd).zip(ta).zip(tb) {
                        *x -= gv * av / (bv * bv);
                    }
                });
            }
            Op::AddRowVector(x, b) => {
                acc(*x, &mut |d| add_into(d, gd));
                let m = out.cols();
                acc(*b, &mut |d| {
                    for row in gd.chunks(m) {
                        add_into(d, row);
                    }
                });
            }
            Op::MulRows(x, w) => {
                let tx = &nodes[x.0].value;
                let tw = nodes[w.0].value.data();
                let m = tx.cols();
                acc(*x, &mut |d| {
                    for ((drow, grow), &wv) in d.chunks_mut(m).zip(gd.chunks(m)).zip(tw) {
                        for (dv, gv) in drow.iter_mut().zip(grow) {
                            *dv += gv * wv;
                        }
                    }
                });
                acc(*w, &mut |d| {
                    for (r, dv) in d.iter_mut().enumerate() {
                        *dv += dot(&gd[r * m..(r + 1) * m], tx.row(r));
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |d| {
                for (dv, gv) in d.iter_mut().zip(gd) {
                    *dv += c * gv;
                }
            }),
            Op::AddConst(x) | Op::Reshape(x) => acc(*x, &mut |d| add_into(d, gd)),
            Op::Broadcast(s) => {
                let total: f64 = gd.iter().sum();
                acc(*s, &mut |d| d[0] += total);
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        acc(*p, &mut |d| add_into(d, &gd[offset..offset + len]));
                        offset += len;
                    }
                } else {
                    let total = out.cols();
                    let mut col = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols();
                        acc(*p, &mut |d| {
                            for (r, drow) in d.chunks_mut(w).enumerate() {
                                add_into(drow, &gd[r * total + col..r * total + col + w]);
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::GatherRows(x, index) => {
                let m = out.cols();
                acc(*x, &mut |d| {
                    for (e, &src) in index.iter().enumerate() {
                        add_into(&mut d[src * m..(src + 1) * m], &gd[e * m..(e + 1) * m]);
                    }
                });
            }
            Op::ScatterAddRows(x, index) => {
                let m = out.cols();
                acc(*x, &mut |d| {
                    for (e, &dst) in index.iter().enumerate() {
                        add_into(&mut d[e * m..(e + 1) * m], &gd[dst * m..(dst + 1) * m]);
                    }
                });
            }
            Op::Relu(x) => {
                let tx = nodes[x.0].value.data();
                acc(*x, &mut |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(gd).zip(tx) {
                        if *xv > 0.0 {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                acc(*x, &mut |d| {
                    for ((dv, gv), yv) in d.iter_mut().zip(gd).zip(y) {
                        *dv += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Exp(x) => {
                let y = out.data();
                acc(*x, &mut |d| {
                    for ((dv, gv), yv) in d.iter_mut().zip(gd).zip(y) {
                        *dv += gv * yv;
                    }
                });
            }
            Op::Log(x) => {
                let tx = nodes[x.0].value.data();
                acc(*x, &mut |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(gd).zip(tx) {
                        *dv += gv / xv;
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let m = out.cols();
                let y = out.data();
                acc(*x, &mut |d| {
                    for r in 0..out.rows() {
                        let (yr, gr) = (&y[r * m..(r + 1) * m], &gd[r * m..(r + 1) * m]);
                        let inner = dot(yr, gr);
                        for ((dv, yv), gv) in d[r * m..(r + 1) * m].iter_mut().zip(yr).zip(gr) {
                            *dv += yv * (gv - inner);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let m = out.cols();
                let y = out.data();
                acc(*x, &mut |d| {
                    for r in 0..out.rows() {
                        let (yr, gr) = (&y[r * m..(r + 1) * m], &gd[r * m..(r + 1) * m]);
                        let total: f64 = gr.iter().sum();
                        for ((dv, yv), gv) in d[r * m..(r + 1) * m].iter_mut().zip(yr).zip(gr) {
                            *dv += gv - yv.exp() * total;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = gd[0];
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += gv));
            }
            Op::Mean(x) => {
                let gv = gd[0] / nodes[x.0].value.len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += gv));
            }
            Op::Extreme(x, arg) => acc(*x, &mut |d| d[*arg] += gd[0]),
            Op::DotRows(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let m = ta.cols();
                acc(*a, &mut |d| {
                    for (r, gv) in gd.iter().enumerate() {
                        for (dv, bv) in d[r * m..(r + 1) * m].iter_mut().zip(tb.row(r)) {
                            *dv += gv * bv;
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for (r, gv) in gd.iter().enumerate() {
                        for (dv, av) in d[r * m..(r + 1) * m].iter_mut().zip(ta.row(r)) {
                            *dv += gv * av;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
