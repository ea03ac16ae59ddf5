//! Minimal dense tensor type with reverse-mode gradient accumulation.
//!
//! Tensors are row-major f64 matrices (vectors are 1-row or 1-column
//! matrices, scalars are 1x1). A [`Tape`] records every operation during the
//! forward pass and replays the records in reverse to accumulate gradients.
//! A tape is single-threaded and lives for one forward/backward pass.

use thiserror::Error;

// ---------------------------------------------------------------------------
// Array
// ---------------------------------------------------------------------------

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Array {
        Array { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Array {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Array { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Array {
        Array::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Array {
        let mut out = Array::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// a x b with a cache-friendly triple loop.
pub fn matmul_arrays(a: &Array, b: &Array) -> Array {
    assert_eq!(a.cols, b.rows);
    let mut c = Array::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
    c
}

fn add_assign(dst: &mut Array, src: &Array) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

/// Numerically stabilized softmax cross-entropy: -(1/m) sum t_ij ln y_ij
/// with y the row softmax of `logits` and m the row count.
pub fn cross_entropy_value(logits: &Array, targets: &Array) -> f64 {
    assert_eq!(logits.shape(), targets.shape());
    let m = logits.rows as f64;
    let mut total = 0.0;
    for i in 0..logits.rows {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (j, &t) in targets.row(i).iter().enumerate() {
            if t != 0.0 {
                total += t * (row[j] - max - log_z);
            }
        }
    }
    -total / m
}

fn row_softmax(src: &Array) -> Array {
    let mut out = Array::zeros(src.rows, src.cols);
    for i in 0..src.rows {
        let row = src.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out.data[i * src.cols..(i + 1) * src.cols];
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

/// Axis selector for concat/split/softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Matmul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    BroadcastAddRow(usize, usize),
    MulColVec(usize, usize),
    Concat { axis: Axis, parts: Vec<usize> },
    Slice { src: usize, r0: usize, c0: usize },
    Transpose(usize),
    Gather { table: usize, ids: Vec<usize> },
    Softmax { src: usize, axis: Axis },
    Log(usize),
    Exp(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    LayerNorm { src: usize, gain: usize, bias: usize, eps: f64 },
    Dropout { src: usize, mask: Array },
    MaskedFill { src: usize, mask: Array },
    SumAll(usize),
    CrossEntropy { logits: usize, targets: Array },
}

struct Node {
    value: Array,
    grad: Option<Array>,
    requires_grad: bool,
    op: Op,
}

/// Operation-recording structure enabling reverse-mode gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Array> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, value: Array, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Array) -> TensorId {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable input; gradients accumulate here.
    pub fn param(&mut self, value: Array) -> TensorId {
        self.push(value, true, Op::Leaf)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.zip_op("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.zip_op("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.zip_op("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<TensorId, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Array::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, rg, op))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols != vb.rows {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let value = matmul_arrays(va, vb);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, rg, Op::Matmul(a.0, b.0)))
    }

    pub fn add_scalar(&mut self, a: TensorId, s: f64) -> TensorId {
        let value = self.nodes[a.0].value.map(|v| v + s);
        let rg = self.rg(a.0);
        self.push(value, rg, Op::AddScalar(a.0))
    }

    pub fn mul_scalar(&mut self, a: TensorId, s: f64) -> TensorId {
        let value = self.nodes[a.0].value.map(|v| v * s);
        let rg = self.rg(a.0);
        self.push(value, rg, Op::MulScalar(a.0, s))
    }

    /// (r, c) + (1, c): the row vector is added to every row.
    pub fn broadcast_add_row(&mut self, a: TensorId, v: TensorId) -> Result<TensorId, AutodiffError> {
        let (va, vv) = (&self.nodes[a.0].value, &self.nodes[v.0].value);
        if vv.rows != 1 || vv.cols != va.cols {
            return Err(shape_err(
                "broadcast_add_row",
                format!("{:?} + {:?}", va.shape(), vv.shape()),
            ));
        }
        let mut value = va.clone();
        for i in 0..value.rows {
            for j in 0..value.cols {
                value.data[i * value.cols + j] += vv.data[j];
            }
        }
        let rg = self.rg(a.0) || self.rg(v.0);
        Ok(self.push(value, rg, Op::BroadcastAddRow(a.0, v.0)))
    }

    /// (r, c) * (r, 1): each row is scaled by its entry of the column vector.
    pub fn mul_col_vec(&mut self, a: TensorId, v: TensorId) -> Result<TensorId, AutodiffError> {
        let (va, vv) = (&self.nodes[a.0].value, &self.nodes[v.0].value);
        if vv.cols != 1 || vv.rows != va.rows {
            return Err(shape_err("mul_col_vec", format!("{:?} * {:?}", va.shape(), vv.shape())));
        }
        let mut value = va.clone();
        for i in 0..value.rows {
            let s = vv.data[i];
            for j in 0..value.cols {
                value.data[i * value.cols + j] *= s;
            }
        }
        let rg = self.rg(a.0) || self.rg(v.0);
        Ok(self.push(value, rg, Op::MulColVec(a.0, v.0)))
    }

    pub fn concat(&mut self, axis: Axis, parts: &[TensorId]) -> Result<TensorId, AutodiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no parts".into()));
        }
        let first = self.nodes[parts[0].0].value.shape();
        let value = match axis {
            Axis::Cols => {
                let rows = first.0;
                let mut cols = 0;
                for p in parts {
                    let s = self.nodes[p.0].value.shape();
                    if s.0 != rows {
                        return Err(shape_err("concat", format!("row mismatch {first:?} vs {s:?}")));
                    }
                    cols += s.1;
                }
                let mut out = Array::zeros(rows, cols);
                let mut offset = 0;
                for p in parts {
                    let v = &self.nodes[p.0].value;
                    for i in 0..rows {
                        for j in 0..v.cols {
                            out.data[i * cols + offset + j] = v.data[i * v.cols + j];
                        }
                    }
                    offset += v.cols;
                }
                out
            }
            Axis::Rows => {
                let cols = first.1;
                let mut rows = 0;
                for p in parts {
                    let s = self.nodes[p.0].value.shape();
                    if s.1 != cols {
                        return Err(shape_err("concat", format!("col mismatch {first:?} vs {s:?}")));
                    }
                    rows += s.0;
                }
                let mut out = Array::zeros(rows, cols);
                let mut offset = 0;
                for p in parts {
                    let v = &self.nodes[p.0].value;
                    out.data[offset..offset + v.data.len()].copy_from_slice(&v.data);
                    offset += v.data.len();
                }
                out
            }
        };
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(value, rg, Op::Concat { axis, parts: parts.iter().map(|p| p.0).collect() }))
    }

    /// Contiguous sub-matrix starting at (r0, c0) with the given shape.
    pub fn slice(
        &mut self,
        a: TensorId,
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    ) -> Result<TensorId, AutodiffError> {
        let va = &self.nodes[a.0].value;
        if r0 + rows > va.rows || c0 + cols > va.cols {
            return Err(shape_err(
                "slice",
                format!("range ({r0}..{}, {c0}..{}) out of {:?}", r0 + rows, c0 + cols, va.shape()),
            ));
        }
        let mut out = Array::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.data[i * cols + j] = va.data[(r0 + i) * va.cols + c0 + j];
            }
        }
        let rg = self.rg(a.0);
        Ok(self.push(out, rg, Op::Slice { src: a.0, r0, c0 }))
    }

    /// Split along an axis into parts of the given sizes.
    pub fn split(
        &mut self,
        axis: Axis,
        a: TensorId,
        sizes: &[usize],
    ) -> Result<Vec<TensorId>, AutodiffError> {
        let (rows, cols) = self.nodes[a.0].value.shape();
        let total: usize = sizes.iter().sum();
        let expected = match axis {
            Axis::Rows => rows,
            Axis::Cols => cols,
        };
        if total != expected {
            return Err(shape_err("split", format!("sizes sum {total} != {expected}")));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &s in sizes {
            let id = match axis {
                Axis::Rows => self.slice(a, offset, 0, s, cols)?,
                Axis::Cols => self.slice(a, 0, offset, rows, s)?,
            };
            out.push(id);
            offset += s;
        }
        Ok(out)
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.transpose();
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Transpose(a.0))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_lookup(
        &mut self,
        table: TensorId,
        ids: &[usize],
    ) -> Result<TensorId, AutodiffError> {
        let vt = &self.nodes[table.0].value;
        let cols = vt.cols;
        let mut out = Array::zeros(ids.len(), cols);
        for (i, &id) in ids.iter().enumerate() {
            if id >= vt.rows {
                return Err(shape_err(
                    "embedding_lookup",
                    format!("id {id} out of {} rows", vt.rows),
                ));
            }
            out.data[i * cols..(i + 1) * cols].copy_from_slice(vt.row(id));
        }
        let rg = self.rg(table.0);
        Ok(self.push(out, rg, Op::Gather { table: table.0, ids: ids.to_vec() }))
    }

    pub fn softmax(&mut self, a: TensorId, axis: Axis) -> TensorId {
        let value = match axis {
            Axis::Cols => row_softmax(&self.nodes[a.0].value),
            Axis::Rows => row_softmax(&self.nodes[a.0].value.transpose()).transpose(),
        };
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Softmax { src: a.0, axis })
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.map(f64::ln);
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Log(a.0))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.map(f64::exp);
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Exp(a.0))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.map(f64::tanh);
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let value = self.nodes[a.0].value.map(|v| v.max(0.0));
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Relu(a.0))
    }

    /// Per-row layer normalization with learned gain and bias (both (1, c)).
    pub fn layer_norm(
        &mut self,
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, AutodiffError> {
        let va = &self.nodes[a.0].value;
        let vg = &self.nodes[gain.0].value;
        let vb = &self.nodes[bias.0].value;
        if vg.shape() != (1, va.cols) || vb.shape() != (1, va.cols) {
            return Err(shape_err(
                "layer_norm",
                format!("x {:?}, gain {:?}, bias {:?}", va.shape(), vg.shape(), vb.shape()),
            ));
        }
        let c = va.cols as f64;
        let mut value = Array::zeros(va.rows, va.cols);
        for i in 0..va.rows {
            let row = va.row(i);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..va.cols {
                value.data[i * va.cols + j] = (row[j] - mean) * inv * vg.data[j] + vb.data[j];
            }
        }
        let rg = self.rg(a.0) || self.rg(gain.0) || self.rg(bias.0);
        Ok(self.push(value, rg, Op::LayerNorm { src: a.0, gain: gain.0, bias: bias.0, eps }))
    }

    /// Inverted dropout with a counter-based mask keyed by (seed, step) and
    /// the created node's position on the tape, so runs are reproducible.
    pub fn dropout(&mut self, a: TensorId, rate: f64, train: bool, seed: u64, step: u64) -> TensorId {
        if !train || rate == 0.0 {
            let value = self.nodes[a.0].value.clone();
            let rg = self.rg(a.0);
            let mask = Array::scalar(1.0);
            return self.push(value, rg, Op::Dropout { src: a.0, mask });
        }
        let va = &self.nodes[a.0].value;
        let node_id = self.nodes.len() as u64;
        let keep = 1.0 - rate;
        let mut mask = Array::zeros(va.rows, va.cols);
        for (idx, m) in mask.data.iter_mut().enumerate() {
            let u = counter_uniform(seed, step, node_id, idx as u64);
            *m = if u < keep { 1.0 / keep } else { 0.0 };
        }
        let mut value = va.clone();
        for (v, m) in value.data.iter_mut().zip(&mask.data) {
            *v *= m;
        }
        let rg = self.rg(a.0);
        self.push(value, rg, Op::Dropout { src: a.0, mask })
    }

    /// Entries where `mask` is nonzero are replaced by `fill`; those
    /// positions receive zero gradient.
    pub fn masked_fill(
        &mut self,
        a: TensorId,
        mask: &Array,
        fill: f64,
    ) -> Result<TensorId, AutodiffError> {
        let va = &self.nodes[a.0].value;
        if va.shape() != mask.shape() {
            return Err(shape_err("masked_fill", format!("{:?} vs {:?}", va.shape(), mask.shape())));
        }
        let mut value = va.clone();
        for (v, &m) in value.data.iter_mut().zip(&mask.data) {
            if m != 0.0 {
                *v = fill;
            }
        }
        let rg = self.rg(a.0);
        Ok(self.push(value, rg, Op::MaskedFill { src: a.0, mask: mask.clone() }))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let value = Array::scalar(self.nodes[a.0].value.data.iter().sum());
        let rg = self.rg(a.0);
        self.push(value, rg, Op::SumAll(a.0))
    }

    /// Fused softmax cross-entropy against constant one-hot targets,
    /// averaged over rows.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &Array,
    ) -> Result<TensorId, AutodiffError> {
        let vl = &self.nodes[logits.0].value;
        if vl.shape() != targets.shape() {
            return Err(shape_err(
                "cross_entropy",
                format!("{:?} vs {:?}", vl.shape(), targets.shape()),
            ));
        }
        let value = Array::scalar(cross_entropy_value(vl, targets));
        let rg = self.rg(logits.0);
        Ok(self.push(value, rg, Op::CrossEntropy { logits: logits.0, targets: targets.clone() }))
    }

    /// Accumulate d loss / d node for every gradient-requiring node.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), AutodiffError> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape.0, shape.1));
        }
        self.nodes[loss.0].grad = Some(Array::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            self.step_backward(idx);
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, delta: Array) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut self.nodes[idx].grad {
            Some(g) => add_assign(g, &delta),
            slot => *slot = Some(delta),
        }
    }

    fn step_backward(&mut self, idx: usize) {
        let g = self.nodes[idx].grad.clone().expect("grad present");
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let mut ga = g.clone();
                for (x, y) in ga.data.iter_mut().zip(&self.nodes[b].value.data) {
                    *x *= y;
                }
                let mut gb = g;
                for (x, y) in gb.data.iter_mut().zip(&self.nodes[a].value.data) {
                    *x *= y;
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = matmul_arrays(&g, &self.nodes[b].value.transpose());
                let gb = matmul_arrays(&self.nodes[a].value.transpose(), &g);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::AddScalar(a) => {
                let a = *a;
                self.accumulate(a, g);
            }
            Op::MulScalar(a, s) => {
                let (a, s) = (*a, *s);
                self.accumulate(a, g.map(|v| v * s));
            }
            Op::BroadcastAddRow(a, v) => {
                let (a, v) = (*a, *v);
                let mut gv = Array::zeros(1, g.cols);
                for i in 0..g.rows {
                    for j in 0..g.cols {
                        gv.data[j] += g.data[i * g.cols + j];
                    }
                }
                self.accumulate(a, g);
                self.accumulate(v, gv);
            }
            Op::MulColVec(a, v) => {
                let (a, v) = (*a, *v);
                let va = self.nodes[a].value.clone();
                let vv = self.nodes[v].value.clone();
                let mut ga = g.clone();
                for i in 0..ga.rows {
                    for j in 0..ga.cols {
                        ga.data[i * ga.cols + j] *= vv.data[i];
                    }
                }
                let mut gv = Array::zeros(g.rows, 1);
                for i in 0..g.rows {
                    let mut acc = 0.0;
                    for j in 0..g.cols {
                        acc += g.data[i * g.cols + j] * va.data[i * g.cols + j];
                    }
                    gv.data[i] = acc;
                }
                self.accumulate(a, ga);
                self.accumulate(v, gv);
            }
            Op::Concat { axis, parts } => {
                let axis = *axis;
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.nodes[p].value.shape();
                    let mut gp = Array::zeros(pr, pc);
                    match axis {
                        Axis::Cols => {
                            for i in 0..pr {
                                for j in 0..pc {
                                    gp.data[i * pc + j] = g.data[i * g.cols + offset + j];
                                }
                            }
                            offset += pc;
                        }
                        Axis::Rows => {
                            gp.data.copy_from_slice(&g.data[offset..offset + pr * pc]);
                            offset += pr * pc;
                        }
                    }
                    self.accumulate(p, gp);
                }
            }
            Op::Slice { src, r0, c0 } => {
                let (src, r0, c0) = (*src, *r0, *c0);
                let (sr, sc) = self.nodes[src].value.shape();
                let mut gs = Array::zeros(sr, sc);
                for i in 0..g.rows {
                    for j in 0..g.cols {
                        gs.data[(r0 + i) * sc + c0 + j] = g.data[i * g.cols + j];
                    }
                }
                self.accumulate(src, gs);
            }
            Op::Transpose(a) => {
                let a = *a;
                self.accumulate(a, g.transpose());
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let (tr, tc) = self.nodes[table].value.shape();
                let mut gt = Array::zeros(tr, tc);
                for (i, id) in ids.iter().enumerate() {
                    for j in 0..tc {
                        gt.data[id * tc + j] += g.data[i * tc + j];
                    }
                }
                self.accumulate(table, gt);
            }
            Op::Softmax { src, axis } => {
                let (src, axis) = (*src, *axis);
                let y = self.nodes[idx].value.clone();
                let gx = match axis {
                    Axis::Cols => softmax_backward_rows(&y, &g),
                    Axis::Rows => softmax_backward_rows(&y.transpose(), &g.transpose()).transpose(),
                };
                self.accumulate(src, gx);
            }
            Op::Log(a) => {
                let a = *a;
                let mut gx = g;
                for (x, v) in gx.data.iter_mut().zip(&self.nodes[a].value.data) {
                    *x /= v;
                }
                self.accumulate(a, gx);
            }
            Op::Exp(a) => {
                let a = *a;
                let y = self.nodes[idx].value.clone();
                let mut gx = g;
                for (x, v) in gx.data.iter_mut().zip(&y.data) {
                    *x *= v;
                }
                self.accumulate(a, gx);
            }
            Op::Tanh(a) => {
                let a = *a;
                let y = self.nodes[idx].value.clone();
                let mut gx = g;
                for (x, v) in gx.data.iter_mut().zip(&y.data) {
                    *x *= 1.0 - v * v;
                }
                self.accumulate(a, gx);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let y = self.nodes[idx].value.clone();
                let mut gx = g;
                for (x, v) in gx.data.iter_mut().zip(&y.data) {
                    *x *= v * (1.0 - v);
                }
                self.accumulate(a, gx);
            }
            Op::Relu(a) => {
                let a = *a;
                let y = self.nodes[idx].value.clone();
                let mut gx = g;
                for (x, v) in gx.data.iter_mut().zip(&y.data) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                self.accumulate(a, gx);
            }
            Op::LayerNorm { src, gain, bias, eps } => {
                let (src, gain, bias, eps) = (*src, *gain, *bias, *eps);
                let vx = self.nodes[src].value.clone();
                let vg = self.nodes[gain].value.clone();
                let c = vx.cols;
                let cf = c as f64;
                let mut gx = Array::zeros(vx.rows, c);
                let mut ggain = Array::zeros(1, c);
                let mut gbias = Array::zeros(1, c);
                for i in 0..vx.rows {
                    let row = vx.row(i);
                    let mean = row.iter().sum::<f64>() / cf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let dy = g.data[i * c + j];
                        let dxhat = dy * vg.data[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        ggain.data[j] += dy * xhat;
                        gbias.data[j] += dy;
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let dy = g.data[i * c + j];
                        let dxhat = dy * vg.data[j];
                        gx.data[i * c + j] =
                            inv * (dxhat - sum_dxhat / cf - xhat * sum_dxhat_xhat / cf);
                    }
                }
                self.accumulate(src, gx);
                self.accumulate(gain, ggain);
                self.accumulate(bias, gbias);
            }
            Op::Dropout { src, mask } => {
                let src = *src;
                let mask = mask.clone();
                let gx = if mask.len() == 1 {
                    g
                } else {
                    let mut gx = g;
                    for (x, m) in gx.data.iter_mut().zip(&mask.data) {
                        *x *= m;
                    }
                    gx
                };
                self.accumulate(src, gx);
            }
            Op::MaskedFill { src, mask } => {
                let src = *src;
                let mask = mask.clone();
                let mut gx = g;
                for (x, &m) in gx.data.iter_mut().zip(&mask.data) {
                    if m != 0.0 {
                        *x = 0.0;
                    }
                }
                self.accumulate(src, gx);
            }
            Op::SumAll(a) => {
                let a = *a;
                let (r, c) = self.nodes[a].value.shape();
                let v = g.data[0];
                self.accumulate(a, Array::from_vec(r, c, vec![v; r * c]));
            }
            Op::CrossEntropy { logits, targets } => {
                let logits = *logits;
                let targets = targets.clone();
                let vl = self.nodes[logits].value.clone();
                let y = row_softmax(&vl);
                let m = vl.rows as f64;
                let scale = g.data[0] / m;
                let mut gl = Array::zeros(vl.rows, vl.cols);
                for k in 0..gl.data.len() {
                    gl.data[k] = (y.data[k] - targets.data[k]) * scale;
                }
                self.accumulate(logits, gl);
            }
        }
    }
}

fn softmax_backward_rows(y: &Array, g: &Array) -> Array {
    let mut gx = Array::zeros(y.rows, y.cols);
    for i in 0..y.rows {
        let yr = y.row(i);
        let gr = &g.data[i * g.cols..(i + 1) * g.cols];
        let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..y.cols {
            gx.data[i * y.cols + j] = yr[j] * (gr[j] - dot);
        }
    }
    gx
}

/// SplitMix64-based counter RNG for dropout masks.
fn counter_uniform(seed: u64, step: u64, node: u64, idx: u64) -> f64 {
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(node.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(idx.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Report from [`grad_check`]: worst relative error per parameter.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tol
    }
}

/// Compare tape gradients of a scalar function against central finite
/// differences at a deterministic sample of coordinates per parameter.
///
/// `f` must be deterministic (run dropout in eval mode) and must register
/// the given parameter values as tape params in order.
pub fn grad_check<F>(
    f: F,
    params: &[(String, Array)],
    h: f64,
    tol: f64,
    coords_per_param: usize,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let build = |values: &[Array]| -> (Tape, Vec<TensorId>, TensorId) {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = f(&mut tape, &ids);
        (tape, ids, loss)
    };

    let values: Vec<Array> = params.iter().map(|(_, v)| v.clone()).collect();
    let (mut tape, ids, loss) = build(&values);
    tape.backward(loss).expect("grad_check loss must be scalar");
    let grads: Vec<Array> = ids
        .iter()
        .zip(&values)
        .map(|(id, v)| tape.grad(*id).cloned().unwrap_or_else(|| Array::zeros(v.rows, v.cols)))
        .collect();

    let mut per_param = Vec::new();
    for (pi, (name, value)) in params.iter().enumerate() {
        let total = value.len();
        // Deterministic coordinate sample.
        let mut coords: Vec<usize> = Vec::new();
        if total <= coords_per_param {
            coords.extend(0..total);
        } else {
            for k in 0..coords_per_param {
                let u = counter_uniform(0xC0FFEE, pi as u64, k as u64, total as u64);
                coords.push((u * total as f64) as usize % total);
            }
            coords.push(0);
            coords.push(total - 1);
            coords.sort_unstable();
            coords.dedup();
        }
        let mut worst = 0.0f64;
        for &k in &coords {
            let mut plus = values.clone();
            plus[pi].data[k] += h;
            let (t1, _, l1) = build(&plus);
            let f_plus = t1.value(l1).data[0];
            let mut minus = values.clone();
            minus[pi].data[k] -= h;
            let (t2, _, l2) = build(&minus);
            let f_minus = t2.value(l2).data[0];
            let fd = (f_plus - f_minus) / (2.0 * h);
            let an = grads[pi].data[k];
            let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        per_param.push((name.clone(), worst));
    }
    GradCheckReport { per_param, tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(rows: usize, cols: usize, seed: u64) -> Array {
        let mut a = Array::zeros(rows, cols);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = counter_uniform(seed, 0, 0, i as u64) * 2.0 - 1.0;
        }
        a
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let a = seeded(2, 3, 1);
        let b = seeded(3, 4, 2);
        let c = matmul_arrays(&a, &b);
        for i in 0..2 {
            for j in 0..4 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Array::from_vec(1, 2, vec![0.0, 0.0]));
        let y = t.softmax(x, Axis::Cols);
        assert_eq!(t.value(y).data, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(seeded(5, 7, 3));
        let y = t.softmax(x, Axis::Cols);
        for i in 0..5 {
            let s: f64 = t.value(y).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_shape_algebra() {
        let mut t = Tape::new();
        let a = t.constant(Array::zeros(2, 3));
        let b = t.constant(Array::zeros(2, 5));
        let c = t.concat(Axis::Cols, &[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), (2, 8));
        let bad = t.concat(Axis::Rows, &[a, b]);
        assert!(matches!(bad, Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let theta = t.param(seeded(3, 4, 4));
        let loss = t.sum_all(theta);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(theta).unwrap().data, vec![1.0; 12]);
    }

    #[test]
    fn quadratic_gradient_is_two_theta() {
        let mut t = Tape::new();
        let init = seeded(2, 3, 5);
        let theta = t.param(init.clone());
        let sq = t.mul(theta, theta).unwrap();
        let loss = t.sum_all(sq);
        t.backward(loss).unwrap();
        let g = t.grad(theta).unwrap();
        for (gv, v) in g.data.iter().zip(&init.data) {
            assert!((gv - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Array::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(AutodiffError::NonScalarLoss(2, 2))));
    }

    #[test]
    fn causal_mask_zeroes_future_weights() {
        let mut t = Tape::new();
        let scores = t.constant(seeded(4, 4, 6));
        let mut mask = Array::zeros(4, 4);
        for i in 0..4 {
            for j in (i + 1)..4 {
                mask.set(i, j, 1.0);
            }
        }
        let masked = t.masked_fill(scores, &mask, f64::NEG_INFINITY).unwrap();
        let w = t.softmax(masked, Axis::Cols);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(t.value(w).get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn dropout_deterministic_and_scaled() {
        let mut t = Tape::new();
        let x = t.constant(Array::from_vec(1, 1000, vec![1.0; 1000]));
        let y1 = t.dropout(x, 0.25, true, 9, 3);
        let kept: usize = t.value(y1).data.iter().filter(|&&v| v != 0.0).count();
        assert!((kept as f64 - 750.0).abs() < 60.0);
        for &v in &t.value(y1).data {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
        }
        // Same key gives the same mask only with the same node position.
        let mut t2 = Tape::new();
        let x2 = t2.constant(Array::from_vec(1, 1000, vec![1.0; 1000]));
        let y2 = t2.dropout(x2, 0.25, true, 9, 3);
        assert_eq!(t.value(y1).data, t2.value(y2).data);
    }

    #[test]
    fn forward_backward_bit_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let w = t.param(seeded(8, 8, 7));
            let x = t.constant(seeded(4, 8, 8));
            let h = t.matmul(x, w).unwrap();
            let h = t.tanh(h);
            let y = t.softmax(h, Axis::Cols);
            let lg = t.log(y);
            let loss = t.sum_all(lg);
            let loss = t.mul_scalar(loss, -0.25);
            t.backward(loss).unwrap();
            (t.value(loss).data[0].to_bits(), t.grad(w).unwrap().data.clone())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        // Exercises matmul, broadcast add, tanh, sigmoid, mul, concat, slice,
        // transpose, layer_norm, softmax, mul_col_vec, and cross_entropy.
        let params = vec![
            ("w1".to_string(), seeded(6, 8, 10)),
            ("b1".to_string(), seeded(1, 8, 11)),
            ("w2".to_string(), seeded(4, 5, 12)),
            ("gain".to_string(), seeded(1, 8, 13).map(|v| 1.0 + 0.1 * v)),
            ("bias".to_string(), seeded(1, 8, 14)),
            ("table".to_string(), seeded(7, 6, 15)),
        ];
        let targets = {
            let mut t = Array::zeros(3, 5);
            t.set(0, 1, 1.0);
            t.set(1, 4, 1.0);
            t.set(2, 0, 1.0);
            t
        };
        let report = grad_check(
            move |tape, ids| {
                let (w1, b1, w2, gain, bias, table) =
                    (ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]);
                let x = tape.embedding_lookup(table, &[0, 3, 6]).unwrap();
                let h = tape.matmul(x, w1).unwrap();
                let h = tape.broadcast_add_row(h, b1).unwrap();
                let h = tape.layer_norm(h, gain, bias, 1e-5).unwrap();
                let h = tape.tanh(h);
                let parts = tape.split(Axis::Cols, h, &[4, 4]).unwrap();
                let s = tape.sigmoid(parts[1]);
                let p = tape.mul(parts[0], s).unwrap();
                let att = tape.softmax(p, Axis::Cols);
                let col = tape.slice(att, 0, 0, 3, 1).unwrap();
                let scaled = tape.mul_col_vec(p, col).unwrap();
                let logits = tape.matmul(scaled, w2).unwrap();
                tape.cross_entropy(logits, &targets).unwrap()
            },
            &params,
            1e-6,
            1e-4,
            24,
        );
        assert!(report.passed(), "max rel err {}", report.max_error());
    }

    #[test]
    fn relu_exp_log_masked_fill_gradients() {
        let params = vec![("x".to_string(), seeded(3, 4, 20).map(|v| v + 2.5))];
        let mask = {
            let mut m = Array::zeros(3, 4);
            m.set(0, 1, 1.0);
            m.set(2, 3, 1.0);
            m
        };
        let report = grad_check(
            move |tape, ids| {
                let x = ids[0];
                let r = tape.relu(x);
                let e = tape.exp(r);
                let l = tape.log(e);
                let f = tape.masked_fill(l, &mask, 0.5).unwrap();
                let s = tape.sum_all(f);
                tape.mul_scalar(s, 0.125)
            },
            &params,
            1e-6,
            1e-4,
            12,
        );
        assert!(report.passed(), "max rel err {}", report.max_error());
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut t = Tape::new();
        let table = t.param(seeded(3, 2, 21));
        let x = t.embedding_lookup(table, &[1, 1, 2]).unwrap();
        let loss = t.sum_all(x);
        t.backward(loss).unwrap();
        let g = t.grad(table).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert_eq!(g.row(1), &[2.0, 2.0]);
        assert_eq!(g.row(2), &[1.0, 1.0]);
    }
}
