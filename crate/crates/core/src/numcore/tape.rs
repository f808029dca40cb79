//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is an append-only arena: every operation evaluates eagerly, stores
//! its value, and records which nodes it read. `backward` walks the arena in
//! reverse, so recording order is a valid topological order by construction.
//! A tape belongs to one optimization step and is dropped afterwards.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use super::sparse::CsrMatrix;
use super::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};

/// Slope of the negative half of `leaky_relu`.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Mul,
    Add,
    Relu,
    LeakyRelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    RowSoftmax(Var),
    GatherRows(Var, Arc<[usize]>),
    Pool(Var, Arc<[Vec<usize>]>, Pool),
    CosineMatrix(Var, Var),
    CosinePairs(Var, Var),
    LogSumExpRows(Var),
    Pick(Var, Arc<[usize]>),
    SumAll(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    WeightedSum(Arc<[Var]>, Var),
    Spmm {
        matrix: Arc<CsrMatrix>,
        values: Option<Var>,
        dense: Var,
    },
    Sddmm {
        pattern: Arc<CsrMatrix>,
        left: Var,
        right: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    param: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<Tensor> {
        self.grads
            .get(var.0)
            .and_then(Option::as_ref)
            .map(|g| Tensor::from_array(g.clone()))
    }

    /// Gradient of `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Tensor {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn dim_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Error {
    Error::Dimension { op, left, right }
}

fn normalize_rows(a: &Array2<f64>, op: &'static str) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut out = a.clone();
    let mut norms = Vec::with_capacity(a.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!("{op}: row {i} has zero norm")));
        }
        row /= norm;
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Back-propagates through row normalization: given `d` w.r.t. `â = a/|a|`,
/// returns the gradient w.r.t. `a`.
fn normalize_rows_backward(unit: &Array2<f64>, norms: &[f64], mut d: Array2<f64>) -> Array2<f64> {
    for ((mut d_row, u_row), &norm) in d.rows_mut().into_iter().zip(unit.rows()).zip(norms) {
        let along = d_row.dot(&u_row);
        d_row.scaled_add(-along, &u_row);
        d_row /= norm;
    }
    d
}

fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of trainable leaves recorded with [`Tape::param`].
    pub fn param_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.param).count()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    fn push_node(&mut self, value: Tensor, op: Op, tracked: bool, param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        value: Array2<f64>,
        op: Op,
        inputs: &[Var],
        name: &'static str,
    ) -> Result<Var> {
        ensure_finite(&value, name)?;
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        Ok(self.push_node(Tensor::from_array(value), op, tracked, false))
    }

    fn arr(&self, var: Var) -> &Array2<f64> {
        self.nodes[var.0].value.array()
    }

    fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let value = self.arr(a).dot(self.arr(b));
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = |b: Option<Var>| {
            b.ok_or_else(|| Error::Tape(format!("{kind:?} needs a second operand")))
        };
        match kind {
            Elementwise::Mul => self.mul(a, binary(b)?),
            Elementwise::Add => self.add(a, binary(b)?),
            Elementwise::Relu => self.relu(a),
            Elementwise::LeakyRelu => self.leaky_relu(a, LEAKY_SLOPE),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.arr(a) + self.arr(b);
        self.push(value, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.arr(a) - self.arr(b);
        self.push(value, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.arr(a) * self.arr(b);
        self.push(value, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.arr(a).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(a), &[a], "relu")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.arr(a).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a, slope), &[a], "leaky_relu")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.arr(a) * factor;
        self.push(value, Op::Scale(a, factor), &[a], "scale")
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (ra, ca) = self.shape(a);
        let (rr, cr) = self.shape(row);
        if rr != 1 || cr != ca {
            return Err(dim_err(op, (ra, ca), (rr, cr)));
        }
        Ok(())
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let value = self.arr(a) + self.arr(row);
        self.push(value, Op::AddRow(a, row), &[a, row], "add_row")
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let value = self.arr(a) * self.arr(row);
        self.push(value, Op::MulRow(a, row), &[a, row], "mul_row")
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows(self.arr(a));
        self.push(value, Op::RowSoftmax(a), &[a], "row_softmax")
    }

    pub fn gather_rows(&mut self, a: Var, rows: Arc<[usize]>) -> Result<Var> {
        let n = self.shape(a).0;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(dim_err("gather_rows", self.shape(a), (bad, 0)));
        }
        if rows.is_empty() {
            return Err(Error::Tape("gather_rows with no rows".into()));
        }
        let value = self.arr(a).select(Axis(0), &rows);
        self.push(value, Op::GatherRows(a, rows), &[a], "gather_rows")
    }

    /// One output row per group: the sum (or mean) of the listed rows of `a`.
    pub fn pool_rows(&mut self, a: Var, groups: Arc<[Vec<usize>]>, kind: Pool) -> Result<Var> {
        let (n, c) = self.shape(a);
        if groups.is_empty() {
            return Err(Error::Tape("pool_rows with no groups".into()));
        }
        let mut value = Array2::zeros((groups.len(), c));
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Degenerate(format!("pool_rows: group {g} is empty")));
            }
            let mut out = value.row_mut(g);
            for &i in members {
                if i >= n {
                    return Err(dim_err("pool_rows", (n, c), (i, 0)));
                }
                out += &self.arr(a).row(i);
            }
            if kind == Pool::Mean {
                out /= members.len() as f64;
            }
        }
        self.push(value, Op::Pool(a, groups, kind), &[a], "pool_rows")
    }

    /// Cosine similarity of every row of `a` (m × h) with every row of `b` (c × h).
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).1 != self.shape(b).1 {
            return Err(dim_err("cosine_matrix", self.shape(a), self.shape(b)));
        }
        let (ua, _) = normalize_rows(self.arr(a), "cosine_matrix")?;
        let (ub, _) = normalize_rows(self.arr(b), "cosine_matrix")?;
        let value = ua.dot(&ub.t());
        self.push(value, Op::CosineMatrix(a, b), &[a, b], "cosine_matrix")
    }

    /// Row-wise cosine similarity of two equally shaped matrices, as `n × 1`.
    pub fn cosine_pairs(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_pairs", a, b)?;
        let (ua, _) = normalize_rows(self.arr(a), "cosine_pairs")?;
        let (ub, _) = normalize_rows(self.arr(b), "cosine_pairs")?;
        let value = (&ua * &ub).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::CosinePairs(a, b), &[a, b], "cosine_pairs")
    }

    /// `ln Σ_j exp(a_ij)` per row, as `n × 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let value = self
            .arr(a)
            .map_axis(Axis(1), |row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
            })
            .insert_axis(Axis(1));
        self.push(value, Op::LogSumExpRows(a), &[a], "logsumexp_rows")
    }

    /// Selects column `cols[i]` from row `i`, as `n × 1`.
    pub fn pick(&mut self, a: Var, cols: Arc<[usize]>) -> Result<Var> {
        let (n, c) = self.shape(a);
        if cols.len() != n || cols.iter().any(|&j| j >= c) {
            return Err(dim_err("pick", (n, c), (cols.len(), 1)));
        }
        let value = Array2::from_shape_fn((n, 1), |(i, _)| self.arr(a)[[i, cols[i]]]);
        self.push(value, Op::Pick(a, cols), &[a], "pick")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let value = Array2::from_elem((1, 1), self.arr(a).sum());
        self.push(value, Op::SumAll(a), &[a], "sum_all")
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols || rows == 0 {
            return Err(dim_err("reshape", (r, c), (rows, cols)));
        }
        let value = Array2::from_shape_vec((rows, cols), self.nodes[a.0].value.values().to_vec())
            .expect("size checked");
        self.push(value, Op::Reshape(a), &[a], "reshape")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).0 != self.shape(b).0 {
            return Err(dim_err("concat_cols", self.shape(a), self.shape(b)));
        }
        let value = ndarray::concatenate(Axis(1), &[self.arr(a).view(), self.arr(b).view()])
            .expect("rows checked");
        self.push(value, Op::ConcatCols(a, b), &[a, b], "concat_cols")
    }

    /// `Σ_l w_l · terms[l]` for equally shaped `terms` and a `1 × L` weight row `w`.
    pub fn weighted_sum(&mut self, terms: &[Var], w: Var) -> Result<Var> {
        let first = *terms
            .first()
            .ok_or_else(|| Error::Tape("weighted_sum of no terms".into()))?;
        if self.shape(w) != (1, terms.len()) {
            return Err(dim_err("weighted_sum", self.shape(w), (1, terms.len())));
        }
        let mut value = Array2::zeros(self.shape(first));
        for (l, &t) in terms.iter().enumerate() {
            self.same_shape("weighted_sum", first, t)?;
            value.scaled_add(self.arr(w)[[0, l]], self.arr(t));
        }
        let mut inputs = terms.to_vec();
        inputs.push(w);
        self.push(
            value,
            Op::WeightedSum(terms.into(), w),
            &inputs,
            "weighted_sum",
        )
    }

    /// Sparse-dense product `S · dense`. When `values` is given it is an
    /// `nnz × 1` node that replaces the stored entries of `S` and may be tracked.
    pub fn spmm(
        &mut self,
        matrix: &Arc<CsrMatrix>,
        values: Option<Var>,
        dense: Var,
    ) -> Result<Var> {
        if matrix.cols() != self.shape(dense).0 {
            return Err(dim_err("spmm", matrix.shape(), self.shape(dense)));
        }
        if let Some(v) = values {
            if self.shape(v) != (matrix.nnz(), 1) {
                return Err(dim_err("spmm_values", (matrix.nnz(), 1), self.shape(v)));
            }
        }
        let vals = values.map(|v| self.nodes[v.0].value.values());
        let value = matrix.matmul_dense(vals, self.arr(dense).view());
        let mut inputs = vec![dense];
        inputs.extend(values);
        self.push(
            value,
            Op::Spmm {
                matrix: Arc::clone(matrix),
                values,
                dense,
            },
            &inputs,
            "spmm",
        )
    }

    /// Sampled dense-dense product: for every stored entry `(i, j)` of `pattern`,
    /// `(left · right)_ij`, returned as `nnz × 1` in storage order.
    pub fn sddmm(&mut self, pattern: &Arc<CsrMatrix>, left: Var, right: Var) -> Result<Var> {
        let (lr, lc) = self.shape(left);
        let (rr, rc) = self.shape(right);
        if lr != pattern.rows() || rc != pattern.cols() || lc != rr {
            return Err(dim_err("sddmm", (lr, lc), (rr, rc)));
        }
        if pattern.nnz() == 0 {
            return Err(Error::Tape("sddmm over an empty pattern".into()));
        }
        let right_t = self.arr(right).t().as_standard_layout().into_owned();
        let l = self.arr(left);
        let mut out = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.rows() {
            let row = l.row(i);
            for &j in pattern.row_indices(i) {
                out.push(row.dot(&right_t.row(j)));
            }
        }
        let value = Array2::from_shape_vec((out.len(), 1), out).expect("nnz");
        self.push(
            value,
            Op::Sddmm {
                pattern: Arc::clone(pattern),
                left,
                right,
            },
            &[left, right],
            "sddmm",
        )
    }

    /// Gradients of the scalar `loss` w.r.t. every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("loss node {} is not on this tape", loss.0)))?;
        if node.value.shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "loss must be scalar, got {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &g, &node.value, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].tracked {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], var: Var, delta: Array2<f64>) {
        if !self.nodes[var.0].tracked {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn propagate(
        &self,
        op: &Op,
        g: &Array2<f64>,
        out: &Tensor,
        grads: &mut [Option<Array2<f64>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(&self.arr(*b).t()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.arr(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.arr(*b));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g * self.arr(*a));
                }
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.arr(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.arr(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, factor) => self.accumulate(grads, *a, g * *factor),
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.arr(*row));
                }
                if self.wants(*row) {
                    let d = (g * self.arr(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *row, d);
                }
            }
            Op::RowSoftmax(a) => {
                let s = out.array();
                let mut d = g * s;
                for (mut d_row, s_row) in d.rows_mut().into_iter().zip(s.rows()) {
                    let total = d_row.sum();
                    d_row.scaled_add(-total, &s_row);
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(self.arr(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Pool(a, groups, kind) => {
                let mut d = Array2::zeros(self.arr(*a).dim());
                for (k, members) in groups.iter().enumerate() {
                    let scale = match kind {
                        Pool::Sum => 1.0,
                        Pool::Mean => 1.0 / members.len() as f64,
                    };
                    for &i in members {
                        d.row_mut(i).scaled_add(scale, &g.row(k));
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::CosineMatrix(a, b) => {
                let (ua, na) = normalize_rows(self.arr(*a), "cosine_matrix")?;
                let (ub, nb) = normalize_rows(self.arr(*b), "cosine_matrix")?;
                if self.wants(*a) {
                    self.accumulate(grads, *a, normalize_rows_backward(&ua, &na, g.dot(&ub)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, normalize_rows_backward(&ub, &nb, g.t().dot(&ua)));
                }
            }
            Op::CosinePairs(a, b) => {
                let (ua, na) = normalize_rows(self.arr(*a), "cosine_pairs")?;
                let (ub, nb) = normalize_rows(self.arr(*b), "cosine_pairs")?;
                let col = g.column(0);
                if self.wants(*a) {
                    let d = &ub * &col.insert_axis(Axis(1));
                    self.accumulate(grads, *a, normalize_rows_backward(&ua, &na, d));
                }
                if self.wants(*b) {
                    let d = &ua * &col.insert_axis(Axis(1));
                    self.accumulate(grads, *b, normalize_rows_backward(&ub, &nb, d));
                }
            }
            Op::LogSumExpRows(a) => {
                let d = softmax_rows(self.arr(*a)) * g;
                self.accumulate(grads, *a, d);
            }
            Op::Pick(a, cols) => {
                let mut d = Array2::zeros(self.arr(*a).dim());
                for (i, &j) in cols.iter().enumerate() {
                    d[[i, j]] += g[[i, 0]];
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let d = Array2::from_elem(self.arr(*a).dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => {
                let dim = self.arr(*a).dim();
                let flat: Vec<f64> = g.iter().copied().collect();
                self.accumulate(
                    grads,
                    *a,
                    Array2::from_shape_vec(dim, flat).expect("reshape back"),
                );
            }
            Op::WeightedSum(terms, w) => {
                let weights = self.arr(*w);
                for (l, &t) in terms.iter().enumerate() {
                    if self.wants(t) {
                        self.accumulate(grads, t, g * weights[[0, l]]);
                    }
                }
                if self.wants(*w) {
                    let dw = terms.iter().map(|&t| (self.arr(t) * g).sum()).collect();
                    self.accumulate(
                        grads,
                        *w,
                        Array2::from_shape_vec((1, terms.len()), dw).expect("1 x L"),
                    );
                }
            }
            Op::ConcatCols(a, b) => {
                let split = self.arr(*a).ncols();
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.slice(ndarray::s![.., ..split]).to_owned());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.slice(ndarray::s![.., split..]).to_owned());
                }
            }
            Op::Spmm {
                matrix,
                values,
                dense,
            } => {
                let vals = values.map(|v| self.nodes[v.0].value.values());
                if self.wants(*dense) {
                    self.accumulate(grads, *dense, matrix.transpose_matmul_dense(vals, g.view()));
                }
                if let Some(v) = values.filter(|v| self.wants(*v)) {
                    let d_arr = self.arr(*dense);
                    let mut d = Vec::with_capacity(matrix.nnz());
                    for i in 0..matrix.rows() {
                        let g_row = g.row(i);
                        for &j in matrix.row_indices(i) {
                            d.push(g_row.dot(&d_arr.row(j)));
                        }
                    }
                    self.accumulate(
                        grads,
                        v,
                        Array2::from_shape_vec((d.len(), 1), d).expect("nnz"),
                    );
                }
            }
            Op::Sddmm {
                pattern,
                left,
                right,
            } => {
                let l = self.arr(*left);
                let r = self.arr(*right);
                let want_l = self.wants(*left);
                let want_r = self.wants(*right);
                let mut d_left = Array2::zeros(l.dim());
                // accumulated transposed: one contiguous row per output column
                let mut d_right_t = Array2::zeros((r.ncols(), r.nrows()));
                let right_t = r.t().as_standard_layout().into_owned();
                let mut e = 0;
                for i in 0..pattern.rows() {
                    for &j in pattern.row_indices(i) {
                        let ge = g[[e, 0]];
                        if want_l {
                            d_left.row_mut(i).scaled_add(ge, &right_t.row(j));
                        }
                        if want_r {
                            d_right_t.row_mut(j).scaled_add(ge, &l.row(i));
                        }
                        e += 1;
                    }
                }
                if want_l {
                    self.accumulate(grads, *left, d_left);
                }
                if want_r {
                    self.accumulate(
                        grads,
                        *right,
                        d_right_t.t().as_standard_layout().into_owned(),
                    );
                }
            }
        }
        Ok(())
    }
}
