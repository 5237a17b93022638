//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every primitive appends one node to a [`Tape`] and returns a [`Var`]
//! handle. The recorded op sequence can be re-evaluated with replaced leaf
//! values ([`Tape::evaluate`]) and differentiated once ([`Tape::gradient`]).
//!
//! Binary element-wise primitives broadcast their right operand when it is
//! `1 × c` (row), `r × 1` (column) or `1 × 1`.
//!
//! Subgradient conventions: `relu'(0) = 0`, `abs'(0) = 0`, and the safe
//! inverses have zero derivative wherever they return zero.

use super::{Matrix, NumError};

/// Threshold below which the safe inverses return zero.
pub const SAFE_EPS: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    MatMul(Var, Var),
    Relu(Var),
    Elu(Var),
    Abs(Var),
    Sigmoid(Var),
    Tanh(Var),
    RsqrtSafe(Var),
    RecipSafe(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    SegmentSum(Var, usize),
    RepeatRows(Var, usize),
    Reshape(Var, usize, usize),
    GruCell(GruVars),
}

/// Operands of a fused GRU cell.
///
/// Gate blocks are laid out `[reset | update | candidate]` along the columns
/// of `w_ih` (`in × 3h`), `w_hh` (`h × 3h`), `b_ih` and `b_hh` (`1 × 3h`).
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub x: Var,
    pub h: Var,
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

/// Intermediates kept for the GRU backward pass.
#[derive(Clone, Debug)]
struct GruCache {
    r: Matrix,
    z: Matrix,
    n: Matrix,
    hn: Matrix,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
    cache: Option<GruCache>,
}

/// Recorded computation graph with forward values.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::gradient`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a recorded value, `None` if it does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient or zeros shaped like `like`.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dim_err(op: &'static str, a: &Matrix, b: &Matrix) -> NumError {
    NumError::Dimension {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn broadcast_mode(op: &'static str, a: &Matrix, b: &Matrix) -> Result<Bcast, NumError> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.shape() == (1, 1) {
        Ok(Bcast::Scalar)
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Ok(Bcast::Row)
    } else if b.cols() == 1 && b.rows() == a.rows() {
        Ok(Bcast::Col)
    } else {
        Err(dim_err(op, a, b))
    }
}

#[inline]
fn bcast_index(mode: Bcast, cols: usize, r: usize, c: usize) -> usize {
    match mode {
        Bcast::Same => r * cols + c,
        Bcast::Row => c,
        Bcast::Col => r,
        Bcast::Scalar => 0,
    }
}

fn binary(a: &Matrix, b: &Matrix, mode: Bcast, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols());
    let cols = a.cols();
    let (ad, bd) = (a.data(), b.data());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let (r, c) = (i / cols, i % cols);
        *o = f(ad[i], bd[bcast_index(mode, cols, r, c)]);
    }
    out
}

/// Sums `g` (shaped like the broadcast result) back into the operand shape.
fn reduce_to(mode: Bcast, g: &Matrix, shape: (usize, usize)) -> Matrix {
    if mode == Bcast::Same {
        return g.clone();
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    let cols = g.cols();
    let od = out.data_mut();
    for (i, &v) in g.data().iter().enumerate() {
        od[bcast_index(mode, cols, i / cols, i % cols)] += v;
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn rsqrt_safe(x: f64) -> f64 {
    if x > SAFE_EPS {
        1.0 / x.sqrt()
    } else {
        0.0
    }
}

#[inline]
fn recip_safe(x: f64) -> f64 {
    if x > SAFE_EPS {
        1.0 / x
    } else {
        0.0
    }
}

fn add_row_bias(m: &mut Matrix, bias: &Matrix) {
    let cols = m.cols();
    for r in 0..m.rows() {
        for (v, b) in m.row_slice_mut(r).iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    debug_assert_eq!(bias.len(), cols);
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row_slice(r)) {
            *o += v;
        }
    }
    out
}

fn gru_forward(
    x: &Matrix,
    h: &Matrix,
    w_ih: &Matrix,
    w_hh: &Matrix,
    b_ih: &Matrix,
    b_hh: &Matrix,
) -> Result<(Matrix, GruCache), NumError> {
    let hid = h.cols();
    if w_ih.rows() != x.cols() || w_ih.cols() != 3 * hid {
        return Err(dim_err("gru-cell", x, w_ih));
    }
    if w_hh.shape() != (hid, 3 * hid) {
        return Err(dim_err("gru-cell", h, w_hh));
    }
    if b_ih.shape() != (1, 3 * hid) || b_hh.shape() != (1, 3 * hid) {
        return Err(dim_err("gru-cell", b_ih, b_hh));
    }
    if x.rows() != h.rows() {
        return Err(dim_err("gru-cell", x, h));
    }
    let mut gi = x.matmul(w_ih)?;
    add_row_bias(&mut gi, b_ih);
    let mut gh = h.matmul(w_hh)?;
    add_row_bias(&mut gh, b_hh);
    let rows = x.rows();
    let mut r = Matrix::zeros(rows, hid);
    let mut z = Matrix::zeros(rows, hid);
    let mut n = Matrix::zeros(rows, hid);
    let mut hn = Matrix::zeros(rows, hid);
    let mut out = Matrix::zeros(rows, hid);
    for i in 0..rows {
        let gi_row = gi.row_slice(i);
        let gh_row = gh.row_slice(i);
        for j in 0..hid {
            let rv = sigmoid(gi_row[j] + gh_row[j]);
            let zv = sigmoid(gi_row[hid + j] + gh_row[hid + j]);
            let hnv = gh_row[2 * hid + j];
            let nv = (gi_row[2 * hid + j] + rv * hnv).tanh();
            let hv = h.get(i, j);
            r.set(i, j, rv);
            z.set(i, j, zv);
            n.set(i, j, nv);
            hn.set(i, j, hnv);
            out.set(i, j, (1.0 - zv) * nv + zv * hv);
        }
    }
    Ok((out, GruCache { r, z, n, hn }))
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records a differentiable leaf (an input or a parameter).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, true)
    }

    /// Records a leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
            cache: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn operands(op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Elu(a)
            | Op::Abs(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::RsqrtSafe(a)
            | Op::RecipSafe(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSums(a)
            | Op::SelectRows(a, _)
            | Op::SelectCols(a, _)
            | Op::GatherCols(a, _)
            | Op::SegmentSum(a, _)
            | Op::RepeatRows(a, _)
            | Op::Reshape(a, _, _) => vec![*a],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::GruCell(g) => vec![g.x, g.h, g.w_ih, g.w_hh, g.b_ih, g.b_hh],
        }
    }

    /// Computes the forward value of `op` from operand values in `vals`.
    fn forward(op: &Op, vals: &[&Matrix]) -> Result<(Matrix, Option<GruCache>), NumError> {
        let v = match op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::Add(_, _, m) => binary(vals[0], vals[1], *m, |a, b| a + b),
            Op::Sub(_, _, m) => binary(vals[0], vals[1], *m, |a, b| a - b),
            Op::Mul(_, _, m) => binary(vals[0], vals[1], *m, |a, b| a * b),
            Op::Scale(_, k) => vals[0].map(|a| a * k),
            Op::MatMul(..) => vals[0].matmul(vals[1])?,
            Op::Relu(_) => vals[0].map(|a| a.max(0.0)),
            Op::Elu(_) => vals[0].map(elu),
            Op::Abs(_) => vals[0].map(f64::abs),
            Op::Sigmoid(_) => vals[0].map(sigmoid),
            Op::Tanh(_) => vals[0].map(f64::tanh),
            Op::RsqrtSafe(_) => vals[0].map(rsqrt_safe),
            Op::RecipSafe(_) => vals[0].map(recip_safe),
            Op::Sum(_) => Matrix::scalar(vals[0].sum()),
            Op::Mean(_) => {
                let n = vals[0].len().max(1) as f64;
                Matrix::scalar(vals[0].sum() / n)
            }
            Op::RowSums(_) => {
                let a = vals[0];
                Matrix::column(
                    &(0..a.rows())
                        .map(|r| a.row_slice(r).iter().sum())
                        .collect::<Vec<f64>>(),
                )
            }
            Op::ConcatCols(_) => {
                let rows = vals[0].rows();
                if let Some(bad) = vals.iter().find(|m| m.rows() != rows) {
                    return Err(dim_err("concat-columns", vals[0], bad));
                }
                let cols: usize = vals.iter().map(|m| m.cols()).sum();
                let mut out = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let mut off = 0;
                    for m in vals {
                        out.row_slice_mut(r)[off..off + m.cols()].copy_from_slice(m.row_slice(r));
                        off += m.cols();
                    }
                }
                out
            }
            Op::ConcatRows(_) => {
                let cols = vals[0].cols();
                if let Some(bad) = vals.iter().find(|m| m.cols() != cols) {
                    return Err(dim_err("concat-rows", vals[0], bad));
                }
                let rows: usize = vals.iter().map(|m| m.rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for m in vals {
                    data.extend_from_slice(m.data());
                }
                Matrix::from_vec(rows, cols, data)?
            }
            Op::SelectRows(_, idx) => {
                let a = vals[0];
                let mut out = Matrix::zeros(idx.len(), a.cols());
                for (i, &r) in idx.iter().enumerate() {
                    if r >= a.rows() {
                        return Err(NumError::Index {
                            op: "select-rows",
                            index: r,
                            bound: a.rows(),
                        });
                    }
                    out.row_slice_mut(i).copy_from_slice(a.row_slice(r));
                }
                out
            }
            Op::SelectCols(_, idx) => {
                let a = vals[0];
                if let Some(&c) = idx.iter().find(|&&c| c >= a.cols()) {
                    return Err(NumError::Index {
                        op: "select-cols",
                        index: c,
                        bound: a.cols(),
                    });
                }
                let mut out = Matrix::zeros(a.rows(), idx.len());
                for r in 0..a.rows() {
                    for (j, &c) in idx.iter().enumerate() {
                        out.set(r, j, a.get(r, c));
                    }
                }
                out
            }
            Op::GatherCols(_, idx) => {
                let a = vals[0];
                if idx.len() != a.rows() {
                    return Err(NumError::Dimension {
                        op: "gather-cols",
                        lhs: a.shape(),
                        rhs: (idx.len(), 1),
                    });
                }
                let mut out = Matrix::zeros(a.rows(), 1);
                for (r, &c) in idx.iter().enumerate() {
                    if c >= a.cols() {
                        return Err(NumError::Index {
                            op: "gather-cols",
                            index: c,
                            bound: a.cols(),
                        });
                    }
                    out.set(r, 0, a.get(r, c));
                }
                out
            }
            Op::SegmentSum(_, group) => {
                let a = vals[0];
                if *group == 0 || !a.rows().is_multiple_of(*group) {
                    return Err(NumError::Dimension {
                        op: "segment-sum",
                        lhs: a.shape(),
                        rhs: (*group, 1),
                    });
                }
                let mut out = Matrix::zeros(a.rows() / group, a.cols());
                for r in 0..a.rows() {
                    let o = r / group;
                    for (dst, src) in out.row_slice_mut(o).iter_mut().zip(a.row_slice(r)) {
                        *dst += src;
                    }
                }
                out
            }
            Op::RepeatRows(_, group) => {
                let a = vals[0];
                if *group == 0 {
                    return Err(NumError::Dimension {
                        op: "repeat-rows",
                        lhs: a.shape(),
                        rhs: (0, 1),
                    });
                }
                let mut out = Matrix::zeros(a.rows() * group, a.cols());
                for r in 0..out.rows() {
                    out.row_slice_mut(r).copy_from_slice(a.row_slice(r / group));
                }
                out
            }
            Op::Reshape(_, rows, cols) => {
                let a = vals[0];
                if rows * cols != a.len() {
                    return Err(NumError::Dimension {
                        op: "reshape",
                        lhs: a.shape(),
                        rhs: (*rows, *cols),
                    });
                }
                Matrix::from_vec(*rows, *cols, a.data().to_vec())?
            }
            Op::GruCell(_) => {
                let (out, cache) = gru_forward(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5])?;
                return Ok((out, Some(cache)));
            }
        };
        Ok((v, None))
    }

    fn push(&mut self, op: Op) -> Result<Var, NumError> {
        let operands = Self::operands(&op);
        let needs_grad = operands.iter().any(|v| self.nodes[v.0].needs_grad);
        let (value, cache) = {
            let vals: Vec<&Matrix> = operands.iter().map(|v| &self.nodes[v.0].value).collect();
            Self::forward(&op, &vals)?
        };
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            cache,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        make: fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var, NumError> {
        let mode = broadcast_mode(name, self.value(a), self.value(b))?;
        self.push(make(a, b, mode))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary_op("add", a, b, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary_op("sub", a, b, Op::Sub)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary_op("elementwise-multiply", a, b, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, NumError> {
        self.push(Op::Scale(a, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::Relu(a))
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::Elu(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::Abs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::Tanh(a))
    }

    /// `x^{-1/2}` where `x > SAFE_EPS`, else 0.
    pub fn rsqrt_safe(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::RsqrtSafe(a))
    }

    /// `1/x` where `x > SAFE_EPS`, else 0.
    pub fn recip_safe(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::RecipSafe(a))
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::Mean(a))
    }

    /// Per-row sums as a column.
    pub fn row_sums(&mut self, a: Var) -> Result<Var, NumError> {
        self.push(Op::RowSums(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::Empty("concat-columns"));
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::Empty("concat-rows"));
        }
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var, NumError> {
        self.push(Op::SelectRows(a, rows))
    }

    pub fn select_cols(&mut self, a: Var, cols: Vec<usize>) -> Result<Var, NumError> {
        self.push(Op::SelectCols(a, cols))
    }

    /// Picks `a[r, cols[r]]` for every row, giving a column.
    pub fn gather_cols(&mut self, a: Var, cols: Vec<usize>) -> Result<Var, NumError> {
        self.push(Op::GatherCols(a, cols))
    }

    /// Sums consecutive blocks of `group` rows: `(g·k) × c → k × c`.
    pub fn segment_sum(&mut self, a: Var, group: usize) -> Result<Var, NumError> {
        self.push(Op::SegmentSum(a, group))
    }

    /// Repeats each row `group` times: `k × c → (g·k) × c`.
    pub fn repeat_rows(&mut self, a: Var, group: usize) -> Result<Var, NumError> {
        self.push(Op::RepeatRows(a, group))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumError> {
        self.push(Op::Reshape(a, rows, cols))
    }

    pub fn gru_cell(&mut self, g: GruVars) -> Result<Var, NumError> {
        self.push(Op::GruCell(g))
    }

    /// Re-runs the recorded op sequence, with the given leaves replaced.
    ///
    /// Returns the value of every node. Replacements must keep the leaf shape.
    pub fn evaluate(&self, replace: &[(Var, Matrix)]) -> Result<Vec<Matrix>, NumError> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => {
                    let idx = values.len();
                    match replace.iter().find(|(v, _)| v.0 == idx) {
                        Some((_, m)) => {
                            if m.shape() != node.value.shape() {
                                return Err(dim_err("evaluate", &node.value, m));
                            }
                            m.clone()
                        }
                        None => node.value.clone(),
                    }
                }
                op => {
                    let operands = Self::operands(op);
                    let vals: Vec<&Matrix> = operands.iter().map(|v| &values[v.0]).collect();
                    Self::forward(op, &vals)?.0
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Back-propagates `seeds` (output, upstream gradient) through the tape.
    ///
    /// A tape can be differentiated once.
    pub fn gradient(&mut self, seeds: &[(Var, Matrix)]) -> Result<Gradients, NumError> {
        if self.consumed {
            return Err(NumError::TapeConsumed);
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape() != self.value(*v).shape() {
                return Err(dim_err("gradient seed", self.value(*v), g));
            }
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backward_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        self.consumed = true;
        Ok(Gradients { grads })
    }

    /// Gradient of a scalar output with unit seed.
    pub fn backward(&mut self, output: Var) -> Result<Gradients, NumError> {
        let (r, c) = self.shape(output);
        self.gradient(&[(output, Matrix::ones(r, c))])
    }

    fn backward_node(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, mode) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, reduce_to(*mode, g, val(*b).shape()));
                }
            }
            Op::Sub(a, b, mode) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, reduce_to(*mode, &g.map(|v| -v), val(*b).shape()));
                }
            }
            Op::Mul(a, b, mode) => {
                if wants(*a) {
                    accumulate(grads, *a, binary(g, val(*b), *mode, |x, y| x * y));
                }
                if wants(*b) {
                    let ga = g.zip_map(val(*a), |x, y| x * y).expect("same shape");
                    accumulate(grads, *b, reduce_to(*mode, &ga, val(*b).shape()));
                }
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.map(|v| v * k)),
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let gb = g.matmul_t(val(*b)).expect("matmul backward");
                    accumulate(grads, *a, gb);
                }
                if wants(*b) {
                    let ga = val(*a).t_matmul(g).expect("matmul backward");
                    accumulate(grads, *b, ga);
                }
            }
            Op::Relu(a) => {
                let d = g
                    .zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })
                    .expect("same shape");
                accumulate(grads, *a, d);
            }
            Op::Elu(a) => {
                let d = g
                    .zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * x.exp() })
                    .expect("same shape");
                accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = g
                    .zip_map(val(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .expect("same shape");
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(y, |g, s| g * s * (1.0 - s)).expect("same shape");
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(y, |g, t| g * (1.0 - t * t)).expect("same shape");
                accumulate(grads, *a, d);
            }
            Op::RsqrtSafe(a) => {
                let d = g.zip_map(y, |g, r| -0.5 * g * r * r * r).expect("same shape");
                accumulate(grads, *a, d);
            }
            Op::RecipSafe(a) => {
                let d = g.zip_map(y, |g, r| -g * r * r).expect("same shape");
                accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let n = (r * c).max(1) as f64;
                accumulate(grads, *a, Matrix::filled(r, c, g.item() / n));
            }
            Op::RowSums(a) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_slice_mut(i).fill(g.get(i, 0));
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if wants(*p) {
                        accumulate(grads, *p, g.column_range(off, off + c));
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut off = 0;
                for p in parts {
                    let r = val(*p).rows();
                    if wants(*p) {
                        let d = Matrix::from_vec(r, cols, g.data()[off * cols..(off + r) * cols].to_vec())
                            .expect("concat-rows backward");
                        accumulate(grads, *p, d);
                    }
                    off += r;
                }
            }
            Op::SelectRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for (i, &src) in idx.iter().enumerate() {
                    for (dst, v) in d.row_slice_mut(src).iter_mut().zip(g.row_slice(i)) {
                        *dst += v;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::SelectCols(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    for (j, &src) in idx.iter().enumerate() {
                        let cur = d.get(row, src);
                        d.set(row, src, cur + g.get(row, j));
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::GatherCols(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for (row, &col) in idx.iter().enumerate() {
                    d.set(row, col, g.get(row, 0));
                }
                accumulate(grads, *a, d);
            }
            Op::SegmentSum(a, group) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    d.row_slice_mut(row).copy_from_slice(g.row_slice(row / group));
                }
                accumulate(grads, *a, d);
            }
            Op::RepeatRows(a, group) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..g.rows() {
                    for (dst, v) in d.row_slice_mut(row / group).iter_mut().zip(g.row_slice(row)) {
                        *dst += v;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Reshape(a, _, _) => {
                let (r, c) = val(*a).shape();
                accumulate(
                    grads,
                    *a,
                    Matrix::from_vec(r, c, g.data().to_vec()).expect("reshape backward"),
                );
            }
            Op::GruCell(gv) => {
                let cache = node.cache.as_ref().expect("gru cache");
                self.gru_backward(gv, cache, g, grads);
            }
        }
    }

    fn gru_backward(&self, gv: &GruVars, c: &GruCache, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let h = val(gv.h);
        let (rows, hid) = h.shape();
        let mut d_gi = Matrix::zeros(rows, 3 * hid);
        let mut d_gh = Matrix::zeros(rows, 3 * hid);
        let mut dh = Matrix::zeros(rows, hid);
        for i in 0..rows {
            for j in 0..hid {
                let (r, z, n, hn) = (c.r.get(i, j), c.z.get(i, j), c.n.get(i, j), c.hn.get(i, j));
                let gij = g.get(i, j);
                let dn = gij * (1.0 - z);
                let dz = gij * (h.get(i, j) - n);
                dh.set(i, j, gij * z);
                let dz_pre = dz * z * (1.0 - z);
                let dn_pre = dn * (1.0 - n * n);
                let dr_pre = dn_pre * hn * r * (1.0 - r);
                d_gi.set(i, j, dr_pre);
                d_gi.set(i, hid + j, dz_pre);
                d_gi.set(i, 2 * hid + j, dn_pre);
                d_gh.set(i, j, dr_pre);
                d_gh.set(i, hid + j, dz_pre);
                d_gh.set(i, 2 * hid + j, dn_pre * r);
            }
        }
        if wants(gv.x) {
            let dx = d_gi.matmul_t(val(gv.w_ih)).expect("gru dx");
            accumulate(grads, gv.x, dx);
        }
        if wants(gv.w_ih) {
            let dw = val(gv.x).t_matmul(&d_gi).expect("gru dw_ih");
            accumulate(grads, gv.w_ih, dw);
        }
        if wants(gv.b_ih) {
            accumulate(grads, gv.b_ih, column_sums(&d_gi));
        }
        if wants(gv.h) {
            let back = d_gh.matmul_t(val(gv.w_hh)).expect("gru dh");
            let total = dh.zip_map(&back, |a, b| a + b).expect("same shape");
            accumulate(grads, gv.h, total);
        }
        if wants(gv.w_hh) {
            let dw = h.t_matmul(&d_gh).expect("gru dw_hh");
            accumulate(grads, gv.w_hh, dw);
        }
        if wants(gv.b_hh) {
            accumulate(grads, gv.b_hh, column_sums(&d_gh));
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
