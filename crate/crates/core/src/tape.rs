//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D array; vectors are `1×n` rows or `n×1` columns.
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `a + 1·r` with `r` a `1×c` row.
    AddRow(Var, Var),
    /// `a + c·1ᵀ` with `c` an `r×1` column.
    AddCol(Var, Var),
    Mul(Var, Var),
    /// `a ⊙ (1·r)` with `r` a `1×c` row.
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Rows(Var, usize),
    Cols(Var, usize),
    /// `y[i] = x[i + offset]`, zero outside.
    ShiftRows(Var, isize),
    MeanRows(Var),
    Gather(Var, Vec<usize>),
    /// Rows where the mask is false are replaced by a constant.
    MaskRows(Var, Vec<bool>),
    /// `-log softmax(x)[target]` for an `n×1` column.
    CrossEntropy(Var, usize),
}

#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    /// False for constants and anything computed only from constants.
    tracked: Vec<bool>,
}

/// Gradients of one scalar root with respect to every node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    /// `None` if the node does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn softmax_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut y = x.to_owned();
    for mut row in y.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    y
}

fn log_sum_exp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = x.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let t = |v: &Var| self.tracked[v.0];
        let tracked = match &op {
            Op::Leaf => true,
            Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::AddCol(a, b) => {
                t(a) || t(b)
            }
            Op::Mul(a, b) | Op::MulRow(a, b) => t(a) || t(b),
            Op::ConcatCols(parts) | Op::StackRows(parts) => parts.iter().any(t),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::SoftmaxRows(a)
            | Op::SoftmaxCols(a)
            | Op::Rows(a, _)
            | Op::Cols(a, _)
            | Op::ShiftRows(a, _)
            | Op::MeanRows(a)
            | Op::Gather(a, _)
            | Op::MaskRows(a, _)
            | Op::CrossEntropy(a, _) => t(a),
        };
        self.values.push(value);
        self.ops.push(op);
        self.tracked.push(tracked);
        Var(self.values.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.tracked[v.0] = false;
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = mm(self.value(a).view(), self.value(b).view());
        self.push(y, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let y = mm(self.value(a).view(), self.value(b).t());
        self.push(y, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let y = self.value(a).t().to_owned();
        self.push(y, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let y = self.value(a) + self.value(row);
        self.push(y, Op::AddRow(a, row))
    }

    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        debug_assert_eq!(self.value(col).ncols(), 1);
        let y = self.value(a) + self.value(col);
        self.push(y, Op::AddCol(a, col))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        self.push(y, Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let y = self.value(a) * self.value(row);
        self.push(y, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a) * c;
        self.push(y, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|v| v.max(0.0));
        self.push(y, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(y, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(f64::tanh);
        self.push(y, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let y = softmax_rows(self.value(a).view());
        self.push(y, Op::SoftmaxRows(a))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let y = softmax_rows(self.value(a).t()).reversed_axes().as_standard_layout().into_owned();
        self.push(y, Op::SoftmaxCols(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(y, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("stack_rows: column counts differ");
        self.push(y, Op::StackRows(parts.to_vec()))
    }

    /// Rows `start..start + len`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let y = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(y, Op::Rows(a, start))
    }

    /// Columns `start..start + len`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let y = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(y, Op::Cols(a, start))
    }

    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let x = self.value(a);
        let n = x.nrows() as isize;
        let mut y = Array2::zeros(x.raw_dim());
        for i in 0..n {
            let src = i + offset;
            if (0..n).contains(&src) {
                y.row_mut(i as usize).assign(&x.row(src as usize));
            }
        }
        self.push(y, Op::ShiftRows(a, offset))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let y = x.mean_axis(Axis(0)).expect("mean_rows of empty matrix").insert_axis(Axis(0));
        self.push(y, Op::MeanRows(a))
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let y = self.value(table).select(Axis(0), ids);
        self.push(y, Op::Gather(table, ids.to_vec()))
    }

    pub fn mask_rows(&mut self, a: Var, keep: &[bool], fill: f64) -> Var {
        let mut y = self.value(a).clone();
        for (mut row, &k) in y.rows_mut().into_iter().zip(keep) {
            if !k {
                row.fill(fill);
            }
        }
        self.push(y, Op::MaskRows(a, keep.to_vec()))
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let x = self.value(logits);
        debug_assert_eq!(x.ncols(), 1);
        let lse = log_sum_exp(x.iter().copied());
        let y = Array2::from_elem((1, 1), lse - x[[target, 0]]);
        self.push(y, Op::CrossEntropy(logits, target))
    }

    /// Backpropagates from a `1×1` root.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones(self.values[root.0].raw_dim()));

        for i in (0..=root.0).rev() {
            if !self.tracked[i] {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &self.values[i];
            match &self.ops[i] {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    if self.tracked[a.0] {
                        acc(&mut grads, a, mm(g.view(), self.value(b).t()));
                    }
                    if self.tracked[b.0] {
                        let av = self.value(a);
                        if av.nrows() == 1 {
                            acc_with(&mut grads, b, self.value(b), |d| add_outer(d, av.row(0), g.row(0)));
                        } else {
                            acc(&mut grads, b, mm(av.t(), g.view()));
                        }
                    }
                }
                &Op::MatMulT(a, b) => {
                    if self.tracked[a.0] {
                        acc(&mut grads, a, mm(g.view(), self.value(b).view()));
                    }
                    if self.tracked[b.0] {
                        let av = self.value(a);
                        if g.nrows() == 1 {
                            acc_with(&mut grads, b, self.value(b), |d| add_outer(d, g.row(0), av.row(0)));
                        } else {
                            acc(&mut grads, b, mm(g.t(), av.view()));
                        }
                    }
                }
                &Op::Transpose(a) => acc(&mut grads, a, g.t().to_owned()),
                &Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.clone());
                }
                &Op::AddRow(a, r) => {
                    acc(&mut grads, r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, a, g.clone());
                }
                &Op::AddCol(a, c) => {
                    acc(&mut grads, c, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    acc(&mut grads, a, g.clone());
                }
                &Op::Mul(a, b) => {
                    acc(&mut grads, a, &g * self.value(b));
                    acc(&mut grads, b, &g * self.value(a));
                }
                &Op::MulRow(a, r) => {
                    let dr = (&g * self.value(a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, r, dr);
                    acc(&mut grads, a, &g * self.value(r));
                }
                &Op::Scale(a, c) => acc(&mut grads, a, &g * c),
                &Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(y).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads, a, d);
                }
                &Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, a, d);
                }
                &Op::Tanh(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, a, d);
                }
                &Op::SoftmaxRows(a) => {
                    let d = softmax_backward(y.view(), g.view());
                    acc(&mut grads, a, d);
                }
                &Op::SoftmaxCols(a) => {
                    let d = softmax_backward(y.t(), g.t())
                        .reversed_axes()
                        .as_standard_layout()
                        .into_owned();
                    acc(&mut grads, a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                &Op::Rows(a, start) => {
                    let len = g.nrows();
                    acc_with(&mut grads, a, self.value(a), |d| {
                        let mut dst = d.slice_mut(s![start..start + len, ..]);
                        dst += &g;
                    });
                }
                &Op::Cols(a, start) => {
                    let len = g.ncols();
                    acc_with(&mut grads, a, self.value(a), |d| {
                        let mut dst = d.slice_mut(s![.., start..start + len]);
                        dst += &g;
                    });
                }
                &Op::ShiftRows(a, offset) => {
                    let n = g.nrows() as isize;
                    acc_with(&mut grads, a, self.value(a), |d| {
                        for i in 0..n {
                            let src = i + offset;
                            if (0..n).contains(&src) {
                                let mut dst = d.row_mut(src as usize);
                                dst += &g.row(i as usize);
                            }
                        }
                    });
                }
                &Op::MeanRows(a) => {
                    let x = self.value(a);
                    let scale = 1.0 / x.nrows() as f64;
                    let d = Array2::from_shape_fn(x.raw_dim(), |(_, j)| g[[0, j]] * scale);
                    acc(&mut grads, a, d);
                }
                Op::Gather(table, ids) => {
                    acc_with(&mut grads, *table, self.value(*table), |d| {
                        for (r, &id) in ids.iter().enumerate() {
                            let mut dst = d.row_mut(id);
                            dst += &g.row(r);
                        }
                    });
                }
                Op::MaskRows(a, keep) => {
                    let mut d = g.clone();
                    for (mut row, &k) in d.rows_mut().into_iter().zip(keep) {
                        if !k {
                            row.fill(0.0);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                &Op::CrossEntropy(a, target) => {
                    let x = self.value(a);
                    let lse = log_sum_exp(x.iter().copied());
                    let g0 = g[[0, 0]];
                    let mut d = x.mapv(|v| g0 * (v - lse).exp());
                    d[[target, 0]] -= g0;
                    acc(&mut grads, a, d);
                }
            }
            grads[i] = Some(g);
        }
        Grads { grads }
    }
}

/// Matrix product with direct paths for the vector-shaped cases the
/// recurrent cells produce, which a blocked GEMM handles poorly.
fn mm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    if a.nrows() == 1 {
        return row_times(a.row(0), b).insert_axis(Axis(0));
    }
    if a.ncols() == 1 {
        let mut y = Array2::zeros((a.nrows(), b.ncols()));
        for (mut row, &x) in y.rows_mut().into_iter().zip(a.column(0)) {
            row.scaled_add(x, &b.row(0));
        }
        return y;
    }
    a.dot(&b)
}

fn row_times(x: ArrayView1<'_, f64>, b: ArrayView2<'_, f64>) -> Array1<f64> {
    if b.t().is_standard_layout() {
        // Columns of `b` are contiguous.
        b.columns().into_iter().map(|c| x.dot(&c)).collect()
    } else {
        let mut y = Array1::zeros(b.ncols());
        for (&xi, row) in x.iter().zip(b.rows()) {
            y.scaled_add(xi, &row);
        }
        y
    }
}

/// `d += x yᵀ`
fn add_outer(d: &mut Array2<f64>, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) {
    for (mut row, &xi) in d.rows_mut().into_iter().zip(x) {
        row.scaled_add(xi, &y);
    }
}

fn softmax_backward(y: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut d = Array2::zeros(y.raw_dim());
    for ((mut dr, yr), gr) in d.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
        Zip::from(&mut dr)
            .and(&yr)
            .and(&gr)
            .for_each(|d, &y, &g| *d = y * (g - dot));
    }
    d
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn acc_with(
    grads: &mut [Option<Array2<f64>>],
    v: Var,
    like: &Array2<f64>,
    f: impl FnOnce(&mut Array2<f64>),
) {
    let slot = &mut grads[v.0];
    let d = slot.get_or_insert_with(|| Array2::zeros(like.raw_dim()));
    f(d);
}
