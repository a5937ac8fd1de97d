//! A small reverse-mode automatic differentiation tape over [`Matrix`].
//!
//! Every forward computation of the model is recorded on a [`Graph`]. Each
//! node stores its value and the operation that produced it; [`Graph::backward`]
//! walks the tape in reverse and accumulates vector-Jacobian products.
//! Parameters are bound by name from a [`ParamStore`] so that gradients can be
//! reported per parameter path.

use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::tensor::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<Option<usize>>),
    MaxRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    SumRows(Var),
    SumAll(Var),
    BceWithLogits(Var, Vec<f64>),
    SoftmaxCrossEntropy(Var, Vec<usize>),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients of one scalar with respect to every node of a graph.
pub struct Grads {
    nodes: Vec<Option<Matrix>>,
}

impl Grads {
    /// Gradient with respect to `var`, or `None` if it does not influence the
    /// output.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.nodes[var.0].as_ref()
    }
}

/// Computation tape.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            bound: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds the named parameter; repeated calls return the same node.
    ///
    /// Panics if the store has no such parameter.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let v = self.push(value, Op::Leaf);
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    /// Adds the `1 × d` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(xv.cols(), bv.cols(), "bias width mismatch");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        self.push(value, Op::AddRow(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// Scales row `r` of `x` by `col[r]`, i.e. `diag(col) · x`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(col));
        assert_eq!(cv.shape(), (xv.rows(), 1), "column scale shape mismatch");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let s = cv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        self.push(value, Op::MulCol(x, col))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.push(value, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.push(value, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push(value, Op::Transpose(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.as_slice());
            rows += pv.rows();
        }
        let value = Matrix::from_vec(rows, cols, data);
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Selects rows of `x`; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Var {
        let xv = self.value(x);
        let mut value = Matrix::zeros(index.len(), xv.cols());
        for (r, i) in index.iter().enumerate() {
            if let Some(i) = *i {
                value.row_mut(r).copy_from_slice(xv.row(i));
            }
        }
        self.push(value, Op::GatherRows(x, index))
    }

    pub fn row(&mut self, x: Var, r: usize) -> Var {
        self.gather_rows(x, vec![Some(r)])
    }

    /// Element-wise maximum over the selected rows, as a `1 × d` row.
    /// Ties route the gradient to the first maximal row.
    pub fn max_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        assert!(!rows.is_empty(), "max over an empty row set");
        let xv = self.value(x);
        let mut value = Matrix::zeros(1, xv.cols());
        let mut argmax = vec![rows[0]; xv.cols()];
        for (c, arg) in argmax.iter_mut().enumerate() {
            let mut best = xv.get(rows[0], c);
            for &r in &rows[1..] {
                let v = xv.get(r, c);
                if v > best {
                    best = v;
                    *arg = r;
                }
            }
            value.set(0, c, best);
        }
        self.push(value, Op::MaxRows(x, argmax))
    }

    /// Softmax of each row, with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::SoftmaxRows(x))
    }

    /// Column sums as a `1 × d` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = Matrix::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, v) in value.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        self.push(value, Op::SumRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        self.push(value, Op::SumAll(x))
    }

    /// Summed binary cross-entropy of sigmoid(`logits`) against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len(), "bce target count mismatch");
        let loss: f64 = lv
            .as_slice()
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        self.push(Matrix::filled(1, 1, loss), Op::BceWithLogits(logits, targets))
    }

    /// Summed categorical cross-entropy of row-wise softmax(`logits`)
    /// against one target class per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross-entropy target count mismatch");
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        self.push(Matrix::filled(1, 1, loss), Op::SoftmaxCrossEntropy(logits, targets))
    }

    /// Reverse pass from the scalar `output`.
    pub fn backward(&self, output: Var) -> Grads {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulCol(x, col) => {
                    let (xv, cv) = (self.value(*x), self.value(*col));
                    let mut gx = g.clone();
                    let mut gc = Matrix::zeros(cv.rows(), 1);
                    for r in 0..g.rows() {
                        let s = cv.get(r, 0);
                        gx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                        let dot: f64 = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                        gc.set(r, 0, dot);
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *col, gc);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scale(*s)),
                Op::AddScalar(x) => accumulate(&mut grads, *x, g.clone()),
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Transpose(x) => accumulate(&mut grads, *x, g.transpose()),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut gp = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pr = self.value(p).rows();
                        let cols = g.cols();
                        let slice = &g.as_slice()[offset * cols..(offset + pr) * cols];
                        offset += pr;
                        accumulate(&mut grads, p, Matrix::from_vec(pr, cols, slice.to_vec()));
                    }
                }
                Op::GatherRows(x, index) => {
                    let (xr, xc) = self.shape(*x);
                    let mut gx = Matrix::zeros(xr, xc);
                    for (r, i) in index.iter().enumerate() {
                        if let Some(i) = *i {
                            for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxRows(x, argmax) => {
                    let (xr, xc) = self.shape(*x);
                    let mut gx = Matrix::zeros(xr, xc);
                    for (c, &r) in argmax.iter().enumerate() {
                        let cur = gx.get(r, c);
                        gx.set(r, c, cur + g.get(0, c));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            gx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumRows(x) => {
                    let (xr, xc) = self.shape(*x);
                    let mut gx = Matrix::zeros(xr, xc);
                    for r in 0..xr {
                        gx.row_mut(r).copy_from_slice(g.row(0));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let (xr, xc) = self.shape(*x);
                    accumulate(&mut grads, *x, Matrix::filled(xr, xc, g.get(0, 0)));
                }
                Op::BceWithLogits(logits, targets) => {
                    let s = g.get(0, 0);
                    let lv = self.value(*logits);
                    let data = lv
                        .as_slice()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &t)| s * (stable_sigmoid(z) - t))
                        .collect();
                    accumulate(&mut grads, *logits, Matrix::from_vec(lv.rows(), lv.cols(), data));
                }
                Op::SoftmaxCrossEntropy(logits, targets) => {
                    let s = g.get(0, 0);
                    let mut gx = self.value(*logits).clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = gx.row_mut(r);
                        softmax_in_place(row);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *logits, gx);
                }
            }
            grads[idx] = Some(g);
        }
        Grads { nodes: grads }
    }

    /// Gradient of `output` for every parameter in the store. Parameters the
    /// output does not depend on get a zero gradient.
    pub fn param_gradients(&self, grads: &Grads) -> BTreeMap<String, Matrix> {
        self.store
            .iter()
            .map(|(name, value)| {
                let g = self
                    .bound
                    .get(name)
                    .and_then(|&v| grads.get(v).cloned())
                    .unwrap_or_else(|| Matrix::zeros(value.rows(), value.cols()));
                (name.clone(), g)
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Logistic function computed without overflow for large `|z|`.
pub fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
