use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Lower clamp applied inside the log of the cross-entropy.
pub const CE_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous row ranges of a stacked matrix; row block `k` spans
/// `offsets[k]..offsets[k + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for len in lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        Segments { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    MeanCols(Var),
    SumAll(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    SpMM(Arc<CsrMatrix>, Var),
    SegmentSoftmax(Var, Arc<Segments>),
    SegmentSum(Var, Arc<Segments>),
    CrossEntropy(Var, Arc<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    param: Option<ParamId>,
}

/// Records a forward computation so that [`backward`](Tape::backward) can
/// propagate gradients to the parameters it read.
///
/// A tape is single-use: build, run backward once, drop.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    backward_done: bool,
    relu_signs: Option<Vec<bool>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the sign pattern of every ReLU input; used by the gradient
    /// checker to detect finite-difference steps that cross a kink.
    pub fn with_relu_tracking() -> Self {
        Tape {
            relu_signs: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub(crate) fn relu_signs(&self) -> Option<&[bool]> {
        self.relu_signs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, name: &'static str) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Error::shape("add_row", format!("{sa:?} + {sr:?}")));
        }
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Error::shape("mul_row", format!("{sa:?} * {sr:?}")));
        }
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row), "mul_row")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        if let Some(signs) = self.relu_signs.as_mut() {
            signs.extend(self.nodes[a.0].value.iter().map(|&x| x > 0.0));
        }
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row /= z;
        }
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Concatenates along columns; every part must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("{} rows vs {:?}", rows, self.shape(bad)),
            ));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Mean over `axis`: 0 gives a `1 x c` row, 1 gives an `r x 1` column.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        match axis {
            0 if r > 0 => {
                let out = self.value(a).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
                self.push(out, Op::MeanRows(a), "mean")
            }
            1 if c > 0 => {
                let out = self.value(a).mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
                self.push(out, Op::MeanCols(a), "mean")
            }
            _ => Err(Error::shape("mean", format!("axis {axis} of {:?}", (r, c)))),
        }
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(a), "sum")
    }

    /// Selects rows by index (embedding lookup, node subsets). Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let (r, _) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let out = self.value(a).select(Axis(0), &idx);
        self.push(out, Op::GatherRows(a, idx), "gather_rows")
    }

    /// Constant sparse matrix times a tape value.
    pub fn spmm(&mut self, m: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let (r, _) = self.shape(x);
        if m.cols() != r {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} x {:?}", m.rows(), m.cols(), self.shape(x)),
            ));
        }
        let out = m.matmul(self.value(x));
        self.push(out, Op::SpMM(m, x), "spmm")
    }

    /// Softmax down each column, independently inside every row segment.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        let (r, _) = self.shape(a);
        if seg.total_rows() != r {
            return Err(Error::shape(
                "segment_softmax",
                format!("segments cover {} rows, input has {r}", seg.total_rows()),
            ));
        }
        let mut out = self.value(a).clone();
        for k in 0..seg.len() {
            let mut block = out.slice_mut(s![seg.range(k), ..]);
            for mut col in block.columns_mut() {
                let max = col.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                col.mapv_inplace(|x| (x - max).exp());
                let z = col.sum();
                col /= z;
            }
        }
        self.push(out, Op::SegmentSoftmax(a, seg), "segment_softmax")
    }

    /// Sums the rows of each segment, giving one output row per segment.
    pub fn segment_sum(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if seg.total_rows() != r {
            return Err(Error::shape(
                "segment_sum",
                format!("segments cover {} rows, input has {r}", seg.total_rows()),
            ));
        }
        let src = self.value(a);
        let mut out = Array2::zeros((seg.len(), c));
        for k in 0..seg.len() {
            out.row_mut(k)
                .assign(&src.slice(s![seg.range(k), ..]).sum_axis(Axis(0)));
        }
        self.push(out, Op::SegmentSum(a, seg), "segment_sum")
    }

    /// Mean negative log-probability of the target class of each row.
    pub fn cross_entropy(&mut self, probs: Var, targets: Arc<Vec<usize>>) -> Result<Var> {
        let (r, c) = self.shape(probs);
        if targets.len() != r || r == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {r} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::shape("cross_entropy", format!("class {bad} of {c}")));
        }
        let p = self.value(probs);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -p[[i, t]].max(CE_EPS).ln())
            .sum::<f64>()
            / r as f64;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy(probs, targets),
            "cross_entropy",
        )
    }

    /// Reverse pass from a scalar root; parameter gradients are added into
    /// `store`. A second call on the same tape is an error.
    pub fn backward(&mut self, root: Var, store: &mut ParamStore) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(pid) = node.param {
                store.get_mut(pid).grad += &g;
                continue;
            }
            let mut acc = |v: Var, delta: Array2<f64>| match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&val(*b).t()));
                    acc(*b, val(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, &g * val(*a));
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    let grow = (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*row, grow);
                    acc(*a, &g * val(*row));
                }
                Op::Scale(a, f) => acc(*a, g * *f),
                Op::Relu(a) => {
                    let mut d = g;
                    d.zip_mut_with(val(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut d = &g * p;
                    for (mut drow, prow) in d.rows_mut().into_iter().zip(p.rows()) {
                        let dot = drow.sum();
                        drow.scaled_add(-dot, &prow);
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        acc(p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::MeanRows(a) => {
                    let r = val(*a).nrows();
                    let row = g.row(0).to_owned() / r as f64;
                    let d = row.broadcast(val(*a).raw_dim()).unwrap().to_owned();
                    acc(*a, d);
                }
                Op::MeanCols(a) => {
                    let (r, c) = val(*a).dim();
                    let d = Array2::from_shape_fn((r, c), |(i, _)| g[[i, 0]] / c as f64);
                    acc(*a, d);
                }
                Op::SumAll(a) => acc(*a, Array2::from_elem(val(*a).raw_dim(), g[[0, 0]])),
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(val(*a).raw_dim());
                    for (k, &i) in idx.iter().enumerate() {
                        d.row_mut(i).scaled_add(1.0, &g.row(k));
                    }
                    acc(*a, d);
                }
                Op::SpMM(m, x) => {
                    let mut d = Array2::zeros(val(*x).raw_dim());
                    m.transpose_matmul_into(&g, &mut d);
                    acc(*x, d);
                }
                Op::SegmentSoftmax(a, seg) => {
                    let p = &node.value;
                    let mut d = &g * p;
                    for k in 0..seg.len() {
                        let range = seg.range(k);
                        let pb = p.slice(s![range.clone(), ..]);
                        let mut db = d.slice_mut(s![range, ..]);
                        for (mut dcol, pcol) in db.columns_mut().into_iter().zip(pb.columns()) {
                            let dot = dcol.sum();
                            dcol.scaled_add(-dot, &pcol);
                        }
                    }
                    acc(*a, d);
                }
                Op::SegmentSum(a, seg) => {
                    let mut d = Array2::zeros(val(*a).raw_dim());
                    for k in 0..seg.len() {
                        let grow = g.row(k);
                        for i in seg.range(k) {
                            d.row_mut(i).assign(&grow);
                        }
                    }
                    acc(*a, d);
                }
                Op::CrossEntropy(probs, targets) => {
                    let p = val(*probs);
                    let r = targets.len() as f64;
                    let mut d = Array2::zeros(p.raw_dim());
                    for (i, &t) in targets.iter().enumerate() {
                        let pt = p[[i, t]];
                        if pt > CE_EPS {
                            d[[i, t]] = -g[[0, 0]] / (r * pt);
                        }
                    }
                    acc(*probs, d);
                }
            }
        }
        Ok(())
    }
}
