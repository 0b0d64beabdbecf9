//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! row-major matrices; column vectors are `n×1`, row vectors `1×n` and
//! scalars `1×1`. [`Tape::backward`] returns the gradient of a scalar node
//! with respect to every node on the tape.

use std::ops::Range;

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    /// Stacks equal-length rows; `cols` is used when `rows` is empty.
    pub fn from_rows(rows: &[Vec<T>], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    /// `x·wᵀ + b` with `x: n×d`, `w: o×d`, `b: 1×o`.
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    SoftmaxCols(Var),
    SoftmaxRows(Var),
    RowCosine { m: Var, q: Var },
    SegmentMax { x: Var, argmax: Vec<Option<usize>> },
    MeanAll(Var),
    SumAll(Var),
    MeanRows(Var),
    BceWithLogits { logits: Var, targets: Vec<T> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Operation record of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, v: T) -> Var {
        self.leaf(Matrix::scalar(v))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xm, wm) = (self.value(x), self.value(w));
        assert_eq!(xm.cols, wm.cols, "linear: input width {} vs weight width {}", xm.cols, wm.cols);
        let (n, d, o) = (xm.rows, xm.cols, wm.rows);
        let mut out = Matrix::zeros(n, o);
        for i in 0..n {
            let xr = xm.row(i);
            for j in 0..o {
                let wr = wm.row(j);
                let mut acc = T::zero();
                for k in 0..d {
                    acc += xr[k] * wr[k];
                }
                out.data[i * o + j] = acc;
            }
        }
        if let Some(b) = b {
            let bm = self.value(b);
            assert_eq!(bm.shape(), (1, o), "linear: bias shape");
            for i in 0..n {
                for j in 0..o {
                    out.data[i * o + j] += bm.data[j];
                }
            }
        }
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.rows, "matmul inner dimension");
        let (n, k, m) = (am.rows, am.cols, bm.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            for p in 0..k {
                let av = am.data[i * k + p];
                if av == T::zero() {
                    continue;
                }
                for j in 0..m {
                    out.data[i * m + j] += av * bm.data[p * m + j];
                }
            }
        }
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut out = Matrix::zeros(am.cols, am.rows);
        for i in 0..am.rows {
            for j in 0..am.cols {
                out.data[j * am.rows + i] = am.data[i * am.cols + j];
            }
        }
        self.push(out, Op::Transpose(a))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "elementwise shape mismatch");
        let data = am.data.iter().zip(&bm.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Matrix::from_vec(am.rows, am.cols, data);
        self.push(out, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let am = self.value(a);
        let data = am.data.iter().map(|x| f(*x)).collect();
        let out = Matrix::from_vec(am.rows, am.cols, data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let pm = self.value(*p);
            assert_eq!(pm.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.data[i * cols + offset..i * cols + offset + pm.cols].copy_from_slice(pm.row(i));
            }
            offset += pm.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pm = self.value(*p);
            assert_eq!(pm.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pm.data);
            rows += pm.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, range: Range<usize>) -> Var {
        let xm = self.value(x);
        assert!(range.end <= xm.cols, "slice_cols out of range");
        let w = range.len();
        let mut out = Matrix::zeros(xm.rows, w);
        for i in 0..xm.rows {
            out.data[i * w..(i + 1) * w].copy_from_slice(&xm.row(i)[range.clone()]);
        }
        self.push(out, Op::SliceCols { x, start: range.start })
    }

    /// Gathers rows (repeats allowed); doubles as embedding lookup.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xm = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * xm.cols);
        for &r in rows {
            data.extend_from_slice(xm.row(r));
        }
        let out = Matrix::from_vec(rows.len(), xm.cols, data);
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() })
    }

    /// Softmax down each column.
    pub fn softmax_cols(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut out = xm.clone();
        for j in 0..xm.cols {
            let mut mx = T::neg_infinity();
            for i in 0..xm.rows {
                mx = mx.max(xm.at(i, j));
            }
            let mut sum = T::zero();
            for i in 0..xm.rows {
                let e = (xm.at(i, j) - mx).exp();
                out.data[i * xm.cols + j] = e;
                sum += e;
            }
            for i in 0..xm.rows {
                out.data[i * xm.cols + j] /= sum;
            }
        }
        self.push(out, Op::SoftmaxCols(x))
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut out = xm.clone();
        for i in 0..xm.rows {
            let row = &mut out.data[i * xm.cols..(i + 1) * xm.cols];
            let mx = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Cosine similarity of every row of `m` with the row vector `q`, as an `n×1` column.
    pub fn row_cosine(&mut self, m: Var, q: Var) -> Var {
        let (mm, qm) = (self.value(m), self.value(q));
        assert_eq!(qm.rows, 1, "row_cosine query must be a row vector");
        assert_eq!(mm.cols, qm.cols, "row_cosine width mismatch");
        let eps = T::eps();
        let qn = norm(&qm.data).max(eps);
        let mut out = Matrix::zeros(mm.rows, 1);
        for i in 0..mm.rows {
            let r = mm.row(i);
            let rn = norm(r).max(eps);
            out.data[i] = dot(r, &qm.data) / (rn * qn);
        }
        self.push(out, Op::RowCosine { m, q })
    }

    /// Maximum of each row range of the column `x`; empty ranges yield `empty`.
    pub fn segment_max(&mut self, x: Var, segments: &[Range<usize>], empty: T) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.cols, 1, "segment_max expects a column");
        let mut out = Matrix::zeros(segments.len(), 1);
        let mut argmax = Vec::with_capacity(segments.len());
        for (s, seg) in segments.iter().enumerate() {
            let mut best: Option<usize> = None;
            for i in seg.clone() {
                if best.is_none_or(|b| xm.data[i] > xm.data[b]) {
                    best = Some(i);
                }
            }
            out.data[s] = best.map_or(empty, |b| xm.data[b]);
            argmax.push(best);
        }
        self.push(out, Op::SegmentMax { x, argmax })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let n = T::lit(xm.data.len() as f64);
        let v = xm.data.iter().copied().sum::<T>() / n;
        self.push(Matrix::scalar(v), Op::MeanAll(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = self.value(x).data.iter().copied().sum::<T>();
        self.push(Matrix::scalar(v), Op::SumAll(x))
    }

    /// Column means as a `1×cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let n = T::lit(xm.rows as f64);
        let mut out = Matrix::zeros(1, xm.cols);
        for i in 0..xm.rows {
            for j in 0..xm.cols {
                out.data[j] += xm.at(i, j);
            }
        }
        for v in &mut out.data {
            *v /= n;
        }
        self.push(out, Op::MeanRows(x))
    }

    /// Mean binary cross-entropy of `logits` against `targets` in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Var {
        let lm = self.value(logits);
        assert_eq!(lm.data.len(), targets.len(), "bce target count");
        let mut total = T::zero();
        for (z, y) in lm.data.iter().zip(targets) {
            total += z.max(T::zero()) - *z * *y + (T::one() + (-z.abs()).exp()).ln();
        }
        let v = total / T::lit(targets.len().max(1) as f64);
        self.push(
            Matrix::scalar(v),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Gradients of the scalar node `output` with respect to every node.
    /// Entries are `None` for nodes that do not influence `output`.
    pub fn backward(&self, output: Var) -> Vec<Option<Matrix<T>>> {
        assert_eq!(self.shape(output), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |v: Var, delta: Matrix<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xm, wm) = (self.value(*x), self.value(*w));
                let (n, d, o) = (xm.rows, xm.cols, wm.rows);
                let mut dx = Matrix::zeros(n, d);
                let mut dw = Matrix::zeros(o, d);
                for i in 0..n {
                    for j in 0..o {
                        let gij = g.data[i * o + j];
                        if gij == T::zero() {
                            continue;
                        }
                        for k in 0..d {
                            dx.data[i * d + k] += gij * wm.data[j * d + k];
                            dw.data[j * d + k] += gij * xm.data[i * d + k];
                        }
                    }
                }
                if let Some(b) = b {
                    let mut db = Matrix::zeros(1, o);
                    for i in 0..n {
                        for j in 0..o {
                            db.data[j] += g.data[i * o + j];
                        }
                    }
                    acc(*b, db);
                }
                acc(*x, dx);
                acc(*w, dw);
            }
            Op::MatMul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let (n, k, m) = (am.rows, am.cols, bm.cols);
                let mut da = Matrix::zeros(n, k);
                let mut db = Matrix::zeros(k, m);
                for i in 0..n {
                    for p in 0..k {
                        let mut s = T::zero();
                        for j in 0..m {
                            let gij = g.data[i * m + j];
                            s += gij * bm.data[p * m + j];
                            db.data[p * m + j] += am.data[i * k + p] * gij;
                        }
                        da.data[i * k + p] = s;
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Transpose(a) => {
                let mut da = Matrix::zeros(g.cols, g.rows);
                for i in 0..g.rows {
                    for j in 0..g.cols {
                        da.data[j * g.rows + i] = g.data[i * g.cols + j];
                    }
                }
                acc(*a, da);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let neg = g.data.iter().map(|v| -*v).collect();
                acc(*b, Matrix::from_vec(g.rows, g.cols, neg));
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let da = g.data.iter().zip(&bm.data).map(|(g, b)| *g * *b).collect();
                let db = g.data.iter().zip(&am.data).map(|(g, a)| *g * *a).collect();
                acc(*a, Matrix::from_vec(g.rows, g.cols, da));
                acc(*b, Matrix::from_vec(g.rows, g.cols, db));
            }
            Op::Scale(a, c) => {
                let da = g.data.iter().map(|v| *v * *c).collect();
                acc(*a, Matrix::from_vec(g.rows, g.cols, da));
            }
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => {
                let da = g.data.iter().zip(&y.data).map(|(g, s)| *g * *s * (T::one() - *s)).collect();
                acc(*a, Matrix::from_vec(g.rows, g.cols, da));
            }
            Op::Tanh(a) => {
                let da = g.data.iter().zip(&y.data).map(|(g, t)| *g * (T::one() - *t * *t)).collect();
                acc(*a, Matrix::from_vec(g.rows, g.cols, da));
            }
            Op::Relu(a) => {
                let am = self.value(*a);
                let da = g
                    .data
                    .iter()
                    .zip(&am.data)
                    .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                    .collect();
                acc(*a, Matrix::from_vec(g.rows, g.cols, da));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    let mut dp = Matrix::zeros(g.rows, w);
                    for i in 0..g.rows {
                        dp.data[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data[i * g.cols + offset..i * g.cols + offset + w]);
                    }
                    offset += w;
                    acc(*p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for p in parts {
                    let r = self.shape(*p).0;
                    let dp = Matrix::from_vec(r, g.cols, g.data[row * g.cols..(row + r) * g.cols].to_vec());
                    row += r;
                    acc(*p, dp);
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.shape(*x);
                let mut dx = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    dx.data[i * cols + start..i * cols + start + g.cols].copy_from_slice(g.row(i));
                }
                acc(*x, dx);
            }
            Op::SelectRows { x, rows } => {
                let (r, c) = self.shape(*x);
                let mut dx = Matrix::zeros(r, c);
                for (k, &src) in rows.iter().enumerate() {
                    for j in 0..c {
                        dx.data[src * c + j] += g.data[k * c + j];
                    }
                }
                acc(*x, dx);
            }
            Op::SoftmaxCols(x) => {
                let mut dx = Matrix::zeros(y.rows, y.cols);
                for j in 0..y.cols {
                    let mut dotp = T::zero();
                    for i in 0..y.rows {
                        dotp += g.at(i, j) * y.at(i, j);
                    }
                    for i in 0..y.rows {
                        dx.data[i * y.cols + j] = y.at(i, j) * (g.at(i, j) - dotp);
                    }
                }
                acc(*x, dx);
            }
            Op::SoftmaxRows(x) => {
                let mut dx = Matrix::zeros(y.rows, y.cols);
                for i in 0..y.rows {
                    let dotp = dot(g.row(i), y.row(i));
                    for j in 0..y.cols {
                        dx.data[i * y.cols + j] = y.at(i, j) * (g.at(i, j) - dotp);
                    }
                }
                acc(*x, dx);
            }
            Op::RowCosine { m, q } => {
                let (mm, qm) = (self.value(*m), self.value(*q));
                let eps = T::eps();
                let qn_raw = norm(&qm.data);
                let qn = qn_raw.max(eps);
                let mut dm = Matrix::zeros(mm.rows, mm.cols);
                let mut dq = Matrix::zeros(1, qm.cols);
                for i in 0..mm.rows {
                    let gi = g.data[i];
                    if gi == T::zero() {
                        continue;
                    }
                    let r = mm.row(i);
                    let rn_raw = norm(r);
                    let rn = rn_raw.max(eps);
                    let c = y.data[i];
                    for k in 0..mm.cols {
                        let mut d_r = qm.data[k] / (rn * qn);
                        if rn_raw > eps {
                            d_r -= c * r[k] / (rn * rn);
                        }
                        dm.data[i * mm.cols + k] = gi * d_r;
                        let mut d_q = r[k] / (rn * qn);
                        if qn_raw > eps {
                            d_q -= c * qm.data[k] / (qn * qn);
                        }
                        dq.data[k] += gi * d_q;
                    }
                }
                acc(*m, dm);
                acc(*q, dq);
            }
            Op::SegmentMax { x, argmax } => {
                let (r, c) = self.shape(*x);
                let mut dx = Matrix::zeros(r, c);
                for (s, best) in argmax.iter().enumerate() {
                    if let Some(b) = best {
                        dx.data[*b] += g.data[s];
                    }
                }
                acc(*x, dx);
            }
            Op::MeanAll(x) => {
                let (r, c) = self.shape(*x);
                let v = g.data[0] / T::lit((r * c) as f64);
                acc(*x, Matrix::from_vec(r, c, vec![v; r * c]));
            }
            Op::SumAll(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Matrix::from_vec(r, c, vec![g.data[0]; r * c]));
            }
            Op::MeanRows(x) => {
                let (r, c) = self.shape(*x);
                let n = T::lit(r as f64);
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        dx.data[i * c + j] = g.data[j] / n;
                    }
                }
                acc(*x, dx);
            }
            Op::BceWithLogits { logits, targets } => {
                let lm = self.value(*logits);
                let k = T::lit(targets.len().max(1) as f64);
                let d = lm
                    .data
                    .iter()
                    .zip(targets)
                    .map(|(z, t)| g.data[0] * (sigmoid(*z) - *t) / k)
                    .collect();
                acc(*logits, Matrix::from_vec(lm.rows, lm.cols, d));
            }
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

#[inline]
fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
