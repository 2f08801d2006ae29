//! Reverse-mode automatic differentiation over small dense `f64` matrices.
//!
//! Values are computed eagerly as nodes are pushed, so a caller can read
//! intermediate results (e.g. to derive stop-gradient penalties) before
//! finishing the graph.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}{:?}", self.rows, self.cols, self.data)
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length does not match {rows}x{cols}"
        );
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "not a scalar");
        self.data[0]
    }

    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(
            self.cols,
            b.rows,
            "matmul {:?} x {:?}",
            self.shape(),
            b.shape()
        );
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (oj, bj) in o.iter_mut().zip(b.row(k)) {
                    *oj += a * bj;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; leaves pushed first occupy the lowest slots.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Gather(Var, Vec<usize>),
    SqErrSum(Var, Mat),
    CeSum(Var, Vec<usize>),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax_row(row: &[f64], out: &mut [f64], len: usize) {
    let m = row[..len].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &x) in out[..len].iter_mut().zip(&row[..len]) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in &mut out[..len] {
        *o /= s;
    }
    for o in &mut out[len..] {
        *o = 0.0;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Add(a, b))
    }

    /// `a` (n x m) plus the row vector `r` (1 x m) on every row.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, y) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols), y.shape(), "add_row shape mismatch");
        let v = Mat::from_fn(x.rows, x.cols, |i, j| x.get(i, j) + y.data[j]);
        self.push(v, Op::AddRow(a, r))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    /// Row `i` of `a` times the scalar `s[i]`, with `s` an n x 1 column.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let (x, y) = (self.value(a), self.value(s));
        assert_eq!((x.rows, 1), y.shape(), "scale_rows shape mismatch");
        let v = Mat::from_fn(x.rows, x.cols, |i, j| x.get(i, j) * y.data[i]);
        self.push(v, Op::ScaleRows(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * k).collect());
        self.push(v, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(
            x.rows,
            x.cols,
            x.data.iter().map(|p| 1.0 / (1.0 + (-p).exp())).collect(),
        );
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|p| p.tanh()).collect());
        self.push(v, Op::Tanh(a))
    }

    /// Row-wise softmax. With `causal`, row `i` only sees columns `0..=i`;
    /// masked entries come out as exact zeros.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let len = if causal { (i + 1).min(x.cols) } else { x.cols };
            softmax_row(x.row(i), &mut v.data[i * x.cols..(i + 1) * x.cols], len);
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.data[i * cols + off..i * cols + off + m.cols].copy_from_slice(m.row(i));
            }
            off += m.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Picks rows of `table` by index, as an embedding lookup.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let v = Mat::from_vec(idx.len(), t.cols, data);
        self.push(v, Op::Gather(table, idx.to_vec()))
    }

    /// Sum of squared differences against a constant target, as a 1x1.
    pub fn sq_err_sum(&mut self, a: Var, target: &Mat) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), target.shape(), "sq_err_sum shape mismatch");
        let s: f64 = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        self.push(
            Mat::from_vec(1, 1, vec![s]),
            Op::SqErrSum(a, target.clone()),
        )
    }

    /// Summed negative log-softmax of `targets[i]` in row `i` of `logits`.
    pub fn ce_sum(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len(), "ce_sum needs one target per row");
        let mut s = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            s += lse - row[t];
        }
        self.push(
            Mat::from_vec(1, 1, vec![s]),
            Op::CeSum(logits, targets.to_vec()),
        )
    }

    /// Gradients of the scalar `out` with respect to every node. Entries for
    /// nodes that do not influence `out` are `None`.
    pub fn backward(&self, out: Var) -> Vec<Option<Mat>> {
        assert_eq!(
            self.value(out).shape(),
            (1, 1),
            "backward needs a scalar output"
        );
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        let acc = |g: &mut Vec<Option<Mat>>, v: Var, d: Mat| match &mut g[v.0] {
            Some(m) => m.add_assign(&d),
            slot => *slot = Some(d),
        };
        for idx in (0..=out.0).rev() {
            let Some(gy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut g, *a, gy.matmul(&bv.transpose()));
                    acc(&mut g, *b, av.transpose().matmul(&gy));
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gy.clone());
                    acc(&mut g, *b, gy.clone());
                }
                Op::AddRow(a, r) => {
                    let mut gr = Mat::zeros(1, gy.cols);
                    for i in 0..gy.rows {
                        for (s, v) in gr.data.iter_mut().zip(gy.row(i)) {
                            *s += v;
                        }
                    }
                    acc(&mut g, *a, gy.clone());
                    acc(&mut g, *r, gr);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = gy.data.iter().zip(&bv.data).map(|(p, q)| p * q).collect();
                    let gb = gy.data.iter().zip(&av.data).map(|(p, q)| p * q).collect();
                    acc(&mut g, *a, Mat::from_vec(gy.rows, gy.cols, ga));
                    acc(&mut g, *b, Mat::from_vec(gy.rows, gy.cols, gb));
                }
                Op::ScaleRows(a, s) => {
                    let (av, sv) = (self.value(*a), self.value(*s));
                    let ga = Mat::from_fn(gy.rows, gy.cols, |i, j| gy.get(i, j) * sv.data[i]);
                    let gs = Mat::from_fn(gy.rows, 1, |i, _| {
                        gy.row(i).iter().zip(av.row(i)).map(|(p, q)| p * q).sum()
                    });
                    acc(&mut g, *a, ga);
                    acc(&mut g, *s, gs);
                }
                Op::Scale(a, k) => {
                    let ga = gy.data.iter().map(|p| p * k).collect();
                    acc(&mut g, *a, Mat::from_vec(gy.rows, gy.cols, ga));
                }
                Op::Sigmoid(a) => {
                    let ga = gy
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(p, s)| p * s * (1.0 - s))
                        .collect();
                    acc(&mut g, *a, Mat::from_vec(gy.rows, gy.cols, ga));
                }
                Op::Tanh(a) => {
                    let ga = gy
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(p, t)| p * (1.0 - t * t))
                        .collect();
                    acc(&mut g, *a, Mat::from_vec(gy.rows, gy.cols, ga));
                }
                Op::Softmax(a) => {
                    let mut ga = Mat::zeros(gy.rows, gy.cols);
                    for i in 0..gy.rows {
                        let (yr, gr) = (y.row(i), gy.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..gy.cols {
                            ga.data[i * gy.cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows;
                        let d = gy.data[off * gy.cols..(off + r) * gy.cols].to_vec();
                        acc(&mut g, p, Mat::from_vec(r, gy.cols, d));
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols;
                        acc(
                            &mut g,
                            p,
                            Mat::from_fn(gy.rows, c, |i, j| gy.get(i, off + j)),
                        );
                        off += c;
                    }
                }
                Op::Transpose(a) => acc(&mut g, *a, gy.transpose()),
                Op::Gather(t, idx) => {
                    let tv = self.value(*t);
                    let mut gt = Mat::zeros(tv.rows, tv.cols);
                    for (k, &i) in idx.iter().enumerate() {
                        for (s, v) in gt.data[i * tv.cols..(i + 1) * tv.cols]
                            .iter_mut()
                            .zip(gy.row(k))
                        {
                            *s += v;
                        }
                    }
                    acc(&mut g, *t, gt);
                }
                Op::SqErrSum(a, target) => {
                    let k = gy.scalar();
                    let av = self.value(*a);
                    let ga = av
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(p, q)| 2.0 * k * (p - q))
                        .collect();
                    acc(&mut g, *a, Mat::from_vec(av.rows, av.cols, ga));
                }
                Op::CeSum(a, targets) => {
                    let k = gy.scalar();
                    let av = self.value(*a);
                    let mut ga = Mat::zeros(av.rows, av.cols);
                    for (i, &t) in targets.iter().enumerate() {
                        softmax_row(
                            av.row(i),
                            &mut ga.data[i * av.cols..(i + 1) * av.cols],
                            av.cols,
                        );
                        ga.data[i * av.cols + t] -= 1.0;
                    }
                    for v in &mut ga.data {
                        *v *= k;
                    }
                    acc(&mut g, *a, ga);
                }
            }
            g[idx] = Some(gy);
        }
        g
    }
}
