//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation records its inputs on a [`Tape`] together with the
//! forward value; [`Tape::backward`] walks the record in reverse and applies
//! the per-operation adjoint. Evaluation order is fixed, so results are
//! bit-reproducible.

use std::collections::HashMap;

use super::matrix::{softmax_in_place, Matrix};
use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Sigmoid,
    Tanh,
    Identity,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Ln(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn activate(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
        Activation::Sigmoid => {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// Derivative of [`activate`] at `x`.
pub fn activate_grad(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Gelu => {
            let u = GELU_C * (x + GELU_A * x * x * x);
            let t = u.tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        }
        Activation::Sigmoid => {
            let s = activate(Activation::Sigmoid, x);
            s * (1.0 - s)
        }
        Activation::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        Activation::Identity => 1.0,
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf bound to a named parameter; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `a + b` with the `1 x cols` row `b` broadcast over rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(self.shape_err("add_row", a, b));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    /// Elementwise `a * b` with the row `b` broadcast over rows of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(self.shape_err("mul_row", a, b));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o *= x;
            }
        }
        Ok(self.push(out, Op::MulRow(a, b)))
    }

    /// Scales row `i` of `a` by `b[i, 0]`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.cols() != 1 || bv.rows() != av.rows() {
            return Err(self.shape_err("mul_col", a, b));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let s = bv.get(r, 0);
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        Ok(self.push(out, Op::MulCol(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let value = self.value(a).map(|x| activate(act, x));
        self.push(value, Op::Act(a, act))
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Input("ln of non-positive value".into()));
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(value, Op::Ln(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = super::matrix::softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let n = out.cols() as f64;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        self.push(out, Op::LayerNorm(a, eps))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: av.shape(),
                right: (start, end),
            });
        }
        let mut out = Matrix::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c..c + src.len()].copy_from_slice(src);
                c += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row `i` of the result is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let mut out = Matrix::zeros(indices.len(), av.cols());
        for (i, &src) in indices.iter().enumerate() {
            if src >= av.rows() {
                return Err(Error::Lookup {
                    kind: "row",
                    id: src,
                    len: av.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(av.row(src));
        }
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// `out[indices[i]] += a[i]` into an `n_rows`-row zero matrix. Rows are
    /// accumulated in index order.
    pub fn scatter_add_rows(&mut self, a: Var, indices: &[usize], n_rows: usize) -> Result<Var> {
        let av = self.value(a);
        if indices.len() != av.rows() {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                left: av.shape(),
                right: (indices.len(), n_rows),
            });
        }
        let mut out = Matrix::zeros(n_rows, av.cols());
        for (i, &dst) in indices.iter().enumerate() {
            if dst >= n_rows {
                return Err(Error::Lookup {
                    kind: "row",
                    id: dst,
                    len: n_rows,
                });
            }
            for (o, x) in out.row_mut(dst).iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(a, indices.to_vec())))
    }

    /// Softmax of a column vector within groups: entries sharing a segment
    /// id are normalized together.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if av.cols() != 1 || av.rows() != segments.len() {
            return Err(Error::Shape {
                op: "segment_softmax",
                left: av.shape(),
                right: (segments.len(), 1),
            });
        }
        let mut out = av.clone();
        for members in group_members(segments).values() {
            let mut vals: Vec<f64> = members.iter().map(|&i| av.get(i, 0)).collect();
            softmax_in_place(&mut vals);
            for (&i, v) in members.iter().zip(vals) {
                out.set(i, 0, v);
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(a, segments.to_vec())))
    }

    /// `1 x cols` mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(1, av.cols());
        if av.rows() > 0 {
            for r in 0..av.rows() {
                for (o, x) in out.data_mut().iter_mut().zip(av.row(r)) {
                    *o += x;
                }
            }
            let n = av.rows() as f64;
            for o in out.data_mut() {
                *o /= n;
            }
        }
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// `x W + b` for parameter names `w`, `b`.
    pub fn linear(&mut self, store: &ParamStore, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = self.param(store, w)?;
        let b = self.param(store, b)?;
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Back-propagates from the scalar `output`, seeded with `seed`.
    /// Returns gradients of every parameter leaf that was touched.
    pub fn backward(&self, output: Var, seed: f64) -> Result<Gradients> {
        if self.shape(output) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: self.shape(output),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(seed));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let bt = self.value(*b).transpose();
                    let ga = g.matmul(&bt)?;
                    let at = self.value(*a).transpose();
                    let gb = at.matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulRow(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, c, g.get(r, c) * bv.get(0, c));
                            gb.data_mut()[c] += g.get(r, c) * av.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulCol(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = Matrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        let s = bv.get(r, 0);
                        let mut acc = 0.0;
                        for c in 0..g.cols() {
                            ga.set(r, c, g.get(r, c) * s);
                            acc += g.get(r, c) * av.get(r, c);
                        }
                        gb.set(r, 0, acc);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Act(a, act) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (o, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        *o *= activate_grad(*act, xv);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Ln(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (o, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        *o /= xv;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows() {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let n = x.cols() as f64;
                    let mut ga = g.clone();
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                        for c in 0..x.cols() {
                            ga.set(r, c, inv * (gr[c] - mean_g - yr[c] * mean_gy));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let (rows, cols) = self.shape(p);
                        let mut gp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c..c + cols]);
                        }
                        c += cols;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::GatherRows(a, indices) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    for (i, &src) in indices.iter().enumerate() {
                        for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, indices) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    for (i, &dst) in indices.iter().enumerate() {
                        ga.row_mut(i).copy_from_slice(g.row(dst));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentSoftmax(a, segments) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for members in group_members(segments).values() {
                        let dot: f64 = members.iter().map(|&i| y.get(i, 0) * g.get(i, 0)).sum();
                        for &i in members {
                            ga.set(i, 0, y.get(i, 0) * (g.get(i, 0) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    if rows > 0 {
                        let inv = 1.0 / rows as f64;
                        for r in 0..rows {
                            for (o, x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                                *o = x * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g.item()));
                }
            }
        }

        let mut out = Gradients::default();
        for (name, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                out.accumulate(name, &g);
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn group_members(segments: &[usize]) -> std::collections::BTreeMap<usize, Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &s) in segments.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_derivatives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for act in [Activation::Gelu, Activation::Sigmoid, Activation::Tanh, Activation::Identity] {
            for _ in 0..1000 {
                let x: f64 = rng.random_range(-6.0..6.0);
                let numeric = (activate(act, x + h) - activate(act, x - h)) / (2.0 * h);
                let analytic = activate_grad(act, x);
                assert!(
                    (numeric - analytic).abs() <= 1e-7,
                    "{act:?} at {x}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn segment_softmax_normalizes_each_group() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[1.0], [2.0], [0.5], [3.0]]));
        let y = t.segment_softmax(x, &[0, 1, 0, 1]).unwrap();
        let v = t.value(y);
        assert!((v.get(0, 0) + v.get(2, 0) - 1.0).abs() < 1e-12);
        assert!((v.get(1, 0) + v.get(3, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scatter_then_gather_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let s = t.scatter_add_rows(x, &[2, 2], 3).unwrap();
        assert_eq!(t.value(s).row(2), [4.0, 6.0]);
        assert_eq!(t.value(s).row(0), [0.0, 0.0]);
        assert!(t.gather_rows(x, &[5]).is_err());
    }
}
