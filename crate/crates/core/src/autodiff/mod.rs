//! Reverse-mode automatic differentiation over real matrices.
//!
//! A [`Tape`] records every value produced from a gradient-carrying operand;
//! forward values are computed eagerly. Scalars are `1 × 1`, vectors are
//! columns. [`Tape::backward`] walks the tape once in reverse (insertion order
//! is a topological order) and accumulates adjoints.

mod adam;

pub use adam::{adam_step, AdamConfig, AdamState, Parameter};

use std::f64::consts::LN_2;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    Square(usize),
    Reciprocal(usize),
    Log2(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Tanh(usize),
    Scale(usize, f64),
    AddConst(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    Reshape(usize),
    Transpose(usize),
    /// `x + 1·b` for a row vector `b`.
    AddRow(usize, usize),
    /// `x · s` for a `1 × 1` node `s`.
    MulScalar(usize, usize),
    /// Row `i` of `x` times `c[i]`, with `c` a column.
    ScaleRows(usize, usize),
    /// `max(x, floor)`; the mask marks entries passed through.
    ClampMin(usize, Array2<bool>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Array2<f64>>>>,
}

fn dims(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
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

    pub fn value(&self, x: Var) -> &Array2<f64> {
        &self.nodes[x.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, x: Var) -> f64 {
        let v = self.value(x);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, xs: &[Var]) -> bool {
        xs.iter().any(|x| self.nodes[x.0].requires_grad)
    }

    /// A leaf that gradients flow into.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, p: &Parameter) -> Var {
        self.push(p.value.clone(), Op::Leaf, p.requires_grad)
    }

    /// Same value, no parents: gradients stop here.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::shape(op, dims(va), dims(vb)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a.0, b.0), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape("matmul", format!("{}xK, Kx{}", va.nrows(), vb.ncols()), format!("{} · {}", dims(va), dims(vb))));
        }
        let value = va.dot(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x.0), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|a| a * a);
        let rg = self.rg(&[x]);
        self.push(value, Op::Square(x.0), rg)
    }

    pub fn reciprocal(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.iter().any(|a| *a == 0.0) {
            return Err(Error::domain("reciprocal", "division by zero"));
        }
        let value = v.mapv(|a| 1.0 / a);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reciprocal(x.0), rg))
    }

    pub fn log2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if let Some(bad) = v.iter().find(|a| !(**a > 0.0)) {
            return Err(Error::domain("log2", format!("argument {bad} is not positive")));
        }
        let value = v.mapv(f64::log2);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Log2(x.0), rg))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if let Some(bad) = v.iter().find(|a| !(**a > 0.0)) {
            return Err(Error::domain("sqrt", format!("argument {bad} is not positive")));
        }
        let value = v.mapv(f64::sqrt);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Sqrt(x.0), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(sigmoid);
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid(x.0), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh(x.0), rg)
    }

    /// `c · x` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x) * c;
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x.0, c), rg)
    }

    /// `x + c` elementwise for a constant `c`.
    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x) + c;
        let rg = self.rg(&[x]);
        self.push(value, Op::AddConst(x.0), rg)
    }

    /// Horizontal concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "at least one operand", 0))?;
        let rows = self.value(*first).nrows();
        if let Some(bad) = xs.iter().find(|x| self.value(**x).nrows() != rows) {
            return Err(Error::shape("concat", format!("{rows} rows"), dims(self.value(*bad))));
        }
        let views: Vec<_> = xs.iter().map(|x| self.value(*x).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = self.rg(xs);
        Ok(self.push(value, Op::ConcatCols(xs.iter().map(|x| x.0).collect()), rg))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        if start >= end || end > v.ncols() {
            return Err(Error::shape("slice", format!("columns {start}..{end}"), dims(v)));
        }
        let value = v.slice(s![.., start..end]).to_owned();
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceCols(x.0, start), rg))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(x);
        if v.len() != rows * cols {
            return Err(Error::shape("reshape", format!("{} elements", v.len()), format!("{rows}x{cols}")));
        }
        let data: Vec<f64> = v.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), data).expect("length checked");
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x.0), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).t().to_owned();
        let rg = self.rg(&[x]);
        self.push(value, Op::Transpose(x.0), rg)
    }

    /// Adds the row vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::shape("add_row", format!("1x{}", vx.ncols()), dims(vb)));
        }
        let value = vx + vb;
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, Op::AddRow(x.0, b.0), rg))
    }

    /// Multiplies `x` by the `1 × 1` node `c`.
    pub fn mul_scalar(&mut self, x: Var, c: Var) -> Result<Var> {
        let vc = self.value(c);
        if vc.dim() != (1, 1) {
            return Err(Error::shape("mul_scalar", "1x1", dims(vc)));
        }
        let value = self.value(x) * vc[[0, 0]];
        let rg = self.rg(&[x, c]);
        Ok(self.push(value, Op::MulScalar(x.0, c.0), rg))
    }

    /// Multiplies row `i` of `x` by `c[i]` for a column `c`.
    pub fn scale_rows(&mut self, x: Var, c: Var) -> Result<Var> {
        let (vx, vc) = (self.value(x), self.value(c));
        if vc.dim() != (vx.nrows(), 1) {
            return Err(Error::shape("scale_rows", format!("{}x1", vx.nrows()), dims(vc)));
        }
        let value = vx * vc;
        let rg = self.rg(&[x, c]);
        Ok(self.push(value, Op::ScaleRows(x.0, c.0), rg))
    }

    /// `max(x, floor)`; entries at or below the floor receive no gradient.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x);
        let pass = v.mapv(|a| a > floor);
        let value = v.mapv(|a| a.max(floor));
        let rg = self.rg(&[x]);
        self.push(value, Op::ClampMin(x.0, pass), rg)
    }

    /// Runs the reverse pass from a scalar root.
    ///
    /// May be called once per tape; gradients are then read with
    /// [`Tape::grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.value(root).dim() != (1, 1) {
            return Err(Error::shape("backward", "1x1 root", dims(self.value(root))));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Array2::ones((1, 1)));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Adjoint of `x` after [`Tape::backward`]; `None` if `x` did not
    /// influence the root through a gradient-carrying path.
    pub fn grad(&self, x: Var) -> Option<&Array2<f64>> {
        self.grads.as_ref()?.get(x.0)?.as_ref()
    }

    /// Adds the adjoint of `x` to the parameter's gradient buffer. A
    /// parameter that did not reach the root receives zeros.
    pub fn accumulate_into(&self, x: Var, p: &mut Parameter) -> Result<()> {
        if self.grads.is_none() {
            return Err(Error::State("accumulate_into before backward".into()));
        }
        match self.grad(x) {
            Some(g) => p.accumulate_grad(g),
            None => p.accumulate_grad(&Array2::zeros(p.value.dim())),
        }
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let val = |j: usize| &nodes[j].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if wants(*b) {
                    acc(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g * val(*b));
                }
                if wants(*b) {
                    acc(grads, *b, g * val(*a));
                }
            }
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.dot(&val(*b).t()));
                }
                if wants(*b) {
                    acc(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::Sum(x) => acc(grads, *x, Array2::from_elem(val(*x).dim(), g[[0, 0]])),
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                acc(grads, *x, Array2::from_elem(val(*x).dim(), g[[0, 0]] / n));
            }
            Op::Square(x) => acc(grads, *x, g * &(val(*x) * 2.0)),
            Op::Reciprocal(x) => {
                let y = &nodes[i].value;
                acc(grads, *x, -(g * &(y * y)));
            }
            Op::Log2(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*x)).for_each(|d, &a| *d /= a * LN_2);
                acc(grads, *x, d);
            }
            Op::Sqrt(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&nodes[i].value).for_each(|d, &y| *d *= 0.5 / y);
                acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&nodes[i].value).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(grads, *x, d);
            }
            Op::Tanh(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&nodes[i].value).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(grads, *x, d);
            }
            Op::Scale(x, c) => acc(grads, *x, g * *c),
            Op::AddConst(x) => acc(grads, *x, g.clone()),
            Op::ConcatCols(xs) => {
                let mut start = 0;
                for x in xs {
                    let width = val(*x).ncols();
                    if wants(*x) {
                        acc(grads, *x, g.slice(s![.., start..start + width]).to_owned());
                    }
                    start += width;
                }
            }
            Op::SliceCols(x, start) => {
                if wants(*x) {
                    let width = g.ncols();
                    let slot = grads[*x].get_or_insert_with(|| Array2::zeros(val(*x).dim()));
                    let mut view = slot.slice_mut(s![.., *start..*start + width]);
                    view += g;
                }
            }
            Op::Reshape(x) => {
                let data: Vec<f64> = g.iter().copied().collect();
                acc(grads, *x, Array2::from_shape_vec(val(*x).dim(), data).expect("same length"));
            }
            Op::Transpose(x) => acc(grads, *x, g.t().to_owned()),
            Op::AddRow(x, b) => {
                if wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if wants(*b) {
                    acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulScalar(x, c) => {
                let cv = val(*c)[[0, 0]];
                if wants(*x) {
                    acc(grads, *x, g * cv);
                }
                if wants(*c) {
                    let dc = (g * val(*x)).sum();
                    acc(grads, *c, Array2::from_elem((1, 1), dc));
                }
            }
            Op::ScaleRows(x, c) => {
                if wants(*x) {
                    acc(grads, *x, g * val(*c));
                }
                if wants(*c) {
                    let dc = (g * val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(grads, *c, dc);
                }
            }
            Op::ClampMin(x, pass) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(pass).for_each(|d, &p| {
                    if !p {
                        *d = 0.0;
                    }
                });
                acc(grads, *x, d);
            }
        }
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], j: usize, contribution: Array2<f64>) {
    match &mut grads[j] {
        Some(existing) => *existing += &contribution,
        slot @ None => *slot = Some(contribution),
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;
    use ndarray::array;

    fn random(rng: &mut GaussianStream, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.standard_normal())
    }

    /// Checks the gradient of `f` at `x0` against central differences.
    fn gradcheck(x0: &Array2<f64>, f: impl Fn(&mut Tape, Var) -> Result<Var>, tol: f64) {
        let mut tape = Tape::new();
        let x = tape.variable(x0.clone());
        let y = f(&mut tape, x).unwrap();
        tape.backward(y).unwrap();
        let analytic = tape.grad(x).cloned().unwrap_or_else(|| Array2::zeros(x0.dim()));
        let eval = |xv: Array2<f64>| {
            let mut t = Tape::new();
            let x = t.constant(xv);
            let y = f(&mut t, x).unwrap();
            t.scalar(y)
        };
        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let mut xp = x0.clone();
            xp[[r, c]] += h;
            let mut xm = x0.clone();
            xm[[r, c]] -= h;
            let numeric = (eval(xp) - eval(xm)) / (2.0 * h);
            let a = analytic[[r, c]];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            assert!(rel < tol, "coord {idx}: analytic {a}, numeric {numeric}, rel {rel}");
        }
    }

    /// Reduces a matrix to a scalar with distinct weights per entry so every
    /// output coordinate matters.
    fn weighted_sum(t: &mut Tape, y: Var) -> Result<Var> {
        let dim = t.value(y).dim();
        let weights = Array2::from_shape_fn(dim, |(i, j)| 0.3 + 0.7 * ((i * 7 + j * 3) % 5) as f64);
        let w = t.constant(weights);
        let p = t.mul(y, w)?;
        Ok(t.sum(p))
    }

    #[test]
    fn elementary_values() {
        let mut t = Tape::new();
        let z = t.constant(array![[0.0]]);
        let s = t.sigmoid(z);
        let th = t.tanh(z);
        assert_eq!(t.scalar(s), 0.5);
        assert_eq!(t.scalar(th), 0.0);
    }

    #[test]
    fn log2_derivative_at_two() {
        let mut t = Tape::new();
        let x = t.variable(array![[2.0]]);
        let y = t.log2(x).unwrap();
        t.backward(y).unwrap();
        let g = t.grad(x).unwrap()[[0, 0]];
        assert!((g - 1.0 / (2.0 * LN_2)).abs() < 1e-15);
    }

    #[test]
    fn domain_and_shape_errors() {
        let mut t = Tape::new();
        let x = t.variable(array![[1.0, -1.0]]);
        assert!(matches!(t.log2(x), Err(Error::Domain { .. })));
        let y = t.variable(array![[1.0], [2.0]]);
        assert!(matches!(t.add(x, y), Err(Error::Shape { .. })));
        assert!(matches!(t.matmul(x, x), Err(Error::Shape { .. })));
        assert!(matches!(t.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut t = Tape::new();
        let x = t.variable(array![[1.0]]);
        let y = t.square(x);
        t.backward(y).unwrap();
        assert!(matches!(t.backward(y), Err(Error::State(_))));
    }

    #[test]
    fn sum_of_parameters_has_unit_grads() {
        let mut t = Tape::new();
        let xs: Vec<Var> = (0..4).map(|k| t.variable(array![[k as f64]])).collect();
        let mut acc = xs[0];
        for x in &xs[1..] {
            acc = t.add(acc, *x).unwrap();
        }
        t.backward(acc).unwrap();
        for x in xs {
            assert_eq!(t.grad(x).unwrap()[[0, 0]], 1.0);
        }
    }

    #[test]
    fn half_squared_norm_has_grad_x() {
        let x0 = array![[1.0, -2.0], [0.5, 3.0]];
        let mut t = Tape::new();
        let x = t.variable(x0.clone());
        let sq = t.square(x);
        let s = t.sum(sq);
        let y = t.scale(s, 0.5);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &x0);
    }

    #[test]
    fn detach_blocks_gradient_and_keeps_value() {
        let mut t = Tape::new();
        let x = t.variable(array![[1.5, -0.25]]);
        let d = t.detach(x);
        assert_eq!(t.value(d), t.value(x));
        let sq = t.square(d);
        let y = t.sum(sq);
        t.backward(y).unwrap();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut t = Tape::new();
        let x = t.variable(array![[3.0]]);
        let y = t.mul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        t.backward(z).unwrap();
        assert_eq!(t.grad(x).unwrap()[[0, 0]], 7.0);
    }

    #[test]
    fn gradcheck_unary_ops() {
        let mut rng = GaussianStream::new(1, 0);
        let x0 = random(&mut rng, 3, 4);
        let pos = x0.mapv(|a| a.abs() + 0.5);
        gradcheck(&x0, |t, x| weighted_sum(t, x), 1e-6);
        gradcheck(&x0, |t, x| { let y = t.square(x); weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.sigmoid(x); weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.tanh(x); weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.scale(x, -2.5); weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.add_const(x, 4.0); weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.mean(x); let z = t.square(y); Ok(t.sum(z)) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.transpose(x); weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.reshape(x, 2, 6)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.slice(x, 1, 3)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let y = t.clamp_min(x, 0.1); weighted_sum(t, y) }, 1e-6);
        gradcheck(&pos, |t, x| { let y = t.reciprocal(x)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&pos, |t, x| { let y = t.log2(x)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&pos, |t, x| { let y = t.sqrt(x)?; weighted_sum(t, y) }, 1e-6);
    }

    #[test]
    fn gradcheck_binary_ops() {
        let mut rng = GaussianStream::new(2, 0);
        let x0 = random(&mut rng, 3, 4);
        let other = random(&mut rng, 3, 4);
        let right = random(&mut rng, 4, 2);
        let row = random(&mut rng, 1, 4);
        let col = random(&mut rng, 3, 1);
        let scalar = random(&mut rng, 1, 1);

        for (lhs_is_var, tag) in [(true, "lhs"), (false, "rhs")] {
            let mk = |t: &mut Tape, x: Var, c: &Array2<f64>| {
                let c = t.constant(c.clone());
                if lhs_is_var { (x, c) } else { (c, x) }
            };
            let _ = tag;
            gradcheck(&x0, |t, x| { let (a, b) = mk(t, x, &other); let y = t.add(a, b)?; weighted_sum(t, y) }, 1e-6);
            gradcheck(&x0, |t, x| { let (a, b) = mk(t, x, &other); let y = t.sub(a, b)?; weighted_sum(t, y) }, 1e-6);
            gradcheck(&x0, |t, x| { let (a, b) = mk(t, x, &other); let y = t.mul(a, b)?; weighted_sum(t, y) }, 1e-6);
        }
        gradcheck(&x0, |t, x| { let b = t.constant(right.clone()); let y = t.matmul(x, b)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&right, |t, x| { let a = t.constant(x0.clone()); let y = t.matmul(a, x)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let b = t.constant(row.clone()); let y = t.add_row(x, b)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&row, |t, b| { let x = t.constant(x0.clone()); let y = t.add_row(x, b)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let c = t.constant(scalar.clone()); let y = t.mul_scalar(x, c)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&scalar, |t, c| { let x = t.constant(x0.clone()); let y = t.mul_scalar(x, c)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| { let c = t.constant(col.clone()); let y = t.scale_rows(x, c)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&col, |t, c| { let x = t.constant(x0.clone()); let y = t.scale_rows(x, c)?; weighted_sum(t, y) }, 1e-6);
        gradcheck(&x0, |t, x| {
            let c = t.constant(other.clone());
            let y = t.concat(&[c, x, c])?;
            weighted_sum(t, y)
        }, 1e-6);
    }

    #[test]
    fn identical_graphs_give_identical_gradients() {
        let run = || {
            let mut rng = GaussianStream::new(9, 0);
            let mut t = Tape::new();
            let x = t.variable(random(&mut rng, 4, 4));
            let w = t.constant(random(&mut rng, 4, 4));
            let y = t.matmul(x, w).unwrap();
            let y = t.tanh(y);
            let s = t.sum(y);
            t.backward(s).unwrap();
            t.grad(x).unwrap().clone()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
