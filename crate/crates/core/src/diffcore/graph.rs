//! Tape of differentiable operations.
//!
//! Nodes are appended in evaluation order, so the tape is topologically sorted
//! by construction. Every backward rule emits ordinary tape operations, which
//! makes the gradients themselves differentiable (double backprop).

use crate::error::{Error, Result};

use super::Tensor;

/// Floor applied before `sqrt` in norms and in the derivative of `acos`, so
/// their derivatives stay finite at zero.
pub const SQRT_FLOOR: f64 = 1e-300;

/// Handle to a node of a [`Graph`].
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
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sqrt(Var),
    Cos(Var),
    Sin(Var),
    Acos(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Pad(Var, usize),
    Sum(Var),
    RowSums(Var),
    ColSums(Var),
    Broadcast(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-owner tape. Separate graphs are independent and may be used from
/// different threads.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, n) | (n, 1) => Some(n),
        _ => None,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that gradients never flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [ra, ca] = ta.shape();
        let [rb, cb] = tb.shape();
        let (rows, cols) = match (broadcast_dim(ra, rb), broadcast_dim(ca, cb)) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(Error::shape(format!("{ra}x{ca}"), format!("{rb}x{cb}"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (ia, ib) = (if ra == 1 { 0 } else { r }, if rb == 1 { 0 } else { r });
            let (rowa, rowb) = (ta.row_slice(ia), tb.row_slice(ib));
            for c in 0..cols {
                let x = rowa[if ca == 1 { 0 } else { c }];
                let y = rowb[if cb == 1 { 0 } else { c }];
                data.push(f(x, y));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Elementwise sum with row/column broadcasting of size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Shift(a), |x| x + s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    /// Derivative at 0 is taken from the right (1).
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x >= 0.0 { x } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x >= 0.0 { x } else { slope * x })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    /// Fails with a domain error on inputs outside `[-1, 1]`; clamp first.
    pub fn acos(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(Error::Domain(format!("acos of {x}")));
        }
        Ok(self.unary(a, Op::Acos(a), f64::acos))
    }

    /// Gradient passes only where `lo < x < hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// `|x|` as `relu(x) + relu(-x)`; derivative 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let p = self.relu(a);
        let na = self.neg(a);
        let n = self.relu(na);
        self.add(p, n).expect("same shape")
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("at least one part", 0))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let [r, c] = self.shape(p);
            if r != rows {
                return Err(Error::shape(format!("{rows} rows"), format!("{r} rows")));
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(Error::shape(
                format!("column range within {}", t.cols()),
                format!("{start}..{end}"),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let value = Tensor::new(t.rows(), end - start, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Slice(a, start), rg))
    }

    /// Embeds `a` at column `start` of a zero matrix with `total` columns.
    fn pad(&mut self, a: Var, start: usize, total: usize) -> Var {
        let t = self.value(a);
        let mut data = vec![0.0; t.rows() * total];
        for r in 0..t.rows() {
            data[r * total + start..r * total + start + t.cols()].copy_from_slice(t.row_slice(r));
        }
        let value = Tensor::new(t.rows(), total, data).expect("pad shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Pad(a, start), rg)
    }

    /// Sum of all elements, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, `rows x 1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let value = Tensor::new(t.rows(), 1, data).expect("row sums");
        let rg = self.rg(&[a]);
        self.push(value, Op::RowSums(a), rg)
    }

    /// Per-column sums, `1 x cols`.
    pub fn col_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            data.iter_mut().zip(t.row_slice(r)).for_each(|(s, v)| *s += v);
        }
        let value = Tensor::new(1, t.cols(), data).expect("col sums");
        let rg = self.rg(&[a]);
        self.push(value, Op::ColSums(a), rg)
    }

    /// Repeats size-1 dimensions up to `rows x cols`.
    pub fn broadcast_to(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let [r, c] = self.shape(a);
        if (r != rows && r != 1) || (c != cols && c != 1) {
            return Err(Error::shape(format!("{rows}x{cols}"), format!("{r}x{c}")));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let row = t.row_slice(if r == 1 { 0 } else { i });
            for j in 0..cols {
                data.push(row[if c == 1 { 0 } else { j }]);
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Broadcast(a), rg))
    }

    /// Sums `a` down to `rows x cols` (inverse of broadcasting).
    pub fn sum_to(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let [r, c] = self.shape(a);
        let mut v = a;
        if rows == 1 && r != 1 {
            v = self.col_sums(v);
        }
        if cols == 1 && c != 1 {
            v = self.row_sums(v);
        }
        v
    }

    /// Euclidean norm of all elements, `1 x 1`; gradient 0 at the origin.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        let s = self.sum(sq);
        let s = self.clamp(s, SQRT_FLOOR, f64::INFINITY);
        self.sqrt(s)
    }

    /// Euclidean norm of every row, `rows x 1`.
    pub fn row_l2_norms(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        let s = self.row_sums(sq);
        let s = self.clamp(s, SQRT_FLOOR, f64::INFINITY);
        self.sqrt(s)
    }

    fn mask(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let m = self.value(a).map(f);
        self.constant(m)
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph` the returned handles are differentiable functions of
    /// the graph's variables. Otherwise the backward tape is discarded and the
    /// gradients come back as constants.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("scalar output", format!("{:?}", self.shape(output))));
        }
        for &w in wrt {
            if w.0 >= self.nodes.len() || !self.nodes[w.0].requires_grad {
                return Err(Error::NotInGraph);
            }
        }
        let end = output.0 + 1;
        // Nodes on some path between a `wrt` leaf and the output.
        let mut relevant = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if relevant[i] || !self.nodes[i].requires_grad {
                continue;
            }
            relevant[i] = self.parents(i).iter().any(|p| relevant[p.0]);
        }

        let mark = self.nodes.len();
        let mut grads: Vec<Option<Var>> = vec![None; end];
        let seed = self.constant(Tensor::scalar(1.0));
        grads[output.0] = Some(seed);
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (parent, contrib) in self.backward(Var(i), &op, g, &relevant)? {
                if !relevant[parent.0] {
                    continue;
                }
                grads[parent.0] = Some(match grads[parent.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        let out: Vec<Tensor> = wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => self.value(g).clone(),
                None => {
                    let [r, c] = self.shape(*w);
                    Tensor::zeros(r, c)
                }
            })
            .collect();
        if create_graph {
            let vars = wrt
                .iter()
                .zip(out)
                .map(|(w, t)| match grads.get(w.0).copied().flatten() {
                    Some(g) => g,
                    None => self.constant(t),
                })
                .collect();
            Ok(vars)
        } else {
            self.nodes.truncate(mark);
            Ok(out.into_iter().map(|t| self.constant(t)).collect())
        }
    }

    /// Gradient values only, discarding the backward tape.
    pub fn grad_values(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mark = self.nodes.len();
        let vars = self.grad(output, wrt, false)?;
        let out = vars.iter().map(|v| self.value(*v).clone()).collect();
        self.nodes.truncate(mark);
        Ok(out)
    }

    fn parents(&self, i: usize) -> Vec<Var> {
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::Cos(a)
            | Op::Sin(a)
            | Op::Acos(a)
            | Op::Clamp(a, _, _)
            | Op::Slice(a, _)
            | Op::Pad(a, _)
            | Op::Sum(a)
            | Op::RowSums(a)
            | Op::ColSums(a)
            | Op::Broadcast(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }

    /// Contributions `(parent, d output / d parent)` given the node's upstream
    /// gradient `g`, expressed as new tape operations.
    fn backward(&mut self, node: Var, op: &Op, g: Var, need: &[bool]) -> Result<Vec<(Var, Var)>> {
        let reduce = |graph: &mut Graph, v: Var, like: Var| {
            let [r, c] = graph.shape(like);
            graph.sum_to(v, r, c)
        };
        let need = |v: Var| need[v.0];
        Ok(match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    let bt = self.transpose(b);
                    out.push((a, self.matmul(g, bt)?));
                }
                if need(b) {
                    let at = self.transpose(a);
                    out.push((b, self.matmul(at, g)?));
                }
                out
            }
            Op::Transpose(a) => vec![(a, self.transpose(g))],
            Op::Add(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    out.push((a, reduce(self, g, a)));
                }
                if need(b) {
                    out.push((b, reduce(self, g, b)));
                }
                out
            }
            Op::Sub(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    out.push((a, reduce(self, g, a)));
                }
                if need(b) {
                    let ng = self.neg(g);
                    out.push((b, reduce(self, ng, b)));
                }
                out
            }
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    let full = self.mul(g, b)?;
                    out.push((a, reduce(self, full, a)));
                }
                if need(b) {
                    let full = self.mul(g, a)?;
                    out.push((b, reduce(self, full, b)));
                }
                out
            }
            Op::Div(a, b) => {
                let mut out = Vec::with_capacity(2);
                let ga_full = self.div(g, b)?;
                if need(b) {
                    let t = self.mul(ga_full, node)?;
                    let gb_full = self.neg(t);
                    out.push((b, reduce(self, gb_full, b)));
                }
                if need(a) {
                    out.push((a, reduce(self, ga_full, a)));
                }
                out
            }
            Op::Scale(a, s) => vec![(a, self.scale(g, s))],
            Op::Shift(a) => vec![(a, g)],
            Op::Relu(a) => {
                let m = self.mask(a, |x| if x >= 0.0 { 1.0 } else { 0.0 });
                vec![(a, self.mul(g, m)?)]
            }
            Op::LeakyRelu(a, slope) => {
                let m = self.mask(a, |x| if x >= 0.0 { 1.0 } else { slope });
                vec![(a, self.mul(g, m)?)]
            }
            Op::Tanh(a) => {
                let y2 = self.square(node);
                let ny2 = self.neg(y2);
                let d = self.shift(ny2, 1.0);
                vec![(a, self.mul(g, d)?)]
            }
            Op::Sqrt(a) => {
                let h = self.scale(g, 0.5);
                vec![(a, self.div(h, node)?)]
            }
            Op::Cos(a) => {
                let s = self.sin(a);
                let ns = self.neg(s);
                vec![(a, self.mul(g, ns)?)]
            }
            Op::Sin(a) => {
                let c = self.cos(a);
                vec![(a, self.mul(g, c)?)]
            }
            Op::Acos(a) => {
                let x2 = self.square(a);
                let nx2 = self.neg(x2);
                let one_minus = self.shift(nx2, 1.0);
                let floored = self.clamp(one_minus, SQRT_FLOOR, f64::INFINITY);
                let root = self.sqrt(floored);
                let ng = self.neg(g);
                vec![(a, self.div(ng, root)?)]
            }
            Op::Clamp(a, lo, hi) => {
                let m = self.mask(a, |x| if x > lo && x < hi { 1.0 } else { 0.0 });
                vec![(a, self.mul(g, m)?)]
            }
            Op::Concat(ref parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if need(p) {
                        out.push((p, self.slice(g, start, start + w)?));
                    }
                    start += w;
                }
                out
            }
            Op::Slice(a, start) => {
                let total = self.shape(a)[1];
                vec![(a, self.pad(g, start, total))]
            }
            Op::Pad(a, start) => {
                let w = self.shape(a)[1];
                vec![(a, self.slice(g, start, start + w)?)]
            }
            Op::Sum(a) | Op::RowSums(a) | Op::ColSums(a) => {
                let [r, c] = self.shape(a);
                vec![(a, self.broadcast_to(g, r, c)?)]
            }
            Op::Broadcast(a) => vec![(a, reduce(self, g, a))],
        })
    }
}
