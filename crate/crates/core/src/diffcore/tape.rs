use statrs::function::gamma::{digamma, ln_gamma};

use super::{DiffError, DiffResult, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    DivElem(Var, Var),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    LnGamma(Var),
    Sum(Var),
    L1Norm(Var),
    RowSums(Var),
    BroadcastCol(Var),
    BroadcastRow(Var),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Linear record of forward operations, replayed in reverse for gradients.
///
/// Build one per objective evaluation; single-threaded by design. Values are
/// immutable once pushed.
pub struct Tape {
    nodes: Vec<Node>,
}

#[inline]
fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Constant convenience: a leaf the caller never asks a gradient for.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::filled(1, 1, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> DiffResult<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> DiffResult<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> DiffResult<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> DiffResult<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn div_elem(&mut self, a: Var, b: Var) -> DiffResult<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(DiffError::Shape {
                op: "div_elem",
                lhs: self.value(a).shape(),
                rhs: self.value(b).shape(),
            });
        }
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(DiffError::Domain {
                op: "div_elem",
                msg: "division by zero entry".into(),
            });
        }
        let value = Matrix::from_vec(
            self.value(a).rows(),
            self.value(a).cols(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x / y)
                .collect(),
        )?;
        Ok(self.push(Op::DivElem(a, b), value))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).scale(-1.0);
        self.push(Op::Neg(a), value)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push(Op::AddScalar(a), value)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(Op::MulScalar(a, s), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid_scalar);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus_scalar);
        self.push(Op::Softplus(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn ln(&mut self, a: Var) -> DiffResult<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(DiffError::Domain {
                op: "ln",
                msg: "log of non-positive entry".into(),
            });
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(Op::Ln(a), value))
    }

    pub fn ln_gamma(&mut self, a: Var) -> DiffResult<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(DiffError::Domain {
                op: "ln_gamma",
                msg: "log-gamma of non-positive entry".into(),
            });
        }
        let value = self.value(a).map(ln_gamma);
        Ok(self.push(Op::LnGamma(a), value))
    }

    /// Full reduction to a 1x1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Sum of absolute entries; subgradient at zero is zero.
    pub fn l1_norm(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).l1_norm());
        self.push(Op::L1Norm(a), value)
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let value = self.value(a).row_sums();
        self.push(Op::RowSums(a), value)
    }

    /// Repeat a column vector (n x 1) across `cols` columns.
    pub fn broadcast_col(&mut self, a: Var, cols: usize) -> DiffResult<Var> {
        let v = self.value(a);
        if v.cols() != 1 {
            return Err(DiffError::Shape {
                op: "broadcast_col",
                lhs: v.shape(),
                rhs: (v.rows(), 1),
            });
        }
        let value = Matrix::from_fn(v.rows(), cols, |i, _| v.get(i, 0));
        Ok(self.push(Op::BroadcastCol(a), value))
    }

    /// Repeat a row vector (1 x m) across `rows` rows.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> DiffResult<Var> {
        let v = self.value(a);
        if v.rows() != 1 {
            return Err(DiffError::Shape {
                op: "broadcast_row",
                lhs: v.shape(),
                rhs: (1, v.cols()),
            });
        }
        let value = Matrix::from_fn(rows, v.cols(), |_, j| v.get(0, j));
        Ok(self.push(Op::BroadcastRow(a), value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> DiffResult<Var> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&values)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Row-wise softmax with the usual max-shift for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut value = Matrix::zeros(v.rows(), v.cols());
        for i in 0..v.rows() {
            let row = v.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (o, &x) in value.row_mut(i).iter_mut().zip(row) {
                let e = (x - max).exp();
                *o = e;
                denom += e;
            }
            for o in value.row_mut(i) {
                *o /= denom;
            }
        }
        self.push(Op::SoftmaxRows(a), value)
    }

    /// Reverse sweep from a scalar output. Returns per-variable adjoints.
    pub fn backward(&self, out: Var) -> DiffResult<Gradients> {
        let out_val = self.value(out);
        if out_val.rows() != 1 || out_val.cols() != 1 {
            return Err(DiffError::NotScalar {
                rows: out_val.rows(),
                cols: out_val.cols(),
            });
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(up) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(up);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = up.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&up)?;
                    accumulate(&mut adj[a.0], da);
                    accumulate(&mut adj[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], up.clone());
                    accumulate(&mut adj[b.0], up);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a.0], up.clone());
                    accumulate(&mut adj[b.0], up.scale(-1.0));
                }
                Op::Hadamard(a, b) => {
                    let da = up.hadamard(self.value(*b))?;
                    let db = up.hadamard(self.value(*a))?;
                    accumulate(&mut adj[a.0], da);
                    accumulate(&mut adj[b.0], db);
                }
                Op::DivElem(a, b) => {
                    let bv = self.value(*b);
                    let da = Matrix::from_vec(
                        up.rows(),
                        up.cols(),
                        up.data()
                            .iter()
                            .zip(bv.data())
                            .map(|(&u, &y)| u / y)
                            .collect(),
                    )?;
                    let yv = &node.value;
                    let db = Matrix::from_vec(
                        up.rows(),
                        up.cols(),
                        up.data()
                            .iter()
                            .zip(yv.data().iter().zip(bv.data()))
                            .map(|(&u, (&q, &y))| -u * q / y)
                            .collect(),
                    )?;
                    accumulate(&mut adj[a.0], da);
                    accumulate(&mut adj[b.0], db);
                }
                Op::Neg(a) => accumulate(&mut adj[a.0], up.scale(-1.0)),
                Op::AddScalar(a) => accumulate(&mut adj[a.0], up),
                Op::MulScalar(a, s) => accumulate(&mut adj[a.0], up.scale(*s)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da = elementwise3(&up, y, |u, y| u * y * (1.0 - y));
                    accumulate(&mut adj[a.0], da);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let da = elementwise3(&up, x, |u, x| u * sigmoid_scalar(x));
                    accumulate(&mut adj[a.0], da);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da = elementwise3(&up, y, |u, y| u * (1.0 - y * y));
                    accumulate(&mut adj[a.0], da);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let da = elementwise3(&up, y, |u, y| u * y);
                    accumulate(&mut adj[a.0], da);
                }
                Op::Ln(a) => {
                    let x = self.value(*a);
                    let da = elementwise3(&up, x, |u, x| u / x);
                    accumulate(&mut adj[a.0], da);
                }
                Op::LnGamma(a) => {
                    let x = self.value(*a);
                    let da = elementwise3(&up, x, |u, x| u * digamma(x));
                    accumulate(&mut adj[a.0], da);
                }
                Op::Sum(a) => {
                    let u = up.get(0, 0);
                    let src = self.value(*a);
                    accumulate(&mut adj[a.0], Matrix::filled(src.rows(), src.cols(), u));
                }
                Op::L1Norm(a) => {
                    let u = up.get(0, 0);
                    let src = self.value(*a);
                    let da = src.map(|x| {
                        if x > 0.0 {
                            u
                        } else if x < 0.0 {
                            -u
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj[a.0], da);
                }
                Op::RowSums(a) => {
                    let src = self.value(*a);
                    let da = Matrix::from_fn(src.rows(), src.cols(), |i, _| up.get(i, 0));
                    accumulate(&mut adj[a.0], da);
                }
                Op::BroadcastCol(a) => accumulate(&mut adj[a.0], up.row_sums()),
                Op::BroadcastRow(a) => accumulate(&mut adj[a.0], up.col_sums()),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let slice =
                            Matrix::from_fn(up.rows(), w, |i, j| up.get(i, offset + j));
                        accumulate(&mut adj[p.0], slice);
                        offset += w;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(up.rows(), up.cols());
                    for i in 0..up.rows() {
                        let dot: f64 = up
                            .row(i)
                            .iter()
                            .zip(y.row(i))
                            .map(|(&u, &q)| u * q)
                            .sum();
                        for ((o, &u), &q) in
                            da.row_mut(i).iter_mut().zip(up.row(i)).zip(y.row(i))
                        {
                            *o = q * (u - dot);
                        }
                    }
                    accumulate(&mut adj[a.0], da);
                }
            }
        }
        Ok(Gradients { adj })
    }
}

fn accumulate(slot: &mut Option<Matrix>, delta: Matrix) {
    match slot {
        None => *slot = Some(delta),
        Some(m) => {
            for (a, b) in m.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
    }
}

fn elementwise3(up: &Matrix, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = up
        .data()
        .iter()
        .zip(other.data())
        .map(|(&u, &o)| f(u, o))
        .collect();
    Matrix::from_vec(up.rows(), up.cols(), data).expect("same shape")
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Take ownership of a variable's gradient, if it received one.
    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.adj[var.0].take()
    }
}
