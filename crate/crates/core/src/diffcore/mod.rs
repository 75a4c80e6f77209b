//! Differentiable numerics substrate.
//!
//! Everything the losses need and nothing more: a dense row-major `f64`
//! [`Matrix`], a reverse-mode [`Tape`] over a fixed set of primitives, and
//! [`finite_diff_grad`] as an independent central-difference oracle for the
//! analytic gradients. All values are immutable once constructed; a tape is
//! built, evaluated, and dropped per objective call.

mod matrix;
mod tape;

use std::collections::BTreeMap;

use thiserror::Error;

pub use matrix::Matrix;
pub use tape::{Tape, Var};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("non-finite value produced while evaluating {context}")]
    NonFinite { context: String },
    #[error("objective must evaluate to a 1x1 matrix, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type DiffResult<T> = Result<T, DiffError>;

/// A named parameter together with the gradient slot the evaluators fill.
#[derive(Debug, Clone)]
pub struct GradientRecord {
    pub name: String,
    pub value: Matrix,
    pub gradient: Matrix,
}

impl GradientRecord {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let gradient = Matrix::zeros(value.rows(), value.cols());
        GradientRecord {
            name: name.into(),
            value,
            gradient,
        }
    }
}

/// An objective is any scalar-valued composition of tape primitives over
/// named parameter leaves.
pub trait Objective {
    fn build(&self, tape: &mut Tape, params: &BTreeMap<String, Var>) -> DiffResult<Var>;
}

impl<F> Objective for F
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> DiffResult<Var>,
{
    fn build(&self, tape: &mut Tape, params: &BTreeMap<String, Var>) -> DiffResult<Var> {
        self(tape, params)
    }
}

fn build_tape(
    objective: &impl Objective,
    params: &[GradientRecord],
) -> DiffResult<(Tape, BTreeMap<String, Var>, Var)> {
    let mut tape = Tape::new();
    let mut vars = BTreeMap::new();
    for rec in params {
        let var = tape.leaf(rec.value.clone());
        vars.insert(rec.name.clone(), var);
    }
    let out = objective.build(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.rows() != 1 || value.cols() != 1 {
        return Err(DiffError::NotScalar {
            rows: value.rows(),
            cols: value.cols(),
        });
    }
    Ok((tape, vars, out))
}

/// Evaluate the objective value only (no gradients).
pub fn eval_value(objective: &impl Objective, params: &[GradientRecord]) -> DiffResult<f64> {
    let (tape, _, out) = build_tape(objective, params)?;
    let v = tape.value(out).get(0, 0);
    if !v.is_finite() {
        return Err(DiffError::NonFinite {
            context: "objective value".into(),
        });
    }
    Ok(v)
}

/// Evaluate the objective and fill every record's gradient by reverse-mode
/// sweep. Parameters the objective never touches get an all-zero gradient.
/// Deterministic: identical inputs produce bit-identical outputs.
pub fn eval_with_grad(
    objective: &impl Objective,
    params: &mut [GradientRecord],
) -> DiffResult<f64> {
    let (tape, vars, out) = build_tape(objective, params)?;
    let v = tape.value(out).get(0, 0);
    if !v.is_finite() {
        return Err(DiffError::NonFinite {
            context: "objective value".into(),
        });
    }
    let mut grads = tape.backward(out)?;
    for rec in params.iter_mut() {
        let var = vars[&rec.name];
        match grads.take(var) {
            Some(g) => {
                if !g.is_finite() {
                    return Err(DiffError::NonFinite {
                        context: format!("gradient of {}", rec.name),
                    });
                }
                rec.gradient = g;
            }
            None => rec.gradient = Matrix::zeros(rec.value.rows(), rec.value.cols()),
        }
    }
    Ok(v)
}

/// Central finite differences, entry by entry: (f(x+h) - f(x-h)) / 2h.
///
/// This is the oracle the analytic gradients are checked against; it only
/// ever uses forward evaluation.
pub fn finite_diff_grad(
    objective: &impl Objective,
    params: &mut [GradientRecord],
    step: f64,
) -> DiffResult<()> {
    if step <= 0.0 {
        return Err(DiffError::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    for idx in 0..params.len() {
        let (rows, cols) = (params[idx].value.rows(), params[idx].value.cols());
        let mut grad = Matrix::zeros(rows, cols);
        for entry in 0..rows * cols {
            let original = params[idx].value.data()[entry];
            params[idx].value.data_mut()[entry] = original + step;
            let plus = eval_value(objective, params)?;
            params[idx].value.data_mut()[entry] = original - step;
            let minus = eval_value(objective, params)?;
            params[idx].value.data_mut()[entry] = original;
            grad.data_mut()[entry] = (plus - minus) / (2.0 * step);
        }
        params[idx].gradient = grad;
    }
    Ok(())
}

/// W plus the scaled sum of its higher matrix powers:
/// `W + scale * (W^2 + ... + W^K)`, each power by repeated multiplication.
/// `k = 1` returns W unchanged.
pub fn matrix_power_sum(w: &Matrix, k: usize, scale: f64) -> DiffResult<Matrix> {
    if w.rows() != w.cols() {
        return Err(DiffError::Shape {
            op: "matrix_power_sum",
            lhs: (w.rows(), w.cols()),
            rhs: (w.cols(), w.rows()),
        });
    }
    if k == 0 {
        return Err(DiffError::InvalidArgument(
            "matrix_power_sum requires at least one hop".into(),
        ));
    }
    let mut acc = w.clone();
    let mut power = w.clone();
    for _ in 2..=k {
        power = power.matmul(w)?;
        acc = acc.add(&power.scale(scale))?;
    }
    if !acc.is_finite() {
        return Err(DiffError::NonFinite {
            context: "matrix_power_sum".into(),
        });
    }
    Ok(acc)
}

/// Tape counterpart of [`matrix_power_sum`], composed of the same primitive
/// sequence so values agree bit for bit with the plain version.
pub fn power_sum_on_tape(tape: &mut Tape, w: Var, k: usize, scale: f64) -> DiffResult<Var> {
    if k == 0 {
        return Err(DiffError::InvalidArgument(
            "matrix_power_sum requires at least one hop".into(),
        ));
    }
    let mut acc = w;
    let mut power = w;
    for _ in 2..=k {
        power = tape.matmul(power, w)?;
        let scaled = tape.mul_scalar(power, scale);
        acc = tape.add(acc, scaled)?;
    }
    Ok(acc)
}
