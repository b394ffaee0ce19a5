//! Central-difference gradient checking.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error used throughout: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(f: &mut F, x: Tensor) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let out = f(&mut tape, xv)?;
    let t = tape.value(out);
    t.item().ok_or_else(|| Error::NonScalarLoss(t.shape().to_vec()))
}

/// Analytic gradient of scalar-valued `f` at `x`.
pub fn analytic_grad<F>(f: &mut F, x: &Tensor) -> Result<Vec<f64>>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    analytic_grad_on(Tape::new(), f, x)
}

fn analytic_grad_on<F>(mut tape: Tape, f: &mut F, x: &Tensor) -> Result<Vec<f64>>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    Ok(tape
        .take_grad(xv)
        .unwrap_or_else(|| alloc::vec![0.0; x.len()]))
}

/// Central difference `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn numeric_partial<F>(f: &mut F, x: &Tensor, i: usize, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut plus = x.clone();
    plus.data_mut()[i] += eps;
    let mut minus = x.clone();
    minus.data_mut()[i] -= eps;
    let fp = eval_scalar(f, plus)?;
    let fm = eval_scalar(f, minus)?;
    Ok((fp - fm) / (2.0 * eps))
}

/// Maximum relative error between analytic and central-difference gradients
/// over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, eps, &coords)
}

/// As [`grad_check`], restricted to the given flat coordinates.
pub fn grad_check_at<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    grad_check_on(Tape::new, f, x, eps, coords)
}

/// As [`grad_check_at`], with the backward pass run on a tape from `make_tape`
/// (used to plant faults when testing the checker itself).
pub fn grad_check_on<F>(make_tape: fn() -> Tape, mut f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(alloc::format!("eps must be positive, got {eps}")));
    }
    let analytic = analytic_grad_on(make_tape(), &mut f, x)?;
    let mut worst: f64 = 0.0;
    for &i in coords {
        let numeric = numeric_partial(&mut f, x, i, eps)?;
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_slice(&[5], &[0.3, -1.2, 2.5, 0.0, 7.0]).unwrap();
        let e = grad_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                Ok(tape.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn relu_away_from_kink() {
        let x = Tensor::from_slice(&[4], &[0.5, -0.5, 1.5, -2.0]).unwrap();
        let e = grad_check(
            |tape, v| {
                let r = tape.relu(v);
                Ok(tape.sum(r))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::zeros(&[3]);
        let r = grad_check(|tape, v| Ok(tape.relu(v)), &x, 1e-5);
        assert!(matches!(r, Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // f(x) = sum(x * c) where c is recorded as a constant copy of x:
        // the analytic gradient is c, but the true derivative of sum(x*x) is 2x.
        let x = Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap();
        let e = grad_check(
            |tape, v| {
                let c = tape.constant(tape.value(v).clone());
                let p = tape.mul(v, c)?;
                Ok(tape.sum(p))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(e > 0.3, "{e}");
    }
}
