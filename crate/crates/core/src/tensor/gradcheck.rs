//! Central finite-difference validation of reverse-mode gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that gradients that are
/// essentially zero are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

/// Outcome of a gradient check over every element of every input.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|a - n| / max(|a|, |n|, REL_FLOOR)` per element.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Flat indices of elements above tolerance.
    pub fn failures(&self) -> Vec<usize> {
        self.rel_errors
            .iter()
            .enumerate()
            .filter(|(_, &e)| e >= self.tol)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Checks `d f(x) / dx` for a scalar-valued `f`.
///
/// Note that the test is meaningless at non-differentiable points: for
/// `|x|` with `0 < |x| < h` the central difference straddles the kink and
/// the check reports a failure.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    grad_check_inputs(|vars| f(vars[0]), std::slice::from_ref(x), h, tol)
}

/// Multi-input variant: gradients with respect to every tensor in
/// `inputs`, concatenated in order.
pub fn grad_check_inputs<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&vars)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for v in &vars {
        analytic.extend_from_slice(grads.wrt(*v)?.data());
    }

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        f(&vars)?.value().item()
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((fp - fm) / (2.0 * h));
        }
    }

    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .collect();
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::randn(&[5], &mut Rng::new(2));
        let r = grad_check(|v| Ok(v.square().sum()), &x, 1e-3, 1e-4).unwrap();
        assert!(r.passed, "{}", r.max_rel_error);
        for (a, xv) in r.analytic.iter().zip(x.data()) {
            assert!((a - 2.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn abs_next_to_its_kink_fails() {
        // 4e-4 lies within h of the kink at 0: the central difference sees
        // slope 0.4 where the analytic derivative is 1.
        let x = Tensor::new(&[2], vec![4e-4, 0.5]).unwrap();
        let r = grad_check(|v| Ok(v.abs().sum()), &x, 1e-3, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures(), vec![0]);
    }
}
