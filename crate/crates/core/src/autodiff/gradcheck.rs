use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor: errors on entries with `|grad| < floor` are measured against `floor`.
    pub floor: f64,
    /// Exclude entries with `|x| <= 10 h`, where kinked primitives (relu, abs) are not differentiable.
    pub skip_near_zero: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { h: 1e-4, tol: 1e-4, floor: 1e-4, skip_near_zero: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// Compares the tape gradient of scalar `f` at `x` with central differences.
pub fn gradcheck<F>(f: &F, x: &Tensor, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + ?Sized,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_requires_grad(true));
    let loss = f(&mut tape, xv)?;
    let analytic = tape.backward(loss)?.get_or_zeros(&tape, xv);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(&Tensor::new(x.shape().to_vec(), data)?);
        let l = f(&mut t, v)?;
        Ok(t.scalar(l))
    };

    let mut report = GradcheckReport { max_rel_error: 0.0, worst_index: None, checked: 0, skipped: 0, passed: true };
    for i in 0..x.numel() {
        let xi = x.data()[i];
        if opts.skip_near_zero && xi.abs() <= 10.0 * opts.h {
            report.skipped += 1;
            continue;
        }
        let mut plus = x.data().to_vec();
        plus[i] = xi + opts.h;
        let mut minus = x.data().to_vec();
        minus[i] = xi - opts.h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * opts.h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
        report.checked += 1;
    }
    report.passed = report.max_rel_error < opts.tol;
    Ok(report)
}
