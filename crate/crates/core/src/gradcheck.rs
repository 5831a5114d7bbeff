//! Central finite-difference oracle for analytic gradients.
//!
//! The oracle only evaluates forward values, so it stays independent of the
//! backward rules it is used to check.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const ABS_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, ABS_FLOOR)`.
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient of the scalar `f(inputs)` with central
/// differences at every element of every input.
pub fn gradient_check<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let g = Graph::eval();
        let vars: Vec<Var<'_>> = values.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let g = Graph::eval();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|s| s.to_vec()).unwrap_or_else(|| alloc::vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - STEP;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(analytic[j], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report = GradCheckReport {
                    max_rel_err: err,
                    worst_input: i,
                    worst_index: j,
                    analytic: analytic[j],
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}

/// Panics with the worst offender when the check exceeds `tol`.
pub fn check_gradients<F>(inputs: &[Tensor], tol: f64, f: F)
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let report = gradient_check(inputs, f).expect("forward evaluation failed");
    assert!(
        report.max_rel_err <= tol,
        "gradient check failed: {report:?} (tolerance {tol})"
    );
}

/// Tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}
