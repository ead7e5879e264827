use super::Tensor;
use crate::error::{Error, Result};

/// A learnable array together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that exposes an ordered list of uniquely named parameters.
pub trait ParameterSet {
    fn parameters(&self) -> &[Parameter];
    fn parameters_mut(&mut self) -> &mut [Parameter];
}

impl ParameterSet for Vec<Parameter> {
    fn parameters(&self) -> &[Parameter] {
        self
    }

    fn parameters_mut(&mut self) -> &mut [Parameter] {
        self
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Names of the parameters whose error exceeded the tolerance.
    pub fn flagged(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| !p.passed)
            .map(|p| p.name.as_str())
            .collect()
    }
}

/// Finite-difference formula used by [`finite_diff_check_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h²).
    Central2,
    /// `(8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h`, error O(h⁴).
    Central4,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    pub stencil: Stencil,
}

/// Compares the analytic gradients stored in `params` against central
/// differences of `loss_fn`, entry by entry.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`; a parameter is flagged
/// when its worst entry exceeds `tol`.
pub fn finite_diff_check<P, F>(
    mut loss_fn: F,
    params: &P,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    P: ParameterSet + Clone,
    F: FnMut(&P) -> f64,
{
    let opts = GradCheckOptions {
        step,
        tol,
        stencil: Stencil::Central2,
    };
    finite_diff_check_with(|p: &P, _, _| loss_fn(p), params, &opts)
}

/// Like [`finite_diff_check`], but `loss_fn` also receives the position of
/// the perturbed entry (parameter index, element index) so it can reuse work
/// that does not depend on it.
pub fn finite_diff_check_with<P, F>(
    mut loss_fn: F,
    params: &P,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    P: ParameterSet + Clone,
    F: FnMut(&P, usize, usize) -> f64,
{
    let step = opts.step;
    if step <= 0.0 || step.is_nan() {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.parameters().len());
    for (pi, param) in params.parameters().iter().enumerate() {
        let mut check = ParamCheck {
            name: param.name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for i in 0..param.value.len() {
            let orig = param.value.data()[i];
            let mut eval = |delta: f64| -> Result<f64> {
                work.parameters_mut()[pi].value.data_mut()[i] = orig + delta;
                let l = loss_fn(&work, pi, i);
                work.parameters_mut()[pi].value.data_mut()[i] = orig;
                if l.is_finite() {
                    Ok(l)
                } else {
                    Err(Error::NonFinite(format!(
                        "loss while perturbing {}[{i}]",
                        param.name
                    )))
                }
            };
            let numeric = match opts.stencil {
                Stencil::Central2 => (eval(step)? - eval(-step)?) / (2.0 * step),
                Stencil::Central4 => {
                    let near = eval(step)? - eval(-step)?;
                    let far = eval(2.0 * step)? - eval(-2.0 * step)?;
                    (8.0 * near - far) / (12.0 * step)
                }
            };
            let analytic = param.grad.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_error || i == 0 {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_error <= opts.tol;
        report.push(check);
    }
    Ok(GradCheckReport {
        step,
        tol: opts.tol,
        params: report,
    })
}
