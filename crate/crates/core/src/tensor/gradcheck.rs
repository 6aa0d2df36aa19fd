//! Central finite-difference verification of analytic gradients.

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares backward-pass gradients of the scalar `f` with central
/// differences of step `h` for every element of every listed parameter.
///
/// `f` must rebuild its graph from the current parameter values on each call.
pub fn grad_check<F>(mut f: F, params: &[(String, Tensor)], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = f()?;
    let base = loss.item()?;
    loss.backward()?;
    drop(loss);
    let again = no_grad(&mut f)?.item()?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic(format!("two evaluations gave {base} and {again}")));
    }

    let mut checks = Vec::with_capacity(params.len());
    for (name, p) in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let mut worst =
            ParamCheck { name: name.clone(), max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + h;
            let plus = no_grad(&mut f).and_then(|t| t.item());
            p.data_mut()[i] = orig - h;
            let minus = no_grad(&mut f).and_then(|t| t.item());
            p.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_err || i == 0 {
                worst.max_rel_err = err.max(worst.max_rel_err);
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        checks.push(worst);
    }
    for (_, p) in params {
        p.zero_grad();
    }
    Ok(GradCheckReport { params: checks, tol })
}
