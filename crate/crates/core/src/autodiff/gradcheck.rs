//! Central finite-difference check of analytic gradients, run in `f64`.

use super::params::{Gradients, ParamSet};
use crate::error::Result;

/// Denominator floor for the relative error, so that two near-zero
/// gradients are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Offender>,
    pub checked: usize,
    /// Coordinates skipped because the loss has a kink within `eps` (relu at 0).
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.checked > 0
    }
}

/// Compares `loss_and_grad`'s gradients with central differences at step `eps`
/// for every parameter coordinate.
pub fn grad_check<F>(params: &ParamSet<f64>, eps: f64, mut loss_and_grad: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet<f64>) -> Result<(f64, Gradients<f64>)>,
{
    let (base, grads) = loss_and_grad(params)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
    };
    for id in params.ids() {
        let len = params.get(id).len();
        let analytic = grads.dense(id, len);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = params.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + eps;
            let (plus, _) = loss_and_grad(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - eps;
            let (minus, _) = loss_and_grad(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;

            let (up, down) = (plus - base, base - minus);
            let bend = (up - down).abs();
            if bend > 0.5 * up.abs().max(down.abs()) && bend > 1e3 * eps * eps {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(Offender {
                    param: params.name(id).to_string(),
                    index: j,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
