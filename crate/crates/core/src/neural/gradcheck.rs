//! Finite-difference verification of analytic gradients.

use crate::{Error, Result};

use super::{Grads, NetworkModel, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error per parameter plus the worst offender.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    /// (model index, layer index, tensor index, element index) of the worst
    /// parameter.
    pub worst: (usize, usize, usize, usize),
    pub tolerance: f64,
    pub pass: bool,
}

/// Central differences carry truncation noise of roughly
/// `machine_eps * |loss| / step`, so structurally-zero gradients read as
/// ~1e-10 numerically. Both sides below this floor compare as equal.
const ZERO_FALLBACK: f64 = 1e-7;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() < ZERO_FALLBACK && numeric.abs() < ZERO_FALLBACK {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Checks every parameter of a set of models against central finite
/// differences of `eval`, comparing with the supplied analytic gradients.
pub fn composite_gradient_check(
    models: &mut [NetworkModel],
    eval: &mut dyn FnMut(&[NetworkModel]) -> f64,
    analytic: &[Grads],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if models.len() != analytic.len() {
        return Err(Error::Contract("one Grads per model required".into()));
    }
    let total: usize = models.iter().map(|m| m.param_count()).sum();
    if total > 10_000 {
        return Err(Error::InvalidConfig(format!(
            "gradient check limited to 1e4 parameters, got {total}"
        )));
    }
    let mut per_param = Vec::with_capacity(total);
    let mut max_rel = 0.0f64;
    let mut worst = (0, 0, 0, 0);
    for mi in 0..models.len() {
        let n_layers = models[mi].layers.len();
        for li in 0..n_layers {
            let n_tensors = models[mi].layers[li].param_slices().len();
            for ti in 0..n_tensors {
                let n = models[mi].layers[li].param_slices()[ti].len();
                for ei in 0..n {
                    let bump = |models: &mut [NetworkModel], delta: f64| {
                        models[mi].layers[li].param_slices_mut()[ti][ei] += delta;
                    };
                    bump(models, step);
                    let lp = eval(models);
                    bump(models, -2.0 * step);
                    let lm = eval(models);
                    bump(models, step);
                    let numeric = (lp - lm) / (2.0 * step);
                    let a = analytic[mi].layers[li][ti][ei];
                    let err = rel_error(a, numeric);
                    if err > max_rel {
                        max_rel = err;
                        worst = (mi, li, ti, ei);
                    }
                    per_param.push(err);
                }
            }
        }
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error: max_rel,
        worst,
        tolerance,
        pass: max_rel < tolerance,
    })
}

/// Convenience wrapper for a single model with a differentiable scalar loss
/// on its output. `loss` returns the loss value and dLoss/dOutput.
pub fn gradient_check(
    model: &mut NetworkModel,
    input: &Tensor,
    loss: &dyn Fn(&Tensor) -> (f64, Tensor),
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (out, caches) = model.forward(input)?;
    let (_, grad_out) = loss(&out);
    let (grads, _) = model.backward(&caches, &grad_out)?;
    let mut models = vec![std::mem::take(model)];
    let mut eval = |ms: &[NetworkModel]| -> f64 {
        let (out, _) = ms[0].forward(input).expect("forward in gradient check");
        loss(&out).0
    };
    let report = composite_gradient_check(&mut models, &mut eval, &[grads], FD_STEP, tolerance);
    *model = models.pop().expect("model restored");
    report
}
