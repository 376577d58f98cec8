//! Central finite-difference gradient checks.

use crate::error::Result;
use crate::mlp::{MlpModel, Target};
use crate::vision::{Patch, VisionModel};

/// Relative errors below this denominator are measured against it instead,
/// so parameters with (near-)zero gradient do not divide by zero.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub n_params: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against `(L(θ + ε) − L(θ − ε)) / 2ε`, one
/// parameter at a time.
pub fn compare<M: Clone>(
    model: &M,
    analytic: &[Vec<f64>],
    params: impl Fn(&mut M) -> Vec<&mut [f64]>,
    loss: impl Fn(&M) -> Result<f64>,
    eps: f64,
) -> Result<GradCheck> {
    let mut probe = model.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        n_params: 0,
    };
    for (s, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = params(&mut probe)[s][i];
            params(&mut probe)[s][i] = orig + eps;
            let plus = loss(&probe)?;
            params(&mut probe)[s][i] = orig - eps;
            let minus = loss(&probe)?;
            params(&mut probe)[s][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            out.max_rel_error = out.max_rel_error.max(rel_error(a, numeric));
            out.max_abs_error = out.max_abs_error.max((a - numeric).abs());
            out.n_params += 1;
        }
    }
    Ok(out)
}

pub fn check_mlp(model: &MlpModel, x: &[f64], target: &Target, eps: f64) -> Result<GradCheck> {
    let (_, grads) = model.grad(x, target)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    compare(
        model,
        &analytic,
        |m| m.slices_mut().into_iter().collect(),
        |m| m.loss(x, target),
        eps,
    )
}

/// Checks every encoder and head parameter through bag aggregation.
pub fn check_vision(model: &VisionModel, bag: &[Patch], target: &Target, eps: f64) -> Result<GradCheck> {
    let (_, grads) = model.bag_grad(bag, target)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    compare(
        model,
        &analytic,
        |m| m.slices_mut(),
        |m| Ok(m.bag_grad(bag, target)?.0),
        eps,
    )
}
