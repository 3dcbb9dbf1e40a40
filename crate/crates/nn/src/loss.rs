use crate::layers::Tensor;
use crate::param::Param;
use crate::{NnError, Result};

/// `mean |Δlat| + mean |Δlon|` over batch and time, with its gradient.
pub fn mae(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.dim() != target.dim() {
        return Err(NnError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let (b, t, _) = pred.dim();
    let n = (b * t) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
    let grad = diff.mapv(|d| {
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    Ok((loss, grad))
}

/// `strength · Σ w²` over regularized parameters.
pub fn l2_penalty<'a>(params: impl IntoIterator<Item = &'a Param>, strength: f64) -> f64 {
    strength
        * params
            .into_iter()
            .filter(|p| p.regularized)
            .flat_map(|p| p.value.iter())
            .map(|v| v * v)
            .sum::<f64>()
}

/// Adds the penalty gradient `2 · strength · w`.
pub fn add_l2_grad<'a>(params: impl IntoIterator<Item = &'a mut Param>, strength: f64) {
    for p in params.into_iter().filter(|p| p.regularized) {
        for (g, v) in p.grad.iter_mut().zip(&p.value) {
            *g += 2.0 * strength * v;
        }
    }
}

/// Data term plus L2 penalty.
pub fn loss_mae<'a>(
    pred: &Tensor,
    target: &Tensor,
    params: impl IntoIterator<Item = &'a Param>,
    strength: f64,
) -> Result<f64> {
    Ok(mae(pred, target)?.0 + l2_penalty(params, strength))
}
