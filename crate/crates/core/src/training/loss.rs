use crate::error::{Error, Result};
use crate::tensor::{RealTensor, Trace, Var};

/// Mean absolute difference between `|pred|` and `gt_magnitude`, for a
/// complex `pred [H, W, 2]`.
pub fn image_loss(t: &mut Trace, pred: Var, gt_magnitude: &RealTensor) -> Result<Var> {
    let mag = t.magnitude(pred)?;
    let gt = t.constant(gt_magnitude.clone());
    t.l1_mean(mag, gt)
}

/// `Σ_t mean|e_t - e_gt|` over the predicted edge maps.
pub fn edge_loss(t: &mut Trace, edges: &[Var], gt: &RealTensor) -> Result<Var> {
    let gt = t.constant(gt.clone());
    let mut total: Option<Var> = None;
    for &e in edges {
        let l = t.l1_mean(e, gt)?;
        total = Some(match total {
            Some(acc) => t.add(acc, l)?,
            None => l,
        });
    }
    Ok(total.unwrap_or_else(|| t.constant(RealTensor::scalar(0.0))))
}

/// `image + beta · edge`.
pub fn total_loss(t: &mut Trace, image: Var, edge: Var, beta: f64) -> Result<Var> {
    if !(beta >= 0.0) {
        return Err(Error::arg(format!("edge weight {beta} must be non-negative")));
    }
    let weighted = t.scale(edge, beta);
    t.add(image, weighted)
}
