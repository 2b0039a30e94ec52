//! Box regression loss: summed L1 over coordinates plus a GIoU term.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::geometry::{giou, BoxNorm, BoxXyxy};

pub const DEFAULT_GIOU_WEIGHT: f64 = 1.0;

fn corners(b: &Tensor) -> Result<[Tensor; 4]> {
    let cx = b.narrow(1, 0, 1)?;
    let cy = b.narrow(1, 1, 1)?;
    let hw = (b.narrow(1, 2, 1)? * 0.5)?;
    let hh = (b.narrow(1, 3, 1)? * 0.5)?;
    Ok([(&cx - &hw)?, (&cy - &hh)?, (&cx + &hw)?, (&cy + &hh)?])
}

/// Per-sample GIoU between `(N, 4)` normalized center-size boxes, shape `(N, 1)`.
pub fn giou_tensor(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let [px1, py1, px2, py2] = corners(pred)?;
    let [tx1, ty1, tx2, ty2] = corners(target)?;
    let iw = (px2.minimum(&tx2)? - px1.maximum(&tx1)?)?.relu()?;
    let ih = (py2.minimum(&ty2)? - py1.maximum(&ty1)?)?.relu()?;
    let inter = (iw * ih)?;
    let area_p = ((&px2 - &px1)? * (&py2 - &py1)?)?;
    let area_t = ((&tx2 - &tx1)? * (&ty2 - &ty1)?)?;
    let union = ((area_p + area_t)? - &inter)?;
    let cw = (px2.maximum(&tx2)? - px1.minimum(&tx1)?)?;
    let ch = (py2.maximum(&ty2)? - py1.minimum(&ty1)?)?;
    let enclose = (cw * ch)?;
    let iou = (inter / &union)?;
    Ok((iou - ((&enclose - &union)? / &enclose)?)?)
}

/// Mean over the batch of `sum_i |p_i - t_i| + lambda * (1 - GIoU)`.
pub fn grounding_loss(pred: &Tensor, target: &Tensor, giou_weight: f64) -> Result<Tensor> {
    let (n, k) = pred.dims2()?;
    if k != 4 || target.dims() != pred.dims() {
        return Err(Error::InvalidInput(format!(
            "loss expects matching (N, 4) tensors, got {:?} and {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyData("loss over an empty batch".into()));
    }
    let l1 = (pred - target)?.abs()?.sum_keepdim(1)?;
    let g = giou_tensor(pred, target)?;
    let per = (l1 + ((g.affine(-1.0, 1.0))? * giou_weight)?)?;
    Ok(per.mean_all()?)
}

/// Scalar form of the same loss for a single pair, computed in plain f64.
pub fn grounding_loss_scalar(pred: &BoxNorm, target: &BoxNorm, giou_weight: f64) -> Result<f64> {
    let p = pred.to_array();
    let t = target.to_array();
    let l1: f64 = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum();
    let pc = pred.corners();
    let tc = target.corners();
    let g = giou(
        &BoxXyxy::new(pc[0], pc[1], pc[2], pc[3])?,
        &BoxXyxy::new(tc[0], tc[1], tc[2], tc[3])?,
    )?;
    Ok(l1 + giou_weight * (1.0 - g))
}
