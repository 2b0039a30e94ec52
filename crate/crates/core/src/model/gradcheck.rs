//! Finite-difference checks of the analytic gradients.

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::loss::grounding_loss;
use super::network::{GroundingModel, PreparedBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn rel_err(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Central differences of the loss with respect to each predicted coordinate.
pub fn loss_input_check(
    pred: &[[f64; 4]],
    target: &[[f64; 4]],
    giou_weight: f64,
    eps: f64,
) -> Result<Vec<GradCheck>> {
    let n = pred.len();
    let flat = |rows: &[[f64; 4]]| -> Result<Tensor> {
        Ok(Tensor::from_vec(
            rows.iter().flatten().copied().collect::<Vec<_>>(),
            (rows.len(), 4),
            &Device::Cpu,
        )?)
    };
    let t = flat(target)?;
    let p = Var::from_tensor(&flat(pred)?)?;
    let loss = grounding_loss(p.as_tensor(), &t, giou_weight)?;
    let grads = loss.backward()?;
    let g = grads
        .get(p.as_tensor())
        .ok_or_else(|| Error::InvalidInput("prediction received no gradient".into()))?
        .to_vec2::<f64>()?;
    let mut out = Vec::with_capacity(n * 4);
    for i in 0..n {
        for k in 0..4 {
            let mut plus = pred.to_vec();
            let mut minus = pred.to_vec();
            plus[i][k] += eps;
            minus[i][k] -= eps;
            let lp = scalar(&grounding_loss(&flat(&plus)?, &t, giou_weight)?)?;
            let lm = scalar(&grounding_loss(&flat(&minus)?, &t, giou_weight)?)?;
            out.push(GradCheck {
                analytic: g[i][k],
                numeric: (lp - lm) / (2.0 * eps),
            });
        }
    }
    Ok(out)
}

/// Compares the analytic directional derivative of the batch loss along a
/// random unit direction over all parameters with a central difference.
///
/// The model should be in f64; it is copied, never modified.
pub fn network_directional_check(
    model: &GroundingModel,
    batch: &PreparedBatch,
    target: &Tensor,
    giou_weight: f64,
    seed: u64,
    eps: f64,
) -> Result<GradCheck> {
    let model = model.clone();
    let loss = grounding_loss(&model.forward_prepared(batch)?, target, giou_weight)?;
    let grads = loss.backward()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::new();
    let mut norm2 = 0.0;
    for (_, var) in model.params.iter() {
        let d: Vec<f64> = (0..var.elem_count())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        norm2 += d.iter().map(|x| x * x).sum::<f64>();
        dirs.push(Tensor::from_vec(d, var.dims(), &Device::Cpu)?.to_dtype(model.dtype())?);
    }
    let inv = 1.0 / norm2.sqrt();
    let mut analytic = 0.0;
    for ((_, var), d) in model.params.iter().zip(&dirs) {
        if let Some(g) = grads.get(var.as_tensor()) {
            analytic += scalar(&(g * d)?.sum_all()?)? * inv;
        }
    }

    let originals: Vec<Tensor> = model
        .params
        .iter()
        .map(|(_, v)| v.as_tensor().copy())
        .collect::<candle_core::Result<_>>()?;
    let eval_at = |step: f64| -> Result<f64> {
        for (((_, var), d), orig) in model.params.iter().zip(&dirs).zip(&originals) {
            var.set(&(orig + (d * (step * inv))?)?)?;
        }
        scalar(&grounding_loss(
            &model.forward_prepared(batch)?,
            target,
            giou_weight,
        )?)
    };
    let lp = eval_at(eps)?;
    let lm = eval_at(-eps)?;
    Ok(GradCheck {
        analytic,
        numeric: (lp - lm) / (2.0 * eps),
    })
}
