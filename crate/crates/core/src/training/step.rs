use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cache::ImageCache;
use super::optim::{AdamW, StepStats};
use crate::data::augment::{pixel_augment, PixelAugment};
use crate::data::image::GrayImage;
use crate::error::Result;
use crate::geometry::{to_norm, BoxXyxy};
use crate::model::loss::grounding_loss;
use crate::model::network::GroundingModel;

/// Independent random streams, so that resuming can skip ahead without
/// replaying draws.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Batches = 1,
    Augment = 2,
    Monitor = 3,
    Adapter = 4,
}

pub fn stream_rng(seed: u64, stream: Stream, epoch: usize, step: u64) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream as u64);
    rng.set_stream(((epoch as u64) << 40) | step);
    rng
}

/// One query of a training batch.
pub struct Query<'a> {
    pub image_id: &'a str,
    pub text: &'a str,
    pub bbox: BoxXyxy,
}

/// Letterboxes (via the cache), augments and runs one optimizer step.
/// Returns the batch loss before the update.
pub fn train_step(
    model: &GroundingModel,
    opt: &mut AdamW,
    cache: &ImageCache,
    queries: &[Query<'_>],
    augment: &PixelAugment,
    rng: &mut ChaCha8Rng,
    giou_weight: f64,
    trainable: impl Fn(&str) -> bool,
) -> Result<(f64, StepStats)> {
    let mut image_ids: Vec<&str> = Vec::new();
    let mut pairs = Vec::with_capacity(queries.len());
    let mut targets = Vec::with_capacity(queries.len() * 4);
    for q in queries {
        let idx = match image_ids.iter().position(|i| *i == q.image_id) {
            Some(i) => i,
            None => {
                image_ids.push(q.image_id);
                image_ids.len() - 1
            }
        };
        pairs.push((idx, q.text));
        let (_, lb) = cache.get(q.image_id)?;
        let norm = to_norm(&lb.apply(&q.bbox)?, lb.target_size())?;
        targets.extend(norm.to_array().map(|v| v as f32));
    }
    let images: Vec<GrayImage> = image_ids
        .iter()
        .map(|id| {
            let (img, _) = cache.get(id)?;
            Ok(if augment.enabled {
                pixel_augment(img, rng, augment.jitter_strength, augment.noise_sigma)
            } else {
                img.clone()
            })
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&GrayImage> = images.iter().collect();
    let batch = model.prepare(&refs, &pairs)?;
    let target =
        Tensor::from_vec(targets, (queries.len(), 4), &Device::Cpu)?.to_dtype(model.dtype())?;
    let loss = grounding_loss(&model.forward_prepared(&batch)?, &target, giou_weight)?;
    let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    let grads = loss.backward()?;
    let stats = opt.step(&model.params, &grads, trainable)?;
    Ok((value, stats))
}
