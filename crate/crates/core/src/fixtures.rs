//! Fixtures with exactly known outputs, used by end-to-end tests of the
//! command line and the service.
//!
//! The oracle model has a zeroed output layer, so every query decodes to the
//! centred half-size box (sigmoid(0) = 0.5 exactly). The oracle corpus
//! labels each image with the source-frame image of that box, which stays
//! exact in binary floating point for the sizes used here.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;

use crate::data::image::GrayImage;
use crate::data::records::{DataSource, DatasetManifest, GroundingRecord, ImageEntry, Task};
use crate::error::Result;
use crate::geometry::{letterbox, BoxNorm, BoxXyxy, ImageSize};
use crate::model::checkpoint::Checkpoint;
use crate::model::config::{ModelConfig, Vocab};

pub const ORACLE_NORM: BoxNorm = BoxNorm {
    cx: 0.5,
    cy: 0.5,
    w: 0.5,
    h: 0.5,
};

/// Source sizes of the oracle images. The last one is wider than tall, so
/// its box is clamped at the bottom edge.
pub const ORACLE_SIZES: [(u32, u32); 4] = [(64, 64), (96, 96), (200, 200), (128, 64)];

pub const ORACLE_TEXTS: [&str; 2] = ["small opacity in right lung base", "left apical zone"];

/// A small general-stage checkpoint whose prediction is [`ORACLE_NORM`] for
/// every image and phrase.
pub fn oracle_checkpoint() -> Result<Checkpoint> {
    let mut cfg = ModelConfig::new(Vocab::build(ORACLE_TEXTS));
    cfg.image_size = 64;
    cfg.patch_grid = 4;
    cfg.embed_dim = 16;
    cfg.fusion_heads = 2;
    cfg.fusion_layers = 1;
    cfg.max_text_len = 8;
    let ck = Checkpoint::general(cfg)?;
    for name in ["head.2.weight", "head.2.bias"] {
        let var = ck.model.params.var(name).expect("head exists");
        var.set(&Tensor::zeros_like(var.as_tensor())?)?;
    }
    Ok(ck)
}

/// The oracle prediction in source pixels, clamped to the image.
pub fn oracle_box(size: ImageSize) -> Result<BoxXyxy> {
    let p = letterbox(size, 64)?.project(&ORACLE_NORM).clamped;
    BoxXyxy::new(p[0], p[1], p[2], p[3])
}

/// Writes the oracle images under `dir/images` and returns a manifest with
/// one anatomy and one finding record per image, both labelled with the
/// oracle box.
pub fn oracle_corpus(dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::new();
    let mut images = BTreeMap::new();
    for (i, &(width, height)) in ORACLE_SIZES.iter().enumerate() {
        let image_id = format!("oracle{i}");
        let path = format!("images/{image_id}.png");
        let mut img = GrayImage::filled(width, height, 0.2);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, 0.2 + 0.6 * ((x + y) % 7) as f32 / 7.0);
            }
        }
        img.save_png(&dir.join(&path))?;
        let bbox = oracle_box(ImageSize { width, height })?;
        for (task, text, tag, category) in [
            (
                Task::Anatomy,
                ORACLE_TEXTS[1],
                "anatomy",
                "left apical zone",
            ),
            (Task::Finding, ORACLE_TEXTS[0], "finding", "lung opacity"),
        ] {
            records.push(GroundingRecord {
                record_id: format!("{image_id}/{tag}"),
                image_id: image_id.clone(),
                image_path: path.clone(),
                text: text.into(),
                bbox,
                task,
                category: category.into(),
                canonical_term: (task == Task::Anatomy).then(|| text.to_string()),
                host_record: None,
            });
        }
        images.insert(
            image_id,
            ImageEntry {
                path,
                width,
                height,
            },
        );
    }
    DatasetManifest::new(records, images, DataSource::Synthetic, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_boxes_by_hand() {
        let b = |w, h| {
            oracle_box(ImageSize {
                width: w,
                height: h,
            })
            .unwrap()
            .to_array()
        };
        assert_eq!(b(64, 64), [16.0, 16.0, 48.0, 48.0]);
        assert_eq!(b(200, 200), [50.0, 50.0, 150.0, 150.0]);
        assert_eq!(b(128, 64), [32.0, 32.0, 96.0, 64.0]);
    }

    #[test]
    fn oracle_model_grounds_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let m = oracle_corpus(dir.path()).unwrap();
        let ck = oracle_checkpoint().unwrap();
        for r in &m.records {
            let img = GrayImage::open(&m.image_path(&r.image_id).unwrap()).unwrap();
            let g = ck.model.ground(&img, &r.text).unwrap();
            assert_eq!(g.norm, ORACLE_NORM);
            assert_eq!(g.box_xyxy(), r.bbox.to_array(), "{}", r.record_id);
        }
    }
}
