//! Deterministic synthetic chest-like corpus.
//!
//! Every image renders the same 29-region anatomical template under a random
//! global scale/shift plus small per-region jitter. Each region is a textured
//! rectangle whose box becomes an anatomy record. Finding records are bright
//! elliptical blobs placed inside a plausible host region, described as
//! "<adjective> <finding> in <anatomy phrase>".

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::lexicon::SynonymLexicon;
use super::records::{DataSource, DatasetManifest, GroundingRecord, ImageEntry, Task};
use super::vocabulary::{ANATOMY_STRUCTURES, PATHOLOGIES};
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub findings_per_image: usize,
    /// Probability a finding phrase names its region with a non-canonical variant.
    pub paraphrase_rate: f64,
    /// Finding extent as a fraction of the host box side, sampled per axis.
    pub finding_extent: (f64, f64),
    /// Maximum global shift as a fraction of the image side.
    pub shift: f64,
    /// Global scale range.
    pub scale: (f64, f64),
    /// Per-coordinate region jitter as a fraction of the image side.
    pub region_jitter: f64,
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: 100,
            width: 128,
            height: 128,
            findings_per_image: 1,
            paraphrase_rate: 0.5,
            finding_extent: (0.6, 0.95),
            shift: 0.05,
            scale: (0.88, 1.04),
            region_jitter: 0.01,
            pixel_noise: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.images == 0 {
            problems.push("images must be >= 1".to_string());
        }
        if self.width < 16 || self.height < 16 {
            problems.push("width and height must be >= 16".to_string());
        }
        if !(0.0..=1.0).contains(&self.paraphrase_rate) {
            problems.push("paraphrase_rate must lie in [0, 1]".to_string());
        }
        let (lo, hi) = self.finding_extent;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            problems.push("finding_extent must satisfy 0 < lo <= hi <= 1".to_string());
        }
        let (slo, shi) = self.scale;
        if !(slo > 0.0 && slo <= shi) {
            problems.push("scale must satisfy 0 < lo <= hi".to_string());
        }
        if self.shift < 0.0 || self.region_jitter < 0.0 || self.pixel_noise < 0.0 {
            problems.push("shift, region_jitter and pixel_noise must be non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// Template boxes in unit coordinates, image left = patient right.
fn template(name: &str) -> [f64; 4] {
    let mirror = |b: [f64; 4]| [1.0 - b[2], b[1], 1.0 - b[0], b[3]];
    let right = |n: &str| -> Option<[f64; 4]> {
        Some(match n {
            "lung" => [0.10, 0.15, 0.47, 0.85],
            "apical zone" => [0.15, 0.15, 0.42, 0.27],
            "upper lung zone" => [0.12, 0.20, 0.46, 0.42],
            "mid lung zone" => [0.11, 0.42, 0.47, 0.62],
            "lung base" => [0.10, 0.62, 0.47, 0.85],
            "hilar structures" => [0.33, 0.38, 0.46, 0.55],
            "costophrenic angle" => [0.06, 0.76, 0.20, 0.88],
            "hemidiaphragm" => [0.10, 0.80, 0.47, 0.92],
            "clavicle" => [0.12, 0.09, 0.45, 0.17],
            _ => return None,
        })
    };
    if let Some(rest) = name.strip_prefix("right ") {
        if let Some(b) = right(rest) {
            return b;
        }
    }
    if let Some(rest) = name.strip_prefix("left ") {
        if let Some(b) = right(rest) {
            return mirror(b);
        }
    }
    match name {
        "trachea" => [0.46, 0.04, 0.54, 0.34],
        "carina" => [0.45, 0.31, 0.55, 0.40],
        "spine" => [0.44, 0.04, 0.56, 0.98],
        "aortic arch" => [0.50, 0.21, 0.63, 0.33],
        "mediastinum" => [0.37, 0.14, 0.63, 0.80],
        "upper mediastinum" => [0.39, 0.11, 0.61, 0.36],
        "svc" => [0.39, 0.19, 0.48, 0.40],
        "cardiac silhouette" => [0.36, 0.46, 0.73, 0.81],
        "cavoatrial junction" => [0.39, 0.40, 0.48, 0.49],
        "right atrium" => [0.35, 0.49, 0.50, 0.73],
        "abdomen" => [0.08, 0.89, 0.92, 1.00],
        other => panic!("no template for {other}"),
    }
}

/// Plausible host regions for each finding category.
fn hosts(pathology: &str) -> &'static [&'static str] {
    match pathology {
        "cardiomegaly" => &["cardiac silhouette"],
        "pleural effusion" => &[
            "left costophrenic angle",
            "right costophrenic angle",
            "left lung base",
            "right lung base",
        ],
        "pneumothorax" => &[
            "left apical zone",
            "right apical zone",
            "left upper lung zone",
            "right upper lung zone",
        ],
        "edema" => &[
            "left lung",
            "right lung",
            "left hilar structures",
            "right hilar structures",
        ],
        _ => &[
            "left upper lung zone",
            "right upper lung zone",
            "left mid lung zone",
            "right mid lung zone",
            "left lung base",
            "right lung base",
        ],
    }
}

const ADJECTIVES: [&str; 6] = ["small", "mild", "moderate", "large", "patchy", "subtle"];

fn finding_noun(pathology: &str) -> &str {
    match pathology {
        "lung opacity" => "opacity",
        other => other,
    }
}

/// Texture parameters per region: base intensity, stripe frequency, angle.
fn texture(index: usize) -> (f32, f32, f32) {
    let base = 0.22 + 0.5 * ((index * 7919) % 29) as f32 / 29.0;
    let freq = 0.25 + 0.1 * (index % 5) as f32;
    let angle = std::f32::consts::PI * (index % 8) as f32 / 8.0;
    (base, freq, angle)
}

struct RenderedImage {
    image: GrayImage,
    records: Vec<GroundingRecord>,
}

fn render_one(
    cfg: &SynthConfig,
    lexicon: &SynonymLexicon,
    seed: u64,
    index: usize,
) -> Result<RenderedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let image_id = format!("syn{index:05}");
    let image_path = format!("images/{image_id}.png");
    let (w, h) = (cfg.width as f64, cfg.height as f64);

    let scale = rng.random_range(cfg.scale.0..=cfg.scale.1);
    let (tx, ty) = (
        rng.random_range(-cfg.shift..=cfg.shift),
        rng.random_range(-cfg.shift..=cfg.shift),
    );
    let mut jitter = || {
        if cfg.region_jitter > 0.0 {
            rng.random_range(-cfg.region_jitter..=cfg.region_jitter)
        } else {
            0.0
        }
    };

    let mut boxes: Vec<(usize, &str, BoxXyxy)> = Vec::with_capacity(ANATOMY_STRUCTURES.len());
    for (i, name) in ANATOMY_STRUCTURES.iter().enumerate() {
        let t = template(name);
        let fx = |v: f64, j: f64| ((0.5 + (v - 0.5) * scale + tx + j) * w).clamp(0.0, w);
        let fy = |v: f64, j: f64| ((0.5 + (v - 0.5) * scale + ty + j) * h).clamp(0.0, h);
        let (j0, j1, j2, j3) = (jitter(), jitter(), jitter(), jitter());
        let b = BoxXyxy::new(fx(t[0], j0), fy(t[1], j1), fx(t[2], j2), fy(t[3], j3))?;
        boxes.push((i, name, b));
    }

    let mut image = GrayImage::filled(cfg.width, cfg.height, 0.08);
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .2
            .area()
            .total_cmp(&boxes[a].2.area())
            .then(a.cmp(&b))
    });
    for &k in &order {
        let (i, _, b) = boxes[k];
        let (base, freq, angle) = texture(i);
        let (ca, sa) = (angle.cos(), angle.sin());
        for y in (b.y1.floor() as u32)..(b.y2.ceil() as u32).min(cfg.height) {
            for x in (b.x1.floor() as u32)..(b.x2.ceil() as u32).min(cfg.width) {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if cx < b.x1 || cx >= b.x2 || cy < b.y1 || cy >= b.y2 {
                    continue;
                }
                let phase = freq * (x as f32 * ca + y as f32 * sa);
                image.set(x, y, base + 0.08 * phase.sin());
            }
        }
    }

    let mut records: Vec<GroundingRecord> = boxes
        .iter()
        .map(|(_, name, b)| GroundingRecord {
            record_id: format!("{image_id}/{name}"),
            image_id: image_id.clone(),
            image_path: image_path.clone(),
            text: name.to_string(),
            bbox: *b,
            task: Task::Anatomy,
            category: name.to_string(),
            canonical_term: Some(name.to_string()),
            host_record: None,
        })
        .collect();

    for f in 0..cfg.findings_per_image {
        let pathology = *PATHOLOGIES.choose(&mut rng).expect("non-empty");
        let host = *hosts(pathology).choose(&mut rng).expect("non-empty");
        let host_box = boxes
            .iter()
            .find(|(_, n, _)| *n == host)
            .expect("host exists")
            .2;
        let fw = host_box.width() * rng.random_range(cfg.finding_extent.0..=cfg.finding_extent.1);
        let fh = host_box.height() * rng.random_range(cfg.finding_extent.0..=cfg.finding_extent.1);
        let x1 = host_box.x1 + rng.random_range(0.0..=(host_box.width() - fw));
        let y1 = host_box.y1 + rng.random_range(0.0..=(host_box.height() - fh));
        let fbox = BoxXyxy::new(x1, y1, x1 + fw, y1 + fh)?;

        let (ecx, ecy) = ((fbox.x1 + fbox.x2) / 2.0, (fbox.y1 + fbox.y2) / 2.0);
        let (rx, ry) = (fbox.width() / 2.0, fbox.height() / 2.0);
        for y in (fbox.y1.floor() as u32)..(fbox.y2.ceil() as u32).min(cfg.height) {
            for x in (fbox.x1.floor() as u32)..(fbox.x2.ceil() as u32).min(cfg.width) {
                let dx = (x as f64 + 0.5 - ecx) / rx;
                let dy = (y as f64 + 0.5 - ecy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    image.set(x, y, 0.97);
                }
            }
        }

        let variants = lexicon
            .variants(host)
            .ok_or_else(|| Error::InvalidInput(format!("lexicon lacks '{host}'")))?;
        let phrase = if rng.random_bool(cfg.paraphrase_rate) {
            variants[rng.random_range(1..variants.len())].as_str()
        } else {
            host
        };
        let adjective = ADJECTIVES.choose(&mut rng).expect("non-empty");
        records.push(GroundingRecord {
            record_id: format!("{image_id}/finding{f}"),
            image_id: image_id.clone(),
            image_path: image_path.clone(),
            text: format!("{adjective} {} in {phrase}", finding_noun(pathology)),
            bbox: fbox,
            task: Task::Finding,
            category: pathology.to_string(),
            canonical_term: None,
            host_record: Some(format!("{image_id}/{host}")),
        });
    }

    if cfg.pixel_noise > 0.0 {
        let noise = Normal::new(0.0f32, cfg.pixel_noise as f32).expect("sigma > 0");
        for p in image.pixels.iter_mut() {
            *p = (*p + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(RenderedImage { image, records })
}

/// Renders the corpus into `out_dir/images/*.png` and returns its manifest
/// (not yet saved). Output is a pure function of `(cfg, lexicon, seed)`.
pub fn generate_synthetic_corpus(
    cfg: &SynthConfig,
    lexicon: &SynonymLexicon,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir.join("images"))?;
    let rendered: Vec<RenderedImage> = (0..cfg.images)
        .into_par_iter()
        .map(|i| {
            let r = render_one(cfg, lexicon, seed, i)?;
            r.image.save_png(&out_dir.join(&r.records[0].image_path))?;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut images = BTreeMap::new();
    for r in rendered {
        let first = &r.records[0];
        images.insert(
            first.image_id.clone(),
            ImageEntry {
                path: first.image_path.clone(),
                width: cfg.width,
                height: cfg.height,
            },
        );
        records.extend(r.records);
    }
    DatasetManifest::new(records, images, DataSource::Synthetic, out_dir)
}
