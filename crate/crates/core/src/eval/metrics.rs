use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::records::{DatasetManifest, GroundingRecord, Task};
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::model::checkpoint::Checkpoint;
use crate::model::network::GroundingModel;
use crate::training::cache::ImageCache;

/// A prediction counts as a hit when its IoU is strictly above this.
pub const HIT_THRESHOLD: f64 = 0.5;

/// Queries per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub record_id: String,
    pub category: String,
    pub iou: f64,
    pub hit: bool,
    /// Prediction in source pixels, clamped to the image.
    pub pred_box: [f64; 4],
    pub gt_box: BoxXyxy,
}

impl SampleResult {
    pub fn new(
        record_id: String,
        category: String,
        iou: f64,
        pred_box: [f64; 4],
        gt_box: BoxXyxy,
    ) -> Self {
        Self {
            record_id,
            category,
            iou,
            hit: iou > HIT_THRESHOLD,
            pred_box,
            gt_box,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub miou: f64,
    pub acc: f64,
    pub n: usize,
}

impl Metrics {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a SampleResult>) -> Self {
        let (mut sum, mut hits, mut n) = (0.0, 0usize, 0usize);
        for s in samples {
            sum += s.iou;
            hits += s.hit as usize;
            n += 1;
        }
        if n == 0 {
            return Self {
                miou: 0.0,
                acc: 0.0,
                n: 0,
            };
        }
        Self {
            miou: sum / n as f64,
            acc: hits as f64 / n as f64,
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedP {
    pub p_miou: f64,
    pub p_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub split_id: String,
    pub per_category: BTreeMap<String, Metrics>,
    pub overall: Metrics,
    /// p-values against named baselines.
    #[serde(default)]
    pub significance: BTreeMap<String, PairedP>,
}

impl EvalReport {
    /// Aggregates per-sample results. Overall mIoU is the mean over samples,
    /// not over categories.
    pub fn from_samples(model_id: &str, split_id: &str, samples: &[SampleResult]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData("no samples to aggregate".into()));
        }
        let mut by_cat: BTreeMap<&str, Vec<&SampleResult>> = BTreeMap::new();
        for s in samples {
            by_cat.entry(&s.category).or_default().push(s);
        }
        Ok(Self {
            model_id: model_id.to_string(),
            split_id: split_id.to_string(),
            per_category: by_cat
                .into_iter()
                .map(|(k, v)| (k.to_string(), Metrics::from_samples(v)))
                .collect(),
            overall: Metrics::from_samples(samples),
            significance: BTreeMap::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub fn write_samples(path: &Path, samples: &[SampleResult]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleResult>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                field: "sample".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Grounds each record and scores it against its box in source pixels.
pub fn score_records(
    model: &GroundingModel,
    records: &[&GroundingRecord],
    cache: &ImageCache,
) -> Result<Vec<SampleResult>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(EVAL_CHUNK) {
        let mut image_ids: Vec<&str> = Vec::new();
        let mut queries = Vec::with_capacity(chunk.len());
        for r in chunk {
            let idx = match image_ids.iter().position(|i| *i == r.image_id) {
                Some(i) => i,
                None => {
                    image_ids.push(&r.image_id);
                    image_ids.len() - 1
                }
            };
            queries.push((idx, r.text.as_str()));
        }
        let images: Vec<_> = image_ids
            .iter()
            .map(|id| cache.get(id).map(|(img, _)| img))
            .collect::<Result<_>>()?;
        let preds = model.predict(&images, &queries)?;
        for ((r, (idx, _)), pred) in chunk.iter().zip(&queries).zip(preds) {
            let (_, lb) = cache.get(image_ids[*idx])?;
            let proj = lb.project(&pred);
            let iou = proj.iou_with(&r.bbox)?;
            out.push(SampleResult::new(
                r.record_id.clone(),
                r.category.clone(),
                iou,
                proj.clamped,
                r.bbox,
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub samples: Vec<SampleResult>,
}

/// Evaluates the records of `task` whose ids are in `partition`.
pub fn evaluate(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    partition: &BTreeSet<String>,
    task: Task,
    model_id: &str,
    split_id: &str,
) -> Result<EvalOutcome> {
    let records: Vec<&GroundingRecord> = manifest
        .subset(partition)
        .filter(|r| r.task == task)
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyData(format!(
            "no {task:?} records in the evaluation partition"
        )));
    }
    let cache = ImageCache::load(
        manifest,
        records.iter().map(|r| r.image_id.as_str()),
        checkpoint.model.config.image_size,
    )?;
    let samples = score_records(&checkpoint.model, &records, &cache)?;
    let report = EvalReport::from_samples(model_id, split_id, &samples)?;
    Ok(EvalOutcome { report, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, cat: &str, iou: f64) -> SampleResult {
        let b = BoxXyxy::new(0.0, 0.0, 1.0, 1.0).unwrap();
        SampleResult::new(id.into(), cat.into(), iou, b.to_array(), b)
    }

    #[test]
    fn hand_arithmetic() {
        let r = EvalReport::from_samples(
            "m",
            "s",
            &[sample("a", "edema", 0.6), sample("b", "edema", 0.4)],
        )
        .unwrap();
        assert!((r.overall.miou - 0.5).abs() < 1e-15);
        assert_eq!(r.overall.acc, 0.5);
        assert_eq!(r.overall.n, 2);
    }

    #[test]
    fn boundary_is_a_miss() {
        assert!(!sample("a", "x", 0.5).hit);
        assert!(sample("a", "x", 0.5000001).hit);
    }

    #[test]
    fn overall_is_sample_mean_not_category_mean() {
        let s = [
            sample("a", "edema", 1.0),
            sample("b", "edema", 1.0),
            sample("c", "edema", 1.0),
            sample("d", "pneumonia", 0.0),
        ];
        let r = EvalReport::from_samples("m", "s", &s).unwrap();
        assert_eq!(r.overall.miou, 0.75);
        assert_eq!(
            r.per_category.values().map(|m| m.n).sum::<usize>(),
            r.overall.n
        );
    }

    #[test]
    fn shuffled_order_gives_same_report() {
        let mut s: Vec<_> = (0..50)
            .map(|i| {
                sample(
                    &format!("r{i}"),
                    ["a", "b", "c"][i % 3],
                    (i as f64 * 0.37) % 1.0,
                )
            })
            .collect();
        let a = EvalReport::from_samples("m", "s", &s).unwrap();
        s.reverse();
        s.swap(3, 17);
        let b = EvalReport::from_samples("m", "s", &s).unwrap();
        for (x, y) in a.per_category.values().zip(b.per_category.values()) {
            assert!((x.miou - y.miou).abs() < 1e-12 && x.acc == y.acc && x.n == y.n);
        }
        assert!((a.overall.miou - b.overall.miou).abs() < 1e-12);
    }

    #[test]
    fn sample_dump_round_trips() {
        let s = vec![
            sample("a", "edema", 0.123456789012345),
            sample("b", "x", 0.0),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("samples.jsonl");
        write_samples(&p, &s).unwrap();
        assert_eq!(read_samples(&p).unwrap(), s);
        assert!(EvalReport::from_samples("m", "s", &[]).is_err());
    }
}
