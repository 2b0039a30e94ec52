use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

/// Disjoint record-id partitions. Records of one image share a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn partition(&self, p: Partition) -> &BTreeSet<String> {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    /// Identifier for reports: ratios and seed.
    pub fn id(&self) -> String {
        let (a, b, c) = self.ratios;
        format!("split-{a}-{b}-{c}-seed{}", self.seed)
    }
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

pub fn split_dataset(
    manifest: &DatasetManifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitSpec> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split ratios must be in [0, 1] and sum to 1, got {ratios:?}"
        )));
    }
    let mut by_image: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &manifest.records {
        by_image.entry(&r.image_id).or_default().push(&r.record_id);
    }
    if by_image.is_empty() {
        return Err(Error::EmptyData("cannot split an empty manifest".into()));
    }
    let mut images: Vec<&str> = by_image.keys().copied().collect();
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = images.len();
    let n_train = ((n as f64 * rt).round() as usize).min(n);
    let n_val = ((n as f64 * rv).round() as usize).min(n - n_train);
    let collect = |imgs: &[&str]| -> BTreeSet<String> {
        imgs.iter()
            .flat_map(|i| by_image[i].iter().map(|s| s.to_string()))
            .collect()
    };
    Ok(SplitSpec {
        train: collect(&images[..n_train]),
        val: collect(&images[n_train..n_train + n_val]),
        test: collect(&images[n_train + n_val..]),
        ratios,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::{DataSource, GroundingRecord, ImageEntry, Task};
    use crate::geometry::BoxXyxy;

    fn manifest(images: usize) -> DatasetManifest {
        let mut recs = Vec::new();
        let mut imgs = BTreeMap::new();
        for i in 0..images {
            let id = format!("i{i}");
            imgs.insert(
                id.clone(),
                ImageEntry {
                    path: format!("{id}.png"),
                    width: 10,
                    height: 10,
                },
            );
            for j in 0..3 {
                recs.push(GroundingRecord {
                    record_id: format!("{id}/{j}"),
                    image_id: id.clone(),
                    image_path: format!("{id}.png"),
                    text: "trachea".into(),
                    bbox: BoxXyxy::new(0., 0., 1., 1.).unwrap(),
                    task: Task::Anatomy,
                    category: "trachea".into(),
                    canonical_term: None,
                    host_record: None,
                });
            }
        }
        DatasetManifest::new(recs, imgs, DataSource::Synthetic, ".").unwrap()
    }

    fn images_of(ids: &BTreeSet<String>) -> BTreeSet<String> {
        ids.iter()
            .map(|r| r.split('/').next().unwrap().to_string())
            .collect()
    }

    #[test]
    fn ten_images_split_seven_one_two() {
        let s = split_dataset(&manifest(10), DEFAULT_RATIOS, 0).unwrap();
        assert_eq!(images_of(&s.train).len(), 7);
        assert_eq!(images_of(&s.val).len(), 1);
        assert_eq!(images_of(&s.test).len(), 2);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 30);
    }

    #[test]
    fn image_level_disjoint_and_seeded() {
        let m = manifest(37);
        let s = split_dataset(&m, DEFAULT_RATIOS, 3).unwrap();
        assert_eq!(s, split_dataset(&m, DEFAULT_RATIOS, 3).unwrap());
        let (a, b, c) = (images_of(&s.train), images_of(&s.val), images_of(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(split_dataset(&manifest(0), DEFAULT_RATIOS, 0).is_err());
        assert!(split_dataset(&manifest(3), (0.5, 0.5, 0.5), 0).is_err());
    }
}
